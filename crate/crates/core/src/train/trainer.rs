use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_update, OptimizerState};
use crate::error::{Error, Result};
use crate::ingest::{load_embedding, load_waveform, ManifestEntry, Split};
use crate::metrics::{pearson_lcc, spearman_srcc};
use crate::model::forward::lfb_params;
use crate::model::{init_parameters, loss_and_grad, model_forward, Checkpoint, ModelConfig, ParameterSet, UtteranceInput};
use crate::objective::{total_loss, LossWeights, Target, TargetScores};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 1,
            max_epochs: 200,
            patience: 15,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

/// Keys owned by [`TrainConfig::set`], in dump order.
pub const TRAIN_KEYS: [&str; 6] = ["learning_rate", "batch_size", "max_epochs", "patience", "gamma", "frame_weight"];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{}`", v.trim())))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("`learning_rate` must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("`batch_size`, `max_epochs` and `patience` must be positive".into()));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let g = &self.weights.gamma;
        vec![
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("gamma", format!("{:?},{:?},{:?},{:?}", g[0], g[1], g[2], g[3])),
            ("frame_weight", format!("{:?}", self.weights.frame_weight)),
        ]
    }

    /// Returns `false` for keys this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "gamma" => {
                let parts: Vec<f64> = value.split(',').map(|p| parse(key, p)).collect::<Result<_>>()?;
                self.weights.gamma = parts
                    .try_into()
                    .map_err(|_| Error::Config("`gamma` needs exactly four comma-separated values".into()))?;
            }
            "frame_weight" => self.weights.frame_weight = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// One utterance ready for the model.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub input: UtteranceInput,
    pub targets: TargetScores,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[Example] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn load_example(entry: &ManifestEntry, cfg: &ModelConfig) -> Result<Example> {
    let wav_path = entry.waveform_path.as_ref().ok_or_else(|| {
        Error::InvalidInput(format!("utterance `{}` has no waveform, which the model needs", entry.id))
    })?;
    let emb = load_embedding(&entry.embedding_path)?;
    let wave = load_waveform(wav_path)?;
    Ok(Example {
        id: entry.id.clone(),
        input: UtteranceInput::new(&emb, &wave, cfg)?,
        targets: entry.targets(),
    })
}

/// Load and preprocess every manifest entry, keeping manifest order within each split.
pub fn load_corpus(entries: &[ManifestEntry], cfg: &ModelConfig) -> Result<Corpus> {
    let mut c = Corpus::default();
    for e in entries {
        let ex = load_example(e, cfg)?;
        match e.split {
            Split::Train => c.train.push(ex),
            Split::Val => c.val.push(ex),
            Split::Test => c.test.push(ex),
        }
    }
    Ok(c)
}

/// Utterance-level predictions per example, in input order.
pub fn predict(cfg: &ModelConfig, p: &ParameterSet, examples: &[Example]) -> Result<Vec<(String, [f64; 4])>> {
    examples
        .iter()
        .map(|ex| Ok((ex.id.clone(), model_forward(cfg, p, &ex.input)?.utterance_scores())))
        .collect()
}

/// Mean total loss over `examples`.
pub fn evaluate_loss(cfg: &ModelConfig, p: &ParameterSet, examples: &[Example], w: &LossWeights) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
    }
    let mut sum = 0.0;
    for ex in examples {
        sum += total_loss(&model_forward(cfg, p, &ex.input)?, &ex.targets, w)?;
    }
    Ok(sum / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Per target; NaN when the correlation is undefined (constant predictions).
    pub val_lcc: [f64; 4],
    pub val_srcc: [f64; 4],
}

pub fn metrics_log_header() -> String {
    let mut s = String::from("epoch,train_loss,val_loss");
    for t in Target::ALL {
        let _ = write!(s, ",val_lcc_{k},val_srcc_{k}", k = t.branch_key());
    }
    s
}

/// Per-epoch CSV log.
pub fn metrics_log_csv(history: &[EpochRecord]) -> String {
    let mut s = metrics_log_header();
    s.push('\n');
    for r in history {
        let _ = write!(s, "{},{:?},{:?}", r.epoch, r.train_loss, r.val_loss);
        for k in 0..4 {
            let _ = write!(s, ",{:?},{:?}", r.val_lcc[k], r.val_srcc[k]);
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Parameters and optimizer state at the best epoch.
    pub best: Checkpoint,
    pub stopped_early: bool,
}

fn correlations(cfg: &ModelConfig, p: &ParameterSet, examples: &[Example]) -> Result<([f64; 4], [f64; 4])> {
    let preds = predict(cfg, p, examples)?;
    let mut lcc = [f64::NAN; 4];
    let mut srcc = [f64::NAN; 4];
    for t in Target::ALL {
        let k = t.index();
        let pr: Vec<f64> = preds.iter().map(|(_, s)| s[k]).collect();
        let tr: Vec<f64> = examples.iter().map(|e| e.targets.get(t)).collect();
        lcc[k] = pearson_lcc(&pr, &tr).unwrap_or(f64::NAN);
        srcc[k] = spearman_srcc(&pr, &tr).unwrap_or(f64::NAN);
    }
    Ok((lcc, srcc))
}

/// Adam over seeded-shuffle epochs with early stopping on validation loss.
/// `on_epoch` sees each record as it is produced.
pub fn train_loop(
    tc: &TrainConfig,
    mc: &ModelConfig,
    corpus: &Corpus,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    tc.validate()?;
    mc.validate()?;
    if corpus.train.is_empty() || corpus.val.is_empty() {
        return Err(Error::InvalidInput("training needs nonempty train and val splits".into()));
    }
    let mut params = init_parameters(mc, mc.seed)?;
    let mut opt = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let mut grads = params.zeros_like();
            for &i in batch {
                let ex = &corpus.train[i];
                let (loss, g) = loss_and_grad(mc, &params, &ex.input, &ex.targets, &tc.weights)?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!("non-finite loss at epoch {epoch}, utterance `{}`", ex.id)));
                }
                loss_sum += loss;
                grads.add_assign(&g)?;
            }
            if batch.len() > 1 {
                grads.scale(1.0 / batch.len() as f64);
            }
            adam_update(&mut params, &grads, &mut opt, tc.learning_rate)?;
            // Large steps can move filterbank cutoffs out of (0, Nyquist).
            if let Err(e) = lfb_params(&params, mc).and_then(|f| f.validate()) {
                return Err(Error::Training(format!("epoch {epoch}: {e}")));
            }
        }
        let train_loss = loss_sum / corpus.train.len() as f64;
        let val_loss = evaluate_loss(mc, &params, &corpus.val, &tc.weights)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        let (val_lcc, val_srcc) = correlations(mc, &params, &corpus.val)?;
        let rec = EpochRecord { epoch, train_loss, val_loss, val_lcc, val_srcc };
        on_epoch(&rec);
        history.push(rec);

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((
                epoch,
                val_loss,
                Checkpoint { config: mc.clone(), params: params.clone(), optimizer: Some(opt.clone()) },
            ));
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_val_loss, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { history, best_epoch, best_val_loss, best, stopped_early })
}
