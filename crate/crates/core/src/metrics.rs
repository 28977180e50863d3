//! Utterance-level evaluation: Pearson (LCC), Spearman (SRCC, average ranks
//! for ties) and mean squared error, plus report and scatter-data export.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{ManifestEntry, Split};
use crate::objective::Target;

fn check_pair(pred: &[f64], truth: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < min_len {
        return Err(Error::InvalidInput(format!(
            "need at least {min_len} pairs, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in metric input".into()));
    }
    Ok(())
}

/// Sample Pearson correlation. Zero variance on either side is an error.
pub fn pearson_lcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one input has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end, averaged.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman_srcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    pearson_lcc(&average_ranks(pred), &average_ranks(truth))
}

pub fn mean_squared_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    pub lcc: f64,
    pub srcc: f64,
    pub mse: f64,
    pub n: usize,
}

impl MetricTriple {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            lcc: pearson_lcc(pred, truth)?,
            srcc: spearman_srcc(pred, truth)?,
            mse: mean_squared_error(pred, truth)?,
            n: pred.len(),
        })
    }
}

/// Utterance-level predictions keyed by id, one score per target.
pub type Predictions = HashMap<String, [f64; 4]>;

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub id: String,
    pub target: Target,
    pub truth: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Indexed by [`Target::index`].
    pub rows: [MetricTriple; 4],
    pub scatter: Vec<ScatterPoint>,
}

impl EvalReport {
    pub fn get(&self, t: Target) -> &MetricTriple {
        &self.rows[t.index()]
    }

    /// `target,lcc,srcc,mse,n`, one row per target.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("target,lcc,srcc,mse,n\n");
        for t in Target::ALL {
            let r = self.get(t);
            let _ = writeln!(s, "{},{},{},{},{}", t.name(), r.lcc, r.srcc, r.mse, r.n);
        }
        s
    }

    /// Fixed-width table in the same row/column layout as the CSV.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<16} {:>8} {:>8} {:>8} {:>6}\n", "target", "LCC", "SRCC", "MSE", "N");
        for t in Target::ALL {
            let r = self.get(t);
            let _ = writeln!(s, "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>6}", t.name(), r.lcc, r.srcc, r.mse, r.n);
        }
        s
    }

    /// `id,target,truth,prediction` for one target (all targets if `None`).
    pub fn scatter_csv(&self, target: Option<Target>) -> String {
        let mut s = String::from("id,target,truth,prediction\n");
        for p in self.scatter.iter().filter(|p| target.is_none_or(|t| p.target == t)) {
            let _ = writeln!(s, "{},{},{},{}", p.id, p.target.name(), p.truth, p.prediction);
        }
        s
    }

    /// Writes `report.csv`, `report.txt` and one `scatter_<target>.csv` per target.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("report.csv", self.to_csv())?;
        put("report.txt", self.to_table())?;
        for t in Target::ALL {
            put(&format!("scatter_{}.csv", t.name()), self.scatter_csv(Some(t)))?;
        }
        Ok(())
    }
}

/// Metrics over the test split of `manifest`. Every test id needs a prediction.
pub fn evaluate_report(manifest: &[ManifestEntry], predictions: &Predictions) -> Result<EvalReport> {
    let test: Vec<&ManifestEntry> = manifest.iter().filter(|e| e.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Error::InvalidInput("manifest has no test-split entries".into()));
    }
    let mut pred: [Vec<f64>; 4] = Default::default();
    let mut truth: [Vec<f64>; 4] = Default::default();
    let mut scatter = Vec::with_capacity(4 * test.len());
    for t in Target::ALL {
        for e in &test {
            let p = predictions.get(&e.id).ok_or_else(|| {
                Error::InvalidInput(format!("missing prediction for id `{}`", e.id))
            })?[t.index()];
            let y = e.targets().get(t);
            pred[t.index()].push(p);
            truth[t.index()].push(y);
            scatter.push(ScatterPoint {
                id: e.id.clone(),
                target: t,
                truth: y,
                prediction: p,
            });
        }
    }
    let rows = [0, 1, 2, 3].map(|k| MetricTriple::compute(&pred[k], &truth[k]));
    let rows = match rows {
        [Ok(a), Ok(b), Ok(c), Ok(d)] => [a, b, c, d],
        [a, b, c, d] => {
            let err = [a, b, c, d].into_iter().find_map(|r| r.err()).unwrap();
            return Err(err);
        }
    };
    Ok(EvalReport { rows, scatter })
}

/// Parse `id,target,prediction` rows (the `predict` output) into [`Predictions`].
pub fn parse_predictions_csv(text: &str) -> Result<Predictions> {
    let mut out: HashMap<String, ([f64; 4], [bool; 4])> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 && line.starts_with("id,") || line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::InvalidInput(format!("predictions line {}: {m}", idx + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        let t = Target::from_name(cols[1]).ok_or_else(|| bad("unknown target"))?;
        let v: f64 = cols[2].parse().map_err(|_| bad("bad number"))?;
        let slot = out.entry(cols[0].to_string()).or_insert(([0.0; 4], [false; 4]));
        slot.0[t.index()] = v;
        slot.1[t.index()] = true;
    }
    out.into_iter()
        .map(|(id, (v, seen))| {
            if seen.iter().all(|&s| s) {
                Ok((id, v))
            } else {
                Err(Error::InvalidInput(format!("predictions for `{id}` do not cover all targets")))
            }
        })
        .collect()
}

pub fn predictions_csv(rows: &[(String, [f64; 4])]) -> String {
    let mut s = String::from("id,target,prediction\n");
    for (id, v) in rows {
        for t in Target::ALL {
            let _ = writeln!(s, "{id},{},{}", t.name(), v[t.index()]);
        }
    }
    s
}
