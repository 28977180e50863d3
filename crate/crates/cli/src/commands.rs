use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use imtinet_core::ingest::{load_manifest, synth_dataset, ManifestEntry};
use imtinet_core::metrics::{evaluate_report, parse_predictions_csv, predictions_csv, EvalReport, Predictions};
use imtinet_core::model::{load_checkpoint, save_checkpoint, Checkpoint};
use imtinet_core::train::{load_corpus, metrics_log_csv, model_gradcheck, predict as run_predict, train_loop};
use imtinet_core::{Error, Result, Split, Target};

use crate::config::RunConfig;
use crate::Common;

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &c.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(k) = &c.checkpoint {
        cfg.checkpoint = Some(k.clone());
    }
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| Error::Config(format!("missing {what} (flag --{what} or config key `{what}`)")))?;
    if !p.is_file() {
        return Err(Error::Config(format!("{what} `{}` does not exist", p.display())));
    }
    Ok(p)
}

fn out_dir(c: &Common) -> Result<&Path> {
    let p = c.out.as_deref().ok_or_else(|| Error::Config("missing --out".into()))?;
    fs::create_dir_all(p).map_err(|e| Error::Config(format!("cannot create {}: {e}", p.display())))?;
    Ok(p)
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Training(format!("cannot write {}: {e}", path.display())))
}

pub fn synth_data(c: &Common) -> Result<ExitCode> {
    let cfg = resolve(c)?;
    let out = out_dir(c)?;
    let summary = synth_dataset(&cfg.synth, cfg.seed(), out)?;
    cfg.write_dump(out)?;
    let s = &cfg.synth;
    println!(
        "synth-data: {} utterances ({} train / {} val / {} test, D={}) -> {}",
        summary.utterances,
        s.n_train,
        s.n_val,
        s.n_test,
        s.embed_dim,
        summary.manifest_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train(c: &Common) -> Result<ExitCode> {
    let cfg = resolve(c)?;
    let manifest = require(&cfg.manifest, "manifest")?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    let out = out_dir(c)?;
    cfg.write_dump(out)?;

    let corpus = load_corpus(&load_manifest(manifest)?, &cfg.model)?;
    let outcome = train_loop(&cfg.train, &cfg.model, &corpus, |_| {})?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &outcome.best)?;
    write(&out.join("metrics.csv"), &metrics_log_csv(&outcome.history))?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "train: {} epochs{}, best epoch {} val_loss {:.6} val_lcc_int {:.4} -> {}",
        outcome.history.len(),
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_epoch,
        outcome.best_val_loss,
        best.val_lcc[Target::Intelligibility.index()],
        ckpt.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Model predictions for the given entries, with the checkpoint's config in `cfg.model`.
fn checkpoint_predictions(cfg: &mut RunConfig, entries: &[ManifestEntry]) -> Result<Vec<(String, [f64; 4])>> {
    let path = require(&cfg.checkpoint, "checkpoint")?;
    let Checkpoint { config, params, .. } = load_checkpoint(path)?;
    cfg.model = config;
    let corpus = load_corpus(entries, &cfg.model)?;
    let examples: Vec<_> = corpus.train.into_iter().chain(corpus.val).chain(corpus.test).collect();
    run_predict(&cfg.model, &params, &examples)
}

pub fn predict(c: &Common) -> Result<ExitCode> {
    let mut cfg = resolve(c)?;
    let manifest = require(&cfg.manifest, "manifest")?.to_path_buf();
    require(&cfg.checkpoint, "checkpoint")?;
    let out = out_dir(c)?;
    let entries = load_manifest(&manifest)?;
    let mut rows = checkpoint_predictions(&mut cfg, &entries)?;
    // Manifest order, whatever the split.
    let order: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    rows.sort_by_key(|(id, _)| order.iter().position(|o| o == id));
    let path = out.join("predictions.csv");
    write(&path, &predictions_csv(&rows))?;
    cfg.write_dump(out)?;
    println!("predict: {} utterances x 4 targets -> {}", rows.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

/// Report over the test split, from a predictions CSV or by running a checkpoint.
fn report(c: &Common, predictions: Option<&Path>) -> Result<(RunConfig, EvalReport, PathBuf)> {
    let mut cfg = resolve(c)?;
    if let Some(p) = predictions {
        cfg.predictions = Some(p.to_path_buf());
    }
    let manifest = require(&cfg.manifest, "manifest")?.to_path_buf();
    if cfg.predictions.is_some() {
        require(&cfg.predictions, "predictions")?;
    } else {
        require(&cfg.checkpoint, "checkpoint")?;
    }
    let out = out_dir(c)?.to_path_buf();
    let entries = load_manifest(&manifest)?;
    let preds: Predictions = match &cfg.predictions {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_predictions_csv(&text)?
        }
        None => {
            let test: Vec<ManifestEntry> = entries.iter().filter(|e| e.split == Split::Test).cloned().collect();
            checkpoint_predictions(&mut cfg, &test)?.into_iter().collect()
        }
    };
    let rep = evaluate_report(&entries, &preds)?;
    Ok((cfg, rep, out))
}

pub fn evaluate(c: &Common, predictions: Option<&Path>) -> Result<ExitCode> {
    let (cfg, rep, out) = report(c, predictions)?;
    rep.write_to(&out)?;
    cfg.write_dump(&out)?;
    let r = rep.get(Target::Intelligibility);
    println!(
        "evaluate: n={} intelligibility lcc={:.4} srcc={:.4} mse={:.4} -> {}",
        r.n,
        r.lcc,
        r.srcc,
        r.mse,
        out.join("report.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn export_scatter(c: &Common, predictions: Option<&Path>) -> Result<ExitCode> {
    let (cfg, rep, out) = report(c, predictions)?;
    for t in Target::ALL {
        write(&out.join(format!("scatter_{}.csv", t.name())), &rep.scatter_csv(Some(t)))?;
    }
    cfg.write_dump(&out)?;
    println!(
        "export-scatter: {} points per target -> {}",
        rep.get(Target::Intelligibility).n,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(c: &Common) -> Result<ExitCode> {
    let cfg = resolve(c)?;
    cfg.model.validate()?;
    let rep = model_gradcheck(&cfg.model, &cfg.gradcheck)?;
    let table = rep.to_table();
    eprint!("{table}");
    if c.out.is_some() {
        let out = out_dir(c)?;
        write(&out.join("gradcheck.csv"), &table)?;
        cfg.write_dump(out)?;
    }
    let failing = rep.failing();
    println!(
        "gradcheck: {} blocks, max relative error {:.3e} (tol {:e}), {}",
        rep.blocks.len(),
        rep.max_rel_error(),
        rep.tol,
        if failing.is_empty() { "PASS".to_string() } else { format!("FAIL: {}", failing.join(" ")) }
    );
    Ok(if failing.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
