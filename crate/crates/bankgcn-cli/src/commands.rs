//! Command implementations. Every artifact lands via a write-then-rename,
//! so a crash never leaves a half-written file behind.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bankgcn::bank::{diversity_penalty, ParamCountConvention};
use bankgcn::check::{run_property_suite, CheckOptions};
use bankgcn::data::{
    dataset_stats, normalize_attributes, parse_tu_dataset, stratified_split,
    synthetic_spectral_dataset, write_tu_dataset, Dataset,
};
use bankgcn::spectral::frequency_response_grid;
use bankgcn::train::{evaluate, train as fit, TrainConfig};
use bankgcn::{Graph, ModelParams};

use crate::config::{CliError, DatasetConfig, EvalSplit, RunConfig};

const SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Trains `cfg.runs` independent runs and writes per-run history and
/// checkpoint plus an aggregate summary. Run `r` derives everything from
/// `train.seed + r`, so results do not depend on worker scheduling.
pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let labels = ds.labels();
    let workers = thread_cap()?.min(cfg.runs);
    log::info!("training {} run(s) on {} with {workers} worker(s)", cfg.runs, ds.name);

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<f64, CliError>>>> =
        Mutex::new((0..cfg.runs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::Relaxed);
                if r >= cfg.runs {
                    break;
                }
                let outcome = run_one(cfg, &ds, &labels, r);
                let failed = outcome.is_err();
                results.lock().unwrap()[r] = Some(outcome);
                if failed {
                    break;
                }
            });
        }
    });

    let mut accs = Vec::with_capacity(cfg.runs);
    for (r, slot) in results.into_inner().unwrap().into_iter().enumerate() {
        match slot {
            Some(Ok(acc)) => accs.push(acc),
            Some(Err(e)) => return Err(e),
            None => return Err(CliError::Runtime(format!("run {r} was abandoned"))),
        }
    }

    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let std = if accs.len() < 2 {
        0.0
    } else {
        let var =
            accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (accs.len() - 1) as f64;
        var.sqrt()
    };
    let summary = serde_json::json!({
        "runs": accs.len(),
        "mean_acc": mean,
        "std_acc": std,
        "per_run_acc": accs,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_atomic(&cfg.out_dir.join("summary.json"), text.as_bytes())?;
    println!("{text}");
    Ok(())
}

fn run_one(cfg: &RunConfig, ds: &Dataset, labels: &[usize], r: usize) -> Result<f64, CliError> {
    let seed = cfg.train.seed.wrapping_add(r as u64);
    let split = stratified_split(labels, SPLIT_RATIOS, seed)?;
    let train_graphs = gather(ds, &split.train);
    let val_graphs = gather(ds, &split.val);
    let test_graphs = gather(ds, &split.test);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelParams::new(
        ds.feature_width(),
        &cfg.model.widths,
        ds.num_classes,
        cfg.model.subspaces,
        cfg.model.order,
        cfg.train.gamma,
        &mut rng,
    )?;
    if cfg.model.freeze_lowpass {
        model.freeze_lowpass();
    }
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let result = fit(&model, &train_graphs, &val_graphs, &train_cfg)?;

    let run_dir = cfg.out_dir.join(format!("run{r}"));
    std::fs::create_dir_all(&run_dir)?;
    let mut history = String::new();
    for record in &result.history {
        history.push_str(&serde_json::to_string(record)?);
        history.push('\n');
    }
    write_atomic(&run_dir.join("history.ndjson"), history.as_bytes())?;
    result.best_params.save_checkpoint(&run_dir.join("checkpoint.bgcn"))?;

    let (test_acc, _) = evaluate(&result.best_params, &test_graphs)?;
    log::info!(
        "run {r}: best epoch {} val acc {:.4} test acc {test_acc:.4}",
        result.best_epoch,
        result.best_val_acc
    );
    Ok(test_acc)
}

/// Evaluates a checkpoint on one split of the configured dataset and prints
/// accuracy plus the confusion matrix as JSON.
pub fn eval(checkpoint: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let model = ModelParams::load_checkpoint(checkpoint)?;
    let ds = load_dataset(cfg)?;
    if model.input_dim() != ds.feature_width() {
        return Err(CliError::Runtime(format!(
            "checkpoint expects {}-dimensional node features but dataset {} provides {}",
            model.input_dim(),
            ds.name,
            ds.feature_width()
        )));
    }
    let indices: Vec<usize> = match cfg.eval_split {
        EvalSplit::All => (0..ds.graphs.len()).collect(),
        part => {
            let split = stratified_split(&ds.labels(), SPLIT_RATIOS, cfg.train.seed)?;
            match part {
                EvalSplit::Train => split.train,
                EvalSplit::Val => split.val,
                EvalSplit::Test => split.test,
                EvalSplit::All => unreachable!(),
            }
        }
    };
    let graphs = gather(&ds, &indices);
    let (accuracy, confusion) = evaluate(&model, &graphs)?;
    let rows: Vec<Vec<usize>> = confusion.outer_iter().map(|row| row.to_vec()).collect();
    let report = serde_json::json!({
        "split": cfg.eval_split.name(),
        "graphs": graphs.len(),
        "accuracy": accuracy,
        "confusion": rows,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Samples one layer's filter responses on a uniform grid over `[0, 2]` and
/// writes one CSV per filter plus a combined table.
pub fn export_response(
    checkpoint: &Path,
    layer: usize,
    points: usize,
    out: &Path,
) -> Result<(), CliError> {
    if points < 2 {
        return Err(CliError::Usage(format!("--points must be at least 2, got {points}")));
    }
    let model = ModelParams::load_checkpoint(checkpoint)?;
    let num_layers = model.layers().len();
    if layer >= num_layers {
        return Err(CliError::Usage(format!(
            "--layer {layer} is out of range; the checkpoint has {num_layers} layer(s)"
        )));
    }
    std::fs::create_dir_all(out)?;

    let filters = model.layers()[layer].filters();
    let mut files = Vec::new();
    let mut grids = Vec::new();
    for (p, coeffs) in filters.iter().enumerate() {
        let grid = frequency_response_grid(coeffs, points)?;
        let mut csv = String::from("lambda,response\n");
        for &(lam, resp) in &grid {
            csv.push_str(&format!("{lam:.16e},{resp:.16e}\n"));
        }
        let path = out.join(format!("layer{layer}_filter{p}.csv"));
        write_atomic(&path, csv.as_bytes())?;
        files.push(path.display().to_string());
        grids.push(grid);
    }
    let mut combined = String::from("lambda");
    for p in 0..filters.len() {
        combined.push_str(&format!(",filter{p}"));
    }
    combined.push('\n');
    for i in 0..points {
        combined.push_str(&format!("{:.16e}", grids[0][i].0));
        for grid in &grids {
            combined.push_str(&format!(",{:.16e}", grid[i].1));
        }
        combined.push('\n');
    }
    let combined_path = out.join(format!("layer{layer}_response.csv"));
    write_atomic(&combined_path, combined.as_bytes())?;
    files.push(combined_path.display().to_string());

    let per_layer: Vec<f64> =
        model.layers().iter().map(|l| diversity_penalty(l.filters())).collect();
    let report = serde_json::json!({
        "layer": layer,
        "points": points,
        "files": files,
        "per_layer_max_abs_cos": per_layer,
        "omega": model.omega(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Runs the randomized property suite, printing one line per check.
/// Returns false if any check failed.
pub fn check(seed: u64, fd_fault: bool) -> bool {
    let outcomes = run_property_suite(&CheckOptions { seed, fd_fault });
    let mut all_passed = true;
    for outcome in &outcomes {
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{tag}  {:<24} {}", outcome.name, outcome.detail);
        all_passed &= outcome.passed;
    }
    all_passed
}

/// Materializes the synthetic dataset on disk in TU layout under
/// `out_dir/<name>/` and prints its statistics.
pub fn gen_synthetic(cfg: &RunConfig) -> Result<(), CliError> {
    let DatasetConfig::Synthetic { graphs, nodes, seed } = &cfg.dataset else {
        return Err(CliError::Usage("gen-synthetic requires dataset.kind = synthetic".into()));
    };
    let ds = synthetic_spectral_dataset(*graphs, *nodes, *seed);
    let dir = cfg.out_dir.join(&ds.name);
    std::fs::create_dir_all(&dir)?;
    write_tu_dataset(&ds, &dir)?;
    let report = serde_json::json!({
        "dir": dir.display().to_string(),
        "stats": dataset_stats(&ds),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Prints dataset statistics and the parameter counts of the configured
/// model under both filter-counting conventions.
pub fn inspect_dataset(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = ModelParams::new(
        ds.feature_width(),
        &cfg.model.widths,
        ds.num_classes,
        cfg.model.subspaces,
        cfg.model.order,
        cfg.train.gamma,
        &mut rng,
    )?;
    if cfg.model.freeze_lowpass {
        model.freeze_lowpass();
    }
    let layers: Vec<serde_json::Value> = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let projection = l.d_in() * l.d_out() + l.d_out();
            serde_json::json!({
                "layer": i,
                "input_dim": l.d_in(),
                "output_dim": l.d_out(),
                "subspaces": l.subspaces(),
                "order": l.order(),
                "params_shared_filter": projection + l.order() + 1,
                "params_per_subspace": projection + l.subspaces() * (l.order() + 1),
            })
        })
        .collect();
    let head_params = model.head_weights().len() + model.head_bias().len();
    let report = serde_json::json!({
        "dataset": dataset_stats(&ds),
        "model": {
            "layers": layers,
            "head_params": head_params,
            "param_count_shared_filter": model.param_count(ParamCountConvention::SharedFilter),
            "param_count_per_subspace": model.param_count(ParamCountConvention::PerSubspace),
            "trainable_shared_filter":
                model.trainable_param_count(ParamCountConvention::SharedFilter),
            "trainable_per_subspace":
                model.trainable_param_count(ParamCountConvention::PerSubspace),
        },
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match &cfg.dataset {
        DatasetConfig::Tu { dir, name, normalize_attributes: norm } => {
            let mut ds = parse_tu_dataset(&dir.join(name), name)?;
            if *norm {
                normalize_attributes(&mut ds);
            }
            Ok(ds)
        }
        DatasetConfig::Synthetic { graphs, nodes, seed } => {
            Ok(synthetic_spectral_dataset(*graphs, *nodes, *seed))
        }
    }
}

fn gather<'a>(ds: &'a Dataset, indices: &[usize]) -> Vec<&'a Graph> {
    indices.iter().map(|&i| &ds.graphs[i]).collect()
}

/// Worker count for multi-run training; `BANKGCN_THREADS` caps it.
fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("BANKGCN_THREADS") {
        Err(std::env::VarError::NotPresent) => {
            Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
        }
        Err(e) => Err(CliError::Usage(format!("BANKGCN_THREADS: {e}"))),
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "BANKGCN_THREADS must be a positive integer, got {raw:?}"
            ))),
        },
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
