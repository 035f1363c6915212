use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{load_cifar10, synth_dataset, sweep_tsv, Dataset, HarnessError, Report, RunConfig, SweepRow, SynthSpec};
use crate::agent::run_model_search;
use crate::model::{
    count_flops, demo_cnn_for, demo_transformer_for, evaluate_accuracy, io, train, FlopsReport,
    ModelIR, Split,
};
use crate::patterns::{apply_masks, realize_masks, PatternAssignment, PatternLibrary};

pub const DENSE_TOPOLOGY: &str = "dense.topology.json";
pub const DENSE_WEIGHTS: &str = "dense.weights.ascp";
pub const TRAIN_SUMMARY: &str = "train.json";
pub const SEARCH_LOG: &str = "search.ndjson";
pub const ASSIGNMENT: &str = "assignment.json";
pub const PRUNED_WEIGHTS: &str = "pruned.weights.ascp";
pub const POLICY: &str = "policy.ascp";
pub const PRUNE_SUMMARY: &str = "prune.json";
pub const FINETUNED_WEIGHTS: &str = "finetuned.weights.ascp";
pub const FINETUNE_SUMMARY: &str = "finetune.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub acc_dense: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSummary {
    pub acc_dense: f64,
    pub acc_floor: f64,
    pub flops_target: f64,
    pub acc_pruned: f64,
    pub flops_reduction: f64,
    pub reward: f64,
    pub constraints_met: bool,
    pub episodes_run: usize,
    pub inner_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSummary {
    pub acc_finetuned: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub dense_macs: u64,
    pub effective_macs: u64,
    pub flops_reduction: f64,
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Missing(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Dataset shaped for `model`.
pub fn load_dataset(cfg: &RunConfig, model: &ModelIR) -> Result<Dataset, HarnessError> {
    let data = match cfg.dataset.as_str() {
        "cifar10" => {
            let dir = cfg.data_dir.as_ref().ok_or_else(|| HarnessError::Config("cifar10 needs data_dir".into()))?;
            load_cifar10(dir, cfg.seed)?
        }
        _ => {
            let (channels, height, width) = match model.input_shape[..] {
                [c, h, w] => (c, h, w),
                [t, d] => (1, t, d),
                _ => return Err(HarnessError::Config("unsupported input shape".into())),
            };
            let d = synth_dataset(&SynthSpec {
                seed: cfg.seed,
                samples: cfg.samples,
                classes: cfg.classes,
                channels,
                height,
                width,
                noise: cfg.noise,
            })?;
            let reshape = |s: Split| -> Result<Split, HarnessError> {
                let mut shape = vec![s.len()];
                shape.extend(&model.input_shape);
                Ok(Split {
                    inputs: s.inputs.reshape(&shape)?,
                    labels: s.labels,
                })
            };
            Dataset {
                train: reshape(d.train)?,
                val: reshape(d.val)?,
                test: reshape(d.test)?,
            }
        }
    };
    if data.train.sample_shape() != model.input_shape.as_slice() {
        return Err(HarnessError::Config(format!(
            "dataset samples {:?} do not fit model input {:?}",
            data.train.sample_shape(),
            model.input_shape
        )));
    }
    Ok(data)
}

/// Freshly initialized model named by the config.
pub fn fresh_model(cfg: &RunConfig) -> Result<ModelIR, HarnessError> {
    let classes = if cfg.dataset == "cifar10" { 10 } else { cfg.classes };
    Ok(match cfg.model.as_str() {
        "demo_transformer" => demo_transformer_for(classes, cfg.seed),
        _ if cfg.dataset == "cifar10" => demo_cnn_for([3, 32, 32], classes, cfg.seed),
        _ => demo_cnn_for([1, 16, 16], classes, cfg.seed),
    })
}

/// Dense model from explicit paths, else from the run directory.
pub fn load_dense(cfg: &RunConfig) -> Result<ModelIR, HarnessError> {
    let (topo, weights) = match (&cfg.model_path, &cfg.weights_path) {
        (Some(t), Some(w)) => (t.clone(), w.clone()),
        _ => (out(cfg, DENSE_TOPOLOGY), out(cfg, DENSE_WEIGHTS)),
    };
    if !topo.exists() || !weights.exists() {
        return Err(HarnessError::Missing(format!(
            "dense model {} / {} (run `train` first)",
            topo.display(),
            weights.display()
        )));
    }
    Ok(io::load_model(&topo, &weights)?)
}

pub fn load_library(cfg: &RunConfig, model: &ModelIR) -> Result<PatternLibrary, HarnessError> {
    if let Some(p) = &cfg.patterns_path {
        return Ok(PatternLibrary::load(p)?);
    }
    let k = model
        .operators
        .iter()
        .find_map(|o| match &o.kind {
            crate::model::OpKind::Conv2d(p) => Some(p.kernel),
            _ => None,
        })
        .unwrap_or(3);
    Ok(PatternLibrary::default_library(k, cfg.patterns)?)
}

fn with_weights(model: &ModelIR, path: &Path) -> Result<ModelIR, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::Missing(path.display().to_string()));
    }
    Ok(ModelIR::from_topology(model.topology(), io::load_tensors(path)?)?)
}

/// Fit the dense model and store it in the run directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, HarnessError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut model = fresh_model(cfg)?;
    let data = load_dataset(cfg, &model)?;
    let losses = train(&mut model, &data.train, &cfg.train_schedule(), None)?;
    let acc_dense = evaluate_accuracy(&model, &data.val, None)?;
    io::save_model(&model, &out(cfg, DENSE_TOPOLOGY), &out(cfg, DENSE_WEIGHTS))?;
    let summary = TrainSummary { acc_dense, losses };
    write_json(&out(cfg, TRAIN_SUMMARY), &summary)?;
    Ok(summary)
}

/// Pattern search on the dense model.
pub fn cmd_prune(cfg: &RunConfig) -> Result<PruneSummary, HarnessError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let model = load_dense(cfg)?;
    let library = load_library(cfg, &model)?;
    let data = load_dataset(cfg, &model)?;
    let acc_dense = evaluate_accuracy(&model, &data.val, None)?;
    let constraints = cfg.constraints(acc_dense);
    let outcome = run_model_search(&model, &library, &constraints, &data.val, &cfg.search_config(), cfg.seed)?;
    std::fs::write(out(cfg, SEARCH_LOG), outcome.log_ndjson())?;
    write_json(&out(cfg, ASSIGNMENT), &outcome.best)?;
    io::save_tensors(
        &out(cfg, PRUNED_WEIGHTS),
        outcome.pruned.weights.iter().map(|(k, v)| (k.as_str(), v)),
    )?;
    outcome.policy.save(&out(cfg, POLICY))?;
    let summary = PruneSummary {
        acc_dense,
        acc_floor: constraints.acc_floor,
        flops_target: constraints.flops_target,
        acc_pruned: outcome.best_metrics.accuracy,
        flops_reduction: outcome.best_metrics.flops_reduction,
        reward: outcome.best_reward,
        constraints_met: outcome.constraints_met,
        episodes_run: outcome.episodes_run,
        inner_steps: outcome.log.len(),
    };
    write_json(&out(cfg, PRUNE_SUMMARY), &summary)?;
    Ok(summary)
}

pub fn load_assignment(path: &Path) -> Result<PatternAssignment, HarnessError> {
    read_json(path)
}

/// Retrain the pruned model with frozen masks.
pub fn cmd_finetune(cfg: &RunConfig) -> Result<FinetuneSummary, HarnessError> {
    let model = load_dense(cfg)?;
    let library = load_library(cfg, &model)?;
    let assignment = load_assignment(&out(cfg, ASSIGNMENT))?;
    let masks = realize_masks(&model, &library, &assignment)?;
    let pruned = with_weights(&model, &out(cfg, PRUNED_WEIGHTS))?;
    let data = load_dataset(cfg, &model)?;
    let mut tuned = apply_masks(&pruned, &masks);
    let losses = train(&mut tuned, &data.train, &cfg.finetune_schedule(), Some(&masks))?;
    let acc_finetuned = evaluate_accuracy(&tuned, &data.val, Some(&masks))?;
    io::save_tensors(
        &out(cfg, FINETUNED_WEIGHTS),
        tuned.weights.iter().map(|(k, v)| (k.as_str(), v)),
    )?;
    let summary = FinetuneSummary { acc_finetuned, losses };
    write_json(&out(cfg, FINETUNE_SUMMARY), &summary)?;
    Ok(summary)
}

/// Accuracy and MACs of a model under an optional assignment.
pub fn evaluate(
    model: &ModelIR,
    library: &PatternLibrary,
    assignment: Option<&PatternAssignment>,
    split: &Split,
) -> Result<EvalSummary, HarnessError> {
    let masks = assignment.map(|a| realize_masks(model, library, a)).transpose()?;
    let accuracy = evaluate_accuracy(model, split, masks.as_ref())?;
    let FlopsReport {
        dense_macs,
        effective_macs,
        flops_reduction,
        ..
    } = count_flops(model, masks.as_ref())?;
    Ok(EvalSummary {
        accuracy,
        dense_macs,
        effective_macs,
        flops_reduction,
    })
}

/// Evaluate the dense model (or `weights` over its topology) on validation
/// data, masked by the assignment file when one is given.
pub fn cmd_eval(cfg: &RunConfig, weights: Option<&Path>, assignment: Option<&Path>) -> Result<EvalSummary, HarnessError> {
    let dense = load_dense(cfg)?;
    let model = match weights {
        Some(w) => with_weights(&dense, w)?,
        None => dense,
    };
    let library = load_library(cfg, &model)?;
    let data = load_dataset(cfg, &model)?;
    let assignment = assignment.map(load_assignment).transpose()?;
    evaluate(&model, &library, assignment.as_ref(), &data.val)
}

/// Merge the run's summaries into a report and cross-check the MAC count
/// against the saved fine-tuned weights.
pub fn cmd_report(cfg: &RunConfig, wall_time: Option<f64>) -> Result<Report, HarnessError> {
    let prune: PruneSummary = read_json(&out(cfg, PRUNE_SUMMARY))?;
    let ft: FinetuneSummary = read_json(&out(cfg, FINETUNE_SUMMARY))?;
    let dense = load_dense(cfg)?;
    let library = load_library(cfg, &dense)?;
    let assignment = load_assignment(&out(cfg, ASSIGNMENT))?;
    let masks = realize_masks(&dense, &library, &assignment)?;
    for file in [PRUNED_WEIGHTS, FINETUNED_WEIGHTS] {
        let saved = with_weights(&dense, &out(cfg, file))?;
        for (name, mask) in &masks.0 {
            let w = saved.weight(name)?;
            if w.data().iter().zip(mask.data()).any(|(&v, &m)| m == 0.0 && v != 0.0) {
                return Err(HarnessError::Format(format!("{file}: `{name}` has weight at a pruned position")));
            }
        }
    }
    let flops = count_flops(&dense, Some(&masks))?;
    if flops.flops_reduction != prune.flops_reduction {
        return Err(HarnessError::Format(format!(
            "MAC reduction {} disagrees with search summary {}",
            flops.flops_reduction, prune.flops_reduction
        )));
    }
    let report = Report {
        dense_macs: flops.dense_macs,
        effective_macs: flops.effective_macs,
        flops_reduction: flops.flops_reduction,
        acc_dense: prune.acc_dense,
        acc_pruned: prune.acc_pruned,
        acc_finetuned: ft.acc_finetuned,
        delta_acc: ft.acc_finetuned - prune.acc_dense,
        episodes_run: prune.episodes_run,
        wall_time: if cfg.report_wall_time { wall_time } else { None },
        assignment,
        config: cfg.clone(),
        constraints_met: prune.constraints_met,
    };
    std::fs::write(out(cfg, REPORT), report.to_json())?;
    Ok(report)
}

/// Train (unless a dense model is already present), prune, fine-tune and report.
pub fn run_all(cfg: &RunConfig) -> Result<Report, HarnessError> {
    let start = Instant::now();
    if load_dense(cfg).is_err() {
        cmd_train(cfg)?;
    }
    cmd_prune(cfg)?;
    cmd_finetune(cfg)?;
    cmd_report(cfg, Some(start.elapsed().as_secs_f64()))
}

/// Prune and fine-tune once per value of `axis`, reusing one dense model.
/// Each point runs in `<out_dir>/sweep_<axis>/<value>`; the table goes to
/// `<out_dir>/sweep_<axis>.tsv`.
pub fn cmd_sweep(cfg: &RunConfig, axis: &str, values: &[String]) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut base = cfg.clone();
    if base.model_path.is_none() {
        if load_dense(&base).is_err() {
            cmd_train(&base)?;
        }
        base.model_path = Some(out(cfg, DENSE_TOPOLOGY));
        base.weights_path = Some(out(cfg, DENSE_WEIGHTS));
    }
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut point = base.clone();
        point.set_axis(axis, v)?;
        point.out_dir = cfg.out_dir.join(format!("sweep_{axis}")).join(v);
        let report = run_all(&point)?;
        rows.push(SweepRow {
            x: v.clone(),
            acc_finetuned: report.acc_finetuned,
            acc_pruned: report.acc_pruned,
            flops_reduction: report.flops_reduction,
            constraints_met: report.constraints_met,
        });
    }
    std::fs::write(out(cfg, &format!("sweep_{axis}.tsv")), sweep_tsv(&rows))?;
    Ok(rows)
}
