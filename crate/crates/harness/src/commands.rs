//! The six subcommands as library calls.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use veram::agent::AgentParams;
use veram::confidence::{attach_confidences, train_confidence_net};
use veram::data::{generate_synthetic, ingest_external, read_dataset, write_dataset, Dataset};
use veram::diffcore::SgdState;
use veram::learning::{evaluate, train_epoch, Evaluation, TrainConfig, Variant};
use veram::oracle::{best_fixed_sequence, policy_gap, OracleResult};
use veram::viewspace::{GridIndex, ViewSpace};

use crate::error::{CliError, CliResult};
use crate::report::{hex, write_csv, write_json, Checkpoint, EpochRecord, RunManifest};
use crate::settings::Settings;

pub const TRAIN_FILE: &str = "train.vfg";
pub const TEST_FILE: &str = "test.vfg";

/// Runs `f` on a pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// A directory holding `train.vfg` and optionally `test.vfg`, or a single
/// dataset file used as the training set.
pub fn load_split(path: &Path) -> CliResult<(Dataset, Option<Dataset>)> {
    if path.is_dir() {
        let train = read_dataset(path.join(TRAIN_FILE))?;
        let test_path = path.join(TEST_FILE);
        let test = if test_path.exists() {
            Some(read_dataset(test_path)?)
        } else {
            None
        };
        Ok((train, test))
    } else {
        Ok((read_dataset(path)?, None))
    }
}

/// The evaluation set: `test.vfg` of a directory, or the file itself.
pub fn load_eval_set(path: &Path) -> CliResult<Dataset> {
    if path.is_dir() {
        Ok(read_dataset(path.join(TEST_FILE))?)
    } else {
        Ok(read_dataset(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub train_shapes: usize,
    pub test_shapes: usize,
    pub train_checksum: String,
    pub test_checksum: String,
    pub layout: Vec<Vec<GridIndex>>,
}

pub fn cmd_generate(s: &Settings, out: &Path) -> CliResult<GenerateReport> {
    let split = generate_synthetic(&s.synthetic())?;
    std::fs::create_dir_all(out)?;
    write_dataset(out.join(TRAIN_FILE), &split.train)?;
    write_dataset(out.join(TEST_FILE), &split.test)?;
    let report = GenerateReport {
        train_shapes: split.train.len(),
        test_shapes: split.test.len(),
        train_checksum: hex(split.train.checksum()),
        test_checksum: hex(split.test.checksum()),
        layout: split.layout,
    };
    write_json(&out.join("generate.json"), &report)?;
    std::fs::write(out.join("config.txt"), s.to_text())?;
    Ok(report)
}

pub fn cmd_ingest(manifest: &Path, space: ViewSpace, out: &Path) -> CliResult<Dataset> {
    let ds = ingest_external(manifest, space)?;
    write_dataset(out, &ds)?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub view_accuracy: f64,
    pub mean_confidence: f64,
}

/// Fits the per-view classifier on the training split and writes
/// confidences into every split found at `dataset`.
pub fn cmd_confidence(s: &Settings, dataset: &Path) -> CliResult<ConfidenceReport> {
    with_threads(s.threads, || -> CliResult<ConfidenceReport> {
        let (mut train, mut test) = load_split(dataset)?;
        let net = train_confidence_net(&train, &s.readout())?;
        attach_confidences(&net, &mut train)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut total = 0.0;
        for shape in &train.shapes {
            for c in 0..train.space.cells() {
                xs.push(shape.view_at(c));
                ys.push(shape.label);
            }
            total += shape.confidences().unwrap_or(&[]).iter().map(|&c| c as f64).sum::<f64>();
        }
        let report = ConfidenceReport {
            epochs: net.history.len(),
            final_loss: net.history.last().copied().unwrap_or(f64::NAN),
            view_accuracy: net.accuracy(&xs, &ys),
            mean_confidence: total / xs.len() as f64,
        };
        if let Some(t) = test.as_mut() {
            attach_confidences(&net, t)?;
        }
        if dataset.is_dir() {
            write_dataset(dataset.join(TRAIN_FILE), &train)?;
            if let Some(t) = &test {
                write_dataset(dataset.join(TEST_FILE), t)?;
            }
            write_json(&dataset.join("confidence.json"), &report)?;
        } else {
            write_dataset(dataset, &train)?;
        }
        Ok(report)
    })?
}

/// One training run. With `resume`, continues that checkpoint's run to its
/// configured epoch count; `on_epoch` sees every finished epoch.
pub fn train_run(
    train: &Dataset,
    test: Option<&Dataset>,
    s: &Settings,
    variant: Variant,
    seed: u64,
    steps: usize,
    resume: Option<&Checkpoint>,
    mut on_epoch: impl FnMut(&EpochRecord, &AgentParams<f64>, &SgdState<f64>, &TrainConfig) -> CliResult<()>,
) -> CliResult<(AgentParams<f64>, SgdState<f64>, RunManifest)> {
    let clock = Instant::now();
    let (mut params, mut opt, cfg) = match resume {
        Some(ck) => {
            let (p, o) = ck.restore()?;
            (p, o, ck.training.clone())
        }
        None => {
            let agent = s.agent(train.space, train.dim, train.num_classes(), variant, steps);
            let p = AgentParams::<f64>::seeded(agent, seed)?;
            let cfg = s.training(variant, seed);
            let o = SgdState::new(&p.set, cfg.momentum);
            (p, o, cfg)
        }
    };
    cfg.validate()?;
    if cfg.scheme.variant.confidence_weighting() && !train.has_confidences() {
        return Err(veram::Error::MissingConfidences.into());
    }
    let resumed_from = opt.epoch;
    let mut epochs = Vec::new();
    while (opt.epoch as u32) < cfg.epochs {
        let metrics = train_epoch(train, &mut params, &mut opt, &cfg)?;
        let due = s.eval_every > 0 && metrics.epoch % s.eval_every == 0;
        let (ti, tc) = match test {
            Some(t) if due => {
                let e = evaluate(t, &params)?;
                (Some(e.instance_accuracy), Some(e.class_accuracy))
            }
            _ => (None, None),
        };
        let rec = EpochRecord {
            metrics,
            test_instance_accuracy: ti,
            test_class_accuracy: tc,
        };
        on_epoch(&rec, &params, &opt, &cfg)?;
        epochs.push(rec);
    }
    let fin = test.map(|t| evaluate(t, &params)).transpose()?;
    let manifest = RunManifest {
        config: s.to_text(),
        command: String::new(),
        seed: cfg.seed,
        resumed_from: (resumed_from > 0).then_some(resumed_from),
        train_checksum: hex(train.checksum()),
        test_checksum: test.map(|t| hex(t.checksum())),
        agent: params.config.clone(),
        training: cfg,
        epochs,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        param_checksum: hex(params.checksum()),
        final_instance_accuracy: fin.as_ref().map(|e| e.instance_accuracy),
        final_class_accuracy: fin.as_ref().map(|e| e.class_accuracy),
    };
    Ok((params, opt, manifest))
}

/// Trains `s.variant` and writes `manifest.json`, `metrics.csv`,
/// `config.txt` and checkpoints into `out`.
pub fn cmd_train(s: &Settings, dataset: &Path, out: &Path, resume: Option<&Path>) -> CliResult<RunManifest> {
    with_threads(s.threads, || -> CliResult<RunManifest> {
        let (train, test) = load_split(dataset)?;
        let ck = resume.map(Checkpoint::load).transpose()?;
        std::fs::create_dir_all(out)?;
        let every = s.checkpoint_every.filter(|&n| n > 0);
        let (params, opt, mut manifest) = train_run(
            &train,
            test.as_ref(),
            s,
            s.variant,
            s.seed,
            s.steps,
            ck.as_ref(),
            |rec, p, o, cfg| {
                if let Some(n) = every {
                    if rec.metrics.epoch % n == 0 {
                        let path = out.join(format!("checkpoint-{:05}.json", rec.metrics.epoch));
                        Checkpoint::capture(p, o, cfg).save(&path)?;
                    }
                }
                Ok(())
            },
        )?;
        let config_path = out.join("config.txt");
        std::fs::write(&config_path, s.to_text())?;
        manifest.command = format!(
            "veram train --config {} --dataset {} --out {}",
            config_path.display(),
            dataset.display(),
            out.display()
        );
        Checkpoint::capture(&params, &opt, &manifest.training).save(&out.join("checkpoint.json"))?;
        write_json(&out.join("manifest.json"), &manifest)?;
        let rows: Vec<Vec<String>> = manifest
            .epochs
            .iter()
            .map(|r| {
                let o = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
                vec![
                    r.metrics.epoch.to_string(),
                    r.metrics.lr.to_string(),
                    r.metrics.nll.to_string(),
                    r.metrics.location_loss.to_string(),
                    r.metrics.train_accuracy.to_string(),
                    o(r.test_instance_accuracy),
                    o(r.test_class_accuracy),
                ]
            })
            .collect();
        write_csv(
            &out.join("metrics.csv"),
            &["epoch", "lr", "nll", "location_loss", "train_accuracy", "test_instance_accuracy", "test_class_accuracy"],
            &rows,
        )?;
        Ok(manifest)
    })?
}

/// Test-mode evaluation of a checkpoint; writes nothing.
pub fn cmd_eval(s: &Settings, dataset: &Path, checkpoint: &Path) -> CliResult<Evaluation> {
    with_threads(s.threads, || -> CliResult<Evaluation> {
        let ds = load_eval_set(dataset)?;
        let (params, _) = Checkpoint::load(checkpoint)?.restore()?;
        Ok(evaluate(&ds, &params)?)
    })?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub steps: usize,
    pub instance_accuracy: f64,
    pub class_accuracy: f64,
    pub border_fraction: f64,
    pub param_checksum: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub variant: Variant,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub mean_class_accuracy: f64,
    pub mean_instance_accuracy: f64,
    pub mean_border_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: String,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
}

impl AblationReport {
    pub fn mean(&self, variant: Variant, steps: usize) -> Option<&AblationSummary> {
        self.summary.iter().find(|r| r.variant == variant && r.steps == steps)
    }
}

/// Every variant x seed x horizon on one split, evaluated on `test`.
pub fn ablate(train: &Dataset, test: &Dataset, s: &Settings) -> CliResult<AblationReport> {
    if s.variants.iter().any(|v| v.confidence_weighting()) && !train.has_confidences() {
        return Err(veram::Error::MissingConfidences.into());
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &steps in &s.sweep_steps {
        for &variant in &s.variants {
            let mut group = Vec::new();
            for &seed in &s.seeds {
                let clock = Instant::now();
                let (params, _, _) = train_run(train, None, s, variant, seed, steps, None, |_, _, _, _| Ok(()))?;
                let e = evaluate(test, &params)?;
                group.push(AblationRow {
                    variant,
                    seed,
                    steps,
                    instance_accuracy: e.instance_accuracy,
                    class_accuracy: e.class_accuracy,
                    border_fraction: e.border_fraction,
                    param_checksum: hex(params.checksum()),
                    seconds: clock.elapsed().as_secs_f64(),
                });
            }
            let n = group.len() as f64;
            summary.push(AblationSummary {
                variant,
                steps,
                seeds: s.seeds.clone(),
                mean_class_accuracy: group.iter().map(|r| r.class_accuracy).sum::<f64>() / n,
                mean_instance_accuracy: group.iter().map(|r| r.instance_accuracy).sum::<f64>() / n,
                mean_border_fraction: group.iter().map(|r| r.border_fraction).sum::<f64>() / n,
            });
            rows.extend(group);
        }
    }
    Ok(AblationReport {
        config: s.to_text(),
        rows,
        summary,
    })
}

/// Runs [`ablate`] and writes `ablation.csv` (one row per run),
/// `ablation_summary.csv` (seed means) and `ablation.json`.
pub fn cmd_ablate(s: &Settings, dataset: &Path, out: &Path) -> CliResult<AblationReport> {
    with_threads(s.threads, || -> CliResult<AblationReport> {
        let (train, test) = load_split(dataset)?;
        let test = test.ok_or_else(|| CliError::Usage(format!("{} has no {TEST_FILE}", dataset.display())))?;
        let report = ablate(&train, &test, s)?;
        std::fs::create_dir_all(out)?;
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.variant.name().into(),
                    r.seed.to_string(),
                    r.steps.to_string(),
                    r.instance_accuracy.to_string(),
                    r.class_accuracy.to_string(),
                    r.border_fraction.to_string(),
                    r.param_checksum.clone(),
                ]
            })
            .collect();
        write_csv(
            &out.join("ablation.csv"),
            &["variant", "seed", "steps", "instance_accuracy", "class_accuracy", "border_fraction", "param_checksum"],
            &rows,
        )?;
        let rows: Vec<Vec<String>> = report
            .summary
            .iter()
            .map(|r| {
                vec![
                    r.variant.name().into(),
                    r.steps.to_string(),
                    r.seeds.len().to_string(),
                    r.mean_class_accuracy.to_string(),
                    r.mean_instance_accuracy.to_string(),
                    r.mean_border_fraction.to_string(),
                ]
            })
            .collect();
        write_csv(
            &out.join("ablation_summary.csv"),
            &["variant", "steps", "seeds", "mean_class_accuracy", "mean_instance_accuracy", "mean_border_fraction"],
            &rows,
        )?;
        write_json(&out.join("ablation.json"), &report)?;
        Ok(report)
    })?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub oracle: OracleResult,
    pub agent_instance_accuracy: Option<f64>,
    pub policy_gap: Option<f64>,
}

/// Best fixed sequence of `s.steps` views; with a checkpoint, also the gap
/// between that and the agent.
pub fn cmd_oracle(s: &Settings, dataset: &Path, checkpoint: Option<&Path>) -> CliResult<OracleReport> {
    with_threads(s.threads, || -> CliResult<OracleReport> {
        let (train, test) = load_split(dataset)?;
        let test = test.ok_or_else(|| CliError::Usage(format!("{} has no {TEST_FILE}", dataset.display())))?;
        let params = checkpoint
            .map(|p| Checkpoint::load(p).and_then(|c| c.restore()).map(|x| x.0))
            .transpose()?;
        let steps = params.as_ref().map_or(s.steps, |p| p.config.steps);
        let oracle = best_fixed_sequence(&train, &test, &s.oracle(steps))?;
        let (acc, gap) = match &params {
            Some(p) => {
                let gap = policy_gap(p, &test, &oracle)?;
                (Some(oracle.accuracy - gap), Some(gap))
            }
            None => (None, None),
        };
        Ok(OracleReport {
            oracle,
            agent_instance_accuracy: acc,
            policy_gap: gap,
        })
    })?
}

pub fn default_out(sub: &str) -> PathBuf {
    PathBuf::from("runs").join(sub)
}
