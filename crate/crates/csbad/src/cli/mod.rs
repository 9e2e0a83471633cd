//! Experiment runner and file IO: config parsing, the four commands
//! (`simulate`, `cluster`, `select-bench`, `metrics`), run-directory
//! persistence, and exports.
//!
//! Exit-code contract: 0 success, 1 runtime failure, 2 validation failure
//! (bad config, bad input file). The environment variable `CSBAD_OUT` is the
//! output-directory fallback when neither `--out` nor the config names one.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use config::{
    BenchSection, ClusteringSection, EvaluationSection, ExperimentConfig, PerStream,
    SelectOverride, SelectSection, TeacherSection, TrainingSection, WorldSection,
};
pub use report::{read_detections_file, run_dir_files, write_detections_file, write_run_dir};

use crate::cluster::{
    cut_k, cut_threshold, deployment_map, distance_matrix, single_linkage, CutRule,
};
use crate::core::{FrameRecord, Sample, SampleDatabase, ValidationSet};
use crate::metrics::{
    average_precision, iou_thresholds_50_95, margin_of_error, matrix_from_csv, EvalPair,
    MetricsError,
};
use crate::orchestrator::{
    deploy, run_cluster_phase, run_sampling_phase, run_training_phase, ModelEvaluator,
    PseudoLabeler, RunReport, SelectionSummary, StreamScore,
};
use crate::rng::{self, tag};
use crate::select::Strategy;
use crate::simworld::{
    generate_stream, sim_train, transfer_perf, SimEvaluator, SimTrainer, WorldSpec,
};
use crate::util::format_sig;

pub const OUT_DIR_ENV: &str = "CSBAD_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at {path}: {message}")]
    Validation { path: String, message: String },
    #[error("invalid input {file}: {message}")]
    InputFile { file: PathBuf, message: String },
    #[error("invalid input {file} line {line}: {message}")]
    InputLine {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for validation/input problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. }
            | CliError::InputFile { .. }
            | CliError::InputLine { .. } => 2,
            CliError::Io { .. } | CliError::Runtime(_) => 1,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

/// Parse and validate an experiment config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = report::read_input(path)?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::InputLine {
            file: path.to_path_buf(),
            line: e.line().max(1),
            message: e.to_string(),
        })?;
    config.validate()?;
    Ok(config)
}

fn resolve_out_dir(
    flag: &Option<PathBuf>,
    config_dir: Option<&PathBuf>,
) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| config_dir.cloned())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::Validation {
            path: "output_dir".to_string(),
            message: format!(
                "no output directory: pass --out, set output_dir, or export {OUT_DIR_ENV}"
            ),
        })
}

/// Run the full pipeline described by a config: sampling, pseudo-labeling,
/// clustering, training, deployment, and evaluation.
pub fn run_experiment(
    config: &ExperimentConfig,
    master_seed: u64,
) -> Result<(RunReport, WorldSpec), CliError> {
    let world = config.world_spec(master_seed);
    world.validate().map_err(|e| CliError::Validation {
        path: "world".into(),
        message: e.to_string(),
    })?;
    let mut teacher = config.sim_teacher(master_seed);
    let select_configs = config.select_configs(master_seed)?;
    let runtime = |e: &dyn std::fmt::Display| CliError::Runtime(e.to_string());

    // Head of each stream feeds sampling; the tail becomes the validation set.
    let validation_frames = config.evaluation.validation_frames;
    let mut heads: Vec<Vec<FrameRecord>> = Vec::with_capacity(world.n_streams);
    let mut validation_sets: Vec<ValidationSet> = Vec::with_capacity(world.n_streams);
    for stream_id in 0..world.n_streams as u32 {
        let mut frames = generate_stream(&world, stream_id);
        let tail = frames.split_off(frames.len() - validation_frames);
        let mut pairs = Vec::with_capacity(tail.len());
        for frame in &tail {
            if let Ok(labels) = teacher.label(frame) {
                pairs.push(Sample {
                    frame_ref: frame.frame_ref(),
                    labels,
                });
            }
        }
        validation_sets.push(ValidationSet { stream_id, pairs });
        heads.push(frames);
    }

    let sampling =
        run_sampling_phase(&select_configs, &heads, &mut teacher).map_err(|e| runtime(&e))?;
    let selection: Vec<SelectionSummary> = sampling
        .iter()
        .map(|o| SelectionSummary {
            stream_id: o.database.stream_id(),
            strategy: o.strategy.clone(),
            budget: o.database.budget(),
            selected: o.database.len(),
            forwarded: o.forwarded,
            frames_seen: o.frames_seen,
            teacher_failures: o.teacher_failures,
        })
        .collect();
    let databases: Vec<SampleDatabase> = sampling.into_iter().map(|o| o.database).collect();
    debug_assert!(databases
        .iter()
        .zip(&validation_sets)
        .all(|(db, vs)| vs.is_disjoint_from(db)));

    let mut trainer = SimTrainer {
        world: world.clone(),
    };
    let mut evaluator = SimEvaluator {
        world: world.clone(),
        noise_sigma: config.evaluation.noise_sigma,
    };
    let phase = run_cluster_phase(
        &databases,
        &validation_sets,
        &mut trainer,
        &mut evaluator,
        config.cut_rule(),
        config.step1_epochs(),
    )
    .map_err(|e| runtime(&e))?;

    let registry = run_training_phase(
        &phase.partition,
        &databases,
        &mut trainer,
        &config.training_params(),
    )
    .map_err(|e| runtime(&e))?;
    let map = deployment_map(&phase.partition);
    let deployed = deploy(&registry, &map).map_err(|e| runtime(&e))?;

    let scores: Vec<StreamScore> = deployed
        .iter()
        .zip(&validation_sets)
        .zip(&selection)
        .map(|((model, validation), summary)| {
            let score = evaluator
                .evaluate(model, validation)
                .map_err(CliError::Runtime)?;
            Ok(StreamScore {
                stream_id: validation.stream_id,
                strategy: summary.strategy.clone(),
                budget: summary.budget,
                k: phase.partition.k,
                score,
            })
        })
        .collect::<Result<_, CliError>>()?;

    Ok((
        RunReport {
            master_seed,
            selection,
            stream_ids: (0..world.n_streams as u32).collect(),
            matrix: phase.matrix,
            dendrogram: phase.dendrogram,
            partition: phase.partition,
            plans: registry.plans().cloned().collect(),
            scores,
        },
        world,
    ))
}

/// `simulate`: run the pipeline and persist the run directory.
pub fn cmd_simulate(config_path: &Path, overrides: &RunOverrides) -> Result<PathBuf, CliError> {
    let config = load_config(config_path)?;
    let master_seed = overrides.seed.unwrap_or(config.master_seed);
    let out_dir = resolve_out_dir(&overrides.out, config.output_dir.as_ref())?;
    let (report, world) = run_experiment(&config, master_seed)?;
    let echo = config.resolved(master_seed, &world, out_dir.clone());
    write_run_dir(&out_dir, &echo, &report, &world)?;
    if !overrides.quiet {
        println!(
            "run written to {} (N={}, K={}, seed={})",
            out_dir.display(),
            world.n_streams,
            report.partition.k,
            master_seed
        );
    }
    Ok(out_dir)
}

/// `cluster`: read a cross-performance matrix CSV, cluster it, and write
/// `dendrogram.json` and `partition.json`.
pub fn cmd_cluster(
    matrix_path: &Path,
    cut: CutRule,
    overrides: &RunOverrides,
) -> Result<PathBuf, CliError> {
    let text = report::read_input(matrix_path)?;
    let map_metrics = |e: MetricsError| match e {
        MetricsError::MalformedCsv { line, reason } => CliError::InputLine {
            file: matrix_path.to_path_buf(),
            line,
            message: reason,
        },
        other => CliError::InputFile {
            file: matrix_path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let (matrix, _ids) = matrix_from_csv(&text).map_err(map_metrics)?;
    let distances = distance_matrix(&matrix).map_err(|e| CliError::InputFile {
        file: matrix_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let dendrogram = single_linkage(&distances);
    let partition = match cut {
        CutRule::Threshold(t) => {
            if t.is_nan() || t < 0.0 {
                return Err(CliError::Validation {
                    path: "--threshold".into(),
                    message: "must be >= 0".into(),
                });
            }
            cut_threshold(&dendrogram, t)
        }
        CutRule::K(k) => cut_k(&dendrogram, k).map_err(|e| CliError::Validation {
            path: "--k".into(),
            message: e.to_string(),
        })?,
    };

    let out_dir = resolve_out_dir(&overrides.out, None)?;
    std::fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let dendrogram_json = {
        let mut s = serde_json::to_string_pretty(dendrogram.merges()).expect("serializable");
        s.push('\n');
        s
    };
    let partition_json = {
        let mut s = serde_json::to_string_pretty(&partition).expect("serializable");
        s.push('\n');
        s
    };
    report::write_file(&out_dir.join("dendrogram.json"), &dendrogram_json)?;
    report::write_file(&out_dir.join("partition.json"), &partition_json)?;
    if !overrides.quiet {
        println!(
            "{}",
            serde_json::to_string(&partition).expect("serializable")
        );
    }
    Ok(out_dir)
}

/// One `select-bench` row: a (strategy, budget) cell aggregated over seeded
/// repetitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub strategy: String,
    pub budget: usize,
    pub repetitions: usize,
    pub mean_score: f64,
    /// Margin of error at the configured z; `None` for a single repetition.
    pub moe: Option<f64>,
}

/// Mean stream-specific student score for one (strategy, budget, repetition)
/// cell. Trains one model per stream on its own samples and scores it on its
/// own stream; streams whose database ended up empty score at the untrained
/// floor `p0`.
fn bench_cell(
    config: &ExperimentConfig,
    strategy: Strategy,
    budget: usize,
    repetition: usize,
    master_seed: u64,
) -> Result<f64, CliError> {
    let cell_seed = rng::mix(master_seed, &[tag::BENCH, repetition as u64]);
    let mut world = config.world_spec(master_seed);
    // every repetition sees a fresh world and fresh selector/teacher draws
    world.seed = rng::mix(world.seed, &[tag::BENCH, repetition as u64]);
    let mut teacher = config.sim_teacher(cell_seed);

    let mut select_configs = config.select_configs(cell_seed)?;
    for cfg in &mut select_configs {
        cfg.strategy = strategy;
        cfg.budget = budget;
    }

    let validation_frames = config.evaluation.validation_frames;
    let heads: Vec<Vec<FrameRecord>> = (0..world.n_streams as u32)
        .map(|stream_id| {
            let mut frames = generate_stream(&world, stream_id);
            frames.truncate(frames.len() - validation_frames);
            frames
        })
        .collect();
    let sampling = run_sampling_phase(&select_configs, &heads, &mut teacher)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut total = 0.0;
    for outcome in &sampling {
        let stream_id = outcome.database.stream_id();
        let score = if outcome.database.is_empty() {
            world.transfer.p0
        } else {
            let model = sim_train(&world, &[&outcome.database])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            transfer_perf(
                &model,
                stream_id,
                &world,
                model.label_quality,
                config.evaluation.noise_sigma,
            )
        };
        total += score;
    }
    Ok(total / world.n_streams as f64)
}

/// Run the strategy/budget grid from the config's `bench` section.
pub fn run_select_bench(
    config: &ExperimentConfig,
    master_seed: u64,
) -> Result<Vec<BenchRow>, CliError> {
    let bench = config.bench.as_ref().ok_or_else(|| CliError::Validation {
        path: "bench".into(),
        message: "select-bench needs a \"bench\" section".into(),
    })?;
    let mut rows = Vec::new();
    for name in &bench.strategies {
        let strategy = Strategy::from_str(name).map_err(|e| CliError::Validation {
            path: "bench.strategies".into(),
            message: e.to_string(),
        })?;
        for &budget in &bench.budgets {
            let scores: Vec<f64> = (0..bench.repetitions)
                .map(|rep| bench_cell(config, strategy, budget, rep, master_seed))
                .collect::<Result<_, _>>()?;
            let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
            let moe = (scores.len() >= 2)
                .then(|| margin_of_error(&scores, config.evaluation.z))
                .transpose()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            rows.push(BenchRow {
                strategy: strategy.name().to_string(),
                budget,
                repetitions: bench.repetitions,
                mean_score,
                moe,
            });
        }
    }
    Ok(rows)
}

pub fn bench_rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("strategy,B,R,mean_score,moe\n");
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.strategy,
            row.budget,
            row.repetitions,
            format_sig(row.mean_score, 6),
            row.moe.map(|m| format_sig(m, 6)).unwrap_or_default()
        )
        .unwrap();
    }
    out
}

/// `select-bench`: strategy-comparison grid written as one CSV.
pub fn cmd_select_bench(config_path: &Path, overrides: &RunOverrides) -> Result<PathBuf, CliError> {
    let config = load_config(config_path)?;
    let master_seed = overrides.seed.unwrap_or(config.master_seed);
    let out_dir = resolve_out_dir(&overrides.out, config.output_dir.as_ref())?;
    let rows = run_select_bench(&config, master_seed)?;
    std::fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let csv = bench_rows_to_csv(&rows);
    let csv_path = out_dir.join("select_bench.csv");
    report::write_file(&csv_path, &csv)?;
    if !overrides.quiet {
        print!("{csv}");
    }
    Ok(csv_path)
}

/// The `metrics` command's JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct MapReport {
    pub ap_per_iou: Vec<ApEntry>,
    pub map_50_95: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApEntry {
    pub iou: f64,
    pub ap: f64,
}

/// `metrics`: mAP of a predictions file against a ground-truth file, both in
/// detections JSON-lines format. Frames pair by (stream, t); predictions for
/// frames absent from the ground-truth file count as false positives.
pub fn cmd_metrics(
    predictions_path: &Path,
    ground_truth_path: &Path,
) -> Result<MapReport, CliError> {
    let predictions = read_detections_file(predictions_path)?;
    let ground_truth = read_detections_file(ground_truth_path)?;

    let mut by_frame: BTreeMap<crate::core::FrameRef, EvalPair> = BTreeMap::new();
    for (frame_ref, boxes) in ground_truth {
        by_frame.entry(frame_ref).or_default().ground_truth = boxes;
    }
    for (frame_ref, boxes) in predictions {
        by_frame.entry(frame_ref).or_default().predictions = boxes;
    }
    let pairs: Vec<EvalPair> = by_frame.into_values().collect();

    let map_undefined = |e: MetricsError| CliError::InputFile {
        file: ground_truth_path.to_path_buf(),
        message: e.to_string(),
    };
    let mut ap_per_iou = Vec::with_capacity(10);
    let mut sum = 0.0;
    for iou in iou_thresholds_50_95() {
        let ap = average_precision(&pairs, iou).map_err(map_undefined)?;
        sum += ap;
        ap_per_iou.push(ApEntry { iou, ap });
    }
    Ok(MapReport {
        ap_per_iou,
        map_50_95: sum / 10.0,
    })
}
