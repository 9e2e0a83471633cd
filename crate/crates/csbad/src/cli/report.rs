//! Run-directory persistence and detection-file IO.
//!
//! A run directory holds seven files: `config.json`, `matrix.csv`,
//! `dendrogram.json`, `partition.json`, `plans.csv`, `results.csv`, and
//! `shortfalls.csv`. CSVs are RFC 4180 with a mandatory header row, '.'
//! decimal separator, and '\n' line endings. Detection files are JSON-lines,
//! one frame per line:
//! `{"stream": 0, "t": 3, "boxes": [{"x0": .., "y0": .., "x1": .., "y1": .., "conf": .., "label": ..}]}`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cli::{CliError, ExperimentConfig};
use crate::core::{BoundingBox, Detection, FrameRecord, FrameRef};
use crate::metrics::matrix_to_csv;
use crate::orchestrator::RunReport;
use crate::simworld::WorldSpec;
use crate::util::format_sig;

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::InputFile {
        file: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn plans_csv(report: &RunReport) -> String {
    let mut out = String::from("cluster_id,n_k,samples,epochs,iterations\n");
    for plan in &report.plans {
        writeln!(
            out,
            "{},{},{},{},{}",
            plan.cluster_id,
            plan.member_streams.len(),
            plan.samples_total,
            plan.epochs,
            plan.iterations
        )
        .unwrap();
    }
    out
}

fn results_csv(report: &RunReport) -> String {
    let mut out = String::from("stream_id,strategy,B,K,score\n");
    for score in &report.scores {
        writeln!(
            out,
            "{},{},{},{},{}",
            score.stream_id,
            score.strategy,
            score.budget,
            score.k,
            format_sig(score.score, 6)
        )
        .unwrap();
    }
    out
}

fn shortfalls_csv(report: &RunReport) -> String {
    let mut out = String::from(
        "stream_id,strategy,budget,selected,forwarded,frames_seen,teacher_failures,shortfall\n",
    );
    for s in &report.selection {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.stream_id,
            s.strategy,
            s.budget,
            s.selected,
            s.forwarded,
            s.frames_seen,
            s.teacher_failures,
            s.shortfall()
        )
        .unwrap();
    }
    out
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("serializable report");
    out.push('\n');
    out
}

/// Persist a full run: the seven report files plus optional stream dumps.
pub fn write_run_dir(
    dir: &Path,
    config_echo: &ExperimentConfig,
    report: &RunReport,
    world: &WorldSpec,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join("config.json"), &pretty_json(config_echo))?;
    write_file(
        &dir.join("matrix.csv"),
        &matrix_to_csv(&report.matrix, &report.stream_ids),
    )?;
    write_file(
        &dir.join("dendrogram.json"),
        &pretty_json(&report.dendrogram.merges()),
    )?;
    write_file(&dir.join("partition.json"), &pretty_json(&report.partition))?;
    write_file(&dir.join("plans.csv"), &plans_csv(report))?;
    write_file(&dir.join("results.csv"), &results_csv(report))?;
    write_file(&dir.join("shortfalls.csv"), &shortfalls_csv(report))?;

    if config_echo.world.dump_streams {
        let streams_dir = dir.join("streams");
        fs::create_dir_all(&streams_dir).map_err(|source| CliError::Io {
            path: streams_dir.clone(),
            source,
        })?;
        for stream_id in 0..world.n_streams as u32 {
            let frames = crate::simworld::generate_stream(world, stream_id);
            let mut out = String::new();
            for frame in &frames {
                writeln!(
                    out,
                    "{}",
                    serde_json::to_string(frame).expect("serializable frame")
                )
                .unwrap();
            }
            write_file(&streams_dir.join(format!("stream_{stream_id}.jsonl")), &out)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxLine {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    conf: f64,
    label: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    stream: u32,
    t: u64,
    boxes: Vec<BoxLine>,
}

/// Read a detections JSON-lines file. Malformed lines fail with their line
/// number.
pub fn read_detections_file(path: &Path) -> Result<Vec<(FrameRef, Vec<Detection>)>, CliError> {
    let text = read_input(path)?;
    let mut frames = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let bad_line = |message: String| CliError::InputLine {
            file: path.to_path_buf(),
            line: line_no,
            message,
        };
        let parsed: FrameLine = serde_json::from_str(line).map_err(|e| bad_line(e.to_string()))?;
        let mut detections = Vec::with_capacity(parsed.boxes.len());
        for b in parsed.boxes {
            let bbox =
                BoundingBox::new(b.x0, b.y0, b.x1, b.y1).map_err(|e| bad_line(e.to_string()))?;
            detections
                .push(Detection::new(bbox, b.conf, b.label).map_err(|e| bad_line(e.to_string()))?);
        }
        frames.push((
            FrameRef {
                stream_id: parsed.stream,
                t: parsed.t,
            },
            detections,
        ));
    }
    Ok(frames)
}

/// Write frames in the detections JSON-lines format (detection lists only;
/// ground truth is not part of the exchange format).
pub fn write_detections_file(path: &Path, frames: &[FrameRecord]) -> Result<(), CliError> {
    let mut out = String::new();
    for frame in frames {
        let line = FrameLine {
            stream: frame.stream_id,
            t: frame.t,
            boxes: frame
                .detections
                .iter()
                .map(|d| BoxLine {
                    x0: d.bbox.x_min,
                    y0: d.bbox.y_min,
                    x1: d.bbox.x_max,
                    y1: d.bbox.y_max,
                    conf: d.confidence,
                    label: d.label,
                })
                .collect(),
        };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&line).expect("serializable line")
        )
        .unwrap();
    }
    write_file(path, &out)
}

/// The seven files every run directory contains.
pub fn run_dir_files() -> [&'static str; 7] {
    [
        "config.json",
        "matrix.csv",
        "dendrogram.json",
        "partition.json",
        "plans.csv",
        "results.csv",
        "shortfalls.csv",
    ]
}
