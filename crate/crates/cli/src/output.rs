use crate::{CliError, Experiment, RunConfig};
use pilotwave::experiment::{FreezingResult, RelaxationRun, SignallingRun};
use pilotwave::ExperimentError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const TOOL: &str = "subquantum";

/// `manifest.json`: everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the parameters and seed (not the output location).
    pub input_hash: String,
    pub config: Value,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        let canonical = serde_json::to_string(&config.input_value()).expect("config serializes");
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_hash: hex::encode(Sha256::digest(canonical.as_bytes())),
            config: config.to_value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunResult {
    Relax(RelaxationRun),
    Signal(SignallingRun),
    Freeze(FreezingResult),
}

/// Validates the parameters and runs the experiment.
pub fn execute(config: &RunConfig) -> Result<RunResult, ExperimentError> {
    Ok(match &config.experiment {
        Experiment::Relax(p) => RunResult::Relax(pilotwave::run_relaxation(p, config.seed)?),
        Experiment::Signal(p) => RunResult::Signal(pilotwave::run_signalling(p, config.seed)?),
        Experiment::Freeze(p) => RunResult::Freeze(pilotwave::run_freezing(p, config.seed)?),
    })
}

/// Shortest decimal that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x}")
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn pretty(value: &impl Serialize) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    text.into_bytes()
}

/// Every output file as `(name, contents)`, manifest first.
pub fn render(config: &RunConfig, result: &RunResult) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![("manifest.json".to_string(), pretty(&Manifest::new(config)))];
    match result {
        RunResult::Relax(run) => render_relaxation(run, &mut files),
        RunResult::Signal(run) => render_signalling(run, &mut files),
        RunResult::Freeze(run) => render_freezing(run, &mut files),
    }
    files
}

fn render_relaxation(run: &RelaxationRun, files: &mut Vec<(String, Vec<u8>)>) {
    let residuals = run.fit.as_ref().map(|f| f.residuals.clone());
    let rows = run.series.samples.iter().enumerate().map(|(i, s)| {
        vec![
            num(s.t),
            num(s.h),
            num(s.exclusion_rate),
            num(s.error),
            residuals.as_ref().map_or(String::new(), |r| num(r[i])),
        ]
    });
    files.push((
        "h_series.csv".into(),
        csv_table(&["t", "h", "exclusion_rate", "h_error", "fit_residual"], rows),
    ));
    if let Some(fit) = &run.fit {
        files.push((
            "h_fit.csv".into(),
            csv_table(
                &["amplitude", "rate", "rms_residual"],
                [vec![num(fit.amplitude), num(fit.rate), num(fit.rms_residual)]],
            ),
        ));
    }
    for (i, snap) in run.snapshots.iter().enumerate() {
        files.push((format!("density_t{i:03}.csv"), snap.rho.to_csv().into_bytes()));
        files.push((format!("density_t{i:03}.pgm"), snap.rho.to_pgm()));
        files.push((format!("born_t{i:03}.csv"), snap.born.to_csv().into_bytes()));
        files.push((format!("born_t{i:03}.pgm"), snap.born.to_pgm()));
    }
    let series = &run.series;
    let summary = json!({
        "snapshots": series.samples.len(),
        "decay_ratio": series.decay_ratio(),
        "max_rise_over_error": (!series.samples.is_empty()).then(|| series.max_rise_over_error()),
        "max_exclusion_rate": series.max_exclusion_rate(),
        "fit_rate": run.fit.as_ref().map(|f| f.rate),
    });
    files.push(("summary.json".into(), pretty(&summary)));
}

fn render_signalling(run: &SignallingRun, files: &mut Vec<(String, Vec<u8>)>) {
    let mut rows = Vec::new();
    for ens in &run.ensembles {
        let name = ens.kind.name();
        for (i, m) in ens.marginals.iter().enumerate() {
            let body = m
                .no_op
                .values()
                .iter()
                .zip(m.op.values())
                .enumerate()
                .map(|(c, (a, b))| vec![c.to_string(), num(*a), num(*b)]);
            files.push((format!("marginals_t{i:03}_{name}.csv"), csv_table(&["cell", "no_op", "op"], body)));
        }
        for s in &ens.stats {
            let verdict = if !s.after_op {
                "pre_op"
            } else if s.exceeds() {
                "signal"
            } else {
                "no_signal"
            };
            rows.push(vec![
                num(s.t),
                num(s.tv),
                num(s.threshold),
                verdict.to_string(),
                name.to_string(),
                num(s.null_mean),
                num(s.null_sd),
                num(s.exclusion_rate),
            ]);
        }
    }
    files.push((
        "signal_stats.csv".into(),
        csv_table(
            &["t", "tv", "threshold", "verdict", "ensemble", "null_mean", "null_sd", "exclusion_rate"],
            rows,
        ),
    ));
    let verdicts: serde_json::Map<String, Value> = run
        .ensembles
        .iter()
        .map(|e| (e.kind.name().to_string(), Value::from(e.verdict.name())))
        .collect();
    let summary = json!({
        "truncation": run.truncation,
        "norm_loss": run.norm_loss,
        "verdicts": verdicts,
    });
    files.push(("summary.json".into(), pretty(&summary)));
}

fn render_freezing(run: &FreezingResult, files: &mut Vec<(String, Vec<u8>)>) {
    let rows = run
        .rows
        .iter()
        .map(|r| vec![num(r.value), num(r.residual_ratio), num(r.h_initial), num(r.h_final)]);
    files.push((
        "freezing.csv".into(),
        csv_table(&["sweep_value", "residual_ratio", "h_initial", "h_final"], rows),
    ));
    let summary = json!({ "sweep": run.sweep, "monotone": run.monotone });
    files.push(("summary.json".into(), pretty(&summary)));
}

/// Writes all output files into `config.out`.
///
/// Files go to a sibling staging directory first, which replaces `out` only
/// once everything is written; on failure the staging directory is removed.
pub fn write_outputs(config: &RunConfig, result: &RunResult) -> Result<Vec<PathBuf>, CliError> {
    write_files(&config.out, config.overwrite, &render(config, result))
}

pub fn write_files(out: &Path, overwrite: bool, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>, CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    if out.exists() && !overwrite {
        let occupied = !out.is_dir() || fs::read_dir(out).map_err(io(out))?.next().is_some();
        if occupied {
            return Err(CliError::Io {
                path: out.to_path_buf(),
                source: std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    "output exists; pass --overwrite to replace it",
                ),
            });
        }
    }
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let staging = out.with_file_name(format!(".{name}.partial-{}", std::process::id()));
    let result = (|| {
        if let Some(parent) = staging.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::create_dir_all(&staging).map_err(io(&staging))?;
        for (name, bytes) in files {
            let path = staging.join(name);
            fs::write(&path, bytes).map_err(io(&path))?;
        }
        if out.is_dir() {
            fs::remove_dir_all(out).map_err(io(out))?;
        } else if out.exists() {
            fs::remove_file(out).map_err(io(out))?;
        }
        fs::rename(&staging, out).map_err(io(out))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result?;
    Ok(files.iter().map(|(n, _)| out.join(n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pilotwave::experiment::RelaxationParams;
    use pilotwave::HSeries;

    fn empty_relaxation(out: PathBuf) -> (RunConfig, RunResult) {
        let params = RelaxationParams {
            times: vec![],
            ..RelaxationParams::default()
        };
        let config = RunConfig {
            experiment: Experiment::Relax(params),
            seed: 1,
            out,
            overwrite: false,
        };
        let run = RelaxationRun {
            series: HSeries {
                cells: 32,
                subsamples: 3,
                cell_width: 0.1,
                samples: vec![],
            },
            snapshots: vec![],
            fit: None,
        };
        (config, RunResult::Relax(run))
    }

    #[test]
    fn empty_series_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let (config, result) = empty_relaxation(dir.path().join("r"));
        write_outputs(&config, &result).unwrap();
        let csv = fs::read_to_string(dir.path().join("r/h_series.csv")).unwrap();
        assert_eq!(csv, "t,h,exclusion_rate,h_error,fit_residual\n");
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("r/manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.tool, TOOL);
        assert_eq!(manifest.input_hash.len(), 64);
    }

    #[test]
    fn refuses_to_overwrite_without_flag() {
        let dir = tempfile::tempdir().unwrap();
        let (mut config, result) = empty_relaxation(dir.path().join("r"));
        write_outputs(&config, &result).unwrap();
        assert!(matches!(write_outputs(&config, &result), Err(CliError::Io { .. })));
        config.overwrite = true;
        write_outputs(&config, &result).unwrap();
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn failed_write_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r");
        let files = vec![("ok.csv".to_string(), b"a\n".to_vec()), ("sub/missing.csv".to_string(), vec![])];
        assert!(matches!(write_files(&out, false, &files), Err(CliError::Io { .. })));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn hash_ignores_output_location() {
        let (a, _) = empty_relaxation(PathBuf::from("x"));
        let (b, _) = empty_relaxation(PathBuf::from("y"));
        assert_eq!(Manifest::new(&a).input_hash, Manifest::new(&b).input_hash);
        assert_ne!(Manifest::new(&a).config, Manifest::new(&b).config);
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
