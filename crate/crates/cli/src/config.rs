use crate::CliError;
use clap::{Args, Parser, Subcommand};
use pilotwave::experiment::{
    snapshot_times, EnsembleKind, FreezingParams, ModeCutoff, RelaxationParams, SignallingParams, Sweep,
};
use pilotwave::{InitialDensity, IntegratorConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Relax,
    Signal,
    Freeze,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relax => "relax",
            Self::Signal => "signal",
            Self::Freeze => "freeze",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Relax(RelaxationParams),
    Signal(SignallingParams),
    Freeze(FreezingParams),
}

impl Experiment {
    pub fn command(&self) -> Command {
        match self {
            Self::Relax(_) => Command::Relax,
            Self::Signal(_) => Command::Signal,
            Self::Freeze(_) => Command::Freeze,
        }
    }

    fn params_value(&self) -> Value {
        match self {
            Self::Relax(p) => serde_json::to_value(p),
            Self::Signal(p) => serde_json::to_value(p),
            Self::Freeze(p) => serde_json::to_value(p),
        }
        .expect("parameters serialize to JSON")
    }
}

/// A complete, validated-on-run description of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: PathBuf,
    pub overwrite: bool,
}

/// On-disk form of [`RunConfig`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Command,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    overwrite: bool,
    #[serde(default)]
    params: Option<Value>,
}

impl RunConfig {
    pub fn to_value(&self) -> Value {
        let raw = RawConfig {
            command: self.experiment.command(),
            seed: Some(self.seed),
            out: Some(self.out.clone()),
            overwrite: self.overwrite,
            params: Some(self.experiment.params_value()),
        };
        serde_json::to_value(raw).expect("config serializes to JSON")
    }

    /// The parameters and seed only: two configs with equal hashes produce
    /// identical results wherever they are written.
    pub fn input_value(&self) -> Value {
        serde_json::json!({
            "command": self.experiment.command(),
            "seed": self.seed,
            "params": self.experiment.params_value(),
        })
    }

    /// Parses a config document or a `manifest.json`; `out` may be left for
    /// the command line to supply.
    pub fn from_json(text: &str) -> Result<PartialConfig, CliError> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config is not valid JSON: {e}")))?;
        if value.get("tool").is_some() && value.get("config").is_some() {
            value = value["config"].take();
        }
        let raw: RawConfig = deserialize_value(value, "")?;
        let params = raw.params.unwrap_or(Value::Object(Default::default()));
        let experiment = match raw.command {
            Command::Relax => Experiment::Relax(merge_defaults(RelaxationParams::default(), params)?),
            Command::Signal => Experiment::Signal(merge_defaults(SignallingParams::default(), params)?),
            Command::Freeze => {
                let sweep = match params.get("sweep") {
                    Some(v) => deserialize_value::<Sweep>(v.clone(), "params.sweep")?,
                    None => Sweep::Velocity,
                };
                Experiment::Freeze(merge_defaults(FreezingParams::for_sweep(sweep), params)?)
            }
        };
        Ok(PartialConfig {
            experiment,
            seed: raw.seed,
            out: raw.out,
            overwrite: raw.overwrite,
        })
    }
}

/// A config file before command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialConfig {
    pub experiment: Experiment,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub overwrite: bool,
}

fn deserialize_value<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let key = match (prefix.is_empty(), path.as_str()) {
            (true, p) => p.to_string(),
            (false, ".") => prefix.to_string(),
            (false, p) => format!("{prefix}.{p}"),
        };
        CliError::Usage(format!("invalid value for `{key}`: {}", e.inner()))
    })
}

/// Overlays `overrides` onto the JSON form of `defaults`, recursing into
/// nested objects, so a file only needs the keys it changes.
fn merge_defaults<T: Serialize + DeserializeOwned>(defaults: T, overrides: Value) -> Result<T, CliError> {
    if !overrides.is_object() {
        return Err(CliError::Usage("`params` must be a JSON object".into()));
    }
    let mut base = serde_json::to_value(defaults).expect("defaults serialize");
    merge(&mut base, overrides);
    deserialize_value(base, "params")
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[derive(Parser, Debug)]
#[command(name = "subquantum", version, about = "Pilot-wave relaxation, signalling and freezing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Relaxation of a non-equilibrium ensemble in a box.
    Relax(RelaxArgs),
    /// Wall move at B and the x_A marginal of an entangled pair.
    Signal(SignalArgs),
    /// Residual H after a velocity-scale or expanding-box sweep.
    Freeze(FreezeArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON config or manifest.json; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Results directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing results directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args, Debug)]
struct IntegratorArgs {
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    h_max: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
}

impl IntegratorArgs {
    fn apply(&self, cfg: &mut IntegratorConfig) {
        set(&mut cfg.rel_tol, self.rel_tol);
        set(&mut cfg.abs_tol, self.abs_tol);
        set(&mut cfg.h_max, self.h_max);
        set(&mut cfg.max_steps, self.max_steps);
    }
}

/// Snapshot times as `--times` or an even grid from `--t-max`/`--snapshots`.
#[derive(Args, Debug)]
struct TimeArgs {
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',', num_args = 0.., conflicts_with_all = ["t_max", "snapshots"])]
    times: Option<Vec<f64>>,
    /// Last snapshot time of an even grid starting at 0.
    #[arg(long)]
    t_max: Option<f64>,
    /// Number of intervals of the even grid.
    #[arg(long)]
    snapshots: Option<usize>,
}

impl TimeArgs {
    fn apply(&self, times: &mut Vec<f64>) {
        if let Some(t) = &self.times {
            *times = t.clone();
        } else if self.t_max.is_some() || self.snapshots.is_some() {
            let end = self.t_max.unwrap_or_else(|| times.last().copied().unwrap_or(0.0));
            let count = self.snapshots.unwrap_or_else(|| times.len().saturating_sub(1).max(1));
            *times = snapshot_times(end, count);
        }
    }
}

#[derive(Args, Debug)]
struct BoxArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    side: Option<f64>,
    /// Mode cutoff MxN (M for 1D).
    #[arg(long)]
    modes: Option<ModeCutoff>,
    /// born, uniform or mode:M,N.
    #[arg(long)]
    initial: Option<InitialDensity>,
    /// Coarse-graining cells per axis.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    subsamples: Option<usize>,
    #[arg(long)]
    max_exclusion: Option<f64>,
}

impl BoxArgs {
    fn apply(&self, p: &mut RelaxationParams) {
        set(&mut p.dim, self.dim);
        set(&mut p.side, self.side);
        set(&mut p.modes, self.modes);
        set(&mut p.initial, self.initial);
        set(&mut p.cells, self.cells);
        set(&mut p.subsamples, self.subsamples);
        set(&mut p.max_exclusion, self.max_exclusion);
    }
}

#[derive(Args, Debug)]
struct RelaxArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    setup: BoxArgs,
    #[command(flatten)]
    times: TimeArgs,
    #[arg(long)]
    velocity_scale: Option<f64>,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

#[derive(Args, Debug)]
struct SignalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    side: Option<f64>,
    /// Time of the wall move at B.
    #[arg(long)]
    t_op: Option<f64>,
    /// Truncation order K of the post-move expansion.
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    truncation_tol: Option<f64>,
    /// Ensemble size.
    #[arg(long = "N")]
    samples: Option<usize>,
    /// Comma-separated: equilibrium, nonequilibrium.
    #[arg(long, value_delimiter = ',')]
    ensembles: Option<Vec<EnsembleKind>>,
    /// Comma-separated measurement times.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Cells of the x_A marginal.
    #[arg(long)]
    cells: Option<usize>,
    /// Null-calibration pairs.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    max_exclusion: Option<f64>,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

#[derive(Args, Debug)]
struct FreezeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// velocity or expanding.
    #[arg(long)]
    sweep: Option<Sweep>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Time of the residual H.
    #[arg(long)]
    final_time: Option<f64>,
    #[command(flatten)]
    setup: BoxArgs,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Parses `argv` (including the program name) into a run configuration.
pub fn parse_cli<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Help(e.to_string()),
        _ => {
            let text = e.to_string();
            CliError::Usage(text.strip_prefix("error: ").unwrap_or(&text).trim_end().to_string())
        }
    })?;
    let (command, common) = match &cli.command {
        Sub::Relax(a) => (Command::Relax, a.common.clone()),
        Sub::Signal(a) => (Command::Signal, a.common.clone()),
        Sub::Freeze(a) => (Command::Freeze, a.common.clone()),
    };
    let file = match &common.config {
        Some(path) => {
            let partial = RunConfig::from_json(&read_config(path)?)?;
            if partial.experiment.command() != command {
                return Err(CliError::Usage(format!(
                    "invalid value for `command`: {} holds a `{}` config, not `{command}`",
                    path.display(),
                    partial.experiment.command()
                )));
            }
            Some(partial)
        }
        None => None,
    };
    let (file_experiment, file_seed, file_out, file_overwrite) = match file {
        Some(p) => (Some(p.experiment), p.seed, p.out, p.overwrite),
        None => (None, None, None, false),
    };

    let experiment = match cli.command {
        Sub::Relax(a) => {
            let mut p = match file_experiment {
                Some(Experiment::Relax(p)) => p,
                _ => RelaxationParams::default(),
            };
            a.setup.apply(&mut p);
            a.times.apply(&mut p.times);
            set(&mut p.velocity_scale, a.velocity_scale);
            a.integrator.apply(&mut p.integrator);
            Experiment::Relax(p)
        }
        Sub::Signal(a) => {
            let mut p = match file_experiment {
                Some(Experiment::Signal(p)) => p,
                _ => SignallingParams::default(),
            };
            set(&mut p.side, a.side);
            set(&mut p.t_op, a.t_op);
            if a.truncation.is_some() {
                p.truncation = a.truncation;
            }
            set(&mut p.truncation_tolerance, a.truncation_tol);
            set(&mut p.samples, a.samples);
            set(&mut p.ensembles, a.ensembles);
            set(&mut p.times, a.times);
            set(&mut p.cells, a.cells);
            set(&mut p.null_repeats, a.repeats);
            set(&mut p.max_exclusion, a.max_exclusion);
            a.integrator.apply(&mut p.integrator);
            Experiment::Signal(p)
        }
        Sub::Freeze(a) => {
            let mut p = match (file_experiment, a.sweep) {
                (Some(Experiment::Freeze(mut p)), sweep) => {
                    set(&mut p.sweep, sweep);
                    p
                }
                (_, sweep) => FreezingParams::for_sweep(sweep.unwrap_or(Sweep::Velocity)),
            };
            set(&mut p.values, a.values);
            set(&mut p.final_time, a.final_time);
            a.setup.apply(&mut p.base);
            a.integrator.apply(&mut p.base.integrator);
            Experiment::Freeze(p)
        }
    };
    let out = common
        .out
        .or(file_out)
        .ok_or_else(|| CliError::Usage("missing required parameter `out` (use --out DIR)".into()))?;
    Ok(RunConfig {
        experiment,
        seed: common.seed.or(file_seed).unwrap_or(0),
        out,
        overwrite: common.overwrite || file_overwrite,
    })
}

fn read_config(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
