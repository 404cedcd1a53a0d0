use std::collections::BTreeMap;

use clap::{ArgGroup, Args, ValueEnum};
use fotrack::fractional::Memory;
use fotrack::identification::{axis_range, FitMode};
use fotrack::models::{ModelKind, PlantModel};
use fotrack::session::Session;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantPreset {
    #[value(name = "paper-eq6")]
    Eq6,
    #[value(name = "paper-eq13")]
    Eq13,
}

#[derive(Debug, Clone, Args)]
pub struct PlantArgs {
    /// Named plant preset.
    #[arg(long, value_enum, conflicts_with_all = ["plant_gain", "plant_tau"])]
    pub plant: Option<PlantPreset>,
    /// Plant gain K of K/(s(tau s + 1)).
    #[arg(long, requires = "plant_tau", allow_hyphen_values = true)]
    pub plant_gain: Option<f64>,
    /// Plant time constant tau in seconds.
    #[arg(long, requires = "plant_gain", allow_hyphen_values = true)]
    pub plant_tau: Option<f64>,
}

impl PlantArgs {
    /// The plant from flags, falling back to the one recorded in `session`.
    pub fn resolve(&self, session: Option<&Session>) -> Result<PlantModel, String> {
        match (self.plant, self.plant_gain, self.plant_tau) {
            (Some(PlantPreset::Eq6), ..) => Ok(PlantModel::paper_eq6()),
            (Some(PlantPreset::Eq13), ..) => Ok(PlantModel::paper_eq13()),
            (None, Some(gain), Some(tau)) => PlantModel::new(gain, tau).map_err(|e| e.to_string()),
            _ => session
                .and_then(|s| s.meta.plant)
                .ok_or_else(|| "no plant given: use --plant or --plant-gain/--plant-tau".to_string()),
        }
    }
}

/// Operator-model parameters. Each is optional; which ones are required
/// depends on `--model`.
#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub kp: Option<f64>,
    /// Dead time in seconds.
    #[arg(long = "L", allow_hyphen_values = true)]
    pub l: Option<f64>,
    /// Lead zero of yp2 (defaults to 1/tau of the plant).
    #[arg(long, allow_hyphen_values = true)]
    pub zero: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tl: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub ti: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tn: Option<f64>,
}

impl ParamArgs {
    pub fn map(&self) -> BTreeMap<String, f64> {
        [
            ("alpha", self.alpha),
            ("kp", self.kp),
            ("L", self.l),
            ("zero", self.zero),
            ("tl", self.tl),
            ("ti", self.ti),
            ("tn", self.tn),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect()
    }

    /// Rejects parameters that `kind` does not have.
    pub fn for_model(&self, kind: ModelKind) -> Result<BTreeMap<String, f64>, String> {
        let map = self.map();
        match map.keys().find(|k| !kind.all_params().contains(&k.as_str())) {
            Some(k) => Err(format!("--{k} is not a parameter of model {kind}")),
            None => Ok(map),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Closed,
    Open,
}

impl From<ModeArg> for FitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Closed => FitMode::ClosedLoop,
            ModeArg::Open => FitMode::OpenLoop,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("input_source").required(true).args(["forcing_seed", "input"])))]
pub struct SourceArgs {
    /// Seed of the default sum-of-sines forcing function.
    #[arg(long)]
    pub forcing_seed: Option<u64>,
    /// Forcing function from a session or input CSV (column `i`).
    #[arg(long)]
    pub input: Option<std::path::PathBuf>,
}

/// `full` or a window length in samples.
pub fn parse_memory(s: &str) -> Result<Memory, String> {
    if s == "full" {
        return Ok(Memory::Full);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected `full` or a positive sample count, got `{s}`")),
        Ok(n) => Ok(Memory::Window(n)),
    }
}

/// Values of one scan or sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis(pub Vec<f64>);

/// Parses `start:step:end`, a comma list, or a single value.
pub fn parse_axis(s: &str) -> Result<Axis, String> {
    parse_values(s).map(Axis)
}

fn parse_values(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| -> Result<f64, String> {
        let v: f64 = t.trim().parse().map_err(|_| format!("`{t}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{t}` is not finite"))
        }
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts[..] {
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if step == 0.0 {
                return Err("range step must be non-zero".to_string());
            }
            let axis = axis_range(start, step, end);
            if axis.is_empty() {
                return Err(format!("range {s} is empty: step points away from the end"));
            }
            Ok(axis)
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(format!("malformed range `{s}`: expected start:step:end or a comma list")),
    }
}
