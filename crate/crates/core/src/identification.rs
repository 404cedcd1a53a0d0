//! Parameter identification: RMSE cost, simplex fits, lattice scans and
//! delay sweeps.
//!
//! The default closed-loop mode drives each candidate operator model with the
//! recorded forcing function through the plant and compares the simulated
//! plant output to the recorded one. Open-loop mode feeds the recorded error
//! straight into the operator model and compares operator outputs.
//!
//! Domain constraints (`kp > 0`, `L >= 0`, time constants `>= 0`,
//! `alpha` in `[-2, 2]`) are enforced with a finite barrier of
//! [`PENALTY`] plus the distance to the feasible set, so the simplex can slide
//! back off the boundary.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closed_loop::{simulate_output, LoopConfig, SimError};
use crate::fractional::Memory;
use crate::models::{effective_delay, operator_output, FractionalModel, ModelError, ModelKind, OperatorModel, PlantModel};
use crate::session::Session;
use crate::signal::SampledSignal;
use crate::simplex::{minimize, SimplexConfig, SimplexError};

/// Base cost of an infeasible parameter vector.
pub const PENALTY: f64 = 1e9;
/// Cost of a parameter vector whose simulation diverged at the last sample.
/// Earlier divergence costs up to twice this, which points the simplex back
/// toward stable parameters when it starts in an unstable region.
pub const DIVERGED_COST: f64 = 1e10;
/// Sentinel RMSE for diverged scan cells and failed fits.
pub const DIVERGED: f64 = f64::INFINITY;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentError {
    #[error("signals differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("signals differ in step: {0} vs {1}")]
    StepMismatch(f64, f64),
    #[error("session lacks signal `{0}` required by this mode")]
    MissingSignal(&'static str),
    #[error("parameter `{name}` is not a parameter of model {kind}")]
    UnknownParameter { name: String, kind: ModelKind },
    #[error("no free parameters left to fit")]
    NothingToFit,
    #[error("axis `{0}` is empty or contains non-finite values")]
    BadAxis(&'static str),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Root-mean-square difference of two equally sampled signals.
pub fn rmse_cost(model_output: &SampledSignal, recorded: &SampledSignal) -> Result<f64, IdentError> {
    if model_output.len() != recorded.len() {
        return Err(IdentError::LengthMismatch(model_output.len(), recorded.len()));
    }
    if model_output.step() != recorded.step() {
        return Err(IdentError::StepMismatch(model_output.step(), recorded.step()));
    }
    Ok(rmse(model_output.values(), recorded.values()))
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / a.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Compare simulated and recorded plant output `m`.
    #[default]
    ClosedLoop,
    /// Compare model and recorded operator output `c` given the recorded `e`.
    OpenLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub mode: FitMode,
    pub simplex: SimplexConfig,
    /// Starting values; missing free parameters take [`default_initial`].
    pub initial: BTreeMap<String, f64>,
    /// Parameters held constant (e.g. `L` for fixed-delay fits, `zero` for `yp2`).
    pub fixed: BTreeMap<String, f64>,
    pub memory: Memory,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mode: FitMode::ClosedLoop,
            simplex: SimplexConfig::default(),
            initial: BTreeMap::new(),
            fixed: BTreeMap::new(),
            memory: Memory::Full,
        }
    }
}

impl FitOptions {
    pub fn with_fixed(mut self, name: &str, value: f64) -> Self {
        self.fixed.insert(name.to_string(), value);
        self
    }

    pub fn with_initial(mut self, name: &str, value: f64) -> Self {
        self.initial.insert(name.to_string(), value);
        self
    }

    pub fn with_mode(mut self, mode: FitMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Starting point for a free parameter.
pub fn default_initial(name: &str) -> f64 {
    match name {
        "alpha" => -0.5,
        "kp" => 1.0,
        "L" => 0.1,
        "tl" | "ti" | "tn" => 0.2,
        _ => 1.0,
    }
}

/// Initial simplex edge along a parameter.
fn initial_step(name: &str, start: f64) -> f64 {
    match name {
        "alpha" => 0.1,
        "kp" => (0.25 * start.abs()).max(0.05),
        "L" => 0.05,
        _ => (0.25 * start.abs()).max(0.05),
    }
}

/// Outcome of one identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model_kind: ModelKind,
    /// Every model parameter, free and fixed. `L` is the realized
    /// (sample-quantized) dead time.
    pub params: BTreeMap<String, f64>,
    /// Best cost `J`; [`DIVERGED`] when no feasible stable point was found.
    #[serde(with = "nonfinite_as_null")]
    pub rmse: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub effective_step: f64,
}

impl FitResult {
    /// `model=<kind> rmse=<J> <param>=<value>...`
    pub fn summary_line(&self) -> String {
        let mut line = format!("model={} rmse={}", self.model_kind, self.rmse);
        for name in self.model_kind.all_params() {
            if let Some(v) = self.params.get(*name) {
                line.push_str(&format!(" {name}={v}"));
            }
        }
        line
    }

    pub fn model(&self) -> Result<OperatorModel, ModelError> {
        OperatorModel::from_params(self.model_kind, &self.params)
    }
}

mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Distance from a parameter set to the feasible domain (zero when feasible).
fn infeasibility(params: &BTreeMap<String, f64>) -> f64 {
    params
        .iter()
        .map(|(name, &v)| {
            if !v.is_finite() {
                return f64::MAX.sqrt();
            }
            match name.as_str() {
                // kp must be strictly positive
                "kp" | "zero" if v <= 0.0 => -v + f64::EPSILON,
                "L" | "tl" | "ti" | "tn" if v < 0.0 => -v,
                "alpha" if v.abs() > 2.0 => v.abs() - 2.0,
                _ => 0.0,
            }
        })
        .sum()
}

/// Everything needed to evaluate the cost of a candidate parameter vector.
struct Objective<'a> {
    kind: ModelKind,
    plant: PlantModel,
    mode: FitMode,
    memory: Memory,
    names: Vec<&'static str>,
    base: BTreeMap<String, f64>,
    session: &'a Session,
}

impl<'a> Objective<'a> {
    fn new(session: &'a Session, kind: ModelKind, plant: PlantModel, options: &FitOptions) -> Result<Self, IdentError> {
        for name in options.fixed.keys().chain(options.initial.keys()) {
            if !kind.all_params().contains(&name.as_str()) {
                return Err(IdentError::UnknownParameter { name: name.clone(), kind });
            }
        }
        match options.mode {
            FitMode::ClosedLoop => {}
            FitMode::OpenLoop => {
                if session.e.is_none() {
                    return Err(IdentError::MissingSignal("e"));
                }
                if session.c.is_none() {
                    return Err(IdentError::MissingSignal("c"));
                }
            }
        }
        let mut base = options.fixed.clone();
        if kind == ModelKind::Yp2 {
            base.entry("zero".to_string()).or_insert(1.0 / plant.tau);
        }
        let names: Vec<&'static str> = kind
            .free_params()
            .iter()
            .copied()
            .filter(|n| !base.contains_key(*n))
            .collect();
        Ok(Self {
            kind,
            plant,
            mode: options.mode,
            memory: options.memory,
            names,
            base,
            session,
        })
    }

    fn params(&self, x: &[f64]) -> BTreeMap<String, f64> {
        let mut p = self.base.clone();
        for (name, &v) in self.names.iter().zip(x) {
            p.insert(name.to_string(), v);
        }
        p
    }

    /// Cost of a full parameter map: RMSE, or a barrier value.
    fn cost_of(&self, params: &BTreeMap<String, f64>) -> f64 {
        let bad = infeasibility(params);
        if bad > 0.0 {
            return PENALTY + bad;
        }
        let Ok(model) = OperatorModel::from_params(self.kind, params) else {
            return PENALTY;
        };
        match self.run(&model) {
            Ok(cost) => cost,
            Err(Some(step)) => DIVERGED_COST * (2.0 - step as f64 / self.session.len().max(1) as f64),
            Err(None) => 2.0 * DIVERGED_COST,
        }
    }

    /// RMSE of a concrete model, `None` when the run diverges or overflows.
    fn model_cost(&self, model: &OperatorModel) -> Option<f64> {
        self.run(model).ok()
    }

    /// RMSE, or the sample at which the closed loop diverged if known.
    fn run(&self, model: &OperatorModel) -> Result<f64, Option<usize>> {
        let s = self.session;
        match self.mode {
            FitMode::ClosedLoop => {
                let mut cfg = LoopConfig::new(*model, self.plant, s.step(), s.len() as f64 * s.step());
                cfg.memory = self.memory;
                match simulate_output(&cfg, &s.i) {
                    Ok(m) => Ok(rmse(&m, s.m.values())),
                    Err(SimError::Unstable { step, .. }) => Err(Some(step)),
                    Err(_) => Err(None),
                }
            }
            FitMode::OpenLoop => {
                let (Some(e), Some(c)) = (&s.e, &s.c) else { return Err(None) };
                let out = operator_output(model, e, self.memory).map_err(|_| None)?;
                Ok(rmse(out.values(), c.values()))
            }
        }
    }

    fn finish(&self, x: &[f64], cost: f64, evaluations: usize, converged: bool) -> FitResult {
        let mut params = self.params(x);
        let ok = cost < PENALTY && infeasibility(&params) == 0.0;
        if let Some(l) = params.get_mut("L") {
            *l = effective_delay(*l, self.session.step());
        }
        FitResult {
            model_kind: self.kind,
            params,
            rmse: if ok { cost } else { DIVERGED },
            evaluations,
            converged: converged && ok,
            effective_step: self.session.step(),
        }
    }
}

/// Fits one model class to a session with the simplex search.
pub fn fit(session: &Session, kind: ModelKind, plant: &PlantModel, options: &FitOptions) -> Result<FitResult, IdentError> {
    let objective = Objective::new(session, kind, *plant, options)?;
    if objective.names.is_empty() {
        // everything fixed: a single evaluation
        let cost = objective.cost_of(&objective.base);
        return Ok(objective.finish(&[], cost, 1, true));
    }
    let start: Vec<f64> = objective
        .names
        .iter()
        .map(|n| options.initial.get(*n).copied().unwrap_or_else(|| default_initial(n)))
        .collect();
    let steps: Vec<f64> = objective
        .names
        .iter()
        .zip(&start)
        .map(|(n, &s)| initial_step(n, s))
        .collect();
    let outcome = minimize(|x| objective.cost_of(&objective.params(x)), &start, &steps, &options.simplex)?;
    Ok(objective.finish(&outcome.x, outcome.f, outcome.evaluations, outcome.converged))
}

/// Closed-loop RMSE of one concrete operator model on a session.
///
/// Returns [`DIVERGED`] if the loop is unstable.
pub fn closed_loop_cost(session: &Session, model: &OperatorModel, plant: &PlantModel, memory: Memory) -> Result<f64, IdentError> {
    model.validate()?;
    let options = FitOptions { memory, ..FitOptions::default() };
    let objective = Objective::new(session, model.kind(), *plant, &options)?;
    Ok(objective.model_cost(model).unwrap_or(DIVERGED))
}

/// RMSE over a Cartesian lattice of parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    /// Axis names and values; the last axis varies fastest in `rmse`.
    pub axes: Vec<(String, Vec<f64>)>,
    /// Row-major RMSE per lattice point, [`DIVERGED`] where the loop diverged.
    pub rmse: Vec<f64>,
    /// Values held constant across the scan.
    pub fixed: BTreeMap<String, f64>,
}

impl ScanGrid {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|(_, v)| v.len()).collect()
    }

    /// Multi-index of a flat cell index.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        for (d, &n) in shape.iter().enumerate().rev() {
            idx[d] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        self.shape().iter().zip(idx).fold(0, |acc, (&n, &i)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.rmse[self.flat_index(idx)]
    }

    /// Axis values at a cell.
    pub fn point(&self, flat: usize) -> Vec<(String, f64)> {
        self.unravel(flat)
            .into_iter()
            .zip(&self.axes)
            .map(|(i, (name, vals))| (name.clone(), vals[i]))
            .collect()
    }

    /// Lowest-RMSE cell; ties go to the lowest flat index. `None` if every
    /// cell diverged.
    pub fn argmin(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.rmse.iter().enumerate() {
            if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        best
    }
}

fn check_axis(name: &'static str, axis: &[f64]) -> Result<(), IdentError> {
    if axis.is_empty() || axis.iter().any(|v| !v.is_finite()) {
        Err(IdentError::BadAxis(name))
    } else {
        Ok(())
    }
}

/// Runs `f` over `items` on `jobs` threads (rayon's global pool when `None`),
/// preserving order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: Option<usize>, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        },
        None => items.par_iter().map(f).collect(),
    }
}

/// Closed-loop RMSE of the fractional model on the `alpha x L x kp` lattice.
pub fn scan_alpha_l_kp(
    session: &Session,
    plant: &PlantModel,
    alpha_axis: &[f64],
    l_axis: &[f64],
    kp_axis: &[f64],
    memory: Memory,
    jobs: Option<usize>,
) -> Result<ScanGrid, IdentError> {
    check_axis("alpha", alpha_axis)?;
    check_axis("L", l_axis)?;
    check_axis("kp", kp_axis)?;
    let mut grid = ScanGrid {
        axes: vec![
            ("alpha".to_string(), alpha_axis.to_vec()),
            ("L".to_string(), l_axis.to_vec()),
            ("kp".to_string(), kp_axis.to_vec()),
        ],
        rmse: Vec::new(),
        fixed: BTreeMap::from([
            ("plant_gain".to_string(), plant.gain),
            ("plant_tau".to_string(), plant.tau),
            ("step".to_string(), session.step()),
        ]),
    };
    let options = FitOptions { memory, ..FitOptions::default() };
    let objective = Objective::new(session, ModelKind::Yp3, *plant, &options)?;
    let cells: Vec<usize> = (0..alpha_axis.len() * l_axis.len() * kp_axis.len()).collect();
    grid.rmse = par_map(&cells, jobs, |&flat| {
        let idx = grid.unravel(flat);
        let model = FractionalModel {
            alpha: alpha_axis[idx[0]],
            delay: l_axis[idx[1]],
            kp: kp_axis[idx[2]],
        };
        if OperatorModel::from(model).validate().is_err() {
            return DIVERGED;
        }
        objective.model_cost(&model.into()).unwrap_or(DIVERGED)
    });
    Ok(grid)
}

/// Fits the remaining parameters at each fixed dead time in `l_axis`.
pub fn sweep_delay(
    session: &Session,
    plant: &PlantModel,
    kind: ModelKind,
    l_axis: &[f64],
    options: &FitOptions,
    jobs: Option<usize>,
) -> Result<Vec<FitResult>, IdentError> {
    check_axis("L", l_axis)?;
    // surface option errors once instead of per point
    Objective::new(session, kind, *plant, options)?;
    par_map(l_axis, jobs, |&l| fit(session, kind, plant, &options.clone().with_fixed("L", l)))
        .into_iter()
        .collect()
}

/// The lattice `start, start + step, ..` up to `end` inclusive (within half a step).
pub fn axis_range(start: f64, step: f64, end: f64) -> Vec<f64> {
    if step == 0.0 || !step.is_finite() || (end - start) * step < 0.0 {
        return if start == end { vec![start] } else { Vec::new() };
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|k| tidy(start + k as f64 * step, 1e-9 * step.abs())).collect()
}

/// Shortest decimal within `tol` of `v`, so `-0.95 + 11 * 0.05` becomes `-0.4`.
fn tidy(v: f64, tol: f64) -> f64 {
    (0..17)
        .filter_map(|digits| format!("{v:.digits$e}").parse::<f64>().ok())
        .find(|t| (t - v).abs() <= tol)
        .unwrap_or(v)
}
