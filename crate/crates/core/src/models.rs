//! Human-operator models, the second-order controlled element and the
//! operator dead-time element.
//!
//! Three operator models map the displayed error `e` to the operator output `c`:
//!
//! | kind  | transfer function                                   |
//! |-------|-----------------------------------------------------|
//! | `Yp1` | `kp (tl s + 1) e^{-Ls} / ((ti s + 1)(tn s + 1))`    |
//! | `Yp2` | `kp (s + zero) e^{-Ls}`                             |
//! | `Yp3` | `kp e^{-Ls} / s^alpha`                              |
//!
//! Every model is available both as a batch transform of a whole signal
//! ([`operator_output`]) and as a causal sample-by-sample filter
//! ([`OperatorState`]) for use inside the closed loop. The two paths produce
//! identical samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fractional::{gl_apply, GlError, GlKernel, Memory};
use crate::signal::{SampledSignal, SignalError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} is outside its domain ({domain})")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("unknown parameter `{name}` for model {kind}")]
    UnknownParameter { name: String, kind: ModelKind },
    #[error(transparent)]
    Gl(#[from] GlError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn check(name: &'static str, value: f64, ok: bool, domain: &'static str) -> Result<(), ModelError> {
    if value.is_finite() && ok {
        Ok(())
    } else {
        Err(ModelError::OutOfDomain { name, value, domain })
    }
}

/// Controlled element `gain / (s (tau s + 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub gain: f64,
    pub tau: f64,
}

impl PlantModel {
    pub fn new(gain: f64, tau: f64) -> Result<Self, ModelError> {
        check("gain", gain, gain > 0.0, "> 0")?;
        check("tau", tau, tau > 0.0, "> 0")?;
        Ok(Self { gain, tau })
    }

    /// `1 / (s (s/3 + 1))`, the classic second-order element of the
    /// compensatory tracking literature.
    pub fn paper_eq6() -> Self {
        Self {
            gain: 1.0,
            tau: 1.0 / 3.0,
        }
    }

    /// `60.2362 / (s (s + 39.37))`: a rotary servo in position mode,
    /// `K = 1.53 rad/s/V`, `tau = 0.0254 s`.
    pub fn paper_eq13() -> Self {
        Self {
            gain: 60.2362 / 39.37,
            tau: 1.0 / 39.37,
        }
    }

    /// Advances the exact zero-order-hold discretization of
    /// `x' = [0 1; 0 -1/tau] x + [0; gain/tau] u` by one step of length `h`.
    pub fn step(&self, state: PlantState, input: f64, h: f64) -> PlantState {
        // a = e^{-h/tau}; one_minus_a computed without cancellation
        let one_minus_a = -(-h / self.tau).exp_m1();
        let a = 1.0 - one_minus_a;
        let velocity = a * state.velocity + self.gain * one_minus_a * input;
        let position = state.position
            + self.tau * one_minus_a * state.velocity
            + self.gain * (h - self.tau * one_minus_a) * input;
        PlantState { position, velocity }
    }

    /// Steady-state output rate under a unit input.
    pub fn steady_state_velocity(&self) -> f64 {
        self.gain
    }
}

/// See [`PlantModel::step`].
pub fn plant_step(plant: &PlantModel, state: PlantState, input_u: f64, h: f64) -> PlantState {
    plant.step(state, input_u, h)
}

/// Position (the plant output `m`) and its rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub position: f64,
    pub velocity: f64,
}

/// Number of whole samples a dead time occupies at step `h` (nearest sample).
pub fn delay_samples(delay: f64, h: f64) -> usize {
    (delay / h).round().max(0.0) as usize
}

/// Dead time actually realized on a grid of step `h`.
pub fn effective_delay(delay: f64, h: f64) -> f64 {
    delay_samples(delay, h) as f64 * h
}

/// Shifts a signal right by `round(delay / h)` samples, zero-filling the head.
pub fn delay_line(signal: &SampledSignal, delay: f64) -> Result<SampledSignal, ModelError> {
    check("delay", delay, delay >= 0.0, ">= 0")?;
    let d = delay_samples(delay, signal.step());
    Ok(signal.with_values(shift(signal.values(), d))?)
}

fn shift(values: &[f64], d: usize) -> Vec<f64> {
    let n = values.len();
    let d = d.min(n);
    let mut out = vec![0.0; n];
    out[d..].copy_from_slice(&values[..n - d]);
    out
}

/// Gain, lead-lag equalization, neuromuscular lag and dead time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiLinearModel {
    pub kp: f64,
    pub tl: f64,
    pub ti: f64,
    pub tn: f64,
    pub delay: f64,
}

/// Gain, a single zero and dead time: `kp (s + zero) e^{-Ls}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainLeadDelayModel {
    pub kp: f64,
    pub zero: f64,
    pub delay: f64,
}

impl GainLeadDelayModel {
    /// Places the zero at the plant pole, `zero = 1 / tau`.
    pub fn for_plant(kp: f64, delay: f64, plant: &PlantModel) -> Self {
        Self {
            kp,
            zero: 1.0 / plant.tau,
            delay,
        }
    }
}

/// Fractional-order operator `kp e^{-Ls} / s^alpha`.
///
/// Negative `alpha` makes the operator a fractional differentiator of order
/// `-alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalModel {
    pub kp: f64,
    pub alpha: f64,
    pub delay: f64,
}

impl FractionalModel {
    /// Order handed to the Grünwald–Letnikov operator: `1/s^alpha = s^{-alpha}`.
    pub fn gl_order(&self) -> f64 {
        -self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "yp1")]
    Yp1,
    #[serde(rename = "yp2")]
    Yp2,
    #[serde(rename = "yp3")]
    Yp3,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Yp1, ModelKind::Yp2, ModelKind::Yp3];

    /// Parameters that identification searches over, in search order.
    pub fn free_params(self) -> &'static [&'static str] {
        match self {
            ModelKind::Yp1 => &["tl", "ti", "tn", "kp", "L"],
            ModelKind::Yp2 => &["kp", "L"],
            ModelKind::Yp3 => &["alpha", "kp", "L"],
        }
    }

    /// Every parameter the model carries.
    pub fn all_params(self) -> &'static [&'static str] {
        match self {
            ModelKind::Yp2 => &["kp", "zero", "L"],
            other => other.free_params(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Yp1 => "yp1",
            ModelKind::Yp2 => "yp2",
            ModelKind::Yp3 => "yp3",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "yp1" => Ok(ModelKind::Yp1),
            "yp2" => Ok(ModelKind::Yp2),
            "yp3" => Ok(ModelKind::Yp3),
            _ => Err(format!("unknown model kind `{s}` (expected yp1, yp2 or yp3)")),
        }
    }
}

/// One of the three operator models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorModel {
    QuasiLinear(QuasiLinearModel),
    GainLeadDelay(GainLeadDelayModel),
    Fractional(FractionalModel),
}

impl From<QuasiLinearModel> for OperatorModel {
    fn from(m: QuasiLinearModel) -> Self {
        OperatorModel::QuasiLinear(m)
    }
}

impl From<GainLeadDelayModel> for OperatorModel {
    fn from(m: GainLeadDelayModel) -> Self {
        OperatorModel::GainLeadDelay(m)
    }
}

impl From<FractionalModel> for OperatorModel {
    fn from(m: FractionalModel) -> Self {
        OperatorModel::Fractional(m)
    }
}

impl OperatorModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            OperatorModel::QuasiLinear(_) => ModelKind::Yp1,
            OperatorModel::GainLeadDelay(_) => ModelKind::Yp2,
            OperatorModel::Fractional(_) => ModelKind::Yp3,
        }
    }

    pub fn delay(&self) -> f64 {
        match self {
            OperatorModel::QuasiLinear(m) => m.delay,
            OperatorModel::GainLeadDelay(m) => m.delay,
            OperatorModel::Fractional(m) => m.delay,
        }
    }

    pub fn kp(&self) -> f64 {
        match self {
            OperatorModel::QuasiLinear(m) => m.kp,
            OperatorModel::GainLeadDelay(m) => m.kp,
            OperatorModel::Fractional(m) => m.kp,
        }
    }

    /// Same model with the gain replaced.
    pub fn with_kp(mut self, kp: f64) -> Self {
        match &mut self {
            OperatorModel::QuasiLinear(m) => m.kp = kp,
            OperatorModel::GainLeadDelay(m) => m.kp = kp,
            OperatorModel::Fractional(m) => m.kp = kp,
        }
        self
    }

    /// Checks every parameter against its domain.
    pub fn validate(&self) -> Result<(), ModelError> {
        check("kp", self.kp(), self.kp() > 0.0, "> 0")?;
        check("L", self.delay(), self.delay() >= 0.0, ">= 0")?;
        match self {
            OperatorModel::QuasiLinear(m) => {
                check("tl", m.tl, m.tl >= 0.0, ">= 0")?;
                check("ti", m.ti, m.ti >= 0.0, ">= 0")?;
                check("tn", m.tn, m.tn >= 0.0, ">= 0")
            }
            OperatorModel::GainLeadDelay(m) => check("zero", m.zero, m.zero > 0.0, "> 0"),
            OperatorModel::Fractional(m) => {
                check("alpha", m.alpha, (-2.0..=2.0).contains(&m.alpha), "[-2, 2]")
            }
        }
    }

    /// Named parameters (`kp`, `L`, plus the model-specific ones).
    pub fn params(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match *self {
            OperatorModel::QuasiLinear(m) => vec![
                ("kp", m.kp),
                ("tl", m.tl),
                ("ti", m.ti),
                ("tn", m.tn),
                ("L", m.delay),
            ],
            OperatorModel::GainLeadDelay(m) => vec![("kp", m.kp), ("zero", m.zero), ("L", m.delay)],
            OperatorModel::Fractional(m) => vec![("alpha", m.alpha), ("kp", m.kp), ("L", m.delay)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Builds a model from named parameters. Every name in
    /// [`ModelKind::all_params`] must be present; other names are rejected.
    pub fn from_params(kind: ModelKind, params: &BTreeMap<String, f64>) -> Result<Self, ModelError> {
        if let Some(name) = params.keys().find(|k| !kind.all_params().contains(&k.as_str())) {
            return Err(ModelError::UnknownParameter {
                name: name.clone(),
                kind,
            });
        }
        let get = |name: &str| {
            params
                .get(name)
                .copied()
                .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
        };
        Ok(match kind {
            ModelKind::Yp1 => QuasiLinearModel {
                kp: get("kp")?,
                tl: get("tl")?,
                ti: get("ti")?,
                tn: get("tn")?,
                delay: get("L")?,
            }
            .into(),
            ModelKind::Yp2 => GainLeadDelayModel {
                kp: get("kp")?,
                zero: get("zero")?,
                delay: get("L")?,
            }
            .into(),
            ModelKind::Yp3 => FractionalModel {
                alpha: get("alpha")?,
                kp: get("kp")?,
                delay: get("L")?,
            }
            .into(),
        })
    }

    /// A fresh causal filter for this model at sample interval `step`.
    ///
    /// `capacity` is the expected record length (used to size buffers and
    /// the full-memory kernel; longer records still work).
    pub fn start(&self, step: f64, capacity: usize, memory: Memory) -> Result<OperatorState, ModelError> {
        OperatorState::new(*self, step, capacity, memory)
    }
}

/// Section `(lead s + 1) / (tau s + 1)` discretized exactly for an input that
/// is linear between samples: `y_k = a y_{k-1} + c0 u_k + c1 u_{k-1}`.
///
/// Holding the input constant instead would make any `tau` much shorter than
/// the step indistinguishable from zero.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RampSection {
    a: f64,
    c0: f64,
    c1: f64,
}

impl RampSection {
    fn new(lead: f64, tau: f64, h: f64) -> Self {
        // tau = 0 gives a = 0, om = 1 and a pure lead
        let om = -(-h / tau).exp_m1();
        let a = 1.0 - om;
        let b0 = if tau == 0.0 { 1.0 } else { 1.0 - tau * om / h };
        let b1 = om - b0;
        let l = lead * om / h;
        Self { a, c0: b0 + l, c1: b1 - l }
    }

    fn step(&self, y: f64, u: f64, u_prev: f64) -> f64 {
        self.a * y + self.c0 * u + self.c1 * u_prev
    }
}

/// Applies an operator model to the error signal and returns the operator output.
pub fn operator_output(
    model: &OperatorModel,
    error_signal: &SampledSignal,
    memory: Memory,
) -> Result<SampledSignal, ModelError> {
    model.validate()?;
    let h = error_signal.step();
    let e = error_signal.values();
    let core: Vec<f64> = match model {
        OperatorModel::Fractional(m) => {
            gl_apply(error_signal, m.gl_order(), memory)?.into_values()
        }
        OperatorModel::GainLeadDelay(m) => backward_diff(e, h)
            .into_iter()
            .zip(e)
            .map(|(d, &x)| d + m.zero * x)
            .collect(),
        OperatorModel::QuasiLinear(m) => {
            let x = filter(e, RampSection::new(m.tl, m.ti, h));
            filter(&x, RampSection::new(0.0, m.tn, h))
        }
    };
    let delayed = shift(&core, delay_samples(model.delay(), h));
    let kp = model.kp();
    let out: Vec<f64> = delayed.into_iter().map(|v| kp * v).collect();
    if let Some(index) = out.iter().position(|v| !v.is_finite()) {
        return Err(GlError::IllConditioned {
            index,
            order: match model {
                OperatorModel::Fractional(m) => m.gl_order(),
                _ => 1.0,
            },
            step: h,
        }
        .into());
    }
    Ok(error_signal.with_values(out)?)
}

/// `(x_k - x_{k-1}) / h` with `x_{-1} = 0`.
fn backward_diff(x: &[f64], h: f64) -> Vec<f64> {
    let mut prev = 0.0;
    x.iter()
        .map(|&v| {
            let d = (v - prev) / h;
            prev = v;
            d
        })
        .collect()
}

/// Runs a [`RampSection`] from rest with `u_{-1} = 0`.
fn filter(u: &[f64], s: RampSection) -> Vec<f64> {
    let (mut y, mut prev) = (0.0, 0.0);
    u.iter()
        .map(|&v| {
            y = s.step(y, v, prev);
            prev = v;
            y
        })
        .collect()
}

/// Causal, sample-by-sample realization of an [`OperatorModel`].
#[derive(Debug, Clone)]
pub struct OperatorState {
    kp: f64,
    step: f64,
    delay: usize,
    core: CoreState,
    // undelayed, ungained output history
    produced: Vec<f64>,
}

#[derive(Debug, Clone)]
enum CoreState {
    Fractional { kernel: GlKernel, history: Vec<f64>, full: bool },
    GainLead { zero: f64, prev: f64 },
    QuasiLinear { lead_lag: RampSection, lag: RampSection, prev: f64, x: f64, z: f64 },
}

impl OperatorState {
    pub fn new(model: OperatorModel, step: f64, capacity: usize, memory: Memory) -> Result<Self, ModelError> {
        model.validate()?;
        check("step", step, step > 0.0, "> 0")?;
        let core = match model {
            OperatorModel::Fractional(m) => {
                let (len, full) = match memory {
                    Memory::Full => (capacity.max(1), true),
                    Memory::Window(0) => return Err(GlError::EmptyMemory.into()),
                    Memory::Window(n) => (n, false),
                };
                CoreState::Fractional {
                    kernel: GlKernel::new(m.gl_order(), step, len)?,
                    history: Vec::with_capacity(capacity),
                    full,
                }
            }
            OperatorModel::GainLeadDelay(m) => CoreState::GainLead { zero: m.zero, prev: 0.0 },
            OperatorModel::QuasiLinear(m) => CoreState::QuasiLinear {
                lead_lag: RampSection::new(m.tl, m.ti, step),
                lag: RampSection::new(0.0, m.tn, step),
                prev: 0.0,
                x: 0.0,
                z: 0.0,
            },
        };
        Ok(Self {
            kp: model.kp(),
            step,
            delay: delay_samples(model.delay(), step),
            core,
            produced: Vec::with_capacity(capacity),
        })
    }

    /// Consumes the next error sample and returns the next operator output.
    pub fn push(&mut self, e: f64) -> f64 {
        let h = self.step;
        let y = match &mut self.core {
            CoreState::Fractional { kernel, history, full } => {
                history.push(e);
                if *full && history.len() > kernel.memory_len() {
                    // record outgrew the preallocated kernel
                    let grown = (2 * history.len()).max(16);
                    *kernel = GlKernel::new(kernel.order(), kernel.step(), grown)
                        .expect("kernel parameters were validated at construction");
                }
                kernel.eval_latest(history)
            }
            CoreState::GainLead { zero, prev } => {
                let d = (e - *prev) / h;
                *prev = e;
                d + *zero * e
            }
            CoreState::QuasiLinear { lead_lag, lag, prev, x, z } => {
                let x_prev = *x;
                *x = lead_lag.step(*x, e, *prev);
                *z = lag.step(*z, *x, x_prev);
                *prev = e;
                *z
            }
        };
        self.produced.push(y);
        let k = self.produced.len() - 1;
        if k >= self.delay {
            self.kp * self.produced[k - self.delay]
        } else {
            0.0
        }
    }

    /// Samples consumed so far.
    pub fn len(&self) -> usize {
        self.produced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.produced.is_empty()
    }

    pub fn delay_samples(&self) -> usize {
        self.delay
    }
}
