//! Compensatory manual-control loop and forcing-function generation.
//!
//! Per sample `k` the loop evaluates, in order:
//!
//! 1. `m_k`: plant position, which depends on operator outputs up to `k-1`;
//! 2. `e_k = i_k - m_k`: the displayed error;
//! 3. `c_k`: the operator's response to `e_0..e_k`;
//! 4. the plant state is advanced over `[t_k, t_{k+1})` with `c_k` held.
//!
//! The plant is strictly proper, so this ordering is causal and needs no
//! implicit solve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fractional::Memory;
use crate::models::{ModelError, OperatorModel, PlantModel, PlantState};
use crate::session::{Session, SessionMeta};
use crate::signal::{sample_count, SampledSignal, SignalError};

/// Default `|m|` bound past which a run is declared unstable.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unstable loop: |m| exceeded {bound} at step {step}")]
    Unstable { step: usize, bound: f64 },
    #[error("input step {input} does not match loop step {config}")]
    StepMismatch { input: f64, config: f64 },
    #[error("input has {have} samples but the run needs {need}")]
    InputTooShort { have: usize, need: usize },
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("invalid forcing spec: {0}")]
    Forcing(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub operator: OperatorModel,
    pub plant: PlantModel,
    pub step: f64,
    pub duration: f64,
    pub memory: Memory,
    pub divergence_bound: f64,
}

impl LoopConfig {
    pub fn new(operator: impl Into<OperatorModel>, plant: PlantModel, step: f64, duration: f64) -> Self {
        Self {
            operator: operator.into(),
            plant,
            step,
            duration,
            memory: Memory::Full,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }

    pub fn samples(&self) -> usize {
        sample_count(self.step, self.duration)
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::Config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.duration >= self.step && self.duration.is_finite()) {
            return Err(SimError::Config(format!(
                "duration {} must be at least one step ({})",
                self.duration, self.step
            )));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(SimError::Config("divergence bound must be positive".into()));
        }
        self.operator.validate()?;
        Ok(())
    }
}

/// Signals of one closed-loop run, before being wrapped into a [`Session`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrace {
    pub e: Vec<f64>,
    pub c: Vec<f64>,
    pub m: Vec<f64>,
}

fn run(config: &LoopConfig, input: &SampledSignal, record: bool) -> Result<LoopTrace, SimError> {
    config.validate()?;
    if input.step() != config.step {
        return Err(SimError::StepMismatch { input: input.step(), config: config.step });
    }
    let n = config.samples();
    if input.len() < n {
        return Err(SimError::InputTooShort { have: input.len(), need: n });
    }
    let h = config.step;
    let mut operator = config.operator.start(h, n, config.memory)?;
    let mut state = PlantState::default();
    let mut trace = LoopTrace {
        e: Vec::with_capacity(if record { n } else { 0 }),
        c: Vec::with_capacity(if record { n } else { 0 }),
        m: Vec::with_capacity(n),
    };
    for (k, &i) in input.values()[..n].iter().enumerate() {
        let m = state.position;
        if !(m.abs() <= config.divergence_bound) {
            return Err(SimError::Unstable { step: k, bound: config.divergence_bound });
        }
        let e = i - m;
        let c = operator.push(e);
        state = config.plant.step(state, c, h);
        trace.m.push(m);
        if record {
            trace.e.push(e);
            trace.c.push(c);
        }
    }
    Ok(trace)
}

/// Plant output only; the hot path of identification.
pub fn simulate_output(config: &LoopConfig, input: &SampledSignal) -> Result<Vec<f64>, SimError> {
    Ok(run(config, input, false)?.m)
}

/// Runs the loop over `config.duration` and returns the full session.
pub fn simulate(config: &LoopConfig, input: &SampledSignal) -> Result<Session, SimError> {
    let trace = run(config, input, true)?;
    let n = trace.m.len();
    let grid = |v: Vec<f64>| SampledSignal::with_start(config.step, input.t0(), v);
    Ok(Session {
        i: input.truncate(n)?,
        e: Some(grid(trace.e)?),
        c: Some(grid(trace.c)?),
        m: grid(trace.m)?,
        meta: SessionMeta::synthetic(config.plant),
    })
}

/// One sinusoid `amplitude * sin(frequency * t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineComponent {
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
    /// rad
    pub phase: f64,
}

/// Sum-of-sines forcing function.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSpec {
    pub components: Vec<SineComponent>,
    pub seed: u64,
}

/// Fundamental period of the default forcing function; every default
/// component completes a whole number of cycles in it.
pub const DEFAULT_FORCING_PERIOD: f64 = 120.0;

// Prime multiples of 2*pi/120 rad/s, roughly log-spaced over 0.1..2 rad/s.
// Distinct primes keep every pair of components non-harmonic.
const DEFAULT_HARMONICS: [u32; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 29, 37];

impl ForcingSpec {
    /// Ten components with amplitudes proportional to `1/omega`, scaled to
    /// unit RMS, and phases drawn uniformly from `[0, 2 pi)` with the seed.
    pub fn default_with_seed(seed: u64) -> Self {
        let base = 2.0 * std::f64::consts::PI / DEFAULT_FORCING_PERIOD;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut components: Vec<SineComponent> = DEFAULT_HARMONICS
            .iter()
            .map(|&p| {
                let frequency = p as f64 * base;
                SineComponent {
                    amplitude: 1.0 / frequency,
                    frequency,
                    phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                }
            })
            .collect();
        let rms = (components.iter().map(|c| c.amplitude * c.amplitude).sum::<f64>() / 2.0).sqrt();
        for c in &mut components {
            c.amplitude /= rms;
        }
        Self { components, seed }
    }

    pub fn single(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self {
            components: vec![SineComponent { amplitude, frequency, phase }],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (n, c) in self.components.iter().enumerate() {
            if !(c.frequency > 0.0 && c.frequency.is_finite()) {
                return Err(SimError::Forcing(format!("component {n}: frequency must be positive")));
            }
            if !c.amplitude.is_finite() || !c.phase.is_finite() {
                return Err(SimError::Forcing(format!("component {n}: non-finite amplitude or phase")));
            }
            if self.components[..n].iter().any(|o| o.frequency == c.frequency) {
                return Err(SimError::Forcing(format!("component {n}: duplicate frequency {}", c.frequency)));
            }
        }
        Ok(())
    }
}

/// Samples the forcing function at `t = 0, step, .., duration - step`.
pub fn generate_forcing(spec: &ForcingSpec, step: f64, duration: f64) -> Result<SampledSignal, SimError> {
    spec.validate()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(SimError::Config(format!("step must be positive, got {step}")));
    }
    if !(duration >= step && duration.is_finite()) {
        return Err(SimError::Config(format!("duration {duration} must be at least one step ({step})")));
    }
    let n = sample_count(step, duration);
    Ok(SampledSignal::from_fn(step, n, |t| {
        spec.components
            .iter()
            .map(|c| c.amplitude * (c.frequency * t + c.phase).sin())
            .sum()
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::FractionalModel;

    fn gain(kp: f64) -> FractionalModel {
        FractionalModel { kp, alpha: 0.0, delay: 0.0 }
    }

    #[test]
    fn zero_input_is_fixed_point() {
        let cfg = LoopConfig::new(
            FractionalModel { kp: 4.403, alpha: -0.4101, delay: 0.117 },
            PlantModel::paper_eq6(),
            0.01,
            5.0,
        );
        let input = SampledSignal::zeros(0.01, 500).unwrap();
        let s = simulate(&cfg, &input).unwrap();
        for sig in [s.e.as_ref().unwrap(), s.c.as_ref().unwrap(), &s.m] {
            assert!(sig.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unity_servo_tracks_step() {
        let cfg = LoopConfig::new(gain(2.0), PlantModel::paper_eq6(), 0.01, 30.0);
        let input = SampledSignal::new(0.01, vec![1.0; 3000]).unwrap();
        let s = simulate(&cfg, &input).unwrap();
        assert!((s.m.values().last().unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn loop_identity_is_exact() {
        let cfg = LoopConfig::new(
            FractionalModel { kp: 4.403, alpha: -0.4101, delay: 0.117 },
            PlantModel::paper_eq6(),
            0.01,
            20.0,
        );
        let input = generate_forcing(&ForcingSpec::default_with_seed(3), 0.01, 20.0).unwrap();
        let s = simulate(&cfg, &input).unwrap();
        let e = s.e.as_ref().unwrap().values();
        for k in 0..s.len() {
            assert_eq!(e[k], s.i.values()[k] - s.m.values()[k]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        // a large gain with a long delay destabilizes the loop
        let cfg = LoopConfig::new(
            FractionalModel { kp: 50.0, alpha: 0.0, delay: 0.5 },
            PlantModel::paper_eq6(),
            0.01,
            60.0,
        );
        let input = SampledSignal::new(0.01, vec![1.0; 6000]).unwrap();
        assert!(matches!(simulate(&cfg, &input), Err(SimError::Unstable { .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let input = SampledSignal::zeros(0.01, 100).unwrap();
        let cfg = LoopConfig::new(gain(1.0), PlantModel::paper_eq6(), 0.01, 0.0);
        assert!(matches!(simulate(&cfg, &input), Err(SimError::Config(_))));
        let cfg = LoopConfig::new(gain(1.0), PlantModel::paper_eq6(), 0.02, 1.0);
        assert!(matches!(simulate(&cfg, &input), Err(SimError::StepMismatch { .. })));
        let cfg = LoopConfig::new(gain(1.0), PlantModel::paper_eq6(), 0.01, 2.0);
        assert!(matches!(simulate(&cfg, &input), Err(SimError::InputTooShort { have: 100, need: 200 })));
    }

    #[test]
    fn forcing_examples() {
        let s = generate_forcing(&ForcingSpec::single(1.0, 1.0, 0.0), 0.1, 10.0).unwrap();
        for (k, &v) in s.values().iter().enumerate() {
            assert_eq!(v, (k as f64 * 0.1).sin());
        }
        let empty = ForcingSpec { components: vec![], seed: 0 };
        let z = generate_forcing(&empty, 0.1, 1.0).unwrap();
        assert_eq!(z.len(), 10);
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_forcing_shape() {
        let spec = ForcingSpec::default_with_seed(7);
        assert_eq!(spec.components.len(), 10);
        let f: Vec<f64> = spec.components.iter().map(|c| c.frequency).collect();
        assert!(f[0] >= 0.1 && f[9] <= 2.0);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        let s = generate_forcing(&spec, 0.01, 120.0).unwrap();
        let n = s.len() as f64;
        let mean = s.values().iter().sum::<f64>() / n;
        let rms = (s.values().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 0.02 * rms, "mean {mean} rms {rms}");
        assert!((rms - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forcing_is_seeded() {
        assert_eq!(ForcingSpec::default_with_seed(1), ForcingSpec::default_with_seed(1));
        assert_ne!(ForcingSpec::default_with_seed(1), ForcingSpec::default_with_seed(2));
    }

    #[test]
    fn forcing_rejects_duplicates() {
        let mut spec = ForcingSpec::single(1.0, 1.0, 0.0);
        spec.components.push(spec.components[0]);
        assert!(generate_forcing(&spec, 0.1, 1.0).is_err());
        assert!(generate_forcing(&ForcingSpec::single(1.0, -1.0, 0.0), 0.1, 1.0).is_err());
    }
}
