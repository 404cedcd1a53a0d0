//! Uniformly sampled real-valued time series.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("sample interval must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("signal has no samples")]
    Empty,
    #[error("non-finite value {value} at sample {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("start time must be finite, got {0}")]
    BadStart(f64),
}

/// A uniformly sampled signal `values[k] = f(t0 + k * step)`.
///
/// Construction checks that the step is positive, the record is non-empty and
/// every sample is finite; the fields are private so the invariants hold for
/// the lifetime of the value.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    step: f64,
    t0: f64,
    values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(step: f64, values: Vec<f64>) -> Result<Self, SignalError> {
        Self::with_start(step, 0.0, values)
    }

    pub fn with_start(step: f64, t0: f64, values: Vec<f64>) -> Result<Self, SignalError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(SignalError::BadStep(step));
        }
        if !t0.is_finite() {
            return Err(SignalError::BadStart(t0));
        }
        if values.is_empty() {
            return Err(SignalError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SignalError::NonFinite { index, value });
        }
        Ok(Self { step, t0, values })
    }

    /// Samples `f` at `t0 + k * step` for `k in 0..len`.
    pub fn from_fn(
        step: f64,
        len: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self, SignalError> {
        Self::new(step, (0..len).map(|k| f(k as f64 * step)).collect())
    }

    pub fn zeros(step: f64, len: usize) -> Result<Self, SignalError> {
        Self::new(step, vec![0.0; len])
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false for a constructed signal; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time stamp of sample `k`.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.time(k))
    }

    /// Duration covered by the record, `len * step`.
    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.step
    }

    /// Same grid, new values. The caller guarantees `values.len() == self.len()`.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Result<Self, SignalError> {
        debug_assert_eq!(values.len(), self.len());
        Self::with_start(self.step, self.t0, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, SignalError> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, factor: f64) -> Result<Self, SignalError> {
        self.map(|v| v * factor)
    }

    /// Truncates to the first `len` samples.
    pub fn truncate(&self, len: usize) -> Result<Self, SignalError> {
        Self::with_start(self.step, self.t0, self.values[..len.min(self.len())].to_vec())
    }
}

/// Number of samples needed to cover `duration` at `step`, i.e. `t = 0, h, .., duration - h`.
pub fn sample_count(step: f64, duration: f64) -> usize {
    (duration / step).round().max(0.0) as usize
}
