//! Recorded or simulated tracking runs.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::models::PlantModel;
use crate::signal::SampledSignal;

/// Default tolerance on `|e - (i - m)|`.
pub const DEFAULT_LOOP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    UiRecording,
    External,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Synthetic => "synthetic",
            Source::UiRecording => "ui_recording",
            Source::External => "external",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMeta {
    pub plant: Option<PlantModel>,
    pub subject_id: String,
    pub source: Source,
    pub units: String,
    pub created_at: DateTime<Utc>,
    /// Keys this crate does not interpret (e.g. `tick_rate`, `input_gain`,
    /// `dropped_ticks` from browser recordings). Preserved on round trip.
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl SessionMeta {
    /// Metadata for a simulated run. The timestamp is fixed at the Unix epoch
    /// so identical simulations serialize identically.
    pub fn synthetic(plant: PlantModel) -> Self {
        Self {
            plant: Some(plant),
            subject_id: "synthetic".to_string(),
            source: Source::Synthetic,
            units: String::new(),
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            extra: BTreeMap::new(),
        }
    }

    pub fn external() -> Self {
        Self {
            plant: None,
            subject_id: String::new(),
            source: Source::External,
            units: String::new(),
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            extra: BTreeMap::new(),
        }
    }
}

/// Input `i`, error `e`, operator output `c` and plant output `m` of one run.
///
/// `e` and `c` may be absent for partial external recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub i: SampledSignal,
    pub e: Option<SampledSignal>,
    pub c: Option<SampledSignal>,
    pub m: SampledSignal,
    pub meta: SessionMeta,
}

/// A broken [`Session`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LengthMismatch {
        signal: &'static str,
        expected: usize,
        found: usize,
    },
    StepMismatch {
        signal: &'static str,
        expected: f64,
        found: f64,
    },
    StartMismatch {
        signal: &'static str,
        expected: f64,
        found: f64,
    },
    /// `|e_k - (i_k - m_k)|` above tolerance at sample `index`.
    LoopIdentity {
        index: usize,
        deviation: f64,
        tolerance: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { signal, expected, found } => {
                write!(f, "signal `{signal}` has {found} samples, expected {expected}")
            }
            Violation::StepMismatch { signal, expected, found } => {
                write!(f, "signal `{signal}` has step {found}, expected {expected}")
            }
            Violation::StartMismatch { signal, expected, found } => {
                write!(f, "signal `{signal}` starts at {found}, expected {expected}")
            }
            Violation::LoopIdentity { index, deviation, tolerance } => write!(
                f,
                "loop identity e = i - m violated at sample {index}: deviation {deviation:e} > {tolerance:e}"
            ),
        }
    }
}

impl Session {
    pub fn step(&self) -> f64 {
        self.i.step()
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.i.t0()
    }

    /// Signals in column order `i, e, c, m`.
    pub fn signals(&self) -> [(&'static str, Option<&SampledSignal>); 4] {
        [
            ("i", Some(&self.i)),
            ("e", self.e.as_ref()),
            ("c", self.c.as_ref()),
            ("m", Some(&self.m)),
        ]
    }

    /// Every broken invariant, in column then sample order.
    pub fn violations(&self, loop_tolerance: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        let (len, step, t0) = (self.len(), self.step(), self.t0());
        for (name, sig) in self.signals().into_iter().skip(1) {
            let Some(sig) = sig else { continue };
            if sig.len() != len {
                out.push(Violation::LengthMismatch { signal: name, expected: len, found: sig.len() });
            }
            if sig.step() != step {
                out.push(Violation::StepMismatch { signal: name, expected: step, found: sig.step() });
            }
            if sig.t0() != t0 {
                out.push(Violation::StartMismatch { signal: name, expected: t0, found: sig.t0() });
            }
        }
        if let Some(e) = &self.e {
            let iter = self.i.values().iter().zip(self.m.values()).zip(e.values());
            for (index, ((&i, &m), &e)) in iter.enumerate() {
                let deviation = (e - (i - m)).abs();
                if deviation > loop_tolerance {
                    out.push(Violation::LoopIdentity { index, deviation, tolerance: loop_tolerance });
                }
            }
        }
        out
    }

    pub fn is_valid(&self, loop_tolerance: f64) -> bool {
        self.violations(loop_tolerance).is_empty()
    }
}
