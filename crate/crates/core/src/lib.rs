//! Fractional-order modeling of human operators in compensatory manual control.
//!
//! The crate is organized bottom-up:
//!
//! * [`fractional`]: Gamma function and Grünwald–Letnikov differintegration;
//! * [`models`]: the three operator models, the second-order plant and the
//!   dead-time element;
//! * [`closed_loop`]: the `i -> e -> c -> m` tracking loop and sum-of-sines
//!   forcing functions;
//! * [`identification`]: RMSE cost, Nelder–Mead fits, lattice scans and
//!   delay sweeps (built on [`simplex`]);
//! * [`data_io`]: session files and report serialization.
//!
//! ```
//! use fotrack::prelude::*;
//!
//! let plant = PlantModel::paper_eq6();
//! let operator = FractionalModel { kp: 4.403, alpha: -0.4101, delay: 0.117 };
//! let config = LoopConfig::new(operator, plant, 0.01, 10.0);
//! let input = generate_forcing(&ForcingSpec::default_with_seed(7), 0.01, 10.0).unwrap();
//! let session = simulate(&config, &input).unwrap();
//! assert_eq!(session.len(), 1000);
//! ```

pub mod closed_loop;
pub mod data_io;
pub mod fractional;
pub mod identification;
pub mod models;
pub mod session;
pub mod signal;
pub mod simplex;

pub mod prelude {
    pub use crate::closed_loop::{generate_forcing, simulate, ForcingSpec, LoopConfig, SimError};
    pub use crate::data_io::{read_session, write_session, ReadOptions};
    pub use crate::fractional::{gamma, gl_apply, gl_weights, Memory};
    pub use crate::identification::{fit, rmse_cost, FitMode, FitOptions, FitResult};
    pub use crate::models::{
        FractionalModel, GainLeadDelayModel, ModelKind, OperatorModel, PlantModel, QuasiLinearModel,
    };
    pub use crate::session::{Session, SessionMeta, Source};
    pub use crate::signal::SampledSignal;
}

// Compiles and runs the code blocks of the guide under `cargo test --doc`.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fractional.md")]
    mod fractional {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/closed_loop.md")]
    mod closed_loop {}
    #[doc = include_str!("../../../book/src/identification.md")]
    mod identification {}
    #[doc = include_str!("../../../book/src/data_formats.md")]
    mod data_formats {}
}
