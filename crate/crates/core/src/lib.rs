//! Interacting generalized Friedman urns: validation, asymptotic analysis of
//! limits, rates and CLT covariances, exact simulation and statistical
//! verification of the predictions.
//!
//! ```
//! use urn_core::{asymptotics, model};
//!
//! let system = model::load_system(r#"{
//!     "K": 2,
//!     "W": [[1.0]],
//!     "urns": [{"model": "single_ball_multinomial", "H": [[0.75, 0.5], [0.25, 0.5]]}]
//! }"#).unwrap();
//! let report = asymptotics::analyze(&system).unwrap();
//! assert!((report.z_inf[0][0] - 2.0 / 3.0).abs() < 1e-12);
//! assert_eq!(report.subsystems[0].rate.label, "sqrt(n)");
//! ```

pub mod asymptotics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod partition;
pub mod rng;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
