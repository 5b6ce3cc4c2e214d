//! Stochastic integration of operator-valued processes with respect to
//! cylindrical Levy processes with weak second moments, on spectrally
//! truncated Hilbert spaces.
//!
//! The modules build on each other bottom-up:
//!
//! * [`hilbert`]: coefficient vectors and Hilbert-Schmidt operators;
//! * [`cylindrical`]: the characteristics `(p~, Q, nu)` and their analytic
//!   functionals;
//! * [`levy`]: reproducible sampling of cylindrical increments;
//! * [`radonification`]: the map sending (random) Hilbert-Schmidt operators
//!   and a cylindrical increment to a genuine `V`-valued random variable;
//! * [`integrator`]: the stochastic integral, its path version and the
//!   isometry and continuity functionals;
//! * [`spde`]: mild solutions of `dX = (AX + F(X))dt + G(X)dL`;
//! * [`mc`] and [`report`]: deterministic Monte Carlo fan-out and check
//!   records.

pub mod cylindrical;
pub mod error;
pub mod hilbert;
pub mod integrator;
pub mod levy;
pub mod mc;
pub mod radonification;
pub mod report;
pub mod spde;

pub use cylindrical::{CylindricalCharacteristics, JumpComponent, JumpDist};
pub use error::{Error, Result};
pub use hilbert::{HSOperator, HVector, Space};
pub use levy::{IncrementSample, Lane, RngStream, TimeGrid};
pub use integrator::{PathSample, PredictableProcessSpec, SimpleProcess};
pub use mc::{MCEstimate, McConfig};
pub use radonification::{History, SimpleRandomOperator};
pub use report::{CheckRecord, ToleranceRule};
pub use spde::{EnsembleSolution, SPDEConfig, Scheme, SemigroupSpec};
