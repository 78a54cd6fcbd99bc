//! Active islanding detection by pulse-compression probing.
//!
//! A plant injects a pseudo-random binary pulse train at its terminals, the measured
//! current is cross-correlated with a cyclic reference to recover the network's small-signal
//! impulse response, an ERA realization is taken from it and the nu-gap to a stored
//! intact-network realization decides whether the plant is islanded.

pub mod detector;
pub mod error;
pub mod harness;
pub mod netsim;
pub mod nugap;
pub mod pipeline;
pub mod probe;
pub mod signal;
pub mod sysid;

pub use detector::{BaselineLibrary, Decision, DetectionResult, TopologyState};
pub use error::{Error, Result};
pub use netsim::{BreakerStates, NetworkModel, PlantPort};
pub use nugap::{FrequencyGrid, GapValue};
pub use probe::MarkovSequence;
pub use signal::{PrbsSequence, ProbingConfig, SignalTrace};
pub use sysid::StateSpaceRealization;
