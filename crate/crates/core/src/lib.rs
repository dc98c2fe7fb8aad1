//! Relational event models on large two-mode event streams.
//!
//! The pipeline reads a time-ordered list of `(user, article, time)` events,
//! replays it through a decayed network of past events, samples events and
//! non-event controls, and fits a conditional logit to the sampled strata.
//!
//! ```no_run
//! use remkit::{parse_events, replay, EventFormat, ReplayConfig, SampleConfig};
//! use remkit::estimator::{fit, FitOptions};
//!
//! let log = parse_events("events.csv", &EventFormat::default()).unwrap();
//! let sample = SampleConfig::new(1e-3, 5, 42).unwrap();
//! let tables = replay(&log.events, &[sample], &ReplayConfig::default()).unwrap();
//! let result = fit(&tables[0].design(), &FitOptions::default()).unwrap();
//! println!("{}", result.report(&remkit::STAT_NAMES));
//! ```

pub mod estimator;
pub mod experiments;
pub mod fmt;
pub mod generator;
pub mod ingest;
pub mod network;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod replay;
pub mod sampler;
pub mod stats;

pub use estimator::{fit, FitError, FitOptions, FitResult};
pub use ingest::{
    parse_events, read_events, write_events, ArticleId, Event, EventFormat, EventLog, IngestError,
    NodeUniverse, Timestamp, UserId,
};
pub use network::{DecayConfig, NetworkError, NetworkView, PastEventNetwork};
pub use replay::{replay, ObservationTable, ReplayConfig, ReplayError, RiskSet};
pub use sampler::{SampleConfig, SampleError};
pub use stats::{StatVector, NUM_STATS, STAT_NAMES};
