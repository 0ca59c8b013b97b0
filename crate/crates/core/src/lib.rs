//! Class-aware bandwidth management for a video-on-demand proxy ring.
//!
//! A central server holds every video; proxies arranged in a ring cache a
//! subset and fetch misses from a ring neighbour or the central server. Each
//! fetch is admitted on one link at the class maximum rate, the class
//! minimum, or the minimum after taking excess bandwidth from lower-weight
//! streams of the same class.

pub mod agent;
pub mod cli;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod topology;

pub use config::{ConfigError, SimConfig};
pub use engine::{AdmitLevel, AllocId, BaOutcome, Link, LinkKind, ReclaimPlan, StreamRequest};
pub use metrics::MetricsBundle;
pub use model::{PopularityTier, UserClass, VideoId};
pub use sim::{baseline_no_psg, run};
pub use topology::{RouteSource, World};
