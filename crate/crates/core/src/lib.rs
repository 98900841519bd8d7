//! Propagate-and-filter: a gossip-style recommender where phones swap
//! aggregated ratings with whoever happens to be nearby, then keep only what
//! came from similar peers.
//!
//! The crate is organised bottom-up:
//!
//! * [`prefs`] holds the per-peer data pools and the filter pipeline.
//! * [`wire`] is the exchange message format.
//! * [`radio`] models connection success, delay, sessions and battery drain.
//! * [`mobility`] moves peers around.
//! * [`sim`] ties them together in a deterministic tick loop.
//! * [`scenario`] describes runs as JSON and ships the built-in presets.

pub mod mobility;
pub mod prefs;
pub mod radio;
pub mod scenario;
pub mod sim;
pub mod wire;

pub use prefs::{ItemId, PeerId};
pub use scenario::{preset, validate, ScenarioConfig, ScenarioError};
pub use sim::{run, run_ticks, RunOutput, SimError, World};
