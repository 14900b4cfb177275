//! Crowd-aware multi-agent path finding workbench.
//!
//! The crate bundles a deterministic grid-world simulator ([`world`]), the
//! crowd-aware reward engine ([`reward`]), expert planners used for
//! demonstrations ([`expert`]), a compact actor-critic network with
//! hand-written backpropagation ([`policy`]), a boosted curriculum
//! ([`curriculum`]), the benchmark harness ([`eval`]) and the training
//! orchestrator ([`train`]).

pub mod config;
pub mod curriculum;
pub mod eval;
pub mod expert;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod scenario;
pub mod selfcheck;
pub mod train;
pub mod world;
