//! Deterministic coordination kernel and discrete-event network simulator.
//!
//! The crate is organized around five layers:
//!
//! - [`term`] / [`multiset`]: the resource language — ground terms,
//!   patterns, and the multiset pools agents hold.
//! - [`kernel`]: the rewrite engine — all-or-nothing rule firing, guard
//!   hooks, agent replication and termination.
//! - [`simnet`]: the simulated transport — broadcast over delayed,
//!   reordering links, simulated time, fail-stop suspension, partitions.
//! - [`toolkit`]: generic communication rule sets — RPC and multi-reply
//!   query connections, with and without server replication, plus
//!   timer-controlled timeout handling and the majority commit policy.
//! - [`banking`] / [`oracle`] / [`scenario`]: the remote-banking demo
//!   application — replicated ledgers behind the toolkit rule sets,
//!   write-all-read-any consistency, fault injection, a sequential
//!   replay oracle and the scenario runner.

pub mod banking;
pub mod kernel;
pub mod multiset;
pub mod oracle;
pub mod scenario;
pub mod simnet;
pub mod term;
pub mod time;
pub mod toolkit;

pub use kernel::{AgentId, AgentState, EngineError, Hooks, Rule, StepOutcome};
pub use simnet::{DelayPolicy, DropPolicy, FaultCmd, NetPolicy, RunStatus, World};
pub use term::{Binding, Symbol, Term};
pub use time::Time;
