//! Protocol engine and deterministic market simulator for multi-agent task
//! delegation.
//!
//! Agents decompose tasks so that every leaf is verifiable, auction leaves on
//! an RFQ market, bind winners into escrowed contracts, monitor execution
//! through signed event streams and attestation chains, verify completion,
//! keep an append-only reputation ledger and re-delegate adaptively when
//! things go wrong. The [`sim`] module ties everything into replayable
//! discrete-event scenarios with injectable adversaries.

pub mod bank;
pub mod canon;
pub mod contract;
pub mod coordination;
pub mod crypto;
pub mod decomposition;
pub mod identity;
pub mod market;
pub mod monitoring;
pub mod reputation;
pub mod sim;
pub mod task;
pub mod verification;

/// Simulation time.
pub type Tick = u64;
/// Currency in integer micro-units (1.00 unit = 1_000_000).
pub type Micros = u64;

pub use identity::{AgentId, CapabilityToken, Caveat, KeyRegistry, VerifiableCredential};
