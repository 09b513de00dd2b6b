//! A laboratory for concurrent snapshot objects.
//!
//! Five snapshot algorithms run over instrumented registers that record a
//! timestamped history of abstract and primitive events, together with the
//! reads-from and load-link edges between them. From a history the crate
//! derives visibility relations, checks them against axiom signatures for
//! registers, LL/SC registers, forwarding snapshots and general snapshots, and
//! builds a linearization constructively; a brute-force search serves as an
//! independent oracle.
//!
//! Module map:
//! - [`event`]: events, histories, returns-before, structural checks
//! - [`registers`]: atomic and LL/SC/VL registers with rf/ll capture
//! - [`algorithms`]: the algorithms as resumable step code
//! - [`visibility`]: happens-before, virtual scans, derived relations
//! - [`checker`]: axiom suites and the implication chain
//! - [`linearizer`]: constructive linearization, replay, brute-force oracle
//! - [`harness`]: schedule exploration, random sampling, stress, scenarios
//! - [`fixtures`]: corrupted histories for detection tests

pub mod algorithms;
pub mod checker;
pub mod event;
pub mod fixtures;
pub mod harness;
pub mod linearizer;
pub mod registers;
pub mod visibility;

pub use algorithms::{Algorithm, Op, OpScript};
pub use event::{Event, EventId, History, Kind, Meta, Tick, Val, Violation};
