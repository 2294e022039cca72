//! Decentralized mobility framework, desk scale: a Chord ring acts as the
//! location manager (UID -> temporary-locator records with successor-pointer
//! shortcuts and movement redirects) while an mSCTP-style multihomed
//! transport performs soft handovers by dynamic address reconfiguration.
//! Everything runs on a deterministic discrete-event kernel so handover
//! latency, lookup success, and churn resilience are reproducible
//! experiments rather than wall-clock measurements.

pub mod chord;
pub mod engine;
pub mod harness;
pub mod ident;
pub mod location;
pub mod msctp;
pub mod simnet;
