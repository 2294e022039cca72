//! Iterative lookup: the querier walks the ring one remote consultation at a
//! time, so hop counts and deadlines are measured where the paper measures
//! them — at the querying node.
//!
//! Each consulted node answers from its own tables only. Every forwarding
//! candidate lies strictly inside `(node, key)`, so the clockwise distance to
//! the key shrinks at every step and stale fingers cause detours rather than
//! loops; the hop cap converts any residual pathology into a countable
//! failure.

use thiserror::Error;

use super::{in_interval, Overlay};
use crate::ident::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LookupError {
    #[error("lookup timeout: hop cap {0} exceeded")]
    HopCapExceeded(u32),
    #[error("lookup timeout: no live route past {0}")]
    DeadEnd(NodeId),
    #[error("lookup origin {0} is not a live node")]
    DeadOrigin(NodeId),
}

/// What a consulted node replies for a key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepAnswer {
    /// The node claims `owner` is the key's successor.
    Owner(NodeId),
    /// Keep walking; candidates are ordered best-first and all lie strictly
    /// inside `(node, key)`.
    Forward(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupReport {
    pub owner: NodeId,
    /// Remote consultations performed (the origin's own tables are free).
    pub hops: u32,
    pub path: Vec<NodeId>,
}

/// How many forwarding alternates a consulted node offers. The first is the
/// closest preceding finger; the rest let a querier route around dead peers.
pub const FORWARD_ALTERNATES: usize = 3;

impl Overlay {
    /// Answers a routing step from `id`'s tables alone.
    pub fn answer(&self, id: NodeId, key: NodeId) -> StepAnswer {
        let node = &self.nodes[&id];
        let succ = node.successor();
        if let Some(p) = node.predecessor {
            if in_interval(key, p, id, false, true) {
                return StepAnswer::Owner(id);
            }
        }
        if in_interval(key, id, succ, false, true) {
            return StepAnswer::Owner(succ);
        }
        let mut candidates = Vec::with_capacity(FORWARD_ALTERNATES);
        for f in node.fingers.iter().rev() {
            if candidates.len() + 1 >= FORWARD_ALTERNATES {
                break;
            }
            if in_interval(f.node, id, key, false, false) && !candidates.contains(&f.node) {
                candidates.push(f.node);
            }
        }
        if in_interval(succ, id, key, false, false) && !candidates.contains(&succ) {
            candidates.push(succ);
        }
        if candidates.is_empty() {
            StepAnswer::Owner(succ)
        } else {
            StepAnswer::Forward(candidates)
        }
    }

    /// Instant iterative lookup with hop counting: the driver used by
    /// structural maintenance and by lossless experiments.
    pub fn find_successor(&self, origin: NodeId, key: NodeId) -> Result<LookupReport, LookupError> {
        if !self.is_alive(origin) {
            return Err(LookupError::DeadOrigin(origin));
        }
        let cap = self.hop_cap();
        let mut current = origin;
        let mut hops = 0u32;
        let mut path = Vec::new();
        loop {
            match self.answer(current, key) {
                StepAnswer::Owner(owner) => {
                    return Ok(LookupReport { owner, hops, path });
                }
                StepAnswer::Forward(candidates) => {
                    hops += 1;
                    if hops > cap {
                        return Err(LookupError::HopCapExceeded(cap));
                    }
                    match candidates.iter().copied().find(|c| self.is_alive(*c)) {
                        Some(next) => {
                            path.push(next);
                            current = next;
                        }
                        None => return Err(LookupError::DeadEnd(current)),
                    }
                }
            }
        }
    }
}
