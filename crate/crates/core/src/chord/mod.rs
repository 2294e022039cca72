//! The Chord identifier circle: finger tables, successor lists,
//! join/leave/stabilize, and a multi-value key-value store.
//!
//! Structural maintenance (join, depart, stabilization rounds) mutates the
//! overlay directly; it consumes no simulated time, matching a testbed where
//! the ring is arranged by hand between measurements. Routed lookups are a
//! separate step machine (see [`lookup`]) so the same routing decisions can
//! be driven either instantly or over the simulated network.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::ident::{Locator, NodeId};

pub mod lookup;

pub use lookup::{LookupError, LookupReport, StepAnswer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChordError {
    #[error("join failed: bootstrap {0} unreachable")]
    JoinFailed(NodeId),
    #[error("node id {0} already present")]
    DuplicateId(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Lookup(#[from] LookupError),
}

/// One finger-table row: `start = n + 2^(k-1)` and the believed successor of
/// that start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FingerEntry {
    pub start: NodeId,
    pub node: NodeId,
}

/// Multi-value store: each key maps to a set of opaque values with insertion
/// timestamps. Insertion order never affects `get` results.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvStore {
    entries: BTreeMap<NodeId, BTreeMap<Vec<u8>, u64>>,
}

impl KvStore {
    pub fn put(&mut self, key: NodeId, value: Vec<u8>, now: u64) {
        self.entries.entry(key).or_default().entry(value).or_insert(now);
    }

    pub fn get(&self, key: NodeId) -> Vec<Vec<u8>> {
        self.entries
            .get(&key)
            .map(|set| set.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn remove_key(&mut self, key: NodeId) {
        self.entries.remove(&key);
    }

    pub fn keys(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn drain_into(&mut self, keys: &[NodeId], dst: &mut KvStore) {
        for k in keys {
            if let Some(set) = self.entries.remove(k) {
                let target = dst.entries.entry(*k).or_default();
                for (v, t) in set {
                    target.entry(v).or_insert(t);
                }
            }
        }
    }
}

/// A peer on the ring.
#[derive(Debug, Clone)]
pub struct RingNode {
    pub id: NodeId,
    pub addr: Locator,
    pub fingers: Vec<FingerEntry>,
    pub successors: Vec<NodeId>,
    pub predecessor: Option<NodeId>,
    pub store: KvStore,
    pub alive: bool,
    next_finger_fix: usize,
}

impl RingNode {
    fn new(id: NodeId, addr: Locator, bits: u8) -> Self {
        let fingers = (1..=bits as usize)
            .map(|k| FingerEntry {
                start: id.finger_start(k),
                node: id,
            })
            .collect();
        RingNode {
            id,
            addr,
            fingers,
            successors: vec![id],
            predecessor: None,
            store: KvStore::default(),
            alive: true,
            next_finger_fix: 0,
        }
    }

    pub fn successor(&self) -> NodeId {
        self.successors[0]
    }
}

/// True iff `x` lies in the circular interval from `a` to `b` with the given
/// endpoint closures. With `a == b` a half-open interval covers the full
/// circle; the open-open interval covers the full circle minus `a`.
pub fn in_interval(x: NodeId, a: NodeId, b: NodeId, incl_left: bool, incl_right: bool) -> bool {
    if x == a && incl_left {
        return true;
    }
    if x == b && incl_right {
        return true;
    }
    if a == b {
        return x != a;
    }
    let span = a.distance_to(b);
    let off = a.distance_to(x);
    off > 0 && off < span
}

/// The whole identifier circle, desk-scale: every ring node lives in one map
/// so structural operations and oracles can see global membership while
/// routing logic still consults only per-node tables.
#[derive(Debug, Clone)]
pub struct Overlay {
    bits: u8,
    succ_len: usize,
    nodes: BTreeMap<NodeId, RingNode>,
}

impl Overlay {
    pub fn new(bits: u8, succ_len: usize) -> Self {
        assert!(succ_len >= 1);
        Overlay {
            bits,
            succ_len,
            nodes: BTreeMap::new(),
        }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn succ_len(&self) -> usize {
        self.succ_len
    }

    pub fn hop_cap(&self) -> u32 {
        2 * self.bits as u32
    }

    pub fn node(&self, id: NodeId) -> Option<&RingNode> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut RingNode> {
        self.nodes.get_mut(&id)
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.nodes.get(&id).map_or(false, |n| n.alive)
    }

    pub fn live_ids(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.alive)
            .map(|n| n.id)
            .collect()
    }

    pub fn live_count(&self) -> usize {
        self.nodes.values().filter(|n| n.alive).count()
    }

    /// Seeds the first node of the ring: its own successor is itself.
    pub fn add_first(&mut self, id: NodeId, addr: Locator) -> Result<(), ChordError> {
        if self.nodes.contains_key(&id) {
            return Err(ChordError::DuplicateId(id));
        }
        self.nodes.insert(id, RingNode::new(id, addr, self.bits));
        Ok(())
    }

    /// Joins a new node via a bootstrap peer: the successor is located with a
    /// routed lookup, keys up to the new id are handed over, and
    /// stabilization repairs fingers over subsequent rounds.
    pub fn join(&mut self, id: NodeId, addr: Locator, bootstrap: NodeId) -> Result<(), ChordError> {
        if self.nodes.contains_key(&id) {
            return Err(ChordError::DuplicateId(id));
        }
        if !self.is_alive(bootstrap) {
            return Err(ChordError::JoinFailed(bootstrap));
        }
        let succ_id = self
            .find_successor(bootstrap, id)
            .map_err(|_| ChordError::JoinFailed(bootstrap))?
            .owner;

        let mut node = RingNode::new(id, addr, self.bits);
        let (succ_pred, succ_tail) = {
            let succ = &self.nodes[&succ_id];
            (succ.predecessor, succ.successors.clone())
        };
        node.successors = std::iter::once(succ_id)
            .chain(succ_tail.into_iter())
            .take(self.succ_len)
            .collect();
        node.predecessor = succ_pred.or(Some(succ_id));
        for f in &mut node.fingers {
            f.node = succ_id;
        }

        // Keys in (pred(succ), id] move from the successor to the new node.
        let moved: Vec<NodeId> = self.nodes[&succ_id]
            .store
            .keys()
            .filter(|k| !in_interval(*k, id, succ_id, false, true))
            .collect();
        let succ = self.nodes.get_mut(&succ_id).expect("successor exists");
        succ.store.drain_into(&moved, &mut node.store);
        succ.predecessor = Some(id);

        self.nodes.insert(id, node);
        Ok(())
    }

    /// Removes a node. A graceful departure hands its keys to the first live
    /// successor and patches both neighbors; an ungraceful failure just
    /// silences the node.
    pub fn depart(&mut self, id: NodeId, graceful: bool) -> Result<(), ChordError> {
        let node = self
            .nodes
            .get_mut(&id)
            .ok_or(ChordError::UnknownNode(id))?;
        node.alive = false;
        if !graceful {
            return Ok(());
        }
        let successors = node.successors.clone();
        let predecessor = node.predecessor;
        let mut store = std::mem::take(&mut node.store);

        let heir = successors.iter().copied().find(|s| self.is_alive(*s));
        if let Some(heir_id) = heir {
            let keys: Vec<NodeId> = store.keys().collect();
            let heir_node = self.nodes.get_mut(&heir_id).expect("heir exists");
            store.drain_into(&keys, &mut heir_node.store);
            if heir_node.predecessor == Some(id) {
                heir_node.predecessor = predecessor;
            }
        }
        if let Some(pred_id) = predecessor {
            if self.is_alive(pred_id) {
                let pred = self.nodes.get_mut(&pred_id).expect("pred exists");
                pred.successors.retain(|s| *s != id);
                if pred.successors.is_empty() {
                    pred.successors = vec![heir.unwrap_or(pred_id)];
                }
            }
        }
        Ok(())
    }

    /// One stabilization round at `id`: verify/repair the successor, notify
    /// it, refresh the successor list, and fix one finger (round-robin).
    /// Idempotent on a stable ring.
    pub fn stabilize_round(&mut self, id: NodeId) {
        if !self.is_alive(id) {
            return;
        }

        // Drop dead heads of the successor list; fall back to any live finger
        // when the whole list has died.
        let mut successors = self.nodes[&id].successors.clone();
        successors.retain(|s| *s != id && self.is_alive(*s));
        if successors.is_empty() {
            let fallback = self.nodes[&id]
                .fingers
                .iter()
                .map(|f| f.node)
                .find(|n| *n != id && self.is_alive(*n));
            successors = vec![fallback.unwrap_or(id)];
        }
        let mut succ = successors[0];

        // Adopt the successor's predecessor when it sits between us.
        if succ != id {
            if let Some(x) = self.nodes[&succ].predecessor {
                if self.is_alive(x) && in_interval(x, id, succ, false, false) {
                    succ = x;
                }
            }
        }

        // Notify: we may be the successor's predecessor.
        if succ != id {
            let adopt = match self.nodes[&succ].predecessor {
                Some(p) if p == id => false,
                Some(p) => !self.is_alive(p) || in_interval(id, p, succ, false, false),
                None => true,
            };
            if adopt {
                self.nodes.get_mut(&succ).unwrap().predecessor = Some(id);
            }
        }

        // Rebuild the successor list from the (possibly new) successor.
        let mut list = vec![succ];
        if succ != id {
            for s in self.nodes[&succ].successors.clone() {
                if list.len() >= self.succ_len {
                    break;
                }
                if s != id && !list.contains(&s) {
                    list.push(s);
                }
            }
        }
        let node = self.nodes.get_mut(&id).expect("node exists");
        node.successors = list;

        // Repair one finger per round.
        let idx = node.next_finger_fix % node.fingers.len();
        node.next_finger_fix = idx + 1;
        let start = node.fingers[idx].start;
        if let Ok(report) = self.find_successor(id, start) {
            self.nodes.get_mut(&id).unwrap().fingers[idx].node = report.owner;
        }
    }

    /// One stabilization round at every live node, in id order.
    pub fn stabilize_sweep(&mut self) {
        for id in self.live_ids() {
            self.stabilize_round(id);
        }
    }

    /// Sweeps until routing state reaches a fixed point (or the round budget
    /// runs out); returns the number of sweeps used.
    pub fn stabilize_to_convergence(&mut self, max_sweeps: usize) -> usize {
        for sweep in 1..=max_sweeps {
            let before = self.routing_snapshot();
            self.stabilize_sweep();
            if self.routing_snapshot() == before {
                return sweep;
            }
        }
        max_sweeps
    }

    fn routing_snapshot(&self) -> Vec<(NodeId, Vec<NodeId>, Option<NodeId>, Vec<NodeId>)> {
        self.nodes
            .values()
            .filter(|n| n.alive)
            .map(|n| {
                (
                    n.id,
                    n.successors.clone(),
                    n.predecessor,
                    n.fingers.iter().map(|f| f.node).collect(),
                )
            })
            .collect()
    }

    /// Linear-scan successor: the live node with the smallest clockwise
    /// distance from `key`. Independent of any routing table.
    pub fn oracle_successor(&self, key: NodeId) -> Option<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.alive)
            .min_by_key(|n| key.distance_to(n.id))
            .map(|n| n.id)
    }

    /// Highest finger of `id` strictly inside `(id, key)`; `id` itself when
    /// none qualifies.
    pub fn closest_preceding_finger(&self, id: NodeId, key: NodeId) -> NodeId {
        let node = &self.nodes[&id];
        for f in node.fingers.iter().rev() {
            if in_interval(f.node, id, key, false, false) {
                return f.node;
            }
        }
        id
    }

    /// Stores a value directly at `holder` (no routing).
    pub fn put_local(&mut self, holder: NodeId, key: NodeId, value: Vec<u8>, now: u64) {
        if let Some(n) = self.nodes.get_mut(&holder) {
            n.store.put(key, value, now);
        }
    }

    /// Routed put: walks to the key's successor from `origin` and appends the
    /// value to the key's value set. Duplicate values are idempotent.
    pub fn put(
        &mut self,
        origin: NodeId,
        key: NodeId,
        value: Vec<u8>,
        now: u64,
    ) -> Result<LookupReport, ChordError> {
        let report = self.find_successor(origin, key)?;
        self.put_local(report.owner, key, value, now);
        Ok(report)
    }

    /// Routed get: walks to the key's successor and returns its value set.
    pub fn get(&self, origin: NodeId, key: NodeId) -> Result<(Vec<Vec<u8>>, u32), ChordError> {
        let report = self.find_successor(origin, key)?;
        let values = self.nodes[&report.owner].store.get(key);
        Ok((values, report.hops))
    }

    /// After stabilization, perturbs the given fraction of finger entries to
    /// a wrong live node, modeling stale routing state.
    pub fn perturb_fingers<R: Rng>(&mut self, fraction: f64, rng: &mut R) {
        let live = self.live_ids();
        if live.len() < 2 {
            return;
        }
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            if !self.nodes[&id].alive {
                continue;
            }
            for i in 0..self.nodes[&id].fingers.len() {
                if rng.gen::<f64>() >= fraction {
                    continue;
                }
                let correct = self.nodes[&id].fingers[i].node;
                let mut pick = live[rng.gen_range(0..live.len())];
                let mut guard = 0;
                while (pick == correct || pick == id) && guard < 16 {
                    pick = live[rng.gen_range(0..live.len())];
                    guard += 1;
                }
                self.nodes.get_mut(&id).unwrap().fingers[i].node = pick;
            }
        }
    }
}

#[cfg(test)]
mod tests;
