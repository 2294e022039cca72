//! The location manager: UID→TL records published at base nodes, successor
//! pointers that shortcut queries toward the base node, and movement
//! redirects that keep a former base node useful until its soft state times
//! out.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::chord::in_interval;
use crate::engine::query::{self, PublishIntent};
use crate::engine::{Action, Msg, Sim};
use crate::ident::{hash_to_id, Locator, NodeId, Uid};
use crate::simnet::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LocationError {
    #[error("publish failed: overlay lookup did not complete")]
    PublishFailed,
    #[error("no record found for the queried UID")]
    NotFound,
    #[error("handover phases must occur in order")]
    StalePhase,
    #[error("node has no registered mobile state")]
    NotRegistered,
}

/// The UID→TL soft state stored at a base node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatorRecord {
    pub uid: Uid,
    pub key: NodeId,
    pub tls: Vec<Locator>,
    pub owner_addr: Locator,
    pub published_at: SimTime,
    pub expires_at: SimTime,
}

/// A shortcut installed at a base node's successors: queries for `key` jump
/// straight to `base_node` while the pointer is fresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuccessorPointer {
    pub key: NodeId,
    pub base_node: NodeId,
    pub expires_at: SimTime,
}

/// Soft state at a former base node: forward queries for `key` to the base
/// node that now holds the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RedirectEntry {
    pub key: NodeId,
    pub new_base: NodeId,
    pub expires_at: SimTime,
}

#[derive(Debug, Clone, Default)]
pub struct NodeTables {
    pub records: BTreeMap<NodeId, LocatorRecord>,
    pub pointers: BTreeMap<NodeId, SuccessorPointer>,
    pub redirects: BTreeMap<NodeId, RedirectEntry>,
}

/// Where a roaming node stands in the enter/switch/leave sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MobilePhase {
    Home,
    Overlap,
    Switched,
    Left,
}

/// Client-side state of a mobile node's registration.
#[derive(Debug, Clone)]
pub struct MobileState {
    pub uid: Uid,
    pub key: NodeId,
    pub tls: Vec<Locator>,
    pub bn: Option<NodeId>,
    pub prev_bn: Option<NodeId>,
    pub phase: MobilePhase,
    /// Set once the switch-primary publish is acknowledged by the new base.
    pub switch_completed_at: Option<SimTime>,
}

#[derive(Debug, Default)]
pub struct LocationDir {
    tables: BTreeMap<NodeId, NodeTables>,
    mobiles: BTreeMap<NodeId, MobileState>,
    pub script_network2: Option<u16>,
}

impl LocationDir {
    pub fn tables(&self, node: NodeId) -> Option<&NodeTables> {
        self.tables.get(&node)
    }

    pub fn tables_mut(&mut self, node: NodeId) -> &mut NodeTables {
        self.tables.entry(node).or_default()
    }

    pub fn mobile(&self, mn: NodeId) -> Option<&MobileState> {
        self.mobiles.get(&mn)
    }

    pub fn mobile_mut(&mut self, mn: NodeId) -> Option<&mut MobileState> {
        self.mobiles.get_mut(&mn)
    }

    pub fn register_mobile(&mut self, mn: NodeId, state: MobileState) {
        self.mobiles.insert(mn, state);
    }
}

/// Purges every record, pointer, and redirect whose expiry has passed;
/// returns the purge count.
pub fn expire(dir: &mut LocationDir, now: SimTime) -> usize {
    let mut purged = 0;
    for tables in dir.tables.values_mut() {
        let before =
            tables.records.len() + tables.pointers.len() + tables.redirects.len();
        tables.records.retain(|_, r| r.expires_at > now);
        tables.pointers.retain(|_, p| p.expires_at > now);
        tables.redirects.retain(|_, r| r.expires_at > now);
        purged += before
            - (tables.records.len() + tables.pointers.len() + tables.redirects.len());
    }
    purged
}

/// Registers `mn`'s UID and starts the initial publish toward its base node.
pub fn publish(sim: &mut Sim, mn: NodeId, uid: Uid) -> u64 {
    let key = hash_to_id(&uid, sim.params.bits);
    let tl = sim.overlay.node(mn).expect("mobile is a ring node").addr;
    sim.loc.register_mobile(
        mn,
        MobileState {
            uid: uid.clone(),
            key,
            tls: vec![tl],
            bn: None,
            prev_bn: None,
            phase: MobilePhase::Home,
            switch_completed_at: None,
        },
    );
    query::start_publish(
        sim,
        PublishIntent {
            mn,
            uid,
            tls: vec![tl],
            prev_bn: None,
        },
    )
}

/// Periodic refresh: update the known base node, or re-publish when it no
/// longer acknowledges.
pub fn refresh(sim: &mut Sim, mn: NodeId) {
    let Some(mobile) = sim.loc.mobile(mn) else {
        return;
    };
    let intent = PublishIntent {
        mn,
        uid: mobile.uid.clone(),
        tls: mobile.tls.clone(),
        prev_bn: None,
    };
    match mobile.bn {
        Some(bn) if sim.overlay.node(bn).is_some() => {
            query::start_refresh(sim, bn, intent);
        }
        _ => {
            query::start_publish(sim, intent);
        }
    }
}

pub(crate) fn note_base_node(sim: &mut Sim, mn: NodeId, bn: NodeId) {
    let now = sim.now();
    if let Some(mobile) = sim.loc.mobile_mut(mn) {
        mobile.bn = Some(bn);
        if mobile.phase == MobilePhase::Switched && mobile.switch_completed_at.is_none() {
            mobile.switch_completed_at = Some(now);
        }
    }
}

/// Phase 1: the mobile acquired a second locator inside the overlap region
/// and tells its current base node about both, old one still primary.
pub fn handover_enter_overlap(
    sim: &mut Sim,
    mn: NodeId,
    new_tl: Locator,
) -> Result<(), LocationError> {
    let (bn, intent) = {
        let mobile = sim.loc.mobile_mut(mn).ok_or(LocationError::NotRegistered)?;
        if mobile.phase != MobilePhase::Home {
            return Err(LocationError::StalePhase);
        }
        mobile.phase = MobilePhase::Overlap;
        mobile.tls = vec![mobile.tls[0], new_tl];
        (
            mobile.bn,
            PublishIntent {
                mn,
                uid: mobile.uid.clone(),
                tls: mobile.tls.clone(),
                prev_bn: None,
            },
        )
    };
    match bn {
        Some(bn) => {
            query::start_refresh(sim, bn, intent);
        }
        None => {
            query::start_publish(sim, intent);
        }
    }
    Ok(())
}

/// Phase 2: the mobile switches its primary attachment to network 2, locates
/// the base node as seen from there, publishes with the new locator first,
/// and has the new base redirect the old one.
pub fn handover_switch_primary(sim: &mut Sim, mn: NodeId) -> Result<(), LocationError> {
    let intent = {
        let mobile = sim.loc.mobile_mut(mn).ok_or(LocationError::NotRegistered)?;
        if mobile.phase != MobilePhase::Overlap {
            return Err(LocationError::StalePhase);
        }
        mobile.phase = MobilePhase::Switched;
        mobile.tls = vec![mobile.tls[1], mobile.tls[0]];
        mobile.prev_bn = mobile.bn;
        PublishIntent {
            mn,
            uid: mobile.uid.clone(),
            tls: mobile.tls.clone(),
            prev_bn: mobile.bn,
        }
    };
    // Interface 2 becomes the mobile's outgoing address on the overlay.
    let new_primary = intent.tls[0];
    if let Some(node) = sim.overlay.node_mut(mn) {
        node.addr = new_primary;
    }
    query::start_publish(sim, intent);
    Ok(())
}

/// Phase 3: the mobile left the overlap region; the old locator is dropped
/// and the old base node's stale state is left to expire on its own.
pub fn handover_leave_overlap(sim: &mut Sim, mn: NodeId) -> Result<Option<Locator>, LocationError> {
    let (bn, dropped, intent) = {
        let mobile = sim.loc.mobile_mut(mn).ok_or(LocationError::NotRegistered)?;
        if mobile.phase != MobilePhase::Switched {
            return Err(LocationError::StalePhase);
        }
        mobile.phase = MobilePhase::Left;
        let dropped = (mobile.tls.len() > 1).then(|| mobile.tls[1]);
        mobile.tls = vec![mobile.tls[0]];
        (
            mobile.bn,
            dropped,
            PublishIntent {
                mn,
                uid: mobile.uid.clone(),
                tls: mobile.tls.clone(),
                prev_bn: None,
            },
        )
    };
    match bn {
        Some(bn) => {
            query::start_refresh(sim, bn, intent);
        }
        None => {
            query::start_publish(sim, intent);
        }
    }
    Ok(dropped)
}

/// Starts a resolve at `cn`: the query is handed to the CN's successor and
/// forwarded hop by hop; the base node answers the CN's address directly.
pub fn start_resolve(sim: &mut Sim, cn: NodeId, key: NodeId, measured: bool) -> u64 {
    let qid = sim.next_qid();
    let first_hop = sim.overlay.node(cn).expect("cn is a ring node").successor();
    sim.resolves.insert(
        qid,
        ResolveTask {
            cn,
            key,
            issued_at: sim.now(),
            measured,
        },
    );
    let deadline = sim.params.query_deadline_ms;
    sim.sched.schedule_in(deadline, Action::QueryDeadline { qid });
    sim.send_msg(
        cn,
        first_hop,
        Msg::Query {
            qid,
            key,
            reply_to: cn,
            hops: 1,
        },
    );
    qid
}

#[derive(Debug, Clone)]
pub struct ResolveTask {
    pub cn: NodeId,
    pub key: NodeId,
    pub issued_at: SimTime,
    pub measured: bool,
}

/// Handles the location-service wire messages.
pub(crate) fn on_msg(sim: &mut Sim, t: SimTime, src: NodeId, dst: NodeId, msg: Msg) {
    match msg {
        Msg::Publish {
            qid,
            uid,
            key,
            tls,
            owner_addr,
            prev_bn,
        } => {
            store_record(sim, t, dst, uid, key, tls, owner_addr);
            install_pointers(sim, dst, key);
            if let Some(old_bn) = prev_bn {
                if old_bn != dst {
                    sim.send_msg(dst, old_bn, Msg::QueryRedirect { key, new_base: dst });
                }
            }
            sim.send_msg(dst, src, Msg::PublishAck { qid, key });
        }
        Msg::PublishAck { qid, .. } => query::on_publish_ack(sim, qid, src),
        Msg::Update {
            qid,
            uid,
            key,
            tls,
            owner_addr,
        } => {
            // An update for an unknown key is treated as a fresh publish.
            store_record(sim, t, dst, uid, key, tls, owner_addr);
            install_pointers(sim, dst, key);
            sim.send_msg(dst, src, Msg::UpdateAck { qid, key });
        }
        Msg::UpdateAck { qid, .. } => query::on_publish_ack(sim, qid, src),
        Msg::PointerInstall {
            key,
            base_node,
            expires_at,
        } => {
            sim.loc.tables_mut(dst).pointers.insert(
                key,
                SuccessorPointer {
                    key,
                    base_node,
                    expires_at,
                },
            );
        }
        Msg::QueryRedirect { key, new_base } => {
            let expires_at = sim
                .loc
                .tables(dst)
                .and_then(|t| t.records.get(&key))
                .map(|r| r.expires_at)
                .unwrap_or_else(|| t.plus(sim.params.redirect_ttl_ms));
            sim.loc.tables_mut(dst).redirects.insert(
                key,
                RedirectEntry {
                    key,
                    new_base,
                    expires_at,
                },
            );
        }
        Msg::Query {
            qid,
            key,
            reply_to,
            hops,
        } => on_query(sim, t, dst, qid, key, reply_to, hops),
        Msg::TlReply { qid, tls, hops, .. } => on_tl_reply(sim, qid, tls, hops),
        _ => {}
    }
}

fn store_record(
    sim: &mut Sim,
    now: SimTime,
    bn: NodeId,
    uid: Uid,
    key: NodeId,
    tls: Vec<Locator>,
    owner_addr: Locator,
) {
    let ttl = sim.params.record_ttl_ms;
    let tables = sim.loc.tables_mut(bn);
    let published_at = tables
        .records
        .get(&key)
        .map(|r| r.published_at)
        .unwrap_or(now);
    tables.records.insert(
        key,
        LocatorRecord {
            uid,
            key,
            tls,
            owner_addr,
            published_at,
            expires_at: now.plus(ttl),
        },
    );
    // A fresh record supersedes any redirect this node held for the key.
    tables.redirects.remove(&key);
}

/// The base node publishes (or re-publishes) pointers toward its successors.
fn install_pointers(sim: &mut Sim, bn: NodeId, key: NodeId) {
    let targets: Vec<NodeId> = sim
        .overlay
        .node(bn)
        .map(|n| {
            n.successors
                .iter()
                .copied()
                .filter(|s| *s != bn)
                .take(sim.params.pointer_fanout)
                .collect()
        })
        .unwrap_or_default();
    let expires_at = sim.now().plus(sim.params.pointer_ttl_ms);
    for target in targets {
        sim.send_msg(
            bn,
            target,
            Msg::PointerInstall {
                key,
                base_node: bn,
                expires_at,
            },
        );
    }
}

/// Per-hop handling of a walking query: redirect wins over a (stale) record,
/// the record answers, a fresh pointer jumps straight to the base node, and
/// otherwise the query follows the ring.
fn on_query(
    sim: &mut Sim,
    now: SimTime,
    node: NodeId,
    qid: u64,
    key: NodeId,
    reply_to: NodeId,
    hops: u32,
) {
    if hops > sim.overlay.hop_cap() {
        return; // the querier's deadline reports the loss
    }
    enum Route {
        Forward(NodeId),
        Reply(Vec<Locator>),
    }
    let route = {
        let tables = sim.loc.tables(node);
        let redirect = tables
            .and_then(|t| t.redirects.get(&key))
            .filter(|r| r.expires_at > now)
            .map(|r| r.new_base);
        let record = tables
            .and_then(|t| t.records.get(&key))
            .filter(|r| r.expires_at > now)
            .map(|r| r.tls.clone());
        let pointer = if sim.params.use_pointers {
            tables
                .and_then(|t| t.pointers.get(&key))
                .filter(|p| p.expires_at > now)
                .map(|p| p.base_node)
        } else {
            None
        };
        if let Some(new_base) = redirect {
            Route::Forward(new_base)
        } else if let Some(tls) = record {
            Route::Reply(tls)
        } else if let Some(base) = pointer {
            Route::Forward(base)
        } else {
            // Plain ring routing.
            let ring = sim.overlay.node(node).expect("live ring node");
            let succ = ring.successor();
            let responsible = match ring.predecessor {
                Some(p) => in_interval(key, p, node, false, true),
                None => succ == node,
            };
            if responsible {
                Route::Reply(Vec::new()) // responsible but no record anywhere
            } else if in_interval(key, node, succ, false, true) {
                Route::Forward(succ)
            } else {
                let c = sim.overlay.closest_preceding_finger(node, key);
                Route::Forward(if c == node { succ } else { c })
            }
        }
    };
    match route {
        Route::Forward(next) => sim.send_msg(
            node,
            next,
            Msg::Query {
                qid,
                key,
                reply_to,
                hops: hops + 1,
            },
        ),
        Route::Reply(tls) => sim.send_msg(node, reply_to, Msg::TlReply { qid, key, tls, hops }),
    }
}

fn on_tl_reply(sim: &mut Sim, qid: u64, tls: Vec<Locator>, hops: u32) {
    let Some(task) = sim.resolves.remove(&qid) else {
        return;
    };
    if task.measured {
        let outcome = if tls.is_empty() {
            crate::engine::QueryOutcome::NotFound
        } else {
            crate::engine::QueryOutcome::Success { values: tls.len() }
        };
        let finished_at = sim.now();
        sim.outcomes.push(crate::engine::QueryRecord {
            qid,
            kind: "resolve",
            outcome,
            hops,
            issued_at: task.issued_at,
            finished_at,
            tls,
        });
    }
}

/// Deadline shared with chord queries: a resolve that never heard back.
pub(crate) fn on_resolve_deadline(sim: &mut Sim, qid: u64) {
    let Some(task) = sim.resolves.remove(&qid) else {
        return;
    };
    if task.measured {
        let finished_at = sim.now();
        sim.outcomes.push(crate::engine::QueryRecord {
            qid,
            kind: "resolve",
            outcome: crate::engine::QueryOutcome::TimedOut,
            hops: 0,
            issued_at: task.issued_at,
            finished_at,
            tls: Vec::new(),
        });
    }
}
