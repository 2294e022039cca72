//! Timed queries: iterative chord walks, fetches, and location publishes
//! driven over the simulated network, with per-step retransmission and a
//! querier-side deadline. Routing decisions come from `chord::answer`, the
//! same brain the instant driver uses.

use crate::chord::StepAnswer;
use crate::ident::{hash_to_id, Locator, NodeId, Uid};
use crate::location;
use crate::simnet::SimTime;

use super::{Action, Msg, Sim};

/// Attempts per target before falling back to the next alternate.
const ATTEMPTS_PER_TARGET: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryKind {
    Get,
    Put(Vec<u8>),
    /// Locate the base node for a UID and publish a locator record there.
    Publish(PublishIntent),
    /// Refresh an existing record directly at the known base node; falls back
    /// to a fresh publish when the base node stops acknowledging.
    RefreshUpdate(PublishIntent),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishIntent {
    pub mn: NodeId,
    pub uid: Uid,
    pub tls: Vec<Locator>,
    pub prev_bn: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryOutcome {
    Success { values: usize },
    NotFound,
    TimedOut,
}

/// One finished, measured query.
#[derive(Debug, Clone)]
pub struct QueryRecord {
    pub qid: u64,
    pub kind: &'static str,
    pub outcome: QueryOutcome,
    pub hops: u32,
    pub issued_at: SimTime,
    pub finished_at: SimTime,
    /// Locators returned by a resolve, primary first.
    pub tls: Vec<Locator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TaskPhase {
    Walk { current: NodeId },
    Fetch { owner: NodeId },
}

#[derive(Debug, Clone)]
pub(crate) struct QueryTask {
    pub kind: QueryKind,
    pub origin: NodeId,
    pub key: NodeId,
    pub phase: TaskPhase,
    pub hops: u32,
    pub issued_at: SimTime,
    pub measured: bool,
    pub rto_token: u32,
    pub attempts: u32,
    pub alternates: Vec<NodeId>,
}

pub fn start_get(sim: &mut Sim, origin: NodeId, key: NodeId, measured: bool) -> u64 {
    start_task(sim, origin, key, QueryKind::Get, measured)
}

pub fn start_put(sim: &mut Sim, origin: NodeId, key: NodeId, value: Vec<u8>, measured: bool) -> u64 {
    start_task(sim, origin, key, QueryKind::Put(value), measured)
}

pub fn start_publish(sim: &mut Sim, intent: PublishIntent) -> u64 {
    let origin = intent.mn;
    let key = hash_to_id(&intent.uid, sim.params.bits);
    start_task(sim, origin, key, QueryKind::Publish(intent), false)
}

/// Sends a refresh straight to the known base node.
pub fn start_refresh(sim: &mut Sim, bn: NodeId, intent: PublishIntent) -> u64 {
    let qid = sim.next_qid();
    let key = hash_to_id(&intent.uid, sim.params.bits);
    let origin = intent.mn;
    sim.tasks.insert(
        qid,
        QueryTask {
            kind: QueryKind::RefreshUpdate(intent),
            origin,
            key,
            phase: TaskPhase::Fetch { owner: bn },
            hops: 0,
            issued_at: sim.now(),
            measured: false,
            rto_token: 0,
            attempts: 0,
            alternates: Vec::new(),
        },
    );
    schedule_deadline(sim, qid);
    send_fetch(sim, qid);
    qid
}

fn start_task(sim: &mut Sim, origin: NodeId, key: NodeId, kind: QueryKind, measured: bool) -> u64 {
    let qid = sim.next_qid();
    // The origin's own tables are consulted for free.
    let (phase, alternates) = match sim.overlay.answer(origin, key) {
        StepAnswer::Owner(owner) => (TaskPhase::Fetch { owner }, Vec::new()),
        StepAnswer::Forward(mut candidates) => {
            let first = candidates.remove(0);
            (TaskPhase::Walk { current: first }, candidates)
        }
    };
    sim.tasks.insert(
        qid,
        QueryTask {
            kind,
            origin,
            key,
            phase,
            hops: 0,
            issued_at: sim.now(),
            measured,
            rto_token: 0,
            attempts: 0,
            alternates,
        },
    );
    schedule_deadline(sim, qid);
    match phase {
        TaskPhase::Walk { current } => send_step(sim, qid, current),
        TaskPhase::Fetch { .. } => send_fetch(sim, qid),
    }
    qid
}

fn schedule_deadline(sim: &mut Sim, qid: u64) {
    let deadline = sim.params.query_deadline_ms;
    sim.sched.schedule_in(deadline, Action::QueryDeadline { qid });
}

fn arm_rto(sim: &mut Sim, qid: u64) {
    let Some(task) = sim.tasks.get_mut(&qid) else {
        return;
    };
    task.rto_token += 1;
    let token = task.rto_token;
    let rto = sim.params.rto_ms;
    sim.sched.schedule_in(rto, Action::QueryRto { qid, token });
}

fn send_step(sim: &mut Sim, qid: u64, target: NodeId) {
    let Some(task) = sim.tasks.get(&qid) else {
        return;
    };
    let (origin, key) = (task.origin, task.key);
    arm_rto(sim, qid);
    sim.send_msg(origin, target, Msg::LookupStep { qid, key });
}

fn send_fetch(sim: &mut Sim, qid: u64) {
    let Some(task) = sim.tasks.get(&qid) else {
        return;
    };
    let TaskPhase::Fetch { owner } = task.phase else {
        return;
    };
    let origin = task.origin;
    let msg = match &task.kind {
        QueryKind::Get => Msg::GetReq { qid, key: task.key },
        QueryKind::Put(value) => Msg::PutReq {
            qid,
            key: task.key,
            value: value.clone(),
        },
        QueryKind::Publish(intent) => Msg::Publish {
            qid,
            uid: intent.uid.clone(),
            key: task.key,
            tls: intent.tls.clone(),
            owner_addr: intent.tls[0],
            prev_bn: intent.prev_bn,
        },
        QueryKind::RefreshUpdate(intent) => Msg::Update {
            qid,
            uid: intent.uid.clone(),
            key: task.key,
            tls: intent.tls.clone(),
            owner_addr: intent.tls[0],
        },
    };
    arm_rto(sim, qid);
    sim.send_msg(origin, owner, msg);
}

pub(crate) fn on_lookup_resp(sim: &mut Sim, qid: u64, answer: StepAnswer) {
    let hop_cap = sim.overlay.hop_cap();
    enum Next {
        Step(NodeId),
        Fetch,
        HopCap,
    }
    let next = {
        let Some(task) = sim.tasks.get_mut(&qid) else {
            return;
        };
        if !matches!(task.phase, TaskPhase::Walk { .. }) {
            return;
        }
        task.rto_token += 1; // invalidates the pending retransmit timer
        task.hops += 1;
        task.attempts = 0;
        if task.hops > hop_cap {
            Next::HopCap
        } else {
            match answer {
                StepAnswer::Owner(owner) => {
                    task.phase = TaskPhase::Fetch { owner };
                    Next::Fetch
                }
                StepAnswer::Forward(mut candidates) => {
                    let first = candidates.remove(0);
                    task.phase = TaskPhase::Walk { current: first };
                    task.alternates = candidates;
                    Next::Step(first)
                }
            }
        }
    };
    match next {
        Next::Step(target) => send_step(sim, qid, target),
        Next::Fetch => send_fetch(sim, qid),
        Next::HopCap => finish(sim, qid, QueryOutcome::TimedOut),
    }
}

pub(crate) fn on_get_resp(sim: &mut Sim, qid: u64, values: Vec<Vec<u8>>) {
    {
        let Some(task) = sim.tasks.get_mut(&qid) else {
            return;
        };
        if !matches!(task.phase, TaskPhase::Fetch { .. }) {
            return;
        }
        task.hops += 1;
    }
    let outcome = if values.is_empty() {
        QueryOutcome::NotFound
    } else {
        QueryOutcome::Success { values: values.len() }
    };
    finish(sim, qid, outcome);
}

pub(crate) fn on_put_ack(sim: &mut Sim, qid: u64) {
    match sim.tasks.get_mut(&qid) {
        Some(task) => task.hops += 1,
        None => return,
    }
    finish(sim, qid, QueryOutcome::Success { values: 1 });
}

/// Publish or refresh acknowledged: the mobile learns its base node.
pub(crate) fn on_publish_ack(sim: &mut Sim, qid: u64, bn: NodeId) {
    let mn = match sim.tasks.get(&qid).map(|t| &t.kind) {
        Some(QueryKind::Publish(intent)) | Some(QueryKind::RefreshUpdate(intent)) => intent.mn,
        _ => return,
    };
    location::note_base_node(sim, mn, bn);
    finish(sim, qid, QueryOutcome::Success { values: 1 });
}

pub(crate) fn on_rto(sim: &mut Sim, qid: u64, token: u32) {
    enum Retry {
        Step(NodeId),
        Fetch,
        GiveUp,
    }
    let retry = {
        let Some(task) = sim.tasks.get_mut(&qid) else {
            return;
        };
        if task.rto_token != token {
            return; // superseded by a response or a newer send
        }
        task.attempts += 1;
        if task.attempts < ATTEMPTS_PER_TARGET {
            match task.phase {
                TaskPhase::Walk { current } => Retry::Step(current),
                TaskPhase::Fetch { .. } => Retry::Fetch,
            }
        } else {
            task.attempts = 0;
            match task.phase {
                TaskPhase::Walk { .. } if !task.alternates.is_empty() => {
                    let next = task.alternates.remove(0);
                    task.phase = TaskPhase::Walk { current: next };
                    Retry::Step(next)
                }
                _ => Retry::GiveUp,
            }
        }
    };
    match retry {
        Retry::Step(target) => send_step(sim, qid, target),
        Retry::Fetch => send_fetch(sim, qid),
        Retry::GiveUp => {
            // A refresh whose base node stopped answering re-publishes from
            // scratch; everything else times out at the querier.
            let fallback = match sim.tasks.get(&qid).map(|t| &t.kind) {
                Some(QueryKind::RefreshUpdate(intent)) => Some(intent.clone()),
                _ => None,
            };
            finish(sim, qid, QueryOutcome::TimedOut);
            if let Some(mut intent) = fallback {
                intent.prev_bn = None;
                start_publish(sim, intent);
            }
        }
    }
}

pub(crate) fn on_deadline(sim: &mut Sim, qid: u64) {
    if sim.tasks.contains_key(&qid) {
        finish(sim, qid, QueryOutcome::TimedOut);
    }
}

fn finish(sim: &mut Sim, qid: u64, outcome: QueryOutcome) {
    let Some(task) = sim.tasks.remove(&qid) else {
        return;
    };
    if task.measured {
        let finished_at = sim.now();
        sim.outcomes.push(QueryRecord {
            qid,
            kind: kind_name(&task.kind),
            outcome,
            hops: task.hops,
            issued_at: task.issued_at,
            finished_at,
            tls: Vec::new(),
        });
    }
}

fn kind_name(kind: &QueryKind) -> &'static str {
    match kind {
        QueryKind::Get => "get",
        QueryKind::Put(_) => "put",
        QueryKind::Publish(_) => "publish",
        QueryKind::RefreshUpdate(_) => "refresh",
    }
}
