//! Event-driven composition: one [`Sim`] owns the virtual clock, the links,
//! the ring, the location tables, and the transport associations. Every
//! mutation runs inside a scheduled event, so a (configuration, seed) pair
//! fully determines every trace and metric.

use std::collections::{BTreeSet, HashMap};
use std::net::Ipv4Addr;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::chord::Overlay;
use crate::ident::{hash_text_to_id, Locator, NodeId, Uid};
use crate::location::{self, LocationDir, LocationError, MobilePhase};
use crate::msctp::{self, Association, Chunk, LatencyModel, Side};
use crate::simnet::{rng_stream, LinkParams, LinkSet, MobilityScript, Scheduler, SimTime};

pub mod query;

pub use query::{QueryKind, QueryOutcome, QueryRecord};

/// Engine-level knobs; the harness fills these from a scenario config.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub seed: u64,
    pub bits: u8,
    pub succ_len: usize,
    pub pointer_fanout: usize,
    pub link: LinkParams,
    pub record_ttl_ms: u64,
    pub pointer_ttl_ms: u64,
    pub redirect_ttl_ms: u64,
    pub refresh_period_ms: u64,
    pub rto_ms: u64,
    pub query_deadline_ms: u64,
    pub use_pointers: bool,
    pub send_interval_ms: u64,
    pub chunk_bytes: u64,
    pub latency_model: LatencyModel,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            seed: 1,
            bits: 16,
            succ_len: 4,
            pointer_fanout: 3,
            link: LinkParams {
                one_way_latency_ms: 10,
                loss_prob: 0.0,
            },
            record_ttl_ms: 30_000,
            pointer_ttl_ms: 15_000,
            redirect_ttl_ms: 30_000,
            refresh_period_ms: 10_000,
            rto_ms: 500,
            query_deadline_ms: 5_000,
            use_pointers: true,
            send_interval_ms: 10,
            chunk_bytes: 1_000,
            latency_model: LatencyModel::default(),
        }
    }
}

/// Messages on the simulated wire between overlay nodes.
#[derive(Debug, Clone)]
pub enum Msg {
    Publish {
        qid: u64,
        uid: Uid,
        key: NodeId,
        tls: Vec<Locator>,
        owner_addr: Locator,
        prev_bn: Option<NodeId>,
    },
    PublishAck {
        qid: u64,
        key: NodeId,
    },
    Update {
        qid: u64,
        uid: Uid,
        key: NodeId,
        tls: Vec<Locator>,
        owner_addr: Locator,
    },
    UpdateAck {
        qid: u64,
        key: NodeId,
    },
    Query {
        qid: u64,
        key: NodeId,
        reply_to: NodeId,
        hops: u32,
    },
    QueryRedirect {
        key: NodeId,
        new_base: NodeId,
    },
    PointerInstall {
        key: NodeId,
        base_node: NodeId,
        expires_at: SimTime,
    },
    TlReply {
        qid: u64,
        key: NodeId,
        tls: Vec<Locator>,
        hops: u32,
    },
    LookupStep {
        qid: u64,
        key: NodeId,
    },
    LookupResp {
        qid: u64,
        answer: crate::chord::StepAnswer,
    },
    GetReq {
        qid: u64,
        key: NodeId,
    },
    GetResp {
        qid: u64,
        values: Vec<Vec<u8>>,
    },
    PutReq {
        qid: u64,
        key: NodeId,
        value: Vec<u8>,
    },
    PutAck {
        qid: u64,
    },
}

impl Msg {
    /// Wire name as it appears in traces.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Msg::Publish { .. } => "PUBLISH",
            Msg::PublishAck { .. } => "PUBLISH_ACK",
            Msg::Update { .. } => "UPDATE",
            Msg::UpdateAck { .. } => "UPDATE_ACK",
            Msg::Query { .. } => "QUERY",
            Msg::QueryRedirect { .. } => "QUERY_REDIRECT",
            Msg::PointerInstall { .. } => "POINTER_INSTALL",
            Msg::TlReply { .. } => "TL_REPLY",
            Msg::LookupStep { .. } => "LOOKUP_STEP",
            Msg::LookupResp { .. } => "LOOKUP_RESP",
            Msg::GetReq { .. } => "GET_REQ",
            Msg::GetResp { .. } => "GET_RESP",
            Msg::PutReq { .. } => "PUT_REQ",
            Msg::PutAck { .. } => "PUT_ACK",
        }
    }
}

/// One row of the wire trace (location and routing messages).
#[derive(Debug, Clone)]
pub struct WireEvent {
    pub t: SimTime,
    pub kind: &'static str,
    pub src: NodeId,
    pub dst: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    EnterOverlap,
    OverlapReady,
    SwitchPrimary,
    LeaveOverlap,
}

/// Everything the scheduler can fire.
pub enum Action {
    Deliver {
        src: NodeId,
        dst: NodeId,
        msg: Msg,
    },
    DeliverChunk {
        aid: usize,
        to: Side,
        src_tl: Locator,
        dst_tl: Locator,
        chunk: Chunk,
    },
    QueryRto {
        qid: u64,
        token: u32,
    },
    QueryDeadline {
        qid: u64,
    },
    StabilizeTick {
        node: NodeId,
        period_ms: u64,
    },
    ExpireSweep {
        period_ms: u64,
    },
    LocationRefresh {
        mn: NodeId,
    },
    AssocSlot {
        aid: usize,
        side: Side,
    },
    ChunkRto {
        aid: usize,
        side: Side,
        tsn: u64,
    },
    HandshakeRto {
        aid: usize,
        side: Side,
        token: u32,
    },
    SwitchDone {
        aid: usize,
        side: Side,
    },
    MobilityPhase {
        mn: NodeId,
        aid: Option<usize>,
        phase: PhaseKind,
    },
    ChurnRemove {
        count: usize,
        graceful: bool,
    },
    LaunchGet,
    LaunchPut {
        origin: NodeId,
        key: NodeId,
        value: Vec<u8>,
    },
    LaunchResolve {
        cn: NodeId,
        key: NodeId,
        repeat_ms: Option<u64>,
    },
}

/// The composed simulator.
pub struct Sim {
    pub params: SimParams,
    pub sched: Scheduler<Action>,
    pub links: LinkSet,
    pub overlay: Overlay,
    pub loc: LocationDir,
    pub assocs: Vec<Association>,
    pub outcomes: Vec<QueryRecord>,
    pub wire_trace: Vec<WireEvent>,
    pub chunk_trace: Vec<msctp::ChunkEvent>,
    pub delivery_series: Vec<(SimTime, u64)>,
    pub expired_purged: u64,
    pub protected: BTreeSet<NodeId>,
    pub launch_keys: Vec<NodeId>,
    pub(crate) tasks: HashMap<u64, query::QueryTask>,
    pub(crate) resolves: HashMap<u64, location::ResolveTask>,
    pub(crate) addr_map: HashMap<Locator, NodeId>,
    query_rng: ChaCha12Rng,
    churn_rng: ChaCha12Rng,
    addr_alloc: HashMap<u16, u32>,
    next_qid: u64,
    events_run: u64,
}

impl Sim {
    pub fn new(params: SimParams) -> Self {
        let links = LinkSet::new(params.seed, params.link);
        let overlay = Overlay::new(params.bits, params.succ_len);
        let query_rng = rng_stream(params.seed, "queries");
        let churn_rng = rng_stream(params.seed, "churn");
        Sim {
            links,
            overlay,
            loc: LocationDir::default(),
            assocs: Vec::new(),
            outcomes: Vec::new(),
            wire_trace: Vec::new(),
            chunk_trace: Vec::new(),
            delivery_series: Vec::new(),
            expired_purged: 0,
            protected: BTreeSet::new(),
            launch_keys: Vec::new(),
            tasks: HashMap::new(),
            resolves: HashMap::new(),
            addr_map: HashMap::new(),
            query_rng,
            churn_rng,
            addr_alloc: HashMap::new(),
            next_qid: 0,
            events_run: 0,
            sched: Scheduler::new(),
            params,
        }
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn next_qid(&mut self) -> u64 {
        self.next_qid += 1;
        self.next_qid
    }

    /// Issues a fresh locator from the given access network.
    pub fn alloc_locator(&mut self, network_id: u16) -> Locator {
        let host = self.addr_alloc.entry(network_id).or_insert(0);
        *host += 1;
        let h = *host;
        Locator::new(
            Ipv4Addr::new(10, network_id as u8, (h / 250) as u8, (h % 250) as u8 + 1),
            network_id,
        )
    }

    /// Builds a stabilized ring of `n` nodes homed in `network_id`; node ids
    /// come from hashing the issued addresses (salted on collision).
    pub fn build_ring(&mut self, n: usize, network_id: u16) -> Vec<NodeId> {
        let mut ids = Vec::with_capacity(n);
        for i in 0..n {
            let tl = self.alloc_locator(network_id);
            let mut salt = 0u32;
            let id = loop {
                let text = if salt == 0 {
                    format!("{tl}")
                } else {
                    format!("{tl}#{salt}")
                };
                let id = hash_text_to_id(&text, self.params.bits);
                if self.overlay.node(id).is_none() {
                    break id;
                }
                salt += 1;
            };
            if i == 0 {
                self.overlay.add_first(id, tl).expect("fresh ring");
            } else {
                self.overlay.join(id, tl, ids[0]).expect("bootstrap is alive");
            }
            self.addr_map.insert(tl, id);
            ids.push(id);
        }
        self.overlay
            .stabilize_to_convergence(n * self.params.bits as usize + 8);
        ids
    }

    /// Adds one node to an existing ring (scripted joins).
    pub fn join_node(&mut self, id: NodeId, network_id: u16, bootstrap: NodeId) -> Locator {
        let tl = self.alloc_locator(network_id);
        self.overlay.join(id, tl, bootstrap).expect("join scripted node");
        self.addr_map.insert(tl, id);
        tl
    }

    /// Executes all events due at or before `limit`; returns the event count.
    pub fn run_until(&mut self, limit: SimTime) -> u64 {
        let start = self.events_run;
        while let Some((t, action)) = self.sched.pop_due(limit) {
            self.events_run += 1;
            self.dispatch(t, action);
        }
        self.sched.advance_to(limit);
        self.events_run - start
    }

    /// Sends an overlay message from `src` to `dst` over the link between
    /// their current addresses.
    pub fn send_msg(&mut self, src: NodeId, dst: NodeId, msg: Msg) {
        let (Some(s), Some(d)) = (self.overlay.node(src), self.overlay.node(dst)) else {
            return;
        };
        let (sa, da) = (s.addr, d.addr);
        self.wire_trace.push(WireEvent {
            t: self.now(),
            kind: msg.kind_name(),
            src,
            dst,
        });
        if let Some(latency) = self.links.transmit(sa, da) {
            self.sched
                .schedule_in(latency, Action::Deliver { src, dst, msg });
        }
    }

    fn dispatch(&mut self, t: SimTime, action: Action) {
        match action {
            Action::Deliver { src, dst, msg } => {
                if !self.overlay.is_alive(dst) {
                    return;
                }
                self.on_msg(t, src, dst, msg);
            }
            Action::DeliverChunk {
                aid,
                to,
                src_tl,
                dst_tl,
                chunk,
            } => {
                msctp::on_chunk(self, aid, to, src_tl, dst_tl, chunk);
            }
            Action::QueryRto { qid, token } => query::on_rto(self, qid, token),
            Action::QueryDeadline { qid } => {
                if self.tasks.contains_key(&qid) {
                    query::on_deadline(self, qid);
                } else {
                    location::on_resolve_deadline(self, qid);
                }
            }
            Action::StabilizeTick { node, period_ms } => {
                if self.overlay.is_alive(node) {
                    self.overlay.stabilize_round(node);
                    self.sched
                        .schedule_in(period_ms, Action::StabilizeTick { node, period_ms });
                }
            }
            Action::ExpireSweep { period_ms } => {
                self.expired_purged += location::expire(&mut self.loc, t) as u64;
                self.sched
                    .schedule_in(period_ms, Action::ExpireSweep { period_ms });
            }
            Action::LocationRefresh { mn } => {
                if self.overlay.is_alive(mn) {
                    location::refresh(self, mn);
                    let period = self.params.refresh_period_ms;
                    self.sched
                        .schedule_in(period, Action::LocationRefresh { mn });
                }
            }
            Action::AssocSlot { aid, side } => msctp::on_slot(self, aid, side),
            Action::ChunkRto { aid, side, tsn } => msctp::on_chunk_rto(self, aid, side, tsn),
            Action::HandshakeRto { aid, side, token } => {
                msctp::on_handshake_rto(self, aid, side, token)
            }
            Action::SwitchDone { aid, side } => msctp::on_switch_done(self, aid, side),
            Action::MobilityPhase { mn, aid, phase } => self.on_mobility_phase(mn, aid, phase),
            Action::ChurnRemove { count, graceful } => self.churn_remove(count, graceful),
            Action::LaunchGet => {
                if let Some((origin, key)) = self.pick_query() {
                    query::start_get(self, origin, key, true);
                }
            }
            Action::LaunchPut { origin, key, value } => {
                if self.overlay.is_alive(origin) {
                    query::start_put(self, origin, key, value, false);
                }
            }
            Action::LaunchResolve { cn, key, repeat_ms } => {
                if self.overlay.is_alive(cn) {
                    location::start_resolve(self, cn, key, true);
                }
                if let Some(period) = repeat_ms {
                    self.sched
                        .schedule_in(period, Action::LaunchResolve { cn, key, repeat_ms });
                }
            }
        }
    }

    fn on_msg(&mut self, t: SimTime, src: NodeId, dst: NodeId, msg: Msg) {
        match msg {
            Msg::LookupStep { qid, key } => {
                let answer = self.overlay.answer(dst, key);
                self.send_msg(dst, src, Msg::LookupResp { qid, answer });
            }
            Msg::LookupResp { qid, answer } => query::on_lookup_resp(self, qid, answer),
            Msg::GetReq { qid, key } => {
                let values = self
                    .overlay
                    .node(dst)
                    .map(|n| n.store.get(key))
                    .unwrap_or_default();
                self.send_msg(dst, src, Msg::GetResp { qid, values });
            }
            Msg::GetResp { qid, values } => query::on_get_resp(self, qid, values),
            Msg::PutReq { qid, key, value } => {
                let now = t.millis();
                if let Some(n) = self.overlay.node_mut(dst) {
                    n.store.put(key, value, now);
                }
                self.send_msg(dst, src, Msg::PutAck { qid });
            }
            Msg::PutAck { qid } => query::on_put_ack(self, qid),
            other => location::on_msg(self, t, src, dst, other),
        }
    }

    /// Picks a (live origin, known key) pair for a launched query.
    fn pick_query(&mut self) -> Option<(NodeId, NodeId)> {
        if self.launch_keys.is_empty() {
            return None;
        }
        let live = self.overlay.live_ids();
        if live.is_empty() {
            return None;
        }
        let origin = live[self.query_rng.gen_range(0..live.len())];
        let key = self.launch_keys[self.query_rng.gen_range(0..self.launch_keys.len())];
        Some((origin, key))
    }

    /// Removes `count` random live, unprotected nodes.
    fn churn_remove(&mut self, count: usize, graceful: bool) {
        let mut pool: Vec<NodeId> = self
            .overlay
            .live_ids()
            .into_iter()
            .filter(|id| !self.protected.contains(id))
            .collect();
        for _ in 0..count {
            if pool.is_empty() {
                break;
            }
            let idx = self.churn_rng.gen_range(0..pool.len());
            let victim = pool.swap_remove(idx);
            let _ = self.overlay.depart(victim, graceful);
        }
    }

    /// Schedules recurring stabilization rounds for every current ring node,
    /// staggered so one node stabilizes at a time.
    pub fn schedule_stabilization(&mut self, period_ms: u64) {
        let ids = self.overlay.live_ids();
        let n = ids.len().max(1) as u64;
        for (i, id) in ids.into_iter().enumerate() {
            let offset = (i as u64 * period_ms) / n;
            self.sched.schedule_at(
                self.now().plus(offset),
                Action::StabilizeTick {
                    node: id,
                    period_ms,
                },
            );
        }
    }

    pub fn schedule_expiry_sweep(&mut self, period_ms: u64) {
        self.sched
            .schedule_in(period_ms, Action::ExpireSweep { period_ms });
    }

    /// Validates and schedules the two-network mobility timeline for `mn`.
    pub fn apply_mobility(
        &mut self,
        script: &MobilityScript,
        mn: NodeId,
        aid: Option<usize>,
    ) -> Result<(), crate::simnet::ScriptError> {
        script.validate()?;
        self.sched.schedule_at(
            script.t_enter_overlap,
            Action::MobilityPhase {
                mn,
                aid,
                phase: PhaseKind::EnterOverlap,
            },
        );
        self.sched.schedule_at(
            script.t_switch,
            Action::MobilityPhase {
                mn,
                aid,
                phase: PhaseKind::SwitchPrimary,
            },
        );
        self.sched.schedule_at(
            script.t_leave_overlap,
            Action::MobilityPhase {
                mn,
                aid,
                phase: PhaseKind::LeaveOverlap,
            },
        );
        self.loc.script_network2 = Some(script.network2_id);
        Ok(())
    }

    fn on_mobility_phase(&mut self, mn: NodeId, aid: Option<usize>, phase: PhaseKind) {
        match phase {
            PhaseKind::EnterOverlap => {
                // Movement detection and address configuration run on the
                // secondary interface; data keeps flowing meanwhile.
                let setup = self.params.latency_model.t_md_ms + self.params.latency_model.t_ac_ms;
                self.sched.schedule_in(
                    setup,
                    Action::MobilityPhase {
                        mn,
                        aid,
                        phase: PhaseKind::OverlapReady,
                    },
                );
            }
            PhaseKind::OverlapReady => {
                let network2 = self.loc.script_network2.expect("mobility script applied");
                let new_tl = self.alloc_locator(network2);
                self.addr_map.insert(new_tl, mn);
                location::handover_enter_overlap(self, mn, new_tl)
                    .expect("scripted phase order");
            }
            PhaseKind::SwitchPrimary => {
                location::handover_switch_primary(self, mn).expect("scripted phase order");
                if let Some(aid) = aid {
                    let new_tl = self.loc.mobile(mn).expect("mobile registered").tls[0];
                    let model = self.params.latency_model.clone();
                    msctp::execute_handover(self, aid, Side::B, new_tl, &model);
                }
            }
            PhaseKind::LeaveOverlap => {
                let dropped = location::handover_leave_overlap(self, mn)
                    .expect("scripted phase order");
                if let Some(tl) = dropped {
                    self.addr_map.remove(&tl);
                }
            }
        }
    }

    /// Direct phase driver for tests; returns stale-phase errors instead of
    /// panicking.
    pub fn handover_update(
        &mut self,
        mn: NodeId,
        phase: PhaseKind,
        new_tl: Option<Locator>,
    ) -> Result<(), LocationError> {
        match phase {
            PhaseKind::EnterOverlap | PhaseKind::OverlapReady => {
                let tl = new_tl.ok_or(LocationError::StalePhase)?;
                self.addr_map.insert(tl, mn);
                location::handover_enter_overlap(self, mn, tl)
            }
            PhaseKind::SwitchPrimary => location::handover_switch_primary(self, mn),
            PhaseKind::LeaveOverlap => {
                location::handover_leave_overlap(self, mn).map(|dropped| {
                    if let Some(tl) = dropped {
                        self.addr_map.remove(&tl);
                    }
                })
            }
        }
    }

    /// The mobile-phase state, for assertions.
    pub fn mobile_phase(&self, mn: NodeId) -> Option<MobilePhase> {
        self.loc.mobile(mn).map(|m| m.phase)
    }
}
