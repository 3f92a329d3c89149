//! Request service pipeline for the six architectures.
//!
//! Requests are split into page transactions at arrival and queued per die.
//! A die takes one transaction (or an offset-aligned multi-plane pair) at a
//! time and stays occupied until the transaction no longer needs it: after
//! data-out for reads, after programming for writes. How the command and
//! data reach the die is what distinguishes the architectures:
//!
//! * bus designs book FIFO time on a shared channel for the command, and
//!   again for data;
//! * Venice assigns a flash controller, walks a scout to reserve a circuit,
//!   and holds that circuit for the command, the flash operation and the
//!   data transfer;
//! * NoSSD sends command and data as store-and-forward packets over
//!   dimension-order routes with per-port input buffers.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::controller::{
    compute_transfer_latency, controller_distance, select_flash_controller, CompletedRequest,
    ControllerStatus, FlashControllerState, IoRequest, RequestKind, COMMAND_BYTES,
};
use crate::error::SimError;
use crate::flash::{
    can_pair_multiplane, FlashChipState, FlashGeometry, FlashOp, FlashTimingConfig,
    PhysicalPageAddress,
};
use crate::ftl::{AccessKind, Ftl, GcConfig};
use crate::interconnect::{build_topology, LinkParams, Mesh, Port, Topology, TopologyKind};
use crate::metrics::{EnergyBreakdown, PowerModel};
use crate::routing::{dor_route, free_path_exists, Circuit, RoutingMode, ScoutPacket, StepOutcome};
use crate::sim::{EventKind, EventQueue, Nanos};

/// Consecutive failed scouts after which a controller waits for a circuit
/// to be released before trying again.
pub const MAX_IMMEDIATE_RETRIES: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub architecture: TopologyKind,
    pub geometry: FlashGeometry,
    pub timing: FlashTimingConfig,
    pub link: LinkParams,
    pub routing: RoutingMode,
    /// Scout cost per link traversal.
    pub scout_hop_ns: Nanos,
    pub gc: GcConfig,
    pub overprovision: f64,
    pub power: PowerModel,
    pub seed: u64,
    /// Input buffer per router port in the buffered mesh.
    pub nossd_buffer_bytes: u64,
    pub multiplane: bool,
    /// Check circuit disjointness and table invariants after every
    /// reservation event (slow; meant for tests).
    pub check_invariants: bool,
}

impl SimConfig {
    pub fn new(architecture: TopologyKind, geometry: FlashGeometry, timing: FlashTimingConfig) -> Self {
        Self {
            architecture,
            geometry,
            timing,
            link: LinkParams::default(),
            routing: if architecture == TopologyKind::NossdMesh {
                RoutingMode::Dor
            } else {
                RoutingMode::VeniceNonminimal
            },
            scout_hop_ns: 3,
            gc: GcConfig::default(),
            overprovision: 0.07,
            power: PowerModel::default(),
            seed: 1,
            nossd_buffer_bytes: 16 * 1024,
            multiplane: true,
            check_invariants: false,
        }
    }

    pub fn performance_optimized(architecture: TopologyKind) -> Self {
        Self::new(
            architecture,
            FlashGeometry::performance_optimized(),
            FlashTimingConfig::performance_optimized(),
        )
    }

    pub fn cost_optimized(architecture: TopologyKind) -> Self {
        Self::new(
            architecture,
            FlashGeometry::cost_optimized(),
            FlashTimingConfig::cost_optimized(),
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub events: u64,
    pub transactions: u64,
    pub multiplane_ops: u64,
    pub scout_attempts: u64,
    pub scout_failures: u64,
    pub max_scout_hop_events: u64,
    pub max_router_visits: u8,
    pub misroutes: u64,
    pub invariant_checks: u64,
    pub max_active_circuits: usize,
    pub gc_passes: u64,
    pub gc_page_moves: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// In request order.
    pub completed: Vec<CompletedRequest>,
    /// Dynamic energy; router static energy is added by the report.
    pub energy: EnergyBreakdown,
    pub routers: usize,
    pub stats: EngineStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TxnKind {
    Read,
    Write,
    GcRead,
    GcWrite,
    Erase,
}

impl TxnKind {
    fn flash_op(self) -> FlashOp {
        match self {
            TxnKind::Read | TxnKind::GcRead => FlashOp::Read,
            TxnKind::Write | TxnKind::GcWrite => FlashOp::Program,
            TxnKind::Erase => FlashOp::Erase,
        }
    }
}

type PairKey = (FlashOp, usize, usize);

/// FIFO of transactions waiting on one die, indexed by (op, block, page) so
/// a multi-plane partner is found without scanning the whole queue.
#[derive(Debug, Clone, Default)]
struct DieQueue {
    next_seq: u64,
    order: BTreeMap<u64, (usize, PairKey, usize)>,
    by_key: HashMap<PairKey, BTreeSet<u64>>,
}

impl DieQueue {
    fn push_back(&mut self, txn: usize, op: FlashOp, addr: &PhysicalPageAddress) {
        let key = (op, addr.block, addr.page);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.order.insert(seq, (txn, key, addr.plane));
        self.by_key.entry(key).or_default().insert(seq);
    }

    fn unindex(&mut self, seq: u64, key: PairKey) {
        if let Some(set) = self.by_key.get_mut(&key) {
            set.remove(&seq);
            if set.is_empty() {
                self.by_key.remove(&key);
            }
        }
    }

    fn pop_front(&mut self) -> Option<usize> {
        let (seq, (txn, key, _)) = self.order.pop_first()?;
        self.unindex(seq, key);
        Some(txn)
    }

    /// Remove and return the oldest queued transaction with `key` on a plane
    /// not in `taken`.
    fn take_partner(&mut self, key: PairKey, taken: &[usize]) -> Option<(usize, usize)> {
        let set = self.by_key.get(&key)?;
        let seq = set
            .iter()
            .copied()
            .find(|s| !taken.contains(&self.order[s].2))?;
        let (txn, key, plane) = self.order.remove(&seq).expect("indexed entry");
        self.unindex(seq, key);
        Some((txn, plane))
    }
}

#[derive(Debug, Clone)]
struct Txn {
    req: Option<usize>,
    kind: TxnKind,
    addr: PhysicalPageAddress,
    /// For GC reads: where the page is rewritten.
    gc_dest: Option<PhysicalPageAddress>,
    /// Plane index whose GC pass this erase closes.
    gc_plane: Option<usize>,
}

#[derive(Debug, Clone)]
struct Op {
    txns: Vec<usize>,
    op: FlashOp,
    chip: usize,
    die: usize,
    addrs: Vec<PhysicalPageAddress>,
    data_bytes: u64,
    conflict: bool,
    scout_failed: bool,
    fc: Option<usize>,
    circuit: Option<Circuit>,
    /// Packets still to arrive before the next phase (buffered mesh).
    pending: u32,
}

#[derive(Debug, Clone)]
struct ReqState {
    req: IoRequest,
    pages_left: u64,
    conflict: bool,
    first_try: bool,
    completion: Option<Nanos>,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    FlashDone(usize),
    XferDone(usize),
    ScoutStep(usize),
    ScoutRetry(usize),
    CircuitReady(usize),
    PacketHop { channel: usize, packet: usize },
}

// --- Venice state -----------------------------------------------------------

#[derive(Debug, Clone)]
struct VeniceFc {
    state: FlashControllerState,
    scout: Option<ScoutPacket>,
    failures: u32,
    waiting_release: bool,
}

#[derive(Debug)]
struct Venice {
    mesh: Mesh,
    fcs: Vec<VeniceFc>,
    queue: VecDeque<usize>,
    active: Vec<usize>,
}

// --- Buffered mesh state ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Router(usize),
    Fc(usize),
    Chip(usize),
}

#[derive(Debug, Clone)]
struct DirChannel {
    to: Node,
    busy: bool,
    queue: VecDeque<usize>,
    /// Bytes reserved in the downstream router's input buffer for this port.
    buf_used: u64,
}

#[derive(Debug, Clone, Copy)]
enum PacketRole {
    Command,
    WriteData,
    ReadData,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    op: usize,
    role: PacketRole,
    dest: Node,
    size: u64,
    /// Channel whose downstream buffer currently holds the packet.
    held_in: Option<usize>,
    queued_at: Nanos,
}

#[derive(Debug)]
struct Buffered {
    channels: Vec<DirChannel>,
    /// Directed mesh channel out of `router` through `port`.
    out: Vec<[Option<usize>; 4]>,
    inj_up: Vec<usize>,
    inj_down: Vec<usize>,
    ej_down: Vec<usize>,
    ej_up: Vec<usize>,
    packets: Vec<Packet>,
    fc_load: Vec<usize>,
    cols: usize,
}

impl Buffered {
    fn new(mesh: &Mesh) -> Self {
        let n = mesh.router_count();
        let mut channels = Vec::new();
        let mut push = |to: Node| {
            channels.push(DirChannel {
                to,
                busy: false,
                queue: VecDeque::new(),
                buf_used: 0,
            });
            channels.len() - 1
        };
        let mut out = vec![[None; 4]; n];
        for (r, ports) in out.iter_mut().enumerate() {
            for p in Port::MESH {
                if let Some(nb) = mesh.neighbor(r, p) {
                    ports[p.index()] = Some(push(Node::Router(nb)));
                }
            }
        }
        let fcs = mesh.controller_count();
        let inj_up = (0..fcs)
            .map(|f| push(Node::Router(mesh.controller_router(f))))
            .collect();
        let inj_down = (0..fcs).map(|f| push(Node::Fc(f))).collect();
        let ej_down = (0..n).map(|c| push(Node::Chip(c))).collect();
        let ej_up = (0..n).map(|c| push(Node::Router(c))).collect();
        Self {
            channels,
            out,
            inj_up,
            inj_down,
            ej_down,
            ej_up,
            packets: Vec::new(),
            fc_load: vec![0; fcs],
            cols: mesh.cols,
        }
    }

    /// Next channel for a packet sitting in `router`.
    fn next_channel(&self, router: usize, dest: Node) -> usize {
        let target = match dest {
            Node::Chip(c) => c,
            Node::Fc(f) => f * self.cols,
            Node::Router(r) => r,
        };
        match dor_route(router, target, self.cols) {
            Port::Ejection => match dest {
                Node::Chip(c) => self.ej_down[c],
                Node::Fc(f) => self.inj_down[f],
                Node::Router(_) => unreachable!("packets never target a router"),
            },
            p => self.out[router][p.index()].expect("dimension-order route stays on the mesh"),
        }
    }
}

enum Fabric {
    Bus,
    Venice(Box<Venice>),
    Buffered(Box<Buffered>),
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    topo: Topology,
    fabric: Fabric,
    ftl: Ftl,
    chips: Vec<FlashChipState>,
    die_busy: Vec<bool>,
    die_queue: Vec<DieQueue>,
    txns: Vec<Txn>,
    ops: Vec<Op>,
    reqs: Vec<ReqState>,
    /// Request indices in arrival order, and the next one to admit.
    arrivals: Vec<usize>,
    next_arrival: usize,
    gc_active: Vec<bool>,
    q: EventQueue<Ev>,
    energy: EnergyBreakdown,
    stats: EngineStats,
    bus_page_ns: Nanos,
}

/// Simulate `requests` to completion on the configured architecture.
pub fn simulate(cfg: &SimConfig, requests: &[IoRequest]) -> Result<SimOutcome, SimError> {
    let mut e = Engine::new(cfg, requests)?;
    e.run()?;
    e.finish()
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig, requests: &[IoRequest]) -> Result<Self, SimError> {
        cfg.geometry.validate()?;
        cfg.timing.validate()?;
        cfg.gc.validate().map_err(SimError::InvalidGeometry)?;
        cfg.power.validate().map_err(SimError::InvalidGeometry)?;
        if cfg.link.link_width == 0 || cfg.link.link_cycle == 0 {
            return Err(SimError::InvalidGeometry("link width and cycle must be >= 1".into()));
        }
        let mut topo = build_topology(cfg.architecture, &cfg.geometry, cfg.link, cfg.seed)?;
        let fabric = match cfg.architecture {
            TopologyKind::VeniceMesh => {
                if cfg.routing == RoutingMode::Dor {
                    return Err(SimError::InvalidGeometry(
                        "venice-mesh needs a venice routing mode, not dor".into(),
                    ));
                }
                let mesh = topo.mesh.take().expect("mesh topology");
                if mesh.controller_count() > 8 || mesh.router_count() > 64 {
                    return Err(SimError::InvalidGeometry(format!(
                        "scout flits address at most 8 controllers and 64 chips, got {} and {}",
                        mesh.controller_count(),
                        mesh.router_count()
                    )));
                }
                let fcs = (0..mesh.controller_count())
                    .map(|i| VeniceFc {
                        state: FlashControllerState::new(i),
                        scout: None,
                        failures: 0,
                        waiting_release: false,
                    })
                    .collect();
                Fabric::Venice(Box::new(Venice {
                    mesh,
                    fcs,
                    queue: VecDeque::new(),
                    active: Vec::new(),
                }))
            }
            TopologyKind::NossdMesh => {
                let mesh = topo.mesh.as_ref().expect("mesh topology");
                if cfg.nossd_buffer_bytes < cfg.geometry.page_size {
                    return Err(SimError::InvalidGeometry(format!(
                        "router port buffer ({} B) smaller than a page ({} B)",
                        cfg.nossd_buffer_bytes, cfg.geometry.page_size
                    )));
                }
                Fabric::Buffered(Box::new(Buffered::new(mesh)))
            }
            _ => Fabric::Bus,
        };
        let g = &cfg.geometry;
        let n_chips = g.total_chips();
        let n_dies = n_chips * g.dies_per_chip;
        let q = EventQueue::new();
        let mut reqs = Vec::with_capacity(requests.len());
        for (i, r) in requests.iter().enumerate() {
            if r.page_count == 0 {
                return Err(SimError::Invariant(format!("request {i} has zero pages")));
            }
            reqs.push(ReqState {
                req: r.clone(),
                pages_left: r.page_count,
                conflict: false,
                first_try: true,
                completion: None,
            });
        }
        // Arrivals stay out of the heap. Feeding them in (time, index) order
        // and letting them win ties reproduces scheduling them all up front.
        let mut arrivals: Vec<usize> = (0..requests.len()).collect();
        arrivals.sort_by_key(|&i| (requests[i].arrival_time, i));
        Ok(Self {
            cfg,
            ftl: Ftl::new(*g, cfg.overprovision)?,
            chips: (0..n_chips).map(|c| FlashChipState::new(c, g)).collect(),
            die_busy: vec![false; n_dies],
            die_queue: vec![DieQueue::default(); n_dies],
            txns: Vec::new(),
            ops: Vec::new(),
            reqs,
            arrivals,
            next_arrival: 0,
            gc_active: vec![false; n_chips * g.planes_per_chip()],
            q,
            energy: EnergyBreakdown::default(),
            stats: EngineStats::default(),
            bus_page_ns: cfg.timing.page_transfer_time_bus,
            topo,
            fabric,
        })
    }

    fn run(&mut self) -> Result<(), SimError> {
        loop {
            if let Some(&r) = self.arrivals.get(self.next_arrival) {
                let t = self.reqs[r].req.arrival_time;
                if self.q.peek_time().map_or(true, |h| t <= h) {
                    self.next_arrival += 1;
                    self.q.advance_external(t)?;
                    self.stats.events += 1;
                    self.on_arrival(r)?;
                    continue;
                }
            }
            let Some(ev) = self.q.advance() else { break };
            self.stats.events += 1;
            match ev.payload {
                Ev::FlashDone(op) => self.on_flash_done(op)?,
                Ev::XferDone(op) => self.on_xfer_done(op)?,
                Ev::ScoutStep(fc) => self.on_scout_step(fc)?,
                Ev::ScoutRetry(fc) => self.launch_scout(fc)?,
                Ev::CircuitReady(fc) => self.on_circuit_ready(fc)?,
                Ev::PacketHop { channel, packet } => self.on_packet_hop(channel, packet)?,
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<SimOutcome, SimError> {
        let mut completed = Vec::with_capacity(self.reqs.len());
        let venice = matches!(self.fabric, Fabric::Venice(_));
        for (i, r) in self.reqs.iter().enumerate() {
            let Some(t) = r.completion else {
                return Err(SimError::Invariant(format!(
                    "request {i} never completed ({} pages outstanding)",
                    r.pages_left
                )));
            };
            completed.push(CompletedRequest {
                arrival_time: r.req.arrival_time,
                completion_time: t,
                kind: r.req.kind,
                page_count: r.req.page_count,
                conflict: r.conflict,
                first_try_reserved: venice.then_some(r.first_try),
            });
        }
        let routers = match &self.fabric {
            Fabric::Venice(v) => v.mesh.router_count(),
            Fabric::Buffered(b) => b.out.len(),
            Fabric::Bus => 0,
        };
        Ok(SimOutcome {
            completed,
            energy: self.energy,
            routers,
            stats: self.stats,
        })
    }

    fn die_index(&self, chip: usize, die: usize) -> usize {
        chip * self.cfg.geometry.dies_per_chip + die
    }

    fn plane_index(&self, a: &PhysicalPageAddress) -> usize {
        let g = &self.cfg.geometry;
        (a.chip * g.dies_per_chip + a.die) * g.planes_per_die + a.plane
    }

    // --- arrival, FTL and die queues -----------------------------------------

    fn on_arrival(&mut self, r: usize) -> Result<(), SimError> {
        let req = self.reqs[r].req.clone();
        let kind = match req.kind {
            RequestKind::Read => AccessKind::Read,
            RequestKind::Write => AccessKind::Write,
        };
        let logical = self.ftl.logical_pages();
        let mut touched = Vec::new();
        for i in 0..req.page_count {
            let lpn = (req.logical_page_start + i) % logical;
            let addr = self.ftl.translate_or_allocate(lpn, kind)?;
            let t = self.push_txn(Txn {
                req: Some(r),
                kind: match req.kind {
                    RequestKind::Read => TxnKind::Read,
                    RequestKind::Write => TxnKind::Write,
                },
                addr,
                gc_dest: None,
                gc_plane: None,
            });
            let d = self.die_index(addr.chip, addr.die);
            self.enqueue(d, t);
            touched.push((addr.chip, addr.die));
            self.maybe_gc(&addr)?;
        }
        touched.dedup();
        for (chip, die) in touched {
            self.try_dispatch(chip, die)?;
        }
        Ok(())
    }

    fn enqueue(&mut self, d: usize, t: usize) {
        let txn = &self.txns[t];
        self.die_queue[d].push_back(t, txn.kind.flash_op(), &txn.addr);
    }

    fn push_txn(&mut self, t: Txn) -> usize {
        self.txns.push(t);
        self.stats.transactions += 1;
        self.txns.len() - 1
    }

    fn maybe_gc(&mut self, a: &PhysicalPageAddress) -> Result<(), SimError> {
        let pi = self.plane_index(a);
        if self.gc_active[pi] || !self.ftl.needs_gc(&self.cfg.gc, a.chip, a.die, a.plane) {
            return Ok(());
        }
        let Some(plan) = self.ftl.run_gc(a.chip, a.die, a.plane)? else {
            return Ok(());
        };
        self.gc_active[pi] = true;
        self.stats.gc_passes += 1;
        self.stats.gc_page_moves += plan.moves.len() as u64;
        let d = self.die_index(a.chip, a.die);
        for (_, from, to) in &plan.moves {
            let t = self.push_txn(Txn {
                req: None,
                kind: TxnKind::GcRead,
                addr: *from,
                gc_dest: Some(*to),
                gc_plane: None,
            });
            self.enqueue(d, t);
        }
        let t = self.push_txn(Txn {
            req: None,
            kind: TxnKind::Erase,
            addr: plan.victim,
            gc_dest: None,
            gc_plane: Some(pi),
        });
        self.enqueue(d, t);
        Ok(())
    }

    fn try_dispatch(&mut self, chip: usize, die: usize) -> Result<(), SimError> {
        let d = self.die_index(chip, die);
        if self.die_busy[d] {
            return Ok(());
        }
        let Some(first) = self.die_queue[d].pop_front() else {
            return Ok(());
        };
        let kind = self.txns[first].kind;
        let mut group = vec![first];
        let mut addrs = vec![self.txns[first].addr];
        if self.cfg.multiplane && kind != TxnKind::Erase {
            let a = addrs[0];
            let key = (kind.flash_op(), a.block, a.page);
            let mut planes = vec![a.plane];
            while group.len() < self.cfg.geometry.planes_per_die {
                let Some((t, plane)) = self.die_queue[d].take_partner(key, &planes) else {
                    break;
                };
                debug_assert!(can_pair_multiplane(&a, &self.txns[t].addr));
                group.push(t);
                addrs.push(self.txns[t].addr);
                planes.push(plane);
            }
        }
        if group.len() > 1 {
            self.stats.multiplane_ops += 1;
        }
        let op = kind.flash_op();
        let data_bytes = if op == FlashOp::Erase {
            0
        } else {
            group.len() as u64 * self.cfg.geometry.page_size
        };
        self.ops.push(Op {
            txns: group,
            op,
            chip,
            die,
            addrs,
            data_bytes,
            conflict: false,
            scout_failed: false,
            fc: None,
            circuit: None,
            pending: 0,
        });
        self.die_busy[d] = true;
        let id = self.ops.len() - 1;
        self.start_op(id)
    }

    fn start_flash(&mut self, id: usize, at: Nanos) -> Result<(), SimError> {
        let op = &self.ops[id];
        let (chip, kind) = (op.chip, op.op);
        let end = self.chips[chip].start_multiplane_op(kind, &op.addrs, &self.cfg.timing, at)?;
        let p = &self.cfg.power;
        let mw = match kind {
            FlashOp::Read => p.flash_read_power,
            FlashOp::Program => p.flash_program_power,
            FlashOp::Erase => p.flash_erase_power,
        };
        self.energy.flash += mw * (end - at) as f64;
        self.q.schedule(end, EventKind::FlashOpComplete, Ev::FlashDone(id))?;
        Ok(())
    }

    /// Die and path are both done with the op: free the die and complete its
    /// transactions.
    fn finish_op(&mut self, id: usize) -> Result<(), SimError> {
        let now = self.q.now();
        let (chip, die) = (self.ops[id].chip, self.ops[id].die);
        self.chips[chip].finish(die, now);
        let d = self.die_index(chip, die);
        self.die_busy[d] = false;
        let (conflict, scout_failed) = (self.ops[id].conflict, self.ops[id].scout_failed);
        for t in std::mem::take(&mut self.ops[id].txns) {
            let txn = self.txns[t].clone();
            if let Some(r) = txn.req {
                let rs = &mut self.reqs[r];
                rs.conflict |= conflict || scout_failed;
                rs.first_try &= !scout_failed;
                rs.pages_left -= 1;
                if rs.pages_left == 0 {
                    rs.completion = Some(now);
                }
            }
            match txn.kind {
                TxnKind::GcRead => {
                    let dest = txn.gc_dest.expect("gc read carries its destination");
                    let w = self.push_txn(Txn {
                        req: None,
                        kind: TxnKind::GcWrite,
                        addr: dest,
                        gc_dest: None,
                        gc_plane: None,
                    });
                    let dd = self.die_index(dest.chip, dest.die);
                    self.enqueue(dd, w);
                }
                TxnKind::Erase => {
                    if let Some(pi) = txn.gc_plane {
                        self.gc_active[pi] = false;
                    }
                }
                _ => {}
            }
        }
        if let Fabric::Buffered(b) = &mut self.fabric {
            if let Some(fc) = self.ops[id].fc {
                b.fc_load[fc] -= 1;
            }
        }
        self.try_dispatch(chip, die)
    }

    fn start_op(&mut self, id: usize) -> Result<(), SimError> {
        match self.fabric {
            Fabric::Bus => self.bus_start(id),
            Fabric::Venice(_) => self.venice_start(id),
            Fabric::Buffered(_) => self.buffered_start(id),
        }
    }

    fn on_flash_done(&mut self, id: usize) -> Result<(), SimError> {
        match self.fabric {
            Fabric::Bus => self.bus_flash_done(id),
            Fabric::Venice(_) => self.venice_flash_done(id),
            Fabric::Buffered(_) => self.buffered_flash_done(id),
        }
    }

    fn on_xfer_done(&mut self, id: usize) -> Result<(), SimError> {
        match self.fabric {
            Fabric::Bus => self.finish_op(id),
            Fabric::Venice(_) => self.venice_xfer_done(id),
            Fabric::Buffered(_) => Err(SimError::Invariant("bus event on buffered mesh".into())),
        }
    }

    // --- bus designs ----------------------------------------------------------

    fn pick_channel(&self, chip: usize, die: usize) -> usize {
        let chans = &self.topo.chip_channels[chip];
        match self.topo.kind {
            TopologyKind::IdealDirect => chans[die],
            TopologyKind::PnssdGrid => {
                let now = self.q.now();
                chans
                    .iter()
                    .copied()
                    .find(|&c| self.topo.channels[c].is_free(now))
                    .unwrap_or_else(|| {
                        *chans
                            .iter()
                            .min_by_key(|&&c| self.topo.channels[c].free_at())
                            .expect("chip has channels")
                    })
            }
            _ => chans[0],
        }
    }

    /// Book `base` ns (at the base channel rate) on a channel of the op's
    /// chip. Returns the end of the booking.
    fn bus_book(&mut self, id: usize, base: Nanos) -> Nanos {
        let now = self.q.now();
        let (chip, die) = (self.ops[id].chip, self.ops[id].die);
        let c = self.pick_channel(chip, die);
        let ch = &mut self.topo.channels[c];
        let dur = ch.scaled(base);
        let grant = ch.bus_acquire(now, dur);
        if grant > now {
            self.ops[id].conflict = true;
        }
        self.energy.bus += self.cfg.power.bus_transfer_power * dur as f64;
        grant + dur
    }

    fn bus_pages(&self, id: usize) -> Nanos {
        self.bus_page_ns * self.ops[id].addrs.len() as Nanos
    }

    fn bus_start(&mut self, id: usize) -> Result<(), SimError> {
        let cmd = self.cfg.timing.cmd_transfer_time;
        let base = match self.ops[id].op {
            FlashOp::Program => cmd + self.bus_pages(id),
            FlashOp::Read | FlashOp::Erase => cmd,
        };
        let at = self.bus_book(id, base);
        self.start_flash(id, at)
    }

    fn bus_flash_done(&mut self, id: usize) -> Result<(), SimError> {
        if self.ops[id].op != FlashOp::Read {
            return self.finish_op(id);
        }
        let end = self.bus_book(id, self.bus_pages(id));
        self.q.schedule(end, EventKind::TransferComplete, Ev::XferDone(id))?;
        Ok(())
    }

    // --- Venice ---------------------------------------------------------------

    fn venice(&mut self) -> &mut Venice {
        match &mut self.fabric {
            Fabric::Venice(v) => v,
            _ => unreachable!("venice handler on another fabric"),
        }
    }

    fn venice_start(&mut self, id: usize) -> Result<(), SimError> {
        let chip = self.ops[id].chip;
        let cols = self.cfg.geometry.chips_per_row;
        let v = self.venice();
        let states: Vec<FlashControllerState> = v.fcs.iter().map(|f| f.state).collect();
        match select_flash_controller(chip, &states, cols) {
            Some(fc) => self.venice_assign(fc, id),
            None => {
                self.venice().queue.push_back(id);
                Ok(())
            }
        }
    }

    fn venice_assign(&mut self, fc: usize, id: usize) -> Result<(), SimError> {
        self.ops[id].fc = Some(fc);
        let f = &mut self.venice().fcs[fc];
        f.state.status = ControllerStatus::Busy(id);
        f.failures = 0;
        f.waiting_release = false;
        self.launch_scout(fc)
    }

    fn launch_scout(&mut self, fc: usize) -> Result<(), SimError> {
        let ControllerStatus::Busy(id) = self.venice().fcs[fc].state.status else {
            return Err(SimError::Invariant(format!("scout from idle controller {fc}")));
        };
        let chip = self.ops[id].chip;
        let mode = self.cfg.routing;
        let v = self.venice();
        let scout = ScoutPacket::launch(&mut v.mesh, fc, chip, mode)?;
        v.fcs[fc].scout = Some(scout);
        v.fcs[fc].waiting_release = false;
        self.stats.scout_attempts += 1;
        self.q.schedule(self.q.now(), EventKind::ScoutStep, Ev::ScoutStep(fc))?;
        Ok(())
    }

    fn on_scout_step(&mut self, fc: usize) -> Result<(), SimError> {
        let now = self.q.now();
        let hop = self.cfg.scout_hop_ns;
        let check = self.cfg.check_invariants;
        let v = self.venice();
        let mut scout = v.fcs[fc]
            .scout
            .take()
            .ok_or_else(|| SimError::Invariant(format!("controller {fc} has no scout")))?;
        let outcome = scout.step(&mut v.mesh)?;
        match outcome {
            StepOutcome::Forward { .. } | StepOutcome::Backtrack { .. } => {
                v.fcs[fc].scout = Some(scout);
                if check {
                    self.check_circuits()?;
                }
                self.q.schedule(now + hop, EventKind::ScoutStep, Ev::ScoutStep(fc))?;
            }
            StepOutcome::Arrived => {
                let stats = scout.stats;
                let circuit = scout.into_circuit(&v.mesh, now)?;
                let mesh_hops = circuit.mesh_hops() as u64;
                let back = if mesh_hops == 0 { 2 * hop } else { hop * mesh_hops };
                let ControllerStatus::Busy(id) = v.fcs[fc].state.status else {
                    unreachable!("scout launched from a busy controller");
                };
                v.active.push(id);
                let active = v.active.len();
                self.ops[id].circuit = Some(circuit);
                self.note_scout(&stats);
                self.stats.max_active_circuits = self.stats.max_active_circuits.max(active);
                if check {
                    self.check_circuits()?;
                }
                self.q
                    .schedule(now + back, EventKind::ScoutStep, Ev::CircuitReady(fc))?;
            }
            StepOutcome::Failed => {
                let stats = scout.stats;
                self.note_scout(&stats);
                self.stats.scout_failures += 1;
                if check {
                    self.check_circuits()?;
                }
                let v = self.venice();
                let ControllerStatus::Busy(id) = v.fcs[fc].state.status else {
                    unreachable!("scout launched from a busy controller");
                };
                let f = &mut v.fcs[fc];
                f.failures += 1;
                let retry_at = if f.failures < MAX_IMMEDIATE_RETRIES {
                    Some(now + hop)
                } else if !v.active.is_empty() {
                    v.fcs[fc].waiting_release = true;
                    None
                } else {
                    // Nothing to wait for; other scouts are in flight. Back off.
                    Some(now + hop * (v.mesh.router_count() as u64 + fc as u64))
                };
                self.ops[id].scout_failed = true;
                if let Some(t) = retry_at {
                    self.q.schedule(t, EventKind::ScoutStep, Ev::ScoutRetry(fc))?;
                }
            }
        }
        Ok(())
    }

    fn note_scout(&mut self, s: &crate::routing::ScoutStats) {
        self.stats.max_scout_hop_events = self.stats.max_scout_hop_events.max(s.hop_events);
        self.stats.max_router_visits = self.stats.max_router_visits.max(s.max_visits);
        self.stats.misroutes += s.misroutes;
    }

    fn circuit_of(&self, id: usize) -> Result<&Circuit, SimError> {
        self.ops[id]
            .circuit
            .as_ref()
            .ok_or_else(|| SimError::Invariant(format!("op {id} has no circuit")))
    }

    fn circuit_xfer(&mut self, id: usize, bytes: u64) -> Result<Nanos, SimError> {
        let c = self.circuit_of(id)?;
        let (dist, links) = (c.distance() as u64, c.links.len());
        let t = compute_transfer_latency(dist, bytes, self.cfg.link.link_width, self.cfg.link.link_cycle);
        self.energy.link += self.cfg.power.link_transfer_power * links as f64 * t as f64;
        Ok(t)
    }

    fn on_circuit_ready(&mut self, fc: usize) -> Result<(), SimError> {
        let now = self.q.now();
        let ControllerStatus::Busy(id) = self.venice().fcs[fc].state.status else {
            return Err(SimError::Invariant(format!("circuit ready on idle controller {fc}")));
        };
        let cmd = self.circuit_xfer(id, COMMAND_BYTES)?;
        match self.ops[id].op {
            FlashOp::Read => self.start_flash(id, now + cmd),
            FlashOp::Program => {
                let data = self.circuit_xfer(id, self.ops[id].data_bytes)?;
                self.q
                    .schedule(now + cmd + data, EventKind::TransferComplete, Ev::XferDone(id))?;
                self.start_flash(id, now + cmd + data)
            }
            FlashOp::Erase => {
                self.q
                    .schedule(now + cmd, EventKind::TransferComplete, Ev::XferDone(id))?;
                self.start_flash(id, now + cmd)
            }
        }
    }

    fn venice_flash_done(&mut self, id: usize) -> Result<(), SimError> {
        if self.ops[id].op != FlashOp::Read {
            // Path already released after the write data went across.
            return self.finish_op(id);
        }
        let now = self.q.now();
        let data = self.circuit_xfer(id, self.ops[id].data_bytes)?;
        self.q
            .schedule(now + data, EventKind::TransferComplete, Ev::XferDone(id))?;
        Ok(())
    }

    /// The op no longer needs its circuit: tear it down, free the controller,
    /// and hand the controller to the next waiting op.
    fn venice_xfer_done(&mut self, id: usize) -> Result<(), SimError> {
        let now = self.q.now();
        let circuit = self.ops[id]
            .circuit
            .take()
            .ok_or_else(|| SimError::Invariant(format!("op {id} released twice")))?;
        let fc = circuit.source_fc;
        let minimal_only = self.cfg.routing == RoutingMode::VeniceMinimalOnly;
        let hop = self.cfg.scout_hop_ns;
        let Fabric::Venice(v) = &mut self.fabric else {
            unreachable!("venice handler on another fabric");
        };
        circuit.release(&mut v.mesh)?;
        v.active.retain(|&o| o != id);
        v.fcs[fc].state.status = ControllerStatus::Idle;
        // Wake waiting controllers whose destination is now reachable. If
        // nothing stays active to release later, back off instead.
        let mut wake = Vec::new();
        for w in 0..v.fcs.len() {
            if !v.fcs[w].waiting_release {
                continue;
            }
            let ControllerStatus::Busy(op) = v.fcs[w].state.status else {
                continue;
            };
            let reachable = free_path_exists(&v.mesh, w, self.ops[op].chip, minimal_only);
            if reachable || v.active.is_empty() {
                let f = &mut v.fcs[w];
                f.waiting_release = false;
                f.failures = 0;
                let delay = if reachable {
                    0
                } else {
                    hop * (v.mesh.router_count() + w) as u64
                };
                wake.push((w, now + delay));
            }
        }
        for (w, t) in wake {
            self.q.schedule(t, EventKind::ScoutStep, Ev::ScoutRetry(w))?;
        }
        if self.cfg.check_invariants {
            self.check_circuits()?;
        }
        if let Some(next) = self.venice().queue.pop_front() {
            self.venice_assign(fc, next)?;
        }
        if self.ops[id].op == FlashOp::Read {
            self.finish_op(id)?;
        }
        Ok(())
    }

    /// Active circuits are pairwise link-disjoint, each holds its links, and
    /// every router table is consistent.
    fn check_circuits(&mut self) -> Result<(), SimError> {
        self.stats.invariant_checks += 1;
        let Fabric::Venice(v) = &self.fabric else {
            return Ok(());
        };
        let mut owner = vec![usize::MAX; v.mesh.links.len()];
        for &id in &v.active {
            let c = self.ops[id]
                .circuit
                .as_ref()
                .ok_or_else(|| SimError::Invariant(format!("active op {id} lost its circuit")))?;
            for l in &c.links {
                if owner[l.0] != usize::MAX {
                    return Err(SimError::Invariant(format!(
                        "link {} shared by circuits {} and {}",
                        l.0, owner[l.0], c.circuit_id
                    )));
                }
                owner[l.0] = c.circuit_id;
                if v.mesh.link(*l).status != crate::interconnect::LinkStatus::Reserved(c.circuit_id) {
                    return Err(SimError::Invariant(format!(
                        "circuit {} lists link {} it does not hold",
                        c.circuit_id, l.0
                    )));
                }
            }
        }
        v.mesh.check_tables().map_err(SimError::Invariant)
    }

    // --- buffered mesh --------------------------------------------------------

    fn buffered(&mut self) -> &mut Buffered {
        match &mut self.fabric {
            Fabric::Buffered(b) => b,
            _ => unreachable!("buffered handler on another fabric"),
        }
    }

    fn buffered_start(&mut self, id: usize) -> Result<(), SimError> {
        let chip = self.ops[id].chip;
        let rows = self.cfg.geometry.rows;
        let cols = self.cfg.geometry.chips_per_row;
        let b = self.buffered();
        let fc = (0..rows)
            .min_by_key(|&f| (b.fc_load[f], controller_distance(f, chip, cols), f))
            .expect("at least one controller");
        b.fc_load[fc] += 1;
        self.ops[id].fc = Some(fc);
        let page = self.cfg.geometry.page_size;
        let pages = self.ops[id].addrs.len() as u32;
        let mut packets = vec![(PacketRole::Command, COMMAND_BYTES)];
        if self.ops[id].op == FlashOp::Program {
            packets.extend((0..pages).map(|_| (PacketRole::WriteData, page)));
        }
        self.ops[id].pending = packets.len() as u32;
        let first = self.buffered().inj_up[fc];
        for (role, size) in packets {
            self.send_packet(id, role, Node::Chip(chip), size, first)?;
        }
        Ok(())
    }

    fn send_packet(
        &mut self,
        op: usize,
        role: PacketRole,
        dest: Node,
        size: u64,
        first: usize,
    ) -> Result<(), SimError> {
        let now = self.q.now();
        let b = self.buffered();
        b.packets.push(Packet {
            op,
            role,
            dest,
            size,
            held_in: None,
            queued_at: now,
        });
        let p = b.packets.len() - 1;
        b.channels[first].queue.push_back(p);
        self.try_send(first)
    }

    fn try_send(&mut self, ch: usize) -> Result<(), SimError> {
        let now = self.q.now();
        let cap = self.cfg.nossd_buffer_bytes;
        let link = self.cfg.link;
        let link_power = self.cfg.power.link_transfer_power;
        let b = self.buffered();
        let c = &b.channels[ch];
        if c.busy {
            return Ok(());
        }
        let Some(&p) = c.queue.front() else {
            return Ok(());
        };
        let pkt = b.packets[p];
        if matches!(c.to, Node::Router(_)) && c.buf_used + pkt.size > cap {
            return Ok(());
        }
        let c = &mut b.channels[ch];
        c.queue.pop_front();
        c.busy = true;
        if matches!(c.to, Node::Router(_)) {
            c.buf_used += pkt.size;
        }
        let t = compute_transfer_latency(1, pkt.size, link.link_width, link.link_cycle);
        if now > pkt.queued_at {
            self.ops[pkt.op].conflict = true;
        }
        self.energy.link += link_power * t as f64;
        self.q.schedule(
            now + t,
            EventKind::TransferComplete,
            Ev::PacketHop {
                channel: ch,
                packet: p,
            },
        )?;
        Ok(())
    }

    fn on_packet_hop(&mut self, ch: usize, p: usize) -> Result<(), SimError> {
        let now = self.q.now();
        let b = self.buffered();
        b.channels[ch].busy = false;
        let pkt = b.packets[p];
        let freed = pkt.held_in;
        if let Some(prev) = freed {
            b.channels[prev].buf_used -= pkt.size;
        }
        let to = b.channels[ch].to;
        match to {
            Node::Router(r) => {
                let next = b.next_channel(r, pkt.dest);
                let pk = &mut b.packets[p];
                pk.held_in = Some(ch);
                pk.queued_at = now;
                b.channels[next].queue.push_back(p);
                self.try_send(next)?;
            }
            Node::Chip(_) | Node::Fc(_) => {
                b.packets[p].held_in = None;
                self.packet_delivered(pkt)?;
            }
        }
        if let Some(prev) = freed {
            self.try_send(prev)?;
        }
        self.try_send(ch)
    }

    fn packet_delivered(&mut self, pkt: Packet) -> Result<(), SimError> {
        let now = self.q.now();
        let id = pkt.op;
        self.ops[id].pending -= 1;
        match pkt.role {
            PacketRole::Command | PacketRole::WriteData => {
                if self.ops[id].pending == 0 {
                    self.start_flash(id, now)?;
                }
            }
            PacketRole::ReadData => {
                if self.ops[id].pending == 0 {
                    self.finish_op(id)?;
                }
            }
        }
        Ok(())
    }

    fn buffered_flash_done(&mut self, id: usize) -> Result<(), SimError> {
        if self.ops[id].op != FlashOp::Read {
            return self.finish_op(id);
        }
        let fc = self.ops[id].fc.expect("buffered op has a controller");
        let chip = self.ops[id].chip;
        let pages = self.ops[id].addrs.len() as u32;
        let page = self.cfg.geometry.page_size;
        self.ops[id].pending = pages;
        let first = self.buffered().ej_up[chip];
        for _ in 0..pages {
            self.send_packet(id, PacketRole::ReadData, Node::Fc(fc), page, first)?;
        }
        Ok(())
    }
}
