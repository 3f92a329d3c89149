//! Scout-packet path reservation over the flash-node mesh.
//!
//! A scout walks from its flash controller toward the destination chip one
//! router at a time. At every router it asks [`find_output_port`] for a free
//! exit, reserves that link, and records `(packet id, entry, exit)` in the
//! router's table. When nothing is free it backtracks, releasing the last
//! hop, and the upstream router tries an exit it has not tried yet during
//! this attempt. The walk ends when the ejection link to the chip is
//! reserved, or when the scout is pushed all the way back to its controller.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::interconnect::{LinkId, Mesh, Port, ReservationEntry};
use crate::sim::{Lfsr2, Nanos};

/// A router may be entered at most this many times per attempt: the first
/// visit plus three revisits.
pub const MAX_VISITS: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingMode {
    /// Minimal ports first, misroute through any free port otherwise.
    #[default]
    VeniceNonminimal,
    /// Only minimal ports; an empty minimal set means backtrack.
    VeniceMinimalOnly,
    /// Dimension-order routing (used by the buffered mesh).
    Dor,
}

impl std::str::FromStr for RoutingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "venice-nonminimal" => Ok(RoutingMode::VeniceNonminimal),
            "venice-minimal-only" => Ok(RoutingMode::VeniceMinimalOnly),
            "dor" => Ok(RoutingMode::Dor),
            other => Err(format!("unknown routing mode `{other}`")),
        }
    }
}

// ---------------------------------------------------------------------------
// Flits

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlitKind {
    Header,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoutMode {
    Reserve,
    Cancel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoutFlit {
    pub kind: FlitKind,
    pub mode: ScoutMode,
    /// Destination chip for a header, source controller for a tail.
    pub id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{what} id {id} does not fit its flit field (limit {limit})")]
pub struct FlitRangeError {
    pub what: &'static str,
    pub id: u32,
    pub limit: u32,
}

/// Pack a flit as `[header bit | reserve bit | 6-bit payload]`.
///
/// Header payload is the destination chip (< 64). Tail payload carries the
/// source controller (< 8) in its top three bits; the low three are zero.
pub fn encode_flit(kind: FlitKind, mode: ScoutMode, id: u32) -> Result<u8, FlitRangeError> {
    let payload = match kind {
        FlitKind::Header if id < 64 => id as u8,
        FlitKind::Tail if id < 8 => (id as u8) << 3,
        FlitKind::Header => {
            return Err(FlitRangeError {
                what: "destination chip",
                id,
                limit: 64,
            })
        }
        FlitKind::Tail => {
            return Err(FlitRangeError {
                what: "source controller",
                id,
                limit: 8,
            })
        }
    };
    let type_bits = (u8::from(kind == FlitKind::Header) << 1) | u8::from(mode == ScoutMode::Reserve);
    Ok((type_bits << 6) | payload)
}

pub fn decode_flit(raw: u8) -> ScoutFlit {
    let kind = if raw & 0x80 != 0 {
        FlitKind::Header
    } else {
        FlitKind::Tail
    };
    let mode = if raw & 0x40 != 0 {
        ScoutMode::Reserve
    } else {
        ScoutMode::Cancel
    };
    let payload = raw & 0x3f;
    let id = match kind {
        FlitKind::Header => payload,
        FlitKind::Tail => payload >> 3,
    };
    ScoutFlit { kind, mode, id }
}

// ---------------------------------------------------------------------------
// Output port selection

#[derive(Debug, Clone, Copy)]
pub struct RoutingQuery {
    pub packet_id: usize,
    pub current: usize,
    pub destination: usize,
    pub input_port: Port,
    /// Free/busy per port, indexed by [`Port::index`]. Missing ports are busy.
    pub port_free: [bool; 6],
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteDecision {
    Output { port: Port, minimal: bool },
    Backtrack,
}

/// Minimal-direction ports for a query, in the order the nine sign cases
/// list them, whether free or not.
fn minimal_directions(q: &RoutingQuery) -> &'static [Port] {
    let diff_x = (q.destination % q.cols) as i64 - (q.current % q.cols) as i64;
    let diff_y = (q.destination / q.cols) as i64 - (q.current / q.cols) as i64;
    match (diff_x.signum(), diff_y.signum()) {
        (1, 1) => &[Port::Right, Port::Up],
        (1, -1) => &[Port::Right, Port::Down],
        (1, 0) => &[Port::Right],
        (-1, 1) => &[Port::Left, Port::Up],
        (-1, -1) => &[Port::Left, Port::Down],
        (-1, 0) => &[Port::Left],
        (0, 1) => &[Port::Up],
        (0, -1) => &[Port::Down],
        _ => &[Port::Ejection],
    }
}

/// Free ports that move the packet closer to its destination.
pub fn minimal_candidates(q: &RoutingQuery) -> Vec<Port> {
    minimal_directions(q)
        .iter()
        .copied()
        .filter(|p| q.port_free[p.index()])
        .collect()
}

/// Pick an output port for a scout.
///
/// Two free minimal ports are split by the router's LFSR; one is taken
/// directly. With none, any free mesh port other than the input is a
/// misroute candidate (when `allow_nonminimal`), again chosen by the LFSR.
/// If that set is empty too, the scout goes back the way it came.
pub fn find_output_port(q: &RoutingQuery, lfsr: &mut Lfsr2, allow_nonminimal: bool) -> RouteDecision {
    debug_assert!(q.current < q.rows * q.cols && q.destination < q.rows * q.cols);
    let mut buf = [Port::Up; 4];
    let mut n = 0;
    for &p in minimal_directions(q) {
        if q.port_free[p.index()] {
            buf[n] = p;
            n += 1;
        }
    }
    match n {
        2 => {
            return RouteDecision::Output {
                port: buf[lfsr.pick(2)],
                minimal: true,
            }
        }
        1 => {
            return RouteDecision::Output {
                port: buf[0],
                minimal: true,
            }
        }
        _ => {}
    }
    if !allow_nonminimal {
        return RouteDecision::Backtrack;
    }
    for p in [Port::Up, Port::Down, Port::Right, Port::Left] {
        if p != q.input_port && q.port_free[p.index()] {
            buf[n] = p;
            n += 1;
        }
    }
    match n {
        0 => RouteDecision::Backtrack,
        1 => RouteDecision::Output {
            port: buf[0],
            minimal: false,
        },
        n => RouteDecision::Output {
            port: buf[lfsr.pick(n)],
            minimal: false,
        },
    }
}

/// X-first dimension-order routing.
pub fn dor_route(current: usize, destination: usize, cols: usize) -> Port {
    let (cr, cc) = (current / cols, current % cols);
    let (dr, dc) = (destination / cols, destination % cols);
    if dc > cc {
        Port::Right
    } else if dc < cc {
        Port::Left
    } else if dr > cr {
        Port::Up
    } else if dr < cr {
        Port::Down
    } else {
        Port::Ejection
    }
}

/// Time for a scout to cross `hops` links at `per_hop` ns each.
pub fn scout_hop_delay(hops: u64, per_hop: Nanos) -> Nanos {
    hops * per_hop
}

/// Round trip for a circuit with `mesh_hops` router-to-router links. A path
/// with no mesh hops still crosses one link in each direction.
pub fn scout_round_trip(mesh_hops: u64, per_hop: Nanos) -> Nanos {
    2 * scout_hop_delay(mesh_hops.max(1), per_hop)
}

// ---------------------------------------------------------------------------
// Scout walk

/// One reserved traversal of a router.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub router: usize,
    pub entry_port: Port,
    pub exit_port: Port,
}

/// A reserved path from a flash controller to a chip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Circuit {
    pub circuit_id: usize,
    pub source_fc: usize,
    pub dest_chip: usize,
    /// Injection link, mesh links in order, ejection link.
    pub links: Vec<LinkId>,
    pub hops: Vec<Hop>,
    pub established_at: Nanos,
}

impl Circuit {
    pub fn mesh_hops(&self) -> usize {
        self.links.len().saturating_sub(2)
    }

    /// Links between the controller and the chip, counting injection and ejection.
    pub fn distance(&self) -> usize {
        self.mesh_hops() + 1
    }

    /// Tear the circuit down: remove its table rows and free its links.
    pub fn release(&self, mesh: &mut Mesh) -> Result<(), SimError> {
        for hop in self.hops.iter().rev() {
            mesh.routers[hop.router]
                .table
                .remove(self.circuit_id)
                .map_err(|e| {
                    SimError::Invariant(format!(
                        "circuit {} missing table entry at router {}: {e:?}",
                        self.circuit_id, hop.router
                    ))
                })?;
        }
        for &l in &self.links {
            mesh.release(l, self.circuit_id)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoutStatus {
    Walking,
    Arrived,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Moved across a mesh link to `to`.
    Forward { to: usize },
    /// Went back across a mesh link to `to`, releasing it.
    Backtrack { to: usize },
    /// Ejection link reserved; the circuit is complete.
    Arrived,
    /// Backtracked past the source router; nothing remains reserved.
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoutStats {
    /// Link traversals, forward and backward.
    pub hop_events: u64,
    pub forward_hops: u64,
    pub backtracks: u64,
    pub misroutes: u64,
    pub max_visits: u8,
}

/// In-flight state of one scout packet.
#[derive(Debug, Clone)]
pub struct ScoutPacket {
    pub packet_id: usize,
    pub source_fc: usize,
    pub dest_chip: usize,
    pub mode: ScoutMode,
    pub status: ScoutStatus,
    pub stats: ScoutStats,
    allow_nonminimal: bool,
    current: usize,
    input_port: Port,
    injection: LinkId,
    path: Vec<Hop>,
    visits: Vec<u8>,
    /// The last move entered `current` over a forward hop.
    arrived_forward: bool,
    /// Exit ports already taken at each router this attempt, as a bitmask.
    tried: Vec<u8>,
}

impl ScoutPacket {
    /// Launch a scout from controller `fc`; claims the controller's injection link.
    pub fn launch(
        mesh: &mut Mesh,
        fc: usize,
        dest_chip: usize,
        mode: RoutingMode,
    ) -> Result<Self, SimError> {
        if fc >= mesh.controller_count() || dest_chip >= mesh.router_count() {
            return Err(SimError::AddressOutOfRange(format!(
                "scout fc={fc} dest={dest_chip}"
            )));
        }
        let injection = mesh.injection[fc];
        mesh.reserve(injection, fc).map_err(|b| {
            SimError::Invariant(format!(
                "controller {fc} injection link held by {}",
                b.held_by
            ))
        })?;
        let n = mesh.router_count();
        let source = mesh.controller_router(fc);
        let mut visits = vec![0u8; n];
        visits[source] = 1;
        Ok(Self {
            packet_id: fc,
            source_fc: fc,
            dest_chip,
            mode: ScoutMode::Reserve,
            status: ScoutStatus::Walking,
            stats: ScoutStats {
                max_visits: 1,
                ..ScoutStats::default()
            },
            allow_nonminimal: mode != RoutingMode::VeniceMinimalOnly,
            current: source,
            input_port: Port::Injection,
            injection,
            path: Vec::new(),
            visits,
            arrived_forward: false,
            tried: vec![0u8; n],
        })
    }

    pub fn current_router(&self) -> usize {
        self.current
    }

    pub fn visits(&self, router: usize) -> u8 {
        self.visits[router]
    }

    pub fn path(&self) -> &[Hop] {
        &self.path
    }

    /// Header and tail flits as they would appear on the wire right now.
    pub fn flits(&self) -> (u8, u8) {
        let h = encode_flit(FlitKind::Header, self.mode, self.dest_chip as u32).unwrap_or(0);
        let t = encode_flit(FlitKind::Tail, self.mode, self.source_fc as u32).unwrap_or(0);
        (h, t)
    }

    fn query(&self, mesh: &Mesh) -> RoutingQuery {
        let router = &mesh.routers[self.current];
        let mut port_free = [false; 6];
        for p in [Port::Up, Port::Down, Port::Left, Port::Right, Port::Ejection] {
            let tried = self.tried[self.current] & (1 << p.index()) != 0;
            port_free[p.index()] = p != self.input_port
                && !tried
                && router.link(p).is_some_and(|l| mesh.link(l).is_free());
        }
        RoutingQuery {
            packet_id: self.packet_id,
            current: self.current,
            destination: self.dest_chip,
            input_port: self.input_port,
            port_free,
            rows: mesh.rows,
            cols: mesh.cols,
        }
    }

    /// Make one routing decision at the current router.
    pub fn step(&mut self, mesh: &mut Mesh) -> Result<StepOutcome, SimError> {
        if self.status != ScoutStatus::Walking {
            return Err(SimError::Invariant("step on a finished scout".into()));
        }
        // Arriving for the fourth time (third revisit) turns the scout back.
        // Resuming at a router after a backtrack is not a new visit.
        if self.arrived_forward && self.visits[self.current] >= MAX_VISITS {
            return self.backtrack_step(mesh);
        }
        let q = self.query(mesh);
        let decision = find_output_port(&q, &mut mesh.routers[self.current].lfsr, self.allow_nonminimal);
        let (port, minimal) = match decision {
            RouteDecision::Backtrack => return self.backtrack_step(mesh),
            RouteDecision::Output { port, minimal } => (port, minimal),
        };
        let here = self.current;
        self.tried[here] |= 1 << port.index();
        let link = mesh.routers[here]
            .link(port)
            .ok_or_else(|| SimError::Invariant(format!("router {here} has no {port:?} port")))?;
        mesh.reserve(link, self.packet_id).map_err(|b| {
            SimError::Invariant(format!(
                "scout {} picked busy link {} (held by {})",
                self.packet_id, link.0, b.held_by
            ))
        })?;
        mesh.routers[here]
            .table
            .insert(ReservationEntry::new(self.packet_id, self.input_port, port))
            .map_err(|e| {
                SimError::Invariant(format!(
                    "table insert at router {here} for packet {}: {e:?}",
                    self.packet_id
                ))
            })?;
        self.mode = ScoutMode::Reserve;
        self.path.push(Hop {
            router: here,
            entry_port: self.input_port,
            exit_port: port,
        });
        if !minimal {
            self.stats.misroutes += 1;
        }
        if port == Port::Ejection {
            self.status = ScoutStatus::Arrived;
            return Ok(StepOutcome::Arrived);
        }
        let next = mesh
            .neighbor(here, port)
            .ok_or_else(|| SimError::Invariant(format!("port {port:?} of {here} leads nowhere")))?;
        self.current = next;
        self.input_port = port.opposite();
        self.arrived_forward = true;
        self.visits[next] = self.visits[next].saturating_add(1);
        self.stats.max_visits = self.stats.max_visits.max(self.visits[next]);
        self.stats.hop_events += 1;
        self.stats.forward_hops += 1;
        Ok(StepOutcome::Forward { to: next })
    }

    /// Retreat one hop in cancel mode: drop the upstream router's entry for
    /// this packet, free the link between the two routers, and resume at the
    /// upstream router. At the source router this returns the scout to its
    /// controller and frees the injection link.
    pub fn backtrack_step(&mut self, mesh: &mut Mesh) -> Result<StepOutcome, SimError> {
        self.mode = ScoutMode::Cancel;
        self.arrived_forward = false;
        let Some(hop) = self.path.pop() else {
            mesh.release(self.injection, self.packet_id)?;
            self.status = ScoutStatus::Failed;
            self.stats.hop_events += 1;
            return Ok(StepOutcome::Failed);
        };
        let removed = mesh.routers[hop.router]
            .table
            .remove(self.packet_id)
            .map_err(|e| SimError::Invariant(format!("backtrack at {}: {e:?}", hop.router)))?;
        debug_assert_eq!(
            (removed.entry_port, removed.exit_port),
            (hop.entry_port, hop.exit_port)
        );
        let link = mesh.routers[hop.router]
            .link(hop.exit_port)
            .ok_or_else(|| SimError::Invariant("backtrack over missing link".into()))?;
        mesh.release(link, self.packet_id)?;
        self.current = hop.router;
        self.input_port = hop.entry_port;
        self.stats.hop_events += 1;
        self.stats.backtracks += 1;
        Ok(StepOutcome::Backtrack { to: hop.router })
    }

    /// Convert an arrived scout into its circuit.
    pub fn into_circuit(self, mesh: &Mesh, established_at: Nanos) -> Result<Circuit, SimError> {
        if self.status != ScoutStatus::Arrived {
            return Err(SimError::Invariant("circuit from unfinished scout".into()));
        }
        let mut links = Vec::with_capacity(self.path.len() + 1);
        links.push(self.injection);
        for hop in &self.path {
            let l = mesh.routers[hop.router]
                .link(hop.exit_port)
                .ok_or_else(|| SimError::Invariant("path over missing link".into()))?;
            links.push(l);
        }
        Ok(Circuit {
            circuit_id: self.packet_id,
            source_fc: self.source_fc,
            dest_chip: self.dest_chip,
            links,
            hops: self.path,
            established_at,
        })
    }
}

/// Reserve a circuit along an explicit router path, as if a scout from
/// controller `fc` had walked it. `routers` starts at the controller's
/// router and ends at the destination chip's router.
///
/// Nothing is left reserved when this fails.
pub fn install_circuit(mesh: &mut Mesh, fc: usize, routers: &[usize]) -> Result<Circuit, SimError> {
    let bad = |m: String| SimError::Invariant(format!("install_circuit: {m}"));
    if fc >= mesh.controller_count() || routers.first() != Some(&mesh.controller_router(fc)) {
        return Err(bad(format!("path must start at controller {fc}'s router")));
    }
    let mut links = vec![mesh.injection[fc]];
    let mut hops = Vec::with_capacity(routers.len());
    let mut entry = Port::Injection;
    for (i, &r) in routers.iter().enumerate() {
        let exit = match routers.get(i + 1) {
            None => Port::Ejection,
            Some(&next) => Port::MESH
                .into_iter()
                .find(|&p| mesh.neighbor(r, p) == Some(next))
                .ok_or_else(|| bad(format!("routers {r} and {next} are not adjacent")))?,
        };
        hops.push(Hop { router: r, entry_port: entry, exit_port: exit });
        links.push(mesh.routers[r].link(exit).expect("port exists"));
        entry = exit.opposite();
    }
    let dest_chip = *routers.last().expect("non-empty");
    let mut done = 0;
    let mut failure = None;
    for &l in &links {
        if let Err(b) = mesh.reserve(l, fc) {
            failure = Some(bad(format!("link {} held by {}", l.0, b.held_by)));
            break;
        }
        done += 1;
    }
    let mut inserted = 0;
    if failure.is_none() {
        for h in &hops {
            if let Err(e) = mesh.routers[h.router]
                .table
                .insert(ReservationEntry::new(fc, h.entry_port, h.exit_port))
            {
                failure = Some(bad(format!("router {} table: {e:?}", h.router)));
                break;
            }
            inserted += 1;
        }
    }
    if let Some(err) = failure {
        for h in hops[..inserted].iter().rev() {
            let _ = mesh.routers[h.router].table.remove(fc);
        }
        for &l in &links[..done] {
            mesh.release(l, fc)?;
        }
        return Err(err);
    }
    Ok(Circuit {
        circuit_id: fc,
        source_fc: fc,
        dest_chip,
        links,
        hops,
        established_at: 0,
    })
}

/// Whether any path of free links joins controller `fc` to `dest_chip`
/// (injection and ejection included). With `minimal_only`, only hops that
/// reduce the distance count. A scout cannot succeed when this is false.
pub fn free_path_exists(mesh: &Mesh, fc: usize, dest_chip: usize, minimal_only: bool) -> bool {
    if !mesh.link(mesh.injection[fc]).is_free() || !mesh.link(mesh.ejection[dest_chip]).is_free() {
        return false;
    }
    let start = mesh.controller_router(fc);
    let mut seen = vec![false; mesh.router_count()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(r) = stack.pop() {
        if r == dest_chip {
            return true;
        }
        for p in Port::MESH {
            let Some(n) = mesh.neighbor(r, p) else { continue };
            if seen[n] || !mesh.port_link_free(r, p) {
                continue;
            }
            if minimal_only && mesh.distance(n, dest_chip) >= mesh.distance(r, dest_chip) {
                continue;
            }
            seen[n] = true;
            stack.push(n);
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReservationFailed {
    pub stats: ScoutStats,
}

/// Run a scout to completion with no other traffic interleaved.
pub fn reserve_path(
    mesh: &mut Mesh,
    source_fc: usize,
    dest_chip: usize,
    mode: RoutingMode,
) -> Result<Result<(Circuit, ScoutStats), ReservationFailed>, SimError> {
    let mut scout = ScoutPacket::launch(mesh, source_fc, dest_chip, mode)?;
    let bound = 8 * mesh.router_count() as u64 + 1;
    loop {
        match scout.step(mesh)? {
            StepOutcome::Arrived => {
                let stats = scout.stats;
                return Ok(Ok((scout.into_circuit(mesh, 0)?, stats)));
            }
            StepOutcome::Failed => return Ok(Err(ReservationFailed { stats: scout.stats })),
            StepOutcome::Forward { .. } | StepOutcome::Backtrack { .. } => {}
        }
        if scout.stats.hop_events > bound {
            return Err(SimError::Invariant(format!(
                "scout {} exceeded {} hop events",
                scout.packet_id, bound
            )));
        }
    }
}
