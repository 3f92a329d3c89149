//! Topologies for the six architectures: shared-bus channels, the
//! horizontal/vertical bus grid, the router mesh of flash nodes, and one
//! dedicated channel per chip.
//!
//! Mesh routers are numbered row-major (`id = row * cols + col`). `Up`
//! leads to `row + 1` and `Right` to `col + 1`, so a destination with a
//! larger row index lies "up". Flash controller `r` attaches to the
//! injection port of router `(r, 0)`.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::flash::FlashGeometry;
use crate::sim::{Lfsr2, Nanos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    BaselineBus,
    PssdBus,
    PnssdGrid,
    NossdMesh,
    VeniceMesh,
    IdealDirect,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 6] = [
        TopologyKind::BaselineBus,
        TopologyKind::PssdBus,
        TopologyKind::PnssdGrid,
        TopologyKind::NossdMesh,
        TopologyKind::VeniceMesh,
        TopologyKind::IdealDirect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::BaselineBus => "baseline-bus",
            TopologyKind::PssdBus => "pssd-bus",
            TopologyKind::PnssdGrid => "pnssd-grid",
            TopologyKind::NossdMesh => "nossd-mesh",
            TopologyKind::VeniceMesh => "venice-mesh",
            TopologyKind::IdealDirect => "ideal-direct",
        }
    }

    pub fn is_mesh(self) -> bool {
        matches!(self, TopologyKind::NossdMesh | TopologyKind::VeniceMesh)
    }
}

impl std::fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopologyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = TopologyKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown architecture `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Router ports. Only the four mesh directions have a 2-bit table encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    Up,
    Down,
    Left,
    Right,
    Injection,
    Ejection,
}

impl Port {
    pub const MESH: [Port; 4] = [Port::Up, Port::Down, Port::Left, Port::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// 2-bit field value stored in a reservation table row.
    pub fn code(self) -> Option<u8> {
        match self {
            Port::Up => Some(0b00),
            Port::Down => Some(0b01),
            Port::Left => Some(0b10),
            Port::Right => Some(0b11),
            Port::Injection | Port::Ejection => None,
        }
    }

    pub fn from_code(code: u8) -> Option<Port> {
        match code {
            0b00 => Some(Port::Up),
            0b01 => Some(Port::Down),
            0b10 => Some(Port::Left),
            0b11 => Some(Port::Right),
            _ => None,
        }
    }

    /// The port on the neighbouring router that faces back through the same link.
    pub fn opposite(self) -> Port {
        match self {
            Port::Up => Port::Down,
            Port::Down => Port::Up,
            Port::Left => Port::Right,
            Port::Right => Port::Left,
            Port::Injection => Port::Injection,
            Port::Ejection => Port::Ejection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkEnd {
    Router { router: usize, port: Port },
    Controller(usize),
    Chip(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Mesh,
    Injection,
    Ejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkStatus {
    #[default]
    Free,
    Reserved(usize),
}

#[derive(Debug, Clone)]
pub struct Link {
    pub id: LinkId,
    pub kind: LinkKind,
    pub ends: [LinkEnd; 2],
    pub status: LinkStatus,
}

impl Link {
    pub fn is_free(&self) -> bool {
        self.status == LinkStatus::Free
    }
}

/// Outcome of a failed [`Mesh::reserve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkBusy {
    pub held_by: usize,
}

/// One row of a router reservation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReservationEntry {
    pub valid: bool,
    pub packet_id: usize,
    pub entry_port: Port,
    pub exit_port: Port,
}

impl ReservationEntry {
    pub fn new(packet_id: usize, entry_port: Port, exit_port: Port) -> Self {
        Self {
            valid: true,
            packet_id,
            entry_port,
            exit_port,
        }
    }

    fn touches(&self, port: Port) -> bool {
        self.entry_port == port || self.exit_port == port
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableError {
    /// A valid entry already uses one of the ports.
    Conflict,
    /// All `n` rows are valid.
    Full,
    /// Packet id not below the number of flash controllers, or entry == exit.
    Malformed,
    NotFound,
}

/// Per-router table binding scout packet ids to bidirectional port pairs.
#[derive(Debug, Clone)]
pub struct ReservationTable {
    rows: Vec<ReservationEntry>,
    stamps: Vec<u64>,
    next_stamp: u64,
}

impl ReservationTable {
    /// A table with one row per flash controller.
    pub fn new(capacity: usize) -> Self {
        let blank = ReservationEntry {
            valid: false,
            packet_id: 0,
            entry_port: Port::Up,
            exit_port: Port::Up,
        };
        Self {
            rows: vec![blank; capacity],
            stamps: vec![0; capacity],
            next_stamp: 1,
        }
    }

    pub fn capacity(&self) -> usize {
        self.rows.len()
    }

    pub fn valid_entries(&self) -> impl Iterator<Item = &ReservationEntry> {
        self.rows.iter().filter(|r| r.valid)
    }

    pub fn len(&self) -> usize {
        self.valid_entries().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn port_in_use(&self, port: Port) -> bool {
        self.valid_entries().any(|e| e.touches(port))
    }

    pub fn insert(&mut self, entry: ReservationEntry) -> Result<(), TableError> {
        if entry.packet_id >= self.capacity() || entry.entry_port == entry.exit_port {
            return Err(TableError::Malformed);
        }
        if self
            .valid_entries()
            .any(|e| e.touches(entry.entry_port) || e.touches(entry.exit_port))
        {
            return Err(TableError::Conflict);
        }
        let slot = self
            .rows
            .iter()
            .position(|r| !r.valid)
            .ok_or(TableError::Full)?;
        self.rows[slot] = ReservationEntry {
            valid: true,
            ..entry
        };
        self.stamps[slot] = self.next_stamp;
        self.next_stamp += 1;
        Ok(())
    }

    /// Invalidate the most recently inserted entry for `packet_id`.
    pub fn remove(&mut self, packet_id: usize) -> Result<ReservationEntry, TableError> {
        let slot = (0..self.rows.len())
            .filter(|&i| self.rows[i].valid && self.rows[i].packet_id == packet_id)
            .max_by_key(|&i| self.stamps[i])
            .ok_or(TableError::NotFound)?;
        self.rows[slot].valid = false;
        Ok(self.rows[slot])
    }

    pub fn entries_for(&self, packet_id: usize) -> impl Iterator<Item = &ReservationEntry> {
        self.valid_entries().filter(move |e| e.packet_id == packet_id)
    }

    /// Entry/exit port uniqueness across valid rows.
    pub fn check_invariants(&self) -> Result<(), String> {
        let valid: Vec<_> = self.valid_entries().collect();
        for (i, a) in valid.iter().enumerate() {
            if a.entry_port == a.exit_port {
                return Err(format!("entry uses one port twice: {a:?}"));
            }
            for b in &valid[i + 1..] {
                if a.touches(b.entry_port) || a.touches(b.exit_port) {
                    return Err(format!("entries share a port: {a:?} / {b:?}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Router {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    /// Link attached to each port, indexed by [`Port::index`].
    pub ports: [Option<LinkId>; 6],
    pub table: ReservationTable,
    pub lfsr: Lfsr2,
}

impl Router {
    pub fn link(&self, port: Port) -> Option<LinkId> {
        self.ports[port.index()]
    }
}

/// A 2D mesh of flash nodes with flash controllers on the left edge.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub rows: usize,
    pub cols: usize,
    pub routers: Vec<Router>,
    pub links: Vec<Link>,
    /// Injection link of each flash controller.
    pub injection: Vec<LinkId>,
    /// Ejection link of each chip (chip index == router index).
    pub ejection: Vec<LinkId>,
}

impl Mesh {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        let n_fc = rows;
        let mut routers: Vec<Router> = (0..rows * cols)
            .map(|id| Router {
                id,
                row: id / cols,
                col: id % cols,
                ports: [None; 6],
                table: ReservationTable::new(n_fc),
                lfsr: Lfsr2::for_router(seed, id),
            })
            .collect();
        let mut links = Vec::new();
        let add = |links: &mut Vec<Link>, kind, a, b| {
            let id = LinkId(links.len());
            links.push(Link {
                id,
                kind,
                ends: [a, b],
                status: LinkStatus::Free,
            });
            id
        };
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    let nb = id + 1;
                    let l = add(
                        &mut links,
                        LinkKind::Mesh,
                        LinkEnd::Router { router: id, port: Port::Right },
                        LinkEnd::Router { router: nb, port: Port::Left },
                    );
                    routers[id].ports[Port::Right.index()] = Some(l);
                    routers[nb].ports[Port::Left.index()] = Some(l);
                }
                if r + 1 < rows {
                    let nb = id + cols;
                    let l = add(
                        &mut links,
                        LinkKind::Mesh,
                        LinkEnd::Router { router: id, port: Port::Up },
                        LinkEnd::Router { router: nb, port: Port::Down },
                    );
                    routers[id].ports[Port::Up.index()] = Some(l);
                    routers[nb].ports[Port::Down.index()] = Some(l);
                }
            }
        }
        let injection = (0..n_fc)
            .map(|fc| {
                let router = fc * cols;
                let l = add(
                    &mut links,
                    LinkKind::Injection,
                    LinkEnd::Controller(fc),
                    LinkEnd::Router { router, port: Port::Injection },
                );
                routers[router].ports[Port::Injection.index()] = Some(l);
                l
            })
            .collect();
        let ejection = (0..rows * cols)
            .map(|router| {
                let l = add(
                    &mut links,
                    LinkKind::Ejection,
                    LinkEnd::Router { router, port: Port::Ejection },
                    LinkEnd::Chip(router),
                );
                routers[router].ports[Port::Ejection.index()] = Some(l);
                l
            })
            .collect();
        Self {
            rows,
            cols,
            routers,
            links,
            injection,
            ejection,
        }
    }

    pub fn router_count(&self) -> usize {
        self.routers.len()
    }

    pub fn controller_count(&self) -> usize {
        self.injection.len()
    }

    pub fn mesh_link_count(&self) -> usize {
        self.links.iter().filter(|l| l.kind == LinkKind::Mesh).count()
    }

    pub fn controller_router(&self, fc: usize) -> usize {
        fc * self.cols
    }

    /// Router on the far side of `port`, if the port leads to another router.
    pub fn neighbor(&self, router: usize, port: Port) -> Option<usize> {
        let (r, c) = (router / self.cols, router % self.cols);
        match port {
            Port::Up if r + 1 < self.rows => Some(router + self.cols),
            Port::Down if r > 0 => Some(router - self.cols),
            Port::Right if c + 1 < self.cols => Some(router + 1),
            Port::Left if c > 0 => Some(router - 1),
            _ => None,
        }
    }

    /// Manhattan distance between two routers.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        let (ar, ac) = (a / self.cols, a % self.cols);
        let (br, bc) = (b / self.cols, b % self.cols);
        ar.abs_diff(br) + ac.abs_diff(bc)
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn port_link_free(&self, router: usize, port: Port) -> bool {
        self.routers[router]
            .link(port)
            .is_some_and(|l| self.links[l.0].is_free())
    }

    /// Claim a link for `circuit`. A held link, even by the same circuit, is busy.
    pub fn reserve(&mut self, link: LinkId, circuit: usize) -> Result<(), LinkBusy> {
        match self.links[link.0].status {
            LinkStatus::Free => {
                self.links[link.0].status = LinkStatus::Reserved(circuit);
                Ok(())
            }
            LinkStatus::Reserved(held_by) => Err(LinkBusy { held_by }),
        }
    }

    pub fn release(&mut self, link: LinkId, circuit: usize) -> Result<(), SimError> {
        match self.links[link.0].status {
            LinkStatus::Reserved(c) if c == circuit => {
                self.links[link.0].status = LinkStatus::Free;
                Ok(())
            }
            other => Err(SimError::Invariant(format!(
                "circuit {circuit} releasing link {} in state {other:?}",
                link.0
            ))),
        }
    }

    pub fn reserved_links(&self, circuit: usize) -> impl Iterator<Item = LinkId> + '_ {
        self.links
            .iter()
            .filter(move |l| l.status == LinkStatus::Reserved(circuit))
            .map(|l| l.id)
    }

    /// Port-uniqueness of every table, plus agreement between valid entries
    /// and link ownership: both ports of an entry must be held by its packet.
    pub fn check_tables(&self) -> Result<(), String> {
        for r in &self.routers {
            r.table
                .check_invariants()
                .map_err(|e| format!("router {}: {e}", r.id))?;
            for e in r.table.valid_entries() {
                for p in [e.entry_port, e.exit_port] {
                    let Some(l) = r.link(p) else {
                        return Err(format!("router {}: entry on missing port {p:?}", r.id));
                    };
                    if self.links[l.0].status != LinkStatus::Reserved(e.packet_id) {
                        return Err(format!(
                            "router {}: entry {e:?} but link on {p:?} is {:?}",
                            r.id, self.links[l.0].status
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A shared bus channel (or a dedicated point-to-point channel) with FIFO
/// booking: each acquisition starts no earlier than the end of the previous one.
#[derive(Debug, Clone)]
pub struct Channel {
    pub id: usize,
    pub chips: Vec<usize>,
    /// Transfer speed multiplier relative to the base channel rate.
    pub speedup: u64,
    free_at: Nanos,
    busy_ns: Nanos,
}

impl Channel {
    pub fn new(id: usize, chips: Vec<usize>, speedup: u64) -> Self {
        Self {
            id,
            chips,
            speedup,
            free_at: 0,
            busy_ns: 0,
        }
    }

    pub fn free_at(&self) -> Nanos {
        self.free_at
    }

    pub fn is_free(&self, now: Nanos) -> bool {
        self.free_at <= now
    }

    /// Total booked time, for power accounting.
    pub fn busy_ns(&self) -> Nanos {
        self.busy_ns
    }

    /// Scale a base-rate duration to this channel's rate.
    pub fn scaled(&self, base: Nanos) -> Nanos {
        base.div_ceil(self.speedup)
    }

    /// Book `duration` ns of exclusive use starting no earlier than `now`.
    /// Returns the grant time.
    pub fn bus_acquire(&mut self, now: Nanos, duration: Nanos) -> Nanos {
        assert!(duration > 0, "bus transaction must have positive duration");
        let grant = now.max(self.free_at);
        self.free_at = grant + duration;
        self.busy_ns += duration;
        grant
    }
}

/// Link timing for mesh networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// Bytes moved per link cycle.
    pub link_width: u64,
    /// Link cycle in ns.
    pub link_cycle: Nanos,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            link_width: 1,
            link_cycle: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub kind: TopologyKind,
    pub rows: usize,
    pub cols: usize,
    pub link: LinkParams,
    /// Bus channels; empty for mesh kinds.
    pub channels: Vec<Channel>,
    /// Channels that reach each chip.
    pub chip_channels: Vec<Vec<usize>>,
    pub mesh: Option<Mesh>,
}

impl Topology {
    pub fn controller_count(&self) -> usize {
        match self.kind {
            TopologyKind::NossdMesh | TopologyKind::VeniceMesh => self.rows,
            _ => self.channels.len(),
        }
    }

    pub fn router_count(&self) -> usize {
        self.mesh.as_ref().map_or(0, Mesh::router_count)
    }
}

/// Wire up the topology of `kind` for `geometry`.
pub fn build_topology(
    kind: TopologyKind,
    geometry: &FlashGeometry,
    link: LinkParams,
    seed: u64,
) -> Result<Topology, SimError> {
    geometry.validate()?;
    let (rows, cols) = (geometry.rows, geometry.chips_per_row);
    let n_chips = rows * cols;
    let mut chip_channels = vec![Vec::new(); n_chips];
    let mut channels = Vec::new();
    let mut mesh = None;
    match kind {
        TopologyKind::BaselineBus | TopologyKind::PssdBus => {
            let speedup = if kind == TopologyKind::PssdBus { 2 } else { 1 };
            for r in 0..rows {
                let chips: Vec<usize> = (0..cols).map(|c| r * cols + c).collect();
                for &chip in &chips {
                    chip_channels[chip].push(r);
                }
                channels.push(Channel::new(r, chips, speedup));
            }
        }
        TopologyKind::PnssdGrid => {
            if rows != cols {
                return Err(SimError::InvalidGeometry(format!(
                    "pnssd-grid requires a square chip array, got {rows}x{cols}"
                )));
            }
            for r in 0..rows {
                let chips: Vec<usize> = (0..cols).map(|c| r * cols + c).collect();
                for &chip in &chips {
                    chip_channels[chip].push(r);
                }
                channels.push(Channel::new(r, chips, 1));
            }
            for c in 0..cols {
                let id = rows + c;
                let chips: Vec<usize> = (0..rows).map(|r| r * cols + c).collect();
                for &chip in &chips {
                    chip_channels[chip].push(id);
                }
                channels.push(Channel::new(id, chips, 1));
            }
        }
        TopologyKind::NossdMesh | TopologyKind::VeniceMesh => {
            mesh = Some(Mesh::new(rows, cols, seed));
        }
        TopologyKind::IdealDirect => {
            // One dedicated channel per die, so dies of one chip never wait
            // on each other.
            for (chip, chans) in chip_channels.iter_mut().enumerate() {
                for _ in 0..geometry.dies_per_chip {
                    chans.push(channels.len());
                    channels.push(Channel::new(channels.len(), vec![chip], 1));
                }
            }
        }
    }
    Ok(Topology {
        kind,
        rows,
        cols,
        link,
        channels,
        chip_channels,
        mesh,
    })
}
