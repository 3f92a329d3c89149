//! Flash array geometry, timing presets, and the per-die busy/idle model.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::sim::Nanos;

/// Flash channel I/O rate shared by both presets, in bytes per nanosecond.
pub const CHANNEL_RATE_BYTES_PER_NS: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlashGeometry {
    /// Channels for bus designs, mesh rows for network designs.
    pub rows: usize,
    pub chips_per_row: usize,
    pub dies_per_chip: usize,
    pub planes_per_die: usize,
    pub blocks_per_plane: usize,
    pub pages_per_block: usize,
    pub page_size: u64,
}

impl FlashGeometry {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("rows", self.rows as u64),
            ("chips_per_row", self.chips_per_row as u64),
            ("dies_per_chip", self.dies_per_chip as u64),
            ("planes_per_die", self.planes_per_die as u64),
            ("blocks_per_plane", self.blocks_per_plane as u64),
            ("pages_per_block", self.pages_per_block as u64),
            ("page_size", self.page_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(SimError::InvalidGeometry(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn total_chips(&self) -> usize {
        self.rows * self.chips_per_row
    }

    pub fn pages_per_plane(&self) -> u64 {
        (self.blocks_per_plane * self.pages_per_block) as u64
    }

    pub fn planes_per_chip(&self) -> usize {
        self.dies_per_chip * self.planes_per_die
    }

    pub fn total_pages(&self) -> u64 {
        self.total_chips() as u64 * self.planes_per_chip() as u64 * self.pages_per_plane()
    }

    /// Row (channel) and column (way) of a chip index. Chips are numbered row-major.
    pub fn chip_coords(&self, chip: usize) -> (usize, usize) {
        (chip / self.chips_per_row, chip % self.chips_per_row)
    }

    pub fn contains(&self, a: &PhysicalPageAddress) -> bool {
        a.chip < self.total_chips()
            && a.die < self.dies_per_chip
            && a.plane < self.planes_per_die
            && a.block < self.blocks_per_plane
            && a.page < self.pages_per_block
    }

    /// Performance-optimized preset: 8x8 chips, 1 die, 2 planes, 1024
    /// blocks/plane, 768 pages/block, 4 KiB pages.
    pub fn performance_optimized() -> Self {
        Self {
            rows: 8,
            chips_per_row: 8,
            dies_per_chip: 1,
            planes_per_die: 2,
            blocks_per_plane: 1024,
            pages_per_block: 768,
            page_size: 4096,
        }
    }

    /// Cost-optimized preset: 1024 blocks per die split over two planes, 16 KiB pages.
    pub fn cost_optimized() -> Self {
        Self {
            rows: 8,
            chips_per_row: 8,
            dies_per_chip: 1,
            planes_per_die: 2,
            blocks_per_plane: 512,
            pages_per_block: 768,
            page_size: 16384,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlashTimingConfig {
    pub t_read: Nanos,
    pub t_program: Nanos,
    pub t_erase: Nanos,
    pub cmd_transfer_time: Nanos,
    pub page_transfer_time_bus: Nanos,
}

impl FlashTimingConfig {
    pub fn performance_optimized() -> Self {
        Self {
            t_read: 3_000,
            t_program: 100_000,
            t_erase: 1_000_000,
            cmd_transfer_time: 10,
            page_transfer_time_bus: bus_page_transfer_time(4096),
        }
    }

    pub fn cost_optimized() -> Self {
        Self {
            t_read: 45_000,
            t_program: 650_000,
            t_erase: 3_500_000,
            cmd_transfer_time: 10,
            page_transfer_time_bus: bus_page_transfer_time(16384),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.t_read == 0
            || self.t_program == 0
            || self.t_erase == 0
            || self.cmd_transfer_time == 0
            || self.page_transfer_time_bus == 0
        {
            return Err(SimError::InvalidGeometry(
                "all flash latencies must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn latency(&self, op: FlashOp) -> Nanos {
        match op {
            FlashOp::Read => self.t_read,
            FlashOp::Program => self.t_program,
            FlashOp::Erase => self.t_erase,
        }
    }
}

/// Bus time for one page at the 1.2 GB/s channel rate, plus a fixed
/// overhead sized so that a 4 KiB page takes exactly 4 µs.
pub fn bus_page_transfer_time(page_size: u64) -> Nanos {
    let raw = |bytes: u64| (bytes as f64 / CHANNEL_RATE_BYTES_PER_NS).ceil() as Nanos;
    let overhead = 4_000 - raw(4096);
    raw(page_size) + overhead
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhysicalPageAddress {
    pub chip: usize,
    pub die: usize,
    pub plane: usize,
    pub block: usize,
    pub page: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlashOp {
    Read,
    Program,
    Erase,
}

/// Two addresses can form one multi-plane operation when they sit on the
/// same die, on different planes, at the same block and page offset.
pub fn can_pair_multiplane(a: &PhysicalPageAddress, b: &PhysicalPageAddress) -> bool {
    a.chip == b.chip
        && a.die == b.die
        && a.plane != b.plane
        && a.block == b.block
        && a.page == b.page
}

/// Pages touched by a request of `size_bytes`, ignoring alignment.
pub fn page_count_for_request(size_bytes: u64, page_size: u64) -> u64 {
    assert!(size_bytes >= 1 && page_size >= 1);
    size_bytes.div_ceil(page_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DieStatus {
    #[default]
    Idle,
    Busy {
        op: FlashOp,
        start: Nanos,
        until: Nanos,
    },
}

/// Busy/idle state of every die on one chip.
#[derive(Debug, Clone)]
pub struct FlashChipState {
    pub chip: usize,
    dies: Vec<DieStatus>,
}

impl FlashChipState {
    pub fn new(chip: usize, geometry: &FlashGeometry) -> Self {
        Self {
            chip,
            dies: vec![DieStatus::Idle; geometry.dies_per_chip],
        }
    }

    pub fn die_status(&self, die: usize) -> DieStatus {
        self.dies[die]
    }

    pub fn is_idle(&self, die: usize, now: Nanos) -> bool {
        match self.dies[die] {
            DieStatus::Idle => true,
            DieStatus::Busy { until, .. } => until <= now,
        }
    }

    /// Start `op` on the die addressed by `addr`; returns the completion time.
    pub fn start_flash_op(
        &mut self,
        op: FlashOp,
        addr: &PhysicalPageAddress,
        timing: &FlashTimingConfig,
        now: Nanos,
    ) -> Result<Nanos, SimError> {
        self.start_multiplane_op(op, std::slice::from_ref(addr), timing, now)
    }

    /// Start one operation spanning one or two planes of the same die.
    pub fn start_multiplane_op(
        &mut self,
        op: FlashOp,
        addrs: &[PhysicalPageAddress],
        timing: &FlashTimingConfig,
        now: Nanos,
    ) -> Result<Nanos, SimError> {
        let first = addrs
            .first()
            .ok_or_else(|| SimError::Invariant("flash op with no address".into()))?;
        if first.chip != self.chip || first.die >= self.dies.len() {
            return Err(SimError::AddressOutOfRange(format!("{first:?}")));
        }
        for (i, a) in addrs.iter().enumerate().skip(1) {
            if addrs[..i].iter().any(|b| !can_pair_multiplane(a, b)) {
                return Err(SimError::Invariant(format!(
                    "multi-plane group is not offset-aligned: {addrs:?}"
                )));
            }
        }
        if let DieStatus::Busy { until, .. } = self.dies[first.die] {
            if until > now {
                return Err(SimError::DieBusy {
                    chip: self.chip,
                    die: first.die,
                    busy_until: until,
                });
            }
        }
        let until = now + timing.latency(op);
        self.dies[first.die] = DieStatus::Busy {
            op,
            start: now,
            until,
        };
        Ok(until)
    }

    /// Mark a die idle once its operation has completed.
    pub fn finish(&mut self, die: usize, now: Nanos) {
        if let DieStatus::Busy { until, .. } = self.dies[die] {
            debug_assert!(until <= now);
            self.dies[die] = DieStatus::Idle;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(plane: usize, block: usize, page: usize) -> PhysicalPageAddress {
        PhysicalPageAddress {
            chip: 0,
            die: 0,
            plane,
            block,
            page,
        }
    }

    #[test]
    fn read_latency_performance_preset() {
        let g = FlashGeometry::performance_optimized();
        let t = FlashTimingConfig::performance_optimized();
        let mut chip = FlashChipState::new(0, &g);
        assert_eq!(
            chip.start_flash_op(FlashOp::Read, &addr(0, 0, 0), &t, 0),
            Ok(3_000)
        );
    }

    #[test]
    fn erase_latency_cost_preset() {
        let g = FlashGeometry::cost_optimized();
        let t = FlashTimingConfig::cost_optimized();
        let mut chip = FlashChipState::new(0, &g);
        assert_eq!(
            chip.start_flash_op(FlashOp::Erase, &addr(1, 3, 0), &t, 0),
            Ok(3_500_000)
        );
    }

    #[test]
    fn second_op_on_busy_die_fails() {
        let g = FlashGeometry::performance_optimized();
        let t = FlashTimingConfig::performance_optimized();
        let mut chip = FlashChipState::new(0, &g);
        chip.start_flash_op(FlashOp::Read, &addr(0, 0, 0), &t, 0)
            .unwrap();
        let err = chip
            .start_flash_op(FlashOp::Read, &addr(1, 0, 0), &t, 1_000)
            .unwrap_err();
        assert_eq!(
            err,
            SimError::DieBusy {
                chip: 0,
                die: 0,
                busy_until: 3_000
            }
        );
        // Latency conservation: a later op gets exactly its configured latency.
        assert_eq!(
            chip.start_flash_op(FlashOp::Program, &addr(1, 0, 0), &t, 3_000),
            Ok(103_000)
        );
    }

    #[test]
    fn multiplane_pairing() {
        assert!(can_pair_multiplane(&addr(0, 5, 9), &addr(1, 5, 9)));
        assert!(!can_pair_multiplane(&addr(0, 5, 9), &addr(1, 5, 10)));
        assert!(!can_pair_multiplane(&addr(0, 5, 9), &addr(0, 5, 9)));
    }

    #[test]
    fn multiplane_op_rejects_misaligned_group() {
        let g = FlashGeometry::performance_optimized();
        let t = FlashTimingConfig::performance_optimized();
        let mut chip = FlashChipState::new(0, &g);
        assert!(chip
            .start_multiplane_op(FlashOp::Read, &[addr(0, 1, 1), addr(1, 1, 2)], &t, 0)
            .is_err());
        assert_eq!(
            chip.start_multiplane_op(FlashOp::Read, &[addr(0, 1, 1), addr(1, 1, 1)], &t, 0),
            Ok(3_000)
        );
    }

    #[test]
    fn request_page_counts() {
        assert_eq!(page_count_for_request(8_800, 4096), 3);
        assert_eq!(page_count_for_request(4_096, 4096), 1);
        assert_eq!(page_count_for_request(65_700, 16384), 5);
    }

    #[test]
    fn bus_transfer_calibration() {
        assert_eq!(bus_page_transfer_time(4096), 4_000);
        assert!(bus_page_transfer_time(16384) > 4 * 3_400);
    }

    #[test]
    fn presets_respect_latency_ordering() {
        for t in [
            FlashTimingConfig::performance_optimized(),
            FlashTimingConfig::cost_optimized(),
        ] {
            assert!(t.t_erase > t.t_program && t.t_program > t.t_read);
        }
    }

    #[test]
    fn geometry_rejects_zero_counts() {
        let mut g = FlashGeometry::performance_optimized();
        g.planes_per_die = 0;
        assert!(g.validate().is_err());
        assert_eq!(FlashGeometry::performance_optimized().total_chips(), 64);
    }
}
