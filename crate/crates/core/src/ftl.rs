//! Page-mapped flash translation layer.
//!
//! Logical pages are striped channel-first across chips, then across dies and
//! planes. Writes are out-of-place: every write takes the next free page at
//! its plane's cursor and invalidates the previous copy. Block state is
//! created lazily so a 64-chip array with ~100 M pages costs memory only for
//! the blocks a run actually touches.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::flash::{FlashGeometry, PhysicalPageAddress};

const UNUSED: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VictimPolicy {
    #[default]
    GreedyMinValid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcConfig {
    pub enabled: bool,
    /// GC runs on a plane once its free-block fraction drops below this.
    pub free_block_threshold: f64,
    pub victim_policy: VictimPolicy,
}

impl Default for GcConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            free_block_threshold: 0.05,
            victim_policy: VictimPolicy::GreedyMinValid,
        }
    }
}

impl GcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.free_block_threshold > 0.0 && self.free_block_threshold < 1.0) {
            return Err(format!(
                "gc.free_block_threshold must be in (0, 1), got {}",
                self.free_block_threshold
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone)]
struct BlockState {
    /// Logical page stored in each physical page, or `UNUSED`.
    owners: Vec<u64>,
    valid: usize,
    written: usize,
}

impl BlockState {
    fn new(pages: usize) -> Self {
        Self {
            owners: vec![UNUSED; pages],
            valid: 0,
            written: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct PlaneState {
    /// Block currently receiving writes.
    active: Option<usize>,
    /// Blocks never used yet are `next_fresh..blocks_per_plane`.
    next_fresh: usize,
    /// Blocks erased by GC.
    reclaimed: Vec<usize>,
    blocks: HashMap<usize, BlockState>,
}

/// Page relocations and the erase produced by one GC pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcPlan {
    pub victim: PhysicalPageAddress,
    /// `(logical page, old location, new location)`.
    pub moves: Vec<(u64, PhysicalPageAddress, PhysicalPageAddress)>,
}

#[derive(Debug, Clone)]
pub struct Ftl {
    geometry: FlashGeometry,
    logical_pages: u64,
    map: HashMap<u64, PhysicalPageAddress>,
    planes: Vec<PlaneState>,
}

impl Ftl {
    /// `overprovision` is the fraction of physical pages hidden from the host.
    pub fn new(geometry: FlashGeometry, overprovision: f64) -> Result<Self, SimError> {
        geometry.validate()?;
        if !(0.0..1.0).contains(&overprovision) {
            return Err(SimError::InvalidGeometry(format!(
                "overprovision must be in [0, 1), got {overprovision}"
            )));
        }
        let logical_pages = ((geometry.total_pages() as f64) * (1.0 - overprovision)).floor() as u64;
        let n_planes = geometry.total_chips() * geometry.planes_per_chip();
        Ok(Self {
            geometry,
            logical_pages: logical_pages.max(1),
            map: HashMap::new(),
            planes: vec![PlaneState::default(); n_planes],
        })
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    /// Host-visible capacity in pages.
    pub fn logical_pages(&self) -> u64 {
        self.logical_pages
    }

    pub fn mapped_pages(&self) -> usize {
        self.map.len()
    }

    pub fn lookup(&self, lpn: u64) -> Option<PhysicalPageAddress> {
        self.map.get(&lpn).copied()
    }

    /// Static placement of a logical page: `(chip, die, plane)`.
    pub fn stripe(&self, lpn: u64) -> (usize, usize, usize) {
        let g = &self.geometry;
        let rows = g.rows as u64;
        let cols = g.chips_per_row as u64;
        let channel = lpn % rows;
        let way = (lpn / rows) % cols;
        let rest = lpn / (rows * cols);
        let die = rest % g.dies_per_chip as u64;
        let plane = (rest / g.dies_per_chip as u64) % g.planes_per_die as u64;
        ((channel * cols + way) as usize, die as usize, plane as usize)
    }

    fn plane_index(&self, chip: usize, die: usize, plane: usize) -> usize {
        (chip * self.geometry.dies_per_chip + die) * self.geometry.planes_per_die + plane
    }

    fn plane_of(&self, a: &PhysicalPageAddress) -> usize {
        self.plane_index(a.chip, a.die, a.plane)
    }

    /// Free blocks in a plane, counting the unfilled part of the active block as none.
    pub fn free_blocks(&self, chip: usize, die: usize, plane: usize) -> usize {
        let p = &self.planes[self.plane_index(chip, die, plane)];
        self.geometry.blocks_per_plane - p.next_fresh + p.reclaimed.len()
    }

    pub fn free_fraction(&self, chip: usize, die: usize, plane: usize) -> f64 {
        self.free_blocks(chip, die, plane) as f64 / self.geometry.blocks_per_plane as f64
    }

    pub fn valid_pages_in(&self, chip: usize, die: usize, plane: usize, block: usize) -> usize {
        self.planes[self.plane_index(chip, die, plane)]
            .blocks
            .get(&block)
            .map_or(0, |b| b.valid)
    }

    pub fn total_valid_pages(&self) -> usize {
        self.planes
            .iter()
            .flat_map(|p| p.blocks.values())
            .map(|b| b.valid)
            .sum()
    }

    /// Resolve a logical page for a read, or place it for a write.
    ///
    /// A read of a page that was never written is mapped on first touch.
    pub fn translate_or_allocate(
        &mut self,
        lpn: u64,
        kind: AccessKind,
    ) -> Result<PhysicalPageAddress, SimError> {
        if lpn >= self.logical_pages {
            return Err(SimError::AddressOutOfRange(format!(
                "logical page {lpn} >= {}",
                self.logical_pages
            )));
        }
        if kind == AccessKind::Read {
            if let Some(a) = self.map.get(&lpn) {
                return Ok(*a);
            }
        }
        let (chip, die, plane) = self.stripe(lpn);
        self.write_at(lpn, chip, die, plane)
    }

    fn write_at(
        &mut self,
        lpn: u64,
        chip: usize,
        die: usize,
        plane: usize,
    ) -> Result<PhysicalPageAddress, SimError> {
        let pi = self.plane_index(chip, die, plane);
        let addr = self.allocate(pi, chip, die, plane)?;
        if let Some(old) = self.map.insert(lpn, addr) {
            self.invalidate(&old);
        }
        let block = self.planes[pi]
            .blocks
            .get_mut(&addr.block)
            .expect("allocated block exists");
        block.owners[addr.page] = lpn;
        block.valid += 1;
        Ok(addr)
    }

    fn allocate(
        &mut self,
        pi: usize,
        chip: usize,
        die: usize,
        plane: usize,
    ) -> Result<PhysicalPageAddress, SimError> {
        let ppb = self.geometry.pages_per_block;
        let bpp = self.geometry.blocks_per_plane;
        let p = &mut self.planes[pi];
        let needs_block = match p.active {
            None => true,
            Some(b) => p.blocks[&b].written == ppb,
        };
        if needs_block {
            let next = if let Some(b) = p.reclaimed.pop() {
                b
            } else if p.next_fresh < bpp {
                p.next_fresh += 1;
                p.next_fresh - 1
            } else {
                return Err(SimError::OutOfSpace {
                    chip,
                    plane: die * self.geometry.planes_per_die + plane,
                });
            };
            p.blocks.insert(next, BlockState::new(ppb));
            p.active = Some(next);
        }
        let b = p.active.expect("active block set above");
        let st = p.blocks.get_mut(&b).expect("active block exists");
        let page = st.written;
        st.written += 1;
        Ok(PhysicalPageAddress {
            chip,
            die,
            plane,
            block: b,
            page,
        })
    }

    fn invalidate(&mut self, a: &PhysicalPageAddress) {
        let pi = self.plane_of(a);
        if let Some(b) = self.planes[pi].blocks.get_mut(&a.block) {
            if b.owners[a.page] != UNUSED {
                b.owners[a.page] = UNUSED;
                b.valid -= 1;
            }
        }
    }

    pub fn is_valid(&self, a: &PhysicalPageAddress) -> bool {
        self.planes[self.plane_of(a)]
            .blocks
            .get(&a.block)
            .is_some_and(|b| b.owners[a.page] != UNUSED)
    }

    pub fn needs_gc(&self, gc: &GcConfig, chip: usize, die: usize, plane: usize) -> bool {
        gc.enabled && self.free_fraction(chip, die, plane) < gc.free_block_threshold
    }

    /// Greedy GC on one plane: pick the closed block with the fewest valid
    /// pages, rewrite its valid pages at the plane's cursor, and return the
    /// plan. The victim is recycled as a free block; the caller charges the
    /// copies and the erase. Returns `None` when no closed block exists.
    pub fn run_gc(
        &mut self,
        chip: usize,
        die: usize,
        plane: usize,
    ) -> Result<Option<GcPlan>, SimError> {
        let pi = self.plane_index(chip, die, plane);
        let ppb = self.geometry.pages_per_block;
        let p = &self.planes[pi];
        let victim = p
            .blocks
            .iter()
            .filter(|(&id, b)| Some(id) != p.active && b.written == ppb)
            .min_by_key(|(&id, b)| (b.valid, id))
            .map(|(&id, _)| id);
        let Some(victim) = victim else {
            return Ok(None);
        };
        let owners: Vec<(usize, u64)> = p.blocks[&victim]
            .owners
            .iter()
            .enumerate()
            .filter(|(_, &o)| o != UNUSED)
            .map(|(i, &o)| (i, o))
            .collect();
        let mut moves = Vec::with_capacity(owners.len());
        for (page, lpn) in owners {
            let old = PhysicalPageAddress {
                chip,
                die,
                plane,
                block: victim,
                page,
            };
            let new = self.write_at(lpn, chip, die, plane)?;
            moves.push((lpn, old, new));
        }
        let p = &mut self.planes[pi];
        p.blocks.remove(&victim);
        p.reclaimed.push(victim);
        Ok(Some(GcPlan {
            victim: PhysicalPageAddress {
                chip,
                die,
                plane,
                block: victim,
                page: 0,
            },
            moves,
        }))
    }

    /// No two logical pages share a physical page, and every mapped page is valid.
    pub fn check_mapping(&self) -> Result<(), String> {
        let mut seen = HashMap::with_capacity(self.map.len());
        for (&lpn, a) in &self.map {
            if let Some(other) = seen.insert(*a, lpn) {
                return Err(format!("pages {other} and {lpn} both map to {a:?}"));
            }
            let owner = self.planes[self.plane_of(a)]
                .blocks
                .get(&a.block)
                .map(|b| b.owners[a.page]);
            if owner != Some(lpn) {
                return Err(format!("page {lpn} maps to {a:?} which records {owner:?}"));
            }
        }
        if self.total_valid_pages() != self.map.len() {
            return Err(format!(
                "{} valid physical pages for {} mapped logical pages",
                self.total_valid_pages(),
                self.map.len()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FlashGeometry {
        FlashGeometry {
            rows: 1,
            chips_per_row: 1,
            dies_per_chip: 1,
            planes_per_die: 1,
            blocks_per_plane: 4,
            pages_per_block: 4,
            page_size: 4096,
        }
    }

    #[test]
    fn rewrite_moves_and_invalidates() {
        let mut ftl = Ftl::new(FlashGeometry::performance_optimized(), 0.07).unwrap();
        let a = ftl.translate_or_allocate(5, AccessKind::Write).unwrap();
        let b = ftl.translate_or_allocate(5, AccessKind::Write).unwrap();
        assert_ne!(a, b);
        assert!(!ftl.is_valid(&a));
        assert!(ftl.is_valid(&b));
        assert_eq!(ftl.translate_or_allocate(5, AccessKind::Read).unwrap(), b);
        ftl.check_mapping().unwrap();
    }

    #[test]
    fn striping_is_channel_first() {
        let ftl = Ftl::new(FlashGeometry::performance_optimized(), 0.07).unwrap();
        assert_eq!(ftl.stripe(0), (0, 0, 0));
        assert_eq!(ftl.stripe(1), (8, 0, 0));
        assert_eq!(ftl.stripe(8), (1, 0, 0));
        assert_eq!(ftl.stripe(64), (0, 0, 1));
    }

    #[test]
    fn full_device_without_gc_is_out_of_space() {
        let mut ftl = Ftl::new(tiny(), 0.0).unwrap();
        for lpn in 0..16 {
            ftl.translate_or_allocate(lpn, AccessKind::Write).unwrap();
        }
        assert!(matches!(
            ftl.translate_or_allocate(3, AccessKind::Write),
            Err(SimError::OutOfSpace { .. })
        ));
    }

    #[test]
    fn gc_picks_block_with_fewest_valid_pages() {
        let mut ftl = Ftl::new(tiny(), 0.0).unwrap();
        // Block 0 holds 0..4, block 1 holds 4..8.
        for lpn in 0..8 {
            ftl.translate_or_allocate(lpn, AccessKind::Write).unwrap();
        }
        // Invalidate three pages of block 1 and one of block 0.
        for lpn in [4, 5, 6, 0] {
            ftl.translate_or_allocate(lpn, AccessKind::Write).unwrap();
        }
        assert_eq!(ftl.valid_pages_in(0, 0, 0, 0), 3);
        assert_eq!(ftl.valid_pages_in(0, 0, 0, 1), 1);
        let before = ftl.total_valid_pages();
        let plan = ftl.run_gc(0, 0, 0).unwrap().unwrap();
        assert_eq!(plan.victim.block, 1);
        assert_eq!(plan.moves.len(), 1);
        assert_eq!(ftl.total_valid_pages(), before);
        ftl.check_mapping().unwrap();
    }

    #[test]
    fn gc_of_empty_block_only_erases() {
        let mut ftl = Ftl::new(tiny(), 0.0).unwrap();
        for lpn in 0..4 {
            ftl.translate_or_allocate(lpn, AccessKind::Write).unwrap();
        }
        for lpn in 0..4 {
            ftl.translate_or_allocate(lpn, AccessKind::Write).unwrap();
        }
        // Fill block 1 so it closes; block 0 is now fully invalid.
        let plan = ftl.run_gc(0, 0, 0).unwrap().unwrap();
        assert_eq!(plan.victim.block, 0);
        assert!(plan.moves.is_empty());
        assert_eq!(ftl.free_blocks(0, 0, 0), 3);
    }

    #[test]
    fn cold_read_is_mapped_once() {
        let mut ftl = Ftl::new(tiny(), 0.0).unwrap();
        let a = ftl.translate_or_allocate(2, AccessKind::Read).unwrap();
        let b = ftl.translate_or_allocate(2, AccessKind::Read).unwrap();
        assert_eq!(a, b);
        assert_eq!(ftl.mapped_pages(), 1);
    }

    #[test]
    fn gc_threshold_validation() {
        assert!(GcConfig::default().validate().is_ok());
        let bad = GcConfig {
            free_block_threshold: 1.0,
            ..GcConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
