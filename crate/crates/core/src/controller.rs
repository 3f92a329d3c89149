//! Host requests, flash controllers, and the transfer-latency model.

use serde::{Deserialize, Serialize};

use crate::sim::Nanos;

/// Bytes of a flash command carried over the mesh.
pub const COMMAND_BYTES: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Read,
    Write,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Read => "read",
            RequestKind::Write => "write",
        }
    }
}

/// One host I/O as replayed by the simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoRequest {
    pub arrival_time: Nanos,
    pub kind: RequestKind,
    pub logical_page_start: u64,
    pub page_count: u64,
    pub source_stream: u16,
}

/// A request after the simulator has finished with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedRequest {
    pub arrival_time: Nanos,
    pub completion_time: Nanos,
    pub kind: RequestKind,
    pub page_count: u64,
    pub conflict: bool,
    /// Venice only: every scout for this request succeeded on its first attempt.
    pub first_try_reserved: Option<bool>,
}

impl CompletedRequest {
    pub fn latency(&self) -> Nanos {
        self.completion_time - self.arrival_time
    }
}

/// Time to push `transfer_size` bytes over a circuit `distance` links long:
/// `(distance + ceil(size / width)) * link_lat`.
pub fn compute_transfer_latency(
    distance: u64,
    transfer_size: u64,
    link_width: u64,
    link_lat: Nanos,
) -> Nanos {
    debug_assert!(link_width >= 1 && transfer_size >= 1);
    (distance.max(1) + transfer_size.div_ceil(link_width)) * link_lat
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerStatus {
    Idle,
    /// Serving the given page transaction.
    Busy(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlashControllerState {
    pub id: usize,
    pub status: ControllerStatus,
    /// Mesh row (network designs) or channel (bus designs) it attaches to.
    pub attach_row: usize,
}

impl FlashControllerState {
    pub fn new(id: usize) -> Self {
        Self {
            id,
            status: ControllerStatus::Idle,
            attach_row: id,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.status == ControllerStatus::Idle
    }
}

/// Mesh hops from a left-edge controller's router to a chip's router.
pub fn controller_distance(fc_row: usize, chip: usize, cols: usize) -> usize {
    let (r, c) = (chip / cols, chip % cols);
    r.abs_diff(fc_row) + c
}

/// The idle controller closest to `dest_chip`; ties go to the lower index.
pub fn select_flash_controller(
    dest_chip: usize,
    controllers: &[FlashControllerState],
    cols: usize,
) -> Option<usize> {
    controllers
        .iter()
        .filter(|c| c.is_idle())
        .min_by_key(|c| (controller_distance(c.attach_row, dest_chip, cols), c.id))
        .map(|c| c.id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_latency_examples() {
        assert_eq!(compute_transfer_latency(3, 4096, 1, 1), 4_099);
        assert_eq!(compute_transfer_latency(1, 1, 1, 1), 2);
        assert_eq!(
            compute_transfer_latency(6, 4096, 1, 1) - compute_transfer_latency(3, 4096, 1, 1),
            3
        );
    }

    #[test]
    fn nearest_idle_controller() {
        let mut fcs: Vec<_> = (0..8).map(FlashControllerState::new).collect();
        let dest = 3 * 8 + 5;
        assert_eq!(select_flash_controller(dest, &fcs, 8), Some(3));
        fcs[3].status = ControllerStatus::Busy(0);
        assert_eq!(select_flash_controller(dest, &fcs, 8), Some(2));
        for f in &mut fcs {
            f.status = ControllerStatus::Busy(0);
        }
        assert_eq!(select_flash_controller(dest, &fcs, 8), None);
    }
}
