//! Small domain newtypes shared across the crate.

use serde::Serialize;

/// Simulation time in milliseconds. One subframe is exactly 1 ms, so this is
/// also the subframe index.
pub type TimeMs = u64;

/// Identity of a radio node. The RSU is always node 0; vehicles are numbered
/// from 1 in spawn order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const RSU: NodeId = NodeId(0);

    pub fn is_rsu(self) -> bool {
        self.0 == 0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unique identity of a generated packet. HARQ copies share the id of the
/// original packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PacketId(pub u64);

impl std::fmt::Display for PacketId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
