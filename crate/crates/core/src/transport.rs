//! The shuffle substrate: strictly serial unicast/multicast schedules, byte
//! and unit accounting, and a bandwidth cost model with a logarithmic
//! multicast surcharge.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::model::NodeId;
use crate::placement::{PlacementPlan, SubsetId};

/// Deterministic transfer-time model: `bytes / bandwidth` scaled by
/// `1 + alpha * log2(receiver_count)` for multicast fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    bandwidth: f64,
    alpha: f64,
}

impl CostModel {
    pub fn new(bandwidth_bytes_per_s: f64, alpha: f64) -> Result<Self> {
        if !bandwidth_bytes_per_s.is_finite() || bandwidth_bytes_per_s <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive, got {bandwidth_bytes_per_s}"
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "multicast overhead must be nonnegative, got {alpha}"
            )));
        }
        Ok(CostModel {
            bandwidth: bandwidth_bytes_per_s,
            alpha,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Simulated seconds to move `bytes` to `receivers` nodes at once.
    pub fn transfer_seconds(&self, bytes: u64, receivers: usize) -> f64 {
        assert!(receivers >= 1, "a transmission needs a receiver");
        bytes as f64 / self.bandwidth * (1.0 + self.alpha * (receivers as f64).log2())
    }
}

/// One slot of a serial shuffle schedule. Unicast slots carry a single
/// receiver and no group; multicast slots address a whole group minus the
/// sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub sender: NodeId,
    pub receivers: Vec<NodeId>,
    pub group: Option<SubsetId>,
}

/// One accounted transmission: payload bytes are counted once regardless of
/// receiver count, and `units` follows the unit convention (intermediate
/// value = 1, coded packet = 1/r).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub sender: NodeId,
    pub receivers: Vec<NodeId>,
    pub bytes: u64,
    pub units: Ratio<u64>,
}

/// The complete shuffle traffic record, in schedule order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShuffleLedger {
    pub entries: Vec<LedgerEntry>,
}

impl ShuffleLedger {
    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|entry| entry.bytes).sum()
    }

    pub fn total_units(&self) -> Ratio<u64> {
        self.entries
            .iter()
            .map(|entry| entry.units)
            .fold(Ratio::from_integer(0), |acc, units| acc + units)
    }

    /// Simulated serial shuffle time: the sum of per-entry transfer times.
    pub fn shuffle_seconds(&self, cost: &CostModel) -> f64 {
        self.entries
            .iter()
            .map(|entry| cost.transfer_seconds(entry.bytes, entry.receivers.len()))
            .sum()
    }
}

/// The serial unicast schedule: senders ascending, each sending to every
/// other node in ascending order. K(K-1) slots.
pub fn schedule_uncoded(k: usize) -> Vec<Slot> {
    let mut slots = Vec::with_capacity(k.saturating_sub(1) * k);
    for sender in 1..=k {
        for receiver in (1..=k).filter(|&receiver| receiver != sender) {
            slots.push(Slot {
                sender: NodeId::new(sender),
                receivers: vec![NodeId::new(receiver)],
                group: None,
            });
        }
    }
    slots
}

/// The serial multicast schedule: senders ascending, each multicasting once
/// per group it belongs to, groups in lexicographic order.
/// (r+1) * C(K, r+1) slots.
pub fn schedule_coded(plan: &PlacementPlan) -> Vec<Slot> {
    let mut slots = Vec::new();
    for sender in 1..=plan.k() {
        let sender = NodeId::new(sender);
        for &group_index in plan.groups_of(sender) {
            let group = &plan.groups()[group_index];
            slots.push(Slot {
                sender,
                receivers: group
                    .members()
                    .iter()
                    .copied()
                    .filter(|&member| member != sender)
                    .collect(),
                group: Some(group.clone()),
            });
        }
    }
    slots
}

/// Units carried by one slot: a whole intermediate value for unicast, 1/r of
/// one for a coded packet multicast to r receivers.
pub fn slot_units(slot: &Slot) -> Ratio<u64> {
    match &slot.group {
        None => Ratio::from_integer(1),
        Some(group) => Ratio::new(1, (group.len() - 1) as u64),
    }
}

/// A message as seen by a receiver: which slot delivered it and from whom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundMessage {
    pub slot: usize,
    pub sender: NodeId,
    pub payload: Vec<u8>,
}

/// Executes a schedule in-process: every receiver gets an exact copy of the
/// slot payload, the ledger records each transmission once, and simulated
/// time accumulates serially under the cost model.
///
/// Returns per-node inboxes (index = node - 1), the ledger, and the total
/// simulated shuffle seconds.
pub fn transmit(
    k: usize,
    slots: &[Slot],
    payloads: Vec<Vec<u8>>,
    cost: &CostModel,
) -> Result<(Vec<Vec<InboundMessage>>, ShuffleLedger, f64)> {
    if slots.len() != payloads.len() {
        return Err(Error::InvalidCall(format!(
            "{} slots but {} payloads",
            slots.len(),
            payloads.len()
        )));
    }
    let mut inboxes: Vec<Vec<InboundMessage>> = vec![Vec::new(); k];
    let mut ledger = ShuffleLedger::default();
    let mut seconds = 0.0;
    for (index, (slot, payload)) in slots.iter().zip(payloads).enumerate() {
        if slot.sender.get() > k || slot.receivers.iter().any(|r| r.get() > k) {
            return Err(Error::InvalidCall(format!(
                "slot {index} addresses a node outside 1..={k}"
            )));
        }
        let bytes = payload.len() as u64;
        seconds += cost.transfer_seconds(bytes, slot.receivers.len());
        for receiver in &slot.receivers {
            inboxes[receiver.get() - 1].push(InboundMessage {
                slot: index,
                sender: slot.sender,
                payload: payload.clone(),
            });
        }
        ledger.entries.push(LedgerEntry {
            sender: slot.sender,
            receivers: slot.receivers.clone(),
            bytes,
            units: slot_units(slot),
        });
    }
    Ok((inboxes, ledger, seconds))
}

// ---- Tests ----
