//! XOR shuffle coding: split serialized intermediate values into r owned
//! segments, XOR one segment per needy node into a multicast packet, and
//! invert the combination on the receiving side.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::mapper::IntermediateValue;
use crate::model::NodeId;
use crate::placement::SubsetId;

/// Largest node index representable in the 16-bit group mask of the packet
/// wire format.
pub const MAX_WIRE_NODES: usize = 16;

/// Local store of map outputs, keyed by (file subset, partition index).
pub type LocalValues = HashMap<(SubsetId, usize), IntermediateValue>;

/// One of the r contiguous byte slices of a serialized intermediate value
/// `I^t_{file}`; `owner` says which member of `file` holds this slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// The partition (and needy node) `t` the parent value belongs to.
    pub source_partition: usize,
    /// The file subset, always `group without source_partition`.
    pub file: SubsetId,
    pub owner: NodeId,
    pub payload: Vec<u8>,
}

/// A multicast packet: the XOR of r zero-padded segments, one per group
/// member other than the sender, plus each segment's true length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPacket {
    pub group: SubsetId,
    pub sender: NodeId,
    /// True byte length per constituent `t` in `group without sender`.
    pub lengths: BTreeMap<NodeId, u32>,
    pub payload: Vec<u8>,
}

/// Splits `value` into `r` contiguous byte segments over its serialization;
/// the first `len mod r` segments are one byte longer. Segment `i` belongs
/// to `owners[i]` (ascending).
pub fn split_segments(value: &IntermediateValue, r: usize, owners: &SubsetId) -> Vec<Segment> {
    assert!(r >= 1 && owners.len() == r, "owners must list exactly r nodes");
    let bytes = value.to_bytes();
    let base = bytes.len() / r;
    let extra = bytes.len() % r;
    let mut segments = Vec::with_capacity(r);
    let mut offset = 0;
    for (i, owner) in owners.members().iter().enumerate() {
        let len = if i < extra { base + 1 } else { base };
        segments.push(Segment {
            source_partition: value.partition,
            file: value.file.clone(),
            owner: *owner,
            payload: bytes[offset..offset + len].to_vec(),
        });
        offset += len;
    }
    segments
}

fn xor_into(acc: &mut Vec<u8>, other: &[u8]) {
    if other.len() > acc.len() {
        acc.resize(other.len(), 0);
    }
    for (a, b) in acc.iter_mut().zip(other) {
        *a ^= *b;
    }
}

/// Looks up `I^t_{file}` in the local map outputs.
fn local_value<'a>(
    locals: &'a LocalValues,
    file: &SubsetId,
    partition: usize,
) -> Result<&'a IntermediateValue> {
    locals.get(&(file.clone(), partition)).ok_or_else(|| {
        Error::Inconsistency(format!(
            "missing local intermediate value for file {file}, partition {partition}"
        ))
    })
}

/// Extracts the `owner`-assigned segment of `I^t_{file}`.
fn owned_segment(
    locals: &LocalValues,
    file: &SubsetId,
    partition: usize,
    owner: NodeId,
) -> Result<Segment> {
    let value = local_value(locals, file, partition)?;
    split_segments(value, file.len(), file)
        .into_iter()
        .find(|segment| segment.owner == owner)
        .ok_or_else(|| {
            Error::Inconsistency(format!("node {owner} owns no segment of file {file}"))
        })
}

/// Builds `node`'s coded packet for `group`: XOR over every other member
/// `t` of the `node`-owned segment of `I^t_{group without t}`, zero-padded
/// to the longest constituent.
pub fn encode_group(group: &SubsetId, node: NodeId, locals: &LocalValues) -> Result<CodedPacket> {
    if !group.contains(node) {
        return Err(Error::InvalidCall(format!(
            "node {node} is not in multicast group {group}"
        )));
    }
    let mut payload = Vec::new();
    let mut lengths = BTreeMap::new();
    for &t in group.members().iter().filter(|&&t| t != node) {
        let file = group.without(t);
        let segment = owned_segment(locals, &file, t.get(), node)?;
        lengths.insert(t, segment.payload.len() as u32);
        xor_into(&mut payload, &segment.payload);
    }
    Ok(CodedPacket {
        group: group.clone(),
        sender: node,
        lengths,
        payload,
    })
}

/// Recovers `node`'s segment from a packet sent by `packet.sender`: XOR the
/// payload with the sender-owned segments of every other constituent, then
/// truncate to the recorded true length.
pub fn decode_packet(
    packet: &CodedPacket,
    node: NodeId,
    locals: &LocalValues,
) -> Result<Segment> {
    let group = &packet.group;
    let sender = packet.sender;
    if !group.contains(node) || !group.contains(sender) || node == sender {
        return Err(Error::InvalidCall(format!(
            "decode of group {group} needs distinct member sender/receiver, got {sender}/{node}"
        )));
    }
    let mut payload = packet.payload.clone();
    for &t in group
        .members()
        .iter()
        .filter(|&&t| t != node && t != sender)
    {
        let file = group.without(t);
        let segment = owned_segment(locals, &file, t.get(), sender)?;
        xor_into(&mut payload, &segment.payload);
    }
    let true_len = *packet.lengths.get(&node).ok_or_else(|| {
        Error::MalformedPacket(format!(
            "packet from {sender} in group {group} lacks a length for node {node}"
        ))
    })? as usize;
    if true_len > payload.len() {
        return Err(Error::MalformedPacket(format!(
            "declared length {true_len} exceeds payload of {} bytes",
            payload.len()
        )));
    }
    payload.truncate(true_len);
    Ok(Segment {
        source_partition: node.get(),
        file: group.without(node),
        owner: sender,
        payload,
    })
}

/// Reassembles `I^k_{file}` from its r segments (one per owner, ascending)
/// and deserializes the concatenation.
pub fn merge_segments(segments: Vec<Segment>) -> Result<IntermediateValue> {
    let Some(first) = segments.first() else {
        return Err(Error::MalformedData("merge of zero segments".into()));
    };
    let file = first.file.clone();
    let partition = first.source_partition;
    if segments.len() != file.len() {
        return Err(Error::MalformedData(format!(
            "file {file} needs {} segments, got {}",
            file.len(),
            segments.len()
        )));
    }
    let mut by_owner: BTreeMap<NodeId, &Segment> = BTreeMap::new();
    for segment in &segments {
        if segment.file != file || segment.source_partition != partition {
            return Err(Error::MalformedData(format!(
                "segment for {}:{} mixed into merge of {file}:{partition}",
                segment.file, segment.source_partition
            )));
        }
        if by_owner.insert(segment.owner, segment).is_some() {
            return Err(Error::MalformedData(format!(
                "duplicate segment owner {}",
                segment.owner
            )));
        }
    }
    for owner in file.members() {
        if !by_owner.contains_key(owner) {
            return Err(Error::MalformedData(format!(
                "missing segment owned by {owner} for file {file}"
            )));
        }
    }
    let mut bytes = Vec::new();
    for segment in by_owner.values() {
        bytes.extend_from_slice(&segment.payload);
    }
    IntermediateValue::from_bytes(file, partition, &bytes)
}

// ---- Wire format ----

impl CodedPacket {
    /// Bit-exact wire layout: 16-bit little-endian group bitmask (bit i-1 =
    /// node i), 1-byte sender, r little-endian u32 true lengths in ascending
    /// constituent order, payload.
    pub fn to_wire(&self) -> Result<Vec<u8>> {
        let mut mask: u16 = 0;
        for member in self.group.members() {
            if member.get() > MAX_WIRE_NODES {
                return Err(Error::InvalidConfig(format!(
                    "node {member} exceeds the {MAX_WIRE_NODES}-node wire format"
                )));
            }
            mask |= 1 << (member.get() - 1);
        }
        let mut out = Vec::with_capacity(3 + 4 * self.lengths.len() + self.payload.len());
        out.extend_from_slice(&mask.to_le_bytes());
        out.push(self.sender.get() as u8);
        for &t in self.group.members().iter().filter(|&&t| t != self.sender) {
            let length = self.lengths.get(&t).ok_or_else(|| {
                Error::Inconsistency(format!("packet lacks a length for constituent {t}"))
            })?;
            out.extend_from_slice(&length.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Parses the wire layout; the constituent count is the group popcount
    /// minus one.
    pub fn from_wire(bytes: &[u8]) -> Result<CodedPacket> {
        if bytes.len() < 3 {
            return Err(Error::MalformedPacket(format!(
                "packet of {} bytes is shorter than its header",
                bytes.len()
            )));
        }
        let mask = u16::from_le_bytes([bytes[0], bytes[1]]);
        let members: Vec<usize> = (1..=MAX_WIRE_NODES)
            .filter(|i| mask & (1 << (i - 1)) != 0)
            .collect();
        if members.len() < 2 {
            return Err(Error::MalformedPacket(format!(
                "group mask {mask:#06x} has fewer than two members"
            )));
        }
        let group = SubsetId::from_indices(&members);
        let sender = NodeId::new(bytes[2] as usize);
        if !group.contains(sender) {
            return Err(Error::MalformedPacket(format!(
                "sender {sender} is not in group {group}"
            )));
        }
        let r = group.len() - 1;
        let header = 3 + 4 * r;
        if bytes.len() < header {
            return Err(Error::MalformedPacket(format!(
                "packet truncated inside its {r} length fields"
            )));
        }
        let mut lengths = BTreeMap::new();
        for (i, &t) in group
            .members()
            .iter()
            .filter(|&&t| t != sender)
            .enumerate()
        {
            let at = 3 + 4 * i;
            lengths.insert(
                t,
                u32::from_le_bytes(bytes[at..at + 4].try_into().expect("width")),
            );
        }
        let payload = bytes[header..].to_vec();
        let longest = lengths.values().copied().max().unwrap_or(0) as usize;
        if payload.len() != longest {
            return Err(Error::MalformedPacket(format!(
                "payload of {} bytes does not match longest declared length {longest}",
                payload.len()
            )));
        }
        Ok(CodedPacket {
            group,
            sender,
            lengths,
            payload,
        })
    }
}

// ---- Tests ----
