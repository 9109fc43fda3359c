//! End-to-end pipelines. Both the plain and the coded sort drive the same
//! per-node runtime through six stages: codegen, map, pack/encode, shuffle,
//! unpack/decode, reduce. The simulator runs every node in-process; the
//! socket transport runs one OS process per node (see [`crate::socket`]).

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use crate::codec::{decode_packet, encode_group, merge_segments, CodedPacket, LocalValues};
use crate::error::{Error, Result};
use crate::mapper::{hash_file, retain_relevant, IntermediateValue};
use crate::metrics::{communication_load, LoadReport};
use crate::model::{
    partition_boundaries, partition_of, KeySpace, NodeId, Partitioning, Record,
};
use crate::placement::{
    assign_files, build_plan, uncoded_plan, FileAssignment, PlacementPlan,
};
use crate::socket::{self, SocketConfig};
use crate::transport::{
    schedule_coded, schedule_uncoded, transmit, CostModel, InboundMessage, ShuffleLedger, Slot,
};
use crate::par;

/// Which pipeline a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Uncoded,
    Coded { r: usize },
}

impl Mode {
    pub(crate) fn r(self) -> usize {
        match self {
            Mode::Uncoded => 1,
            Mode::Coded { r } => r,
        }
    }

    pub(crate) fn is_coded(self) -> bool {
        matches!(self, Mode::Coded { .. })
    }
}

/// Where the shuffle bytes travel.
#[derive(Debug, Clone)]
pub enum Transport {
    /// Deterministic in-process simulator; authoritative for accounting.
    Sim,
    /// Loopback TCP with one worker process per node.
    Socket(SocketConfig),
}

/// Wall-clock seconds per stage; shuffle is simulated under the cost model
/// in both transports so runs are comparable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimes {
    pub codegen: f64,
    pub map: f64,
    pub pack_encode: f64,
    pub shuffle: f64,
    pub unpack_decode: f64,
    pub reduce: f64,
    pub total: f64,
}

impl StageTimes {
    pub(crate) fn new(
        codegen: f64,
        map: f64,
        pack_encode: f64,
        shuffle: f64,
        unpack_decode: f64,
        reduce: f64,
    ) -> Self {
        StageTimes {
            codegen,
            map,
            pack_encode,
            shuffle,
            unpack_decode,
            reduce,
            total: codegen + map + pack_encode + shuffle + unpack_decode + reduce,
        }
    }
}

/// The per-node sorted partitions; their concatenation in node order is the
/// globally sorted sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedOutput {
    pub partitions: Vec<Vec<Record>>,
}

impl SortedOutput {
    /// All records in global order.
    pub fn concatenated(&self) -> Vec<Record> {
        self.partitions.iter().flatten().copied().collect()
    }

    pub fn total_records(&self) -> usize {
        self.partitions.iter().map(Vec::len).sum()
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: SortedOutput,
    pub times: StageTimes,
    pub load: LoadReport,
    pub ledger: ShuffleLedger,
}

/// Sorts `values` (all belonging to 1-based `partition`) into `Q_partition`.
pub fn reduce_partition(
    partition: usize,
    values: &[IntermediateValue],
    partitioning: &Partitioning,
) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for value in values {
        if value.partition != partition {
            return Err(Error::Inconsistency(format!(
                "value of partition {} fed to reducer {partition}",
                value.partition
            )));
        }
        for record in &value.records {
            if partition_of(record.key, partitioning)? != partition {
                return Err(Error::Inconsistency(format!(
                    "foreign-partition record with key {:#x} in reducer {partition}",
                    record.key
                )));
            }
        }
        records.extend_from_slice(&value.records);
    }
    records.sort();
    Ok(records)
}

pub(crate) fn plan_for(k: usize, mode: Mode) -> Result<PlacementPlan> {
    match mode {
        Mode::Uncoded => uncoded_plan(k),
        Mode::Coded { r } => build_plan(k, r),
    }
}

pub(crate) fn schedule_for(plan: &PlacementPlan, mode: Mode) -> Vec<Slot> {
    if mode.is_coded() {
        schedule_coded(plan)
    } else {
        schedule_uncoded(plan.k())
    }
}

/// One node's whole run state; both transports drive this through the same
/// stage sequence.
pub(crate) struct NodeRuntime {
    node: NodeId,
    mode: Mode,
    plan: PlacementPlan,
    partitioning: Partitioning,
    schedule: Vec<Slot>,
    files: Vec<FileAssignment>,
    locals: LocalValues,
    outbound: HashMap<usize, Vec<u8>>,
    inbound: Vec<InboundMessage>,
    decoded: Vec<IntermediateValue>,
}

impl NodeRuntime {
    /// The codegen stage: derive the placement, partitioning, and schedule.
    /// Every node computes these independently and identically.
    pub(crate) fn new(node: NodeId, k: usize, mode: Mode) -> Result<Self> {
        let plan = plan_for(k, mode)?;
        let partitioning = partition_boundaries(KeySpace::FULL, k)?;
        let schedule = schedule_for(&plan, mode);
        Ok(NodeRuntime {
            node,
            mode,
            plan,
            partitioning,
            schedule,
            files: Vec::new(),
            locals: LocalValues::new(),
            inbound: Vec::new(),
            outbound: HashMap::new(),
            decoded: Vec::new(),
        })
    }

    pub(crate) fn plan(&self) -> &PlacementPlan {
        &self.plan
    }

    pub(crate) fn schedule(&self) -> &[Slot] {
        &self.schedule
    }

    /// Installs this node's files; they must match the plan's subsets for
    /// the node, in plan order.
    pub(crate) fn load_files(&mut self, files: Vec<FileAssignment>) -> Result<()> {
        let expected = self.plan.files_of(self.node);
        if files.len() != expected.len() {
            return Err(Error::Inconsistency(format!(
                "node {} expected {} files, got {}",
                self.node,
                expected.len(),
                files.len()
            )));
        }
        for (assignment, &index) in files.iter().zip(expected) {
            if assignment.file != self.plan.files()[index] {
                return Err(Error::Inconsistency(format!(
                    "node {} received file {} out of plan order",
                    self.node, assignment.file
                )));
            }
        }
        self.files = files;
        Ok(())
    }

    /// Map stage: bucket every stored file by partition; in coded mode keep
    /// only the buckets this node reduces or encodes.
    pub(crate) fn map_stage(&mut self) -> Result<()> {
        for file in &self.files {
            let values = hash_file(file, &self.partitioning)?;
            let kept = if self.mode.is_coded() {
                retain_relevant(self.node, values)?
            } else {
                values
            };
            for value in kept {
                self.locals.insert((value.file.clone(), value.partition), value);
            }
        }
        Ok(())
    }

    /// Pack/encode stage: bind one payload to every slot this node sends.
    pub(crate) fn pack_stage(&mut self) -> Result<()> {
        for (index, slot) in self.schedule.iter().enumerate() {
            if slot.sender != self.node {
                continue;
            }
            let payload = match &slot.group {
                // Unicast: serialize the receiver's bucket of my one file.
                None => {
                    let file = &self.plan.files()[self.plan.files_of(self.node)[0]];
                    let partition = slot.receivers[0].get();
                    self.locals
                        .get(&(file.clone(), partition))
                        .ok_or_else(|| {
                            Error::Inconsistency(format!(
                                "node {} has no bucket {partition} to send",
                                self.node
                            ))
                        })?
                        .to_bytes()
                }
                // Multicast: encode the group's packet and frame it.
                Some(group) => encode_group(group, self.node, &self.locals)?.to_wire()?,
            };
            self.outbound.insert(index, payload);
        }
        Ok(())
    }

    /// Moves the payload bound to `slot` out of this node.
    pub(crate) fn take_payload(&mut self, slot: usize) -> Result<Vec<u8>> {
        self.outbound.remove(&slot).ok_or_else(|| {
            Error::Inconsistency(format!(
                "node {} bound no payload to slot {slot}",
                self.node
            ))
        })
    }

    /// Stores one delivered message for the decode stage.
    pub(crate) fn accept(&mut self, message: InboundMessage) -> Result<()> {
        let slot = self.schedule.get(message.slot).ok_or_else(|| {
            Error::Inconsistency(format!("delivery for unknown slot {}", message.slot))
        })?;
        if slot.sender != message.sender || !slot.receivers.contains(&self.node) {
            return Err(Error::Inconsistency(format!(
                "node {} received slot {} it is not addressed by",
                self.node, message.slot
            )));
        }
        self.inbound.push(message);
        Ok(())
    }

    /// Unpack/decode stage: parse unicast buckets directly, or decode coded
    /// packets and merge the recovered segments per file.
    pub(crate) fn decode_stage(&mut self) -> Result<()> {
        if !self.mode.is_coded() {
            for message in &self.inbound {
                let file = self.schedule[message.slot].sender;
                let value = IntermediateValue::from_bytes(
                    crate::placement::SubsetId::new(vec![file]),
                    self.node.get(),
                    &message.payload,
                )?;
                self.decoded.push(value);
            }
            return Ok(());
        }
        let mut segments: BTreeMap<crate::placement::SubsetId, Vec<_>> = BTreeMap::new();
        for message in &self.inbound {
            let packet = CodedPacket::from_wire(&message.payload)?;
            let slot = &self.schedule[message.slot];
            if slot.group.as_ref() != Some(&packet.group) || packet.sender != message.sender {
                return Err(Error::Inconsistency(format!(
                    "packet from {} does not match slot {}",
                    message.sender, message.slot
                )));
            }
            let segment = decode_packet(&packet, self.node, &self.locals)?;
            segments.entry(segment.file.clone()).or_default().push(segment);
        }
        for (_, file_segments) in segments {
            self.decoded.push(merge_segments(file_segments)?);
        }
        Ok(())
    }

    /// Reduce stage: gather every bucket of this node's partition (own map
    /// outputs plus shuffled ones) and sort.
    pub(crate) fn reduce_stage(&self) -> Result<Vec<Record>> {
        let mut values: Vec<IntermediateValue> = Vec::new();
        for &index in self.plan.files_of(self.node) {
            let file = &self.plan.files()[index];
            let value = self
                .locals
                .get(&(file.clone(), self.node.get()))
                .ok_or_else(|| {
                    Error::Inconsistency(format!(
                        "node {} lost its own bucket of file {file}",
                        self.node
                    ))
                })?;
            values.push(value.clone());
        }
        values.extend(self.decoded.iter().cloned());
        let expected = self.plan.files().len();
        if values.len() != expected {
            return Err(Error::Inconsistency(format!(
                "reducer {} holds {} of {expected} buckets",
                self.node,
                values.len()
            )));
        }
        reduce_partition(self.node.get(), &values, &self.partitioning)
    }
}

fn run_sim(mode: Mode, records: &[Record], k: usize, cost: &CostModel) -> Result<RunOutcome> {
    // Codegen: every node derives the identical plan independently.
    let started = Instant::now();
    let mut nodes = par::try_map_indexed(k, |i| NodeRuntime::new(NodeId::new(i + 1), k, mode))?;
    let codegen = started.elapsed().as_secs_f64();

    // Placement: replicate each file onto the nodes of its subset. Not a
    // timed stage; data is in place before the job starts.
    let plan = nodes[0].plan().clone();
    let schedule: Vec<Slot> = nodes[0].schedule().to_vec();
    let assignments = assign_files(&plan, records)?;
    for i in 0..k {
        let node = NodeId::new(i + 1);
        let mine: Vec<FileAssignment> = plan
            .files_of(node)
            .iter()
            .map(|&index| assignments[index].clone())
            .collect();
        nodes[i].load_files(mine)?;
    }

    let started = Instant::now();
    par::try_for_each_mut(&mut nodes, |node| node.map_stage())?;
    let map = started.elapsed().as_secs_f64();

    let started = Instant::now();
    par::try_for_each_mut(&mut nodes, |node| node.pack_stage())?;
    let pack_encode = started.elapsed().as_secs_f64();

    // Shuffle: execute the serial schedule through the simulated channel.
    let payloads = schedule
        .iter()
        .enumerate()
        .map(|(index, slot)| nodes[slot.sender.get() - 1].take_payload(index))
        .collect::<Result<Vec<_>>>()?;
    let (inboxes, ledger, shuffle) = transmit(k, &schedule, payloads, cost)?;
    for (i, inbox) in inboxes.into_iter().enumerate() {
        for message in inbox {
            nodes[i].accept(message)?;
        }
    }

    let started = Instant::now();
    par::try_for_each_mut(&mut nodes, |node| node.decode_stage())?;
    let unpack_decode = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let partitions = par::try_map_indexed(k, |i| nodes[i].reduce_stage())?;
    let reduce = started.elapsed().as_secs_f64();

    let load = communication_load(
        &ledger,
        k as u64,
        plan.files().len() as u64,
        mode.r(),
    )?;
    Ok(RunOutcome {
        output: SortedOutput { partitions },
        times: StageTimes::new(codegen, map, pack_encode, shuffle, unpack_decode, reduce),
        load,
        ledger,
    })
}

pub(crate) fn run(
    mode: Mode,
    records: &[Record],
    k: usize,
    cost: &CostModel,
    transport: &Transport,
) -> Result<RunOutcome> {
    match transport {
        Transport::Sim => run_sim(mode, records, k, cost),
        Transport::Socket(config) => socket::run_cluster(mode, records, k, cost, config),
    }
}

/// Runs the plain sort: single-copy placement, unicast shuffle.
pub fn run_terasort(
    records: &[Record],
    k: usize,
    cost: &CostModel,
    transport: &Transport,
) -> Result<RunOutcome> {
    run(Mode::Uncoded, records, k, cost, transport)
}

/// Runs the coded sort at redundancy `r`: replicated placement, XOR-coded
/// multicast shuffle.
pub fn run_coded_terasort(
    records: &[Record],
    k: usize,
    r: usize,
    cost: &CostModel,
    transport: &Transport,
) -> Result<RunOutcome> {
    run(Mode::Coded { r }, records, k, cost, transport)
}

// ---- Tests ----
