//! A distributed sorting engine that trades redundant computation for
//! shuffle traffic.
//!
//! The plain pipeline splits the key space into one partition per node,
//! buckets records where they are stored, ships every bucket to its reducer
//! as a unicast, and sorts locally. The coded pipeline stores each input
//! file on `r` nodes; the repeated map outputs let every size-`r+1` group of
//! nodes exchange XOR-coded packets that serve all `r` receivers at once,
//! cutting the shuffled data by roughly the redundancy factor.
//!
//! Entry points: [`run_terasort`] and [`run_coded_terasort`], over either
//! the in-process [`Transport::Sim`] channel or one OS process per node via
//! [`Transport::Socket`]. The lower-level building blocks (key-space
//! partitioning, subset enumeration, packet codec, shuffle scheduling, load
//! accounting) are exported for direct use and testing.
//!
//! The `parallel` feature (on by default) runs per-node stage work on a
//! rayon pool; disabling it yields a sequential build with identical
//! outputs.

mod codec;
mod error;
mod mapper;
mod metrics;
mod model;
mod orchestrator;
mod par;
mod placement;
mod socket;
mod transport;

pub use codec::{
    decode_packet, encode_group, merge_segments, split_segments, CodedPacket, LocalValues,
    Segment, MAX_WIRE_NODES,
};
pub use error::{Error, Result};
pub use mapper::{hash_file, retain_relevant, IntermediateValue, VALUE_HEADER_LEN};
pub use metrics::{
    coded_load_formula, communication_load, optimal_r, predict_total_time,
    uncoded_load_formula, LoadReport,
};
pub use model::{
    generate_records, partition_boundaries, partition_of, records_from_bytes,
    records_to_bytes, KeySpace, NodeId, Partitioning, Record, KEY_BITS, KEY_LEN, KEY_MAX,
    RECORD_LEN, VALUE_LEN,
};
pub use orchestrator::{
    reduce_partition, run_coded_terasort, run_terasort, RunOutcome, SortedOutput,
    StageTimes, Transport,
};
pub use placement::{
    assign_files, binomial, build_plan, enumerate_subsets, split_input, subset_rank,
    subset_unrank, uncoded_plan, FileAssignment, PlacementPlan, SubsetId,
};
pub use socket::{run_worker, SocketConfig, PORT_BASE_ENV};
pub use transport::{
    schedule_coded, schedule_uncoded, slot_units, transmit, CostModel, InboundMessage,
    LedgerEntry, ShuffleLedger, Slot,
};
