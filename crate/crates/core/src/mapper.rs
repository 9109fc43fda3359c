//! The Map stage: bucket a file's records by key range, keep only the
//! buckets this node will ever use, and serialize buckets for transfer.

use crate::error::{Error, Result};
use crate::model::{partition_of, NodeId, Partitioning, Record, RECORD_LEN};
use crate::placement::{FileAssignment, SubsetId};

/// The records of one file whose keys fall in one partition: `I_S^j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntermediateValue {
    pub file: SubsetId,
    /// 1-based partition index `j`.
    pub partition: usize,
    pub records: Vec<Record>,
}

/// Width of the record-count prefix in a serialized value.
pub const VALUE_HEADER_LEN: usize = 4;

impl IntermediateValue {
    /// Serializes as a 4-byte little-endian record count followed by the
    /// records back-to-back.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VALUE_HEADER_LEN + self.records.len() * RECORD_LEN);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for record in &self.records {
            out.extend_from_slice(&record.to_bytes());
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes) for a known (file, partition).
    pub fn from_bytes(file: SubsetId, partition: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < VALUE_HEADER_LEN {
            return Err(Error::MalformedData(format!(
                "value of {} bytes is shorter than its header",
                bytes.len()
            )));
        }
        let count = u32::from_le_bytes(bytes[..VALUE_HEADER_LEN].try_into().expect("width"))
            as usize;
        let body = &bytes[VALUE_HEADER_LEN..];
        if body.len() != count * RECORD_LEN {
            return Err(Error::MalformedData(format!(
                "value declares {count} records but carries {} body bytes",
                body.len()
            )));
        }
        let records = body
            .chunks_exact(RECORD_LEN)
            .map(|chunk| Record::from_bytes(chunk.try_into().expect("width")))
            .collect();
        Ok(IntermediateValue {
            file,
            partition,
            records,
        })
    }
}

/// Buckets a file's records into the K intermediate values `I_S^1..I_S^K`,
/// preserving file order within each bucket (stable bucketing keeps the
/// serialized bytes identical on every node that maps this file).
pub fn hash_file(
    file: &FileAssignment,
    partitioning: &Partitioning,
) -> Result<Vec<IntermediateValue>> {
    let k = partitioning.k();
    let mut buckets: Vec<Vec<Record>> = vec![Vec::new(); k];
    for (index, record) in file.records.iter().enumerate() {
        let partition = partition_of(record.key, partitioning).map_err(|err| match err {
            Error::OutOfDomain { key, .. } => Error::OutOfDomain {
                key,
                context: format!("record {index} of file {}", file.file),
            },
            other => other,
        })?;
        buckets[partition - 1].push(*record);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(i, records)| IntermediateValue {
            file: file.file.clone(),
            partition: i + 1,
            records,
        })
        .collect())
}

/// Applies the map-stage retain rule for `node` mapping file `S`: keep the
/// node's own partition `I_S^node` plus every `I_S^i` with `i` outside `S`;
/// drop `I_S^i` for the other members of `S`, which map the file themselves.
pub fn retain_relevant(
    node: NodeId,
    values: Vec<IntermediateValue>,
) -> Result<Vec<IntermediateValue>> {
    let Some(first) = values.first() else {
        return Ok(values);
    };
    let file = first.file.clone();
    if !file.contains(node) {
        return Err(Error::InvalidCall(format!(
            "node {node} does not store file {file}"
        )));
    }
    Ok(values
        .into_iter()
        .filter(|value| {
            value.partition == node.get() || !file.contains(NodeId::new(value.partition))
        })
        .collect())
}

// ---- Tests ----

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        generate_records, partition_boundaries, KeySpace, Partitioning, VALUE_LEN,
    };
    use crate::placement::{assign_files, build_plan};

    fn parts_0_100(k: usize) -> Partitioning {
        partition_boundaries(KeySpace::new(0, 100).unwrap(), k).unwrap()
    }

    fn file_with_keys(members: &[usize], keys: &[u128]) -> FileAssignment {
        FileAssignment {
            file: SubsetId::from_indices(members),
            records: keys
                .iter()
                .map(|&key| Record::new(key, [b'v'; VALUE_LEN]))
                .collect(),
        }
    }

    #[test]
    fn hashing_buckets_by_partition() {
        let file = file_with_keys(&[1, 2], &[10, 30, 51, 80]);
        let values = hash_file(&file, &parts_0_100(4)).unwrap();
        assert_eq!(values.len(), 4);
        for (i, value) in values.iter().enumerate() {
            assert_eq!(value.partition, i + 1);
            assert_eq!(value.records.len(), 1);
        }
        assert_eq!(values[0].records[0].key, 10);
        assert_eq!(values[1].records[0].key, 30);
        assert_eq!(values[2].records[0].key, 51);
        assert_eq!(values[3].records[0].key, 80);
    }

    #[test]
    fn hashing_empty_file_yields_empty_buckets() {
        let file = file_with_keys(&[1], &[]);
        let values = hash_file(&file, &parts_0_100(4)).unwrap();
        assert_eq!(values.len(), 4);
        assert!(values.iter().all(|v| v.records.is_empty()));
    }

    #[test]
    fn hashing_preserves_order_and_sizes() {
        // Oracle: recompute partition_of per record and compare bucket sizes.
        let records = generate_records(500, 21);
        let file = FileAssignment {
            file: SubsetId::from_indices(&[2, 3]),
            records: records.clone(),
        };
        let parts = partition_boundaries(KeySpace::FULL, 5).unwrap();
        let values = hash_file(&file, &parts).unwrap();
        let total: usize = values.iter().map(|v| v.records.len()).sum();
        assert_eq!(total, records.len());
        for value in &values {
            let expected: Vec<Record> = records
                .iter()
                .filter(|r| partition_of(r.key, &parts).unwrap() == value.partition)
                .copied()
                .collect();
            assert_eq!(value.records, expected, "bucket {}", value.partition);
        }
    }

    #[test]
    fn hashing_flags_out_of_domain_records() {
        let file = file_with_keys(&[1], &[10, 3000]);
        let err = hash_file(&file, &parts_0_100(4)).unwrap_err();
        match err {
            Error::OutOfDomain { key, context } => {
                assert_eq!(key, 3000);
                assert!(context.contains("record 1"), "context: {context}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn retain_drops_partitions_owned_by_other_members() {
        let file = file_with_keys(&[1, 2], &[10, 30, 51, 80]);
        let values = hash_file(&file, &parts_0_100(4)).unwrap();
        let kept = retain_relevant(NodeId::new(1), values).unwrap();
        let partitions: Vec<usize> = kept.iter().map(|v| v.partition).collect();
        assert_eq!(partitions, vec![1, 3, 4]);
    }

    #[test]
    fn retain_keeps_everything_for_single_copy_files() {
        let file = file_with_keys(&[2], &[10, 30, 51, 80]);
        let values = hash_file(&file, &parts_0_100(4)).unwrap();
        let kept = retain_relevant(NodeId::new(2), values).unwrap();
        assert_eq!(kept.len(), 4);
    }

    #[test]
    fn retain_matches_set_algebra_oracle() {
        // Keep {k} plus the complement of S: K=5, S={2,3,4}, node 3.
        let file = file_with_keys(&[2, 3, 4], &[0, 30, 45, 60, 90]);
        let values = hash_file(&file, &parts_0_100(5)).unwrap();
        let kept = retain_relevant(NodeId::new(3), values).unwrap();
        let partitions: Vec<usize> = kept.iter().map(|v| v.partition).collect();
        assert_eq!(partitions, vec![1, 3, 5]);
        assert_eq!(partitions.len(), 5 - 3 + 1);
    }

    #[test]
    fn retain_rejects_non_members() {
        let file = file_with_keys(&[1, 2], &[10]);
        let values = hash_file(&file, &parts_0_100(4)).unwrap();
        assert!(matches!(
            retain_relevant(NodeId::new(3), values),
            Err(Error::InvalidCall(_))
        ));
    }

    #[test]
    fn map_outputs_cover_input_per_partition() {
        // Union of I_S^j over all files equals the centrally computed
        // partition-j records, for every j.
        let records = generate_records(600, 5);
        let plan = build_plan(5, 2).unwrap();
        let parts = partition_boundaries(KeySpace::FULL, 5).unwrap();
        let assignments = assign_files(&plan, &records).unwrap();
        let mut by_partition: Vec<Vec<Record>> = vec![Vec::new(); 5];
        for assignment in &assignments {
            for value in hash_file(assignment, &parts).unwrap() {
                by_partition[value.partition - 1].extend(value.records);
            }
        }
        for (i, bucket) in by_partition.iter().enumerate() {
            let mut got = bucket.clone();
            let mut expected: Vec<Record> = records
                .iter()
                .filter(|r| partition_of(r.key, &parts).unwrap() == i + 1)
                .copied()
                .collect();
            got.sort_unstable();
            expected.sort_unstable();
            assert_eq!(got, expected, "partition {}", i + 1);
        }
    }

    #[test]
    fn discarded_values_are_retained_by_their_owners() {
        let plan = build_plan(4, 2).unwrap();
        let records = generate_records(240, 8);
        let parts = partition_boundaries(KeySpace::FULL, 4).unwrap();
        for assignment in assign_files(&plan, &records).unwrap() {
            let values = hash_file(&assignment, &parts).unwrap();
            for member in assignment.file.members() {
                let kept = retain_relevant(*member, values.clone()).unwrap();
                assert_eq!(kept.len(), 4 - 2 + 1);
                // The member's own partition always survives its own map.
                assert!(kept.iter().any(|v| v.partition == member.get()));
            }
        }
    }

    #[test]
    fn value_bytes_round_trip() {
        let records = generate_records(7, 2);
        let value = IntermediateValue {
            file: SubsetId::from_indices(&[1, 3]),
            partition: 2,
            records,
        };
        let bytes = value.to_bytes();
        assert_eq!(bytes.len(), VALUE_HEADER_LEN + 7 * RECORD_LEN);
        let back =
            IntermediateValue::from_bytes(value.file.clone(), value.partition, &bytes).unwrap();
        assert_eq!(back, value);
    }

    #[test]
    fn value_framing_mismatch_is_rejected() {
        let value = IntermediateValue {
            file: SubsetId::from_indices(&[1]),
            partition: 1,
            records: generate_records(2, 3),
        };
        let mut bytes = value.to_bytes();
        bytes.pop();
        assert!(matches!(
            IntermediateValue::from_bytes(value.file.clone(), 1, &bytes),
            Err(Error::MalformedData(_))
        ));
        assert!(matches!(
            IntermediateValue::from_bytes(value.file.clone(), 1, &[1, 0]),
            Err(Error::MalformedData(_))
        ));
    }
}
