//! Redundant file placement: every size-r node subset shares one input file,
//! and size-(r+1) subsets form the multicast groups. All enumeration is
//! lexicographic so every node derives the identical plan independently.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{NodeId, Record};

/// Exact binomial coefficient via the multiplicative formula.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u64 = 1;
    for i in 1..=k {
        // Multiply before dividing; the running product is always integral.
        result = result * (n - k + i) as u64 / i as u64;
    }
    result
}

/// A nonempty set of nodes with ascending, distinct members. Identifies an
/// input file (|S| = r) or a multicast group (|M| = r+1).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubsetId {
    members: Vec<NodeId>,
}

impl SubsetId {
    pub fn new(mut members: Vec<NodeId>) -> Self {
        members.sort_unstable();
        let distinct = members.windows(2).all(|pair| pair[0] < pair[1]);
        assert!(
            !members.is_empty() && distinct,
            "subset members must be nonempty and distinct"
        );
        SubsetId { members }
    }

    /// Convenience constructor from raw 1-based indices.
    pub fn from_indices(indices: &[usize]) -> Self {
        SubsetId::new(indices.iter().map(|&i| NodeId::new(i)).collect())
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.members.binary_search(&node).is_ok()
    }

    /// The subset with `node` removed; panics if `node` is not a member or
    /// would leave the subset empty.
    pub fn without(&self, node: NodeId) -> SubsetId {
        let mut members = self.members.clone();
        let at = members.binary_search(&node).expect("node must be a member");
        members.remove(at);
        assert!(!members.is_empty(), "subset must stay nonempty");
        SubsetId { members }
    }
}

impl fmt::Debug for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, member) in self.members.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{member}")?;
        }
        write!(f, "}}")
    }
}

/// All size-`size` subsets of `{1, ..., k}` in lexicographic member order.
pub fn enumerate_subsets(k: usize, size: usize) -> Result<Vec<SubsetId>> {
    if size < 1 || size > k {
        return Err(Error::InvalidConfig(format!(
            "subset size {size} is outside 1..={k}"
        )));
    }
    let mut subsets = Vec::with_capacity(binomial(k, size) as usize);
    let mut current: Vec<usize> = (1..=size).collect();
    loop {
        subsets.push(SubsetId::from_indices(&current));
        // Advance to the lexicographic successor.
        let mut i = size;
        while i > 0 && current[i - 1] == k - (size - i) {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        current[i - 1] += 1;
        for j in i..size {
            current[j] = current[j - 1] + 1;
        }
    }
    Ok(subsets)
}

/// Lexicographic rank of `subset` among all subsets of its size.
pub fn subset_rank(k: usize, subset: &SubsetId) -> u64 {
    let size = subset.len();
    let mut rank = 0u64;
    let mut prev = 0usize;
    for (i, member) in subset.members().iter().enumerate() {
        for skipped in prev + 1..member.get() {
            rank += binomial(k - skipped, size - 1 - i);
        }
        prev = member.get();
    }
    rank
}

/// Inverse of [`subset_rank`]: the subset of `size` members at `rank`.
pub fn subset_unrank(k: usize, size: usize, rank: u64) -> Result<SubsetId> {
    let total = binomial(k, size);
    if size < 1 || size > k || rank >= total {
        return Err(Error::InvalidCall(format!(
            "rank {rank} outside 0..{total} for (k={k}, size={size})"
        )));
    }
    let mut members = Vec::with_capacity(size);
    let mut remaining = rank;
    let mut candidate = 1usize;
    for slot in 0..size {
        loop {
            let below = binomial(k - candidate, size - 1 - slot);
            if remaining < below {
                members.push(candidate);
                candidate += 1;
                break;
            }
            remaining -= below;
            candidate += 1;
        }
    }
    Ok(SubsetId::from_indices(&members))
}

/// The full placement for one run: which subsets label files, which subsets
/// form multicast groups, and which file indices live on each node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementPlan {
    k: usize,
    r: usize,
    files: Vec<SubsetId>,
    groups: Vec<SubsetId>,
    node_files: Vec<Vec<usize>>,
    node_groups: Vec<Vec<usize>>,
}

impl PlacementPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    /// The computation load: how many nodes map each file.
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn files(&self) -> &[SubsetId] {
        &self.files
    }

    pub fn groups(&self) -> &[SubsetId] {
        &self.groups
    }

    /// Indices into [`files`](Self::files) stored on `node`, ascending.
    pub fn files_of(&self, node: NodeId) -> &[usize] {
        &self.node_files[node.get() - 1]
    }

    /// Indices into [`groups`](Self::groups) containing `node`, ascending.
    pub fn groups_of(&self, node: NodeId) -> &[usize] {
        &self.node_groups[node.get() - 1]
    }
}

fn index_by_node(k: usize, subsets: &[SubsetId]) -> Vec<Vec<usize>> {
    let mut by_node = vec![Vec::new(); k];
    for (index, subset) in subsets.iter().enumerate() {
        for member in subset.members() {
            by_node[member.get() - 1].push(index);
        }
    }
    by_node
}

/// Builds the coded placement for `k` nodes at redundancy `r`: C(k,r) files,
/// file S on every node of S, and C(k,r+1) multicast groups.
pub fn build_plan(k: usize, r: usize) -> Result<PlacementPlan> {
    if r < 1 || r > k.saturating_sub(1) {
        return Err(Error::InvalidConfig(format!(
            "redundancy {r} is outside 1..={} for {k} nodes",
            k.saturating_sub(1)
        )));
    }
    let files = enumerate_subsets(k, r)?;
    let groups = enumerate_subsets(k, r + 1)?;
    let node_files = index_by_node(k, &files);
    let node_groups = index_by_node(k, &groups);
    Ok(PlacementPlan {
        k,
        r,
        files,
        groups,
        node_files,
        node_groups,
    })
}

/// The degenerate single-copy placement: file `{k}` lives on node `k` only
/// and there are no multicast groups.
pub fn uncoded_plan(k: usize) -> Result<PlacementPlan> {
    if k < 1 {
        return Err(Error::InvalidConfig("node count must be at least 1".into()));
    }
    let files: Vec<SubsetId> = (1..=k).map(|i| SubsetId::from_indices(&[i])).collect();
    let node_files = (0..k).map(|i| vec![i]).collect();
    Ok(PlacementPlan {
        k,
        r: 1,
        files,
        groups: Vec::new(),
        node_files,
        node_groups: vec![Vec::new(); k],
    })
}

/// One input file: the node subset that stores it plus its records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileAssignment {
    pub file: SubsetId,
    pub records: Vec<Record>,
}

/// Splits records into `n_files` contiguous chunks in input order; the first
/// `count mod n_files` chunks are one record longer.
pub fn split_input(records: &[Record], n_files: usize) -> Result<Vec<Vec<Record>>> {
    if n_files < 1 {
        return Err(Error::InvalidConfig("file count must be at least 1".into()));
    }
    let base = records.len() / n_files;
    let extra = records.len() % n_files;
    let mut chunks = Vec::with_capacity(n_files);
    let mut offset = 0;
    for i in 0..n_files {
        let len = if i < extra { base + 1 } else { base };
        chunks.push(records[offset..offset + len].to_vec());
        offset += len;
    }
    Ok(chunks)
}

/// Pairs a plan's file subsets with the corresponding input chunks.
pub fn assign_files(plan: &PlacementPlan, records: &[Record]) -> Result<Vec<FileAssignment>> {
    let chunks = split_input(records, plan.files().len())?;
    Ok(plan
        .files()
        .iter()
        .cloned()
        .zip(chunks)
        .map(|(file, records)| FileAssignment { file, records })
        .collect())
}

// ---- Tests ----
