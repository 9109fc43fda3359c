//! Criterion benches for the stage kernels and the end-to-end simulated
//! runs. Run under both feature configurations to compare the rayon pool
//! against the sequential fallback:
//!
//! ```text
//! cargo bench -p coded-terasort
//! cargo bench -p coded-terasort --no-default-features
//! ```

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use std::hint::black_box;

use coded_terasort::{
    assign_files, build_plan, encode_group, generate_records, hash_file,
    partition_boundaries, retain_relevant, run_coded_terasort, run_terasort, CostModel,
    KeySpace, LocalValues, NodeId, Transport, RECORD_LEN,
};

const SEED: u64 = 42;

fn cost() -> CostModel {
    CostModel::new(12.5e6, 0.0).unwrap()
}

fn bench_generate(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate");
    for &count in &[1_000usize, 10_000] {
        group.throughput(Throughput::Bytes((count * RECORD_LEN) as u64));
        group.bench_function(format!("{count}_records"), |b| {
            b.iter(|| generate_records(black_box(count), black_box(SEED)))
        });
    }
    group.finish();
}

fn bench_map(c: &mut Criterion) {
    let k = 6;
    let records = generate_records(10_000, SEED);
    let plan = build_plan(k, 3).unwrap();
    let partitioning = partition_boundaries(KeySpace::FULL, k).unwrap();
    let assignments = assign_files(&plan, &records).unwrap();
    c.bench_function("map/hash_and_retain_k6_r3", |b| {
        b.iter(|| {
            for assignment in &assignments {
                let values = hash_file(assignment, &partitioning).unwrap();
                let node = assignment.file.members()[0];
                black_box(retain_relevant(node, values).unwrap());
            }
        })
    });
}

fn bench_encode(c: &mut Criterion) {
    let k = 6;
    let r = 3;
    let records = generate_records(10_000, SEED);
    let plan = build_plan(k, r).unwrap();
    let partitioning = partition_boundaries(KeySpace::FULL, k).unwrap();
    let assignments = assign_files(&plan, &records).unwrap();
    // Node 1's local values, as its map stage would leave them.
    let node = NodeId::new(1);
    let mut locals = LocalValues::new();
    for &index in plan.files_of(node) {
        let values = hash_file(&assignments[index], &partitioning).unwrap();
        for value in retain_relevant(node, values).unwrap() {
            locals.insert((value.file.clone(), value.partition), value);
        }
    }
    let groups: Vec<_> = plan
        .groups_of(node)
        .iter()
        .map(|&index| plan.groups()[index].clone())
        .collect();
    c.bench_function("encode/all_groups_of_node1_k6_r3", |b| {
        b.iter(|| {
            for group in &groups {
                black_box(encode_group(group, node, &locals).unwrap());
            }
        })
    });
}

fn bench_end_to_end(c: &mut Criterion) {
    let records = generate_records(10_000, SEED);
    let mut group = c.benchmark_group("end_to_end_sim");
    group.sample_size(10);
    group.throughput(Throughput::Bytes((records.len() * RECORD_LEN) as u64));
    group.bench_function("terasort_k6", |b| {
        b.iter_batched(
            || records.clone(),
            |input| run_terasort(&input, 6, &cost(), &Transport::Sim).unwrap(),
            BatchSize::LargeInput,
        )
    });
    for r in [2usize, 3] {
        group.bench_function(format!("coded_k6_r{r}"), |b| {
            b.iter_batched(
                || records.clone(),
                |input| run_coded_terasort(&input, 6, r, &cost(), &Transport::Sim).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generate, bench_map, bench_encode, bench_end_to_end);
criterion_main!(benches);
