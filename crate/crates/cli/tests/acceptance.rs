//! The acceptance gate: eight end-to-end criteria, each reported as one
//! pass/fail line. Run with `--nocapture` to see the lines for passing
//! criteria too:
//!
//! ```text
//! cargo test --test acceptance -- --nocapture
//! ```

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::time::Instant;

use num_rational::Ratio;
use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};

use coded_terasort::{
    binomial, build_plan, coded_load_formula, decode_packet, encode_group,
    generate_records, merge_segments, optimal_r, partition_boundaries,
    predict_total_time, run_coded_terasort, run_terasort, uncoded_load_formula,
    CostModel, IntermediateValue, KeySpace, LocalValues, NodeId, Record, SocketConfig,
    SubsetId, Transport, KEY_MAX, VALUE_LEN,
};
use coded_terasort_cli::verify_output;

fn check(number: usize, name: &str, body: impl FnOnce() + UnwindSafe) {
    match catch_unwind(body) {
        Ok(()) => println!("[PASS] criterion {number}: {name}"),
        Err(panic) => {
            println!("[FAIL] criterion {number}: {name}");
            resume_unwind(panic);
        }
    }
}

fn cost() -> CostModel {
    CostModel::new(12.5e6, 0.0).unwrap()
}

fn reference_sort(records: &[Record]) -> Vec<Record> {
    let mut sorted = records.to_vec();
    sorted.sort();
    sorted
}

#[test]
fn c1_correctness_equivalence() {
    check(
        1,
        "both pipelines match a reference sort for K in 2..=8, every r, 5 seeds",
        || {
            let started = Instant::now();
            let counts = [1_000usize, 2_000, 4_000, 7_000, 10_000];
            let inputs: Vec<(Vec<Record>, Vec<Record>)> = counts
                .iter()
                .enumerate()
                .map(|(seed, &count)| {
                    let records = generate_records(count, seed as u64 + 100);
                    let expected = reference_sort(&records);
                    (records, expected)
                })
                .collect();
            for k in 2..=8 {
                for (records, expected) in &inputs {
                    let plain =
                        run_terasort(records, k, &cost(), &Transport::Sim).unwrap();
                    assert_eq!(&plain.output.concatenated(), expected, "plain K={k}");
                    for r in 1..k {
                        let coded =
                            run_coded_terasort(records, k, r, &cost(), &Transport::Sim)
                                .unwrap();
                        assert_eq!(
                            &coded.output.concatenated(),
                            expected,
                            "coded K={k} r={r}"
                        );
                    }
                }
            }
            let elapsed = started.elapsed();
            assert!(
                elapsed.as_secs() < 120,
                "correctness sweep took {elapsed:?}, budget is 2 minutes"
            );
        },
    );
}

#[test]
fn c2_exact_load_law() {
    check(
        2,
        "ledger-measured loads equal (1/r)(1-r/K) coded and 1-1/K plain, exactly",
        || {
            let records = generate_records(600, 11);
            for k in 2..=8 {
                let plain = run_terasort(&records, k, &cost(), &Transport::Sim).unwrap();
                assert_eq!(
                    plain.load.load,
                    uncoded_load_formula(k, 1),
                    "plain load at K={k}"
                );
                for r in 1..k {
                    let coded =
                        run_coded_terasort(&records, k, r, &cost(), &Transport::Sim)
                            .unwrap();
                    assert_eq!(
                        coded.load.load,
                        coded_load_formula(k, r),
                        "coded load at K={k} r={r}"
                    );
                }
            }
        },
    );
}

#[test]
fn c3_combinatorial_counts() {
    check(
        3,
        "files C(K,r), files/node C(K-1,r-1), groups C(K,r+1), packets/node C(K-1,r)",
        || {
            for k in 2..=10 {
                for r in 1..k {
                    let plan = build_plan(k, r).unwrap();
                    assert_eq!(plan.files().len() as u64, binomial(k, r));
                    assert_eq!(plan.groups().len() as u64, binomial(k, r + 1));
                    for node in 1..=k {
                        let node = NodeId::new(node);
                        assert_eq!(
                            plan.files_of(node).len() as u64,
                            binomial(k - 1, r - 1),
                            "files on node {node} at K={k} r={r}"
                        );
                        assert_eq!(
                            plan.groups_of(node).len() as u64,
                            binomial(k - 1, r),
                            "packets sent by node {node} at K={k} r={r}"
                        );
                    }
                }
            }
        },
    );
}

#[test]
fn c4_codec_round_trip() {
    check(
        4,
        "1000 randomized encode/decode/merge cycles recover every value bit-exactly",
        || {
            let mut rng = StdRng::seed_from_u64(2024);
            for cycle in 0..1_000 {
                let k = rng.random_range(2..=8usize);
                let r = rng.random_range(1..k);
                // A random multicast group of r+1 nodes.
                let group = SubsetId::new(
                    sample(&mut rng, k, r + 1)
                        .iter()
                        .map(|i| NodeId::new(i + 1))
                        .collect(),
                );
                // One needed value per group member; every tenth cycle uses
                // empty values, otherwise lengths are arbitrary (and mostly
                // not divisible by r).
                let values: Vec<IntermediateValue> = group
                    .members()
                    .iter()
                    .map(|&target| {
                        let count = if cycle % 10 == 0 {
                            0
                        } else {
                            rng.random_range(0..=12usize)
                        };
                        let records = (0..count)
                            .map(|_| {
                                let mut value = [0u8; VALUE_LEN];
                                rng.fill(&mut value[..]);
                                value.iter_mut().for_each(|b| *b = 0x20 + (*b % 95));
                                Record::new(rng.random_range(0..=KEY_MAX), value)
                            })
                            .collect();
                        IntermediateValue {
                            file: group.without(target),
                            partition: target.get(),
                            records,
                        }
                    })
                    .collect();
                // Each member stores every value except its own needed one.
                let locals_of = |node: NodeId| -> LocalValues {
                    let mut locals = LocalValues::new();
                    for value in &values {
                        if value.partition != node.get() {
                            locals.insert((value.file.clone(), value.partition), value.clone());
                        }
                    }
                    locals
                };
                for (i, &receiver) in group.members().iter().enumerate() {
                    let mut segments = Vec::new();
                    for &sender in group.members() {
                        if sender == receiver {
                            continue;
                        }
                        let packet =
                            encode_group(&group, sender, &locals_of(sender)).unwrap();
                        segments.push(
                            decode_packet(&packet, receiver, &locals_of(receiver))
                                .unwrap(),
                        );
                    }
                    let merged = merge_segments(segments).unwrap();
                    assert_eq!(merged, values[i], "cycle {cycle} receiver {receiver}");
                }
            }
        },
    );
}

#[test]
fn c5_time_model_reproduction() {
    check(
        5,
        "measured stage times give r*=23 and a 9x-11x predicted saving",
        || {
            let (t_map, t_shuffle, t_reduce) = (1.86, 945.72, 10.47);
            for k in [23usize, 26, 30, 100] {
                assert_eq!(optimal_r(t_map, t_shuffle, k).unwrap(), 23, "K={k}");
            }
            let baseline = predict_total_time(t_map, t_shuffle, t_reduce, 1);
            let best = predict_total_time(t_map, t_shuffle, t_reduce, 23);
            let ratio = baseline / best;
            assert!(
                (9.0..=11.0).contains(&ratio),
                "predicted saving {ratio} outside [9, 11]"
            );
        },
    );
}

/// Records whose partition index cycles 1..=K, so every partition and every
/// file bucket holds exactly the same record count.
fn evenly_partitioned_records(k: usize, total: usize) -> Vec<Record> {
    let partitioning = partition_boundaries(KeySpace::FULL, k).unwrap();
    (0..total)
        .map(|i| {
            let partition = i % k + 1;
            let key = partitioning.lower_of(partition) + (i / k) as u128;
            Record::new(key, [b'e'; VALUE_LEN])
        })
        .collect()
}

#[test]
fn c6_simulated_shuffle_time_scaling() {
    check(
        6,
        "K=6 coded/plain shuffle-time ratio within 5% of (1/r)(1-r/K)/(1-1/K)",
        || {
            // 7200 is divisible by K*C(K,r) for r in {2,3}, so the byte
            // split is the only quantization left.
            let records = evenly_partitioned_records(6, 7_200);
            let plain = run_terasort(&records, 6, &cost(), &Transport::Sim).unwrap();
            assert!(plain.times.shuffle > 0.0);
            for r in [2usize, 3] {
                let coded =
                    run_coded_terasort(&records, 6, r, &cost(), &Transport::Sim).unwrap();
                let measured = coded.times.shuffle / plain.times.shuffle;
                let predicted = (1.0 / r as f64) * (1.0 - r as f64 / 6.0) / (1.0 - 1.0 / 6.0);
                let deviation = (measured - predicted).abs() / predicted;
                assert!(
                    deviation <= 0.05,
                    "r={r}: measured ratio {measured}, predicted {predicted}, \
                     deviation {deviation}"
                );
            }
        },
    );
}

#[test]
fn c7_worked_example_units() {
    check(
        7,
        "K=3 unit accounting scaled to Q*N=18 gives 12 plain and 3 coded units",
        || {
            let records = generate_records(360, 7);
            let example_qn = Ratio::from_integer(18u64);
            let plain = run_terasort(&records, 3, &cost(), &Transport::Sim).unwrap();
            assert_eq!(plain.load.load * example_qn, Ratio::from_integer(12));
            let coded = run_coded_terasort(&records, 3, 2, &cost(), &Transport::Sim).unwrap();
            assert_eq!(coded.load.load * example_qn, Ratio::from_integer(3));
        },
    );
}

#[test]
fn c8_transport_equivalence() {
    check(
        8,
        "sim and socket transports agree on the ledger and the sorted output",
        || {
            let records = generate_records(3_000, 42);
            let socket = Transport::Socket(SocketConfig::new(env!(
                "CARGO_BIN_EXE_coded-terasort"
            )));
            let sim_run =
                run_coded_terasort(&records, 4, 2, &cost(), &Transport::Sim).unwrap();
            let socket_run = run_coded_terasort(&records, 4, 2, &cost(), &socket).unwrap();
            assert_eq!(sim_run.ledger, socket_run.ledger, "ledgers differ");
            assert_eq!(sim_run.output, socket_run.output, "outputs differ");
            assert!(verify_output(&socket_run.output, &records));
            assert_eq!(sim_run.load.load, socket_run.load.load);
        },
    );
}
