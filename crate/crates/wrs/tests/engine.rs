//! Multi-PE engine behavior on the threaded runtime, checked against the
//! oracles.

use wrs::oracle;
use wrs::spmd::run_spmd;
use wrs_core::{
    CommError, Communicator, Item, PeRng, SampleSize, Sampler, SamplerConfig, Selection,
    StreamError,
};

/// Deals `weights` round-robin over `p` PEs in `batches` batches, runs the
/// sampler `runs` times and returns the count of each k-subset (bit mask).
fn subset_counts(
    weights: &[f64],
    p: usize,
    batches: usize,
    config: SamplerConfig,
    runs: u64,
) -> Vec<(u32, u64)> {
    let n = weights.len();
    let stream: Vec<Vec<Vec<Item>>> = (0..batches)
        .map(|j| {
            (0..p)
                .map(|r| {
                    (j * n / batches..(j + 1) * n / batches)
                        .filter(|i| i % p == r)
                        .map(|i| Item::new(weights[i], i as u64))
                        .collect()
                })
                .collect()
        })
        .collect();
    let masks = run_spmd(p, p, |comm| {
        let rank = comm.rank();
        let mut masks = Vec::new();
        for run in 0..runs {
            let mut s = Sampler::new(config, rank, PeRng::new(run, rank as u64)).unwrap();
            for batch in &stream {
                s.process_batch(comm, &batch[rank]).unwrap();
            }
            let sample = s.current_sample(comm, 0).unwrap();
            masks.push(sample.iter().map(|x| 1u32 << x.item_id).sum::<u32>());
        }
        masks
    });
    let mut counts: Vec<(u32, u64)> = Vec::new();
    for m in &masks[0] {
        match counts.iter_mut().find(|(mask, _)| mask == m) {
            Some(c) => c.1 += 1,
            None => counts.push((*m, 1)),
        }
    }
    counts
}

fn gof(weights: &[f64], k: usize, counts: &[(u32, u64)], runs: u64) -> f64 {
    let exact = oracle::exact_subset_probabilities(weights, k).unwrap();
    let total: u64 = counts.iter().map(|c| c.1).sum();
    assert_eq!(total, runs);
    let observed: Vec<u64> = exact
        .iter()
        .map(|(m, _)| counts.iter().find(|c| c.0 == *m).map_or(0, |c| c.1))
        .collect();
    assert_eq!(
        observed.iter().sum::<u64>(),
        runs,
        "sample outside the k-subsets"
    );
    let expected: Vec<f64> = exact
        .iter()
        .map(|(_, p)| num_traits::ToPrimitive::to_f64(p).unwrap())
        .collect();
    oracle::chi_squared_gof(&observed, &expected, runs)
}

#[test]
fn pivot_selection_matches_exact_subsets() {
    let weights = [3.0, 1.0, 0.5, 2.0, 7.0, 1.0];
    let runs = 20_000;
    let counts = subset_counts(
        &weights,
        3,
        2,
        SamplerConfig::weighted(3).with_selection(Selection::Pivots(2)),
        runs,
    );
    let pv = gof(&weights, 3, &counts, runs);
    assert!(pv > 0.001, "p-value {pv}");
}

#[test]
fn gather_selection_matches_exact_subsets() {
    let weights = [3.0, 1.0, 0.5, 2.0, 7.0, 1.0];
    let runs = 20_000;
    let config = SamplerConfig::weighted(3).with_selection(Selection::Gather { root: 1 });
    let counts = subset_counts(&weights, 3, 2, config, runs);
    let pv = gof(&weights, 3, &counts, runs);
    assert!(pv > 0.001, "p-value {pv}");
}

#[test]
fn uneven_batches_and_idle_pes() {
    // Four PEs but only two items per batch: most PEs see nothing.
    let weights = [1.0, 4.0, 2.0, 2.0];
    let runs = 20_000;
    let counts = subset_counts(&weights, 4, 2, SamplerConfig::weighted(2), runs);
    let pv = gof(&weights, 2, &counts, runs);
    assert!(pv > 0.001, "p-value {pv}");
}

#[test]
fn threshold_is_the_kth_smallest_key() {
    let items: Vec<Item> = (0..5).map(|i| Item::new(1.0 + i as f64, i)).collect();
    let out = run_spmd(1, 1, |comm| {
        let mut s = Sampler::new(SamplerConfig::weighted(5), 0, PeRng::new(4, 0)).unwrap();
        let report = s.process_batch(comm, &items).unwrap();
        (report, s.current_sample(comm, 0).unwrap())
    });
    let (report, sample) = &out[0];
    assert_eq!(report.sample_size, 5);
    assert_eq!(sample.len(), 5);
    let kth = oracle::kth_of_merged(std::slice::from_ref(sample), 5).unwrap();
    assert_eq!(report.threshold.value(), Some(kth.key));
}

#[test]
fn range_sizes_stay_in_range() {
    let config = SamplerConfig::weighted(1)
        .with_size(SampleSize::Range {
            lower: 100,
            upper: 150,
        })
        .with_selection(Selection::Pivots(4));
    let out = run_spmd(6, 3, |comm| {
        let rank = comm.rank();
        let mut s = Sampler::new(config, rank, PeRng::new(5, rank as u64)).unwrap();
        let mut sizes = Vec::new();
        for batch in 0..20u64 {
            let items: Vec<Item> = (0..500)
                .map(|j| {
                    Item::new(
                        1.0 + ((j * 7 + batch) % 13) as f64,
                        (batch * 6 + rank as u64) * 500 + j,
                    )
                })
                .collect();
            let r = s.process_batch(comm, &items).unwrap();
            let held = s.current_sample(comm, 0).unwrap();
            if rank == 0 {
                assert!(held.iter().all(|x| x.key <= r.threshold.value().unwrap()));
                sizes.push((r.sample_size, held.len() as u64));
            }
        }
        sizes
    });
    for &(reported, held) in &out[0] {
        assert_eq!(reported, held);
        assert!((100..=150).contains(&reported), "{reported}");
    }
}

#[test]
fn failing_pe_stops_the_group() {
    let out = run_spmd(4, 4, |comm| {
        let rank = comm.rank();
        let mut s =
            Sampler::new(SamplerConfig::weighted(3), rank, PeRng::new(1, rank as u64)).unwrap();
        let w = if rank == 2 { f64::NAN } else { 1.0 };
        let items = [Item::new(1.0, 0), Item::new(w, 1)];
        s.process_batch(comm, &items).map(|_| ())
    });
    assert!(matches!(
        out[2],
        Err(StreamError::InvalidWeight { index: 1, .. })
    ));
    for r in [0, 1, 3] {
        assert!(
            matches!(
                out[r],
                Err(StreamError::Comm(CommError::ProtocolViolation { .. }))
            ),
            "PE {r}: {:?}",
            out[r]
        );
    }
}
