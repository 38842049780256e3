//! Acceptance battery.
//!
//! Each check runs the engine end to end against an oracle from
//! [`crate::oracle`] and returns an [`Outcome`]. [`Scale::Full`] uses the
//! full acceptance sizes; [`Scale::Quick`] shrinks them so the whole
//! battery finishes in seconds.

use std::fmt;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use wrs_core::select::{select_gather, select_range};
use wrs_core::{
    Communicator, Item, KeyedItem, Mode, PeRng, Reservoir, SampleSize, Sampler, SamplerConfig,
    SelectionSpec, Single, StreamError, Threshold,
};

use crate::bench::{self, RunConfig, SelectVariant};
use crate::oracle;
use crate::spmd::run_spmd;
use crate::workload::{derive_seed, WeightDist};

/// Significance level for every goodness-of-fit test.
pub const ALPHA: f64 = 0.001;
/// Standard-error budget for per-item frequency checks.
pub const Z_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    #[default]
    Quick,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub scale: Scale,
    pub seed: u64,
    /// Upper bound on concurrently running PEs.
    pub threads: usize,
    /// Test hook: halve the threshold mid-run in the invariant check, which
    /// must then report violations.
    pub corrupt_threshold: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            scale: Scale::Quick,
            seed: 1,
            threads: 8,
            corrupt_threshold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} [{:>2}] {}: {}",
            self.id, self.name, self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "exact inclusion probabilities"),
    (2, "streaming matches one-shot"),
    (3, "distributed matches sequential"),
    (4, "selection exactness"),
    (5, "size and threshold invariants"),
    (6, "insertion bounds"),
    (7, "multi-pivot round reduction"),
    (8, "gather communication blowup"),
    (9, "uniform mode"),
    (10, "determinism across thread counts"),
    (11, "blocked skip equivalence"),
];

pub fn run_all(opts: &Options) -> Vec<Outcome> {
    CRITERIA
        .iter()
        .map(|&(id, _)| run_criterion(id, opts).unwrap())
        .collect()
}

/// Runs one criterion by number, or `None` if there is no such criterion.
pub fn run_criterion(id: u8, opts: &Options) -> Option<Outcome> {
    let name = CRITERIA.iter().find(|c| c.0 == id)?.1;
    let result = match id {
        1 => exact_inclusion(opts),
        2 => streaming_vs_one_shot(opts),
        3 => distributed_vs_sequential(opts),
        4 => selection_exactness(opts),
        5 => invariants(opts),
        6 => insertion_bounds(opts),
        7 => multi_pivot_rounds(opts),
        8 => gather_blowup(opts),
        9 => uniform_mode(opts),
        10 => determinism(opts),
        11 => blocked_skip(opts),
        _ => unreachable!(),
    };
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Some(Outcome {
        id,
        name,
        passed,
        detail,
    })
}

type Check = Result<(bool, String), String>;

fn pick<T>(scale: Scale, quick: T, full: T) -> T {
    match scale {
        Scale::Quick => quick,
        Scale::Full => full,
    }
}

/// A fixed stream cut into `batches` equal mini-batches, each dealt
/// round-robin to `p` PEs. Item ids are stream positions.
fn partition(weights: &[f64], p: usize, batches: usize, mode: Mode) -> Vec<Vec<Vec<Item>>> {
    let n = weights.len();
    (0..batches)
        .map(|j| {
            let mut per_pe = vec![Vec::new(); p];
            for i in j * n / batches..(j + 1) * n / batches {
                let item = match mode {
                    Mode::Weighted => Item::new(weights[i], i as u64),
                    Mode::Uniform => Item::unweighted(i as u64),
                };
                per_pe[i % p].push(item);
            }
            per_pe
        })
        .collect()
}

/// Runs the sampler `runs` times over the same partitioned stream and
/// returns each run's sample as sorted item ids.
fn repeated_samples(
    stream: &[Vec<Vec<Item>>],
    config: SamplerConfig,
    runs: u64,
    seed: u64,
    threads: usize,
) -> Result<Vec<Vec<u64>>, String> {
    let p = stream[0].len();
    let per_pe = run_spmd(p, threads, |comm| -> Result<Vec<Vec<u64>>, StreamError> {
        let rank = comm.rank();
        let mut samples = Vec::new();
        for run in 0..runs {
            let rng = PeRng::new(derive_seed(seed, &[run]), rank as u64);
            let mut sampler = Sampler::new(config, rank, rng)?;
            for batch in stream {
                sampler.process_batch(comm, &batch[rank])?;
            }
            let sample = sampler.current_sample(comm, 0)?;
            if rank == 0 {
                let mut ids: Vec<u64> = sample.iter().map(|x| x.item_id).collect();
                ids.sort_unstable();
                samples.push(ids);
            }
        }
        Ok(samples)
    });
    per_pe
        .into_iter()
        .next()
        .unwrap()
        .map_err(|e| e.to_string())
}

fn item_counts(samples: &[Vec<u64>], n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n];
    for id in samples.iter().flatten() {
        counts[*id as usize] += 1;
    }
    counts
}

/// Per-item z-scores and the subset chi-squared p-value of `samples`
/// against the exact distribution.
fn against_exact(samples: &[Vec<u64>], weights: &[f64], k: usize) -> Result<(f64, f64), String> {
    let runs = samples.len() as u64;
    let exact = oracle::exact_inclusion(weights, k)
        .map_err(|e| e.to_string())?
        .to_f64();
    let counts = item_counts(samples, weights.len());
    let max_z = counts
        .iter()
        .zip(&exact)
        .map(|(&c, &pi)| oracle::binomial_z(c, runs, pi).abs())
        .fold(0.0, f64::max);

    let subsets = oracle::exact_subset_probabilities(weights, k).map_err(|e| e.to_string())?;
    let mut observed = vec![0u64; subsets.len()];
    for s in samples {
        let mask: u32 = s.iter().map(|&i| 1u32 << i).sum();
        let cell = subsets
            .iter()
            .position(|(m, _)| *m == mask)
            .ok_or("sample of wrong size")?;
        observed[cell] += 1;
    }
    let expected: Vec<f64> = subsets.iter().map(|(_, p)| oracle_f64(p)).collect();
    Ok((max_z, oracle::chi_squared_gof(&observed, &expected, runs)))
}

fn oracle_f64(p: &num_rational::BigRational) -> f64 {
    use num_traits::ToPrimitive;
    p.to_f64().unwrap()
}

fn exact_inclusion(opts: &Options) -> Check {
    let runs = pick(opts.scale, 20_000, 200_000);
    let weights = [1.0, 1.0, 2.0];
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [1, 4] {
        let stream = partition(&weights, p, 1, Mode::Weighted);
        let samples = repeated_samples(
            &stream,
            SamplerConfig::weighted(2),
            runs,
            derive_seed(opts.seed, &[1, p as u64]),
            opts.threads,
        )?;
        let (z, pv) = against_exact(&samples, &weights, 2)?;
        let freq: Vec<String> = item_counts(&samples, 3)
            .iter()
            .map(|&c| format!("{:.4}", c as f64 / runs as f64))
            .collect();
        ok &= z < Z_LIMIT && pv > ALPHA;
        detail.push(format!(
            "p={p} freq=({}) max|z|={z:.2} chi2 p={pv:.3}",
            freq.join(",")
        ));
    }
    Ok((ok, format!("{runs} runs; {}", detail.join("; "))))
}

fn uniform_weights(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| 100.0 * (1.0 - rng.random::<f64>()))
        .collect()
}

fn streaming_vs_one_shot(opts: &Options) -> Check {
    let (instances, runs, n) = pick(opts.scale, (2, 2_000, 2_000), (5, 10_000, 10_000));
    let k = 50;
    let mut rng = StdRng::seed_from_u64(derive_seed(opts.seed, &[2]));
    let mut worst = 1.0f64;
    for inst in 0..instances {
        let weights = uniform_weights(&mut rng, n);
        let stream = partition(&weights, 1, 4, Mode::Weighted);
        let seed = derive_seed(opts.seed, &[2, inst]);
        let samples = repeated_samples(&stream, SamplerConfig::weighted(k), runs, seed, 1)?;
        let streamed = item_counts(&samples, n);
        let mut reference = vec![0u64; n];
        let mut ref_rng = StdRng::seed_from_u64(derive_seed(seed, &[0x0072_6566]));
        for _ in 0..runs {
            for i in oracle::reference_sample(&mut ref_rng, &weights, k as usize) {
                reference[i] += 1;
            }
        }
        worst = worst.min(oracle::chi_squared_homogeneity(&streamed, &reference, 10));
    }
    Ok((
        worst > ALPHA,
        format!("{instances} instances, n={n}, k={k}, {runs} runs each; min chi2 p={worst:.4}"),
    ))
}

fn distributed_vs_sequential(opts: &Options) -> Check {
    let (runs, n) = pick(opts.scale, (2_000, 1_000), (10_000, 2_000));
    let k = 20;
    let mut rng = StdRng::seed_from_u64(derive_seed(opts.seed, &[3]));
    let weights = uniform_weights(&mut rng, n);
    let ps = [1usize, 2, 8, 32];
    let mut counts = Vec::new();
    for (i, &p) in ps.iter().enumerate() {
        let stream = partition(&weights, p, 4, Mode::Weighted);
        let seed = derive_seed(opts.seed, &[3, i as u64]);
        let samples = repeated_samples(
            &stream,
            SamplerConfig::weighted(k),
            runs,
            seed,
            opts.threads,
        )?;
        counts.push(item_counts(&samples, n));
    }
    let mut worst = (1.0f64, 0, 0);
    for a in 0..ps.len() {
        for b in a + 1..ps.len() {
            let pv = oracle::chi_squared_homogeneity(&counts[a], &counts[b], 10);
            if pv < worst.0 {
                worst = (pv, ps[a], ps[b]);
            }
        }
    }
    Ok((
        worst.0 > ALPHA,
        format!(
            "n={n}, k={k}, {runs} runs per p; min pairwise chi2 p={:.4} (p={} vs p={})",
            worst.0, worst.1, worst.2
        ),
    ))
}

struct SelectInstance {
    p: usize,
    local: Vec<Vec<KeyedItem>>,
    k: u64,
    lower: u64,
    upper: u64,
    pivots: usize,
}

fn random_select_instance(rng: &mut StdRng) -> SelectInstance {
    let p = rng.random_range(1..=16);
    let g: u64 = rng.random_range(1..=10_000);
    // Few distinct keys so that ties are common.
    let distinct = rng.random_range(1..=g.div_ceil(4) + 1);
    let mut local = vec![Vec::new(); p];
    for id in 0..g {
        let pe = rng.random_range(0..p);
        let key = rng.random_range(0..distinct) as f64 * 0.5;
        local[pe].push(KeyedItem::new(key, pe as u32, id));
    }
    let k = rng.random_range(1..=g);
    let (lower, upper) = if g == 1 {
        (1, 1)
    } else {
        let lower = rng.random_range(1..g);
        (lower, rng.random_range(lower + 1..=g))
    };
    SelectInstance {
        p,
        local,
        k,
        lower,
        upper,
        pivots: rng.random_range(1..=8),
    }
}

fn selection_exactness(opts: &Options) -> Check {
    let instances = pick(opts.scale, 50, 200);
    let mut rng = StdRng::seed_from_u64(derive_seed(opts.seed, &[4]));
    let (mut exact_ok, mut gather_ok, mut range_ok) = (0u64, 0u64, 0u64);
    for i in 0..instances {
        let inst = random_select_instance(&mut rng);
        let expected = oracle::kth_of_merged(&inst.local, inst.k as usize).unwrap();
        let results = run_spmd(inst.p, opts.threads, |comm| {
            let rank = comm.rank();
            let mine = &inst.local[rank];
            let res: Reservoir = mine.iter().copied().collect();
            let mut prng = PeRng::new(derive_seed(opts.seed, &[4, i]), rank as u64);
            let exact = select_range(
                comm,
                &res,
                SelectionSpec::exact(inst.k, inst.pivots),
                &mut prng,
            );
            let gather = select_gather(comm, &mut Vec::new(), mine.clone(), inst.k, 0);
            let range = (inst.lower < inst.upper).then(|| {
                let spec = SelectionSpec::range(inst.lower, inst.upper, inst.pivots);
                select_range(comm, &res, spec, &mut prng)
            });
            (exact, gather, range)
        });
        let (exact, gather, range) = &results[0];
        let agree = results
            .iter()
            .all(|r| r.0 == *exact && r.1 == *gather && r.2 == *range);
        exact_ok += u64::from(agree && exact.as_ref().is_ok_and(|r| r.threshold == expected));
        gather_ok += u64::from(agree && gather.as_ref().is_ok_and(|r| r.threshold == expected));
        range_ok += u64::from(
            agree
                && match range {
                    None => true,
                    Some(Ok(r)) => {
                        (inst.lower..=inst.upper).contains(&r.achieved_rank)
                            && oracle::merged_rank(&inst.local, &r.threshold) as u64
                                == r.achieved_rank
                    }
                    Some(Err(_)) => false,
                },
        );
    }
    Ok((
        exact_ok == instances && gather_ok == instances && range_ok == instances,
        format!(
            "exact {exact_ok}/{instances}, gather {gather_ok}/{instances}, range {range_ok}/{instances}"
        ),
    ))
}

#[derive(Default)]
struct InvariantTally {
    checked: u64,
    size: u64,
    key_bound: u64,
    monotone: u64,
    oracle: u64,
}

fn invariants(opts: &Options) -> Check {
    let (p, k, b, batches) = pick(opts.scale, (4, 100, 1_000, 30), (16, 1_000, 10_000, 100));
    let mut config = RunConfig::new(p, k, b, batches);
    config.seed = derive_seed(opts.seed, &[5]);
    let corrupt_at = opts.corrupt_threshold.then_some(batches / 2);
    let results = run_spmd(
        p,
        opts.threads,
        |comm| -> Result<Option<InvariantTally>, StreamError> {
            let rank = comm.rank();
            let workload = config.workload();
            let mut sampler =
                Sampler::new(config.sampler_config(), rank, config.sampler_rng(rank))?;
            let mut tally = InvariantTally::default();
            let mut previous: Option<f64> = None;
            for batch in 0..batches {
                let report = sampler.process_batch(comm, &workload.batch(batch, rank))?;
                if corrupt_at == Some(batch) {
                    let t = sampler.threshold().value().unwrap_or(1.0);
                    sampler.override_threshold(Threshold::new(t * 0.5).unwrap());
                }
                let all = comm.gather(0, sampler.reservoir().to_vec())?;
                if rank != 0 || report.seen < k {
                    continue;
                }
                tally.checked += 1;
                let Some(t) = sampler.threshold().value() else {
                    tally.size += 1;
                    continue;
                };
                tally.size += u64::from(all.len() as u64 != k || report.sample_size != k);
                tally.key_bound += all.iter().filter(|x| x.key > t).count() as u64;
                tally.monotone += u64::from(previous.is_some_and(|prev| t > prev));
                let kth = oracle::kth_of_merged(&[all], k as usize).map(|x| x.key);
                tally.oracle += u64::from(kth != Ok(t));
                previous = Some(t);
            }
            Ok((rank == 0).then_some(tally))
        },
    );
    let tally = results
        .into_iter()
        .next()
        .unwrap()
        .map_err(|e| e.to_string())?
        .ok_or("no tally from PE 0")?;
    let violations = tally.size + tally.key_bound + tally.monotone + tally.oracle;
    Ok((
        violations == 0 && tally.checked > 0,
        format!(
            "p={p}, k={k}, b={b}: {} batches checked; violations: size {}, key bound {}, monotone {}, oracle {}",
            tally.checked, tally.size, tally.key_bound, tally.monotone, tally.oracle
        ),
    ))
}

/// The two insertion bounds `(mean, max)` for the given parameters.
pub fn insertion_bounds_for(p: usize, k: u64, n: u64) -> (f64, f64) {
    let per_pe = k as f64 / p as f64;
    let mu = per_pe * (1.0 + (n as f64 / k as f64).ln());
    let mean = 2.0 * (mu + per_pe);
    let max = 2.0 * (mu + per_pe + (2.0 * mu * (p as f64).ln()).sqrt());
    (mean, max)
}

fn insertion_bounds(opts: &Options) -> Check {
    // The quick scale keeps b below k/p so that the unset-threshold phase is
    // short; the full scale uses the acceptance configuration.
    let (p, k, b, batches, seeds) = pick(
        opts.scale,
        (4, 1_000, 100, 400, 5),
        (16, 1_000, 10_000, 10, 30),
    );
    let n = p as u64 * b as u64 * batches;
    let (mean_bound, max_bound) = insertion_bounds_for(p, k, n);
    let (mut mean_sum, mut max_sum, mut later_sum, mut later_max_sum) = (0.0, 0.0, 0.0, 0.0);
    for s in 0..seeds {
        let mut config = RunConfig::new(p, k, b, batches);
        config.seed = derive_seed(opts.seed, &[6, s]);
        config.threads = opts.threads;
        let out = bench::run(&config).map_err(|e| e.to_string())?;
        mean_sum += out.summary.mean_insertions;
        max_sum += out.summary.max_insertions as f64;
        // Insertions made while the global threshold was already set.
        let mut later = vec![0u64; p];
        let mut set = false;
        for row in &out.rows {
            match row.pe {
                Some(pe) if set => later[pe] += row.insertions,
                None => set |= row.threshold.is_some(),
                _ => {}
            }
        }
        later_sum += later.iter().sum::<u64>() as f64 / p as f64;
        later_max_sum += *later.iter().max().unwrap() as f64;
    }
    let seeds_f = seeds as f64;
    let (mean, max) = (mean_sum / seeds_f, max_sum / seeds_f);
    Ok((
        mean <= mean_bound && max <= max_bound,
        format!(
            "p={p}, k={k}, b={b}, n={n}, {seeds} seeds: mean {mean:.1} (bound {mean_bound:.1}), \
             max {max:.1} (bound {max_bound:.1}); after threshold set: mean {:.1}, max {:.1}",
            later_sum / seeds_f,
            later_max_sum / seeds_f
        ),
    ))
}

fn multi_pivot_rounds(opts: &Options) -> Check {
    let (p, k, b, batches, seeds) = pick(
        opts.scale,
        (16, 1_000, 1_000, 20, 5),
        (64, 10_000, 10_000, 50, 10),
    );
    let mut wins = 0u64;
    let mut pairs = Vec::new();
    for s in 0..seeds {
        let mut rounds = [0.0; 2];
        for (slot, d) in [1usize, 8].into_iter().enumerate() {
            let mut config = RunConfig::new(p, k, b, batches);
            config.select = SelectVariant::Exact { pivots: d };
            config.seed = derive_seed(opts.seed, &[7, s]);
            config.threads = opts.threads;
            rounds[slot] = bench::run(&config)
                .map_err(|e| e.to_string())?
                .summary
                .mean_rounds;
        }
        wins += u64::from(rounds[1] < rounds[0]);
        pairs.push(format!("{:.2}/{:.2}", rounds[0], rounds[1]));
    }
    Ok((
        wins * 10 >= 9 * seeds,
        format!(
            "d=8 fewer rounds in {wins}/{seeds} seeds (d=1/d=8: {})",
            pairs.join(" ")
        ),
    ))
}

fn gather_blowup(opts: &Options) -> Check {
    let (p, k, b, batches) = pick(
        opts.scale,
        (16, 10_000, 10_000, 20),
        (64, 10_000, 10_000, 20),
    );
    let mut words = Vec::new();
    for select in [SelectVariant::Gather, SelectVariant::Exact { pivots: 1 }] {
        let mut config = RunConfig::new(p, k, b, batches);
        config.select = select;
        config.seed = derive_seed(opts.seed, &[8]);
        config.threads = opts.threads;
        let out = bench::run(&config).map_err(|e| e.to_string())?;
        words.push(out.global_rows().map(|r| r.comm.words).collect::<Vec<_>>());
    }
    let late = 10..batches as usize;
    let worst = late
        .clone()
        .map(|j| words[0][j] as f64 / words[1][j].max(1) as f64)
        .fold(f64::INFINITY, f64::min);
    let mean = |w: &[u64]| w[late.clone()].iter().sum::<u64>() as f64 / late.len() as f64;
    Ok((
        worst >= 2.0,
        format!(
            "p={p}, k={k}: batches 10..{batches} words/batch gather {:.0} vs exact {:.0}; min ratio {worst:.1}",
            mean(&words[0]),
            mean(&words[1])
        ),
    ))
}

fn uniform_mode(opts: &Options) -> Check {
    let runs = pick(opts.scale, 20_000, 100_000);
    let (n, k) = (10usize, 3usize);
    let weights = vec![1.0; n];
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [1, 4] {
        let stream = partition(&weights, p, 2, Mode::Uniform);
        let seed = derive_seed(opts.seed, &[9, p as u64]);
        let samples = repeated_samples(
            &stream,
            SamplerConfig::uniform(k as u64),
            runs,
            seed,
            opts.threads,
        )?;
        let (z, pv) = against_exact(&samples, &weights, k)?;
        ok &= z < Z_LIMIT && pv > ALPHA;
        detail.push(format!("p={p} max|z|={z:.2} chi2 p={pv:.3}"));
    }

    let m = pick(opts.scale, 100_000u64, 1_000_000);
    let items: Vec<Item> = (0..m).map(Item::unweighted).collect();
    let mut sampler = Sampler::new(
        SamplerConfig::uniform(m + 1),
        0,
        PeRng::new(derive_seed(opts.seed, &[9, 0]), 0),
    )
    .map_err(|e| e.to_string())?;
    sampler.override_threshold(Threshold::new(0.5).unwrap());
    let report = sampler
        .process_batch(&mut Single::new(), &items)
        .map_err(|e| e.to_string())?;
    let z = oracle::binomial_z(report.insertions, m, 0.5);
    let reads_ok = report.weight_reads == 0;
    ok &= z.abs() < Z_LIMIT && reads_ok;
    detail.push(format!(
        "T=0.5: {} of {m} inserted, z={z:.2}, weight reads {}",
        report.insertions, report.weight_reads
    ));
    Ok((
        ok,
        format!("n={n}, k={k}, {runs} runs; {}", detail.join("; ")),
    ))
}

fn csv_without_wall(out: &bench::RunOutput) -> Result<String, String> {
    let mut buf = Vec::new();
    out.write_csv(&mut buf).map_err(|e| e.to_string())?;
    let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .filter_map(|l| l.rsplit_once(','))
        .map(|(rest, _)| rest)
        .collect::<Vec<_>>()
        .join("\n"))
}

fn determinism(opts: &Options) -> Check {
    let (p, k, b, batches) = pick(opts.scale, (8, 100, 1_000, 10), (16, 1_000, 10_000, 10));
    let variants: [(SelectVariant, SampleSize, Mode, WeightDist); 4] = [
        (
            SelectVariant::Exact { pivots: 1 },
            SampleSize::Fixed(k),
            Mode::Weighted,
            WeightDist::Uniform,
        ),
        (
            SelectVariant::Exact { pivots: 8 },
            SampleSize::Fixed(k),
            Mode::Weighted,
            WeightDist::SkewedNormal,
        ),
        (
            SelectVariant::Range { pivots: 4 },
            SampleSize::Range {
                lower: k,
                upper: 2 * k,
            },
            Mode::Uniform,
            WeightDist::Uniform,
        ),
        (
            SelectVariant::Gather,
            SampleSize::Fixed(k),
            Mode::Weighted,
            WeightDist::Uniform,
        ),
    ];
    let mut identical = 0;
    for (select, size, mode, weights) in variants {
        let mut config = RunConfig::new(p, k, b, batches);
        config.select = select;
        config.size = size;
        config.mode = mode;
        config.weights = weights;
        config.seed = derive_seed(opts.seed, &[10]);
        let mut outputs = Vec::new();
        for threads in [p, 3, 1] {
            config.threads = threads;
            outputs.push(csv_without_wall(
                &bench::run(&config).map_err(|e| e.to_string())?,
            )?);
        }
        identical += u32::from(outputs.iter().all(|o| *o == outputs[0]));
    }
    Ok((
        identical == variants.len() as u32,
        format!(
            "p={p}, threads {{{p},3,1}}: {identical}/{} configurations byte-identical",
            variants.len()
        ),
    ))
}

fn blocked_skip(opts: &Options) -> Check {
    let streams = pick(opts.scale, 200, 1_000);
    let mut rng = StdRng::seed_from_u64(derive_seed(opts.seed, &[11]));
    let mut mismatches = 0;
    let mut inserted = 0u64;
    for s in 0..streams {
        let batches = rng.random_range(1..=5);
        let stream: Vec<Vec<Item>> = {
            let mut id = 0u64;
            (0..batches)
                .map(|_| {
                    let len = rng.random_range(0..=2_000);
                    (0..len)
                        .map(|_| {
                            id += 1;
                            Item::new(rng.random_range(1..=1u32 << 20) as f64, id)
                        })
                        .collect()
                })
                .collect()
        };
        // Odd streams pin the threshold and keep every insertion, so the
        // reservoirs list exactly the inserted ids.
        let pinned = s % 2 == 1;
        let k = if pinned {
            u64::MAX
        } else {
            rng.random_range(1..=64)
        };
        let thresholds: Vec<f64> = (0..batches)
            .map(|_| 10f64.powf(rng.random_range(-9.0..-6.0)))
            .collect();
        let seed = derive_seed(opts.seed, &[11, s]);
        let mut samplers = [true, false].map(|blocked| {
            let config = SamplerConfig::weighted(k).with_blocked_skip(blocked);
            Sampler::new(config, 0, PeRng::new(seed, 0)).unwrap()
        });
        let mut same = true;
        for (batch, t) in stream.iter().zip(&thresholds) {
            let mut reports = Vec::new();
            for sampler in &mut samplers {
                if pinned {
                    sampler.override_threshold(Threshold::new(*t).unwrap());
                }
                reports.push(
                    sampler
                        .process_batch(&mut Single::new(), batch)
                        .map_err(|e| e.to_string())?,
                );
            }
            inserted += reports[0].insertions;
            // Read counts legitimately differ; everything else must not.
            let masked = |r: &wrs_core::BatchReport| wrs_core::BatchReport {
                weight_reads: 0,
                ..*r
            };
            same &= masked(&reports[0]) == masked(&reports[1])
                && samplers[0].reservoir().to_vec() == samplers[1].reservoir().to_vec();
        }
        mismatches += u32::from(!same);
    }
    Ok((
        mismatches == 0,
        format!("{streams} streams, {inserted} insertions; {mismatches} streams differ"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_formula() {
        let (mean, max) = insertion_bounds_for(16, 1_000, 1_600_000);
        assert!((mean - 1172.2).abs() < 0.5, "{mean}");
        assert!((max - 1280.1).abs() < 1.0, "{max}");
    }

    #[test]
    fn partition_round_robin() {
        let parts = partition(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 2, Mode::Weighted);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0][0].iter().map(|i| i.id).collect::<Vec<_>>(), [0, 2]);
        assert_eq!(parts[0][1].iter().map(|i| i.id).collect::<Vec<_>>(), [1]);
        assert_eq!(parts[1][1].iter().map(|i| i.id).collect::<Vec<_>>(), [3, 5]);
        assert_eq!(parts[1][1][1].weight, 6.0);
    }

    #[test]
    fn unknown_criterion() {
        assert!(run_criterion(12, &Options::default()).is_none());
    }

    #[test]
    fn corrupted_threshold_is_caught() {
        let opts = Options {
            corrupt_threshold: true,
            ..Options::default()
        };
        let out = run_criterion(5, &opts).unwrap();
        assert!(!out.passed, "{out}");
        assert!(out.detail.contains("key bound"));
        assert!(run_criterion(5, &Options::default()).unwrap().passed);
    }
}
