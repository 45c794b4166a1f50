//! Exact posterior of the single-urn model on tiny instances, by
//! enumeration. Used to check the samplers' stationary distribution.
//!
//! The sum runs over every unordered haplotype pair of every individual and
//! every partition of the haplotype slots. Founder patterns are summed out
//! per block in closed form: with the mutation rate collapsed, a block's
//! likelihood depends on its total mismatch count across loci, so the count
//! distribution over patterns is built as a product of per-locus generating
//! polynomials rather than by listing the `|A|^T` patterns.

use std::collections::HashMap;

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::dp::{dp_gibbs_sweep, init_dp_state, DPConfig};
use crate::error::{Error, Result};
use crate::likelihood::{ln_beta, mismatch_class, mismatch_normalizer, MismatchClass};
use crate::model::{validate_dataset, Allele, Dataset, GenotypeSite, Haplotype, Hyperparams};
use crate::state::GenotypeChannel;

pub const MAX_INDIVIDUALS: usize = 5;
pub const MAX_LOCI: usize = 4;
pub const TERM_LIMIT: u128 = 100_000_000;

#[derive(Clone, Debug)]
pub struct OracleInstance {
    /// One population.
    pub data: Dataset,
    pub hyperparams: Hyperparams,
    /// Fixed urn concentration.
    pub tau: f64,
    /// Largest number of founders; `None` allows one per slot, which is the
    /// full support.
    pub k_max: Option<usize>,
    pub channel: GenotypeChannel,
}

/// Posterior distribution over unordered pairs, `h0 <= h1`, sorted by pair.
pub type PairMarginal = Vec<([Haplotype; 2], f64)>;

#[derive(Clone, Debug)]
pub struct OraclePosterior {
    pub phase: Vec<PairMarginal>,
    /// `k_distribution[k]`: posterior probability of `k` founders.
    pub k_distribution: Vec<f64>,
    pub terms: u128,
}

impl OraclePosterior {
    /// Most probable pair of each individual.
    pub fn map_phase(&self) -> Vec<[Haplotype; 2]> {
        self.phase
            .iter()
            .map(|m| {
                m.iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(p, _)| p.clone())
                    .expect("empty marginal")
            })
            .collect()
    }
}

/// Probability of a partition with the given block sizes under a Pólya urn
/// with concentration `tau`.
pub fn partition_probability(block_sizes: &[usize], tau: f64) -> f64 {
    let n: usize = block_sizes.iter().sum();
    let mut log_p = ln_gamma(tau) - ln_gamma(tau + n as f64) + block_sizes.len() as f64 * tau.ln();
    for &s in block_sizes {
        log_p += ln_gamma(s as f64);
    }
    log_p.exp()
}

/// Stirling numbers of the second kind `S(n, k)` for `k = 0..=n`.
fn stirling_row(n: usize) -> Vec<u128> {
    let mut row = vec![1u128];
    for m in 1..=n {
        let mut next = vec![0u128; m + 1];
        for k in 1..=m {
            let stay = if k < m { k as u128 * row[k] } else { 0 };
            next[k] = stay + row[k - 1];
        }
        row = next;
    }
    row
}

/// Log marginal likelihood of the haplotypes in one block with the founder
/// pattern and mutation rate integrated out.
pub fn log_block_marginal(haplotypes: &[&[Allele]], hyper: &Hyperparams, alphabet_size: usize) -> f64 {
    let b = haplotypes.len();
    let n_loci = haplotypes.first().map_or(0, |h| h.len());
    // coefficient d: number of patterns giving d mismatches in total
    let mut poly = vec![1.0f64];
    let mut counts = vec![0usize; alphabet_size];
    for t in 0..n_loci {
        counts.fill(0);
        for h in haplotypes {
            counts[h[t] as usize] += 1;
        }
        let mut next = vec![0.0; poly.len() + b];
        for &c in &counts {
            let shift = b - c;
            for (d, &v) in poly.iter().enumerate() {
                next[d + shift] += v;
            }
        }
        poly = next;
    }
    let total = (b * n_loci) as f64;
    let per_mismatch = ((alphabet_size - 1) as f64).ln();
    let log_prior = -(n_loci as f64) * (alphabet_size as f64).ln();
    let terms: Vec<f64> = poly
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0.0)
        .map(|(d, &c)| {
            let d = d as f64;
            c.ln() + ln_beta(hyper.alpha_h + d, hyper.beta_h + total - d)
                - ln_beta(hyper.alpha_h, hyper.beta_h)
                - d * per_mismatch
        })
        .collect();
    log_prior + log_sum_exp(&terms)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One unordered pair an individual may carry.
#[derive(Clone, Debug)]
struct PairOption {
    pair: [usize; 2],
    /// Ordered pairs it stands for.
    multiplicity: f64,
    exact: u32,
    inexact: u32,
    log_mu: f64,
}

fn decode(index: usize, n_loci: usize, size: usize) -> Vec<Allele> {
    let mut out = vec![0; n_loci];
    let mut x = index;
    for t in (0..n_loci).rev() {
        out[t] = (x % size) as Allele;
        x /= size;
    }
    out
}

fn pair_options(sites: &[GenotypeSite], patterns: &[Vec<Allele>], channel: GenotypeChannel, size: usize) -> Vec<PairOption> {
    let mut out = Vec::new();
    for a in 0..patterns.len() {
        for b in a..patterns.len() {
            let (h0, h1) = (&patterns[a], &patterns[b]);
            let mut option = PairOption {
                pair: [a, b],
                multiplicity: if a == b { 1.0 } else { 2.0 },
                exact: 0,
                inexact: 0,
                log_mu: 0.0,
            };
            let mut admissible = true;
            for (t, site) in sites.iter().enumerate() {
                let GenotypeSite::Pair(x, y) = *site else {
                    continue;
                };
                let class = mismatch_class(x, y, h0[t], h1[t]);
                if class == MismatchClass::Exact {
                    option.exact += 1;
                } else if channel == GenotypeChannel::Exact {
                    admissible = false;
                    break;
                } else {
                    option.inexact += 1;
                    option.log_mu += mismatch_normalizer(class, h0[t], h1[t], size).ln();
                }
            }
            if admissible {
                out.push(option);
            }
        }
    }
    out
}

fn check_instance(inst: &OracleInstance) -> Result<()> {
    inst.hyperparams.validate()?;
    validate_dataset(&inst.data).map_err(|v| Error::InvalidDataset(v.iter().map(|x| x.to_string()).collect()))?;
    if inst.data.n_populations() != 1 {
        return Err(Error::input("the oracle takes a single population"));
    }
    if !(inst.tau > 0.0 && inst.tau.is_finite()) {
        return Err(Error::input(format!("tau must be positive, got {}", inst.tau)));
    }
    let slots = 2 * inst.data.n_individuals();
    if let Some(k) = inst.k_max {
        if k == 0 || k > slots {
            return Err(Error::input(format!("k_max must lie in 1..={slots}, got {k}")));
        }
    }
    Ok(())
}

/// Number of (phase configuration, partition) terms the enumeration visits.
pub fn enumeration_size(inst: &OracleInstance) -> Result<u128> {
    check_instance(inst)?;
    let size = inst.data.alphabet.size();
    let patterns: Vec<Vec<Allele>> = (0..size.pow(inst.data.n_loci as u32))
        .map(|x| decode(x, inst.data.n_loci, size))
        .collect();
    let mut configs: u128 = 1;
    for (_, ind) in inst.data.individuals() {
        configs = configs.saturating_mul(pair_options(ind.genotype.sites(), &patterns, inst.channel, size).len() as u128);
    }
    let slots = 2 * inst.data.n_individuals();
    let k_max = inst.k_max.unwrap_or(slots);
    let partitions: u128 = stirling_row(slots)[1..=k_max].iter().sum();
    Ok(configs.saturating_mul(partitions))
}

/// Rough term count for instances too large to list their options.
fn size_estimate(inst: &OracleInstance) -> u128 {
    let size = inst.data.alphabet.size() as u128;
    let per_individual = size.saturating_pow(2 * inst.data.n_loci as u32);
    let slots = 2 * inst.data.n_individuals();
    let bell: u128 = stirling_row(slots).iter().sum();
    per_individual
        .saturating_pow(inst.data.n_individuals() as u32)
        .saturating_mul(bell)
}

/// Exact posterior phase marginals and founder-count distribution.
pub fn exact_posterior(inst: &OracleInstance) -> Result<OraclePosterior> {
    check_instance(inst)?;
    let data = &inst.data;
    if data.n_individuals() > MAX_INDIVIDUALS || data.n_loci > MAX_LOCI {
        return Err(Error::ResourceBound {
            terms: size_estimate(inst),
            limit: TERM_LIMIT,
        });
    }
    let terms = enumeration_size(inst)?;
    if terms > TERM_LIMIT {
        return Err(Error::ResourceBound {
            terms,
            limit: TERM_LIMIT,
        });
    }
    let size = data.alphabet.size();
    let n_loci = data.n_loci;
    let patterns: Vec<Vec<Allele>> = (0..size.pow(n_loci as u32)).map(|x| decode(x, n_loci, size)).collect();
    let options: Vec<Vec<PairOption>> = data
        .individuals()
        .map(|(_, ind)| pair_options(ind.genotype.sites(), &patterns, inst.channel, size))
        .collect();
    let n_ind = options.len();
    let n_slots = 2 * n_ind;
    let k_max = inst.k_max.unwrap_or(n_slots);
    let n_configs: usize = options.iter().map(|o| o.len()).product();
    let hyper = inst.hyperparams;
    let log_urn_norm = ln_gamma(inst.tau) - ln_gamma(inst.tau + n_slots as f64);

    let chunk = 256;
    let n_chunks = n_configs.div_ceil(chunk);
    let partials: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut block_cache: HashMap<Vec<usize>, f64> = HashMap::new();
            let mut phase: Vec<Vec<f64>> = options.iter().map(|o| vec![0.0; o.len()]).collect();
            let mut k_weight = vec![0.0; k_max + 1];
            let mut choice = vec![0usize; n_ind];
            let mut slot_pattern = vec![0usize; n_slots];
            let mut block_weight = vec![0.0f64; 1 << n_slots];
            let mut table = vec![vec![0.0f64; 1 << n_slots]; k_max + 1];
            for config in c * chunk..((c + 1) * chunk).min(n_configs) {
                let mut x = config;
                for i in (0..n_ind).rev() {
                    choice[i] = x % options[i].len();
                    x /= options[i].len();
                }
                let (mut exact, mut inexact, mut log_w) = (0u32, 0u32, log_urn_norm);
                for i in 0..n_ind {
                    let o = &options[i][choice[i]];
                    slot_pattern[2 * i] = o.pair[0];
                    slot_pattern[2 * i + 1] = o.pair[1];
                    exact += o.exact;
                    inexact += o.inexact;
                    log_w += o.multiplicity.ln() + o.log_mu;
                }
                if inst.channel == GenotypeChannel::Collapsed {
                    log_w += ln_beta(hyper.alpha_g + exact as f64, hyper.beta_g + inexact as f64)
                        - ln_beta(hyper.alpha_g, hyper.beta_g);
                }
                // tau * (|S| - 1)! * block likelihood for every slot subset
                for (s, w) in block_weight.iter_mut().enumerate().skip(1) {
                    let mut key: Vec<usize> = (0..n_slots).filter(|b| s >> b & 1 == 1).map(|b| slot_pattern[b]).collect();
                    key.sort_unstable();
                    let members = key.len();
                    let ll = *block_cache.entry(key).or_insert_with_key(|key| {
                        let haps: Vec<&[Allele]> = key.iter().map(|&p| patterns[p].as_slice()).collect();
                        log_block_marginal(&haps, &hyper, size)
                    });
                    *w = (inst.tau.ln() + ln_gamma(members as f64) + ll).exp();
                }
                // table[k][S]: partitions of S into k blocks
                for row in table.iter_mut() {
                    row.fill(0.0);
                }
                table[0][0] = 1.0;
                for s in 1usize..1 << n_slots {
                    let low = s & s.wrapping_neg();
                    let rest = s ^ low;
                    // blocks holding the lowest slot of `s`
                    let mut sub = rest;
                    loop {
                        let block = sub | low;
                        let w = block_weight[block];
                        let remainder = s ^ block;
                        for k in 1..=k_max {
                            let prev = table[k - 1][remainder];
                            if prev != 0.0 {
                                table[k][s] += w * prev;
                            }
                        }
                        if sub == 0 {
                            break;
                        }
                        sub = (sub - 1) & rest;
                    }
                }
                let full = (1 << n_slots) - 1;
                let scale = log_w.exp();
                let mut total = 0.0;
                for k in 1..=k_max {
                    let v = scale * table[k][full];
                    k_weight[k] += v;
                    total += v;
                }
                for i in 0..n_ind {
                    phase[i][choice[i]] += total;
                }
            }
            (phase, k_weight)
        })
        .collect();

    let mut phase: Vec<Vec<f64>> = options.iter().map(|o| vec![0.0; o.len()]).collect();
    let mut k_distribution = vec![0.0; k_max + 1];
    for (p, k) in partials {
        for (acc, part) in phase.iter_mut().zip(&p) {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
        for (a, b) in k_distribution.iter_mut().zip(&k) {
            *a += b;
        }
    }
    let z: f64 = k_distribution.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Sampler(format!("oracle normalizer is {z}")));
    }
    for v in &mut k_distribution {
        *v /= z;
    }
    let phase = phase
        .iter()
        .zip(&options)
        .map(|(weights, opts)| {
            let mut m: PairMarginal = weights
                .iter()
                .zip(opts)
                .filter(|(&w, _)| w > 0.0)
                .map(|(&w, o)| {
                    let pair = [Haplotype(patterns[o.pair[0]].clone()), Haplotype(patterns[o.pair[1]].clone())];
                    (pair, w / z)
                })
                .collect();
            m.sort_by(|a, b| a.0.cmp(&b.0));
            m
        })
        .collect();
    Ok(OraclePosterior {
        phase,
        k_distribution,
        terms,
    })
}

/// Long-run phase marginals and founder-count frequencies of the flat-urn
/// sampler over raw sampled pairs. The instance fixes the hyperparameters,
/// concentration and channel; `base` supplies the chain length, seed and
/// move choices.
pub fn sampler_marginals(inst: &OracleInstance, base: &DPConfig) -> Result<(Vec<PairMarginal>, Vec<f64>)> {
    check_instance(inst)?;
    let cfg = DPConfig {
        hyperparams: inst.hyperparams,
        tau: inst.tau,
        resample_tau: false,
        channel: inst.channel,
        ..base.clone()
    };
    cfg.validate()?;
    let (burn_in, sweeps) = (cfg.burn_in, cfg.samples);
    let mut state = init_dp_state(&inst.data, &cfg, None);
    let n_ind = inst.data.n_individuals();
    let mut counts: Vec<HashMap<[Haplotype; 2], usize>> = vec![HashMap::new(); n_ind];
    let mut k_counts = vec![0usize; 2 * n_ind + 1];
    for it in 0..burn_in + sweeps {
        dp_gibbs_sweep(&mut state, &cfg)?;
        if it < burn_in {
            continue;
        }
        k_counts[state.k()] += 1;
        for (i, c) in counts.iter_mut().enumerate() {
            let [a, b] = state.haplotype_pair(i);
            let key = if a <= b { [a, b] } else { [b, a] };
            *c.entry(key).or_insert(0) += 1;
        }
    }
    let phase = counts
        .into_iter()
        .map(|c| {
            let mut m: PairMarginal = c.into_iter().map(|(p, n)| (p, n as f64 / sweeps as f64)).collect();
            m.sort_by(|a, b| a.0.cmp(&b.0));
            m
        })
        .collect();
    let k = k_counts.iter().map(|&n| n as f64 / sweeps as f64).collect();
    Ok((phase, k))
}

/// Total-variation distance between two pair marginals.
pub fn total_variation(p: &PairMarginal, q: &PairMarginal) -> f64 {
    let mut diff: HashMap<&[Haplotype; 2], f64> = HashMap::new();
    for (pair, w) in p {
        *diff.entry(pair).or_insert(0.0) += w;
    }
    for (pair, w) in q {
        *diff.entry(pair).or_insert(0.0) -= w;
    }
    0.5 * diff.values().map(|d| d.abs()).sum::<f64>()
}

/// Five small instances spanning both genotype channels, missing data and
/// several concentrations.
pub fn reference_instances() -> Vec<OracleInstance> {
    use crate::model::{AlleleAlphabet, Genotype, Individual, Population};
    let make = |rows: &[&str]| -> Dataset {
        let individuals = rows
            .iter()
            .enumerate()
            .map(|(i, r)| Individual {
                id: format!("ind{i}"),
                genotype: Genotype(
                    r.chars()
                        .map(|c| match c {
                            '0' => GenotypeSite::Pair(0, 0),
                            '1' => GenotypeSite::Pair(0, 1),
                            '2' => GenotypeSite::Pair(1, 1),
                            _ => GenotypeSite::Missing,
                        })
                        .collect(),
                ),
            })
            .collect();
        Dataset {
            alphabet: AlleleAlphabet::BIALLELIC,
            n_loci: rows[0].len(),
            populations: vec![Population {
                name: "oracle".into(),
                individuals,
            }],
        }
    };
    let hyper = Hyperparams::default();
    let inst = |rows: &[&str], tau: f64, channel: GenotypeChannel| OracleInstance {
        data: make(rows),
        hyperparams: hyper,
        tau,
        k_max: None,
        channel,
    };
    vec![
        inst(&["111", "110", "011", "022"], 1.0, GenotypeChannel::Exact),
        inst(&["111", "111", "102", "210"], 0.5, GenotypeChannel::Exact),
        inst(&["11?", "111", "1?1", "201"], 2.0, GenotypeChannel::Exact),
        inst(&["11", "12", "10"], 1.0, GenotypeChannel::Collapsed),
        inst(&["111", "012"], 1.0, GenotypeChannel::Collapsed),
    ]
}
