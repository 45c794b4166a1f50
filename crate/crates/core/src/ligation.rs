//! Partition–ligation for sequences too long to phase directly.
//!
//! The loci are cut into short atomic blocks which the hierarchical sampler
//! phases independently. Every pair of neighbouring atomic blocks is then
//! stitched into a block of twice the length, so consecutive stitched blocks
//! overlap on one atomic block, and those are merged pairwise, round after
//! round, until one block spans the sequence. The candidate haplotypes of a
//! merge come only from each individual's own block pairs; a finite
//! Dirichlet Gibbs sampler over that candidate pool picks the merged pairs.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hdp::{run_hdp, run_hdp_from, HDPConfig};
use crate::model::{validate_dataset, Allele, Dataset, Genotype, GenotypeSite, Haplotype};
use crate::seeds::derive_seed;
use crate::state::sample_weights;
use crate::summary::{FounderSummary, PhasedIndividual, PhasingResult};

pub type PairPosterior = Vec<([Haplotype; 2], f64)>;

/// A phased stretch of loci.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub locus_range: Range<usize>,
    /// Distinct haplotypes over the range.
    pub pool: Vec<Haplotype>,
    /// Per individual, the reported pair as indices into `pool`.
    pub pairs: Vec<[usize; 2]>,
    /// Per individual, sampled pairs and their frequencies, reported pair first.
    pub pair_posterior: Vec<PairPosterior>,
}

impl Block {
    /// Builds the pool from the given pairs, in first-seen order.
    pub fn from_pairs(locus_range: Range<usize>, pairs: &[[Haplotype; 2]], pair_posterior: Vec<PairPosterior>) -> Block {
        let mut index: HashMap<&Haplotype, usize> = HashMap::new();
        let mut pool = Vec::new();
        let mut out = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let mut ids = [0; 2];
            for (e, h) in pair.iter().enumerate() {
                ids[e] = *index.entry(h).or_insert_with(|| {
                    pool.push(h.clone());
                    pool.len() - 1
                });
            }
            out.push(ids);
        }
        Block {
            locus_range,
            pool,
            pairs: out,
            pair_posterior,
        }
    }

    fn from_result(locus_range: Range<usize>, result: &PhasingResult) -> Block {
        let pairs = result.phased_pairs();
        let posterior = result.individuals.iter().map(|p| p.pair_posterior.clone()).collect();
        Block::from_pairs(locus_range, &pairs, posterior)
    }

    pub fn pair(&self, i: usize) -> [&Haplotype; 2] {
        [&self.pool[self.pairs[i][0]], &self.pool[self.pairs[i][1]]]
    }

    pub fn n_individuals(&self) -> usize {
        self.pairs.len()
    }
}

#[derive(Clone, Debug)]
pub struct LigationConfig {
    /// Atomic block length.
    pub block_length: usize,
    /// Stitched neighbour blocks whose total pair entropy (nats) exceeds this
    /// are re-phased by the hierarchical sampler.
    pub entropy_threshold: f64,
    /// Symmetric Dirichlet pseudocount per candidate; `None` uses 1/|pool|.
    pub dirichlet_pseudocount: Option<f64>,
    pub gibbs_burn_in: usize,
    pub gibbs_samples: usize,
    /// Per-individual cap on enumerated overlap combinations. Individuals
    /// above it take their pair from a hierarchical run on the merged range.
    pub max_overlap_combinations: usize,
    /// Sampler settings for atomic blocks and re-phasing; its seed is the master seed.
    pub hdp: HDPConfig,
}

impl Default for LigationConfig {
    fn default() -> Self {
        LigationConfig {
            block_length: 8,
            entropy_threshold: 1.5,
            dirichlet_pseudocount: None,
            gibbs_burn_in: 100,
            gibbs_samples: 200,
            max_overlap_combinations: 1 << 12,
            hdp: HDPConfig::default(),
        }
    }
}

impl LigationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_length < 2 {
            return Err(Error::input(format!("block length must be at least 2, got {}", self.block_length)));
        }
        if !(self.entropy_threshold >= 0.0) {
            return Err(Error::input(format!(
                "entropy threshold must be non-negative, got {}",
                self.entropy_threshold
            )));
        }
        if let Some(a) = self.dirichlet_pseudocount {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::input(format!("Dirichlet pseudocount must be positive, got {a}")));
            }
        }
        if self.gibbs_samples == 0 {
            return Err(Error::input("ligation needs at least one Gibbs sample"));
        }
        if self.max_overlap_combinations == 0 {
            return Err(Error::input("overlap combination cap must be positive"));
        }
        self.hdp.validate()
    }
}

/// Contiguous blocks of `t` loci; the last one may be shorter.
pub fn partition_ranges(n_loci: usize, t: usize) -> Vec<Range<usize>> {
    assert!(t >= 2, "block length must be at least 2");
    (0..n_loci.div_ceil(t)).map(|b| b * t..((b + 1) * t).min(n_loci)).collect()
}

pub fn partition(data: &Dataset, t: usize) -> Vec<Dataset> {
    partition_ranges(data.n_loci, t)
        .into_iter()
        .map(|r| data.slice_loci(r))
        .collect()
}

fn stage_seed(master: u64, stage: u64) -> u64 {
    derive_seed(master, stage)
}

fn phase_ranges(data: &Dataset, ranges: &[Range<usize>], cfg: &LigationConfig) -> Result<Vec<(Block, PhasingResult)>> {
    let seed = stage_seed(cfg.hdp.seed, 0);
    ranges
        .par_iter()
        .enumerate()
        .map(|(b, r)| {
            let hdp = HDPConfig {
                seed: derive_seed(seed, b as u64),
                ..cfg.hdp.clone()
            };
            let res = run_hdp(&data.slice_loci(r.clone()), &hdp)?;
            Ok((Block::from_result(r.clone(), &res), res))
        })
        .collect()
}

/// Phases each range independently with the hierarchical sampler.
pub fn phase_atomic(data: &Dataset, ranges: &[Range<usize>], cfg: &LigationConfig) -> Result<Vec<Block>> {
    Ok(phase_ranges(data, ranges, cfg)?.into_iter().map(|(b, _)| b).collect())
}

/// Candidate pool of a merge.
#[derive(Clone, Debug)]
pub struct Stitch {
    pub locus_range: Range<usize>,
    pub pool: Vec<Haplotype>,
    /// Per individual, candidate unordered pairs as indices into `pool`.
    pub options: Vec<Vec<[usize; 2]>>,
    /// Per individual, whether its two blocks agreed on the overlap.
    pub agreed: Vec<bool>,
    /// Individuals whose enumeration exceeded the cap; their options are empty.
    pub overflow: Vec<usize>,
}

struct PoolBuilder {
    pool: Vec<Haplotype>,
    index: HashMap<Vec<Allele>, usize>,
}

impl PoolBuilder {
    fn id(&mut self, h: Vec<Allele>) -> usize {
        if let Some(&k) = self.index.get(&h) {
            return k;
        }
        self.pool.push(Haplotype(h.clone()));
        self.index.insert(h, self.pool.len() - 1);
        self.pool.len() - 1
    }

    fn pair(&mut self, h0: Vec<Allele>, h1: Vec<Allele>) -> [usize; 2] {
        [self.id(h0), self.id(h1)]
    }
}

fn join(parts: &[&[Allele]]) -> Vec<Allele> {
    parts.concat()
}

fn push_unordered(options: &mut Vec<[usize; 2]>, p: [usize; 2]) {
    if !options.iter().any(|q| q == &p || (q[0] == p[1] && q[1] == p[0])) {
        options.push(p);
    }
}

/// Candidate haplotypes for merging `left` with the block to its right.
///
/// `genotypes` are indexed by absolute locus. An individual whose two block
/// pairs show the same unordered pair on the overlap contributes the direct
/// stitches only. Otherwise every genotype-consistent combination of the
/// left flank variants, the right flank variants and the alleles at the
/// ambiguous overlap loci is added.
pub fn stitch_candidates(left: &Block, right: &Block, genotypes: &[Genotype], max_combinations: usize) -> Result<Stitch> {
    let (lo, mid, hi, end) = (
        left.locus_range.start,
        right.locus_range.start,
        left.locus_range.end,
        right.locus_range.end,
    );
    if !(lo <= mid && mid <= hi && hi < end) {
        return Err(Error::input(format!(
            "blocks {:?} and {:?} are not adjacent",
            left.locus_range, right.locus_range
        )));
    }
    if left.n_individuals() != right.n_individuals() || genotypes.len() != left.n_individuals() {
        return Err(Error::input("blocks and genotypes cover different individuals"));
    }
    let mut builder = PoolBuilder {
        pool: Vec::new(),
        index: HashMap::new(),
    };
    let n = genotypes.len();
    let mut options = vec![Vec::new(); n];
    let mut agreed = vec![false; n];
    let mut overflow = Vec::new();
    let ov = hi - mid;
    for i in 0..n {
        let a = left.pair(i).map(|h| h.alleles());
        let b = right.pair(i).map(|h| h.alleles());
        let (a_flank, a_ov) = (a.map(|h| &h[..mid - lo]), a.map(|h| &h[mid - lo..]));
        let (b_ov, b_flank) = (b.map(|h| &h[..ov]), b.map(|h| &h[ov..]));
        let same = (a_ov[0] == b_ov[0] && a_ov[1] == b_ov[1]) || (a_ov[0] == b_ov[1] && a_ov[1] == b_ov[0]);
        let g = &genotypes[i];
        if same {
            agreed[i] = true;
            for x in 0..2 {
                for y in 0..2 {
                    if a_ov[x] == b_ov[y] {
                        let p = builder.pair(
                            join(&[a_flank[x], a_ov[x], b_flank[y]]),
                            join(&[a_flank[1 - x], a_ov[1 - x], b_flank[1 - y]]),
                        );
                        push_unordered(&mut options[i], p);
                    }
                }
            }
            continue;
        }

        // allowed ordered allele pairs at each overlap locus
        let mut sites: Vec<Vec<(Allele, Allele)>> = Vec::with_capacity(ov);
        for t in mid..hi {
            let s = match g.0[t] {
                GenotypeSite::Pair(u, v) if u != v => vec![(u, v), (v, u)],
                GenotypeSite::Pair(u, _) => vec![(u, u)],
                GenotypeSite::Missing => {
                    let mut seen: Vec<Allele> = vec![a_ov[0][t - mid], a_ov[1][t - mid], b_ov[0][t - mid], b_ov[1][t - mid]];
                    seen.sort_unstable();
                    seen.dedup();
                    seen.iter().flat_map(|&u| seen.iter().map(move |&v| (u, v))).collect()
                }
            };
            sites.push(s);
        }
        let combos = sites
            .iter()
            .try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
            .filter(|&c| c <= max_combinations);
        let Some(combos) = combos else {
            overflow.push(i);
            continue;
        };
        let merged = g.slice(lo..end);
        let (mut o0, mut o1) = (vec![0; ov], vec![0; ov]);
        for mut c in 0..combos {
            for (t, s) in sites.iter().enumerate() {
                let (u, v) = s[c % s.len()];
                c /= s.len();
                o0[t] = u;
                o1[t] = v;
            }
            for x in 0..2 {
                for y in 0..2 {
                    let h0 = Haplotype(join(&[a_flank[x], &o0, b_flank[y]]));
                    let h1 = Haplotype(join(&[a_flank[1 - x], &o1, b_flank[1 - y]]));
                    if merged.admits_pair(&h0, &h1) {
                        let p = builder.pair(h0.0, h1.0);
                        push_unordered(&mut options[i], p);
                    }
                }
            }
        }
        if options[i].is_empty() {
            return Err(Error::Sampler(format!("individual {i} has no genotype-consistent stitch")));
        }
    }
    Ok(Stitch {
        locus_range: lo..end,
        pool: builder.pool,
        options,
        agreed,
        overflow,
    })
}

/// Result of one merge.
#[derive(Clone, Debug)]
pub struct Ligation {
    pub block: Block,
    /// Size of the stitched candidate pool.
    pub candidates: usize,
    /// Sum over individuals of the entropy (nats) of their sampled pairs.
    pub entropy: f64,
}

/// Entropy in nats of a discrete distribution given by counts.
fn count_entropy(counts: &[u32]) -> f64 {
    let n: u32 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

/// Merges two adjacent blocks by Gibbs sampling under a symmetric Dirichlet
/// prior on the frequencies of the stitched candidates. Individuals with a
/// single candidate pair are not resampled.
pub fn ligate(left: &Block, right: &Block, data: &Dataset, cfg: &LigationConfig, seed: u64) -> Result<Ligation> {
    let genotypes: Vec<Genotype> = data.individuals().map(|(_, ind)| ind.genotype.clone()).collect();
    let mut stitch = stitch_candidates(left, right, &genotypes, cfg.max_overlap_combinations)?;
    if !stitch.overflow.is_empty() {
        let hdp = HDPConfig {
            seed: derive_seed(seed, 1),
            ..cfg.hdp.clone()
        };
        let res = run_hdp(&data.slice_loci(stitch.locus_range.clone()), &hdp)?;
        let mut builder = PoolBuilder {
            index: stitch
                .pool
                .iter()
                .enumerate()
                .map(|(k, h)| (h.0.clone(), k))
                .collect(),
            pool: std::mem::take(&mut stitch.pool),
        };
        for &i in &stitch.overflow {
            let [h0, h1] = res.individuals[i].haplotypes.clone();
            stitch.options[i] = vec![builder.pair(h0.0, h1.0)];
        }
        stitch.pool = builder.pool;
    }
    let candidates = stitch.pool.len();
    let lambda = cfg.dirichlet_pseudocount.unwrap_or(1.0 / candidates as f64);

    let n = stitch.options.len();
    let mut counts = vec![0.0f64; candidates];
    let mut current = vec![0usize; n];
    for opts in &stitch.options {
        counts[opts[0][0]] += 1.0;
        counts[opts[0][1]] += 1.0;
    }
    let free: Vec<usize> = (0..n).filter(|&i| stitch.options[i].len() > 1).collect();
    let mut tally: Vec<Vec<u32>> = stitch.options.iter().map(|o| vec![0; o.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::new();
    for sweep in 0..cfg.gibbs_burn_in + cfg.gibbs_samples {
        for &i in &free {
            let opts = &stitch.options[i];
            let [u, v] = opts[current[i]];
            counts[u] -= 1.0;
            counts[v] -= 1.0;
            w.clear();
            w.extend(opts.iter().map(|&[u, v]| {
                let same = if u == v { 1.0 } else { 0.0 };
                (counts[u] + lambda) * (counts[v] + lambda + same)
            }));
            let o = sample_weights(&mut rng, &w).unwrap_or_else(|| rng.random_range(0..opts.len()));
            current[i] = o;
            let [u, v] = opts[o];
            counts[u] += 1.0;
            counts[v] += 1.0;
        }
        if sweep >= cfg.gibbs_burn_in {
            for &i in &free {
                tally[i][current[i]] += 1;
            }
        }
    }

    let samples = cfg.gibbs_samples as f64;
    let mut pairs = Vec::with_capacity(n);
    let mut posterior = Vec::with_capacity(n);
    let mut entropy = 0.0;
    for i in 0..n {
        let opts = &stitch.options[i];
        let as_pair = |o: usize| [stitch.pool[opts[o][0]].clone(), stitch.pool[opts[o][1]].clone()];
        if opts.len() == 1 {
            pairs.push(as_pair(0));
            posterior.push(vec![(as_pair(0), 1.0)]);
            continue;
        }
        entropy += count_entropy(&tally[i]);
        let mut order: Vec<usize> = (0..opts.len()).filter(|&o| tally[i][o] > 0).collect();
        order.sort_by(|&x, &y| tally[i][y].cmp(&tally[i][x]).then(x.cmp(&y)));
        pairs.push(as_pair(order[0]));
        posterior.push(order.iter().map(|&o| (as_pair(o), tally[i][o] as f64 / samples)).collect());
    }
    Ok(Ligation {
        block: Block::from_pairs(stitch.locus_range, &pairs, posterior),
        candidates,
        entropy,
    })
}

/// Phases a sequence of any length by partition–ligation. Sequences no
/// longer than one block are phased directly, exactly as [`run_hdp`] would.
pub fn phase_long(data: &Dataset, cfg: &LigationConfig) -> Result<PhasingResult> {
    cfg.validate()?;
    validate_dataset(data).map_err(|v| Error::InvalidDataset(v.iter().map(|x| x.to_string()).collect()))?;
    let t = cfg.block_length;
    if data.n_loci <= t {
        return run_hdp(data, &cfg.hdp);
    }
    let ranges = partition_ranges(data.n_loci, t);
    let atomic = phase_ranges(data, &ranges, cfg)?;
    let theta = atomic
        .iter()
        .map(|(b, r)| r.theta_mean * b.locus_range.len() as f64)
        .sum::<f64>()
        / data.n_loci as f64;
    let atomic: Vec<Block> = atomic.into_iter().map(|(b, _)| b).collect();

    let (mut blocks, mut direct) = ligate_neighbours(data, &atomic, cfg)?;
    let mut round = 2;
    while blocks.len() > 1 {
        blocks = ligate_round(data, &blocks, cfg, stage_seed(cfg.hdp.seed, round))?;
        direct = None;
        round += 1;
    }
    if let Some(res) = direct {
        return Ok(res);
    }
    let block = blocks.pop().expect("at least one block");
    Ok(block_result(data, &block, cfg.gibbs_samples, theta))
}

/// Stitches every neighbouring pair of blocks. Merged blocks above the
/// entropy threshold are re-phased directly, starting from the stitched
/// pairs. When a single block comes out of a re-phase its full result is
/// returned alongside.
pub fn ligate_neighbours(
    data: &Dataset,
    blocks: &[Block],
    cfg: &LigationConfig,
) -> Result<(Vec<Block>, Option<PhasingResult>)> {
    let seed = stage_seed(cfg.hdp.seed, 1);
    let merged: Vec<(Block, Option<PhasingResult>)> = (0..blocks.len().saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let lig = ligate(&blocks[i], &blocks[i + 1], data, cfg, s)?;
            if lig.entropy <= cfg.entropy_threshold {
                return Ok((lig.block, None));
            }
            let range = lig.block.locus_range.clone();
            let init: Vec<[Haplotype; 2]> = (0..lig.block.n_individuals())
                .map(|i| lig.block.pair(i).map(|h| h.clone()))
                .collect();
            let hdp = HDPConfig {
                seed: derive_seed(s, 2),
                ..cfg.hdp.clone()
            };
            let res = run_hdp_from(&data.slice_loci(range.clone()), &hdp, Some(&init))?;
            Ok((Block::from_result(range, &res), Some(res)))
        })
        .collect::<Result<_>>()?;
    let direct = match merged.as_slice() {
        [(_, Some(res))] => Some(res.clone()),
        _ => None,
    };
    Ok((merged.into_iter().map(|(b, _)| b).collect(), direct))
}

/// One round of hierarchical ligation: blocks (1,2), (3,4), ... are merged
/// and an odd last block is carried up unchanged.
pub fn ligate_round(data: &Dataset, blocks: &[Block], cfg: &LigationConfig, seed: u64) -> Result<Vec<Block>> {
    blocks
        .par_chunks(2)
        .enumerate()
        .map(|(p, chunk)| match chunk {
            [l, r] => Ok(ligate(l, r, data, cfg, derive_seed(seed, p as u64))?.block),
            [single] => Ok(single.clone()),
            _ => unreachable!(),
        })
        .collect()
}

/// Summary of a ligated block. The founder list is the block's haplotype
/// pool; there is no K trace.
fn block_result(data: &Dataset, block: &Block, samples: usize, theta: f64) -> PhasingResult {
    let n_pops = data.n_populations();
    let population_of = data.population_of();
    let mut pop_size = vec![0usize; n_pops];
    for &j in &population_of {
        pop_size[j] += 2;
    }
    let mut freqs: Vec<BTreeMap<Haplotype, f64>> = vec![BTreeMap::new(); n_pops];
    for (i, post) in block.pair_posterior.iter().enumerate() {
        let j = population_of[i];
        for (pair, p) in post {
            for h in pair {
                *freqs[j].entry(h.clone()).or_insert(0.0) += p / pop_size[j] as f64;
            }
        }
    }
    let individuals: Vec<PhasedIndividual> = data
        .individuals()
        .enumerate()
        .map(|(i, (j, ind))| PhasedIndividual {
            id: ind.id.clone(),
            population: j,
            haplotypes: block.pair(i).map(|h| h.clone()),
            support: block.pair_posterior[i].first().map_or(1.0, |p| p.1),
            pair_posterior: block.pair_posterior[i].clone(),
        })
        .collect();

    let mut used = vec![vec![0usize; block.pool.len()]; n_pops];
    for (i, p) in block.pairs.iter().enumerate() {
        for &k in p {
            used[population_of[i]][k] += 1;
        }
    }
    let founders: Vec<FounderSummary> = (0..block.pool.len())
        .map(|k| FounderSummary {
            pattern: block.pool[k].clone(),
            presence: 1.0,
            population_freq: (0..n_pops)
                .map(|j| used[j][k] as f64 / pop_size[j].max(1) as f64)
                .collect(),
            theta,
            share_set: (0..n_pops).filter(|&j| used[j][k] > 0).collect(),
        })
        .collect();
    let k_pop: Vec<usize> = (0..n_pops)
        .map(|j| used[j].iter().filter(|&&c| c > 0).count())
        .collect();
    let k = block.pool.len();
    let haplotype_freqs = freqs
        .into_iter()
        .map(|m| {
            let mut v: Vec<(Haplotype, f64)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v
        })
        .collect();
    PhasingResult {
        population_names: data.populations.iter().map(|p| p.name.clone()).collect(),
        n_loci: data.n_loci,
        individuals,
        founders,
        samples,
        k_trace: Vec::new(),
        k_histogram: BTreeMap::from([(k, 1)]),
        k_mode: k,
        k_mean: k as f64,
        k_population_mean: k_pop.iter().map(|&x| x as f64).collect(),
        k_population_mode: k_pop,
        theta_mean: theta,
        tau_trace: Vec::new(),
        gamma_trace: Vec::new(),
        haplotype_freqs,
    }
}
