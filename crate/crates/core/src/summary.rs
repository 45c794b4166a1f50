//! Posterior summaries accumulated over post-burn-in samples.

use std::collections::{BTreeMap, HashMap};

use crate::model::{het_sites, Allele, Dataset, Genotype, Haplotype};
use crate::state::{project_site, SamplerState};

#[derive(Clone, Debug, PartialEq)]
pub struct PhasedIndividual {
    pub id: String,
    pub population: usize,
    pub haplotypes: [Haplotype; 2],
    /// Posterior probability of the reported unordered pair.
    pub support: f64,
    /// Sampled unordered pairs with their posterior frequencies, most frequent first.
    pub pair_posterior: Vec<([Haplotype; 2], f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FounderSummary {
    pub pattern: Haplotype,
    /// Fraction of samples in which a founder with this pattern was represented.
    pub presence: f64,
    /// Per population, the mean over samples of the founder's share of that
    /// population's haplotypes (zero when absent).
    pub population_freq: Vec<f64>,
    /// Mean posterior-mean mutation rate over the samples where present.
    pub theta: f64,
    /// Populations drawing on this founder in at least half the samples.
    pub share_set: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhasingResult {
    pub population_names: Vec<String>,
    pub n_loci: usize,
    pub individuals: Vec<PhasedIndividual>,
    pub founders: Vec<FounderSummary>,
    pub samples: usize,
    /// Founder count after every sweep, burn-in included.
    pub k_trace: Vec<usize>,
    pub k_histogram: BTreeMap<usize, usize>,
    pub k_mode: usize,
    pub k_mean: f64,
    pub k_population_mode: Vec<usize>,
    pub k_population_mean: Vec<f64>,
    /// Sample mean of the slot-weighted founder mutation-rate estimate.
    pub theta_mean: f64,
    pub tau_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
    /// Per population, posterior-averaged frequencies of the genotype-projected
    /// haplotypes, most frequent first.
    pub haplotype_freqs: Vec<Vec<(Haplotype, f64)>>,
}

impl PhasingResult {
    pub fn phased_pairs(&self) -> Vec<[Haplotype; 2]> {
        self.individuals.iter().map(|p| p.haplotypes.clone()).collect()
    }

    /// Concatenates independent per-population results, in population order,
    /// into one result over all populations. Founder counts add up; the K
    /// histogram of the union is not defined and is left empty.
    pub fn concatenate(parts: Vec<PhasingResult>) -> PhasingResult {
        let n_pops: usize = parts.iter().map(|p| p.population_names.len()).sum();
        let mut out = PhasingResult {
            population_names: Vec::new(),
            n_loci: parts.first().map_or(0, |p| p.n_loci),
            individuals: Vec::new(),
            founders: Vec::new(),
            samples: parts.first().map_or(0, |p| p.samples),
            k_trace: Vec::new(),
            k_histogram: BTreeMap::new(),
            k_mode: 0,
            k_mean: 0.0,
            k_population_mode: Vec::new(),
            k_population_mean: Vec::new(),
            theta_mean: 0.0,
            tau_trace: Vec::new(),
            gamma_trace: Vec::new(),
            haplotype_freqs: Vec::new(),
        };
        let total_ind: usize = parts.iter().map(|p| p.individuals.len()).sum();
        for part in parts {
            let offset = out.population_names.len();
            let width = part.population_names.len();
            let n_part = part.individuals.len();
            for mut ind in part.individuals {
                ind.population += offset;
                out.individuals.push(ind);
            }
            for f in part.founders {
                let mut freq = vec![0.0; n_pops];
                freq[offset..offset + width].copy_from_slice(&f.population_freq);
                out.founders.push(FounderSummary {
                    population_freq: freq,
                    share_set: f.share_set.iter().map(|j| j + offset).collect(),
                    ..f
                });
            }
            if out.k_trace.is_empty() {
                out.k_trace = part.k_trace.clone();
            } else {
                for (a, b) in out.k_trace.iter_mut().zip(&part.k_trace) {
                    *a += b;
                }
            }
            out.k_mode += part.k_mode;
            out.k_mean += part.k_mean;
            out.k_population_mode.extend(part.k_population_mode);
            out.k_population_mean.extend(part.k_population_mean);
            out.theta_mean += part.theta_mean * n_part as f64 / total_ind.max(1) as f64;
            out.haplotype_freqs.extend(part.haplotype_freqs);
            out.population_names.extend(part.population_names);
        }
        out
    }
}

/// Collects per-sample statistics of a chain.
pub(crate) struct PosteriorAccumulator {
    genotypes: Vec<Genotype>,
    ids: Vec<String>,
    population_of: Vec<usize>,
    population_names: Vec<String>,
    n_loci: usize,
    pair_counts: Vec<HashMap<(Vec<Allele>, Vec<Allele>), u32>>,
    /// Per individual and het site, samples where the haplotype carrying the
    /// smaller allele at the first het site also carries the smaller allele.
    phase_votes: Vec<Vec<u32>>,
    founders: HashMap<Vec<Allele>, FounderAcc>,
    founder_order: Vec<Vec<Allele>>,
    hap_freqs: Vec<HashMap<Vec<Allele>, f64>>,
    k_hist: BTreeMap<usize, usize>,
    k_pop_hist: Vec<BTreeMap<usize, usize>>,
    theta_sum: f64,
    samples: usize,
    k_trace: Vec<usize>,
    tau_trace: Vec<f64>,
    gamma_trace: Vec<f64>,
}

struct FounderAcc {
    presence: u32,
    freq_sum: Vec<f64>,
    used: Vec<u32>,
    theta_sum: f64,
}

impl PosteriorAccumulator {
    pub(crate) fn new(data: &Dataset) -> Self {
        let n_ind = data.n_individuals();
        let genotypes: Vec<Genotype> = data.individuals().map(|(_, ind)| ind.genotype.clone()).collect();
        let phase_votes = genotypes.iter().map(|g| vec![0; het_sites(g).len()]).collect();
        PosteriorAccumulator {
            genotypes,
            ids: data.individuals().map(|(_, ind)| ind.id.clone()).collect(),
            population_of: data.population_of(),
            population_names: data.populations.iter().map(|p| p.name.clone()).collect(),
            n_loci: data.n_loci,
            pair_counts: vec![HashMap::new(); n_ind],
            phase_votes,
            founders: HashMap::new(),
            founder_order: Vec::new(),
            hap_freqs: vec![HashMap::new(); data.n_populations()],
            k_hist: BTreeMap::new(),
            k_pop_hist: vec![BTreeMap::new(); data.n_populations()],
            theta_sum: 0.0,
            samples: 0,
            k_trace: Vec::new(),
            tau_trace: Vec::new(),
            gamma_trace: Vec::new(),
        }
    }

    /// Records the traces of every sweep.
    pub(crate) fn trace(&mut self, state: &SamplerState) {
        self.k_trace.push(state.k());
        self.tau_trace.push(state.urn.tau[0]);
        self.gamma_trace.push(state.urn.gamma);
    }

    /// Records one post-burn-in sample.
    pub(crate) fn record(&mut self, state: &SamplerState) {
        self.samples += 1;
        let n_pops = self.population_names.len();
        let size_by_pop: Vec<usize> = (0..n_pops)
            .map(|j| 2 * self.population_of.iter().filter(|&&p| p == j).count())
            .collect();
        for i in 0..self.genotypes.len() {
            let (h0, h1) = projected_pair(&self.genotypes[i], state.haplotype(2 * i), state.haplotype(2 * i + 1));
            let het = het_sites(&self.genotypes[i]);
            if let Some(&first) = het.first() {
                let carrier = if h0[first] < h1[first] { &h0 } else { &h1 };
                let other = if h0[first] < h1[first] { &h1 } else { &h0 };
                for (v, &t) in self.phase_votes[i].iter_mut().zip(&het) {
                    if carrier[t] < other[t] {
                        *v += 1;
                    }
                }
            }
            let j = self.population_of[i];
            for h in [&h0, &h1] {
                *self.hap_freqs[j].entry(h.clone()).or_insert(0.0) += 1.0 / size_by_pop[j] as f64;
            }
            let key = if h0 <= h1 { (h0, h1) } else { (h1, h0) };
            *self.pair_counts[i].entry(key).or_insert(0) += 1;
        }

        let k = state.k();
        let mut per_pop = vec![vec![0u32; k]; n_pops];
        for s in 0..state.n_slots() {
            per_pop[self.population_of[s / 2]][state.assignments[s]] += 1;
        }
        // founders sharing a pattern within one sample are merged
        let mut merged: HashMap<&[Allele], (Vec<u32>, f64, usize)> = HashMap::new();
        for (kk, f) in state.founders.iter().enumerate() {
            let e = merged
                .entry(f.alleles.as_slice())
                .or_insert_with(|| (vec![0; n_pops], 0.0, 0));
            for j in 0..n_pops {
                e.0[j] += per_pop[j][kk];
            }
            e.1 += f.size as f64 * f.theta_estimate(&state.params.hyper);
            e.2 += f.size;
        }
        for (pattern, (counts, theta_w, size)) in merged {
            if !self.founders.contains_key(pattern) {
                self.founder_order.push(pattern.to_vec());
            }
            let acc = self.founders.entry(pattern.to_vec()).or_insert_with(|| FounderAcc {
                presence: 0,
                freq_sum: vec![0.0; n_pops],
                used: vec![0; n_pops],
                theta_sum: 0.0,
            });
            acc.presence += 1;
            acc.theta_sum += theta_w / size as f64;
            for j in 0..n_pops {
                if counts[j] > 0 {
                    acc.used[j] += 1;
                    acc.freq_sum[j] += counts[j] as f64 / size_by_pop[j] as f64;
                }
            }
        }

        *self.k_hist.entry(k).or_insert(0) += 1;
        for (j, kj) in state.founders_per_population(n_pops).into_iter().enumerate() {
            *self.k_pop_hist[j].entry(kj).or_insert(0) += 1;
        }
        self.theta_sum += state.theta_estimate();
    }

    pub(crate) fn finish(self) -> PhasingResult {
        let samples = self.samples.max(1) as f64;
        let mut individuals = Vec::with_capacity(self.genotypes.len());
        for i in 0..self.genotypes.len() {
            let mut pairs: Vec<((Vec<Allele>, Vec<Allele>), u32)> =
                self.pair_counts[i].iter().map(|(k, &v)| (k.clone(), v)).collect();
            pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let best = pairs.first().map_or(0, |p| p.1);
            let het = het_sites(&self.genotypes[i]);
            let majority: Vec<bool> = self.phase_votes[i]
                .iter()
                .map(|&v| 2 * v as usize >= self.samples)
                .collect();
            let agreement = |h0: &[Allele], h1: &[Allele]| -> usize {
                let Some(&first) = het.first() else { return 0 };
                let (carrier, other) = if h0[first] < h1[first] { (h0, h1) } else { (h1, h0) };
                het.iter()
                    .zip(&majority)
                    .filter(|(&t, &m)| (carrier[t] < other[t]) == m)
                    .count()
            };
            // ties: majority relative phase first, then lexicographic (already sorted)
            let chosen = pairs
                .iter()
                .take_while(|p| p.1 == best)
                .max_by(|a, b| {
                    agreement(&a.0 .0, &a.0 .1)
                        .cmp(&agreement(&b.0 .0, &b.0 .1))
                        .then_with(|| b.0.cmp(&a.0))
                })
                .map(|p| p.0.clone());
            let (h0, h1) = chosen.unwrap_or_else(|| (vec![0; self.n_loci], vec![0; self.n_loci]));
            individuals.push(PhasedIndividual {
                id: self.ids[i].clone(),
                population: self.population_of[i],
                haplotypes: [Haplotype(h0), Haplotype(h1)],
                support: best as f64 / samples,
                pair_posterior: pairs
                    .into_iter()
                    .map(|((a, b), c)| ([Haplotype(a), Haplotype(b)], c as f64 / samples))
                    .collect(),
            });
        }

        let mut founders: Vec<FounderSummary> = self
            .founder_order
            .iter()
            .map(|pattern| {
                let acc = &self.founders[pattern];
                FounderSummary {
                    pattern: Haplotype(pattern.clone()),
                    presence: acc.presence as f64 / samples,
                    population_freq: acc.freq_sum.iter().map(|f| f / samples).collect(),
                    theta: acc.theta_sum / acc.presence as f64,
                    share_set: (0..acc.used.len())
                        .filter(|&j| 2 * acc.used[j] as usize >= self.samples)
                        .collect(),
                }
            })
            .collect();
        founders.sort_by(|a, b| {
            let fa: f64 = a.population_freq.iter().sum();
            let fb: f64 = b.population_freq.iter().sum();
            fb.total_cmp(&fa).then_with(|| a.pattern.cmp(&b.pattern))
        });

        let hist_mode = |h: &BTreeMap<usize, usize>| {
            h.iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map_or(0, |(&k, _)| k)
        };
        let hist_mean = |h: &BTreeMap<usize, usize>| {
            let n: usize = h.values().sum();
            h.iter().map(|(&k, &c)| (k * c) as f64).sum::<f64>() / n.max(1) as f64
        };

        let haplotype_freqs = self
            .hap_freqs
            .iter()
            .map(|m| {
                let mut v: Vec<(Haplotype, f64)> =
                    m.iter().map(|(h, f)| (Haplotype(h.clone()), f / samples)).collect();
                v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                v
            })
            .collect();

        PhasingResult {
            population_names: self.population_names,
            n_loci: self.n_loci,
            individuals,
            founders,
            samples: self.samples,
            k_mode: hist_mode(&self.k_hist),
            k_mean: hist_mean(&self.k_hist),
            k_population_mode: self.k_pop_hist.iter().map(hist_mode).collect(),
            k_population_mean: self.k_pop_hist.iter().map(hist_mean).collect(),
            k_histogram: self.k_hist,
            theta_mean: self.theta_sum / samples,
            k_trace: self.k_trace,
            tau_trace: self.tau_trace,
            gamma_trace: self.gamma_trace,
            haplotype_freqs,
        }
    }
}

/// Projects a sampled ordered pair onto the genotype, repairing sites where
/// a genotyping-error explanation was sampled.
pub(crate) fn projected_pair(g: &Genotype, h0: &[Allele], h1: &[Allele]) -> (Vec<Allele>, Vec<Allele>) {
    let mut a = Vec::with_capacity(h0.len());
    let mut b = Vec::with_capacity(h0.len());
    for (t, site) in g.0.iter().enumerate() {
        let (x, y) = project_site(*site, h0[t], h1[t]);
        a.push(x);
        b.push(y);
    }
    (a, b)
}

/// Runs `burn_in + samples` sweeps, tracing every sweep and recording the
/// post-burn-in ones.
pub(crate) fn run_chain<F>(
    data: &Dataset,
    state: &mut SamplerState,
    burn_in: usize,
    samples: usize,
    mut sweep: F,
) -> crate::error::Result<PhasingResult>
where
    F: FnMut(&mut SamplerState) -> crate::error::Result<()>,
{
    let mut acc = PosteriorAccumulator::new(data);
    for it in 0..burn_in + samples {
        sweep(state)?;
        acc.trace(state);
        if it >= burn_in {
            acc.record(state);
        }
    }
    Ok(acc.finish())
}
