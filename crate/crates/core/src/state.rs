//! Latent configuration of a chain and its incrementally maintained
//! sufficient statistics.
//!
//! Haplotype slots are numbered `2 * i + e` where `i` is the individual's
//! position in input order and `e` its parental copy. Founders are kept
//! compact: an emptied founder is removed at once and the last founder takes
//! its index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::likelihood::{
    collapsed_g_factor, collapsed_h_predictive, ln_beta, log_haplotype_predictive, log_haplotype_predictive_run, mismatch_class, mismatch_normalizer, GenotypeStats,
    MismatchClass, MutationStats,
};
use crate::model::{Allele, AlleleAlphabet, Dataset, GenotypeSite, Haplotype, Hyperparams};
use statrs::function::gamma::ln_gamma;

/// How observed genotypes constrain the haplotype pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GenotypeChannel {
    /// `xi` collapsed under its Beta prior; genotyping errors allowed.
    #[default]
    Collapsed,
    /// `xi` pinned to 1: sampled pairs always reproduce the genotype.
    Exact,
}

/// Kernel used for the haplotype stage of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HaplotypeUpdate {
    /// Both alleles of an individual at a locus drawn jointly. Mixes across
    /// phase even when the genotype channel is exact.
    #[default]
    PairBlock,
    /// One allele at a time with its partner held fixed.
    SingleSite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UrnKind {
    /// One Pólya urn; `n[k]` is the occupancy of founder `k`.
    Flat,
    /// Population urns under a shared stock urn; `n[k]` counts the
    /// populations holding at least one draw of founder `k`.
    Hierarchical,
}

#[derive(Clone, Debug)]
pub struct Founder {
    pub alleles: Vec<Allele>,
    pub stats: MutationStats,
    /// Number of haplotype slots assigned.
    pub size: usize,
}

impl Founder {
    /// Posterior mean of the founder's mutation rate.
    pub fn theta_estimate(&self, hyper: &Hyperparams) -> f64 {
        (hyper.alpha_h + self.stats.mismatches as f64) / (hyper.alpha_h + hyper.beta_h + self.stats.total() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct UrnState {
    pub kind: UrnKind,
    /// `m[j][k]`: draws of founder `k` in urn group `j`.
    pub m: Vec<Vec<u32>>,
    pub n: Vec<u32>,
    pub gamma: f64,
    /// One entry when the bottom-level concentration is shared.
    pub tau: Vec<f64>,
}

impl UrnState {
    pub fn k(&self) -> usize {
        self.n.len()
    }

    pub fn n_total(&self) -> u64 {
        self.n.iter().map(|&x| x as u64).sum()
    }

    pub fn tau_for(&self, j: usize) -> f64 {
        if self.tau.len() == 1 {
            self.tau[0]
        } else {
            self.tau[j]
        }
    }

    pub fn group_total(&self, j: usize) -> u64 {
        self.m[j].iter().map(|&x| x as u64).sum()
    }

    /// Number of non-empty (group, founder) cells.
    pub fn occupied_cells(&self) -> usize {
        self.m.iter().flatten().filter(|&&x| x > 0).count()
    }

    pub fn group_k(&self, j: usize) -> usize {
        self.m[j].iter().filter(|&&x| x > 0).count()
    }
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub hyper: Hyperparams,
    pub alphabet: AlleleAlphabet,
    pub channel: GenotypeChannel,
}

/// Full latent state: assignments, haplotypes, founders, urn counts,
/// genotype-discrepancy counts and the chain's RNG.
#[derive(Clone, Debug)]
pub struct SamplerState {
    pub params: ModelParams,
    pub n_loci: usize,
    /// Input population of each individual (reporting only).
    pub population_of: Vec<usize>,
    /// Urn group of each individual; all zero for a flat urn.
    pub group_of: Vec<usize>,
    genotypes: Vec<GenotypeSite>,
    pub assignments: Vec<usize>,
    haplotypes: Vec<Allele>,
    pub founders: Vec<Founder>,
    pub urn: UrnState,
    pub genotype_stats: GenotypeStats,
    pub rng: ChaCha8Rng,
    pub seed: u64,
    weights: Vec<f64>,
    predictive_cache: Vec<PredictiveTable>,
}

const DETACHED: usize = usize::MAX;

/// Whole-haplotype log predictives under one founder, for every mismatch
/// count of a single haplotype and of a pair, valid while the founder's
/// statistics equal `stats`.
#[derive(Clone, Debug)]
struct PredictiveTable {
    stats: MutationStats,
    single: Vec<f64>,
    pair: Vec<f64>,
}

/// Largest number of ambiguous sites whose phase is resampled jointly with
/// an individual's founder indicators.
pub const BLOCK_WINDOW: usize = 6;

impl SamplerState {
    /// Builds the starting state. Without `initial`, heterozygous sites are
    /// phased by a fair coin, missing sites drawn uniformly, and every slot is
    /// assigned to one founder carrying the site-wise majority allele. With
    /// `initial` haplotype pairs, each distinct haplotype starts as its own
    /// founder.
    pub fn initialize(
        data: &Dataset,
        params: ModelParams,
        kind: UrnKind,
        n_groups: usize,
        group_of: Vec<usize>,
        shared_tau: bool,
        initial: Option<&[[Haplotype; 2]]>,
        seed: u64,
    ) -> SamplerState {
        let t_len = data.n_loci;
        let n_ind = data.n_individuals();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = params.alphabet.size() as u8;
        let genotypes: Vec<GenotypeSite> = data
            .individuals()
            .flat_map(|(_, ind)| ind.genotype.0.iter().copied())
            .collect();
        let mut haplotypes = vec![0 as Allele; 2 * n_ind * t_len];
        for i in 0..n_ind {
            for t in 0..t_len {
                let (h0, h1) = match (initial, genotypes[i * t_len + t]) {
                    (Some(init), g) => project_site(g, init[i][0].0[t], init[i][1].0[t]),
                    (None, GenotypeSite::Pair(a, b)) if a != b && rng.random::<bool>() => (b, a),
                    (None, GenotypeSite::Pair(a, b)) => (a, b),
                    (None, GenotypeSite::Missing) => (rng.random_range(0..size), rng.random_range(0..size)),
                };
                haplotypes[(2 * i) * t_len + t] = h0;
                haplotypes[(2 * i + 1) * t_len + t] = h1;
            }
        }

        let mut founders: Vec<Founder> = Vec::new();
        let mut assignments = vec![0usize; 2 * n_ind];
        if initial.is_some() {
            let mut index: std::collections::HashMap<&[Allele], usize> = std::collections::HashMap::new();
            for s in 0..2 * n_ind {
                let h = &haplotypes[s * t_len..(s + 1) * t_len];
                let k = *index.entry(h).or_insert_with(|| {
                    founders.push(Founder {
                        alleles: h.to_vec(),
                        stats: MutationStats::default(),
                        size: 0,
                    });
                    founders.len() - 1
                });
                assignments[s] = k;
            }
        } else {
            let mut alleles = vec![0 as Allele; t_len];
            for (t, slot) in alleles.iter_mut().enumerate() {
                let mut counts = vec![0usize; size as usize];
                for s in 0..2 * n_ind {
                    counts[haplotypes[s * t_len + t] as usize] += 1;
                }
                // first symbol wins ties
                let best = counts.iter().enumerate().max_by_key(|&(a, &c)| (c, std::cmp::Reverse(a))).unwrap();
                *slot = best.0 as Allele;
            }
            founders.push(Founder {
                alleles,
                stats: MutationStats::default(),
                size: 0,
            });
        }

        let k = founders.len();
        let mut state = SamplerState {
            params,
            n_loci: t_len,
            population_of: data.population_of(),
            group_of,
            genotypes,
            assignments,
            haplotypes,
            founders,
            urn: UrnState {
                kind,
                m: vec![vec![0; k]; n_groups],
                n: vec![0; k],
                gamma: 1.0,
                tau: vec![1.0; if shared_tau { 1 } else { n_groups }],
            },
            genotype_stats: GenotypeStats::default(),
            rng,
            seed,
            weights: Vec::new(),
            predictive_cache: Vec::new(),
        };
        state.rebuild_counts();
        state
    }

    pub fn n_individuals(&self) -> usize {
        self.population_of.len()
    }

    pub fn n_slots(&self) -> usize {
        self.assignments.len()
    }

    pub fn haplotype(&self, slot: usize) -> &[Allele] {
        &self.haplotypes[slot * self.n_loci..(slot + 1) * self.n_loci]
    }

    pub fn genotype(&self, i: usize, t: usize) -> GenotypeSite {
        self.genotypes[i * self.n_loci + t]
    }

    pub fn haplotype_pair(&self, i: usize) -> [Haplotype; 2] {
        [
            Haplotype(self.haplotype(2 * i).to_vec()),
            Haplotype(self.haplotype(2 * i + 1).to_vec()),
        ]
    }

    pub fn k(&self) -> usize {
        self.founders.len()
    }

    fn match_stats(&self, slot: usize, k: usize) -> MutationStats {
        let a = &self.founders[k].alleles;
        let mismatches = self.haplotype(slot).iter().zip(a).filter(|(x, y)| x != y).count() as u64;
        MutationStats::new(self.n_loci as u64 - mismatches, mismatches)
    }

    fn site_class(&self, i: usize, t: usize) -> Option<MismatchClass> {
        match self.genotype(i, t) {
            GenotypeSite::Missing => None,
            GenotypeSite::Pair(a, b) => {
                let l = self.n_loci;
                Some(mismatch_class(a, b, self.haplotypes[2 * i * l + t], self.haplotypes[(2 * i + 1) * l + t]))
            }
        }
    }

    /// Recomputes every count from the raw assignments and haplotypes.
    fn rebuild_counts(&mut self) {
        let k = self.founders.len();
        for f in &mut self.founders {
            f.stats = MutationStats::default();
            f.size = 0;
        }
        for row in &mut self.urn.m {
            *row = vec![0; k];
        }
        for s in 0..self.n_slots() {
            let c = self.assignments[s];
            let st = self.match_stats(s, c);
            let f = &mut self.founders[c];
            f.stats.matches += st.matches;
            f.stats.mismatches += st.mismatches;
            f.size += 1;
            self.urn.m[self.group_of[s / 2]][c] += 1;
        }
        self.urn.n = self.scratch_n();
        let mut g = GenotypeStats::default();
        for i in 0..self.n_individuals() {
            for t in 0..self.n_loci {
                if let Some(c) = self.site_class(i, t) {
                    g.add(c);
                }
            }
        }
        self.genotype_stats = g;
    }

    fn scratch_n(&self) -> Vec<u32> {
        (0..self.founders.len())
            .map(|k| match self.urn.kind {
                UrnKind::Flat => self.urn.m.iter().map(|row| row[k]).sum(),
                UrnKind::Hierarchical => self.urn.m.iter().filter(|row| row[k] > 0).count() as u32,
            })
            .collect()
    }

    /// Compares the maintained counts with a from-scratch recomputation.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut fresh = self.clone();
        fresh.rebuild_counts();
        for (k, (a, b)) in self.founders.iter().zip(&fresh.founders).enumerate() {
            if a.stats != b.stats || a.size != b.size {
                return Err(format!(
                    "founder {k}: maintained {:?}/{} vs recomputed {:?}/{}",
                    a.stats, a.size, b.stats, b.size
                ));
            }
            if a.size == 0 {
                return Err(format!("founder {k} is represented but empty"));
            }
        }
        if self.urn.m != fresh.urn.m {
            return Err("group counts m differ from recomputation".into());
        }
        if self.urn.n != fresh.urn.n {
            return Err(format!("top counts n {:?} vs recomputed {:?}", self.urn.n, fresh.urn.n));
        }
        if self.urn.n.iter().any(|&x| x == 0) {
            return Err("represented founder with n_k = 0".into());
        }
        if self.genotype_stats != fresh.genotype_stats {
            return Err(format!(
                "genotype stats {:?} vs recomputed {:?}",
                self.genotype_stats, fresh.genotype_stats
            ));
        }
        let total: u64 = self.urn.m.iter().flatten().map(|&x| x as u64).sum();
        if total != self.n_slots() as u64 {
            return Err(format!("sum of m is {total}, expected {}", self.n_slots()));
        }
        if self.assignments.iter().any(|&c| c >= self.founders.len()) {
            return Err("assignment points past the founder pool".into());
        }
        Ok(())
    }

    /// Whether every sampled pair reproduces its non-missing genotype.
    pub fn genotype_consistent(&self) -> bool {
        (0..self.n_individuals())
            .all(|i| (0..self.n_loci).all(|t| self.site_class(i, t).is_none_or(|c| c == MismatchClass::Exact)))
    }

    // ---- assignment moves ----

    /// Removes a slot from its founder, dropping the founder when emptied.
    pub(crate) fn detach_slot(&mut self, slot: usize) {
        let c = self.assignments[slot];
        debug_assert_ne!(c, DETACHED);
        let st = self.match_stats(slot, c);
        let j = self.group_of[slot / 2];
        let f = &mut self.founders[c];
        f.stats.matches -= st.matches;
        f.stats.mismatches -= st.mismatches;
        f.size -= 1;
        self.urn.m[j][c] -= 1;
        match self.urn.kind {
            UrnKind::Flat => self.urn.n[c] -= 1,
            UrnKind::Hierarchical => {
                if self.urn.m[j][c] == 0 {
                    self.urn.n[c] -= 1;
                }
            }
        }
        self.assignments[slot] = DETACHED;
        if self.founders[c].size == 0 {
            self.remove_founder(c);
        }
    }

    fn remove_founder(&mut self, k: usize) {
        let last = self.founders.len() - 1;
        self.founders.swap_remove(k);
        self.urn.n.swap_remove(k);
        for row in &mut self.urn.m {
            row.swap_remove(k);
        }
        if k != last {
            for c in &mut self.assignments {
                if *c == last {
                    *c = k;
                }
            }
        }
    }

    /// Assigns a detached slot to founder `k`; `k == K` instantiates a new
    /// founder with the given alleles.
    pub(crate) fn attach_slot(&mut self, slot: usize, k: usize, new_alleles: Option<Vec<Allele>>) {
        if k == self.founders.len() {
            let alleles = new_alleles.expect("new founder needs alleles");
            self.founders.push(Founder {
                alleles,
                stats: MutationStats::default(),
                size: 0,
            });
            self.urn.n.push(0);
            for row in &mut self.urn.m {
                row.push(0);
            }
        }
        self.assignments[slot] = k;
        let st = self.match_stats(slot, k);
        let j = self.group_of[slot / 2];
        let f = &mut self.founders[k];
        f.stats.matches += st.matches;
        f.stats.mismatches += st.mismatches;
        f.size += 1;
        self.urn.m[j][k] += 1;
        match self.urn.kind {
            UrnKind::Flat => self.urn.n[k] += 1,
            UrnKind::Hierarchical => {
                if self.urn.m[j][k] == 1 {
                    self.urn.n[k] += 1;
                }
            }
        }
    }

    /// Draws a fresh founder pattern from its posterior given one haplotype
    /// and no other evidence: the mismatch count first, then the positions
    /// and replacement symbols uniformly.
    pub(crate) fn draw_new_founder(&mut self, slot: usize) -> Vec<Allele> {
        let t_len = self.n_loci;
        let hyper = self.params.hyper;
        let size = self.params.alphabet.size();
        self.weights.clear();
        for d in 0..=t_len {
            let log_choose = ln_gamma(t_len as f64 + 1.0) - ln_gamma(d as f64 + 1.0) - ln_gamma((t_len - d) as f64 + 1.0);
            self.weights
                .push(log_choose + ln_beta(hyper.alpha_h + d as f64, hyper.beta_h + (t_len - d) as f64));
        }
        let d = sample_log_weights(&mut self.rng, &mut self.weights);
        let mut alleles = self.haplotype(slot).to_vec();
        let mut positions: Vec<usize> = (0..t_len).collect();
        for p in 0..d {
            let q = self.rng.random_range(p..t_len);
            positions.swap(p, q);
            let t = positions[p];
            let mut other = self.rng.random_range(0..size - 1) as Allele;
            if other >= alleles[t] {
                other += 1;
            }
            alleles[t] = other;
        }
        alleles
    }

    /// Log predictive of the slot's haplotype under every represented founder,
    /// written to `out`; the slot must be detached.
    pub(crate) fn founder_log_likelihoods(&self, slot: usize, out: &mut Vec<f64>) {
        let hyper = &self.params.hyper;
        let size = self.params.alphabet.size();
        out.clear();
        for (k, f) in self.founders.iter().enumerate() {
            let new = self.match_stats(slot, k);
            let cached = self.predictive_cache.get(k).filter(|t| t.stats == f.stats);
            out.push(match cached {
                Some(t) => t.single[new.mismatches as usize],
                None => log_haplotype_predictive(new, f.stats, hyper.alpha_h, hyper.beta_h, size),
            });
        }
    }

    /// Log predictive of a haplotype under a not-yet-represented founder with
    /// a uniform pattern: exactly `-T log |A|`.
    pub(crate) fn new_founder_log_likelihood(&self) -> f64 {
        -(self.n_loci as f64) * (self.params.alphabet.size() as f64).ln()
    }

    /// Log conditional weights of a detached slot over the represented
    /// founders and a new one.
    pub(crate) fn slot_log_weights(&self, slot: usize, out: &mut Vec<f64>) {
        urn_prior_weights(&self.urn, self.group_of[slot / 2], None, out);
        let mut ll = Vec::with_capacity(out.len());
        self.founder_log_likelihoods(slot, &mut ll);
        ll.push(self.new_founder_log_likelihood());
        for (w, l) in out.iter_mut().zip(&ll) {
            *w = if *w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY };
        }
    }

    /// One Gibbs update of a slot's founder.
    pub(crate) fn resample_slot(&mut self, slot: usize) {
        self.detach_slot(slot);
        let mut lw = std::mem::take(&mut self.weights);
        self.slot_log_weights(slot, &mut lw);
        let k_count = self.founders.len();
        let k = sample_log_weights(&mut self.rng, &mut lw);
        self.weights = lw;
        if k == k_count {
            let alleles = self.draw_new_founder(slot);
            self.attach_slot(slot, k, Some(alleles));
        } else {
            self.attach_slot(slot, k, None);
        }
    }

    /// Joint Gibbs update of an individual's two founder indicators and its
    /// phase over a window of up to [`BLOCK_WINDOW`] ambiguous sites. Swapping
    /// the two alleles of an unordered pair leaves the genotype term
    /// unchanged, so the conditional is exact under either channel. The case
    /// where both slots would open one fresh founder is left out of the
    /// block; when the current state is in that case the move is skipped.
    pub(crate) fn resample_individual_block(&mut self, i: usize) {
        let (s0, s1) = (2 * i, 2 * i + 1);
        let l = self.n_loci;
        let (c0, c1) = (self.assignments[s0], self.assignments[s1]);
        if c0 == c1 && self.founders[c0].size == 2 {
            return;
        }
        let ambiguous: Vec<usize> = (0..l)
            .filter(|&t| self.haplotypes[s0 * l + t] != self.haplotypes[s1 * l + t])
            .collect();
        let window: Vec<usize> = if ambiguous.len() <= BLOCK_WINDOW {
            ambiguous
        } else {
            let start = self.rng.random_range(0..=ambiguous.len() - BLOCK_WINDOW);
            ambiguous[start..start + BLOCK_WINDOW].to_vec()
        };
        let w = window.len();
        let n_masks = 1usize << w;
        self.detach_slot(s0);
        self.detach_slot(s1);
        let k_count = self.founders.len();

        // Mismatch counts outside the window and in-window mismatch masks.
        let mut base = [vec![0u64; k_count], vec![0u64; k_count]];
        let mut masks = [vec![0u32; k_count], vec![0u32; k_count]];
        for (k, f) in self.founders.iter().enumerate() {
            for e in 0..2 {
                let h = &self.haplotypes[(s0 + e) * l..(s0 + e + 1) * l];
                let total = h.iter().zip(&f.alleles).filter(|(x, y)| x != y).count() as u64;
                let mut mask = 0u32;
                for (b, &t) in window.iter().enumerate() {
                    if h[t] != f.alleles[t] {
                        mask |= 1 << b;
                    }
                }
                base[e][k] = total - mask.count_ones() as u64;
                masks[e][k] = mask;
            }
        }
        let new_ll = self.new_founder_log_likelihood();
        self.refresh_predictive_cache();
        let mut log1 = [vec![0.0; k_count * (w + 1)], vec![0.0; k_count * (w + 1)]];
        let mut log2 = vec![0.0; k_count * (2 * w + 1)];
        for (k, table) in self.predictive_cache.iter().take(k_count).enumerate() {
            for e in 0..2 {
                let d = base[e][k] as usize;
                log1[e][k * (w + 1)..(k + 1) * (w + 1)].copy_from_slice(&table.single[d..=d + w]);
            }
            let d = (base[0][k] + base[1][k]) as usize;
            log2[k * (2 * w + 1)..(k + 1) * (2 * w + 1)].copy_from_slice(&table.pair[d..=d + 2 * w]);
        }
        let shift = [0, 1].map(|e| log1[e].iter().copied().fold(new_ll, f64::max));
        let lik1 = [0, 1].map(|e| log1[e].iter().map(|x| (x - shift[e]).exp()).collect::<Vec<_>>());
        let new_lik = [0, 1].map(|e| (new_ll - shift[e]).exp());
        let lik2: Vec<f64> = log2.iter().map(|x| (x - shift[0] - shift[1]).exp()).collect();

        // Sequential urn prior. `base_a` holds the second draw's weights when
        // the first joins an existing table of its group; `base_b` when it
        // opens a new one (entry `k_count` is then a distinct new founder).
        let j = self.group_of[i];
        let mut prior = Vec::new();
        urn_prior_weights(&self.urn, j, None, &mut prior);
        let prior_total: f64 = prior.iter().sum();
        let mut second_new = Vec::new();
        urn_prior_weights(&self.urn, j, Some(k_count), &mut second_new);
        let new_total: f64 = second_new.iter().sum();
        let base_a = prior.clone();
        let mut base_b = second_new.clone();
        base_b.remove(k_count);
        let opens_table = |k: usize| k == k_count || (self.urn.kind == UrnKind::Hierarchical && self.urn.m[j][k] == 0);
        // Second-draw weight of the first draw's founder and the normalizer.
        let second: Vec<(f64, f64)> = (0..k_count).map(|k| second_draw_weight(&self.urn, j, k)).collect();

        let mismatches = |e: usize, k: usize, s: u32| -> usize {
            let (own, other) = (masks[e][k], masks[1 - e][k]);
            ((own & !s) | (other & s)).count_ones() as usize
        };
        // In-window mismatch counts of both slots for every founder and mask.
        let mut counts = [vec![0u8; k_count * n_masks], vec![0u8; k_count * n_masks]];
        for e in 0..2 {
            for k in 0..k_count {
                for s in 0..n_masks {
                    counts[e][k * n_masks + s] = mismatches(e, k, s as u32) as u8;
                }
            }
        }
        // Second-slot mixtures over founders for each mask, under either base.
        let bases: Vec<&Vec<f64>> = if base_b == base_a { vec![&base_a] } else { vec![&base_a, &base_b] };
        let mut sums = vec![vec![0.0; n_masks]; bases.len()];
        for (sum, b) in sums.iter_mut().zip(&bases) {
            sum.fill(b[k_count] * new_lik[1]);
            for k in 0..k_count {
                let row = &lik1[1][k * (w + 1)..(k + 1) * (w + 1)];
                let c1 = &counts[1][k * n_masks..(k + 1) * n_masks];
                for (acc, &p1) in sum.iter_mut().zip(c1) {
                    *acc += b[k] * row[p1 as usize];
                }
            }
        }
        let sum_b = sums.len() - 1;
        let mut joint = vec![0.0; (k_count + 1) * n_masks];
        for k in 0..k_count {
            let t = if opens_table(k) { sum_b } else { 0 };
            let (b, sum) = (bases[t], &sums[t]);
            let (same, z) = second[k];
            let scale = prior[k] / prior_total / z;
            let row0 = &lik1[0][k * (w + 1)..(k + 1) * (w + 1)];
            let row1 = &lik1[1][k * (w + 1)..(k + 1) * (w + 1)];
            let row2 = &lik2[k * (2 * w + 1)..(k + 1) * (2 * w + 1)];
            for s in 0..n_masks {
                let p0 = counts[0][k * n_masks + s] as usize;
                let p1 = counts[1][k * n_masks + s] as usize;
                let apart = (sum[s] - b[k] * row1[p1]).max(0.0);
                joint[k * n_masks + s] = scale * (row0[p0] * apart + same * row2[p0 + p1]);
            }
        }
        let scale = prior[k_count] / prior_total * new_lik[0] / new_total;
        for s in 0..n_masks {
            joint[k_count * n_masks + s] = scale * sums[sum_b][s];
        }
        let pick = sample_weights(&mut self.rng, &joint).expect("no admissible individual block");
        let (n0, s) = (pick / n_masks, (pick % n_masks) as u32);

        let mut w1 = Vec::with_capacity(k_count + 1);
        let b = if opens_table(n0) { &base_b } else { &base_a };
        for k in 0..k_count {
            let p1 = mismatches(1, k, s);
            if k == n0 {
                let p0 = mismatches(0, k, s);
                let log_ratio = log2[k * (2 * w + 1) + p0 + p1] - log1[0][k * (w + 1) + p0] - shift[1];
                w1.push(second[k].0 * log_ratio.exp());
            } else {
                w1.push(b[k] * lik1[1][k * (w + 1) + p1]);
            }
        }
        w1.push(b[k_count] * new_lik[1]);
        let n1 = sample_weights(&mut self.rng, &w1).expect("no admissible second founder");

        for (bit, &t) in window.iter().enumerate() {
            if s >> bit & 1 == 1 {
                self.haplotypes.swap(s0 * l + t, s1 * l + t);
            }
        }
        if n0 == k_count {
            let alleles = self.draw_new_founder(s0);
            self.attach_slot(s0, n0, Some(alleles));
        } else {
            self.attach_slot(s0, n0, None);
        }
        if n1 == k_count {
            let alleles = self.draw_new_founder(s1);
            let fresh = self.founders.len();
            self.attach_slot(s1, fresh, Some(alleles));
        } else {
            self.attach_slot(s1, n1, None);
        }
    }

    /// Brings the per-founder predictive tables up to date.
    fn refresh_predictive_cache(&mut self) {
        let hyper = self.params.hyper;
        let size = self.params.alphabet.size();
        let lt = self.n_loci as u64;
        let cache = &mut self.predictive_cache;
        cache.truncate(self.founders.len());
        for (k, f) in self.founders.iter().enumerate() {
            if cache.get(k).is_some_and(|t| t.stats == f.stats) {
                continue;
            }
            let mut single = vec![0.0; self.n_loci + 1];
            let mut pair = vec![0.0; 2 * self.n_loci + 1];
            log_haplotype_predictive_run(lt, 0, f.stats, hyper.alpha_h, hyper.beta_h, size, &mut single);
            log_haplotype_predictive_run(2 * lt, 0, f.stats, hyper.alpha_h, hyper.beta_h, size, &mut pair);
            let table = PredictiveTable {
                stats: f.stats,
                single,
                pair,
            };
            if k < cache.len() {
                cache[k] = table;
            } else {
                cache.push(table);
            }
        }
    }

    // ---- founder pattern moves ----

    /// Resamples every locus of every founder from its full conditional,
    /// scoring each candidate allele with the founder's pooled statistics.
    pub(crate) fn resample_all_founder_sites(&mut self) {
        let t_len = self.n_loci;
        let size = self.params.alphabet.size();
        // per founder, per locus allele counts
        let k_count = self.founders.len();
        let mut counts = vec![0u32; k_count * t_len * size];
        for s in 0..self.n_slots() {
            let k = self.assignments[s];
            let h = &self.haplotypes[s * t_len..(s + 1) * t_len];
            for (t, &a) in h.iter().enumerate() {
                counts[(k * t_len + t) * size + a as usize] += 1;
            }
        }
        for k in 0..k_count {
            for t in 0..t_len {
                let c = &counts[(k * t_len + t) * size..(k * t_len + t + 1) * size];
                self.resample_founder_site_with_counts(k, t, c);
            }
        }
    }

    /// Unnormalized log conditional of each candidate allele for `a[k][t]`,
    /// given the allele counts at `t` among the haplotypes assigned to `k`.
    pub(crate) fn founder_site_log_weights(&self, k: usize, t: usize, counts: &[u32], out: &mut Vec<f64>) {
        let hyper = self.params.hyper;
        let size = self.params.alphabet.size();
        let n: u64 = counts.iter().map(|&c| c as u64).sum();
        let f = &self.founders[k];
        let current = f.alleles[t] as usize;
        let base_l = f.stats.matches - counts[current] as u64;
        let base_lp = f.stats.mismatches - (n - counts[current] as u64);
        let log_other = ((size - 1) as f64).ln();
        out.clear();
        for &c in counts.iter().take(size) {
            let l = base_l + c as u64;
            let lp = base_lp + (n - c as u64);
            out.push(ln_gamma(hyper.beta_h + l as f64) + ln_gamma(hyper.alpha_h + lp as f64) - lp as f64 * log_other);
        }
    }

    /// Gibbs update of `a[k][t]` given the allele counts at `t` among the
    /// haplotypes assigned to `k`.
    pub(crate) fn resample_founder_site_with_counts(&mut self, k: usize, t: usize, counts: &[u32]) {
        let mut w = std::mem::take(&mut self.weights);
        self.founder_site_log_weights(k, t, counts, &mut w);
        let a = sample_log_weights(&mut self.rng, &mut w);
        self.weights = w;
        let n: u64 = counts.iter().map(|&c| c as u64).sum();
        let f = &mut self.founders[k];
        let current = f.alleles[t] as usize;
        f.stats.matches = f.stats.matches - counts[current] as u64 + counts[a] as u64;
        f.stats.mismatches = f.stats.mismatches - (n - counts[current] as u64) + (n - counts[a] as u64);
        f.alleles[t] = a as Allele;
    }

    /// Allele counts at locus `t` among the slots assigned to founder `k`.
    pub(crate) fn founder_locus_counts(&self, k: usize, t: usize) -> Vec<u32> {
        let mut c = vec![0u32; self.params.alphabet.size()];
        for s in 0..self.n_slots() {
            if self.assignments[s] == k {
                c[self.haplotype(s)[t] as usize] += 1;
            }
        }
        c
    }

    // ---- haplotype moves ----

    fn remove_allele(&mut self, slot: usize, t: usize) {
        let k = self.assignments[slot];
        let a = self.haplotypes[slot * self.n_loci + t];
        let f = &mut self.founders[k];
        if a == f.alleles[t] {
            f.stats.matches -= 1;
        } else {
            f.stats.mismatches -= 1;
        }
    }

    fn add_allele(&mut self, slot: usize, t: usize, a: Allele) {
        self.haplotypes[slot * self.n_loci + t] = a;
        let k = self.assignments[slot];
        let f = &mut self.founders[k];
        if a == f.alleles[t] {
            f.stats.matches += 1;
        } else {
            f.stats.mismatches += 1;
        }
    }

    fn genotype_weight(&self, g: GenotypeSite, h0: Allele, h1: Allele) -> f64 {
        let GenotypeSite::Pair(a, b) = g else {
            return 1.0;
        };
        let class = mismatch_class(a, b, h0, h1);
        match self.params.channel {
            GenotypeChannel::Exact => f64::from(u8::from(class == MismatchClass::Exact)),
            GenotypeChannel::Collapsed => {
                let mu = mismatch_normalizer(class, h0, h1, self.params.alphabet.size());
                collapsed_g_factor(class, self.genotype_stats, self.params.hyper.alpha_g, self.params.hyper.beta_g, mu)
            }
        }
    }

    /// Gibbs update of one allele `h[2i+e][t]` with its partner held fixed.
    pub(crate) fn resample_haplotype_site(&mut self, i: usize, e: usize, t: usize) {
        let slot = 2 * i + e;
        let partner = 2 * i + (1 - e);
        let l = self.n_loci;
        let g = self.genotype(i, t);
        if let Some(c) = self.site_class(i, t) {
            self.genotype_stats.remove(c);
        }
        self.remove_allele(slot, t);
        let hyper = self.params.hyper;
        let size = self.params.alphabet.size();
        let f = &self.founders[self.assignments[slot]];
        let (a_t, stats) = (f.alleles[t], f.stats);
        let other = self.haplotypes[partner * l + t];
        let mut w = std::mem::take(&mut self.weights);
        w.clear();
        for x in 0..size as Allele {
            let (h0, h1) = if e == 0 { (x, other) } else { (other, x) };
            let pred = collapsed_h_predictive(x, a_t, stats, hyper.alpha_h, hyper.beta_h, size);
            w.push(self.genotype_weight(g, h0, h1) * pred);
        }
        let x = sample_weights(&mut self.rng, &w).expect("no admissible allele at haplotype site") as Allele;
        self.weights = w;
        self.add_allele(slot, t, x);
        if let Some(c) = self.site_class(i, t) {
            self.genotype_stats.add(c);
        }
    }

    /// Joint Gibbs update of both alleles of individual `i` at locus `t`.
    /// This is the only way to flip phase when the channel is exact.
    pub(crate) fn resample_site_pair(&mut self, i: usize, t: usize) {
        let g = self.genotype(i, t);
        let size = self.params.alphabet.size();
        if self.params.channel == GenotypeChannel::Exact {
            if let GenotypeSite::Pair(a, b) = g {
                if a == b {
                    return;
                }
            }
        }
        let (s0, s1) = (2 * i, 2 * i + 1);
        if let Some(c) = self.site_class(i, t) {
            self.genotype_stats.remove(c);
        }
        self.remove_allele(s0, t);
        self.remove_allele(s1, t);
        let hyper = self.params.hyper;
        let (c0, c1) = (self.assignments[s0], self.assignments[s1]);
        let (a0, st0) = (self.founders[c0].alleles[t], self.founders[c0].stats);
        let (a1, st1) = (self.founders[c1].alleles[t], self.founders[c1].stats);
        let mut w = std::mem::take(&mut self.weights);
        w.clear();
        for x in 0..size as Allele {
            let p0 = collapsed_h_predictive(x, a0, st0, hyper.alpha_h, hyper.beta_h, size);
            let mut st1x = st1;
            if c0 == c1 {
                if x == a0 {
                    st1x.matches += 1;
                } else {
                    st1x.mismatches += 1;
                }
            }
            for y in 0..size as Allele {
                let gw = self.genotype_weight(g, x, y);
                if gw == 0.0 {
                    w.push(0.0);
                    continue;
                }
                let p1 = collapsed_h_predictive(y, a1, st1x, hyper.alpha_h, hyper.beta_h, size);
                w.push(gw * p0 * p1);
            }
        }
        let idx = sample_weights(&mut self.rng, &w).expect("no admissible allele pair at site");
        self.weights = w;
        self.add_allele(s0, t, (idx / size) as Allele);
        self.add_allele(s1, t, (idx % size) as Allele);
        if let Some(c) = self.site_class(i, t) {
            self.genotype_stats.add(c);
        }
    }

    pub(crate) fn resample_all_haplotype_sites(&mut self, update: HaplotypeUpdate) {
        for i in 0..self.n_individuals() {
            match update {
                HaplotypeUpdate::PairBlock => {
                    for t in 0..self.n_loci {
                        self.resample_site_pair(i, t);
                    }
                }
                HaplotypeUpdate::SingleSite => {
                    for e in 0..2 {
                        for t in 0..self.n_loci {
                            self.resample_haplotype_site(i, e, t);
                        }
                    }
                }
            }
        }
    }

    /// Slot-weighted mean of the founders' posterior-mean mutation rates.
    pub fn theta_estimate(&self) -> f64 {
        let hyper = &self.params.hyper;
        let total: usize = self.founders.iter().map(|f| f.size).sum();
        self.founders
            .iter()
            .map(|f| f.size as f64 * f.theta_estimate(hyper))
            .sum::<f64>()
            / total as f64
    }

    /// Number of founders used by the individuals of each input population.
    pub fn founders_per_population(&self, n_pops: usize) -> Vec<usize> {
        let k = self.founders.len();
        let mut used = vec![vec![false; k]; n_pops];
        for s in 0..self.n_slots() {
            used[self.population_of[s / 2]][self.assignments[s]] = true;
        }
        used.iter().map(|u| u.iter().filter(|&&x| x).count()).collect()
    }

    #[cfg(test)]
    pub(crate) fn set_haplotype(&mut self, slot: usize, alleles: &[Allele]) {
        let l = self.n_loci;
        self.haplotypes[slot * l..(slot + 1) * l].copy_from_slice(alleles);
        self.rebuild_counts();
    }

    #[cfg(test)]
    pub(crate) fn set_assignments(&mut self, founders: Vec<Vec<Allele>>, assignments: Vec<usize>) {
        self.founders = founders
            .into_iter()
            .map(|alleles| Founder {
                alleles,
                stats: MutationStats::default(),
                size: 0,
            })
            .collect();
        self.assignments = assignments;
        let k = self.founders.len();
        for row in &mut self.urn.m {
            *row = vec![0; k];
        }
        self.rebuild_counts();
    }
}

/// Rejects move sets that cannot change phase: with an exact channel a
/// single-site haplotype update never leaves the current phasing.
pub(crate) fn check_moves(channel: GenotypeChannel, update: HaplotypeUpdate, individual_blocks: bool) -> crate::error::Result<()> {
    if channel == GenotypeChannel::Exact && update == HaplotypeUpdate::SingleSite && !individual_blocks {
        return Err(crate::error::Error::input(
            "single-site haplotype updates with the exact genotype channel never change phase; use pair updates or individual blocks",
        ));
    }
    Ok(())
}

/// Unnormalized predictive weights of a draw in group `j` over the
/// represented founders and a new one. With `extra = Some(k)` the counts
/// first absorb one draw of founder `k`; `k == K` stands for a founder
/// created by that draw, which then appears as entry `K`.
pub(crate) fn urn_prior_weights(urn: &UrnState, j: usize, extra: Option<usize>, out: &mut Vec<f64>) {
    out.clear();
    let k_count = urn.k();
    let tau = urn.tau_for(j);
    match urn.kind {
        UrnKind::Flat => {
            out.extend(urn.m[j].iter().map(|&m| m as f64));
            match extra {
                Some(k) if k == k_count => out.push(1.0),
                Some(k) => out[k] += 1.0,
                None => {}
            }
            out.push(tau);
        }
        UrnKind::Hierarchical => {
            let bumped = |k: usize| -> (f64, f64) {
                let (m, n) = (urn.m[j][k] as f64, urn.n[k] as f64);
                match extra {
                    Some(e) if e == k => (m + 1.0, if urn.m[j][k] == 0 { n + 1.0 } else { n }),
                    _ => (m, n),
                }
            };
            let opened = extra == Some(k_count);
            if k_count == 0 && !opened {
                out.push(1.0);
                return;
            }
            let n_total: f64 = (0..k_count).map(|k| bumped(k).1).sum::<f64>() + f64::from(u8::from(opened));
            let z = n_total - 1.0 + urn.gamma;
            out.extend((0..k_count).map(|k| {
                let (m, n) = bumped(k);
                m + tau * n / z
            }));
            if opened {
                out.push(1.0 + tau / z);
            }
            out.push(tau * urn.gamma / z);
        }
    }
}

/// Second-draw weight of founder `k` after a first draw of `k` in group `j`,
/// with the sum of all second-draw weights: entry `k` and the total of
/// `urn_prior_weights(urn, j, Some(k))`, without building the vector.
pub(crate) fn second_draw_weight(urn: &UrnState, j: usize, k: usize) -> (f64, f64) {
    let tau = urn.tau_for(j);
    let m_total = urn.group_total(j) as f64 + 1.0;
    let m = urn.m[j][k] as f64 + 1.0;
    match urn.kind {
        UrnKind::Flat => (m, m_total + tau),
        UrnKind::Hierarchical => {
            let opens = urn.m[j][k] == 0;
            let extra = f64::from(u8::from(opens));
            let n = urn.n[k] as f64 + extra;
            let n_total = urn.n_total() as f64 + extra;
            let z = n_total - 1.0 + urn.gamma;
            (m + tau * n / z, m_total + tau * (n_total + urn.gamma) / z)
        }
    }
}

/// Genotype-consistent version of an ordered pair at one site: keeps what
/// the genotype allows and repairs the rest, preferring to keep `h0`.
pub fn project_site(g: GenotypeSite, h0: Allele, h1: Allele) -> (Allele, Allele) {
    match g {
        GenotypeSite::Missing => (h0, h1),
        GenotypeSite::Pair(a, b) if a == b => (a, a),
        GenotypeSite::Pair(a, b) => {
            if (h0.min(h1), h0.max(h1)) == (a, b) {
                (h0, h1)
            } else if h0 == a || h0 == b {
                (h0, if h0 == a { b } else { a })
            } else if h1 == a || h1 == b {
                (if h1 == a { b } else { a }, h1)
            } else {
                (a, b)
            }
        }
    }
}

/// Samples an index proportionally to nonnegative weights.
pub(crate) fn sample_weights<R: Rng>(rng: &mut R, w: &[f64]) -> Option<usize> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &x) in w.iter().enumerate() {
        if x > 0.0 {
            if u < x {
                return Some(i);
            }
            u -= x;
            last = Some(i);
        }
    }
    last
}

/// Samples an index from log weights; the buffer is overwritten.
pub(crate) fn sample_log_weights<R: Rng>(rng: &mut R, lw: &mut [f64]) -> usize {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "all candidate weights vanished");
    for x in lw.iter_mut() {
        *x = (*x - max).exp();
    }
    sample_weights(rng, lw).expect("log weights normalize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Genotype, Individual, Population};

    pub(crate) fn toy_dataset() -> Dataset {
        let g = |s: &str| {
            Genotype(
                s.chars()
                    .map(|c| match c {
                        '0' => GenotypeSite::Pair(0, 0),
                        '1' => GenotypeSite::Pair(0, 1),
                        '2' => GenotypeSite::Pair(1, 1),
                        _ => GenotypeSite::Missing,
                    })
                    .collect(),
            )
        };
        let pop = |name: &str, rows: &[&str]| Population {
            name: name.into(),
            individuals: rows
                .iter()
                .enumerate()
                .map(|(i, r)| Individual {
                    id: format!("{name}{i}"),
                    genotype: g(r),
                })
                .collect(),
        };
        Dataset {
            alphabet: AlleleAlphabet::BIALLELIC,
            n_loci: 5,
            populations: vec![pop("A", &["01210", "11?00", "22100"]), pop("B", &["00000", "1111?"])],
        }
    }

    fn params(channel: GenotypeChannel) -> ModelParams {
        ModelParams {
            hyper: Hyperparams::default(),
            alphabet: AlleleAlphabet::BIALLELIC,
            channel,
        }
    }

    fn hier_state(channel: GenotypeChannel, seed: u64) -> SamplerState {
        let d = toy_dataset();
        let groups = d.population_of();
        SamplerState::initialize(&d, params(channel), UrnKind::Hierarchical, 2, groups, true, None, seed)
    }

    #[test]
    fn second_draw_weight_matches_full_vector() {
        for kind in [UrnKind::Flat, UrnKind::Hierarchical] {
            let urn = UrnState {
                kind,
                m: vec![vec![2, 0, 1], vec![0, 3, 1]],
                n: match kind {
                    UrnKind::Flat => vec![2, 3, 2],
                    UrnKind::Hierarchical => vec![1, 1, 2],
                },
                gamma: 1.7,
                tau: vec![0.6, 2.5],
            };
            let mut v = Vec::new();
            for j in 0..2 {
                for k in 0..3 {
                    urn_prior_weights(&urn, j, Some(k), &mut v);
                    let (w, total) = second_draw_weight(&urn, j, k);
                    assert!((w - v[k]).abs() < 1e-12);
                    assert!((total - v.iter().sum::<f64>()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn initial_state_is_consistent() {
        let s = hier_state(GenotypeChannel::Collapsed, 1);
        s.check_consistency().unwrap();
        assert_eq!(s.k(), 1);
        assert_eq!(s.urn.n, vec![2]);
        assert_eq!(s.urn.m, vec![vec![6], vec![4]]);
        assert!(s.genotype_consistent());
    }

    #[test]
    fn moves_keep_counts_consistent() {
        for channel in [GenotypeChannel::Collapsed, GenotypeChannel::Exact] {
            let mut s = hier_state(channel, 7);
            for round in 0..50 {
                for slot in 0..s.n_slots() {
                    s.resample_slot(slot);
                    s.check_consistency().unwrap();
                }
                s.resample_all_founder_sites();
                s.check_consistency().unwrap();
                if round % 2 == 0 {
                    s.resample_all_haplotype_sites(HaplotypeUpdate::PairBlock);
                } else {
                    s.resample_all_haplotype_sites(HaplotypeUpdate::SingleSite);
                }
                s.check_consistency().unwrap();
                if channel == GenotypeChannel::Exact {
                    assert!(s.genotype_consistent());
                }
            }
        }
    }

    #[test]
    fn removing_founder_relabels_slots() {
        let mut s = hier_state(GenotypeChannel::Collapsed, 3);
        let pats = vec![vec![0; 5], vec![1; 5], vec![0, 1, 0, 1, 0]];
        s.set_assignments(pats, vec![0, 1, 2, 2, 0, 0, 0, 0, 0, 0]);
        s.check_consistency().unwrap();
        s.detach_slot(1);
        // founder 1 emptied; founder 2 moved into its place
        assert_eq!(s.k(), 2);
        assert_eq!(s.founders[1].alleles, vec![0, 1, 0, 1, 0]);
        assert_eq!(&s.assignments[2..4], &[1, 1]);
        s.attach_slot(1, 0, None);
        s.check_consistency().unwrap();
    }

    #[test]
    fn projection_repairs_pairs() {
        let het = GenotypeSite::Pair(0, 1);
        assert_eq!(project_site(het, 1, 0), (1, 0));
        assert_eq!(project_site(het, 0, 0), (0, 1));
        assert_eq!(project_site(het, 1, 1), (1, 0));
        assert_eq!(project_site(GenotypeSite::Pair(1, 1), 0, 1), (1, 1));
        assert_eq!(project_site(GenotypeSite::Missing, 1, 0), (1, 0));
        assert_eq!(project_site(GenotypeSite::Pair(0, 1), 2, 2), (0, 1));
    }

    #[test]
    fn new_founder_pattern_near_haplotype() {
        let mut s = hier_state(GenotypeChannel::Collapsed, 11);
        let mut total = 0;
        for _ in 0..2000 {
            let a = s.draw_new_founder(0);
            total += a.iter().zip(s.haplotype(0)).filter(|(x, y)| x != y).count();
        }
        // Beta(1,19)-binomial mean on 5 loci is 0.25 mismatches
        let mean = total as f64 / 2000.0;
        assert!((mean - 0.25).abs() < 0.05, "mean mismatches {mean}");
    }

    #[test]
    fn weight_sampler_skips_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_weights(&mut rng, &[0.0, 2.0, 0.0]), Some(1));
        }
        assert_eq!(sample_weights(&mut rng, &[0.0, 0.0]), None);
    }
}
