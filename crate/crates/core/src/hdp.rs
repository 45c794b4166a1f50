//! Hierarchical Dirichlet process mixture phaser: one urn per population,
//! all drawing their founders from a shared stock urn.
//!
//! Stock-urn bookkeeping is simplified to one ball per (population, founder)
//! pair in use, so `n[k]` is the number of populations drawing on `k`.

use crate::concentration::{sample_concentration, sample_shared_concentration};
use crate::error::{Error, Result};
use crate::model::{validate_dataset, Dataset, Haplotype, Hyperparams};
use crate::state::{check_moves, urn_prior_weights, GenotypeChannel, HaplotypeUpdate, ModelParams, SamplerState, UrnKind, UrnState};
use crate::summary::{run_chain, PhasingResult};

/// How a `tau` shared by the population urns is resampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharedTauUpdate {
    /// Each population urn is its own piece of evidence: the posterior is
    /// the product of the per-population urn likelihoods.
    Product,
    /// All urns treated as one: `k` is the number of occupied
    /// (population, founder) cells and `n` the number of draws.
    Pooled,
}

#[derive(Clone, Debug)]
pub struct HDPConfig {
    pub hyperparams: Hyperparams,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
    pub gamma: f64,
    pub tau: f64,
    /// One bottom-level concentration for all populations.
    pub shared_tau: bool,
    /// Evidence used to resample a shared `tau`.
    pub shared_tau_update: SharedTauUpdate,
    pub resample_concentrations: bool,
    pub channel: GenotypeChannel,
    pub haplotype_update: HaplotypeUpdate,
    /// Adds a joint update of each individual's founder pair and local phase.
    pub individual_blocks: bool,
}

impl Default for HDPConfig {
    fn default() -> Self {
        HDPConfig {
            hyperparams: Hyperparams::default(),
            burn_in: 1000,
            samples: 1000,
            seed: 0,
            gamma: 1.0,
            tau: 1.0,
            shared_tau: true,
            shared_tau_update: SharedTauUpdate::Product,
            resample_concentrations: true,
            channel: GenotypeChannel::Collapsed,
            haplotype_update: HaplotypeUpdate::PairBlock,
            individual_blocks: true,
        }
    }
}

impl HDPConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if self.samples == 0 {
            return Err(Error::input("at least one sampling sweep is required"));
        }
        for (name, v) in [("gamma", self.gamma), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        check_moves(self.channel, self.haplotype_update, self.individual_blocks)?;
        Ok(())
    }
}

/// Stock-urn weights: founder `k` by its ball count, a new founder by
/// `gamma`, all over `n - 1 + gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct TopLevelWeights {
    pub beta: Vec<f64>,
}

pub fn top_level_weights(urn: &UrnState) -> TopLevelWeights {
    let z = urn.n_total() as f64 - 1.0 + urn.gamma;
    TopLevelWeights {
        beta: urn
            .n
            .iter()
            .map(|&x| x as f64 / z)
            .chain(std::iter::once(urn.gamma / z))
            .collect(),
    }
}

/// Normalized predictive weights of a new draw in population `j` over the
/// represented founders and a new one.
pub fn hdp_prior_weights(urn: &UrnState, j: usize) -> Vec<f64> {
    let mut w = Vec::new();
    urn_prior_weights(urn, j, None, &mut w);
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    w
}

/// Fresh chain state with one urn group per population.
pub fn init_hdp_state(data: &Dataset, cfg: &HDPConfig, initial: Option<&[[Haplotype; 2]]>) -> SamplerState {
    let params = ModelParams {
        hyper: cfg.hyperparams,
        alphabet: data.alphabet,
        channel: cfg.channel,
    };
    let j = data.n_populations();
    let mut state = SamplerState::initialize(
        data,
        params,
        UrnKind::Hierarchical,
        j,
        data.population_of(),
        cfg.shared_tau,
        initial,
        cfg.seed,
    );
    state.urn.gamma = cfg.gamma;
    state.urn.tau.iter_mut().for_each(|t| *t = cfg.tau);
    state
}

/// Gibbs update of the founder of one haplotype slot (`2 * i + e`).
pub fn sample_assignment(state: &mut SamplerState, slot: usize) {
    state.resample_slot(slot);
}

/// Conditional probabilities of the founder choices for `slot`, with the slot
/// removed from the counts. Indices refer to the founder pool after removal;
/// the last entry is a new founder.
pub fn assignment_probabilities(state: &SamplerState, slot: usize) -> Vec<f64> {
    let mut s = state.clone();
    s.detach_slot(slot);
    let mut lw = Vec::new();
    s.slot_log_weights(slot, &mut lw);
    normalize_log(&mut lw);
    lw
}

/// Gibbs update of one founder allele `a[k][t]`.
pub fn sample_founder_site(state: &mut SamplerState, k: usize, t: usize) {
    let counts = state.founder_locus_counts(k, t);
    state.resample_founder_site_with_counts(k, t, &counts);
}

/// Conditional distribution of `a[k][t]` over the alphabet.
pub fn founder_site_probabilities(state: &SamplerState, k: usize, t: usize) -> Vec<f64> {
    let counts = state.founder_locus_counts(k, t);
    let mut lw = Vec::new();
    state.founder_site_log_weights(k, t, &counts, &mut lw);
    normalize_log(&mut lw);
    lw
}

/// Gibbs update of the allele of individual `i`'s copy `e` at locus `t`.
pub fn sample_haplotype_site(state: &mut SamplerState, i: usize, e: usize, t: usize) {
    state.resample_haplotype_site(i, e, t);
}

fn normalize_log(lw: &mut [f64]) {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lw.iter_mut().for_each(|x| *x = (*x - max).exp());
    let z: f64 = lw.iter().sum();
    lw.iter_mut().for_each(|x| *x /= z);
}

/// Resamples the stock and population concentrations.
pub fn resample_concentrations(state: &mut SamplerState, shared_update: SharedTauUpdate) -> Result<()> {
    let h = state.params.hyper;
    let k = state.k() as u64;
    let n = state.urn.n_total();
    state.urn.gamma = sample_concentration(k, n, h.iota, h.kappa, state.urn.gamma, &mut state.rng)?;
    let groups: Vec<(u64, u64)> = (0..state.urn.m.len())
        .map(|j| (state.urn.group_k(j) as u64, state.urn.group_total(j)))
        .collect();
    if state.urn.tau.len() == 1 {
        let current = state.urn.tau[0];
        state.urn.tau[0] = match shared_update {
            SharedTauUpdate::Product => sample_shared_concentration(&groups, h.iota, h.kappa, current, &mut state.rng)?,
            SharedTauUpdate::Pooled => {
                let cells = state.urn.occupied_cells() as u64;
                let draws = state.n_slots() as u64;
                sample_concentration(cells, draws, h.iota, h.kappa, current, &mut state.rng)?
            }
        };
    } else {
        for (j, &(kj, nj)) in groups.iter().enumerate() {
            if nj > 0 {
                state.urn.tau[j] = sample_concentration(kj, nj, h.iota, h.kappa, state.urn.tau[j], &mut state.rng)?;
            }
        }
    }
    Ok(())
}

/// One sweep: concentrations, then assignments and founder patterns, then
/// haplotypes.
pub fn hdp_gibbs_sweep(state: &mut SamplerState, cfg: &HDPConfig) -> Result<()> {
    if cfg.resample_concentrations {
        resample_concentrations(state, cfg.shared_tau_update)?;
    }
    for slot in 0..state.n_slots() {
        sample_assignment(state, slot);
    }
    if cfg.individual_blocks {
        for i in 0..state.n_individuals() {
            state.resample_individual_block(i);
        }
    }
    state.resample_all_founder_sites();
    state.resample_all_haplotype_sites(cfg.haplotype_update);
    Ok(())
}

pub fn run_hdp(data: &Dataset, cfg: &HDPConfig) -> Result<PhasingResult> {
    run_hdp_from(data, cfg, None)
}

/// Like [`run_hdp`], optionally starting from given haplotype pairs.
pub fn run_hdp_from(data: &Dataset, cfg: &HDPConfig, initial: Option<&[[Haplotype; 2]]>) -> Result<PhasingResult> {
    cfg.validate()?;
    validate_dataset(data).map_err(|v| Error::InvalidDataset(v.iter().map(|x| x.to_string()).collect()))?;
    if let Some(init) = initial {
        if init.len() != data.n_individuals() || init.iter().flatten().any(|h| h.len() != data.n_loci) {
            return Err(Error::input("initial haplotypes do not match the dataset shape"));
        }
    }
    let mut state = init_hdp_state(data, cfg, initial);
    run_chain(data, &mut state, cfg.burn_in, cfg.samples, |s| hdp_gibbs_sweep(s, cfg))
}
