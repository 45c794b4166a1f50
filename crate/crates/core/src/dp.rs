//! Single-urn Dirichlet process mixture phaser.
//!
//! Every individual of the dataset draws from one urn, so running this on a
//! multi-population dataset pools the populations (mode I). Population
//! labels are kept only for reporting.

use crate::concentration::sample_concentration;
use crate::error::{Error, Result};
use crate::model::{validate_dataset, Dataset, Haplotype, Hyperparams};
use crate::state::{check_moves, GenotypeChannel, HaplotypeUpdate, ModelParams, SamplerState, UrnKind};
use crate::summary::{run_chain, PhasingResult};

#[derive(Clone, Debug)]
pub struct DPConfig {
    pub hyperparams: Hyperparams,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
    /// Initial concentration.
    pub tau: f64,
    /// When false, `tau` stays at its initial value.
    pub resample_tau: bool,
    pub channel: GenotypeChannel,
    pub haplotype_update: HaplotypeUpdate,
    /// Adds a joint update of each individual's founder pair and local phase.
    pub individual_blocks: bool,
}

impl Default for DPConfig {
    fn default() -> Self {
        DPConfig {
            hyperparams: Hyperparams::default(),
            burn_in: 1000,
            samples: 1000,
            seed: 0,
            tau: 1.0,
            resample_tau: true,
            channel: GenotypeChannel::Collapsed,
            haplotype_update: HaplotypeUpdate::PairBlock,
            individual_blocks: true,
        }
    }
}

impl DPConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if self.samples == 0 {
            return Err(Error::input("at least one sampling sweep is required"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::input(format!("tau must be positive, got {}", self.tau)));
        }
        check_moves(self.channel, self.haplotype_update, self.individual_blocks)?;
        Ok(())
    }
}

/// Pólya urn predictive weights: existing values by occupancy, a new value
/// by the concentration.
pub fn crp_weights(occupancy: &[u32], tau: f64) -> Vec<f64> {
    let n: f64 = occupancy.iter().map(|&x| x as f64).sum();
    let z = n + tau;
    occupancy
        .iter()
        .map(|&x| x as f64 / z)
        .chain(std::iter::once(tau / z))
        .collect()
}

/// Fresh chain state for the flat urn.
pub fn init_dp_state(data: &Dataset, cfg: &DPConfig, initial: Option<&[[Haplotype; 2]]>) -> SamplerState {
    let params = ModelParams {
        hyper: cfg.hyperparams,
        alphabet: data.alphabet,
        channel: cfg.channel,
    };
    let groups = vec![0; data.n_individuals()];
    let mut state = SamplerState::initialize(data, params, UrnKind::Flat, 1, groups, true, initial, cfg.seed);
    state.urn.tau[0] = cfg.tau;
    state
}

/// One sweep: assignments, founder patterns, haplotypes, then `tau`.
pub fn dp_gibbs_sweep(state: &mut SamplerState, cfg: &DPConfig) -> Result<()> {
    for slot in 0..state.n_slots() {
        state.resample_slot(slot);
    }
    if cfg.individual_blocks {
        for i in 0..state.n_individuals() {
            state.resample_individual_block(i);
        }
    }
    state.resample_all_founder_sites();
    state.resample_all_haplotype_sites(cfg.haplotype_update);
    if cfg.resample_tau {
        let (k, n) = (state.k() as u64, state.n_slots() as u64);
        let h = state.params.hyper;
        state.urn.tau[0] = sample_concentration(k, n, h.iota, h.kappa, state.urn.tau[0], &mut state.rng)?;
    }
    Ok(())
}

pub fn run_dp(data: &Dataset, cfg: &DPConfig) -> Result<PhasingResult> {
    cfg.validate()?;
    validate_dataset(data).map_err(|v| Error::InvalidDataset(v.iter().map(|x| x.to_string()).collect()))?;
    let mut state = init_dp_state(data, cfg, None);
    run_chain(data, &mut state, cfg.burn_in, cfg.samples, |s| dp_gibbs_sweep(s, cfg))
}

/// Mode II: an independent chain per population, each seeded from the
/// master seed and the population index.
pub fn run_dp_per_population(data: &Dataset, cfg: &DPConfig) -> Result<PhasingResult> {
    use rayon::prelude::*;
    let parts: Vec<Result<PhasingResult>> = (0..data.n_populations())
        .into_par_iter()
        .map(|j| {
            let sub = data.single_population(j);
            let c = DPConfig {
                seed: crate::seeds::derive_seed(cfg.seed, j as u64),
                ..cfg.clone()
            };
            run_dp(&sub, &c)
        })
        .collect();
    Ok(PhasingResult::concatenate(parts.into_iter().collect::<Result<Vec<_>>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlleleAlphabet, Genotype, GenotypeSite, Individual, Population};

    fn dataset(rows: &[&str]) -> Dataset {
        let ind = rows
            .iter()
            .enumerate()
            .map(|(i, r)| Individual {
                id: format!("i{i}"),
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
                name: "P".into(),
                individuals: ind,
            }],
        }
    }

    #[test]
    fn crp_weight_examples() {
        assert_eq!(crp_weights(&[2], 1.0), vec![2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(crp_weights(&[], 5.0), vec![1.0]);
        let w = crp_weights(&[3, 1], 2.0);
        let expect = [0.5, 1.0 / 6.0, 1.0 / 3.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_homozygotes_share_a_founder() {
        let data = dataset(&["02200220", "02200220"]);
        let cfg = DPConfig {
            burn_in: 100,
            samples: 500,
            seed: 3,
            ..DPConfig::default()
        };
        let mut state = init_dp_state(&data, &cfg, None);
        let mut together = 0;
        for it in 0..cfg.burn_in + cfg.samples {
            dp_gibbs_sweep(&mut state, &cfg).unwrap();
            if it >= cfg.burn_in && state.k() == 1 {
                together += 1;
            }
        }
        let frac = together as f64 / cfg.samples as f64;
        assert!(frac >= 0.95, "single-founder fraction {frac}");
    }

    #[test]
    fn single_het_site_is_symmetric() {
        let data = dataset(&["1"]);
        let cfg = DPConfig {
            burn_in: 100,
            samples: 4000,
            seed: 9,
            channel: GenotypeChannel::Exact,
            ..DPConfig::default()
        };
        let mut state = init_dp_state(&data, &cfg, None);
        let mut first_is_zero = 0;
        for it in 0..cfg.burn_in + cfg.samples {
            dp_gibbs_sweep(&mut state, &cfg).unwrap();
            if it >= cfg.burn_in && state.haplotype(0)[0] == 0 {
                first_is_zero += 1;
            }
        }
        let p = first_is_zero as f64 / cfg.samples as f64;
        assert!((p - 0.5).abs() < 0.05, "ordered phase frequency {p}");
    }

    #[test]
    fn homozygous_data_returns_genotype_rows() {
        let data = dataset(&["0220", "2002", "0000"]);
        let cfg = DPConfig {
            burn_in: 20,
            samples: 50,
            ..DPConfig::default()
        };
        let r = run_dp(&data, &cfg).unwrap();
        for (ind, row) in r.individuals.iter().zip(["0110", "1001", "0000"]) {
            assert_eq!(ind.haplotypes[0].to_string(), row);
            assert_eq!(ind.haplotypes[1].to_string(), row);
        }
    }

    #[test]
    fn counts_stay_consistent_across_sweeps() {
        let data = dataset(&["0121", "11?0", "2211", "1111", "0?02"]);
        for channel in [GenotypeChannel::Collapsed, GenotypeChannel::Exact] {
            let cfg = DPConfig {
                seed: 5,
                channel,
                ..DPConfig::default()
            };
            let mut state = init_dp_state(&data, &cfg, None);
            for _ in 0..200 {
                dp_gibbs_sweep(&mut state, &cfg).unwrap();
                state.check_consistency().unwrap();
                if channel == GenotypeChannel::Exact {
                    assert!(state.genotype_consistent());
                }
            }
        }
    }

    #[test]
    fn rejects_empty_dataset() {
        let data = Dataset {
            alphabet: AlleleAlphabet::BIALLELIC,
            n_loci: 3,
            populations: vec![],
        };
        assert!(run_dp(&data, &DPConfig::default()).is_err());
    }
}
