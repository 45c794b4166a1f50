//! Haplotype phasing with Dirichlet process mixtures of founder haplotypes.
//!
//! Genotypes of several populations are explained as noisy, unphased pairs
//! of haplotypes, each a mutated copy of a founder drawn from a population
//! urn. In the hierarchical model the population urns share one founder
//! pool; the flat model runs a single urn.

pub mod concentration;
pub mod dp;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hdp;
pub mod io;
pub mod ligation;
pub mod likelihood;
pub mod model;
pub mod oracle;
pub mod seeds;
pub mod state;
pub mod summary;
pub mod synth;

pub use dp::{run_dp, run_dp_per_population, DPConfig};
pub use error::{Error, Result};
pub use hdp::{run_hdp, run_hdp_from, HDPConfig, SharedTauUpdate};
pub use ligation::{phase_long, LigationConfig};
pub use model::{AlleleAlphabet, Dataset, Genotype, GenotypeSite, Haplotype, Hyperparams, Individual, Population};
pub use state::{GenotypeChannel, HaplotypeUpdate, SamplerState};
pub use summary::PhasingResult;
