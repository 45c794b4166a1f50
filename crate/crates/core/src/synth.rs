//! Synthetic multi-population genotype data with known founders and phase.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::likelihood::p_g_site;
use crate::model::{Allele, AlleleAlphabet, Dataset, Genotype, GenotypeSite, Haplotype, Individual, Population};

const MAX_REDRAWS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub enum FounderSource {
    /// Uniform random distinct patterns.
    Random,
    /// Shared founders first, then each population's private founders in
    /// population order.
    Supplied(Vec<Haplotype>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSpec {
    pub n_populations: usize,
    pub individuals_per_population: usize,
    pub founders_per_population: usize,
    pub shared_founders: usize,
    pub n_loci: usize,
    pub theta: f64,
    pub genotype_error: f64,
    /// Probability that a genotype site is reported missing.
    pub missing_rate: f64,
    pub alphabet: AlleleAlphabet,
    pub founders: FounderSource,
    pub seed: u64,
}

impl SimSpec {
    /// Five populations of 20 individuals, five founders each of which two
    /// are shared, ten loci, mutation rate 0.01, no genotyping error.
    pub fn conserved(seed: u64) -> SimSpec {
        SimSpec {
            n_populations: 5,
            individuals_per_population: 20,
            founders_per_population: 5,
            shared_founders: 2,
            n_loci: 10,
            theta: 0.01,
            genotype_error: 0.0,
            missing_rate: 0.0,
            alphabet: AlleleAlphabet::BIALLELIC,
            founders: FounderSource::Random,
            seed,
        }
    }

    /// As [`SimSpec::conserved`] with mutation rate 0.05.
    pub fn diverse(seed: u64) -> SimSpec {
        SimSpec {
            theta: 0.05,
            ..SimSpec::conserved(seed)
        }
    }

    pub fn total_founders(&self) -> usize {
        self.shared_founders + self.n_populations * (self.founders_per_population - self.shared_founders)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("populations", self.n_populations),
            ("individuals_per_population", self.individuals_per_population),
            ("founders_per_population", self.founders_per_population),
            ("loci", self.n_loci),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::input(format!("{name} must be positive")));
            }
        }
        if self.shared_founders > self.founders_per_population {
            return Err(Error::input("shared_founders exceeds founders_per_population"));
        }
        for (name, v) in [
            ("theta", self.theta),
            ("genotype_error", self.genotype_error),
            ("missing_rate", self.missing_rate),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::input(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if let FounderSource::Supplied(pool) = &self.founders {
            if pool.len() != self.total_founders() {
                return Err(Error::input(format!(
                    "supplied founder pool has {} patterns, the layout needs {}",
                    pool.len(),
                    self.total_founders()
                )));
            }
            if let Some(h) = pool.iter().find(|h| h.len() != self.n_loci) {
                return Err(Error::input(format!("supplied founder {h} does not have {} loci", self.n_loci)));
            }
            if pool.iter().flat_map(|h| h.alleles()).any(|&a| !self.alphabet.contains(a)) {
                return Err(Error::input("supplied founder allele outside the alphabet"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrueFounder {
    pub pattern: Haplotype,
    /// Populations drawing on this founder.
    pub populations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub n_loci: usize,
    pub founders: Vec<TrueFounder>,
    /// Haplotype pairs in dataset individual order.
    pub haplotypes: Vec<[Haplotype; 2]>,
    /// Founder index of each haplotype.
    pub assignments: Vec<[usize; 2]>,
    pub ids: Vec<String>,
    pub population_of: Vec<usize>,
    pub population_names: Vec<String>,
}

impl GroundTruth {
    /// Founder indices available to population `j`.
    pub fn founders_of(&self, j: usize) -> Vec<usize> {
        (0..self.founders.len())
            .filter(|&k| self.founders[k].populations.contains(&j))
            .collect()
    }

    /// Restriction to a locus range.
    pub fn slice_loci(&self, range: std::ops::Range<usize>) -> GroundTruth {
        GroundTruth {
            n_loci: range.len(),
            founders: self
                .founders
                .iter()
                .map(|f| TrueFounder {
                    pattern: f.pattern.slice(range.clone()),
                    populations: f.populations.clone(),
                })
                .collect(),
            haplotypes: self
                .haplotypes
                .iter()
                .map(|[a, b]| [a.slice(range.clone()), b.slice(range.clone())])
                .collect(),
            ..self.clone()
        }
    }
}

fn random_pattern<R: Rng>(rng: &mut R, n_loci: usize, alphabet: AlleleAlphabet) -> Vec<Allele> {
    (0..n_loci).map(|_| rng.random_range(0..alphabet.size()) as Allele).collect()
}

fn draw_distinct_founders<R: Rng>(rng: &mut R, spec: &SimSpec) -> Result<Vec<Haplotype>> {
    let mut pool: Vec<Haplotype> = Vec::with_capacity(spec.total_founders());
    let mut redraws = 0;
    while pool.len() < spec.total_founders() {
        let h = Haplotype(random_pattern(rng, spec.n_loci, spec.alphabet));
        if pool.contains(&h) {
            redraws += 1;
            if redraws > MAX_REDRAWS {
                return Err(Error::input(format!(
                    "could not draw {} distinct founders on {} loci",
                    spec.total_founders(),
                    spec.n_loci
                )));
            }
            continue;
        }
        pool.push(h);
    }
    Ok(pool)
}

/// Applies the single-locus mutation channel to a founder pattern.
fn mutate<R: Rng>(rng: &mut R, founder: &Haplotype, theta: f64, alphabet: AlleleAlphabet) -> Haplotype {
    let size = alphabet.size();
    Haplotype(
        founder
            .alleles()
            .iter()
            .map(|&a| {
                if rng.random::<f64>() < theta {
                    let mut other = rng.random_range(0..size - 1) as Allele;
                    if other >= a {
                        other += 1;
                    }
                    other
                } else {
                    a
                }
            })
            .collect(),
    )
}

/// Draws an observed genotype site from the noisy genotyping channel.
fn observe<R: Rng>(rng: &mut R, h0: Allele, h1: Allele, error: f64, alphabet: AlleleAlphabet) -> Result<GenotypeSite> {
    if error == 0.0 {
        return Ok(GenotypeSite::Pair(h0.min(h1), h0.max(h1)));
    }
    let size = alphabet.size() as Allele;
    let mut sites = Vec::new();
    let mut weights = Vec::new();
    for a in 0..size {
        for b in a..size {
            let g = GenotypeSite::Pair(a, b);
            sites.push(g);
            weights.push(p_g_site(g, h0, h1, 1.0 - error, alphabet.size())?);
        }
    }
    let idx = crate::state::sample_weights(rng, &weights).expect("genotype channel normalizes");
    Ok(sites[idx])
}

/// Draws founders, haplotypes and observed genotypes.
pub fn generate(spec: &SimSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = match &spec.founders {
        FounderSource::Random => draw_distinct_founders(&mut rng, spec)?,
        FounderSource::Supplied(p) => p.clone(),
    };
    let s = spec.shared_founders;
    let private = spec.founders_per_population - s;
    let founders: Vec<TrueFounder> = pool
        .iter()
        .enumerate()
        .map(|(k, h)| TrueFounder {
            pattern: h.clone(),
            populations: if k < s {
                (0..spec.n_populations).collect()
            } else {
                vec![(k - s) / private]
            },
        })
        .collect();

    let mut populations = Vec::with_capacity(spec.n_populations);
    let mut haplotypes = Vec::new();
    let mut assignments = Vec::new();
    let mut ids = Vec::new();
    let mut population_of = Vec::new();
    let mut names = Vec::new();
    for j in 0..spec.n_populations {
        let available: Vec<usize> = (0..s).chain(s + j * private..s + (j + 1) * private).collect();
        let name = format!("pop{}", j + 1);
        let mut individuals = Vec::with_capacity(spec.individuals_per_population);
        for i in 0..spec.individuals_per_population {
            let c = [
                available[rng.random_range(0..available.len())],
                available[rng.random_range(0..available.len())],
            ];
            let h0 = mutate(&mut rng, &pool[c[0]], spec.theta, spec.alphabet);
            let h1 = mutate(&mut rng, &pool[c[1]], spec.theta, spec.alphabet);
            let mut sites = Vec::with_capacity(spec.n_loci);
            for t in 0..spec.n_loci {
                let g = observe(&mut rng, h0.0[t], h1.0[t], spec.genotype_error, spec.alphabet)?;
                let missing = spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate;
                sites.push(if missing { GenotypeSite::Missing } else { g });
            }
            let id = format!("{name}_{:03}", i + 1);
            individuals.push(Individual {
                id: id.clone(),
                genotype: Genotype(sites),
            });
            ids.push(id);
            population_of.push(j);
            haplotypes.push([h0, h1]);
            assignments.push(c);
        }
        populations.push(Population {
            name: name.clone(),
            individuals,
        });
        names.push(name);
    }
    let data = Dataset {
        alphabet: spec.alphabet,
        n_loci: spec.n_loci,
        populations,
    };
    let truth = GroundTruth {
        n_loci: spec.n_loci,
        founders,
        haplotypes,
        assignments,
        ids,
        population_of,
        population_names: names,
    };
    Ok((data, truth))
}

/// Appends independent uniform alleles to every founder up to `new_len`
/// loci, redrawing on collisions so the patterns stay distinct. Shared and
/// private founders keep their identity because the pool order is kept.
pub fn extend_founders(pool: &[Haplotype], new_len: usize, alphabet: AlleleAlphabet, seed: u64) -> Result<Vec<Haplotype>> {
    let old_len = pool.first().map_or(0, |h| h.len());
    if new_len < old_len {
        return Err(Error::input(format!("cannot shrink founders from {old_len} to {new_len} loci")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Haplotype> = Vec::with_capacity(pool.len());
    for h in pool {
        let mut redraws = 0;
        loop {
            let mut a = h.0.clone();
            a.extend(random_pattern(&mut rng, new_len - old_len, alphabet));
            let cand = Haplotype(a);
            if !out.contains(&cand) || new_len == old_len {
                out.push(cand);
                break;
            }
            redraws += 1;
            if redraws > MAX_REDRAWS {
                return Err(Error::input("could not extend founders to distinct patterns"));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conserved_layout_has_17_founders() {
        let (data, truth) = generate(&SimSpec::conserved(1)).unwrap();
        assert_eq!(truth.founders.len(), 17);
        assert_eq!(data.n_individuals(), 100);
        assert_eq!(data.n_populations(), 5);
        let shared = truth.founders.iter().filter(|f| f.populations.len() == 5).count();
        assert_eq!(shared, 2);
        for j in 0..5 {
            assert_eq!(truth.founders_of(j).len(), 5);
        }
        let mut pats: Vec<_> = truth.founders.iter().map(|f| f.pattern.clone()).collect();
        pats.sort();
        pats.dedup();
        assert_eq!(pats.len(), 17);
    }

    #[test]
    fn noiseless_haplotypes_equal_founders() {
        let spec = SimSpec {
            theta: 0.0,
            ..SimSpec::conserved(2)
        };
        let (data, truth) = generate(&spec).unwrap();
        for (i, (_, ind)) in data.individuals().enumerate() {
            for e in 0..2 {
                assert_eq!(truth.haplotypes[i][e], truth.founders[truth.assignments[i][e]].pattern);
            }
            assert_eq!(ind.genotype, Genotype::from_haplotypes(&truth.haplotypes[i][0], &truth.haplotypes[i][1]));
        }
    }

    #[test]
    fn mutation_fraction_within_three_sd() {
        for (theta, seed) in [(0.05, 3u64), (0.01, 4)] {
            let spec = SimSpec {
                theta,
                individuals_per_population: 200,
                ..SimSpec::conserved(seed)
            };
            let (_, truth) = generate(&spec).unwrap();
            let mut mutated = 0usize;
            let mut sites = 0usize;
            for (pair, c) in truth.haplotypes.iter().zip(&truth.assignments) {
                for e in 0..2 {
                    mutated += pair[e].hamming(&truth.founders[c[e]].pattern);
                    sites += spec.n_loci;
                }
            }
            let frac = mutated as f64 / sites as f64;
            let sd = (theta * (1.0 - theta) / sites as f64).sqrt();
            assert!((frac - theta).abs() <= 3.0 * sd, "fraction {frac} vs {theta}");
        }
    }

    #[test]
    fn genotype_errors_appear_at_requested_rate() {
        let spec = SimSpec {
            genotype_error: 0.1,
            individuals_per_population: 200,
            ..SimSpec::conserved(5)
        };
        let (data, truth) = generate(&spec).unwrap();
        let mut wrong = 0;
        let mut total = 0;
        for (i, (_, ind)) in data.individuals().enumerate() {
            let clean = Genotype::from_haplotypes(&truth.haplotypes[i][0], &truth.haplotypes[i][1]);
            wrong += ind.genotype.0.iter().zip(&clean.0).filter(|(a, b)| a != b).count();
            total += spec.n_loci;
        }
        let frac = wrong as f64 / total as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(generate(&SimSpec::diverse(9)).unwrap(), generate(&SimSpec::diverse(9)).unwrap());
        assert_ne!(generate(&SimSpec::diverse(9)).unwrap().1, generate(&SimSpec::diverse(10)).unwrap().1);
    }

    #[test]
    fn extension_keeps_prefix_and_structure() {
        let (_, truth) = generate(&SimSpec::conserved(6)).unwrap();
        let pool: Vec<Haplotype> = truth.founders.iter().map(|f| f.pattern.clone()).collect();
        let ext = extend_founders(&pool, 60, AlleleAlphabet::BIALLELIC, 1).unwrap();
        assert_eq!(ext.len(), 17);
        for (a, b) in pool.iter().zip(&ext) {
            assert_eq!(b.len(), 60);
            assert_eq!(&b.0[..10], a.alleles());
        }
        assert_eq!(extend_founders(&pool, 10, AlleleAlphabet::BIALLELIC, 1).unwrap(), pool);
        let spec = SimSpec {
            n_loci: 60,
            founders: FounderSource::Supplied(ext.clone()),
            ..SimSpec::conserved(6)
        };
        let (_, long) = generate(&spec).unwrap();
        assert_eq!(long.founders[0].pattern, ext[0]);
        assert_eq!(long.founders[0].populations, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let bad = SimSpec {
            shared_founders: 6,
            ..SimSpec::conserved(0)
        };
        assert!(generate(&bad).unwrap_err().to_string().contains("shared_founders"));
        let bad = SimSpec {
            theta: 1.5,
            ..SimSpec::conserved(0)
        };
        assert!(generate(&bad).unwrap_err().to_string().contains("theta"));
    }
}
