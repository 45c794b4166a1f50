//! Domain types shared by the samplers, the ligation scheme, the simulator
//! and the evaluation code.
//!
//! Alleles are small integers `0..alphabet.size()`. A genotype site is the
//! unordered pair of the two alleles an individual carries at a locus, stored
//! with the smaller symbol first, or `Missing`.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

pub type Allele = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlleleAlphabet(u8);

impl AlleleAlphabet {
    pub const BIALLELIC: AlleleAlphabet = AlleleAlphabet(2);

    pub fn new(size: u8) -> Result<Self> {
        if size < 2 {
            return Err(Error::input(format!("alphabet size must be at least 2, got {size}")));
        }
        Ok(AlleleAlphabet(size))
    }

    pub fn size(self) -> usize {
        self.0 as usize
    }

    pub fn contains(self, allele: Allele) -> bool {
        allele < self.0
    }

    pub fn symbols(self) -> impl Iterator<Item = Allele> {
        0..self.0
    }
}

impl Default for AlleleAlphabet {
    fn default() -> Self {
        Self::BIALLELIC
    }
}

/// Allele sequence of one chromosome copy over a run of loci.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Haplotype(pub Vec<Allele>);

impl Haplotype {
    pub fn new(alleles: Vec<Allele>) -> Self {
        Haplotype(alleles)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn alleles(&self) -> &[Allele] {
        &self.0
    }

    pub fn hamming(&self, other: &Haplotype) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn slice(&self, range: Range<usize>) -> Haplotype {
        Haplotype(self.0[range].to_vec())
    }

    /// Parses a digit string such as `"0110"`.
    pub fn from_digits(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as Allele)
                    .ok_or_else(|| Error::input(format!("invalid allele character {c:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Haplotype)
    }
}

impl fmt::Display for Haplotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GenotypeSite {
    /// Canonical unordered pair, smaller allele first.
    Pair(Allele, Allele),
    Missing,
}

impl GenotypeSite {
    pub fn is_het(self) -> bool {
        matches!(self, GenotypeSite::Pair(a, b) if a != b)
    }

    pub fn is_missing(self) -> bool {
        matches!(self, GenotypeSite::Missing)
    }

    /// Whether the ordered pair `(h0, h1)` can produce this site without a
    /// genotyping error. Missing sites admit everything.
    pub fn admits(self, h0: Allele, h1: Allele) -> bool {
        match self {
            GenotypeSite::Missing => true,
            GenotypeSite::Pair(a, b) => (h0.min(h1), h0.max(h1)) == (a, b),
        }
    }

    /// Whether a single haplotype allele is compatible with this site.
    pub fn carries(self, allele: Allele) -> bool {
        match self {
            GenotypeSite::Missing => true,
            GenotypeSite::Pair(a, b) => allele == a || allele == b,
        }
    }
}

/// Canonically ordered unordered pair, after checking both symbols against
/// the alphabet.
pub fn canonicalize_genotype(alphabet: AlleleAlphabet, a: Allele, b: Allele) -> Result<GenotypeSite> {
    for x in [a, b] {
        if !alphabet.contains(x) {
            return Err(Error::input(format!(
                "allele {x} outside alphabet of size {}",
                alphabet.size()
            )));
        }
    }
    Ok(GenotypeSite::Pair(a.min(b), a.max(b)))
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Genotype(pub Vec<GenotypeSite>);

impl Genotype {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sites(&self) -> &[GenotypeSite] {
        &self.0
    }

    /// The unordered genotype produced by a haplotype pair.
    pub fn from_haplotypes(h0: &Haplotype, h1: &Haplotype) -> Genotype {
        Genotype(
            h0.0.iter()
                .zip(&h1.0)
                .map(|(&a, &b)| GenotypeSite::Pair(a.min(b), a.max(b)))
                .collect(),
        )
    }

    pub fn slice(&self, range: Range<usize>) -> Genotype {
        Genotype(self.0[range].to_vec())
    }

    /// True when `(h0, h1)` explains every non-missing site.
    pub fn admits_pair(&self, h0: &Haplotype, h1: &Haplotype) -> bool {
        self.0
            .iter()
            .zip(h0.0.iter().zip(&h1.0))
            .all(|(g, (&a, &b))| g.admits(a, b))
    }

    pub fn admits_haplotype(&self, h: &Haplotype) -> bool {
        self.0.iter().zip(&h.0).all(|(g, &a)| g.carries(a))
    }
}

/// Indices of heterozygous non-missing sites.
pub fn het_sites(g: &Genotype) -> Vec<usize> {
    g.0.iter()
        .enumerate()
        .filter(|(_, s)| s.is_het())
        .map(|(t, _)| t)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Individual {
    pub id: String,
    pub genotype: Genotype,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Population {
    pub name: String,
    pub individuals: Vec<Individual>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub alphabet: AlleleAlphabet,
    pub n_loci: usize,
    pub populations: Vec<Population>,
}

impl Dataset {
    pub fn n_individuals(&self) -> usize {
        self.populations.iter().map(|p| p.individuals.len()).sum()
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    /// Individuals in input order, paired with their population index.
    pub fn individuals(&self) -> impl Iterator<Item = (usize, &Individual)> {
        self.populations
            .iter()
            .enumerate()
            .flat_map(|(j, p)| p.individuals.iter().map(move |ind| (j, ind)))
    }

    /// Population index of every individual in input order.
    pub fn population_of(&self) -> Vec<usize> {
        self.individuals().map(|(j, _)| j).collect()
    }

    /// All individuals merged into one population, keeping input order.
    pub fn pooled(&self, name: &str) -> Dataset {
        Dataset {
            alphabet: self.alphabet,
            n_loci: self.n_loci,
            populations: vec![Population {
                name: name.to_string(),
                individuals: self.individuals().map(|(_, ind)| ind.clone()).collect(),
            }],
        }
    }

    pub fn single_population(&self, j: usize) -> Dataset {
        Dataset {
            alphabet: self.alphabet,
            n_loci: self.n_loci,
            populations: vec![self.populations[j].clone()],
        }
    }

    /// The same individuals restricted to a contiguous locus range.
    pub fn slice_loci(&self, range: Range<usize>) -> Dataset {
        Dataset {
            alphabet: self.alphabet,
            n_loci: range.len(),
            populations: self
                .populations
                .iter()
                .map(|p| Population {
                    name: p.name.clone(),
                    individuals: p
                        .individuals
                        .iter()
                        .map(|ind| Individual {
                            id: ind.id.clone(),
                            genotype: ind.genotype.slice(range.clone()),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// One structural problem found by [`validate_dataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub population: Option<String>,
    pub individual: Option<String>,
    pub locus: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.population {
            write!(f, "population {p}: ")?;
        }
        if let Some(i) = &self.individual {
            write!(f, "individual {i}: ")?;
        }
        if let Some(t) = self.locus {
            write!(f, "locus {t}: ")?;
        }
        f.write_str(&self.message)
    }
}

/// Checks every dataset invariant and reports all violations at once.
pub fn validate_dataset(d: &Dataset) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let v = |population: Option<&str>, individual: Option<&str>, locus, message: String| Violation {
        population: population.map(str::to_string),
        individual: individual.map(str::to_string),
        locus,
        message,
    };
    if d.populations.is_empty() {
        out.push(v(None, None, None, "dataset has no populations".into()));
    }
    if d.n_loci == 0 {
        out.push(v(None, None, None, "dataset has zero loci".into()));
    }
    let mut seen = HashSet::new();
    for p in &d.populations {
        if p.individuals.is_empty() {
            out.push(v(Some(&p.name), None, None, "population has no individuals".into()));
        }
        for ind in &p.individuals {
            if !seen.insert(ind.id.as_str()) {
                out.push(v(Some(&p.name), Some(&ind.id), None, "duplicate individual id".into()));
            }
            if ind.genotype.len() != d.n_loci {
                out.push(v(
                    Some(&p.name),
                    Some(&ind.id),
                    None,
                    format!("has {} loci, expected {}", ind.genotype.len(), d.n_loci),
                ));
            }
            for (t, site) in ind.genotype.0.iter().enumerate() {
                if let GenotypeSite::Pair(a, b) = *site {
                    if !d.alphabet.contains(a) || !d.alphabet.contains(b) {
                        out.push(v(
                            Some(&p.name),
                            Some(&ind.id),
                            Some(t),
                            format!("allele outside alphabet of size {}", d.alphabet.size()),
                        ));
                    } else if a > b {
                        out.push(v(Some(&p.name), Some(&ind.id), Some(t), "pair not canonical".into()));
                    }
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Beta hyperparameters for the mutation and genotyping channels and the
/// inverse-Gamma shape/scale shared by both concentration priors.
///
/// The mutation rate is `theta ~ Beta(alpha_h, beta_h)`, so `alpha_h` is the
/// pseudo-count of mutated alleles. Genotyping fidelity is
/// `xi ~ Beta(alpha_g, beta_g)`, so `alpha_g` counts exact matches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub alpha_h: f64,
    pub beta_h: f64,
    pub alpha_g: f64,
    pub beta_g: f64,
    pub iota: f64,
    pub kappa: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha_h: 1.0,
            beta_h: 19.0,
            alpha_g: 19.0,
            beta_g: 1.0,
            iota: 1.0,
            kappa: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_h", self.alpha_h),
            ("beta_h", self.beta_h),
            ("alpha_g", self.alpha_g),
            ("beta_g", self.beta_g),
            ("iota", self.iota),
            ("kappa", self.kappa),
        ];
        for (name, x) in all {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::input(format!("{name} must be positive and finite, got {x}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: u8, b: u8) -> GenotypeSite {
        GenotypeSite::Pair(a, b)
    }

    #[test]
    fn canonical_pairs() {
        let ab = AlleleAlphabet::BIALLELIC;
        assert_eq!(canonicalize_genotype(ab, 1, 0).unwrap(), pair(0, 1));
        assert_eq!(canonicalize_genotype(ab, 0, 0).unwrap(), pair(0, 0));
        assert_eq!(canonicalize_genotype(ab, 1, 1).unwrap(), pair(1, 1));
        assert!(canonicalize_genotype(ab, 2, 0).is_err());
    }

    #[test]
    fn het_site_listing() {
        let g = Genotype(vec![pair(0, 0), pair(0, 1), pair(1, 1)]);
        assert_eq!(het_sites(&g), vec![1]);
        let g = Genotype(vec![pair(0, 0), pair(1, 1), GenotypeSite::Missing]);
        assert!(het_sites(&g).is_empty());
        let g = Genotype(vec![pair(0, 1); 3]);
        assert_eq!(het_sites(&g), vec![0, 1, 2]);
    }

    fn two_pop() -> Dataset {
        let ind = |id: &str, sites: Vec<GenotypeSite>| Individual {
            id: id.into(),
            genotype: Genotype(sites),
        };
        Dataset {
            alphabet: AlleleAlphabet::BIALLELIC,
            n_loci: 2,
            populations: vec![
                Population {
                    name: "A".into(),
                    individuals: vec![ind("a1", vec![pair(0, 1), pair(0, 0)])],
                },
                Population {
                    name: "B".into(),
                    individuals: vec![ind("b1", vec![pair(1, 1), GenotypeSite::Missing])],
                },
            ],
        }
    }

    #[test]
    fn well_formed_dataset_validates() {
        assert!(validate_dataset(&two_pop()).is_ok());
    }

    #[test]
    fn ragged_dataset_names_individual() {
        let mut d = two_pop();
        d.populations[1].individuals[0].genotype.0.pop();
        let errs = validate_dataset(&d).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].individual.as_deref(), Some("b1"));
    }

    #[test]
    fn empty_population_names_group() {
        let mut d = two_pop();
        d.populations[0].individuals.clear();
        let errs = validate_dataset(&d).unwrap_err();
        assert_eq!(errs[0].population.as_deref(), Some("A"));
        assert!(errs[0].individual.is_none());
    }

    #[test]
    fn out_of_alphabet_and_duplicates_reported_together() {
        let mut d = two_pop();
        d.populations[0].individuals[0].genotype.0[1] = pair(0, 3);
        d.populations[1].individuals[0].id = "a1".into();
        let errs = validate_dataset(&d).unwrap_err();
        assert_eq!(errs.len(), 2);
        assert_eq!(errs[0].locus, Some(1));
    }

    #[test]
    fn pooled_and_sliced_views() {
        let d = two_pop();
        let p = d.pooled("all");
        assert_eq!(p.n_populations(), 1);
        assert_eq!(p.n_individuals(), 2);
        let s = d.slice_loci(1..2);
        assert_eq!(s.n_loci, 1);
        assert_eq!(s.populations[1].individuals[0].genotype.0, vec![GenotypeSite::Missing]);
    }

    #[test]
    fn pair_admission() {
        let g = Genotype(vec![pair(0, 1), pair(1, 1), GenotypeSite::Missing]);
        let h0 = Haplotype(vec![1, 1, 0]);
        let h1 = Haplotype(vec![0, 1, 1]);
        assert!(g.admits_pair(&h0, &h1));
        assert!(!g.admits_pair(&h0, &h0));
        assert!(g.admits_haplotype(&h0));
    }

    proptest::proptest! {
        #[test]
        fn canonicalize_is_idempotent(a in 0u8..4, b in 0u8..4) {
            let ab = AlleleAlphabet::new(4).unwrap();
            let GenotypeSite::Pair(x, y) = canonicalize_genotype(ab, a, b).unwrap() else { unreachable!() };
            proptest::prop_assert_eq!(canonicalize_genotype(ab, x, y).unwrap(), GenotypeSite::Pair(x, y));
        }
    }
}
