//! Likelihood kernels: the single-locus mutation channel, its Beta-collapsed
//! marginal and predictive, and the noisy genotyping channel.
//!
//! Everything that accumulates over many observations is computed in log
//! space. Conventions: `theta ~ Beta(alpha_h, beta_h)` is the per-founder
//! mutation probability, `xi ~ Beta(alpha_g, beta_g)` the probability that a
//! genotype is observed without error.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{Allele, GenotypeSite};

/// Allele-match sufficient statistics of one founder, pooled over every
/// locus of every haplotype currently assigned to it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MutationStats {
    pub matches: u64,
    pub mismatches: u64,
}

impl MutationStats {
    pub fn new(matches: u64, mismatches: u64) -> Self {
        MutationStats { matches, mismatches }
    }

    pub fn total(self) -> u64 {
        self.matches + self.mismatches
    }
}

/// Exact / one-allele / two-allele discrepancy counts between the current
/// haplotype pairs and the observed genotypes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenotypeStats {
    pub exact: u64,
    pub diff1: u64,
    pub diff2: u64,
}

impl GenotypeStats {
    pub fn total(self) -> u64 {
        self.exact + self.diff1 + self.diff2
    }

    pub fn add(&mut self, class: MismatchClass) {
        match class {
            MismatchClass::Exact => self.exact += 1,
            MismatchClass::Diff1 => self.diff1 += 1,
            MismatchClass::Diff2 => self.diff2 += 1,
        }
    }

    pub fn remove(&mut self, class: MismatchClass) {
        let slot = match class {
            MismatchClass::Exact => &mut self.exact,
            MismatchClass::Diff1 => &mut self.diff1,
            MismatchClass::Diff2 => &mut self.diff2,
        };
        *slot = slot.checked_sub(1).expect("genotype statistic underflow");
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MismatchClass {
    Exact,
    Diff1,
    Diff2,
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::input(format!("{name} must lie in [0, 1], got {p}")))
    }
}

/// Single-locus mutation channel: `1 - theta` on a match, otherwise
/// `theta / (|A| - 1)` spread over the other symbols.
pub fn p_h_site(h: Allele, a: Allele, theta: f64, alphabet_size: usize) -> Result<f64> {
    check_probability("theta", theta)?;
    if alphabet_size < 2 {
        return Err(Error::input("alphabet size must be at least 2"));
    }
    Ok(if h == a {
        1.0 - theta
    } else {
        theta / (alphabet_size - 1) as f64
    })
}

/// Log marginal probability of the haplotypes assigned to one founder with
/// `theta` integrated against its Beta prior.
pub fn log_founder_marginal(stats: MutationStats, alpha_h: f64, beta_h: f64, alphabet_size: usize) -> f64 {
    let (l, lp) = (stats.matches as f64, stats.mismatches as f64);
    let mut out = ln_beta(alpha_h + lp, beta_h + l) - ln_beta(alpha_h, beta_h);
    if alphabet_size > 2 {
        out -= lp * ((alphabet_size - 1) as f64).ln();
    }
    out
}

/// Collapsed log marginal of all haplotypes given founders and assignments:
/// the sum of [`log_founder_marginal`] over founders.
pub fn collapsed_h_marginal(
    stats_per_founder: &[MutationStats],
    alpha_h: f64,
    beta_h: f64,
    alphabet_size: usize,
) -> f64 {
    stats_per_founder
        .iter()
        .map(|&s| log_founder_marginal(s, alpha_h, beta_h, alphabet_size))
        .sum()
}

/// Predictive probability of one more allele under a founder whose
/// statistics exclude it.
pub fn collapsed_h_predictive(
    h: Allele,
    a: Allele,
    stats: MutationStats,
    alpha_h: f64,
    beta_h: f64,
    alphabet_size: usize,
) -> f64 {
    let denom = alpha_h + beta_h + stats.total() as f64;
    if h == a {
        (beta_h + stats.matches as f64) / denom
    } else {
        (alpha_h + stats.mismatches as f64) / (denom * (alphabet_size - 1) as f64)
    }
}

/// Log predictive of a whole haplotype that matches its founder at
/// `new.matches` loci and differs at `new.mismatches`, given the founder's
/// statistics without it.
pub fn log_haplotype_predictive(
    new: MutationStats,
    stats: MutationStats,
    alpha_h: f64,
    beta_h: f64,
    alphabet_size: usize,
) -> f64 {
    let (l, lp) = (stats.matches as f64, stats.mismatches as f64);
    let (m, d) = (new.matches as f64, new.mismatches as f64);
    let mut out = ln_beta(alpha_h + lp + d, beta_h + l + m) - ln_beta(alpha_h + lp, beta_h + l);
    if alphabet_size > 2 {
        out -= d * ((alphabet_size - 1) as f64).ln();
    }
    out
}

/// [`log_haplotype_predictive`] for a haplotype of `len` loci at every
/// mismatch count `d0..d0 + out.len()`, written to `out`. Consecutive counts
/// share their log-gamma terms through the recurrence.
pub fn log_haplotype_predictive_run(
    len: u64,
    d0: u64,
    stats: MutationStats,
    alpha_h: f64,
    beta_h: f64,
    alphabet_size: usize,
    out: &mut [f64],
) {
    if out.is_empty() {
        return;
    }
    let (l, lp) = (stats.matches as f64, stats.mismatches as f64);
    let (a, b) = (alpha_h + lp, beta_h + l);
    let n = len as f64;
    let constant = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) - ln_gamma(a + b + n);
    let per_mismatch = if alphabet_size > 2 { ((alphabet_size - 1) as f64).ln() } else { 0.0 };
    let d = d0 as f64;
    let mut value = constant + ln_gamma(a + d) + ln_gamma(b + n - d) - d * per_mismatch;
    out[0] = value;
    for (step, slot) in out.iter_mut().enumerate().skip(1) {
        let prev = d + (step - 1) as f64;
        // lnG(a+d+1) - lnG(a+d) = ln(a+d); lnG(b+n-d-1) - lnG(b+n-d) = -ln(b+n-d-1)
        value += (a + prev).ln() - (b + n - prev - 1.0).ln() - per_mismatch;
        *slot = value;
    }
}

/// Multiset comparison of an observed genotype with a true ordered pair.
pub fn genotype_mismatch_class(g: GenotypeSite, h0: Allele, h1: Allele) -> Result<MismatchClass> {
    let GenotypeSite::Pair(a, b) = g else {
        return Err(Error::input("mismatch class is undefined at a missing genotype"));
    };
    Ok(mismatch_class(a, b, h0, h1))
}

#[inline]
pub(crate) fn mismatch_class(a: Allele, b: Allele, h0: Allele, h1: Allele) -> MismatchClass {
    // multiset intersection size of {a, b} and {h0, h1}
    let shared = if h0 == a {
        1 + u8::from(h1 == b)
    } else if h0 == b {
        1 + u8::from(h1 == a)
    } else {
        u8::from(h1 == a || h1 == b)
    };
    match shared {
        2 => MismatchClass::Exact,
        1 => MismatchClass::Diff1,
        _ => MismatchClass::Diff2,
    }
}

/// Number of observable unordered pairs in each mismatch class for a true
/// pair, as `(|S1|, |S2|)`.
fn mismatch_class_sizes(homozygous: bool, alphabet_size: usize) -> (usize, usize) {
    let a = alphabet_size;
    if homozygous {
        (a - 1, a * (a - 1) / 2)
    } else {
        (2 * a - 2, (a - 2) * (a - 1) / 2)
    }
}

/// Normalizing constant of a mismatch class: the error mass is split evenly
/// across the non-empty classes and uniformly within each class, so the
/// channel sums to one over observable genotypes for every true pair.
pub fn mismatch_normalizer(class: MismatchClass, h0: Allele, h1: Allele, alphabet_size: usize) -> f64 {
    let (s1, s2) = mismatch_class_sizes(h0 == h1, alphabet_size);
    let classes = usize::from(s1 > 0) + usize::from(s2 > 0);
    match class {
        MismatchClass::Exact => 1.0,
        MismatchClass::Diff1 if s1 > 0 => 1.0 / (classes * s1) as f64,
        MismatchClass::Diff2 if s2 > 0 => 1.0 / (classes * s2) as f64,
        _ => 0.0,
    }
}

/// Noisy genotyping channel at one site.
pub fn p_g_site(g: GenotypeSite, h0: Allele, h1: Allele, xi: f64, alphabet_size: usize) -> Result<f64> {
    check_probability("xi", xi)?;
    let class = genotype_mismatch_class(g, h0, h1)?;
    Ok(match class {
        MismatchClass::Exact => xi,
        c => mismatch_normalizer(c, h0, h1, alphabet_size) * (1.0 - xi),
    })
}

/// Unnormalized collapsed-genotype weight of a candidate whose site falls in
/// `class`; `stats` exclude the site. Only ratios between candidates matter.
pub fn collapsed_g_factor(class: MismatchClass, stats: GenotypeStats, alpha_g: f64, beta_g: f64, mu: f64) -> f64 {
    match class {
        MismatchClass::Exact => alpha_g + stats.exact as f64,
        _ => (beta_g + (stats.diff1 + stats.diff2) as f64) * mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn predictive_run_matches_pointwise() {
        let stats = MutationStats::new(37, 4);
        for (len, d0, size) in [(10u64, 0u64, 2usize), (10, 3, 4), (20, 12, 3)] {
            let mut run = vec![0.0; (len - d0 + 1) as usize];
            log_haplotype_predictive_run(len, d0, stats, 1.0, 19.0, size, &mut run);
            for (off, v) in run.iter().enumerate() {
                let d = d0 + off as u64;
                let direct = log_haplotype_predictive(MutationStats::new(len - d, d), stats, 1.0, 19.0, size);
                assert!((v - direct).abs() < 1e-10, "len {len} d {d}: {v} vs {direct}");
            }
        }
    }

    #[test]
    fn mutation_channel_values() {
        assert!((p_h_site(0, 0, 0.01, 2).unwrap() - 0.99).abs() < EPS);
        assert!((p_h_site(1, 0, 0.01, 2).unwrap() - 0.01).abs() < EPS);
        assert!((p_h_site(2, 0, 0.06, 4).unwrap() - 0.02).abs() < EPS);
        assert!(p_h_site(0, 0, 1.5, 2).is_err());
    }

    #[test]
    fn collapsed_marginal_values() {
        let m = |l, lp| collapsed_h_marginal(&[MutationStats::new(l, lp)], 1.0, 1.0, 2);
        assert!((m(2, 0) - (1.0f64 / 3.0).ln()).abs() < EPS);
        assert!(m(0, 0).abs() < EPS);
        assert!((m(1, 1) - (1.0f64 / 6.0).ln()).abs() < EPS);
    }

    #[test]
    fn collapsed_predictive_values() {
        let p = |h, l| collapsed_h_predictive(h, 0, MutationStats::new(l, 0), 1.0, 1.0, 2);
        assert!((p(0, 0) - 0.5).abs() < EPS);
        assert!((p(0, 8) - 0.9).abs() < EPS);
        assert!((p(1, 8) - 0.1).abs() < EPS);
    }

    #[test]
    fn mismatch_classes() {
        let g = |a, b| GenotypeSite::Pair(a, b);
        assert_eq!(genotype_mismatch_class(g(0, 1), 0, 1).unwrap(), MismatchClass::Exact);
        assert_eq!(genotype_mismatch_class(g(0, 1), 1, 0).unwrap(), MismatchClass::Exact);
        assert_eq!(genotype_mismatch_class(g(0, 0), 0, 1).unwrap(), MismatchClass::Diff1);
        assert_eq!(genotype_mismatch_class(g(1, 1), 0, 0).unwrap(), MismatchClass::Diff2);
        assert_eq!(genotype_mismatch_class(g(1, 1), 1, 0).unwrap(), MismatchClass::Diff1);
        assert!(genotype_mismatch_class(GenotypeSite::Missing, 0, 0).is_err());
    }

    #[test]
    fn genotyping_channel_values() {
        let g = |a, b| GenotypeSite::Pair(a, b);
        assert!((p_g_site(g(0, 1), 0, 1, 0.95, 2).unwrap() - 0.95).abs() < EPS);
        assert!((p_g_site(g(0, 0), 0, 1, 0.95, 2).unwrap() - 0.025).abs() < EPS);
        // error mass split across the two non-empty classes of a homozygous truth
        assert!((p_g_site(g(1, 1), 0, 0, 0.95, 2).unwrap() - 0.025).abs() < EPS);
        assert!((p_g_site(g(0, 1), 0, 0, 0.95, 2).unwrap() - 0.025).abs() < EPS);
    }

    #[test]
    fn genotype_factor_weights() {
        let s = |u, u1, u2| GenotypeStats { exact: u, diff1: u1, diff2: u2 };
        assert_eq!(collapsed_g_factor(MismatchClass::Exact, s(0, 0, 0), 1.0, 1.0, 0.5), 1.0);
        assert_eq!(collapsed_g_factor(MismatchClass::Exact, s(99, 1, 0), 9.0, 1.0, 0.5), 108.0);
        assert_eq!(collapsed_g_factor(MismatchClass::Diff1, s(99, 1, 0), 9.0, 1.0, 0.5), 1.0);
        assert_eq!(collapsed_g_factor(MismatchClass::Diff2, s(0, 0, 0), 1.0, 1.0, 1.0), 1.0);
    }

    fn all_unordered(alphabet: usize) -> Vec<GenotypeSite> {
        let mut out = Vec::new();
        for a in 0..alphabet as u8 {
            for b in a..alphabet as u8 {
                out.push(GenotypeSite::Pair(a, b));
            }
        }
        out
    }

    #[test]
    fn mutation_channel_normalizes() {
        for size in 2..=5usize {
            for &theta in &[0.0, 0.01, 0.3, 0.999, 1.0] {
                for a in 0..size as u8 {
                    let s: f64 = (0..size as u8).map(|h| p_h_site(h, a, theta, size).unwrap()).sum();
                    assert!((s - 1.0).abs() < EPS, "size {size} theta {theta}");
                }
            }
        }
    }

    #[test]
    fn genotyping_channel_normalizes() {
        for size in 2..=5usize {
            for &xi in &[0.0, 0.5, 0.95, 1.0] {
                for h0 in 0..size as u8 {
                    for h1 in 0..size as u8 {
                        let s: f64 = all_unordered(size)
                            .into_iter()
                            .map(|g| p_g_site(g, h0, h1, xi, size).unwrap())
                            .sum();
                        assert!((s - 1.0).abs() < EPS, "size {size} xi {xi} ({h0},{h1}) sums to {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn class_sizes_match_enumeration() {
        for size in 2..=6usize {
            for (h0, h1) in [(0u8, 0u8), (0, 1)] {
                let (mut s1, mut s2) = (0, 0);
                for g in all_unordered(size) {
                    match genotype_mismatch_class(g, h0, h1).unwrap() {
                        MismatchClass::Diff1 => s1 += 1,
                        MismatchClass::Diff2 => s2 += 1,
                        MismatchClass::Exact => {}
                    }
                }
                assert_eq!(mismatch_class_sizes(h0 == h1, size), (s1, s2));
            }
        }
    }

    proptest::proptest! {
        // Counts are kept where log-gamma values stay below ~1e3, so that the
        // f64 spacing of the marginals themselves is well under the tolerance.
        #[test]
        fn predictive_is_ratio_of_marginals(
            l in 0u64..100, lp in 0u64..100, alpha in 0.1f64..30.0, beta in 0.1f64..30.0,
            size in 2usize..5, matched in proptest::bool::ANY,
        ) {
            let before = MutationStats::new(l, lp);
            let after = if matched { MutationStats::new(l + 1, lp) } else { MutationStats::new(l, lp + 1) };
            let h = if matched { 0 } else { 1 };
            let direct = collapsed_h_predictive(h, 0, before, alpha, beta, size).ln();
            let ratio = log_founder_marginal(after, alpha, beta, size) - log_founder_marginal(before, alpha, beta, size);
            proptest::prop_assert!((direct - ratio).abs() < 1e-12, "{} vs {}", direct, ratio);
        }

        #[test]
        fn haplotype_predictive_chains_site_predictives(
            l in 0u64..200, lp in 0u64..200, m in 0u64..12, d in 0u64..12,
        ) {
            // absorbing matches then mismatches one at a time gives the block predictive
            let (alpha, beta) = (1.0, 19.0);
            let mut s = MutationStats::new(l, lp);
            let mut acc = 0.0;
            for _ in 0..m {
                acc += collapsed_h_predictive(0, 0, s, alpha, beta, 2).ln();
                s.matches += 1;
            }
            for _ in 0..d {
                acc += collapsed_h_predictive(1, 0, s, alpha, beta, 2).ln();
                s.mismatches += 1;
            }
            let block = log_haplotype_predictive(MutationStats::new(m, d), MutationStats::new(l, lp), alpha, beta, 2);
            proptest::prop_assert!((acc - block).abs() < 1e-9);
        }
    }
}
