//! Phasing accuracy against known haplotypes.

use std::collections::HashMap;

use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::model::{Allele, Haplotype};
use crate::summary::PhasingResult;
use crate::synth::GroundTruth;

/// Smallest estimated frequency used on the support of the true distribution.
pub const KL_FLOOR: f64 = 1e-6;

fn unordered(a: Allele, b: Allele) -> (Allele, Allele) {
    (a.min(b), a.max(b))
}

fn check_pairs(truth: &[Haplotype; 2], pred: &[Haplotype; 2]) -> Result<()> {
    let n = truth[0].len();
    if truth[1].len() != n || pred[0].len() != n || pred[1].len() != n {
        return Err(Error::input("haplotype pairs have different lengths"));
    }
    for t in 0..n {
        if unordered(truth[0].0[t], truth[1].0[t]) != unordered(pred[0].0[t], pred[1].0[t]) {
            return Err(Error::input(format!("pairs disagree on the genotype at locus {t}")));
        }
    }
    Ok(())
}

fn het_loci(pair: &[Haplotype; 2]) -> Vec<usize> {
    (0..pair[0].len()).filter(|&t| pair[0].0[t] != pair[1].0[t]).collect()
}

fn mismatches_at(truth: &[Haplotype; 2], pred: &[Haplotype; 2], sites: &[usize]) -> usize {
    let direct = sites.iter().filter(|&&t| pred[0].0[t] != truth[0].0[t]).count();
    let swapped = sites.iter().filter(|&&t| pred[0].0[t] != truth[1].0[t]).count();
    direct.min(swapped)
}

fn switches_at(truth: &[Haplotype; 2], pred: &[Haplotype; 2], sites: &[usize]) -> usize {
    let same: Vec<bool> = sites.iter().map(|&t| pred[0].0[t] == truth[0].0[t]).collect();
    same.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Mismatched heterozygous sites under the better orientation, and the
/// number of sites scored. Individuals with fewer than two heterozygous
/// sites are not scored.
pub fn site_error(truth: &[Haplotype; 2], pred: &[Haplotype; 2]) -> Result<(usize, usize)> {
    check_pairs(truth, pred)?;
    let het = het_loci(truth);
    if het.len() < 2 {
        return Ok((0, 0));
    }
    Ok((mismatches_at(truth, pred, &het), het.len()))
}

/// Relative-phase flips between consecutive heterozygous sites.
pub fn switch_distance(truth: &[Haplotype; 2], pred: &[Haplotype; 2]) -> Result<usize> {
    check_pairs(truth, pred)?;
    Ok(switches_at(truth, pred, &het_loci(truth)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndividualScore {
    pub id: String,
    pub het_sites: usize,
    pub mismatches: usize,
    pub nontrivial_sites: usize,
    pub switches: usize,
    /// Loci where the predicted unordered pair differs from the true one
    /// (genotyping errors, imputed missing sites); excluded from scoring.
    pub discordant_sites: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhasingScore {
    /// Pooled over sites of all ambiguous individuals.
    pub err_s: f64,
    /// Mean of per-individual rates over ambiguous individuals.
    pub err_s_macro: f64,
    pub mismatches: usize,
    pub nontrivial_sites: usize,
    pub n_ambiguous: usize,
    pub switch_total: usize,
    pub discordant_sites: usize,
    pub individuals: Vec<IndividualScore>,
}

/// Scores predicted pairs against the truth, individual by individual. Loci
/// where the unordered pairs disagree are skipped and counted.
pub fn score_phasing(truth: &[[Haplotype; 2]], pred: &[[Haplotype; 2]], ids: &[String]) -> Result<PhasingScore> {
    if truth.len() != pred.len() || truth.len() != ids.len() {
        return Err(Error::input(format!(
            "{} true pairs, {} predicted pairs, {} ids",
            truth.len(),
            pred.len(),
            ids.len()
        )));
    }
    let mut individuals = Vec::with_capacity(truth.len());
    for ((t, p), id) in truth.iter().zip(pred).zip(ids) {
        if t[0].len() != p[0].len() || t[1].len() != p[1].len() || t[0].len() != t[1].len() {
            return Err(Error::input(format!("individual {id}: haplotype lengths differ")));
        }
        let n = t[0].len();
        let concordant: Vec<usize> = (0..n)
            .filter(|&l| unordered(t[0].0[l], t[1].0[l]) == unordered(p[0].0[l], p[1].0[l]))
            .collect();
        let het: Vec<usize> = concordant.iter().copied().filter(|&l| t[0].0[l] != t[1].0[l]).collect();
        let (mismatches, nontrivial) = if het.len() >= 2 {
            (mismatches_at(t, p, &het), het.len())
        } else {
            (0, 0)
        };
        individuals.push(IndividualScore {
            id: id.clone(),
            het_sites: het.len(),
            mismatches,
            nontrivial_sites: nontrivial,
            switches: switches_at(t, p, &het),
            discordant_sites: n - concordant.len(),
        });
    }
    let mismatches: usize = individuals.iter().map(|s| s.mismatches).sum();
    let nontrivial_sites: usize = individuals.iter().map(|s| s.nontrivial_sites).sum();
    let ambiguous: Vec<&IndividualScore> = individuals.iter().filter(|s| s.nontrivial_sites > 0).collect();
    let err_s = if nontrivial_sites > 0 {
        mismatches as f64 / nontrivial_sites as f64
    } else {
        0.0
    };
    let err_s_macro = if ambiguous.is_empty() {
        0.0
    } else {
        ambiguous
            .iter()
            .map(|s| s.mismatches as f64 / s.nontrivial_sites as f64)
            .sum::<f64>()
            / ambiguous.len() as f64
    };
    Ok(PhasingScore {
        err_s,
        err_s_macro,
        mismatches,
        nontrivial_sites,
        n_ambiguous: ambiguous.len(),
        switch_total: individuals.iter().map(|s| s.switches).sum(),
        discordant_sites: individuals.iter().map(|s| s.discordant_sites).sum(),
        individuals,
    })
}

/// `D(p || q)` over the entries of `p` at or above `min_freq`, with `p`
/// renormalized after filtering. Entries of `q` on that support are floored
/// at [`KL_FLOOR`] and the whole of `q` renormalized.
pub fn freq_kl(p: &[(Haplotype, f64)], q: &[(Haplotype, f64)], min_freq: f64) -> f64 {
    let kept: Vec<&(Haplotype, f64)> = p.iter().filter(|(_, f)| *f >= min_freq && *f > 0.0).collect();
    let zp: f64 = kept.iter().map(|(_, f)| f).sum();
    if zp <= 0.0 {
        return 0.0;
    }
    let qmap: HashMap<&Haplotype, f64> = q.iter().map(|(h, f)| (h, *f)).collect();
    let qs: Vec<f64> = kept
        .iter()
        .map(|(h, _)| qmap.get(h).copied().unwrap_or(0.0).max(KL_FLOOR))
        .collect();
    let kept_set: std::collections::HashSet<&Haplotype> = kept.iter().map(|(h, _)| h).collect();
    let off_support: f64 = q.iter().filter(|(h, _)| !kept_set.contains(h)).map(|(_, f)| f.max(0.0)).sum();
    let zq: f64 = qs.iter().sum::<f64>() + off_support;
    kept.iter()
        .zip(&qs)
        .map(|((_, f), qv)| {
            let pv = f / zp;
            pv * (pv / (qv / zq)).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Empirical haplotype frequencies of each population in the truth.
pub fn true_haplotype_freqs(truth: &GroundTruth) -> Vec<Vec<(Haplotype, f64)>> {
    let n_pops = truth.population_names.len();
    let mut counts: Vec<HashMap<&Haplotype, usize>> = vec![HashMap::new(); n_pops];
    let mut sizes = vec![0usize; n_pops];
    for (pair, &j) in truth.haplotypes.iter().zip(&truth.population_of) {
        for h in pair {
            *counts[j].entry(h).or_insert(0) += 1;
            sizes[j] += 1;
        }
    }
    counts
        .into_iter()
        .zip(sizes)
        .map(|(c, n)| {
            let mut v: Vec<(Haplotype, f64)> = c.into_iter().map(|(h, k)| (h.clone(), k as f64 / n as f64)).collect();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v
        })
        .collect()
}

/// Mean over populations of the divergence from true to estimated
/// haplotype frequencies.
pub fn mean_freq_kl(truth: &GroundTruth, result: &PhasingResult, min_freq: f64) -> Result<f64> {
    let p = true_haplotype_freqs(truth);
    if p.len() != result.haplotype_freqs.len() {
        return Err(Error::input("result and truth have different population counts"));
    }
    if p.is_empty() {
        return Err(Error::input("no populations to compare"));
    }
    Ok(p.iter()
        .zip(&result.haplotype_freqs)
        .map(|(pj, qj)| freq_kl(pj, qj, min_freq))
        .sum::<f64>()
        / p.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FounderMatch {
    pub recovered: usize,
    pub truth: usize,
    pub distance: usize,
}

/// Greedy minimum-Hamming one-to-one matching of recovered to true
/// founders: repeatedly takes the closest unmatched pair.
pub fn match_founders(recovered: &[Haplotype], truth: &[Haplotype]) -> Vec<FounderMatch> {
    let mut cand: Vec<FounderMatch> = Vec::with_capacity(recovered.len() * truth.len());
    for (r, a) in recovered.iter().enumerate() {
        for (t, b) in truth.iter().enumerate() {
            cand.push(FounderMatch {
                recovered: r,
                truth: t,
                distance: a.hamming(b),
            });
        }
    }
    cand.sort_by_key(|m| (m.distance, m.recovered, m.truth));
    let mut used_r = vec![false; recovered.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for m in cand {
        if !used_r[m.recovered] && !used_t[m.truth] {
            used_r[m.recovered] = true;
            used_t[m.truth] = true;
            out.push(m);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct KThetaReport {
    pub k_mode: usize,
    pub k_mean: f64,
    pub k_population_mode: Vec<usize>,
    pub k_population_mean: Vec<f64>,
    pub theta_mean: f64,
    pub true_k: usize,
    /// Founders represented in at least half the samples, matched to truth.
    pub matches: Vec<FounderMatch>,
    /// True founders shared by several populations whose match is within
    /// one locus and is used by two or more populations.
    pub shared_recovered: usize,
}

pub fn k_theta_summary(result: &PhasingResult, truth: &GroundTruth) -> Result<KThetaReport> {
    if result.samples == 0 || result.individuals.is_empty() {
        return Err(Error::input("phasing result holds no samples"));
    }
    let frequent: Vec<usize> = (0..result.founders.len())
        .filter(|&k| result.founders[k].presence >= 0.5)
        .collect();
    let rec: Vec<Haplotype> = frequent.iter().map(|&k| result.founders[k].pattern.clone()).collect();
    let tru: Vec<Haplotype> = truth.founders.iter().map(|f| f.pattern.clone()).collect();
    let matches = match_founders(&rec, &tru);
    let shared_recovered = matches
        .iter()
        .filter(|m| {
            truth.founders[m.truth].populations.len() > 1
                && m.distance <= 1
                && result.founders[frequent[m.recovered]].share_set.len() >= 2
        })
        .count();
    let matches = matches
        .into_iter()
        .map(|m| FounderMatch {
            recovered: frequent[m.recovered],
            ..m
        })
        .collect();
    Ok(KThetaReport {
        k_mode: result.k_mode,
        k_mean: result.k_mean,
        k_population_mode: result.k_population_mode.clone(),
        k_population_mean: result.k_population_mean.clone(),
        theta_mean: result.theta_mean,
        true_k: truth.founders.len(),
        matches,
        shared_recovered,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignTest {
    /// Pairs where the first value is smaller.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided p-value for the first value tending to be smaller.
    pub p_value: f64,
}

/// Paired one-sided sign test of `a < b`; ties are dropped.
pub fn sign_test_less(a: &[f64], b: &[f64]) -> SignTest {
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let ties = a.len().min(b.len()) - wins - losses;
    let n = (wins + losses) as u64;
    let p_value = if n == 0 || wins == 0 {
        1.0
    } else {
        let bin = Binomial::new(0.5, n).expect("valid binomial");
        // P(X >= wins)
        1.0 - bin.cdf(wins as u64 - 1)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}
