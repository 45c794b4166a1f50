//! Seeded comparisons of the hierarchical model against the flat model run
//! on pooled populations (mode I) and on each population alone (mode II).

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dp::{run_dp, run_dp_per_population, DPConfig};
use crate::error::Result;
use crate::eval::{mean_freq_kl, score_phasing, sign_test_less, SignTest};
use crate::hdp::{run_hdp, HDPConfig};
use crate::seeds::derive_seed;
use crate::summary::PhasingResult;
use crate::synth::{generate, SimSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Hdp,
    DpPooled,
    DpPerPopulation,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hdp, Method::DpPooled, Method::DpPerPopulation];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hdp => "hdp",
            Method::DpPooled => "dp-pooled",
            Method::DpPerPopulation => "dp-per-population",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    /// Simulation template; its seed is replaced by each run's seed.
    pub spec: SimSpec,
    pub seeds: Vec<u64>,
    pub hdp: HDPConfig,
    pub dp: DPConfig,
    /// Frequency filter of the secondary divergence column.
    pub frequent_min_freq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRow {
    pub seed: u64,
    pub method: Method,
    pub err_s: f64,
    pub err_s_macro: f64,
    pub switch_distance: usize,
    /// Divergence from true to estimated haplotype frequencies over all haplotypes.
    pub kl_all: f64,
    pub kl_frequent: f64,
    pub k_mode: usize,
    pub k_mean: f64,
    pub theta_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub metric: &'static str,
    pub first: Method,
    pub second: Method,
    pub mean_first: f64,
    pub mean_second: f64,
    pub test: SignTest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    /// Seed-major, methods in [`Method::ALL`] order.
    pub rows: Vec<SeedRow>,
    pub comparisons: Vec<Comparison>,
}

impl ExperimentReport {
    pub fn column(&self, method: Method, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| metric_value(r, metric))
            .collect()
    }

    pub fn mean(&self, method: Method, metric: &str) -> f64 {
        let v = self.column(method, metric);
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn comparison(&self, metric: &str, first: Method, second: Method) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.metric == metric && c.first == first && c.second == second)
    }
}

pub const METRICS: [&str; 6] = ["err_s", "err_s_macro", "switch_distance", "kl_all", "kl_frequent", "k_mode"];

fn metric_value(r: &SeedRow, metric: &str) -> f64 {
    match metric {
        "err_s" => r.err_s,
        "err_s_macro" => r.err_s_macro,
        "switch_distance" => r.switch_distance as f64,
        "kl_all" => r.kl_all,
        "kl_frequent" => r.kl_frequent,
        "k_mode" => r.k_mode as f64,
        "k_mean" => r.k_mean,
        "theta_mean" => r.theta_mean,
        _ => panic!("unknown metric {metric}"),
    }
}

fn run_method(method: Method, data: &crate::model::Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<PhasingResult> {
    let chain_seed = derive_seed(seed, method as u64 + 1);
    match method {
        Method::Hdp => run_hdp(
            data,
            &HDPConfig {
                seed: chain_seed,
                ..cfg.hdp.clone()
            },
        ),
        Method::DpPooled => run_dp(
            data,
            &DPConfig {
                seed: chain_seed,
                ..cfg.dp.clone()
            },
        ),
        Method::DpPerPopulation => run_dp_per_population(
            data,
            &DPConfig {
                seed: chain_seed,
                ..cfg.dp.clone()
            },
        ),
    }
}

fn seed_rows(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<SeedRow>> {
    let (data, truth) = generate(&SimSpec {
        seed,
        ..cfg.spec.clone()
    })?;
    Method::ALL
        .iter()
        .map(|&method| {
            let res = run_method(method, &data, cfg, seed)?;
            let score = score_phasing(&truth.haplotypes, &res.phased_pairs(), &truth.ids)?;
            Ok(SeedRow {
                seed,
                method,
                err_s: score.err_s,
                err_s_macro: score.err_s_macro,
                switch_distance: score.switch_total,
                kl_all: mean_freq_kl(&truth, &res, 0.0)?,
                kl_frequent: mean_freq_kl(&truth, &res, cfg.frequent_min_freq)?,
                k_mode: res.k_mode,
                k_mean: res.k_mean,
                theta_mean: res.theta_mean,
            })
        })
        .collect()
}

/// Runs every method on every seed; seeds run in parallel. Results do not
/// depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.spec.validate()?;
    cfg.hdp.validate()?;
    cfg.dp.validate()?;
    let per_seed: Vec<Vec<SeedRow>> = cfg
        .seeds
        .par_iter()
        .map(|&s| seed_rows(cfg, s))
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport {
        rows: per_seed.into_iter().flatten().collect(),
        comparisons: Vec::new(),
    };
    for metric in ["err_s", "switch_distance", "kl_all", "kl_frequent"] {
        for other in [Method::DpPooled, Method::DpPerPopulation] {
            let a = report.column(Method::Hdp, metric);
            let b = report.column(other, metric);
            report.comparisons.push(Comparison {
                metric,
                first: Method::Hdp,
                second: other,
                mean_first: report.mean(Method::Hdp, metric),
                mean_second: report.mean(other, metric),
                test: sign_test_less(&a, &b),
            });
        }
    }
    Ok(report)
}

/// Per-seed CSV: `seed,method,err_s,err_s_macro,switch_distance,kl_all,kl_frequent,k_mode,k_mean,theta_mean`.
pub fn rows_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("seed,method,err_s,err_s_macro,switch_distance,kl_all,kl_frequent,k_mode,k_mean,theta_mean\n");
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{:.6},{:.6},{},{:.4},{:.6}",
            r.seed,
            r.method.name(),
            r.err_s,
            r.err_s_macro,
            r.switch_distance,
            r.kl_all,
            r.kl_frequent,
            r.k_mode,
            r.k_mean,
            r.theta_mean
        )
        .unwrap();
    }
    out
}

/// Paired summary CSV: `metric,first,second,mean_first,mean_second,wins,losses,ties,p_value`,
/// where wins count seeds with the first method lower.
pub fn comparisons_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("metric,first,second,mean_first,mean_second,wins,losses,ties,p_value\n");
    for c in &report.comparisons {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{},{},{:.6}",
            c.metric,
            c.first.name(),
            c.second.name(),
            c.mean_first,
            c.mean_second,
            c.test.wins,
            c.test.losses,
            c.test.ties,
            c.test.p_value
        )
        .unwrap();
    }
    out
}
