//! Resampling of DP concentration parameters.
//!
//! Given `k` distinct values among `n` urn draws, the concentration has
//! posterior density proportional to
//! `g^k exp(-kappa/g) g^(-iota-1) Gamma(g) / Gamma(n + g)`
//! under an inverse-Gamma(iota, kappa) prior. We slice-sample `x = ln g`.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const MAX_SHRINKS: usize = 100;
const STEP_WIDTH: f64 = 1.0;
const MAX_STEPS_OUT: usize = 50;

/// Log density of `x = ln g`, including the Jacobian.
pub fn log_concentration_density(x: f64, k: u64, n: u64, iota: f64, kappa: f64) -> f64 {
    let g = x.exp();
    (k as f64 - iota) * x - kappa * (-x).exp() + ln_gamma(g) - ln_gamma(n as f64 + g)
}

/// Log density of `x = ln g` when one concentration drives several
/// independent urns, group `j` holding `k_j` values among `n_j` draws.
pub fn log_shared_concentration_density(x: f64, groups: &[(u64, u64)], iota: f64, kappa: f64) -> f64 {
    let g = x.exp();
    let lg = ln_gamma(g);
    let mut out = -iota * x - kappa * (-x).exp();
    for &(k, n) in groups.iter().filter(|gr| gr.1 > 0) {
        out += k as f64 * x + lg - ln_gamma(n as f64 + g);
    }
    out
}

/// One slice-sampling update of the concentration starting from `current`.
pub fn sample_concentration<R: Rng>(k: u64, n: u64, iota: f64, kappa: f64, current: f64, rng: &mut R) -> Result<f64> {
    if k == 0 || n == 0 || k > n {
        return Err(Error::input(format!("concentration update needs 1 <= k <= n, got k={k}, n={n}")));
    }
    slice_sample(|x| log_concentration_density(x, k, n, iota, kappa), current, rng)
}

/// Like [`sample_concentration`] for a concentration shared by several
/// urns; empty groups carry no information and are skipped.
pub fn sample_shared_concentration<R: Rng>(
    groups: &[(u64, u64)],
    iota: f64,
    kappa: f64,
    current: f64,
    rng: &mut R,
) -> Result<f64> {
    if groups.iter().all(|g| g.1 == 0) {
        return Err(Error::input("shared concentration update needs at least one non-empty group"));
    }
    if let Some(&(k, n)) = groups.iter().find(|&&(k, n)| n > 0 && (k == 0 || k > n)) {
        return Err(Error::input(format!("concentration update needs 1 <= k <= n, got k={k}, n={n}")));
    }
    slice_sample(|x| log_shared_concentration_density(x, groups, iota, kappa), current, rng)
}

fn slice_sample<R: Rng, F: Fn(f64) -> f64>(f: F, current: f64, rng: &mut R) -> Result<f64> {
    if !(current > 0.0 && current.is_finite()) {
        return Err(Error::input(format!("concentration must be positive, got {current}")));
    }
    let x0 = current.ln();
    let fx0 = f(x0);
    if !fx0.is_finite() {
        return Err(Error::Sampler(format!("concentration density not finite at current value {current}")));
    }
    // slice height
    let log_y = fx0 + rng.random::<f64>().ln();

    let u: f64 = rng.random();
    let mut lo = x0 - STEP_WIDTH * u;
    let mut hi = lo + STEP_WIDTH;
    let mut steps = 0;
    while steps < MAX_STEPS_OUT && f(lo).is_finite() && f(lo) > log_y {
        lo -= STEP_WIDTH;
        steps += 1;
    }
    steps = 0;
    while steps < MAX_STEPS_OUT && f(hi).is_finite() && f(hi) > log_y {
        hi += STEP_WIDTH;
        steps += 1;
    }

    for _ in 0..MAX_SHRINKS {
        let x1 = lo + rng.random::<f64>() * (hi - lo);
        let fx1 = f(x1);
        if fx1.is_finite() && fx1 > log_y {
            return Ok(x1.exp());
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
    }
    Err(Error::Sampler(format!(
        "concentration slice sampler failed to find a point after {MAX_SHRINKS} shrinks"
    )))
}
