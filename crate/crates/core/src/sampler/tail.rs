//! Tail probabilities `mu{dist(h, M) > delta}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::diagnostics::{batch_means, integrated_autocorr_time};
use super::{mala_chain, ChainConfig};
use crate::energy::Energy;
use crate::error::{Error, Result};
use crate::linalg::{dot, BandCholesky};
use crate::tubular::Tubular;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    Direct,
    /// anchored ratio against the event `dist > reference`; `None` picks the
    /// median sampled distance
    Importance { reference: Option<f64>, samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `eps log p_hat`, or `eps log ci_high` when nothing was observed
    pub eps_log_p: f64,
    pub method: TailMethod,
    /// `p_hat = 0`: only the rule-of-three upper bound is meaningful
    pub upper_bound_only: bool,
    pub samples: usize,
    pub effective_samples: f64,
}

const Z95: f64 = 1.959963984540054;

/// Runs one chain with `config` and estimates the tail probability of the
/// distance to the minimizer manifold.
pub fn estimate_tail(
    config: &ChainConfig,
    energy: &Energy,
    tubular: &Tubular,
    delta: f64,
    method: TailMethod,
) -> Result<TailEstimate> {
    let eps = config.eps;
    if delta <= 0.0 {
        // dist >= 0 always
        return Ok(TailEstimate {
            p_hat: 1.0,
            ci_low: 1.0,
            ci_high: 1.0,
            eps_log_p: 0.0,
            method,
            upper_bound_only: false,
            samples: 0,
            effective_samples: f64::INFINITY,
        });
    }
    let chain = mala_chain(config.clone(), energy.clone(), Some(tubular))?;
    let mut dists = Vec::with_capacity(config.n_samples);
    for s in chain {
        dists.push(tubular.dist_to_manifold(&s?.field));
    }
    let direct = direct_estimate(&dists, delta, eps);
    match method {
        TailMethod::Direct => Ok(direct),
        TailMethod::Importance { reference, samples } => {
            let mut sorted = dists.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
            let reference = reference.unwrap_or(median);
            if reference >= delta {
                // the event itself is not rare for the chain
                return Ok(TailEstimate { method, ..direct });
            }
            let anchor = direct_estimate(&dists, reference, eps);
            if anchor.upper_bound_only {
                return Err(Error::DegenerateWeights(0.0));
            }
            let (ratio, rel) = importance_ratio(energy, tubular, eps, delta, reference, samples, config.seed ^ 0x5eed)?;
            let p_hat = anchor.p_hat * ratio;
            let rel_anchor = (anchor.ci_high - anchor.ci_low) / (2.0 * Z95 * anchor.p_hat);
            let spread = Z95 * (rel * rel + rel_anchor * rel_anchor).sqrt();
            Ok(TailEstimate {
                p_hat,
                ci_low: p_hat * (-spread).exp(),
                ci_high: (p_hat * spread.exp()).min(1.0).max(p_hat),
                eps_log_p: eps * p_hat.ln(),
                method,
                upper_bound_only: false,
                samples: samples + dists.len(),
                effective_samples: anchor.effective_samples,
            })
        }
    }
}

/// Fraction of `dists` above `delta` with a batch-means interval; an empty
/// count reports the rule-of-three bound `3 / n_eff`.
pub(crate) fn direct_estimate(dists: &[f64], delta: f64, eps: f64) -> TailEstimate {
    let n = dists.len();
    let ind: Vec<f64> = dists.iter().map(|&d| if d > delta { 1.0 } else { 0.0 }).collect();
    let n_eff = n as f64 / integrated_autocorr_time(dists);
    let (p, se) = batch_means(&ind, 20);
    let (lo, hi, bound_only) = if p == 0.0 {
        (0.0, (3.0 / n_eff).min(1.0), true)
    } else if p == 1.0 {
        ((1.0 - 3.0 / n_eff).max(0.0), 1.0, false)
    } else {
        let se = if se.is_finite() { se } else { (p * (1.0 - p) / n_eff).sqrt() };
        ((p - Z95 * se).max(0.0), (p + Z95 * se).min(1.0), false)
    };
    TailEstimate {
        p_hat: p,
        ci_low: lo,
        ci_high: hi,
        eps_log_p: eps * if bound_only { hi.ln() } else { p.ln() },
        method: TailMethod::Direct,
        upper_bound_only: bound_only,
        samples: n,
        effective_samples: n_eff,
    }
}

/// `mu(dist > delta) / mu(dist > reference)` by self-normalized importance
/// sampling from an equal mixture of Gaussians `N(m_xi, s^2 (Lambda + I)^{-1})`
/// over translations on the grid, scaled so that `E ||v||^2 = delta^2`.
/// Both densities are known up to constants that cancel in the ratio.
/// Returns the ratio and its relative standard error.
fn importance_ratio(
    energy: &Energy,
    tubular: &Tubular,
    eps: f64,
    delta: f64,
    reference: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let fem = energy.fem();
    let g = fem.grid;
    let prec = fem.shifted_stiffness(1.0);
    let chol = BandCholesky::factor(&prec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.dofs;
    // Hutchinson estimate of tr((Lambda + I)^{-1} I)
    let probes = 64;
    let mut trace = 0.0;
    for _ in 0..probes {
        let z: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        trace += dot(&z, &chol.solve(&fem.mass.matvec(&z)));
    }
    trace /= probes as f64;
    let s2 = delta * delta / trace;
    let leff = g.effective_half_length();
    let centers: Vec<Vec<f64>> = {
        let k = (leff / g.a).floor() as i64;
        (-k..=k).map(|j| tubular.manifold_point(j as f64 * g.a).coeffs).collect()
    };
    let mut log_w = Vec::with_capacity(samples);
    let mut in_a = Vec::with_capacity(samples);
    let mut in_ref = Vec::with_capacity(samples);
    let mut field = fem.ramp_field.clone();
    for _ in 0..samples {
        let c = &centers[rng.random_range(0..centers.len())];
        let mut z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        chol.solve_upper_in_place(&mut z);
        field.coeffs = c.iter().zip(&z).map(|(m, v)| m + s2.sqrt() * v).collect();
        // log q up to a constant: log-mean-exp over the mixture
        let terms: Vec<f64> = centers
            .iter()
            .map(|m| {
                let r: Vec<f64> = field.coeffs.iter().zip(m).map(|(a, b)| a - b).collect();
                -0.5 * prec.quad_form(&r) / s2
            })
            .collect();
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_q = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
        let e = energy.evaluate(&field).total_raw;
        log_w.push(-e / eps - log_q);
        let d = tubular.dist_to_manifold(&field);
        in_a.push(d > delta);
        in_ref.push(d > reference);
    }
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::DegenerateWeights(0.0));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let sum_ref: f64 = w.iter().zip(&in_ref).filter(|(_, r)| **r).map(|(w, _)| w).sum();
    let sum_ref_sq: f64 = w.iter().zip(&in_ref).filter(|(_, r)| **r).map(|(w, _)| w * w).sum();
    let ess = if sum_ref > 0.0 { sum_ref * sum_ref / sum_ref_sq } else { 0.0 };
    if ess < 50.0 {
        return Err(Error::DegenerateWeights(ess));
    }
    let sum_a: f64 = w.iter().zip(&in_a).filter(|(_, a)| **a).map(|(w, _)| w).sum();
    let ratio = sum_a / sum_ref;
    if ratio == 0.0 {
        return Err(Error::DegenerateWeights(0.0));
    }
    // delta-method variance of a ratio estimator
    let var: f64 = w
        .iter()
        .zip(in_a.iter().zip(&in_ref))
        .map(|(w, (a, r))| {
            let f = (*a as u8 as f64) - ratio * (*r as u8 as f64);
            w * w * f * f
        })
        .sum::<f64>()
        / (sum_ref * sum_ref);
    Ok((ratio, var.sqrt() / ratio))
}
