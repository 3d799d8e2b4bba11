//! Exact Gaussian reference measures on the coefficient space: the scaled and
//! unscaled free fields `nu1`, `nu2` (ramp mean) and the massive field `rho`
//! (zero boundary, zero mean), with their normalization constants and the
//! concentration checks that go with them.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, BandCholesky, CsrMatrix};
use crate::mesh::{assemble, mass_eigen_floor, Boundary, FemMatrices, Field, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "measure", rename_all = "lowercase")]
pub enum GaussianKind {
    Nu1 { eps: f64 },
    Nu2,
    Rho { eps: f64, kappa: f64 },
}

impl GaussianKind {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            GaussianKind::Nu1 { eps } => eps > 0.0 && eps.is_finite(),
            GaussianKind::Nu2 => true,
            GaussianKind::Rho { eps, kappa } => eps > 0.0 && kappa > 0.0 && eps.is_finite() && kappa.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid Gaussian parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub kind: GaussianKind,
    pub precision: CsrMatrix,
    pub mean: Field,
    pub factor: BandCholesky,
    /// log of the normalization integral over the coefficients
    pub log_norm: f64,
}

impl GaussianSpec {
    pub fn new(fem: &FemMatrices, kind: GaussianKind) -> Result<Self> {
        kind.check()?;
        let grid = fem.grid;
        let leff = grid.effective_half_length();
        let (precision, mean, offset) = match kind {
            GaussianKind::Nu1 { eps } => (fem.stiffness.scaled(1.0 / eps), fem.ramp_field.clone(), -1.0 / (eps * leff)),
            GaussianKind::Nu2 => (fem.stiffness.clone(), fem.ramp_field.clone(), -1.0 / leff),
            GaussianKind::Rho { eps, kappa } => (
                fem.shifted_stiffness(1.0).scaled(kappa / eps),
                Field::zeros(grid, Boundary::Zero),
                0.0,
            ),
        };
        let factor = BandCholesky::factor(&precision)?;
        let n = grid.dofs as f64;
        let log_norm = 0.5 * n * (2.0 * PI).ln() - 0.5 * factor.log_det() + offset;
        Ok(Self {
            kind,
            precision,
            mean,
            factor,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows
    }

    /// `mean + L^{-T} z` for a standard normal `z`.
    pub fn sample_with(&self, rng: &mut ChaCha8Rng) -> Field {
        let mut x: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.factor.solve_upper_in_place(&mut x);
        x.iter_mut().zip(&self.mean.coeffs).for_each(|(a, m)| *a += m);
        Field {
            coeffs: x,
            ..self.mean.clone()
        }
    }

    /// Counts samples satisfying `event` over independent streams; chunking
    /// is fixed so the count is reproducible regardless of thread count.
    pub fn count_events<F>(&self, n_samples: usize, seed: u64, event: F) -> usize
    where
        F: Fn(&Field) -> bool + Sync,
    {
        const CHUNK: usize = 512;
        let chunks = n_samples.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64 + 1);
                let len = CHUNK.min(n_samples - c * CHUNK);
                (0..len).filter(|_| event(&self.sample_with(&mut rng))).count()
            })
            .sum()
    }

    /// Largest relative deviation of `L (L^T x)` from `P x` over `trials`
    /// random vectors.
    pub fn factor_residual(&self, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..trials)
            .map(|_| {
                let x: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let lhs = self.factor.mul_lower(&self.factor.mul_upper(&x));
                let rhs = self.precision.matvec(&x);
                let diff: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                diff / dot(&rhs, &rhs).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

pub fn exact_sample(spec: &GaussianSpec, seed: u64) -> Field {
    spec.sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// `log Z2 - log Z1`, checked against `-(N/2) log eps + (1/L)(1/eps - 1)`.
pub fn log_partition_ratio_21(grid: &GridSpec, eps: f64) -> Result<f64> {
    let fem = assemble(grid);
    let z1 = GaussianSpec::new(&fem, GaussianKind::Nu1 { eps })?;
    let z2 = GaussianSpec::new(&fem, GaussianKind::Nu2)?;
    let value = z2.log_norm - z1.log_norm;
    let closed = ratio_21_closed_form(grid, eps);
    if (value - closed).abs() > 1e-8 * closed.abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "log Z2/Z1 = {value} disagrees with closed form {closed}"
        )));
    }
    Ok(value)
}

pub fn ratio_21_closed_form(grid: &GridSpec, eps: f64) -> f64 {
    let l = grid.effective_half_length();
    -0.5 * grid.dofs as f64 * eps.ln() + (1.0 / eps - 1.0) / l
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratio31 {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    /// `C` with `<h, I h> <= C L^2 <h, Lambda h>`
    pub poincare: f64,
    pub pass: bool,
}

/// `log Z3 - log Z1` against `1/(eps L) - (N/2) log kappa - (N/2) log(1 + C L^2)`
/// (lower) and `1/(eps L) - (N/2) log kappa` (upper).
pub fn log_partition_ratio_31(grid: &GridSpec, eps: f64, kappa: f64) -> Result<Ratio31> {
    let fem = assemble(grid);
    let z1 = GaussianSpec::new(&fem, GaussianKind::Nu1 { eps })?;
    let z3 = GaussianSpec::new(&fem, GaussianKind::Rho { eps, kappa })?;
    let value = z3.log_norm - z1.log_norm;
    let l = grid.effective_half_length();
    let n = grid.dofs as f64;
    // certified: the power iteration converges from below, so inflate slightly
    let cl2 = fem.poincare_constant()? * (1.0 + 1e-9);
    let upper = 1.0 / (eps * l) - 0.5 * n * kappa.ln();
    let lower = upper - 0.5 * n * (1.0 + cl2).ln();
    let tol = 1e-9 * value.abs().max(1.0);
    Ok(Ratio31 {
        value,
        lower,
        upper,
        poincare: cl2 / (l * l),
        pass: lower - tol <= value && value <= upper + tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationCheck {
    pub freq: f64,
    pub bound: f64,
    pub pass: bool,
    /// false when the bound is at least 1
    pub informative: bool,
    pub samples: usize,
}

impl ConcentrationCheck {
    fn new(hits: usize, samples: usize, bound: f64) -> Self {
        let freq = hits as f64 / samples.max(1) as f64;
        let p = bound.min(1.0);
        let se = (p * (1.0 - p) / samples.max(1) as f64).sqrt();
        Self {
            freq,
            bound,
            pass: freq <= bound + 3.0 * se,
            informative: bound < 1.0,
            samples,
        }
    }
}

/// `P(|h|_inf >= delta)` under `rho` against `N exp(-delta^2 kappa c / (2 eps))`
/// where `c` is the certified smallest eigenvalue of the mass matrix
/// (`c >= C a^{d+1}` with `C` the unit-cube mass floor), so that the
/// variance of every coordinate is at most `eps / (kappa c)`.
pub fn concentration_sup_check(
    grid: &GridSpec,
    eps: f64,
    kappa: f64,
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ConcentrationCheck> {
    let fem = assemble(grid);
    let spec = GaussianSpec::new(&fem, GaussianKind::Rho { eps, kappa })?;
    let floor = mass_eigen_floor(grid)?;
    let bound = grid.dofs as f64 * (-delta * delta * kappa * floor / (2.0 * eps)).exp();
    let hits = spec.count_events(n_samples, seed, |h| h.sup_norm() >= delta);
    let check = ConcentrationCheck::new(hits, n_samples, bound);
    if !check.informative {
        log::warn!("sup concentration bound {bound:.3e} >= 1 is uninformative");
    }
    Ok(check)
}

/// `P(|h|_{H^1} >= sqrt(eps N / kappa) + r)` under `rho` against `exp(-kappa r^2 / (2 eps))`.
pub fn concentration_h1_check(
    grid: &GridSpec,
    eps: f64,
    kappa: f64,
    r: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ConcentrationCheck> {
    let fem = assemble(grid);
    let spec = GaussianSpec::new(&fem, GaussianKind::Rho { eps, kappa })?;
    let h1 = fem.shifted_stiffness(1.0);
    let threshold = (eps * grid.dofs as f64 / kappa).sqrt() + r;
    let bound = (-kappa * r * r / (2.0 * eps)).exp();
    let hits = spec.count_events(n_samples, seed, |h| h1.quad_form(&h.coeffs).sqrt() >= threshold);
    Ok(ConcentrationCheck::new(hits, n_samples, bound))
}

/// `P(|x| >= sqrt(tr Sigma) + r)` for `x ~ N(0, diag(sigma_diag))` against
/// `exp(-r^2 / (2 sigma^2))`, `sigma^2` the largest variance.
pub fn hilbert_concentration_check(sigma_diag: &[f64], r: f64, n_samples: usize, seed: u64) -> Result<ConcentrationCheck> {
    if sigma_diag.is_empty() || sigma_diag.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::Precondition("diagonal covariance must be nonempty and nonnegative".into()));
    }
    let trace: f64 = sigma_diag.iter().sum();
    let top = sigma_diag.iter().cloned().fold(0.0, f64::max);
    let threshold = trace.sqrt() + r;
    let bound = if top > 0.0 { (-r * r / (2.0 * top)).exp() } else { 0.0 };
    let std: Vec<f64> = sigma_diag.iter().map(|s| s.sqrt()).collect();
    const CHUNK: usize = 4096;
    let hits: usize = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            (0..CHUNK.min(n_samples - c * CHUNK))
                .filter(|_| {
                    let sq: f64 = std
                        .iter()
                        .map(|s| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (s * z).powi(2)
                        })
                        .sum();
                    sq.sqrt() >= threshold
                })
                .count()
        })
        .sum();
    Ok(ConcentrationCheck::new(hits, n_samples, bound))
}
