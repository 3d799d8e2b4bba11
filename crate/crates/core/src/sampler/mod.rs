//! Markov chains for the lattice Gibbs measure
//! `exp(-(1/eps) int 1/2 |grad h|^2 + F(h)) dh` on nodal coefficients.
//!
//! The adjusted chain is a preconditioned Crank-Nicolson Langevin proposal
//! built on the Gaussian reference `N(l, eps (Lambda + s I)^{-1})`, corrected
//! by an explicit Metropolis-Hastings ratio, so it is exact for any step.
//! The unadjusted chain is plain Euler-Maruyama in the lumped-mass metric.

pub mod diagnostics;
mod logz;
mod tail;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::Energy;
use crate::error::{Error, Result};
use crate::linalg::{dot, BandCholesky, CsrMatrix};
use crate::mesh::{Boundary, Field};
use crate::tubular::Tubular;

pub use logz::{estimate_log_z, LogZEstimate, Rung};
pub use tail::{estimate_tail, TailEstimate, TailMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precondition {
    None,
    #[default]
    StiffnessShifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub eps: f64,
    /// proposal time step: `tau` for plain MALA, `delta` in
    /// `rho = (2 - delta) / (2 + delta)` for the preconditioned proposal
    pub step: f64,
    #[serde(default)]
    pub precondition: Precondition,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_samples: usize,
    /// tune the step during burn-in towards 60% acceptance
    #[serde(default = "yes")]
    pub adapt: bool,
}

fn yes() -> bool {
    true
}

impl ChainConfig {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            step: 0.5,
            precondition: Precondition::StiffnessShifted,
            burn_in: 1000,
            thin: 1,
            seed: 0,
            n_samples: 1000,
            adapt: true,
        }
    }

    fn check(&self, allow_zero_eps: bool) -> Result<()> {
        let eps_ok = if allow_zero_eps { self.eps >= 0.0 } else { self.eps > 0.0 };
        if !(eps_ok && self.eps.is_finite() && self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Precondition(format!(
                "chain needs eps > 0 and step > 0 (eps = {}, step = {})",
                self.eps, self.step
            )));
        }
        Ok(())
    }
}

/// One retained state of a chain.
#[derive(Debug, Clone)]
pub struct ChainSample {
    pub iter: usize,
    pub field: Field,
    /// `int 1/2 |grad h|^2 + F(h)`
    pub energy: f64,
    pub accepted: bool,
    /// acceptance rate since sampling started
    pub acceptance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BurnInReport {
    pub iterations: usize,
    pub final_step: f64,
    pub acceptance: f64,
    /// integrated autocorrelation time of the monitored observable
    pub iat: f64,
}

/// Unnormalized negative log density `total_raw / eps` and its gradient.
#[derive(Debug, Clone)]
struct State {
    field: Field,
    energy: f64,
    grad: Vec<f64>,
}

pub struct MalaChain {
    config: ChainConfig,
    energy: Energy,
    chol: Option<BandCholesky>,
    shifted: Option<CsrMatrix>,
    mean: Vec<f64>,
    state: State,
    rng: ChaCha8Rng,
    step: f64,
    iter: usize,
    proposals: usize,
    accepts: usize,
    emitted: usize,
    burn_in: Option<BurnInReport>,
}

impl MalaChain {
    /// Chain started from `start` (must carry the ramp boundary values).
    /// The Gaussian reference uses `s = F''(1)`, or `s = 0` for `F = 0`, in
    /// which case the proposal is reversible for the target on its own.
    pub fn new(config: ChainConfig, energy: Energy, start: Field) -> Result<Self> {
        config.check(false)?;
        if start.boundary != Boundary::Ramp {
            return Err(Error::Precondition("chains live on fields with +-1 boundary values".into()));
        }
        let fem = energy.fem().clone();
        let shift = if energy.potential().is_zero() { 0.0 } else { energy.potential().well_curvature().max(0.0) };
        let (chol, shifted) = match config.precondition {
            Precondition::None => (None, None),
            Precondition::StiffnessShifted => {
                let m = fem.shifted_stiffness(shift);
                (Some(BandCholesky::factor(&m)?), Some(m))
            }
        };
        let mut step = config.step;
        if config.precondition == Precondition::StiffnessShifted {
            step = step.min(2.0);
        }
        let state = Self::state_of(&energy, start)?;
        Ok(Self {
            mean: fem.ramp_field.coeffs.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            energy,
            chol,
            shifted,
            state,
            step,
            iter: 0,
            proposals: 0,
            accepts: 0,
            emitted: 0,
            burn_in: None,
        })
    }

    fn state_of(energy: &Energy, field: Field) -> Result<State> {
        let e = energy.evaluate(&field).total_raw;
        let grad = energy.gradient(&field);
        if !e.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("energy gradient"));
        }
        Ok(State { field, energy: e, grad })
    }

    pub fn current(&self) -> &Field {
        &self.state.field
    }

    pub fn current_energy(&self) -> f64 {
        self.state.energy
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn acceptance(&self) -> f64 {
        self.accepts as f64 / self.proposals.max(1) as f64
    }

    pub fn burn_in_report(&self) -> Option<BurnInReport> {
        self.burn_in
    }

    /// Proposal mean for the current state.
    fn drift(&self, s: &State) -> Vec<f64> {
        let eps = self.config.eps;
        match &self.chol {
            Some(chol) => {
                // mu = l + rho (x - l) - (1 - rho) C grad Phi,
                // C grad Phi = (Lambda_s)^{-1} grad E - (x - l)
                let rho = (2.0 - self.step) / (2.0 + self.step);
                let cg = chol.solve(&s.grad);
                s.field
                    .coeffs
                    .iter()
                    .zip(&self.mean)
                    .zip(&cg)
                    .map(|((x, l), c)| {
                        let dx = x - l;
                        l + rho * dx - (1.0 - rho) * (c - dx)
                    })
                    .collect()
            }
            None => s
                .field
                .coeffs
                .iter()
                .zip(&s.grad)
                .map(|(x, g)| x - 0.5 * self.step * g / eps)
                .collect(),
        }
    }

    /// `log q(from -> to)` up to a constant shared by both directions.
    fn log_q(&self, mu: &[f64], to: &[f64]) -> f64 {
        let r: Vec<f64> = to.iter().zip(mu).map(|(a, b)| a - b).collect();
        match &self.shifted {
            Some(m) => {
                let rho = (2.0 - self.step) / (2.0 + self.step);
                -0.5 * m.quad_form(&r) / (self.config.eps * (1.0 - rho * rho))
            }
            None => -0.5 * dot(&r, &r) / self.step,
        }
    }

    fn noise(&mut self) -> Vec<f64> {
        let n = self.state.field.coeffs.len();
        let mut z: Vec<f64> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
        match &self.chol {
            Some(chol) => {
                let rho = (2.0 - self.step) / (2.0 + self.step);
                chol.solve_upper_in_place(&mut z);
                let s = (self.config.eps * (1.0 - rho * rho)).sqrt();
                z.iter_mut().for_each(|v| *v *= s);
            }
            None => {
                let s = self.step.sqrt();
                z.iter_mut().for_each(|v| *v *= s);
            }
        }
        z
    }

    /// One Metropolis-Hastings transition; returns whether it accepted.
    pub fn transition(&mut self) -> Result<bool> {
        let eps = self.config.eps;
        let mu_x = self.drift(&self.state);
        let noise = self.noise();
        let y: Vec<f64> = mu_x.iter().zip(&noise).map(|(m, z)| m + z).collect();
        self.iter += 1;
        self.proposals += 1;
        let proposal = Field {
            coeffs: y,
            ..self.state.field.clone()
        };
        let cand = match Self::state_of(&self.energy, proposal) {
            Ok(c) => c,
            // a non-finite proposal has zero target density
            Err(_) => return Ok(false),
        };
        let mu_y = self.drift(&cand);
        let log_alpha = -(cand.energy - self.state.energy) / eps + self.log_q(&mu_y, &self.state.field.coeffs)
            - self.log_q(&mu_x, &cand.field.coeffs);
        if log_alpha.is_nan() {
            return Err(Error::NonFinite("acceptance ratio"));
        }
        let u: f64 = self.rng.random();
        if u.ln() < log_alpha {
            self.state = cand;
            self.accepts += 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Log acceptance ratio of a fixed proposal, for reversibility checks.
    pub fn log_acceptance_ratio(&self, to: &Field) -> Result<f64> {
        let cand = Self::state_of(&self.energy, to.clone())?;
        let mu_x = self.drift(&self.state);
        let mu_y = self.drift(&cand);
        Ok(-(cand.energy - self.state.energy) / self.config.eps + self.log_q(&mu_y, &self.state.field.coeffs)
            - self.log_q(&mu_x, &cand.field.coeffs))
    }

    /// Runs the configured burn-in with step adaptation, then extends it
    /// until it covers ten integrated autocorrelation times of `observable`
    /// (capped at twenty times the configured length).
    pub fn burn_in<O: Fn(&Field, f64) -> f64>(&mut self, observable: O) -> Result<BurnInReport> {
        const WINDOW: usize = 50;
        let target = self.config.burn_in;
        let cap_step = if self.chol.is_some() { 2.0 } else { f64::INFINITY };
        let mut trace = Vec::with_capacity(target);
        let mut window_acc = 0;
        let mut low_windows = 0;
        for i in 0..target {
            if self.transition()? {
                window_acc += 1;
            }
            trace.push(observable(&self.state.field, self.state.energy));
            if self.config.adapt && (i + 1) % WINDOW == 0 {
                let rate = window_acc as f64 / WINDOW as f64;
                if rate < 0.05 {
                    low_windows += 1;
                    if low_windows >= 2 {
                        self.step *= 0.5;
                        low_windows = 0;
                    }
                } else {
                    low_windows = 0;
                }
                self.step = (self.step * (rate - 0.6).exp()).min(cap_step);
                window_acc = 0;
            }
        }
        let mut done = target;
        let cap = 20 * target.max(100);
        let mut iat = diagnostics::integrated_autocorr_time(&trace[trace.len() / 2..]);
        while (done as f64) < 10.0 * iat && done < cap {
            let extra = ((10.0 * iat) as usize).saturating_sub(done).clamp(100, cap - done);
            for _ in 0..extra {
                self.transition()?;
                trace.push(observable(&self.state.field, self.state.energy));
            }
            done += extra;
            iat = diagnostics::integrated_autocorr_time(&trace[trace.len() / 2..]);
        }
        if (done as f64) < 10.0 * iat {
            log::warn!("burn-in capped at {done} iterations, below 10 x IAT = {:.0}", 10.0 * iat);
        }
        let report = BurnInReport {
            iterations: done,
            final_step: self.step,
            acceptance: self.acceptance(),
            iat,
        };
        self.proposals = 0;
        self.accepts = 0;
        self.burn_in = Some(report);
        Ok(report)
    }
}

impl Iterator for MalaChain {
    type Item = Result<ChainSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.emitted >= self.config.n_samples {
            let rate = self.acceptance();
            // high acceptance at the step cap only means the reference is already close
            let capped = self.config.precondition == Precondition::StiffnessShifted && self.step >= 2.0 && rate > 0.8;
            if self.emitted > 0 && !(0.2..=0.8).contains(&rate) && !capped && self.proposals >= 100 {
                // warn once: the counter is reset afterwards
                log::warn!("acceptance rate {rate:.3} outside [0.2, 0.8] at step {}", self.step);
                self.proposals = 0;
            }
            return None;
        }
        let mut accepted = false;
        for _ in 0..self.config.thin.max(1) {
            match self.transition() {
                Ok(a) => accepted = a,
                Err(e) => return Some(Err(e)),
            }
        }
        self.emitted += 1;
        Some(Ok(ChainSample {
            iter: self.iter,
            field: self.state.field.clone(),
            energy: self.state.energy,
            accepted,
            acceptance: self.acceptance(),
        }))
    }
}

/// Default starting point: the interpolated profile for admissible
/// potentials, the ramp otherwise.
pub fn default_start(energy: &Energy, tubular: Option<&Tubular>) -> Field {
    match tubular {
        Some(t) if !energy.potential().is_zero() => t.manifold_point(0.0),
        _ => energy.fem().ramp_field.clone(),
    }
}

/// Burnt-in MALA chain on `energy` at temperature `config.eps`. With a
/// tubular structure the burn-in monitors `dist(h, M)`, otherwise the energy.
pub fn mala_chain(config: ChainConfig, energy: Energy, tubular: Option<&Tubular>) -> Result<MalaChain> {
    let start = default_start(&energy, tubular);
    let mut chain = MalaChain::new(config, energy, start)?;
    match tubular {
        Some(t) => chain.burn_in(|h, _| t.dist_to_manifold(h))?,
        None => chain.burn_in(|_, e| e)?,
    };
    Ok(chain)
}

/// Euler-Maruyama in the lumped-mass metric:
/// `h <- h - step M_L^{-1} grad E + sqrt(2 eps) M_L^{-1/2} dW`, `dW ~ N(0, step)`.
/// Biased (no accept step); `eps = 0` gives the discrete gradient flow.
pub struct UlaChain {
    config: ChainConfig,
    energy: Energy,
    lumped: Vec<f64>,
    field: Field,
    rng: ChaCha8Rng,
    iter: usize,
    emitted: usize,
    burnt: bool,
}

impl UlaChain {
    pub fn new(config: ChainConfig, energy: Energy, start: Field) -> Result<Self> {
        config.check(true)?;
        let lumped = energy.fem().lumped_mass();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            energy,
            lumped,
            field: start,
            iter: 0,
            emitted: 0,
            burnt: false,
        })
    }

    pub fn current(&self) -> &Field {
        &self.field
    }

    /// One step driven by the Brownian increment `dw` (variance `step` per
    /// coordinate).
    pub fn step_with(&mut self, dw: &[f64]) -> Result<()> {
        let g = self.energy.gradient(&self.field);
        let (eps, tau) = (self.config.eps, self.config.step);
        for (i, h) in self.field.coeffs.iter_mut().enumerate() {
            *h += -tau * g[i] / self.lumped[i] + (2.0 * eps / self.lumped[i]).sqrt() * dw[i];
        }
        self.iter += 1;
        let sup = self.field.sup_norm();
        if !sup.is_finite() || sup > 1e3 {
            return Err(Error::BlowUp(sup));
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        let s = self.config.step.sqrt();
        let dw: Vec<f64> = (0..self.lumped.len()).map(|_| s * self.rng.sample::<f64, _>(StandardNormal)).collect();
        self.step_with(&dw)
    }
}

impl Iterator for UlaChain {
    type Item = Result<ChainSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if !self.burnt {
            self.burnt = true;
            for _ in 0..self.config.burn_in {
                if let Err(e) = self.step() {
                    return Some(Err(e));
                }
            }
        }
        if self.emitted >= self.config.n_samples {
            return None;
        }
        for _ in 0..self.config.thin.max(1) {
            if let Err(e) = self.step() {
                self.emitted = self.config.n_samples;
                return Some(Err(e));
            }
        }
        self.emitted += 1;
        Some(Ok(ChainSample {
            iter: self.iter,
            field: self.field.clone(),
            energy: self.energy.evaluate(&self.field).total_raw,
            accepted: true,
            acceptance: 1.0,
        }))
    }
}

pub fn unadjusted_langevin(config: ChainConfig, energy: Energy, tubular: Option<&Tubular>) -> Result<UlaChain> {
    let start = default_start(&energy, tubular);
    UlaChain::new(config, energy, start)
}

#[cfg(test)]
mod tests;
