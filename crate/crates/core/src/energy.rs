//! The free energy `F(h) = int 1/2 |grad h|^2 + F(h) - C_*`, its exact
//! gradient on the P1 space, and numerical probes of the energy landscape.
//!
//! Polynomial potentials are integrated exactly per simplex:
//! `int_T h^k = |T| D! k! / (D+k)! h_k(values at the vertices)` with `h_k` the
//! complete homogeneous symmetric polynomial.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, BandCholesky};
use crate::mesh::{build_grid, complete_homogeneous, factorial, Boundary, FemMatrices, Field, GridSpec};
use crate::scalar::{cutoff_profile, quartic_surface_tension, surface_tension, PotentialKind, PotentialSpec};
use crate::tubular::Tubular;

/// Default landscape radius for the lower probe.
pub const DELTA0: f64 = 0.3;
/// Default tube radius for the upper check.
pub const DELTA3: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    /// `1/2 int |grad h|^2`
    pub gradient_part: f64,
    /// `int F(h)`
    pub potential_part: f64,
    pub total_raw: f64,
    /// `total_raw - C_*`
    pub free_energy: f64,
}

/// Energy functional bound to a grid and a potential.
#[derive(Debug, Clone)]
pub struct Energy {
    fem: Arc<FemMatrices>,
    potential: PotentialSpec,
    tension: f64,
    /// extended node indices of each simplex, `D + 1` per simplex
    simplex_nodes: Vec<usize>,
    /// `a^D k! / (D+k)! c_k`
    gamma: Vec<f64>,
}

impl Energy {
    pub fn new(fem: Arc<FemMatrices>, potential: PotentialSpec) -> Self {
        let tension = if potential.kind == PotentialKind::Quartic {
            quartic_surface_tension()
        } else if potential.check_admissible().is_ok() {
            surface_tension(&potential)
        } else {
            0.0
        };
        let corners = fem.kuhn.corners();
        let mut simplex_nodes = Vec::with_capacity(fem.grid.cubes() * fem.kuhn.simplices.len() * (fem.grid.dim() + 1));
        for cube in fem.cube_corners.chunks(corners) {
            for verts in &fem.kuhn.simplices {
                simplex_nodes.extend(verts.iter().map(|&b| cube[b]));
            }
        }
        let dim = fem.grid.dim();
        let ad = fem.grid.a.powi(dim as i32);
        let gamma = potential
            .coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| ad * factorial(k) / factorial(dim + k) * c)
            .collect();
        Self {
            fem,
            potential,
            tension,
            simplex_nodes,
            gamma,
        }
    }

    pub fn fem(&self) -> &Arc<FemMatrices> {
        &self.fem
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    /// The constant `C_*` subtracted from the raw energy (0 for
    /// non-double-well potentials).
    pub fn tension(&self) -> f64 {
        self.tension
    }

    fn degree(&self) -> usize {
        self.gamma.len() - 1
    }

    fn potential_integral(&self, ext: &[f64]) -> f64 {
        let stride = self.fem.grid.dim() + 1;
        let deg = self.degree();
        let mut vals = vec![0.0; stride];
        let mut total = 0.0;
        for simplex in self.simplex_nodes.chunks(stride) {
            for (v, &node) in vals.iter_mut().zip(simplex) {
                *v = ext[node];
            }
            let h = complete_homogeneous(&vals, deg);
            total += h.iter().zip(&self.gamma).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }

    pub fn evaluate(&self, field: &Field) -> EnergyReport {
        let ext = field.extended();
        let gradient_part = 0.5 * self.fem.ext_stiffness.quad_form(&ext);
        let potential_part = self.potential_integral(&ext);
        let total_raw = gradient_part + potential_part;
        EnergyReport {
            gradient_part,
            potential_part,
            total_raw,
            free_energy: total_raw - self.tension,
        }
    }

    pub fn free_energy(&self, field: &Field) -> f64 {
        self.evaluate(field).free_energy
    }

    /// Derivatives of `total_raw` with respect to the nodal coefficients.
    pub fn gradient(&self, field: &Field) -> Vec<f64> {
        let g = &self.fem.grid;
        let ext = field.extended();
        let mut out = self.fem.ext_stiffness.matvec(&ext);
        let stride = g.dim() + 1;
        let deg = self.degree();
        if deg >= 1 {
            let mut vals = vec![0.0; stride + 1];
            for simplex in self.simplex_nodes.chunks(stride) {
                for (v, &node) in vals.iter_mut().zip(simplex) {
                    *v = ext[node];
                }
                for (i, &node) in simplex.iter().enumerate() {
                    vals[stride] = vals[i];
                    // d/dv_i h_k(v) = h_{k-1}(v, v_i)
                    let h = complete_homogeneous(&vals, deg - 1);
                    out[node] += h.iter().zip(&self.gamma[1..]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let first = g.y_block();
        out[first..first + g.dofs].to_vec()
    }
}

pub fn free_energy(fem: &Arc<FemMatrices>, field: &Field, potential: &PotentialSpec) -> EnergyReport {
    Energy::new(fem.clone(), potential.clone()).evaluate(field)
}

pub fn energy_gradient(fem: &Arc<FemMatrices>, field: &Field, potential: &PotentialSpec) -> Vec<f64> {
    Energy::new(fem.clone(), potential.clone()).gradient(field)
}

/// `sqrt(g^T (Lambda + I)^{-1} g)`: the dual H1 norm of a load vector.
pub fn h1_dual_norm(fem: &FemMatrices, load: &[f64]) -> Result<f64> {
    let chol = BandCholesky::factor(&fem.shifted_stiffness(1.0))?;
    Ok(dot(load, &chol.solve(load)).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpperCheck {
    /// `F(m_xi^eps + v)`
    pub lhs: f64,
    /// `c3 ||v||_{H1}^2`
    pub rhs: f64,
    /// discretization slack: carrier energy plus the dual-norm bound on the
    /// linear term of the expansion
    pub slack: f64,
    pub pass: bool,
}

/// Compares `F(m_xi^eps + v)` with `c3 ||v||_{H1}^2` for an admissible `v`.
pub fn landscape_upper_check(
    energy: &Energy,
    tubular: &Tubular,
    xi: f64,
    v: &Field,
    eps: f64,
    lambda1: f64,
    delta3: f64,
) -> Result<UpperCheck> {
    let fem = energy.fem();
    if v.boundary != Boundary::Zero {
        return Err(Error::Precondition("perturbation must have zero boundary".into()));
    }
    let l2 = fem.l2_sq(v).sqrt();
    if l2 > delta3 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("||v|| = {l2} exceeds delta3 = {delta3}")));
    }
    if v.sup_norm() > 1.0 {
        return Err(Error::Precondition(format!("||v||_inf = {} exceeds 1", v.sup_norm())));
    }
    let load = tubular.tangent_load(xi);
    let inner = dot(&v.coeffs, &load);
    if inner.abs() > 1e-8 * l2 * tubular.tangent_norm_sq(xi).sqrt() {
        return Err(Error::Precondition(format!("v is not orthogonal to the tangent: {inner:e}")));
    }
    let carrier = cutoff_profile(tubular.profile(), xi, eps, lambda1, &fem.grid)?;
    let lhs = energy.free_energy(&carrier.add(v));
    let h1 = fem.h1_sq(v);
    let rhs = energy.potential().c3 * h1;
    let linear = h1_dual_norm(fem, &energy.gradient(&carrier))? * h1.sqrt();
    let slack = energy.free_energy(&carrier).max(0.0) + linear;
    Ok(UpperCheck {
        lhs,
        rhs,
        slack,
        pass: lhs <= rhs + slack,
    })
}

/// Random smooth zero-boundary field: a few Fourier modes under an envelope
/// vanishing at the collar.
pub fn random_smooth_field<R: Rng>(grid: &GridSpec, rng: &mut R, modes: usize) -> Field {
    let leff = grid.effective_half_length();
    let terms: Vec<(f64, f64, f64, Vec<usize>)> = (0..modes)
        .map(|_| {
            let amp = rng.random_range(-1.0..1.0);
            let freq = rng.random_range(0.2..3.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let ky = (0..grid.d).map(|_| rng.random_range(0..3usize)).collect();
            (amp, freq, phase, ky)
        })
        .collect();
    Field::from_fn(*grid, Boundary::Zero, |x, y| {
        let env = 1.0 - (x / leff).powi(2);
        terms
            .iter()
            .map(|(amp, freq, phase, ky)| {
                let transverse: f64 = ky
                    .iter()
                    .zip(y)
                    .map(|(&k, &yy)| (std::f64::consts::PI * k as f64 * yy).cos())
                    .product();
                amp * (freq * x + phase).sin() * transverse
            })
            .sum::<f64>()
            * env
    })
}

/// A random perturbation satisfying the upper-check preconditions:
/// orthogonal to the tangent load, `||v|| <= delta3`, `||v||_inf <= 1`.
pub fn random_admissible_perturbation<R: Rng>(tubular: &Tubular, xi: f64, delta3: f64, rng: &mut R) -> Field {
    let grid = *tubular.grid();
    let mut v = random_smooth_field(&grid, rng, 4);
    let load = tubular.tangent_load(xi);
    let c = dot(&v.coeffs, &load) / dot(&load, &load);
    v.coeffs.iter_mut().zip(&load).for_each(|(a, b)| *a -= c * b);
    let l2 = tubular.fem().l2_sq(&v).sqrt();
    let target = delta3 * rng.random_range(0.05..1.0);
    let mut scale = target / l2;
    let sup = v.sup_norm() * scale;
    if sup > 1.0 {
        scale /= sup;
    }
    v.coeffs.iter_mut().for_each(|a| *a *= scale);
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerProbe {
    pub delta: f64,
    pub c0_estimate: f64,
    pub min_energy: f64,
    pub xi: f64,
    pub feasible_trials: usize,
    #[serde(skip)]
    pub minimizing_field: Field,
}

/// Minimizes the free energy on `{dist(h, M) = delta}` by Sobolev-preconditioned
/// gradient descent; after every step the fluctuation around the projection
/// is rescaled back onto the tube boundary. Trials 0 and 1 start along the
/// interface shape mode with either sign, the others from random smooth
/// fields; the minimum is kept.
pub fn landscape_lower_probe(
    energy: &Energy,
    tubular: &Tubular,
    delta: f64,
    delta0: f64,
    trials: usize,
    seed: u64,
) -> Result<LowerProbe> {
    if !(delta > 0.0 && delta <= delta0) {
        return Err(Error::Precondition(format!("delta = {delta} must lie in (0, {delta0}]")));
    }
    let fem = energy.fem();
    let precond = BandCholesky::factor(&fem.shifted_stiffness(1.0))?;
    let results: Vec<Option<(f64, f64, Field)>> = (0..trials.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let shape = match t {
                0 => Some(1.0),
                1 => Some(-1.0),
                _ => None,
            };
            descend(energy, tubular, &precond, delta, shape, &mut rng)
        })
        .collect();
    let feasible: Vec<(f64, f64, Field)> = results.into_iter().flatten().collect();
    let count = feasible.len();
    let (xi, min_energy, field) = feasible
        .into_iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .ok_or(Error::Infeasible(delta))?;
    Ok(LowerProbe {
        delta,
        c0_estimate: min_energy / (delta * delta),
        min_energy,
        xi,
        feasible_trials: count,
        minimizing_field: field,
    })
}

/// Rescales `h` around the nodal manifold point so that `dist = delta`.
fn onto_tube(tubular: &Tubular, h: &Field, xi: f64, delta: f64) -> Option<(f64, Field)> {
    let base = tubular.manifold_point(xi);
    let dir = h.sub(&base);
    let at = |s: f64| -> Option<(f64, f64, Field)> {
        let f = base.add(&Field {
            coeffs: dir.coeffs.iter().map(|c| s * c).collect(),
            ..dir.clone()
        });
        let c = tubular.project_near(&f, xi).ok()?;
        Some((c.dist - delta, c.xi, f))
    };
    let (f1, xi1, h1) = at(1.0)?;
    if f1.abs() <= 1e-10 * delta {
        return Some((xi1, h1));
    }
    // bracket in s, then regula falsi (Illinois)
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut flo, mut fhi) = (at(0.0)?.0, f1);
    if flo > 0.0 {
        return None;
    }
    while fhi < 0.0 {
        lo = hi;
        flo = fhi;
        hi *= 2.0;
        if hi > 1e3 {
            return None;
        }
        fhi = at(hi)?.0;
    }
    let mut side = 0;
    for _ in 0..100 {
        let s = (lo * fhi - hi * flo) / (fhi - flo);
        let (fs, xis, hs) = at(s)?;
        if fs.abs() <= 1e-10 * delta || (hi - lo) < 1e-14 {
            return Some((xis, hs));
        }
        if fs < 0.0 {
            lo = s;
            flo = fs;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            fhi = fs;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    None
}

fn descend(
    energy: &Energy,
    tubular: &Tubular,
    precond: &BandCholesky,
    delta: f64,
    shape: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<(f64, f64, Field)> {
    let grid = *tubular.grid();
    let leff = grid.effective_half_length();
    let xi0 = rng.random_range(-0.25 * leff..0.25 * leff);
    // shaped starts follow +-m m', close to the lowest non-translational mode
    // of the linearization; the cubic term of the expansion is odd in the
    // amplitude, so the two signs reach different local minima, and random
    // starts can settle in either
    let bump = match shape {
        Some(sign) => {
            let p = tubular.profile();
            Field::from_fn(grid, Boundary::Zero, |x, _| sign * p.value(x - xi0) * p.derivative(x - xi0))
        }
        None => random_smooth_field(&grid, rng, 3),
    };
    let start = tubular.manifold_point(xi0).add(&bump);
    let (mut xi, mut h) = onto_tube(tubular, &start, xi0, delta)?;
    let mut e = energy.free_energy(&h);
    let mut tau = 0.5;
    let mut stalls = 0;
    for _ in 0..1000 {
        // gradient of F composed with the radial retraction; dist has
        // gradient proportional to M v by the envelope argument
        let mut g = energy.gradient(&h);
        let v = h.sub(&tubular.manifold_point(xi)).coeffs;
        let mv = tubular.fem().mass.matvec(&v);
        let c = dot(&g, &v) / dot(&mv, &v);
        g.iter_mut().zip(&mv).for_each(|(x, y)| *x -= c * y);
        let p = precond.solve(&g);
        let trial = Field {
            coeffs: h.coeffs.iter().zip(&p).map(|(a, b)| a - tau * b).collect(),
            ..h.clone()
        };
        match onto_tube(tubular, &trial, xi, delta) {
            Some((xn, hn)) => {
                let en = energy.free_energy(&hn);
                if en < e {
                    let gain = e - en;
                    h = hn;
                    xi = xn;
                    e = en;
                    tau = (tau * 1.5).min(10.0);
                    if gain <= 1e-11 * e.abs().max(1e-8) {
                        stalls += 1;
                        if stalls >= 3 {
                            break;
                        }
                    } else {
                        stalls = 0;
                    }
                    continue;
                }
                tau *= 0.5;
            }
            None => tau *= 0.5,
        }
        if tau < 1e-8 {
            break;
        }
    }
    Some((xi, e, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceCheck {
    /// `dist(h, M_{d+1})`
    pub lhs: f64,
    /// `min_t dist(h_t, M_d) + ||d_t h||`
    pub rhs: f64,
    /// index `k` of the minimizing slice `t = k a`
    pub best_slice: usize,
    pub grad_t: f64,
    pub pass: bool,
}

/// Restriction of `h` to the lattice slice `y_d = k a`.
pub fn slice_field(h: &Field, k: usize) -> Result<Field> {
    let g = &h.grid;
    if g.d == 0 {
        return Err(Error::Precondition("slices need d >= 1".into()));
    }
    let sg = build_grid(g.d - 1, g.half_length, g.n)?;
    let coeffs = (0..sg.dofs)
        .map(|i| {
            let (kx, mut iy) = sg.node_of(i);
            iy.push(k);
            h.coeffs[g.node_index(kx, &iy)]
        })
        .collect();
    Field::new(sg, coeffs, h.boundary)
}

/// `||d h / d y_d||_{L2}` for the last transverse coordinate.
pub fn last_axis_gradient_norm(fem: &FemMatrices, h: &Field) -> f64 {
    let g = &fem.grid;
    let k = fem.kuhn.directional_stiffness(g.dim() - 1);
    let corners = fem.kuhn.corners();
    let ext = h.extended();
    let scale = g.a.powi(g.dim() as i32 - 2);
    let total: f64 = fem
        .cube_corners
        .chunks(corners)
        .map(|cube| {
            let mut s = 0.0;
            for i in 0..corners {
                for j in 0..corners {
                    s += ext[cube[i]] * k[i * corners + j] * ext[cube[j]];
                }
            }
            s
        })
        .sum();
    (scale * total).max(0.0).sqrt()
}

/// Checks `dist(h, M) <= min_t dist(h_t, M) + ||d_t h||` over lattice slices.
pub fn slice_distance_check(tubular: &Tubular, h: &Field) -> Result<SliceCheck> {
    let g = tubular.grid();
    if g.d == 0 {
        return Err(Error::Precondition("slice check needs d >= 1".into()));
    }
    let sg = build_grid(g.d - 1, g.half_length, g.n)?;
    let slice_tubular = Tubular::new(Arc::new(crate::mesh::assemble(&sg)), tubular.profile().clone());
    let lhs = tubular.dist_to_manifold(h);
    let (best_slice, best) = (0..=g.n)
        .map(|k| (k, slice_tubular.dist_to_manifold(&slice_field(h, k).expect("slice of a valid field"))))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let grad_t = last_axis_gradient_norm(tubular.fem(), h);
    let rhs = best + grad_t;
    Ok(SliceCheck {
        lhs,
        rhs,
        best_slice,
        grad_t,
        pass: lhs <= rhs + 1e-8,
    })
}
