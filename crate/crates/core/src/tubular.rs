//! Fermi coordinates around the manifold of translated profiles
//! `M = { m(x - xi) }`.
//!
//! Fields are extended by their boundary values `+-1` beyond the collar, so
//! distances are taken on the infinite cylinder `R x [0,1]^d`; the exterior
//! contributions are closed-form tail integrals of the profile. Inner
//! products against `m_xi` reduce to one dimension: the transverse average
//! of a P1 field over a column of cubes is a polynomial in the local
//! x-coordinate, evaluated at Gauss points.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{Boundary, FemMatrices, Field, GridSpec};
use crate::quad::GaussLegendre;
use crate::scalar::ProfileSpec;

/// Gauss points per cube column.
const QUAD_POINTS: usize = 5;
const NEWTON_MAX: usize = 50;
const RESIDUAL_TOL: f64 = 1e-12;
/// Scan minima refined by Newton.
const REFINE_TOP: usize = 3;

#[derive(Debug, Clone, Serialize)]
pub struct TubularCoords {
    pub xi: f64,
    /// nodal fluctuation `h(z) - m(x_z - xi)`
    #[serde(skip)]
    pub v: Field,
    /// `||h - m_xi||` on the extended cylinder
    pub dist: f64,
    /// `<h - m_xi, d_x m_xi>`
    pub orth_residual: f64,
    /// `||d_x m_xi||^2 - <h - m_xi, d_x^2 m_xi>`
    pub denominator: f64,
}

#[derive(Debug, Clone)]
pub struct FermiGradient {
    pub xi: f64,
    /// `d xi / d h_z` for every degree of freedom
    pub analytic: Vec<f64>,
    pub norm_bound: f64,
    pub denominator: f64,
    pub tangent_norm_sq: f64,
}

/// Transverse averages of a ramp-boundary field at the Gauss points.
#[derive(Debug, Clone)]
pub struct XProfile {
    hbar: Vec<f64>,
    norm_sq: f64,
}

/// Projection machinery bound to a grid and a profile.
#[derive(Debug, Clone)]
pub struct Tubular {
    fem: Arc<FemMatrices>,
    profile: ProfileSpec,
    /// Gauss abscissae of all columns, column-major
    xs: Vec<f64>,
    /// `a * omega_q`
    qw: Vec<f64>,
    /// `a^d w_b(t_q)`, `[corner][q]`
    tw: Vec<Vec<f64>>,
}

impl Tubular {
    pub fn new(fem: Arc<FemMatrices>, profile: ProfileSpec) -> Self {
        let g = fem.grid;
        let (t, w) = GaussLegendre::unit(QUAD_POINTS);
        let leff = g.effective_half_length();
        let cols = 2 * g.floor_la;
        let mut xs = Vec::with_capacity(cols * QUAD_POINTS);
        let mut qw = Vec::with_capacity(cols * QUAD_POINTS);
        for c in 0..cols {
            for q in 0..QUAD_POINTS {
                xs.push(-leff + (c as f64 + t[q]) * g.a);
                qw.push(g.a * w[q]);
            }
        }
        let ad = g.a.powi(g.d as i32);
        let tw = fem
            .kuhn
            .transverse_weights(&t)
            .values
            .into_iter()
            .map(|row| row.into_iter().map(|v| v * ad).collect())
            .collect();
        Self {
            fem,
            profile,
            xs,
            qw,
            tw,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.fem.grid
    }

    pub fn fem(&self) -> &Arc<FemMatrices> {
        &self.fem
    }

    pub fn profile(&self) -> &ProfileSpec {
        &self.profile
    }

    fn cubes_per_column(&self) -> usize {
        self.fem.grid.n.pow(self.fem.grid.d as u32)
    }

    pub fn x_profile(&self, h: &Field) -> Result<XProfile> {
        if h.boundary != Boundary::Ramp {
            return Err(Error::Precondition("tubular coordinates need a ramp-boundary field".into()));
        }
        let ext = h.extended();
        let corners = self.fem.kuhn.corners();
        let per_col = self.cubes_per_column();
        let mut hbar = vec![0.0; self.xs.len()];
        for (c, column) in self.fem.cube_corners.chunks(per_col * corners).enumerate() {
            let out = &mut hbar[c * QUAD_POINTS..(c + 1) * QUAD_POINTS];
            for cube in column.chunks(corners) {
                for (b, &node) in cube.iter().enumerate() {
                    let v = ext[node];
                    for (o, w) in out.iter_mut().zip(&self.tw[b]) {
                        *o += v * w;
                    }
                }
            }
        }
        Ok(XProfile {
            hbar,
            norm_sq: self.fem.ext_mass.quad_form(&ext),
        })
    }

    fn leff(&self) -> f64 {
        self.fem.grid.effective_half_length()
    }

    /// `||h - m_xi||^2` on the extended cylinder.
    pub fn distance_sq(&self, xp: &XProfile, xi: f64) -> f64 {
        let p = &self.profile;
        let mut cross = 0.0;
        let mut msq = 0.0;
        for ((&x, &w), &hb) in self.xs.iter().zip(&self.qw).zip(&xp.hbar) {
            let m = p.value(x - xi);
            cross += w * hb * m;
            msq += w * m * m;
        }
        let leff = self.leff();
        (xp.norm_sq - 2.0 * cross + msq + p.tail_sq(leff - xi) + p.tail_sq(leff + xi)).max(0.0)
    }

    /// `<h - m_xi, d_x m_xi>` and its derivative in `xi`.
    pub fn residual(&self, xp: &XProfile, xi: f64) -> (f64, f64) {
        let p = &self.profile;
        let (mut r, mut dr) = (0.0, 0.0);
        for ((&x, &w), &hb) in self.xs.iter().zip(&self.qw).zip(&xp.hbar) {
            let s = x - xi;
            let (m, dm, ddm) = (p.value(s), p.derivative(s), p.second_derivative(s));
            r += w * (hb - m) * dm;
            dr += w * (dm * dm - (hb - m) * ddm);
        }
        let leff = self.leff();
        let (a, b) = (leff - xi, leff + xi);
        let (ga, gb) = (p.one_minus_value(a), p.one_minus_value(b));
        r += 0.5 * ga * ga - 0.5 * gb * gb;
        dr += ga * p.derivative(a) + gb * p.derivative(b);
        (r, dr)
    }

    /// `||d_x m_xi||^2` with the same quadrature as the residual.
    pub fn tangent_norm_sq(&self, xi: f64) -> f64 {
        let p = &self.profile;
        let interior: f64 = self.xs.iter().zip(&self.qw).map(|(&x, &w)| w * p.derivative(x - xi).powi(2)).sum();
        let leff = self.leff();
        interior + p.tail_grad_sq(leff - xi) + p.tail_grad_sq(leff + xi)
    }

    /// Safeguarded Newton on the residual, starting from `xi0`, with an
    /// optional sign-change bracket.
    fn newton(&self, xp: &XProfile, xi0: f64, bracket: Option<(f64, f64)>) -> Result<f64> {
        let mut xi = xi0;
        let mut br = bracket;
        for _ in 0..NEWTON_MAX {
            let (r, dr) = self.residual(xp, xi);
            if r.abs() <= RESIDUAL_TOL {
                return Ok(xi);
            }
            if let Some((lo, hi)) = br.as_mut() {
                if r < 0.0 {
                    *lo = xi;
                } else {
                    *hi = xi;
                }
            }
            let mut next = xi - r / dr;
            if let Some((lo, hi)) = br {
                if !(dr > 0.0) || next <= lo.min(hi) || next >= lo.max(hi) {
                    next = 0.5 * (lo + hi);
                }
            }
            if !next.is_finite() {
                break;
            }
            if (next - xi).abs() <= 4.0 * f64::EPSILON * xi.abs().max(1.0) {
                return Ok(next);
            }
            xi = next;
        }
        Err(Error::NoConvergence {
            what: "projection Newton iteration",
            iterations: NEWTON_MAX,
        })
    }

    fn bracket_around(&self, xp: &XProfile, xi: f64) -> Option<(f64, f64)> {
        let a = self.fem.grid.a;
        let lo = xi - a;
        let hi = xi + a;
        let (rl, _) = self.residual(xp, lo);
        let (rh, _) = self.residual(xp, hi);
        (rl <= 0.0 && rh >= 0.0).then_some((lo, hi))
    }

    /// Coarse scan of `g(xi)` with step `a`; returns local minima sorted by value.
    fn scan(&self, xp: &XProfile) -> Vec<(f64, f64)> {
        let g = &self.fem.grid;
        let reach = self.leff() + 2.0;
        let steps = (2.0 * reach / g.a).round() as i64;
        let vals: Vec<(f64, f64)> = (0..=steps)
            .map(|i| {
                let xi = -reach + i as f64 * g.a;
                (xi, self.distance_sq(xp, xi))
            })
            .collect();
        let mut minima: Vec<(f64, f64)> = (0..vals.len())
            .filter(|&i| {
                let left = i == 0 || vals[i - 1].1 >= vals[i].1;
                let right = i + 1 == vals.len() || vals[i + 1].1 > vals[i].1;
                left && right
            })
            .map(|i| vals[i])
            .collect();
        minima.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        minima
    }

    /// Refined candidates `(xi, g(xi))`, best first.
    fn candidates(&self, xp: &XProfile) -> Vec<(f64, f64, bool)> {
        let mut out: Vec<(f64, f64, bool)> = self
            .scan(xp)
            .into_iter()
            .take(REFINE_TOP)
            .map(|(xi0, g0)| match self.newton(xp, xi0, self.bracket_around(xp, xi0)) {
                Ok(xi) => {
                    let g = self.distance_sq(xp, xi);
                    if g <= g0 {
                        (xi, g, true)
                    } else {
                        (xi0, g0, false)
                    }
                }
                Err(_) => (xi0, g0, false),
            })
            .collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        out
    }

    fn coords(&self, h: &Field, xp: &XProfile, xi: f64) -> TubularCoords {
        let p = &self.profile;
        let g = &self.fem.grid;
        let v = Field {
            grid: *g,
            coeffs: (0..g.dofs)
                .map(|i| h.coeffs[i] - p.value(g.node_coords(i).0 - xi))
                .collect(),
            boundary: Boundary::Zero,
        };
        let (r, dr) = self.residual(xp, xi);
        TubularCoords {
            xi,
            v,
            dist: self.distance_sq(xp, xi).sqrt(),
            orth_residual: r,
            denominator: dr,
        }
    }

    /// Unique nearest point on `M`; fails when two basins are within 1%.
    pub fn project(&self, h: &Field) -> Result<TubularCoords> {
        let xp = self.x_profile(h)?;
        let cands = self.candidates(&xp);
        let (xi, g1, converged) = cands[0];
        if let Some(&(xi2, g2, _)) = cands.iter().skip(1).find(|c| (c.0 - xi).abs() > 2.0 * self.fem.grid.a) {
            if g2.sqrt() < 1.01 * g1.sqrt() {
                return Err(Error::AmbiguousProjection { first: xi, second: xi2 });
            }
        }
        if !converged {
            // rerun to surface the Newton failure
            self.newton(&xp, xi, self.bracket_around(&xp, xi))?;
        }
        Ok(self.coords(h, &xp, xi))
    }

    /// Newton projection from a known nearby translation (no scan).
    pub fn project_near(&self, h: &Field, xi0: f64) -> Result<TubularCoords> {
        let xp = self.x_profile(h)?;
        let xi = self.newton(&xp, xi0, self.bracket_around(&xp, xi0))?;
        Ok(self.coords(h, &xp, xi))
    }

    /// `inf_xi ||h - m_xi||`, defined everywhere.
    pub fn dist_to_manifold(&self, h: &Field) -> f64 {
        match self.x_profile(h) {
            Ok(xp) => self.candidates(&xp)[0].1.sqrt(),
            Err(_) => f64::INFINITY,
        }
    }

    /// `b_z = <phi_z, d_x m_xi>` for every degree of freedom.
    pub fn tangent_load(&self, xi: f64) -> Vec<f64> {
        self.load(|x| self.profile.derivative(x - xi))
    }

    /// `<phi_z, f>` for a function of `x` only.
    pub fn load<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        let g = &self.fem.grid;
        let corners = self.fem.kuhn.corners();
        let per_col = self.cubes_per_column();
        let mut out = vec![0.0; g.dofs];
        let fx: Vec<f64> = self.xs.iter().zip(&self.qw).map(|(&x, &w)| w * f(x)).collect();
        let first_dof = g.y_block();
        for (c, column) in self.fem.cube_corners.chunks(per_col * corners).enumerate() {
            let fq = &fx[c * QUAD_POINTS..(c + 1) * QUAD_POINTS];
            let per_corner: Vec<f64> = self.tw.iter().map(|w| w.iter().zip(fq).map(|(a, b)| a * b).sum()).collect();
            for cube in column.chunks(corners) {
                for (b, &node) in cube.iter().enumerate() {
                    if node >= first_dof && node < first_dof + g.dofs {
                        out[node - first_dof] += per_corner[b];
                    }
                }
            }
        }
        out
    }

    /// Gradient of the coordinate map `h -> xi(h)` and its norm bound.
    pub fn fermi_gradient(&self, h: &Field) -> Result<FermiGradient> {
        let coords = self.project(h)?;
        self.fermi_gradient_at(&coords)
    }

    pub fn fermi_gradient_at(&self, coords: &TubularCoords) -> Result<FermiGradient> {
        let tangent = self.tangent_norm_sq(coords.xi);
        let den = coords.denominator;
        if den.abs() < 0.1 * tangent {
            return Err(Error::DenominatorNearZero {
                value: den,
                reference: tangent,
            });
        }
        let g = &self.fem.grid;
        let analytic = self.tangent_load(coords.xi).into_iter().map(|b| -b / den).collect();
        let dim = g.dim() as i32;
        let norm_bound = 2f64.powi(dim) * g.a.powf(0.5 * dim as f64) * tangent.sqrt() / den.abs();
        Ok(FermiGradient {
            xi: coords.xi,
            analytic,
            norm_bound,
            denominator: den,
            tangent_norm_sq: tangent,
        })
    }

    /// Nodal interpolant of `m(. - xi)` with ramp boundary.
    pub fn manifold_point(&self, xi: f64) -> Field {
        let p = &self.profile;
        Field::from_fn(self.fem.grid, Boundary::Ramp, |x, _| p.value(x - xi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use crate::mesh::{assemble, build_grid};
    use crate::scalar::{cutoff_profile, make_quartic_potential, solve_profile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize, l: f64, n: usize) -> Tubular {
        let g = build_grid(d, l, n).unwrap();
        let p = solve_profile(&make_quartic_potential()).unwrap();
        Tubular::new(Arc::new(assemble(&g)), p)
    }

    fn smooth_bump(t: &Tubular, rng: &mut ChaCha8Rng, scale: f64) -> Field {
        let g = *t.grid();
        let (c1, c2, c3): (f64, f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..6.0));
        let leff = g.effective_half_length();
        Field::from_fn(g, Boundary::Zero, |x, y| {
            let env = (1.0 - (x / leff).powi(2)).max(0.0);
            scale * env * (c1 * (x + c3).sin() + c2 * (0.7 * x).cos() * (1.0 + y.first().copied().unwrap_or(0.0)))
        })
    }

    #[test]
    fn tangent_norm_is_surface_tension() {
        let t = setup(1, 6.0, 4);
        for &xi in &[0.0, 1.3, -2.0] {
            assert!((t.tangent_norm_sq(xi) - t.profile().surface_tension).abs() < 1e-6);
        }
        let p = t.profile();
        let integral = crate::quad::adaptive(|x| p.derivative(x), -40.0, 40.0, 1e-13);
        assert!((integral - 2.0).abs() < 1e-8);
    }

    #[test]
    fn manifold_point_projects_to_itself() {
        let t = setup(1, 12.0, 8);
        let h = cutoff_profile(t.profile(), 1.5, 0.001, 0.3, t.grid()).unwrap();
        let c = t.project(&h).unwrap();
        assert!((c.xi - 1.5).abs() < 1e-2, "xi = {}", c.xi);
        assert!(c.dist < 1e-2);
        assert!(c.orth_residual.abs() <= RESIDUAL_TOL);
    }

    #[test]
    fn odd_bump_keeps_center() {
        // <b, m'> vanishes for odd b since m' is even
        let t = setup(0, 6.0, 8);
        let g = *t.grid();
        let bump = Field::from_fn(g, Boundary::Zero, |x, _| 0.2 * x * (-x * x).exp());
        let h = t.manifold_point(0.0).add(&bump);
        let c = t.project(&h).unwrap();
        assert!(c.xi.abs() < 1e-12, "xi = {}", c.xi);
    }

    #[test]
    fn mirror_profile_matches_dense_scan() {
        let t = setup(0, 8.0, 8);
        let g = *t.grid();
        let p = t.profile().clone();
        let mirror = Field::from_fn(g, Boundary::Ramp, |x, _| -p.value(x));
        let d = t.dist_to_manifold(&mirror);
        let xp = t.x_profile(&mirror).unwrap();
        let dense = (0..=4000)
            .map(|i| t.distance_sq(&xp, -10.0 + 20.0 * i as f64 / 4000.0))
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        assert!(d <= dense + 1e-9 && d > dense - 1e-4, "{d} vs {dense}");
    }

    #[test]
    fn residual_derivative_matches_finite_difference() {
        let t = setup(1, 5.0, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = t.manifold_point(0.4).add(&smooth_bump(&t, &mut rng, 0.2));
        let xp = t.x_profile(&h).unwrap();
        for &xi in &[-0.5, 0.3, 1.0] {
            let step = 1e-6;
            let fd = (t.residual(&xp, xi + step).0 - t.residual(&xp, xi - step).0) / (2.0 * step);
            assert!((fd - t.residual(&xp, xi).1).abs() < 1e-7);
            let gfd = (t.distance_sq(&xp, xi + step) - t.distance_sq(&xp, xi - step)) / (2.0 * step);
            assert!((gfd - 2.0 * t.residual(&xp, xi).0).abs() < 1e-6);
        }
    }

    #[test]
    fn distance_matches_mass_form_on_nodal_fluctuation() {
        // for a field equal to m_xi plus a P1 bump, the distance is close to
        // the nodal-fluctuation norm up to interpolation error of m
        let t = setup(0, 6.0, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = t.manifold_point(0.0).add(&smooth_bump(&t, &mut rng, 0.1));
        let c = t.project(&h).unwrap();
        let vnorm = t.fem().l2_sq(&c.v).sqrt();
        assert!((vnorm - c.dist).abs() < 5e-3 * c.dist.max(1e-3));
    }

    #[test]
    fn fermi_gradient_matches_finite_differences() {
        for d in 0..2 {
            let t = setup(d, 5.0, 4);
            let g = *t.grid();
            let mut rng = ChaCha8Rng::seed_from_u64(11 + d as u64);
            for _ in 0..3 {
                let h = t.manifold_point(rng.random_range(-0.5..0.5)).add(&smooth_bump(&t, &mut rng, 0.15));
                let fg = t.fermi_gradient(&h).unwrap();
                assert!(norm(&fg.analytic) <= fg.norm_bound);
                for _ in 0..5 {
                    let dir: Vec<f64> = (0..g.dofs).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let step = 1e-6;
                    let shifted = |s: f64| Field {
                        coeffs: h.coeffs.iter().zip(&dir).map(|(a, b)| a + s * b).collect(),
                        ..h.clone()
                    };
                    let xp = t.project_near(&shifted(step), fg.xi).unwrap().xi;
                    let xm = t.project_near(&shifted(-step), fg.xi).unwrap().xi;
                    let fd = (xp - xm) / (2.0 * step);
                    let an: f64 = fg.analytic.iter().zip(&dir).map(|(a, b)| a * b).sum();
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "fd {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn zero_fluctuation_denominator_is_tension() {
        let t = setup(0, 6.0, 8);
        let xp = t.x_profile(&t.manifold_point(0.0)).unwrap();
        let (_, dr) = t.residual(&xp, 0.0);
        // the nodal interpolant differs from m by O(a^2)
        assert!((dr - t.profile().surface_tension).abs() < 2e-2);
    }

    #[test]
    fn symmetric_double_interface_is_ambiguous() {
        let t = setup(0, 8.0, 4);
        let g = *t.grid();
        let p = t.profile().clone();
        // interfaces at -4, 0, 4; the field is odd, so the fits at -4 and 4 tie
        let sym = Field::from_fn(g, Boundary::Ramp, |x, _| p.value(x + 4.0) * p.value(x) * p.value(x - 4.0));
        let r = t.project(&sym);
        assert!(matches!(r, Err(Error::AmbiguousProjection { .. })), "{r:?}");
    }
}
