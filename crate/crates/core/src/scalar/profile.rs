use std::f64::consts::SQRT_2;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad::{self, GaussLegendre};
use crate::scalar::potential::{PotentialKind, PotentialSpec};

/// Threshold on |m| past which the linearized exponential tail is used.
pub const TAIL_SWITCH: f64 = 1.0 - 1e-6;
const ODE_RTOL: f64 = 1e-10;
const ODE_MAX_STEP: f64 = 0.02;
const ODE_XMAX: f64 = 100.0;

/// The heteroclinic transition profile `m` solving `m' = sqrt(2 F(m))`,
/// `m(0) = 0`, together with its tail constants and surface tension.
#[derive(Debug, Clone)]
pub struct ProfileSpec {
    pub potential: PotentialSpec,
    repr: Repr,
    pub c1: f64,
    pub c2: f64,
    /// `C_* = int_{-1}^{1} sqrt(2 F(u)) du`
    pub surface_tension: f64,
    tail_rule: Arc<GaussLegendre>,
}

#[derive(Debug, Clone)]
enum Repr {
    /// `m(x) = tanh(x / sqrt 2)`
    Tanh,
    Table(Arc<Table>),
}

/// Dense ODE solution on `[0, x_switch]` with the exponential tail beyond.
#[derive(Debug)]
struct Table {
    x: Vec<f64>,
    m: Vec<f64>,
    /// m' = sqrt(2 F(m)) at the nodes
    dm: Vec<f64>,
    /// m'' = F'(m) at the nodes
    ddm: Vec<f64>,
    decay: f64,
}

/// Returns the profile for `potential`: closed form for the quartic,
/// numerical integration otherwise.
pub fn solve_profile(potential: &PotentialSpec) -> Result<ProfileSpec> {
    potential.check_admissible()?;
    if potential.kind == PotentialKind::Quartic {
        let tension = surface_tension(potential);
        return Ok(ProfileSpec {
            potential: potential.clone(),
            repr: Repr::Tanh,
            c1: 2.0,
            c2: SQRT_2,
            surface_tension: tension,
            tail_rule: Arc::new(GaussLegendre::new(40)),
        });
    }
    solve_profile_numeric(potential)
}

/// Integrates the profile ODE regardless of the potential kind.
pub fn solve_profile_numeric(potential: &PotentialSpec) -> Result<ProfileSpec> {
    potential.check_admissible()?;
    let table = integrate_profile(potential)?;
    let mut profile = ProfileSpec {
        potential: potential.clone(),
        repr: Repr::Table(Arc::new(table)),
        c1: 0.0,
        c2: potential.well_curvature().sqrt() * (1.0 - 1e-3),
        surface_tension: surface_tension(potential),
        tail_rule: Arc::new(GaussLegendre::new(40)),
    };
    profile.c1 = fit_tail_amplitude(&profile);
    Ok(profile)
}

/// `C_*` by adaptive quadrature with the endpoint substitution `u = +-(1 - t^2)`.
pub fn surface_tension(potential: &PotentialSpec) -> f64 {
    let upper = quad::adaptive(
        |t| 2.0 * t * (2.0 * potential.eval(1.0 - t * t)).max(0.0).sqrt(),
        0.0,
        1.0,
        1e-12,
    );
    let lower = quad::adaptive(
        |t| 2.0 * t * (2.0 * potential.eval(-1.0 + t * t)).max(0.0).sqrt(),
        0.0,
        1.0,
        1e-12,
    );
    upper + lower
}

/// Closed-form surface tension of the quartic potential.
pub fn quartic_surface_tension() -> f64 {
    2.0 * SQRT_2 / 3.0
}

fn integrate_profile(potential: &PotentialSpec) -> Result<Table> {
    let rhs = |m: f64| (2.0 * potential.eval(m)).max(0.0).sqrt();
    // Dormand-Prince 5(4)
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let mut xs = vec![0.0];
    let mut ms = vec![0.0];
    let (mut x, mut m) = (0.0f64, 0.0f64);
    let mut h: f64 = 1e-3;
    while m <= TAIL_SWITCH {
        if x > ODE_XMAX {
            return Err(Error::ProfileNotConverged(ODE_XMAX));
        }
        h = h.min(ODE_MAX_STEP);
        let mut k = [0.0f64; 7];
        k[0] = rhs(m);
        for s in 0..6 {
            let y = m + h * (0..=s).map(|j| A[s][j] * k[j]).sum::<f64>();
            k[s + 1] = rhs(y);
        }
        let y5 = m + h * (0..7).map(|j| B5[j] * k[j]).sum::<f64>();
        let y4 = m + h * (0..7).map(|j| B4[j] * k[j]).sum::<f64>();
        let err = (y5 - y4).abs();
        let tol = ODE_RTOL * m.abs().max(y5.abs()).max(1e-3) + 1e-15;
        if err <= tol {
            x += h;
            m = y5;
            xs.push(x);
            ms.push(m);
        }
        let factor = if err == 0.0 { 5.0 } else { 0.9 * (tol / err).powf(0.2) };
        h *= factor.clamp(0.2, 5.0);
        if h < 1e-12 {
            return Err(Error::ProfileNotConverged(ODE_XMAX));
        }
    }
    let dm = ms.iter().map(|&v| rhs(v)).collect();
    let ddm = ms.iter().map(|&v| potential.d1(v)).collect();
    Ok(Table {
        x: xs,
        m: ms,
        dm,
        ddm,
        decay: potential.d2(1.0).sqrt(),
    })
}

fn fit_tail_amplitude(profile: &ProfileSpec) -> f64 {
    let c2 = profile.c2;
    let mut c1: f64 = 0.0;
    for s in tail_sample_points() {
        let growth = (c2 * s).exp();
        c1 = c1
            .max(profile.one_minus_value(s) * growth)
            .max(profile.derivative(s).abs() * growth / c2)
            .max(profile.second_derivative(s).abs() * growth / (c2 * c2));
    }
    c1 * (1.0 + 1e-9)
}

/// Geometric grid on `[0, 40]` (plus 0) used for tail certificates.
pub fn tail_sample_points() -> Vec<f64> {
    let mut pts = vec![0.0];
    let n = 400;
    for i in 0..=n {
        pts.push(1e-3 * (40.0f64 / 1e-3).powf(i as f64 / n as f64));
    }
    pts
}

impl ProfileSpec {
    pub fn is_closed_form(&self) -> bool {
        matches!(self.repr, Repr::Tanh)
    }

    pub fn value(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Tanh => (x / SQRT_2).tanh(),
            Repr::Table(t) => {
                let v = t.positive_value(x.abs());
                v.copysign(x)
            }
        }
    }

    /// `1 - m(x)`, accurate when `m(x)` is close to 1.
    pub fn one_minus_value(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Tanh => {
                let u = x / SQRT_2;
                if u >= 0.0 {
                    let q = (-2.0 * u).exp();
                    2.0 * q / (1.0 + q)
                } else {
                    1.0 - u.tanh()
                }
            }
            Repr::Table(t) => {
                if x >= 0.0 {
                    t.positive_one_minus(x)
                } else {
                    1.0 + t.positive_value(-x)
                }
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Tanh => {
                let c = (x.abs() / SQRT_2).cosh();
                if c.is_finite() {
                    1.0 / (SQRT_2 * c * c)
                } else {
                    0.0
                }
            }
            Repr::Table(t) => {
                let s = x.abs();
                if s > t.switch_x() {
                    t.decay * t.positive_one_minus(s)
                } else {
                    (2.0 * self.potential.eval(t.positive_value(s))).max(0.0).sqrt()
                }
            }
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Tanh => {
                let u = x / SQRT_2;
                let c = u.abs().cosh();
                if c.is_finite() {
                    -u.tanh() / (c * c)
                } else {
                    0.0
                }
            }
            Repr::Table(t) => {
                let s = x.abs();
                let v = if s > t.switch_x() {
                    -t.decay * t.decay * t.positive_one_minus(s)
                } else {
                    self.potential.d1(t.positive_value(s))
                };
                if x < 0.0 {
                    -v
                } else {
                    v
                }
            }
        }
    }

    /// `int_A^inf (1 - m(x))^2 dx`.
    pub fn tail_sq(&self, a: f64) -> f64 {
        match &self.repr {
            Repr::Tanh => {
                let q = (-SQRT_2 * a).exp();
                2.0 * SQRT_2 * log1p_minus_ratio(q)
            }
            Repr::Table(_) => {
                let mut total = 0.0;
                let start = a.max(0.0);
                if a < 0.0 {
                    let panels = (-a).ceil() as usize;
                    let w = -a / panels as f64;
                    for p in 0..panels {
                        let lo = a + p as f64 * w;
                        total += self.tail_rule.integrate(lo, lo + w, |x| {
                            let d = self.one_minus_value(x);
                            d * d
                        });
                    }
                }
                // substitute u = m(x), dx = du / sqrt(2F(u))
                let lo = self.value(start);
                let f = &self.potential;
                total += self.tail_rule.integrate(lo, 1.0, |u| {
                    let d = 1.0 - u;
                    let s = (2.0 * f.eval(u)).max(0.0).sqrt();
                    if s > 0.0 {
                        d * d / s
                    } else {
                        0.0
                    }
                });
                total
            }
        }
    }

    /// `int_A^inf m'(x)^2 dx = int_{m(A)}^1 sqrt(2 F(u)) du`.
    pub fn tail_grad_sq(&self, a: f64) -> f64 {
        match &self.repr {
            Repr::Tanh => {
                // (1/sqrt2)(2/3 - m + m^3/3) = (1/sqrt2) d^2 (1 - d/3) with d = 1 - m
                let d = self.one_minus_value(a);
                d * d * (1.0 - d / 3.0) / SQRT_2
            }
            Repr::Table(_) => {
                let f = &self.potential;
                self.tail_rule
                    .integrate(self.value(a), 1.0, |u| (2.0 * f.eval(u)).max(0.0).sqrt())
            }
        }
    }

    /// Half-width beyond which `m` is within `tol` of `+-1`.
    pub fn support_radius(&self, tol: f64) -> f64 {
        (self.c1 / tol).ln().max(0.0) / self.c2
    }
}

/// `ln(1+q) - q/(1+q)`, with a series for small `q`.
fn log1p_minus_ratio(q: f64) -> f64 {
    if q < 1e-2 {
        let mut sum = 0.0;
        let mut pow = q;
        for k in 2..12 {
            pow *= q;
            let term = (k - 1) as f64 / k as f64 * pow;
            sum += if k % 2 == 0 { term } else { -term };
        }
        sum
    } else {
        q.ln_1p() - q / (1.0 + q)
    }
}

impl Table {
    fn switch_x(&self) -> f64 {
        *self.x.last().unwrap()
    }

    fn positive_value(&self, s: f64) -> f64 {
        if s >= self.switch_x() {
            return 1.0 - self.positive_one_minus(s);
        }
        let i = match self.x.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => return self.m[i],
            Err(i) => i - 1,
        };
        self.hermite(i, s)
    }

    fn positive_one_minus(&self, s: f64) -> f64 {
        let xs = self.switch_x();
        if s >= xs {
            let ms = *self.m.last().unwrap();
            (1.0 - ms) * (-self.decay * (s - xs)).exp()
        } else {
            1.0 - self.positive_value(s)
        }
    }

    fn hermite(&self, i: usize, s: f64) -> f64 {
        // quintic Hermite through (m, m', m'') at both nodes
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let h = x1 - x0;
        let t = (s - x0) / h;
        let (d0, d1, s0, s1) = self.node_derivatives(i);
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        m0 * h0 + h * d0 * h1 + h * h * s0 * h2 + h * h * s1 * h3 + h * d1 * h4 + m1 * h5
    }

    fn node_derivatives(&self, i: usize) -> (f64, f64, f64, f64) {
        (self.dm[i], self.dm[i + 1], self.ddm[i], self.ddm[i + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::potential::make_quartic_potential;

    fn sextic() -> PotentialSpec {
        // (u^2 - 1)^2 (u^2 + 2) / 12
        PotentialSpec::custom(vec![1.0 / 6.0, 0.0, -0.25, 0.0, 0.0, 0.0, 1.0 / 12.0]).unwrap()
    }

    #[test]
    fn quartic_closed_form() {
        let p = solve_profile(&make_quartic_potential()).unwrap();
        assert!(p.is_closed_form());
        assert_eq!(p.value(0.0), 0.0);
        let x = SQRT_2 * 0.5f64.atanh();
        assert!((p.value(x) - 0.5).abs() < 1e-15);
        assert_eq!(p.c2, SQRT_2);
        assert!((p.surface_tension - quartic_surface_tension()).abs() < 1e-10);
        assert!((quartic_surface_tension() - 0.942_809_041_582_063_4).abs() < 1e-15);
    }

    #[test]
    fn scaled_potential_doubles_tension() {
        let f = make_quartic_potential();
        let c = surface_tension(&f);
        assert!((surface_tension(&f.scaled(4.0)) - 2.0 * c).abs() < 1e-10);
    }

    fn check_identity(p: &ProfileSpec, tol: f64) {
        for i in 0..1000 {
            let x = -20.0 + 40.0 * i as f64 / 999.0;
            let m = p.value(x);
            assert!(m > -1.0 && m < 1.0 || x.abs() > 15.0);
            let lhs = p.derivative(x).powi(2);
            let rhs = 2.0 * p.potential.eval(m);
            assert!((lhs - rhs).abs() < tol, "x = {x}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn profile_identity_holds() {
        check_identity(&solve_profile(&make_quartic_potential()).unwrap(), 1e-8);
        check_identity(&solve_profile(&sextic()).unwrap(), 1e-8);
    }

    #[test]
    fn numeric_profile_matches_tanh() {
        let p = solve_profile_numeric(&make_quartic_potential()).unwrap();
        for i in 0..400 {
            let x = -20.0 + 40.0 * i as f64 / 399.0;
            let exact = (x / SQRT_2).tanh();
            assert!((p.value(x) - exact).abs() < 1e-8, "x = {x}");
            let d = 1.0 / (SQRT_2 * (x / SQRT_2).cosh().powi(2));
            assert!((p.derivative(x) - d).abs() < 1e-8);
        }
        assert!((p.c2 - SQRT_2 * (1.0 - 1e-3)).abs() < 1e-12);
        assert!((p.tail_sq(1.0) - 2.0 * SQRT_2 * log1p_minus_ratio((-SQRT_2).exp())).abs() < 1e-7);
    }

    #[test]
    fn monotone_and_odd() {
        let p = solve_profile(&sextic()).unwrap();
        let mut prev = -1.0;
        for i in 0..2000 {
            let x = -10.0 + 20.0 * i as f64 / 1999.0;
            let v = p.value(x);
            assert!(v > prev);
            assert!((p.value(-x) + v).abs() < 1e-14);
            prev = v;
        }
    }

    #[test]
    fn gradient_norm_equals_surface_tension() {
        for f in [make_quartic_potential(), sextic()] {
            let p = solve_profile(&f).unwrap();
            let rule = GaussLegendre::new(20);
            let mut total = 0.0;
            for k in -60..60 {
                let lo = k as f64 * 0.5;
                total += rule.integrate(lo, lo + 0.5, |x| p.derivative(x).powi(2));
            }
            assert!((total - p.surface_tension).abs() < 1e-6, "{total} vs {}", p.surface_tension);
            assert!((p.tail_grad_sq(-30.0) - p.surface_tension).abs() < 1e-6);
        }
    }

    #[test]
    fn tail_certificates() {
        for f in [make_quartic_potential(), sextic()] {
            let p = solve_profile(&f).unwrap();
            for s in tail_sample_points() {
                let bound = p.c1 * (-p.c2 * s).exp();
                assert!(p.one_minus_value(s) <= bound * (1.0 + 1e-12));
                assert!((1.0 + p.value(-s)).abs() <= bound * (1.0 + 1e-12) + 1e-16);
                assert!(p.derivative(s).abs() <= p.c2 * bound * (1.0 + 1e-12));
                assert!(p.derivative(-s).abs() <= p.c2 * bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn closed_form_tails() {
        let p = solve_profile(&make_quartic_potential()).unwrap();
        let rule = GaussLegendre::new(30);
        for &a in &[-2.0, 0.0, 1.5, 6.0] {
            let mut sq = 0.0;
            let mut gsq = 0.0;
            for k in 0..60 {
                let lo = a + k as f64;
                sq += rule.integrate(lo, lo + 1.0, |x| p.one_minus_value(x).powi(2));
                gsq += rule.integrate(lo, lo + 1.0, |x| p.derivative(x).powi(2));
            }
            assert!((p.tail_sq(a) - sq).abs() < 1e-11 * sq.max(1.0));
            assert!((p.tail_grad_sq(a) - gsq).abs() < 1e-11 * gsq.max(1.0));
        }
        assert!((log1p_minus_ratio(5e-3) - ((5e-3f64).ln_1p() - 5e-3 / 1.005)).abs() < 1e-18);
    }

    #[test]
    fn second_derivative_is_f_prime() {
        for f in [make_quartic_potential(), sextic()] {
            let p = solve_profile(&f).unwrap();
            for &x in &[-3.0, -0.7, 0.2, 1.9, 12.0] {
                assert!((p.second_derivative(x) - f.d1(p.value(x))).abs() < 1e-8);
            }
        }
    }
}
