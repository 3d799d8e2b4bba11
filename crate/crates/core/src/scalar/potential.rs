use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Quartic,
    Custom,
}

/// A polynomial double-well energy density `F(u) = sum_k c_k u^k`.
///
/// Custom potentials are tabulated polynomial coefficients. The suprema
/// entering the landscape constant are computed once at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub coefficients: Vec<f64>,
    /// sup of |F''| on [-1, 1]
    pub sup_d2_on_unit: f64,
    /// sup of |F'''| on [-2, 2]
    pub sup_d3_on_double: f64,
    /// landscape constant `1/2 sup|F''| + sup|F'''|`
    pub c3: f64,
}

/// `F(u) = (u^2 - 1)^2 / 4`.
pub fn make_quartic_potential() -> PotentialSpec {
    PotentialSpec {
        kind: PotentialKind::Quartic,
        coefficients: vec![0.25, 0.0, -0.5, 0.0, 0.25],
        sup_d2_on_unit: 2.0,
        sup_d3_on_double: 12.0,
        c3: 13.0,
    }
}

impl PotentialSpec {
    /// Builds a potential from polynomial coefficients without checking
    /// admissibility (used for Gaussian subcases such as `F = u^2/2`).
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        let mut coefficients = coefficients;
        while coefficients.len() > 1 && *coefficients.last().unwrap() == 0.0 {
            coefficients.pop();
        }
        let probe = Self {
            kind: PotentialKind::Custom,
            coefficients,
            sup_d2_on_unit: 0.0,
            sup_d3_on_double: 0.0,
            c3: 0.0,
        };
        let sup_d2 = sample_sup(|u| probe.d2(u).abs(), -1.0, 1.0);
        let sup_d3 = sample_sup(|u| probe.d3(u).abs(), -2.0, 2.0);
        Self {
            sup_d2_on_unit: sup_d2,
            sup_d3_on_double: sup_d3,
            c3: 0.5 * sup_d2 + sup_d3,
            ..probe
        }
    }

    /// Builds a custom potential and checks the double-well admissibility
    /// conditions on a sampled grid.
    pub fn custom(coefficients: Vec<f64>) -> Result<Self> {
        let spec = Self::from_coefficients(coefficients);
        spec.check_admissible()?;
        Ok(spec)
    }

    /// The zero potential (pure Gaussian free field target).
    pub fn zero() -> Self {
        Self::from_coefficients(vec![0.0])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_coefficients(self.coefficients.iter().map(|c| c * factor).collect())
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    pub fn d1(&self, u: f64) -> f64 {
        self.derivative_eval(1, u)
    }

    pub fn d2(&self, u: f64) -> f64 {
        self.derivative_eval(2, u)
    }

    pub fn d3(&self, u: f64) -> f64 {
        self.derivative_eval(3, u)
    }

    fn derivative_eval(&self, order: usize, u: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coefficients.iter().enumerate().skip(order).rev() {
            let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
            acc = acc * u + c * falling;
        }
        acc
    }

    /// Checks: F(+-1) = 0, F > 0 elsewhere on [-3, 3], symmetry,
    /// F'(0) = F'(+-1) = 0, F''(0) < 0, F''(+-1) > 0.
    pub fn check_admissible(&self) -> Result<()> {
        let tol = 1e-12 * (1.0 + self.coefficients.iter().map(|c| c.abs()).sum::<f64>());
        let fail = |msg: String| Err(Error::InadmissiblePotential(msg));
        if self.eval(1.0).abs() > tol || self.eval(-1.0).abs() > tol {
            return fail("F(+-1) must vanish".into());
        }
        for i in 0..=6000 {
            let u = -3.0 + 6.0 * i as f64 / 6000.0;
            if (u.abs() - 1.0).abs() < 1e-3 {
                continue;
            }
            if self.eval(u) <= 0.0 {
                return fail(format!("F({u}) = {} is not positive", self.eval(u)));
            }
            if (self.eval(u) - self.eval(-u)).abs() > tol * (1.0 + u.abs().powi(self.degree() as i32)) {
                return fail(format!("F is not symmetric at u = {u}"));
            }
        }
        for u in [0.0, 1.0, -1.0] {
            if self.d1(u).abs() > tol {
                return fail(format!("F'({u}) must vanish"));
            }
        }
        if self.d2(0.0) >= 0.0 {
            return fail("F''(0) must be negative".into());
        }
        if self.d2(1.0) <= 0.0 || self.d2(-1.0) <= 0.0 {
            return fail("F''(+-1) must be positive".into());
        }
        Ok(())
    }

    /// Curvature at the wells, `min(F''(1), F''(-1))`.
    pub fn well_curvature(&self) -> f64 {
        self.d2(1.0).min(self.d2(-1.0))
    }
}

fn sample_sup<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    (0..=20_000)
        .map(|i| f(lo + (hi - lo) * i as f64 / 20_000.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartic_values() {
        let f = make_quartic_potential();
        assert_eq!(f.eval(1.0), 0.0);
        assert_eq!(f.eval(-1.0), 0.0);
        assert!((f.eval(0.0) - 0.25).abs() < 1e-15);
        assert!((f.d2(0.0) + 1.0).abs() < 1e-15);
        assert!((f.d2(1.0) - 2.0).abs() < 1e-15);
        assert!((f.d3(0.5) - 3.0).abs() < 1e-15);
        f.check_admissible().unwrap();
    }

    #[test]
    fn quartic_constants_match_sampled_suprema() {
        let f = make_quartic_potential();
        let generic = PotentialSpec::from_coefficients(f.coefficients.clone());
        assert!((generic.sup_d2_on_unit - f.sup_d2_on_unit).abs() < 1e-12);
        assert!((generic.sup_d3_on_double - f.sup_d3_on_double).abs() < 1e-12);
        assert!((generic.c3 - 13.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let f = PotentialSpec::custom(vec![1.0 / 6.0, 0.0, -0.25, 0.0, 0.0, 0.0, 1.0 / 12.0]).unwrap();
        for &u in &[-1.7, -0.3, 0.2, 1.1] {
            let h = 1e-5;
            let fd1 = (f.eval(u + h) - f.eval(u - h)) / (2.0 * h);
            let fd2 = (f.d1(u + h) - f.d1(u - h)) / (2.0 * h);
            let fd3 = (f.d2(u + h) - f.d2(u - h)) / (2.0 * h);
            assert!((fd1 - f.d1(u)).abs() < 1e-8);
            assert!((fd2 - f.d2(u)).abs() < 1e-8);
            assert!((fd3 - f.d3(u)).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_asymmetric_and_single_well() {
        assert!(PotentialSpec::custom(vec![0.0, 0.0, 0.5]).is_err());
        assert!(PotentialSpec::custom(vec![0.25, 0.1, -0.5, -0.1, 0.25]).is_err());
    }
}
