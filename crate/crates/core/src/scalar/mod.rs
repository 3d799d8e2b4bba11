//! One-dimensional ingredients: the double-well potential, the transition
//! profile and the cut-off profile used as the manifold carrier.

mod potential;
mod profile;

pub use potential::{make_quartic_potential, PotentialKind, PotentialSpec};
pub use profile::{
    quartic_surface_tension, solve_profile, solve_profile_numeric, surface_tension, tail_sample_points,
    ProfileSpec, TAIL_SWITCH,
};

use crate::error::{Error, Result};
use crate::mesh::{Boundary, Field, GridSpec};
use crate::quad::GaussLegendre;

/// Quintic smoothstep `6s^5 - 15s^4 + 10s^3` clamped to `[0, 1]`.
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    }
}

pub fn smoothstep_derivative(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        30.0 * s * s * (1.0 - s) * (1.0 - s)
    }
}

/// The cut-off profile: `m` on `[-R, R]`, `+-1` beyond `R + 1`, and
/// `m + (+-1 - m) q(|x| - R)` in between.
pub fn cutoff_value(profile: &ProfileSpec, x: f64, radius: f64) -> f64 {
    let s = x.abs() - radius;
    if s <= 0.0 {
        return profile.value(x);
    }
    if s >= 1.0 {
        return x.signum();
    }
    // (+-1 - m(x)) = +-(1 - m(|x|)) by oddness
    let gap = profile.one_minus_value(x.abs()).copysign(x);
    profile.value(x) + gap * smoothstep(s)
}

pub fn cutoff_derivative(profile: &ProfileSpec, x: f64, radius: f64) -> f64 {
    let s = x.abs() - radius;
    if s <= 0.0 {
        return profile.derivative(x);
    }
    if s >= 1.0 {
        return 0.0;
    }
    let gap = profile.one_minus_value(x.abs());
    profile.derivative(x) * (1.0 - smoothstep(s)) + gap * smoothstep_derivative(s)
}

/// `2 c1 c2 exp(-c2 R)`
pub fn cutoff_derivative_bound(profile: &ProfileSpec, radius: f64) -> f64 {
    2.0 * profile.c1 * profile.c2 * (-profile.c2 * radius).exp()
}

/// Checks `0 < lambda1 < min(2 alpha, lambda)`.
pub fn check_cutoff_exponent(lambda1: f64, lambda: f64, alpha: f64) -> Result<()> {
    let bound = (2.0 * alpha).min(lambda);
    if lambda1 > 0.0 && lambda1 < bound {
        Ok(())
    } else {
        Err(Error::InvalidCutoffExponent { lambda1, bound })
    }
}

/// Admissible translations `[-L + R + 1, L - R - 1]` with `R = eps^{-lambda1}`.
pub fn translation_window(eps: f64, lambda1: f64, grid: &GridSpec) -> (f64, f64) {
    let r = eps.powf(-lambda1);
    (-grid.half_length + r + 1.0, grid.half_length - r - 1.0)
}

/// Grid field sampling the cut-off profile centred at `xi`.
///
/// The exponent bound `lambda1 < min(2 alpha, lambda)` involves the schedule
/// and is checked by [`check_cutoff_exponent`]; here only `0 < lambda1 < 1`
/// is enforced, together with the translation window.
pub fn cutoff_profile(profile: &ProfileSpec, xi: f64, eps: f64, lambda1: f64, grid: &GridSpec) -> Result<Field> {
    if !(lambda1 > 0.0 && lambda1 < 1.0) {
        return Err(Error::InvalidCutoffExponent { lambda1, bound: 1.0 });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Precondition(format!("eps = {eps} must lie in (0, 1)")));
    }
    let (lo, hi) = translation_window(eps, lambda1, grid);
    if !(xi >= lo && xi <= hi) {
        return Err(Error::TranslationOutOfWindow { xi, lo, hi });
    }
    let radius = eps.powf(-lambda1);
    let bound = cutoff_derivative_bound(profile, radius);
    let worst = (0..=400)
        .map(|i| cutoff_derivative(profile, radius + i as f64 / 400.0, radius).abs())
        .fold(0.0, f64::max);
    if worst > bound * (1.0 + 1e-9) {
        return Err(Error::Precondition(format!(
            "cut-off derivative {worst:e} exceeds the tail bound {bound:e}"
        )));
    }
    Ok(Field::from_fn(*grid, Boundary::Ramp, |x, _| cutoff_value(profile, x - xi, radius)))
}

/// L2 and H1 distances between the continuum profile `m(. - xi)` and a field
/// that depends on `x` only, over `[-L, L] x [0,1]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileErrors {
    pub l2: f64,
    pub h1: f64,
}

pub fn profile_errors(profile: &ProfileSpec, field: &Field, xi: f64) -> ProfileErrors {
    let g = &field.grid;
    let rule = GaussLegendre::new(8);
    let f = g.floor_la as i64;
    let y0 = vec![0usize; g.d];
    let nodal = |kx: i64| -> f64 {
        if kx.abs() >= f {
            field.boundary_value(kx as f64)
        } else {
            field.coeffs[g.node_index(kx, &y0)]
        }
    };
    let (mut l2, mut grad) = (0.0, 0.0);
    for kx in -f..f {
        let (x0, v0, v1) = (kx as f64 * g.a, nodal(kx), nodal(kx + 1));
        let slope = (v1 - v0) / g.a;
        l2 += rule.integrate(x0, x0 + g.a, |x| {
            let e = profile.value(x - xi) - (v0 + slope * (x - x0));
            e * e
        });
        grad += rule.integrate(x0, x0 + g.a, |x| {
            let e = profile.derivative(x - xi) - slope;
            e * e
        });
    }
    let leff = g.effective_half_length();
    if g.half_length > leff + 1e-12 {
        for side in [-1.0f64, 1.0] {
            let (a, b) = if side > 0.0 { (leff, g.half_length) } else { (-g.half_length, -leff) };
            l2 += rule.integrate(a, b, |x| profile.one_minus_value(side * (x - xi)).powi(2));
            grad += rule.integrate(a, b, |x| profile.derivative(x - xi).powi(2));
        }
    }
    ProfileErrors {
        l2: l2.sqrt(),
        h1: (l2 + grad).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, interpolate};

    fn quartic() -> ProfileSpec {
        solve_profile(&make_quartic_potential()).unwrap()
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(smoothstep_derivative(0.0), 0.0);
        assert!((smoothstep_derivative(0.5) - 1.875).abs() < 1e-15);
    }

    #[test]
    fn cutoff_core_and_outer_values() {
        let p = quartic();
        let r = 3.0;
        for &x in &[-2.9, -1.0, 0.0, 0.4, 3.0] {
            assert_eq!(cutoff_value(&p, x, r), p.value(x));
        }
        assert_eq!(cutoff_value(&p, 4.0, r), 1.0);
        assert_eq!(cutoff_value(&p, 7.5, r), 1.0);
        assert_eq!(cutoff_value(&p, -4.2, r), -1.0);
    }

    #[test]
    fn cutoff_blend_is_monotone_and_odd() {
        let p = quartic();
        let r = 2.0;
        let mut prev = cutoff_value(&p, r, r);
        for i in 1..=200 {
            let x = r + i as f64 / 200.0;
            let v = cutoff_value(&p, x, r);
            assert!(v >= prev);
            assert!((cutoff_value(&p, -x, r) + v).abs() < 1e-15);
            prev = v;
        }
    }

    #[test]
    fn cutoff_derivative_matches_finite_differences_and_bound() {
        let p = quartic();
        let r = 2.5;
        for i in 1..100 {
            let x = r + i as f64 / 100.0;
            let h = 1e-6;
            let fd = (cutoff_value(&p, x + h, r) - cutoff_value(&p, x - h, r)) / (2.0 * h);
            assert!((fd - cutoff_derivative(&p, x, r)).abs() < 1e-8);
            assert!(cutoff_derivative(&p, x, r).abs() <= cutoff_derivative_bound(&p, r));
        }
    }

    #[test]
    fn cutoff_field_window_and_values() {
        let p = quartic();
        let g = build_grid(1, 8.0, 4).unwrap();
        let eps: f64 = 0.25;
        let lambda1 = 0.5; // R = 2
        let (lo, hi) = translation_window(eps, lambda1, &g);
        assert!((lo + 5.0).abs() < 1e-12 && (hi - 5.0).abs() < 1e-12);
        assert!(matches!(
            cutoff_profile(&p, 5.5, eps, lambda1, &g),
            Err(Error::TranslationOutOfWindow { .. })
        ));
        assert!(matches!(
            cutoff_profile(&p, 0.0, eps, 0.0, &g),
            Err(Error::InvalidCutoffExponent { .. })
        ));
        let h = cutoff_profile(&p, 1.0, eps, lambda1, &g).unwrap();
        // node at x = 1.5 is in the core
        assert_eq!(interpolate(&h, &[1.5, 0.25]), p.value(0.5));
        assert_eq!(interpolate(&h, &[4.0, 0.5]), 1.0);
        assert_eq!(interpolate(&h, &[-2.0, 0.5]), -1.0);
    }

    #[test]
    fn exponent_check_is_strict() {
        assert!(check_cutoff_exponent(0.15, 0.3, 0.2).is_ok());
        assert!(check_cutoff_exponent(0.3, 0.3, 0.2).is_err());
        assert!(check_cutoff_exponent(0.4, 0.5, 0.2).is_err());
        assert!(check_cutoff_exponent(0.0, 0.3, 0.2).is_err());
    }

    #[test]
    fn profile_errors_vanish_for_fine_core_grid() {
        let p = quartic();
        let coarse = build_grid(0, 20.0, 4).unwrap();
        let fine = build_grid(0, 20.0, 16).unwrap();
        let e = |g: &GridSpec| {
            let f = cutoff_profile(&p, 0.0, 0.001, 0.4, g).unwrap();
            profile_errors(&p, &f, 0.0)
        };
        let (ec, ef) = (e(&coarse), e(&fine));
        // R = 15.8: the cut-off error is negligible, the interpolation error
        // drops by 16 in L2 and 4 in H1
        assert!(ec.l2 / ef.l2 > 10.0);
        assert!(ec.h1 / ef.h1 > 3.0);
    }
}
