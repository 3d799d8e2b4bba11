use std::sync::Arc;

use super::*;
use crate::gaussian::{GaussianKind, GaussianSpec};
use crate::mesh::{assemble, build_grid};
use crate::scalar::{make_quartic_potential, solve_profile, PotentialSpec};

fn setup(d: usize, l: f64, n: usize, pot: PotentialSpec) -> (Energy, Tubular) {
    let fem = Arc::new(assemble(&build_grid(d, l, n).unwrap()));
    let t = Tubular::new(fem.clone(), solve_profile(&make_quartic_potential()).unwrap());
    (Energy::new(fem, pot), t)
}

fn probes(n: usize) -> Vec<Vec<f64>> {
    vec![
        vec![1.0; n],
        (0..n).map(|i| (i as f64 * 0.7).sin()).collect(),
        (0..n).map(|i| if i == n / 2 { 1.0 } else { 0.0 }).collect(),
    ]
}

fn covariance_error(chain: MalaChain, spec: &GaussianSpec) -> f64 {
    let n = spec.dim();
    let ps = probes(n);
    let mut s1 = vec![0.0; 3];
    let mut s2 = vec![0.0; 3];
    let mut count = 0.0;
    for s in chain {
        let h = s.unwrap().field;
        for (k, p) in ps.iter().enumerate() {
            let v = dot(p, &h.coeffs);
            s1[k] += v;
            s2[k] += v * v;
        }
        count += 1.0;
    }
    ps.iter()
        .enumerate()
        .map(|(k, p)| {
            let var = s2[k] / count - (s1[k] / count).powi(2);
            let exact = dot(p, &spec.factor.solve(p));
            (var / exact - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn pcn_matches_exact_gaussian() {
    let (e, _) = setup(1, 1.0, 4, PotentialSpec::zero());
    let spec = GaussianSpec::new(e.fem(), GaussianKind::Nu1 { eps: 0.3 }).unwrap();
    let mut cfg = ChainConfig::new(0.3);
    cfg.n_samples = 20_000;
    cfg.burn_in = 200;
    let chain = mala_chain(cfg, e, None).unwrap();
    assert!(covariance_error(chain, &spec) < 0.05);
}

#[test]
fn plain_mala_matches_exact_gaussian() {
    let (e, _) = setup(0, 1.0, 4, PotentialSpec::zero());
    let spec = GaussianSpec::new(e.fem(), GaussianKind::Nu1 { eps: 0.5 }).unwrap();
    let mut cfg = ChainConfig::new(0.5);
    cfg.precondition = Precondition::None;
    cfg.step = 0.05;
    cfg.n_samples = 50_000;
    cfg.thin = 5;
    cfg.burn_in = 2000;
    let chain = mala_chain(cfg, e, None).unwrap();
    assert!(covariance_error(chain, &spec) < 0.1);
}

#[test]
fn acceptance_is_one_for_the_reference_gaussian() {
    let (e, _) = setup(1, 1.0, 4, PotentialSpec::zero());
    let start = e.fem().ramp_field.clone();
    let chain = MalaChain::new(ChainConfig::new(0.2), e.clone(), start).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let mut to = e.fem().ramp_field.clone();
        to.coeffs.iter_mut().for_each(|c| *c += rng.random_range(-0.5..0.5));
        assert!(chain.log_acceptance_ratio(&to).unwrap().abs() < 1e-9);
    }
    // and it is not identically one for the double well
    let (e, t) = setup(1, 1.0, 4, make_quartic_potential());
    let chain = MalaChain::new(ChainConfig::new(0.2), e, t.manifold_point(0.0)).unwrap();
    let to = t.manifold_point(0.3);
    assert!(chain.log_acceptance_ratio(&to).unwrap().abs() > 1e-6);
}

#[test]
fn seeded_chains_are_identical() {
    let (e, t) = setup(1, 2.0, 2, make_quartic_potential());
    let mut cfg = ChainConfig::new(0.3);
    cfg.n_samples = 50;
    cfg.burn_in = 100;
    let a: Vec<f64> = mala_chain(cfg.clone(), e.clone(), Some(&t)).unwrap().map(|s| s.unwrap().energy).collect();
    let b: Vec<f64> = mala_chain(cfg.clone(), e.clone(), Some(&t)).unwrap().map(|s| s.unwrap().energy).collect();
    assert_eq!(a, b);
    cfg.seed = 1;
    let c: Vec<f64> = mala_chain(cfg, e, Some(&t)).unwrap().map(|s| s.unwrap().energy).collect();
    assert_ne!(a, c);
}

#[test]
fn antisymmetric_functional_has_zero_mean() {
    // h -> -h(-x) preserves the target and the boundary data and flips the
    // sign of <h, w> for every even weight w
    let (e, t) = setup(0, 2.0, 4, make_quartic_potential());
    let g = e.fem().grid;
    let w: Vec<f64> = (0..g.dofs).map(|i| (g.node_coords(i).0).cos()).collect();
    let mut cfg = ChainConfig::new(0.5);
    cfg.n_samples = 20_000;
    cfg.burn_in = 2000;
    let xs: Vec<f64> = mala_chain(cfg, e, Some(&t)).unwrap().map(|s| dot(&w, &s.unwrap().field.coeffs)).collect();
    let (m, se) = diagnostics::batch_means(&xs, 20);
    assert!(m.abs() < 4.0 * se, "mean {m}, se {se}");
}

#[test]
fn chains_concentrate_as_eps_decreases() {
    let (e, t) = setup(0, 3.0, 4, make_quartic_potential());
    let median = |eps: f64| {
        let mut cfg = ChainConfig::new(eps);
        cfg.n_samples = 4000;
        cfg.burn_in = 1000;
        let mut d: Vec<f64> = mala_chain(cfg, e.clone(), Some(&t)).unwrap().map(|s| t.dist_to_manifold(&s.unwrap().field)).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d[d.len() / 2]
    };
    let (a, b, c) = (median(0.5), median(0.2), median(0.05));
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn gradient_flow_stays_near_the_manifold() {
    let (e, t) = setup(0, 4.0, 8, make_quartic_potential());
    let a = e.fem().grid.a;
    let mut cfg = ChainConfig::new(0.0);
    cfg.step = 0.2 * a * a;
    let start = t.manifold_point(0.0);
    let d0 = t.dist_to_manifold(&start);
    let mut ula = UlaChain::new(cfg, e, start).unwrap();
    for _ in 0..2000 {
        ula.step().unwrap();
        assert!(t.dist_to_manifold(ula.current()) <= d0 + a * a);
    }
}

#[test]
fn ula_strong_error_decreases_with_step() {
    let (e, t) = setup(0, 2.0, 4, make_quartic_potential());
    let n = e.fem().grid.dofs;
    let horizon = 0.2;
    let fine_steps = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dt = horizon / fine_steps as f64;
    let dw: Vec<Vec<f64>> = (0..fine_steps)
        .map(|_| (0..n).map(|_| dt.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let run = |steps: usize| -> Vec<f64> {
        let mut cfg = ChainConfig::new(0.1);
        cfg.step = horizon / steps as f64;
        let mut ula = UlaChain::new(cfg, e.clone(), t.manifold_point(0.3)).unwrap();
        let group = fine_steps / steps;
        for s in 0..steps {
            let inc: Vec<f64> = (0..n).map(|i| (0..group).map(|j| dw[s * group + j][i]).sum()).collect();
            ula.step_with(&inc).unwrap();
        }
        ula.current().coeffs.clone()
    };
    let reference = run(fine_steps);
    let err = |steps: usize| {
        let x = run(steps);
        x.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let (e8, e16, e32) = (err(8), err(16), err(32));
    assert!(e8 > e16 && e16 > e32, "{e8} {e16} {e32}");
}

#[test]
fn ula_bias_against_mala() {
    let (e, t) = setup(0, 2.0, 4, make_quartic_potential());
    let eps = 0.3;
    let mut cfg = ChainConfig::new(eps);
    cfg.n_samples = 20_000;
    cfg.burn_in = 2000;
    let m_mala: f64 = mala_chain(cfg.clone(), e.clone(), Some(&t)).unwrap().map(|s| s.unwrap().energy).sum::<f64>() / 20_000.0;
    cfg.step = 0.02;
    cfg.thin = 5;
    let m_ula: f64 = unadjusted_langevin(cfg, e, Some(&t)).unwrap().map(|s| s.unwrap().energy).sum::<f64>() / 20_000.0;
    // a visible but bounded first-moment bias
    assert!((m_ula - m_mala).abs() < 0.5 * m_mala.abs().max(0.1), "{m_ula} vs {m_mala}");
}

#[test]
fn ula_detects_blow_up() {
    let (e, t) = setup(0, 2.0, 4, make_quartic_potential());
    let mut cfg = ChainConfig::new(0.1);
    cfg.step = 5.0;
    cfg.n_samples = 100;
    cfg.burn_in = 0;
    let mut ula = unadjusted_langevin(cfg, e, Some(&t)).unwrap();
    let r = (&mut ula).find(|s| s.is_err());
    assert!(matches!(r, Some(Err(Error::BlowUp(_)))));
}

#[test]
fn tail_trivial_cases() {
    let (e, t) = setup(0, 2.0, 4, make_quartic_potential());
    let mut cfg = ChainConfig::new(0.3);
    cfg.n_samples = 10_000;
    cfg.burn_in = 500;
    let zero = estimate_tail(&cfg, &e, &t, 0.0, TailMethod::Direct).unwrap();
    assert_eq!((zero.p_hat, zero.eps_log_p), (1.0, 0.0));
    let huge = estimate_tail(&cfg, &e, &t, 50.0, TailMethod::Direct).unwrap();
    assert!(huge.p_hat == 0.0 && huge.upper_bound_only && huge.ci_high > 0.0);
    assert!(huge.ci_low <= huge.p_hat && huge.p_hat <= huge.ci_high);
}

#[test]
fn tail_is_monotone_in_delta() {
    let (e, t) = setup(0, 2.0, 4, make_quartic_potential());
    let mut cfg = ChainConfig::new(0.3);
    cfg.n_samples = 5000;
    cfg.burn_in = 500;
    let chain = mala_chain(cfg, e, Some(&t)).unwrap();
    let d: Vec<f64> = chain.map(|s| t.dist_to_manifold(&s.unwrap().field)).collect();
    let mut prev = f64::INFINITY;
    for delta in [0.1, 0.2, 0.3, 0.5, 0.8] {
        let est = tail::direct_estimate(&d, delta, 0.3);
        assert!(est.ci_low <= est.p_hat && est.p_hat <= est.ci_high);
        assert!(est.eps_log_p <= prev);
        prev = est.eps_log_p;
    }
}

#[test]
fn importance_agrees_with_direct() {
    let (e, t) = setup(0, 2.0, 4, make_quartic_potential());
    let mut cfg = ChainConfig::new(0.3);
    cfg.n_samples = 20_000;
    cfg.burn_in = 1000;
    let delta = 0.6;
    let direct = estimate_tail(&cfg, &e, &t, delta, TailMethod::Direct).unwrap();
    let is = estimate_tail(&cfg, &e, &t, delta, TailMethod::Importance { reference: Some(0.3), samples: 20_000 }).unwrap();
    assert!(is.ci_low <= is.p_hat && is.p_hat <= is.ci_high);
    assert!(direct.p_hat > 0.0);
    let ratio = is.p_hat / direct.p_hat;
    assert!(ratio > 0.5 && ratio < 2.0, "IS {is:?} vs direct {direct:?}");
}

#[test]
fn log_z_zero_potential() {
    let g = build_grid(0, 1.0, 2).unwrap();
    let r = estimate_log_z(&g, &PotentialSpec::zero(), 0.3, 8, 100, 0, 0.15).unwrap();
    assert_eq!(r.log_z, 0.0);
}

#[test]
fn log_z_quadratic_oracle() {
    // F = u^2 / 2: Gaussian integral in closed form
    let g = build_grid(0, 1.0, 4).unwrap();
    let eps = 0.3;
    let pot = PotentialSpec::from_coefficients(vec![0.0, 0.0, 0.5]);
    let fem = assemble(&g);
    let n = g.dofs;
    let a = fem.stiffness.to_dense() / eps;
    let b = fem.mass.to_dense() / eps;
    let bnd = crate::mesh::Field::zeros(g, crate::mesh::Boundary::Ramp).extended();
    let mb = fem.ext_mass.matvec(&bnd);
    let lin = nalgebra::DVector::from_iterator(n, (0..n).map(|i| mb[g.dof_to_ext(i)] / eps));
    let gamma = 0.5 * dot(&bnd, &mb) / eps;
    let l = nalgebra::DVector::from_vec(fem.ramp_field.coeffs.clone());
    let ab = &a + &b;
    let mu = ab.clone().lu().solve(&(&a * &l - &lin)).unwrap();
    let exact = 0.5 * a.determinant().ln() - 0.5 * ab.determinant().ln() + 0.5 * mu.dot(&(&ab * &mu))
        - 0.5 * l.dot(&(&a * &l))
        - gamma;
    let r = estimate_log_z(&g, &pot, eps, 12, 8000, 1, 0.15).unwrap();
    assert!((r.log_z - exact).abs() < 0.03 * exact.abs() + 0.05, "{} vs {exact}", r.log_z);
}

#[test]
fn log_z_first_rung_matches_exact_sampler() {
    let g = build_grid(0, 1.0, 4).unwrap();
    let eps = 0.3;
    let pot = make_quartic_potential();
    let r = estimate_log_z(&g, &pot, eps, 8, 8000, 2, 0.15).unwrap();
    let fem = Arc::new(assemble(&g));
    let e = Energy::new(fem.clone(), pot);
    let spec = GaussianSpec::new(&fem, GaussianKind::Nu1 { eps }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 20_000;
    let xs: Vec<f64> = (0..draws).map(|_| e.evaluate(&spec.sample_with(&mut rng)).potential_part / eps).collect();
    let m = diagnostics::mean(&xs);
    let se = (diagnostics::variance(&xs) / draws as f64).sqrt();
    let first = r.rungs[0];
    assert_eq!(first.beta, 0.0);
    assert!((first.mean - m).abs() < 4.0 * (se * se + first.std_error * first.std_error).sqrt(), "{first:?} vs {m}");
}
