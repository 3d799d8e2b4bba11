use std::sync::Arc;

use acgibbs::energy::Energy;
use acgibbs::experiments::{run_verification_battery, validate_schedule, ExperimentSchedule};
use acgibbs::sampler::{estimate_tail, mala_chain, ChainConfig, TailMethod};
use acgibbs::tubular::Tubular;
use acgibbs::{assemble, build_grid, make_quartic_potential, solve_profile, Field};

#[test]
fn shipped_config_validates() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.json")).unwrap();
    let s: ExperimentSchedule = serde_json::from_str(&text).unwrap();
    let c = validate_schedule(&s).unwrap();
    assert_eq!(c.rows.len(), 4);
    assert!(c.rows.windows(2).all(|w| w[0].dofs <= w[1].dofs));
}

#[test]
fn field_file_to_tubular_coordinates() {
    let g = build_grid(1, 3.0, 4).unwrap();
    let fem = Arc::new(assemble(&g));
    let profile = solve_profile(&make_quartic_potential()).unwrap();
    let t = Tubular::new(fem.clone(), profile);
    let h = t.manifold_point(0.4);
    let back: Field = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
    let c = t.project(&back).unwrap();
    assert!((c.xi - 0.4).abs() < 1e-2);
    let e = Energy::new(fem, make_quartic_potential());
    assert!(e.free_energy(&back).abs() < 0.05);
}

#[test]
fn chain_stays_near_the_manifold_at_small_eps() {
    let g = build_grid(0, 4.0, 4).unwrap();
    let fem = Arc::new(assemble(&g));
    let pot = make_quartic_potential();
    let e = Energy::new(fem.clone(), pot.clone());
    let t = Tubular::new(fem, solve_profile(&pot).unwrap());
    let mut cfg = ChainConfig::new(0.02);
    cfg.n_samples = 2000;
    cfg.seed = 9;
    let dists: Vec<f64> = mala_chain(cfg.clone(), e.clone(), Some(&t))
        .unwrap()
        .map(|s| t.dist_to_manifold(&s.unwrap().field))
        .collect();
    let median = {
        let mut d = dists.clone();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d[d.len() / 2]
    };
    assert!(median < 0.3, "median {median}");
    let tail = estimate_tail(&cfg, &e, &t, 0.6, TailMethod::Direct).unwrap();
    assert!(tail.p_hat < 0.05, "{tail:?}");
}

#[test]
fn default_battery_has_no_hard_failures() {
    let mut s = ExperimentSchedule::default_for(vec![0.5, 0.2]);
    s.samples = 1000;
    let r = run_verification_battery(&s).unwrap();
    assert!(!r.hard_failure(), "{:?}", r.checks);
    for name in ["ratio_21", "ratio_31", "energy_gradient", "fermi_gradient", "slice_inequality"] {
        assert_eq!(r.checks.iter().filter(|c| c.check == name).count(), 2, "{name}");
    }
}
