//! Python bindings: plain functions over grids given as `(d, L, n)` and
//! fields as coefficient lists; reports come back as dicts or JSON text.

use std::collections::HashMap;
use std::sync::Arc;

use acgibbs::energy::Energy;
use acgibbs::experiments::{run_main_theorem, run_verification_battery, ExperimentSchedule};
use acgibbs::gaussian::{log_partition_ratio_21, ratio_21_closed_form};
use acgibbs::sampler::estimate_log_z;
use acgibbs::tubular::Tubular;
use acgibbs::{assemble, build_grid, make_quartic_potential, solve_profile, Boundary, Field, GridSpec};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn grid_of(d: usize, l: f64, n: usize) -> PyResult<GridSpec> {
    build_grid(d, l, n).map_err(err)
}

fn field_of(d: usize, l: f64, n: usize, coeffs: Vec<f64>) -> PyResult<Field> {
    Field::new(grid_of(d, l, n)?, coeffs, Boundary::Ramp).map_err(err)
}

/// Grid bookkeeping: `a`, `F = floor(L/a)` and the number of unknowns `N`.
#[pyfunction]
#[pyo3(signature = (d, l, n))]
fn grid(d: usize, l: f64, n: usize) -> PyResult<HashMap<&'static str, f64>> {
    let g = grid_of(d, l, n)?;
    Ok(HashMap::from([
        ("a", g.a),
        ("F", g.floor_la as f64),
        ("N", g.dofs as f64),
        ("L_eff", g.effective_half_length()),
    ]))
}

/// Node positions `x` of the unknowns, in storage order.
#[pyfunction]
fn node_x(d: usize, l: f64, n: usize) -> PyResult<Vec<f64>> {
    let g = grid_of(d, l, n)?;
    Ok((0..g.dofs).map(|i| g.node_coords(i).0).collect())
}

/// `(m, m', m'')` of the quartic profile at each `x`.
#[pyfunction]
fn profile(xs: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
    let p = solve_profile(&make_quartic_potential()).map_err(err)?;
    Ok(xs.iter().map(|&x| (p.value(x), p.derivative(x), p.second_derivative(x))).collect())
}

/// Energy parts of a ramp-boundary field for the quartic potential.
#[pyfunction]
fn energy(d: usize, l: f64, n: usize, coeffs: Vec<f64>) -> PyResult<HashMap<&'static str, f64>> {
    let h = field_of(d, l, n, coeffs)?;
    let r = Energy::new(Arc::new(assemble(&h.grid)), make_quartic_potential()).evaluate(&h);
    Ok(HashMap::from([
        ("gradient_part", r.gradient_part),
        ("potential_part", r.potential_part),
        ("total_raw", r.total_raw),
        ("free_energy", r.free_energy),
    ]))
}

/// Tubular coordinates `{xi, dist, orth_residual}`.
#[pyfunction]
fn project(d: usize, l: f64, n: usize, coeffs: Vec<f64>) -> PyResult<HashMap<&'static str, f64>> {
    let h = field_of(d, l, n, coeffs)?;
    let profile = solve_profile(&make_quartic_potential()).map_err(err)?;
    let c = Tubular::new(Arc::new(assemble(&h.grid)), profile).project(&h).map_err(err)?;
    Ok(HashMap::from([("xi", c.xi), ("dist", c.dist), ("orth_residual", c.orth_residual)]))
}

/// Log of the nu2/nu1 normalization ratio, computed and in closed form.
#[pyfunction]
fn ratio_21(d: usize, l: f64, n: usize, eps: f64) -> PyResult<(f64, f64)> {
    let g = grid_of(d, l, n)?;
    Ok((log_partition_ratio_21(&g, eps).map_err(err)?, ratio_21_closed_form(&g, eps)))
}

/// Thermodynamic-integration estimate of `eps log Z` and its standard error.
#[pyfunction]
#[pyo3(signature = (d, l, n, eps, rungs = 12, samples_per_rung = 4000, seed = 0))]
fn eps_log_z(d: usize, l: f64, n: usize, eps: f64, rungs: usize, samples_per_rung: usize, seed: u64) -> PyResult<(f64, f64)> {
    let g = grid_of(d, l, n)?;
    let z = estimate_log_z(&g, &make_quartic_potential(), eps, rungs, samples_per_rung, seed, 0.15).map_err(err)?;
    Ok((z.eps_log_z, eps * z.std_error))
}

/// Runs a schedule given as JSON and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config, battery = false))]
fn run_experiment(py: Python<'_>, config: &str, battery: bool) -> PyResult<String> {
    let schedule: ExperimentSchedule = serde_json::from_str(config).map_err(err)?;
    let report = py
        .detach(|| {
            if battery {
                run_verification_battery(&schedule)
            } else {
                run_main_theorem(&schedule)
            }
        })
        .map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

#[pymodule]
fn pyacgibbs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    m.add_function(wrap_pyfunction!(node_x, m)?)?;
    m.add_function(wrap_pyfunction!(profile, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_21, m)?)?;
    m.add_function(wrap_pyfunction!(eps_log_z, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
