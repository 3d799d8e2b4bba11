use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::kuhn::Kuhn;
use super::{Field, GridSpec};
use crate::error::{Error, Result};
use crate::linalg::{dot, BandCholesky, CsrMatrix};

/// Exact P1 stiffness and mass matrices, both on the extended lattice and
/// restricted to the degrees of freedom.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub grid: GridSpec,
    pub kuhn: Arc<Kuhn>,
    /// `cube_corners[c * 2^D + b]` is the extended node of corner `b` of cube `c`
    pub cube_corners: Vec<usize>,
    pub ext_stiffness: CsrMatrix,
    pub ext_mass: CsrMatrix,
    /// `Lambda`
    pub stiffness: CsrMatrix,
    /// `I`
    pub mass: CsrMatrix,
    pub ramp_field: Field,
    /// `int |grad l|^2 = 2 / (F a)`
    pub ramp_energy: f64,
}

pub fn assemble(grid: &GridSpec) -> FemMatrices {
    let grid = *grid;
    let kuhn = Arc::new(Kuhn::new(grid.dim()));
    let corners = kuhn.corners();
    let cube_corners = grid.cube_corner_table();
    let kscale = grid.a.powi(grid.dim() as i32 - 2);
    let mscale = grid.a.powi(grid.dim() as i32);

    // one x-slab of cubes per task, concatenated in slab order
    let slab = grid.n.pow(grid.d as u32) * corners;
    let build = |reference: &[f64], scale: f64| -> CsrMatrix {
        let triplets: Vec<(usize, usize, f64)> = cube_corners
            .par_chunks(slab)
            .flat_map_iter(|chunk| {
                let mut local = Vec::with_capacity(chunk.len() * corners);
                for cube in chunk.chunks(corners) {
                    for i in 0..corners {
                        for j in 0..corners {
                            let v = reference[i * corners + j];
                            if v != 0.0 {
                                local.push((cube[i], cube[j], scale * v));
                            }
                        }
                    }
                }
                local
            })
            .collect();
        CsrMatrix::from_triplets(grid.ext_nodes(), grid.ext_nodes(), triplets)
    };
    let ext_stiffness = build(&kuhn.ref_stiffness, kscale);
    let ext_mass = build(&kuhn.ref_mass, mscale);
    let interior: Vec<usize> = (0..grid.dofs).map(|i| grid.dof_to_ext(i)).collect();
    let stiffness = ext_stiffness.restrict(&interior);
    let mass = ext_mass.restrict(&interior);
    FemMatrices {
        grid,
        kuhn,
        cube_corners,
        ext_stiffness,
        ext_mass,
        stiffness,
        mass,
        ramp_field: Field::ramp(grid),
        ramp_energy: 2.0 / grid.effective_half_length(),
    }
}

impl FemMatrices {
    /// `int |grad h|^2` including collar contributions.
    pub fn grad_sq(&self, h: &Field) -> f64 {
        self.ext_stiffness.quad_form(&h.extended())
    }

    /// `int h^2` including collar contributions.
    pub fn l2_sq(&self, h: &Field) -> f64 {
        self.ext_mass.quad_form(&h.extended())
    }

    pub fn h1_sq(&self, h: &Field) -> f64 {
        let e = h.extended();
        self.ext_stiffness.quad_form(&e) + self.ext_mass.quad_form(&e)
    }

    /// `int g h` for two fields.
    pub fn l2_inner(&self, g: &Field, h: &Field) -> f64 {
        self.ext_mass.bilinear(&g.extended(), &h.extended())
    }

    /// Mass-weighted inner product of two DOF vectors (zero boundary).
    pub fn mass_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.bilinear(u, v)
    }

    /// `Lambda + shift * I`
    pub fn shifted_stiffness(&self, shift: f64) -> CsrMatrix {
        self.stiffness.linear_combination(1.0, &self.mass, shift)
    }

    /// Lumped (row-sum) mass.
    pub fn lumped_mass(&self) -> Vec<f64> {
        self.mass.row_sums()
    }

    /// Largest eigenvalue of `Lambda^{-1} I` by power iteration: the best
    /// constant in `||u||^2 <= C ||grad u||^2` for zero-boundary fields.
    pub fn poincare_constant(&self) -> Result<f64> {
        let chol = BandCholesky::factor(&self.stiffness)?;
        let n = self.grid.dofs;
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
        let mut lambda = 0.0;
        for it in 0..10_000 {
            let w = chol.solve(&self.mass.matvec(&v));
            // Rayleigh quotient in the Lambda inner product
            let num = self.mass.bilinear(&v, &v);
            let den = self.stiffness.bilinear(&v, &v);
            let next = num / den;
            let norm = self.stiffness.quad_form(&w).sqrt();
            v = w.iter().map(|x| x / norm).collect();
            if it > 0 && (next - lambda).abs() <= 1e-13 * next {
                return Ok(next);
            }
            lambda = next;
        }
        Err(Error::NoConvergence {
            what: "poincare power iteration",
            iterations: 10_000,
        })
    }
}

/// `C` in `<u, I u> >= C a^{d+1} |u|^2`: the smallest eigenvalue of the
/// unit-cube element mass matrix (every DOF belongs to at least one cube).
pub fn mass_floor_constant(d: usize) -> f64 {
    let k = Kuhn::new(d + 1);
    let c = k.corners();
    let m = DMatrix::from_row_slice(c, c, &k.ref_mass);
    SymmetricEigen::new(m).eigenvalues.min()
}

/// Smallest eigenvalue of the mass matrix by inverse power iteration, or the
/// element-wise floor when the iteration stalls on a clustered spectrum.
pub fn mass_eigen_floor(grid: &GridSpec) -> Result<f64> {
    if grid.dofs > 20_000 {
        return Err(Error::Precondition(format!("N = {} exceeds 20000", grid.dofs)));
    }
    let fem = assemble(grid);
    let chol = BandCholesky::factor(&fem.mass)?;
    let n = grid.dofs;
    let mut v: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -0.7 }).collect();
    let mut lambda = f64::INFINITY;
    let floor = mass_floor_constant(grid.d) * grid.a.powi(grid.dim() as i32);
    for _ in 0..10_000 {
        let nv = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        let rq = fem.mass.quad_form(&v);
        let w = chol.solve(&v);
        let done = (rq - lambda).abs() <= 1e-12 * rq;
        lambda = rq;
        v = w;
        if done {
            assert!(lambda >= floor * (1.0 - 1e-9), "mass eigenvalue {lambda} below floor {floor}");
            return Ok(lambda);
        }
    }
    // clustered spectrum: fall back to the element-wise floor, still a valid lower bound
    log::warn!("mass inverse power iteration stalled at {lambda}; using floor {floor}");
    Ok(floor)
}
