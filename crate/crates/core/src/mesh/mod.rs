//! Lattice domain, piecewise-linear fields and finite-element matrices.
//!
//! The domain is `[-L, L] x [0, 1]^d` discretized with spacing `a = 1/n`.
//! Degrees of freedom are the lattice nodes with `|k| <= F - 1` where
//! `F = floor(L / a)`; the extended lattice adds the collar layers `k = +-F`
//! where fields take their boundary values.

mod fem;
mod kuhn;

pub use fem::{assemble, mass_eigen_floor, mass_floor_constant, FemMatrices};
pub use kuhn::{subdivide_cube, Kuhn, Simplex, TransverseWeights};
pub(crate) use kuhn::{complete_homogeneous, factorial};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    #[serde(rename = "L")]
    pub half_length: f64,
    pub n: usize,
    pub a: f64,
    #[serde(rename = "floorLa")]
    pub floor_la: usize,
    #[serde(rename = "N")]
    pub dofs: usize,
}

pub fn build_grid(d: usize, half_length: f64, n: usize) -> Result<GridSpec> {
    if n < 2 {
        return Err(Error::InvalidGrid(format!("n = {n} must be at least 2")));
    }
    if !(half_length.is_finite() && half_length > 0.0) {
        return Err(Error::InvalidGrid(format!("L = {half_length} must be positive")));
    }
    let a = 1.0 / n as f64;
    // tolerate L = k * a up to rounding
    let floor_la = (half_length * n as f64 + 1e-9).floor() as usize;
    if floor_la < 2 {
        return Err(Error::InvalidGrid(format!(
            "L = {half_length} < 2a = {}: no interior x-nodes",
            2.0 * a
        )));
    }
    let dofs = (2 * floor_la - 1) * (n + 1).pow(d as u32);
    Ok(GridSpec {
        d,
        half_length,
        n,
        a,
        floor_la,
        dofs,
    })
}

impl GridSpec {
    /// Dimension of the full domain, `d + 1`.
    pub fn dim(&self) -> usize {
        self.d + 1
    }

    /// `F a`: the x-position of the collar layer (equals `L` when `L` is a
    /// multiple of `a`).
    pub fn effective_half_length(&self) -> f64 {
        self.floor_la as f64 * self.a
    }

    /// Nodes per transverse block, `(n + 1)^d`.
    pub fn y_block(&self) -> usize {
        (self.n + 1).pow(self.d as u32)
    }

    /// Number of interior x-layers, `2F - 1`.
    pub fn x_layers(&self) -> usize {
        2 * self.floor_la - 1
    }

    /// Number of extended nodes (collar layers included).
    pub fn ext_nodes(&self) -> usize {
        (2 * self.floor_la + 1) * self.y_block()
    }

    /// Number of lattice cubes, `2F n^d`.
    pub fn cubes(&self) -> usize {
        2 * self.floor_la * self.n.pow(self.d as u32)
    }

    /// Volume of the domain `[-Fa, Fa] x [0,1]^d`.
    pub fn volume(&self) -> f64 {
        2.0 * self.effective_half_length()
    }

    pub fn y_linear(&self, iy: &[usize]) -> usize {
        iy.iter().fold(0, |acc, &i| acc * (self.n + 1) + i)
    }

    pub fn y_multi(&self, mut lin: usize) -> Vec<usize> {
        let mut iy = vec![0; self.d];
        for j in (0..self.d).rev() {
            iy[j] = lin % (self.n + 1);
            lin /= self.n + 1;
        }
        iy
    }

    /// DOF index of node `(kx, y)` with `|kx| <= F - 1`.
    pub fn node_index(&self, kx: i64, iy: &[usize]) -> usize {
        let f = self.floor_la as i64;
        debug_assert!(kx.abs() < f);
        (kx + f - 1) as usize * self.y_block() + self.y_linear(iy)
    }

    /// Inverse of [`node_index`](Self::node_index).
    pub fn node_of(&self, index: usize) -> (i64, Vec<usize>) {
        let y = self.y_block();
        let kx = (index / y) as i64 - (self.floor_la as i64 - 1);
        (kx, self.y_multi(index % y))
    }

    pub fn node_coords(&self, index: usize) -> (f64, Vec<f64>) {
        let (kx, iy) = self.node_of(index);
        (kx as f64 * self.a, iy.iter().map(|&i| i as f64 * self.a).collect())
    }

    /// Extended index of node `(kx, y)` with `|kx| <= F`.
    pub fn ext_index(&self, kx: i64, ylin: usize) -> usize {
        (kx + self.floor_la as i64) as usize * self.y_block() + ylin
    }

    /// Extended index of a DOF.
    pub fn dof_to_ext(&self, index: usize) -> usize {
        index + self.y_block()
    }

    /// Lattice x-index of an extended node.
    pub fn ext_kx(&self, ext: usize) -> i64 {
        (ext / self.y_block()) as i64 - self.floor_la as i64
    }

    /// Extended node indices of the `2^D` corners of every cube, cube-major.
    /// Corner bit 0 is the x-direction, bit `j + 1` is `y_j`.
    pub fn cube_corner_table(&self) -> Vec<usize> {
        let corners = 1usize << self.dim();
        let ycubes = self.n.pow(self.d as u32);
        let mut table = Vec::with_capacity(self.cubes() * corners);
        let f = self.floor_la as i64;
        let mut iy = vec![0usize; self.d];
        for cx in 0..2 * f {
            for cyl in 0..ycubes {
                let mut rest = cyl;
                for j in (0..self.d).rev() {
                    iy[j] = rest % self.n;
                    rest /= self.n;
                }
                for b in 0..corners {
                    let kx = cx - f + (b & 1) as i64;
                    let ylin = (0..self.d).fold(0, |acc, j| acc * (self.n + 1) + iy[j] + ((b >> (j + 1)) & 1));
                    table.push(self.ext_index(kx, ylin));
                }
            }
        }
        table
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// `+-1` on the collar layers `x = +-F a`
    Ramp,
    Zero,
}

/// A continuous piecewise-linear function on the Kuhn triangulation.
///
/// JSON form: `{"d", "L", "n", "boundary", "coeffs"}`, with the grid rebuilt
/// and the coefficient count checked on reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FieldFile", try_from = "FieldFile")]
pub struct Field {
    pub grid: GridSpec,
    pub coeffs: Vec<f64>,
    pub boundary: Boundary,
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    d: usize,
    #[serde(rename = "L")]
    half_length: f64,
    n: usize,
    #[serde(default = "ramp")]
    boundary: Boundary,
    coeffs: Vec<f64>,
}

fn ramp() -> Boundary {
    Boundary::Ramp
}

impl From<Field> for FieldFile {
    fn from(f: Field) -> Self {
        Self {
            d: f.grid.d,
            half_length: f.grid.half_length,
            n: f.grid.n,
            boundary: f.boundary,
            coeffs: f.coeffs,
        }
    }
}

impl TryFrom<FieldFile> for Field {
    type Error = Error;

    fn try_from(f: FieldFile) -> Result<Self> {
        Field::new(build_grid(f.d, f.half_length, f.n)?, f.coeffs, f.boundary)
    }
}

impl Field {
    pub fn zeros(grid: GridSpec, boundary: Boundary) -> Self {
        Self {
            grid,
            coeffs: vec![0.0; grid.dofs],
            boundary,
        }
    }

    pub fn new(grid: GridSpec, coeffs: Vec<f64>, boundary: Boundary) -> Result<Self> {
        if coeffs.len() != grid.dofs {
            return Err(Error::Precondition(format!(
                "coefficient vector has length {}, grid has {} dofs",
                coeffs.len(),
                grid.dofs
            )));
        }
        Ok(Self { grid, coeffs, boundary })
    }

    /// Nodal interpolant of `f(x, y)`.
    pub fn from_fn<F: FnMut(f64, &[f64]) -> f64>(grid: GridSpec, boundary: Boundary, mut f: F) -> Self {
        let coeffs = (0..grid.dofs)
            .map(|i| {
                let (x, y) = grid.node_coords(i);
                f(x, &y)
            })
            .collect();
        Self { grid, coeffs, boundary }
    }

    /// The linear ramp `x / (F a)` with ramp boundary values.
    pub fn ramp(grid: GridSpec) -> Self {
        let leff = grid.effective_half_length();
        Self::from_fn(grid, Boundary::Ramp, |x, _| x / leff)
    }

    /// Value on the collar layer at the side of `sign`.
    pub fn boundary_value(&self, sign: f64) -> f64 {
        match self.boundary {
            Boundary::Ramp => sign.signum(),
            Boundary::Zero => 0.0,
        }
    }

    /// Nodal values on the extended lattice, collar layers included.
    pub fn extended(&self) -> Vec<f64> {
        let y = self.grid.y_block();
        let mut ext = Vec::with_capacity(self.grid.ext_nodes());
        ext.extend(std::iter::repeat_n(self.boundary_value(-1.0), y));
        ext.extend_from_slice(&self.coeffs);
        ext.extend(std::iter::repeat_n(self.boundary_value(1.0), y));
        ext
    }

    pub fn sup_norm(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    /// Coefficient-wise difference; the result has zero boundary when both
    /// operands share the same boundary kind.
    pub fn sub(&self, other: &Field) -> Field {
        let boundary = if self.boundary == other.boundary { Boundary::Zero } else { Boundary::Ramp };
        Field {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
            boundary,
        }
    }

    /// Adds a zero-boundary perturbation, keeping this field's boundary.
    pub fn add(&self, v: &Field) -> Field {
        Field {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&v.coeffs).map(|(a, b)| a + b).collect(),
            boundary: self.boundary,
        }
    }
}

/// Barycentric interpolation on the containing Kuhn simplex. Points beyond
/// the collar take the boundary value.
pub fn interpolate(field: &Field, point: &[f64]) -> f64 {
    let g = &field.grid;
    assert_eq!(point.len(), g.dim(), "point must have d + 1 coordinates");
    let leff = g.effective_half_length();
    let x = point[0];
    if x >= leff {
        return field.boundary_value(1.0);
    }
    if x <= -leff {
        return field.boundary_value(-1.0);
    }
    let f = g.floor_la as i64;
    let mut t = vec![0.0; g.dim()];
    let sx = (x + leff) / g.a;
    let cx = (sx.floor() as i64).clamp(0, 2 * f - 1);
    t[0] = (sx - cx as f64).clamp(0.0, 1.0);
    let mut iy = vec![0usize; g.d];
    for j in 0..g.d {
        let s = point[j + 1].clamp(0.0, 1.0) * g.n as f64;
        let c = (s.floor() as usize).min(g.n - 1);
        iy[j] = c;
        t[j + 1] = (s - c as f64).clamp(0.0, 1.0);
    }
    let value_at = |b: usize| -> f64 {
        let kx = cx - f + (b & 1) as i64;
        if kx.abs() >= f {
            return field.boundary_value(kx as f64);
        }
        let y: Vec<usize> = (0..g.d).map(|j| iy[j] + ((b >> (j + 1)) & 1)).collect();
        field.coeffs[g.node_index(kx, &y)]
    };
    kuhn::barycentric(&t).into_iter().map(|(b, w)| w * value_at(b)).sum()
}
