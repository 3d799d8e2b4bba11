//! Kuhn (Freudenthal) triangulation of the unit cube in `D` dimensions.
//!
//! The simplex for the permutation `p` is the monotone lattice path
//! `0, e_{p1}, e_{p1} + e_{p2}, ...`; corners are encoded as bitmasks.

use nalgebra::{DMatrix, DVector};

use super::GridSpec;

#[derive(Debug, Clone)]
pub struct Kuhn {
    pub dim: usize,
    /// vertex bitmasks of each simplex, in path order
    pub simplices: Vec<Vec<usize>>,
    /// `int grad phi_i . grad phi_j` over the unit cube, `2^D x 2^D` row-major
    pub ref_stiffness: Vec<f64>,
    /// `int phi_i phi_j` over the unit cube
    pub ref_mass: Vec<f64>,
}

impl Kuhn {
    pub fn new(dim: usize) -> Self {
        let corners = 1usize << dim;
        let perms = permutations(dim);
        let vol = 1.0 / factorial(dim);
        let mut ref_stiffness = vec![0.0; corners * corners];
        let mut ref_mass = vec![0.0; corners * corners];
        let mut simplices = Vec::with_capacity(perms.len());
        for p in &perms {
            let mut verts = vec![0usize];
            for &axis in p {
                verts.push(verts.last().unwrap() | (1 << axis));
            }
            let grads = barycentric_gradients(p, dim);
            for i in 0..=dim {
                for j in 0..=dim {
                    let gij: f64 = (0..dim).map(|k| grads[i][k] * grads[j][k]).sum();
                    let (vi, vj) = (verts[i], verts[j]);
                    ref_stiffness[vi * corners + vj] += vol * gij;
                    let m = if i == j { 2.0 } else { 1.0 };
                    ref_mass[vi * corners + vj] += vol * m / ((dim + 1) * (dim + 2)) as f64;
                }
            }
            simplices.push(verts);
        }
        Self {
            dim,
            simplices,
            ref_stiffness,
            ref_mass,
        }
    }

    pub fn corners(&self) -> usize {
        1 << self.dim
    }

    /// `int d_axis phi_i d_axis phi_j` over the unit cube.
    pub fn directional_stiffness(&self, axis: usize) -> Vec<f64> {
        let corners = self.corners();
        let vol = self.simplex_volume();
        let mut out = vec![0.0; corners * corners];
        for (verts, p) in self.simplices.iter().zip(permutations(self.dim)) {
            let grads = barycentric_gradients(&p, self.dim);
            for i in 0..=self.dim {
                for j in 0..=self.dim {
                    out[verts[i] * corners + verts[j]] += vol * grads[i][axis] * grads[j][axis];
                }
            }
        }
        out
    }

    /// Reference simplex volume `1 / D!`.
    pub fn simplex_volume(&self) -> f64 {
        1.0 / factorial(self.dim)
    }

    /// Transverse integrals `w_j(t) = int_{[0,1]^d} phi_j(t, s) ds` of the
    /// cube hat functions, evaluated at `t_nodes`. Indexed `[corner][node]`.
    pub fn transverse_weights(&self, t_nodes: &[f64]) -> TransverseWeights {
        let dim = self.dim;
        let corners = self.corners();
        // moments int_cube x^k phi_j for k = 0..=D; w_j has degree <= D
        let mut moments = vec![vec![0.0; dim + 1]; corners];
        for verts in &self.simplices {
            let xs: Vec<f64> = verts.iter().map(|&v| (v & 1) as f64).collect();
            for &vj in verts {
                let mut with_j = xs.clone();
                with_j.push((vj & 1) as f64);
                let h = complete_homogeneous(&with_j, dim);
                for k in 0..=dim {
                    // vol * D! * k! / (D + k + 1)! with vol * D! = 1
                    let coef = factorial(k) / factorial(dim + k + 1);
                    moments[vj][k] += coef * h[k];
                }
            }
        }
        let hilbert = DMatrix::from_fn(dim + 1, dim + 1, |k, m| 1.0 / (k + m + 1) as f64);
        let lu = hilbert.lu();
        let values = moments
            .iter()
            .map(|mom| {
                let alpha = lu.solve(&DVector::from_column_slice(mom)).expect("Hilbert system is regular");
                t_nodes
                    .iter()
                    .map(|&t| alpha.iter().rev().fold(0.0, |acc, c| acc * t + c))
                    .collect()
            })
            .collect();
        TransverseWeights {
            nodes: t_nodes.to_vec(),
            values,
        }
    }
}

/// Transverse hat-function weights at fixed quadrature nodes in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TransverseWeights {
    pub nodes: Vec<f64>,
    /// `values[corner][q]`
    pub values: Vec<Vec<f64>>,
}

/// A `(d+1)`-simplex given by its vertex coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    pub vertices: Vec<Vec<f64>>,
}

impl Simplex {
    pub fn volume(&self) -> f64 {
        let dim = self.vertices.len() - 1;
        let v0 = &self.vertices[0];
        let m = DMatrix::from_fn(dim, dim, |i, j| self.vertices[j + 1][i] - v0[i]);
        m.determinant().abs() / factorial(dim)
    }
}

/// The Kuhn simplices of the lattice cube with lower corner `corner`.
pub fn subdivide_cube(grid: &GridSpec, corner: &[f64]) -> Vec<Simplex> {
    let dim = grid.dim();
    assert_eq!(corner.len(), dim);
    permutations(dim)
        .iter()
        .map(|p| {
            let mut v = corner.to_vec();
            let mut vertices = vec![v.clone()];
            for &axis in p {
                v[axis] += grid.a;
                vertices.push(v.clone());
            }
            Simplex { vertices }
        })
        .collect()
}

/// Corner bitmasks and barycentric weights of the simplex containing the
/// local point `t` in the unit cube.
pub(crate) fn barycentric(t: &[f64]) -> Vec<(usize, f64)> {
    let dim = t.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| t[j].partial_cmp(&t[i]).unwrap().then(i.cmp(&j)));
    let mut out = Vec::with_capacity(dim + 1);
    let mut mask = 0usize;
    out.push((mask, 1.0 - t[order[0]]));
    for i in 0..dim {
        mask |= 1 << order[i];
        let next = if i + 1 < dim { t[order[i + 1]] } else { 0.0 };
        out.push((mask, t[order[i]] - next));
    }
    out
}

fn barycentric_gradients(p: &[usize], dim: usize) -> Vec<Vec<f64>> {
    let e = |axis: usize| {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    };
    let mut grads = Vec::with_capacity(dim + 1);
    grads.push(e(p[0]).iter().map(|v| -v).collect());
    for i in 0..dim {
        let mut g = e(p[i]);
        if i + 1 < dim {
            g[p[i + 1]] -= 1.0;
        }
        grads.push(g);
    }
    grads
}

/// Complete homogeneous symmetric polynomials `h_0..=h_max` of `xs`.
pub(crate) fn complete_homogeneous(xs: &[f64], max: usize) -> Vec<f64> {
    let mut h = vec![0.0; max + 1];
    h[0] = 1.0;
    for &x in xs {
        // h_new[k] = sum_j x^j h_old[k - j] = h_old[k] + x h_new[k - 1]
        for k in 1..=max {
            h[k] += x * h[k - 1];
        }
    }
    h
}

pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}
