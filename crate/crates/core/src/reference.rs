//! Gauss-Lobatto-Legendre nodal reference element on `[-1, 1]^d`.
//!
//! Volume nodes are the tensor product of the 1D GLL points with the x index
//! running fastest. Reference face `2a` is the face `r_a = -1`, face `2a + 1`
//! is `r_a = +1`. Face nodes are listed with the remaining axes in ascending
//! order (lowest axis fastest), so two elements sharing an axis-aligned face
//! enumerate its nodes in the same physical order.

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 16;

const NEWTON_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct ReferenceElement {
    p: usize,
    d: usize,
    nodes_1d: Vec<f64>,
    weights_1d: Vec<f64>,
    /// Row-major `(p+1) x (p+1)`: `diff_1d[q][j] = l_j'(x_q)`.
    diff_1d: Vec<f64>,
    face_maps: Vec<Vec<usize>>,
    volume_weights: Vec<f64>,
    face_weights: Vec<f64>,
}

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let (mut dp_prev, mut dp) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        let dp_next = dp_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// GLL nodes: `±1` plus the roots of `P_p'`, found by Newton's method from
/// Chebyshev-Gauss-Lobatto initial guesses.
pub fn gll_nodes(p: usize) -> Vec<f64> {
    let n = p + 1;
    let mut x: Vec<f64> = (0..n)
        .map(|i| -(std::f64::consts::PI * i as f64 / p as f64).cos())
        .collect();
    x[0] = -1.0;
    x[p] = 1.0;
    let pf = p as f64;
    for xi in x.iter_mut().take(p).skip(1) {
        for _ in 0..100 {
            let (lp, dlp) = legendre(p, *xi);
            // Legendre ODE: (1 - x^2) P'' = 2x P' - p(p+1) P
            let d2 = (2.0 * *xi * dlp - pf * (pf + 1.0) * lp) / (1.0 - *xi * *xi);
            let step = dlp / d2;
            *xi -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
    }
    // enforce exact symmetry
    for i in 0..n / 2 {
        let s = 0.5 * (x[p - i] - x[i]);
        x[i] = -s;
        x[p - i] = s;
    }
    if n % 2 == 1 {
        x[p / 2] = 0.0;
    }
    x
}

pub fn gll_weights(p: usize, nodes: &[f64]) -> Vec<f64> {
    let pf = p as f64;
    nodes
        .iter()
        .map(|&x| {
            let (lp, _) = legendre(p, x);
            2.0 / (pf * (pf + 1.0) * lp * lp)
        })
        .collect()
}

/// Lagrange differentiation matrix on arbitrary distinct nodes via
/// barycentric weights, with the diagonal fixed by the zero row-sum identity.
pub fn differentiation_matrix(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let bary: Vec<f64> = (0..n)
        .map(|j| {
            1.0 / (0..n)
                .filter(|&k| k != j)
                .map(|k| nodes[j] - nodes[k])
                .product::<f64>()
        })
        .collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = bary[j] / bary[i] / (nodes[i] - nodes[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

/// Lagrange basis functions on `nodes` evaluated at `x`.
pub fn lagrange_basis(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|j| {
            (0..n)
                .filter(|&k| k != j)
                .map(|k| (x - nodes[k]) / (nodes[j] - nodes[k]))
                .product()
        })
        .collect()
}

impl ReferenceElement {
    pub fn new(p: usize, d: usize) -> Result<Self> {
        if p == 0 || p > MAX_ORDER {
            return Err(Error::InvalidOrder(p));
        }
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidDimension(d));
        }
        let nodes_1d = gll_nodes(p);
        let weights_1d = gll_weights(p, &nodes_1d);
        let diff_1d = differentiation_matrix(&nodes_1d);
        let n1 = p + 1;
        let nv = n1.pow(d as u32);
        let nf = n1.pow(d as u32 - 1);

        let mut volume_weights = vec![1.0; nv];
        for (i, w) in volume_weights.iter_mut().enumerate() {
            let mut idx = i;
            for _ in 0..d {
                *w *= weights_1d[idx % n1];
                idx /= n1;
            }
        }
        let mut face_weights = vec![1.0; nf];
        for (s, w) in face_weights.iter_mut().enumerate() {
            let mut idx = s;
            for _ in 0..d - 1 {
                *w *= weights_1d[idx % n1];
                idx /= n1;
            }
        }

        let mut face_maps = Vec::with_capacity(2 * d);
        for axis in 0..d {
            for side in 0..2 {
                let fixed = if side == 0 { 0 } else { p };
                let map = (0..nf)
                    .map(|s| {
                        let mut tangential = s;
                        let mut multi = [0usize; 3];
                        for (k, m) in multi.iter_mut().enumerate().take(d) {
                            if k == axis {
                                *m = fixed;
                            } else {
                                *m = tangential % n1;
                                tangential /= n1;
                            }
                        }
                        multi[0] + n1 * (multi[1] + n1 * multi[2])
                    })
                    .collect();
                face_maps.push(map);
            }
        }

        Ok(Self {
            p,
            d,
            nodes_1d,
            weights_1d,
            diff_1d,
            face_maps,
            volume_weights,
            face_weights,
        })
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn nodes_1d(&self) -> &[f64] {
        &self.nodes_1d
    }

    pub fn weights_1d(&self) -> &[f64] {
        &self.weights_1d
    }

    /// `diff_1d()[q * (p+1) + j]` is the derivative of the j-th 1D Lagrange
    /// polynomial at node q.
    pub fn diff_1d(&self) -> &[f64] {
        &self.diff_1d
    }

    pub fn n_1d(&self) -> usize {
        self.p + 1
    }

    /// Number of volume nodes, `(p+1)^d`.
    pub fn n_volume(&self) -> usize {
        self.volume_weights.len()
    }

    /// Number of nodes on one face, `(p+1)^(d-1)`.
    pub fn n_face(&self) -> usize {
        self.face_weights.len()
    }

    pub fn n_faces(&self) -> usize {
        2 * self.d
    }

    pub fn face_map(&self, face: usize) -> &[usize] {
        &self.face_maps[face]
    }

    pub fn face_maps(&self) -> &[Vec<usize>] {
        &self.face_maps
    }

    /// Tensor-product quadrature weights on the reference volume.
    pub fn volume_weights(&self) -> &[f64] {
        &self.volume_weights
    }

    /// Tensor-product quadrature weights on a reference face.
    pub fn face_weights(&self) -> &[f64] {
        &self.face_weights
    }

    /// Per-axis 1D node indices of volume node `i`.
    pub fn multi_index(&self, i: usize) -> [usize; 3] {
        let n1 = self.p + 1;
        let mut out = [0; 3];
        let mut idx = i;
        for o in out.iter_mut().take(self.d) {
            *o = idx % n1;
            idx /= n1;
        }
        out
    }

    /// Reference coordinates of volume node `i` (unused axes are zero).
    pub fn node_coords(&self, i: usize) -> [f64; 3] {
        let m = self.multi_index(i);
        let mut r = [0.0; 3];
        for k in 0..self.d {
            r[k] = self.nodes_1d[m[k]];
        }
        r
    }

    /// Nonzero entries of row `q` of the derivative along `axis`:
    /// `(i, dphi_i/dr_axis (x_q))`.
    pub fn derivative_row(&self, axis: usize, q: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let n1 = self.p + 1;
        let stride = n1.pow(axis as u32);
        let mq = self.multi_index(q);
        let base = q - mq[axis] * stride;
        let row = mq[axis];
        (0..n1).map(move |j| (base + j * stride, self.diff_1d[row * n1 + j]))
    }

    /// Applies the reference derivative along `axis` to nodal values.
    pub fn differentiate(&self, axis: usize, values: &[f64]) -> Vec<f64> {
        (0..self.n_volume())
            .map(|q| {
                self.derivative_row(axis, q)
                    .map(|(i, dv)| dv * values[i])
                    .sum()
            })
            .collect()
    }

    pub fn restrict_to_face(&self, face: usize, volume: &[f64]) -> Vec<f64> {
        self.face_maps[face].iter().map(|&i| volume[i]).collect()
    }

    pub fn lift_from_face(&self, face: usize, face_values: &[f64], volume: &mut [f64]) {
        for (&i, &v) in self.face_maps[face].iter().zip(face_values) {
            volume[i] = v;
        }
    }
}
