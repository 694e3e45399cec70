//! Face-local trace updates and field norms.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flux::FluxScheme;
use crate::local::Discretization;
use crate::model::{BoundaryKind, Model};

/// Order in which elements and faces are handed to the worker pool. Results
/// do not depend on it; it exists to check exactly that.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProcessingOrder {
    #[default]
    Natural,
    Reversed,
}

/// Computes the weighted trace of every face from the element fields at
/// time `t` (boundary data are evaluated at `t`).
pub fn update_traces(
    disc: &Discretization,
    fields: &[f64],
    t: f64,
    order: ProcessingOrder,
    out: &mut [f64],
) -> Result<()> {
    if fields.len() != disc.field_len() {
        return Err(Error::DimensionMismatch {
            expected: disc.field_len(),
            got: fields.len(),
        });
    }
    if out.len() != disc.trace_len() {
        return Err(Error::DimensionMismatch {
            expected: disc.trace_len(),
            got: out.len(),
        });
    }
    let fb = disc.face_block_size();
    let work = |(f, slot): (usize, &mut [f64])| face_trace(disc, fields, t, f, slot);
    match order {
        ProcessingOrder::Natural => out.par_chunks_mut(fb).enumerate().try_for_each(work),
        ProcessingOrder::Reversed => out.par_chunks_mut(fb).enumerate().rev().try_for_each(work),
    }
}

/// Trace of a single face.
pub fn face_trace(
    disc: &Discretization,
    fields: &[f64],
    t: f64,
    f: usize,
    out: &mut [f64],
) -> Result<()> {
    let rf = disc.reference();
    let mesh = disc.mesh();
    let nv = rf.n_volume();
    let nf = rf.n_face();
    let bs = disc.block_size();
    let face = mesh.face(f);
    let fd = disc.face(f);
    let n = face.normal;
    let minus = &fields[face.minus * bs..(face.minus + 1) * bs];
    let map_m = rf.face_map(face.minus_local);
    let plus = face.plus_element().map(|(pe, plf)| (&fields[pe * bs..(pe + 1) * bs], rf.face_map(plf)));

    match disc.model() {
        Model::Transport(tr) => {
            for s in 0..nf {
                let um = minus[map_m[s]];
                let up = match plus {
                    Some((pf, map_p)) => pf[map_p[s]],
                    None => (tr.inflow)(&fd.x[s], t),
                };
                let b = fd.bn[s];
                if plus.is_none() && b == 0.0 {
                    // tangential flow on the boundary: take the data as is
                    out[s] = up;
                    continue;
                }
                out[s] = match disc.flux() {
                    FluxScheme::Npc => {
                        let (tm, tp) = (fd.tau_minus[s], fd.tau_plus[s]);
                        if tm + tp > 0.0 {
                            (tm * um + tp * up + b * (um - up)) / (tm + tp)
                        } else {
                            // fully characteristic node: the trace is not
                            // seen by either side
                            0.5 * (um + up)
                        }
                    }
                    _ => 0.5 * b * (um - up) + 0.5 * fd.tau_minus[s] * (um + up),
                };
            }
        }
        Model::ShallowWater(sw) => {
            let a = sw.normal_jacobian(&n);
            let abs_a = sw.abs_normal_jacobian(&n);
            for s in 0..nf {
                let um = [minus[map_m[s]], minus[nv + map_m[s]], minus[2 * nv + map_m[s]]];
                let up = match plus {
                    Some((pf, map_p)) => [pf[map_p[s]], pf[nv + map_p[s]], pf[2 * nv + map_p[s]]],
                    None => {
                        // reflecting wall: mirror the normal momentum
                        let mn = um[1] * n[0] + um[2] * n[1];
                        [um[0], um[1] - 2.0 * mn * n[0], um[2] - 2.0 * mn * n[1]]
                    }
                };
                for r in 0..3 {
                    let mut v = 0.0;
                    for c in 0..3 {
                        v += 0.5 * a[r][c] * (um[c] - up[c]) + 0.5 * abs_a[r][c] * (um[c] + up[c]);
                    }
                    out[r * nf + s] = v;
                }
            }
        }
        Model::ConvectionDiffusion(cd) => {
            let d = disc.dim();
            let k = face.axis;
            let nk = n[k];
            for s in 0..nf {
                let um = minus[d * nv + map_m[s]];
                let sm = minus[k * nv + map_m[s]] * nk;
                out[s] = match (plus, fd.boundary) {
                    (Some((pf, map_p)), _) => {
                        let up = pf[d * nv + map_p[s]];
                        let sp = pf[k * nv + map_p[s]] * nk;
                        let (tm, tp) = (fd.tau_minus[s], fd.tau_plus[s]);
                        if !(tm + tp > 0.0) {
                            return Err(Error::DegenerateFace { face: f });
                        }
                        let b = fd.bn[s];
                        (sm - sp + b * (um - up) + tm * um + tp * up) / (tm + tp)
                    }
                    (None, Some(BoundaryKind::Neumann)) => {
                        let tm = fd.tau_minus[s];
                        if !(tm > 0.0) {
                            return Err(Error::DegenerateFace { face: f });
                        }
                        um + (sm - (cd.neumann)(&fd.x[s], t)) / tm
                    }
                    (None, _) => (cd.dirichlet)(&fd.x[s], t),
                };
            }
        }
    }
    Ok(())
}

/// Sum with pairwise (cascade) reduction; deterministic for a given input
/// order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Per-element `sum_c sum_q W_q J (a - b)^2` over the selected components.
pub fn element_squared_differences(
    disc: &Discretization,
    a: &[f64],
    b: &[f64],
    components: &[usize],
) -> Vec<f64> {
    let nv = disc.reference().n_volume();
    let bs = disc.block_size();
    let w = disc.reference().volume_weights();
    (0..disc.mesh().n_elements())
        .into_par_iter()
        .map(|e| {
            let jac = disc.mesh().element(e).jacobian;
            let mut acc = 0.0;
            for &c in components {
                let off = e * bs + c * nv;
                for q in 0..nv {
                    let d = a[off + q] - b[off + q];
                    acc += w[q] * d * d;
                }
            }
            acc * jac
        })
        .collect()
}

/// Discrete L2 norm of `a - b` over the selected components.
pub fn difference_norm(disc: &Discretization, a: &[f64], b: &[f64], components: &[usize]) -> f64 {
    pairwise_sum(&element_squared_differences(disc, a, b, components)).sqrt()
}

/// L2 norm of the change between two iterates, summed over all components.
pub fn residual_norm(disc: &Discretization, current: &[f64], previous: &[f64]) -> f64 {
    let all: Vec<usize> = (0..disc.n_components()).collect();
    difference_norm(disc, current, previous, &all)
}
