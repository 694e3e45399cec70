//! Structured box meshes of intervals, quads and hexes.

use crate::error::{Error, Result};
use crate::reference::ReferenceElement;

/// What lies on the plus side of a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Element { element: usize, local_face: usize },
    /// Physical boundary on the `upper` (or lower) end of `axis`.
    Boundary { axis: usize, upper: bool },
}

#[derive(Debug, Clone)]
pub struct Face {
    pub axis: usize,
    pub minus: usize,
    pub minus_local: usize,
    pub plus: Neighbor,
    /// Outward unit normal of the minus element.
    pub normal: [f64; 3],
    /// Ratio of physical to reference face measure.
    pub jacobian: f64,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        matches!(self.plus, Neighbor::Boundary { .. })
    }

    pub fn plus_element(&self) -> Option<(usize, usize)> {
        match self.plus {
            Neighbor::Element { element, local_face } => Some((element, local_face)),
            Neighbor::Boundary { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    /// Cell index along each axis.
    pub index: [usize; 3],
    pub lower: [f64; 3],
    pub width: [f64; 3],
    /// Ratio of physical to reference volume.
    pub jacobian: f64,
    /// Global face id of each local face.
    pub faces: Vec<usize>,
    /// Whether this element is the minus side of each local face.
    pub is_minus: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    lower: [f64; 3],
    upper: [f64; 3],
    cells: [usize; 3],
    elements: Vec<Element>,
    faces: Vec<Face>,
    h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceLabel {
    Inflow,
    Outflow,
    Characteristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceClass {
    /// Sign of β·n⁻ at each face node (-1, 0 or 1).
    pub signs: Vec<i8>,
    pub label: FaceLabel,
}

/// Classifies a face from the minus side given β at its nodes.
pub fn classify_face(normal: [f64; 3], beta: &[[f64; 3]]) -> FaceClass {
    let signs: Vec<i8> = beta
        .iter()
        .map(|b| {
            let bn = b[0] * normal[0] + b[1] * normal[1] + b[2] * normal[2];
            if bn > 0.0 {
                1
            } else if bn < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect();
    let label = if signs.iter().all(|&s| s <= 0) {
        FaceLabel::Inflow
    } else if signs.iter().all(|&s| s >= 0) {
        FaceLabel::Outflow
    } else {
        FaceLabel::Characteristic
    };
    FaceClass { signs, label }
}

impl Mesh {
    /// Uniform mesh of the box `[lower, upper]` with `cells[a]` elements along
    /// axis `a`. Only the first `lower.len()` axes are used.
    pub fn build_box(lower: &[f64], upper: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = lower.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidDimension(dim));
        }
        if upper.len() != dim || cells.len() != dim {
            return Err(Error::InvalidMesh(format!(
                "bounds and cells must all have length {dim}"
            )));
        }
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut n = [1usize; 3];
        for a in 0..dim {
            if cells[a] == 0 {
                return Err(Error::InvalidMesh(format!("zero cells along axis {a}")));
            }
            if !(upper[a] > lower[a]) || !lower[a].is_finite() || !upper[a].is_finite() {
                return Err(Error::InvalidMesh(format!(
                    "empty or invalid extent along axis {a}: [{}, {}]",
                    lower[a], upper[a]
                )));
            }
            lo[a] = lower[a];
            hi[a] = upper[a];
            n[a] = cells[a];
        }
        let mut width = [0.0; 3];
        for a in 0..dim {
            width[a] = (hi[a] - lo[a]) / n[a] as f64;
        }
        let n_el = n[0] * n[1] * n[2];
        let jac: f64 = (0..dim).map(|a| width[a] / 2.0).product();
        let h = (0..dim).map(|a| width[a] * width[a]).sum::<f64>().sqrt();

        let mut elements = Vec::with_capacity(n_el);
        for e in 0..n_el {
            let index = [e % n[0], (e / n[0]) % n[1], e / (n[0] * n[1])];
            let mut lower_corner = [0.0; 3];
            for a in 0..dim {
                lower_corner[a] = lo[a] + index[a] as f64 * width[a];
            }
            elements.push(Element {
                index,
                lower: lower_corner,
                width,
                jacobian: jac,
                faces: vec![usize::MAX; 2 * dim],
                is_minus: vec![false; 2 * dim],
            });
        }

        let stride = [1, n[0], n[0] * n[1]];
        let mut faces = Vec::new();
        for a in 0..dim {
            let face_jac: f64 = (0..dim).filter(|&k| k != a).map(|k| width[k] / 2.0).product();
            let mut normal = [0.0; 3];
            normal[a] = 1.0;
            for e in 0..n_el {
                let ia = elements[e].index[a];
                if ia == 0 {
                    let mut nrm = [0.0; 3];
                    nrm[a] = -1.0;
                    let id = faces.len();
                    faces.push(Face {
                        axis: a,
                        minus: e,
                        minus_local: 2 * a,
                        plus: Neighbor::Boundary { axis: a, upper: false },
                        normal: nrm,
                        jacobian: face_jac,
                    });
                    elements[e].faces[2 * a] = id;
                    elements[e].is_minus[2 * a] = true;
                }
                let id = faces.len();
                let plus = if ia + 1 < n[a] {
                    let nb = e + stride[a];
                    elements[nb].faces[2 * a] = id;
                    elements[nb].is_minus[2 * a] = false;
                    Neighbor::Element { element: nb, local_face: 2 * a }
                } else {
                    Neighbor::Boundary { axis: a, upper: true }
                };
                faces.push(Face {
                    axis: a,
                    minus: e,
                    minus_local: 2 * a + 1,
                    plus,
                    normal,
                    jacobian: face_jac,
                });
                elements[e].faces[2 * a + 1] = id;
                elements[e].is_minus[2 * a + 1] = true;
            }
        }

        Ok(Self {
            dim,
            lower: lo,
            upper: hi,
            cells: n,
            elements,
            faces,
            h,
        })
    }

    /// Unit box `[0,1]^d` with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::build_box(&vec![0.0; dim], &vec![1.0; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> &Element {
        &self.elements[e]
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Largest element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Largest element edge length.
    pub fn max_width(&self) -> f64 {
        self.elements[0].width[..self.dim]
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    /// Smallest element edge length.
    pub fn min_width(&self) -> f64 {
        self.elements[0].width[..self.dim]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.upper[a] - self.lower[a]).product()
    }

    /// Physical coordinates of volume node `i` of element `e`.
    pub fn node_coords(&self, rf: &ReferenceElement, e: usize, i: usize) -> [f64; 3] {
        let el = &self.elements[e];
        let r = rf.node_coords(i);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = el.lower[a] + 0.5 * (r[a] + 1.0) * el.width[a];
        }
        x
    }

    /// Physical coordinates of the nodes of face `f`, read from the minus side.
    pub fn face_node_coords(&self, rf: &ReferenceElement, f: usize) -> Vec<[f64; 3]> {
        let face = &self.faces[f];
        rf.face_map(face.minus_local)
            .iter()
            .map(|&i| self.node_coords(rf, face.minus, i))
            .collect()
    }

    /// Outward unit normal of local reference face `lf` (all elements are
    /// axis-aligned).
    pub fn outward_normal(lf: usize) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[lf / 2] = if lf % 2 == 1 { 1.0 } else { -1.0 };
        n
    }

    /// Elements touching a local face of `e`: the neighbor element and its
    /// local face, if interior.
    pub fn neighbor(&self, e: usize, lf: usize) -> Option<(usize, usize)> {
        let face = &self.faces[self.elements[e].faces[lf]];
        if self.elements[e].is_minus[lf] {
            face.plus_element()
        } else {
            Some((face.minus, face.minus_local))
        }
    }
}
