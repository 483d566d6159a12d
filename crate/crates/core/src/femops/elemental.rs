//! Tensor-product elemental matrices and load vectors.

use super::basis::{gauss_legendre, lagrange, lagrange_deriv, nodes_per_element, split_index};
use crate::error::{Error, Result};

/// Square row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        DenseMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Matrix on the unit element `[0,1]^dim` with a given quadrature order.
fn reference_matrix(dim: usize, p: usize, qpts: usize, diffusion: bool) -> DenseMatrix {
    let n = nodes_per_element(dim, p);
    let (x, w) = gauss_legendre(qpts);
    let vals: Vec<[f64; 3]> = x.iter().map(|&t| lagrange(p, t)).collect();
    let ders: Vec<[f64; 3]> = x.iter().map(|&t| lagrange_deriv(p, t)).collect();
    let mut m = DenseMatrix::zeros(n);
    let nq = qpts.pow(dim as u32);
    for q in 0..nq {
        let qi = split_index(dim, qpts - 1, q);
        let wq: f64 = (0..dim).map(|ax| w[qi[ax]]).product();
        for a in 0..n {
            let ai = split_index(dim, p, a);
            for b in 0..n {
                let bi = split_index(dim, p, b);
                let v = if diffusion {
                    (0..dim)
                        .map(|d| {
                            (0..dim)
                                .map(|ax| {
                                    let (fa, fb) = if ax == d {
                                        (ders[qi[ax]][ai[ax]], ders[qi[ax]][bi[ax]])
                                    } else {
                                        (vals[qi[ax]][ai[ax]], vals[qi[ax]][bi[ax]])
                                    };
                                    fa * fb
                                })
                                .product::<f64>()
                        })
                        .sum::<f64>()
                } else {
                    (0..dim)
                        .map(|ax| vals[qi[ax]][ai[ax]] * vals[qi[ax]][bi[ax]])
                        .product::<f64>()
                };
                m.data[a * n + b] += wq * v;
            }
        }
    }
    m
}

/// Diffusion (stiffness) matrix of an element of side `h`.
pub fn elemental_diffusion(h: f64, p: usize, dim: usize) -> DenseMatrix {
    reference_matrix(dim, p, p + 1, true).scaled(h.powi(dim as i32 - 2))
}

/// Mass matrix of an element of side `h`.
pub fn elemental_mass(h: f64, p: usize, dim: usize) -> DenseMatrix {
    reference_matrix(dim, p, p + 1, false).scaled(h.powi(dim as i32))
}

/// Load vector `∫ f φ_a` over the element with lower corner `lo` and side `h`.
pub fn elemental_load(f: &dyn Fn([f64; 3]) -> f64, lo: [f64; 3], h: f64, p: usize, dim: usize) -> Vec<f64> {
    let n = nodes_per_element(dim, p);
    let qpts = p + 1;
    let (x, w) = gauss_legendre(qpts);
    let vals: Vec<[f64; 3]> = x.iter().map(|&t| lagrange(p, t)).collect();
    let mut out = vec![0.0; n];
    let vol = h.powi(dim as i32);
    for q in 0..qpts.pow(dim as u32) {
        let qi = split_index(dim, qpts - 1, q);
        let mut pt = lo;
        for ax in 0..dim {
            pt[ax] = lo[ax] + h * x[qi[ax]];
        }
        let fq = f(pt) * vol * (0..dim).map(|ax| w[qi[ax]]).product::<f64>();
        for (a, o) in out.iter_mut().enumerate() {
            let ai = split_index(dim, p, a);
            *o += fq * (0..dim).map(|ax| vals[qi[ax]][ai[ax]]).product::<f64>();
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatorKind {
    /// `-∇·(c ∇u)` with constant `c`.
    Diffusion(f64),
    Mass,
    /// The identity on every element; counts node multiplicity.
    Identity,
}

/// Elemental operator for one `(dim, p)`. Element matrices on a level are a
/// reference matrix times a power of the element size, so only the
/// reference is stored.
#[derive(Clone, Debug)]
pub struct ElementalOperator {
    pub kind: OperatorKind,
    pub dim: usize,
    pub p: usize,
    reference: DenseMatrix,
}

impl ElementalOperator {
    pub fn new(kind: OperatorKind, dim: usize, p: usize) -> Result<Self> {
        crate::nodes::check_order(p)?;
        if dim != 2 && dim != 3 {
            return Err(Error::Domain(format!("dimension {dim} is not 2 or 3")));
        }
        let reference = match kind {
            OperatorKind::Diffusion(c) => reference_matrix(dim, p, p + 1, true).scaled(c),
            OperatorKind::Mass => reference_matrix(dim, p, p + 1, false),
            OperatorKind::Identity => {
                let n = nodes_per_element(dim, p);
                let mut m = DenseMatrix::zeros(n);
                for i in 0..n {
                    m.data[i * n + i] = 1.0;
                }
                m
            }
        };
        Ok(ElementalOperator {
            kind,
            dim,
            p,
            reference,
        })
    }

    pub fn diffusion(dim: usize, p: usize) -> Result<Self> {
        Self::new(OperatorKind::Diffusion(1.0), dim, p)
    }

    pub fn reference(&self) -> &DenseMatrix {
        &self.reference
    }

    /// Factor turning the reference matrix into the matrix of an element
    /// of side `h`.
    pub fn scale(&self, h: f64) -> f64 {
        match self.kind {
            OperatorKind::Diffusion(_) => h.powi(self.dim as i32 - 2),
            OperatorKind::Mass => h.powi(self.dim as i32),
            OperatorKind::Identity => 1.0,
        }
    }

    pub fn matrix(&self, h: f64) -> DenseMatrix {
        self.reference.scaled(self.scale(h))
    }

    pub fn nodes_per_element(&self) -> usize {
        self.reference.n
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.reference.n;
        (0..n).all(|i| (0..n).all(|j| self.reference.get(i, j) == self.reference.get(j, i)))
    }
}
