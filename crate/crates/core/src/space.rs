//! The broken space `V_N` of tensor-product polynomials of degree `<= k` in
//! each variable, and fields living in it.
//!
//! Global unknowns are ordered element-major; inside an element the `U`, `P`
//! and `Q` blocks follow each other, and inside a block the local index of
//! `P_a(xi) P_b(eta)` is `a + (k + 1) b`.

use crate::error::{Error, Result};
use crate::mesh::TensorMesh;
use crate::quadrature::legendre_eval;

/// The three unknowns of the first-order system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    U = 0,
    P = 1,
    Q = 2,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::U, Field::P, Field::Q];
}

/// Geometry of one rectangle `(x0, x1) x (y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeom {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl ElementGeom {
    pub fn hx(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn hy(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Physical point of reference coordinates `(xi, eta)` in `[-1, 1]^2`.
    #[inline]
    pub fn map(&self, xi: f64, eta: f64) -> (f64, f64) {
        (
            0.5 * (self.x0 + self.x1) + 0.5 * self.hx() * xi,
            0.5 * (self.y0 + self.y1) + 0.5 * self.hy() * eta,
        )
    }

    #[inline]
    pub fn to_reference(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (2.0 * x - self.x0 - self.x1) / self.hx(),
            (2.0 * y - self.y0 - self.y1) / self.hy(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemSpace {
    pub mesh: TensorMesh,
    pub degree: usize,
}

impl FemSpace {
    pub fn new(mesh: TensorMesh, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter("polynomial degree must be >= 1".into()));
        }
        Ok(FemSpace { mesh, degree })
    }

    /// Basis functions per direction, `k + 1`.
    pub fn n1(&self) -> usize {
        self.degree + 1
    }

    /// Basis functions per element and field, `(k + 1)^2`.
    pub fn nb(&self) -> usize {
        self.n1() * self.n1()
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    /// `3 (k + 1)^2 N^2`.
    pub fn num_dofs(&self) -> usize {
        3 * self.nb() * self.num_elements()
    }

    #[inline]
    pub fn dof(&self, element: usize, field: Field, local: usize) -> usize {
        (3 * element + field as usize) * self.nb() + local
    }

    /// Inverse of [`FemSpace::dof`].
    pub fn split_dof(&self, global: usize) -> (usize, Field, usize) {
        let nb = self.nb();
        let block = global / nb;
        (block / 3, Field::ALL[block % 3], global % nb)
    }

    pub fn geom(&self, element: usize) -> ElementGeom {
        let ((x0, x1), (y0, y1)) = self.mesh.element_bounds(element);
        ElementGeom { x0, x1, y0, y1 }
    }
}

/// Coefficients of one scalar function in `V_N`, `(k + 1)^2` per element.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(space: &FemSpace) -> Self {
        DiscreteField {
            degree: space.degree,
            coeffs: vec![0.0; space.nb() * space.num_elements()],
        }
    }

    pub fn nb(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn local(&self, element: usize) -> &[f64] {
        let nb = self.nb();
        &self.coeffs[element * nb..(element + 1) * nb]
    }

    pub fn local_mut(&mut self, element: usize) -> &mut [f64] {
        let nb = self.nb();
        &mut self.coeffs[element * nb..(element + 1) * nb]
    }

    /// Value on `element` at reference coordinates.
    pub fn eval_reference(&self, element: usize, xi: f64, eta: f64) -> f64 {
        let n1 = self.degree + 1;
        let (px, _) = legendre_eval(self.degree, xi);
        let (py, _) = legendre_eval(self.degree, eta);
        let c = self.local(element);
        let mut s = 0.0;
        for b in 0..n1 {
            for a in 0..n1 {
                s += c[a + n1 * b] * px[a] * py[b];
            }
        }
        s
    }

    /// Point value; points on interior edges take the trace from the
    /// left/lower element.
    pub fn eval(&self, space: &FemSpace, x: f64, y: f64) -> Result<f64> {
        let e = space.mesh.locate(x, y)?;
        let g = space.geom(e);
        let (xi, eta) = g.to_reference(x, y);
        Ok(self.eval_reference(e, xi.clamp(-1.0, 1.0), eta.clamp(-1.0, 1.0)))
    }

    pub fn axpy(&mut self, alpha: f64, other: &DiscreteField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }
}

/// Shorthand for [`DiscreteField::eval`].
pub fn eval_field(space: &FemSpace, field: &DiscreteField, x: f64, y: f64) -> Result<f64> {
    field.eval(space, x, y)
}

/// `(U, P, Q)` on a common space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTriple {
    pub u: DiscreteField,
    pub p: DiscreteField,
    pub q: DiscreteField,
}

impl DiscreteTriple {
    pub fn zeros(space: &FemSpace) -> Self {
        DiscreteTriple {
            u: DiscreteField::zeros(space),
            p: DiscreteField::zeros(space),
            q: DiscreteField::zeros(space),
        }
    }

    pub fn field(&self, f: Field) -> &DiscreteField {
        match f {
            Field::U => &self.u,
            Field::P => &self.p,
            Field::Q => &self.q,
        }
    }

    pub fn field_mut(&mut self, f: Field) -> &mut DiscreteField {
        match f {
            Field::U => &mut self.u,
            Field::P => &mut self.p,
            Field::Q => &mut self.q,
        }
    }

    /// Unpacks a global coefficient vector.
    pub fn from_vector(space: &FemSpace, v: &[f64]) -> Result<Self> {
        if v.len() != space.num_dofs() {
            return Err(Error::DimensionMismatch {
                expected: space.num_dofs(),
                actual: v.len(),
            });
        }
        let nb = space.nb();
        let mut t = DiscreteTriple::zeros(space);
        for e in 0..space.num_elements() {
            for f in Field::ALL {
                let start = space.dof(e, f, 0);
                t.field_mut(f).local_mut(e).copy_from_slice(&v[start..start + nb]);
            }
        }
        Ok(t)
    }

    pub fn to_vector(&self, space: &FemSpace) -> Vec<f64> {
        let nb = space.nb();
        let mut v = vec![0.0; space.num_dofs()];
        for e in 0..space.num_elements() {
            for f in Field::ALL {
                let start = space.dof(e, f, 0);
                v[start..start + nb].copy_from_slice(self.field(f).local(e));
            }
        }
        v
    }

    /// `self - other`.
    pub fn sub(&self, other: &DiscreteTriple) -> DiscreteTriple {
        let mut d = self.clone();
        for f in Field::ALL {
            d.field_mut(f).axpy(-1.0, other.field(f));
        }
        d
    }
}
