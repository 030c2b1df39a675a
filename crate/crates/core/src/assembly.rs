//! Assembly of the LDG bilinear form
//!
//! ```text
//! B(W; z) = T1 + T2 + T3 + T4 = (f, v),   W = (U, P, Q),  z = (v, s, r)
//! ```
//!
//! with upwind traces `U^-` for convection, `U^-` in the `s`/`r` equations
//! and `P^+`/`Q^+` in the `v` equation (alternating fluxes). Interior edges
//! use `[v] = v^+ - v^-`; at the inflow edges `[v]_0 = v^+`, at the outflow
//! edges `[v]_N = -v^-`. The `U`-trace vanishes on the boundary, so the
//! `s`/`r` equations only see interior edges.
//!
//! Every element contributes a fixed set of `(k+1)^2 x (k+1)^2` blocks,
//! coupling it to itself and to its four neighbours. [`BlockOperator`] keeps
//! those blocks; [`SparseSystem`] is the flattened CSR matrix.

use std::io::Write;

use crate::error::{Error, Result};
use crate::frontal::GridSystem;
use crate::problem::Problem;
use crate::quadrature::{legendre_norm_sq, BasisTable};
use crate::space::{FemSpace, Field};

/// Penalty weights on the outflow edges and the quadrature order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Gauss points per direction for volume and edge integrals.
    pub quad_points: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            lambda1: 0.0,
            lambda2: 0.0,
            quad_points: 5,
        }
    }
}

/// Upper bound accepted for the penalty weights.
pub const MAX_LAMBDA: f64 = 1e6;

impl AssemblyOptions {
    pub fn validate(&self, degree: usize) -> Result<()> {
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(0.0..=MAX_LAMBDA).contains(&l) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, {MAX_LAMBDA:e}], got {l}"
                )));
            }
        }
        if self.quad_points < degree + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} quadrature points cannot integrate the degree-{degree} mass matrix",
                self.quad_points
            )));
        }
        Ok(())
    }
}

/// Dense `nb x nb` block, row-major (row = test function, column = trial).
pub type Block = Vec<f64>;

/// The non-zero blocks contributed by one element's test functions.
///
/// Names read `<test><trial>_<where>`: `vp_right` couples the `v` test
/// functions of this element to `P` on the right neighbour.
#[derive(Debug, Clone, Default)]
pub struct ElementBlocks {
    pub vu_self: Block,
    pub vp_self: Block,
    pub vq_self: Block,
    pub su_self: Block,
    /// Diagonal of the `(s, P)` block, `eps^-1` times the local mass.
    pub sp_diag: Vec<f64>,
    pub ru_self: Block,
    /// Diagonal of the `(r, Q)` block.
    pub rq_diag: Vec<f64>,
    pub vu_left: Option<Block>,
    pub su_left: Option<Block>,
    pub vu_bottom: Option<Block>,
    pub ru_bottom: Option<Block>,
    pub vp_right: Option<Block>,
    pub vq_top: Option<Block>,
    /// `(f, v)` for the local `v` basis.
    pub rhs: Vec<f64>,
}

/// Per-element blocks of `B`, indexed like the mesh elements.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    pub n: usize,
    pub nb: usize,
    pub elements: Vec<ElementBlocks>,
}

struct Ctx<'a> {
    space: &'a FemSpace,
    problem: &'a Problem,
    opts: AssemblyOptions,
    table: BasisTable,
    n1: usize,
    nb: usize,
}

fn check(v: f64, x: f64, y: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { x, y })
    }
}

impl Ctx<'_> {
    /// `sum_r w_r (h/2) g(t_r) P_b(t_r) P_d(t_r)` for an edge of length `h`.
    fn edge_matrix(&self, h: f64, g: &[f64]) -> Vec<f64> {
        let n1 = self.n1;
        let t = &self.table;
        let mut m = vec![0.0; n1 * n1];
        for (r, &gr) in g.iter().enumerate() {
            let wr = 0.5 * h * t.rule.weights[r] * gr;
            for b in 0..n1 {
                let vb = wr * t.value(r, b);
                for d in 0..n1 {
                    m[b * n1 + d] += vb * t.value(r, d);
                }
            }
        }
        m
    }

    fn trace(&self, side: f64, a: usize) -> f64 {
        if side > 0.0 {
            self.table.right[a]
        } else {
            self.table.left[a]
        }
    }

    /// Adds `scale * trace_test(a) * trace_trial(c) * m[b][d]` for a vertical
    /// edge (`xi` fixed, integral over `eta`).
    fn add_vertical(&self, out: &mut [f64], scale: f64, test_side: f64, trial_side: f64, m: &[f64]) {
        let n1 = self.n1;
        let nb = self.nb;
        for b in 0..n1 {
            for a in 0..n1 {
                let ta = scale * self.trace(test_side, a);
                let row = (a + n1 * b) * nb;
                for d in 0..n1 {
                    let mbd = ta * m[b * n1 + d];
                    for c in 0..n1 {
                        out[row + c + n1 * d] += mbd * self.trace(trial_side, c);
                    }
                }
            }
        }
    }

    /// Horizontal edge (`eta` fixed, integral over `xi`).
    fn add_horizontal(&self, out: &mut [f64], scale: f64, test_side: f64, trial_side: f64, m: &[f64]) {
        let n1 = self.n1;
        let nb = self.nb;
        for b in 0..n1 {
            let tb = scale * self.trace(test_side, b);
            for a in 0..n1 {
                let row = (a + n1 * b) * nb;
                for d in 0..n1 {
                    let td = tb * self.trace(trial_side, d);
                    for c in 0..n1 {
                        out[row + c + n1 * d] += td * m[a * n1 + c];
                    }
                }
            }
        }
    }

    fn element(&self, e: usize) -> Result<ElementBlocks> {
        let n = self.space.mesh.n();
        let (ix, iy) = self.space.mesh.element_cells(e);
        let g = self.space.geom(e);
        let (hx, hy) = (g.hx(), g.hy());
        let jac = 0.25 * hx * hy;
        let eps = self.problem.epsilon;
        let t = &self.table;
        let nq = t.npts();
        let (n1, nb) = (self.n1, self.nb);
        let p = self.problem;

        // volume coefficients at tensor Gauss points, index q + nq r
        let mut c_mass = vec![0.0; nq * nq];
        let mut c_ax = vec![0.0; nq * nq];
        let mut c_ay = vec![0.0; nq * nq];
        let mut c_f = vec![0.0; nq * nq];
        for r in 0..nq {
            for q in 0..nq {
                let (x, y) = g.map(t.rule.nodes[q], t.rule.nodes[r]);
                let w = jac * t.rule.weights[q] * t.rule.weights[r];
                let i = q + nq * r;
                c_mass[i] = w * check((p.b)(x, y) - p.div_a(x, y), x, y)?;
                c_ax[i] = -w * check((p.a1)(x, y), x, y)? * 2.0 / hx;
                c_ay[i] = -w * check((p.a2)(x, y), x, y)? * 2.0 / hy;
                c_f[i] = w * check((p.f)(x, y), x, y)?;
            }
        }

        let mut blk = ElementBlocks {
            vu_self: vec![0.0; nb * nb],
            vp_self: vec![0.0; nb * nb],
            vq_self: vec![0.0; nb * nb],
            rhs: vec![0.0; nb],
            ..Default::default()
        };
        let dx = 2.0 / hx;
        let dy = 2.0 / hy;
        for r in 0..nq {
            for q in 0..nq {
                let i = q + nq * r;
                let wv = jac * t.rule.weights[q] * t.rule.weights[r];
                for b in 0..n1 {
                    for a in 0..n1 {
                        let row = a + n1 * b;
                        let phi = t.value(q, a) * t.value(r, b);
                        let phi_x = t.deriv(q, a) * t.value(r, b);
                        let phi_y = t.value(q, a) * t.deriv(r, b);
                        blk.rhs[row] += c_f[i] * phi;
                        let vu = c_mass[i] * phi + c_ax[i] * phi_x + c_ay[i] * phi_y;
                        let vp = wv * dx * phi_x;
                        let vq = wv * dy * phi_y;
                        for d in 0..n1 {
                            for c in 0..n1 {
                                let psi = t.value(q, c) * t.value(r, d);
                                let col = row * nb + c + n1 * d;
                                blk.vu_self[col] += vu * psi;
                                blk.vp_self[col] += vp * psi;
                                blk.vq_self[col] += vq * psi;
                            }
                        }
                    }
                }
            }
        }
        // (U, s_x) and (U, r_y) have the same volume matrices as (P, v_x), (Q, v_y)
        blk.su_self = blk.vp_self.clone();
        blk.ru_self = blk.vq_self.clone();
        let mut mass_diag = vec![0.0; nb];
        for b in 0..n1 {
            for a in 0..n1 {
                mass_diag[a + n1 * b] = jac * legendre_norm_sq(a) * legendre_norm_sq(b);
            }
        }
        blk.sp_diag = mass_diag.iter().map(|m| m / eps).collect();
        blk.rq_diag = blk.sp_diag.clone();

        // edge data
        let ones = vec![1.0; nq];
        let ey = self.edge_matrix(hy, &ones);
        let ex = self.edge_matrix(hx, &ones);
        let along_y = |xe: f64, f: &dyn Fn(f64, f64) -> f64| -> Result<Vec<f64>> {
            (0..nq)
                .map(|r| {
                    let (_, y) = g.map(0.0, t.rule.nodes[r]);
                    check(f(xe, y), xe, y)
                })
                .collect()
        };
        let along_x = |ye: f64, f: &dyn Fn(f64, f64) -> f64| -> Result<Vec<f64>> {
            (0..nq)
                .map(|q| {
                    let (x, _) = g.map(t.rule.nodes[q], 0.0);
                    check(f(x, ye), x, ye)
                })
                .collect()
        };
        let a1_right = self.edge_matrix(hy, &along_y(g.x1, &*p.a1)?);
        let a2_top = self.edge_matrix(hx, &along_x(g.y1, &*p.a2)?);

        let has_left = ix > 0;
        let has_right = ix + 1 < n;
        let has_bottom = iy > 0;
        let has_top = iy + 1 < n;

        // T4: upwind a U^- against -[v] on the right/top edges of this element
        self.add_vertical(&mut blk.vu_self, 1.0, 1.0, 1.0, &a1_right);
        self.add_horizontal(&mut blk.vu_self, 1.0, 1.0, 1.0, &a2_top);
        if !has_right && self.opts.lambda1 != 0.0 {
            self.add_vertical(&mut blk.vu_self, self.opts.lambda1, 1.0, 1.0, &ey);
        }
        if !has_top && self.opts.lambda2 != 0.0 {
            self.add_horizontal(&mut blk.vu_self, self.opts.lambda2, 1.0, 1.0, &ex);
        }

        // T3: P^+ on the left edge (inflow edge included), -P^- on the outflow edge
        self.add_vertical(&mut blk.vp_self, 1.0, -1.0, -1.0, &ey);
        self.add_horizontal(&mut blk.vq_self, 1.0, -1.0, -1.0, &ex);
        if has_right {
            let mut b = vec![0.0; nb * nb];
            self.add_vertical(&mut b, -1.0, 1.0, -1.0, &ey);
            blk.vp_right = Some(b);
        } else {
            self.add_vertical(&mut blk.vp_self, -1.0, 1.0, 1.0, &ey);
        }
        if has_top {
            let mut b = vec![0.0; nb * nb];
            self.add_horizontal(&mut b, -1.0, 1.0, -1.0, &ex);
            blk.vq_top = Some(b);
        } else {
            self.add_horizontal(&mut blk.vq_self, -1.0, 1.0, 1.0, &ex);
        }

        // T2: U^- against [s] on interior edges only
        if has_right {
            self.add_vertical(&mut blk.su_self, -1.0, 1.0, 1.0, &ey);
        }
        if has_top {
            self.add_horizontal(&mut blk.ru_self, -1.0, 1.0, 1.0, &ex);
        }
        if has_left {
            let mut s = vec![0.0; nb * nb];
            self.add_vertical(&mut s, 1.0, -1.0, 1.0, &ey);
            blk.su_left = Some(s);
            let a1_left = self.edge_matrix(hy, &along_y(g.x0, &*p.a1)?);
            let mut v = vec![0.0; nb * nb];
            self.add_vertical(&mut v, -1.0, -1.0, 1.0, &a1_left);
            blk.vu_left = Some(v);
        }
        if has_bottom {
            let mut r = vec![0.0; nb * nb];
            self.add_horizontal(&mut r, 1.0, -1.0, 1.0, &ex);
            blk.ru_bottom = Some(r);
            let a2_bottom = self.edge_matrix(hx, &along_x(g.y0, &*p.a2)?);
            let mut v = vec![0.0; nb * nb];
            self.add_horizontal(&mut v, -1.0, -1.0, 1.0, &a2_bottom);
            blk.vu_bottom = Some(v);
        }
        Ok(blk)
    }
}

impl BlockOperator {
    /// Computes every element's blocks.
    pub fn build(space: &FemSpace, problem: &Problem, opts: &AssemblyOptions) -> Result<Self> {
        opts.validate(space.degree)?;
        let ctx = Ctx {
            space,
            problem,
            opts: *opts,
            table: BasisTable::new(space.degree, opts.quad_points)?,
            n1: space.n1(),
            nb: space.nb(),
        };
        let ne = space.num_elements();
        #[cfg(feature = "parallel")]
        let elements: Result<Vec<_>> = {
            use rayon::prelude::*;
            (0..ne).into_par_iter().map(|e| ctx.element(e)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let elements: Result<Vec<_>> = (0..ne).map(|e| ctx.element(e)).collect();
        Ok(BlockOperator {
            n: space.mesh.n(),
            nb: space.nb(),
            elements: elements?,
        })
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.nb * self.elements.len()
    }

    fn offset(&self, e: usize, f: Field) -> usize {
        (3 * e + f as usize) * self.nb
    }

    /// `(row field, column element, column field, block)` triples of one
    /// element in ascending column order within each row field.
    fn row_blocks(&self, e: usize) -> [Vec<(usize, Field, BlockRef<'_>)>; 3] {
        let b = &self.elements[e];
        let n = self.n;
        let mut v = Vec::with_capacity(7);
        let mut s = Vec::with_capacity(3);
        let mut r = Vec::with_capacity(3);
        if let Some(blk) = &b.vu_bottom {
            v.push((e - n, Field::U, BlockRef::Dense(blk)));
        }
        if let Some(blk) = &b.ru_bottom {
            r.push((e - n, Field::U, BlockRef::Dense(blk)));
        }
        if let Some(blk) = &b.vu_left {
            v.push((e - 1, Field::U, BlockRef::Dense(blk)));
        }
        if let Some(blk) = &b.su_left {
            s.push((e - 1, Field::U, BlockRef::Dense(blk)));
        }
        v.push((e, Field::U, BlockRef::Dense(&b.vu_self)));
        v.push((e, Field::P, BlockRef::Dense(&b.vp_self)));
        v.push((e, Field::Q, BlockRef::Dense(&b.vq_self)));
        s.push((e, Field::U, BlockRef::Dense(&b.su_self)));
        s.push((e, Field::P, BlockRef::Diag(&b.sp_diag)));
        r.push((e, Field::U, BlockRef::Dense(&b.ru_self)));
        r.push((e, Field::Q, BlockRef::Diag(&b.rq_diag)));
        if let Some(blk) = &b.vp_right {
            v.push((e + 1, Field::P, BlockRef::Dense(blk)));
        }
        if let Some(blk) = &b.vq_top {
            v.push((e + n, Field::Q, BlockRef::Dense(blk)));
        }
        [v, s, r]
    }

    /// `y = B x` computed block by block.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let dim = self.num_dofs();
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: x.len(),
            });
        }
        let nb = self.nb;
        let mut y = vec![0.0; dim];
        for e in 0..self.elements.len() {
            for (rf, list) in Field::ALL.iter().zip(self.row_blocks(e)) {
                let out = self.offset(e, *rf);
                for (ce, cf, blk) in list {
                    let xin = &x[self.offset(ce, cf)..][..nb];
                    let yout = &mut y[out..out + nb];
                    blk.gemv_add(nb, xin, yout);
                }
            }
        }
        Ok(y)
    }

    pub fn rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.num_dofs()];
        for (e, blk) in self.elements.iter().enumerate() {
            let o = self.offset(e, Field::U);
            b[o..o + self.nb].copy_from_slice(&blk.rhs);
        }
        b
    }

    /// Flattens the blocks into CSR. Diagonal blocks of `(s, P)` and `(r, Q)`
    /// store their diagonal only; all other blocks are stored in full.
    pub fn to_sparse(&self) -> SparseSystem {
        let nb = self.nb;
        let dim = self.num_dofs();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for e in 0..self.elements.len() {
            for list in self.row_blocks(e) {
                for i in 0..nb {
                    for (ce, cf, blk) in &list {
                        let base = self.offset(*ce, *cf);
                        match blk {
                            BlockRef::Dense(m) => {
                                col_idx.extend((0..nb).map(|j| base + j));
                                values.extend_from_slice(&m[i * nb..(i + 1) * nb]);
                            }
                            BlockRef::Diag(d) => {
                                col_idx.push(base + i);
                                values.push(d[i]);
                            }
                        }
                    }
                    row_ptr.push(col_idx.len());
                }
            }
        }
        SparseSystem {
            dim,
            row_ptr,
            col_idx,
            values,
            rhs: self.rhs(),
        }
    }
}

impl BlockOperator {
    /// Eliminates `P` and `Q`.
    ///
    /// The `s` and `r` equations read `eps^-1 M P_E + S_E U_E + S_L U_L = 0`
    /// with a diagonal mass matrix `M`, so `P` (and likewise `Q`) is an
    /// explicit local function of `U`. Substituting into the `v` equations
    /// leaves a system in `U` alone with the same five-block stencil.
    pub fn condense(&self) -> GridSystem {
        let nb = self.nb;
        let n = self.n;
        let ne = self.elements.len();
        let mut rows = Vec::with_capacity(ne);
        let mut rhs = Vec::with_capacity(nb * ne);
        for e in 0..ne {
            let b = &self.elements[e];
            let inv_p: Vec<f64> = b.sp_diag.iter().map(|d| 1.0 / d).collect();
            let inv_q: Vec<f64> = b.rq_diag.iter().map(|d| 1.0 / d).collect();
            let mut list: Vec<(usize, Block)> = Vec::with_capacity(5);
            if let Some(vu) = &b.vu_bottom {
                let mut c = vu.clone();
                mul_diag_sub(&mut c, &b.vq_self, &inv_q, b.ru_bottom.as_ref().unwrap(), nb);
                list.push((e - n, c));
            }
            if let Some(vu) = &b.vu_left {
                let mut c = vu.clone();
                mul_diag_sub(&mut c, &b.vp_self, &inv_p, b.su_left.as_ref().unwrap(), nb);
                list.push((e - 1, c));
            }
            let mut c = b.vu_self.clone();
            mul_diag_sub(&mut c, &b.vp_self, &inv_p, &b.su_self, nb);
            mul_diag_sub(&mut c, &b.vq_self, &inv_q, &b.ru_self, nb);
            let mut right = None;
            if let Some(vp) = &b.vp_right {
                let r = &self.elements[e + 1];
                let inv: Vec<f64> = r.sp_diag.iter().map(|d| 1.0 / d).collect();
                mul_diag_sub(&mut c, vp, &inv, r.su_left.as_ref().unwrap(), nb);
                let mut cr = vec![0.0; nb * nb];
                mul_diag_sub(&mut cr, vp, &inv, &r.su_self, nb);
                right = Some((e + 1, cr));
            }
            let mut top = None;
            if let Some(vq) = &b.vq_top {
                let a = &self.elements[e + n];
                let inv: Vec<f64> = a.rq_diag.iter().map(|d| 1.0 / d).collect();
                mul_diag_sub(&mut c, vq, &inv, a.ru_bottom.as_ref().unwrap(), nb);
                let mut ca = vec![0.0; nb * nb];
                mul_diag_sub(&mut ca, vq, &inv, &a.ru_self, nb);
                top = Some((e + n, ca));
            }
            list.push((e, c));
            list.extend(right);
            list.extend(top);
            rows.push(list);
            rhs.extend_from_slice(&b.rhs);
        }
        GridSystem {
            nx: n,
            ny: n,
            nb,
            rows,
            rhs,
        }
    }

    /// Rebuilds the full `(U, P, Q)` vector from the `U` part.
    pub fn recover(&self, u: &[f64]) -> Result<Vec<f64>> {
        let nb = self.nb;
        let ne = self.elements.len();
        if u.len() != nb * ne {
            return Err(Error::DimensionMismatch {
                expected: nb * ne,
                actual: u.len(),
            });
        }
        let n = self.n;
        let mut x = vec![0.0; self.num_dofs()];
        for e in 0..ne {
            let b = &self.elements[e];
            let ue = &u[e * nb..(e + 1) * nb];
            x[self.offset(e, Field::U)..][..nb].copy_from_slice(ue);
            let mut p = vec![0.0; nb];
            BlockRef::Dense(&b.su_self).gemv_add(nb, ue, &mut p);
            if let Some(s) = &b.su_left {
                BlockRef::Dense(s).gemv_add(nb, &u[(e - 1) * nb..e * nb], &mut p);
            }
            let mut q = vec![0.0; nb];
            BlockRef::Dense(&b.ru_self).gemv_add(nb, ue, &mut q);
            if let Some(r) = &b.ru_bottom {
                BlockRef::Dense(r).gemv_add(nb, &u[(e - n) * nb..(e - n + 1) * nb], &mut q);
            }
            let po = self.offset(e, Field::P);
            let qo = self.offset(e, Field::Q);
            for i in 0..nb {
                x[po + i] = -p[i] / b.sp_diag[i];
                x[qo + i] = -q[i] / b.rq_diag[i];
            }
        }
        Ok(x)
    }
}

/// `c -= a diag(d) b` for `nb x nb` blocks.
fn mul_diag_sub(c: &mut [f64], a: &[f64], d: &[f64], b: &[f64], nb: usize) {
    for i in 0..nb {
        for k in 0..nb {
            let aik = a[i * nb + k] * d[k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..nb {
                c[i * nb + j] -= aik * b[k * nb + j];
            }
        }
    }
}

enum BlockRef<'a> {
    Dense(&'a [f64]),
    Diag(&'a [f64]),
}

impl BlockRef<'_> {
    fn gemv_add(&self, nb: usize, x: &[f64], y: &mut [f64]) {
        match self {
            BlockRef::Dense(m) => {
                for (i, yi) in y.iter_mut().enumerate() {
                    let row = &m[i * nb..(i + 1) * nb];
                    *yi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            BlockRef::Diag(d) => {
                for ((yi, di), xi) in y.iter_mut().zip(d.iter()).zip(x) {
                    *yi += di * xi;
                }
            }
        }
    }
}

/// Square matrix in compressed sparse row form plus right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Builds a CSR matrix from `(row, col, value)` triplets, summing
    /// duplicates.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)], rhs: Vec<f64>) -> Result<Self> {
        if rhs.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: rhs.len(),
            });
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|(r, c, _)| *r >= dim || *c >= dim) {
            return Err(Error::InvalidParameter(format!(
                "entry ({r}, {c}) outside a {dim} x {dim} matrix"
            )));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseSystem {
            dim,
            row_ptr,
            col_idx,
            values,
            rhs,
        })
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok((0..self.dim)
            .map(|i| {
                let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
                self.col_idx[s..e]
                    .iter()
                    .zip(&self.values[s..e])
                    .map(|(&j, &a)| a * x[j])
                    .sum()
            })
            .collect())
    }

    /// `||A x - rhs||_2 / ||rhs||_2` (absolute when `rhs = 0`).
    pub fn relative_residual(&self, x: &[f64]) -> Result<f64> {
        let ax = self.apply(x)?;
        Ok(relative_residual(&ax, &self.rhs))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Matrix Market coordinate format, 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.dim, self.dim, self.nnz())?;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                writeln!(out, "{} {} {:.17e}", i + 1, self.col_idx[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

pub(crate) fn relative_residual(ax: &[f64], b: &[f64]) -> f64 {
    let num: f64 = ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Assembles the monolithic `(U, P, Q)` system.
pub fn assemble(space: &FemSpace, problem: &Problem, opts: &AssemblyOptions) -> Result<SparseSystem> {
    Ok(BlockOperator::build(space, problem, opts)?.to_sparse())
}

/// `A x`.
pub fn apply_operator(system: &SparseSystem, x: &[f64]) -> Result<Vec<f64>> {
    system.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{MeshKind, TensorMesh};

    fn setup(n: usize, k: usize) -> (FemSpace, Problem) {
        let p = Problem::example1(1e-2).unwrap();
        let mesh = TensorMesh::new(MeshKind::Shishkin, n, 1e-2, (k + 2) as f64, 1.0, 2.0).unwrap();
        (FemSpace::new(mesh, k).unwrap(), p)
    }

    #[test]
    fn dimensions_and_sparsity() {
        let (space, p) = setup(8, 2);
        let sys = assemble(&space, &p, &AssemblyOptions::default()).unwrap();
        let nb = space.nb();
        assert_eq!(sys.dim, 3 * nb * 64);
        assert_eq!(sys.row_ptr.len(), sys.dim + 1);
        assert!(sys.nnz() <= 5 * (3 * nb) * (3 * nb) * 64);
        for i in 0..sys.dim {
            let cols = &sys.col_idx[sys.row_ptr[i]..sys.row_ptr[i + 1]];
            assert!(cols.windows(2).all(|w| w[0] < w[1]), "row {i} not sorted");
            // couples only to self and the four neighbours
            let (e, _, _) = space.split_dof(i);
            let (ix, iy) = space.mesh.element_cells(e);
            for &c in cols {
                let (ce, _, _) = space.split_dof(c);
                let (cx, cy) = space.mesh.element_cells(ce);
                let d = cx.abs_diff(ix) + cy.abs_diff(iy);
                assert!(d <= 1);
            }
        }
    }

    #[test]
    fn unit_vector_gives_column() {
        let (space, p) = setup(4, 1);
        let sys = assemble(&space, &p, &AssemblyOptions::default()).unwrap();
        let j = 17;
        let mut x = vec![0.0; sys.dim];
        x[j] = 1.0;
        let col = sys.apply(&x).unwrap();
        for i in 0..sys.dim {
            let mut aij = 0.0;
            for k in sys.row_ptr[i]..sys.row_ptr[i + 1] {
                if sys.col_idx[k] == j {
                    aij = sys.values[k];
                }
            }
            assert_eq!(col[i], aij);
        }
        assert!(sys.apply(&vec![0.0; sys.dim]).unwrap().iter().all(|v| *v == 0.0));
        assert!(sys.apply(&x[1..]).is_err());
    }

    #[test]
    fn block_apply_matches_csr() {
        let (space, p) = setup(4, 2);
        let op = BlockOperator::build(&space, &p, &AssemblyOptions::default()).unwrap();
        let sys = op.to_sparse();
        let x: Vec<f64> = (0..sys.dim).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let a = op.apply(&x).unwrap();
        let b = sys.apply(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn condensation_is_exact() {
        let (space, p) = setup(6, 2);
        let op = BlockOperator::build(&space, &p, &AssemblyOptions::default()).unwrap();
        let full = op.to_sparse();
        let cond = op.condense().to_sparse();
        assert_eq!(cond.dim, full.dim / 3);
        let u: Vec<f64> = (0..cond.dim).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let x = op.recover(&u).unwrap();
        let y = full.apply(&x).unwrap();
        let yc = cond.apply(&u).unwrap();
        let scale = yc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for e in 0..space.num_elements() {
            for l in 0..space.nb() {
                // v rows agree with the condensed rows, s and r rows vanish
                let i = space.dof(e, Field::U, l);
                assert!((y[i] - yc[e * space.nb() + l]).abs() <= 1e-12 * scale);
                for f in [Field::P, Field::Q] {
                    assert!(y[space.dof(e, f, l)].abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let (space, p) = setup(8, 1);
        let a = assemble(&space, &p, &AssemblyOptions::default()).unwrap();
        let b = assemble(&space, &p, &AssemblyOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_forcing_gives_zero_rhs() {
        let (space, mut p) = setup(4, 1);
        p.f = std::sync::Arc::new(|_, _| 0.0);
        let sys = assemble(&space, &p, &AssemblyOptions::default()).unwrap();
        assert!(sys.rhs.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_options() {
        let (space, p) = setup(4, 2);
        let mut o = AssemblyOptions {
            lambda1: -1.0,
            ..Default::default()
        };
        assert!(assemble(&space, &p, &o).is_err());
        o.lambda1 = 2e6;
        assert!(assemble(&space, &p, &o).is_err());
        let o = AssemblyOptions {
            quad_points: 2,
            ..Default::default()
        };
        assert!(assemble(&space, &p, &o).is_err());
    }

    #[test]
    fn nan_coefficient_is_reported() {
        let (space, mut p) = setup(4, 1);
        p.b = std::sync::Arc::new(|x, _| if x > 0.5 { f64::NAN } else { 1.0 });
        assert!(matches!(
            assemble(&space, &p, &AssemblyOptions::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn triplets_and_matrix_market() {
        let sys = SparseSystem::from_triplets(2, &[(0, 0, 2.0), (1, 1, 4.0), (1, 1, 0.0), (0, 1, 0.5)], vec![2.0, 8.0])
            .unwrap();
        assert_eq!(sys.nnz(), 3);
        let mut buf = Vec::new();
        sys.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("%%MatrixMarket"));
        assert_eq!(lines.next().unwrap(), "2 2 3");
        assert!(SparseSystem::from_triplets(2, &[(2, 0, 1.0)], vec![0.0; 2]).is_err());
    }
}
