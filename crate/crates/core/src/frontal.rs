//! Nested-dissection multifrontal LU for block systems on an element grid.
//!
//! Unknowns come in blocks of `nb` per element of an `nx x ny` grid and each
//! block row couples an element to itself and its four neighbours. The grid
//! is split recursively by lines of elements; every separator becomes a dense
//! front that eliminates its own unknowns and passes a Schur complement on
//! the surrounding ring of elements to its parent.
//!
//! Pivoting is partial within each front. That is enough when the matrix has
//! a positive definite symmetric part, which every principal submatrix and
//! Schur complement inherits, so each front's pivot block is nonsingular. The
//! matrix is scaled symmetrically to unit diagonal first, which keeps that
//! property and makes the pivot threshold scale free.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::lu::partial_pivoting::factor::{lu_in_place, lu_in_place_scratch};
use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_unit_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::reborrow::{Reborrow, ReborrowMut};
use faer::{Accum, Mat, MatMut, Par};

use crate::assembly::{Block, SparseSystem};
use crate::error::{Error, Result};

/// Block matrix on an `nx x ny` element grid, element `ix + nx * iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSystem {
    pub nx: usize,
    pub ny: usize,
    pub nb: usize,
    /// Per element: `(column element, nb x nb block)`, ascending in the
    /// column element.
    pub rows: Vec<Vec<(usize, Block)>>,
    pub rhs: Vec<f64>,
}

impl GridSystem {
    pub fn dim(&self) -> usize {
        self.nb * self.nx * self.ny
    }

    fn neighbours(&self, e: usize) -> impl Iterator<Item = usize> {
        let (nx, ny) = (self.nx, self.ny);
        let (ix, iy) = (e % nx, e / nx);
        [
            (iy > 0).then(|| e - nx),
            (ix > 0).then(|| e - 1),
            (ix + 1 < nx).then(|| e + 1),
            (iy + 1 < ny).then(|| e + nx),
        ]
        .into_iter()
        .flatten()
    }

    fn validate(&self) -> Result<()> {
        let ne = self.nx * self.ny;
        if self.rows.len() != ne || self.rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: ne,
                actual: self.rows.len(),
            });
        }
        for (e, row) in self.rows.iter().enumerate() {
            for (c, blk) in row {
                if blk.len() != self.nb * self.nb {
                    return Err(Error::DimensionMismatch {
                        expected: self.nb * self.nb,
                        actual: blk.len(),
                    });
                }
                if *c != e && !self.neighbours(e).any(|n| n == *c) {
                    return Err(Error::InvalidParameter(format!(
                        "element {e} couples to non-neighbour {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let nb = self.nb;
        let mut y = vec![0.0; self.dim()];
        for (e, row) in self.rows.iter().enumerate() {
            for (c, blk) in row {
                let xc = &x[c * nb..(c + 1) * nb];
                for i in 0..nb {
                    y[e * nb + i] += blk[i * nb..(i + 1) * nb]
                        .iter()
                        .zip(xc)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
        Ok(y)
    }

    pub fn to_sparse(&self) -> SparseSystem {
        let nb = self.nb;
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in &self.rows {
            for i in 0..nb {
                for (c, blk) in row {
                    col_idx.extend((0..nb).map(|j| c * nb + j));
                    values.extend_from_slice(&blk[i * nb..(i + 1) * nb]);
                }
                row_ptr.push(col_idx.len());
            }
        }
        SparseSystem {
            dim: self.dim(),
            row_ptr,
            col_idx,
            values,
            rhs: self.rhs.clone(),
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let nb = self.nb;
        let mut d = vec![0.0; self.dim()];
        for (e, row) in self.rows.iter().enumerate() {
            if let Some((_, blk)) = row.iter().find(|(c, _)| *c == e) {
                for i in 0..nb {
                    d[e * nb + i] = blk[i * nb + i];
                }
            }
        }
        d
    }
}

/// One front of the elimination tree, listed children first.
#[derive(Debug, Clone)]
struct TreeNode {
    elim: Vec<usize>,
    ring: Vec<usize>,
    children: usize,
}

/// Largest element count eliminated by a single leaf front.
const LEAF_ELEMENTS: usize = 4;

fn dissect(nx: usize, ny: usize, rect: (usize, usize, usize, usize), out: &mut Vec<TreeNode>) {
    let (x0, x1, y0, y1) = rect;
    let (w, h) = (x1 - x0, y1 - y0);
    let mut ring = Vec::new();
    if y0 > 0 {
        ring.extend((x0..x1).map(|x| x + nx * (y0 - 1)));
    }
    if x0 > 0 {
        ring.extend((y0..y1).map(|y| x0 - 1 + nx * y));
    }
    if x1 < nx {
        ring.extend((y0..y1).map(|y| x1 + nx * y));
    }
    if y1 < ny {
        ring.extend((x0..x1).map(|x| x + nx * y1));
    }
    if w * h <= LEAF_ELEMENTS {
        let elim = (y0..y1).flat_map(|y| (x0..x1).map(move |x| x + nx * y)).collect();
        out.push(TreeNode {
            elim,
            ring,
            children: 0,
        });
        return;
    }
    let (halves, elim): ([(usize, usize, usize, usize); 2], Vec<usize>) = if w >= h {
        let xm = x0 + w / 2;
        (
            [(x0, xm, y0, y1), (xm + 1, x1, y0, y1)],
            (y0..y1).map(|y| xm + nx * y).collect(),
        )
    } else {
        let ym = y0 + h / 2;
        (
            [(x0, x1, y0, ym), (x0, x1, ym + 1, y1)],
            (x0..x1).map(|x| x + nx * ym).collect(),
        )
    };
    let mut children = 0;
    for r in halves {
        if r.1 > r.0 && r.3 > r.2 {
            dissect(nx, ny, r, out);
            children += 1;
        }
    }
    out.push(TreeNode { elim, ring, children });
}

#[derive(Debug, Clone)]
struct FactorNode {
    elim: Vec<usize>,
    ring: Vec<usize>,
    /// `L11 \ U11` packed, rows permuted by `perm`.
    lu: Mat<f64>,
    /// Row `i` of `P A11` is row `perm[i]` of `A11`.
    perm: Vec<usize>,
    l21: Mat<f64>,
    u12: Mat<f64>,
}

/// Summary of a factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontalStats {
    pub fronts: usize,
    /// Largest front dimension.
    pub max_front: usize,
    /// Stored factor entries.
    pub factor_entries: usize,
    /// Smallest and largest `|u_ii|` of the scaled matrix.
    pub min_pivot: f64,
    pub max_pivot: f64,
    /// `max |U| / max |A|` of the scaled matrix.
    pub growth: f64,
}

/// LU factors of a [`GridSystem`].
#[derive(Debug, Clone)]
pub struct FrontalLu {
    nb: usize,
    dim: usize,
    scale: Vec<f64>,
    nodes: Vec<FactorNode>,
    stats: FrontalStats,
}

fn par() -> Par {
    faer::get_global_parallelism()
}

impl FrontalLu {
    /// Factors `sys`. Fails with [`Error::Singular`] when a pivot falls
    /// below `threshold * max |A|` of the scaled matrix.
    pub fn factorize(sys: &GridSystem, threshold: f64) -> Result<Self> {
        sys.validate()?;
        let nb = sys.nb;
        let ne = sys.nx * sys.ny;
        if ne == 0 {
            return Err(Error::Singular("empty system".into()));
        }
        let scale: Vec<f64> = sys
            .diagonal()
            .iter()
            .map(|&d| {
                if d.abs() > 0.0 && d.is_finite() {
                    1.0 / d.abs().sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut max_a = 0.0f64;
        for (e, row) in sys.rows.iter().enumerate() {
            for (c, blk) in row {
                for i in 0..nb {
                    for j in 0..nb {
                        let v = scale[e * nb + i] * blk[i * nb + j] * scale[c * nb + j];
                        if !v.is_finite() {
                            return Err(Error::Singular(format!("non-finite entry in block ({e}, {c})")));
                        }
                        max_a = max_a.max(v.abs());
                    }
                }
            }
        }
        if max_a == 0.0 {
            return Err(Error::Singular("zero matrix".into()));
        }

        let mut tree = Vec::new();
        dissect(sys.nx, sys.ny, (0, sys.nx, 0, sys.ny), &mut tree);

        let mut pos = vec![usize::MAX; ne];
        let mut done = vec![false; ne];
        let mut pending: Vec<(Vec<usize>, Mat<f64>)> = Vec::new();
        let mut nodes = Vec::with_capacity(tree.len());
        let mut stats = FrontalStats {
            fronts: tree.len(),
            max_front: 0,
            factor_entries: 0,
            min_pivot: f64::INFINITY,
            max_pivot: 0.0,
            growth: 0.0,
        };
        let mut max_u = 0.0f64;

        for node in tree {
            let ke = node.elim.len();
            let slots: Vec<usize> = node.elim.iter().chain(&node.ring).copied().collect();
            for (s, &e) in slots.iter().enumerate() {
                pos[e] = s;
            }
            let m = slots.len() * nb;
            let m1 = ke * nb;
            stats.max_front = stats.max_front.max(m);
            let mut f = Mat::<f64>::zeros(m, m);
            let add = |f: &mut Mat<f64>, r: usize, c: usize, blk: &[f64]| {
                let (re, ce) = (slots[r], slots[c]);
                for i in 0..nb {
                    let si = scale[re * nb + i];
                    for j in 0..nb {
                        f[(r * nb + i, c * nb + j)] += si * blk[i * nb + j] * scale[ce * nb + j];
                    }
                }
            };
            // original entries whose row or column is eliminated here first
            for (r, &e) in node.elim.iter().enumerate() {
                for (c, blk) in &sys.rows[e] {
                    if done[*c] {
                        continue;
                    }
                    debug_assert!(pos[*c] != usize::MAX);
                    add(&mut f, r, pos[*c], blk);
                }
            }
            for (r, &e) in node.ring.iter().enumerate() {
                for (c, blk) in &sys.rows[e] {
                    if !done[*c] && pos[*c] < ke {
                        add(&mut f, ke + r, pos[*c], blk);
                    }
                }
            }
            for _ in 0..node.children {
                let (ring, s) = pending.pop().expect("child contribution");
                for (p, &ep) in ring.iter().enumerate() {
                    let fp = pos[ep] * nb;
                    for (q, &eq) in ring.iter().enumerate() {
                        let fq = pos[eq] * nb;
                        for j in 0..nb {
                            for i in 0..nb {
                                f[(fp + i, fq + j)] += s[(p * nb + i, q * nb + j)];
                            }
                        }
                    }
                }
            }
            for &e in &node.elim {
                done[e] = true;
            }
            for &e in &slots {
                pos[e] = usize::MAX;
            }

            let m2 = m - m1;
            let mut perm = vec![0usize; m1];
            let mut perm_inv = vec![0usize; m1];
            let (mut f11, f12, mut f21, mut f22) = f.as_mut().split_at_mut(m1, m1);
            {
                let mut buf = MemBuffer::new(lu_in_place_scratch::<usize, f64>(m1, m1, par(), Default::default()));
                lu_in_place(
                    f11.rb_mut(),
                    &mut perm,
                    &mut perm_inv,
                    par(),
                    MemStack::new(&mut buf),
                    Default::default(),
                );
            }
            for i in 0..m1 {
                let p = f11[(i, i)].abs();
                if !(p > threshold * max_a) {
                    return Err(Error::Singular(format!(
                        "pivot {p:e} below {threshold:e} * max|A| while eliminating {} elements",
                        ke
                    )));
                }
                stats.min_pivot = stats.min_pivot.min(p);
                stats.max_pivot = stats.max_pivot.max(p);
                for j in i..m1 {
                    max_u = max_u.max(f11[(i, j)].abs());
                }
            }
            let mut u12 = Mat::<f64>::from_fn(m1, m2, |i, j| f12[(perm[i], j)]);
            solve_unit_lower_triangular_in_place(f11.rb(), u12.as_mut(), par());
            solve_lower_triangular_in_place(f11.rb().transpose(), f21.rb_mut().transpose_mut(), par());
            matmul(f22.rb_mut(), Accum::Add, f21.rb(), u12.as_ref(), -1.0, par());
            for j in 0..m2 {
                for i in 0..m1 {
                    max_u = max_u.max(u12[(i, j)].abs());
                }
            }
            stats.factor_entries += m1 * m1 + 2 * m1 * m2;
            let schur = f22.to_owned();
            let l21 = f21.to_owned();
            let lu = f11.to_owned();
            drop(f);
            pending.push((node.ring.clone(), schur));
            nodes.push(FactorNode {
                elim: node.elim,
                ring: node.ring,
                lu,
                perm,
                l21,
                u12,
            });
        }
        stats.growth = max_u / max_a;
        Ok(FrontalLu {
            nb,
            dim: sys.dim(),
            scale,
            nodes,
            stats,
        })
    }

    pub fn stats(&self) -> FrontalStats {
        self.stats
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn gather(&self, v: &[f64], elements: &[usize]) -> Vec<f64> {
        let nb = self.nb;
        elements
            .iter()
            .flat_map(|&e| v[e * nb..(e + 1) * nb].iter().copied())
            .collect()
    }

    fn scatter(&self, v: &mut [f64], elements: &[usize], src: &[f64]) {
        let nb = self.nb;
        for (k, &e) in elements.iter().enumerate() {
            v[e * nb..(e + 1) * nb].copy_from_slice(&src[k * nb..(k + 1) * nb]);
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: rhs.len(),
            });
        }
        let mut y: Vec<f64> = rhs.iter().zip(&self.scale).map(|(b, d)| b * d).collect();
        for node in &self.nodes {
            let ye = self.gather(&y, &node.elim);
            let mut g: Vec<f64> = node.perm.iter().map(|&p| ye[p]).collect();
            let m1 = g.len();
            solve_unit_lower_triangular_in_place(
                node.lu.as_ref(),
                MatMut::from_column_major_slice_mut(&mut g, m1, 1),
                Par::Seq,
            );
            self.scatter(&mut y, &node.elim, &g);
            if !node.ring.is_empty() {
                let mut u = self.gather(&y, &node.ring);
                let m2 = u.len();
                matmul(
                    MatMut::from_column_major_slice_mut(&mut u, m2, 1),
                    Accum::Add,
                    node.l21.as_ref(),
                    faer::MatRef::from_column_major_slice(&g, m1, 1),
                    -1.0,
                    Par::Seq,
                );
                self.scatter(&mut y, &node.ring, &u);
            }
        }
        for node in self.nodes.iter().rev() {
            let mut g = self.gather(&y, &node.elim);
            let m1 = g.len();
            if !node.ring.is_empty() {
                let u = self.gather(&y, &node.ring);
                let m2 = u.len();
                matmul(
                    MatMut::from_column_major_slice_mut(&mut g, m1, 1),
                    Accum::Add,
                    node.u12.as_ref(),
                    faer::MatRef::from_column_major_slice(&u, m2, 1),
                    -1.0,
                    Par::Seq,
                );
            }
            solve_upper_triangular_in_place(
                node.lu.as_ref(),
                MatMut::from_column_major_slice_mut(&mut g, m1, 1),
                Par::Seq,
            );
            self.scatter(&mut y, &node.elim, &g);
        }
        for (v, d) in y.iter_mut().zip(&self.scale) {
            *v *= d;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("solve produced non-finite values".into()));
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Random grid system with a dominant diagonal and skew coupling.
    fn random_grid(nx: usize, ny: usize, nb: usize, seed: u64) -> GridSystem {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ne = nx * ny;
        let mut rows = Vec::with_capacity(ne);
        for e in 0..ne {
            let (ix, iy) = (e % nx, e / nx);
            let mut cols = vec![e];
            if iy > 0 {
                cols.push(e - nx);
            }
            if ix > 0 {
                cols.push(e - 1);
            }
            if ix + 1 < nx {
                cols.push(e + 1);
            }
            if iy + 1 < ny {
                cols.push(e + nx);
            }
            cols.sort();
            let row = cols
                .into_iter()
                .map(|c| {
                    let mut b: Vec<f64> = (0..nb * nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    if c == e {
                        for i in 0..nb {
                            b[i * nb + i] += 4.0 * nb as f64 * rng.gen_range(1.0..1e3);
                        }
                    }
                    (c, b)
                })
                .collect();
            rows.push(row);
        }
        let rhs = (0..ne * nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GridSystem { nx, ny, nb, rows, rhs }
    }

    #[test]
    fn tree_covers_every_element_once() {
        for (nx, ny) in [(1, 1), (3, 2), (8, 8), (7, 13), (16, 4)] {
            let mut tree = Vec::new();
            dissect(nx, ny, (0, nx, 0, ny), &mut tree);
            let mut seen = vec![0; nx * ny];
            for n in &tree {
                for &e in &n.elim {
                    seen[e] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "{nx}x{ny}");
            assert!(tree.last().unwrap().ring.is_empty());
        }
    }

    #[test]
    fn solves_random_systems() {
        for (nx, ny, nb) in [(1, 1, 3), (2, 3, 2), (9, 6, 4), (16, 16, 2)] {
            let sys = random_grid(nx, ny, nb, (nx * 100 + ny) as u64);
            let lu = FrontalLu::factorize(&sys, 1e-14).unwrap();
            let x = lu.solve(&sys.rhs).unwrap();
            let ax = sys.apply(&x).unwrap();
            let res = crate::assembly::relative_residual(&ax, &sys.rhs);
            assert!(res < 1e-12, "{nx}x{ny}: {res:e}");
        }
    }

    #[test]
    fn matches_general_sparse_lu() {
        let sys = random_grid(6, 5, 3, 11);
        let x = FrontalLu::factorize(&sys, 1e-14).unwrap().solve(&sys.rhs).unwrap();
        let sp = sys.to_sparse();
        let z = crate::solver::factorize(&sp).unwrap().solve(&sp.rhs).unwrap();
        for (a, b) in x.iter().zip(&z) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn pivoting_inside_fronts() {
        // a zero diagonal entry needs a row exchange within the element block
        let sys = GridSystem {
            nx: 1,
            ny: 1,
            nb: 2,
            rows: vec![vec![(0, vec![0.0, 1.0, 1.0, 1.0])]],
            rhs: vec![3.0, 5.0],
        };
        let x = FrontalLu::factorize(&sys, 1e-14).unwrap().solve(&sys.rhs).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_block_is_rejected() {
        let sys = GridSystem {
            nx: 2,
            ny: 1,
            nb: 1,
            rows: vec![
                vec![(0, vec![1.0]), (1, vec![1.0])],
                vec![(0, vec![1.0]), (1, vec![1.0])],
            ],
            rhs: vec![1.0, 1.0],
        };
        assert!(matches!(FrontalLu::factorize(&sys, 1e-14), Err(Error::Singular(_))));
    }

    #[test]
    fn rejects_non_neighbour_coupling() {
        let mut sys = random_grid(3, 3, 1, 1);
        sys.rows[0].push((8, vec![1.0]));
        assert!(FrontalLu::factorize(&sys, 1e-14).is_err());
    }

    #[test]
    fn deterministic_solves() {
        let sys = random_grid(8, 8, 2, 5);
        let lu = FrontalLu::factorize(&sys, 1e-14).unwrap();
        assert_eq!(lu.solve(&sys.rhs).unwrap(), lu.solve(&sys.rhs).unwrap());
        assert!(lu.stats().growth >= 1.0 - 1e-12);
        assert!(lu.stats().min_pivot > 0.0);
    }
}
