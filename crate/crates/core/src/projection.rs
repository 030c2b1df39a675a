//! Local Gauss-Radau projections `Pi^-`, `Pi_x^+`, `Pi_y^+`.
//!
//! On each element the projection of `z` is the polynomial in `Q^k` that
//! matches a set of `(k + 1)^2` linear functionals of `z`:
//!
//! * `Pi^-`: moments against `Q^{k-1}`, right-edge and top-edge moments
//!   against `P^{k-1}`, and the value at the upper-right corner;
//! * `Pi_x^+`: moments against `P^{k-1} x P^k` and left-edge moments
//!   against `P^k`;
//! * `Pi_y^+`: the same with the roles of `x` and `y` swapped.
//!
//! The functionals are affine invariant, so the condition matrix is built
//! once on the reference square and factorized once per degree.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatMut};

use crate::error::Result;
use crate::problem::Problem;
use crate::quadrature::{BasisTable, QuadRule};
use crate::space::{DiscreteField, DiscreteTriple, ElementGeom, FemSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectionKind {
    /// `Pi^-`, used for `u`.
    Minus,
    /// `Pi_x^+`, used for `p = eps u_x`.
    XPlus,
    /// `Pi_y^+`, used for `q = eps u_y`.
    YPlus,
}

impl ProjectionKind {
    pub const ALL: [ProjectionKind; 3] = [ProjectionKind::Minus, ProjectionKind::XPlus, ProjectionKind::YPlus];
}

/// One defining functional on the reference square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    /// `int int g P_a(xi) P_b(eta)`.
    Interior { a: usize, b: usize },
    /// `int g(xi_edge, eta) P_b(eta) d eta` on the edge `xi = +-1`.
    VerticalEdge { right: bool, b: usize },
    /// `int g(xi, eta_edge) P_a(xi) d xi` on the edge `eta = +-1`.
    HorizontalEdge { top: bool, a: usize },
    /// `g(1, 1)`.
    UpperRightCorner,
}

/// The `(k + 1)^2` defining conditions of a projection.
pub fn conditions(kind: ProjectionKind, k: usize) -> Vec<Condition> {
    let mut c = Vec::with_capacity((k + 1) * (k + 1));
    match kind {
        ProjectionKind::Minus => {
            for b in 0..k {
                for a in 0..k {
                    c.push(Condition::Interior { a, b });
                }
            }
            for b in 0..k {
                c.push(Condition::VerticalEdge { right: true, b });
            }
            for a in 0..k {
                c.push(Condition::HorizontalEdge { top: true, a });
            }
            c.push(Condition::UpperRightCorner);
        }
        ProjectionKind::XPlus => {
            for b in 0..=k {
                for a in 0..k {
                    c.push(Condition::Interior { a, b });
                }
            }
            for b in 0..=k {
                c.push(Condition::VerticalEdge { right: false, b });
            }
        }
        ProjectionKind::YPlus => {
            for b in 0..k {
                for a in 0..=k {
                    c.push(Condition::Interior { a, b });
                }
            }
            for a in 0..=k {
                c.push(Condition::HorizontalEdge { top: false, a });
            }
        }
    }
    c
}

/// Samples of a function at the interior tensor Gauss points and on the
/// four edges of the reference square.
struct Samples {
    interior: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    bottom: Vec<f64>,
    top: Vec<f64>,
    corner: f64,
}

impl Samples {
    fn take(rule: &QuadRule, g: impl Fn(f64, f64) -> f64) -> Self {
        let t = &rule.nodes;
        let n = t.len();
        let mut interior = vec![0.0; n * n];
        for r in 0..n {
            for q in 0..n {
                interior[q + n * r] = g(t[q], t[r]);
            }
        }
        Samples {
            interior,
            left: t.iter().map(|&s| g(-1.0, s)).collect(),
            right: t.iter().map(|&s| g(1.0, s)).collect(),
            bottom: t.iter().map(|&s| g(s, -1.0)).collect(),
            top: t.iter().map(|&s| g(s, 1.0)).collect(),
            corner: g(1.0, 1.0),
        }
    }
}

fn apply(cond: Condition, table: &BasisTable, s: &Samples) -> f64 {
    let w = &table.rule.weights;
    let n = w.len();
    match cond {
        Condition::Interior { a, b } => {
            let mut acc = 0.0;
            for r in 0..n {
                let wr = w[r] * table.value(r, b);
                for q in 0..n {
                    acc += w[q] * table.value(q, a) * wr * s.interior[q + n * r];
                }
            }
            acc
        }
        Condition::VerticalEdge { right, b } => {
            let edge = if right { &s.right } else { &s.left };
            (0..n).map(|r| w[r] * table.value(r, b) * edge[r]).sum()
        }
        Condition::HorizontalEdge { top, a } => {
            let edge = if top { &s.top } else { &s.bottom };
            (0..n).map(|q| w[q] * table.value(q, a) * edge[q]).sum()
        }
        Condition::UpperRightCorner => s.corner,
    }
}

/// A projection operator for one degree, with its factorized condition
/// matrix.
pub struct Projector {
    pub kind: ProjectionKind,
    pub degree: usize,
    conditions: Vec<Condition>,
    table: BasisTable,
    matrix: Mat<f64>,
    lu: PartialPivLu<f64>,
}

impl Projector {
    /// `points` Gauss points per direction are used for the moments of the
    /// target function; it must be at least `k + 1`.
    pub fn new(kind: ProjectionKind, degree: usize, points: usize) -> Result<Self> {
        let table = BasisTable::new(degree, points.max(degree + 1))?;
        let conditions = conditions(kind, degree);
        let n1 = degree + 1;
        let nb = n1 * n1;
        debug_assert_eq!(conditions.len(), nb);
        let mut matrix = Mat::<f64>::zeros(nb, nb);
        for d in 0..n1 {
            for c in 0..n1 {
                let col = c + n1 * d;
                let s = Samples::take(&table.rule, |xi, eta| {
                    legendre(degree, c, xi) * legendre(degree, d, eta)
                });
                for (row, cond) in conditions.iter().enumerate() {
                    matrix[(row, col)] = apply(*cond, &table, &s);
                }
            }
        }
        let lu = matrix.partial_piv_lu();
        Ok(Projector {
            kind,
            degree,
            conditions,
            table,
            matrix,
            lu,
        })
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    /// Condition values `L_i(z)` of `z` on an element.
    pub fn functionals<F>(&self, geom: &ElementGeom, z: &F) -> Vec<f64>
    where
        F: Fn(f64, f64) -> f64 + ?Sized,
    {
        let s = Samples::take(&self.table.rule, |xi, eta| {
            let (x, y) = geom.map(xi, eta);
            z(x, y)
        });
        self.conditions.iter().map(|&c| apply(c, &self.table, &s)).collect()
    }

    /// Condition values of a local polynomial with Legendre coefficients `c`.
    pub fn functionals_of_local(&self, c: &[f64]) -> Vec<f64> {
        let nb = c.len();
        (0..nb)
            .map(|row| (0..nb).map(|col| self.matrix[(row, col)] * c[col]).sum())
            .collect()
    }

    /// Projects `z` onto one element; returns Legendre coefficients.
    pub fn project_local<F>(&self, geom: &ElementGeom, z: &F) -> Vec<f64>
    where
        F: Fn(f64, f64) -> f64 + ?Sized,
    {
        let mut rhs = self.functionals(geom, z);
        let n = rhs.len();
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(&mut rhs, n, 1));
        rhs
    }

    /// Elementwise projection of `z` onto `V_N`.
    pub fn project<F>(&self, space: &FemSpace, z: &F) -> DiscreteField
    where
        F: Fn(f64, f64) -> f64 + Sync + ?Sized,
    {
        assert_eq!(space.degree, self.degree, "projector degree mismatch");
        let mut field = DiscreteField::zeros(space);
        let nb = space.nb();
        let work = |(e, chunk): (usize, &mut [f64])| {
            chunk.copy_from_slice(&self.project_local(&space.geom(e), z));
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            field.coeffs.par_chunks_mut(nb).enumerate().for_each(work);
        }
        #[cfg(not(feature = "parallel"))]
        field.coeffs.chunks_mut(nb).enumerate().for_each(work);
        field
    }

    /// Largest condition residual `|L_i(Pi z) - L_i(z)|` per element, scaled
    /// by the sampled maximum of `|z|` on that element (absolute when `z`
    /// vanishes there).
    pub fn condition_residuals<F>(&self, space: &FemSpace, z: &F, field: &DiscreteField) -> Vec<f64>
    where
        F: Fn(f64, f64) -> f64 + ?Sized,
    {
        (0..space.num_elements())
            .map(|e| {
                let g = space.geom(e);
                let target = self.functionals(&g, z);
                let got = self.functionals_of_local(field.local(e));
                let zmax = Samples::take(&self.table.rule, |xi, eta| {
                    let (x, y) = g.map(xi, eta);
                    z(x, y)
                });
                let scale = zmax
                    .interior
                    .iter()
                    .chain(&zmax.left)
                    .chain(&zmax.right)
                    .chain(&zmax.top)
                    .chain(&zmax.bottom)
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                let scale = if scale > 0.0 { scale } else { 1.0 };
                target.iter().zip(&got).map(|(t, g)| (t - g).abs()).fold(0.0, f64::max) / scale
            })
            .collect()
    }
}

fn legendre(k: usize, n: usize, t: f64) -> f64 {
    crate::quadrature::legendre_eval(k, t).0[n]
}

/// Projects `z` with a freshly built projector.
pub fn project<F>(kind: ProjectionKind, z: &F, space: &FemSpace, points: usize) -> Result<DiscreteField>
where
    F: Fn(f64, f64) -> f64 + Sync + ?Sized,
{
    Ok(Projector::new(kind, space.degree, points)?.project(space, z))
}

/// Gauss points per direction used for integrals involving the exact
/// solution: `max(5, k + 3)`.
pub fn error_quad_points(degree: usize) -> usize {
    (degree + 3).max(5)
}

/// `(Pi^- u, Pi_x^+ (eps u_x), Pi_y^+ (eps u_y))`.
pub fn project_triple(problem: &Problem, space: &FemSpace) -> Result<DiscreteTriple> {
    let exact = problem.exact()?;
    let eps = problem.epsilon;
    let pts = error_quad_points(space.degree);
    let u = &exact.u;
    let ux = &exact.u_x;
    let uy = &exact.u_y;
    Ok(DiscreteTriple {
        u: project(ProjectionKind::Minus, &|x, y| u(x, y), space, pts)?,
        p: project(ProjectionKind::XPlus, &|x, y| eps * ux(x, y), space, pts)?,
        q: project(ProjectionKind::YPlus, &|x, y| eps * uy(x, y), space, pts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{MeshKind, TensorMesh};
    use faer::Mat;
    use rand::{Rng, SeedableRng};

    fn space(kind: MeshKind, n: usize, k: usize, eps: f64) -> FemSpace {
        let mesh = TensorMesh::new(kind, n, eps, (k + 2) as f64, 1.0, 2.0).unwrap();
        FemSpace::new(mesh, k).unwrap()
    }

    #[test]
    fn condition_counts() {
        for k in 1..=4 {
            for kind in ProjectionKind::ALL {
                assert_eq!(conditions(kind, k).len(), (k + 1) * (k + 1));
            }
            let c = conditions(ProjectionKind::Minus, k);
            let interior = c.iter().filter(|c| matches!(c, Condition::Interior { .. })).count();
            assert_eq!(interior, k * k);
            let c = conditions(ProjectionKind::XPlus, k);
            let edge = c.iter().filter(|c| matches!(c, Condition::VerticalEdge { .. })).count();
            assert_eq!(edge, k + 1);
        }
    }

    #[test]
    fn constants_are_reproduced() {
        let s = space(MeshKind::Shishkin, 8, 2, 1e-3);
        for kind in ProjectionKind::ALL {
            let f = project(kind, &|_, _| 1.0, &s, 5).unwrap();
            for e in 0..s.num_elements() {
                let c = f.local(e);
                assert!((c[0] - 1.0).abs() < 1e-13);
                assert!(c[1..].iter().all(|v| v.abs() < 1e-13));
            }
        }
    }

    #[test]
    fn polynomials_in_qk_are_reproduced() {
        // build a random global Q^k function, sample it, project it back
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for k in 1..=3 {
            let s = space(MeshKind::BakhvalovType, 4, k, 1e-2);
            let mut field = DiscreteField::zeros(&s);
            field.coeffs.iter_mut().for_each(|c| *c = rng.gen_range(-1.0..1.0));
            // a single global polynomial: use the element formula as z
            for e in [0, 5, 15] {
                let g = s.geom(e);
                let z = |x: f64, y: f64| {
                    let (xi, eta) = g.to_reference(x, y);
                    field.eval_reference(e, xi, eta)
                };
                for kind in ProjectionKind::ALL {
                    let p = Projector::new(kind, k, k + 3).unwrap();
                    let c = p.project_local(&g, &z);
                    for (a, b) in c.iter().zip(field.local(e)) {
                        assert!((a - b).abs() < 1e-12, "k={k} {kind:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn minus_projection_matches_dense_moment_solve() {
        // k = 1 on the single element [0,1]^2, z = x^2, monomial basis
        // {1, x, y, xy}; the conditions are
        //   int z = int Pi z, int_0^1 z(1,y) dy, int_0^1 z(x,1) dx, z(1,1).
        let basis: [fn(f64, f64) -> f64; 4] = [|_, _| 1.0, |x, _| x, |_, y| y, |x, y| x * y];
        let z = |x: f64, _y: f64| x * x;
        let rule = crate::quadrature::gauss_legendre(6).unwrap();
        let int1 = |g: &dyn Fn(f64) -> f64| -> f64 {
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&t, &w)| 0.5 * w * g(0.5 * (t + 1.0)))
                .sum()
        };
        let int2 = |g: &dyn Fn(f64, f64) -> f64| int1(&|x| int1(&|y| g(x, y)));
        let functionals: [Box<dyn Fn(&dyn Fn(f64, f64) -> f64) -> f64>; 4] = [
            Box::new(|g| int2(g)),
            Box::new(|g| int1(&|y| g(1.0, y))),
            Box::new(|g| int1(&|x| g(x, 1.0))),
            Box::new(|g| g(1.0, 1.0)),
        ];
        let a = Mat::<f64>::from_fn(4, 4, |i, j| functionals[i](&basis[j]));
        let rhs = Mat::<f64>::from_fn(4, 1, |i, _| functionals[i](&z));
        let coef = a.partial_piv_lu().solve(&rhs);
        let oracle = |x: f64, y: f64| (0..4).map(|j| coef[(j, 0)] * basis[j](x, y)).sum::<f64>();

        let geom = ElementGeom {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        };
        let p = Projector::new(ProjectionKind::Minus, 1, 5).unwrap();
        let c = p.project_local(&geom, &z);
        let eval = |x: f64, y: f64| {
            let (xi, eta) = geom.to_reference(x, y);
            c[0] + c[1] * xi + c[2] * eta + c[3] * xi * eta
        };
        for &(x, y) in &[(0.0, 0.0), (0.3, 0.7), (1.0, 1.0), (0.5, 0.1)] {
            assert!((eval(x, y) - oracle(x, y)).abs() < 1e-13);
        }
    }

    #[test]
    fn projection_is_idempotent_and_local() {
        let s = space(MeshKind::Shishkin, 8, 2, 1e-2);
        let z = |x: f64, y: f64| (3.0 * x).sin() * (2.0 * y).exp();
        for kind in ProjectionKind::ALL {
            let p = Projector::new(kind, 2, 5).unwrap();
            let once = p.project(&s, &z);
            // re-project the field as seen from inside each element
            for e in 0..s.num_elements() {
                let g = s.geom(e);
                let inside = |x: f64, y: f64| {
                    let (xi, eta) = g.to_reference(x, y);
                    once.eval_reference(e, xi, eta)
                };
                let c = p.project_local(&g, &inside);
                for (a, b) in c.iter().zip(once.local(e)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }

            // locality: perturb z outside element 0
            let g0 = s.geom(0);
            let bumped = |x: f64, y: f64| {
                if x > g0.x1 || y > g0.y1 {
                    z(x, y) + 10.0
                } else {
                    z(x, y)
                }
            };
            let local = p.project_local(&g0, &bumped);
            assert_eq!(local, once.local(0));
        }
    }

    #[test]
    fn stability_corpus() {
        let s = space(MeshKind::Shishkin, 16, 2, 1e-2);
        let eps = 1e-2;
        let mut corpus: Vec<Box<dyn Fn(f64, f64) -> f64 + Sync>> = Vec::new();
        for m in 1..=10 {
            let m = m as f64;
            corpus.push(Box::new(move |x, y| (m * x).sin() * (0.5 * m * y).cos()));
            corpus.push(Box::new(move |x, y| {
                (-(1.0 - x) / (eps * m)).exp() + (-(1.0 - y) * 2.0 / (eps * m)).exp() * x
            }));
        }
        let grid: Vec<f64> = (0..=8).map(|i| -1.0 + i as f64 / 4.0).collect();
        for z in &corpus {
            for kind in ProjectionKind::ALL {
                let f = project(kind, z.as_ref(), &s, 5).unwrap();
                for e in 0..s.num_elements() {
                    let g = s.geom(e);
                    let mut zmax = 0.0f64;
                    let mut pmax = 0.0f64;
                    for &xi in &grid {
                        for &eta in &grid {
                            let (x, y) = g.map(xi, eta);
                            zmax = zmax.max(z(x, y).abs());
                            pmax = pmax.max(f.eval_reference(e, xi, eta).abs());
                        }
                    }
                    assert!(pmax <= 10.0 * zmax + 1e-14, "{kind:?} e={e}: {pmax} vs {zmax}");
                }
            }
        }
    }

    #[test]
    fn triple_needs_exact_solution() {
        let s = space(MeshKind::Shishkin, 4, 1, 1e-2);
        let mut p = Problem::example1(1e-2).unwrap();
        p.exact = None;
        assert!(project_triple(&p, &s).is_err());
    }

    #[test]
    fn triple_of_bubble_is_exact() {
        let s = space(MeshKind::BakhvalovShishkin, 8, 2, 1e-2);
        let p = Problem::polynomial_bubble(1e-2, 1.0, 1.0, 2.0).unwrap();
        let t = project_triple(&p, &s).unwrap();
        let ex = p.exact().unwrap();
        for &(x, y) in &[(0.2, 0.3), (0.77, 0.41), (0.995, 0.999)] {
            assert!((t.u.eval(&s, x, y).unwrap() - (ex.u)(x, y)).abs() < 1e-13);
            assert!((t.p.eval(&s, x, y).unwrap() - 1e-2 * (ex.u_x)(x, y)).abs() < 1e-14);
            assert!((t.q.eval(&s, x, y).unwrap() - 1e-2 * (ex.u_y)(x, y)).abs() < 1e-14);
        }
    }
}
