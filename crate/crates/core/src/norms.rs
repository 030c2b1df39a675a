//! The triple norm `||V||`, the energy norm `|||V|||` and the three errors
//! of a computed solution.
//!
//! ```text
//! ||V||^2   = eps^-1 ||V_p||^2 + eps^-1 ||V_q||^2 + ||(b - div(a)/2)^{1/2} V_u||^2
//! |||V|||^2 = ||V||^2 + sum_j [ sum_{i<N} 1/2 <a1, [V_u]^2>_{i,j} + <a1/2 + lambda1, [V_u]^2>_{N,j} ]
//!                     + the same sums over horizontal edges with a2, lambda2
//! ```
//!
//! For `V = w - W` the exact solution is continuous and vanishes on the
//! boundary, so every jump of `V` equals a jump of `-W` up to sign. The edge
//! sums therefore only ever see discrete traces.

use crate::assembly::AssemblyOptions;
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::projection::error_quad_points;
use crate::quadrature::BasisTable;
use crate::space::{DiscreteField, DiscreteTriple, FemSpace};

/// What a norm is taken of.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    /// A discrete triple `V`.
    Discrete(&'a DiscreteTriple),
    /// `w - W` with `w = (u, eps u_x, eps u_y)` from the problem's exact
    /// solution.
    ExactMinus(&'a DiscreteTriple),
}

impl Operand<'_> {
    fn triple(&self) -> &DiscreteTriple {
        match self {
            Operand::Discrete(t) | Operand::ExactMinus(t) => t,
        }
    }
}

/// Squared contributions to `|||V|||^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NormComponents {
    /// `eps^-1 ||V_p||^2`
    pub p: f64,
    /// `eps^-1 ||V_q||^2`
    pub q: f64,
    /// `||(b - div(a)/2)^{1/2} V_u||^2`
    pub u: f64,
    /// Vertical edges `i = 0 .. N-1`, weight `a1/2`.
    pub jumps_x: f64,
    /// Outflow edge `x = 1`, weight `a1/2 + lambda1`.
    pub jumps_x_outflow: f64,
    /// Horizontal edges `j = 0 .. N-1`, weight `a2/2`.
    pub jumps_y: f64,
    /// Outflow edge `y = 1`, weight `a2/2 + lambda2`.
    pub jumps_y_outflow: f64,
}

impl NormComponents {
    pub fn triple_sq(&self) -> f64 {
        self.p + self.q + self.u
    }

    pub fn jumps_sq(&self) -> f64 {
        self.jumps_x + self.jumps_x_outflow + self.jumps_y + self.jumps_y_outflow
    }

    pub fn energy_sq(&self) -> f64 {
        self.triple_sq() + self.jumps_sq()
    }

    pub fn energy(&self) -> f64 {
        self.energy_sq().sqrt()
    }

    fn as_array(&self) -> [f64; 7] {
        [
            self.p,
            self.q,
            self.u,
            self.jumps_x,
            self.jumps_x_outflow,
            self.jumps_y,
            self.jumps_y_outflow,
        ]
    }

    pub fn all_nonnegative(&self) -> bool {
        self.as_array().iter().all(|v| *v >= 0.0)
    }
}

/// Values of a field at the tensor points of `table` on one element,
/// index `q + nq r`.
fn values_at_points(table: &BasisTable, c: &[f64], out: &mut [f64]) {
    let n1 = table.nb();
    let nq = table.npts();
    for r in 0..nq {
        for q in 0..nq {
            let mut s = 0.0;
            for b in 0..n1 {
                let vb = table.value(r, b);
                for a in 0..n1 {
                    s += c[a + n1 * b] * table.value(q, a) * vb;
                }
            }
            out[q + nq * r] = s;
        }
    }
}

/// Traces on the four sides of the reference square at the edge points:
/// `[left, right, bottom, top]`, each of length `nq`.
fn traces(table: &BasisTable, c: &[f64]) -> [Vec<f64>; 4] {
    let n1 = table.nb();
    let nq = table.npts();
    let side = |fixed_is_x: bool, end: &[f64]| -> Vec<f64> {
        (0..nq)
            .map(|r| {
                let mut s = 0.0;
                for b in 0..n1 {
                    for a in 0..n1 {
                        let (pa, pb) = if fixed_is_x {
                            (end[a], table.value(r, b))
                        } else {
                            (table.value(r, a), end[b])
                        };
                        s += c[a + n1 * b] * pa * pb;
                    }
                }
                s
            })
            .collect()
    };
    [
        side(true, &table.left),
        side(true, &table.right),
        side(false, &table.left),
        side(false, &table.right),
    ]
}

struct Evaluator<'a> {
    space: &'a FemSpace,
    problem: &'a Problem,
    table: BasisTable,
}

impl<'a> Evaluator<'a> {
    fn new(space: &'a FemSpace, problem: &'a Problem) -> Result<Self> {
        Ok(Evaluator {
            space,
            problem,
            table: BasisTable::new(space.degree, error_quad_points(space.degree))?,
        })
    }

    fn volume(&self, v: Operand<'_>) -> Result<(f64, f64, f64)> {
        let exact = match v {
            Operand::ExactMinus(_) => Some(self.problem.exact()?),
            Operand::Discrete(_) => None,
        };
        let t = v.triple();
        check_degree(self.space, t)?;
        let eps = self.problem.epsilon;
        let nq = self.table.npts();
        let mut vu = vec![0.0; nq * nq];
        let mut vp = vec![0.0; nq * nq];
        let mut vq = vec![0.0; nq * nq];
        let (mut sp, mut sq, mut su) = (0.0, 0.0, 0.0);
        for e in 0..self.space.num_elements() {
            let g = self.space.geom(e);
            let jac = 0.25 * g.hx() * g.hy();
            values_at_points(&self.table, t.u.local(e), &mut vu);
            values_at_points(&self.table, t.p.local(e), &mut vp);
            values_at_points(&self.table, t.q.local(e), &mut vq);
            let (mut ep, mut eq, mut eu) = (0.0, 0.0, 0.0);
            for r in 0..nq {
                for q in 0..nq {
                    let i = q + nq * r;
                    let (x, y) = g.map(self.table.rule.nodes[q], self.table.rule.nodes[r]);
                    let w = self.table.rule.weights[q] * self.table.rule.weights[r];
                    let weight = self.problem.reaction_weight(x, y);
                    if !(weight >= 0.0) {
                        return Err(Error::Coercivity { value: weight, x, y });
                    }
                    let (du, dp, dq) = match exact {
                        Some(ex) => (
                            (ex.u)(x, y) - vu[i],
                            eps * (ex.u_x)(x, y) - vp[i],
                            eps * (ex.u_y)(x, y) - vq[i],
                        ),
                        None => (vu[i], vp[i], vq[i]),
                    };
                    if !(du.is_finite() && dp.is_finite() && dq.is_finite()) {
                        return Err(Error::NonFinite { x, y });
                    }
                    ep += w * dp * dp;
                    eq += w * dq * dq;
                    eu += w * weight * du * du;
                }
            }
            sp += jac * ep;
            sq += jac * eq;
            su += jac * eu;
        }
        Ok((sp / eps, sq / eps, su))
    }

    /// The four jump sums of a discrete `U`.
    fn jumps(&self, u: &DiscreteField, opts: &AssemblyOptions) -> Result<[f64; 4]> {
        let mesh = &self.space.mesh;
        let n = mesh.n();
        let nq = self.table.npts();
        let p = self.problem;
        let tr: Vec<[Vec<f64>; 4]> = (0..self.space.num_elements())
            .map(|e| traces(&self.table, u.local(e)))
            .collect();
        let nodes = &self.table.rule.nodes;
        let weights = &self.table.rule.weights;
        let (mut jx, mut jx_out, mut jy, mut jy_out) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..n {
            let (y0, y1) = mesh.y.cell(j);
            let hy = y1 - y0;
            for i in 0..=n {
                let x = mesh.x.points()[i];
                let mut s = 0.0;
                for r in 0..nq {
                    let y = 0.5 * (y0 + y1) + 0.5 * hy * nodes[r];
                    let plus = if i < n { tr[mesh.element_index(i, j)][0][r] } else { 0.0 };
                    let minus = if i > 0 {
                        tr[mesh.element_index(i - 1, j)][1][r]
                    } else {
                        0.0
                    };
                    let jump = plus - minus;
                    let a1 = (p.a1)(x, y);
                    let w = if i == n { 0.5 * a1 + opts.lambda1 } else { 0.5 * a1 };
                    s += weights[r] * w * jump * jump;
                }
                let s = 0.5 * hy * s;
                if i == n {
                    jx_out += s;
                } else {
                    jx += s;
                }
            }
        }
        for i in 0..n {
            let (x0, x1) = mesh.x.cell(i);
            let hx = x1 - x0;
            for j in 0..=n {
                let y = mesh.y.points()[j];
                let mut s = 0.0;
                for q in 0..nq {
                    let x = 0.5 * (x0 + x1) + 0.5 * hx * nodes[q];
                    let plus = if j < n { tr[mesh.element_index(i, j)][2][q] } else { 0.0 };
                    let minus = if j > 0 {
                        tr[mesh.element_index(i, j - 1)][3][q]
                    } else {
                        0.0
                    };
                    let jump = plus - minus;
                    let a2 = (p.a2)(x, y);
                    let w = if j == n { 0.5 * a2 + opts.lambda2 } else { 0.5 * a2 };
                    s += weights[q] * w * jump * jump;
                }
                let s = 0.5 * hx * s;
                if j == n {
                    jy_out += s;
                } else {
                    jy += s;
                }
            }
        }
        Ok([jx, jx_out, jy, jy_out])
    }
}

fn check_degree(space: &FemSpace, t: &DiscreteTriple) -> Result<()> {
    let expected = space.nb() * space.num_elements();
    for f in [&t.u, &t.p, &t.q] {
        if f.degree != space.degree || f.coeffs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: f.coeffs.len(),
            });
        }
    }
    Ok(())
}

/// `||V||`.
pub fn lnorm_triple(space: &FemSpace, problem: &Problem, v: Operand<'_>) -> Result<f64> {
    let (p, q, u) = Evaluator::new(space, problem)?.volume(v)?;
    Ok((p + q + u).sqrt())
}

/// All squared terms of `|||V|||^2`.
pub fn energy_components(
    space: &FemSpace,
    problem: &Problem,
    opts: &AssemblyOptions,
    v: Operand<'_>,
) -> Result<NormComponents> {
    let ev = Evaluator::new(space, problem)?;
    let (p, q, u) = ev.volume(v)?;
    let [jumps_x, jumps_x_outflow, jumps_y, jumps_y_outflow] = ev.jumps(&v.triple().u, opts)?;
    Ok(NormComponents {
        p,
        q,
        u,
        jumps_x,
        jumps_x_outflow,
        jumps_y,
        jumps_y_outflow,
    })
}

/// `|||V|||`.
pub fn energy_norm(space: &FemSpace, problem: &Problem, opts: &AssemblyOptions, v: Operand<'_>) -> Result<f64> {
    Ok(energy_components(space, problem, opts, v)?.energy())
}

/// The reported errors of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    /// `||w - W||`
    pub l2_triple: f64,
    /// `|||w - W|||`
    pub energy: f64,
    /// `|||Pi w - W|||`
    pub supercloseness: f64,
    /// `|||w - Pi w|||`, bounds `| energy - supercloseness |`.
    pub projection: f64,
    /// Terms of `|||w - W|||^2`.
    pub components: NormComponents,
}

/// Errors of `solution` against the problem's exact solution; `projected`
/// is `project_triple`'s output on the same space.
pub fn error_report(
    solution: &DiscreteTriple,
    projected: &DiscreteTriple,
    problem: &Problem,
    space: &FemSpace,
    opts: &AssemblyOptions,
) -> Result<ErrorReport> {
    problem.exact()?;
    let components = energy_components(space, problem, opts, Operand::ExactMinus(solution))?;
    let diff = projected.sub(solution);
    let supercloseness = energy_norm(space, problem, opts, Operand::Discrete(&diff))?;
    let projection = energy_norm(space, problem, opts, Operand::ExactMinus(projected))?;
    Ok(ErrorReport {
        l2_triple: components.triple_sq().sqrt(),
        energy: components.energy(),
        supercloseness,
        projection,
        components,
    })
}
