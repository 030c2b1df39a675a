//! Problem data for `-eps Lap u + a . grad u + b u = f` on the unit square
//! with `u = 0` on the boundary.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A scalar coefficient `(x, y) -> value`. Must be pure.
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Step used for the central-difference divergence when no analytic
/// derivative of `a` is supplied.
pub const DIV_FD_STEP: f64 = 1e-6;

/// Closed-form exact solution and its first derivatives.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: ScalarFn,
    pub u_x: ScalarFn,
    pub u_y: ScalarFn,
    pub u_xx: Option<ScalarFn>,
    pub u_yy: Option<ScalarFn>,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExactSolution")
            .field("second_derivatives", &self.u_xx.is_some())
            .finish()
    }
}

/// Coefficients, forcing and the constants `alpha1`, `alpha2`, `beta` with
/// `a1 >= alpha1`, `a2 >= alpha2`, `b - div(a)/2 >= beta`.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub epsilon: f64,
    pub a1: ScalarFn,
    pub a2: ScalarFn,
    pub b: ScalarFn,
    pub f: ScalarFn,
    /// Analytic `d a1/dx + d a2/dy`, if known.
    pub div_a: Option<ScalarFn>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub exact: Option<ExactSolution>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("epsilon", &self.epsilon)
            .field("alpha1", &self.alpha1)
            .field("alpha2", &self.alpha2)
            .field("beta", &self.beta)
            .field("analytic_div_a", &self.div_a.is_some())
            .field("exact", &self.exact)
            .finish()
    }
}

fn func(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        epsilon: f64,
        a1: ScalarFn,
        a2: ScalarFn,
        b: ScalarFn,
        f: ScalarFn,
        alpha1: f64,
        alpha2: f64,
        beta: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(alpha1 > 0.0 && alpha2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha1, alpha2 must be positive (got {alpha1}, {alpha2})"
            )));
        }
        Ok(Problem {
            name: name.into(),
            epsilon,
            a1,
            a2,
            b,
            f,
            div_a: None,
            alpha1,
            alpha2,
            beta,
            exact: None,
        })
    }

    pub fn with_div_a(mut self, div_a: ScalarFn) -> Self {
        self.div_a = Some(div_a);
        self
    }

    pub fn with_exact(mut self, exact: ExactSolution) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn exact(&self) -> Result<&ExactSolution> {
        self.exact.as_ref().ok_or(Error::MissingExactSolution)
    }

    /// `div a`, analytic when available, otherwise by central differences.
    pub fn div_a(&self, x: f64, y: f64) -> f64 {
        match &self.div_a {
            Some(d) => d(x, y),
            None => {
                let h = DIV_FD_STEP;
                ((self.a1)(x + h, y) - (self.a1)(x - h, y)) / (2.0 * h)
                    + ((self.a2)(x, y + h) - (self.a2)(x, y - h)) / (2.0 * h)
            }
        }
    }

    /// Weight `b - div(a)/2` of the triple norm.
    pub fn reaction_weight(&self, x: f64, y: f64) -> f64 {
        (self.b)(x, y) - 0.5 * self.div_a(x, y)
    }

    /// Samples `b - div(a)/2`, `a1` and `a2` on a 101 x 101 grid.
    pub fn verify_coercivity(&self) -> CoercivityReport {
        const SAMPLES: usize = 101;
        let mut report = CoercivityReport {
            min_weight: f64::INFINITY,
            argmin: (0.0, 0.0),
            min_a1: f64::INFINITY,
            min_a2: f64::INFINITY,
            beta: self.beta,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        };
        for j in 0..SAMPLES {
            let y = j as f64 / (SAMPLES - 1) as f64;
            for i in 0..SAMPLES {
                let x = i as f64 / (SAMPLES - 1) as f64;
                let w = self.reaction_weight(x, y);
                if w < report.min_weight {
                    report.min_weight = w;
                    report.argmin = (x, y);
                }
                report.min_a1 = report.min_a1.min((self.a1)(x, y));
                report.min_a2 = report.min_a2.min((self.a2)(x, y));
            }
        }
        if !report.satisfied() {
            log::warn!("{}: {report}", self.name);
        }
        report
    }

    /// The manufactured test case with layers at `x = 1` and `y = 1`:
    ///
    /// `a = (2 - x, 3 - y^3)`, `b = 1`,
    /// `u = (1 - e^{-(1-x)/eps}) y^3 (1 - e^{-2(1-y)/eps}) sin x`.
    pub fn example1(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "example 1 needs 0 < eps < 1, got {epsilon}"
            )));
        }
        let eps = epsilon;
        // X(x) = (1 - E1) sin x, E1 = exp(-t1), t1 = (1 - x)/eps
        let x_parts = move |x: f64| {
            let t1 = (1.0 - x) / eps;
            let e1 = (-t1).exp();
            let (s, c) = x.sin_cos();
            (t1, e1, s, c)
        };
        // Y(y) = y^3 (1 - E2), E2 = exp(-t2), t2 = 2(1 - y)/eps
        let y_parts = move |y: f64| {
            let t2 = 2.0 * (1.0 - y) / eps;
            (t2, (-t2).exp())
        };
        let xf = move |x: f64| {
            let (_, e1, s, _) = x_parts(x);
            (1.0 - e1) * s
        };
        let dxf = move |x: f64| {
            let (_, e1, s, c) = x_parts(x);
            -(e1 / eps) * s + (1.0 - e1) * c
        };
        let ddxf = move |x: f64| {
            let (_, e1, s, c) = x_parts(x);
            -(e1 / (eps * eps)) * s - 2.0 * (e1 / eps) * c - (1.0 - e1) * s
        };
        let yf = move |y: f64| {
            let (_, e2) = y_parts(y);
            y * y * y * (1.0 - e2)
        };
        let dyf = move |y: f64| {
            let (_, e2) = y_parts(y);
            3.0 * y * y * (1.0 - e2) - 2.0 * y * y * y * e2 / eps
        };
        let ddyf = move |y: f64| {
            let (_, e2) = y_parts(y);
            6.0 * y * (1.0 - e2) - 12.0 * y * y * e2 / eps - 4.0 * y * y * y * e2 / (eps * eps)
        };
        // -eps X'' + a1 X' with the O(1/eps) layer terms combined analytically
        let lx = move |x: f64| {
            let (t1, e1, s, c) = x_parts(x);
            -t1 * e1 * s + 2.0 * e1 * c + eps * (1.0 - e1) * s + (2.0 - x) * (1.0 - e1) * c
        };
        // -eps Y'' + a2 Y'
        let ly = move |y: f64| {
            let (t2, e2) = y_parts(y);
            let y2 = y * y;
            let y3 = y2 * y;
            -6.0 * eps * y * (1.0 - e2) + 12.0 * y2 * e2 + (3.0 - y3) * 3.0 * y2 * (1.0 - e2)
                - y3 * (y2 + y + 1.0) * t2 * e2
        };
        let exact = ExactSolution {
            u: func(move |x, y| xf(x) * yf(y)),
            u_x: func(move |x, y| dxf(x) * yf(y)),
            u_y: func(move |x, y| xf(x) * dyf(y)),
            u_xx: Some(func(move |x, y| ddxf(x) * yf(y))),
            u_yy: Some(func(move |x, y| xf(x) * ddyf(y))),
        };
        let f = func(move |x, y| lx(x) * yf(y) + xf(x) * ly(y) + xf(x) * yf(y));
        Ok(Problem::new(
            "example1",
            epsilon,
            func(|x, _| 2.0 - x),
            func(|_, y| 3.0 - y * y * y),
            func(|_, _| 1.0),
            f,
            1.0,
            2.0,
            1.5,
        )?
        .with_div_a(func(|_, y| -1.0 - 3.0 * y * y))
        .with_exact(exact))
    }

    /// Constant coefficients `a = (a1, a2)`, reaction `b`, and the exact
    /// solution `u = x(1-x) y(1-y)`, which lies in `Q^2` and vanishes on the
    /// boundary.
    pub fn polynomial_bubble(epsilon: f64, a1: f64, a2: f64, b: f64) -> Result<Self> {
        let g = |t: f64| t * (1.0 - t);
        let dg = |t: f64| 1.0 - 2.0 * t;
        let exact = ExactSolution {
            u: func(move |x, y| g(x) * g(y)),
            u_x: func(move |x, y| dg(x) * g(y)),
            u_y: func(move |x, y| g(x) * dg(y)),
            u_xx: Some(func(move |_, y| -2.0 * g(y))),
            u_yy: Some(func(move |x, _| -2.0 * g(x))),
        };
        let f = func(move |x, y| {
            -epsilon * (-2.0 * g(y) - 2.0 * g(x)) + a1 * dg(x) * g(y) + a2 * g(x) * dg(y) + b * g(x) * g(y)
        });
        Ok(Problem::new(
            "bubble",
            epsilon,
            func(move |_, _| a1),
            func(move |_, _| a2),
            func(move |_, _| b),
            f,
            a1,
            a2,
            b,
        )?
        .with_div_a(func(|_, _| 0.0))
        .with_exact(exact))
    }
}

/// Sampled coercivity data.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityReport {
    /// Minimum of `b - div(a)/2`.
    pub min_weight: f64,
    pub argmin: (f64, f64),
    pub min_a1: f64,
    pub min_a2: f64,
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl CoercivityReport {
    /// `min(b - div(a)/2) >= beta > 0` and the convection lower bounds hold.
    pub fn satisfied(&self) -> bool {
        self.beta > 0.0
            && self.min_weight >= self.beta * (1.0 - 1e-12)
            && self.min_a1 >= self.alpha1 * (1.0 - 1e-12)
            && self.min_a2 >= self.alpha2 * (1.0 - 1e-12)
    }

    /// Strict positivity of `b - div(a)/2`; the scheme needs this even when
    /// the declared bounds are off.
    pub fn positive(&self) -> bool {
        self.min_weight > 0.0
    }
}

impl fmt::Display for CoercivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "min(b - div a / 2) = {:.6} at ({:.3}, {:.3}) [beta = {}], min a1 = {:.6} [alpha1 = {}], min a2 = {:.6} [alpha2 = {}]{}",
            self.min_weight,
            self.argmin.0,
            self.argmin.1,
            self.beta,
            self.min_a1,
            self.alpha1,
            self.min_a2,
            self.alpha2,
            if self.satisfied() { "" } else { " VIOLATED" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn example1_boundary_values_vanish() {
        for eps in [1e-2, 1e-8] {
            let p = Problem::example1(eps).unwrap();
            let u = &p.exact().unwrap().u;
            for i in 0..=100 {
                let s = i as f64 / 100.0;
                for (x, y) in [(0.0, s), (1.0, s), (s, 0.0), (s, 1.0)] {
                    assert!(u(x, y).abs() <= 1e-12, "u({x},{y}) = {}", u(x, y));
                }
            }
        }
    }

    #[test]
    fn example1_coercivity() {
        let p = Problem::example1(1e-3).unwrap();
        let r = p.verify_coercivity();
        assert_relative_eq!(r.min_weight, 1.5, epsilon = 1e-14);
        assert_eq!(r.argmin.1, 0.0);
        assert!(r.satisfied());
        assert_relative_eq!(p.reaction_weight(0.3, 0.5), 1.5 + 1.5 * 0.25);
    }

    #[test]
    fn constant_coefficients_coercivity() {
        let p = Problem::polynomial_bubble(1e-2, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(p.verify_coercivity().min_weight, 1.0);

        let mut p = Problem::polynomial_bubble(1e-2, 1.0, 1.0, 0.0).unwrap();
        p.beta = 0.1;
        let r = p.verify_coercivity();
        assert_eq!(r.min_weight, 0.0);
        assert!(!r.satisfied());
        assert!(!r.positive());
    }

    #[test]
    fn finite_difference_divergence() {
        let mut p = Problem::example1(1e-2).unwrap();
        let analytic = p.div_a(0.4, 0.7);
        p.div_a = None;
        assert!((p.div_a(0.4, 0.7) - analytic).abs() < 1e-8);
    }

    #[test]
    fn example1_rejects_bad_epsilon() {
        assert!(Problem::example1(0.0).is_err());
        assert!(Problem::example1(1.0).is_err());
    }

    /// Fourth-order central difference for a second derivative.
    fn d2(g: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        (-g(t + 2.0 * h) + 16.0 * g(t + h) - 30.0 * g(t) + 16.0 * g(t - h) - g(t - 2.0 * h)) / (12.0 * h * h)
    }

    #[test]
    fn manufactured_forcing_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for eps in [1e-2, 1e-8] {
            let p = Problem::example1(eps).unwrap();
            let ex = p.exact().unwrap();
            let fmax = (0..=200)
                .flat_map(|i| (0..=200).map(move |j| (i as f64 / 200.0, j as f64 / 200.0)))
                .map(|(x, y)| (p.f)(x, y).abs())
                .fold(0.0f64, f64::max);
            let h = 1e-3;
            let mut checked = 0;
            while checked < 100 {
                let x: f64 = rng.gen_range(0.01..0.99);
                let y: f64 = rng.gen_range(0.01..0.99);
                if x > 1.0 - 5.0 * eps - 2.0 * h || y > 1.0 - 5.0 * eps - 2.0 * h {
                    continue;
                }
                let lap = d2(|s| (ex.u)(s, y), x, h) + d2(|s| (ex.u)(x, s), y, h);
                let lhs = -eps * lap
                    + (p.a1)(x, y) * (ex.u_x)(x, y)
                    + (p.a2)(x, y) * (ex.u_y)(x, y)
                    + (p.b)(x, y) * (ex.u)(x, y);
                let res = (lhs - (p.f)(x, y)).abs() / fmax;
                assert!(res < 1e-6, "eps={eps} ({x},{y}): residual {res:e}");
                checked += 1;
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let p = Problem::example1(1e-2).unwrap();
        let ex = p.exact().unwrap();
        let h = 1e-6;
        for &(x, y) in &[(0.3, 0.4), (0.97, 0.5), (0.5, 0.985), (0.99, 0.99)] {
            let fx = ((ex.u)(x + h, y) - (ex.u)(x - h, y)) / (2.0 * h);
            let fy = ((ex.u)(x, y + h) - (ex.u)(x, y - h)) / (2.0 * h);
            assert!((fx - (ex.u_x)(x, y)).abs() < 1e-5 * (1.0 + fx.abs()));
            assert!((fy - (ex.u_y)(x, y)).abs() < 1e-5 * (1.0 + fy.abs()));
            let hh = 1e-4;
            let fxx = d2(|s| (ex.u)(s, y), x, hh);
            let uxx = ex.u_xx.as_ref().unwrap()(x, y);
            assert!((fxx - uxx).abs() < 1e-4 * (1.0 + uxx.abs()));
        }
    }
}
