//! Gauss-Legendre rules and the Legendre basis on `[-1, 1]`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest supported number of Gauss points.
pub const MAX_GAUSS_POINTS: usize = 32;

/// An `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[-1, 1]`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule, ascending.
///
/// Nodes are found by Newton iteration on `P_n` from Chebyshev-like
/// starting values; weights are `2 / ((1 - t^2) P_n'(t)^2)`.
pub fn gauss_legendre(n: usize) -> Result<QuadRule> {
    if n == 0 || n > MAX_GAUSS_POINTS {
        return Err(Error::InvalidParameter(format!(
            "Gauss-Legendre order must be in 1..={MAX_GAUSS_POINTS}, got {n}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            let dt = p / d;
            t -= dt;
            if dt.abs() <= 1e-15 {
                break;
            }
        }
        let dp = legendre_with_derivative(n, t).1;
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        nodes[i] = -t;
        nodes[n - 1 - i] = t;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule { nodes, weights })
}

/// `(P_n(t), P_n'(t))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * t * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = if (t * t - 1.0).abs() < 1e-300 {
        0.5 * nf * (nf + 1.0) * t.powi(n as i32 + 1)
    } else {
        nf * (t * p1 - p0) / (t * t - 1.0)
    };
    (p1, d)
}

/// Values and derivatives of `P_0 .. P_k` at `t`.
///
/// Derivatives use `P'_{n+1} = P'_{n-1} + (2n + 1) P_n`, which stays finite at
/// the endpoints.
pub fn legendre_eval(k: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; k + 1];
    let mut d = vec![0.0; k + 1];
    legendre_eval_into(t, &mut v, &mut d);
    (v, d)
}

/// In-place variant of [`legendre_eval`]; the degree is `values.len() - 1`.
pub fn legendre_eval_into(t: f64, values: &mut [f64], derivs: &mut [f64]) {
    let k = values.len() - 1;
    values[0] = 1.0;
    derivs[0] = 0.0;
    if k == 0 {
        return;
    }
    values[1] = t;
    derivs[1] = 1.0;
    for n in 1..k {
        let nf = n as f64;
        values[n + 1] = ((2.0 * nf + 1.0) * t * values[n] - nf * values[n - 1]) / (nf + 1.0);
        derivs[n + 1] = derivs[n - 1] + (2.0 * nf + 1.0) * values[n];
    }
}

/// `int_{-1}^{1} P_n^2 = 2 / (2n + 1)`.
pub fn legendre_norm_sq(n: usize) -> f64 {
    2.0 / (2.0 * n as f64 + 1.0)
}

/// Legendre polynomials of degree `<= k` tabulated at the nodes of a rule.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub degree: usize,
    pub rule: QuadRule,
    /// `values[q * (k+1) + a] = P_a(t_q)`.
    pub values: Vec<f64>,
    /// `derivs[q * (k+1) + a] = P_a'(t_q)`.
    pub derivs: Vec<f64>,
    /// `P_a(-1) = (-1)^a`.
    pub left: Vec<f64>,
    /// `P_a(1) = 1`.
    pub right: Vec<f64>,
}

impl BasisTable {
    pub fn new(degree: usize, points: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter("polynomial degree must be >= 1".into()));
        }
        let rule = gauss_legendre(points)?;
        let nb = degree + 1;
        let mut values = vec![0.0; rule.len() * nb];
        let mut derivs = vec![0.0; rule.len() * nb];
        for (q, &t) in rule.nodes.iter().enumerate() {
            legendre_eval_into(t, &mut values[q * nb..][..nb], &mut derivs[q * nb..][..nb]);
        }
        let left = (0..nb).map(|a| if a % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let right = vec![1.0; nb];
        Ok(BasisTable {
            degree,
            rule,
            values,
            derivs,
            left,
            right,
        })
    }

    pub fn nb(&self) -> usize {
        self.degree + 1
    }

    pub fn npts(&self) -> usize {
        self.rule.len()
    }

    #[inline]
    pub fn value(&self, q: usize, a: usize) -> f64 {
        self.values[q * (self.degree + 1) + a]
    }

    #[inline]
    pub fn deriv(&self, q: usize, a: usize) -> f64 {
        self.derivs[q * (self.degree + 1) + a]
    }
}
