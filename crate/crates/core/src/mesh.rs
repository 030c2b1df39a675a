//! Layer-adapted meshes refined towards `x = 1` (and `y = 1`).
//!
//! Every mesh is the tensor product of two one-dimensional grids with
//! `N + 1` points. The first half of the grid is uniform on `[0, 1 - tau]`,
//! the second half is graded through a mesh-generating function `phi` with
//! `phi(0) = 0`, `phi' > 0`, `phi'' >= 0`:
//!
//! ```text
//! x_i = 2 (1 - tau) i / N                       i <= N/2
//! x_i = 1 - (sigma eps / alpha) phi((N - i)/N)  i >  N/2
//! ```
//!
//! with transition point `tau = min(1/2, (sigma eps / alpha) phi(1/2))`.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

/// The three mesh families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeshKind {
    /// Piecewise uniform Shishkin mesh, `phi(t) = 2 t ln N`.
    Shishkin,
    /// Bakhvalov-Shishkin mesh, `phi(t) = -ln(1 - 2 (1 - 1/N) t)`.
    BakhvalovShishkin,
    /// Bakhvalov-type mesh, `phi(t) = -ln(1 - 2 (1 - eps) t)`.
    BakhvalovType,
}

impl MeshKind {
    pub const ALL: [MeshKind; 3] = [MeshKind::Shishkin, MeshKind::BakhvalovShishkin, MeshKind::BakhvalovType];

    /// Short name used on the command line and in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            MeshKind::Shishkin => "shishkin",
            MeshKind::BakhvalovShishkin => "bs",
            MeshKind::BakhvalovType => "bakhvalov",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shishkin" | "s" | "s-mesh" => Ok(MeshKind::Shishkin),
            "bs" | "bakhvalov-shishkin" | "bs-mesh" => Ok(MeshKind::BakhvalovShishkin),
            "bakhvalov" | "b" | "b-mesh" => Ok(MeshKind::BakhvalovType),
            other => Err(Error::InvalidParameter(format!(
                "unknown mesh kind '{other}' (expected shishkin, bs or bakhvalov)"
            ))),
        }
    }

    fn check_args(self, n: usize, epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!("N must be >= 2, got {n}")));
        }
        if self == MeshKind::BakhvalovType && epsilon >= 1.0 {
            return Err(Error::Domain(format!(
                "Bakhvalov-type mesh needs epsilon < 1 (ln(1/eps) must be positive), got {epsilon}"
            )));
        }
        Ok(())
    }

    /// Mesh-generating function `phi(t)` on `[0, 1/2]`.
    pub fn phi(self, t: f64, n: usize, epsilon: f64) -> f64 {
        let nf = n as f64;
        match self {
            MeshKind::Shishkin => 2.0 * t * nf.ln(),
            MeshKind::BakhvalovShishkin => -((1.0 - 2.0 * t) + 2.0 * t / nf).ln(),
            MeshKind::BakhvalovType => -((1.0 - 2.0 * t) + 2.0 * epsilon * t).ln(),
        }
    }

    /// Derivative `phi'(t)`.
    pub fn dphi(self, t: f64, n: usize, epsilon: f64) -> f64 {
        let nf = n as f64;
        match self {
            MeshKind::Shishkin => 2.0 * nf.ln(),
            MeshKind::BakhvalovShishkin => {
                let c = 2.0 * (1.0 - 1.0 / nf);
                c / (1.0 - c * t)
            }
            MeshKind::BakhvalovType => {
                let c = 2.0 * (1.0 - epsilon);
                c / (1.0 - c * t)
            }
        }
    }

    /// Closed form of `phi(1/2)`: `ln N`, `ln N`, `ln(1/eps)`.
    pub fn phi_half(self, n: usize, epsilon: f64) -> f64 {
        match self {
            MeshKind::Shishkin | MeshKind::BakhvalovShishkin => (n as f64).ln(),
            MeshKind::BakhvalovType => (1.0 / epsilon).ln(),
        }
    }

    /// Mesh-characterizing function `psi = exp(-phi)`, in closed form.
    pub fn psi(self, t: f64, n: usize, epsilon: f64) -> f64 {
        let nf = n as f64;
        match self {
            MeshKind::Shishkin => nf.powf(-2.0 * t),
            MeshKind::BakhvalovShishkin => (1.0 - 2.0 * t) + 2.0 * t / nf,
            MeshKind::BakhvalovType => (1.0 - 2.0 * t) + 2.0 * epsilon * t,
        }
    }

    /// `psi(1/2)`: `1/N`, `1/N`, `eps`.
    pub fn psi_half(self, n: usize, epsilon: f64) -> f64 {
        match self {
            MeshKind::Shishkin | MeshKind::BakhvalovShishkin => 1.0 / n as f64,
            MeshKind::BakhvalovType => epsilon,
        }
    }

    /// Tabulated bound on `max |psi'|`: `2 ln N` for Shishkin, `2` otherwise.
    pub fn max_abs_dpsi(self, n: usize) -> f64 {
        match self {
            MeshKind::Shishkin => 2.0 * (n as f64).ln(),
            _ => 2.0,
        }
    }

    /// Tabulated `min phi'`.
    pub fn min_dphi(self, n: usize) -> f64 {
        match self {
            MeshKind::Shishkin => 2.0 * (n as f64).ln(),
            _ => 2.0,
        }
    }

    /// Tabulated bound on `max phi'`: `2 ln N`, `2N`, `2/eps`.
    pub fn max_dphi(self, n: usize, epsilon: f64) -> f64 {
        match self {
            MeshKind::Shishkin => 2.0 * (n as f64).ln(),
            MeshKind::BakhvalovShishkin => 2.0 * n as f64,
            MeshKind::BakhvalovType => 2.0 / epsilon,
        }
    }
}

impl fmt::Display for MeshKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MeshKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeshKind::parse(s)
    }
}

/// Mesh transition parameter `tau = min(1/2, sigma eps phi(1/2) / alpha)`.
pub fn transition_parameter(kind: MeshKind, n: usize, epsilon: f64, sigma: f64, alpha: f64) -> Result<f64> {
    kind.check_args(n, epsilon)?;
    if !(sigma > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma and alpha must be positive (sigma = {sigma}, alpha = {alpha})"
        )));
    }
    Ok(f64::min(0.5, sigma * epsilon / alpha * kind.phi_half(n, epsilon)))
}

/// A one-dimensional layer-adapted grid on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    pub kind: MeshKind,
    pub n: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub tau: f64,
    /// True when `tau` was clamped to `1/2`; the grid is then uniform.
    pub clamped: bool,
    points: Vec<f64>,
}

impl Mesh1D {
    /// Builds the grid `x_0 < x_1 < ... < x_N`.
    pub fn new(kind: MeshKind, n: usize, epsilon: f64, sigma: f64, alpha: f64) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "N must be even and at least 4, got {n}"
            )));
        }
        let tau = transition_parameter(kind, n, epsilon, sigma, alpha)?;
        let unclamped = sigma * epsilon / alpha * kind.phi_half(n, epsilon);
        let clamped = unclamped >= 0.5;
        let nf = n as f64;
        let half = n / 2;

        let points: Vec<f64> = if clamped {
            log::warn!(
                "tau clamped to 1/2 (sigma*eps*phi(1/2)/alpha = {unclamped:.3e}): \
                 problem is not singularly perturbed, using a uniform mesh"
            );
            (0..=n).map(|i| i as f64 / nf).collect()
        } else {
            let scale = sigma * epsilon / alpha;
            (0..=n)
                .map(|i| {
                    if i <= half {
                        2.0 * (1.0 - tau) * i as f64 / nf
                    } else {
                        1.0 - scale * kind.phi((n - i) as f64 / nf, n, epsilon)
                    }
                })
                .collect()
        };
        if epsilon > 1.0 / nf {
            log::warn!("eps = {epsilon:.3e} exceeds 1/N = {:.3e}", 1.0 / nf);
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(format!(
                "{kind} mesh with N = {n}, eps = {epsilon:e}, sigma = {sigma}, alpha = {alpha} \
                 is not strictly increasing"
            )));
        }
        Ok(Mesh1D {
            kind,
            n,
            epsilon,
            sigma,
            alpha,
            tau,
            clamped,
            points,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Width `h_i = x_i - x_{i-1}` of the `i`-th interval, `1 <= i <= N`.
    pub fn h(&self, i: usize) -> f64 {
        self.points[i] - self.points[i - 1]
    }

    /// Interval `(x_{i-1}, x_i)` with zero-based index `cell = i - 1`.
    pub fn cell(&self, cell: usize) -> (f64, f64) {
        (self.points[cell], self.points[cell + 1])
    }

    /// Zero-based cell holding `x`; nodes belong to the cell on their left,
    /// except `x = 0` which belongs to the first cell.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&x) {
            return None;
        }
        // first index with points[idx] >= x
        let idx = self.points.partition_point(|&p| p < x);
        Some(idx.max(1) - 1)
    }

    /// `(min h, max h)` over the coarse half `i <= N/2` and the fine half `i > N/2`.
    pub fn spacing_ranges(&self) -> ((f64, f64), (f64, f64)) {
        let half = self.n / 2;
        let range = |r: std::ops::RangeInclusive<usize>| {
            r.map(|i| self.h(i))
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), h| (lo.min(h), hi.max(h)))
        };
        (range(1..=half), range(half + 1..=self.n))
    }

    /// Writes one abscissa per line with 17 significant digits.
    pub fn write_points<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.points {
            writeln!(out, "{p:.16e}")?;
        }
        Ok(())
    }
}

/// Shorthand for [`Mesh1D::new`].
pub fn build_mesh_1d(kind: MeshKind, n: usize, epsilon: f64, sigma: f64, alpha: f64) -> Result<Mesh1D> {
    Mesh1D::new(kind, n, epsilon, sigma, alpha)
}

/// Tensor-product mesh `{K_ij = I_i x J_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMesh {
    pub x: Mesh1D,
    pub y: Mesh1D,
}

impl TensorMesh {
    /// Same kind and `N` in both directions; `alpha1`/`alpha2` give independent
    /// transition points in `x` and `y`.
    pub fn new(kind: MeshKind, n: usize, epsilon: f64, sigma: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        Ok(TensorMesh {
            x: Mesh1D::new(kind, n, epsilon, sigma, alpha1)?,
            y: Mesh1D::new(kind, n, epsilon, sigma, alpha2)?,
        })
    }

    pub fn from_parts(x: Mesh1D, y: Mesh1D) -> Result<Self> {
        if x.n != y.n {
            return Err(Error::InvalidParameter(format!(
                "x and y grids differ in size ({} vs {})",
                x.n, y.n
            )));
        }
        Ok(TensorMesh { x, y })
    }

    /// Intervals per direction.
    pub fn n(&self) -> usize {
        self.x.n
    }

    pub fn num_elements(&self) -> usize {
        self.x.n * self.y.n
    }

    /// Element index `e = ix + N * iy` (zero-based cells).
    pub fn element_index(&self, ix: usize, iy: usize) -> usize {
        ix + self.x.n * iy
    }

    pub fn element_cells(&self, e: usize) -> (usize, usize) {
        (e % self.x.n, e / self.x.n)
    }

    /// `((x_{i-1}, x_i), (y_{j-1}, y_j))` of element `e`.
    pub fn element_bounds(&self, e: usize) -> ((f64, f64), (f64, f64)) {
        let (ix, iy) = self.element_cells(e);
        (self.x.cell(ix), self.y.cell(iy))
    }

    pub fn total_area(&self) -> f64 {
        let mut total = 0.0;
        for iy in 0..self.y.n {
            let hy = self.y.h(iy + 1);
            for ix in 0..self.x.n {
                total += self.x.h(ix + 1) * hy;
            }
        }
        total
    }

    /// Element containing `(x, y)`, resolving edges to the left/lower element.
    pub fn locate(&self, x: f64, y: f64) -> Result<usize> {
        match (self.x.locate(x), self.y.locate(y)) {
            (Some(ix), Some(iy)) => Ok(self.element_index(ix, iy)),
            _ => Err(Error::OutOfDomain { x, y }),
        }
    }

    /// x-direction grid, blank line, y-direction grid.
    pub fn write_points<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        self.x.write_points(&mut out)?;
        writeln!(out)?;
        self.y.write_points(&mut out)
    }

    pub fn report(&self, degree: usize) -> MeshReport {
        let dir = |m: &Mesh1D| {
            let (coarse, fine) = m.spacing_ranges();
            DirectionReport {
                tau: m.tau,
                alpha: m.alpha,
                clamped: m.clamped,
                coarse_h: coarse,
                fine_h: fine,
            }
        };
        let n = self.n();
        let max_abs_dpsi = self.x.kind.max_abs_dpsi(n);
        MeshReport {
            kind: self.x.kind,
            n,
            epsilon: self.x.epsilon,
            sigma: self.x.sigma,
            x: dir(&self.x),
            y: dir(&self.y),
            max_abs_dpsi,
            rate_factor: (max_abs_dpsi / n as f64).powi(degree as i32 + 1),
            degree,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionReport {
    pub tau: f64,
    pub alpha: f64,
    pub clamped: bool,
    /// `(min, max)` spacing for `i <= N/2`.
    pub coarse_h: (f64, f64),
    /// `(min, max)` spacing for `i > N/2`.
    pub fine_h: (f64, f64),
}

/// Mesh diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshReport {
    pub kind: MeshKind,
    pub n: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub x: DirectionReport,
    pub y: DirectionReport,
    pub max_abs_dpsi: f64,
    /// `(N^{-1} max|psi'|)^{k+1}` for the supplied degree `k`.
    pub rate_factor: f64,
    pub degree: usize,
}

impl fmt::Display for MeshReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} mesh, N = {}, eps = {:e}, sigma = {}",
            self.kind, self.n, self.epsilon, self.sigma
        )?;
        for (name, d) in [("x", &self.x), ("y", &self.y)] {
            writeln!(
                f,
                "  {name}: alpha = {}, tau = {:.6e}{}, coarse h in [{:.4e}, {:.4e}], fine h in [{:.4e}, {:.4e}]",
                d.alpha,
                d.tau,
                if d.clamped { " (clamped)" } else { "" },
                d.coarse_h.0,
                d.coarse_h.1,
                d.fine_h.0,
                d.fine_h.1
            )?;
        }
        write!(
            f,
            "  max|psi'| = {:.6}, (max|psi'|/N)^(k+1) = {:.4e} for k = {}",
            self.max_abs_dpsi, self.rate_factor, self.degree
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn shishkin_transition_point() {
        let tau = transition_parameter(MeshKind::Shishkin, 8, 0.01, 4.0, 1.0).unwrap();
        assert_relative_eq!(tau, 0.04 * 8f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(tau, 0.0831777, epsilon = 1e-7);
    }

    #[test]
    fn bs_transition_point() {
        let tau = transition_parameter(MeshKind::BakhvalovShishkin, 16, 1e-8, 4.0, 1.0).unwrap();
        assert_relative_eq!(tau, 4e-8 * 16f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(tau, 1.109e-7, max_relative = 1e-3);
    }

    #[test]
    fn tau_clamps_and_mesh_goes_uniform() {
        for kind in MeshKind::ALL {
            let tau = transition_parameter(kind, 8, 0.5, 4.0, 1.0).unwrap();
            assert_eq!(tau, 0.5);
            let m = Mesh1D::new(kind, 8, 0.5, 4.0, 1.0).unwrap();
            assert!(m.clamped);
            for (i, p) in m.points().iter().enumerate() {
                assert_relative_eq!(*p, i as f64 / 8.0);
            }
        }
    }

    #[test]
    fn bakhvalov_needs_small_epsilon() {
        assert!(matches!(
            transition_parameter(MeshKind::BakhvalovType, 8, 1.0, 4.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(transition_parameter(MeshKind::Shishkin, 8, 0.0, 4.0, 1.0).is_err());
        assert!(transition_parameter(MeshKind::Shishkin, 8, 0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_n() {
        assert!(Mesh1D::new(MeshKind::Shishkin, 7, 1e-3, 4.0, 1.0).is_err());
        assert!(Mesh1D::new(MeshKind::Shishkin, 2, 1e-3, 4.0, 1.0).is_err());
        assert!(Mesh1D::new(MeshKind::Shishkin, 4, 1e-3, 4.0, 1.0).is_ok());
    }

    #[test]
    fn hand_evaluated_points() {
        let s = Mesh1D::new(MeshKind::Shishkin, 8, 0.01, 4.0, 1.0).unwrap();
        assert_relative_eq!(s.points()[6], 1.0 - 0.04 * 8f64.ln() / 2.0, epsilon = 1e-15);
        assert_relative_eq!(s.points()[6], 0.958411, epsilon = 1e-6);
        assert_eq!(s.points()[8], 1.0);

        let b = Mesh1D::new(MeshKind::BakhvalovType, 8, 0.01, 4.0, 1.0).unwrap();
        let expected = 1.0 + 0.04 * (1.0 - 2.0 * 0.99 / 8.0f64).ln();
        assert_relative_eq!(b.points()[7], expected, epsilon = 1e-15);
        // ln(0.7525) = -0.284354
        assert_relative_eq!(b.points()[7], 0.988626, epsilon = 1e-6);
    }

    #[test]
    fn phi_psi_properties() {
        for kind in MeshKind::ALL {
            for &(n, eps) in &[(8usize, 1e-2), (64, 1e-8), (256, 1e-10)] {
                assert_eq!(kind.phi(0.0, n, eps), 0.0);
                let ts: Vec<f64> = (0..=50).map(|i| 0.5 * i as f64 / 50.0).collect();
                for w in ts.windows(3) {
                    let (a, b, c) = (kind.phi(w[0], n, eps), kind.phi(w[1], n, eps), kind.phi(w[2], n, eps));
                    assert!(b > a && c > b, "{kind} not increasing");
                    assert!(a + c - 2.0 * b >= -1e-12, "{kind} not convex");
                }
                for &t in &ts {
                    let lhs = kind.psi(t, n, eps);
                    let rhs = (-kind.phi(t, n, eps)).exp();
                    assert!((lhs - rhs).abs() <= 1e-14, "{kind}: psi != exp(-phi) at {t}");
                    assert!(kind.dphi(t, n, eps) > 0.0);
                }
                let psi_half = kind.psi(0.5, n, eps);
                assert_relative_eq!(psi_half, kind.psi_half(n, eps), max_relative = 1e-14);
                assert_relative_eq!(kind.phi(0.5, n, eps), kind.phi_half(n, eps), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn tabulated_max_dpsi() {
        assert_relative_eq!(MeshKind::Shishkin.max_abs_dpsi(16), 2.0 * 16f64.ln());
        assert_eq!(MeshKind::BakhvalovShishkin.max_abs_dpsi(16), 2.0);
        assert_eq!(MeshKind::BakhvalovType.max_abs_dpsi(1024), 2.0);
        let m = TensorMesh::new(MeshKind::Shishkin, 16, 1e-4, 4.0, 1.0, 2.0).unwrap();
        let r = m.report(2);
        assert_relative_eq!(r.max_abs_dpsi, 2.0 * 16f64.ln());
        assert_relative_eq!(r.rate_factor, (2.0 * 16f64.ln() / 16.0).powi(3));
        assert!(r.x.tau > r.y.tau);
    }

    #[test]
    fn mesh_sweep_invariants() {
        let sigma = 4.0;
        let alpha = 1.0;
        for kind in MeshKind::ALL {
            let mut n = 4;
            while n <= 256 {
                for p in 2..=10 {
                    let eps = 10f64.powi(-p);
                    let m = Mesh1D::new(kind, n, eps, sigma, alpha).unwrap();
                    let pts = m.points();
                    assert_eq!(pts[0], 0.0);
                    assert_eq!(pts[n], 1.0);
                    assert!(pts.windows(2).all(|w| w[1] > w[0]));
                    if m.clamped {
                        continue;
                    }
                    assert!((pts[n / 2] - (1.0 - m.tau)).abs() <= 1e-14);
                    let nf = n as f64;
                    for i in 1..=n / 2 {
                        let h = m.h(i);
                        assert!(h >= 1.0 / nf && h <= 2.0 / nf);
                        assert_eq!(pts[i], 2.0 * (1.0 - m.tau) * i as f64 / nf);
                    }
                    for i in n / 2 + 1..=n {
                        let h = m.h(i);
                        match kind {
                            MeshKind::Shishkin => {
                                assert!(h <= 2.0 * sigma / alpha * eps * nf.ln() / nf * (1.0 + 1e-12) + 1e-15)
                            }
                            MeshKind::BakhvalovType => {
                                assert!(h <= 2.0 * sigma / alpha / nf * (1.0 + 1e-12) + 1e-15)
                            }
                            MeshKind::BakhvalovShishkin => {}
                        }
                    }
                }
                n *= 2;
            }
        }
    }

    #[test]
    fn tensor_mesh_area_and_locate() {
        let m = TensorMesh::new(MeshKind::BakhvalovType, 16, 1e-3, 3.0, 1.0, 2.0).unwrap();
        assert!((m.total_area() - 1.0).abs() <= 1e-12);
        assert_eq!(m.locate(0.0, 0.0).unwrap(), 0);
        assert_eq!(m.locate(1.0, 1.0).unwrap(), m.num_elements() - 1);
        // a node belongs to the cell on its left
        let x3 = m.x.points()[3];
        assert_eq!(m.locate(x3, 0.0).unwrap(), 2);
        assert!(m.locate(1.5, 0.0).is_err());
    }

    #[test]
    fn dump_format() {
        let m = TensorMesh::new(MeshKind::Shishkin, 4, 1e-3, 3.0, 1.0, 2.0).unwrap();
        let mut buf = Vec::new();
        m.write_points(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let blocks: Vec<&str> = text.split("\n\n").collect();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].lines().count(), 5);
        let parsed: Vec<f64> = blocks[1].lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(parsed, m.y.points());
    }
}
