//! Browser bindings: mesh generation, a single solve with sampled fields,
//! and a small convergence study.

use layerdg::mesh::{MeshKind, TensorMesh};
use layerdg::problem::Problem;
use layerdg::study::{run_single, run_study, RunConfig, StudyConfig};
use wasm_bindgen::prelude::*;

/// Largest `N` the page accepts; keeps a solve within a few seconds.
pub const MAX_N: usize = 64;

fn check_n(n: usize) -> layerdg::Result<()> {
    if n > MAX_N {
        return Err(layerdg::Error::InvalidParameter(format!(
            "N = {n} exceeds the demo limit {MAX_N}"
        )));
    }
    Ok(())
}

/// Mesh points in both directions with the diagnostic summary.
#[wasm_bindgen]
pub struct MeshView {
    x: Vec<f64>,
    y: Vec<f64>,
    report: String,
}

#[wasm_bindgen]
impl MeshView {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn y(&self) -> Vec<f64> {
        self.y.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn report(&self) -> String {
        self.report.clone()
    }
}

pub fn mesh_view(kind: &str, n: usize, epsilon: f64, degree: usize) -> layerdg::Result<MeshView> {
    let kind = MeshKind::parse(kind)?;
    let p = Problem::example1(epsilon)?;
    let m = TensorMesh::new(kind, n, epsilon, (degree + 2) as f64, p.alpha1, p.alpha2)?;
    Ok(MeshView {
        x: m.x.points().to_vec(),
        y: m.y.points().to_vec(),
        report: m.report(degree).to_string(),
    })
}

/// One solve of the manufactured example.
#[wasm_bindgen]
pub struct SolveView {
    x: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    error: Vec<f64>,
    l2: f64,
    superclose: f64,
    energy: f64,
    residual: f64,
    unknowns: usize,
}

#[wasm_bindgen]
impl SolveView {
    /// Mesh points in `x`.
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn y(&self) -> Vec<f64> {
        self.y.clone()
    }

    /// `U` at element centres, index `ix + N * iy`.
    #[wasm_bindgen(getter)]
    pub fn u(&self) -> Vec<f64> {
        self.u.clone()
    }

    /// `|u - U|` at element centres.
    #[wasm_bindgen(getter)]
    pub fn error(&self) -> Vec<f64> {
        self.error.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn l2(&self) -> f64 {
        self.l2
    }

    #[wasm_bindgen(getter)]
    pub fn superclose(&self) -> f64 {
        self.superclose
    }

    #[wasm_bindgen(getter)]
    pub fn energy(&self) -> f64 {
        self.energy
    }

    #[wasm_bindgen(getter)]
    pub fn residual(&self) -> f64 {
        self.residual
    }

    #[wasm_bindgen(getter)]
    pub fn unknowns(&self) -> usize {
        self.unknowns
    }
}

pub fn solve_view(kind: &str, n: usize, degree: usize, epsilon: f64) -> layerdg::Result<SolveView> {
    check_n(n)?;
    let kind = MeshKind::parse(kind)?;
    let p = Problem::example1(epsilon)?;
    let out = run_single(&p, &RunConfig::new(kind, n, degree))?;
    let exact = p.exact()?;
    let ne = out.space.num_elements();
    let mut u = Vec::with_capacity(ne);
    let mut error = Vec::with_capacity(ne);
    for e in 0..ne {
        let v = out.solution.u.eval_reference(e, 0.0, 0.0);
        let (x, y) = out.space.geom(e).map(0.0, 0.0);
        u.push(v);
        error.push(((exact.u)(x, y) - v).abs());
    }
    let errs = out.errors.ok_or(layerdg::Error::MissingExactSolution)?;
    Ok(SolveView {
        x: out.space.mesh.x.points().to_vec(),
        y: out.space.mesh.y.points().to_vec(),
        u,
        error,
        l2: errs.l2_triple,
        superclose: errs.supercloseness,
        energy: errs.energy,
        residual: out.residual,
        unknowns: out.unknowns,
    })
}

/// Convergence table as CSV for a comma-separated list of `N`.
pub fn study_csv(kind: &str, degree: usize, epsilon: f64, ns: &str) -> layerdg::Result<String> {
    let kind = MeshKind::parse(kind)?;
    let ns: Vec<usize> = ns
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| layerdg::Error::InvalidParameter(format!("bad N value '{t}'")))
        })
        .collect::<layerdg::Result<_>>()?;
    for &n in &ns {
        check_n(n)?;
    }
    Ok(run_study(&StudyConfig::new(kind, degree, epsilon, ns))?.to_csv())
}

fn js(e: layerdg::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn mesh(kind: &str, n: usize, epsilon: f64, degree: usize) -> Result<MeshView, JsError> {
    mesh_view(kind, n, epsilon, degree).map_err(js)
}

#[wasm_bindgen]
pub fn solve(kind: &str, n: usize, degree: usize, epsilon: f64) -> Result<SolveView, JsError> {
    solve_view(kind, n, degree, epsilon).map_err(js)
}

#[wasm_bindgen]
pub fn study(kind: &str, degree: usize, epsilon: f64, ns: &str) -> Result<String, JsError> {
    study_csv(kind, degree, epsilon, ns).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_points_span_the_interval() {
        let m = mesh_view("bs", 8, 1e-4, 1).unwrap();
        assert_eq!(m.x.len(), 9);
        assert_eq!((m.x[0], m.x[8]), (0.0, 1.0));
        assert!(m.report.starts_with("bs mesh"));
        assert!(mesh_view("nope", 8, 1e-4, 1).is_err());
    }

    #[test]
    fn solve_samples_every_element() {
        let s = solve_view("shishkin", 8, 1, 1e-3).unwrap();
        assert_eq!(s.u.len(), 64);
        assert_eq!(s.error.len(), 64);
        assert_eq!(s.unknowns, 3 * 4 * 64);
        assert!(s.residual < 1e-10);
        assert!(s.l2 > 0.0 && s.energy > 0.0);
        // the solution is close to u at the centres
        assert!(s.error.iter().all(|e| *e < 0.2));
        assert!(solve_view("shishkin", 128, 1, 1e-3).is_err());
    }

    #[test]
    fn study_returns_csv() {
        let csv = study_csv("bakhvalov", 1, 1e-8, "8, 16").unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("mesh,k,epsilon"));
        assert!(study_csv("bs", 1, 1e-8, "8,x").is_err());
    }
}
