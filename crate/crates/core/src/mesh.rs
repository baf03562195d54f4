//! Uniform Cartesian grids over an interval or a rectangle with homogeneous
//! Dirichlet boundary.
//!
//! Only interior nodes carry unknowns. Nodes are ordered lexicographically
//! by their coordinates: in 2D the flat index of node `(i, j)` is
//! `i * n_interior[1] + j`, so the last axis varies fastest. The same order
//! is used in snapshot files.

use std::io::{Read, Write};

use crate::error::{PwError, Result};
use crate::io::fmt_num;

pub const MAX_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    extents: [(f64, f64); MAX_DIM],
    n_interior: [usize; MAX_DIM],
    h: [f64; MAX_DIM],
    quad_weight: f64,
}

impl Mesh {
    /// Builds a mesh with `n_interior[i]` interior nodes on axis `i`.
    pub fn new(dim: usize, extents: &[(f64, f64)], n_interior: &[usize]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(PwError::InvalidMesh(format!("dimension {dim} not in {{1, 2}}")));
        }
        if extents.len() != dim || n_interior.len() != dim {
            return Err(PwError::InvalidMesh(format!(
                "expected {dim} extents and counts, got {} and {}",
                extents.len(),
                n_interior.len()
            )));
        }
        let mut ext = [(0.0, 1.0); MAX_DIM];
        let mut counts = [1usize; MAX_DIM];
        let mut h = [1.0; MAX_DIM];
        for axis in 0..dim {
            let (a, b) = extents[axis];
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(PwError::InvalidMesh(format!(
                    "degenerate interval [{a}, {b}] on axis {axis}"
                )));
            }
            let n = n_interior[axis];
            if n < 3 {
                return Err(PwError::InvalidMesh(format!(
                    "axis {axis} needs at least 3 interior nodes, got {n}"
                )));
            }
            ext[axis] = (a, b);
            counts[axis] = n;
            h[axis] = (b - a) / (n as f64 + 1.0);
        }
        let quad_weight = h[..dim].iter().product();
        Ok(Self {
            dim,
            extents: ext,
            n_interior: counts,
            h,
            quad_weight,
        })
    }

    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::new(1, &[(a, b)], &[n])
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        Self::new(2, &[x, y], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[(f64, f64)] {
        &self.extents[..self.dim]
    }

    pub fn n_interior(&self) -> &[usize] {
        &self.n_interior[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn quad_weight(&self) -> f64 {
        self.quad_weight
    }

    /// Total number of interior nodes.
    pub fn len(&self) -> usize {
        self.n_interior[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact measure |Ω| of the domain (not the quadrature sum).
    pub fn measure(&self) -> f64 {
        self.extents().iter().map(|(a, b)| b - a).product()
    }

    /// Coordinates of the node with flat index `idx`; unused axes are 0.
    pub fn node_coords(&self, idx: usize) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        match self.dim {
            1 => c[0] = self.extents[0].0 + (idx as f64 + 1.0) * self.h[0],
            _ => {
                let n1 = self.n_interior[1];
                let (i, j) = (idx / n1, idx % n1);
                c[0] = self.extents[0].0 + (i as f64 + 1.0) * self.h[0];
                c[1] = self.extents[1].0 + (j as f64 + 1.0) * self.h[1];
            }
        }
        c
    }

    /// Smallest eigenvalue of the discrete Dirichlet operator −Δ_h,
    /// `Σ (4/h²) sin²(π h / (2 L))` over the axes.
    pub fn first_eigenvalue(&self) -> f64 {
        (0..self.dim)
            .map(|axis| {
                let h = self.h[axis];
                let len = self.extents[axis].1 - self.extents[axis].0;
                let s = (std::f64::consts::PI * h / (2.0 * len)).sin();
                4.0 * s * s / (h * h)
            })
            .sum()
    }

    /// Largest eigenvalue of −Δ_h.
    pub fn last_eigenvalue(&self) -> f64 {
        (0..self.dim)
            .map(|axis| {
                let h = self.h[axis];
                let len = self.extents[axis].1 - self.extents[axis].0;
                let n = self.n_interior[axis] as f64;
                let s = (std::f64::consts::PI * n * h / (2.0 * len)).sin();
                4.0 * s * s / (h * h)
            })
            .sum()
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        if u.mesh != *self {
            return Err(PwError::MeshMismatch);
        }
        Ok(())
    }

    /// Five-point (three-point in 1D) Laplacian with zero ghost values.
    pub fn apply_laplacian(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check(u)?;
        let mut out = vec![0.0; self.len()];
        self.laplacian_into(&u.values, &mut out);
        Ok(GridFunction {
            mesh: self.clone(),
            values: out,
        })
    }

    /// Rectangle-rule inner product over interior nodes.
    pub fn inner_l2(&self, u: &GridFunction, v: &GridFunction) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.dot(&u.values, &v.values))
    }

    /// `∫|u|^q` by the rectangle rule; requires `q ≥ 1`.
    pub fn integrate_power(&self, u: &GridFunction, q: f64) -> Result<f64> {
        self.check(u)?;
        if !(q >= 1.0) || !q.is_finite() {
            return Err(PwError::InvalidArgument(format!("power q = {q} must be ≥ 1")));
        }
        Ok(self.power_sum(&u.values, q))
    }

    /// Discrete Dirichlet form `∫|∇u|²` from forward differences, boundary
    /// differences included. Equals `(u, −Δ_h u)` up to round-off.
    pub fn grad_norm_sq(&self, u: &GridFunction) -> Result<f64> {
        self.check(u)?;
        Ok(self.dirichlet_form(&u.values))
    }

    pub(crate) fn laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.len());
        match self.dim {
            1 => {
                let n = self.n_interior[0];
                let inv = 1.0 / (self.h[0] * self.h[0]);
                for i in 0..n {
                    let left = if i > 0 { u[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { u[i + 1] } else { 0.0 };
                    out[i] = (left - 2.0 * u[i] + right) * inv;
                }
            }
            _ => {
                let (n0, n1) = (self.n_interior[0], self.n_interior[1]);
                let inv0 = 1.0 / (self.h[0] * self.h[0]);
                let inv1 = 1.0 / (self.h[1] * self.h[1]);
                for i in 0..n0 {
                    for j in 0..n1 {
                        let k = i * n1 + j;
                        let c = u[k];
                        let up = if i > 0 { u[k - n1] } else { 0.0 };
                        let down = if i + 1 < n0 { u[k + n1] } else { 0.0 };
                        let left = if j > 0 { u[k - 1] } else { 0.0 };
                        let right = if j + 1 < n1 { u[k + 1] } else { 0.0 };
                        out[k] = (up - 2.0 * c + down) * inv0 + (left - 2.0 * c + right) * inv1;
                    }
                }
            }
        }
    }

    pub(crate) fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        self.quad_weight * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub(crate) fn power_sum(&self, u: &[f64], q: f64) -> f64 {
        let s: f64 = if q == 2.0 {
            u.iter().map(|x| x * x).sum()
        } else {
            u.iter().map(|x| x.abs().powf(q)).sum()
        };
        self.quad_weight * s
    }

    pub(crate) fn dirichlet_form(&self, u: &[f64]) -> f64 {
        let sq = |x: f64| x * x;
        let total = match self.dim {
            1 => {
                let n = self.n_interior[0];
                let mut s = sq(u[0]) + sq(u[n - 1]);
                for i in 1..n {
                    s += sq(u[i] - u[i - 1]);
                }
                s / (self.h[0] * self.h[0])
            }
            _ => {
                let (n0, n1) = (self.n_interior[0], self.n_interior[1]);
                let mut s0 = 0.0;
                let mut s1 = 0.0;
                for i in 0..n0 {
                    let row = &u[i * n1..(i + 1) * n1];
                    s1 += sq(row[0]) + sq(row[n1 - 1]);
                    for j in 1..n1 {
                        s1 += sq(row[j] - row[j - 1]);
                    }
                }
                for j in 0..n1 {
                    s0 += sq(u[j]) + sq(u[(n0 - 1) * n1 + j]);
                    for i in 1..n0 {
                        s0 += sq(u[i * n1 + j] - u[(i - 1) * n1 + j]);
                    }
                }
                s0 / (self.h[0] * self.h[0]) + s1 / (self.h[1] * self.h[1])
            }
        };
        self.quad_weight * total
    }
}

/// Nodal values of a function vanishing on the boundary. Values are always
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    mesh: Mesh,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(PwError::InvalidArgument(format!(
                "expected {} nodal values, got {}",
                mesh.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PwError::NonFinite(format!("node {i} holds {}", values[i])));
        }
        Ok(Self {
            mesh: mesh.clone(),
            values,
        })
    }

    /// Skips the finiteness scan; callers guarantee it.
    pub(crate) fn from_raw(mesh: &Mesh, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), mesh.len());
        Self {
            mesh: mesh.clone(),
            values,
        }
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self::from_raw(mesh, vec![0.0; mesh.len()])
    }

    /// Samples `f` at the interior nodes. `f` receives the coordinate slice
    /// of length `mesh.dim()`.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..mesh.len())
            .map(|k| f(&mesh.node_coords(k)[..mesh.dim()]))
            .collect();
        Self::new(mesh, values)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.mesh, self.values.iter().map(|v| c * v).collect())
    }

    pub fn abs(&self) -> Self {
        Self::from_raw(&self.mesh, self.values.iter().map(|v| v.abs()).collect())
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &GridFunction, b: f64) -> Result<Self> {
        if self.mesh != other.mesh {
            return Err(PwError::MeshMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Self::new(&self.mesh, values)
    }

    /// Writes the snapshot CSV: a header naming the coordinate columns and
    /// `value`, then one row per node in lexicographic order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: &[&str] = if self.mesh.dim == 1 {
            &["x", "value"]
        } else {
            &["x", "y", "value"]
        };
        w.write_record(header)?;
        let dim = self.mesh.dim;
        for (k, v) in self.values.iter().enumerate() {
            let c = self.mesh.node_coords(k);
            let mut row: Vec<String> = c[..dim].iter().map(|&x| fmt_num(x)).collect();
            row.push(fmt_num(*v));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a snapshot written by [`GridFunction::write_csv`]; the node
    /// coordinates must match `mesh`.
    pub fn read_csv<R: Read>(mesh: &Mesh, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let dim = mesh.dim;
        let expected: &[&str] = if dim == 1 {
            &["x", "value"]
        } else {
            &["x", "y", "value"]
        };
        let header = r.headers()?.clone();
        if header.iter().map(str::trim).ne(expected.iter().copied()) {
            return Err(PwError::Format(format!(
                "snapshot header {:?}, expected {:?}",
                header.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let tol: f64 = mesh.spacing().iter().fold(f64::INFINITY, |a, &b| a.min(b)) * 1e-6;
        let mut values = Vec::with_capacity(mesh.len());
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            if k >= mesh.len() {
                return Err(PwError::Format(format!(
                    "snapshot has more than {} rows",
                    mesh.len()
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| PwError::Format(format!("row {}: {e}: {s:?}", k + 1)))
            };
            let c = mesh.node_coords(k);
            for axis in 0..dim {
                let x = parse(&rec[axis])?;
                if (x - c[axis]).abs() > tol {
                    return Err(PwError::Format(format!(
                        "row {}: coordinate {x} does not match mesh node {}",
                        k + 1,
                        c[axis]
                    )));
                }
            }
            values.push(parse(&rec[dim])?);
        }
        if values.len() != mesh.len() {
            return Err(PwError::Format(format!(
                "snapshot has {} rows, mesh has {} nodes",
                values.len(),
                mesh.len()
            )));
        }
        Self::new(mesh, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine_1d(n: usize) -> (Mesh, GridFunction) {
        let m = Mesh::interval(0.0, PI, n).unwrap();
        let u = GridFunction::from_fn(&m, |x| x[0].sin()).unwrap();
        (m, u)
    }

    #[test]
    fn build_mesh_spacing() {
        let m = Mesh::interval(0.0, PI, 1023).unwrap();
        assert_eq!(m.spacing()[0], PI / 1024.0);
        assert_eq!(m.len(), 1023);

        let m = Mesh::rectangle((0.0, 1.0), (0.0, 1.0), 63, 63).unwrap();
        assert_eq!(m.spacing(), &[1.0 / 64.0, 1.0 / 64.0]);
        assert_eq!(m.len(), 3969);
        assert_eq!(m.quad_weight(), 1.0 / 4096.0);
    }

    #[test]
    fn build_mesh_rejects_bad_input() {
        assert!(matches!(
            Mesh::new(1, &[(0.0, 0.0)], &[100]),
            Err(PwError::InvalidMesh(_))
        ));
        assert!(Mesh::new(3, &[(0.0, 1.0); 3], &[5; 3]).is_err());
        assert!(Mesh::new(0, &[], &[]).is_err());
        assert!(Mesh::interval(0.0, 1.0, 2).is_err());
        assert!(Mesh::interval(1.0, 0.0, 10).is_err());
        assert!(Mesh::new(2, &[(0.0, 1.0)], &[5]).is_err());
    }

    #[test]
    fn measure_vs_quadrature() {
        let m = Mesh::rectangle((0.0, 2.0), (0.0, 1.0), 31, 15).unwrap();
        let nodes = m.quad_weight() * m.len() as f64;
        assert!((m.measure() - 2.0).abs() < 1e-15);
        // interior rectangle rule misses one cell layer per boundary
        assert!(nodes < m.measure());
        assert!(m.measure() - nodes < 2.0 * (m.spacing()[0] + m.spacing()[1]) * 2.0);
    }

    #[test]
    fn lexicographic_node_order() {
        let m = Mesh::rectangle((0.0, 4.0), (0.0, 4.0), 3, 3).unwrap();
        assert_eq!(m.node_coords(0), [1.0, 1.0]);
        assert_eq!(m.node_coords(1), [1.0, 2.0]);
        assert_eq!(m.node_coords(3), [2.0, 1.0]);
        assert_eq!(m.node_coords(8), [3.0, 3.0]);
    }

    #[test]
    fn laplacian_of_sine_1d() {
        let (m, u) = sine_1d(1023);
        let lu = m.apply_laplacian(&u).unwrap();
        let h = m.spacing()[0];
        let err = lu
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        // exact: (2cos h − 2)/h² · sin = −(1 − h²/12 + …) sin
        assert!(err <= h * h / 12.0 * 1.01, "err = {err}");
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let m = Mesh::rectangle((0.0, 1.0), (0.0, 1.0), 7, 9).unwrap();
        let z = GridFunction::zeros(&m);
        assert!(m.apply_laplacian(&z).unwrap().is_zero());
    }

    #[test]
    fn laplacian_of_sine_2d() {
        let m = Mesh::rectangle((0.0, 1.0), (0.0, 1.0), 63, 63).unwrap();
        let u = GridFunction::from_fn(&m, |x| (PI * x[0]).sin() * (PI * x[1]).sin()).unwrap();
        let lu = m.apply_laplacian(&u).unwrap();
        let h = m.spacing()[0];
        let err = lu
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| (a + 2.0 * PI * PI * b).abs())
            .fold(0.0, f64::max);
        // 2 axes × π⁴h²/12
        assert!(err <= 2.0 * PI.powi(4) * h * h / 12.0 * 1.01, "err = {err}");
    }

    #[test]
    fn inner_products() {
        let (m, s1) = sine_1d(1023);
        let s2 = GridFunction::from_fn(&m, |x| (2.0 * x[0]).sin()).unwrap();
        assert!((m.inner_l2(&s1, &s1).unwrap() - PI / 2.0).abs() < 1e-4);
        assert!(m.inner_l2(&s1, &s2).unwrap().abs() < 1e-4);
        assert_eq!(m.inner_l2(&s1, &GridFunction::zeros(&m)).unwrap(), 0.0);
    }

    #[test]
    fn power_integrals() {
        let (m, u) = sine_1d(1023);
        assert!((m.integrate_power(&u, 4.0).unwrap() - 3.0 * PI / 8.0).abs() < 1e-3);
        assert!((m.integrate_power(&u, 2.0).unwrap() - PI / 2.0).abs() < 1e-4);
        assert!((m.integrate_power(&u, 2.5).unwrap() - m.power_sum(u.values(), 2.5)).abs() == 0.0);
        assert_eq!(m.integrate_power(&GridFunction::zeros(&m), 3.3).unwrap(), 0.0);
        assert!(matches!(
            m.integrate_power(&u, 0.5),
            Err(PwError::InvalidArgument(_))
        ));
    }

    #[test]
    fn gradient_norm_of_sine() {
        let (m, u) = sine_1d(1023);
        assert!((m.grad_norm_sq(&u).unwrap() - PI / 2.0).abs() < 1e-3);
        assert_eq!(m.grad_norm_sq(&GridFunction::zeros(&m)).unwrap(), 0.0);
        let lu = m.apply_laplacian(&u).unwrap();
        let sbp = -m.inner_l2(&u, &lu).unwrap();
        let g = m.grad_norm_sq(&u).unwrap();
        assert!(((g - sbp) / g).abs() < 1e-10);
    }

    #[test]
    fn discrete_poincare_is_sharp_on_sine() {
        let (m, u) = sine_1d(255);
        let lam = m.first_eigenvalue();
        let g = m.grad_norm_sq(&u).unwrap();
        let l2 = m.inner_l2(&u, &u).unwrap();
        assert!((g - lam * l2).abs() < 1e-12 * g);
        let h = m.spacing()[0];
        let exact = 4.0 / (h * h) * (h / 2.0).sin().powi(2);
        assert!((lam - exact).abs() < 1e-12);
    }

    #[test]
    fn mesh_mismatch_is_rejected() {
        let (m, u) = sine_1d(15);
        let other = Mesh::interval(0.0, PI, 17).unwrap();
        let v = GridFunction::zeros(&other);
        assert!(matches!(m.inner_l2(&u, &v), Err(PwError::MeshMismatch)));
        assert!(matches!(m.apply_laplacian(&v), Err(PwError::MeshMismatch)));
        assert!(matches!(m.grad_norm_sq(&v), Err(PwError::MeshMismatch)));
    }

    #[test]
    fn non_finite_values_rejected() {
        let m = Mesh::interval(0.0, 1.0, 3).unwrap();
        assert!(matches!(
            GridFunction::new(&m, vec![0.0, f64::NAN, 1.0]),
            Err(PwError::NonFinite(_))
        ));
        assert!(GridFunction::new(&m, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn quadrature_converges_second_order() {
        // polynomial integrand so the rectangle rule is not spectrally exact
        let errs: Vec<(f64, f64)> = [63, 127, 255]
            .iter()
            .map(|&n| {
                let (m, s) = sine_1d(n);
                let q = GridFunction::from_fn(&m, |x| x[0] * (PI - x[0])).unwrap();
                (
                    (m.integrate_power(&q, 3.0).unwrap() - PI.powi(7) / 140.0).abs(),
                    (m.grad_norm_sq(&s).unwrap() - PI / 2.0).abs(),
                )
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[0].0 / w[1].0 >= 3.5, "{errs:?}");
            assert!(w[0].1 / w[1].1 >= 3.5, "{errs:?}");
        }
    }

    #[test]
    fn snapshot_csv_layout() {
        let m = Mesh::rectangle((0.0, 4.0), (0.0, 4.0), 3, 3).unwrap();
        let u = GridFunction::from_fn(&m, |x| x[0] + 10.0 * x[1]).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,value"));
        assert_eq!(
            lines.next(),
            Some("1.0000000000000000e0,1.0000000000000000e0,1.1000000000000000e1")
        );
        let back = GridFunction::read_csv(&m, text.as_bytes()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn snapshot_rejects_wrong_mesh() {
        let (_, u) = sine_1d(7);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let other = Mesh::interval(0.0, 3.0, 7).unwrap();
        assert!(matches!(
            GridFunction::read_csv(&other, buf.as_slice()),
            Err(PwError::Format(_))
        ));
        let bigger = Mesh::interval(0.0, PI, 9).unwrap();
        assert!(GridFunction::read_csv(&bigger, buf.as_slice()).is_err());
    }
}
