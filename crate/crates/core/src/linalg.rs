//! Solvers for `(shift·I − scale·Δ_h) x = b` on a [`Mesh`].
//!
//! The operator is SPD whenever `shift ≥ 0` and `scale > 0`. In 1D it is
//! tridiagonal and solved directly; in 2D conjugate gradients are used.

use crate::error::{PwError, Result};
use crate::mesh::Mesh;

/// Relative residual target for CG.
pub const CG_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// ‖b − A x‖ / ‖b‖ in the Euclidean norm.
    pub rel_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ShiftedLaplacian<'a> {
    mesh: &'a Mesh,
    shift: f64,
    scale: f64,
}

impl<'a> ShiftedLaplacian<'a> {
    pub fn new(mesh: &'a Mesh, shift: f64, scale: f64) -> Result<Self> {
        if !(shift >= 0.0) || !(scale > 0.0) || !shift.is_finite() || !scale.is_finite() {
            return Err(PwError::InvalidArgument(format!(
                "operator {shift}·I − {scale}·Δ is not SPD"
            )));
        }
        Ok(Self { mesh, shift, scale })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.mesh.laplacian_into(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.shift * xi - self.scale * *o;
        }
    }

    /// Solves in place; `x` holds the initial guess on entry.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<SolveStats> {
        if self.mesh.dim() == 1 {
            self.solve_tridiagonal(b, x)
        } else {
            self.solve_cg(b, x)
        }
    }

    /// Thomas algorithm. On this M-matrix every intermediate quantity keeps
    /// its sign, so a nonnegative right-hand side yields a nonnegative
    /// solution in floating point as well.
    pub fn solve_tridiagonal(&self, b: &[f64], x: &mut [f64]) -> Result<SolveStats> {
        if self.mesh.dim() != 1 {
            return Err(PwError::InvalidArgument(
                "tridiagonal solve needs a 1D mesh".into(),
            ));
        }
        let n = b.len();
        let h = self.mesh.spacing()[0];
        let off = -self.scale / (h * h);
        let diag = self.shift + 2.0 * self.scale / (h * h);
        // c'[i] and d'[i] of the forward sweep
        let mut cp = vec![0.0; n];
        let mut denom = diag;
        cp[0] = off / denom;
        x[0] = b[0] / denom;
        for i in 1..n {
            denom = diag - off * cp[i - 1];
            cp[i] = off / denom;
            x[i] = (b[i] - off * x[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            x[i] -= cp[i] * x[i + 1];
        }
        let rel_residual = self.residual(b, x);
        Ok(SolveStats {
            iterations: 1,
            rel_residual,
        })
    }

    /// Unpreconditioned conjugate gradients to relative residual
    /// [`CG_RTOL`]. The system is normalized to `max|b| = 1` first so that
    /// tiny right-hand sides do not drift into subnormal arithmetic.
    pub fn solve_cg(&self, b: &[f64], x: &mut [f64]) -> Result<SolveStats> {
        let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if bnorm == 0.0 {
            x.fill(0.0);
            return Ok(SolveStats {
                iterations: 0,
                rel_residual: 0.0,
            });
        }
        let b: Vec<f64> = b.iter().map(|v| v / bnorm).collect();
        x.iter_mut().for_each(|v| *v /= bnorm);
        let out = self.solve_cg_unit(&b, x);
        x.iter_mut().for_each(|v| *v *= bnorm);
        out
    }

    fn solve_cg_unit(&self, b: &[f64], x: &mut [f64]) -> Result<SolveStats> {
        let n = b.len();
        let bnorm = norm(b);
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = dot(&r, &r);
        let target = CG_RTOL * bnorm;
        let max_iter = 10 * n + 100;
        for it in 0..max_iter {
            if rr.sqrt() <= target {
                return Ok(SolveStats {
                    iterations: it,
                    rel_residual: rr.sqrt() / bnorm,
                });
            }
            self.apply(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        // recurrence drift: report the true residual
        let rel_residual = self.residual(b, x);
        if rel_residual <= CG_RTOL * 10.0 {
            return Ok(SolveStats {
                iterations: max_iter,
                rel_residual,
            });
        }
        Err(PwError::NotConverged {
            what: "conjugate gradient",
            iterations: max_iter,
            residual: rel_residual,
        })
    }

    fn residual(&self, b: &[f64], x: &[f64]) -> f64 {
        let bnorm = norm(b);
        if bnorm == 0.0 {
            return norm(x);
        }
        let mut ax = vec![0.0; b.len()];
        self.apply(x, &mut ax);
        let r: f64 = ax.iter().zip(b).map(|(a, bi)| (a - bi) * (a - bi)).sum();
        r.sqrt() / bnorm
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rhs(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect()
    }

    #[test]
    fn tridiagonal_matches_cg() {
        let m = Mesh::interval(0.0, 2.0, 200).unwrap();
        let op = ShiftedLaplacian::new(&m, 1.0, 1e-3).unwrap();
        let b = rhs(m.len());
        let mut x1 = vec![0.0; m.len()];
        let mut x2 = vec![0.0; m.len()];
        let s1 = op.solve_tridiagonal(&b, &mut x1).unwrap();
        let s2 = op.solve_cg(&b, &mut x2).unwrap();
        assert!(s1.rel_residual < 1e-13);
        assert!(s2.rel_residual <= CG_RTOL * 10.0);
        let diff = x1.iter().zip(&x2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "diff = {diff}");
    }

    #[test]
    fn cg_solves_2d_poisson() {
        let m = Mesh::rectangle((0.0, 1.0), (0.0, 1.0), 31, 31).unwrap();
        let op = ShiftedLaplacian::new(&m, 0.0, 1.0).unwrap();
        let b = rhs(m.len());
        let mut x = vec![0.0; m.len()];
        let stats = op.solve(&b, &mut x).unwrap();
        assert!(stats.rel_residual <= CG_RTOL * 10.0);
        assert!(stats.iterations > 0);
        let mut ax = vec![0.0; m.len()];
        op.apply(&x, &mut ax);
        let err = ax.iter().zip(&b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let m = Mesh::rectangle((0.0, 1.0), (0.0, 1.0), 5, 5).unwrap();
        let op = ShiftedLaplacian::new(&m, 0.5, 1.0).unwrap();
        let mut x = vec![1.0; m.len()];
        op.solve(&vec![0.0; m.len()], &mut x).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tridiagonal_keeps_sign() {
        let m = Mesh::interval(0.0, 1.0, 500).unwrap();
        let op = ShiftedLaplacian::new(&m, 1.0, 1e-4).unwrap();
        let mut b = vec![0.0; m.len()];
        b[3] = 1.0;
        let mut x = vec![0.0; m.len()];
        op.solve(&b, &mut x).unwrap();
        assert!(x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cg_handles_subnormal_scale() {
        let m = Mesh::rectangle((0.0, 1.0), (0.0, 1.0), 15, 15).unwrap();
        let op = ShiftedLaplacian::new(&m, 1.0, 0.5).unwrap();
        let b: Vec<f64> = rhs(m.len()).iter().map(|v| v * 1e-310).collect();
        let mut x = vec![0.0; m.len()];
        let stats = op.solve(&b, &mut x).unwrap();
        assert!(stats.rel_residual <= CG_RTOL * 10.0);
        assert!(x.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_indefinite_operator() {
        let m = Mesh::interval(0.0, 1.0, 5).unwrap();
        assert!(ShiftedLaplacian::new(&m, -1.0, 1.0).is_err());
        assert!(ShiftedLaplacian::new(&m, 1.0, 0.0).is_err());
    }
}
