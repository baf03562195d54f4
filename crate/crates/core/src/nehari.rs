//! Ground states, potential-well depths and the invariant-set classifier.
//!
//! Depths are computed two ways. The formula route minimizes the
//! scale-free quotient
//!
//! ```text
//! A(u) = (∫|∇u|² + δ∫u²) / (∫|u|^{p+1})^{2/(p+1)}
//! ```
//!
//! and maps the minimum through `d_δ = (p−1)/(2(p+1)) · A^{(p+1)/(p−1)}`.
//! The direct route minimizes `E_λ(t*(w)·w)` over directions `w`, where
//! `t*(w)` projects `w` onto the Nehari manifold `{I = 0}`.
//!
//! Both objectives are homogeneous of degree zero. They are minimized over
//! nonnegative directions normalized to `∫|w|^{p+1} = 1`, by gradient
//! descent on the logarithm of the objective with the gradient taken in the
//! `H¹` metric (preconditioned by `(−Δ_h + σ)⁻¹`) and an Armijo
//! backtracking line search. Every iterate is replaced by its absolute
//! value, which never increases either objective.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PwError, Result};
use crate::functionals::{self, Params};
use crate::io::fmt_num;
use crate::linalg::ShiftedLaplacian;
use crate::mesh::{GridFunction, Mesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Bound on the `L²` norm of the gradient of the log-objective.
    pub tol_stationarity: f64,
    /// Relative bound on `|I_δ|` for points declared on the manifold.
    pub tol_nehari: f64,
    pub max_iters: usize,
    /// Extra randomized starting points; the best result is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_stationarity: 1e-8,
            tol_nehari: 1e-10,
            max_iters: 50_000,
            restarts: 0,
            seed: 0,
        }
    }
}

/// Projects `u` onto `{I_δ = 0}` along its ray: returns `t*` and `t*·u`.
pub fn nehari_scale(u: &GridFunction, params: &Params) -> Result<(f64, GridFunction)> {
    if u.is_zero() {
        return Err(PwError::ZeroFunction);
    }
    let m = u.mesh();
    let quad = m.dirichlet_form(u.values()) + params.delta * m.dot(u.values(), u.values());
    let lp = m.power_sum(u.values(), params.p + 1.0);
    let t = (quad / lp).powf(1.0 / (params.p - 1.0));
    Ok((t, u.scaled(t)?))
}

/// Scales `u` to the point `t·u`, `t > t*`, where `I_δ(t·u) = −ε`.
pub fn scale_to_level(u: &GridFunction, params: &Params, eps: f64) -> Result<(f64, GridFunction)> {
    if !(eps >= 0.0) {
        return Err(PwError::InvalidArgument(format!("level ε = {eps} must be ≥ 0")));
    }
    let (t_star, _) = nehari_scale(u, params)?;
    let m = u.mesh();
    let quad = m.dirichlet_form(u.values()) + params.delta * m.dot(u.values(), u.values());
    let lp = m.power_sum(u.values(), params.p + 1.0);
    let q = params.p + 1.0;
    // g is strictly decreasing on (t*, ∞) with g(t*) = ε ≥ 0
    let g = |t: f64| t * t * quad - t.powf(q) * lp + eps;
    let (mut lo, mut hi) = (t_star, 2.0 * t_star);
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = if g(lo).abs() < g(hi).abs() { lo } else { hi };
    Ok((t, u.scaled(t)?))
}

/// `((p−1)/(2(p+1))) · A^{(p+1)/(p−1)}`.
pub fn depth_from_a(a_min: f64, params: &Params) -> Result<f64> {
    if !(a_min > 0.0) || !a_min.is_finite() {
        return Err(PwError::InvalidArgument(format!("A = {a_min} must be positive")));
    }
    let p = params.p;
    Ok(params.nehari_ratio() * a_min.powf((p + 1.0) / (p - 1.0)))
}

/// Fits `μ` in `−Δ_h u + δu = μ|u|^{p−1}u` and returns `(μ, ‖residual‖₂)`.
pub fn euler_lagrange_residual(u: &GridFunction, params: &Params) -> (f64, f64) {
    let m = u.mesh();
    let n = m.len();
    let mut ku = vec![0.0; n];
    m.laplacian_into(u.values(), &mut ku);
    for (k, x) in ku.iter_mut().zip(u.values()) {
        *k = params.delta * x - *k;
    }
    let f: Vec<f64> = u.values().iter().map(|&x| nonlinearity(x, params.p)).collect();
    let ff = m.dot(&f, &f);
    let mu = if ff > 0.0 { m.dot(&ku, &f) / ff } else { 0.0 };
    let r: Vec<f64> = ku.iter().zip(&f).map(|(a, b)| a - mu * b).collect();
    (mu, m.dot(&r, &r).sqrt())
}

#[inline]
pub(crate) fn nonlinearity(x: f64, p: f64) -> f64 {
    if p == 3.0 {
        x * x * x
    } else {
        x.abs().powf(p - 1.0) * x
    }
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub a_min: f64,
    /// Nonnegative, normalized to `∫|u|^{p+1} = 1`.
    pub ustar: GridFunction,
    pub iterations: usize,
    /// Final stationarity residual.
    pub residual: f64,
}

/// Failure of the descent: the last iterate and its residual are kept.
#[derive(Debug, Clone)]
pub struct MinimizerFailure {
    pub iterations: usize,
    pub residual: f64,
    pub last_iterate: GridFunction,
}

impl std::fmt::Display for MinimizerFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "minimizer did not reach stationarity after {} iterations (residual {:.3e})",
            self.iterations, self.residual
        )
    }
}

impl std::error::Error for MinimizerFailure {}

impl From<MinimizerFailure> for PwError {
    fn from(e: MinimizerFailure) -> Self {
        PwError::Minimizer(Box::new(e))
    }
}

/// Log-objective and its `L²` gradient at a point.
trait LogObjective {
    fn eval_with_grad(&self, w: &[f64], grad: &mut [f64]) -> f64;
    /// Shift `σ` in the `(−Δ_h + σ)` preconditioner.
    fn precond_shift(&self) -> f64;
}

struct Integrals {
    grad: f64,
    l2: f64,
    lp: f64,
}

fn integrals(mesh: &Mesh, w: &[f64], p: f64) -> Integrals {
    Integrals {
        grad: mesh.dirichlet_form(w),
        l2: mesh.dot(w, w),
        lp: mesh.power_sum(w, p + 1.0),
    }
}

/// `ln A(w)`.
struct LogQuotient<'a> {
    mesh: &'a Mesh,
    p: f64,
    delta: f64,
}

impl LogObjective for LogQuotient<'_> {
    fn eval_with_grad(&self, w: &[f64], out: &mut [f64]) -> f64 {
        let s = integrals(self.mesh, w, self.p);
        let num = s.grad + self.delta * s.l2;
        self.mesh.laplacian_into(w, out);
        for (o, &x) in out.iter_mut().zip(w) {
            let kw = self.delta * x - *o;
            *o = 2.0 * kw / num - 2.0 * nonlinearity(x, self.p) / s.lp;
        }
        num.ln() - 2.0 / (self.p + 1.0) * s.lp.ln()
    }

    fn precond_shift(&self) -> f64 {
        self.delta
    }
}

/// `ln E_λ(t*(w)·w)` with `t*` the `δ = 0` Nehari projection.
struct LogProjectedEnergy<'a> {
    mesh: &'a Mesh,
    p: f64,
    lambda: f64,
}

impl LogProjectedEnergy<'_> {
    fn parts(&self, s: &Integrals) -> f64 {
        let c = (self.p - 1.0) / (2.0 * (self.p + 1.0));
        c * s.grad + 0.5 * self.lambda * s.l2
    }
}

impl LogObjective for LogProjectedEnergy<'_> {
    fn eval_with_grad(&self, w: &[f64], out: &mut [f64]) -> f64 {
        let s = integrals(self.mesh, w, self.p);
        let c = (self.p - 1.0) / (2.0 * (self.p + 1.0));
        let e = self.parts(&s);
        let k = 2.0 / (self.p - 1.0);
        self.mesh.laplacian_into(w, out);
        for (o, &x) in out.iter_mut().zip(w) {
            let kw = -*o;
            *o = k * (2.0 * kw / s.grad - (self.p + 1.0) * nonlinearity(x, self.p) / s.lp)
                + (2.0 * c * kw + self.lambda * x) / e;
        }
        k * (s.grad.ln() - s.lp.ln()) + e.ln()
    }

    fn precond_shift(&self) -> f64 {
        self.lambda
    }
}

fn normalize_lp(mesh: &Mesh, w: &mut [f64], p: f64) {
    let lp = mesh.power_sum(w, p + 1.0);
    let s = lp.powf(-1.0 / (p + 1.0));
    for x in w.iter_mut() {
        *x = x.abs() * s;
    }
}

/// First discrete Dirichlet eigenvector by inverse power iteration,
/// normalized to `∫|w|^{p+1} = 1`.
pub fn first_eigenvector(mesh: &Mesh, p: f64) -> Result<GridFunction> {
    let op = ShiftedLaplacian::new(mesh, 0.0, 1.0)?;
    let mut x = vec![1.0; mesh.len()];
    let mut y = vec![0.0; mesh.len()];
    for _ in 0..500 {
        op.solve(&x, &mut y)?;
        let ny = mesh.dot(&y, &y).sqrt();
        let mut change = 0.0f64;
        for (xi, yi) in x.iter_mut().zip(&y) {
            let v = yi / ny;
            change = change.max((v - *xi).abs());
            *xi = v;
        }
        if change < 1e-13 {
            break;
        }
    }
    normalize_lp(mesh, &mut x, p);
    Ok(GridFunction::from_raw(mesh, x))
}

struct DescentResult {
    w: Vec<f64>,
    value: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
}

/// Finds a step along `dir` satisfying the strong Wolfe conditions, with
/// a few ulps of slack on the sufficient-decrease test.
fn line_search(
    mesh: &Mesh,
    obj: &dyn LogObjective,
    w: &[f64],
    dir: &[f64],
    value: f64,
    slope0: f64,
    tau_init: f64,
    trial: &mut [f64],
    trial_grad: &mut [f64],
) -> Option<f64> {
    let slack = 16.0 * f64::EPSILON * value.abs();
    let mut probe = |tau: f64| {
        for ((t, &x), &d) in trial.iter_mut().zip(w).zip(dir) {
            *t = (x + tau * d).abs();
        }
        let f = obj.eval_with_grad(trial, trial_grad);
        (f, mesh.dot(trial_grad, dir))
    };
    let (mut lo, mut lo_slope) = (0.0, slope0);
    let mut hi: Option<(f64, f64)> = None;
    let mut tau = tau_init;
    for _ in 0..60 {
        let (f, s) = probe(tau);
        if !f.is_finite() || !s.is_finite() || f > value + 1e-4 * tau * slope0 + slack {
            hi = Some((tau, f64::NAN));
        } else if s.abs() <= 0.1 * slope0.abs() {
            return Some(tau);
        } else if s < 0.0 {
            lo = tau;
            lo_slope = s;
        } else {
            hi = Some((tau, s));
        }
        tau = match hi {
            None => 2.0 * tau,
            Some((h, hs)) => {
                let width = h - lo;
                if width <= 1e-15 * h {
                    break;
                }
                let secant = if hs.is_finite() {
                    lo - lo_slope * width / (hs - lo_slope)
                } else {
                    lo + 0.5 * width
                };
                secant.clamp(lo + 0.1 * width, h - 0.1 * width)
            }
        };
    }
    (lo > 0.0).then_some(lo)
}

/// Preconditioned nonlinear conjugate gradients (Polak–Ribière+) on the
/// normalized nonnegative directions.
fn descend(
    mesh: &Mesh,
    obj: &dyn LogObjective,
    p: f64,
    mut w: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<DescentResult> {
    let n = mesh.len();
    let precond = ShiftedLaplacian::new(mesh, obj.precond_shift(), 1.0)?;
    let mut grad = vec![0.0; n];
    let mut grad_prev = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    normalize_lp(mesh, &mut w, p);
    let mut value = obj.eval_with_grad(&w, &mut grad);
    let mut residual = mesh.dot(&grad, &grad).sqrt();
    let mut gz_prev = 0.0;
    let mut restart = true;
    let mut tau = 1.0;
    let mut iterations = 0;
    while iterations < cfg.max_iters && residual > cfg.tol_stationarity {
        iterations += 1;
        z.fill(0.0);
        precond.solve(&grad, &mut z)?;
        let gz = mesh.dot(&grad, &z);
        let beta = if restart || gz_prev <= 0.0 {
            0.0
        } else {
            ((gz - mesh.dot(&grad_prev, &z)) / gz_prev).max(0.0)
        };
        for (d, &zi) in dir.iter_mut().zip(&z) {
            *d = beta * *d - zi;
        }
        let mut slope0 = mesh.dot(&grad, &dir);
        if !(slope0 < 0.0) {
            for (d, &zi) in dir.iter_mut().zip(&z) {
                *d = -zi;
            }
            slope0 = -gz;
            if !(slope0 < 0.0) {
                break;
            }
        }
        let step = line_search(
            mesh, obj, &w, &dir, value, slope0, tau, &mut trial, &mut trial_grad,
        );
        let Some(step) = step else {
            if restart {
                break;
            }
            restart = true;
            continue;
        };
        restart = false;
        tau = step;
        for (x, &d) in w.iter_mut().zip(&dir) {
            *x = (*x + step * d).abs();
        }
        normalize_lp(mesh, &mut w, p);
        std::mem::swap(&mut grad, &mut grad_prev);
        gz_prev = gz;
        value = obj.eval_with_grad(&w, &mut grad);
        residual = mesh.dot(&grad, &grad).sqrt();
    }
    Ok(DescentResult {
        converged: residual <= cfg.tol_stationarity,
        w,
        value,
        iterations,
        residual,
    })
}

fn starting_points(mesh: &Mesh, p: f64, cfg: &SolverConfig) -> Result<Vec<Vec<f64>>> {
    let eig = first_eigenvector(mesh, p)?.into_values();
    let mut starts = vec![eig.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        starts.push(eig.iter().map(|&x| x * (0.5 + rng.gen::<f64>())).collect());
    }
    Ok(starts)
}

fn minimize(
    mesh: &Mesh,
    obj: &dyn LogObjective,
    p: f64,
    cfg: &SolverConfig,
) -> Result<DescentResult> {
    let mut best: Option<DescentResult> = None;
    for w0 in starting_points(mesh, p, cfg)? {
        let r = descend(mesh, obj, p, w0, cfg)?;
        let better = match &best {
            None => true,
            Some(b) => (r.converged && !b.converged) || (r.converged == b.converged && r.value < b.value),
        };
        if better {
            best = Some(r);
        }
    }
    let best = best.expect("at least one starting point");
    if !best.converged {
        return Err(MinimizerFailure {
            iterations: best.iterations,
            residual: best.residual,
            last_iterate: GridFunction::from_raw(mesh, best.w),
        }
        .into());
    }
    Ok(best)
}

/// Minimizes the quotient `A` at `params.delta`.
pub fn ground_state(mesh: &Mesh, params: &Params, cfg: &SolverConfig) -> Result<GroundState> {
    params.check_dimension(mesh.dim())?;
    let obj = LogQuotient {
        mesh,
        p: params.p,
        delta: params.delta,
    };
    let r = minimize(mesh, &obj, params.p, cfg)?;
    Ok(GroundState {
        a_min: r.value.exp(),
        ustar: GridFunction::from_raw(mesh, r.w),
        iterations: r.iterations,
        residual: r.residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthMethod {
    /// Quotient minimization followed by the closed-form map.
    Formula,
    /// Direct minimization over the Nehari manifold.
    Direct,
}

impl DepthMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            DepthMethod::Formula => "formula",
            DepthMethod::Direct => "direct",
        }
    }
}

/// Well depths at one `(p, λ, δ)`.
#[derive(Debug, Clone)]
pub struct WellDepths {
    pub params: Params,
    /// Depth at `λ = δ = 0`, formula route.
    pub d: f64,
    /// `inf E_λ` on `{I = 0}`, direct route.
    pub d_lambda: f64,
    /// Depth at `params.delta`, formula route.
    pub d_delta: f64,
    /// The `d_λ` minimizer, scaled onto `{I = 0}` so `E_λ(minimizer) = d_λ`.
    pub minimizer: GridFunction,
    pub method: DepthMethod,
    pub iterations: usize,
    pub residual: f64,
    /// Solver accuracy in depth units.
    pub tolerance: f64,
}

fn depth_tolerance(depth: f64, residual: f64, cfg: &SolverConfig) -> f64 {
    depth.abs() * cfg.tol_nehari.max(residual)
}

/// Formula-route depth at `params.delta` with its solver diagnostics.
pub fn depth_formula(mesh: &Mesh, params: &Params, cfg: &SolverConfig) -> Result<DepthRow> {
    let gs = ground_state(mesh, params, cfg)?;
    let depth = depth_from_a(gs.a_min, params)?;
    Ok(DepthRow {
        p: params.p,
        lambda: 0.0,
        delta: params.delta,
        depth,
        method: DepthMethod::Formula,
        iterations: gs.iterations,
        residual: gs.residual,
        tolerance: depth_tolerance(depth, gs.residual, cfg),
    })
}

/// Direct minimization of `E_λ` over the Nehari manifold.
pub fn depth_direct(
    mesh: &Mesh,
    params: &Params,
    cfg: &SolverConfig,
) -> Result<(DepthRow, GridFunction)> {
    params.check_dimension(mesh.dim())?;
    let obj = LogProjectedEnergy {
        mesh,
        p: params.p,
        lambda: params.lambda,
    };
    let r = minimize(mesh, &obj, params.p, cfg)?;
    let w = GridFunction::from_raw(mesh, r.w);
    let flat = Params {
        delta: 0.0,
        ..*params
    };
    let (_, v) = nehari_scale(&w, &flat)?;
    let depth = functionals::energy_e_lambda(&v, &flat);
    Ok((
        DepthRow {
            p: params.p,
            lambda: params.lambda,
            delta: 0.0,
            depth,
            method: DepthMethod::Direct,
            iterations: r.iterations,
            residual: r.residual,
            tolerance: depth_tolerance(depth, r.residual, cfg),
        },
        v,
    ))
}

/// `d`, `d_λ` and `d_δ` at `params`.
pub fn depth_d_lambda(mesh: &Mesh, params: &Params, cfg: &SolverConfig) -> Result<WellDepths> {
    params.check_dimension(mesh.dim())?;
    let base = Params::new(params.p, 0.0, 0.0)?;
    let d_row = depth_formula(mesh, &base, cfg)?;
    let d_delta = if params.delta == 0.0 {
        d_row.depth
    } else {
        depth_formula(mesh, params, cfg)?.depth
    };
    let (row, minimizer) = depth_direct(mesh, params, cfg)?;
    Ok(WellDepths {
        params: *params,
        d: d_row.depth,
        d_lambda: row.depth,
        d_delta,
        minimizer,
        method: DepthMethod::Direct,
        iterations: row.iterations,
        residual: row.residual,
        tolerance: row.tolerance.max(d_row.tolerance),
    })
}

/// One line of the depth table. Direct rows hold `d_λ` (at `δ = 0`),
/// formula rows hold `d_δ` (at `λ = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRow {
    pub p: f64,
    pub lambda: f64,
    pub delta: f64,
    pub depth: f64,
    pub method: DepthMethod,
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
}

/// Depths for every queried `λ` and `δ` at one exponent.
#[derive(Debug, Clone, Default)]
pub struct DepthTable {
    pub rows: Vec<DepthRow>,
}

pub const DEPTH_CSV_HEADER: [&str; 7] = [
    "p",
    "lambda",
    "delta",
    "depth",
    "method",
    "iterations",
    "residual",
];

impl DepthTable {
    pub fn compute(
        mesh: &Mesh,
        p: f64,
        lambdas: &[f64],
        deltas: &[f64],
        cfg: &SolverConfig,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for &lambda in lambdas {
            let params = Params::new(p, lambda, 0.0)?;
            params.check_dimension(mesh.dim())?;
            rows.push(depth_direct(mesh, &params, cfg)?.0);
        }
        for &delta in deltas {
            let params = Params::new(p, 0.0, delta)?;
            rows.push(depth_formula(mesh, &params, cfg)?);
        }
        Ok(Self { rows })
    }

    pub fn d_lambda(&self, lambda: f64) -> Option<&DepthRow> {
        self.rows
            .iter()
            .find(|r| r.method == DepthMethod::Direct && r.lambda == lambda)
    }

    pub fn d_delta(&self, delta: f64) -> Option<&DepthRow> {
        self.rows
            .iter()
            .find(|r| r.method == DepthMethod::Formula && r.delta == delta)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(DEPTH_CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                fmt_num(r.p),
                fmt_num(r.lambda),
                fmt_num(r.delta),
                fmt_num(r.depth),
                r.method.as_str().to_string(),
                r.iterations.to_string(),
                fmt_num(r.residual),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`DepthTable::write_csv`]. Tolerances are
    /// not stored in the file and are rebuilt from the residual column.
    pub fn read_csv<R: Read>(input: R, cfg: &SolverConfig) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().ne(DEPTH_CSV_HEADER.iter().copied()) {
            return Err(PwError::Format("unexpected depth table header".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| PwError::Format(format!("{e}: {:?}", &rec[i])))
            };
            let method = match rec[4].trim() {
                "formula" => DepthMethod::Formula,
                "direct" => DepthMethod::Direct,
                other => return Err(PwError::Format(format!("unknown method {other:?}"))),
            };
            let depth = num(3)?;
            let residual = num(6)?;
            rows.push(DepthRow {
                p: num(0)?,
                lambda: num(1)?,
                delta: num(2)?,
                depth,
                method,
                iterations: rec[5]
                    .trim()
                    .parse()
                    .map_err(|e| PwError::Format(format!("{e}")))?,
                residual,
                tolerance: depth_tolerance(depth, residual, cfg),
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Member,
    NotMember,
    /// Within the guard band of a defining inequality.
    Ambiguous,
}

impl Verdict {
    pub fn is_member(&self) -> bool {
        matches!(self, Verdict::Member)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    /// `W_λ = {E_λ < d_λ, I > 0} ∪ {0}`.
    W,
    /// `Z_δ = {u ≥ 0, u ≠ 0, J_δ < d_δ, I_δ < 0}`.
    Z,
}

/// Evidence for one set query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub set: SetKind,
    /// `λ` for `W`, `δ` for `Z`.
    pub parameter: f64,
    pub depth: f64,
    /// `E_λ(φ)` for `W`, `J_δ(φ)` for `Z`.
    pub energy: f64,
    /// `I(φ)` for `W`, `I_δ(φ)` for `Z`.
    pub nehari: f64,
    pub guard: f64,
    pub verdict: Verdict,
    pub reason: &'static str,
}

#[derive(Debug, Clone)]
pub struct SetMembership {
    pub w_lambda: Vec<Witness>,
    pub z_delta: Vec<Witness>,
}

impl SetMembership {
    pub fn in_w_lambda(&self) -> Vec<(f64, bool)> {
        self.w_lambda
            .iter()
            .map(|w| (w.parameter, w.verdict.is_member()))
            .collect()
    }

    pub fn in_z_delta(&self) -> Vec<(f64, bool)> {
        self.z_delta
            .iter()
            .map(|w| (w.parameter, w.verdict.is_member()))
            .collect()
    }

    /// `W̃`: member of some queried `W_λ`.
    pub fn in_w_tilde(&self) -> bool {
        self.w_lambda.iter().any(|w| w.verdict.is_member())
    }

    /// `Z̃`: member of some queried `Z_δ`.
    pub fn in_z_tilde(&self) -> bool {
        self.z_delta.iter().any(|w| w.verdict.is_member())
    }

    pub fn any_ambiguous(&self) -> bool {
        self.w_lambda
            .iter()
            .chain(&self.z_delta)
            .any(|w| w.verdict == Verdict::Ambiguous)
    }

    /// Witnesses for the positive answers only.
    pub fn witnesses(&self) -> impl Iterator<Item = &Witness> {
        self.w_lambda
            .iter()
            .chain(&self.z_delta)
            .filter(|w| w.verdict.is_member())
    }
}

/// Guard band for strict inequalities against a depth row.
pub fn guard_band(row: &DepthRow) -> f64 {
    1e-8f64.max(10.0 * row.tolerance)
}

fn strictly_below(x: f64, bound: f64, guard: f64) -> Verdict {
    if x < bound - guard {
        Verdict::Member
    } else if x > bound + guard {
        Verdict::NotMember
    } else {
        Verdict::Ambiguous
    }
}

fn both(a: Verdict, b: Verdict) -> Verdict {
    match (a, b) {
        (Verdict::NotMember, _) | (_, Verdict::NotMember) => Verdict::NotMember,
        (Verdict::Member, Verdict::Member) => Verdict::Member,
        _ => Verdict::Ambiguous,
    }
}

/// Places `phi` relative to `W_λ` for each `λ` and `Z_δ` for each `δ`.
pub fn classify(
    phi: &GridFunction,
    lambdas: &[f64],
    deltas: &[f64],
    params: &Params,
    depths: &DepthTable,
) -> Result<SetMembership> {
    let mut w_lambda = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let row = depths.d_lambda(lambda).ok_or_else(|| {
            PwError::InvalidArgument(format!("depth table has no d_lambda for lambda = {lambda}"))
        })?;
        let p = params.with_lambda(lambda)?.with_delta(0.0)?;
        let guard = guard_band(row);
        let r = functionals::report(phi, &p);
        let (verdict, reason) = if phi.is_zero() {
            (Verdict::Member, "zero datum")
        } else {
            let v = both(
                strictly_below(r.e_lambda, row.depth, guard),
                strictly_below(-r.i, 0.0, guard),
            );
            let reason = match v {
                Verdict::Member => "E_lambda < d_lambda and I > 0",
                Verdict::NotMember if r.i <= -guard => "I < 0",
                Verdict::NotMember => "E_lambda > d_lambda",
                Verdict::Ambiguous => "within guard band",
            };
            (v, reason)
        };
        w_lambda.push(Witness {
            set: SetKind::W,
            parameter: lambda,
            depth: row.depth,
            energy: r.e_lambda,
            nehari: r.i,
            guard,
            verdict,
            reason,
        });
    }

    let in_cone = !phi.is_zero() && phi.is_nonnegative();
    let mut z_delta = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let row = depths.d_delta(delta).ok_or_else(|| {
            PwError::InvalidArgument(format!("depth table has no d_delta for delta = {delta}"))
        })?;
        let p = params.with_lambda(0.0)?.with_delta(delta)?;
        let guard = guard_band(row);
        let r = functionals::report(phi, &p);
        let (verdict, reason) = if !in_cone {
            (Verdict::NotMember, "fails C+")
        } else {
            let v = both(
                strictly_below(r.j_delta, row.depth, guard),
                strictly_below(r.i_delta, 0.0, guard),
            );
            let reason = match v {
                Verdict::Member => "J_delta < d_delta and I_delta < 0",
                Verdict::NotMember if r.i_delta >= guard => "I_delta > 0",
                Verdict::NotMember => "J_delta > d_delta",
                Verdict::Ambiguous => "within guard band",
            };
            (v, reason)
        };
        z_delta.push(Witness {
            set: SetKind::Z,
            parameter: delta,
            depth: row.depth,
            energy: r.j_delta,
            nehari: r.i_delta,
            guard,
            verdict,
            reason,
        });
    }
    Ok(SetMembership { w_lambda, z_delta })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonBudget {
    /// `½·min(−I_δ(φ), d_δ − J_δ(φ))`.
    pub eps: f64,
    /// `d_δ − ε/(p+1)`, a lower bound for `inf {J_δ : I_δ = −ε}`.
    pub level_lower_bound: f64,
    pub i_delta: f64,
    pub j_delta: f64,
    pub d_delta: f64,
}

/// Margin `ε` by which `φ ∈ Z_δ` sits inside the set.
pub fn epsilon_budget(phi: &GridFunction, params: &Params, d_delta: f64) -> Result<EpsilonBudget> {
    if phi.is_zero() || !phi.is_nonnegative() {
        return Err(PwError::NotInSet("Z_delta requires nonnegative nonzero data".into()));
    }
    let (j_delta, i_delta) = functionals::delta_functionals(phi, params);
    if !(i_delta < 0.0) || !(j_delta < d_delta) {
        return Err(PwError::NotInSet(format!(
            "I_delta = {i_delta:.6e}, J_delta = {j_delta:.6e}, d_delta = {d_delta:.6e}"
        )));
    }
    let eps = 0.5 * (-i_delta).min(d_delta - j_delta);
    Ok(EpsilonBudget {
        eps,
        level_lower_bound: d_delta - eps / (params.p + 1.0),
        i_delta,
        j_delta,
        d_delta,
    })
}
