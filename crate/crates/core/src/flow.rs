//! Time evolution of `u_t − Δu + δu = |u|^{p−1}u` (`δ = 0` gives the
//! unperturbed equation) with first-order IMEX steps: backward Euler for
//! diffusion and the linear `δ` term, forward Euler for the reaction.

use std::io::{Read, Write};

use crate::error::{PwError, Result};
use crate::functionals::{self, FunctionalReport, Params};
use crate::io::fmt_num;
use crate::linalg::{ShiftedLaplacian, CG_RTOL};
use crate::mesh::{GridFunction, Mesh};
use crate::nehari::nonlinearity;

mod verify;

pub use verify::{
    omega_limit_check, verify_blowup_ode, verify_dissipation_identity, verify_mass_identity,
    BlowupReport, DissipationReport, ResidualReport,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub params: Params,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_max: f64,
    pub blowup_sup_threshold: f64,
    /// Decay is declared once `√∫|∇u|²` drops to this level.
    pub decay_h1_threshold: f64,
    pub snapshot_stride: usize,
    /// Safety factor in the step-size update.
    pub safety: f64,
    /// Relative `L²` tolerance on the step-doubling error estimate.
    pub tol_step: f64,
    /// Without adaptivity the step is only cut when the reaction overflows.
    pub adaptive: bool,
    /// Consecutive steps pinned at `dt_min` without growth before giving up.
    pub stall_steps: usize,
    pub max_steps: usize,
}

impl FlowConfig {
    pub fn new(params: Params) -> Self {
        Self {
            params,
            dt_init: 1e-3,
            dt_min: 1e-12,
            dt_max: 0.5,
            t_max: 100.0,
            blowup_sup_threshold: 1e6,
            decay_h1_threshold: 1e-8,
            snapshot_stride: 100,
            safety: 0.9,
            tol_step: 1e-5,
            adaptive: true,
            stall_steps: 1000,
            max_steps: 5_000_000,
        }
    }

    /// Fixed step `dt` (cut only on overflow).
    pub fn fixed_step(params: Params, dt: f64, t_max: f64) -> Self {
        Self {
            dt_init: dt,
            dt_max: dt,
            t_max,
            adaptive: false,
            ..Self::new(params)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(PwError::InvalidArgument(format!("flow config: {what}")));
        if !(self.dt_min > 0.0) || !(self.dt_min <= self.dt_init) {
            return bad("need 0 < dt_min ≤ dt_init");
        }
        if !(self.dt_max >= self.dt_init) {
            return bad("need dt_max ≥ dt_init");
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return bad("t_max must be positive");
        }
        if !(self.blowup_sup_threshold > 0.0) || !(self.decay_h1_threshold > 0.0) {
            return bad("thresholds must be positive");
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride must be ≥ 1");
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) || !(self.tol_step > 0.0) {
            return bad("need 0 < safety ≤ 1 and tol_step > 0");
        }
        Ok(())
    }
}

/// Reusable IMEX stepper for one mesh and parameter set.
pub(crate) struct Imex<'a> {
    mesh: &'a Mesh,
    p: f64,
    delta: f64,
    rhs: Vec<f64>,
    half: Vec<f64>,
    full: Vec<f64>,
}

/// Result of a (possibly step-doubled) attempt.
pub(crate) struct Attempt {
    /// `None` if the reaction overflowed.
    pub next: Option<Vec<f64>>,
    /// Relative `L²` step-doubling discrepancy; 0 without adaptivity.
    pub est: f64,
}

impl<'a> Imex<'a> {
    pub(crate) fn new(mesh: &'a Mesh, params: &Params) -> Self {
        let n = mesh.len();
        Self {
            mesh,
            p: params.p,
            delta: params.delta,
            rhs: vec![0.0; n],
            half: vec![0.0; n],
            full: vec![0.0; n],
        }
    }

    /// One IMEX step; returns `false` on overflow.
    fn step_into(&mut self, u: &[f64], dt: f64, out: &mut [f64]) -> Result<bool> {
        for (r, &x) in self.rhs.iter_mut().zip(u) {
            *r = x + dt * nonlinearity(x, self.p);
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Ok(false);
        }
        out.copy_from_slice(u);
        let op = ShiftedLaplacian::new(self.mesh, 1.0 + dt * self.delta, dt)?;
        let stats = op.solve(&self.rhs, out)?;
        if stats.rel_residual > 10.0 * CG_RTOL {
            return Err(PwError::NotConverged {
                what: "implicit diffusion solve",
                iterations: stats.iterations,
                residual: stats.rel_residual,
            });
        }
        Ok(out.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn attempt(&mut self, u: &[f64], dt: f64, adaptive: bool) -> Result<Attempt> {
        let mut full = std::mem::take(&mut self.full);
        if !self.step_into(u, dt, &mut full)? {
            self.full = full;
            return Ok(Attempt { next: None, est: f64::INFINITY });
        }
        if !adaptive {
            let next = full.clone();
            self.full = full;
            return Ok(Attempt { next: Some(next), est: 0.0 });
        }
        let mut half = std::mem::take(&mut self.half);
        let mut two = vec![0.0; u.len()];
        let ok = self.step_into(u, 0.5 * dt, &mut half)? && self.step_into(&half, 0.5 * dt, &mut two)?;
        let result = if ok {
            let diff: f64 = full.iter().zip(&two).map(|(a, b)| (a - b) * (a - b)).sum();
            let norm: f64 = two.iter().map(|b| b * b).sum();
            let est = (diff / norm.max(f64::MIN_POSITIVE)).sqrt();
            Attempt { next: Some(two), est }
        } else {
            Attempt { next: None, est: f64::INFINITY }
        };
        self.half = half;
        self.full = full;
        Ok(result)
    }
}

/// Solves `(1 + dt·δ)u⁺ − dt·Δ_h u⁺ = u + dt·|u|^{p−1}u`.
pub fn step_imex(u: &GridFunction, dt: f64, params: &Params) -> Result<GridFunction> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(PwError::InvalidArgument(format!("time step {dt} must be positive")));
    }
    let mesh = u.mesh();
    let mut stepper = Imex::new(mesh, params);
    let mut out = vec![0.0; mesh.len()];
    if !stepper.step_into(u.values(), dt, &mut out)? {
        return Err(PwError::NonFinite("reaction term overflowed".into()));
    }
    Ok(GridFunction::from_raw(mesh, out))
}

/// `‖Δ_h u − δu + |u|^{p−1}u‖²`, the squared speed of the exact semi-discrete
/// flow at `u`.
pub fn gradient_norm_sq(u: &GridFunction, params: &Params) -> f64 {
    let mesh = u.mesh();
    let mut lu = vec![0.0; mesh.len()];
    mesh.laplacian_into(u.values(), &mut lu);
    for (l, &x) in lu.iter_mut().zip(u.values()) {
        *l += nonlinearity(x, params.p) - params.delta * x;
    }
    mesh.dot(&lu, &lu)
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub state: GridFunction,
}

/// Recorded history of one run. Entry `k` of `ut_norm_sq` and `dts` belongs
/// to the step that ended at `times[k]`; entry 0 holds the exact
/// `‖u_t(0)‖²` and a zero step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mesh: Mesh,
    pub config: FlowConfig,
    pub times: Vec<f64>,
    pub reports: Vec<FunctionalReport>,
    pub ut_norm_sq: Vec<f64>,
    pub dts: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Last finite state.
    pub final_state: GridFunction,
}

pub const TRAJECTORY_CSV_HEADER: [&str; 10] = [
    "t",
    "J",
    "M",
    "I",
    "E_lambda",
    "I_delta",
    "sup_norm",
    "h1_seminorm_sq",
    "ut_norm_sq",
    "dt",
];

impl Trajectory {
    fn start(phi: &GridFunction, cfg: &FlowConfig) -> Self {
        let mut t = Self {
            mesh: phi.mesh().clone(),
            config: *cfg,
            times: Vec::new(),
            reports: Vec::new(),
            ut_norm_sq: Vec::new(),
            dts: Vec::new(),
            snapshots: Vec::new(),
            final_state: phi.clone(),
        };
        t.push(0, 0.0, phi, gradient_norm_sq(phi, &cfg.params), 0.0);
        t
    }

    fn push(&mut self, step: usize, time: f64, u: &GridFunction, ut: f64, dt: f64) {
        self.times.push(time);
        self.reports.push(functionals::report(u, &self.config.params));
        self.ut_norm_sq.push(ut);
        self.dts.push(dt);
        if step % self.config.snapshot_stride == 0 {
            self.snapshots.push(Snapshot {
                step,
                time,
                state: u.clone(),
            });
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAJECTORY_CSV_HEADER)?;
        for k in 0..self.len() {
            let r = &self.reports[k];
            w.write_record(
                [
                    self.times[k],
                    r.j,
                    r.m,
                    r.i,
                    r.e_lambda,
                    r.i_delta,
                    r.sup_norm,
                    r.h1_seminorm_sq,
                    self.ut_norm_sq[k],
                    self.dts[k],
                ]
                .iter()
                .map(|&v| fmt_num(v)),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Snapshot file name for a step index.
    pub fn snapshot_name(step: usize) -> String {
        format!("snapshot_{step:08}.csv")
    }

    /// Rebuilds the scalar history from a trajectory file. `λ`, `δ` and `p`
    /// are recovered from the redundant columns; snapshots are not read.
    pub fn read_csv<R: Read>(mesh: &Mesh, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().map(str::trim).ne(TRAJECTORY_CSV_HEADER.iter().copied()) {
            return Err(PwError::Format("unexpected trajectory header".into()));
        }
        let mut rows: Vec<[f64; 10]> = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 10 {
                return Err(PwError::Format(format!("row {} has {} fields", k + 1, rec.len())));
            }
            let mut row = [0.0; 10];
            for (i, field) in rec.iter().enumerate() {
                row[i] = field
                    .trim()
                    .parse()
                    .map_err(|e| PwError::Format(format!("row {}: {e}: {field:?}", k + 1)))?;
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(PwError::Format("trajectory file has no rows".into()));
        }
        let (p, lambda, delta) = infer_params(&rows);
        let params = Params::new(p, lambda, delta)?;
        let mut times = Vec::with_capacity(rows.len());
        let mut reports = Vec::with_capacity(rows.len());
        let mut ut = Vec::with_capacity(rows.len());
        let mut dts = Vec::with_capacity(rows.len());
        for row in &rows {
            let [t, j, m, i, e, id, sup, g, u2, dt] = *row;
            times.push(t);
            reports.push(FunctionalReport {
                j,
                m,
                i,
                e_lambda: e,
                j_delta: j + delta * m,
                i_delta: id,
                sup_norm: sup,
                h1_seminorm_sq: g,
                lp1_norm_pow: g - i,
            });
            ut.push(u2);
            dts.push(dt);
        }
        Ok(Self {
            mesh: mesh.clone(),
            config: FlowConfig::new(params),
            times,
            reports,
            ut_norm_sq: ut,
            dts,
            snapshots: Vec::new(),
            final_state: GridFunction::zeros(mesh),
        })
    }
}

/// Recovers `(p, λ, δ)` from the row with the largest mass.
fn infer_params(rows: &[[f64; 10]]) -> (f64, f64, f64) {
    let row = rows
        .iter()
        .max_by(|a, b| a[2].total_cmp(&b[2]))
        .expect("nonempty");
    let [_, j, m, i, e, id, _, g, _, _] = *row;
    if m <= 0.0 {
        return (3.0, 0.0, 0.0);
    }
    let clean = |x: f64| if x.abs() < 1e-9 { 0.0 } else { x.max(0.0) };
    let lambda = clean((e - j) / m);
    let delta = clean((id - i) / (2.0 * m));
    let lp = g - i;
    let denom = 0.5 * g - j;
    let p = if lp > 0.0 && denom > 0.0 { lp / denom - 1.0 } else { 3.0 };
    (if p > 1.0 { p } else { 3.0 }, lambda, delta)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeKind {
    GlobalDecay { t_reached: f64 },
    BlowUp { t_estimate: f64, last_finite_time: f64 },
    Inconclusive { reason: String },
}

impl OutcomeKind {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeKind::GlobalDecay { .. } => "GlobalDecay",
            OutcomeKind::BlowUp { .. } => "BlowUp",
            OutcomeKind::Inconclusive { .. } => "Inconclusive",
        }
    }

    pub fn is_decay(&self) -> bool {
        matches!(self, OutcomeKind::GlobalDecay { .. })
    }

    pub fn is_blowup(&self) -> bool {
        matches!(self, OutcomeKind::BlowUp { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutcome {
    pub kind: OutcomeKind,
    /// The last recorded state sits on the side of the Nehari manifold that
    /// matches the outcome (`I_δ ≥ 0` for decay, `I_δ < 0` for blow-up).
    pub final_membership_consistent: bool,
}

pub const OUTCOME_CSV_HEADER: [&str; 7] = [
    "kind",
    "time",
    "last_finite_time",
    "reason",
    "blowup_sup_threshold",
    "decay_h1_threshold",
    "dt_min",
];

impl FlowOutcome {
    /// One-line record with a header.
    pub fn write_csv<W: Write>(&self, cfg: &FlowConfig, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(OUTCOME_CSV_HEADER)?;
        let (time, last, reason) = match &self.kind {
            OutcomeKind::GlobalDecay { t_reached } => (*t_reached, *t_reached, String::new()),
            OutcomeKind::BlowUp {
                t_estimate,
                last_finite_time,
            } => (*t_estimate, *last_finite_time, String::new()),
            OutcomeKind::Inconclusive { reason } => (f64::NAN, f64::NAN, reason.clone()),
        };
        w.write_record([
            self.kind.label().to_string(),
            fmt_num(time),
            fmt_num(last),
            reason,
            fmt_num(cfg.blowup_sup_threshold),
            fmt_num(cfg.decay_h1_threshold),
            fmt_num(cfg.dt_min),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Fits `M(t) ≈ c·(T − t)^{−2/(p−1)}` over the last decade of mass growth and
/// returns `T`. Linear in `t` after the transform `M^{−(p−1)/2}`.
pub fn estimate_blowup_time(times: &[f64], masses: &[f64], p: f64) -> Option<f64> {
    let n = times.len().min(masses.len());
    if n < 3 {
        return None;
    }
    let m_last = masses[n - 1];
    let mut start = n - 1;
    while start > 0 && masses[start - 1] >= m_last / 10.0 {
        start -= 1;
    }
    start = start.min(n - 3);
    let xs = &times[start..n];
    let ys: Vec<f64> = masses[start..n]
        .iter()
        .map(|&m| m.powf(-(p - 1.0) / 2.0))
        .collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return None;
    }
    let t = mx - my / slope;
    t.is_finite().then_some(t.max(times[n - 1]))
}

/// Integrates from `phi` until decay, blow-up detection or the horizon.
pub fn run_flow(phi: &GridFunction, cfg: &FlowConfig) -> Result<(Trajectory, FlowOutcome)> {
    cfg.validate()?;
    let mesh = phi.mesh();
    let mut traj = Trajectory::start(phi, cfg);
    let finish = |traj: Trajectory, kind: OutcomeKind| {
        let last = traj.reports.last().expect("at least one record");
        let consistent = match kind {
            OutcomeKind::GlobalDecay { .. } => last.i_delta >= 0.0,
            OutcomeKind::BlowUp { .. } => last.i_delta < 0.0,
            OutcomeKind::Inconclusive { .. } => false,
        };
        Ok((
            traj,
            FlowOutcome {
                kind,
                final_membership_consistent: consistent,
            },
        ))
    };
    if phi.is_zero() || traj.reports[0].h1_seminorm() <= cfg.decay_h1_threshold {
        return finish(traj, OutcomeKind::GlobalDecay { t_reached: 0.0 });
    }

    let mut stepper = Imex::new(mesh, &cfg.params);
    let mut u = phi.values().to_vec();
    let mut t = 0.0;
    let mut dt = cfg.dt_init;
    let mut steps = 0usize;
    let mut stalled = 0usize;
    let mut sup = traj.reports[0].sup_norm;
    let pinned_at = cfg.dt_min * (1.0 + 1e-9);
    loop {
        if t >= cfg.t_max * (1.0 - 1e-14) {
            return finish(traj, OutcomeKind::Inconclusive { reason: "horizon".into() });
        }
        if steps >= cfg.max_steps {
            return finish(traj, OutcomeKind::Inconclusive { reason: "step budget".into() });
        }
        let dt_try = dt.min(cfg.t_max - t).min(cfg.dt_max).max(cfg.dt_min.min(cfg.t_max - t));
        let attempt = stepper.attempt(&u, dt_try, cfg.adaptive)?;
        let Some(next) = attempt.next else {
            if dt_try > pinned_at {
                dt = (0.2 * dt_try).max(cfg.dt_min);
                continue;
            }
            let kind = if sup > cfg.blowup_sup_threshold {
                blowup_kind(&traj, cfg.params.p)
            } else {
                OutcomeKind::Inconclusive { reason: "overflow".into() }
            };
            return finish(traj, kind);
        };
        let mut dt_next = dt_try;
        if cfg.adaptive {
            let factor = if attempt.est > 0.0 {
                (cfg.safety * (cfg.tol_step / attempt.est).sqrt()).clamp(0.2, 5.0)
            } else {
                5.0
            };
            if attempt.est > cfg.tol_step && dt_try > pinned_at {
                dt = (dt_try * factor).max(cfg.dt_min);
                continue;
            }
            dt_next = (dt_try * factor).clamp(cfg.dt_min, cfg.dt_max);
        }

        let ut: f64 = u
            .iter()
            .zip(&next)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            * mesh.quad_weight()
            / (dt_try * dt_try);
        u = next;
        t += dt_try;
        steps += 1;
        let state = GridFunction::from_raw(mesh, u.clone());
        traj.push(steps, t, &state, ut, dt_try);
        traj.final_state = state;

        let report = traj.reports.last().expect("just pushed");
        let new_sup = report.sup_norm;
        let growing = new_sup > sup;
        sup = new_sup;
        let pinned = dt_try <= pinned_at;
        if pinned && growing && sup > cfg.blowup_sup_threshold {
            let kind = blowup_kind(&traj, cfg.params.p);
            return finish(traj, kind);
        }
        stalled = if pinned && !growing { stalled + 1 } else { 0 };
        if stalled >= cfg.stall_steps {
            return finish(traj, OutcomeKind::Inconclusive { reason: "stall".into() });
        }
        if report.h1_seminorm() <= cfg.decay_h1_threshold {
            return finish(traj, OutcomeKind::GlobalDecay { t_reached: t });
        }
        dt = dt_next;
    }
}

fn blowup_kind(traj: &Trajectory, p: f64) -> OutcomeKind {
    let last = *traj.times.last().expect("nonempty");
    let masses: Vec<f64> = traj.reports.iter().map(|r| r.m).collect();
    let t_estimate = estimate_blowup_time(&traj.times, &masses, p).unwrap_or(last);
    OutcomeKind::BlowUp {
        t_estimate,
        last_finite_time: last,
    }
}
