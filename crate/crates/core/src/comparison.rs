//! Lockstep integration of the unperturbed flow `u` and the damped flow `v`
//! from the same nonnegative data, tracking the ordering `u ≥ v`.

use std::io::Write;

use crate::error::{PwError, Result};
use crate::flow::{FlowConfig, Imex};
use crate::io::fmt_num;
use crate::mesh::GridFunction;

/// Ordering tolerance relative to the current sup norm.
pub const TOL_CMP_REL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    /// `min (u − v)` over nodes.
    pub min_gap: Vec<f64>,
    /// `∫ |(u − v)₋|²`.
    pub neg_part_mass: Vec<f64>,
    pub u_sup: Vec<f64>,
    pub v_sup: Vec<f64>,
    pub ordering_holds: bool,
    pub u_blowup_time: Option<f64>,
    pub v_blowup_time: Option<f64>,
}

pub const COMPARISON_CSV_HEADER: [&str; 5] = ["t", "min_gap", "neg_part_mass", "u_sup", "v_sup"];

impl ComparisonReport {
    /// `TOL_CMP_REL · max(sup u, sup v)` at record `k`.
    pub fn tol_cmp(&self, k: usize) -> f64 {
        TOL_CMP_REL * self.u_sup[k].max(self.v_sup[k])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `neg_part_mass ≤ tol_cmp²` at every record.
    pub fn neg_part_within_tolerance(&self) -> bool {
        (0..self.len()).all(|k| self.neg_part_mass[k] <= self.tol_cmp(k).powi(2))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COMPARISON_CSV_HEADER)?;
        for k in 0..self.len() {
            w.write_record(
                [
                    self.times[k],
                    self.min_gap[k],
                    self.neg_part_mass[k],
                    self.u_sup[k],
                    self.v_sup[k],
                ]
                .iter()
                .map(|&v| fmt_num(v)),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `u_t − Δu = u^p` and `v_t − Δv + δv = v^p` from `phi ≥ 0` until a
/// blow-up detection, until both have decayed below the `H¹` threshold, or
/// until `t_max`.
pub fn run_comparison(phi: &GridFunction, cfg: &FlowConfig, delta: f64) -> Result<ComparisonReport> {
    if !phi.is_nonnegative() {
        return Err(PwError::SignChanging);
    }
    if phi.is_zero() {
        return Err(PwError::ZeroFunction);
    }
    run_comparison_from(phi, phi, cfg, delta)
}

/// As [`run_comparison`] but with separate starting states, so that an
/// initial ordering defect can be injected.
pub fn run_comparison_from(
    u0: &GridFunction,
    v0: &GridFunction,
    cfg: &FlowConfig,
    delta: f64,
) -> Result<ComparisonReport> {
    cfg.validate()?;
    if u0.mesh() != v0.mesh() {
        return Err(PwError::MeshMismatch);
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(PwError::InvalidArgument(format!("delta = {delta} must be ≥ 0")));
    }
    let mesh = u0.mesh();
    let w = mesh.quad_weight();
    let pu = cfg.params.with_delta(0.0)?;
    let pv = cfg.params.with_delta(delta)?;
    let mut su = Imex::new(mesh, &pu);
    let mut sv = Imex::new(mesh, &pv);
    let mut u = u0.values().to_vec();
    let mut v = v0.values().to_vec();

    let mut rep = ComparisonReport {
        times: Vec::new(),
        min_gap: Vec::new(),
        neg_part_mass: Vec::new(),
        u_sup: Vec::new(),
        v_sup: Vec::new(),
        ordering_holds: true,
        u_blowup_time: None,
        v_blowup_time: None,
    };
    let sup = |x: &[f64]| x.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let record = |rep: &mut ComparisonReport, t: f64, u: &[f64], v: &[f64]| {
        let mut gap = f64::INFINITY;
        let mut neg = 0.0;
        for (a, b) in u.iter().zip(v) {
            let d = a - b;
            gap = gap.min(d);
            if d < 0.0 {
                neg += d * d;
            }
        }
        rep.times.push(t);
        rep.min_gap.push(gap);
        rep.neg_part_mass.push(neg * w);
        rep.u_sup.push(sup(u));
        rep.v_sup.push(sup(v));
    };
    record(&mut rep, 0.0, &u, &v);

    let pinned_at = cfg.dt_min * (1.0 + 1e-9);
    let mut t = 0.0;
    let mut dt = cfg.dt_init;
    let mut steps = 0usize;
    while t < cfg.t_max * (1.0 - 1e-14) && steps < cfg.max_steps {
        let dt_try = dt.min(cfg.t_max - t).min(cfg.dt_max);
        let au = su.attempt(&u, dt_try, cfg.adaptive)?;
        let av = sv.attempt(&v, dt_try, cfg.adaptive)?;
        let (Some(nu), Some(nv)) = (au.next, av.next) else {
            if dt_try > pinned_at {
                dt = (0.2 * dt_try).max(cfg.dt_min);
                continue;
            }
            let last = rep.len() - 1;
            if rep.u_sup[last] > cfg.blowup_sup_threshold {
                rep.u_blowup_time = Some(t);
            }
            if rep.v_sup[last] > cfg.blowup_sup_threshold {
                rep.v_blowup_time = Some(t);
            }
            break;
        };
        let est = au.est.max(av.est);
        let mut dt_next = dt_try;
        if cfg.adaptive {
            let factor = if est > 0.0 {
                (cfg.safety * (cfg.tol_step / est).sqrt()).clamp(0.2, 5.0)
            } else {
                5.0
            };
            if est > cfg.tol_step && dt_try > pinned_at {
                dt = (dt_try * factor).max(cfg.dt_min);
                continue;
            }
            dt_next = (dt_try * factor).clamp(cfg.dt_min, cfg.dt_max);
        }
        let (old_u, old_v) = (sup(&u), sup(&v));
        u = nu;
        v = nv;
        t += dt_try;
        steps += 1;
        record(&mut rep, t, &u, &v);
        let k = rep.len() - 1;
        let pinned = dt_try <= pinned_at;
        let hit = |s: f64, old: f64| pinned && s > old && s > cfg.blowup_sup_threshold;
        if hit(rep.u_sup[k], old_u) {
            rep.u_blowup_time = Some(t);
        }
        if hit(rep.v_sup[k], old_v) {
            rep.v_blowup_time = Some(t);
        }
        if rep.u_blowup_time.is_some() || rep.v_blowup_time.is_some() {
            break;
        }
        let decayed = |x: &[f64]| mesh.dirichlet_form(x).sqrt() <= cfg.decay_h1_threshold;
        if decayed(&u) && decayed(&v) {
            break;
        }
        dt = dt_next;
    }
    rep.ordering_holds = (0..rep.len()).all(|k| rep.min_gap[k] >= -rep.tol_cmp(k));
    Ok(rep)
}

/// Largest relative growth rate `Δ(∫|w₋|²)/Δt / max(∫|w₋|², floor)` over the
/// recorded intervals, with `floor` the squared ordering tolerance at the
/// start of each interval. Zero when the negative part never appears.
pub fn gronwall_diagnostic(report: &ComparisonReport) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..report.len().saturating_sub(1) {
        let rise = report.neg_part_mass[k + 1] - report.neg_part_mass[k];
        if rise == 0.0 {
            continue;
        }
        let dt = report.times[k + 1] - report.times[k];
        let floor = report.tol_cmp(k).powi(2).max(f64::MIN_POSITIVE);
        worst = worst.max(rise / dt / report.neg_part_mass[k].max(floor));
    }
    worst
}
