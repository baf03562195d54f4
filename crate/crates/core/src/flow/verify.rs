//! Checks of the evolution identities along recorded trajectories.

use super::{FlowOutcome, OutcomeKind, Trajectory};
use crate::error::{PwError, Result};
use crate::functionals::Params;

/// Pointwise residuals of a differential identity at the interior records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub median_abs: f64,
    /// Largest magnitude of the right-hand side, for relative comparisons.
    pub scale: f64,
    pub count: usize,
    /// Records next to a step forced at `dt_min`, left out of the check.
    pub skipped: usize,
}

impl ResidualReport {
    fn from_residuals(mut res: Vec<f64>, scale: f64, skipped: usize) -> Self {
        let count = res.len();
        res.sort_by(f64::total_cmp);
        let max_abs = res.last().copied().unwrap_or(0.0);
        let median_abs = if count == 0 {
            0.0
        } else if count % 2 == 1 {
            res[count / 2]
        } else {
            0.5 * (res[count / 2 - 1] + res[count / 2])
        };
        Self {
            max_abs,
            median_abs,
            scale,
            count,
            skipped,
        }
    }

    /// `max_abs / scale`, or `max_abs` when the scale vanishes.
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_abs / self.scale
        } else {
            self.max_abs
        }
    }
}

/// Interior records whose neighbouring steps were taken under error control.
fn resolved(traj: &Trajectory) -> Vec<usize> {
    let floor = traj.config.dt_min * (1.0 + 1e-9);
    (1..traj.len() - 1)
        .filter(|&k| traj.dts[k] > floor && traj.dts[k + 1] > floor)
        .collect()
}

fn need(traj: &Trajectory, n: usize) -> Result<()> {
    if traj.len() < n {
        return Err(PwError::TooShort {
            have: traj.len(),
            need: n,
        });
    }
    Ok(())
}

/// `dM/dt = −I_δ` via centred differences.
pub fn verify_mass_identity(traj: &Trajectory) -> Result<ResidualReport> {
    need(traj, 3)?;
    let t = &traj.times;
    let r = &traj.reports;
    let ks = resolved(traj);
    let res = ks
        .iter()
        .map(|&k| ((r[k + 1].m - r[k - 1].m) / (t[k + 1] - t[k - 1]) + r[k].i_delta).abs())
        .collect();
    let scale = ks.iter().map(|&k| r[k].i_delta.abs()).fold(0.0, f64::max);
    let skipped = traj.len() - 2 - ks.len();
    Ok(ResidualReport::from_residuals(res, scale, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationReport {
    pub residual: ResidualReport,
    /// Consecutive record pairs, both with `I_δ > 0`, where `E_λ` rose.
    pub monotone_violations: usize,
    /// Pairs examined for monotonicity.
    pub positive_pairs: usize,
}

impl DissipationReport {
    pub fn monotone_while_positive(&self) -> bool {
        self.monotone_violations == 0
    }
}

/// `d/dt (J_δ + λM) = −‖u_t‖² − λ·I_δ`. The step speeds on either side of a
/// record are averaged with their step lengths as weights.
pub fn verify_dissipation_identity(traj: &Trajectory, lambda: f64) -> Result<DissipationReport> {
    need(traj, 3)?;
    let t = &traj.times;
    let r = &traj.reports;
    let ut = &traj.ut_norm_sq;
    let e = |k: usize| r[k].j_delta + lambda * r[k].m;
    let ks = resolved(traj);
    let mut res = Vec::with_capacity(ks.len());
    let mut scale: f64 = 0.0;
    for &k in &ks {
        let (a, b) = (t[k] - t[k - 1], t[k + 1] - t[k]);
        let speed = (a * ut[k] + b * ut[k + 1]) / (a + b);
        let rhs = speed + lambda * r[k].i_delta;
        scale = scale.max(rhs.abs()).max(speed);
        res.push(((e(k + 1) - e(k - 1)) / (a + b) + rhs).abs());
    }
    let mut violations = 0;
    let mut pairs = 0;
    for k in 0..traj.len() - 1 {
        if r[k].i_delta > 0.0 && r[k + 1].i_delta > 0.0 {
            pairs += 1;
            if e(k + 1) > e(k) + 1e-14 * e(k).abs() {
                violations += 1;
            }
        }
    }
    Ok(DissipationReport {
        residual: ResidualReport::from_residuals(res, scale, traj.len() - 2 - ks.len()),
        monotone_violations: violations,
        positive_pairs: pairs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupReport {
    /// `min_t (−I_δ(v(t)) − ε)`.
    pub primitive_margin: f64,
    pub primitive_holds: bool,
    /// `M(t) ≥ M(0) + εt − tol` at every record.
    pub mass_growth_holds: bool,
    pub mass_strictly_increasing: bool,
    /// Secant slopes of `M` are nondecreasing over the last decade of growth.
    pub convex_final_phase: bool,
    /// `C(p, |Ω|)` in `dM/dt ≥ −2d + C·M^{(p+1)/2}`.
    pub constant_c: f64,
    /// `min_t (−I_δ + 2d − C·M^{(p+1)/2})`.
    pub composite_margin: f64,
    pub composite_holds: bool,
    /// `∫v² ≤ |Ω|^{(p−1)/(p+1)} (∫|v|^{p+1})^{2/(p+1)}` at every record.
    pub holder_holds: bool,
    /// Records where the composite bound holds with `2d` replaced by `d`
    /// (the bookkeeping variant) but fails as stated, or vice versa.
    pub flagged: Vec<usize>,
}

impl BlowupReport {
    pub fn all_hold(&self) -> bool {
        self.primitive_holds
            && self.mass_growth_holds
            && self.mass_strictly_increasing
            && self.composite_holds
            && self.holder_holds
    }
}

/// Mass-ODE checks along a blow-up run started in `Z_δ` with budget `eps`;
/// `d_eps_lb` is the lower level `d_δ − ε/(p+1)`.
pub fn verify_blowup_ode(
    traj: &Trajectory,
    outcome: &FlowOutcome,
    eps: f64,
    d_eps_lb: f64,
    params: &Params,
) -> Result<BlowupReport> {
    if !matches!(outcome.kind, OutcomeKind::BlowUp { .. }) {
        return Err(PwError::NotBlowUp);
    }
    need(traj, 2)?;
    let p = params.p;
    let omega = traj.mesh.measure();
    let r = &traj.reports;
    let t = &traj.times;
    let tol = |x: f64| 1e-10 * x.abs().max(1.0);

    let primitive_margin = r.iter().map(|x| -x.i_delta - eps).fold(f64::INFINITY, f64::min);
    let mass_growth_holds = r
        .iter()
        .zip(t)
        .all(|(x, &ti)| x.m >= r[0].m + eps * ti - tol(x.m));
    let mass_strictly_increasing = r.windows(2).all(|w| w[1].m > w[0].m);

    let m_last = r.last().expect("nonempty").m;
    let mut start = r.len() - 1;
    while start > 0 && r[start - 1].m >= m_last / 10.0 {
        start -= 1;
    }
    let slopes: Vec<f64> = (start.max(1)..r.len())
        .map(|k| (r[k].m - r[k - 1].m) / (t[k] - t[k - 1]))
        .collect();
    let convex_final_phase = slopes.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));

    let constant_c = (p - 1.0) / (p + 1.0) * 2f64.powf((p + 1.0) / 2.0) * omega.powf(-(p - 1.0) / 2.0);
    let mut composite_margin = f64::INFINITY;
    let mut flagged = Vec::new();
    let mut holder_holds = true;
    for (k, x) in r.iter().enumerate() {
        let growth = constant_c * x.m.powf((p + 1.0) / 2.0);
        let lhs = -x.i_delta;
        let stated = lhs + 2.0 * d_eps_lb - growth;
        let variant = lhs + d_eps_lb - growth;
        composite_margin = composite_margin.min(stated);
        if (stated >= -tol(lhs)) != (variant >= -tol(lhs)) {
            flagged.push(k);
        }
        let l2 = 2.0 * x.m;
        let bound = omega.powf((p - 1.0) / (p + 1.0)) * x.lp1_norm_pow.powf(2.0 / (p + 1.0));
        if l2 > bound * (1.0 + 1e-12) {
            holder_holds = false;
        }
    }
    let composite_holds = r
        .iter()
        .all(|x| -x.i_delta + 2.0 * d_eps_lb - constant_c * x.m.powf((p + 1.0) / 2.0) >= -tol(x.i_delta));

    Ok(BlowupReport {
        primitive_margin,
        primitive_holds: primitive_margin >= 0.0,
        mass_growth_holds,
        mass_strictly_increasing,
        convex_final_phase,
        constant_c,
        composite_margin,
        composite_holds,
        holder_holds,
        flagged,
    })
}

/// True iff the final state is below the decay threshold in both the `H¹`
/// seminorm and the sup norm, and the last ten recorded `H¹` values do not
/// increase.
pub fn omega_limit_check(traj: &Trajectory) -> bool {
    let Some(last) = traj.reports.last() else {
        return false;
    };
    let thr = traj.config.decay_h1_threshold;
    if last.h1_seminorm() > thr || last.sup_norm > thr {
        return false;
    }
    let start = traj.len().saturating_sub(10);
    traj.reports[start..]
        .windows(2)
        .all(|w| w[1].h1_seminorm_sq <= w[0].h1_seminorm_sq)
}

#[cfg(test)]
mod tests {
    use super::super::{run_flow, FlowConfig};
    use super::*;
    use crate::functionals::FunctionalReport;
    use crate::mesh::{GridFunction, Mesh};
    use std::f64::consts::PI;

    fn decay_run(dt: f64, lambda: f64) -> Trajectory {
        let m = Mesh::interval(0.0, PI, 1023).unwrap();
        let params = Params::new(3.0, lambda, 0.0).unwrap();
        let phi = GridFunction::from_fn(&m, |x| 0.01 * x[0].sin()).unwrap();
        run_flow(&phi, &FlowConfig::fixed_step(params, dt, 1.0)).unwrap().0
    }

    #[test]
    fn mass_identity_first_order() {
        let a = verify_mass_identity(&decay_run(2e-3, 0.0)).unwrap();
        let b = verify_mass_identity(&decay_run(1e-3, 0.0)).unwrap();
        assert!(b.relative() <= 1e-3, "{b:?}");
        let ratio = a.max_abs / b.max_abs;
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn dissipation_identity_first_order_and_monotone() {
        let a = verify_dissipation_identity(&decay_run(2e-3, 1.0), 1.0).unwrap();
        let b = verify_dissipation_identity(&decay_run(1e-3, 1.0), 1.0).unwrap();
        assert!(b.residual.relative() <= 1e-3, "{b:?}");
        let ratio = a.residual.max_abs / b.residual.max_abs;
        assert!(ratio >= 1.8, "ratio {ratio}");
        assert!(b.monotone_while_positive());
        assert!(b.positive_pairs > 900);
    }

    #[test]
    fn stationary_zero_has_zero_residual() {
        let m = Mesh::interval(0.0, PI, 15).unwrap();
        let params = Params::new(3.0, 0.0, 0.0).unwrap();
        let traj = Trajectory {
            mesh: m.clone(),
            config: FlowConfig::new(params),
            times: vec![0.0, 0.1, 0.2, 0.3],
            reports: vec![FunctionalReport::zero(); 4],
            ut_norm_sq: vec![0.0; 4],
            dts: vec![0.0, 0.1, 0.1, 0.1],
            snapshots: Vec::new(),
            final_state: GridFunction::zeros(&m),
        };
        let r = verify_mass_identity(&traj).unwrap();
        assert_eq!(r.max_abs, 0.0);
        assert_eq!(verify_dissipation_identity(&traj, 1.0).unwrap().residual.max_abs, 0.0);
        assert!(omega_limit_check(&traj));
    }

    #[test]
    fn short_trajectory_rejected() {
        let m = Mesh::interval(0.0, PI, 15).unwrap();
        let (traj, _) = run_flow(&GridFunction::zeros(&m), &FlowConfig::new(Params::new(3.0, 0.0, 0.0).unwrap())).unwrap();
        assert!(matches!(verify_mass_identity(&traj), Err(PwError::TooShort { have: 1, need: 3 })));
        assert!(omega_limit_check(&traj));
    }

    #[test]
    fn decay_outcome_rejected_by_blowup_check() {
        let m = Mesh::interval(0.0, PI, 63).unwrap();
        let params = Params::new(3.0, 0.0, 0.0).unwrap();
        let phi = GridFunction::from_fn(&m, |x| 0.01 * x[0].sin()).unwrap();
        let (traj, out) = run_flow(&phi, &FlowConfig::new(params)).unwrap();
        assert!(out.kind.is_decay());
        assert!(omega_limit_check(&traj));
        assert!(matches!(
            verify_blowup_ode(&traj, &out, 1.0, 0.1, &params),
            Err(PwError::NotBlowUp)
        ));
    }

    #[test]
    fn truncated_decay_fails_omega_check() {
        let traj = decay_run(1e-3, 0.0);
        assert!(!omega_limit_check(&traj));
    }
}
