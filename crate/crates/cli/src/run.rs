//! Scenario execution and the summary and phase tables.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use pwlab_core::comparison::run_comparison;
use pwlab_core::flow::{
    omega_limit_check, run_flow, verify_blowup_ode, verify_dissipation_identity,
    verify_mass_identity, FlowOutcome, OutcomeKind, Trajectory,
};
use pwlab_core::io::fmt_num;
use pwlab_core::nehari::{
    classify, epsilon_budget, ground_state, nehari_scale, DepthTable, SetMembership,
};
use pwlab_core::{GridFunction, Params};

use crate::scenario::{Scenario, Task};
use crate::CliError;

/// Relative tolerance for the identity residuals checked by `verify`.
pub const VERIFY_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    Yes,
    No,
    NotApplicable,
}

impl Agreement {
    pub fn as_str(&self) -> &'static str {
        match self {
            Agreement::Yes => "yes",
            Agreement::No => "no",
            Agreement::NotApplicable => "n/a",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub datum: String,
    pub amplitude: f64,
    /// `W`, `Z`, `ambiguous`, `none`, or empty when not classified.
    pub membership: String,
    /// `λ` of the deciding `W_λ` witness, else the first queried `λ`.
    pub lambda: f64,
    /// `δ` of the deciding `Z_δ` witness, else the first queried `δ`.
    pub delta: f64,
    /// `decay`, `blowup` or empty.
    pub predicted: String,
    pub outcome: Option<OutcomeKind>,
    pub agreement: Agreement,
    pub mass_residual: Option<f64>,
    pub dissipation_residual: Option<f64>,
    pub verified: Option<bool>,
    pub ordering_holds: Option<bool>,
    /// Whether the datum dominates the Nehari-scaled ground state at the
    /// deciding `δ` (Z members only).
    pub dominates_ground_state: Option<bool>,
    pub error: Option<String>,
}

impl SummaryRow {
    pub fn t_event(&self) -> f64 {
        match &self.outcome {
            Some(OutcomeKind::GlobalDecay { t_reached }) => *t_reached,
            Some(OutcomeKind::BlowUp { t_estimate, .. }) => *t_estimate,
            _ => f64::NAN,
        }
    }

    fn disagrees(&self) -> bool {
        self.agreement == Agreement::No
            || self.verified == Some(false)
            || self.ordering_holds == Some(false)
    }
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    /// Scenario-level task failures.
    pub errors: Vec<String>,
    pub out_path: PathBuf,
}

impl Summary {
    /// 0 when everything ran and agreed, 2 on disagreements, 1 on errors.
    pub fn exit_code(&self) -> i32 {
        if !self.errors.is_empty() || self.rows.iter().any(|r| r.error.is_some()) {
            1
        } else if self.rows.iter().any(SummaryRow::disagrees) {
            2
        } else {
            0
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>12} {:<10} {:<9} {:<13} {:>14} {:<6}",
            "datum", "amplitude", "member", "predict", "outcome", "t", "agree"
        );
        for r in &self.rows {
            let outcome = r.outcome.as_ref().map_or("", |o| o.label());
            let _ = writeln!(
                s,
                "{:<6} {:>12.5e} {:<10} {:<9} {:<13} {:>14.6e} {:<6}{}",
                r.datum,
                r.amplitude,
                r.membership,
                r.predicted,
                outcome,
                r.t_event(),
                r.agreement.as_str(),
                r.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()
            );
        }
        for e in &self.errors {
            let _ = writeln!(s, "error: {e}");
        }
        s
    }

    fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "datum",
            "amplitude",
            "membership",
            "predicted",
            "outcome",
            "t_event",
            "agreement",
            "mass_residual",
            "dissipation_residual",
            "verified",
            "ordering_holds",
            "dominates_ground_state",
            "error",
        ])?;
        let opt_num = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
        let opt_bool = |x: Option<bool>| x.map(|b| if b { "yes" } else { "no" }).unwrap_or("").to_string();
        for r in &self.rows {
            w.write_record([
                r.datum.clone(),
                fmt_num(r.amplitude),
                r.membership.clone(),
                r.predicted.clone(),
                r.outcome.as_ref().map_or("", |o| o.label()).to_string(),
                fmt_num(r.t_event()),
                r.agreement.as_str().to_string(),
                opt_num(r.mass_residual),
                opt_num(r.dissipation_residual),
                opt_bool(r.verified),
                opt_bool(r.ordering_holds),
                opt_bool(r.dominates_ground_state),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row per datum: `(datum, amplitude, p, lambda, delta, membership,
/// outcome, t_estimate)`.
pub fn emit_phase_table<W: Write>(rows: &[SummaryRow], p: f64, out: W) -> Result<(), CliError> {
    if rows.is_empty() {
        return Err(CliError::Config("phase table needs at least one result".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "datum",
        "amplitude",
        "p",
        "lambda",
        "delta",
        "membership",
        "outcome",
        "t_estimate",
    ])?;
    for r in rows {
        w.write_record([
            r.datum.clone(),
            fmt_num(r.amplitude),
            fmt_num(p),
            fmt_num(r.lambda),
            fmt_num(r.delta),
            r.membership.clone(),
            r.outcome.as_ref().map_or("", |o| o.label()).to_string(),
            fmt_num(r.t_event()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Context<'a> {
    s: &'a Scenario,
    stage: &'a Path,
    depths: Option<&'a DepthTable>,
    /// Nehari-scaled ground state per queried `δ`.
    ground: &'a [(f64, Option<GridFunction>)],
}

fn membership_label(m: &SetMembership) -> (&'static str, Option<usize>, Option<usize>) {
    let w = m.w_lambda.iter().position(|w| w.verdict.is_member());
    let z = m.z_delta.iter().position(|w| w.verdict.is_member());
    let label = if w.is_some() {
        "W"
    } else if z.is_some() {
        "Z"
    } else if m.any_ambiguous() {
        "ambiguous"
    } else {
        "none"
    };
    (label, w, z)
}

fn process_datum(ctx: &Context, k: usize, phi: &GridFunction) -> SummaryRow {
    let s = ctx.s;
    let mut row = SummaryRow {
        datum: format!("a{k:02}"),
        amplitude: s.amplitudes[k],
        membership: String::new(),
        lambda: s.lambdas[0],
        delta: s.deltas[0],
        predicted: String::new(),
        outcome: None,
        agreement: Agreement::NotApplicable,
        mass_residual: None,
        dissipation_residual: None,
        verified: None,
        ordering_holds: None,
        dominates_ground_state: None,
        error: None,
    };
    if let Err(e) = datum_tasks(ctx, phi, &mut row) {
        row.error = Some(e.to_string());
    }
    row
}

fn datum_tasks(ctx: &Context, phi: &GridFunction, row: &mut SummaryRow) -> Result<(), CliError> {
    let s = ctx.s;
    let params = s.base_params();
    let mut z_budget = None;
    if s.has(Task::Classify) {
        if let Some(table) = ctx.depths {
            let m = classify(phi, &s.lambdas, &s.deltas, &params, table)?;
            let (label, w, z) = membership_label(&m);
            row.membership = label.into();
            if let Some(i) = w {
                row.lambda = s.lambdas[i];
                row.predicted = "decay".into();
            } else if let Some(i) = z {
                let delta = s.deltas[i];
                row.delta = delta;
                row.predicted = "blowup".into();
                if let Some((_, Some(g))) = ctx.ground.iter().find(|(d, _)| *d == delta) {
                    row.dominates_ground_state = Some(
                        phi.values().iter().zip(g.values()).all(|(a, b)| a >= b),
                    );
                }
                if let Some(w0) = m.z_delta.iter().find(|w| w.parameter == 0.0 && w.verdict.is_member()) {
                    z_budget = Some(epsilon_budget(phi, &params, w0.depth)?);
                }
            }
        }
    }

    if s.has(Task::Evolve) || s.has(Task::Verify) {
        let (traj, outcome) = run_flow(phi, &s.flow)?;
        write_trajectory(ctx.stage, &row.datum, &traj, &outcome, s)?;
        if s.has(Task::Verify) {
            verify_run(ctx.stage, row, &traj, &outcome, s, z_budget.as_ref())?;
        }
        if !row.predicted.is_empty() {
            let hit = match row.predicted.as_str() {
                "decay" => outcome.kind.is_decay(),
                _ => outcome.kind.is_blowup(),
            };
            row.agreement = if hit { Agreement::Yes } else { Agreement::No };
        }
        row.outcome = Some(outcome.kind);
    }

    if s.has(Task::Compare) && phi.is_nonnegative() && !phi.is_zero() {
        let mut holds = true;
        for (i, &delta) in s.deltas.iter().enumerate().filter(|(_, &d)| d > 0.0) {
            let rep = run_comparison(phi, &s.flow, delta)?;
            holds &= rep.ordering_holds
                && rep.neg_part_within_tolerance()
                && (rep.v_blowup_time.is_none() || rep.u_blowup_time.is_some());
            let path = ctx.stage.join(format!("comparison_{}_delta{i:02}.csv", row.datum));
            write_file(&path, |b| Ok(rep.write_csv(b)?))?;
        }
        row.ordering_holds = Some(holds);
    }
    Ok(())
}

fn write_trajectory(
    stage: &Path,
    id: &str,
    traj: &Trajectory,
    outcome: &FlowOutcome,
    s: &Scenario,
) -> Result<(), CliError> {
    write_file(&stage.join(format!("trajectory_{id}.csv")), |b| Ok(traj.write_csv(b)?))?;
    write_file(&stage.join(format!("outcome_{id}.csv")), |b| {
        Ok(outcome.write_csv(&s.flow, b)?)
    })?;
    let dir = stage.join(format!("snapshots_{id}"));
    fs::create_dir_all(&dir)?;
    for snap in &traj.snapshots {
        write_file(&dir.join(Trajectory::snapshot_name(snap.step)), |b| {
            Ok(snap.state.write_csv(b)?)
        })?;
    }
    Ok(())
}

fn verify_run(
    stage: &Path,
    row: &mut SummaryRow,
    traj: &Trajectory,
    outcome: &FlowOutcome,
    s: &Scenario,
    budget: Option<&pwlab_core::nehari::EpsilonBudget>,
) -> Result<(), CliError> {
    let mut checks: Vec<(String, f64, f64, bool)> = Vec::new();
    if traj.len() >= 3 {
        let mass = verify_mass_identity(traj)?;
        row.mass_residual = Some(mass.relative());
        checks.push(("mass_identity".into(), mass.relative(), VERIFY_TOL, mass.relative() <= VERIFY_TOL));
        let mut worst: f64 = 0.0;
        for &lambda in &s.lambdas {
            let d = verify_dissipation_identity(traj, lambda)?;
            worst = worst.max(d.residual.relative());
            checks.push((
                format!("dissipation_identity[lambda={lambda}]"),
                d.residual.relative(),
                VERIFY_TOL,
                d.residual.relative() <= VERIFY_TOL,
            ));
            checks.push((
                format!("energy_monotone_while_I_positive[lambda={lambda}]"),
                d.monotone_violations as f64,
                0.0,
                d.monotone_while_positive(),
            ));
        }
        row.dissipation_residual = Some(worst);
    }
    match &outcome.kind {
        OutcomeKind::GlobalDecay { .. } => {
            let ok = omega_limit_check(traj);
            checks.push(("omega_limit".into(), f64::from(u8::from(ok)), 1.0, ok));
        }
        OutcomeKind::BlowUp { .. } => {
            if let Some(b) = budget {
                let params = Params::new(s.p, 0.0, 0.0)?;
                let r = verify_blowup_ode(traj, outcome, b.eps, b.level_lower_bound, &params)?;
                checks.push(("blowup_primitive_margin".into(), r.primitive_margin, 0.0, r.primitive_holds));
                checks.push(("blowup_composite_margin".into(), r.composite_margin, 0.0, r.composite_holds));
                checks.push((
                    "blowup_mass_increasing".into(),
                    f64::from(u8::from(r.mass_strictly_increasing)),
                    1.0,
                    r.mass_strictly_increasing && r.mass_growth_holds,
                ));
                checks.push(("holder_embedding".into(), f64::from(u8::from(r.holder_holds)), 1.0, r.holder_holds));
            }
        }
        OutcomeKind::Inconclusive { .. } => {}
    }
    row.verified = Some(checks.iter().all(|c| c.3));
    write_file(&stage.join(format!("verify_{}.csv", row.datum)), |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["check", "value", "tolerance", "pass"])?;
        for (name, v, tol, pass) in &checks {
            w.write_record([name.clone(), fmt_num(*v), fmt_num(*tol), pass.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Runs every task of `s`, writing artifacts to `out_dir/<name>/`. Files are
/// staged in a private directory that is renamed into place at the end.
pub fn run_scenario(s: &Scenario, out_dir: &Path, jobs: usize) -> Result<Summary, CliError> {
    fs::create_dir_all(out_dir)?;
    let final_dir = out_dir.join(&s.name);
    let stage = out_dir.join(format!(".{}.partial-{}", s.name, std::process::id()));
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    fs::create_dir_all(&stage)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut errors = Vec::new();
    let need_depths = s.has(Task::Depths) || s.has(Task::Classify);
    let depths = if need_depths {
        match pool.install(|| depth_table(s)) {
            Ok(t) => {
                write_file(&stage.join("depths.csv"), |b| Ok(t.write_csv(b)?))?;
                Some(t)
            }
            Err(e) => {
                errors.push(format!("depths: {e}"));
                None
            }
        }
    } else {
        None
    };
    let ground: Vec<(f64, Option<GridFunction>)> = if s.has(Task::Classify) {
        pool.install(|| {
            s.deltas
                .par_iter()
                .map(|&d| (d, scaled_ground_state(s, d).ok()))
                .collect()
        })
    } else {
        Vec::new()
    };

    let data = s.initial_data()?;
    let ctx = Context {
        s,
        stage: &stage,
        depths: depths.as_ref(),
        ground: &ground,
    };
    let rows: Vec<SummaryRow> = if s.has(Task::Classify)
        || s.has(Task::Evolve)
        || s.has(Task::Compare)
        || s.has(Task::Verify)
    {
        pool.install(|| {
            data.par_iter()
                .enumerate()
                .map(|(k, phi)| process_datum(&ctx, k, phi))
                .collect()
        })
    } else {
        Vec::new()
    };
    let summary = Summary {
        rows,
        errors,
        out_path: final_dir.clone(),
    };
    write_file(&stage.join("summary.csv"), |b| summary.write_csv(b))?;
    if !summary.rows.is_empty() {
        write_file(&stage.join("phase_table.csv"), |b| emit_phase_table(&summary.rows, s.p, b))?;
    }
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir)?;
    }
    fs::rename(&stage, &final_dir)?;
    Ok(summary)
}

fn depth_table(s: &Scenario) -> Result<DepthTable, CliError> {
    // one table per parameter so the rows can be computed concurrently
    let lambda_rows: Vec<Result<DepthTable, _>> = s
        .lambdas
        .par_iter()
        .map(|&l| DepthTable::compute(&s.mesh, s.p, &[l], &[], &s.solver))
        .collect();
    let delta_rows: Vec<Result<DepthTable, _>> = s
        .deltas
        .par_iter()
        .map(|&d| DepthTable::compute(&s.mesh, s.p, &[], &[d], &s.solver))
        .collect();
    let mut table = DepthTable::default();
    for t in lambda_rows.into_iter().chain(delta_rows) {
        table.rows.extend(t?.rows);
    }
    Ok(table)
}

fn scaled_ground_state(s: &Scenario, delta: f64) -> Result<GridFunction, CliError> {
    let params = Params::new(s.p, 0.0, delta)?;
    let gs = ground_state(&s.mesh, &params, &s.solver)?;
    Ok(nehari_scale(&gs.ustar, &params)?.1)
}
