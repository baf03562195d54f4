//! Scenario documents: flat `key = value` lines, `#` comments, comma lists.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pwlab_core::flow::FlowConfig;
use pwlab_core::nehari::SolverConfig;
use pwlab_core::{GridFunction, Mesh, Params};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    Depths,
    Classify,
    Evolve,
    Compare,
    Verify,
}

impl Task {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "depths" => Task::Depths,
            "classify" => Task::Classify,
            "evolve" => Task::Evolve,
            "compare" => Task::Compare,
            "verify" => Task::Verify,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `c·φ₁` with `φ₁` the product of first sine modes, peak 1.
    EigenfunctionMultiple,
    GaussianBump { center: Vec<f64>, width: f64 },
    FromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub mesh: Mesh,
    pub p: f64,
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub family: Family,
    pub amplitudes: Vec<f64>,
    pub flow: FlowConfig,
    pub solver: SolverConfig,
    pub tasks: Vec<Task>,
}

impl Scenario {
    pub fn has(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }

    pub fn base_params(&self) -> Params {
        self.flow.params
    }

    /// Initial data, one per amplitude.
    pub fn initial_data(&self) -> Result<Vec<GridFunction>, CliError> {
        let base = match &self.family {
            Family::EigenfunctionMultiple => {
                let ext = self.mesh.extents().to_vec();
                GridFunction::from_fn(&self.mesh, |x| {
                    ext.iter()
                        .zip(x)
                        .map(|(&(a, b), &xi)| (std::f64::consts::PI * (xi - a) / (b - a)).sin())
                        .product()
                })?
            }
            Family::GaussianBump { center, width } => GridFunction::from_fn(&self.mesh, |x| {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                (-r2 / (2.0 * width * width)).exp()
            })?,
            Family::FromFile(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                GridFunction::read_csv(&self.mesh, file)?
            }
        };
        self.amplitudes
            .iter()
            .map(|&a| base.scaled(a).map_err(CliError::from))
            .collect()
    }
}

/// Parses a number, accepting `pi`, `k*pi` and `pi/k`.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let pi = std::f64::consts::PI;
    if s == "pi" {
        return Ok(pi);
    }
    if let Some(k) = s.strip_suffix("*pi") {
        return parse_plain(k).map(|k| k * pi);
    }
    if let Some(k) = s.strip_prefix("pi/") {
        return parse_plain(k).map(|k| pi / k);
    }
    parse_plain(s)
}

fn parse_plain(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not finite: {s:?}"))
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(parse_number).collect()
}

/// `a:b:n` per axis, axes joined by `x`, e.g. `0:pi:1023` or
/// `0:1:31x0:2:63`.
pub fn parse_mesh(s: &str) -> Result<Mesh, String> {
    let mut extents = Vec::new();
    let mut counts = Vec::new();
    for axis in s.split('x') {
        let parts: Vec<&str> = axis.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(format!("axis {axis:?} is not a:b:n"));
        };
        extents.push((parse_number(a)?, parse_number(b)?));
        counts.push(
            n.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad node count {n:?}"))?,
        );
    }
    Mesh::new(extents.len(), &extents, &counts).map_err(|e| e.to_string())
}

const KEYS: &[&str] = &[
    "name",
    "mesh",
    "p",
    "lambda",
    "delta",
    "family",
    "amplitude",
    "center",
    "width",
    "file",
    "tasks",
    "dt_init",
    "dt_min",
    "dt_max",
    "t_max",
    "blowup_sup_threshold",
    "decay_h1_threshold",
    "snapshot_stride",
    "safety",
    "tol_step",
    "adaptive",
    "restarts",
    "seed",
];

/// Parses a scenario; relative file paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, CliError> {
    let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Parse {
                line: lineno,
                msg: format!("expected key = value, got {line:?}"),
            });
        };
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(CliError::Parse {
                line: lineno,
                msg: format!("unknown key {k:?}"),
            });
        }
        if kv.insert(k, (lineno, v.trim())).is_some() {
            return Err(CliError::Parse {
                line: lineno,
                msg: format!("duplicate key {k:?}"),
            });
        }
    }
    let get = |k: &'static str| kv.get(k).copied();
    let required = |k: &'static str| get(k).ok_or(CliError::Missing(k));
    let at = |line: usize| move |msg: String| CliError::Parse { line, msg };
    let num = |k: &'static str| -> Result<Option<f64>, CliError> {
        get(k).map(|(l, v)| parse_number(v).map_err(at(l))).transpose()
    };
    let list = |k: &'static str, default: Vec<f64>| -> Result<Vec<f64>, CliError> {
        match get(k) {
            Some((l, v)) => parse_list(v).map_err(at(l)),
            None => Ok(default),
        }
    };

    let (l, name) = required("name")?;
    let name_ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !name.starts_with('.');
    if !name_ok {
        return Err(at(l)(format!("name {name:?} must be nonempty and filesystem-safe")));
    }
    let (l, mesh) = required("mesh")?;
    let mesh = parse_mesh(mesh).map_err(at(l))?;
    let (l, _) = required("p")?;
    let p = num("p")?.expect("present");
    let lambdas = list("lambda", vec![0.0])?;
    let deltas = list("delta", vec![0.0])?;
    let params = Params::new(p, 0.0, 0.0).map_err(|e| at(l)(e.to_string()))?;
    params
        .check_dimension(mesh.dim())
        .map_err(|e| at(l)(e.to_string()))?;
    for &x in lambdas.iter().chain(&deltas) {
        if x < 0.0 {
            return Err(CliError::Config(format!("lambda and delta must be ≥ 0, got {x}")));
        }
    }

    let center_default: Vec<f64> = mesh.extents().iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let family = match get("family") {
        None | Some((_, "eigenfunction_multiple")) => Family::EigenfunctionMultiple,
        Some((l, "gaussian_bump")) => {
            let center = list("center", center_default)?;
            if center.len() != mesh.dim() {
                return Err(at(l)(format!("center needs {} coordinates", mesh.dim())));
            }
            let width = num("width")?.unwrap_or(0.1);
            if !(width > 0.0) {
                return Err(at(l)("width must be positive".into()));
            }
            Family::GaussianBump { center, width }
        }
        Some((l, "from_file")) => {
            let (_, f) = get("file").ok_or(CliError::Missing("file"))?;
            let path = base_dir.join(f);
            if !path.is_file() {
                return Err(at(l)(format!("file {} does not exist", path.display())));
            }
            Family::FromFile(path)
        }
        Some((l, other)) => return Err(at(l)(format!("unknown family {other:?}"))),
    };
    let amplitudes = list("amplitude", vec![1.0])?;

    let (l, tasks_raw) = required("tasks")?;
    let mut tasks = Vec::new();
    for t in tasks_raw.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let task = Task::parse(t).ok_or_else(|| at(l)(format!("unknown task {t:?}")))?;
        if !tasks.contains(&task) {
            tasks.push(task);
        }
    }
    if tasks.is_empty() {
        return Err(at(l)("tasks must be nonempty".into()));
    }
    tasks.sort();

    let mut flow = FlowConfig::new(params);
    let set = |slot: &mut f64, k: &'static str| -> Result<(), CliError> {
        if let Some(v) = num(k)? {
            *slot = v;
        }
        Ok(())
    };
    set(&mut flow.dt_init, "dt_init")?;
    set(&mut flow.dt_min, "dt_min")?;
    set(&mut flow.dt_max, "dt_max")?;
    set(&mut flow.t_max, "t_max")?;
    set(&mut flow.blowup_sup_threshold, "blowup_sup_threshold")?;
    set(&mut flow.decay_h1_threshold, "decay_h1_threshold")?;
    set(&mut flow.safety, "safety")?;
    set(&mut flow.tol_step, "tol_step")?;
    let int = |k: &'static str| -> Result<Option<u64>, CliError> {
        get(k)
            .map(|(l, v)| v.parse::<u64>().map_err(|_| at(l)(format!("{k}: not an integer: {v:?}"))))
            .transpose()
    };
    if let Some(s) = int("snapshot_stride")? {
        flow.snapshot_stride = s as usize;
    }
    if let Some((l, v)) = get("adaptive") {
        flow.adaptive = match v {
            "true" | "yes" => true,
            "false" | "no" => false,
            _ => return Err(at(l)(format!("adaptive: expected true or false, got {v:?}"))),
        };
    }
    flow.validate()?;
    let mut solver = SolverConfig::default();
    if let Some(r) = int("restarts")? {
        solver.restarts = r as usize;
    }
    if let Some(s) = int("seed")? {
        solver.seed = s;
    }

    Ok(Scenario {
        name: name.to_string(),
        mesh,
        p,
        lambdas,
        deltas,
        family,
        amplitudes,
        flow,
        solver,
        tasks,
    })
}
