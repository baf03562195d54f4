use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pwlab::{parse_scenario, run_scenario, Agreement};
use pwlab_core::{GridFunction, Mesh};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pwlab"))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Every regular file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const DICHOTOMY: &str = "name = dich
mesh = 0:pi:255
p = 3
lambda = 0, 1
delta = 0, 1
amplitude = 0.01, 10
tasks = depths, classify, evolve, compare, verify
";

#[test]
fn dichotomy_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let s = parse_scenario(DICHOTOMY, tmp.path()).unwrap();
    let summary = run_scenario(&s, tmp.path(), 2).unwrap();
    assert_eq!(summary.exit_code(), 0, "{}", summary.render());
    let r = &summary.rows;
    assert_eq!((r[0].membership.as_str(), r[1].membership.as_str()), ("W", "Z"));
    assert!(r[0].outcome.as_ref().unwrap().is_decay());
    assert!(r[1].outcome.as_ref().unwrap().is_blowup());
    assert!(r.iter().all(|x| x.agreement == Agreement::Yes && x.verified == Some(true)));
    assert_eq!(r[1].ordering_holds, Some(true));
    let dir = tmp.path().join("dich");
    for f in ["summary.csv", "phase_table.csv", "depths.csv", "trajectory_a00.csv", "comparison_a01_delta01.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    assert!(dir.join("snapshots_a00").join("snapshot_00000000.csv").is_file());
    let phase = fs::read_to_string(dir.join("phase_table.csv")).unwrap();
    assert_eq!(phase.lines().count(), 3);
    // no staging directories left behind
    assert!(fs::read_dir(tmp.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with('.')));
}

#[test]
fn depths_only_writes_no_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let s = parse_scenario("name = d\nmesh = 0:pi:127\np = 3\nlambda = 0, 1\ntasks = depths\n", tmp.path()).unwrap();
    let summary = run_scenario(&s, tmp.path(), 1).unwrap();
    assert_eq!(summary.exit_code(), 0);
    let files: Vec<_> = tree(&tmp.path().join("d")).into_keys().collect();
    assert_eq!(files, vec![PathBuf::from("depths.csv"), PathBuf::from("summary.csv")]);
}

#[test]
fn from_file_matches_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let base = "mesh = 0:pi:255\np = 3\ntasks = evolve\n";
    let unit = parse_scenario(&format!("name = unit\n{base}"), tmp.path()).unwrap();
    let phi = unit.initial_data().unwrap().remove(0);
    let mut f = fs::File::create(tmp.path().join("phi.csv")).unwrap();
    phi.write_csv(&mut f).unwrap();
    let base = format!("{base}amplitude = 0.5, 3\n");
    let a = parse_scenario(&format!("name = mem\n{base}"), tmp.path()).unwrap();
    let b = parse_scenario(&format!("name = file\nfamily = from_file\nfile = phi.csv\n{base}"), tmp.path()).unwrap();
    run_scenario(&a, tmp.path(), 1).unwrap();
    run_scenario(&b, tmp.path(), 1).unwrap();
    let (ta, tb) = (tree(&tmp.path().join("mem")), tree(&tmp.path().join("file")));
    assert_eq!(ta.len(), tb.len());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs", k.display());
    }
}

#[test]
fn outputs_are_deterministic_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = DICHOTOMY.replace("name = dich", "name = det").replace("amplitude = 0.01, 10", "amplitude = 0.01, 0.5, 2, 10\nrestarts = 2\nseed = 11");
    let s = parse_scenario(&doc, tmp.path()).unwrap();
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    run_scenario(&s, &one, 1).unwrap();
    run_scenario(&s, &four, 4).unwrap();
    run_scenario(&s, &four, 4).unwrap();
    assert_eq!(tree(&one.join("det")), tree(&four.join("det")));
}

#[test]
fn shipped_scenarios_agree() {
    for name in ["dichotomy.scn", "bump.scn"] {
        let path = scenarios_dir().join(name);
        let tmp = tempfile::tempdir().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let s = parse_scenario(&text, path.parent().unwrap()).unwrap();
        let summary = run_scenario(&s, tmp.path(), 4).unwrap();
        assert_eq!(summary.exit_code(), 0, "{name}\n{}", summary.render());
    }
}

#[test]
fn binary_run_and_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("s.scn");
    fs::write(&scn, DICHOTOMY).unwrap();
    let out = bin()
        .args(["run", scn.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap(), "--jobs", "2", "--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("GlobalDecay") && stdout.contains("BlowUp"));

    let traj = tmp.path().join("o/dich/trajectory_a00.csv");
    let out = bin().args(["verify", traj.to_str().unwrap()]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("mass identity") && stdout.contains("PASS"));
}

#[test]
fn binary_depths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["depths", "--p", "3", "--lambda", "0,1", "--delta", "0,1", "--mesh", "0:pi:255", "--out", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("depths.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("p,lambda,delta,depth,method,iterations,residual\n"));
}

#[test]
fn binary_rejects_unknown_key() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("bad.scn");
    fs::write(&scn, format!("{DICHOTOMY}lamda = 1\n")).unwrap();
    let out = bin()
        .args(["run", scn.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
}

#[test]
fn mismatched_data_file_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mesh = Mesh::interval(0.0, 1.0, 7).unwrap();
    let phi = GridFunction::from_fn(&mesh, |x| x[0]).unwrap();
    let mut f = fs::File::create(tmp.path().join("phi.csv")).unwrap();
    phi.write_csv(&mut f).unwrap();
    let s = parse_scenario(
        "name = broken\nmesh = 0:pi:15\np = 3\nfamily = from_file\nfile = phi.csv\ntasks = evolve\n",
        tmp.path(),
    )
    .unwrap();
    assert!(run_scenario(&s, tmp.path(), 1).is_err());
}
