use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
name = "small"

[model]
preset = "quartic-periodic"
epsilon = [0.0]

[time]
end = 8.0
sample = 0.5

[[initial_conditions]]
label = "ray"
points = [[0.0, 0.5], [0.0, 1.0]]

[outputs]
trajectory = true
invariant = true
section = { kind = "stroboscopic", max_points = 3 }

[[checks]]
kind = "invariant-drift"
threshold = 1e-6

[[checks]]
kind = "distinct-labels"
threshold = 1.0
group = "ray"
"#;

fn lieflow(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lieflow"))
        .args(args)
        .env("LIEFLOW_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(root: &Path, scenario: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(root.join(scenario).join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn passing_run_exits_zero_and_manifest_lists_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let root = tmp.path().join("out");
    let o = lieflow(&["run", &cfg], &root);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS   invariant-drift"));

    let m = manifest(&root, "small");
    assert_eq!(m["tool"], "lieflow");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["passed"], true);
    assert_eq!(m["config"]["output_dir"], "small");
    assert!((m["config"]["outputs"]["section"]["omega"].as_f64().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);

    let listed: Vec<String> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap().to_string()).collect();
    for f in &m["files"].as_array().unwrap()[..] {
        let p = root.join("small").join(f["path"].as_str().unwrap());
        assert_eq!(fs::metadata(&p).unwrap().len(), f["bytes"].as_u64().unwrap(), "{}", p.display());
    }
    let mut on_disk = Vec::new();
    let mut stack = vec![root.join("small")];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                on_disk.push(p.strip_prefix(root.join("small")).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    on_disk.retain(|p| p != "manifest.json");
    on_disk.sort();
    let mut sorted = listed.clone();
    sorted.sort();
    assert_eq!(on_disk, sorted);
    assert!(listed.iter().any(|p| p == "eps-0/trajectories/ray-1.csv"));
    assert!(listed.iter().any(|p| p == "eps-0/invariant/ray-0.csv"));
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(lieflow(&["run", &cfg], &a).status.code(), Some(0));
    assert_eq!(lieflow(&["run", &cfg], &b).status.code(), Some(0));
    let m = manifest(&a, "small");
    for f in m["files"].as_array().unwrap() {
        let rel = f["path"].as_str().unwrap();
        assert_eq!(
            fs::read(a.join("small").join(rel)).unwrap(),
            fs::read(b.join("small").join(rel)).unwrap(),
            "{rel} differs"
        );
    }
}

#[test]
fn written_config_reruns_to_the_same_result() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let a = tmp.path().join("a");
    assert_eq!(lieflow(&["run", &cfg], &a).status.code(), Some(0));
    let copy = tmp.path().join("copy.toml");
    fs::copy(a.join("small/config.toml"), &copy).unwrap();
    let b = tmp.path().join("b");
    assert_eq!(lieflow(&["run", copy.to_str().unwrap()], &b).status.code(), Some(0));
    assert_eq!(manifest(&a, "small")["config"], manifest(&b, "small")["config"]);
    assert_eq!(
        fs::read(a.join("small/eps-0/invariant/ray-1.csv")).unwrap(),
        fs::read(b.join("small/eps-0/invariant/ray-1.csv")).unwrap()
    );
}

#[test]
fn stale_outputs_are_removed_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    assert_eq!(lieflow(&["run", &cfg], &root).status.code(), Some(0));
    let fewer = SMALL.replace("points = [[0.0, 0.5], [0.0, 1.0]]", "points = [[0.0, 0.5], [0.0, 0.75]]");
    let cfg = write_config(tmp.path(), "small.toml", &fewer.replace("trajectory = true", "trajectory = false"));
    assert_eq!(lieflow(&["run", &cfg], &root).status.code(), Some(0));
    assert!(!root.join("small/eps-0/trajectories/ray-1.csv").exists());
    assert!(root.join("small/eps-0/invariant/ray-1.csv").exists());
}

#[test]
fn failed_check_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let strict = SMALL.replace("threshold = 1e-6", "threshold = 1e-30");
    let cfg = write_config(tmp.path(), "strict.toml", &strict);
    let root = tmp.path().join("out");
    let o = lieflow(&["run", &cfg], &root);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL   invariant-drift"));
    assert_eq!(manifest(&root, "small")["passed"], false);
}

#[test]
fn config_errors_exit_two_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("out");
    let cases = [
        (SMALL.replace("quartic-periodic", "quartic-bogus"), "preset"),
        (SMALL.replace("end = 8.0", "end = -1.0"), "time"),
        (SMALL.replace("sample = 0.5", "sample = 0.5\nspeed = 2"), "speed"),
        (SMALL.replace("group = \"ray\"", "group = \"nope\""), "group"),
        (format!("{SMALL}\n[[checks]]\nkind = \"ftle-above\"\nthreshold = 0.1\n"), "ftle"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.toml"), text);
        let o = lieflow(&["run", &cfg], &root);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "case {i}: {}", stderr(&o));
    }
    assert!(!root.exists());
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [&["describe", "no-such-preset"][..], &["run", "no-such-scenario"], &["frobnicate"], &["verify", "--tamper-gamma", "1,2"]] {
        let o = lieflow(args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(lieflow(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn listing_and_describing_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lieflow(&["list-presets"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    for name in ["fig1a", "fig4", "lemma1-spin", "quartic-resonant", "two-level", "quadratic6"] {
        assert!(stdout(&o).contains(name), "{name}");
    }
    let o = lieflow(&["describe", "fig4"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("quartic-quasiperiodic"));
}

#[test]
fn verify_detects_a_tampered_structure_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lieflow(&["verify", "--json", "--tamper-gamma", "1,2,0"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let results: Value = serde_json::from_slice(&o.stdout).unwrap();
    let failed: Vec<&Value> = results.as_array().unwrap().iter().filter(|r| r["passed"] == false).collect();
    assert!(!failed.is_empty());
    let closure = failed.iter().find(|r| r["name"] == "closure[quadratic6]").expect("closure fails");
    assert!(closure["detail"].as_str().unwrap().contains("(1,2)"));
    assert!(stderr(&o).contains("algebra/closure[quadratic6]"));
}

#[test]
fn verify_rejects_a_tenfold_step() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lieflow(&["verify", "--step-scale", "10"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let table = stdout(&o);
    assert!(table.contains("FAIL   howland/involution"), "{table}");
    assert!(stderr(&o).contains("quantum/unitarity[S=5]"));
}
