//! End-to-end tests of the arealab binary: exit codes, diagnostics, file
//! formats, and report determinism.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arealab"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .expect("report exists")
        .lines()
        .map(|l| serde_json::from_str(l).expect("valid json line"))
        .collect()
}

fn find<'a>(recs: &'a [Value], kind: &str) -> &'a Value {
    recs.iter()
        .find(|r| r["record"] == kind)
        .unwrap_or_else(|| panic!("no '{kind}' record"))
}

#[test]
fn gen_rejects_unknown_builtins() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["gen", "nosuch"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("unknown builtin"), "stderr: {err}");
    assert!(err.contains("identity-map"), "stderr lists builtins: {err}");
}

#[test]
fn gen_identity_map_has_unit_jacobian() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["gen", "identity-map", "n=2", "shape=32"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let map = arealab::io::read_vector(&tmp.path().join("identity_map.toml")).unwrap();
    let jac = arealab::jacobian(&map).unwrap();
    for v in jac.values() {
        assert!((v - 1.0).abs() <= 1e-12, "jacobian value {v}");
    }
}

#[test]
fn gen_singular_profile_matches_the_power_law() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["gen", "singular", "gamma=0.5", "shape=257"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let f = arealab::io::read_scalar(&tmp.path().join("singular.toml")).unwrap();
    let g = f.grid().clone();
    let h = g.spacing();
    let mut checked = 0;
    for i in 0..g.len() {
        let x = g.coord(i)[0].abs();
        if x > 4.0 * h + 0.5 * h {
            assert!(
                (f.values()[i] - x.sqrt()).abs() <= 1e-10,
                "node at |x| = {x}: {} vs {}",
                f.values()[i],
                x.sqrt()
            );
            checked += 1;
        }
    }
    assert!(checked > 200, "checked only {checked} nodes");
}

#[test]
fn run_reports_a_missing_config_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "no/such/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("no/such/config.toml"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn run_reports_a_missing_input_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("c.toml"),
        "kind = \"maximal\"\n[params]\nf_file = \"ghost.toml\"\n",
    )
    .unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("ghost.toml"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn run_rejects_malformed_toml_with_a_line_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "kind = \"maximal\"\nparams = [unclosed\n").unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("line"),
        "diagnostic names a line: {}",
        stderr_of(&out)
    );
}

#[test]
fn run_rejects_an_unknown_kind() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "kind = \"frobnicate\"\n").unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("frobnicate"), "stderr: {err}");
    assert!(err.contains("maximal"), "stderr lists kinds: {err}");
}

fn write_identity_inputs(dir: &Path) {
    for args in [
        ["gen", "identity-map", "n=2", "shape=33"].as_slice(),
        ["gen", "constant", "n=2", "shape=33", "value=1.0", "file=unit"].as_slice(),
        [
            "gen", "box-mask", "n=2", "shape=33", "min=-1,-1", "max=1,1", "file=all",
        ]
        .as_slice(),
    ] {
        let out = run_in(dir, args);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    }
}

#[test]
fn run_verifies_the_identity_area_formula() {
    let tmp = tempfile::tempdir().unwrap();
    write_identity_inputs(tmp.path());
    std::fs::write(
        tmp.path().join("c.toml"),
        "kind = \"area\"\n[params]\nphi_file = \"identity_map.toml\"\n\
         f_file = \"unit.toml\"\nmask_file = \"all.toml\"\ntolerance = 1e-3\n",
    )
    .unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "c.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let recs = records(&tmp.path().join("out/report.jsonl"));
    let area = find(&recs, "area");
    assert!(area["rel_error"].as_f64().unwrap() <= 1e-3);
    let outcome = find(&recs, "outcome");
    assert_eq!(outcome["status"], "ok");
    assert!(tmp.path().join("out/summary.txt").exists());
}

#[test]
fn invariant_violations_exit_with_code_two_after_writing_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &["gen", "fold2d", "shape=16", "file=fold"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let out = run_in(
        tmp.path(),
        &["gen", "constant", "n=2", "shape=16", "value=1.0", "file=unit"],
    );
    assert_eq!(out.status.code(), Some(0));
    let out = run_in(
        tmp.path(),
        &["gen", "box-mask", "n=2", "shape=16", "min=-1,-1", "max=1,1", "file=all"],
    );
    assert_eq!(out.status.code(), Some(0));
    // With an even node count the fold crease falls mid-cell, so the
    // sixteen-node fold cannot hit nine digits; the run must finish,
    // write its reports, and only then signal the violation.
    std::fs::write(
        tmp.path().join("c.toml"),
        "kind = \"area\"\n[params]\nphi_file = \"fold.toml\"\n\
         f_file = \"unit.toml\"\nmask_file = \"all.toml\"\ntolerance = 1e-9\n",
    )
    .unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "c.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("invariant violation"));
    let recs = records(&tmp.path().join("out/report.jsonl"));
    let outcome = find(&recs, "outcome");
    assert_eq!(outcome["status"], "invariant_violation");
    assert!(!outcome["violations"].as_array().unwrap().is_empty());
}

#[test]
fn reruns_with_the_same_seed_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("c.toml"),
        "kind = \"chain_checks\"\nseed = 11\n[params]\ndim = 1\nchecks = 5\nnodes = 129\n",
    )
    .unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "c.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let first = std::fs::read(tmp.path().join("out/report.jsonl")).unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "c.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let second = std::fs::read(tmp.path().join("out/report.jsonl")).unwrap();
    assert_eq!(first, second, "reports differ between identical runs");
}

#[test]
fn capacity_records_carry_solver_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &["gen", "ball-mask", "n=2", "shape=17", "radius=0.3", "file=ball"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    std::fs::write(
        tmp.path().join("c.toml"),
        "kind = \"capacity\"\n[params]\nalpha = 1.0\np = 1.5\nmask_file = \"ball.toml\"\n",
    )
    .unwrap();
    let strip = |recs: Vec<Value>| -> Vec<Value> {
        recs.into_iter()
            .map(|mut r| {
                r.as_object_mut().unwrap().remove("wall_time_ms");
                r
            })
            .collect()
    };
    let out = run_in(tmp.path(), &["run", "--config", "c.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let recs = records(&tmp.path().join("out/report.jsonl"));
    let cap = find(&recs, "capacity");
    for key in ["inputs", "value", "margin", "iterations", "wall_time_ms"] {
        assert!(!cap[key].is_null(), "capacity record lacks {key}");
    }
    assert!(cap["value"].as_f64().unwrap() > 0.0);
    let out = run_in(tmp.path(), &["run", "--config", "c.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(0));
    let again = records(&tmp.path().join("out/report.jsonl"));
    assert_eq!(strip(recs), strip(again), "runs differ beyond wall time");
}

#[test]
fn report_renders_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    write_identity_inputs(tmp.path());
    std::fs::write(
        tmp.path().join("c.toml"),
        "kind = \"area\"\n[params]\nphi_file = \"identity_map.toml\"\n\
         f_file = \"unit.toml\"\nmask_file = \"all.toml\"\n",
    )
    .unwrap();
    let out = run_in(tmp.path(), &["run", "--config", "c.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let out = run_in(tmp.path(), &["report", "out/report.jsonl"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("arealab"), "summary names the tool: {text}");
    assert!(text.contains("area"), "summary shows the records: {text}");
    assert!(text.contains("rel_error"), "summary shows fields: {text}");
}
