//! End-to-end CLI tests: exit codes, artifact formats, determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn perfclass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfclass"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_two_line_traces(path: &Path) {
    // Pattern 0 calls f1 only (y = 2x), pattern 1 calls both (y = 5x).
    let mut text = String::from("in:size,aux:f1,aux:f2,out:time,truth:label\n");
    for i in 1..=30 {
        let x = i as f64;
        text.push_str(&format!("{x},{x},0,{},0\n", 2.0 * x));
        text.push_str(&format!("{x},{x},{},{},1\n", 3.0 * x, 5.0 * x));
    }
    fs::write(path, text).unwrap();
}

/// Minimal DOT grammar check: `digraph <id> {` header, node statements
/// `nK [attrs];`, edge statements `nA -> nB [attrs];`, closing brace. Every
/// edge endpoint must be a declared node.
fn check_dot_grammar(text: &str) -> Result<(usize, usize), String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if !(header.starts_with("digraph") && header.trim_end().ends_with('{')) {
        return Err(format!("bad header: {header}"));
    }
    let mut nodes = std::collections::HashSet::new();
    let mut edges = 0usize;
    let mut closed = false;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "}" {
            closed = true;
            continue;
        }
        if closed {
            return Err("content after closing brace".into());
        }
        if !line.ends_with(';') {
            return Err(format!("statement missing semicolon: {line}"));
        }
        let stmt = &line[..line.len() - 1];
        if let Some((from, rest)) = stmt.split_once("->") {
            let from = from.trim();
            let to = rest.split_whitespace().next().ok_or("dangling edge")?;
            if !nodes.contains(from) || !nodes.contains(to) {
                return Err(format!("edge references undeclared node: {stmt}"));
            }
            edges += 1;
        } else {
            let id = stmt.split_whitespace().next().ok_or("empty statement")?;
            if id != "node" && id != "graph" {
                // Attribute blocks must be balanced.
                if stmt.matches('[').count() != stmt.matches(']').count() {
                    return Err(format!("unbalanced attributes: {stmt}"));
                }
                nodes.insert(id.to_string());
            }
        }
    }
    if !closed {
        return Err("missing closing brace".into());
    }
    Ok((nodes.len(), edges))
}

#[test]
fn analyze_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    write_two_line_traces(&traces);
    let out_dir = dir.path().join("out");

    let output = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--engine",
        "klinear",
        "--k",
        "2",
        "--min-leaf",
        "1",
        "--folds",
        "5",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));

    let stdout = String::from_utf8(output.stdout).unwrap();
    let metric_line = stdout.lines().last().unwrap();
    for key in ["T=", "A=", "R2=", "H=", "L="] {
        assert!(metric_line.contains(key), "missing {key} in: {metric_line}");
    }

    assert!(out_dir.join("report.json").exists());
    assert!(out_dir.join("clusters.csv").exists());
    let dot = fs::read_to_string(out_dir.join("tree.dot")).unwrap();
    // Two separable classes: one internal node, two leaves.
    let (nodes, edges) = check_dot_grammar(&dot).unwrap();
    assert_eq!((nodes, edges), (3, 2));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["k"], 2);
    assert_eq!(report["engine"], "klinear");
    assert_eq!(report["models"].as_array().unwrap().len(), 2);
    for key in ["mse", "r2", "accuracy", "height", "leaves", "tree", "timing"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }

    // clusters.csv has one row per trace plus header.
    let clusters = fs::read_to_string(out_dir.join("clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 61);
    assert!(clusters.lines().next().unwrap().ends_with("label,residual"));
}

#[test]
fn single_leaf_tree_renders_one_node_no_edges() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    let mut text = String::from("in:size,aux:f1,out:time\n");
    for i in 1..=20 {
        text.push_str(&format!("{i},{i},{}\n", 3 * i));
    }
    fs::write(&traces, text).unwrap();
    let out_dir = dir.path().join("out");
    let output = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--mse-bound",
        "1e-9",
        "--folds",
        "5",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let dot = fs::read_to_string(out_dir.join("tree.dot")).unwrap();
    let (nodes, edges) = check_dot_grammar(&dot).unwrap();
    assert_eq!((nodes, edges), (1, 0));
}

#[test]
fn export_reproduces_the_dot_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    write_two_line_traces(&traces);
    let out_dir = dir.path().join("out");
    let status = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--k",
        "2",
        "--min-leaf",
        "1",
        "--folds",
        "5",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(status.status.code(), Some(0));

    let exported = perfclass(&[
        "export",
        "--report",
        out_dir.join("report.json").to_str().unwrap(),
    ]);
    assert_eq!(exported.status.code(), Some(0));
    let from_analyze = fs::read_to_string(out_dir.join("tree.dot")).unwrap();
    assert_eq!(String::from_utf8(exported.stdout).unwrap(), from_analyze);
}

#[test]
fn gen_analyze_eval_round_trip_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("r2.csv");
    let out_dir = dir.path().join("out");

    let generated = perfclass(&[
        "gen",
        "--preset",
        "r2",
        "--seed",
        "4",
        "--out",
        traces.to_str().unwrap(),
    ]);
    assert_eq!(generated.status.code(), Some(0));

    let analyzed = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--k",
        "3",
        "--seed",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(analyzed.status.code(), Some(0));

    let evaluated = perfclass(&[
        "eval",
        "--clusters",
        out_dir.join("clusters.csv").to_str().unwrap(),
        "--truth",
        traces.to_str().unwrap(),
    ]);
    assert_eq!(evaluated.status.code(), Some(0));
    let line = String::from_utf8(evaluated.stdout).unwrap();
    let value: f64 = line.trim().strip_prefix("agreement=").unwrap().parse().unwrap();
    assert!(value >= 0.99, "agreement {value}");

    // The preset's tree also renders to well-formed DOT.
    let dot = fs::read_to_string(out_dir.join("tree.dot")).unwrap();
    let (nodes, edges) = check_dot_grammar(&dot).unwrap();
    assert!(nodes >= 3 && edges == nodes - 1, "{nodes} nodes, {edges} edges");
}

#[test]
fn eval_is_permutation_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let truth_file = dir.path().join("truth.csv");
    let mut text = String::from("in:size,out:time,truth:label\n");
    for i in 0..10 {
        text.push_str(&format!("{i},{i},{}\n", i % 2));
    }
    fs::write(&truth_file, text).unwrap();

    // Clusters with labels swapped relative to truth.
    let clusters = dir.path().join("clusters.csv");
    let mut text = String::from("size,time,label,residual\n");
    for i in 0..10 {
        text.push_str(&format!("{i},{i},{},0\n", (i + 1) % 2));
    }
    fs::write(&clusters, text).unwrap();

    let output = perfclass(&[
        "eval",
        "--clusters",
        clusters.to_str().unwrap(),
        "--truth",
        truth_file.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(String::from_utf8(output.stdout).unwrap().trim(), "agreement=1");
}

#[test]
fn eval_length_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let truth_file = dir.path().join("truth.csv");
    fs::write(&truth_file, "in:size,out:time,truth:label\n1,1,0\n2,2,1\n").unwrap();
    let clusters = dir.path().join("clusters.csv");
    fs::write(&clusters, "size,time,label,residual\n1,1,0,0\n").unwrap();
    let output = perfclass(&[
        "eval",
        "--clusters",
        clusters.to_str().unwrap(),
        "--truth",
        truth_file.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn exit_codes_cover_usage_nofit_io_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    write_two_line_traces(&traces);

    // 1: usage (neither --k nor --mse-bound).
    let output = perfclass(&["analyze", traces.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));

    // 1: usage (unknown flag).
    let output = perfclass(&["analyze", traces.to_str().unwrap(), "--nonsense"]);
    assert_eq!(output.status.code(), Some(1));

    // 2: no fit.
    let output = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--max-clusters",
        "1",
        "--mse-bound",
        "1e-12",
        "--out-dir",
        dir.path().join("o2").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("k=1"), "{stderr}");

    // 3: missing file, message names the path.
    let missing = dir.path().join("nope.csv");
    let output = perfclass(&["analyze", missing.to_str().unwrap(), "--k", "2"]);
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8(output.stderr).unwrap().contains("nope.csv"));

    // 3: malformed file.
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "in:size,aux:f,out:time\n1,2\n").unwrap();
    let output = perfclass(&["analyze", bad.to_str().unwrap(), "--k", "1"]);
    assert_eq!(output.status.code(), Some(3));

    // 4: numeric failure (constant output has no defined R^2).
    let constant = dir.path().join("const.csv");
    fs::write(
        &constant,
        "in:size,aux:f,out:time\n1,0,5\n2,0,5\n3,1,5\n4,1,5\n5,0,5\n6,1,5\n",
    )
    .unwrap();
    let output = perfclass(&[
        "analyze",
        constant.to_str().unwrap(),
        "--k",
        "1",
        "--folds",
        "2",
        "--out-dir",
        dir.path().join("o4").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(4));

    // 0: success.
    let output = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--k",
        "2",
        "--min-leaf",
        "1",
        "--folds",
        "5",
        "--out-dir",
        dir.path().join("o0").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
}

#[test]
fn strict_mode_gives_byte_identical_reports_and_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    write_two_line_traces(&traces);

    let output = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--k",
        "2",
        "--strict",
    ]);
    assert_eq!(output.status.code(), Some(1));

    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let output = perfclass(&[
            "analyze",
            traces.to_str().unwrap(),
            "--k",
            "2",
            "--min-leaf",
            "1",
            "--folds",
            "5",
            "--seed",
            "9",
            "--strict",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0));
        (
            fs::read(out_dir.join("report.json")).unwrap(),
            fs::read(out_dir.join("tree.dot")).unwrap(),
            fs::read(out_dir.join("clusters.csv")).unwrap(),
        )
    };
    let a = run("s1");
    let b = run("s2");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn cluster_subcommand_writes_labels() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    write_two_line_traces(&traces);
    let out_dir = dir.path().join("out");
    let output = perfclass(&[
        "cluster",
        traces.to_str().unwrap(),
        "--k",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("rss="), "{stdout}");
    let clusters = fs::read_to_string(out_dir.join("clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 61);
}

#[test]
fn schema_flag_assigns_roles_without_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("plain.csv");
    let mut text = String::from("size,f1,time\n");
    for i in 1..=12 {
        text.push_str(&format!("{i},{i},{}\n", 2 * i));
    }
    fs::write(&traces, text).unwrap();
    let schema = dir.path().join("schema.json");
    fs::write(
        &schema,
        "{\"inputs\":[\"size\"],\"aux\":[\"f1\"],\"output\":\"time\"}",
    )
    .unwrap();

    // Without the schema the plain header is rejected as a bad file.
    let output = perfclass(&["analyze", traces.to_str().unwrap(), "--k", "1"]);
    assert_eq!(output.status.code(), Some(3));

    let output = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--k",
        "1",
        "--folds",
        "2",
        "--schema",
        schema.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn sidecar_schema_is_discovered_next_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("plain.csv");
    let mut text = String::from("size,f1,time\n");
    for i in 1..=12 {
        text.push_str(&format!("{i},{i},{}\n", 2 * i));
    }
    fs::write(&traces, text).unwrap();
    fs::write(
        dir.path().join("plain.csv.json"),
        "{\"inputs\":[\"size\"],\"aux\":[\"f1\"],\"output\":\"time\"}",
    )
    .unwrap();
    let output = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--k",
        "1",
        "--folds",
        "2",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn spectral_engine_dumps_similarity_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.csv");
    write_two_line_traces(&traces);
    let out_dir = dir.path().join("out");
    let output = perfclass(&[
        "analyze",
        traces.to_str().unwrap(),
        "--engine",
        "spectral",
        "--k",
        "2",
        "--min-leaf",
        "1",
        "--folds",
        "5",
        "--dump-similarity",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let sim = fs::read_to_string(out_dir.join("similarity.csv")).unwrap();
    assert_eq!(sim.lines().count(), 60);
}
