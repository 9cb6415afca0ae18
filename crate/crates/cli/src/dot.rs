//! DOT rendering of a discriminant tree.

use std::fmt::Write as _;

use crate::report::{ModelDoc, ReportDoc, TreeDoc};

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Short decimal rendering for labels.
fn num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn model_formula(m: &ModelDoc) -> String {
    let mut s = String::from("y = ");
    for (i, a) in m.slope.iter().enumerate() {
        let x = if m.slope.len() == 1 {
            "x".to_string()
        } else {
            format!("x{}", i + 1)
        };
        if i == 0 {
            let _ = write!(s, "{}*{x}", num(*a));
        } else if *a >= 0.0 {
            let _ = write!(s, " + {}*{x}", num(*a));
        } else {
            let _ = write!(s, " - {}*{x}", num(-*a));
        }
    }
    if m.intercept >= 0.0 {
        let _ = write!(s, " + {}", num(m.intercept));
    } else {
        let _ = write!(s, " - {}", num(-m.intercept));
    }
    s
}

/// Edge labels: call counts split at a threshold below one read as
/// "called or not", which the reports render as = 0 / > 0.
fn edge_labels(threshold: f64) -> (String, String) {
    if threshold > 0.0 && threshold < 1.0 {
        ("= 0".to_string(), "> 0".to_string())
    } else {
        (format!("<= {}", num(threshold)), format!("> {}", num(threshold)))
    }
}

/// Renders the report's tree as a DOT digraph with stable pre-order node
/// ids.
pub fn render_dot(report: &ReportDoc) -> String {
    let mut out = String::new();
    out.push_str("digraph discriminant {\n");
    out.push_str("  node [shape=box, fontname=\"Helvetica\"];\n");

    let mut next_id = 0usize;
    let mut nodes = String::new();
    let mut edges = String::new();
    render_node(report, &report.tree, &mut next_id, &mut nodes, &mut edges);

    out.push_str(&nodes);
    out.push_str(&edges);
    out.push_str("}\n");
    out
}

fn render_node(
    report: &ReportDoc,
    node: &TreeDoc,
    next_id: &mut usize,
    nodes: &mut String,
    edges: &mut String,
) -> usize {
    let id = *next_id;
    *next_id += 1;
    match node {
        TreeDoc::Split {
            var,
            threshold,
            left,
            right,
        } => {
            let _ = writeln!(nodes, "  n{id} [label=\"{}\"];", escape(var));
            let (left_label, right_label) = edge_labels(*threshold);
            let left_id = render_node(report, left, next_id, nodes, edges);
            let right_id = render_node(report, right, next_id, nodes, edges);
            let _ = writeln!(edges, "  n{id} -> n{left_id} [label=\"{left_label}\"];");
            let _ = writeln!(edges, "  n{id} -> n{right_id} [label=\"{right_label}\"];");
        }
        TreeDoc::Leaf {
            distribution,
            support,
            model,
        } => {
            let formula = report
                .models
                .get(*model)
                .map(model_formula)
                .unwrap_or_else(|| format!("model {model}"));
            let dist = distribution
                .iter()
                .map(|p| format!("{p:.2}"))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(
                nodes,
                "  n{id} [style=filled, fillcolor=lightgrey, label=\"{}\\nd = [{dist}]\\nn = {support}\"];",
                escape(&formula)
            );
        }
    }
    id
}
