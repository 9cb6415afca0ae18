//! The report.json document written by `analyze`.

use perfclass_core::dtree::TreeNode;
use perfclass_core::pipeline::AnalysisReport;
use serde::{Deserialize, Serialize};

/// Serialized analysis report:
/// `{engine, k, mse, r2, accuracy, height, leaves, models, tree, timing}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportDoc {
    pub engine: String,
    pub k: usize,
    pub mse: f64,
    pub r2: f64,
    pub accuracy: f64,
    pub height: usize,
    pub leaves: usize,
    pub models: Vec<ModelDoc>,
    pub tree: TreeDoc,
    pub timing: TimingDoc,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelDoc {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimingDoc {
    pub wall_s: f64,
}

/// Recursive tree node: either an internal threshold test or a leaf with a
/// distribution over the models.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeDoc {
    Split {
        var: String,
        threshold: f64,
        left: Box<TreeDoc>,
        right: Box<TreeDoc>,
    },
    Leaf {
        distribution: Vec<f64>,
        support: usize,
        /// Index of the dominant model.
        model: usize,
    },
}

fn tree_doc(node: &TreeNode, aux_names: &[String]) -> TreeDoc {
    match node {
        TreeNode::Split {
            var,
            threshold,
            left,
            right,
        } => TreeDoc::Split {
            var: aux_names[*var].clone(),
            threshold: *threshold,
            left: Box::new(tree_doc(left, aux_names)),
            right: Box::new(tree_doc(right, aux_names)),
        },
        TreeNode::Leaf(leaf) => TreeDoc::Leaf {
            distribution: leaf.distribution.clone(),
            support: leaf.support,
            model: leaf.argmax_label(),
        },
    }
}

impl ReportDoc {
    /// `strict` zeroes the timing field so repeated seeded runs serialize
    /// byte-identically.
    pub fn from_analysis(report: &AnalysisReport, strict: bool) -> Self {
        ReportDoc {
            engine: report.engine.to_string(),
            k: report.k,
            mse: report.mse,
            r2: report.r2,
            accuracy: report.accuracy,
            height: report.height,
            leaves: report.tree.leaf_count,
            models: report
                .tree
                .models
                .iter()
                .map(|m| ModelDoc {
                    slope: m.slope.clone(),
                    intercept: m.intercept,
                })
                .collect(),
            tree: tree_doc(&report.tree.root, &report.tree.aux_names),
            timing: TimingDoc {
                wall_s: if strict { 0.0 } else { report.wall_time_s },
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}
