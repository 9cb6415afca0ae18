//! End-to-end analysis: cluster search, label transfer, tree learning, and
//! the metric report.
//!
//! The cluster search tries K = 1, 2, ... up to the configured bound and
//! accepts the first K whose clustering mean squared error meets the error
//! bound; if none does the analysis reports no fit. Cluster labels then
//! become classes for tree induction over the auxiliary variables, the
//! fitted line centroids are attached to the tree leaves, and the report
//! carries the classification accuracy (k-fold cross-validation), the
//! coefficient of determination of the tree's mixture predictions, the tree
//! height, and the model count.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affine::{self, fit_affine, FitError};
use crate::dtree::{cross_validate, learn_tree, DiscriminantTree, LabeledAuxSet, TreeError, TreeParams};
use crate::klinear::{klinear_cluster, Clustering, ClusterError, InitStrategy, KLinearConfig};
use crate::spectral::{
    alignment_kernel_approx, spectral_cluster, AlignmentConfig, SimilarityMatrix, SpectralError,
};
use crate::trace::{project_points, PointSet, TraceSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("clustering failed: {0}")]
    Cluster(#[from] ClusterError),
    #[error("spectral engine failed: {0}")]
    Spectral(#[from] SpectralError),
    #[error("tree learning failed: {0}")]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Which clustering engine drives the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    KLinear,
    Spectral,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Engine::KLinear => write!(f, "klinear"),
            Engine::Spectral => write!(f, "spectral"),
        }
    }
}

/// K-linear engine options (the cluster count comes from the search).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KLinearOpts {
    pub restarts: usize,
    pub max_iterations: usize,
    pub init: InitStrategy,
    pub tube_epsilon: Option<f64>,
}

impl Default for KLinearOpts {
    fn default() -> Self {
        KLinearOpts {
            restarts: 20,
            max_iterations: 100,
            init: InitStrategy::RandomPartition,
            tube_epsilon: None,
        }
    }
}

/// Alignment-kernel options for the spectral engine.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct AlignmentOpts {
    pub delta: Option<f64>,
    pub neighbor_samples: Option<usize>,
    pub infinity_cap: Option<f64>,
}

/// Full analysis configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Upper bound on the number of affine models (discriminant size).
    pub max_clusters: usize,
    /// Clustering mean-squared-error bound the search must meet.
    pub mse_bound: f64,
    pub engine: Engine,
    pub klinear: KLinearOpts,
    pub alignment: AlignmentOpts,
    pub tree: TreeParams,
    pub folds: usize,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(engine: Engine, max_clusters: usize, mse_bound: f64) -> Self {
        PipelineConfig {
            max_clusters,
            mse_bound,
            engine,
            klinear: KLinearOpts::default(),
            alignment: AlignmentOpts::default(),
            tree: TreeParams::default(),
            folds: 10,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.max_clusters == 0 {
            return Err(PipelineError::BadConfig("max_clusters must be >= 1".into()));
        }
        if self.mse_bound.is_nan() || self.mse_bound <= 0.0 {
            return Err(PipelineError::BadConfig("mse_bound must be > 0".into()));
        }
        if self.folds < 2 {
            return Err(PipelineError::BadConfig("folds must be >= 2".into()));
        }
        Ok(())
    }
}

/// Analysis result: the discriminant tree with attached models plus every
/// reported metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub engine: Engine,
    /// Number of affine models (the smallest feasible cluster count).
    pub k: usize,
    pub clustering: Clustering,
    pub tree: DiscriminantTree,
    /// Pooled k-fold cross-validated classification accuracy.
    pub accuracy: f64,
    /// Coefficient of determination of the tree's mixture predictions.
    pub r2: f64,
    /// Mean squared prediction error of the tree over all traces.
    pub mse: f64,
    pub height: usize,
    pub leaf_models: usize,
    /// Clustering mean squared error recorded for every K the search tried.
    pub per_k_mse: Vec<(usize, f64)>,
    pub folds: usize,
    pub seed: u64,
    pub flags: Vec<String>,
    /// Seconds spent in clustering, tree learning, and metrics (file I/O
    /// excluded).
    pub wall_time_s: f64,
}

/// Cluster-search failure: no K within the bound met the error bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoFitRecord {
    pub max_clusters: usize,
    pub mse_bound: f64,
    /// Clustering mean squared error for each K tried.
    pub per_k_mse: Vec<(usize, f64)>,
}

/// Outcome of [`analyze`].
#[derive(Debug, Clone)]
pub enum AnalyzeOutcome {
    Fit(Box<AnalysisReport>),
    NoFit(NoFitRecord),
}

/// Splitmix-style stream derivation so each pipeline stage gets its own
/// reproducible seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn single_cluster(ps: &PointSet) -> Result<Clustering, PipelineError> {
    let report = fit_affine(&ps.points)?;
    let mut flags = Vec::new();
    if report.degenerate {
        flags.push("degenerate fit for cluster 0".into());
    }
    Ok(Clustering {
        assignments: vec![0; ps.len()],
        centroids: vec![report.model],
        rss: report.rss,
        iterations: 1,
        empty: vec![false],
        flags,
    })
}

fn run_engine(
    ps: &PointSet,
    k: usize,
    cfg: &PipelineConfig,
    sim_cache: &mut Option<SimilarityMatrix>,
) -> Result<Clustering, PipelineError> {
    if k == 1 {
        return single_cluster(ps);
    }
    match cfg.engine {
        Engine::KLinear => {
            let kcfg = KLinearConfig {
                k,
                restarts: cfg.klinear.restarts,
                max_iterations: cfg.klinear.max_iterations,
                init: cfg.klinear.init,
                tube_epsilon: cfg.klinear.tube_epsilon,
                seed: derive_seed(cfg.seed, 1_000 + k as u64),
            };
            Ok(klinear_cluster(ps, &kcfg)?)
        }
        Engine::Spectral => {
            if sim_cache.is_none() {
                let acfg = AlignmentConfig {
                    delta: cfg.alignment.delta,
                    neighbor_samples: cfg.alignment.neighbor_samples,
                    k,
                    seed: derive_seed(cfg.seed, 17),
                    infinity_cap: cfg
                        .alignment
                        .infinity_cap
                        .unwrap_or(crate::spectral::DEFAULT_INFINITY_CAP),
                };
                *sim_cache = Some(alignment_kernel_approx(ps, &acfg)?);
            }
            let sim = sim_cache.as_ref().expect("cache just filled");
            Ok(spectral_cluster(ps, sim, k, derive_seed(cfg.seed, 2_000 + k as u64))?)
        }
    }
}

/// Reorders clusters canonically (ascending slope norm, then intercept;
/// empty clusters last) so labels are stable across runs.
fn canonicalize(mut clustering: Clustering) -> Clustering {
    let k = clustering.k();
    let mut order: Vec<usize> = (0..k).collect();
    let sort_key = |c: usize| -> (bool, f64, f64) {
        let model = &clustering.centroids[c];
        let norm = model.slope.iter().map(|v| v * v).sum::<f64>().sqrt();
        (clustering.empty[c], norm, model.intercept)
    };
    order.sort_by(|&a, &b| {
        let (ea, na, ia) = sort_key(a);
        let (eb, nb, ib) = sort_key(b);
        ea.cmp(&eb)
            .then(na.partial_cmp(&nb).unwrap())
            .then(ia.partial_cmp(&ib).unwrap())
            .then(a.cmp(&b))
    });
    let mut relabel = vec![0usize; k];
    for (new_index, &old_index) in order.iter().enumerate() {
        relabel[old_index] = new_index;
    }
    clustering.assignments.iter_mut().for_each(|a| *a = relabel[*a]);
    clustering.centroids = order.iter().map(|&c| clustering.centroids[c].clone()).collect();
    clustering.empty = order.iter().map(|&c| clustering.empty[c]).collect();
    clustering
}

enum SearchMode {
    Search,
    Fixed(usize),
}

/// Runs the full analysis with the smallest-feasible-K search.
pub fn analyze(ts: &TraceSet, cfg: &PipelineConfig) -> Result<AnalyzeOutcome, PipelineError> {
    run_pipeline(ts, cfg, SearchMode::Search)
}

/// Runs the full analysis at exactly `k` clusters, bypassing the search and
/// the error bound.
pub fn fixed_k_analyze(
    ts: &TraceSet,
    k: usize,
    cfg: &PipelineConfig,
) -> Result<AnalysisReport, PipelineError> {
    if k == 0 || k > ts.len() {
        return Err(PipelineError::BadConfig(format!(
            "fixed k = {k} outside 1..={}",
            ts.len()
        )));
    }
    match run_pipeline(ts, cfg, SearchMode::Fixed(k))? {
        AnalyzeOutcome::Fit(report) => Ok(*report),
        AnalyzeOutcome::NoFit(_) => unreachable!("fixed-k mode does not search"),
    }
}

fn run_pipeline(
    ts: &TraceSet,
    cfg: &PipelineConfig,
    mode: SearchMode,
) -> Result<AnalyzeOutcome, PipelineError> {
    cfg.validate()?;
    let ps = project_points(ts);
    let n = ps.len();

    let started = Instant::now();
    let mut per_k_mse: Vec<(usize, f64)> = Vec::new();
    let mut sim_cache: Option<SimilarityMatrix> = None;

    let accepted = match mode {
        SearchMode::Fixed(k) => {
            let clustering = run_engine(&ps, k, cfg, &mut sim_cache)?;
            per_k_mse.push((k, clustering.rss / n as f64));
            Some(clustering)
        }
        SearchMode::Search => {
            let mut found = None;
            for k in 1..=cfg.max_clusters.min(n) {
                let clustering = run_engine(&ps, k, cfg, &mut sim_cache)?;
                let mse_k = clustering.rss / n as f64;
                per_k_mse.push((k, mse_k));
                if mse_k <= cfg.mse_bound {
                    found = Some(clustering);
                    break;
                }
            }
            found
        }
    };

    let Some(clustering) = accepted else {
        return Ok(AnalyzeOutcome::NoFit(NoFitRecord {
            max_clusters: cfg.max_clusters,
            mse_bound: cfg.mse_bound,
            per_k_mse,
        }));
    };
    let clustering = canonicalize(clustering);
    let k = clustering.k();

    // Labels over auxiliary variables become the classification classes.
    let rows: Vec<(Vec<f64>, usize)> = ts
        .traces()
        .iter()
        .zip(&clustering.assignments)
        .map(|(t, &label)| (t.aux.clone(), label))
        .collect();
    let data = LabeledAuxSet::with_classes(ts.schema().aux_names.clone(), rows, k)?;

    let tree = learn_tree(&data, &cfg.tree)?;
    let cv = cross_validate(&data, &cfg.tree, cfg.folds, derive_seed(cfg.seed, 3))?;
    let tree = tree.with_models(clustering.centroids.clone())?;

    let actual: Vec<f64> = ts.traces().iter().map(|t| t.output).collect();
    let predicted: Vec<f64> = ts
        .traces()
        .iter()
        .map(|t| tree.predict_output(&t.aux, &t.inputs))
        .collect::<Result<_, _>>()?;
    let r2 = affine::r_squared(&actual, &predicted)?;
    let mse = affine::mse(ts, &tree)?;
    let wall_time_s = started.elapsed().as_secs_f64();

    let mut flags = clustering.flags.clone();
    flags.extend(tree.flags.clone());
    if !cv.stratified {
        flags.push("cross-validation fell back to unstratified folds".into());
    }

    let height = tree.height;
    Ok(AnalyzeOutcome::Fit(Box::new(AnalysisReport {
        engine: cfg.engine,
        k,
        clustering,
        tree,
        accuracy: cv.accuracy,
        r2,
        mse,
        height,
        leaf_models: k,
        per_k_mse,
        folds: cfg.folds,
        seed: cfg.seed,
        flags,
        wall_time_s,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{generate, BenchSpec, CallPattern};
    use crate::trace::{ExecutionTrace, TraceSet, VariableSchema};

    fn two_line_traces() -> TraceSet {
        // Pattern A calls f1 only (y = 2x), pattern B calls f1 and f2
        // (y = 5x); counts make the patterns separable.
        let schema = VariableSchema::new(
            vec!["size".into()],
            vec!["f1".into(), "f2".into()],
            "time".into(),
        )
        .unwrap();
        let mut traces = Vec::new();
        for i in 1..=20 {
            let x = i as f64;
            traces.push(ExecutionTrace {
                inputs: vec![x],
                aux: vec![x, 0.0],
                output: 2.0 * x,
            });
            traces.push(ExecutionTrace {
                inputs: vec![x],
                aux: vec![x, 3.0 * x],
                output: 5.0 * x,
            });
        }
        TraceSet::new(schema, traces).unwrap()
    }

    #[test]
    fn single_line_data_gives_single_leaf_perfect_fit() {
        let schema =
            VariableSchema::new(vec!["size".into()], vec!["f1".into()], "time".into()).unwrap();
        let traces: Vec<ExecutionTrace> = (1..=30)
            .map(|i| ExecutionTrace {
                inputs: vec![i as f64],
                aux: vec![i as f64],
                output: 3.0 * i as f64 + 1.0,
            })
            .collect();
        let ts = TraceSet::new(schema, traces).unwrap();
        let cfg = PipelineConfig::new(Engine::KLinear, 3, 1e-9);
        let outcome = analyze(&ts, &cfg).unwrap();
        let report = match outcome {
            AnalyzeOutcome::Fit(r) => r,
            AnalyzeOutcome::NoFit(_) => panic!("expected a fit"),
        };
        assert_eq!(report.k, 1);
        assert_eq!(report.height, 0);
        assert_eq!(report.leaf_models, 1);
        assert!(report.accuracy == 1.0);
        assert!((report.r2 - 1.0).abs() < 1e-9);
        assert!(report.mse < 1e-12);
    }

    #[test]
    fn two_line_data_accepts_k2_and_splits_on_calls() {
        let ts = two_line_traces();
        let mut cfg = PipelineConfig::new(Engine::KLinear, 4, 1e-9);
        cfg.tree.min_leaf = 1;
        let outcome = analyze(&ts, &cfg).unwrap();
        let report = match outcome {
            AnalyzeOutcome::Fit(r) => r,
            AnalyzeOutcome::NoFit(_) => panic!("expected a fit"),
        };
        assert_eq!(report.k, 2);
        assert_eq!(report.per_k_mse.len(), 2);
        assert!(report.per_k_mse[0].1 > 1e-9);
        assert_eq!(report.height, 1);
        assert!((report.r2 - 1.0).abs() < 1e-9);
        // Canonical ordering puts the shallow line first.
        assert!(report.clustering.centroids[0].slope[0] < report.clustering.centroids[1].slope[0]);
    }

    #[test]
    fn infeasible_bound_returns_nofit_with_records() {
        let ts = two_line_traces();
        let cfg = PipelineConfig::new(Engine::KLinear, 1, 1e-12);
        match analyze(&ts, &cfg).unwrap() {
            AnalyzeOutcome::NoFit(record) => {
                assert_eq!(record.per_k_mse.len(), 1);
                assert!(record.per_k_mse[0].1 > 1e-12);
            }
            AnalyzeOutcome::Fit(_) => panic!("expected NoFit"),
        }
    }

    #[test]
    fn fixed_k_bypasses_the_bound() {
        let ts = two_line_traces();
        let mut cfg = PipelineConfig::new(Engine::KLinear, 1, 1e-300);
        cfg.tree.min_leaf = 1;
        let report = fixed_k_analyze(&ts, 2, &cfg).unwrap();
        assert_eq!(report.k, 2);
    }

    #[test]
    fn report_metrics_are_recomputable() {
        let spec = BenchSpec {
            n_functions: 2,
            n_dummy: 1,
            n_traces: 120,
            n_inputs: 1,
            cost_per_call: vec![1e-6, 2e-6],
            call_patterns: vec![
                CallPattern {
                    functions: vec![0],
                    iter_slope: 50.0,
                },
                CallPattern {
                    functions: vec![0, 1],
                    iter_slope: 50.0,
                },
            ],
            noise_sigma: 1e-4,
            input_range: (1000.0, 1500.0),
            seed: 5,
        };
        let bench = generate(&spec).unwrap();
        let cfg = PipelineConfig::new(Engine::KLinear, 4, 1e-6);
        let report = match analyze(&bench.traces, &cfg).unwrap() {
            AnalyzeOutcome::Fit(r) => r,
            AnalyzeOutcome::NoFit(_) => panic!("expected a fit"),
        };

        // Recompute every metric from the returned tree and traces.
        let mse = affine::mse(&bench.traces, &report.tree).unwrap();
        assert_eq!(mse, report.mse);
        let actual: Vec<f64> = bench.traces.traces().iter().map(|t| t.output).collect();
        let predicted: Vec<f64> = bench
            .traces
            .traces()
            .iter()
            .map(|t| report.tree.predict_output(&t.aux, &t.inputs).unwrap())
            .collect();
        assert_eq!(affine::r_squared(&actual, &predicted).unwrap(), report.r2);

        let rows: Vec<(Vec<f64>, usize)> = bench
            .traces
            .traces()
            .iter()
            .zip(&report.clustering.assignments)
            .map(|(t, &l)| (t.aux.clone(), l))
            .collect();
        let data = LabeledAuxSet::with_classes(
            bench.traces.schema().aux_names.clone(),
            rows,
            report.k,
        )
        .unwrap();
        let cv = cross_validate(&data, &cfg.tree, cfg.folds, derive_seed(cfg.seed, 3)).unwrap();
        assert_eq!(cv.accuracy, report.accuracy);
    }

    #[test]
    fn deterministic_end_to_end() {
        let ts = two_line_traces();
        let mut cfg = PipelineConfig::new(Engine::KLinear, 4, 1e-9);
        cfg.tree.min_leaf = 1;
        cfg.seed = 33;
        let a = match analyze(&ts, &cfg).unwrap() {
            AnalyzeOutcome::Fit(r) => r,
            _ => panic!(),
        };
        let b = match analyze(&ts, &cfg).unwrap() {
            AnalyzeOutcome::Fit(r) => r,
            _ => panic!(),
        };
        assert_eq!(a.clustering.assignments, b.clustering.assignments);
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.r2, b.r2);
        assert_eq!(a.mse, b.mse);
        assert_eq!(
            serde_json::to_string(&a.tree).unwrap(),
            serde_json::to_string(&b.tree).unwrap()
        );
    }
}
