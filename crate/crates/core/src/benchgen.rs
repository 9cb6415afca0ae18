//! Synthetic microbenchmark generator.
//!
//! Each generated trace picks a call pattern (round-robin), draws inputs
//! uniformly, plants iteration counts for the pattern's functions, and
//! computes the output as cost-weighted iterations plus Gaussian noise.
//! Dummy functions get small random counts uncorrelated with the output.
//! Named presets mirror the benchmark families used in the tests: `rN`
//! families with increasing function counts, and `rN` dummy-heavy variants
//! up to 6400 auxiliary variables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{ExecutionTrace, TraceSet, VariableSchema};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("spec invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

/// One way a run can exercise the program: which functions are called, and
/// how the input maps to their iteration count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallPattern {
    pub functions: Vec<usize>,
    /// Iterations per unit of (mean) input value.
    pub iter_slope: f64,
}

/// Generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub n_functions: usize,
    pub n_dummy: usize,
    pub n_traces: usize,
    pub n_inputs: usize,
    /// Seconds per iteration, one entry per function.
    pub cost_per_call: Vec<f64>,
    pub call_patterns: Vec<CallPattern>,
    pub noise_sigma: f64,
    pub input_range: (f64, f64),
    pub seed: u64,
}

impl BenchSpec {
    fn validate(&self) -> Result<(), BenchError> {
        let err = |msg: String| Err(BenchError::Invalid(msg));
        if self.n_functions == 0 {
            return err("need at least one function".into());
        }
        if self.n_traces == 0 {
            return err("need at least one trace".into());
        }
        if self.n_inputs == 0 {
            return err("need at least one input variable".into());
        }
        if self.cost_per_call.len() != self.n_functions {
            return err(format!(
                "{} costs for {} functions",
                self.cost_per_call.len(),
                self.n_functions
            ));
        }
        if self.call_patterns.is_empty() {
            return err("need at least one call pattern".into());
        }
        for (i, p) in self.call_patterns.iter().enumerate() {
            if p.functions.is_empty() {
                return err(format!("pattern {i} calls no functions"));
            }
            if p.functions.iter().any(|&f| f >= self.n_functions) {
                return err(format!("pattern {i} references an unknown function"));
            }
            if p.iter_slope <= 0.0 {
                return err(format!("pattern {i} has non-positive iteration slope"));
            }
        }
        let full = self.call_patterns.iter().any(|p| {
            let mut fs: Vec<usize> = p.functions.clone();
            fs.sort_unstable();
            fs.dedup();
            fs.len() == self.n_functions
        });
        if !full {
            return err("no pattern calls all functions".into());
        }
        let (lo, hi) = self.input_range;
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return err("input range is empty".into());
        }
        if self.noise_sigma < 0.0 {
            return err("noise sigma is negative".into());
        }
        Ok(())
    }

    /// Expected output over inputs and patterns, used to scale noise.
    pub fn mean_output(&self) -> f64 {
        let mean_x = 0.5 * (self.input_range.0 + self.input_range.1);
        let per_pattern: f64 = self
            .call_patterns
            .iter()
            .map(|p| {
                let cost: f64 = p.functions.iter().map(|&f| self.cost_per_call[f]).sum();
                p.iter_slope * mean_x * cost
            })
            .sum();
        per_pattern / self.call_patterns.len() as f64
    }
}

/// Generator output: the trace set plus which pattern produced each trace.
#[derive(Debug, Clone)]
pub struct GeneratedBench {
    pub traces: TraceSet,
    pub truth: Vec<usize>,
}

/// Generates a trace set from the spec. Deterministic given the seed.
pub fn generate(spec: &BenchSpec) -> Result<GeneratedBench, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).expect("sigma validated"))
    } else {
        None
    };

    let n_aux = spec.n_functions + spec.n_dummy;
    let n_patterns = spec.call_patterns.len();
    let mut traces = Vec::with_capacity(spec.n_traces);
    let mut truth = Vec::with_capacity(spec.n_traces);

    for t in 0..spec.n_traces {
        let pattern_idx = t % n_patterns;
        let pattern = &spec.call_patterns[pattern_idx];

        let inputs: Vec<f64> = (0..spec.n_inputs)
            .map(|_| rng.gen_range(spec.input_range.0..spec.input_range.1))
            .collect();
        let drive = inputs.iter().sum::<f64>() / inputs.len() as f64;
        let iterations = (pattern.iter_slope * drive).round().max(0.0);

        let mut aux = vec![0.0f64; n_aux];
        for &f in &pattern.functions {
            aux[f] = iterations;
        }
        for d in 0..spec.n_dummy {
            aux[spec.n_functions + d] = rng.gen_range(0..=9) as f64;
        }

        let mut y: f64 = pattern
            .functions
            .iter()
            .map(|&f| spec.cost_per_call[f] * iterations)
            .sum();
        if let Some(n) = &noise {
            y += n.sample(&mut rng);
        }

        traces.push(ExecutionTrace {
            inputs,
            aux,
            output: y,
        });
        truth.push(pattern_idx);
    }

    let input_names = if spec.n_inputs == 1 {
        vec!["size".to_string()]
    } else {
        (0..spec.n_inputs).map(|i| format!("size{}", i + 1)).collect()
    };
    let mut aux_names: Vec<String> = (0..spec.n_functions).map(|f| format!("f{}", f + 1)).collect();
    aux_names.extend((0..spec.n_dummy).map(|d| format!("d{}", d + 1)));
    let schema = VariableSchema::new(input_names, aux_names, "time".to_string())?;

    Ok(GeneratedBench {
        traces: TraceSet::new(schema, traces)?,
        truth,
    })
}

/// Builds the standard spec shape used by the presets: `n_patterns` call
/// patterns over `m` functions (singleton patterns followed by one that
/// calls every function) whose fitted line slopes form the progression
/// u, 2u, 3u, ... so adjacent performance classes keep a constant gap.
fn standard_spec(
    m: usize,
    n_dummy: usize,
    n_traces: usize,
    subsets: Vec<Vec<usize>>,
    seed: u64,
) -> BenchSpec {
    const UNIT_SLOPE: f64 = 5e-5;
    let cost_per_call: Vec<f64> = (0..m).map(|f| 1e-6 * (f + 1) as f64).collect();
    let call_patterns: Vec<CallPattern> = subsets
        .into_iter()
        .enumerate()
        .map(|(i, functions)| {
            let cost: f64 = functions.iter().map(|&f| cost_per_call[f]).sum();
            let target = UNIT_SLOPE * (i + 1) as f64;
            CallPattern {
                functions,
                iter_slope: target / cost,
            }
        })
        .collect();

    let mut spec = BenchSpec {
        n_functions: m,
        n_dummy,
        n_traces,
        n_inputs: 1,
        cost_per_call,
        call_patterns,
        noise_sigma: 0.0,
        input_range: (1000.0, 1500.0),
        seed,
    };
    spec.noise_sigma = 0.01 * spec.mean_output();
    spec
}

fn prefix_subsets(m: usize, n_patterns: usize) -> Vec<Vec<usize>> {
    assert!(n_patterns >= 1 && n_patterns - 1 <= m);
    let mut subsets: Vec<Vec<usize>> = (0..n_patterns - 1).map(|f| vec![f]).collect();
    subsets.push((0..m).collect());
    subsets
}

/// Named preset specs for the synthetic benchmark families. Returns `None`
/// for an unknown name.
pub fn preset(name: &str, seed: u64) -> Option<BenchSpec> {
    let std = |m: usize, dummies: usize, traces: usize, patterns: usize| {
        Some(standard_spec(m, dummies, traces, prefix_subsets(m, patterns), seed))
    };
    match name {
        "r2" => std(2, 0, 400, 3),
        "r3-1" => std(3, 0, 800, 2),
        "r3-2" => std(3, 0, 800, 3),
        "r4-1" => std(4, 0, 1600, 3),
        "r4-2" => std(4, 0, 1200, 4),
        "r4-3" => Some(standard_spec(
            4,
            0,
            1600,
            vec![vec![0, 1], vec![2, 3], vec![0, 1, 2, 3]],
            seed,
        )),
        "r5" => std(5, 0, 3200, 3),
        "r6" => std(6, 0, 6400, 4),
        "r7" => std(7, 0, 12800, 4),
        "r200" => std(2, 198, 400, 3),
        "r400-1" => std(3, 397, 800, 2),
        "r400-2" => std(3, 397, 800, 3),
        "r600" => std(4, 596, 1200, 4),
        "r800-1" => std(4, 796, 1600, 3),
        "r800-2" => Some(standard_spec(
            4,
            796,
            1600,
            vec![vec![0, 1], vec![2, 3], vec![0, 1, 2, 3]],
            seed,
        )),
        "r1600" => std(5, 1595, 3200, 3),
        "r3200" => std(6, 3194, 6400, 4),
        "r6400" => std(6, 6394, 12800, 4),
        _ => None,
    }
}

/// All preset names, in rough size order.
pub const PRESET_NAMES: [&str; 18] = [
    "r2", "r3-1", "r3-2", "r4-1", "r4-2", "r4-3", "r5", "r6", "r7", "r200", "r400-1", "r400-2",
    "r600", "r800-1", "r800-2", "r1600", "r3200", "r6400",
];

/// The linear presets without dummy variables (the two-engine family).
pub const LINEAR_PRESET_NAMES: [&str; 9] = [
    "r2", "r3-1", "r3-2", "r4-1", "r4-2", "r4-3", "r5", "r6", "r7",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::project_points;

    #[test]
    fn zero_noise_two_patterns_give_two_perfect_lines() {
        let spec = BenchSpec {
            n_functions: 2,
            n_dummy: 0,
            n_traces: 40,
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
            noise_sigma: 0.0,
            input_range: (1000.0, 1500.0),
            seed: 1,
        };
        let bench = generate(&spec).unwrap();
        let ps = project_points(&bench.traces);
        // Each trace sits exactly on its pattern's line through the origin
        // (up to iteration rounding).
        for (i, t) in bench.traces.traces().iter().enumerate() {
            let slope = if bench.truth[i] == 0 { 50.0 * 1e-6 } else { 50.0 * 3e-6 };
            let expected = slope * t.inputs[0];
            assert!(
                (t.output - expected).abs() <= 3e-6 * 0.5 + 1e-12,
                "trace {i}: {} vs {}",
                t.output,
                expected
            );
        }
        assert_eq!(ps.len(), 40);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = preset("r2", 9).unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.traces.traces(), b.traces.traces());
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn presets_have_documented_shape() {
        for (name, m, aux, traces, patterns) in [
            ("r2", 2, 2, 400, 3),
            ("r3-1", 3, 3, 800, 2),
            ("r7", 7, 7, 12800, 4),
            ("r200", 2, 200, 400, 3),
            ("r6400", 6, 6400, 12800, 4),
        ] {
            let spec = preset(name, 0).unwrap();
            assert_eq!(spec.n_functions, m, "{name}");
            assert_eq!(spec.n_functions + spec.n_dummy, aux, "{name}");
            assert_eq!(spec.n_traces, traces, "{name}");
            assert_eq!(spec.call_patterns.len(), patterns, "{name}");
        }
        assert!(preset("nope", 0).is_none());
    }

    #[test]
    fn some_pattern_calls_all_functions() {
        for name in PRESET_NAMES {
            let spec = preset(name, 0).unwrap();
            assert!(
                spec.call_patterns
                    .iter()
                    .any(|p| p.functions.len() == spec.n_functions),
                "{name}"
            );
        }
    }

    #[test]
    fn pattern_without_full_coverage_rejected() {
        let spec = BenchSpec {
            n_functions: 2,
            n_dummy: 0,
            n_traces: 10,
            n_inputs: 1,
            cost_per_call: vec![1e-6, 2e-6],
            call_patterns: vec![CallPattern {
                functions: vec![0],
                iter_slope: 1.0,
            }],
            noise_sigma: 0.0,
            input_range: (0.0, 1.0),
            seed: 0,
        };
        assert!(matches!(generate(&spec), Err(BenchError::Invalid(_))));
    }

    #[test]
    fn dummies_are_bounded_and_uncalled_functions_zero() {
        let spec = preset("r200", 3).unwrap();
        let bench = generate(&spec).unwrap();
        for (i, t) in bench.traces.traces().iter().enumerate() {
            let pattern = &spec.call_patterns[bench.truth[i]];
            for f in 0..spec.n_functions {
                if pattern.functions.contains(&f) {
                    assert!(t.aux[f] > 0.0);
                } else {
                    assert_eq!(t.aux[f], 0.0);
                }
            }
            for d in 0..spec.n_dummy {
                let v = t.aux[spec.n_functions + d];
                assert!((0.0..=9.0).contains(&v));
            }
        }
    }
}
