//! Trace data model and file loading.
//!
//! A trace file is CSV with a role-prefixed header: `in:` columns are program
//! inputs, `aux:` columns are call counts, `out:` is the measured output
//! (one required). An optional `truth:` column carries generator labels and
//! is skipped unless asked for. Roles may instead come from a JSON sidecar
//! (`<file>.json`) of the form `{"inputs":[...],"aux":[...],"output":"..."}`,
//! which overrides header prefixes.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("row {row}: {detail}")]
    Row { row: usize, detail: String },
    #[error("trace set is empty")]
    Empty,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("sidecar schema: {0}")]
    Sidecar(String),
}

/// Names and roles of the columns in a trace set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub input_names: Vec<String>,
    pub aux_names: Vec<String>,
    pub output_name: String,
}

impl VariableSchema {
    pub fn new(
        input_names: Vec<String>,
        aux_names: Vec<String>,
        output_name: String,
    ) -> Result<Self, TraceError> {
        let schema = VariableSchema {
            input_names,
            aux_names,
            output_name,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn n_inputs(&self) -> usize {
        self.input_names.len()
    }

    pub fn n_aux(&self) -> usize {
        self.aux_names.len()
    }

    fn validate(&self) -> Result<(), TraceError> {
        if self.input_names.is_empty() {
            return Err(TraceError::SchemaMismatch(
                "at least one input variable is required".into(),
            ));
        }
        if self.output_name.is_empty() {
            return Err(TraceError::SchemaMismatch("output name is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in self
            .input_names
            .iter()
            .chain(self.aux_names.iter())
            .chain(std::iter::once(&self.output_name))
        {
            if !seen.insert(name.as_str()) {
                return Err(TraceError::SchemaMismatch(format!(
                    "duplicate variable name `{name}`"
                )));
            }
        }
        Ok(())
    }
}

/// One program run: input valuations, call counts, measured output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub inputs: Vec<f64>,
    pub aux: Vec<f64>,
    pub output: f64,
}

/// A validated, immutable collection of traces under one schema.
#[derive(Debug, Clone)]
pub struct TraceSet {
    schema: VariableSchema,
    traces: Vec<ExecutionTrace>,
}

impl TraceSet {
    pub fn new(schema: VariableSchema, traces: Vec<ExecutionTrace>) -> Result<Self, TraceError> {
        schema.validate()?;
        if traces.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, t) in traces.iter().enumerate() {
            validate_trace(&schema, t).map_err(|detail| TraceError::Row { row: i + 1, detail })?;
        }
        Ok(TraceSet { schema, traces })
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn traces(&self) -> &[ExecutionTrace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}

fn validate_trace(schema: &VariableSchema, t: &ExecutionTrace) -> Result<(), String> {
    if t.inputs.len() != schema.n_inputs() {
        return Err(format!(
            "expected {} input values, got {}",
            schema.n_inputs(),
            t.inputs.len()
        ));
    }
    if t.aux.len() != schema.n_aux() {
        return Err(format!(
            "expected {} auxiliary values, got {}",
            schema.n_aux(),
            t.aux.len()
        ));
    }
    for (name, v) in schema.input_names.iter().zip(&t.inputs) {
        if !v.is_finite() {
            return Err(format!("non-finite value in column `{name}`"));
        }
    }
    for (name, v) in schema.aux_names.iter().zip(&t.aux) {
        if !v.is_finite() {
            return Err(format!("non-finite value in column `{name}`"));
        }
        if *v < 0.0 {
            return Err(format!("negative auxiliary count in column `{name}`"));
        }
    }
    if !t.output.is_finite() {
        return Err(format!(
            "non-finite value in column `{}`",
            schema.output_name
        ));
    }
    Ok(())
}

/// One clustering observation: input vector and output value.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Point {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Point { x, y }
    }
}

/// Projection of a trace set to (inputs, output) pairs, optionally labeled.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub points: Vec<Point>,
    pub labels: Option<Vec<usize>>,
}

impl PointSet {
    pub fn new(points: Vec<Point>) -> Self {
        PointSet {
            points,
            labels: None,
        }
    }

    pub fn with_labels(points: Vec<Point>, labels: Vec<usize>, k: usize) -> Result<Self, TraceError> {
        if labels.len() != points.len() {
            return Err(TraceError::SchemaMismatch(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TraceError::SchemaMismatch(format!(
                "label {bad} out of range for k={k}"
            )));
        }
        Ok(PointSet {
            points,
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.x.len())
    }

    /// Span of the y values; used to derive default tube widths.
    pub fn y_range(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.points {
            lo = lo.min(p.y);
            hi = hi.max(p.y);
        }
        if lo > hi {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Drops the auxiliary variables, keeping (inputs, output) in trace order.
pub fn project_points(ts: &TraceSet) -> PointSet {
    PointSet::new(
        ts.traces()
            .iter()
            .map(|t| Point::new(t.inputs.clone(), t.output))
            .collect(),
    )
}

#[derive(Debug, Deserialize, Serialize)]
struct SidecarSchema {
    inputs: Vec<String>,
    #[serde(default)]
    aux: Vec<String>,
    output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Input,
    Aux,
    Output,
    Truth,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Input => write!(f, "in"),
            Role::Aux => write!(f, "aux"),
            Role::Output => write!(f, "out"),
            Role::Truth => write!(f, "truth"),
        }
    }
}

fn split_prefix(raw: &str) -> (Option<Role>, &str) {
    for (p, role) in [
        ("in:", Role::Input),
        ("aux:", Role::Aux),
        ("out:", Role::Output),
        ("truth:", Role::Truth),
    ] {
        if let Some(rest) = raw.strip_prefix(p) {
            return (Some(role), rest);
        }
    }
    (None, raw)
}

/// Trace set plus any ground-truth labels present in the file.
#[derive(Debug)]
pub struct LoadedTraces {
    pub trace_set: TraceSet,
    pub truth: Option<Vec<usize>>,
}

/// Loads and validates a trace file. Column roles come from header prefixes,
/// overridden by `schema_hint` or a `<path>.json` sidecar when present.
pub fn load_traces(
    path: impl AsRef<Path>,
    schema_hint: Option<&VariableSchema>,
) -> Result<TraceSet, TraceError> {
    Ok(load_traces_with_truth(path, schema_hint)?.trace_set)
}

/// As [`load_traces`], additionally returning the `truth:` column if the file
/// has one.
pub fn load_traces_with_truth(
    path: impl AsRef<Path>,
    schema_hint: Option<&VariableSchema>,
) -> Result<LoadedTraces, TraceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;

    let sidecar = match schema_hint {
        Some(s) => Some(s.clone()),
        None => read_sidecar(path)?,
    };
    parse_traces(&text, sidecar.as_ref())
}

fn read_sidecar(csv_path: &Path) -> Result<Option<VariableSchema>, TraceError> {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".json");
    let p = Path::new(&p);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(p).map_err(|source| TraceError::Io {
        path: p.display().to_string(),
        source,
    })?;
    let raw: SidecarSchema =
        serde_json::from_str(&text).map_err(|e| TraceError::Sidecar(e.to_string()))?;
    let schema = VariableSchema::new(raw.inputs, raw.aux, raw.output)
        .map_err(|e| TraceError::Sidecar(e.to_string()))?;
    Ok(Some(schema))
}

/// Parses the CSV trace format from a string. Exposed for tests and in-memory
/// callers; file loading goes through [`load_traces`].
pub fn parse_traces(
    text: &str,
    schema_hint: Option<&VariableSchema>,
) -> Result<LoadedTraces, TraceError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| TraceError::BadHeader("file is empty".into()))?;

    let raw_names: Vec<&str> = header.split(',').map(str::trim).collect();
    if raw_names.iter().any(|n| n.is_empty()) {
        return Err(TraceError::BadHeader("empty column name".into()));
    }

    // Per-column role, resolved from the hint schema when given, else from
    // the in:/aux:/out:/truth: prefixes.
    let mut roles: Vec<Role> = Vec::with_capacity(raw_names.len());
    let mut names: Vec<String> = Vec::with_capacity(raw_names.len());
    for raw in &raw_names {
        let (prefix_role, bare) = split_prefix(raw);
        let role = match schema_hint {
            Some(schema) => {
                if prefix_role == Some(Role::Truth) {
                    Role::Truth
                } else if schema.input_names.iter().any(|n| n == bare) {
                    Role::Input
                } else if schema.aux_names.iter().any(|n| n == bare) {
                    Role::Aux
                } else if schema.output_name == bare {
                    Role::Output
                } else {
                    return Err(TraceError::BadHeader(format!(
                        "column `{bare}` not present in the schema"
                    )));
                }
            }
            None => prefix_role.ok_or_else(|| {
                TraceError::BadHeader(format!(
                    "column `{raw}` has no role prefix (expected in:/aux:/out:) and no schema was supplied"
                ))
            })?,
        };
        roles.push(role);
        names.push(bare.to_string());
    }

    let input_cols: Vec<usize> = positions(&roles, Role::Input);
    let aux_cols: Vec<usize> = positions(&roles, Role::Aux);
    let out_cols: Vec<usize> = positions(&roles, Role::Output);
    let truth_cols: Vec<usize> = positions(&roles, Role::Truth);

    if input_cols.is_empty() {
        return Err(TraceError::BadHeader("no input (in:) column".into()));
    }
    if out_cols.len() != 1 {
        return Err(TraceError::BadHeader(format!(
            "expected exactly one output (out:) column, found {}",
            out_cols.len()
        )));
    }
    if truth_cols.len() > 1 {
        return Err(TraceError::BadHeader("more than one truth: column".into()));
    }

    let schema = VariableSchema::new(
        input_cols.iter().map(|&c| names[c].clone()).collect(),
        aux_cols.iter().map(|&c| names[c].clone()).collect(),
        names[out_cols[0]].clone(),
    )?;

    let n_fields = raw_names.len();
    let mut traces = Vec::new();
    let mut truth: Vec<usize> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_fields {
            return Err(TraceError::Row {
                row,
                detail: format!("expected {} fields, got {}", n_fields, fields.len()),
            });
        }
        let cell = |col: usize| -> Result<f64, TraceError> {
            let v: f64 = fields[col].parse().map_err(|_| TraceError::Row {
                row,
                detail: format!("non-numeric cell `{}` in column `{}`", fields[col], names[col]),
            })?;
            Ok(v)
        };
        let t = ExecutionTrace {
            inputs: input_cols.iter().map(|&c| cell(c)).collect::<Result<_, _>>()?,
            aux: aux_cols.iter().map(|&c| cell(c)).collect::<Result<_, _>>()?,
            output: cell(out_cols[0])?,
        };
        validate_trace(&schema, &t).map_err(|detail| TraceError::Row { row, detail })?;
        traces.push(t);
        if let Some(&tc) = truth_cols.first() {
            let label: usize = fields[tc].parse().map_err(|_| TraceError::Row {
                row,
                detail: format!("non-integer truth label `{}`", fields[tc]),
            })?;
            truth.push(label);
        }
    }

    let trace_set = TraceSet::new(schema, traces)?;
    Ok(LoadedTraces {
        trace_set,
        truth: if truth_cols.is_empty() { None } else { Some(truth) },
    })
}

fn positions(roles: &[Role], want: Role) -> Vec<usize> {
    roles
        .iter()
        .enumerate()
        .filter(|(_, &r)| r == want)
        .map(|(i, _)| i)
        .collect()
}

/// Writes the prefixed CSV trace format.
pub fn save_traces(ts: &TraceSet, path: impl AsRef<Path>) -> Result<(), TraceError> {
    save_traces_with_truth(ts, None, path)
}

/// Writes the trace format with an optional trailing `truth:label` column.
pub fn save_traces_with_truth(
    ts: &TraceSet,
    truth: Option<&[usize]>,
    path: impl AsRef<Path>,
) -> Result<(), TraceError> {
    let path = path.as_ref();
    if let Some(t) = truth {
        if t.len() != ts.len() {
            return Err(TraceError::SchemaMismatch(format!(
                "{} truth labels for {} traces",
                t.len(),
                ts.len()
            )));
        }
    }
    let io_err = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    write_traces(ts, truth, &mut w).map_err(io_err)?;
    Ok(())
}

fn write_traces(
    ts: &TraceSet,
    truth: Option<&[usize]>,
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    let schema = ts.schema();
    let mut header: Vec<String> = schema.input_names.iter().map(|n| format!("in:{n}")).collect();
    header.extend(schema.aux_names.iter().map(|n| format!("aux:{n}")));
    header.push(format!("out:{}", schema.output_name));
    if truth.is_some() {
        header.push("truth:label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, t) in ts.traces().iter().enumerate() {
        let mut fields: Vec<String> = t.inputs.iter().map(|v| v.to_string()).collect();
        fields.extend(t.aux.iter().map(|v| v.to_string()));
        fields.push(t.output.to_string());
        if let Some(labels) = truth {
            fields.push(labels[i].to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Serializes a trace set to the CSV format as a string.
pub fn traces_to_string(ts: &TraceSet, truth: Option<&[usize]>) -> String {
    let mut buf = Vec::new();
    write_traces(ts, truth, &mut buf).expect("in-memory write cannot fail");
    String::from_utf8(buf).expect("trace format is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_line_file() -> &'static str {
        "in:size,aux:f,out:time\n10,2,0.5\n"
    }

    #[test]
    fn parses_minimal_file() {
        let loaded = parse_traces(one_line_file(), None).unwrap();
        let ts = loaded.trace_set;
        assert_eq!(ts.schema().n_inputs(), 1);
        assert_eq!(ts.schema().n_aux(), 1);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts.traces()[0].inputs, vec![10.0]);
        assert_eq!(ts.traces()[0].aux, vec![2.0]);
        assert_eq!(ts.traces()[0].output, 0.5);
    }

    #[test]
    fn missing_column_reports_row_and_arity() {
        let err = parse_traces("in:size,aux:f,out:time\n10,2\n", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1"), "{msg}");
        assert!(msg.contains("expected 3 fields"), "{msg}");
    }

    #[test]
    fn negative_aux_count_rejected() {
        let err = parse_traces("in:size,aux:f,out:time\n10,-1,0.5\n", None).unwrap_err();
        assert!(err.to_string().contains("negative auxiliary count"), "{err}");
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let err = parse_traces("in:size,aux:f,out:time\n10,x,0.5\n", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1"), "{msg}");
        assert!(msg.contains("column `f`"), "{msg}");
    }

    #[test]
    fn header_without_prefixes_needs_schema() {
        assert!(parse_traces("size,f,time\n10,2,0.5\n", None).is_err());
        let schema =
            VariableSchema::new(vec!["size".into()], vec!["f".into()], "time".into()).unwrap();
        let loaded = parse_traces("size,f,time\n10,2,0.5\n", Some(&schema)).unwrap();
        assert_eq!(loaded.trace_set.len(), 1);
    }

    #[test]
    fn schema_overrides_prefixes() {
        // The hint reassigns the `aux:f` column to be an input.
        let schema = VariableSchema::new(
            vec!["size".into(), "f".into()],
            vec![],
            "time".into(),
        )
        .unwrap();
        let loaded = parse_traces(one_line_file(), Some(&schema)).unwrap();
        assert_eq!(loaded.trace_set.schema().n_inputs(), 2);
        assert_eq!(loaded.trace_set.schema().n_aux(), 0);
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(parse_traces("in:a,aux:a,out:time\n1,1,1\n", None).is_err());
    }

    #[test]
    fn two_outputs_rejected() {
        assert!(parse_traces("in:a,out:t,out:u\n1,1,1\n", None).is_err());
    }

    #[test]
    fn truth_column_is_skipped_but_recoverable() {
        let text = "in:size,out:time,truth:label\n1,2,0\n3,4,1\n";
        let loaded = parse_traces(text, None).unwrap();
        assert_eq!(loaded.trace_set.schema().n_aux(), 0);
        assert_eq!(loaded.truth, Some(vec![0, 1]));
    }

    #[test]
    fn projection_preserves_order_and_count() {
        let text = "in:size,aux:f,out:time\n1,0,10\n2,0,20\n3,0,30\n";
        let ts = parse_traces(text, None).unwrap().trace_set;
        let ps = project_points(&ts);
        assert_eq!(ps.len(), 3);
        for (p, t) in ps.points.iter().zip(ts.traces()) {
            assert_eq!(p.x, t.inputs);
            assert_eq!(p.y, t.output);
        }
        assert!(ps.labels.is_none());
    }

    #[test]
    fn round_trip_is_field_identical() {
        let text = "in:size,aux:f,out:time\n10,2,0.5\n1e3,0,2.25e-3\n0.125,7,3\n";
        let ts = parse_traces(text, None).unwrap().trace_set;
        let written = traces_to_string(&ts, None);
        let back = parse_traces(&written, None).unwrap().trace_set;
        assert_eq!(ts.schema(), back.schema());
        assert_eq!(ts.traces(), back.traces());
    }

    #[test]
    fn duplicate_xz_rows_with_different_y_are_kept() {
        let text = "in:size,aux:f,out:time\n10,2,0.5\n10,2,0.7\n";
        let ts = parse_traces(text, None).unwrap().trace_set;
        assert_eq!(ts.len(), 2);
    }

    #[test]
    fn scientific_notation_and_integer_aux_accepted() {
        let text = "in:size,aux:f,out:time\n1.5e2,3,6.25E-2\n";
        let ts = parse_traces(text, None).unwrap().trace_set;
        assert_eq!(ts.traces()[0].inputs[0], 150.0);
        assert_eq!(ts.traces()[0].output, 0.0625);
    }
}
