//! Reading inputs and writing artifacts.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gwire::{DistanceMatrix, NeighborhoodGraph, ResponseObject, ResponseSet, SymmetricMatrix, TauScheme, Tolerances};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<gwire::Error> for CliError {
    fn from(e: gwire::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn input_err(path: &Path, msg: impl fmt::Display) -> CliError {
    CliError::Input(format!("{}: {msg}", path.display()))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| input_err(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| input_err(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// A numeric table with a header row.
pub struct Table {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
}

pub fn read_matrix_csv(path: &Path) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(path, e))?;
    let names: Vec<String> = reader.headers().map_err(|e| input_err(path, e))?.iter().map(String::from).collect();
    if names.is_empty() {
        return Err(input_err(path, "no columns"));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| input_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(input_err(path, format!("line {line}: {} fields, header has {}", record.len(), names.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| input_err(path, format!("line {line}, column {}: '{field}' is not a number", c + 1)))?;
            if !v.is_finite() {
                return Err(input_err(path, format!("line {line}, column {}: value is not finite", c + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(input_err(path, "no data rows"));
    }
    Ok(Table { data: DMatrix::from_row_slice(rows, names.len(), &values), names })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Entry {
    Scalar(f64),
    Object(ResponseObject),
}

/// Metric families accepted by `--metric`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Geodesic,
    Wasserstein,
    Hellinger,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "geodesic" => Ok(Metric::Geodesic),
            "wasserstein" => Ok(Metric::Wasserstein),
            "hellinger" => Ok(Metric::Hellinger),
            other => Err(format!("unknown metric '{other}' (expected euclidean, geodesic, wasserstein or hellinger)")),
        }
    }
}

fn metric_of(obj: &ResponseObject) -> Metric {
    match obj {
        ResponseObject::Euclidean { .. } => Metric::Euclidean,
        ResponseObject::Sphere { .. } => Metric::Geodesic,
        ResponseObject::Quantile { .. } | ResponseObject::GaussianLocation { .. } => Metric::Wasserstein,
        ResponseObject::Pmf { .. } => Metric::Hellinger,
    }
}

/// Responses are a JSON array of numbers (scalar responses) or of tagged
/// objects such as `{"type": "pmf", "probabilities": [...]}`.
pub fn read_responses(path: &Path, metric: Option<Metric>, bound: bool, tol: &Tolerances) -> CliResult<ResponseSet> {
    let text = read_text(path)?;
    let entries: Vec<Entry> = serde_json::from_str(&text).map_err(|e| input_err(path, e))?;
    if entries.is_empty() {
        return Err(input_err(path, "no responses"));
    }
    if entries.iter().all(|e| matches!(e, Entry::Scalar(_))) {
        let y: Vec<f64> = entries.iter().map(|e| if let Entry::Scalar(v) = e { *v } else { 0.0 }).collect();
        if let Some(m) = metric.filter(|m| *m != Metric::Euclidean) {
            return Err(input_err(path, format!("scalar responses cannot use the {m:?} metric")));
        }
        if bound {
            return Ok(ResponseSet::Metric(DistanceMatrix::from_scalar(&y).bounded()));
        }
        return Ok(ResponseSet::Scalar(y));
    }
    let mut objects = Vec::with_capacity(entries.len());
    for (i, e) in entries.into_iter().enumerate() {
        match e {
            Entry::Scalar(_) => return Err(input_err(path, format!("entry {}: mixes numbers with objects", i + 1))),
            Entry::Object(o) => {
                o.validate(tol).map_err(|err| input_err(path, format!("entry {}: {err}", i + 1)))?;
                if let Some(m) = metric {
                    if metric_of(&o) != m {
                        return Err(input_err(path, format!("entry {}: {} response under the {m:?} metric", i + 1, o.kind())));
                    }
                }
                objects.push(o);
            }
        }
    }
    let d = gwire::metrics::pairwise_distances(&objects, bound).map_err(|e| input_err(path, e))?;
    Ok(ResponseSet::Metric(d))
}

/// Neighborhoods as written by `gwire glasso`: 1-based, self excluded.
#[derive(Debug, Serialize, Deserialize)]
pub struct AdjacencyFile {
    pub p: usize,
    #[serde(default)]
    pub names: Vec<String>,
    pub neighbors: Vec<Vec<usize>>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl AdjacencyFile {
    pub fn from_graph(g: &NeighborhoodGraph, names: Vec<String>) -> Self {
        let neighbors = (0..g.p())
            .map(|i| g.neighbors(i).iter().filter(|&&j| j != i).map(|&j| j + 1).collect())
            .collect();
        Self { p: g.p(), names, neighbors, weights: Some(g.weights().to_vec()), penalty: None, manifest: None }
    }
}

pub fn read_adjacency(path: &Path, p: usize, tau: TauScheme) -> CliResult<NeighborhoodGraph> {
    let text = read_text(path)?;
    let adj: AdjacencyFile = serde_json::from_str(&text).map_err(|e| input_err(path, e))?;
    if adj.p != p || adj.neighbors.len() != p {
        return Err(input_err(path, format!("graph has {} vertices, data has {p} predictors", adj.neighbors.len())));
    }
    let mut lists = Vec::with_capacity(p);
    for (i, list) in adj.neighbors.iter().enumerate() {
        let mut out = Vec::with_capacity(list.len());
        for &j in list {
            if j == 0 || j > p {
                return Err(input_err(path, format!("vertex {}: neighbor {j} outside 1..={p}", i + 1)));
            }
            out.push(j - 1);
        }
        lists.push(out);
    }
    let graph = NeighborhoodGraph::from_adjacency(p, &lists).map_err(|e| input_err(path, e))?;
    match adj.weights {
        Some(w) => NeighborhoodGraph::new(graph.all_neighbors().to_vec(), w).map_err(|e| input_err(path, e)),
        None => Ok(graph.with_tau(tau)),
    }
}

/// Square precision matrix with a header row; edges where `|omega_ij| > zero`.
pub fn read_precision(path: &Path, p: usize, zero: f64) -> CliResult<NeighborhoodGraph> {
    let table = read_matrix_csv(path)?;
    if table.data.nrows() != p || table.data.ncols() != p {
        return Err(input_err(path, format!("precision is {}x{}, expected {p}x{p}", table.data.nrows(), table.data.ncols())));
    }
    let omega = SymmetricMatrix::new(table.data).map_err(|e| input_err(path, e))?;
    Ok(gwire::graph::neighborhoods_from_precision(&omega, zero))
}

/// Collects output files under one directory.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| input_err(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| input_err(&path, e))?;
        f.write_all(contents).map_err(|e| input_err(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Input(format!("{name}: {e}"));
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        self.write(name, &bytes)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

pub fn dense_rows(m: &DMatrix<f64>) -> impl Iterator<Item = Vec<String>> + '_ {
    (0..m.nrows()).map(move |i| m.row(i).iter().map(|v| v.to_string()).collect())
}
