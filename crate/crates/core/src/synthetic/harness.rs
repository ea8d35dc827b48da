use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate, make_omega, selection_metrics, CovarianceKind, Dataset, GenOptions};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::graph::{default_glasso_penalty, glasso, neighborhoods_from_precision, NeighborhoodGraph};
use crate::kernels::{sample_covariance, KernelKind};
use crate::matrix::orthonormal_columns;
use crate::par;
use crate::selection::{cross_validate, ladle, CvConfig};
use crate::solver::{extract_directions, AdmmConfig, FitContext, PenaltySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub example: u8,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_covariance")]
    pub covariance: CovarianceKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_covariance() -> CovarianceKind {
    CovarianceKind::Sigma1
}

fn default_replicates() -> usize {
    20
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.example) {
            return Err(Error::Configuration(format!("example must be 1 to 4, got {}", self.example)));
        }
        if self.p < super::BLOCK_DIM {
            return Err(Error::Configuration(format!("p must be at least {}, got {}", super::BLOCK_DIM, self.p)));
        }
        if self.n < 2 {
            return Err(Error::Configuration(format!("n must be at least 2, got {}", self.n)));
        }
        if self.replicates == 0 {
            return Err(Error::Configuration("replicates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gwire,
    Swire1,
    Swire2,
    Gsir,
    Gcume,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gwire" => Ok(Method::Gwire),
            "swire1" => Ok(Method::Swire1),
            "swire2" => Ok(Method::Swire2),
            "gsir" => Ok(Method::Gsir),
            "gcume" => Ok(Method::Gcume),
            other => Err(Error::Configuration(format!(
                "unknown method '{other}' (expected gwire, swire1, swire2, gsir or gcume)"
            ))),
        }
    }
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gwire => "gwire",
            Method::Swire1 => "swire1",
            Method::Swire2 => "swire2",
            Method::Gsir => "gsir",
            Method::Gcume => "gcume",
        }
    }

    pub fn penalty(&self, graph: NeighborhoodGraph) -> PenaltySpec {
        match self {
            Method::Swire1 => PenaltySpec::ElementwiseL1,
            Method::Swire2 => PenaltySpec::RowGroup,
            _ => PenaltySpec::Graphical(graph),
        }
    }

    pub fn kernel(&self, slices: usize) -> KernelKind {
        match self {
            Method::Gsir => KernelKind::Sir { slices },
            Method::Gcume => KernelKind::Cume,
            _ => KernelKind::Wire,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSource {
    Oracle,
    Glasso,
}

impl FromStr for GraphSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(GraphSource::Oracle),
            "glasso" => Ok(GraphSource::Glasso),
            other => Err(Error::Configuration(format!("unknown graph source '{other}' (expected oracle or glasso)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnessOptions {
    pub method: Method,
    pub graph: GraphSource,
    pub use_true_d: bool,
    pub slices: usize,
    pub boot: usize,
    pub cv: CvConfig,
    pub admm: AdmmConfig,
    /// Defaults to a tenth of the largest off-diagonal sample covariance.
    pub glasso_penalty: Option<f64>,
    pub tolerances: Tolerances,
    pub generator: GenOptions,
}

impl HarnessOptions {
    pub fn new(method: Method) -> Self {
        let tolerances = Tolerances::default();
        Self {
            method,
            graph: GraphSource::Oracle,
            use_true_d: true,
            slices: 10,
            boot: 100,
            cv: CvConfig::default(),
            admm: AdmmConfig::from_tolerances(&tolerances),
            glasso_penalty: None,
            tolerances,
            generator: GenOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub general_loss: Option<f64>,
    pub true_recovery: Option<u8>,
    pub false_positive: Option<usize>,
    pub false_negative: Option<usize>,
    pub d_hat: Option<usize>,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub active_size: Option<usize>,
    pub error: Option<String>,
    /// Kept out of serialized reports so that reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl ReplicateRecord {
    fn failed(replicate: usize, seed: u64, err: &Error, wall: f64) -> Self {
        Self {
            replicate,
            seed,
            general_loss: None,
            true_recovery: None,
            false_positive: None,
            false_negative: None,
            d_hat: None,
            lambda: None,
            iterations: None,
            converged: None,
            active_size: None,
            error: Some(err.to_string()),
            wall_time_secs: wall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub mean: f64,
    /// Sample standard deviation (divisor `count - 1`).
    pub sd: f64,
    pub count: usize,
}

impl FieldSummary {
    pub(crate) fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, count: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ScenarioSpec,
    pub options: HarnessOptions,
    pub records: Vec<ReplicateRecord>,
    pub summary: BTreeMap<String, FieldSummary>,
    pub failures: usize,
}

impl ExperimentReport {
    pub fn mean(&self, field: &str) -> Option<f64> {
        self.summary.get(field).map(|s| s.mean)
    }

    pub fn total_wall_time(&self) -> f64 {
        self.records.iter().map(|r| r.wall_time_secs).sum()
    }
}

/// Seed of replicate `r`: the first draw of stream `r` of a generator keyed by
/// the scenario seed, so any subset of replicates can be rerun on its own.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng.next_u64()
}

/// Distance between spans that tolerates different dimensions.
fn span_distance(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> Result<f64> {
    let qa = orthonormal_columns(a)?;
    let qb = orthonormal_columns(b)?;
    let cross = (qa.transpose() * &qb).norm_squared();
    Ok((qa.ncols() as f64 + qb.ncols() as f64 - 2.0 * cross).max(0.0).sqrt())
}

fn build_graph(data: &Dataset, spec: &ScenarioSpec, opts: &HarnessOptions) -> Result<NeighborhoodGraph> {
    match opts.graph {
        GraphSource::Oracle => Ok(neighborhoods_from_precision(&make_omega(spec.covariance, spec.p)?, 1e-8)),
        GraphSource::Glasso => {
            let s = sample_covariance(&data.sample.x)?;
            let penalty = opts.glasso_penalty.unwrap_or_else(|| default_glasso_penalty(&s));
            let fit = glasso(&s, penalty, opts.tolerances.glasso_tol, opts.tolerances.glasso_max_iter)?;
            Ok(neighborhoods_from_precision(&fit.precision, opts.tolerances.precision_zero))
        }
    }
}

/// One full pipeline: generate, build the graph, pick `d` and `lambda`, fit, score.
pub fn run_replicate(spec: &ScenarioSpec, opts: &HarnessOptions, r: usize) -> ReplicateRecord {
    let seed = replicate_seed(spec.seed, r);
    let start = Instant::now();
    match replicate_inner(spec, opts, r, seed, start) {
        Ok(rec) => rec,
        Err(e) => {
            log::warn!("replicate {r} failed: {e}");
            let wrapped = Error::AtReplicate { replicate: r, source: Box::new(e) };
            ReplicateRecord::failed(r, seed, &wrapped, start.elapsed().as_secs_f64())
        }
    }
}

fn replicate_inner(
    spec: &ScenarioSpec,
    opts: &HarnessOptions,
    r: usize,
    seed: u64,
    start: Instant,
) -> Result<ReplicateRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate(spec.example, spec.n, spec.p, spec.covariance, opts.generator, &mut rng)?;
    let graph = build_graph(&data, spec, opts)?;
    let penalty = opts.method.penalty(graph);
    let kind = opts.method.kernel(opts.slices);
    let d_hat = if opts.use_true_d {
        None
    } else {
        Some(ladle(&data.sample, &penalty, kind, opts.boot, rng.next_u64(), opts.admm)?.d_hat)
    };
    let d = d_hat.unwrap_or(data.d).max(1);
    let cv = cross_validate(&data.sample, &penalty, d, kind, opts.cv, rng.next_u64(), opts.admm)?;
    let kernels = crate::kernels::estimate(&data.sample, kind)?;
    let fit = FitContext::new(&kernels, opts.admm)?.fit(&penalty, cv.chosen_lambda)?;
    let (beta_hat, _) = extract_directions(&fit.b_hat, d)?;
    let loss = span_distance(beta_hat.columns(), data.beta.columns())?;
    let sel = selection_metrics(&fit.active_set, &data.support, spec.p)?;
    log::debug!("replicate {r}: loss {loss:.4}, |S| {}, lambda {:.4e}", fit.active_set.len(), cv.chosen_lambda);
    Ok(ReplicateRecord {
        replicate: r,
        seed,
        general_loss: Some(loss),
        true_recovery: Some(sel.true_recovery),
        false_positive: Some(sel.false_positive),
        false_negative: Some(sel.false_negative),
        d_hat,
        lambda: Some(cv.chosen_lambda),
        iterations: Some(fit.iterations),
        converged: Some(fit.converged),
        active_size: Some(fit.active_set.len()),
        error: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// All replicates of a scenario (in parallel when enabled) plus mean and sd
/// of each accuracy measure over the successful ones.
pub fn run_scenario(spec: &ScenarioSpec, opts: &HarnessOptions) -> Result<ExperimentReport> {
    spec.validate()?;
    opts.admm.validate()?;
    let records = par::map_range(spec.replicates, |r| run_replicate(spec, opts, r));
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mut summary = BTreeMap::new();
    let mut add = |name: &str, vals: Vec<f64>| {
        if let Some(s) = FieldSummary::of(&vals) {
            summary.insert(name.to_string(), s);
        }
    };
    add("general_loss", ok.iter().filter_map(|r| r.general_loss).collect());
    add("true_recovery", ok.iter().filter_map(|r| r.true_recovery.map(f64::from)).collect());
    add("false_positive", ok.iter().filter_map(|r| r.false_positive.map(|v| v as f64)).collect());
    add("false_negative", ok.iter().filter_map(|r| r.false_negative.map(|v| v as f64)).collect());
    if !opts.use_true_d {
        let truth = if matches!(spec.example, 2 | 4) { 2 } else { 1 };
        add("d_hat", ok.iter().filter_map(|r| r.d_hat.map(|v| v as f64)).collect());
        add(
            "d_correct",
            ok.iter().filter_map(|r| r.d_hat.map(|v| f64::from(u8::from(v == truth)))).collect(),
        );
    }
    let failures = records.len() - ok.len();
    Ok(ExperimentReport { spec: *spec, options: *opts, records, summary, failures })
}
