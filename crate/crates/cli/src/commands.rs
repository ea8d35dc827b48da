use std::path::{Path, PathBuf};
use std::time::Instant;

use gwire::graph::{default_glasso_penalty, glasso as run_glasso, neighborhoods_from_precision};
use gwire::kernels::{estimate, sample_covariance};
use gwire::solver::extract_directions;
use gwire::synthetic::run_scenario;
use gwire::{
    AdmmConfig, CvConfig, CvResult, FitContext, GraphSource, HarnessOptions, KernelKind, LadleResult, Method,
    NeighborhoodGraph, PenaltySpec, Sample, ScenarioSpec, TauScheme, Tolerances,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io::{
    dense_rows, input_err, read_adjacency, read_matrix_csv, read_precision, read_responses, sha256_file,
    AdjacencyFile, CliError, CliResult, OutDir,
};
use crate::{DataArgs, DimArgs, FitArgs, GlassoArgs, SimulateArgs};

const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

/// Provenance written next to every set of outputs. Everything except
/// `wall_time_secs` is a function of the command line and the inputs.
#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    argv: &'a [String],
    config: &'a C,
    tolerances: Tolerances,
    inputs: Vec<InputDigest>,
    seed: u64,
    version: &'static str,
    outputs: Vec<String>,
    wall_time_secs: f64,
}

/// An output body tagged with the manifest it belongs to.
#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    manifest: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

fn tagged<T: Serialize>(body: &T) -> Tagged<'_, T> {
    Tagged { manifest: MANIFEST, body }
}

struct Run<'a> {
    command: &'a str,
    argv: &'a [String],
    start: Instant,
    tol: Tolerances,
    inputs: Vec<PathBuf>,
    seed: u64,
}

impl<'a> Run<'a> {
    fn new(command: &'a str, argv: &'a [String], seed: u64) -> CliResult<Self> {
        let tol = Tolerances::from_env()?;
        Ok(Self { command, argv, start: Instant::now(), tol, inputs: Vec::new(), seed })
    }

    fn admm(&self, eps: Option<f64>) -> CliResult<AdmmConfig> {
        let cfg = AdmmConfig::from_tolerances(&self.tol);
        let cfg = match eps {
            Some(e) => cfg.with_eps(e),
            None => cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn finish<C: Serialize>(self, out: &mut OutDir, config: &C) -> CliResult<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| Ok(InputDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command,
            argv: self.argv,
            config,
            tolerances: self.tol,
            inputs,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            outputs: out.written().to_vec(),
            wall_time_secs: self.start.elapsed().as_secs_f64(),
        };
        out.write_json(MANIFEST, &manifest)
    }
}

fn config_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

/// Predictors, responses and the resolved penalty for `fit` and `dim`.
struct Problem {
    sample: Sample,
    names: Vec<String>,
    penalty: PenaltySpec,
    kind: KernelKind,
}

fn load_problem(a: &DataArgs, run: &mut Run) -> CliResult<Problem> {
    let table = read_matrix_csv(&a.x)?;
    run.inputs.push(a.x.clone());
    let response = read_responses(&a.responses, a.metric, a.bound, &run.tol)?;
    run.inputs.push(a.responses.clone());
    if response.len() != table.data.nrows() {
        return Err(input_err(
            &a.responses,
            format!("{} responses but {} has {} data rows", response.len(), a.x.display(), table.data.nrows()),
        ));
    }
    let sample = Sample::new(table.data, response).map_err(|e| input_err(&a.x, e))?;
    let tau: TauScheme = a.tau.parse()?;
    let kind = match a.kernel.as_str() {
        "wire" => KernelKind::Wire,
        "sir" => KernelKind::Sir { slices: a.slices },
        "cume" => KernelKind::Cume,
        other => return Err(config_err(format!("unknown kernel '{other}' (expected wire, sir or cume)"))),
    };
    let penalty = match a.penalty.as_str() {
        "gwire" => PenaltySpec::Graphical(load_graph(&a.graph, &sample, tau, run)?),
        "swire1" => PenaltySpec::ElementwiseL1,
        "swire2" => PenaltySpec::RowGroup,
        other => return Err(config_err(format!("unknown penalty '{other}' (expected gwire, swire1 or swire2)"))),
    };
    if !matches!(penalty, PenaltySpec::Graphical(_)) && a.graph != "none" {
        log::warn!("--graph is ignored by the {} penalty", a.penalty);
    }
    Ok(Problem { sample, names: table.names, penalty, kind })
}

fn load_graph(spec: &str, sample: &Sample, tau: TauScheme, run: &mut Run) -> CliResult<NeighborhoodGraph> {
    let p = sample.p();
    let graph = match spec {
        "none" => NeighborhoodGraph::singletons(p).with_tau(tau),
        "glasso" => {
            let s = sample_covariance(&sample.x)?;
            let fit = run_glasso(&s, default_glasso_penalty(&s), run.tol.glasso_tol, run.tol.glasso_max_iter)?;
            neighborhoods_from_precision(&fit.precision, run.tol.precision_zero).with_tau(tau)
        }
        path => {
            let path = Path::new(path);
            let graph = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                read_precision(path, p, run.tol.precision_zero)?.with_tau(tau)
            } else {
                read_adjacency(path, p, tau)?
            };
            run.inputs.push(path.to_path_buf());
            graph
        }
    };
    Ok(graph)
}

#[derive(Serialize)]
struct FitOutput {
    penalty: &'static str,
    kernel: &'static str,
    n: usize,
    p: usize,
    d: usize,
    lambda: f64,
    lambda_max: f64,
    /// 1-based predictor indices.
    active_set: Vec<usize>,
    active_names: Vec<String>,
    eigenvalues: Vec<f64>,
    iterations: usize,
    converged: bool,
    kkt_residual: f64,
    feasibility: f64,
    b_hat_file: &'static str,
    directions_file: Option<&'static str>,
    cv: Option<CvResult>,
    ladle: Option<LadleResult>,
}

pub fn fit(a: &FitArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::new("fit", argv, a.data.seed)?;
    let admm = run.admm(a.data.eps)?;
    let prob = load_problem(&a.data, &mut run)?;
    let mut out = OutDir::create(&a.data.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.data.seed);
    let (ladle_seed, cv_seed) = (rng.next_u64(), rng.next_u64());

    let ladle_result = if a.ladle {
        Some(gwire::ladle(&prob.sample, &prob.penalty, prob.kind, a.boot, ladle_seed, admm)?)
    } else {
        None
    };
    let d = match (&ladle_result, a.d) {
        (Some(l), _) => l.d_hat.max(1),
        (None, Some(d)) => d,
        (None, None) => 1,
    };
    if d == 0 || d > prob.sample.p() {
        return Err(config_err(format!("--d must lie in 1..={}", prob.sample.p())));
    }
    let cv = match a.lambda {
        Some(l) if l.is_finite() && l >= 0.0 => None,
        Some(l) => return Err(config_err(format!("--lambda must be a non-negative number, got {l}"))),
        None => {
            let cfg = CvConfig { folds: a.folds, n_lambda: a.n_lambda, min_ratio: a.min_ratio };
            Some(gwire::cross_validate(&prob.sample, &prob.penalty, d, prob.kind, cfg, cv_seed, admm)?)
        }
    };
    let lambda = a.lambda.or(cv.as_ref().map(|c| c.chosen_lambda)).unwrap_or(0.0);

    let kernels = estimate(&prob.sample, prob.kind)?;
    let lambda_max = prob.penalty.lambda_max(&kernels.lambda_hat);
    let result = FitContext::new(&kernels, admm)?.fit(&prob.penalty, lambda)?;
    if !result.converged {
        log::warn!("ADMM hit the iteration cap at lambda {lambda:.4e}");
    }

    let p = prob.sample.p();
    let b = result.b_hat.as_matrix();
    let triplets = (0..p).flat_map(|j| (0..p).map(move |i| (i, j))).filter(|&(i, j)| b[(i, j)] != 0.0);
    out.write_csv(
        "b_hat.csv",
        &["row".into(), "col".into(), "value".into()],
        triplets.map(|(i, j)| vec![(i + 1).to_string(), (j + 1).to_string(), b[(i, j)].to_string()]),
    )?;

    let directions = if result.active_set.is_empty() {
        log::warn!("the fit selected no predictors; no directions written");
        None
    } else {
        let (dirs, _) = extract_directions(&result.b_hat, d)?;
        let mut header = vec!["predictor".to_string(), "name".to_string()];
        header.extend((1..=d).map(|k| format!("beta{k}")));
        let rows = dense_rows(dirs.columns())
            .enumerate()
            .map(|(i, vals)| [vec![(i + 1).to_string(), prob.names[i].clone()], vals].concat())
            .collect::<Vec<_>>();
        out.write_csv("directions.csv", &header, rows)?;
        Some("directions.csv")
    };

    let body = FitOutput {
        penalty: prob.penalty.name(),
        kernel: prob.kind.name(),
        n: prob.sample.n(),
        p,
        d,
        lambda,
        lambda_max,
        active_set: result.active_set.iter().map(|i| i + 1).collect(),
        active_names: result.active_set.iter().map(|&i| prob.names[i].clone()).collect(),
        eigenvalues: result.eigenvalues.clone(),
        iterations: result.iterations,
        converged: result.converged,
        kkt_residual: result.kkt_residual,
        feasibility: result.feasibility,
        b_hat_file: "b_hat.csv",
        directions_file: directions,
        cv,
        ladle: ladle_result,
    };
    out.write_json("fit.json", &tagged(&body))?;
    run.finish(&mut out, a)
}

pub fn dim(a: &DimArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::new("dim", argv, a.data.seed)?;
    let admm = run.admm(a.data.eps)?;
    let prob = load_problem(&a.data, &mut run)?;
    let mut out = OutDir::create(&a.data.out)?;
    let ladle_seed = ChaCha8Rng::seed_from_u64(a.data.seed).next_u64();
    let result = gwire::ladle(&prob.sample, &prob.penalty, prob.kind, a.boot, ladle_seed, admm)?;
    out.write_json("ladle.json", &tagged(&result))?;
    let rows = result
        .f_values
        .iter()
        .zip(&result.h_values)
        .enumerate()
        .map(|(k, (f, h))| vec![k.to_string(), f.to_string(), h.to_string(), (f + h).to_string()]);
    out.write_csv("ladle_curves.csv", &["k".into(), "f".into(), "h".into(), "f_plus_h".into()], rows)?;
    run.finish(&mut out, a)
}

fn resolve_scenario(a: &SimulateArgs, run: &mut Run) -> CliResult<ScenarioSpec> {
    let mut spec = match &a.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
            run.inputs.push(path.clone());
            serde_json::from_str::<ScenarioSpec>(&text).map_err(|e| input_err(path, e))?
        }
        None => {
            let missing = |what: &str| config_err(format!("--{what} is required without --scenario"));
            ScenarioSpec {
                example: a.example.ok_or_else(|| missing("example"))?,
                n: a.n.ok_or_else(|| missing("n"))?,
                p: a.p.ok_or_else(|| missing("p"))?,
                covariance: gwire::CovarianceKind::Sigma1,
                seed: 0,
                replicates: 20,
            }
        }
    };
    if let Some(v) = a.example {
        spec.example = v;
    }
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.p {
        spec.p = v;
    }
    if let Some(v) = &a.covariance {
        spec.covariance = v.parse()?;
    }
    if let Some(v) = a.reps {
        spec.replicates = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn simulate(a: &SimulateArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::new("simulate", argv, 0)?;
    let spec = resolve_scenario(a, &mut run)?;
    run.seed = spec.seed;
    let method: Method = a.method.parse()?;
    let mut opts = HarnessOptions::new(method);
    opts.graph = a.graph.parse::<GraphSource>()?;
    opts.use_true_d = !a.ladle;
    opts.boot = a.boot;
    opts.slices = a.slices;
    opts.cv = CvConfig { folds: a.folds, n_lambda: a.n_lambda, ..CvConfig::default() };
    opts.tolerances = run.tol;
    opts.admm = run.admm(a.eps)?;
    let mut out = OutDir::create(&a.out)?;

    let report = run_scenario(&spec, &opts)?;
    out.write_json("report.json", &tagged(&report))?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    let rows = report.records.iter().map(|r| {
        vec![
            r.replicate.to_string(),
            r.seed.to_string(),
            opt(r.general_loss.map(|v| v.to_string())),
            opt(r.true_recovery.map(|v| v.to_string())),
            opt(r.false_positive.map(|v| v.to_string())),
            opt(r.false_negative.map(|v| v.to_string())),
            opt(r.d_hat.map(|v| v.to_string())),
            opt(r.lambda.map(|v| v.to_string())),
            opt(r.iterations.map(|v| v.to_string())),
            opt(r.converged.map(|v| v.to_string())),
            opt(r.active_size.map(|v| v.to_string())),
            opt(r.error.clone()),
        ]
    });
    let header = [
        "replicate", "seed", "general_loss", "true_recovery", "false_positive", "false_negative", "d_hat", "lambda",
        "iterations", "converged", "active_size", "error",
    ];
    out.write_csv("replicates.csv", &header.map(String::from), rows)?;
    let summary = report
        .summary
        .iter()
        .map(|(k, s)| vec![k.clone(), s.mean.to_string(), s.sd.to_string(), s.count.to_string()]);
    out.write_csv("summary.csv", &["field", "mean", "sd", "count"].map(String::from), summary)?;
    run.finish(&mut out, a)?;
    if report.failures == report.records.len() {
        return Err(CliError::Numerical(format!(
            "all {} replicates failed; first error: {}",
            report.failures,
            report.records[0].error.as_deref().unwrap_or("unknown")
        )));
    }
    Ok(())
}

pub fn glasso(a: &GlassoArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::new("glasso", argv, 0)?;
    let table = read_matrix_csv(&a.x)?;
    run.inputs.push(a.x.clone());
    if table.data.nrows() < 2 {
        return Err(input_err(&a.x, "need at least two data rows"));
    }
    let s = sample_covariance(&table.data)?;
    let penalty = a.penalty.unwrap_or_else(|| default_glasso_penalty(&s));
    let fit = run_glasso(&s, penalty, run.tol.glasso_tol, run.tol.glasso_max_iter)?;
    if !fit.converged {
        log::warn!("glasso stopped after {} sweeps without converging", fit.iterations);
    }
    let mut out = OutDir::create(&a.out)?;
    out.write_csv("precision.csv", &table.names, dense_rows(fit.precision.as_matrix()))?;
    let graph = neighborhoods_from_precision(&fit.precision, run.tol.precision_zero);
    let mut adj = AdjacencyFile::from_graph(&graph, table.names);
    adj.penalty = Some(penalty);
    adj.manifest = Some(MANIFEST.into());
    out.write_json("adjacency.json", &adj)?;
    run.finish(&mut out, a)
}
