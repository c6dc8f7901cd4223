//! The `probdr` command line: embed, predict, sample and compare.
//!
//! Settings come from an optional JSON config (unknown keys are rejected)
//! overlaid with command-line flags. Failures print one JSON line on stderr
//! and exit with 2 (config), 3 (data) or 4 (numerical).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{ErrorClass, ProbDrError, Result};
use crate::eval::{procrustes, silhouette, ProcrustesMode};
use crate::io::{numbered_header, read_csv, read_labels, write_csv, write_json};
use crate::neighbor::write_trace_jsonl;
use crate::rng::SeededRng;
use crate::types::DataMatrix;
use crate::workflow::{
    run_embed, run_predict, run_sample, smoothness_spearman, Algorithm, OptimizerSettings, PredictSettings,
    SampleSettings,
};

/// Version of the metadata and report layout.
pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Parser)]
#[command(name = "probdr", version, about = "Dimensionality reduction as probabilistic inference")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Named settings bundle; `fig5` configures `sample`.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a data CSV with any supported algorithm.
    Embed {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Algorithm as a name (e.g. `pca`) or a JSON object.
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        q: Option<usize>,
    },
    /// Predict test rows through a graph Gaussian process.
    Predict {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Draw latents, a graph and Gaussian columns from the generative model.
    Sample {
        #[arg(long)]
        n: Option<usize>,
        /// Diffusion time of the exp(-tL) covariance.
        #[arg(long)]
        t: Option<f64>,
    },
    /// Compare two embeddings.
    Compare {
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

/// Resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub embedding_a: Option<PathBuf>,
    pub embedding_b: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub q: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Also write per-point predictive variances in `predict`.
    pub emit_variance: bool,
    pub optimizer: OptimizerSettings,
    pub predict: PredictSettings,
    pub sample: SampleSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            train: None,
            test: None,
            truth: None,
            embedding_a: None,
            embedding_b: None,
            labels: None,
            algorithm: None,
            q: 2,
            seed: 0,
            out: None,
            emit_variance: false,
            optimizer: OptimizerSettings::default(),
            predict: PredictSettings::default(),
            sample: SampleSettings::default(),
        }
    }
}

const TAG_KEYS: [&str; 4] = ["name", "law", "kind", "mode"];

/// Overlays `patch` on `base`. Objects merge key by key unless the patch
/// carries an enum tag, in which case it replaces the base wholesale.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if !TAG_KEYS.iter().any(|k| p.contains_key(*k)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

fn config_error(msg: impl std::fmt::Display) -> ProbDrError {
    ProbDrError::Config(msg.to_string())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut base = RunConfig::default();
    match cli.preset.as_deref() {
        None => {}
        Some("fig5") => base.sample = SampleSettings::fig5(),
        Some(other) => return Err(config_error(format!("unknown preset {other:?}; available: fig5"))),
    }
    let mut value = serde_json::to_value(&base).map_err(config_error)?;
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(config_error(format!("{}: config must be a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    let mut overrides = Map::new();
    let mut set = |key: &str, v: Value| {
        overrides.insert(key.to_string(), v);
    };
    if let Some(seed) = cli.seed {
        set("seed", json!(seed));
    }
    if let Some(out) = &cli.out {
        set("out", json!(out));
    }
    match &cli.command {
        Command::Embed { input, algorithm, q } => {
            if let Some(p) = input {
                set("input", json!(p));
            }
            if let Some(a) = algorithm {
                let parsed = if a.trim_start().starts_with('{') {
                    serde_json::from_str::<Value>(a).map_err(|e| config_error(format!("--algorithm: {e}")))?
                } else {
                    json!({ "name": a })
                };
                set("algorithm", parsed);
            }
            if let Some(q) = q {
                set("q", json!(q));
            }
        }
        Command::Predict { train, test, truth } => {
            for (key, v) in [("train", train), ("test", test), ("truth", truth)] {
                if let Some(p) = v {
                    set(key, json!(p));
                }
            }
        }
        Command::Sample { n, t } => {
            let mut sample = Map::new();
            if let Some(n) = n {
                sample.insert("n".into(), json!(n));
            }
            if let Some(t) = t {
                sample.insert("prior".into(), json!({ "hyper": { "t": t } }));
            }
            if !sample.is_empty() {
                set("sample", Value::Object(sample));
            }
        }
        Command::Compare { a, b, labels } => {
            for (key, v) in [("embedding_a", a), ("embedding_b", b), ("labels", labels)] {
                if let Some(p) = v {
                    set(key, json!(p));
                }
            }
        }
    }
    merge(&mut value, Value::Object(overrides));
    serde_json::from_value(value).map_err(|e| config_error(format!("invalid configuration: {e}")))
}

/// The configuration as recorded in outputs. The output directory is left out
/// so that identical runs written to different places produce identical files.
fn recorded(cfg: &RunConfig) -> RunConfig {
    RunConfig { out: None, ..cfg.clone() }
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    value.as_ref().ok_or_else(|| config_error(format!("missing {what}")))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| ProbDrError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn load_data(path: &Path) -> Result<(Option<Vec<String>>, DataMatrix)> {
    let table = read_csv(path)?;
    let data = DataMatrix::new(table.values).map_err(|e| ProbDrError::Data(format!("{}: {e}", path.display())))?;
    Ok((table.header, data))
}

fn cmd_embed(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let input = required(&cfg.input, "input data path (`input` or --input)")?;
    let algorithm = cfg.algorithm.as_ref().ok_or_else(|| config_error("missing algorithm"))?;
    let (_, y) = load_data(input)?;
    let outcome = run_embed(&y, algorithm, cfg.q, &cfg.optimizer, cfg.seed)?;
    let dir = out_dir(cfg)?;
    let emb_path = dir.join("embedding.csv");
    write_csv(&emb_path, &numbered_header("x", cfg.q), outcome.embedding.values())?;
    let mut written = vec![emb_path];
    let trace_name = match &outcome.trace {
        Some(trace) => {
            let p = dir.join("trace.jsonl");
            write_trace_jsonl(&p, trace)?;
            written.push(p);
            Some("trace.jsonl")
        }
        None => None,
    };
    let noise_kind = match algorithm.as_spectral().map(|s| s.tag()) {
        Some("le" | "lle") => Some("beta"),
        Some(_) => Some("sigma2"),
        None => None,
    };
    let meta = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "embed",
        "algorithm": algorithm.tag(),
        "config": recorded(cfg),
        "seed": cfg.seed,
        "rng": SeededRng::ALGORITHM,
        "n": y.n(),
        "q": cfg.q,
        "noise": outcome.noise,
        "noise_kind": noise_kind,
        "clamped_radicand": outcome.clamped_radicand,
        "trace": trace_name,
        "initial_loss": outcome.trace.as_ref().and_then(|t| t.first()).map(|e| e.loss),
        "final_loss": outcome.trace.as_ref().and_then(|t| t.last()).map(|e| e.loss),
        "calibration_warnings": outcome.calibration_warnings,
        "clamped_probabilities": outcome.clamped_probabilities,
    });
    let meta_path = dir.join("metadata.json");
    write_json(&meta_path, &meta)?;
    written.push(meta_path);
    Ok(written)
}

fn cmd_predict(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (header, train) = load_data(required(&cfg.train, "training data path (`train` or --train)")?)?;
    let (_, test) = load_data(required(&cfg.test, "test data path (`test` or --test)")?)?;
    let truth = match &cfg.truth {
        Some(p) => Some(read_csv(p)?.values),
        None => None,
    };
    let outcome = run_predict(&train, &test, &cfg.predict, cfg.seed)?;
    let scores = match &truth {
        Some(t) => {
            let (r, b) = outcome.score(t).map_err(|e| ProbDrError::Data(format!("truth: {e}")))?;
            (Some(r), Some(b))
        }
        None => (None, None),
    };
    let dir = out_dir(cfg)?;
    let header = header.unwrap_or_else(|| numbered_header("f", train.d()));
    let mut written = Vec::new();
    let mut emit = |name: &str, header: &[String], m: &nalgebra::DMatrix<f64>| -> Result<()> {
        let p = dir.join(name);
        write_csv(&p, header, m)?;
        written.push(p);
        Ok(())
    };
    emit("predictions.csv", &header, &outcome.mean)?;
    let q = cfg.predict.q;
    emit("train_embedding.csv", &numbered_header("x", q), outcome.x_train.values())?;
    emit("test_embedding.csv", &numbered_header("x", q), outcome.x_test.values())?;
    if cfg.emit_variance {
        let v = nalgebra::DMatrix::from_column_slice(outcome.variance.len(), 1, &outcome.variance);
        emit("variances.csv", &["variance".to_string()], &v)?;
    }
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "predict",
        "config": recorded(cfg),
        "seed": cfg.seed,
        "rng": SeededRng::ALGORITHM,
        "rmse": scores.0,
        "baseline_rmse": scores.1,
        "hyper": outcome.hyper,
        "fit_iterations": outcome.fit_trace.len().saturating_sub(1),
        "final_loglik_per_element": outcome.fit_trace.last(),
    });
    let p = dir.join("report.json");
    write_json(&p, &report)?;
    written.push(p);
    Ok(written)
}

fn cmd_sample(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let outcome = run_sample(&cfg.sample, cfg.seed)?;
    let dir = out_dir(cfg)?;
    let latent_path = dir.join("latent.csv");
    write_csv(&latent_path, &numbered_header("x", cfg.sample.latent_dim), outcome.latent.values())?;
    let edges = outcome.adjacency.edges();
    let edge_matrix = nalgebra::DMatrix::from_fn(edges.len(), 2, |r, c| if c == 0 { edges[r].0 as f64 } else { edges[r].1 as f64 });
    let edges_path = dir.join("edges.csv");
    write_csv(&edges_path, &["i".to_string(), "j".to_string()], &edge_matrix)?;
    let samples_path = dir.join("samples.csv");
    write_csv(&samples_path, &numbered_header("y", outcome.y.ncols()), &outcome.y)?;
    let smooth = if outcome.y.ncols() >= 2 { smoothness_spearman(outcome.latent.values(), &outcome.y).ok() } else { None };
    let meta = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "sample",
        "config": recorded(cfg),
        "seed": cfg.seed,
        "rng": SeededRng::ALGORITHM,
        "edges": edges.len(),
        "spearman_covariance_vs_distance": smooth,
    });
    let meta_path = dir.join("metadata.json");
    write_json(&meta_path, &meta)?;
    Ok(vec![latent_path, edges_path, samples_path, meta_path])
}

fn cmd_compare(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let a = read_csv(required(&cfg.embedding_a, "first embedding (`embedding_a` or --a)")?)?.values;
    let b = read_csv(required(&cfg.embedding_b, "second embedding (`embedding_b` or --b)")?)?.values;
    let residual = procrustes(&a, &b, ProcrustesMode::Similarity).map_err(|e| ProbDrError::Data(e.to_string()))?.residual;
    let (sa, sb) = match &cfg.labels {
        Some(p) => {
            let labels = read_labels(p)?;
            let s = |m| silhouette(m, &labels).map_err(|e| ProbDrError::Data(format!("labels: {e}")));
            (Some(s(&a)?), Some(s(&b)?))
        }
        None => (None, None),
    };
    let dir = out_dir(cfg)?;
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "compare",
        "config": recorded(cfg),
        "procrustes_residual": residual,
        "silhouette_a": sa,
        "silhouette_b": sb,
    });
    let p = dir.join("report.json");
    write_json(&p, &report)?;
    Ok(vec![p])
}

/// Process exit code for an error class.
pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    }
}

fn report_error(class: ErrorClass, message: &str) -> i32 {
    let code = exit_code(class);
    eprintln!("{}", json!({ "error": class_name(class), "exit_code": code, "message": message }));
    code
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            return report_error(ErrorClass::Config, &first);
        }
    };
    let result = resolve(&cli).and_then(|cfg| match cli.command {
        Command::Embed { .. } => cmd_embed(&cfg),
        Command::Predict { .. } => cmd_predict(&cfg),
        Command::Sample { .. } => cmd_sample(&cfg),
        Command::Compare { .. } => cmd_compare(&cfg),
    });
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => report_error(e.class(), &e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_replaces_tagged_objects() {
        let mut base = json!({"a": {"law": "bernoulli", "a": 1.0, "b": 1.0}, "n": 3, "m": {"x": 1, "y": 2}});
        merge(&mut base, json!({"a": {"law": "categorical", "family": "tsne"}, "m": {"y": 5}}));
        assert_eq!(base, json!({"a": {"law": "categorical", "family": "tsne"}, "n": 3, "m": {"x": 1, "y": 5}}));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let cli = Cli::try_parse_from(["probdr", "embed", "--algorithm", r#"{"name":"pca","oops":1}"#]).unwrap();
        let err = resolve(&cli).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Config);
    }

    #[test]
    fn preset_fig5_sets_sample_chain() {
        let cli = Cli::try_parse_from(["probdr", "sample", "--preset", "fig5", "--t", "0"]).unwrap();
        let cfg = resolve(&cli).unwrap();
        assert_eq!(cfg.sample.n, 200);
        assert_eq!(cfg.sample.prior.hyper.t, 0.0);
        let bad = Cli::try_parse_from(["probdr", "sample", "--preset", "nope"]).unwrap();
        assert!(resolve(&bad).is_err());
    }
}
