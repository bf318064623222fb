use clap::{Args, Parser, Subcommand, ValueEnum};
use mixture_evidence::dpm::GammaPrior;
use mixture_evidence::harness::bf::write_bf_cells;
use mixture_evidence::harness::{
    bf_paths, manifest_path, preset, run, write_records, write_run, AlphaSpec, BfConfig, RunConfig, SyntheticSpec, PRESET_NAMES,
};
use mixture_evidence::oracle::{dpm_exact_evidence, fm_exact_evidence, DEFAULT_QUAD_NODES};
use mixture_evidence::{conjugate::hyperparams_from_data, EvidenceError};
use serde_json::{json, Map, Value};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "evidence", version, about = "Marginal likelihood estimation for Gaussian mixtures")]
struct Cli {
    /// Worker threads (overrides EVIDENCE_WORKERS; default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-mixture evidence.
    Fm(RunArgs),
    /// Dirichlet process mixture evidence.
    Dpm(RunArgs),
    /// Exact evidence by enumeration (small n only).
    Oracle(OracleArgs),
    /// Bayes factors of a finite mixture against a DPM on nested samples.
    BfPaths(BfArgs),
    /// List tuning presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<String>,
    /// Number of components (fm only).
    #[arg(long)]
    k: Option<usize>,
    /// Data file, one value per line.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Multiply the data by this factor.
    #[arg(long)]
    scale: Option<f64>,
    /// Use only the first n observations.
    #[arg(long)]
    take: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    preset: Option<String>,
    /// Tuning override, repeatable: `--tuning T=5000`.
    #[arg(long, value_parser = parse_kv)]
    tuning: Vec<(String, f64)>,
    /// Symmetric Dirichlet concentration (fm only).
    #[arg(long)]
    alpha: Option<f64>,
    /// Gamma prior on the DP concentration, shape and rate (dpm only).
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    gamma_prior: Option<Vec<f64>>,
    /// Reference log evidence; also writes squared error vs time.
    #[arg(long)]
    reference: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleModel {
    Fm,
    Dpm,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_enum)]
    model: OracleModel,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    take: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    gamma_prior: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_QUAD_NODES)]
    nodes: usize,
}

#[derive(Args)]
struct BfArgs {
    /// JSON bf-paths config; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Null model: 1 (N(0, 2^2)) or 3 (three-component mixture).
    #[arg(long)]
    k0: Option<usize>,
    /// Strictly increasing sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    datasets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_kv)]
    numerator_tuning: Vec<(String, f64)>,
    #[arg(long, value_parser = parse_kv)]
    denominator_tuning: Vec<(String, f64)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_kv(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn read_json(path: &PathBuf) -> Result<Value, EvidenceError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvidenceError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| EvidenceError::Config(format!("{}: {e}", path.display())))
}

fn object(v: &mut Value) -> Result<&mut Map<String, Value>, EvidenceError> {
    v.as_object_mut().ok_or_else(|| EvidenceError::Config("config must be a JSON object".into()))
}

fn build_run_config(a: &RunArgs, dpm: bool) -> Result<RunConfig, EvidenceError> {
    let mut v = match &a.config {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    let o = object(&mut v)?;
    if dpm {
        if a.k.is_some() || a.alpha.is_some() {
            return Err(EvidenceError::Config("--k and --alpha apply to fm only".into()));
        }
        o.insert("model".into(), json!({"type": "dpm"}));
    } else {
        if a.gamma_prior.is_some() {
            return Err(EvidenceError::Config("--gamma-prior applies to dpm only".into()));
        }
        match a.k {
            Some(k) => {
                o.insert("model".into(), json!({"type": "fm", "k": k}));
            }
            None if !o.contains_key("model") => return Err(EvidenceError::Config("--k is required".into())),
            None => {}
        }
    }
    if let Some(e) = &a.estimator {
        let id: mixture_evidence::EstimatorId = e.parse()?;
        o.insert("estimator".into(), json!(id));
    }
    if let Some(p) = &a.data {
        o.insert("dataset".into(), json!({"file": {"path": p}}));
    }
    if a.scale.is_some() || a.take.is_some() {
        let file = o
            .get_mut("dataset")
            .and_then(|d| d.get_mut("file"))
            .and_then(Value::as_object_mut)
            .ok_or_else(|| EvidenceError::Config("--scale/--take need a file dataset".into()))?;
        if let Some(s) = a.scale {
            file.insert("scale".into(), json!(s));
        }
        if let Some(t) = a.take {
            file.insert("take".into(), json!(t));
        }
    }
    let mut set = |key: &str, val: Option<Value>| {
        if let Some(val) = val {
            o.insert(key.into(), val);
        }
    };
    set("repetitions", a.reps.map(|r| json!(r)));
    set("seed", a.seed.map(|s| json!(s)));
    set("preset", a.preset.as_ref().map(|p| json!(p)));
    set("alpha", a.alpha.map(|x| json!(x)));
    set("gamma_prior", a.gamma_prior.as_ref().map(|g| json!({"a": g[0], "b": g[1]})));
    set("reference", a.reference.map(|r| json!(r)));
    set("output", a.out.as_ref().map(|p| json!(p)));
    if !a.tuning.is_empty() {
        let t = o.entry("tuning").or_insert_with(|| json!({}));
        let t = t.as_object_mut().ok_or_else(|| EvidenceError::Config("tuning must be an object".into()))?;
        for (k, val) in &a.tuning {
            t.insert(k.clone(), json!(val));
        }
    }
    RunConfig::from_json(&v.to_string())
}

fn cmd_run(a: &RunArgs, dpm: bool, workers: Option<usize>) -> Result<(), EvidenceError> {
    let cfg = build_run_config(a, dpm)?;
    let out = run(&cfg, workers)?;
    eprintln!("dataset: n = {}, sha256 = {}", out.dataset.len(), out.dataset.checksum);
    match &cfg.output {
        Some(path) => {
            write_run(&out, path)?;
            eprintln!("wrote {} and {}", path.display(), manifest_path(path).display());
        }
        None => write_records(&out.records, std::io::stdout().lock())?,
    }
    let failures = out.records.iter().filter(|r| r.log_evidence.is_none()).count();
    if failures > 0 {
        eprintln!("{failures} of {} repetitions failed", out.records.len());
    }
    if let Some(m) = &out.mse {
        eprintln!("mse vs reference {}: {:.6}", m.reference, m.mse);
        if let Some((slope, icept)) = m.loglog_fit {
            eprintln!("log-log fit: slope {slope:.4}, intercept {icept:.4}");
        }
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<(), EvidenceError> {
    let mut y = mixture_evidence::harness::ingest_dataset(&a.data)?.values;
    if let Some(t) = a.take {
        y.truncate(t);
    }
    if let Some(s) = a.scale {
        y.iter_mut().for_each(|v| *v *= s);
    }
    let prior = hyperparams_from_data(&y)?;
    let value = match a.model {
        OracleModel::Fm => {
            let k = a.k.ok_or_else(|| EvidenceError::Config("--k is required for the fm oracle".into()))?;
            fm_exact_evidence(&y, k, &prior, &AlphaSpec::Symmetric(a.alpha).resolve(k)?)?
        }
        OracleModel::Dpm => {
            let g = match &a.gamma_prior {
                Some(g) => GammaPrior::new(g[0], g[1])?,
                None => GammaPrior::default(),
            };
            dpm_exact_evidence(&y, &prior, &g, a.nodes)?
        }
    };
    println!("{value}");
    Ok(())
}

fn cmd_bf(a: &BfArgs, workers: Option<usize>) -> Result<(), EvidenceError> {
    let mut v = match &a.config {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    let o = object(&mut v)?;
    if let Some(k0) = a.k0 {
        let null = match k0 {
            1 => SyntheticSpec::normal_null(0, 0),
            3 => SyntheticSpec::three_component_null(0, 0),
            _ => return Err(EvidenceError::Config("--k0 must be 1 or 3; use --config for other nulls".into())),
        };
        o.insert("null".into(), serde_json::to_value(null).expect("spec serializes"));
    }
    if let Some(seed) = a.seed {
        o.insert("seed".into(), json!(seed));
        if let Some(n) = o.get_mut("null").and_then(Value::as_object_mut) {
            n.insert("seed".into(), json!(seed));
        }
    }
    if let Some(g) = &a.grid {
        o.insert("grid".into(), json!(g));
    }
    if let Some(d) = a.datasets {
        o.insert("datasets".into(), json!(d));
    }
    let mut cfg: BfConfig = serde_json::from_value(v).map_err(|e| EvidenceError::Config(e.to_string()))?;
    cfg.numerator.tuning.extend(a.numerator_tuning.iter().cloned());
    cfg.denominator.tuning.extend(a.denominator_tuning.iter().cloned());
    let report = bf_paths(&cfg, workers)?;
    match &a.out {
        Some(p) => {
            write_bf_cells(&report.cells, std::fs::File::create(p)?)?;
            let summary = json!({
                "config": cfg,
                "positive_fraction": report.positive_fraction,
                "library_version": mixture_evidence::harness::LIBRARY_VERSION,
            });
            std::fs::write(manifest_path(p), serde_json::to_string_pretty(&summary).expect("serializes"))?;
        }
        None => write_bf_cells(&report.cells, std::io::stdout().lock())?,
    }
    for (n, f) in &report.positive_fraction {
        eprintln!("n = {n}: P(log BF > 0) = {f:.3}");
    }
    Ok(())
}

fn cmd_presets() {
    for name in PRESET_NAMES {
        let p = preset(name).expect("listed presets exist");
        let mut line = format!("{name}: {}", p.description);
        if let Some(s) = p.scale {
            line.push_str(&format!("; scale {s}"));
        }
        if let Some(t) = p.take {
            line.push_str(&format!("; first {t}"));
        }
        println!("{line}");
        for (id, t) in &p.tuning {
            let kv: Vec<String> = t.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("  {id}: {}", kv.join(" "));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Fm(a) => cmd_run(a, false, cli.workers),
        Command::Dpm(a) => cmd_run(a, true, cli.workers),
        Command::Oracle(a) => cmd_oracle(a),
        Command::BfPaths(a) => cmd_bf(a, cli.workers),
        Command::Presets => {
            cmd_presets();
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
