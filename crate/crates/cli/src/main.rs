use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use wif_smc::experiments::{
    aggregate, cox_simulate, ou_sweep, pmmh_replicates, pmmh_run, sweep_reference, write_sweep_csv, CoxParams,
    PmmhConfig, SweepConfig,
};
use wif_smc::fkengine::{grid_reference, grid_reference_extrapolated, pf_run, FkModel, PfOptions, StateMesh};
use wif_smc::intensity::{
    intensity_table, numeric_intensity_with_order, overall_rate, PotentialValues,
};
use wif_smc::limitproc::{fk_marginal_lhs, fk_marginal_rhs, simulate_limit_ensemble, LimitConfig};
use wif_smc::rng::{derive_seed, rng_from_seed};
use wif_smc::{exact_distribution, AncestorVector, Permutation, Resampler, SchemeId, SmcError, WeightVector};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "wif-smc", version, about = "Particle filters and resampling schemes for weakly informative potentials")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for stochastic subcommands; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (stdout if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "WIF_SMC_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw ancestor vectors.
    Resample {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        scheme: Option<String>,
        /// Plain-text weights, one value per line.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Exact distribution of a scheme by enumeration.
    ExactDist {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Closed-form resampling intensities.
    Intensity {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        scheme: Option<String>,
        /// Comma-separated potential values.
        #[arg(long, allow_hyphen_values = true)]
        v: Option<String>,
    },
    /// Finite-step intensity quotients.
    IntensityNumeric {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        v: Option<String>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// One particle filter run.
    PfRun {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Quadrature reference for a one-dimensional model.
    ReferenceLogz {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Simulate the continuous-time limit process.
    LimitSim {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Compare both sides of the Feynman-Kac marginal identity.
    FkCheck {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// OU box-potential sweep.
    OuSweep {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Simulate Cox process data.
    CoxSim {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// PMMH for the Cox model.
    Pmmh {
        #[command(flatten)]
        cfg: ConfigArg,
    },
}

enum Failure {
    Config(String),
    Runtime(SmcError),
    Io(String),
}

impl From<SmcError> for Failure {
    fn from(e: SmcError) -> Self {
        match e {
            SmcError::InvalidConfig(m) => Failure::Config(m),
            e => Failure::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_err(e: impl std::fmt::Display) -> Failure {
    Failure::Io(e.to_string())
}

/// Config file contents (or `{}`) with flag overrides applied.
fn load_config(path: &Option<PathBuf>) -> CliResult<Map<String, Value>> {
    let Some(p) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Failure::Config(format!("{}: config must be a JSON object", p.display()))),
        Err(e) => Err(Failure::Config(format!("{}: {e}", p.display()))),
    }
}

fn parse_config<T: DeserializeOwned>(map: Map<String, Value>) -> CliResult<T> {
    let value = Value::Object(map);
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Failure::Config(e.inner().to_string())
        } else {
            Failure::Config(format!("key `{path}`: {}", e.inner()))
        }
    })
}

fn read_weights(path: &Path) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("weights: {}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Failure::Config(format!("weights: cannot parse `{l}`")))
        })
        .collect()
}

fn parse_list(name: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Config(format!("{name}: cannot parse `{t}`")))
        })
        .collect()
}

struct Ctx {
    global: Global,
}

impl Ctx {
    fn overlay_seed(&self, map: &mut Map<String, Value>, key: &str) {
        if let Some(s) = self.global.seed {
            map.insert(key.into(), json!(s));
        }
    }

    fn emit_bytes(&self, bytes: &[u8]) -> CliResult<()> {
        match &self.global.out {
            Some(p) => fs::write(p, bytes).map_err(io_err),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes).map_err(io_err)?;
                out.flush().map_err(io_err)
            }
        }
    }

    fn envelope<C: Serialize, R: Serialize>(command: &str, config: &C, result: &R) -> CliResult<Value> {
        Ok(json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "config": serde_json::to_value(config).map_err(io_err)?,
            "result": serde_json::to_value(result).map_err(io_err)?,
        }))
    }

    fn emit_json<C: Serialize, R: Serialize>(&self, command: &str, config: &C, result: &R) -> CliResult<()> {
        let v = Self::envelope(command, config, result)?;
        let mut s = serde_json::to_string_pretty(&v).map_err(io_err)?;
        s.push('\n');
        self.emit_bytes(s.as_bytes())
    }

    /// CSV body; with `--out` the config echo goes to a `.meta.json` sidecar.
    fn emit_csv<C: Serialize>(&self, command: &str, config: &C, csv: Vec<u8>) -> CliResult<()> {
        if let Some(p) = &self.global.out {
            let meta = Self::envelope(command, config, &Value::Null)?;
            let mut s = serde_json::to_string_pretty(&meta).map_err(io_err)?;
            s.push('\n');
            let mut side = p.clone().into_os_string();
            side.push(".meta.json");
            fs::write(PathBuf::from(side), s).map_err(io_err)?;
        }
        self.emit_bytes(&csv)
    }

    fn csv_unsupported(&self, command: &str) -> CliResult<()> {
        if self.global.format == Format::Csv {
            return Err(Failure::Config(format!("--format csv is not available for {command}")));
        }
        Ok(())
    }
}

fn csv_bytes<F>(f: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        f(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)?;
    }
    Ok(buf)
}

fn join(a: &[usize]) -> String {
    a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResampleConfig {
    scheme: SchemeId,
    weights: Vec<f64>,
    seed: u64,
    #[serde(default = "one")]
    draws: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExactDistConfig {
    scheme: SchemeId,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntensityConfig {
    scheme: SchemeId,
    v: Vec<f64>,
    /// Processing order; defaults to the mean partition of `-v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NumericConfig {
    scheme: SchemeId,
    v: Vec<f64>,
    delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PfRunConfig {
    model: FkModel,
    scheme: SchemeId,
    #[serde(rename = "N")]
    n: usize,
    seed: u64,
    #[serde(default)]
    options: PfOptions,
}

fn default_width() -> f64 {
    6.0
}
fn default_points() -> usize {
    2001
}
fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceConfig {
    model: FkModel,
    /// Explicit mesh; otherwise `±width` stationary standard deviations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mesh: Option<StateMesh>,
    #[serde(default = "default_width")]
    width: f64,
    #[serde(default = "default_points")]
    points: usize,
    /// Richardson extrapolation over the mesh.
    #[serde(default = "yes")]
    extrapolate: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitSimConfig {
    model: FkModel,
    scheme: SchemeId,
    limit: LimitConfig,
    #[serde(default = "one")]
    paths: usize,
    seed: u64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TestFunction {
    Identity,
    Square,
}

impl TestFunction {
    fn eval(self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Identity => x[0],
            TestFunction::Square => x.iter().map(|v| v * v).sum(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FkCheckConfig {
    model: FkModel,
    scheme: SchemeId,
    limit: LimitConfig,
    /// Limit-process paths.
    paths: usize,
    /// Single-diffusion paths for the right-hand side.
    rhs_paths: usize,
    function: TestFunction,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoxSimConfig {
    params: CoxParams,
    seed: u64,
    #[serde(default)]
    latent: bool,
}

fn scheme_flag(map: &mut Map<String, Value>, scheme: &Option<String>) {
    if let Some(s) = scheme {
        map.insert("scheme".into(), json!(s));
    }
}

fn order_of(order: &Option<Vec<usize>>, v: &PotentialValues) -> CliResult<Permutation> {
    match order {
        Some(o) => Ok(Permutation::new(o.clone())?),
        None => Ok(v.order()),
    }
}

fn run(ctx: &Ctx, command: &Command) -> CliResult<()> {
    match command {
        Command::Resample {
            cfg,
            scheme,
            weights,
            draws,
        } => {
            let mut map = load_config(&cfg.config)?;
            scheme_flag(&mut map, scheme);
            if let Some(p) = weights {
                map.insert("weights".into(), json!(read_weights(p)?));
            }
            if let Some(d) = draws {
                map.insert("draws".into(), json!(d));
            }
            ctx.overlay_seed(&mut map, "seed");
            let c: ResampleConfig = parse_config(map)?;
            let wv = WeightVector::normalize(&c.weights)?;
            let mut rng = rng_from_seed(c.seed);
            let mut resampler = Resampler::new(c.scheme);
            let mut out = Vec::new();
            let mut all = Vec::with_capacity(c.draws);
            for _ in 0..c.draws {
                resampler.resample_into(&wv, &mut rng, &mut out)?;
                all.push(out.clone());
            }
            if ctx.global.format == Format::Csv {
                let body = csv_bytes(|w| {
                    w.write_record(["draw", "ancestors"])?;
                    for (i, a) in all.iter().enumerate() {
                        w.write_record([i.to_string(), join(a)])?;
                    }
                    Ok(())
                })?;
                ctx.emit_csv("resample", &c, body)
            } else {
                ctx.emit_json("resample", &c, &json!({ "draws": all }))
            }
        }
        Command::ExactDist { cfg, scheme, weights } => {
            let mut map = load_config(&cfg.config)?;
            scheme_flag(&mut map, scheme);
            if let Some(p) = weights {
                map.insert("weights".into(), json!(read_weights(p)?));
            }
            let c: ExactDistConfig = parse_config(map)?;
            let dist = exact_distribution(c.scheme, &c.weights)?;
            let outcomes: Vec<(&AncestorVector, f64)> = dist.iter().collect();
            if ctx.global.format == Format::Csv {
                let body = csv_bytes(|w| {
                    w.write_record(["ancestors", "probability"])?;
                    for (a, p) in &outcomes {
                        w.write_record([join(a.as_slice()), p.to_string()])?;
                    }
                    Ok(())
                })?;
                ctx.emit_csv("exact-dist", &c, body)
            } else {
                let list: Vec<Value> = outcomes
                    .iter()
                    .map(|(a, p)| json!({ "ancestors": a, "probability": p }))
                    .collect();
                let result = json!({
                    "n": dist.n(),
                    "total_mass": dist.total_mass(),
                    "expected_offspring": dist.expected_offspring(),
                    "outcomes": list,
                });
                ctx.emit_json("exact-dist", &c, &result)
            }
        }
        Command::Intensity { cfg, scheme, v } => {
            let mut map = load_config(&cfg.config)?;
            scheme_flag(&mut map, scheme);
            if let Some(s) = v {
                map.insert("v".into(), json!(parse_list("v", s)?));
            }
            let c: IntensityConfig = parse_config(map)?;
            let pv = PotentialValues::new(c.v.clone())?;
            let order = order_of(&c.order, &pv)?;
            let table = intensity_table(c.scheme, &pv, &order)?;
            if ctx.global.format == Format::Csv {
                let body = csv_bytes(|w| {
                    w.write_record(["layout", "eliminated", "duplicated", "rate"])?;
                    for e in &table.entries {
                        w.write_record([
                            join(e.layout.as_slice()),
                            e.signature.eliminated.to_string(),
                            e.signature.duplicated.to_string(),
                            e.rate.to_string(),
                        ])?;
                    }
                    Ok(())
                })?;
                ctx.emit_csv("intensity", &c, body)
            } else {
                let result = json!({
                    "scheme": table.scheme,
                    "n": table.n,
                    "total": table.total,
                    "overall_rate": overall_rate(c.scheme, &pv, &order)?,
                    "order": order.as_slice(),
                    "entries": table.entries,
                });
                ctx.emit_json("intensity", &c, &result)
            }
        }
        Command::IntensityNumeric { cfg, scheme, v, delta } => {
            ctx.csv_unsupported("intensity-numeric")?;
            let mut map = load_config(&cfg.config)?;
            scheme_flag(&mut map, scheme);
            if let Some(s) = v {
                map.insert("v".into(), json!(parse_list("v", s)?));
            }
            if let Some(d) = delta {
                map.insert("delta".into(), json!(d));
            }
            let c: NumericConfig = parse_config(map)?;
            let pv = PotentialValues::new(c.v.clone())?;
            let order = order_of(&c.order, &pv)?;
            let num = numeric_intensity_with_order(c.scheme, &pv, c.delta, &order)?;
            let rates: Vec<Value> = num
                .rates
                .iter()
                .map(|(a, r)| json!({ "layout": a, "rate": r }))
                .collect();
            let closed = if c.scheme.has_closed_form_intensity() {
                let table = intensity_table(c.scheme, &pv, &order)?;
                json!(num.max_abs_error(&table))
            } else {
                Value::Null
            };
            let result = json!({
                "delta": num.delta,
                "n": num.n,
                "total": num.total,
                "off_identity_probability": num.off_identity_probability,
                "off_permutation_probability": num.off_permutation_probability,
                "max_abs_error_vs_closed_form": closed,
                "rates": rates,
            });
            ctx.emit_json("intensity-numeric", &c, &result)
        }
        Command::PfRun { cfg } => {
            ctx.csv_unsupported("pf-run")?;
            let mut map = load_config(&cfg.config)?;
            ctx.overlay_seed(&mut map, "seed");
            let c: PfRunConfig = parse_config(map)?;
            let problem = c.model.build()?;
            let out = pf_run(&problem, c.scheme, c.n, c.seed, c.options)?;
            ctx.emit_json("pf-run", &c, &out)
        }
        Command::ReferenceLogz { cfg } => {
            ctx.csv_unsupported("reference-logz")?;
            let c: ReferenceConfig = parse_config(load_config(&cfg.config)?)?;
            let mesh = match c.mesh {
                Some(m) => m,
                None => StateMesh::stationary(&c.model, c.width, c.points)?,
            };
            let r = if c.extrapolate {
                grid_reference_extrapolated(&c.model, mesh)?
            } else {
                grid_reference(&c.model, mesh)?
            };
            ctx.emit_json("reference-logz", &c, &r)
        }
        Command::LimitSim { cfg } => {
            let mut map = load_config(&cfg.config)?;
            ctx.overlay_seed(&mut map, "seed");
            let c: LimitSimConfig = parse_config(map)?;
            let paths = simulate_limit_ensemble(&c.model, c.scheme, &c.limit, c.paths, c.seed)?;
            if ctx.global.format == Format::Csv {
                if c.limit.skeleton_stride == 0 {
                    return Err(Failure::Config("key `limit.skeleton_stride`: CSV skeletons need a positive stride".into()));
                }
                let d = c.model.dim;
                let body = csv_bytes(|w| {
                    w.write_record(["path", "time", "particle", "coordinate", "value"])?;
                    for (k, p) in paths.iter().enumerate() {
                        for (t, x) in p.times.iter().zip(&p.states) {
                            for (j, v) in x.iter().enumerate() {
                                w.write_record([
                                    k.to_string(),
                                    t.to_string(),
                                    (j / d).to_string(),
                                    (j % d).to_string(),
                                    v.to_string(),
                                ])?;
                            }
                        }
                    }
                    Ok(())
                })?;
                ctx.emit_csv("limit-sim", &c, body)
            } else {
                ctx.emit_json("limit-sim", &c, &json!({ "paths": paths }))
            }
        }
        Command::FkCheck { cfg } => {
            ctx.csv_unsupported("fk-check")?;
            let mut map = load_config(&cfg.config)?;
            ctx.overlay_seed(&mut map, "seed");
            let c: FkCheckConfig = parse_config(map)?;
            let f = c.function;
            let paths = simulate_limit_ensemble(&c.model, c.scheme, &c.limit, c.paths, derive_seed(c.seed, &[0]))?;
            let lhs = fk_marginal_lhs(&paths, c.model.dim, |x| f.eval(x))?;
            let rhs = fk_marginal_rhs(&c.model, |x| f.eval(x), c.rhs_paths, derive_seed(c.seed, &[1]), c.limit.fine_step)?;
            let result = json!({ "lhs": lhs, "rhs": rhs, "z": lhs.z_score(&rhs) });
            ctx.emit_json("fk-check", &c, &result)
        }
        Command::OuSweep { cfg } => {
            let mut map = load_config(&cfg.config)?;
            ctx.overlay_seed(&mut map, "base_seed");
            let c: SweepConfig = parse_config(map)?;
            let rows = ou_sweep(&c)?;
            if ctx.global.format == Format::Csv {
                let mut body = Vec::new();
                write_sweep_csv(&rows, &mut body)?;
                ctx.emit_csv("ou-sweep", &c, body)
            } else {
                let mut refs = Vec::new();
                for &d in &c.delta_log2 {
                    refs.push((d, sweep_reference(&c, d)?));
                }
                let summary = aggregate(&rows, &refs);
                let references: Vec<Value> = refs
                    .iter()
                    .map(|(d, r)| json!({ "delta_log2": d, "reference": r }))
                    .collect();
                let result = json!({ "references": references, "summary": summary, "rows": rows });
                ctx.emit_json("ou-sweep", &c, &result)
            }
        }
        Command::CoxSim { cfg } => {
            let mut map = load_config(&cfg.config)?;
            ctx.overlay_seed(&mut map, "seed");
            let c: CoxSimConfig = parse_config(map)?;
            let data = cox_simulate(&c.params, c.seed)?;
            if ctx.global.format == Format::Csv {
                let body = csv_bytes(|w| {
                    w.write_record(["event_time"])?;
                    for t in &data.events {
                        w.write_record([t.to_string()])?;
                    }
                    Ok(())
                })?;
                ctx.emit_csv("cox-sim", &c, body)
            } else {
                let mut result = json!({ "count": data.events.len(), "events": data.events });
                if c.latent {
                    result["grid"] = json!(data.grid);
                    result["latent"] = json!(data.latent);
                }
                ctx.emit_json("cox-sim", &c, &result)
            }
        }
        Command::Pmmh { cfg } => {
            let mut map = load_config(&cfg.config)?;
            ctx.overlay_seed(&mut map, "seed");
            let mut c: PmmhConfig = parse_config(map)?;
            if ctx.global.format == Format::Csv {
                if c.replicates != 1 {
                    return Err(Failure::Config("key `replicates`: chain CSV needs a single chain".into()));
                }
                c.keep_chain = true;
                let out = pmmh_run(&c)?;
                let chain = out.chain.unwrap_or_default();
                let body = csv_bytes(|w| {
                    w.write_record(["iteration", "log_sigma", "log_alpha", "log_beta"])?;
                    for (i, t) in chain.iter().enumerate() {
                        w.write_record([i.to_string(), t[0].to_string(), t[1].to_string(), t[2].to_string()])?;
                    }
                    Ok(())
                })?;
                ctx.emit_csv("pmmh", &c, body)
            } else if c.replicates == 1 {
                let out = pmmh_run(&c)?;
                ctx.emit_json("pmmh", &c, &out)
            } else {
                let outs = pmmh_replicates(&c)?;
                ctx.emit_json("pmmh", &c, &json!({ "chains": outs }))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.global.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let ctx = Ctx { global: cli.global };
    match run(&ctx, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            let v = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{v}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            let v = json!({ "error": "Io", "message": m });
            eprintln!("{v}");
            ExitCode::from(1)
        }
    }
}
