//! `cellflow`: command-line front end for the cellular-flow diffusion lab.
//!
//! Every run writes its outputs plus a manifest (`<out>.manifest.json`)
//! whose config echo reproduces the run bit-identically; `rerun` replays a
//! manifest and verifies the digests. Exit codes: 0 success, 2 usage or
//! configuration error, 3 numerical-failure flags (timeout fraction above
//! 1%, or digest mismatch on rerun).

mod csvout;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use cellflow_core::chainlab::{KilledChainSpec, RawChainSpec};
use cellflow_core::graphdiff::{simulate_many, GraphSimConfig};
use cellflow_core::hamiltonian::HamiltonianField;
use cellflow_core::mc::{
    estimate_q, regime_sweep, QConfig, RegimeConfig, RegimeRule, SourceFn,
};
use cellflow_core::reeb::{GraphPoint, ReebGraph};
use cellflow_core::sde2d::{integrate, Domain, EventKind, SdeConfig, StopRule};
use cellflow_core::Vec2;

use csvout::{fmt_f64, CsvField, CsvWriter};
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "cellflow", version, about = "Monte Carlo laboratory for diffusion in periodic cellular flows")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Config file (JSON object or key=value lines); flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the 2D SDE and emit one row per stopping event.
    Simulate(SimulateArgs),
    /// Emit the Reeb-graph coefficient tables as CSV.
    ReebTable(ReebTableArgs),
    /// Simulate the graph diffusion with its crossing ledgers.
    GraphSim(GraphSimArgs),
    /// Verify the killed-chain limit law against exact linear algebra.
    ChainVerify(ChainVerifyArgs),
    /// Sweep (epsilon, R) under a scaling rule and compare to the oracle.
    RegimeSweep(RegimeSweepArgs),
    /// Estimate the excursion-displacement covariance Q.
    EstimateQ(EstimateQArgs),
    /// Re-execute a manifest and verify output digests.
    Rerun(RerunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("cellflow: failed to configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let file_cfg = match load_config_file(cli.config.as_deref()) {
        Ok(map) => map,
        Err(e) => {
            eprintln!("cellflow: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.cmd {
        Cmd::Simulate(a) => merge(a, &file_cfg).and_then(|a| a.resolve()).and_then(run_simulate),
        Cmd::ReebTable(a) => merge(a, &file_cfg).and_then(|a| a.resolve()).and_then(run_reeb_table),
        Cmd::GraphSim(a) => merge(a, &file_cfg).and_then(|a| a.resolve()).and_then(run_graph_sim),
        Cmd::ChainVerify(a) => merge(a, &file_cfg).and_then(|a| a.resolve()).and_then(run_chain_verify),
        Cmd::RegimeSweep(a) => merge(a, &file_cfg).and_then(|a| a.resolve()).and_then(run_regime_sweep),
        Cmd::EstimateQ(a) => merge(a, &file_cfg).and_then(|a| a.resolve()).and_then(run_estimate_q),
        Cmd::Rerun(a) => run_rerun(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Config(msg)) => {
            eprintln!("cellflow: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("cellflow: {msg}");
            ExitCode::from(1)
        }
    }
}

enum CliError {
    Config(String),
    Run(String),
}

impl CliError {
    fn run<E: std::fmt::Display>(e: E) -> Self {
        CliError::Run(e.to_string())
    }
}

/// Merge config-file values into unset (`None`) fields by a JSON round trip.
fn merge<T: Serialize + DeserializeOwned>(
    args: T,
    file: &serde_json::Map<String, serde_json::Value>,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(&args).map_err(|e| CliError::Config(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut v {
        for (k, slot) in map.iter_mut() {
            if slot.is_null() {
                if let Some(fv) = file.get(k).or_else(|| file.get(&k.replace('_', "-"))) {
                    *slot = fv.clone();
                }
            }
        }
    }
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("config merge: {e}")))
}

fn load_config_file(path: Option<&Path>) -> Result<serde_json::Map<String, serde_json::Value>, String> {
    let Some(path) = path else {
        return Ok(serde_json::Map::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| format!("config file {path:?}: {e}"))?;
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&text) {
        return Ok(map);
    }
    // key=value lines
    let mut map = serde_json::Map::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config file {path:?}:{}: expected key=value", ln + 1))?;
        let value = serde_json::from_str(v.trim())
            .unwrap_or_else(|_| serde_json::Value::String(v.trim().to_string()));
        map.insert(k.trim().to_string(), value);
    }
    Ok(map)
}

fn parse_domain(s: &str) -> Result<Domain<f64>, CliError> {
    let (kind, val) = s
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("domain {s:?}: expected disk:R or square:A")))?;
    let v: f64 = val
        .parse()
        .map_err(|_| CliError::Config(format!("domain size {val:?} is not a number")))?;
    match kind {
        "disk" => Ok(Domain::Disk { radius: v }),
        "square" => Ok(Domain::Square { half_side: v }),
        _ => Err(CliError::Config(format!("unknown domain kind {kind:?}"))),
    }
}

fn parse_pair(s: &str) -> Result<Vec2<f64>, CliError> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| CliError::Config(format!("point {s:?}: expected x1,x2")))?;
    Ok(Vec2::new(
        a.trim().parse().map_err(|_| CliError::Config(format!("bad coordinate {a:?}")))?,
        b.trim().parse().map_err(|_| CliError::Config(format!("bad coordinate {b:?}")))?,
    ))
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad list entry {x:?}")))
        })
        .collect()
}

fn field_by_name(name: &str) -> Result<HamiltonianField<f64>, CliError> {
    match name {
        "canonical" => Ok(HamiltonianField::canonical()),
        _ => Err(CliError::Config(format!(
            "unknown field {name:?} (available: canonical)"
        ))),
    }
}

fn finalize(
    subcommand: &str,
    config: serde_json::Value,
    seed: u64,
    started: Instant,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let mut man = RunManifest::new(subcommand, config, seed, started.elapsed().as_secs_f64());
    for out in outputs {
        man.record_output(out).map_err(CliError::run)?;
    }
    man.write_next_to(&outputs[0]).map_err(CliError::run)?;
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Serialize, Deserialize)]
struct SimulateArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// One of: time, separatrix, shell, domain.
    #[arg(long)]
    stop: Option<String>,
    /// disk:R or square:A (used with --stop domain).
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    /// Start point "x1,x2".
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
struct SimulateResolved {
    epsilon: f64,
    delta: f64,
    seed: u64,
    paths: usize,
    horizon: f64,
    stop: String,
    domain: String,
    dt: f64,
    x0: String,
    field: String,
    max_time: f64,
    out: PathBuf,
}

impl SimulateArgs {
    fn resolve(self) -> Result<SimulateResolved, CliError> {
        Ok(SimulateResolved {
            epsilon: self.epsilon.unwrap_or(1e-3),
            delta: self.delta.unwrap_or(0.2),
            seed: self.seed.unwrap_or(1),
            paths: self.paths.unwrap_or(100),
            horizon: self.horizon.unwrap_or(10.0),
            stop: self.stop.unwrap_or_else(|| "time".into()),
            domain: self.domain.unwrap_or_else(|| "disk:10".into()),
            dt: self.dt.unwrap_or(2e-4),
            x0: self.x0.unwrap_or_else(|| "1.5707963267948966,1.5707963267948966".into()),
            field: self.field.unwrap_or_else(|| "canonical".into()),
            max_time: self.max_time.unwrap_or(1e4),
            out: self.out.ok_or(CliError::Config("--out is required".into()))?,
        })
    }
}

fn run_simulate(cfg: SimulateResolved) -> Result<ExitCode, CliError> {
    let started = Instant::now();
    let field = field_by_name(&cfg.field)?;
    let mut sde = SdeConfig::new(cfg.epsilon, cfg.seed);
    sde.delta_shell = cfg.delta;
    sde.dt_macro = cfg.dt;
    sde.max_time = cfg.max_time;
    let x0 = parse_pair(&cfg.x0)?;
    let rule = match cfg.stop.as_str() {
        "time" => StopRule::Time(cfg.horizon),
        "separatrix" => StopRule::Separatrix,
        "shell" => StopRule::Shell,
        "domain" => StopRule::DomainExit(parse_domain(&cfg.domain)?),
        other => return Err(CliError::Config(format!("unknown stop rule {other:?}"))),
    };

    use rayon::prelude::*;
    let rows: Result<Vec<_>, _> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| integrate(&field, &sde, x0, rule, i as u64).map(|r| (i, r)))
        .collect();
    let rows = rows.map_err(CliError::run)?;

    let mut w = CsvWriter::create(&cfg.out, &["path_id", "kind", "t", "x1", "x2", "H"])
        .map_err(CliError::run)?;
    let mut timeouts = 0usize;
    for (i, rec) in &rows {
        for ev in &rec.events {
            let kind = match ev.kind {
                EventKind::SeparatrixHit => "separatrix",
                EventKind::ShellHit => "shell",
                EventKind::GateHit(_) => "gate",
                EventKind::DomainExit => "domain_exit",
                EventKind::Horizon => "horizon",
                EventKind::MaxTime => {
                    timeouts += 1;
                    "max_time"
                }
            };
            w.row(&[
                CsvField::Int(*i as i64),
                CsvField::Str(kind),
                CsvField::Float(ev.t),
                CsvField::Float(ev.x.x),
                CsvField::Float(ev.x.y),
                CsvField::Float(ev.h),
            ])
            .map_err(CliError::run)?;
        }
    }
    w.finish().map_err(CliError::run)?;
    let out = cfg.out.clone();
    let seed = cfg.seed;
    finalize("simulate", serde_json::to_value(&cfg).unwrap(), seed, started, &[out])?;
    if timeouts as f64 > 0.01 * cfg.paths as f64 {
        eprintln!(
            "cellflow simulate: {timeouts}/{} paths hit max_time; estimate flagged",
            cfg.paths
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

// --------------------------------------------------------------- reeb-table

#[derive(Args, Serialize, Deserialize)]
struct ReebTableArgs {
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
struct ReebTableResolved {
    field: String,
    levels: usize,
    out: PathBuf,
}

impl ReebTableArgs {
    fn resolve(self) -> Result<ReebTableResolved, CliError> {
        Ok(ReebTableResolved {
            field: self.field.unwrap_or_else(|| "canonical".into()),
            levels: self.levels.unwrap_or(64),
            out: self.out.ok_or(CliError::Config("--out is required".into()))?,
        })
    }
}

fn run_reeb_table(cfg: ReebTableResolved) -> Result<ExitCode, CliError> {
    let started = Instant::now();
    let field = field_by_name(&cfg.field)?;
    let graph = ReebGraph::build(&field, cfg.levels).map_err(CliError::run)?;
    let mut w = CsvWriter::create(&cfg.out, &["edge", "y", "a2", "b", "T"]).map_err(CliError::run)?;
    for e in 0..graph.n_edges() {
        let (ys, a2s, bs, ts) = graph.edge(e).grid();
        for k in 0..ys.len() {
            w.row(&[
                CsvField::Int(e as i64),
                CsvField::Float(ys[k]),
                CsvField::Float(a2s[k]),
                CsvField::Float(bs[k]),
                CsvField::Float(ts[k]),
            ])
            .map_err(CliError::run)?;
        }
    }
    w.finish().map_err(CliError::run)?;
    let out = cfg.out.clone();
    finalize("reeb-table", serde_json::to_value(&cfg).unwrap(), 0, started, &[out])?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- graph-sim

#[derive(Args, Serialize, Deserialize)]
struct GraphSimArgs {
    #[arg(long)]
    edge: Option<usize>,
    #[arg(long)]
    y0: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
struct GraphSimResolved {
    edge: usize,
    y0: f64,
    horizon: f64,
    dt: f64,
    delta: f64,
    paths: usize,
    seed: u64,
    field: String,
    levels: usize,
    out: PathBuf,
}

impl GraphSimArgs {
    fn resolve(self) -> Result<GraphSimResolved, CliError> {
        Ok(GraphSimResolved {
            edge: self.edge.unwrap_or(0),
            y0: self.y0.unwrap_or(0.5),
            horizon: self.horizon.unwrap_or(1.0),
            dt: self.dt.unwrap_or(1e-4),
            delta: self.delta.unwrap_or(0.05),
            paths: self.paths.unwrap_or(100),
            seed: self.seed.unwrap_or(1),
            field: self.field.unwrap_or_else(|| "canonical".into()),
            levels: self.levels.unwrap_or(96),
            out: self.out.ok_or(CliError::Config("--out is required".into()))?,
        })
    }
}

fn run_graph_sim(cfg: GraphSimResolved) -> Result<ExitCode, CliError> {
    let started = Instant::now();
    let field = field_by_name(&cfg.field)?;
    let graph = ReebGraph::build(&field, cfg.levels).map_err(CliError::run)?;
    let mut gcfg = GraphSimConfig::new(cfg.dt, cfg.horizon);
    gcfg.deltas = vec![cfg.delta];
    gcfg.record_dt = Some(cfg.horizon / 32.0);
    let paths = simulate_many(&graph, GraphPoint { edge: cfg.edge, y: cfg.y0 }, &gcfg, cfg.seed, cfg.paths)
        .map_err(CliError::run)?;

    let mut w = CsvWriter::create(&cfg.out, &["path_id", "t", "edge", "y", "D", "N", "e_t", "L_est"])
        .map_err(CliError::run)?;
    for (i, p) in paths.iter().enumerate() {
        let ledger = &p.ledgers[0];
        for &(t, edge, y) in p
            .samples
            .iter()
            .chain(std::iter::once(&(p.final_time, p.final_state.edge, p.final_state.y)))
        {
            let d = ledger.downcrossings_before(t);
            let (e_t, n) = ledger.special_clock(t, p.final_time);
            w.row(&[
                CsvField::Int(i as i64),
                CsvField::Float(t),
                CsvField::Int(edge as i64),
                CsvField::Float(y),
                CsvField::Int(d as i64),
                CsvField::Int(n as i64),
                CsvField::Float(e_t),
                CsvField::Float(ledger.local_time(t)),
            ])
            .map_err(CliError::run)?;
        }
    }
    w.finish().map_err(CliError::run)?;
    let out = cfg.out.clone();
    let seed = cfg.seed;
    finalize("graph-sim", serde_json::to_value(&cfg).unwrap(), seed, started, &[out])?;
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------- chain-verify

#[derive(Args, Serialize, Deserialize)]
struct ChainVerifyArgs {
    /// Spec JSON file (P0 matrix, g table, h tables) or "builtin:four-cycle".
    #[arg(long)]
    spec: Option<String>,
    /// Comma-separated epsilon list.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
struct ChainVerifyResolved {
    spec: String,
    epsilon: String,
    samples: usize,
    seed: u64,
    out: PathBuf,
}

impl ChainVerifyArgs {
    fn resolve(self) -> Result<ChainVerifyResolved, CliError> {
        Ok(ChainVerifyResolved {
            spec: self.spec.unwrap_or_else(|| "builtin:four-cycle".into()),
            epsilon: self.epsilon.unwrap_or_else(|| "1e-3,1e-5".into()),
            samples: self.samples.unwrap_or(10_000),
            seed: self.seed.unwrap_or(1),
            out: self.out.ok_or(CliError::Config("--out is required".into()))?,
        })
    }
}

fn run_chain_verify(cfg: ChainVerifyResolved) -> Result<ExitCode, CliError> {
    let started = Instant::now();
    let spec: KilledChainSpec<f64> = if cfg.spec == "builtin:four-cycle" {
        KilledChainSpec::four_cycle()
    } else {
        let text = std::fs::read_to_string(&cfg.spec)
            .map_err(|e| CliError::Config(format!("spec file {}: {e}", cfg.spec)))?;
        let raw: RawChainSpec = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("spec file {}: {e}", cfg.spec)))?;
        KilledChainSpec::from_raw(&raw).map_err(|e| CliError::Config(e.to_string()))?
    };
    let eps_list = parse_list(&cfg.epsilon)?;
    let params = spec.limit_params().map_err(CliError::run)?;

    let mut reports = Vec::new();
    for (k, &eps) in eps_list.iter().enumerate() {
        reports.push(
            cellflow_core::chainlab::limit_law_test(&spec, eps, cfg.samples, cfg.seed + k as u64)
                .map_err(CliError::run)?,
        );
    }
    let doc = serde_json::json!({
        "spec": cfg.spec,
        "exact": {
            "j0": params.j0,
            "label_probs": params.label_probs,
            "qbar": [[params.qbar.xx, params.qbar.xy], [params.qbar.yx, params.qbar.yy]],
        },
        "reports": reports,
    });
    std::fs::write(&cfg.out, serde_json::to_string_pretty(&doc).unwrap()).map_err(CliError::run)?;
    let out = cfg.out.clone();
    let seed = cfg.seed;
    finalize("chain-verify", serde_json::to_value(&cfg).unwrap(), seed, started, &[out])?;
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------- regime-sweep

#[derive(Args, Serialize, Deserialize)]
struct RegimeSweepArgs {
    /// averaging:GAMMA, transition:C, or homogenization:GAMMA.
    #[arg(long)]
    rule: Option<String>,
    /// Comma-separated epsilon list (decreasing).
    #[arg(long)]
    eps_list: Option<String>,
    #[arg(long)]
    paths: Option<usize>,
    /// one or cosine.
    #[arg(long)]
    f: Option<String>,
    /// Unit-scale domain D: disk:R or square:A.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
struct RegimeSweepResolved {
    rule: String,
    eps_list: String,
    paths: usize,
    f: String,
    domain: String,
    seed: u64,
    dt: f64,
    x0: String,
    field: String,
    max_time: f64,
    out: PathBuf,
}

impl RegimeSweepArgs {
    fn resolve(self) -> Result<RegimeSweepResolved, CliError> {
        Ok(RegimeSweepResolved {
            rule: self.rule.unwrap_or_else(|| "averaging:0.125".into()),
            eps_list: self.eps_list.unwrap_or_else(|| "1e-3,1e-4".into()),
            paths: self.paths.unwrap_or(1000),
            f: self.f.unwrap_or_else(|| "one".into()),
            domain: self.domain.unwrap_or_else(|| "disk:2".into()),
            seed: self.seed.unwrap_or(1),
            dt: self.dt.unwrap_or(2e-4),
            x0: self.x0.unwrap_or_else(|| "1.5707963267948966,1.5707963267948966".into()),
            field: self.field.unwrap_or_else(|| "canonical".into()),
            max_time: self.max_time.unwrap_or(2e3),
            out: self.out.ok_or(CliError::Config("--out is required".into()))?,
        })
    }
}

fn run_regime_sweep(cfg: RegimeSweepResolved) -> Result<ExitCode, CliError> {
    let started = Instant::now();
    let field = field_by_name(&cfg.field)?;
    let (kind, val) = cfg
        .rule
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("rule {:?}: expected kind:value", cfg.rule)))?;
    let v: f64 = val
        .parse()
        .map_err(|_| CliError::Config(format!("rule parameter {val:?} is not a number")))?;
    let rule = match kind {
        "averaging" => RegimeRule::Averaging { gamma: v },
        "transition" => RegimeRule::Transition { c: v },
        "homogenization" => RegimeRule::Homogenization { gamma: v },
        _ => return Err(CliError::Config(format!("unknown rule kind {kind:?}"))),
    };
    let f = match cfg.f.as_str() {
        "one" => SourceFn::One,
        "cosine" => SourceFn::Cosine,
        other => return Err(CliError::Config(format!("unknown source {other:?}"))),
    };
    let eps_list = parse_list(&cfg.eps_list)?;
    let mut rc = RegimeConfig::new(rule, eps_list, cfg.paths, cfg.seed);
    rc.domain = parse_domain(&cfg.domain)?;
    rc.f = f;
    rc.dt_macro = cfg.dt;
    rc.x0 = parse_pair(&cfg.x0)?;
    rc.max_time = cfg.max_time;

    let rows = regime_sweep(&field, &rc).map_err(CliError::run)?;
    let mut w = CsvWriter::create(
        &cfg.out,
        &["epsilon", "R", "u_hat", "se", "oracle", "oracle_se", "ratio"],
    )
    .map_err(CliError::run)?;
    let mut flagged = false;
    for r in &rows {
        flagged |= r.timeout_frac > 0.01;
        w.row(&[
            CsvField::Float(r.epsilon),
            CsvField::Float(r.r),
            CsvField::Float(r.u_hat),
            CsvField::Float(r.se),
            CsvField::Float(r.oracle),
            CsvField::Float(r.oracle_se),
            CsvField::Float(r.ratio),
        ])
        .map_err(CliError::run)?;
    }
    w.finish().map_err(CliError::run)?;
    let out = cfg.out.clone();
    let seed = cfg.seed;
    finalize("regime-sweep", serde_json::to_value(&cfg).unwrap(), seed, started, &[out])?;
    if flagged {
        eprintln!("cellflow regime-sweep: max_time fraction above 1% in at least one row");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

// --------------------------------------------------------------- estimate-q

#[derive(Args, Serialize, Deserialize)]
struct EstimateQArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Two shell levels "0.2,0.1" used for the extrapolation.
    #[arg(long)]
    deltas: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
struct EstimateQResolved {
    epsilon: f64,
    samples: usize,
    seed: u64,
    deltas: String,
    dt: f64,
    field: String,
    out: PathBuf,
}

impl EstimateQArgs {
    fn resolve(self) -> Result<EstimateQResolved, CliError> {
        Ok(EstimateQResolved {
            epsilon: self.epsilon.unwrap_or(1e-4),
            samples: self.samples.unwrap_or(4000),
            seed: self.seed.unwrap_or(1),
            deltas: self.deltas.unwrap_or_else(|| "0.2,0.1".into()),
            dt: self.dt.unwrap_or(2e-4),
            field: self.field.unwrap_or_else(|| "canonical".into()),
            out: self.out.ok_or(CliError::Config("--out is required".into()))?,
        })
    }
}

fn run_estimate_q(cfg: EstimateQResolved) -> Result<ExitCode, CliError> {
    let started = Instant::now();
    let field = field_by_name(&cfg.field)?;
    let deltas = parse_list(&cfg.deltas)?;
    if deltas.len() != 2 {
        return Err(CliError::Config("--deltas must list exactly two levels".into()));
    }
    let mut qc = QConfig::new(cfg.epsilon, cfg.samples, cfg.seed);
    qc.deltas = [deltas[0], deltas[1]];
    qc.dt_macro = cfg.dt;
    let est = estimate_q(&field, &qc).map_err(CliError::run)?;

    let mut w = CsvWriter::create(
        &cfg.out,
        &["delta", "q11", "q12", "q22", "ci11", "ci12", "ci22", "samples"],
    )
    .map_err(CliError::run)?;
    for (d, q, ci) in &est.per_delta {
        w.row(&[
            CsvField::Float(*d),
            CsvField::Float(q.xx),
            CsvField::Float(q.xy),
            CsvField::Float(q.yy),
            CsvField::Float(ci.xx),
            CsvField::Float(ci.xy),
            CsvField::Float(ci.yy),
            CsvField::Int(est.n as i64),
        ])
        .map_err(CliError::run)?;
    }
    // Extrapolated row at delta = 0.
    w.row(&[
        CsvField::Float(0.0),
        CsvField::Float(est.q_hat.xx),
        CsvField::Float(est.q_hat.xy),
        CsvField::Float(est.q_hat.yy),
        CsvField::Float(est.ci.xx),
        CsvField::Float(est.ci.xy),
        CsvField::Float(est.ci.yy),
        CsvField::Int(est.n as i64),
    ])
    .map_err(CliError::run)?;
    w.finish().map_err(CliError::run)?;
    let out = cfg.out.clone();
    let seed = cfg.seed;
    finalize("estimate-q", serde_json::to_value(&cfg).unwrap(), seed, started, &[out])?;
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------------- rerun

#[derive(Args)]
struct RerunArgs {
    /// Manifest written by a previous run.
    #[arg(long)]
    manifest: PathBuf,
}

fn run_rerun(args: RerunArgs) -> Result<ExitCode, CliError> {
    let man = RunManifest::load(&args.manifest)
        .map_err(|e| CliError::Config(format!("manifest {:?}: {e}", args.manifest)))?;
    let config = man.config.clone();
    let code = match man.subcommand.as_str() {
        "simulate" => run_simulate(from_manifest(config)?)?,
        "reeb-table" => run_reeb_table(from_manifest(config)?)?,
        "graph-sim" => run_graph_sim(from_manifest(config)?)?,
        "chain-verify" => run_chain_verify(from_manifest(config)?)?,
        "regime-sweep" => run_regime_sweep(from_manifest(config)?)?,
        "estimate-q" => run_estimate_q(from_manifest(config)?)?,
        other => return Err(CliError::Config(format!("manifest subcommand {other:?} unknown"))),
    };
    // Verify digests against the original manifest.
    let mut mismatches = 0;
    for rec in &man.outputs {
        let now = manifest::file_sha256(Path::new(&rec.path)).map_err(CliError::run)?;
        if now == rec.sha256 {
            println!("rerun: {} OK {}", rec.path, now);
        } else {
            println!("rerun: {} MISMATCH {} != {}", rec.path, now, rec.sha256);
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        return Ok(ExitCode::from(3));
    }
    Ok(code)
}

fn from_manifest<T: DeserializeOwned>(v: serde_json::Value) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("manifest config: {e}")))
}
