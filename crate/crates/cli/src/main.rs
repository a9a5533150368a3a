//! `hycon`: presets, attack-cost tables, figure data and network simulations.
//!
//! Every subcommand prints its effective configuration to stderr as TOML.
//! Feeding that block back through `--config` reproduces the output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hycon_core::econ::{self, EconParams, Figure};
use hycon_core::netsim::{self, default_config, Outcome, ScenarioConfig, ScenarioKind, ScenarioReport};
use hycon_core::{ChainParams, Preset};

#[derive(Parser)]
#[command(name = "hycon", version, about = "Hybrid PoW/PoS consensus lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the chain parameters of a preset.
    Params {
        #[arg(long, default_value = "PROJECT_PAI")]
        preset: String,
    },
    /// Attack-cost table over hash shares 95%, 90%, ..., 5%.
    EconTable {
        #[command(flatten)]
        econ: EconFlags,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        out: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Figure series as CSV: required hash ratio (fig2) or attack cost (fig3).
    EconCurve {
        #[arg(long, default_value = "fig2")]
        figure: Figure,
        #[arg(long, default_value_t = 99)]
        resolution: usize,
        #[command(flatten)]
        econ: EconFlags,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run an attack scenario over several seeds.
    Attack {
        #[arg(long, value_enum)]
        scenario: AttackKind,
        /// TOML overrides layered over the scenario defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an honest network and export the chain and per-block metrics.
    Simulate {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        blocks: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a scenario config, then print it with defaults filled in.
    ValidateConfig { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    DoubleSpend,
    StripMine,
    Nas,
    Stakepool,
}

impl AttackKind {
    fn scenario(self) -> ScenarioKind {
        match self {
            AttackKind::DoubleSpend => ScenarioKind::DoubleSpend,
            AttackKind::StripMine => ScenarioKind::StripMine,
            AttackKind::Nas => ScenarioKind::NothingAtStake,
            AttackKind::Stakepool => ScenarioKind::Stakepool,
        }
    }
}

#[derive(Args)]
struct EconFlags {
    /// TOML file with any of the fields below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Coin price in USD.
    #[arg(long, allow_hyphen_values = true)]
    price: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    total_supply: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    public_supply: Option<f64>,
    /// USD per GPU.
    #[arg(long, allow_hyphen_values = true)]
    gpu_price: Option<f64>,
    /// Honest fleet size.
    #[arg(long, allow_hyphen_values = true)]
    gpu_count: Option<f64>,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    n: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EconConfig {
    price: f64,
    total_supply: f64,
    public_supply: f64,
    gpu_price: f64,
    gpu_count: f64,
    m: u32,
    n: u32,
}

impl Default for EconConfig {
    fn default() -> Self {
        let e = EconParams::default();
        let p = ChainParams::preset(Preset::ProjectPai);
        EconConfig {
            price: e.price,
            total_supply: e.total_supply,
            public_supply: e.public_supply,
            gpu_price: e.gpu_price,
            gpu_count: e.gpu_count,
            m: p.m_voters,
            n: p.n_quorum,
        }
    }
}

impl EconConfig {
    fn params(&self) -> EconParams {
        EconParams {
            price: self.price,
            total_supply: self.total_supply,
            public_supply: self.public_supply,
            gpu_price: self.gpu_price,
            gpu_count: self.gpu_count,
        }
    }
}

/// A failure with the process exit code it maps to.
struct Fail {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Fail {
    Fail { code: 2, msg: msg.into() }
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Fail {
    Fail { code: 1, msg: format!("{}: {e}", path.display()) }
}

type CmdResult = Result<(), Fail>;

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| io_fail(path, e))
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> CmdResult {
    match output {
        Some(p) => write(p, bytes),
        None => io::stdout().write_all(bytes).map_err(|e| io_fail(Path::new("<stdout>"), e)),
    }
}

fn print_effective<T: Serialize>(cfg: &T) {
    let text = toml::to_string(cfg).expect("config serializes");
    eprintln!("# effective config\n{text}# end effective config");
}

fn econ_config(flags: &EconFlags) -> Result<EconConfig, Fail> {
    let mut c = match &flags.config {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => EconConfig::default(),
    };
    let floats = [
        ("--price", flags.price, &mut c.price),
        ("--total-supply", flags.total_supply, &mut c.total_supply),
        ("--public-supply", flags.public_supply, &mut c.public_supply),
        ("--gpu-price", flags.gpu_price, &mut c.gpu_price),
        ("--gpu-count", flags.gpu_count, &mut c.gpu_count),
    ];
    for (name, flag, slot) in floats {
        if let Some(v) = flag {
            *slot = v;
        }
        if !(slot.is_finite() && *slot > 0.0) {
            return Err(usage(format!("{name} must be a positive number, got {slot}")));
        }
    }
    c.m = flags.m.unwrap_or(c.m);
    c.n = flags.n.unwrap_or(c.n);
    if c.m == 0 {
        return Err(usage("--m must be at least 1"));
    }
    if c.n == 0 || c.n > c.m {
        return Err(usage(format!("--n must be between 1 and --m ({}), got {}", c.m, c.n)));
    }
    if c.public_supply > c.total_supply {
        return Err(usage("--public-supply must not exceed --total-supply"));
    }
    Ok(c)
}

fn econ_table(flags: &EconFlags, format: Format, output: Option<&Path>) -> CmdResult {
    let c = econ_config(flags)?;
    print_effective(&c);
    let rows = econ::cost_table(&c.params(), c.m, c.n, &econ::default_shares()).map_err(|e| usage(e.to_string()))?;
    let mut buf = Vec::new();
    match format {
        Format::Csv => econ::write_table_csv(&rows, &mut buf).map_err(|e| io_fail(Path::new("<csv>"), e))?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, &rows).expect("rows serialize");
            buf.push(b'\n');
        }
    }
    emit(output, &buf)
}

fn econ_curve(figure: Figure, resolution: usize, flags: &EconFlags, output: Option<&Path>) -> CmdResult {
    let c = econ_config(flags)?;
    print_effective(&c);
    let data = econ::figure_data(figure, &c.params(), c.m, c.n, resolution).map_err(|e| usage(e.to_string()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| io_fail(Path::new("<csv>"), e);
    w.write_record(econ::figure_header(figure)).map_err(io)?;
    for row in data {
        w.write_record(row.iter().map(|x| if x.is_nan() { String::new() } else { x.to_string() })).map_err(io)?;
    }
    emit(output, &w.into_inner().expect("in-memory writer"))
}

/// Recursively overlays `top` on `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `defaults` with the TOML file at `path` layered on top.
fn layered(defaults: &ScenarioConfig, path: Option<&Path>) -> Result<ScenarioConfig, Fail> {
    let mut table = toml::Table::try_from(defaults).expect("config serializes");
    if let Some(p) = path {
        let top: toml::Table = read(p)?.parse().map_err(|e| usage(format!("{}: {e}", p.display())))?;
        merge(&mut table, top);
    }
    let text = toml::to_string(&table).expect("table serializes");
    let name = path.map_or("defaults".into(), |p| p.display().to_string());
    ScenarioConfig::from_toml(&text).map_err(|e| usage(format!("{name}: {e}")))
}

fn mkdir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))
}

fn opt(x: Option<impl ToString>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn aggregate_csv(reports: &[ScenarioReport]) -> Result<Vec<u8>, Fail> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| io_fail(Path::new("aggregate.csv"), e);
    w.write_record([
        "seed",
        "outcome",
        "reason",
        "best_height",
        "blocks_connected",
        "reorgs",
        "mean_interval",
        "missed_vote_rate",
        "stall_episodes",
        "private_blocks",
        "max_deficit",
        "post_quit_mean_interval",
        "fork_max_depth",
        "multi_fork_votes",
        "invariant_violations",
    ])
    .map_err(io)?;
    for r in reports {
        let a = &r.attack;
        w.write_record([
            r.seed.to_string(),
            r.outcome.to_string(),
            r.reason.clone(),
            r.best_height.to_string(),
            r.blocks_connected.to_string(),
            r.reorgs.to_string(),
            opt(r.mean_interval),
            r.missed_vote_rate.to_string(),
            r.stall_episodes.to_string(),
            a.private_blocks.to_string(),
            a.max_deficit.to_string(),
            opt(a.post_quit_mean_interval),
            a.fork_max_depth.to_string(),
            a.multi_fork_votes.to_string(),
            r.invariant_violations.len().to_string(),
        ])
        .map_err(io)?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

fn attack(kind: AttackKind, config: Option<&Path>, seeds: u64, out: &Path) -> CmdResult {
    if seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let scenario = kind.scenario();
    let mut c = layered(&default_config(scenario), config)?;
    if c.scenario != scenario {
        return Err(usage(format!("config is for `{}`, not `{}`", c.scenario.name(), scenario.name())));
    }
    if scenario == ScenarioKind::StripMine {
        // one full interval after the quit
        let interval = c.chain_params().map_err(|e| usage(e.to_string()))?.retarget_interval;
        let quit = *c.attack.quit_height.get_or_insert(interval);
        c.blocks = quit + interval - 1;
    }
    print_effective(&c);
    mkdir(out)?;
    write(&out.join("effective-config.toml"), c.to_toml().as_bytes())?;

    let configs: Vec<ScenarioConfig> = (0..seeds)
        .map(|i| {
            let mut cell = c.clone();
            cell.seed = c.seed + i;
            cell.trace = false;
            cell
        })
        .collect();
    let mut reports = Vec::with_capacity(configs.len());
    for r in netsim::sweep(&configs) {
        reports.push(r.map_err(|e| usage(e.to_string()))?);
    }
    for r in &reports {
        write(&out.join(format!("report-seed{}.json", r.seed)), r.to_json().as_bytes())?;
    }
    write(&out.join("aggregate.csv"), &aggregate_csv(&reports)?)?;

    let count = |o: Outcome| reports.iter().filter(|r| r.outcome == o).count();
    let stalled = count(Outcome::Stalled);
    println!(
        "{}: {} seeds, {} succeeded ({:.3}), {} failed, {} completed, {} stalled",
        scenario.name(),
        seeds,
        count(Outcome::Succeeded),
        count(Outcome::Succeeded) as f64 / seeds as f64,
        count(Outcome::Failed),
        count(Outcome::Completed),
        stalled
    );
    if stalled > 0 {
        return Err(Fail { code: 3, msg: format!("{stalled} of {seeds} runs stalled") });
    }
    Ok(())
}

fn simulate(
    preset: Option<&str>,
    blocks: Option<u64>,
    seed: Option<u64>,
    config: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let mut c = layered(&default_config(ScenarioKind::Honest), config)?;
    if c.scenario != ScenarioKind::Honest {
        return Err(usage(format!("simulate runs honest networks; use `attack` for `{}`", c.scenario.name())));
    }
    if let Some(p) = preset {
        c.preset = p.parse().map_err(|e| usage(format!("--preset: {e}")))?;
    }
    if let Some(b) = blocks {
        if b == 0 {
            return Err(usage("--blocks must be at least 1"));
        }
        c.blocks = b;
    }
    c.seed = seed.unwrap_or(c.seed);
    c.validate().map_err(|e| usage(e.to_string()))?;
    print_effective(&c);
    mkdir(out)?;
    write(&out.join("effective-config.toml"), c.to_toml().as_bytes())?;

    let sim = netsim::run(&c).map_err(|e| usage(e.to_string()))?;
    let chain_path = out.join("chain.ndjson");
    let file = fs::File::create(&chain_path).map_err(|e| io_fail(&chain_path, e))?;
    let mut w = io::BufWriter::new(file);
    sim.chain.export_ndjson(&mut w).and_then(|_| w.flush()).map_err(|e| io_fail(&chain_path, e))?;
    let mut rows = Vec::new();
    netsim::write_rows_csv(&sim.rows, &mut rows).map_err(|e| io_fail(Path::new("metrics.csv"), e))?;
    write(&out.join("metrics.csv"), &rows)?;
    write(&out.join("report.json"), sim.report.to_json().as_bytes())?;
    if c.trace {
        write(&out.join("trace.ndjson"), &netsim::trace_bytes(&sim.trace))?;
    }

    let r = &sim.report;
    println!(
        "{} at height {} in {:.0} s; mean interval {} s, after first retarget {} s",
        r.outcome,
        r.best_height,
        r.sim_seconds,
        r.mean_interval.map_or("n/a".into(), |m| format!("{m:.1}")),
        r.mean_interval_after_first_retarget.map_or("n/a".into(), |m| format!("{m:.1}"))
    );
    if r.outcome == Outcome::Stalled {
        return Err(Fail { code: 3, msg: r.reason.clone() });
    }
    Ok(())
}

fn validate_config(path: &Path) -> CmdResult {
    let text = read(path)?;
    let c = ScenarioConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    print!("{}", c.to_toml());
    Ok(())
}

fn params(preset: &str) -> CmdResult {
    let p = hycon_core::preset_params(preset).map_err(|e| usage(format!("--preset: {e}")))?;
    print!("{}", toml::to_string(&p).expect("params serialize"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Params { preset } => params(preset),
        Command::EconTable { econ, out, output } => econ_table(econ, *out, output.as_deref()),
        Command::EconCurve { figure, resolution, econ, output } => {
            econ_curve(*figure, *resolution, econ, output.as_deref())
        }
        Command::Attack { scenario, config, seeds, out } => attack(*scenario, config.as_deref(), *seeds, out),
        Command::Simulate { preset, blocks, seed, config, out } => {
            simulate(preset.as_deref(), *blocks, *seed, config.as_deref(), out)
        }
        Command::ValidateConfig { path } => validate_config(path),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
