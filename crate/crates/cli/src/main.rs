use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use flexstate::bench::{self, BenchScenario, SweepAxis};
use flexstate::driver::{DriverRegistry, MiniRespServer};
use flexstate::nf::NfKind;
use flexstate::runtime::OverflowPolicy;
use flexstate::traffic::{self, ReplayLimit, TrafficSpec};
use flexstate::FlexConfig;

#[derive(Parser)]
#[command(name = "flexbench", version, about = "Run flexstate NFs over synthetic traffic and check the store")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario (all repetitions).
    Run(ScenarioArgs),
    /// Run a scenario grid along one axis.
    Sweep {
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated axis values; intervals in microseconds.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Serve a RESP store on loopback until interrupted.
    Serve {
        #[arg(long, default_value_t = 6379)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Write a flow file.
    GenFlows {
        #[arg(long, default_value_t = traffic::DEFAULT_FLOWS)]
        flows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Operator config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "counter-async", value_parser = parse_nf)]
    nf: NfKind,
    #[arg(long, default_value_t = 1)]
    cores: usize,
    #[arg(long)]
    driver: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    flush_interval_us: Option<u64>,
    #[arg(long, default_value_t = traffic::DEFAULT_FLOWS)]
    flows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replay length in seconds (ignored when --budget is given).
    #[arg(long, default_value_t = 15.0)]
    duration_s: f64,
    /// Replay exactly this many packets.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value_t = 0)]
    inject_latency_us: u64,
    #[arg(long, default_value_t = bench::DEFAULT_REPETITIONS)]
    repetitions: u32,
    #[arg(long, default_value_t = bench::DEFAULT_NAT_POOL)]
    nat_pool: u32,
    /// Comma-separated load balancer server ids.
    #[arg(long, value_delimiter = ',')]
    servers: Option<Vec<String>>,
    /// Drop packets that find a worker queue full instead of waiting.
    #[arg(long)]
    drop_on_overflow: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn parse_nf(s: &str) -> Result<NfKind, String> {
    s.parse().map_err(|e: flexstate::nf::NfError| e.to_string())
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: bench::BenchError| e.to_string())
}

impl ScenarioArgs {
    fn scenario(&self) -> Result<BenchScenario> {
        let mut s = match &self.config {
            Some(path) => {
                let cfg = FlexConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
                BenchScenario::from_config(&cfg)
            }
            None => BenchScenario::default(),
        };
        s.nf = self.nf;
        s.cores = self.cores;
        if let Some(d) = &self.driver {
            s.driver_label = d.clone();
        }
        if let Some(e) = &self.endpoint {
            s.endpoint = e.clone();
        }
        if let Some(us) = self.flush_interval_us {
            s.flush_interval = Duration::from_micros(us);
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            bail!("--duration-s must be positive");
        }
        let limit = match self.budget {
            Some(n) => ReplayLimit::Budget(n),
            None => ReplayLimit::Duration(Duration::from_secs_f64(self.duration_s)),
        };
        s.traffic = TrafficSpec { n_flows: self.flows, seed: self.seed, limit, ..TrafficSpec::default() };
        s.injected_latency = Duration::from_micros(self.inject_latency_us);
        s.repetitions = self.repetitions;
        s.nat_pool = self.nat_pool;
        if let Some(servers) = &self.servers {
            s.servers = servers.clone();
        }
        if self.drop_on_overflow {
            s.overflow = OverflowPolicy::Drop;
        }
        Ok(s)
    }

    fn emit(&self, body: &str) -> Result<()> {
        match &self.report {
            Some(path) => std::fs::write(path, body).with_context(|| format!("writing {}", path.display())),
            None => {
                print!("{body}");
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("flexbench: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Ok(false) when a correctness check failed.
fn run(cli: Cli) -> Result<bool> {
    let registry = DriverRegistry::default();
    match cli.cmd {
        Cmd::Run(args) => {
            let report = bench::run_scenario(&args.scenario()?, &registry)?;
            args.emit(&match args.format {
                Format::Json => report.to_json() + "\n",
                Format::Csv => report.to_csv(),
                Format::Text => report.to_text(),
            })?;
            for (seed, c) in report.failed_checks() {
                eprintln!("seed {seed}: check {} failed: {}", c.name, c.detail);
            }
            Ok(report.passed)
        }
        Cmd::Sweep { axis, values, scenario } => {
            let cells = bench::sweep(axis, &values, &scenario.scenario()?, &registry)?;
            scenario.emit(&match scenario.format {
                Format::Json => bench::sweep_to_json(&cells) + "\n",
                Format::Csv => bench::sweep_to_csv(&cells),
                Format::Text => bench::sweep_to_text(&cells),
            })?;
            Ok(cells.iter().all(|c| c.passed()))
        }
        Cmd::Serve { port, bind } => {
            let server = MiniRespServer::start(&format!("{bind}:{port}")).context("starting server")?;
            eprintln!("serving RESP on {}", server.local_addr());
            loop {
                std::thread::park();
            }
        }
        Cmd::GenFlows { flows, seed, out } => {
            let spec = TrafficSpec { n_flows: flows, seed, ..TrafficSpec::default() };
            traffic::generate(&spec)?.save(&out)?;
            eprintln!("wrote {flows} flows to {}", out.display());
            Ok(true)
        }
    }
}
