use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stringstab::experiment::{load_config, run_grid, ExperimentConfig};
use stringstab::freqdomain::{follower_chain_response, hinf_estimate, sweep, Transfer};
use stringstab::protocol::{internal_stability_check, ProtocolConfig};
use stringstab::timedomain::{simulate, PropagationMetrics};
use stringstab::topology::{build_r_predecessor, BoundaryConvention};
use stringstab::Error;

#[derive(Parser, Debug)]
#[command(name = "stringstab", version, about = "String stability of consensus formations over r-predecessor topologies")]
struct Cli {
    /// JSON experiment config supplying defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Reserved. Nothing here is random; passing this flag is an error.
    #[arg(long, global = true)]
    seedless: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct FormationArgs {
    /// Number of followers.
    #[arg(long)]
    n: Option<usize>,
    /// Communication richness (predecessor count).
    #[arg(long, short)]
    r: usize,
    #[arg(long)]
    boundary: Option<BoundaryConvention>,
}

#[derive(Args, Debug, Clone)]
struct ProtocolArgs {
    /// Consensus order.
    #[arg(long, short)]
    m: usize,
    /// Comma-separated gains gamma_0,...,gamma_{m-1}; defaults come from the config.
    #[arg(long, value_delimiter = ',')]
    gains: Option<Vec<f64>>,
    #[arg(long)]
    coupling: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the follower Laplacian as CSV and the degrees as JSON.
    Topology(FormationArgs),
    /// Mode-by-mode internal stability report (JSON).
    Check {
        #[command(flatten)]
        formation: FormationArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Frequency response CSV (omega,re,im,mag).
    Freq {
        #[command(flatten)]
        formation: FormationArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        /// phi, g, or follower
        #[arg(long, default_value = "phi")]
        transfer: String,
        /// Follower index for `--transfer follower`.
        #[arg(long)]
        follower: Option<usize>,
        /// Also emit the string-stability report.
        #[arg(long)]
        report: bool,
    },
    /// Simulate the impulse response; CSV t,follower,eps,spacing plus JSON metrics.
    Sim {
        #[command(flatten)]
        formation: FormationArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Simulate even if the internal stability check fails.
        #[arg(long)]
        allow_unstable: bool,
        /// Keep every k-th recorded sample in the CSV.
        #[arg(long)]
        csv_every: Option<usize>,
    },
    /// Run the full (m, r) grid and write per-cell artifacts.
    Grid,
}

#[derive(Debug)]
struct Fail(String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(e.to_string())
    }
}

fn protocol_from(args: &ProtocolArgs, cfg: &ExperimentConfig) -> Result<ProtocolConfig, Fail> {
    let coupling = args.coupling.unwrap_or(cfg.coupling);
    match &args.gains {
        Some(g) if g.len() != args.m => Err(Fail(format!("--gains has {} values but m = {}", g.len(), args.m))),
        Some(g) => Ok(ProtocolConfig::new(g.clone(), coupling)?),
        None => {
            let mut with_coupling = cfg.clone();
            with_coupling.coupling = coupling;
            Ok(with_coupling.protocol(args.m)?)
        }
    }
}

fn topology_from(args: &FormationArgs, cfg: &ExperimentConfig) -> Result<stringstab::Topology, Fail> {
    Ok(build_r_predecessor(
        args.n.unwrap_or(cfg.n),
        args.r,
        args.boundary.unwrap_or(cfg.boundary),
    )?)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), Fail> {
    std::fs::create_dir_all(dir).map_err(|e| Fail(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Fail(format!("{}: {e}", path.display())))
}

/// Writes `primary` to `out/<primary_name>` and `secondary` alongside, or to
/// stdout and stderr when no output directory was given.
fn emit(out: Option<&Path>, primary: (&str, &str), secondary: Option<(&str, &str)>) -> Result<(), Fail> {
    match out {
        Some(dir) => {
            write_out(dir, primary.0, primary.1)?;
            if let Some((name, body)) = secondary {
                write_out(dir, name, body)?;
            }
        }
        None => {
            std::io::stdout().write_all(primary.1.as_bytes())?;
            if let Some((_, body)) = secondary {
                std::io::stderr().write_all(body.as_bytes())?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SimMetrics<'a> {
    peaks: &'a [f64],
    ratios: &'a [Option<f64>],
    settling: &'a [Option<f64>],
}

impl<'a> From<&'a PropagationMetrics> for SimMetrics<'a> {
    fn from(m: &'a PropagationMetrics) -> Self {
        SimMetrics {
            peaks: &m.peaks,
            ratios: &m.ratios,
            settling: &m.settling,
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Fail> {
    if cli.seedless {
        return Err(Fail(
            "--seedless is reserved: no randomness exists, every run is deterministic".into(),
        ));
    }
    let cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let out = cli.out.as_deref();

    match cli.command {
        Command::Topology(formation) => {
            let t = topology_from(&formation, &cfg)?;
            let degrees = serde_json::to_string(t.degrees()).expect("serializable") + "\n";
            match out {
                Some(dir) => {
                    write_out(dir, "laplacian.csv", &t.laplacian_csv())?;
                    write_out(dir, "degrees.json", &degrees)?;
                }
                None => print!("{}{}", t.laplacian_csv(), degrees),
            }
        }
        Command::Check { formation, protocol } => {
            let t = topology_from(&formation, &cfg)?;
            let p = protocol_from(&protocol, &cfg)?;
            let check = internal_stability_check(&t, &p)?;
            let body = to_json(&check);
            emit(out, ("check.json", &body), None)?;
        }
        Command::Freq {
            formation,
            protocol,
            transfer,
            follower,
            report,
        } => {
            let p = protocol_from(&protocol, &cfg)?;
            let grid = cfg.sweep.grid()?;
            let response = if transfer.eq_ignore_ascii_case("follower") {
                let t = topology_from(&formation, &cfg)?;
                let i = follower.ok_or_else(|| Fail("--transfer follower needs --follower <i>".into()))?;
                follower_chain_response(&p, &t, i, &grid)?
            } else {
                let which: Transfer = transfer.parse()?;
                sweep(&p, formation.r, &grid, which)?
            };
            let report_body = if report {
                Some(to_json(&hinf_estimate(&p, formation.r, &cfg.sweep)?))
            } else {
                None
            };
            emit(
                out,
                ("freq.csv", &response.to_csv()),
                report_body.as_deref().map(|b| ("report.json", b)),
            )?;
        }
        Command::Sim {
            formation,
            protocol,
            dt,
            horizon,
            allow_unstable,
            csv_every,
        } => {
            let t = topology_from(&formation, &cfg)?;
            let p = protocol_from(&protocol, &cfg)?;
            let mut params = cfg.simulation.params();
            params.dt = dt.unwrap_or(params.dt);
            params.horizon = horizon.unwrap_or(params.horizon);
            params.allow_unstable |= allow_unstable;
            let trace = simulate(&t, &p, &cfg.simulation.disturbance, &params)?;
            let csv = trace.to_csv(csv_every.unwrap_or(cfg.simulation.csv_every));
            let metrics = to_json(&SimMetrics::from(&trace.metrics));
            emit(out, ("sim.csv", &csv), Some(("metrics.json", &metrics)))?;
        }
        Command::Grid => {
            let root = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
            let outcome = run_grid(&cfg, &root)?;
            for cell in &outcome.cells {
                eprintln!(
                    "m={} r={} dc_gain={:.6} hinf={:.6} omega_peak={:.4} verdict={}",
                    cell.m, cell.r, cell.report.dc_gain, cell.report.hinf, cell.report.omega_peak, cell.report.verdict
                );
            }
            for (m, r, err) in &outcome.failures {
                eprintln!("m={m} r={r} failed: {err}");
            }
            return Ok(ExitCode::from(outcome.exit_code() as u8));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Fail(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
