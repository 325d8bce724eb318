//! Command-line front end: band tables, classical flows, eps sweeps and the self test.

use clap::{Parser, Subcommand};
use peierls::fiber::{compute_band, default_gap_min};
use peierls::flow::{trajectory, ClassicalState, DEFAULT_DT};
use peierls::grid::GridSpec;
use peierls::harness::{format_slope, parse_config, read_csv, report, run_sweep, selftest, ExperimentKind, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "peierls", about = "Effective band dynamics on a discretized torus")]
struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ground band energy and gap on the band window.
    Band {
        #[arg(long, default_value_t = 1.0 / 16.0)]
        eps: f64,
    },
    /// Confinement time and an optional classical trajectory.
    Flow {
        #[arg(long)]
        x: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
    /// Runs an eps sweep and fits error slopes.
    Sweep {
        /// Experiment name; overrides experiment.name.
        experiment: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Exact identities and exactly solvable cases.
    Selftest,
    /// Re-fits slopes from a sweep CSV.
    Report { csv: PathBuf },
}

fn load(path: &Option<PathBuf>) -> peierls::Result<RunConfig> {
    match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> peierls::Result<bool> {
    match cli.cmd {
        Cmd::Band { eps } => {
            let cfg = load(&cli.config)?;
            let g = GridSpec::new(cfg.l, eps)?;
            let gm = match cfg.gap_min {
                Some(x) => x,
                None => default_gap_min(&cfg.model, &g, &cfg.lg)?,
            };
            let band = compute_band(&cfg.model, &g, &cfg.lg, gm)?;
            println!("p,E,gap");
            for j in cfg.lg.nodes(&g) {
                println!("{:.6},{:.12},{:.12}", band.p[j], band.e[j], band.gap[j]);
            }
            println!("# gap_min = {gm:.6}");
            Ok(true)
        }
        Cmd::Flow { x, p, t, samples } => {
            let cfg = load(&cli.config)?;
            let setup = cfg.setup()?;
            println!("T_m^delta = {:.6}", setup.max_time()?);
            if let (Some(x), Some(p)) = (x, p) {
                let h = setup.classical();
                let s = ClassicalState::new(x, p, cfg.l);
                let steps = (t.abs() / DEFAULT_DT).ceil() as usize;
                println!("t,X,p,H");
                for (tt, c, e) in trajectory(&h, s, t, DEFAULT_DT, (steps / samples.max(1)).max(1)) {
                    println!("{tt:.6},{:.10},{:.10},{:.12}", c.x, c.p, e);
                }
            }
            Ok(true)
        }
        Cmd::Sweep { experiment, csv, json } => {
            let mut cfg = load(&cli.config)?;
            if let Some(name) = experiment {
                cfg.experiment = Some(ExperimentKind::parse(&name).ok_or_else(|| {
                    peierls::Error::Config(vec![format!("unknown experiment `{name}`")])
                })?);
            }
            let exp = cfg
                .experiment
                .ok_or_else(|| peierls::Error::Config(vec!["no experiment selected".into()]))?;
            cfg.csv = csv.or(cfg.csv);
            cfg.json = json.or(cfg.json);
            let r = run_sweep(&cfg, exp)?;
            println!("{} (config {})", r.experiment, &r.config_hash[..12]);
            for s in &r.slopes {
                println!("  {}", format_slope(s));
            }
            Ok(true)
        }
        Cmd::Selftest => {
            let mut ok = true;
            for c in selftest()? {
                let pass = c.pass();
                ok &= pass;
                println!("{} {}: {:.3e} (tol {:.0e})", if pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tol);
            }
            Ok(ok)
        }
        Cmd::Report { csv } => {
            for (name, slopes) in report(&read_csv(&csv)?) {
                println!("{name}");
                for s in &slopes {
                    println!("  {}", format_slope(s));
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(peierls::Error::Config(v)) => {
            for m in v {
                eprintln!("error: {m}");
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
