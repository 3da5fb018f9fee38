use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cwsim_core::bath::OffDiagonalBath;
use cwsim_core::config::{parse_config, RunConfig};
use cwsim_core::engine::CouplingSchedule;
use cwsim_core::magnet::{meanfield_fixed_point, threshold_coupling, Spin};
use cwsim_core::oracle::{analytic_dephasing, barrier_scan, coupling_grid};
use cwsim_core::output;
use cwsim_core::scenario::{build_scenario, ScenarioKind, ScenarioSpec, SpinStateSpec};

mod verify;

/// Curie-Weiss quantum measurement simulator.
#[derive(Parser)]
#[command(name = "cwsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a scenario and write timeseries.csv, distributions.csv, readout.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle checks and print PASS/FAIL per invariant.
    Verify {
        /// Magnet size for the dense-reference comparisons (at most 64).
        #[arg(long, default_value_t = 20)]
        n: usize,
    },
    /// Registration threshold h_c, cross-checked by a grid scan.
    Threshold {
        #[arg(long)]
        config: PathBuf,
    },
    /// Ferromagnetic mean-field roots.
    Meanfield {
        #[arg(long)]
        config: PathBuf,
    },
    /// Analytic versus simulated spin coherence.
    Dephase {
        #[arg(long)]
        config: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CWSIM_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("CWSIM_THREADS must be a positive integer, got {v:?}"))?;
        anyhow::ensure!(n >= 1, "CWSIM_THREADS must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load(path: &Path) -> Result<RunConfig> {
    parse_config(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_run(config: &Path, out: &Path) -> Result<()> {
    let cfg = load(config)?;
    let result = output::run(&cfg, out)?;
    let r = &result.report.readout;
    println!("readout at t = {}", r.at);
    for (j, a) in r.apparatus.iter().enumerate() {
        println!(
            "apparatus {j}: P(up) = {:.9}  P(down) = {:.9}  P(null) = {:.3e}  (mF = {:.6}, theta = {:.6})",
            a.p_up, a.p_down, a.p_null, a.m_f, a.theta
        );
    }
    if let Some(p) = r.anti_aligned {
        println!("P(anti-aligned) = {p:.9}");
    }
    println!("max residual coherence ratio = {:.3e}", r.max_coherence_ratio());
    for f in &result.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_threshold(config: &Path) -> Result<()> {
    let cfg = load(config)?;
    let (magnet, t) = (cfg.scenario.magnet, cfg.scenario.bath.temperature);
    let h_c = threshold_coupling(&magnet, t)?;
    let step = 1e-4;
    let scan = barrier_scan(&magnet, Spin::Up, t, &coupling_grid(4.0 * h_c.max(step), step));
    println!("N = {}  J2 = {}  J4 = {}  T = {}", magnet.n, magnet.j2, magnet.j4, t);
    println!("h_c (bisection)   = {h_c:.8}");
    match scan {
        Some(s) => println!("h_c (scan, dg={step}) = {s:.4}  |diff| = {:.2e}", (s - h_c).abs()),
        None => println!("h_c (scan) = none"),
    }
    Ok(())
}

fn cmd_meanfield(config: &Path) -> Result<()> {
    let cfg = load(config)?;
    let (magnet, t) = (cfg.scenario.magnet, cfg.scenario.bath.temperature);
    println!("{:>6} {:>10} {:>14} {:>10} {:>12} {:>10}", "s", "g", "m", "iters", "residual", "slope");
    for g in [0.0, cfg.scenario.schedule.g] {
        for s in [Spin::Up, Spin::Down] {
            let r = meanfield_fixed_point(&magnet, s, g, t)?;
            println!(
                "{:>6} {:>10} {:>14.10} {:>10} {:>12.3e} {:>10.4}",
                s.sign(),
                g,
                r.m_f,
                r.iterations,
                r.residual,
                r.slope
            );
        }
    }
    Ok(())
}

fn cmd_dephase(config: &Path) -> Result<()> {
    let cfg = load(config)?;
    let src = &cfg.scenario;
    let g = src.schedule.g;
    let mut spec = ScenarioSpec::new(
        ScenarioKind::Single,
        CouplingSchedule {
            g,
            t_on: 0.0,
            t_off: src.t_final,
        },
        src.t_final,
    );
    spec.magnet = src.magnet;
    spec.bath = src.bath;
    spec.samples = src.samples;
    spec.spin_state = Some(SpinStateSpec::real(vec![vec![0.5, 0.5], vec![0.5, 0.5]]));
    let sc = build_scenario(&spec)?;
    let traj = sc.evolve(&cfg.integrator, cfg.offdiag_bath)?;
    let b = sc.blocks.iter().position(|b| !b.label.is_diagonal()).expect("coherent state has coherences");

    let n = spec.magnet.n;
    println!("# N = {n}, g = {g}, gamma = {}, offdiag_bath = {:?}", spec.bath.gamma, cfg.offdiag_bath);
    if spec.bath.gamma > 0.0 && cfg.offdiag_bath != OffDiagonalBath::Off {
        println!("# bath on: the analytic column is the gamma = 0 envelope");
    }
    println!("t,analytic,simulated,diff");
    let mut worst: f64 = 0.0;
    for (i, &t) in traj.times.iter().enumerate() {
        let a = analytic_dephasing(n, g, t);
        let s = traj.samples[b][i].trace.norm() / 0.5;
        worst = worst.max((a - s).abs());
        println!("{t},{a},{s},{:e}", s - a);
    }
    println!("# max |diff| = {worst:e}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Run { config, out } => cmd_run(config, out).map(|_| true),
        Command::Verify { n } => verify::run(*n),
        Command::Threshold { config } => cmd_threshold(config).map(|_| true),
        Command::Meanfield { config } => cmd_meanfield(config).map(|_| true),
        Command::Dephase { config } => cmd_dephase(config).map(|_| true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
