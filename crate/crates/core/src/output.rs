//! Run orchestration and result files.
//!
//! `timeseries.csv` has one row per sample time. After `t` come, per block,
//! `<id>:trace_re`, `<id>:trace_im`, `<id>:coh_mag`, and per apparatus `j`
//! of that block `<id>:a<j>:mean_m`, `<id>:a<j>:var_m`. Block ids look like
//! `ud|du` or `u|u@R1|out`.
//!
//! `distributions.csv` is long format: `t,block_id,apparatus,m,re,im`, one
//! row per sector of every snapshot.
//!
//! Numbers are written in shortest round-trip form, so identical configs
//! give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::engine::Trajectory;
use crate::error::Result;
use crate::magnet::{meanfield_fixed_point, threshold_coupling, Spin};
use crate::scenario::{build_scenario, readout, Readout};

fn num(x: f64) -> String {
    ryu::Buffer::new().format(x).to_string()
}

pub fn timeseries_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t");
    for label in &traj.labels {
        let id = label.to_string();
        write!(out, ",{id}:trace_re,{id}:trace_im,{id}:coh_mag").unwrap();
        for j in 0..traj.apparatuses.len() {
            write!(out, ",{id}:a{j}:mean_m,{id}:a{j}:var_m").unwrap();
        }
    }
    out.push('\n');
    for (i, &t) in traj.times.iter().enumerate() {
        out.push_str(&num(t));
        for block in &traj.samples {
            let s = &block[i];
            write!(out, ",{},{},{}", num(s.trace.re), num(s.trace.im), num(s.trace.norm())).unwrap();
            for f in &s.factors {
                write!(out, ",{},{}", num(f.mean_m), num(f.var_m)).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn distributions_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,block_id,apparatus,m,re,im\n");
    for snap in &traj.snapshots {
        let t = num(snap.t);
        for block in &snap.blocks {
            let id = block.label.to_string();
            for (j, (d, app)) in block.factors.iter().zip(&traj.apparatuses).enumerate() {
                for (k, a) in d.amplitudes.iter().enumerate() {
                    writeln!(out, "{t},{id},{j},{},{},{}", num(app.magnet.m_at(k)), num(a.re), num(a.im)).unwrap();
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ApparatusDiagnostics {
    /// `None` when the paramagnet is not metastable at `g = 0`.
    pub h_c: Option<f64>,
    pub m_f: f64,
    /// Mean-field root with the run's coupling included.
    pub m_star: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockInfo {
    pub id: String,
    pub diagonal: bool,
    pub weight: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub readout: Readout,
    pub config: RunConfig,
    pub diagnostics: Vec<ApparatusDiagnostics>,
    pub blocks: Vec<BlockInfo>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Files written by [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub trajectory: Trajectory,
    pub files: Vec<PathBuf>,
}

/// Evolves the configured scenario and computes the report, without I/O.
pub fn execute(config: &RunConfig) -> Result<(RunReport, Trajectory)> {
    config.validate()?;
    let mut spec = config.scenario.clone();
    let at = config.readout_time();
    if !spec.snapshots.contains(&at) {
        spec.snapshots.push(at);
    }
    let scenario = build_scenario(&spec)?;
    let traj = scenario.evolve(&config.integrator, config.offdiag_bath)?;
    let ro = readout(&traj, config.readout.threshold_fraction, at)?;

    let g = spec.schedule.g;
    let mut diagnostics = Vec::new();
    for a in &traj.apparatuses {
        let t = a.bath.temperature;
        diagnostics.push(ApparatusDiagnostics {
            h_c: threshold_coupling(&a.magnet, t).ok(),
            m_f: meanfield_fixed_point(&a.magnet, Spin::Up, 0.0, t)?.m_f,
            m_star: meanfield_fixed_point(&a.magnet, Spin::Up, g * a.depth, t)?.m_f,
        });
    }
    let blocks = traj
        .labels
        .iter()
        .zip(&traj.weights)
        .map(|(l, w)| BlockInfo {
            id: l.to_string(),
            diagonal: l.is_diagonal(),
            weight: [w.re, w.im],
        })
        .collect();
    let report = RunReport {
        readout: ro,
        config: config.clone(),
        diagnostics,
        blocks,
        accepted_steps: traj.accepted_steps,
        rejected_steps: traj.rejected_steps,
    };
    Ok((report, traj))
}

/// Runs `config` and writes the three result files into `out_dir`.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    let (report, trajectory) = execute(config)?;
    fs::create_dir_all(out_dir)?;
    let files = vec![
        out_dir.join(&config.output.timeseries),
        out_dir.join(&config.output.distributions),
        out_dir.join(&config.output.readout),
    ];
    fs::write(&files[0], timeseries_csv(&trajectory))?;
    fs::write(&files[1], distributions_csv(&trajectory))?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(&files[2], json)?;
    Ok(RunOutput {
        report,
        trajectory,
        files,
    })
}
