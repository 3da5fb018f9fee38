//! `cwsim verify`: engine against the independent oracle at small N.

use std::f64::consts::PI;

use anyhow::Result;

use cwsim_core::bath::{build_generator, build_generator_with_kernel, spectral_kernel, BathSpec, OffDiagonalBath};
use cwsim_core::engine::{block_trace, CouplingSchedule, IntegratorConfig, Trajectory};
use cwsim_core::magnet::{threshold_coupling, MagnetSpec, Spin};
use cwsim_core::oracle::{
    analytic_dephasing, barrier_scan, coupling_grid, dense_reference_trajectory, generator_matrix, reference_matrix,
    stationarity_residual, DENSE_MAX_N,
};
use cwsim_core::scenario::{build_scenario, PacketSpec, RegionSpec, Scenario, ScenarioKind, ScenarioSpec, SpinStateSpec};

const KINDS: [ScenarioKind; 5] = [
    ScenarioKind::Single,
    ScenarioKind::EprOneApparatus,
    ScenarioKind::EprTwoApparatuses,
    ScenarioKind::SpatialOneDetector,
    ScenarioKind::SpatialTwoDetectors,
];

const MODES: [OffDiagonalBath; 3] = [OffDiagonalBath::Mixed, OffDiagonalBath::LossOnly, OffDiagonalBath::Off];

fn small_scenario(kind: ScenarioKind, n: usize, gamma: f64, times: &[f64]) -> Result<Scenario> {
    let mut s = ScenarioSpec::new(kind, CouplingSchedule { g: 0.1, t_on: 10.0, t_off: 300.0 }, 600.0);
    s.magnet.n = n;
    s.bath.gamma = gamma;
    s.samples = times.len();
    s.snapshots = times.to_vec();
    if kind.spins() == 1 {
        s.spin_state = Some(SpinStateSpec::real(vec![vec![0.3, 0.4], vec![0.4, 0.7]]));
    }
    if kind.is_spatial() {
        let intervals = if kind.detectors() == 1 { vec![[-3.0, -1.0]] } else { vec![[-3.0, -1.0], [1.0, 3.0]] };
        s.regions = Some(RegionSpec { intervals, k: 1.0 });
        s.packet = Some(PacketSpec::Gaussian { mean: -0.5, width: 1.5 });
    }
    Ok(build_scenario(&s)?)
}

fn max_dev(traj: &Trajectory, reference: &[Vec<Vec<cwsim_core::engine::SectorDistribution>>], times: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let snap = traj.snapshot_at(t).expect("snapshot requested");
        for (b, blk) in snap.blocks.iter().enumerate() {
            for (a, d) in blk.factors.iter().enumerate() {
                for (x, y) in d.amplitudes.iter().zip(&reference[b][a][i].amplitudes) {
                    worst = worst.max((x - y).norm());
                }
            }
        }
    }
    worst
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, pass: bool, name: &str, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

/// Runs every check; `Ok(false)` when any of them fails.
pub fn run(n: usize) -> Result<bool> {
    anyhow::ensure!((1..=DENSE_MAX_N).contains(&n), "--n must be between 1 and {DENSE_MAX_N}");
    let magnet = MagnetSpec::new(n, 0.0, 1.0)?;
    let bath = BathSpec::default();
    let mut rep = Report { failures: 0 };
    println!("verify: N = {n}, gamma = {}, T = {}, Gamma = {}", bath.gamma, bath.temperature, bath.cutoff);

    let mut worst: f64 = 0.0;
    for g in [0.0, 0.1] {
        for s in [Spin::Up, Spin::Down] {
            let gen = build_generator(&magnet, &bath, s, s, g, g, OffDiagonalBath::Mixed);
            worst = worst.max(stationarity_residual(&gen, &magnet, &bath, s, g));
        }
    }
    rep.line(worst < 1e-10, "detailed balance", format!("max residual {worst:.2e} (< 1e-10)"));

    let flipped = |w: f64| spectral_kernel(&bath, -w);
    let bad = build_generator_with_kernel(&magnet, bath.gamma, &flipped, Spin::Up, Spin::Up, 0.1, 0.1, OffDiagonalBath::Mixed);
    let sentinel = stationarity_residual(&bad, &magnet, &bath, Spin::Up, 0.1);
    rep.line(sentinel > 1e-2, "mutation sentinel", format!("K(-w) residual {sentinel:.2e} (> 1e-2)"));

    let mut worst: f64 = 0.0;
    for (sb, sk) in [(Spin::Up, Spin::Up), (Spin::Up, Spin::Down), (Spin::Down, Spin::Up), (Spin::Down, Spin::Down)] {
        for (cb, ck) in [(0.1, 0.1), (0.0, 0.1), (0.1, 0.0)] {
            for mode in MODES {
                let a = generator_matrix(&build_generator(&magnet, &bath, sb, sk, cb, ck, mode));
                let b = reference_matrix(&magnet, &bath, sb, sk, cb, ck, mode);
                let scale = b.iter().map(|z| z.norm()).fold(f64::MIN_POSITIVE, f64::max);
                worst = worst.max((a - b).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale);
            }
        }
    }
    rep.line(worst < 1e-12, "generator assembly", format!("max relative deviation {worst:.2e} (< 1e-12)"));

    let g = 0.1;
    let period = PI / (2.0 * g);
    let mut s = ScenarioSpec::new(ScenarioKind::Single, CouplingSchedule { g, t_on: 0.0, t_off: 1.25 * period }, 1.25 * period);
    s.magnet.n = n;
    s.bath.gamma = 0.0;
    s.spin_state = Some(SpinStateSpec::real(vec![vec![0.5, 0.5], vec![0.5, 0.5]]));
    let sc = build_scenario(&s)?;
    let traj = sc.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed)?;
    let b = sc.blocks.iter().position(|b| !b.label.is_diagonal()).expect("coherent state");
    let worst = traj
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| (traj.samples[b][i].trace.norm() / 0.5 - analytic_dephasing(n, g, t)).abs())
        .fold(0.0, f64::max);
    rep.line(worst <= 1e-8, "dephasing law", format!("max |sim - |cos 2gt|^N| {worst:.2e} (<= 1e-8)"));

    let times: Vec<f64> = (0..=40).map(|i| i as f64 * 15.0).collect();
    for kind in KINDS {
        let sc = small_scenario(kind, n, bath.gamma, &times)?;
        let traj = sc.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed)?;
        let reference = dense_reference_trajectory(&sc, OffDiagonalBath::Mixed, &times)?;
        let dev = max_dev(&traj, &reference, &times);
        let drift = traj.total_trace().iter().map(|z| (z - 1.0).norm()).fold(0.0, f64::max);
        let snap = traj.final_state();
        let asym = snap
            .blocks
            .iter()
            .map(|b| {
                let p = snap.blocks.iter().find(|p| p.label == b.label.conjugate()).expect("conjugate block present");
                (block_trace(b) - block_trace(p).conj()).norm()
            })
            .fold(0.0, f64::max);
        let name = format!("{kind:?}");
        rep.line(dev < 1e-6, &format!("dense reference [{name}]"), format!("max deviation {dev:.2e} (< 1e-6)"));
        rep.line(drift < 1e-9, &format!("trace conservation [{name}]"), format!("max |tr - 1| {drift:.2e} (< 1e-9)"));
        rep.line(asym < 1e-12, &format!("hermiticity [{name}]"), format!("max conjugate mismatch {asym:.2e} (< 1e-12)"));
    }

    for mode in MODES {
        let sc = small_scenario(ScenarioKind::Single, n, 0.01, &times)?;
        let traj = sc.evolve(&IntegratorConfig::default(), mode)?;
        let init = &traj.snapshot_at(0.0).expect("initial snapshot").blocks;
        let excess = init
            .iter()
            .zip(&traj.final_state().blocks)
            .filter(|(b, _)| !b.label.is_diagonal())
            .map(|(b0, b1)| block_trace(b1).norm() - block_trace(b0).norm())
            .fold(f64::NEG_INFINITY, f64::max);
        rep.line(excess <= 1e-9, &format!("coherence envelope [{mode:?}]"), format!("max growth {excess:.2e} (<= 1e-9)"));
    }

    let t = bath.temperature;
    match threshold_coupling(&magnet, t) {
        Ok(h_c) => {
            let scan = barrier_scan(&magnet, Spin::Up, t, &coupling_grid(4.0 * h_c.max(1e-4), 1e-4));
            let ok = scan.is_some_and(|x| (x - h_c).abs() <= 1e-4);
            rep.line(ok, "threshold cross-check", format!("h_c {h_c:.6}, scan {scan:?} (|diff| <= 1e-4)"));
        }
        Err(e) => println!("SKIP threshold cross-check: {e}"),
    }

    println!("verify: {} failure(s)", rep.failures);
    Ok(rep.failures == 0)
}
