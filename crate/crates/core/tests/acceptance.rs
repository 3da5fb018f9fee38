//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any primary criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use cwsim_core::bath::{build_generator, BathSpec, OffDiagonalBath};
use cwsim_core::engine::{CouplingSchedule, IntegratorConfig, Region};
use cwsim_core::magnet::{meanfield_fixed_point, threshold_coupling, MagnetSpec, Spin};
use cwsim_core::oracle::{analytic_dephasing, barrier_scan, coupling_grid, dense_reference_trajectory, stationarity_residual};
use cwsim_core::scenario::{
    build_scenario, partial_trace, readout, trace_distance, Outcome, PacketSpec, RegionSpec, ScenarioKind, ScenarioSpec,
    SpinPreset, SpinStateSpec,
};
use cwsim_core::Complex64;
use nalgebra::DMatrix;

// default parameter set
const N: usize = 200;
const T: f64 = 0.2;
const GAMMA: f64 = 0.002;
const G: f64 = 0.1;

// registration runs: coupling on for T_OFF, then relaxation at g = 0
const T_OFF: f64 = 15_000.0;
const T_FINAL: f64 = 20_000.0;

// spatial runs: strong in-region coupling, short window
const G_SPATIAL: f64 = 25.0;
const T_OFF_SPATIAL: f64 = 100.0;
const T_FINAL_SPATIAL: f64 = 2_000.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn defaults() -> IntegratorConfig {
    IntegratorConfig::default()
}

fn schedule(g: f64, t_off: f64) -> CouplingSchedule {
    CouplingSchedule { g, t_on: 0.0, t_off }
}

fn spec(kind: ScenarioKind, g: f64, t_off: f64, t_final: f64) -> ScenarioSpec {
    ScenarioSpec::new(kind, schedule(g, t_off), t_final)
}

fn run(
    spec: &ScenarioSpec,
    mode: OffDiagonalBath,
) -> (cwsim_core::scenario::Scenario, cwsim_core::engine::Trajectory) {
    let sc = build_scenario(spec).expect("valid scenario");
    let traj = sc.evolve(&defaults(), mode).expect("evolution succeeds");
    (sc, traj)
}

fn c1_born_weights() -> Verdict {
    let mut s = spec(ScenarioKind::Single, G, T_OFF, T_FINAL);
    s.spin_state = Some(SpinStateSpec::real(vec![vec![0.3, 0.0], vec![0.0, 0.7]]));
    let start = Instant::now();
    let (_, traj) = run(&s, OffDiagonalBath::Mixed);
    let r = readout(&traj, 0.5, T_FINAL).unwrap();
    let el = start.elapsed();
    let a = &r.apparatus[0];
    check(
        (a.p_up - 0.3).abs() <= 1e-6 && (a.p_down - 0.7).abs() <= 1e-6 && a.p_null < 1e-3 && el < Duration::from_secs(10),
        format!(
            "P(up)={:.9} P(down)={:.9} (tol 1e-6), P(null)={:.2e} (< 1e-3), {:.2?} (< 10 s)",
            a.p_up, a.p_down, a.p_null, el
        ),
    )
}

fn c2_dephasing_law() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n in [1, 50, 200] {
        let period = PI / (2.0 * G);
        let mut s = spec(ScenarioKind::Single, G, 1.25 * period, 1.25 * period);
        s.magnet.n = n;
        s.bath.gamma = 0.0;
        s.spin_state = Some(SpinStateSpec::real(vec![vec![0.5, 0.5], vec![0.5, 0.5]]));
        let (sc, traj) = run(&s, OffDiagonalBath::Mixed);
        let b = sc.blocks.iter().position(|b| !b.label.is_diagonal()).unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            let sim = traj.samples[b][i].trace.norm() / 0.5;
            worst = worst.max((sim - analytic_dephasing(n, G, t)).abs());
        }
    }
    let el = start.elapsed();
    check(
        worst <= 1e-8 && el < Duration::from_secs(5),
        format!("max |sim - |cos 2gt|^N| = {worst:.2e} over 512 samples x N in {{1,50,200}} (tol 1e-8), {el:.2?} (< 5 s)"),
    )
}

fn c3_recurrence_suppression() -> Verdict {
    let t_rec = PI / (2.0 * G);
    let mut s = spec(ScenarioKind::Single, G, t_rec, t_rec);
    s.spin_state = Some(SpinStateSpec::real(vec![vec![0.5, 0.5], vec![0.5, 0.5]]));
    let start = Instant::now();
    let (sc, traj) = run(&s, OffDiagonalBath::Mixed);
    let b = sc.blocks.iter().position(|b| !b.label.is_diagonal()).unwrap();
    let ratio = traj.samples[b].last().unwrap().trace.norm() / 0.5;
    let el = start.elapsed();
    check(
        ratio <= 0.01 && el < Duration::from_secs(10),
        format!("|coherence(pi/2g)| / initial = {ratio:.4} (<= 0.01), {el:.2?} (< 10 s)"),
    )
}

fn c4_detailed_balance() -> Verdict {
    let start = Instant::now();
    let bath = BathSpec::default();
    let mut worst: f64 = 0.0;
    for n in [10, 50, 200] {
        let magnet = MagnetSpec::new(n, 0.0, 1.0).unwrap();
        for g in [0.0, 0.1] {
            for s in [Spin::Up, Spin::Down] {
                let gen = build_generator(&magnet, &bath, s, s, g, g, OffDiagonalBath::Mixed);
                worst = worst.max(stationarity_residual(&gen, &magnet, &bath, s, g));
            }
        }
    }
    let el = start.elapsed();
    check(
        worst < 1e-10 && el < Duration::from_secs(1),
        format!("max stationarity residual = {worst:.2e} (< 1e-10), {el:.2?} (< 1 s)"),
    )
}

fn c5_registration_threshold() -> Verdict {
    let start = Instant::now();
    let magnet = MagnetSpec::new(N, 0.0, 1.0).unwrap();
    let h_c = threshold_coupling(&magnet, T).unwrap();
    let scan = barrier_scan(&magnet, Spin::Up, T, &coupling_grid(0.1, 1e-4)).unwrap_or(f64::NAN);
    let horizon = 30_000.0;

    let mut above = spec(ScenarioKind::Single, 1.5 * h_c, horizon, horizon);
    above.spin_state = Some(SpinStateSpec::preset(SpinPreset::Up));
    let (_, traj) = run(&above, OffDiagonalBath::Mixed);
    let m_star = meanfield_fixed_point(&magnet, Spin::Up, 1.5 * h_c, T).unwrap().m_f;
    let fin = &traj.final_state().blocks[0].factors[0];
    let near: f64 = fin
        .amplitudes
        .iter()
        .enumerate()
        .filter(|(k, _)| (magnet.m_at(*k) - m_star).abs() <= 4.0 / N as f64)
        .map(|(_, a)| a.re)
        .sum();

    let mut below = above.clone();
    below.schedule.g = 0.5 * h_c;
    let (_, traj) = run(&below, OffDiagonalBath::Mixed);
    let mean_below = traj.samples[0].iter().map(|s| s.factors[0].mean_m).fold(f64::NEG_INFINITY, f64::max);
    let el = start.elapsed();
    check(
        (h_c - scan).abs() <= 1e-4 && near > 0.99 && mean_below < 0.2 && el < Duration::from_secs(30),
        format!(
            "h_c={h_c:.6} scan={scan:.4} (|diff| <= 1e-4); 1.5h_c mass near m*={m_star:.5}: {near:.6} (> 0.99); \
             0.5h_c max <m> = {mean_below:.4} (< 0.2); {el:.2?} (< 30 s)"
        ),
    )
}

fn c6_epr_one_apparatus() -> Verdict {
    let (_, traj) = run(&spec(ScenarioKind::EprOneApparatus, G, T_OFF, T_FINAL), OffDiagonalBath::Mixed);
    let r = readout(&traj, 0.5, T_FINAL).unwrap();
    let a = &r.apparatus[0];
    let cond = a.conditional.up.as_ref().expect("P(up) > 0").to_dense();
    let b_state = partial_trace(&cond, 1);
    let mut down = DMatrix::from_element(2, 2, Complex64::new(0.0, 0.0));
    down[(1, 1)] = Complex64::new(1.0, 0.0);
    let d = trace_distance(&b_state, &down);
    check(
        (a.p_up - 0.5).abs() <= 1e-6 && (a.p_down - 0.5).abs() <= 1e-6 && d <= 1e-6,
        format!("P(up)={:.9} P(down)={:.9} (tol 1e-6); D(rho_b|up, |d><d|) = {d:.2e} (<= 1e-6)", a.p_up, a.p_down),
    )
}

fn c7_epr_two_apparatuses() -> Verdict {
    let (_, traj) = run(&spec(ScenarioKind::EprTwoApparatuses, G, T_OFF, T_FINAL), OffDiagonalBath::Mixed);
    let r = readout(&traj, 0.5, T_FINAL).unwrap();
    let anti = r.anti_aligned.unwrap();
    let upup = r.joint_probability(&[Outcome::Up, Outcome::Up]);
    check(
        (anti - 1.0).abs() <= 1e-6 && upup < 1e-6,
        format!("P(anti-aligned)={anti:.9} (tol 1e-6); P(up,up)={upup:.2e} (< 1e-6)"),
    )
}

fn spatial_spec(kind: ScenarioKind) -> ScenarioSpec {
    let mut s = spec(kind, G_SPATIAL, T_OFF_SPATIAL, T_FINAL_SPATIAL);
    s.spin_state = Some(SpinStateSpec::real(vec![vec![0.3, 0.0], vec![0.0, 0.7]]));
    s.snapshots = vec![T_OFF_SPATIAL];
    s
}

fn c8_spatial_one_detector() -> Verdict {
    let mut s = spatial_spec(ScenarioKind::SpatialOneDetector);
    s.regions = Some(RegionSpec {
        intervals: vec![[-3.0, -1.0]],
        k: 1.0,
    });
    s.packet = Some(PacketSpec::TwoLobeGaussian {
        means: [-2.0, 2.0],
        widths: [0.1, 0.1],
        amplitudes: Some([0.7f64.sqrt(), 0.3f64.sqrt()]),
    });
    let (sc, traj) = run(&s, OffDiagonalBath::Mixed);
    let w_rr = sc.region_weights.as_ref().unwrap().get(Region::Detector(0), Region::Detector(0)).re;
    let r = readout(&traj, 0.5, T_FINAL_SPATIAL).unwrap();
    let p_click = r.apparatus[0].p_click;

    let interference = r
        .coherences
        .iter()
        .filter(|c| c.block.contains("@R1|out") || c.block.contains("@out|R1"))
        .map(|c| c.ratio)
        .fold(0.0, f64::max);

    let initial = &traj.snapshot_at(0.0).unwrap().blocks;
    let at_off = &traj.snapshot_at(T_OFF_SPATIAL).unwrap().blocks;
    let mut tv: f64 = 0.0;
    for (b0, b1) in initial.iter().zip(at_off) {
        if b0.label.region_bra == Region::Outside && b0.label.region_ket == Region::Outside && b0.label.is_diagonal() {
            let d: f64 = b0.factors[0]
                .amplitudes
                .iter()
                .zip(&b1.factors[0].amplitudes)
                .map(|(a, b)| (a - b).norm())
                .sum();
            tv = tv.max(0.5 * d);
        }
    }

    // spin statistics given a click against r(0)
    let click = r.apparatus[0].conditional.click.as_ref().unwrap().to_dense();
    let z_dev = (click[(0, 0)].re - 0.3).abs().max((click[(1, 1)].re - 0.7).abs());
    check(
        (w_rr - 0.7).abs() < 1e-10 && (p_click - 0.7).abs() <= 1e-6 && interference < 1e-6 && tv < 1e-3 && z_dev <= 1e-6,
        format!(
            "w_RR={w_rr:.12}; P(click)={p_click:.9} (tol 1e-6); max interference ratio {interference:.2e} (< 1e-6); \
             TV(out,out @ t_off)={tv:.2e} (< 1e-3); spin|click deviation {z_dev:.2e}"
        ),
    )
}

fn c9_spatial_two_detectors() -> Verdict {
    let mut s = spatial_spec(ScenarioKind::SpatialTwoDetectors);
    s.regions = Some(RegionSpec {
        intervals: vec![[-3.0, -1.0], [1.0, 3.0]],
        k: 1.0,
    });
    s.packet = Some(PacketSpec::TwoLobeGaussian {
        means: [-2.0, 2.0],
        widths: [0.1, 0.1],
        amplitudes: None,
    });
    let (sc, traj) = run(&s, OffDiagonalBath::Mixed);
    let classes = sc.region_classes();
    let r = readout(&traj, 0.5, T_FINAL_SPATIAL).unwrap();
    let residual = traj
        .final_state()
        .blocks
        .iter()
        .filter(|b| b.label.region_bra != b.label.region_ket)
        .map(|b| cwsim_core::engine::block_trace(b).norm())
        .fold(0.0, f64::max);
    let clicks = |o: Outcome| o != Outcome::Null;
    let both: f64 = r
        .joint
        .iter()
        .filter(|e| clicks(e.outcomes[0]) && clicks(e.outcomes[1]))
        .map(|e| e.probability)
        .sum();
    let none = r.joint_probability(&[Outcome::Null, Outcome::Null]);
    let total = r.apparatus[0].p_click + r.apparatus[1].p_click + none - both;
    check(
        classes == 9 && residual < 1e-6 && both < 1e-6 && (total - 1.0).abs() <= 1e-9,
        format!(
            "{classes} region classes (9); max off-class |trace| {residual:.2e} (< 1e-6); P(both)={both:.2e} (< 1e-6); \
             P(c1)+P(c2)+P(none)={total:.12}"
        ),
    )
}

fn c10_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let (t_off, t_final) = (300.0, 600.0);
    // every 32nd point of the reference grid
    let times: Vec<f64> = (0..=64).map(|i| i as f64 * t_final / 64.0).collect();
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    let kinds = [
        ScenarioKind::Single,
        ScenarioKind::EprOneApparatus,
        ScenarioKind::EprTwoApparatuses,
        ScenarioKind::SpatialOneDetector,
        ScenarioKind::SpatialTwoDetectors,
    ];
    for kind in kinds {
        for gamma in [0.0, GAMMA] {
            let mut s = spec(kind, G, t_off, t_final);
            s.magnet.n = 20;
            s.bath.gamma = gamma;
            s.samples = times.len();
            s.snapshots = times.clone();
            if kind.spins() == 1 {
                s.spin_state = Some(SpinStateSpec::real(vec![vec![0.3, 0.4], vec![0.4, 0.7]]));
            }
            if kind.is_spatial() {
                let intervals = if kind.detectors() == 1 {
                    vec![[-3.0, -1.0]]
                } else {
                    vec![[-3.0, -1.0], [1.0, 3.0]]
                };
                s.regions = Some(RegionSpec { intervals, k: 1.0 });
                s.packet = Some(PacketSpec::Gaussian { mean: -0.5, width: 1.5 });
            }
            let (sc, traj) = run(&s, OffDiagonalBath::Mixed);
            let reference = dense_reference_trajectory(&sc, OffDiagonalBath::Mixed, &times).unwrap();
            for (i, &t) in times.iter().enumerate() {
                let snap = traj.snapshot_at(t).unwrap();
                for (b, blk) in snap.blocks.iter().enumerate() {
                    for (a, d) in blk.factors.iter().enumerate() {
                        for (x, y) in d.amplitudes.iter().zip(&reference[b][a][i].amplitudes) {
                            worst = worst.max((x - y).norm());
                        }
                    }
                }
            }
            configs += 1;
        }
    }
    check(
        worst < 1e-6,
        format!("max |engine - dense reference| = {worst:.2e} over {configs} configurations (< 1e-6), {:.2?}", start.elapsed()),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("born weights", c1_born_weights),
        ("dephasing law", c2_dephasing_law),
        ("recurrence suppression", c3_recurrence_suppression),
        ("detailed balance", c4_detailed_balance),
        ("registration threshold", c5_registration_threshold),
        ("EPR, one apparatus", c6_epr_one_apparatus),
        ("EPR, two apparatuses", c7_epr_two_apparatuses),
        ("spatial, one detector", c8_spatial_one_detector),
        ("spatial, two detectors", c9_spatial_two_detectors),
        ("oracle equivalence", c10_oracle_equivalence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        println!(
            "{} [{id:>2}] {name}: {} [{:.2?}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed()
        );
        if !v.pass {
            failed.push(id);
        }
    }
    println!("SKIP [11] plotting front end (secondary component, not part of this workspace)");
    if failed.is_empty() {
        println!("acceptance: all primary criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
