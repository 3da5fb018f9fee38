use std::f64::consts::PI;

use cwsim_core::bath::{build_generator, OffDiagonalBath};
use cwsim_core::engine::{
    block_trace, build_generators, evolve, uniform_times, BlockLabel, BlockState, CouplingSchedule, IntegratorConfig, Region,
};
use cwsim_core::magnet::Spin;
use cwsim_core::oracle::{analytic_dephasing, dense_reference_evolution};
use cwsim_core::scenario::{build_scenario, PacketSpec, RegionSpec, Scenario, ScenarioKind, ScenarioSpec, SpinStateSpec};

fn scenario(kind: ScenarioKind, n: usize, gamma: f64, g: f64, t_off: f64, t_final: f64) -> Scenario {
    let mut s = ScenarioSpec::new(kind, CouplingSchedule { g, t_on: 0.0, t_off }, t_final);
    s.magnet.n = n;
    s.bath.gamma = gamma;
    s.samples = 41;
    if kind.spins() == 1 {
        s.spin_state = Some(SpinStateSpec::real(vec![vec![0.6, 0.3], vec![0.3, 0.4]]));
    }
    if kind.is_spatial() {
        let intervals = if kind.detectors() == 1 {
            vec![[0.0, 1.0]]
        } else {
            vec![[-1.5, -0.5], [0.5, 1.5]]
        };
        s.regions = Some(RegionSpec { intervals, k: 1.0 });
        s.packet = Some(PacketSpec::Gaussian { mean: 0.2, width: 1.0 });
    }
    build_scenario(&s).unwrap()
}

const KINDS: [ScenarioKind; 5] = [
    ScenarioKind::Single,
    ScenarioKind::EprOneApparatus,
    ScenarioKind::EprTwoApparatuses,
    ScenarioKind::SpatialOneDetector,
    ScenarioKind::SpatialTwoDetectors,
];

#[test]
fn trace_is_conserved_for_every_kind() {
    for kind in KINDS {
        let sc = scenario(kind, 40, 0.01, 0.2, 60.0, 100.0);
        let traj = sc.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed).unwrap();
        for (t, tr) in traj.times.iter().zip(traj.total_trace()) {
            assert!((tr.re - 1.0).abs() < 1e-9 && tr.im.abs() < 1e-12, "{kind:?} t={t}: {tr}");
        }
    }
}

#[test]
fn conjugate_blocks_are_conjugate() {
    for kind in KINDS {
        let sc = scenario(kind, 30, 0.005, 0.1, 40.0, 50.0);
        let traj = sc.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed).unwrap();
        let snap = traj.final_state();
        for b in &snap.blocks {
            let partner = snap.blocks.iter().find(|p| p.label == b.label.conjugate()).unwrap();
            for (fa, fb) in b.factors.iter().zip(&partner.factors) {
                for (x, y) in fa.amplitudes.iter().zip(&fb.amplitudes) {
                    assert!((x - y.conj()).norm() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn scheduling_does_not_change_results() {
    let sc = scenario(ScenarioKind::EprTwoApparatuses, 50, 0.004, 0.15, 80.0, 120.0);
    let times = uniform_times(120.0, 25);
    let sched = *sc.schedule();
    let parallel = IntegratorConfig::default();
    let serial = IntegratorConfig { parallel: false, ..parallel };

    let gens = build_generators(&sc.blocks, &sc.apparatuses, &sched, OffDiagonalBath::Mixed);
    let a = evolve(&sc.blocks, &sc.apparatuses, &gens, &sched, 120.0, &times, &[], &parallel).unwrap();
    let b = evolve(&sc.blocks, &sc.apparatuses, &gens, &sched, 120.0, &times, &[], &serial).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.snapshots, b.snapshots);

    // reversed block order, evolved one block at a time
    for (i, blk) in sc.blocks.iter().enumerate().rev() {
        let one = std::slice::from_ref(blk);
        let g = build_generators(one, &sc.apparatuses, &sched, OffDiagonalBath::Mixed);
        let c = evolve(one, &sc.apparatuses, &g, &sched, 120.0, &times, &[], &serial).unwrap();
        if sc.blocks[..i].iter().any(|p| p.label == blk.label.conjugate()) {
            // mirrored in the batch run; compare up to conjugation
            for (x, y) in c.samples[0].iter().zip(&a.samples[i]) {
                assert!((x.trace - y.trace).norm() <= 1e-12);
            }
        } else {
            assert_eq!(c.samples[0], a.samples[i]);
            assert_eq!(c.snapshots[1].blocks[0], a.snapshots[1].blocks[i]);
        }
    }
}

#[test]
fn pure_dephasing_phases_and_moduli() {
    let sc = scenario(ScenarioKind::Single, 16, 0.0, 0.07, 30.0, 30.0);
    let traj = sc.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed).unwrap();
    let magnet = sc.apparatuses[0].magnet;
    let (init, fin) = (&traj.snapshot_at(0.0).unwrap().blocks, &traj.final_state().blocks);
    for (b0, b1) in init.iter().zip(fin) {
        let (x0, x1) = (&b0.factors[0].amplitudes, &b1.factors[0].amplitudes);
        if b0.label.is_diagonal() {
            assert_eq!(x0, x1);
            continue;
        }
        let s = if b0.label.spin_bra[0] == Spin::Up { 1.0 } else { -1.0 };
        for (k, (a, b)) in x0.iter().zip(x1).enumerate() {
            assert!((a.norm() - b.norm()).abs() < 1e-15);
            let expected = a * cwsim_core::Complex64::from_polar(1.0, s * 2.0 * 0.07 * 16.0 * magnet.m_at(k) * 30.0);
            assert!((b - expected).norm() < 1e-13);
        }
    }
}

#[test]
fn dephasing_recurrence() {
    let g = 0.1;
    let period = PI / (2.0 * g);
    let sc = scenario(ScenarioKind::Single, 50, 0.0, g, period, period);
    let traj = sc.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed).unwrap();
    let b = sc.blocks.iter().position(|b| b.label.to_string() == "u|d").unwrap();
    let fin = traj.samples[b].last().unwrap().trace.norm() / 0.3;
    assert!((fin - 1.0).abs() < 1e-12);
    for (i, &t) in traj.times.iter().enumerate() {
        assert!((traj.samples[b][i].trace.norm() / 0.3 - analytic_dephasing(50, g, t)).abs() < 1e-12);
    }
}

#[test]
fn coherences_never_exceed_the_binomial_envelope() {
    for mode in [OffDiagonalBath::Mixed, OffDiagonalBath::LossOnly, OffDiagonalBath::Off] {
        let sc = scenario(ScenarioKind::Single, 60, 0.01, 0.1, 80.0, 100.0);
        let traj = sc.evolve(&IntegratorConfig::default(), mode).unwrap();
        let init = &traj.snapshot_at(0.0).unwrap().blocks;
        for (b0, b1) in init.iter().zip(&traj.final_state().blocks) {
            if b0.label.is_diagonal() {
                continue;
            }
            assert!(block_trace(b1).norm() <= block_trace(b0).norm() * (1.0 + 1e-9), "{mode:?}");
        }
    }
}

#[test]
fn one_sided_region_coherence_matches_spin_coherence_without_bath() {
    // (R, out) with coupling k g on one side has the phases of (u, d) at g' = k g / 2
    let k = 1.0;
    let g = 0.2;
    let n = 30;
    let region = scenario(ScenarioKind::SpatialOneDetector, n, 0.0, g, 25.0, 25.0);
    let spin = scenario(ScenarioKind::Single, n, 0.0, k * g / 2.0, 25.0, 25.0);
    let tr = region.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed).unwrap();
    let ts = spin.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed).unwrap();

    let rb = region
        .blocks
        .iter()
        .position(|b| b.label.spin_bra == [Spin::Up] && b.label.spin_ket == [Spin::Up] && b.label.region_bra == Region::Detector(0) && b.label.region_ket == Region::Outside)
        .unwrap();
    let sb = spin.blocks.iter().position(|b| b.label.to_string() == "u|d").unwrap();
    let (w_r, w_s) = (region.blocks[rb].weight.norm(), spin.blocks[sb].weight.norm());
    for (a, b) in tr.samples[rb].iter().zip(&ts.samples[sb]) {
        assert!((a.trace.norm() / w_r - b.trace.norm() / w_s).abs() < 1e-12);
    }
}

#[test]
fn diagonal_block_registers_monotonically() {
    let mut s = ScenarioSpec::new(ScenarioKind::Single, CouplingSchedule { g: 0.1, t_on: 0.0, t_off: 15000.0 }, 15000.0);
    s.samples = 201;
    let sc = build_scenario(&s).unwrap();
    let traj = sc.evolve(&IntegratorConfig::default(), OffDiagonalBath::Mixed).unwrap();
    let means: Vec<f64> = traj.samples[0].iter().map(|x| x.factors[0].mean_m).collect();
    assert!(means.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    assert!(*means.last().unwrap() > 0.95);
}

#[test]
fn single_generator_against_dense_reference() {
    let sc = scenario(ScenarioKind::Single, 20, 0.002, 0.1, 300.0, 300.0);
    let app = &sc.apparatuses[0];
    let label = BlockLabel::new(vec![Spin::Up], vec![Spin::Up], Region::Unconfined, Region::Unconfined).unwrap();
    let gen = build_generator(&app.magnet, &app.bath, Spin::Up, Spin::Up, 0.1, 0.1, OffDiagonalBath::Mixed);
    let block = BlockState {
        label,
        weight: cwsim_core::Complex64::new(1.0, 0.0),
        factors: vec![cwsim_core::engine::SectorDistribution::binomial(&app.magnet)],
    };
    let sched = *sc.schedule();
    let gens = build_generators(std::slice::from_ref(&block), &sc.apparatuses, &sched, OffDiagonalBath::Mixed);
    let traj = evolve(std::slice::from_ref(&block), &sc.apparatuses, &gens, &sched, 300.0, &[], &[], &IntegratorConfig::default()).unwrap();
    let reference = dense_reference_evolution(&gen, &block.factors[0], 300.0).unwrap();
    for (x, y) in traj.final_state().blocks[0].factors[0].amplitudes.iter().zip(&reference.amplitudes) {
        assert!((x - y).norm() < 1e-6);
    }
}
