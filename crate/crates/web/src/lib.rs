//! wasm-bindgen bindings for the browser demo in `www/`.
//!
//! Each export returns a flat `Float64Array`; the layout is given per
//! function. Errors surface as JS exceptions.

use cwsim_core::bath::{BathSpec, OffDiagonalBath};
use cwsim_core::engine::{CouplingSchedule, IntegratorConfig};
use cwsim_core::magnet::{free_energy, threshold_coupling, MagnetSpec, Spin};
use cwsim_core::oracle::analytic_dephasing;
use cwsim_core::scenario::{build_scenario, ScenarioKind, ScenarioSpec, SpinStateSpec};
use wasm_bindgen::prelude::*;

fn magnet(n: usize, j4: f64) -> cwsim_core::Result<MagnetSpec> {
    MagnetSpec::new(n, 0.0, j4)
}

fn spin(s: f64) -> Spin {
    if s < 0.0 {
        Spin::Down
    } else {
        Spin::Up
    }
}

pub fn free_energy_points(n: usize, j4: f64, s: f64, g: f64, temperature: f64) -> cwsim_core::Result<Vec<f64>> {
    let p = free_energy(&magnet(n, j4)?, spin(s), g, temperature)?;
    let nf = n as f64;
    Ok(p.m.iter().zip(&p.f).flat_map(|(&m, &f)| [m, f / nf]).collect())
}

pub fn coherence_points(n: usize, g: f64, gamma: f64, temperature: f64, t_final: f64, samples: usize) -> cwsim_core::Result<Vec<f64>> {
    let mut spec = ScenarioSpec::new(ScenarioKind::Single, CouplingSchedule { g, t_on: 0.0, t_off: t_final }, t_final);
    spec.magnet = magnet(n, 1.0)?;
    spec.bath = BathSpec::new(gamma, temperature, BathSpec::default().cutoff)?;
    spec.samples = samples;
    spec.spin_state = Some(SpinStateSpec::real(vec![vec![0.5, 0.5], vec![0.5, 0.5]]));
    let sc = build_scenario(&spec)?;
    // no worker threads in a plain wasm32 build
    let config = IntegratorConfig {
        parallel: false,
        ..IntegratorConfig::default()
    };
    let traj = sc.evolve(&config, OffDiagonalBath::Mixed)?;
    let b = sc.blocks.iter().position(|b| !b.label.is_diagonal()).expect("coherent initial state");
    Ok(traj
        .times
        .iter()
        .zip(&traj.samples[b])
        .flat_map(|(&t, s)| [t, analytic_dephasing(n, g, t), s.trace.norm() / 0.5])
        .collect())
}

fn js(e: cwsim_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Free energy per spin: `[m0, F0/N, m1, F1/N, ...]`.
#[wasm_bindgen]
pub fn free_energy_curve(n: usize, j4: f64, s: f64, g: f64, temperature: f64) -> Result<Vec<f64>, JsError> {
    free_energy_points(n, j4, s, g, temperature).map_err(js)
}

/// Smallest coupling at which the paramagnet is no longer metastable.
#[wasm_bindgen]
pub fn threshold(n: usize, j4: f64, temperature: f64) -> Result<f64, JsError> {
    threshold_coupling(&magnet(n, j4).map_err(js)?, temperature).map_err(js)
}

/// Coherence of an equal superposition: `[t, analytic (gamma = 0), simulated, ...]`.
#[wasm_bindgen]
pub fn dephasing_curve(n: usize, g: f64, gamma: f64, temperature: f64, t_final: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    coherence_points(n, g, gamma, temperature, t_final, samples).map_err(js)
}
