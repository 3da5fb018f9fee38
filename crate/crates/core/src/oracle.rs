//! Independent reference computations.
//!
//! Nothing here calls into the engine's integrator or the magnet module's
//! log-gamma path: multiplicities come from explicit log-factorial sums,
//! evolution from dense matrix exponentials, thresholds from grid scans.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bath::{BathSpec, BlockGenerator, OffDiagonalBath};
use crate::engine::SectorDistribution;
use crate::error::{Error, Result};
use crate::expm::expm;
use crate::magnet::{MagnetSpec, Spin};
use crate::scenario::Scenario;

/// Largest `N` accepted by the dense reference.
pub const DENSE_MAX_N: usize = 64;

/// Reference steps per schedule segment.
pub const DENSE_STEPS: usize = 1024;

/// `|cos(2gt)|^N`, the pure-dephasing envelope of a spin coherence.
pub fn analytic_dephasing(n: usize, g: f64, t: f64) -> f64 {
    let c = (2.0 * g * t).cos().abs();
    // cos at an odd multiple of π/2 is only zero up to rounding
    if c <= f64::EPSILON {
        return 0.0;
    }
    (n as f64 * c.ln()).exp()
}

/// `Σ_k binom(N,k)/2^N · exp(2i g N m_k t)` by explicit summation.
pub fn dephasing_sum(n: usize, g: f64, t: f64) -> Complex64 {
    let lf = log_factorials(n);
    let nf = n as f64;
    (0..=n)
        .map(|k| {
            let m = -1.0 + 2.0 * k as f64 / nf;
            let p = (lf[n] - lf[k] - lf[n - k] - nf * std::f64::consts::LN_2).exp();
            Complex64::from_polar(p, 2.0 * g * nf * m * t)
        })
        .sum()
}

fn log_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for i in 1..=n {
        out[i] = out[i - 1] + (i as f64).ln();
    }
    out
}

fn energy(magnet: &MagnetSpec, field: f64, m: f64) -> f64 {
    let n = magnet.n as f64;
    -n * field * m - n * magnet.j2 * m.powi(2) / 2.0 - n * magnet.j4 * m.powi(4) / 4.0
}

fn kernel(bath: &BathSpec, w: f64) -> f64 {
    if w == 0.0 {
        return bath.temperature / 4.0;
    }
    w / 4.0 * (-w.abs() / bath.cutoff).exp() / ((w / bath.temperature).exp() - 1.0)
}

/// Dense matrix of a banded generator.
pub fn generator_matrix(gen: &BlockGenerator) -> DMatrix<Complex64> {
    let n = gen.len();
    let mut a = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for k in 0..n {
        a[(k, k)] = Complex64::new(-gen.loss()[k], -gen.phase()[k]);
        if k + 1 < n {
            a[(k + 1, k)] = Complex64::new(gen.gain_up()[k], 0.0);
            a[(k, k + 1)] = Complex64::new(gen.gain_down()[k + 1], 0.0);
        }
    }
    a
}

/// Dense generator assembled directly from the model, without the bath module.
#[allow(clippy::too_many_arguments)]
pub fn reference_matrix(
    magnet: &MagnetSpec,
    bath: &BathSpec,
    s_bra: Spin,
    s_ket: Spin,
    coupling_bra: f64,
    coupling_ket: f64,
    mode: OffDiagonalBath,
) -> DMatrix<Complex64> {
    let n = magnet.n;
    let nf = n as f64;
    let dm = 2.0 / nf;
    let hb = coupling_bra * s_bra.sign();
    let hk = coupling_ket * s_ket.sign();
    let same = hb == hk;
    let mode = if same { OffDiagonalBath::Mixed } else { mode };
    let mut a = DMatrix::from_element(n + 1, n + 1, Complex64::new(0.0, 0.0));
    for k in 0..=n {
        let m = -1.0 + k as f64 * dm;
        let w = if same { 0.0 } else { energy(magnet, hb, m) - energy(magnet, hk, m) };
        a[(k, k)] = Complex64::new(0.0, -w);
        if bath.gamma == 0.0 || mode == OffDiagonalBath::Off {
            continue;
        }
        for (target, count) in [(k as i64 + 1, (n - k) as f64), (k as i64 - 1, k as f64)] {
            if target < 0 || target > n as i64 {
                continue;
            }
            let mt = -1.0 + target as f64 * dm;
            let freq = 0.5 * ((energy(magnet, hb, mt) - energy(magnet, hb, m)) + (energy(magnet, hk, mt) - energy(magnet, hk, m)));
            let rate = 2.0 * bath.gamma * count * kernel(bath, freq);
            a[(k, k)] -= rate;
            if mode == OffDiagonalBath::Mixed {
                a[(target as usize, k)] += rate;
            }
        }
    }
    a
}

struct DenseStepper {
    step: DMatrix<Complex64>,
    gen: DMatrix<Complex64>,
    dt: f64,
}

impl DenseStepper {
    fn new(gen: DMatrix<Complex64>, span: f64) -> Self {
        let dt = span / DENSE_STEPS as f64;
        let step = expm(&(&gen * Complex64::new(dt, 0.0)));
        DenseStepper { step, gen, dt }
    }

    fn partial(&self, y: &DVector<Complex64>, tau: f64) -> DVector<Complex64> {
        if tau == 0.0 {
            return y.clone();
        }
        expm(&(&self.gen * Complex64::new(tau, 0.0))) * y
    }
}

fn check_size(n: usize) -> Result<()> {
    if n > DENSE_MAX_N {
        return Err(Error::TooLarge { n, max: DENSE_MAX_N });
    }
    Ok(())
}

/// Evolves `initial` to `t_final` under a fixed generator with
/// [`DENSE_STEPS`] exponential steps.
pub fn dense_reference_evolution(gen: &BlockGenerator, initial: &SectorDistribution, t_final: f64) -> Result<SectorDistribution> {
    check_size(gen.len().saturating_sub(1))?;
    if initial.amplitudes.len() != gen.len() {
        return Err(Error::InvalidParameter("initial distribution length does not match the generator".into()));
    }
    let mut y = DVector::from_vec(initial.amplitudes.clone());
    if t_final > 0.0 {
        let stepper = DenseStepper::new(generator_matrix(gen), t_final);
        for _ in 0..DENSE_STEPS {
            y = &stepper.step * y;
        }
    }
    Ok(SectorDistribution {
        amplitudes: y.iter().copied().collect(),
    })
}

/// Reference distributions `[block][apparatus][time]` for a whole scenario,
/// with generators built by [`reference_matrix`]. Each schedule segment is
/// split into [`DENSE_STEPS`] steps; off-grid times get one extra partial
/// exponential.
pub fn dense_reference_trajectory(
    scenario: &Scenario,
    mode: OffDiagonalBath,
    times: &[f64],
) -> Result<Vec<Vec<Vec<SectorDistribution>>>> {
    for a in &scenario.apparatuses {
        check_size(a.magnet.n)?;
    }
    let sched = scenario.schedule();
    let t_final = scenario.spec.t_final;
    let segments = [(0.0, sched.t_on, 0.0), (sched.t_on, sched.t_off, sched.g), (sched.t_off, t_final, 0.0)];
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut out = Vec::new();
    for block in &scenario.blocks {
        let l = &block.label;
        let mut per_app = Vec::new();
        for (a, app) in scenario.apparatuses.iter().enumerate() {
            let empty = SectorDistribution { amplitudes: Vec::new() };
            let mut res = vec![empty; times.len()];
            let mut y = DVector::from_vec(block.factors[a].amplitudes.clone());
            let mut next = 0;
            while next < order.len() && times[order[next]] <= 0.0 {
                res[order[next]] = SectorDistribution {
                    amplitudes: y.iter().copied().collect(),
                };
                next += 1;
            }
            for (t0, t1, g) in segments {
                if t1 <= t0 {
                    continue;
                }
                let gen = reference_matrix(
                    &app.magnet,
                    &app.bath,
                    l.spin_bra[app.spin],
                    l.spin_ket[app.spin],
                    app.side_coupling(g, l.region_bra),
                    app.side_coupling(g, l.region_ket),
                    mode,
                );
                let stepper = DenseStepper::new(gen, t1 - t0);
                for s in 0..DENSE_STEPS {
                    let ts = t0 + s as f64 * stepper.dt;
                    let te = if s + 1 == DENSE_STEPS { t1 } else { t0 + (s + 1) as f64 * stepper.dt };
                    while next < order.len() && times[order[next]] < te {
                        let v = stepper.partial(&y, times[order[next]] - ts);
                        res[order[next]] = SectorDistribution {
                            amplitudes: v.iter().copied().collect(),
                        };
                        next += 1;
                    }
                    y = &stepper.step * &y;
                    while next < order.len() && times[order[next]] == te {
                        res[order[next]] = SectorDistribution {
                            amplitudes: y.iter().copied().collect(),
                        };
                        next += 1;
                    }
                }
            }
            per_app.push(res);
        }
        out.push(per_app);
    }
    Ok(out)
}

/// `‖L P_eq‖_∞ / max rate` with `P_eq ∝ G(m) exp(-H(m)/T)` scaled to unit
/// maximum. Zero when the generator has no rates.
pub fn stationarity_residual(gen: &BlockGenerator, magnet: &MagnetSpec, bath: &BathSpec, s: Spin, g: f64) -> f64 {
    let n = magnet.n;
    let lf = log_factorials(n);
    let log_p: Vec<f64> = (0..=n)
        .map(|k| {
            let m = -1.0 + 2.0 * k as f64 / n as f64;
            lf[n] - lf[k] - lf[n - k] - energy(magnet, g * s.sign(), m) / bath.temperature
        })
        .collect();
    let top = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = log_p.iter().map(|l| (l - top).exp()).collect();

    let (loss, up, down) = (gen.loss(), gen.gain_up(), gen.gain_down());
    let max_rate = loss.iter().chain(up).chain(down).fold(0.0f64, |a, &b| a.max(b));
    if max_rate == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for k in 0..=n {
        let mut r = -loss[k] * p[k];
        if k > 0 {
            r += up[k - 1] * p[k - 1];
        }
        if k < n {
            r += down[k + 1] * p[k + 1];
        }
        worst = worst.max(r.abs());
    }
    worst / max_rate
}

fn has_barrier(magnet: &MagnetSpec, s: Spin, temperature: f64, g: f64, lf: &[f64]) -> bool {
    let n = magnet.n;
    let f: Vec<f64> = (0..=n)
        .map(|k| {
            let m = -1.0 + 2.0 * k as f64 / n as f64;
            energy(magnet, g * s.sign(), m) - temperature * (lf[n] - lf[k] - lf[n - k])
        })
        .collect();
    // slide downhill from the grid point nearest m = 0
    let mut k = match s {
        Spin::Up => n.div_ceil(2),
        Spin::Down => n / 2,
    };
    loop {
        let left = if k > 0 { f[k - 1] } else { f64::INFINITY };
        let right = if k < n { f[k + 1] } else { f64::INFINITY };
        if left.min(right) >= f[k] {
            break;
        }
        k = if left < right { k - 1 } else { k + 1 };
    }
    let beyond: Box<dyn Iterator<Item = usize>> = match s {
        Spin::Up => Box::new(k + 1..=n),
        Spin::Down => Box::new(0..k),
    };
    let lowest = beyond.map(|j| f[j]).fold(f64::INFINITY, f64::min);
    lowest < f[k]
}

/// First `g` on the ascending grid at which the paramagnetic minimum no
/// longer sits behind a barrier towards `s`. `None` when there is no
/// barrier at the first grid point or the barrier survives the whole grid.
pub fn barrier_scan(magnet: &MagnetSpec, s: Spin, temperature: f64, g_grid: &[f64]) -> Option<f64> {
    let lf = log_factorials(magnet.n);
    let first = *g_grid.first()?;
    if !has_barrier(magnet, s, temperature, first, &lf) {
        return None;
    }
    g_grid.iter().copied().find(|&g| !has_barrier(magnet, s, temperature, g, &lf))
}

/// `[0, step, 2 step, ...]` up to and including `g_max`.
pub fn coupling_grid(g_max: f64, step: f64) -> Vec<f64> {
    let n = (g_max / step).ceil() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}
