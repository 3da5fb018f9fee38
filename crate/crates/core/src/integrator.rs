//! Dormand–Prince 5(4) in the rotating frame of the sector phases.
//!
//! Within a step starting at `t_n` the state is written as
//! `y_k = exp(-i ω_k τ) v_k`, `τ = t - t_n`, so the diagonal phase part of
//! the generator is carried exactly and only the bath terms are integrated.
//! Blocks without phases reduce to plain DOPRI5, which preserves the block
//! trace to rounding because the rate columns sum to zero.

use num_complex::Complex64;

use crate::bath::BlockGenerator;

// Butcher tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Failure {
    Underflow { t: f64 },
    TooManySteps { t: f64 },
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Stats {
    pub accepted: usize,
    pub rejected: usize,
}

struct Workspace {
    k: [Vec<Complex64>; 7],
    stage: Vec<Complex64>,
    scratch: Vec<Complex64>,
    v1: Vec<Complex64>,
    rot: [Vec<Complex64>; 5],
}

impl Workspace {
    fn new(len: usize) -> Self {
        let z = || vec![Complex64::new(0.0, 0.0); len];
        Workspace {
            k: [z(), z(), z(), z(), z(), z(), z()],
            stage: z(),
            scratch: z(),
            v1: z(),
            rot: [z(), z(), z(), z(), z()],
        }
    }
}

fn fill_rotation(phase: &[f64], tau: f64, out: &mut [Complex64]) {
    for (r, w) in out.iter_mut().zip(phase) {
        let (s, c) = (w * tau).sin_cos();
        *r = Complex64::new(c, s);
    }
}

/// Rotating-frame derivative: `out = rot ⊙ R(conj(rot) ⊙ v)` with `R` the rate part.
fn rhs(gen: &BlockGenerator, rot: Option<&[Complex64]>, v: &[Complex64], scratch: &mut [Complex64], out: &mut [Complex64]) {
    match rot {
        None => gen.apply_rates(v, out),
        Some(rot) => {
            for ((s, v), r) in scratch.iter_mut().zip(v).zip(rot) {
                *s = v * r.conj();
            }
            gen.apply_rates(scratch, out);
            for (o, r) in out.iter_mut().zip(rot) {
                *o *= r;
            }
        }
    }
}

fn max_scaled(x: &[Complex64], y0: &[Complex64], tol: &Tolerances) -> f64 {
    x.iter()
        .zip(y0)
        .map(|(x, y)| x.norm() / (tol.atol + tol.rtol * y.norm()))
        .fold(0.0, f64::max)
}

/// Advances `y` from `t0` to `t1` under `gen`. `record(i, y)` is called for
/// every `(i, t)` in `samples` with `t0 < t <= t1` (sorted by `t`).
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub(crate) fn integrate(
    gen: &BlockGenerator,
    y: &mut [Complex64],
    t0: f64,
    t1: f64,
    samples: &[(usize, f64)],
    record: &mut dyn FnMut(usize, &[Complex64]),
    tol: &Tolerances,
    stats: &mut Stats,
) -> Result<(), Failure> {
    let pending: Vec<(usize, f64)> = samples.iter().copied().filter(|&(_, t)| t > t0 && t <= t1).collect();
    if t1 <= t0 {
        return Ok(());
    }
    let len = y.len();

    if gen.max_rate() == 0.0 {
        // v is constant: the solution is a pure rotation.
        let y0 = y.to_vec();
        let mut out = vec![Complex64::new(0.0, 0.0); len];
        let mut rot = vec![Complex64::new(0.0, 0.0); len];
        for &(i, t) in &pending {
            fill_rotation(&gen.phase, -(t - t0), &mut rot);
            for ((o, a), r) in out.iter_mut().zip(&y0).zip(&rot) {
                *o = a * r;
            }
            record(i, &out);
        }
        fill_rotation(&gen.phase, -(t1 - t0), &mut rot);
        for (a, r) in y.iter_mut().zip(&rot) {
            *a *= r;
        }
        stats.accepted += 1;
        return Ok(());
    }

    let rotating = gen.has_phase();
    let mut ws = Workspace::new(len);
    let mut t = t0;
    let span = t1 - t0;
    let mut next_sample = 0;

    rhs(gen, None, y, &mut ws.scratch, &mut ws.k[0]);
    let mut h = initial_step(gen, y, &mut ws, span, tol);
    let mut fac_max = FAC_MAX;
    let mut steps = 0usize;

    loop {
        if steps >= tol.max_steps {
            return Err(Failure::TooManySteps { t });
        }
        let last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * span;
        if last {
            h = t1 - t;
        }
        if h <= 1e-13 * t.abs().max(1.0) {
            return Err(Failure::Underflow { t });
        }

        if rotating {
            for (r, c) in ws.rot.iter_mut().zip([C2, C3, C4, C5, 1.0]) {
                fill_rotation(&gen.phase, c * h, r);
            }
        }
        let stages: [(&[f64], usize); 5] = [
            (&[A21], 0),
            (&[A31, A32], 1),
            (&[A41, A42, A43], 2),
            (&[A51, A52, A53, A54], 3),
            (&[A61, A62, A63, A64, A65], 4),
        ];
        {
            let Workspace {
                k, stage, scratch, v1, rot,
            } = &mut ws;
            for (s, (coeffs, ri)) in stages.iter().enumerate() {
                let (done, rest) = k.split_at_mut(s + 1);
                for j in 0..len {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (c, kk) in coeffs.iter().zip(done.iter()) {
                        acc += kk[j] * *c;
                    }
                    stage[j] = y[j] + acc * h;
                }
                let r = if rotating { Some(&rot[*ri][..]) } else { None };
                rhs(gen, r, stage, scratch, &mut rest[0]);
            }
            for j in 0..len {
                v1[j] = y[j] + (k[0][j] * A71 + k[2][j] * A73 + k[3][j] * A74 + k[4][j] * A75 + k[5][j] * A76) * h;
            }
            let r = if rotating { Some(&rot[4][..]) } else { None };
            rhs(gen, r, v1, scratch, &mut k[6]);
        }

        let mut err = 0.0f64;
        for j in 0..len {
            let k = &ws.k;
            let e = (k[0][j] * E1 + k[2][j] * E3 + k[3][j] * E4 + k[4][j] * E5 + k[5][j] * E6 + k[6][j] * E7) * h;
            let sc = tol.atol + tol.rtol * y[j].norm().max(ws.v1[j].norm());
            err = err.max(e.norm() / sc);
        }
        steps += 1;

        if err <= 1.0 {
            stats.accepted += 1;
            let t_new = if last { t1 } else { t + h };

            while next_sample < pending.len() && pending[next_sample].1 <= t_new {
                let (idx, ts) = pending[next_sample];
                let theta = ((ts - t) / h).clamp(0.0, 1.0);
                let mut out = vec![Complex64::new(0.0, 0.0); len];
                if ts >= t_new {
                    if rotating {
                        for j in 0..len {
                            out[j] = ws.v1[j] * ws.rot[4][j].conj();
                        }
                    } else {
                        out.copy_from_slice(&ws.v1);
                    }
                } else {
                    dense(&ws, y, h, theta, &mut out);
                    if rotating {
                        let mut r = vec![Complex64::new(0.0, 0.0); len];
                        fill_rotation(&gen.phase, -theta * h, &mut r);
                        for (o, r) in out.iter_mut().zip(&r) {
                            *o *= r;
                        }
                    }
                }
                record(idx, &out);
                next_sample += 1;
            }

            // move to the frame of the new step
            if rotating {
                for j in 0..len {
                    let back = ws.rot[4][j].conj();
                    y[j] = ws.v1[j] * back;
                    ws.k[0][j] = ws.k[6][j] * back;
                }
            } else {
                y.copy_from_slice(&ws.v1);
                let (first, rest) = ws.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
            }
            t = t_new;
            if last {
                return Ok(());
            }
            let fac = if err == 0.0 {
                fac_max
            } else {
                (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, fac_max)
            };
            h = (h * fac).min(tol.max_step);
            fac_max = FAC_MAX;
        } else {
            stats.rejected += 1;
            h *= (SAFETY * err.powf(-0.2)).max(FAC_MIN);
            fac_max = 1.0;
        }
    }
}

fn dense(ws: &Workspace, y0: &[Complex64], h: f64, theta: f64, out: &mut [Complex64]) {
    let k = &ws.k;
    let theta1 = 1.0 - theta;
    for j in 0..y0.len() {
        let r2 = ws.v1[j] - y0[j];
        let r3 = k[0][j] * h - r2;
        let r4 = r2 - k[6][j] * h - r3;
        let r5 = (k[0][j] * D1 + k[2][j] * D3 + k[3][j] * D4 + k[4][j] * D5 + k[5][j] * D6 + k[6][j] * D7) * h;
        out[j] = y0[j] + (r2 + (r3 + (r4 + r5 * theta1) * theta) * theta1) * theta;
    }
}

fn initial_step(gen: &BlockGenerator, y: &[Complex64], ws: &mut Workspace, span: f64, tol: &Tolerances) -> f64 {
    let d0 = max_scaled(y, y, tol);
    let d1 = max_scaled(&ws.k[0], y, tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span).min(tol.max_step);

    let rotating = gen.has_phase();
    for ((s, &yj), &kj) in ws.stage.iter_mut().zip(y).zip(&ws.k[0]) {
        *s = yj + kj * h0;
    }
    if rotating {
        fill_rotation(&gen.phase, h0, &mut ws.rot[0]);
    }
    {
        let Workspace {
            k, stage, scratch, rot, ..
        } = ws;
        let r = if rotating { Some(&rot[0][..]) } else { None };
        rhs(gen, r, stage, scratch, &mut k[1]);
    }
    let diff: Vec<Complex64> = ws.k[1].iter().zip(&ws.k[0]).map(|(a, b)| (a - b) / h0).collect();
    let d2 = max_scaled(&diff, y, tol);
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span).min(tol.max_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{build_generator, BathSpec, OffDiagonalBath};
    use crate::magnet::{MagnetSpec, Spin};

    fn tol() -> Tolerances {
        Tolerances {
            rtol: 1e-10,
            atol: 1e-16,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }

    #[test]
    fn scalar_decay_with_rotation() {
        // single sector: y' = (-loss - iω) y has a closed form
        let gen = BlockGenerator {
            phase: vec![3.0],
            loss: vec![0.7],
            gain_up: vec![0.0],
            gain_down: vec![0.0],
        };
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let samples: Vec<(usize, f64)> = (1..=10).map(|i| (i, 0.37 * i as f64)).collect();
        let mut seen = Vec::new();
        let mut stats = Stats::default();
        integrate(&gen, &mut y, 0.0, 4.0, &samples, &mut |i, v| seen.push((i, v[0])), &tol(), &mut stats).unwrap();
        assert_eq!(seen.len(), 10);
        for (i, v) in seen {
            let t = 0.37 * i as f64;
            let exact = Complex64::new(-0.7 * t, -3.0 * t).exp();
            assert!((v - exact).norm() < 1e-9, "t={t} {v} {exact}");
        }
        let exact = Complex64::new(-2.8, -12.0).exp();
        assert!((y[0] - exact).norm() < 1e-10);
    }

    #[test]
    fn two_level_exchange_against_closed_form() {
        // y0' = -a y0 + b y1, y1' = a y0 - b y1 with y0(0) = 1
        let (a, b) = (0.3, 0.5);
        let gen = BlockGenerator {
            phase: vec![0.0, 0.0],
            loss: vec![a, b],
            gain_up: vec![a, 0.0],
            gain_down: vec![0.0, b],
        };
        let mut y = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let mut stats = Stats::default();
        integrate(&gen, &mut y, 0.0, 3.0, &[], &mut |_, _| {}, &tol(), &mut stats).unwrap();
        let p0 = b / (a + b) + a / (a + b) * (-(a + b) * 3.0f64).exp();
        assert!((y[0].re - p0).abs() < 1e-10);
        assert!((y[0].re + y[1].re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rotating_frame_matches_plain_frame() {
        // the same off-diagonal block integrated with and without the
        // rotating frame, the latter by splitting the phase into the rates
        let magnet = MagnetSpec::new(12, 0.0, 1.0).unwrap();
        let bath = BathSpec {
            gamma: 0.05,
            ..BathSpec::default()
        };
        let gen = build_generator(&magnet, &bath, Spin::Up, Spin::Down, 0.1, 0.1, OffDiagonalBath::Mixed);
        let y0: Vec<Complex64> = (0..13).map(|k| Complex64::new(magnet.log_multiplicity(k).exp() / 4096.0, 0.0)).collect();

        let mut a = y0.clone();
        let mut stats = Stats::default();
        integrate(&gen, &mut a, 0.0, 20.0, &[], &mut |_, _| {}, &tol(), &mut stats).unwrap();

        // Euler-free reference: tiny fixed RK4 steps of the full generator
        let mut b = y0;
        let h = 1e-3;
        let len = b.len();
        let f = |y: &[Complex64]| {
            let mut o = vec![Complex64::new(0.0, 0.0); len];
            gen.apply(y, &mut o);
            o
        };
        for _ in 0..20_000 {
            let k1 = f(&b);
            let t1: Vec<_> = b.iter().zip(&k1).map(|(y, k)| y + k * (h / 2.0)).collect();
            let k2 = f(&t1);
            let t2: Vec<_> = b.iter().zip(&k2).map(|(y, k)| y + k * (h / 2.0)).collect();
            let k3 = f(&t2);
            let t3: Vec<_> = b.iter().zip(&k3).map(|(y, k)| y + k * h).collect();
            let k4 = f(&t3);
            for j in 0..len {
                b[j] += (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (h / 6.0);
            }
        }
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-9, "{x} {y}");
        }
    }

    #[test]
    fn underflow_is_reported() {
        let gen = BlockGenerator {
            phase: vec![0.0],
            loss: vec![1e300],
            gain_up: vec![0.0],
            gain_down: vec![0.0],
        };
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let tol = Tolerances {
            rtol: 1e-12,
            atol: 1e-300,
            max_step: 1.0,
            max_steps: 1000,
        };
        let res = integrate(&gen, &mut y, 0.0, 1.0, &[], &mut |_, _| {}, &tol, &mut Stats::default());
        assert!(matches!(res, Err(Failure::Underflow { .. }) | Err(Failure::TooManySteps { .. })));
    }
}
