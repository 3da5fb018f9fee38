//! Effective quasi-Ohmic bath and the sector-basis generators it induces.
//!
//! The bath is not simulated mode by mode. It enters through the Markovian
//! kernel
//!
//! ```text
//! K(ω) = ¼ ω exp(-|ω|/Γ) / (exp(ω/T) - 1),   K(0) = T/4,
//! ```
//!
//! which obeys `K(-ω) = exp(ω/T) K(ω)`. Single-spin flips `m → m ± 2/N` get
//! rates `γ N (1 ∓ m)/2 · 2K(ΔH)`, where `ΔH` is the energy change of the
//! flip. That choice makes `G(m) exp(-H(m)/T)` stationary for every diagonal
//! block.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnet::{MagnetSpec, Spin};

/// Effective bath: spin–bath coupling `gamma`, temperature `T`, cutoff `Γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    pub gamma: f64,
    pub temperature: f64,
    pub cutoff: f64,
}

impl Default for BathSpec {
    fn default() -> Self {
        BathSpec {
            gamma: 0.002,
            temperature: 0.2,
            cutoff: 50.0,
        }
    }
}

impl BathSpec {
    pub fn new(gamma: f64, temperature: f64, cutoff: f64) -> Result<Self> {
        let spec = BathSpec {
            gamma,
            temperature,
            cutoff,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `gamma = 0` is accepted: it switches the bath off (pure dephasing).
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bath temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::InvalidParameter(format!("cutoff must be > 0, got {}", self.cutoff)));
        }
        if self.gamma > 0.05 {
            log::warn!("gamma = {} is outside the weak-coupling regime (gamma << 1)", self.gamma);
        }
        Ok(())
    }
}

/// The quasi-Ohmic kernel `K(ω)`, continuous at `ω = 0`.
pub fn spectral_kernel(bath: &BathSpec, omega: f64) -> f64 {
    let x = omega / bath.temperature;
    // ω / (e^{ω/T} - 1) = T · x / expm1(x)
    let bose = if x.abs() < 1e-8 {
        bath.temperature * (1.0 - 0.5 * x)
    } else {
        omega / x.exp_m1()
    };
    0.25 * bose * (-omega.abs() / bath.cutoff).exp()
}

/// Flip rates out of one sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePair {
    /// Rate for `m → m + 2/N`.
    pub up: f64,
    /// Rate for `m → m - 2/N`.
    pub down: f64,
}

/// Flip rates of a diagonal block with spin `s` at coupling `g`.
pub fn flip_rates(magnet: &MagnetSpec, bath: &BathSpec, s: Spin, g: f64, m: f64) -> Result<RatePair> {
    let k = magnet.index_of(m)?;
    let field = g * s.sign();
    let kernel = |w| spectral_kernel(bath, w);
    Ok(rates_at(magnet, bath.gamma, &kernel, field, field, k))
}

/// Rates at index `k` with gain–loss frequencies averaged over the bra and
/// ket fields (exact when the two coincide).
fn rates_at(magnet: &MagnetSpec, gamma: f64, kernel: &dyn Fn(f64) -> f64, field_bra: f64, field_ket: f64, k: usize) -> RatePair {
    let n = magnet.n;
    let e = |field: f64, k: usize| magnet.energy(field, k);
    let up = if k < n {
        let w = 0.5 * ((e(field_bra, k + 1) - e(field_bra, k)) + (e(field_ket, k + 1) - e(field_ket, k)));
        gamma * (n - k) as f64 * 2.0 * kernel(w)
    } else {
        0.0
    };
    let down = if k > 0 {
        let w = 0.5 * ((e(field_bra, k - 1) - e(field_bra, k)) + (e(field_ket, k - 1) - e(field_ket, k)));
        gamma * k as f64 * 2.0 * kernel(w)
    } else {
        0.0
    };
    RatePair { up, down }
}

/// How the bath acts on blocks whose bra and ket Hamiltonians differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffDiagonalBath {
    /// Gain and loss at the averaged bra/ket flip frequency.
    #[default]
    Mixed,
    /// Loss only; gain terms dropped.
    LossOnly,
    /// No bath action: pure dephasing.
    Off,
}

/// Generator of one sector distribution:
///
/// ```text
/// dy_k/dt = -i ω_k y_k - loss_k y_k + up_{k-1} y_{k-1} + down_{k+1} y_{k+1}
/// ```
///
/// with `ω_k = H_bra(m_k) - H_ket(m_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGenerator {
    pub(crate) phase: Vec<f64>,
    pub(crate) loss: Vec<f64>,
    pub(crate) gain_up: Vec<f64>,
    pub(crate) gain_down: Vec<f64>,
}

impl BlockGenerator {
    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// Frequencies `H_bra - H_ket` per sector.
    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    /// Total out-rate per sector.
    pub fn loss(&self) -> &[f64] {
        &self.loss
    }

    /// Gain into `k + 1` from `k`.
    pub fn gain_up(&self) -> &[f64] {
        &self.gain_up
    }

    /// Gain into `k - 1` from `k`.
    pub fn gain_down(&self) -> &[f64] {
        &self.gain_down
    }

    pub fn has_phase(&self) -> bool {
        self.phase.iter().any(|w| *w != 0.0)
    }

    /// Largest single rate; zero when the bath is off.
    pub fn max_rate(&self) -> f64 {
        self.loss
            .iter()
            .chain(&self.gain_up)
            .chain(&self.gain_down)
            .fold(0.0, |a, &b| a.max(b))
    }

    /// Column sums of the real (rate) part; zero for a conserving block.
    pub fn rate_column_sums(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.gain_up[k] + self.gain_down[k] - self.loss[k])
            .collect()
    }

    /// `out = (L + iω) y`: the generator without its phase part.
    pub(crate) fn apply_rates(&self, y: &[Complex64], out: &mut [Complex64]) {
        let len = self.len();
        for k in 0..len {
            let mut acc = y[k] * -self.loss[k];
            if k > 0 {
                acc += y[k - 1] * self.gain_up[k - 1];
            }
            if k + 1 < len {
                acc += y[k + 1] * self.gain_down[k + 1];
            }
            out[k] = acc;
        }
    }

    /// `out = L y`.
    pub fn apply(&self, y: &[Complex64], out: &mut [Complex64]) {
        let len = self.len();
        for k in 0..len {
            let mut acc = y[k] * Complex64::new(-self.loss[k], -self.phase[k]);
            if k > 0 {
                acc += y[k - 1] * self.gain_up[k - 1];
            }
            if k + 1 < len {
                acc += y[k + 1] * self.gain_down[k + 1];
            }
            out[k] = acc;
        }
    }
}

/// Generator for one apparatus factor of a block. `coupling_bra` and
/// `coupling_ket` are the effective per-side couplings (base `g` times any
/// region factor); the spins give their signs.
pub fn build_generator(
    magnet: &MagnetSpec,
    bath: &BathSpec,
    s_bra: Spin,
    s_ket: Spin,
    coupling_bra: f64,
    coupling_ket: f64,
    mode: OffDiagonalBath,
) -> BlockGenerator {
    let kernel = |w| spectral_kernel(bath, w);
    build_generator_with_kernel(magnet, bath.gamma, &kernel, s_bra, s_ket, coupling_bra, coupling_ket, mode)
}

/// [`build_generator`] with a caller-supplied kernel.
#[allow(clippy::too_many_arguments)]
pub fn build_generator_with_kernel(
    magnet: &MagnetSpec,
    gamma: f64,
    kernel: &dyn Fn(f64) -> f64,
    s_bra: Spin,
    s_ket: Spin,
    coupling_bra: f64,
    coupling_ket: f64,
    mode: OffDiagonalBath,
) -> BlockGenerator {
    let len = magnet.sectors();
    let field_bra = coupling_bra * s_bra.sign();
    let field_ket = coupling_ket * s_ket.sign();
    let same_sides = field_bra == field_ket;

    let phase = (0..len)
        .map(|k| {
            if same_sides {
                0.0
            } else {
                magnet.energy(field_bra, k) - magnet.energy(field_ket, k)
            }
        })
        .collect();

    let mut loss = vec![0.0; len];
    let mut gain_up = vec![0.0; len];
    let mut gain_down = vec![0.0; len];
    let effective = if same_sides { OffDiagonalBath::Mixed } else { mode };
    if gamma > 0.0 && effective != OffDiagonalBath::Off {
        for k in 0..len {
            let r = rates_at(magnet, gamma, kernel, field_bra, field_ket, k);
            loss[k] = r.up + r.down;
            if effective == OffDiagonalBath::Mixed {
                gain_up[k] = r.up;
                gain_down[k] = r.down;
            }
        }
    }

    BlockGenerator {
        phase,
        loss,
        gain_up,
        gain_down,
    }
}
