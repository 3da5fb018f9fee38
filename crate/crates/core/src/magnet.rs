//! Static thermodynamics of the Curie-Weiss magnet.
//!
//! All Hamiltonians in the model depend on the spins only through the
//! magnetization `m = (1/N) Σ σ_z`, so everything lives on the grid
//! `m_k = -1 + 2k/N`, `k = 0..=N`, with multiplicities `binom(N, k)` kept in
//! log domain.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// A z-basis label of a tested spin (and the sign it carries in the coupling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn sign(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }

    pub fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }

    /// Index in the z basis, `|↑⟩ = 0`, `|↓⟩ = 1`.
    pub fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    pub fn from_index(i: usize) -> Spin {
        if i == 0 {
            Spin::Up
        } else {
            Spin::Down
        }
    }

    pub(crate) fn letter(self) -> char {
        match self {
            Spin::Up => 'u',
            Spin::Down => 'd',
        }
    }
}

/// Magnet parameters: `N` spins with pair coupling `J2` and quartet coupling `J4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetSpec {
    pub n: usize,
    pub j2: f64,
    pub j4: f64,
}

impl Default for MagnetSpec {
    fn default() -> Self {
        MagnetSpec {
            n: 200,
            j2: 0.0,
            j4: 1.0,
        }
    }
}

impl MagnetSpec {
    pub fn new(n: usize, j2: f64, j4: f64) -> Result<Self> {
        let spec = MagnetSpec { n, j2, j4 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("magnet needs N >= 1".into()));
        }
        if !(self.j2.is_finite() && self.j2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("J2 must be >= 0, got {}", self.j2)));
        }
        if !(self.j4.is_finite() && self.j4 > 0.0) {
            return Err(Error::InvalidParameter(format!("J4 must be > 0, got {}", self.j4)));
        }
        Ok(())
    }

    /// Number of magnetization sectors, `N + 1`.
    pub fn sectors(&self) -> usize {
        self.n + 1
    }

    /// Grid spacing `2/N`.
    pub fn step(&self) -> f64 {
        2.0 / self.n as f64
    }

    #[inline]
    pub fn m_at(&self, k: usize) -> f64 {
        -1.0 + 2.0 * k as f64 / self.n as f64
    }

    /// Grid index of `m`, or a domain error when `m` is not a grid point.
    pub fn index_of(&self, m: f64) -> Result<usize> {
        let x = (m + 1.0) * self.n as f64 / 2.0;
        let k = x.round();
        if !m.is_finite() || (x - k).abs() > 1e-9 * (1.0 + x.abs()) || k < 0.0 || k > self.n as f64 {
            return Err(Error::Domain(format!(
                "m = {m} is not on the N = {} magnetization grid",
                self.n
            )));
        }
        Ok(k as usize)
    }

    /// `ln binom(N, k)` via log-gamma.
    #[inline]
    pub fn log_multiplicity(&self, k: usize) -> f64 {
        let n = self.n as f64;
        let k = k as f64;
        ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
    }

    /// Sector energy `-N h m - N J2 m²/2 - N J4 m⁴/4` at grid index `k`, where
    /// `h` is the signed field `g·s` seen by the magnet.
    #[inline]
    pub fn energy(&self, field: f64, k: usize) -> f64 {
        let n = self.n as f64;
        let m = self.m_at(k);
        let m2 = m * m;
        -n * field * m - 0.5 * n * self.j2 * m2 - 0.25 * n * self.j4 * m2 * m2
    }
}

/// One magnetization sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorPoint {
    pub m: f64,
    /// Natural log of the sector multiplicity.
    pub log_g: f64,
}

/// The `N + 1` sectors in ascending `m`.
pub fn magnetization_grid(spec: &MagnetSpec) -> Vec<SectorPoint> {
    (0..spec.sectors())
        .map(|k| SectorPoint {
            m: spec.m_at(k),
            log_g: spec.log_multiplicity(k),
        })
        .collect()
}

/// `H_i(m) = -g N s m - N J2 m²/2 - N J4 m⁴/4`; `m` must lie on the grid.
pub fn sector_hamiltonian(spec: &MagnetSpec, s: Spin, g: f64, m: f64) -> Result<f64> {
    let k = spec.index_of(m)?;
    Ok(spec.energy(g * s.sign(), k))
}

/// Free energy `F(m) = H(m) - T ln G(m)` over the grid, with its landscape
/// features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEnergyProfile {
    pub m: Vec<f64>,
    pub f: Vec<f64>,
    /// Grid indices of local minima (endpoints included when lower than
    /// their single neighbour).
    pub minima: Vec<usize>,
    /// Grid indices of interior local maxima.
    pub maxima: Vec<usize>,
    /// Local minimum reached by descending from `m = 0`.
    pub paramagnetic_min: usize,
    /// Height of the barrier separating `paramagnetic_min` from a lower state
    /// in the direction of the coupling sign; `0` when no such barrier exists.
    pub barrier: f64,
}

impl FreeEnergyProfile {
    /// Whether the paramagnet is metastable, i.e. trapped behind a barrier.
    pub fn has_barrier(&self) -> bool {
        self.barrier > 0.0
    }
}

pub fn free_energy(spec: &MagnetSpec, s: Spin, g: f64, temperature: f64) -> Result<FreeEnergyProfile> {
    spec.validate()?;
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")));
    }
    let field = g * s.sign();
    let m: Vec<f64> = (0..spec.sectors()).map(|k| spec.m_at(k)).collect();
    let f: Vec<f64> = (0..spec.sectors())
        .map(|k| spec.energy(field, k) - temperature * spec.log_multiplicity(k))
        .collect();

    let len = f.len();
    let mut minima = Vec::new();
    let mut maxima = Vec::new();
    for k in 0..len {
        let left = if k > 0 { Some(f[k - 1]) } else { None };
        let right = if k + 1 < len { Some(f[k + 1]) } else { None };
        let below = |x: Option<f64>| x.is_none_or(|v| f[k] < v);
        let above = |x: Option<f64>| x.is_some_and(|v| f[k] > v);
        if below(left) && below(right) {
            minima.push(k);
        } else if left.is_some() && right.is_some() && above(left) && above(right) {
            maxima.push(k);
        }
    }

    let (paramagnetic_min, barrier) = paramagnetic_barrier(&f, spec.n, s);
    Ok(FreeEnergyProfile {
        m,
        f,
        minima,
        maxima,
        paramagnetic_min,
        barrier,
    })
}

/// Steepest descent on the grid from `m = 0`, then a walk in the direction
/// of `s` looking for a lower state; returns the landing index and the
/// barrier in front of it (0 if nothing lower lies ahead).
fn paramagnetic_barrier(f: &[f64], n: usize, s: Spin) -> (usize, f64) {
    let mut i = match (n % 2, s) {
        (0, _) => n / 2,
        (_, Spin::Up) => n / 2 + 1,
        (_, Spin::Down) => n / 2,
    };
    loop {
        let mut best = i;
        if i > 0 && f[i - 1] < f[best] {
            best = i - 1;
        }
        if i + 1 < f.len() && f[i + 1] < f[best] {
            best = i + 1;
        }
        if best == i {
            break;
        }
        i = best;
    }

    let mut peak = f[i];
    let mut j = i;
    loop {
        j = match s {
            Spin::Up if j + 1 < f.len() => j + 1,
            Spin::Down if j > 0 => j - 1,
            _ => return (i, 0.0),
        };
        if f[j] < f[i] {
            return (i, peak - f[i]);
        }
        peak = peak.max(f[j]);
    }
}

/// Stable ferromagnetic solution of the mean-field equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanFieldResult {
    /// Magnetization of the root, signed like the seed `0.9·s`.
    pub m_f: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `|m - tanh(β(J2 m + J4 m³ + g s))|` at the returned root.
    pub residual: f64,
    /// Derivative of the undamped map at the root; `< 1` for a stable root.
    pub slope: f64,
}

const MEANFIELD_MAX_ITER: usize = 100_000;
const MEANFIELD_DAMPING: f64 = 0.5;

/// Damped iteration of `m ← tanh(β(J2 m + J4 m³ + g s))` seeded at `0.9·s`.
pub fn meanfield_fixed_point(spec: &MagnetSpec, s: Spin, g: f64, temperature: f64) -> Result<MeanFieldResult> {
    spec.validate()?;
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")));
    }
    let beta = 1.0 / temperature;
    let h = g * s.sign();
    let map = |m: f64| (beta * (spec.j2 * m + spec.j4 * m * m * m + h)).tanh();

    let mut m = 0.9 * s.sign();
    let mut residual = f64::INFINITY;
    for it in 1..=MEANFIELD_MAX_ITER {
        let next = map(m);
        residual = (m - next).abs();
        if residual < 1e-14 {
            let arg = beta * (spec.j2 * m + spec.j4 * m * m * m + h);
            let sech2 = 1.0 - arg.tanh().powi(2);
            let slope = beta * (spec.j2 + 3.0 * spec.j4 * m * m) * sech2;
            return Ok(MeanFieldResult {
                m_f: m,
                converged: true,
                iterations: it,
                residual,
                slope,
            });
        }
        m = (1.0 - MEANFIELD_DAMPING) * m + MEANFIELD_DAMPING * next;
    }
    Err(Error::NoConvergence {
        iterations: MEANFIELD_MAX_ITER,
        residual,
    })
}

/// Minimal coupling `g` at which the barrier confining the paramagnet (for a
/// spin-up tested spin) vanishes, located by bisection to `1e-7`.
pub fn threshold_coupling(spec: &MagnetSpec, temperature: f64) -> Result<f64> {
    let barrier_at = |g: f64| free_energy(spec, Spin::Up, g, temperature).map(|p| p.has_barrier());
    if !barrier_at(0.0)? {
        return Err(Error::NoThreshold);
    }
    let mut lo = 0.0;
    let mut hi = spec.j2.max(spec.j4).max(temperature);
    let mut doublings = 0;
    while barrier_at(hi)? {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::NoConvergence {
                iterations: doublings,
                residual: hi,
            });
        }
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if barrier_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
