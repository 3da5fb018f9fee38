//! The experiment kinds, spatial region weights, and final-state readout.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::{BathSpec, OffDiagonalBath};
use crate::engine::{
    build_generators, evolve, uniform_times, Apparatus, BlockLabel, BlockState, CouplingSchedule, IntegratorConfig,
    PhaseGenerators, Region, SectorDistribution, Trajectory,
};
use crate::error::{Error, Result};
use crate::magnet::{meanfield_fixed_point, MagnetSpec, Spin};
use crate::quadrature;

const C0: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Single,
    EprOneApparatus,
    EprTwoApparatuses,
    SpatialOneDetector,
    SpatialTwoDetectors,
}

impl ScenarioKind {
    pub fn spins(self) -> usize {
        match self {
            ScenarioKind::EprOneApparatus | ScenarioKind::EprTwoApparatuses => 2,
            _ => 1,
        }
    }

    pub fn apparatuses(self) -> usize {
        match self {
            ScenarioKind::EprTwoApparatuses | ScenarioKind::SpatialTwoDetectors => 2,
            _ => 1,
        }
    }

    pub fn detectors(self) -> usize {
        match self {
            ScenarioKind::SpatialOneDetector => 1,
            ScenarioKind::SpatialTwoDetectors => 2,
            _ => 0,
        }
    }

    pub fn is_spatial(self) -> bool {
        self.detectors() > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinPreset {
    Up,
    Down,
    /// `(|↑↓⟩ + |↓↑⟩)/√2`.
    Epr,
}

/// Spin density matrix in the z basis: either a preset or explicit `re`
/// (and optional `im`) rows. Basis order for two spins is `uu, ud, du, dd`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinStateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<SpinPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl SpinStateSpec {
    pub fn preset(p: SpinPreset) -> Self {
        SpinStateSpec {
            preset: Some(p),
            ..Default::default()
        }
    }

    pub fn real(rows: Vec<Vec<f64>>) -> Self {
        SpinStateSpec {
            re: Some(rows),
            ..Default::default()
        }
    }

    /// Dense matrix of dimension `2^spins`, validated as a density matrix.
    pub fn matrix(&self, spins: usize) -> Result<DMatrix<Complex64>> {
        let dim = 1usize << spins;
        if self.im.is_some() && self.re.is_none() {
            return Err(Error::config("spin_state.im", "`im` needs `re`"));
        }
        let m = match (&self.preset, &self.re) {
            (Some(_), Some(_)) => return Err(Error::config("spin_state", "give either `preset` or `re`, not both")),
            (None, None) => return Err(Error::config("spin_state", "expected `preset` or `re`")),
            (Some(p), None) => {
                let mut m = DMatrix::from_element(dim, dim, C0);
                match (p, spins) {
                    (SpinPreset::Up, 1) => m[(0, 0)] = Complex64::new(1.0, 0.0),
                    (SpinPreset::Down, 1) => m[(1, 1)] = Complex64::new(1.0, 0.0),
                    (SpinPreset::Epr, 2) => {
                        for i in [1, 2] {
                            for j in [1, 2] {
                                m[(i, j)] = Complex64::new(0.5, 0.0);
                            }
                        }
                    }
                    _ => {
                        return Err(Error::config(
                            "spin_state.preset",
                            format!("preset {p:?} does not describe {spins} spin(s)"),
                        ))
                    }
                }
                m
            }
            (None, Some(re)) => {
                let shape_ok = |rows: &Vec<Vec<f64>>| rows.len() == dim && rows.iter().all(|r| r.len() == dim);
                if !shape_ok(re) {
                    return Err(Error::config("spin_state.re", format!("expected a {dim}x{dim} matrix")));
                }
                if let Some(im) = &self.im {
                    if !shape_ok(im) {
                        return Err(Error::config("spin_state.im", format!("expected a {dim}x{dim} matrix")));
                    }
                }
                DMatrix::from_fn(dim, dim, |i, j| {
                    Complex64::new(re[i][j], self.im.as_ref().map_or(0.0, |im| im[i][j]))
                })
            }
        };
        validate_density(&m)?;
        Ok(m)
    }
}

fn validate_density(m: &DMatrix<Complex64>) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            if !(m[(i, j)].re.is_finite() && m[(i, j)].im.is_finite()) {
                return Err(Error::config("spin_state", "entries must be finite"));
            }
            if (m[(i, j)] - m[(j, i)].conj()).norm() > 1e-12 {
                return Err(Error::config("spin_state", "matrix must be Hermitian"));
            }
        }
    }
    let tr: f64 = (0..n).map(|i| m[(i, i)].re).sum();
    if (tr - 1.0).abs() > 1e-12 {
        return Err(Error::config("spin_state", format!("trace must be 1, got {tr}")));
    }
    let min = m.clone().symmetric_eigen().eigenvalues.min();
    if min < -1e-12 {
        return Err(Error::config("spin_state", format!("matrix must be positive semidefinite (eigenvalue {min})")));
    }
    Ok(())
}

/// Detector regions, one interval per detector, and the potential depth `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub intervals: Vec<[f64; 2]>,
    #[serde(default = "default_depth")]
    pub k: f64,
}

fn default_depth() -> f64 {
    1.0
}

impl RegionSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, [a, b]) in self.intervals.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::config(format!("regions.intervals[{i}]"), "need finite a < b"));
            }
        }
        let mut sorted = self.intervals.clone();
        sorted.sort_by(|x, y| x[0].total_cmp(&y[0]));
        if sorted.windows(2).any(|w| w[1][0] < w[0][1]) {
            return Err(Error::config("regions.intervals", "intervals must be disjoint"));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::config("regions.k", "must be > 0"));
        }
        Ok(())
    }
}

/// Spatial wave packet (real amplitude).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PacketSpec {
    /// `|ψ|²` is normal with the given mean and standard deviation.
    Gaussian { mean: f64, width: f64 },
    Uniform { a: f64, b: f64 },
    /// `c₁φ₁ + c₂φ₂` with Gaussian lobes, renormalized.
    TwoLobeGaussian {
        means: [f64; 2],
        widths: [f64; 2],
        #[serde(default)]
        amplitudes: Option<[f64; 2]>,
    },
}

struct Packet {
    lobes: Vec<(f64, f64, f64)>,
    uniform: Option<(f64, f64)>,
    norm: f64,
}

impl Packet {
    fn new(spec: &PacketSpec) -> Result<Packet> {
        let bad = |msg: &str| Error::Domain(format!("non-normalizable packet: {msg}"));
        let mut p = match spec {
            PacketSpec::Gaussian { mean, width } => {
                if !(mean.is_finite() && width.is_finite() && *width > 0.0) {
                    return Err(bad("width must be positive"));
                }
                Packet {
                    lobes: vec![(1.0, *mean, *width)],
                    uniform: None,
                    norm: 1.0,
                }
            }
            PacketSpec::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(bad("need a < b"));
                }
                Packet {
                    lobes: Vec::new(),
                    uniform: Some((*a, *b)),
                    norm: 1.0,
                }
            }
            PacketSpec::TwoLobeGaussian {
                means,
                widths,
                amplitudes,
            } => {
                let c = amplitudes.unwrap_or([1.0, 1.0]);
                if widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) || means.iter().any(|m| !m.is_finite()) {
                    return Err(bad("widths must be positive"));
                }
                if c.iter().any(|c| !c.is_finite()) {
                    return Err(bad("amplitudes must be finite"));
                }
                Packet {
                    lobes: vec![(c[0], means[0], widths[0]), (c[1], means[1], widths[1])],
                    uniform: None,
                    norm: 1.0,
                }
            }
        };
        let total = p.integrate(f64::NEG_INFINITY, f64::INFINITY, true);
        if !(total.is_finite() && total > 1e-300) {
            return Err(bad("vanishing norm"));
        }
        p.norm = total.sqrt().recip();
        Ok(p)
    }

    fn psi(&self, x: f64) -> f64 {
        let mut v = 0.0;
        for &(c, mu, s) in &self.lobes {
            let z = (x - mu) / s;
            v += c * (2.0 * std::f64::consts::PI * s * s).powf(-0.25) * (-0.25 * z * z).exp();
        }
        if let Some((a, b)) = self.uniform {
            if x >= a && x <= b {
                v += (b - a).sqrt().recip();
            }
        }
        v * self.norm
    }

    /// `∫ψ` or `∫ψ²` over `[a, b] ∩ support`, split at the lobe scales so
    /// the adaptive rule cannot step over a narrow peak.
    fn integrate(&self, a: f64, b: f64, squared: bool) -> f64 {
        let mut cuts = Vec::new();
        for &(_, mu, s) in &self.lobes {
            cuts.extend((-40..=40).map(|j| mu + 0.5 * j as f64 * s));
        }
        if let Some((ua, ub)) = self.uniform {
            cuts.extend([ua, ub]);
        }
        let lo = cuts.iter().copied().fold(f64::INFINITY, f64::min).max(a);
        let hi = cuts.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(b);
        if !(hi > lo) {
            return 0.0;
        }
        cuts.retain(|&c| c > lo && c < hi);
        cuts.extend([lo, hi]);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let f = |x: f64| {
            let v = self.psi(x);
            if squared {
                v * v
            } else {
                v
            }
        };
        cuts.windows(2)
            .map(|w| quadrature::integrate(&f, w[0], w[1], 1e-13 / cuts.len() as f64))
            .sum()
    }
}

/// Block weights of the spatial density matrix, indexed by `regions`
/// (detectors in order, then outside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionWeights {
    pub regions: Vec<Region>,
    pub w: Vec<Vec<Complex64>>,
}

impl RegionWeights {
    pub fn get(&self, i: Region, j: Region) -> Complex64 {
        let idx = |r: Region| self.regions.iter().position(|x| *x == r).expect("region present");
        self.w[idx(i)][idx(j)]
    }

    /// Hermitian, unit trace, and `|w_ij|² ≤ w_ii w_jj`.
    pub fn validate(&self) -> Result<()> {
        let n = self.regions.len();
        if self.w.len() != n || self.w.iter().any(|r| r.len() != n) {
            return Err(Error::config("region_weights", format!("expected a {n}x{n} matrix")));
        }
        let mut tr = 0.0;
        for i in 0..n {
            if self.w[i][i].re < -1e-14 || self.w[i][i].im.abs() > 1e-14 {
                return Err(Error::config("region_weights", "diagonal weights must be real and >= 0"));
            }
            tr += self.w[i][i].re;
            for j in 0..n {
                if (self.w[i][j] - self.w[j][i].conj()).norm() > 1e-12 {
                    return Err(Error::config("region_weights", "matrix must be Hermitian"));
                }
                if self.w[i][j].norm_sqr() > self.w[i][i].re * self.w[j][j].re + 1e-12 {
                    return Err(Error::config(
                        "region_weights",
                        format!("inconsistent weights: |w[{i}][{j}]|^2 > w[{i}][{i}] w[{j}][{j}]"),
                    ));
                }
            }
        }
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::config("region_weights", format!("diagonal must sum to 1, got {tr}")));
        }
        Ok(())
    }
}

/// Weights of a pure packet: `w_ii = ∫_{R_i} ψ²` and
/// `w_ij = √(w_ii w_jj) · sign(∫_{R_i} ψ ∫_{R_j} ψ)` off the diagonal.
pub fn region_weights(packet: &PacketSpec, regions: &RegionSpec) -> Result<RegionWeights> {
    regions.validate()?;
    let p = Packet::new(packet)?;
    let nd = regions.intervals.len();
    let mut mass = Vec::with_capacity(nd + 1);
    let mut amp = Vec::with_capacity(nd + 1);
    for &[a, b] in &regions.intervals {
        mass.push(p.integrate(a, b, true));
        amp.push(p.integrate(a, b, false));
    }
    let inside: f64 = mass.iter().sum();
    mass.push((1.0 - inside).max(0.0));
    let total_amp = p.integrate(f64::NEG_INFINITY, f64::INFINITY, false);
    amp.push(total_amp - amp.iter().sum::<f64>());

    let w = (0..=nd)
        .map(|i| {
            (0..=nd)
                .map(|j| {
                    if i == j {
                        return Complex64::new(mass[i], 0.0);
                    }
                    let phase = if amp[i] * amp[j] < 0.0 { -1.0 } else { 1.0 };
                    Complex64::new(phase * (mass[i] * mass[j]).sqrt(), 0.0)
                })
                .collect()
        })
        .collect();
    let mut labels: Vec<Region> = (0..nd).map(Region::Detector).collect();
    labels.push(Region::Outside);
    Ok(RegionWeights { regions: labels, w })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Defaults to `up` for one spin and `epr` for two.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_state: Option<SpinStateSpec>,
    #[serde(default)]
    pub magnet: MagnetSpec,
    #[serde(default)]
    pub bath: BathSpec,
    /// Second apparatus; copies of the first when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnet2: Option<MagnetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath2: Option<BathSpec>,
    pub schedule: CouplingSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet: Option<PacketSpec>,
    /// Direct `w` matrix (detectors then outside), for mixed spatial states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_weights: Option<Vec<Vec<[f64; 2]>>>,
    pub t_final: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Extra times at which full distributions are kept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
}

fn default_samples() -> usize {
    512
}

impl ScenarioSpec {
    /// A scenario with default magnet and bath.
    pub fn new(kind: ScenarioKind, schedule: CouplingSchedule, t_final: f64) -> Self {
        ScenarioSpec {
            kind,
            spin_state: None,
            magnet: MagnetSpec::default(),
            bath: BathSpec::default(),
            magnet2: None,
            bath2: None,
            schedule,
            regions: None,
            packet: None,
            region_weights: None,
            t_final,
            samples: default_samples(),
            snapshots: Vec::new(),
        }
    }

    pub fn spin_matrix(&self) -> Result<DMatrix<Complex64>> {
        let spins = self.kind.spins();
        match &self.spin_state {
            Some(s) => s.matrix(spins),
            None => SpinStateSpec::preset(if spins == 1 { SpinPreset::Up } else { SpinPreset::Epr }).matrix(spins),
        }
    }

    pub fn apparatuses(&self) -> Vec<Apparatus> {
        let second = (self.magnet2.unwrap_or(self.magnet), self.bath2.unwrap_or(self.bath));
        let depth = self.regions.as_ref().map_or(1.0, |r| r.k);
        match self.kind {
            ScenarioKind::Single | ScenarioKind::EprOneApparatus => vec![Apparatus::unconfined(self.magnet, self.bath, 0)],
            ScenarioKind::EprTwoApparatuses => vec![
                Apparatus::unconfined(self.magnet, self.bath, 0),
                Apparatus::unconfined(second.0, second.1, 1),
            ],
            ScenarioKind::SpatialOneDetector => vec![Apparatus {
                region: Some(0),
                depth,
                ..Apparatus::unconfined(self.magnet, self.bath, 0)
            }],
            ScenarioKind::SpatialTwoDetectors => vec![
                Apparatus {
                    region: Some(0),
                    depth,
                    ..Apparatus::unconfined(self.magnet, self.bath, 0)
                },
                Apparatus {
                    region: Some(1),
                    depth,
                    ..Apparatus::unconfined(second.0, second.1, 0)
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.magnet.validate()?;
        self.bath.validate()?;
        if let Some(m) = &self.magnet2 {
            m.validate()?;
        }
        if let Some(b) = &self.bath2 {
            b.validate()?;
        }
        if (self.magnet2.is_some() || self.bath2.is_some()) && self.kind.apparatuses() < 2 {
            return Err(Error::config("magnet2", format!("{:?} has a single apparatus", self.kind)));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::config("t_final", "must be > 0"));
        }
        self.schedule.validate(self.t_final)?;
        if let Some(t) = self.snapshots.iter().find(|t| !(**t >= 0.0 && **t <= self.t_final)) {
            return Err(Error::config("snapshots", format!("time {t} outside [0, t_final]")));
        }
        self.spin_matrix()?;
        let nd = self.kind.detectors();
        if nd == 0 {
            if self.regions.is_some() || self.packet.is_some() || self.region_weights.is_some() {
                return Err(Error::config("regions", "only spatial scenarios take regions, packet or region_weights"));
            }
        } else {
            let regions = self
                .regions
                .as_ref()
                .ok_or_else(|| Error::config("regions", format!("{:?} needs regions", self.kind)))?;
            regions.validate()?;
            if regions.intervals.len() != nd {
                return Err(Error::config(
                    "regions.intervals",
                    format!("{:?} needs exactly {nd} interval(s)", self.kind),
                ));
            }
            match (&self.packet, &self.region_weights) {
                (None, None) => return Err(Error::config("packet", "spatial scenarios need a packet or region_weights")),
                (Some(_), Some(_)) => return Err(Error::config("packet", "give either packet or region_weights")),
                _ => {}
            }
            self.weights()?;
        }
        Ok(())
    }

    /// Spatial block weights; `None` for non-spatial kinds.
    pub fn weights(&self) -> Result<Option<RegionWeights>> {
        if !self.kind.is_spatial() {
            return Ok(None);
        }
        let regions = self.regions.as_ref().ok_or_else(|| Error::config("regions", "missing"))?;
        let w = match (&self.packet, &self.region_weights) {
            (Some(p), _) => region_weights(p, regions)?,
            (None, Some(raw)) => {
                let mut labels: Vec<Region> = (0..regions.intervals.len()).map(Region::Detector).collect();
                labels.push(Region::Outside);
                RegionWeights {
                    regions: labels,
                    w: raw
                        .iter()
                        .map(|r| r.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
                        .collect(),
                }
            }
            (None, None) => return Err(Error::config("packet", "missing")),
        };
        w.validate()?;
        Ok(Some(w))
    }
}

/// Spin labels of basis index `i` (first spin most significant, up = 0).
fn basis_spins(i: usize, spins: usize) -> Vec<Spin> {
    (0..spins).map(|p| Spin::from_index((i >> (spins - 1 - p)) & 1)).collect()
}

fn basis_index(s: &[Spin]) -> usize {
    s.iter().fold(0, |acc, s| 2 * acc + s.index())
}

/// One block per spin pair with nonzero density-matrix entry, times every
/// region pair in spatial scenarios.
pub fn initialize_blocks(spec: &ScenarioSpec) -> Result<Vec<BlockState>> {
    let r = spec.spin_matrix()?;
    let spins = spec.kind.spins();
    let dim = 1 << spins;
    let weights = spec.weights()?;
    let regions: Vec<Region> = match &weights {
        Some(w) => w.regions.clone(),
        None => vec![Region::Unconfined],
    };
    let factors: Vec<SectorDistribution> = spec
        .apparatuses()
        .iter()
        .map(|a| SectorDistribution::binomial(&a.magnet))
        .collect();

    let mut blocks = Vec::new();
    for i in 0..dim {
        for j in 0..dim {
            if r[(i, j)] == C0 {
                continue;
            }
            for &ri in &regions {
                for &rj in &regions {
                    let w = weights.as_ref().map_or(Complex64::new(1.0, 0.0), |w| w.get(ri, rj));
                    blocks.push(BlockState {
                        label: BlockLabel::new(basis_spins(i, spins), basis_spins(j, spins), ri, rj)?,
                        weight: r[(i, j)] * w,
                        factors: factors.clone(),
                    });
                }
            }
        }
    }
    Ok(blocks)
}

/// A validated scenario ready to evolve.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub apparatuses: Vec<Apparatus>,
    pub blocks: Vec<BlockState>,
    pub region_weights: Option<RegionWeights>,
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    Ok(Scenario {
        spec: spec.clone(),
        apparatuses: spec.apparatuses(),
        blocks: initialize_blocks(spec)?,
        region_weights: spec.weights()?,
    })
}

impl Scenario {
    pub fn schedule(&self) -> &CouplingSchedule {
        &self.spec.schedule
    }

    pub fn generators(&self, mode: OffDiagonalBath) -> Vec<Vec<PhaseGenerators>> {
        build_generators(&self.blocks, &self.apparatuses, &self.spec.schedule, mode)
    }

    pub fn sample_times(&self) -> Vec<f64> {
        uniform_times(self.spec.t_final, self.spec.samples)
    }

    pub fn evolve(&self, config: &IntegratorConfig, mode: OffDiagonalBath) -> Result<Trajectory> {
        evolve(
            &self.blocks,
            &self.apparatuses,
            &self.generators(mode),
            &self.spec.schedule,
            self.spec.t_final,
            &self.sample_times(),
            &self.spec.snapshots,
            config,
        )
    }

    /// Number of distinct `(region_bra, region_ket)` classes.
    pub fn region_classes(&self) -> usize {
        let mut c: Vec<(Region, Region)> = self.blocks.iter().map(|b| (b.label.region_bra, b.label.region_ket)).collect();
        c.sort();
        c.dedup();
        c.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Up,
    Down,
    Null,
}

const OUTCOMES: [Outcome; 3] = [Outcome::Up, Outcome::Down, Outcome::Null];

/// Complex matrix as separate real and imaginary rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl ComplexMatrix {
    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let rows = |f: fn(&Complex64) -> f64| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect();
        ComplexMatrix {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.re.len(), self.re.len(), |i, j| Complex64::new(self.re[i][j], self.im[i][j]))
    }
}

/// Reduces a two-spin density matrix to spin `keep` (0 or 1).
pub fn partial_trace(m: &DMatrix<Complex64>, keep: usize) -> DMatrix<Complex64> {
    assert_eq!(m.nrows(), 4, "partial_trace expects a two-spin matrix");
    DMatrix::from_fn(2, 2, |i, j| {
        (0..2)
            .map(|o| {
                let (a, b) = if keep == 0 { (2 * i + o, 2 * j + o) } else { (2 * o + i, 2 * o + j) };
                m[(a, b)]
            })
            .sum()
    })
}

/// `½ Σ |eig(ρ - σ)|` for Hermitian `ρ`, `σ`.
pub fn trace_distance(rho: &DMatrix<Complex64>, sigma: &DMatrix<Complex64>) -> f64 {
    let d = rho - sigma;
    0.5 * d.symmetric_eigen().eigenvalues.iter().map(|e| e.abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conditionals {
    pub up: Option<ComplexMatrix>,
    pub down: Option<ComplexMatrix>,
    /// Given any registration (up or down).
    pub click: Option<ComplexMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApparatusReadout {
    pub m_f: f64,
    pub theta: f64,
    pub p_up: f64,
    pub p_down: f64,
    pub p_null: f64,
    pub p_click: f64,
    /// Spin state (all tested spins, regions traced out) given the outcome.
    pub conditional: Conditionals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointEntry {
    pub outcomes: Vec<Outcome>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceEntry {
    pub block: String,
    pub initial: f64,
    pub at: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockMass {
    pub block: String,
    pub trace: f64,
    /// `[up, down, null]` per apparatus, each times the block weight.
    pub masses: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Readout {
    pub at: f64,
    pub threshold_fraction: f64,
    pub total_trace: f64,
    pub apparatus: Vec<ApparatusReadout>,
    pub joint: Vec<JointEntry>,
    /// `P(⇑₁⇓₂) + P(⇓₁⇑₂)`, two apparatuses only.
    pub anti_aligned: Option<f64>,
    /// `correlators[a][i] = E[s_i · pointer_a]` with pointer `±1` or `0` (null).
    pub correlators: Vec<Vec<f64>>,
    pub coherences: Vec<CoherenceEntry>,
    pub diagonal_blocks: Vec<BlockMass>,
}

impl Readout {
    pub fn joint_probability(&self, outcomes: &[Outcome]) -> f64 {
        self.joint
            .iter()
            .find(|e| e.outcomes == outcomes)
            .map_or(0.0, |e| e.probability)
    }

    /// Largest `|trace(at)| / |trace(0)|` over off-diagonal blocks.
    pub fn max_coherence_ratio(&self) -> f64 {
        self.coherences.iter().map(|c| c.ratio).fold(0.0, f64::max)
    }
}

fn band(m: f64, theta: f64) -> Outcome {
    if m > theta {
        Outcome::Up
    } else if m < -theta {
        Outcome::Down
    } else {
        Outcome::Null
    }
}

fn outcome_index(o: Outcome) -> usize {
    match o {
        Outcome::Up => 0,
        Outcome::Down => 1,
        Outcome::Null => 2,
    }
}

/// Pointer statistics at snapshot time `at` with threshold
/// `θ = threshold_fraction · m_F` per apparatus (`m_F` at `g = 0`).
pub fn readout(trajectory: &Trajectory, threshold_fraction: f64, at: f64) -> Result<Readout> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "threshold fraction must lie in (0, 1), got {threshold_fraction}"
        )));
    }
    let snap = trajectory
        .snapshot_at(at)
        .ok_or_else(|| Error::Domain(format!("no snapshot at t = {at}; add it to `snapshots`")))?;
    let initial = trajectory.snapshot_at(0.0).expect("t = 0 is always snapshotted");
    let apps = &trajectory.apparatuses;
    let spins = trajectory.labels.first().map_or(1, |l| l.spin_bra.len());
    let dim = 1 << spins;

    let mut thetas = Vec::new();
    for a in apps {
        let mf = meanfield_fixed_point(&a.magnet, Spin::Up, 0.0, a.bath.temperature)?.m_f;
        if !(mf > 0.0) {
            return Err(Error::Domain(format!(
                "threshold outside (0, mF): the magnet has no ferromagnetic state (mF = {mf})"
            )));
        }
        thetas.push((mf, threshold_fraction * mf));
    }

    // per block and apparatus: complex mass in each band, and the factor sum
    let band_masses: Vec<Vec<[Complex64; 3]>> = snap
        .blocks
        .iter()
        .map(|b| {
            b.factors
                .iter()
                .zip(apps)
                .zip(&thetas)
                .map(|((d, app), &(_, theta))| {
                    let mut acc = [C0; 3];
                    for (k, a) in d.amplitudes.iter().enumerate() {
                        acc[outcome_index(band(app.magnet.m_at(k), theta))] += a;
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let combos: Vec<Vec<Outcome>> = (0..3usize.pow(apps.len() as u32))
        .map(|mut c| {
            (0..apps.len())
                .map(|_| {
                    let o = OUTCOMES[c % 3];
                    c /= 3;
                    o
                })
                .collect()
        })
        .collect();

    let mut joint = vec![0.0; combos.len()];
    let mut total_trace = 0.0;
    let mut correlators = vec![vec![0.0; spins]; apps.len()];
    let mut diagonal_blocks = Vec::new();
    // conditional[a][outcome or click] accumulates the unnormalized spin matrix
    let mut cond = vec![vec![DMatrix::from_element(dim, dim, C0); 4]; apps.len()];

    for (b, blk) in snap.blocks.iter().enumerate() {
        let label = &blk.label;
        let masses = &band_masses[b];
        let sums: Vec<Complex64> = masses.iter().map(|m| m[0] + m[1] + m[2]).collect();

        if label.region_bra == label.region_ket {
            let (i, j) = (basis_index(&label.spin_bra), basis_index(&label.spin_ket));
            for a in 0..apps.len() {
                let others: Complex64 = (0..apps.len()).filter(|&x| x != a).fold(blk.weight, |acc, x| acc * sums[x]);
                for (o, slot) in [(0, 0), (1, 1), (2, 2)] {
                    cond[a][slot][(i, j)] += others * masses[a][o];
                }
                cond[a][3][(i, j)] += others * (masses[a][0] + masses[a][1]);
            }
        }
        if !label.is_diagonal() {
            continue;
        }

        let trace = sums.iter().fold(blk.weight, |acc, s| acc * s).re;
        total_trace += trace;
        for (c, combo) in combos.iter().enumerate() {
            joint[c] += combo
                .iter()
                .enumerate()
                .fold(blk.weight, |acc, (a, o)| acc * masses[a][outcome_index(*o)])
                .re;
        }
        for a in 0..apps.len() {
            let others: Complex64 = (0..apps.len()).filter(|&x| x != a).fold(blk.weight, |acc, x| acc * sums[x]);
            let pointer = (others * (masses[a][0] - masses[a][1])).re;
            for (i, s) in label.spin_bra.iter().enumerate() {
                correlators[a][i] += s.sign() * pointer;
            }
        }
        diagonal_blocks.push(BlockMass {
            block: label.to_string(),
            trace,
            masses: (0..apps.len())
                .map(|a| {
                    let others: Complex64 = (0..apps.len()).filter(|&x| x != a).fold(blk.weight, |acc, x| acc * sums[x]);
                    [0, 1, 2].map(|o| (others * masses[a][o]).re)
                })
                .collect(),
        });
    }

    let normalize = |m: &DMatrix<Complex64>| {
        let p: f64 = (0..m.nrows()).map(|i| m[(i, i)].re).sum();
        (p > 1e-300).then(|| ComplexMatrix::from_dense(&(m / Complex64::new(p, 0.0))))
    };
    let apparatus = apps
        .iter()
        .enumerate()
        .map(|(a, _)| {
            let marginal = |o: Outcome| -> f64 {
                combos
                    .iter()
                    .zip(&joint)
                    .filter(|(c, _)| c[a] == o)
                    .map(|(_, p)| p)
                    .sum()
            };
            let (p_up, p_down, p_null) = (marginal(Outcome::Up), marginal(Outcome::Down), marginal(Outcome::Null));
            ApparatusReadout {
                m_f: thetas[a].0,
                theta: thetas[a].1,
                p_up,
                p_down,
                p_null,
                p_click: p_up + p_down,
                conditional: Conditionals {
                    up: normalize(&cond[a][0]),
                    down: normalize(&cond[a][1]),
                    click: normalize(&cond[a][3]),
                },
            }
        })
        .collect();

    let coherences = snap
        .blocks
        .iter()
        .zip(&initial.blocks)
        .filter(|(b, _)| !b.label.is_diagonal())
        .map(|(b, b0)| {
            let now = crate::engine::block_trace(b).norm();
            let start = crate::engine::block_trace(b0).norm();
            CoherenceEntry {
                block: b.label.to_string(),
                initial: start,
                at: now,
                ratio: if start > 0.0 { now / start } else { 0.0 },
            }
        })
        .collect();

    let anti_aligned = (apps.len() == 2).then(|| {
        combos
            .iter()
            .zip(&joint)
            .filter(|(c, _)| matches!((c[0], c[1]), (Outcome::Up, Outcome::Down) | (Outcome::Down, Outcome::Up)))
            .map(|(_, p)| p)
            .sum()
    });

    Ok(Readout {
        at,
        threshold_fraction,
        total_trace,
        apparatus,
        joint: combos
            .into_iter()
            .zip(joint)
            .map(|(outcomes, probability)| JointEntry { outcomes, probability })
            .collect(),
        anti_aligned,
        correlators,
        coherences,
        diagonal_blocks,
    })
}
