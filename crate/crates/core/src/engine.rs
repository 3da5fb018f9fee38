//! Block-decomposed state and its evolution over a coupling schedule.
//!
//! A block is one bra/ket component of the joint density operator, labelled
//! by the tested-spin basis values and (for confined detectors) the spatial
//! region on each side. It carries a complex weight and one sector
//! distribution per apparatus; the apparatus factors never mix, so each
//! `(block, apparatus)` pair is integrated on its own.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{build_generator, BathSpec, BlockGenerator, OffDiagonalBath};
use crate::error::{Error, Result};
use crate::integrator::{self, Failure, Stats, Tolerances};
use crate::magnet::{MagnetSpec, Spin};

/// Adaptive integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Relative local error per step.
    pub rtol: f64,
    /// Absolute floor of the error scale.
    pub atol: f64,
    pub max_step: Option<f64>,
    /// Step budget per factor and segment.
    pub max_steps: usize,
    /// Evolve independent factors on the rayon pool.
    pub parallel: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-8,
            atol: 1e-14,
            max_step: None,
            max_steps: 20_000_000,
            parallel: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(Error::config("integrator.rtol", "must lie in (0, 1)"));
        }
        if !(self.atol > 0.0 && self.atol.is_finite()) {
            return Err(Error::config("integrator.atol", "must be > 0"));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::config("integrator.max_step", "must be > 0"));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::config("integrator.max_steps", "must be >= 1"));
        }
        Ok(())
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step.unwrap_or(f64::INFINITY),
            max_steps: self.max_steps,
        }
    }
}

/// Spatial region of the tested particle on one side of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// No spatial structure in the scenario.
    Unconfined,
    /// Inside detector region `i` (zero based).
    Detector(usize),
    /// Outside every detector region.
    Outside,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Unconfined => write!(f, "-"),
            Region::Detector(i) => write!(f, "R{}", i + 1),
            Region::Outside => write!(f, "out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockLabel {
    pub spin_bra: Vec<Spin>,
    pub spin_ket: Vec<Spin>,
    pub region_bra: Region,
    pub region_ket: Region,
}

impl BlockLabel {
    pub fn new(spin_bra: Vec<Spin>, spin_ket: Vec<Spin>, region_bra: Region, region_ket: Region) -> Result<Self> {
        if spin_bra.len() != spin_ket.len() || spin_bra.is_empty() || spin_bra.len() > 2 {
            return Err(Error::InvalidParameter(format!(
                "block label needs 1 or 2 spins per side, got {} and {}",
                spin_bra.len(),
                spin_ket.len()
            )));
        }
        Ok(BlockLabel {
            spin_bra,
            spin_ket,
            region_bra,
            region_ket,
        })
    }

    pub fn is_diagonal(&self) -> bool {
        self.spin_bra == self.spin_ket && self.region_bra == self.region_ket
    }

    /// Label of the Hermitian-conjugate block.
    pub fn conjugate(&self) -> BlockLabel {
        BlockLabel {
            spin_bra: self.spin_ket.clone(),
            spin_ket: self.spin_bra.clone(),
            region_bra: self.region_ket,
            region_ket: self.region_bra,
        }
    }
}

/// `ud|du` for spins, with `@R1|out` appended when regions are present.
impl fmt::Display for BlockLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |s: &[Spin]| s.iter().map(|s| s.letter()).collect::<String>();
        write!(f, "{}|{}", side(&self.spin_bra), side(&self.spin_ket))?;
        if self.region_bra != Region::Unconfined || self.region_ket != Region::Unconfined {
            write!(f, "@{}|{}", self.region_bra, self.region_ket)?;
        }
        Ok(())
    }
}

/// Complex amplitudes over the `N + 1` magnetization sectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorDistribution {
    pub amplitudes: Vec<Complex64>,
}

impl SectorDistribution {
    /// The paramagnetic initial state `G(m) / 2^N`.
    pub fn binomial(magnet: &MagnetSpec) -> Self {
        let ln2n = magnet.n as f64 * std::f64::consts::LN_2;
        let p: Vec<f64> = (0..magnet.sectors())
            .map(|k| (magnet.log_multiplicity(k) - ln2n).exp())
            .collect();
        // renormalize so the block trace starts at its weight to rounding
        let total: f64 = p.iter().sum();
        SectorDistribution {
            amplitudes: p.iter().map(|p| Complex64::new(p / total, 0.0)).collect(),
        }
    }

    pub fn sum(&self) -> Complex64 {
        self.amplitudes.iter().sum()
    }

    pub fn conj(&self) -> Self {
        SectorDistribution {
            amplitudes: self.amplitudes.iter().map(|a| a.conj()).collect(),
        }
    }

    /// Mean and variance of `m` under the weights `|amplitude|`.
    pub fn moments(&self, magnet: &MagnetSpec) -> (f64, f64) {
        moments(&self.amplitudes, magnet)
    }
}

fn moments(a: &[Complex64], magnet: &MagnetSpec) -> (f64, f64) {
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (k, a) in a.iter().enumerate() {
        let w = a.norm();
        let m = magnet.m_at(k);
        z += w;
        s1 += w * m;
        s2 += w * m * m;
    }
    if z == 0.0 {
        return (0.0, 0.0);
    }
    let mean = s1 / z;
    (mean, (s2 / z - mean * mean).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub label: BlockLabel,
    pub weight: Complex64,
    /// One distribution per apparatus.
    pub factors: Vec<SectorDistribution>,
}

/// `weight × Π_a Σ_m amplitudes`.
pub fn block_trace(block: &BlockState) -> Complex64 {
    block.factors.iter().fold(block.weight, |acc, d| acc * d.sum())
}

/// `|block_trace|` of an off-diagonal block.
pub fn coherence_magnitude(block: &BlockState) -> Result<f64> {
    if block.label.is_diagonal() {
        return Err(Error::InvalidParameter(format!(
            "coherence_magnitude needs an off-diagonal block, {} is diagonal",
            block.label
        )));
    }
    Ok(block_trace(block).norm())
}

/// System–apparatus coupling `g`, switched on over `[t_on, t_off)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSchedule {
    pub g: f64,
    #[serde(default)]
    pub t_on: f64,
    pub t_off: f64,
}

impl CouplingSchedule {
    pub fn validate(&self, t_final: f64) -> Result<()> {
        if !(self.g.is_finite() && self.g >= 0.0) {
            return Err(Error::config("schedule.g", format!("must be >= 0, got {}", self.g)));
        }
        if !(self.t_on >= 0.0 && self.t_on < self.t_off) {
            return Err(Error::config("schedule", "need 0 <= t_on < t_off"));
        }
        if !(self.t_off <= t_final && t_final.is_finite()) {
            return Err(Error::config("schedule.t_off", "must not exceed t_final"));
        }
        Ok(())
    }
}

/// One pointer magnet with its bath, reading tested spin `spin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Apparatus {
    pub magnet: MagnetSpec,
    pub bath: BathSpec,
    pub spin: usize,
    /// Detector region the apparatus sits on; `None` couples everywhere.
    pub region: Option<usize>,
    /// Potential depth `k` multiplying `g` inside the region.
    pub depth: f64,
}

impl Apparatus {
    pub fn unconfined(magnet: MagnetSpec, bath: BathSpec, spin: usize) -> Self {
        Apparatus {
            magnet,
            bath,
            spin,
            region: None,
            depth: 1.0,
        }
    }

    /// Effective coupling seen on one side of a block.
    pub fn side_coupling(&self, g: f64, region: Region) -> f64 {
        match self.region {
            None => g * self.depth,
            Some(r) if region == Region::Detector(r) => g * self.depth,
            Some(_) => 0.0,
        }
    }

    pub fn generator(&self, label: &BlockLabel, g: f64, mode: OffDiagonalBath) -> BlockGenerator {
        build_generator(
            &self.magnet,
            &self.bath,
            label.spin_bra[self.spin],
            label.spin_ket[self.spin],
            self.side_coupling(g, label.region_bra),
            self.side_coupling(g, label.region_ket),
            mode,
        )
    }
}

/// Generators of one `(block, apparatus)` factor with the coupling on and off.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGenerators {
    pub coupled: BlockGenerator,
    pub uncoupled: BlockGenerator,
}

/// `generators[b][a]` for every block and apparatus.
pub fn build_generators(
    blocks: &[BlockState],
    apparatuses: &[Apparatus],
    schedule: &CouplingSchedule,
    mode: OffDiagonalBath,
) -> Vec<Vec<PhaseGenerators>> {
    blocks
        .iter()
        .map(|b| {
            apparatuses
                .iter()
                .map(|a| PhaseGenerators {
                    coupled: a.generator(&b.label, schedule.g, mode),
                    uncoupled: a.generator(&b.label, 0.0, mode),
                })
                .collect()
        })
        .collect()
}

/// Per-apparatus summary of one factor at one sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorSummary {
    pub sum: Complex64,
    pub mean_m: f64,
    pub var_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSample {
    pub trace: Complex64,
    pub factors: Vec<FactorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub blocks: Vec<BlockState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub apparatuses: Vec<Apparatus>,
    pub schedule: CouplingSchedule,
    pub t_final: f64,
    pub labels: Vec<BlockLabel>,
    pub weights: Vec<Complex64>,
    /// `samples[b][i]` is block `b` at `times[i]`.
    pub samples: Vec<Vec<BlockSample>>,
    pub snapshots: Vec<Snapshot>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.t == t)
    }

    pub fn final_state(&self) -> &Snapshot {
        self.snapshot_at(self.t_final).expect("t_final is always snapshotted")
    }

    /// Sum of diagonal block traces at every sample time.
    pub fn total_trace(&self) -> Vec<Complex64> {
        (0..self.times.len())
            .map(|i| {
                self.labels
                    .iter()
                    .zip(&self.samples)
                    .filter(|(l, _)| l.is_diagonal())
                    .map(|(_, s)| s[i].trace)
                    .sum()
            })
            .collect()
    }
}

/// `n` uniformly spaced times covering `[0, t_final]`.
pub fn uniform_times(t_final: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t_final],
        _ => (0..n).map(|i| t_final * i as f64 / (n - 1) as f64).collect(),
    }
}

struct FactorRun {
    summaries: Vec<FactorSummary>,
    snapshots: Vec<SectorDistribution>,
    stats: Stats,
}

impl FactorRun {
    fn conj(&self) -> FactorRun {
        FactorRun {
            summaries: self
                .summaries
                .iter()
                .map(|s| FactorSummary {
                    sum: s.sum.conj(),
                    ..*s
                })
                .collect(),
            snapshots: self.snapshots.iter().map(SectorDistribution::conj).collect(),
            stats: Stats::default(),
        }
    }
}

fn summarize(a: &[Complex64], magnet: &MagnetSpec) -> FactorSummary {
    let (mean_m, var_m) = moments(a, magnet);
    FactorSummary {
        sum: a.iter().sum(),
        mean_m,
        var_m,
    }
}

#[allow(clippy::too_many_arguments)]
fn evolve_factor(
    gens: &PhaseGenerators,
    init: &SectorDistribution,
    magnet: &MagnetSpec,
    schedule: &CouplingSchedule,
    t_final: f64,
    times: &[f64],
    snap_times: &[f64],
    tol: &Tolerances,
) -> std::result::Result<FactorRun, Failure> {
    let nt = times.len();
    let mut events: Vec<(usize, f64)> = times.iter().copied().enumerate().collect();
    events.extend(snap_times.iter().enumerate().map(|(j, &t)| (nt + j, t)));
    events.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let blank = FactorSummary {
        sum: Complex64::new(0.0, 0.0),
        mean_m: 0.0,
        var_m: 0.0,
    };
    let mut summaries = vec![blank; nt];
    let mut snapshots = vec![SectorDistribution { amplitudes: Vec::new() }; snap_times.len()];
    let mut record = |i: usize, a: &[Complex64]| {
        if i < nt {
            summaries[i] = summarize(a, magnet);
        } else {
            snapshots[i - nt] = SectorDistribution { amplitudes: a.to_vec() };
        }
    };

    let mut y = init.amplitudes.clone();
    for &(i, t) in &events {
        if t <= 0.0 {
            record(i, &y);
        }
    }
    let mut stats = Stats::default();
    let segments = [
        (0.0, schedule.t_on, &gens.uncoupled),
        (schedule.t_on, schedule.t_off, &gens.coupled),
        (schedule.t_off, t_final, &gens.uncoupled),
    ];
    for (t0, t1, gen) in segments {
        if t1 > t0 {
            integrator::integrate(gen, &mut y, t0, t1, &events, &mut record, tol, &mut stats)?;
        }
    }
    Ok(FactorRun {
        summaries,
        snapshots,
        stats,
    })
}

/// Evolves every block over `schedule`, sampling summaries at `times` and
/// full distributions at `snapshot_times` (plus `0` and `t_final`).
///
/// Factors of a block whose conjugate partner appears earlier with
/// conjugate initial data are not integrated again; they are mirrored.
/// Results do not depend on how the factors are scheduled.
#[allow(clippy::too_many_arguments)]
pub fn evolve(
    blocks: &[BlockState],
    apparatuses: &[Apparatus],
    generators: &[Vec<PhaseGenerators>],
    schedule: &CouplingSchedule,
    t_final: f64,
    times: &[f64],
    snapshot_times: &[f64],
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    config.validate()?;
    schedule.validate(t_final)?;
    if generators.len() != blocks.len() || generators.iter().any(|g| g.len() != apparatuses.len()) {
        return Err(Error::InvalidParameter("need one generator pair per (block, apparatus)".into()));
    }
    for b in blocks {
        if b.factors.len() != apparatuses.len() {
            return Err(Error::InvalidParameter(format!("block {} has the wrong number of factors", b.label)));
        }
        for (d, a) in b.factors.iter().zip(apparatuses) {
            if d.amplitudes.len() != a.magnet.sectors() {
                return Err(Error::InvalidParameter(format!("block {} has a distribution of the wrong length", b.label)));
            }
        }
    }
    if let Some(t) = times.iter().chain(snapshot_times).find(|t| !(**t >= 0.0 && **t <= t_final)) {
        return Err(Error::InvalidParameter(format!("sample time {t} outside [0, {t_final}]")));
    }
    let mut snaps: Vec<f64> = snapshot_times.to_vec();
    snaps.extend([0.0, t_final]);
    snaps.sort_by(f64::total_cmp);
    snaps.dedup();

    // mirror[b] = Some(p) when block b is the conjugate of an earlier block p
    let mirror: Vec<Option<usize>> = blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| {
            let conj = blk.label.conjugate();
            if conj == blk.label {
                return None;
            }
            blocks[..b].iter().position(|p| {
                p.label == conj && p.factors.iter().zip(&blk.factors).all(|(x, y)| x.conj() == *y)
            })
        })
        .collect();

    let units: Vec<(usize, usize)> = (0..blocks.len())
        .filter(|&b| mirror[b].is_none())
        .flat_map(|b| (0..apparatuses.len()).map(move |a| (b, a)))
        .collect();
    let tol = config.tolerances();
    let run = |&(b, a): &(usize, usize)| {
        evolve_factor(
            &generators[b][a],
            &blocks[b].factors[a],
            &apparatuses[a].magnet,
            schedule,
            t_final,
            times,
            &snaps,
            &tol,
        )
        .map_err(|f| match f {
            Failure::Underflow { t } => Error::StepUnderflow {
                block: blocks[b].label.to_string(),
                t,
            },
            Failure::TooManySteps { t } => Error::TooManySteps {
                block: blocks[b].label.to_string(),
                t,
                max_steps: config.max_steps,
            },
        })
    };
    let results: Vec<FactorRun> = if config.parallel {
        units.par_iter().map(run).collect::<Result<_>>()?
    } else {
        units.iter().map(run).collect::<Result<_>>()?
    };

    let mut by_block: Vec<Vec<FactorRun>> = (0..blocks.len()).map(|_| Vec::new()).collect();
    let (mut accepted, mut rejected) = (0, 0);
    for ((b, _), r) in units.iter().zip(results) {
        accepted += r.stats.accepted;
        rejected += r.stats.rejected;
        by_block[*b].push(r);
    }
    for b in 0..blocks.len() {
        if let Some(p) = mirror[b] {
            by_block[b] = by_block[p].iter().map(FactorRun::conj).collect();
        }
    }

    let samples = blocks
        .iter()
        .zip(&by_block)
        .map(|(blk, runs)| {
            (0..times.len())
                .map(|i| {
                    let factors: Vec<FactorSummary> = runs.iter().map(|r| r.summaries[i]).collect();
                    let trace = factors.iter().fold(blk.weight, |acc, f| acc * f.sum);
                    BlockSample { trace, factors }
                })
                .collect()
        })
        .collect();
    let snapshots = snaps
        .iter()
        .enumerate()
        .map(|(j, &t)| Snapshot {
            t,
            blocks: blocks
                .iter()
                .zip(&by_block)
                .map(|(blk, runs)| BlockState {
                    label: blk.label.clone(),
                    weight: blk.weight,
                    factors: runs.iter().map(|r| r.snapshots[j].clone()).collect(),
                })
                .collect(),
        })
        .collect();

    Ok(Trajectory {
        times: times.to_vec(),
        apparatuses: apparatuses.to_vec(),
        schedule: *schedule,
        t_final,
        labels: blocks.iter().map(|b| b.label.clone()).collect(),
        weights: blocks.iter().map(|b| b.weight).collect(),
        samples,
        snapshots,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}
