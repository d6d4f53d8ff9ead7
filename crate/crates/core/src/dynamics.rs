//! Conditional dynamics of the spin register in a lossy cavity.
//!
//! The register couples to one cavity mode through
//! `H = λ_q Ŝ^z + ω_c a†a + g(Ŝ⁻a† + Ŝ⁺a)`; photons leak out at rate κ and
//! each escape is a detection event.  The preparation protocol keeps only
//! runs in which no photon ever arrives, which collapses the register onto
//! its dark component.
//!
//! Two unravelings are implemented.  The full-cavity model evolves the
//! sector ⊗ Fock grid with jump operator `√κ a`.  In the lossy regime
//! `κ ≫ g` the cavity follows the spins adiabatically and can be
//! eliminated, leaving collective decay of the spins alone: drift
//! `-(Γ/2) Ŝ⁺Ŝ⁻` and jump `√Γ Ŝ⁻` with `Γ = 4g²/κ`.  The effective model
//! scales to large registers; the full model validates the elimination at
//! small sizes.
//!
//! All times here are measured in units of `1/Γ`, so effective-model
//! waiting times for a single excited spin are Exp(1) samples.  Trajectories
//! integrate the no-jump drift with a fixed-step classical 4th-order scheme
//! and draw jump times by the norm-threshold rule: pick `r` uniform in
//! (0, 1], jump when `‖ψ‖²` first drops to `r`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::numfmt::f64_repr;
use crate::sector::{dark_sector_state, product_sector_state, SectorState};
use crate::spin_basis::RowSplit;

/// Relative drift magnitude below which the state is treated as stationary;
/// the remaining survival-probability change is bounded by this times the
/// remaining horizon.
pub const STATIONARY_TOL: f64 = 1e-12;

/// Maximum tolerated relative growth of the squared norm per step before
/// the run aborts as unstable.
pub const NORM_GROWTH_TOL: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Cavity-QED parameters of the register.  Frequencies are angular and
/// share one (otherwise arbitrary) physical time unit with `κ` and `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Qubit splitting (zero in the frame rotating at resonance).
    pub qubit_splitting: f64,
    /// Cavity mode frequency in the same frame.
    pub cavity_freq: f64,
    /// Spin-photon coupling g.
    pub coupling: f64,
    /// Photon escape rate κ.
    pub cavity_decay: f64,
    /// Highest Fock level kept by the full-cavity model.
    pub photon_cutoff: usize,
}

impl CavityParams {
    /// Resonant rotating frame, g = 1, κ = 100, cutoff sized for the split.
    pub fn protocol_defaults(split: RowSplit) -> Self {
        Self {
            qubit_splitting: 0.0,
            cavity_freq: 0.0,
            coupling: 1.0,
            cavity_decay: 100.0,
            photon_cutoff: split.m_top + 1,
        }
    }

    /// Collective decay rate Γ = 4g²/κ left after eliminating the cavity.
    pub fn collective_rate(&self) -> f64 {
        if self.cavity_decay > 0.0 {
            4.0 * self.coupling * self.coupling / self.cavity_decay
        } else {
            0.0
        }
    }

    /// Heuristic for the adiabatic elimination being trustworthy: κ must
    /// beat the collectively enhanced coupling g√Q by an order of magnitude.
    pub fn is_lossy_regime(&self, q: usize) -> bool {
        self.cavity_decay >= 10.0 * self.coupling.abs() * (q as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.qubit_splitting.is_finite() || !self.cavity_freq.is_finite() {
            return Err(Error::invalid("frequencies must be finite"));
        }
        if !self.coupling.is_finite() {
            return Err(Error::invalid("coupling must be finite"));
        }
        if !self.cavity_decay.is_finite() || self.cavity_decay < 0.0 {
            return Err(Error::invalid("cavity decay must be finite and nonnegative"));
        }
        if self.photon_cutoff == 0 {
            return Err(Error::invalid("photon cutoff must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    /// Collective spin decay after adiabatic elimination of the cavity.
    EffectiveCollective,
    /// Spins and truncated Fock space evolved together.
    FullCavity,
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Model::EffectiveCollective => write!(f, "effective-collective"),
            Model::FullCavity => write!(f, "full-cavity"),
        }
    }
}

/// Trajectory run configuration.  `t_max`, `dt` and `deadtime_factor` are
/// all in units of `1/Γ`; runs always integrate to
/// `max(t_max, deadtime_factor)` so the null flag is decidable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    pub model: Model,
    pub t_max: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// How many collective decay periods without a click count as "null".
    pub deadtime_factor: f64,
    /// Probability that an emitted photon is registered by the detector.
    pub detector_efficiency: f64,
}

impl TrajectoryConfig {
    pub fn default_for(model: Model) -> Self {
        Self {
            model,
            t_max: 20.0,
            dt: match model {
                Model::EffectiveCollective => 0.01,
                // The cavity adds rates of order κ/Γ = κ²/4g² per unit of
                // scaled time, so the full model needs far finer steps.
                Model::FullCavity => 2e-4,
            },
            n_traj: 1000,
            seed: 7,
            deadtime_factor: 20.0,
            detector_efficiency: 1.0,
        }
    }

    /// Total integration horizon in units of `1/Γ`.
    pub fn horizon(&self) -> f64 {
        self.t_max.max(self.deadtime_factor)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive and finite"));
        }
        if self.model == Model::FullCavity && self.dt > 0.01 {
            return Err(Error::invalid(
                "full-cavity runs need dt <= 0.01 in units of 1/Γ",
            ));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid("t_max must be positive and finite"));
        }
        if !(self.deadtime_factor >= 0.0 && self.deadtime_factor.is_finite()) {
            return Err(Error::invalid("deadtime_factor must be nonnegative"));
        }
        if self.n_traj == 0 {
            return Err(Error::invalid("n_traj must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(Error::invalid("detector efficiency must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Sector state tensored with a truncated Fock ladder, photon index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinPhotonState {
    split: RowSplit,
    n_max: usize,
    amps: Vec<Complex64>,
}

impl SpinPhotonState {
    pub fn zero(split: RowSplit, n_max: usize) -> Self {
        let dim = (split.m_top + 1) * (split.n_bottom + 1) * (n_max + 1);
        Self { split, n_max, amps: vec![ZERO; dim] }
    }

    /// Places a sector state in the photon vacuum.
    pub fn from_sector_vacuum(sector: &SectorState, n_max: usize) -> Self {
        let split = sector.split();
        let mut out = Self::zero(split, n_max);
        for i in 0..=split.m_top {
            for j in 0..=split.n_bottom {
                let idx = out.index(i, j, 0);
                out.amps[idx] = sector.get(i, j);
            }
        }
        out
    }

    fn index(&self, i: usize, j: usize, photons: usize) -> usize {
        debug_assert!(
            i <= self.split.m_top && j <= self.split.n_bottom && photons <= self.n_max
        );
        (i * (self.split.n_bottom + 1) + j) * (self.n_max + 1) + photons
    }

    pub fn split(&self) -> RowSplit {
        self.split
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitude(&self, i: usize, j: usize, photons: usize) -> Complex64 {
        self.amps[self.index(i, j, photons)]
    }

    pub fn set_amplitude(&mut self, i: usize, j: usize, photons: usize, value: Complex64) {
        let idx = self.index(i, j, photons);
        self.amps[idx] = value;
    }

    /// The zero-photon slice, unnormalized; its overlap with a sector state
    /// is the overlap of the joint state with that sector state ⊗ vacuum.
    pub fn photon_vacuum_sector(&self) -> SectorState {
        let mut out = SectorState::zero(self.split);
        for i in 0..=self.split.m_top {
            for j in 0..=self.split.n_bottom {
                out.set(i, j, self.amplitude(i, j, 0));
            }
        }
        out
    }

    pub fn inner_product(&self, other: &Self) -> Complex64 {
        assert_eq!(self.split, other.split, "inner product of mismatched grids");
        assert_eq!(self.n_max, other.n_max, "inner product of mismatched cutoffs");
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut out = self.clone();
        for a in &mut out.amps {
            *a /= n;
        }
        Ok(out)
    }

    /// Mean photon number of the (normalized) state.
    pub fn photon_number(&self) -> f64 {
        let mut acc = 0.0;
        for (k, a) in self.amps.iter().enumerate() {
            acc += (k % (self.n_max + 1)) as f64 * a.norm_sqr();
        }
        acc / self.squared_norm()
    }
}

/// Compressed sparse rows; small enough here that generality is not worth a
/// dependency.
#[derive(Debug, Clone)]
struct SparseOp {
    dim: usize,
    starts: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseOp {
    fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(usize, usize, Complex64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        let mut starts = vec![0usize; dim + 1];
        for &(r, _, _) in &entries {
            starts[r + 1] += 1;
        }
        for r in 0..dim {
            starts[r + 1] += starts[r];
        }
        Self {
            dim,
            starts,
            cols: entries.iter().map(|e| e.1).collect(),
            vals: entries.iter().map(|e| e.2).collect(),
        }
    }

    fn apply_assign(&self, x: &[Complex64], y: &mut [Complex64]) {
        for r in 0..self.dim {
            let mut acc = ZERO;
            for k in self.starts[r]..self.starts[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }
}

/// Row lowering coefficient from `k` to `k + 1` spins down out of `p`.
fn lower_coeff(p: usize, k: usize) -> f64 {
    (((p - k) * (k + 1)) as f64).sqrt()
}

/// All nonzero entries of `H = λ_q Ŝ^z + ω_c a†a + g(Ŝ⁻a† + Ŝ⁺a)` on the
/// sector ⊗ Fock grid, as (row, col, value) with value real.
fn hamiltonian_triplets(params: &CavityParams, split: RowSplit) -> Vec<(usize, usize, f64)> {
    let (m, n) = (split.m_top, split.n_bottom);
    let n_max = params.photon_cutoff;
    let levels = n_max + 1;
    let idx = |i: usize, j: usize, nn: usize| (i * (n + 1) + j) * levels + nn;
    let mut out = Vec::new();
    for i in 0..=m {
        for j in 0..=n {
            for nn in 0..=n_max {
                let row = idx(i, j, nn);
                let mz = (m + n) as f64 / 2.0 - (i + j) as f64;
                out.push((
                    row,
                    row,
                    params.qubit_splitting * mz + params.cavity_freq * nn as f64,
                ));
                if nn < n_max {
                    let photon = ((nn + 1) as f64).sqrt();
                    if i < m {
                        let v = params.coupling * lower_coeff(m, i) * photon;
                        let other = idx(i + 1, j, nn + 1);
                        out.push((other, row, v));
                        out.push((row, other, v));
                    }
                    if j < n {
                        let v = params.coupling * lower_coeff(n, j) * photon;
                        let other = idx(i, j + 1, nn + 1);
                        out.push((other, row, v));
                        out.push((row, other, v));
                    }
                }
            }
        }
    }
    out
}

/// The Dicke Hamiltonian as an operator on [`SpinPhotonState`].
#[derive(Debug, Clone)]
pub struct DickeHamiltonian {
    split: RowSplit,
    n_max: usize,
    op: SparseOp,
}

impl DickeHamiltonian {
    /// Fails if the Fock truncation cannot hold the `M + 1` levels the
    /// initial excitations can reach.
    pub fn build(params: &CavityParams, split: RowSplit) -> Result<Self> {
        params.validate()?;
        if params.photon_cutoff < split.m_top + 1 {
            return Err(Error::PhotonCutoff {
                n_max: params.photon_cutoff,
                required: split.m_top + 1,
            });
        }
        let dim = (split.m_top + 1) * (split.n_bottom + 1) * (params.photon_cutoff + 1);
        let triplets = hamiltonian_triplets(params, split)
            .into_iter()
            .map(|(r, c, v)| (r, c, Complex64::new(v, 0.0)))
            .collect();
        Ok(Self {
            split,
            n_max: params.photon_cutoff,
            op: SparseOp::from_triplets(dim, triplets),
        })
    }

    pub fn dim(&self) -> usize {
        self.op.dim
    }

    pub fn apply(&self, psi: &SpinPhotonState) -> Result<SpinPhotonState> {
        if psi.split() != self.split || psi.n_max() != self.n_max {
            return Err(Error::invalid("state does not match the operator grid"));
        }
        let mut out = SpinPhotonState::zero(self.split, self.n_max);
        self.op.apply_assign(&psi.amps, &mut out.amps);
        Ok(out)
    }
}

/// What the integrator needs from a model: a no-jump drift, a jump
/// operator, and the index range currently holding amplitude.
trait Kernel {
    fn buffer_len(&self) -> usize;
    fn active(&self) -> Range<usize>;
    /// `y[active] = D x[active]`, overwriting.
    fn drift_into(&self, x: &[Complex64], y: &mut [Complex64]);
    /// Unnormalized jump applied into `y`; advances the active window.
    fn apply_jump(&mut self, x: &[Complex64], y: &mut [Complex64]);
}

/// Effective collective decay on the sector grid, in units of 1/Γ:
/// drift `-Ŝ⁺Ŝ⁻/2`, jump `Ŝ⁻`.
///
/// Internally the grid is laid out by magnetization group `d = i + j`
/// (cells of one group consecutive, ordered by `i`, one padding slot at
/// each end of the buffer).  The drift is tridiagonal inside each group
/// and jumps shift amplitude from group `d` to `d + 1`, so the integrator
/// touches only the occupied window of groups.
#[derive(Debug, Clone)]
struct CollectiveKernel {
    m: usize,
    n: usize,
    split: RowSplit,
    /// Smallest top down-count in group d.
    first_i: Vec<usize>,
    /// Padded offset where group d starts; one past the end at index m+n+1.
    group_start: Vec<usize>,
    /// Top down-count of the cell at each padded offset.
    cell_i: Vec<usize>,
    tri_diag: Vec<f64>,
    tri_up: Vec<f64>,
    tri_down: Vec<f64>,
    lower_top: Vec<f64>,
    lower_bottom: Vec<f64>,
    d_lo: usize,
    d_hi: usize,
}

impl CollectiveKernel {
    /// Builds the kernel and the padded amplitude buffer for `initial`.
    fn new(initial: &SectorState) -> (Self, Vec<Complex64>) {
        let split = initial.split();
        let (m, n) = (split.m_top, split.n_bottom);
        let total = (m + 1) * (n + 1);
        let d_max = m + n;

        let mut first_i = vec![0usize; d_max + 1];
        let mut group_start = vec![0usize; d_max + 2];
        group_start[0] = 1;
        for d in 0..=d_max {
            let lo = d.saturating_sub(n);
            let hi = d.min(m);
            first_i[d] = lo;
            group_start[d + 1] = group_start[d] + (hi - lo + 1);
        }
        debug_assert_eq!(group_start[d_max + 1], total + 1);

        let mut lower_top = vec![0.0; m + 1];
        for (i, c) in lower_top.iter_mut().enumerate().take(m) {
            *c = lower_coeff(m, i);
        }
        let mut lower_bottom = vec![0.0; n + 1];
        for (j, c) in lower_bottom.iter_mut().enumerate().take(n) {
            *c = lower_coeff(n, j);
        }

        // Ŝ⁺Ŝ⁻ on cell (i, j): diagonal lt[i]² + lb[j]², neighbors
        // (i+1, j-1) and (i-1, j+1) within the same group.
        let padded = total + 2;
        let mut cell_i = vec![0usize; padded];
        let mut tri_diag = vec![0.0; padded];
        let mut tri_up = vec![0.0; padded];
        let mut tri_down = vec![0.0; padded];
        for d in 0..=d_max {
            for i in first_i[d]..=d.min(m) {
                let j = d - i;
                let p = group_start[d] + (i - first_i[d]);
                cell_i[p] = i;
                tri_diag[p] =
                    lower_top[i] * lower_top[i] + lower_bottom[j] * lower_bottom[j];
                if i < m && j > 0 {
                    tri_up[p] = lower_top[i] * lower_bottom[j - 1];
                }
                if i > 0 && j < n {
                    tri_down[p] = lower_top[i - 1] * lower_bottom[j];
                }
            }
        }

        let mut d_lo = d_max;
        let mut d_hi = 0;
        let mut psi = vec![ZERO; padded];
        for d in 0..=d_max {
            for i in first_i[d]..=d.min(m) {
                let a = initial.get(i, d - i);
                if a != ZERO {
                    d_lo = d_lo.min(d);
                    d_hi = d_hi.max(d);
                }
                psi[group_start[d] + (i - first_i[d])] = a;
            }
        }
        if d_lo > d_hi {
            d_lo = 0;
            d_hi = 0;
        }

        let kernel = Self {
            m,
            n,
            split,
            first_i,
            group_start,
            cell_i,
            tri_diag,
            tri_up,
            tri_down,
            lower_top,
            lower_bottom,
            d_lo,
            d_hi,
        };
        (kernel, psi)
    }

    fn to_sector(&self, psi: &[Complex64]) -> SectorState {
        let mut out = SectorState::zero(self.split);
        for d in self.d_lo..=self.d_hi {
            for i in self.first_i[d]..=d.min(self.m) {
                out.set(i, d - i, psi[self.group_start[d] + (i - self.first_i[d])]);
            }
        }
        out
    }
}

impl Kernel for CollectiveKernel {
    fn buffer_len(&self) -> usize {
        (self.m + 1) * (self.n + 1) + 2
    }

    fn active(&self) -> Range<usize> {
        self.group_start[self.d_lo]..self.group_start[self.d_hi + 1]
    }

    fn drift_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        // Neighbor reads cross group boundaries only with coefficient zero,
        // and the end pads keep p ± 1 in bounds.
        for p in self.active() {
            y[p] = -0.5
                * (self.tri_diag[p] * x[p]
                    + self.tri_up[p] * x[p + 1]
                    + self.tri_down[p] * x[p - 1]);
        }
    }

    fn apply_jump(&mut self, x: &[Complex64], y: &mut [Complex64]) {
        let d_max = self.m + self.n;
        let new_lo = (self.d_lo + 1).min(d_max);
        let new_hi = (self.d_hi + 1).min(d_max);
        for slot in y
            .iter_mut()
            .take(self.group_start[new_hi + 1])
            .skip(self.group_start[new_lo])
        {
            *slot = ZERO;
        }
        for d in self.d_lo..=self.d_hi.min(d_max.saturating_sub(1)) {
            for p in self.group_start[d]..self.group_start[d + 1] {
                let i = self.cell_i[p];
                let j = d - i;
                if i < self.m {
                    let q = self.group_start[d + 1] + (i + 1 - self.first_i[d + 1]);
                    y[q] += self.lower_top[i] * x[p];
                }
                if j < self.n {
                    let q = self.group_start[d + 1] + (i - self.first_i[d + 1]);
                    y[q] += self.lower_bottom[j] * x[p];
                }
            }
        }
        self.d_lo = new_lo;
        self.d_hi = new_hi;
    }
}

/// Full-cavity model in units of 1/Γ: drift `(-iH - (κ/2) a†a)/Γ`,
/// jump `a`.
#[derive(Debug, Clone)]
struct FullCavityKernel {
    split: RowSplit,
    n_max: usize,
    drift: SparseOp,
}

impl FullCavityKernel {
    fn new(params: &CavityParams, split: RowSplit, initial: &SectorState) -> Result<(Self, Vec<Complex64>)> {
        // reuse the cutoff and parameter checks
        DickeHamiltonian::build(params, split)?;
        let gamma = params.collective_rate();
        if gamma <= 0.0 {
            return Err(Error::invalid(
                "collective rate 4g²/κ vanishes; trajectory time units need g ≠ 0 and κ > 0",
            ));
        }
        let n_max = params.photon_cutoff;
        let levels = n_max + 1;
        let dim = (split.m_top + 1) * (split.n_bottom + 1) * levels;
        let mut triplets: Vec<(usize, usize, Complex64)> = hamiltonian_triplets(params, split)
            .into_iter()
            .map(|(r, c, v)| (r, c, Complex64::new(0.0, -v / gamma)))
            .collect();
        let half_kappa = params.cavity_decay / (2.0 * gamma);
        for row in 0..dim {
            let photons = (row % levels) as f64;
            triplets.push((row, row, Complex64::new(-half_kappa * photons, 0.0)));
        }
        let drift = SparseOp::from_triplets(dim, triplets);
        let psi = SpinPhotonState::from_sector_vacuum(initial, n_max).amps;
        Ok((Self { split, n_max, drift }, psi))
    }

    fn to_spin_photon(&self, psi: &[Complex64]) -> SpinPhotonState {
        let mut out = SpinPhotonState::zero(self.split, self.n_max);
        out.amps.copy_from_slice(psi);
        out
    }
}

impl Kernel for FullCavityKernel {
    fn buffer_len(&self) -> usize {
        self.drift.dim
    }

    fn active(&self) -> Range<usize> {
        0..self.drift.dim
    }

    fn drift_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.drift.apply_assign(x, y);
    }

    fn apply_jump(&mut self, x: &[Complex64], y: &mut [Complex64]) {
        let levels = self.n_max + 1;
        for base in (0..self.drift.dim).step_by(levels) {
            for nn in 0..self.n_max {
                y[base + nn] = ((nn + 1) as f64).sqrt() * x[base + nn + 1];
            }
            y[base + self.n_max] = ZERO;
        }
    }
}

fn norm2_range(x: &[Complex64], range: Range<usize>) -> f64 {
    x[range].iter().map(|a| a.norm_sqr()).sum()
}

fn copy_range(dst: &mut [Complex64], src: &[Complex64], range: Range<usize>) {
    dst[range.clone()].copy_from_slice(&src[range]);
}

fn axpy_range(dst: &mut [Complex64], a: f64, x: &[Complex64], range: Range<usize>) {
    for p in range {
        dst[p] += a * x[p];
    }
}

fn scale_range(x: &mut [Complex64], a: f64, range: Range<usize>) {
    for p in range {
        x[p] *= a;
    }
}

/// Uniform sample in (0, 1].
fn draw_unit(rng: &mut ChaCha12Rng) -> f64 {
    1.0 - rng.gen::<f64>()
}

struct JumpContext<'a> {
    rng: &'a mut ChaCha12Rng,
    efficiency: f64,
}

struct EvolveOutcome {
    jump_times: Vec<f64>,
    detected_count: usize,
    final_norm2: f64,
}

/// Fixed-step integration with norm-threshold jump detection.  With
/// `jumps` absent this is the deterministic no-jump branch and `psi` is
/// left unnormalized so the caller can read off the survival probability.
fn evolve<K: Kernel>(
    kernel: &mut K,
    psi: &mut Vec<Complex64>,
    t_end: f64,
    dt: f64,
    mut jumps: Option<JumpContext<'_>>,
) -> Result<EvolveOutcome> {
    let len = kernel.buffer_len();
    debug_assert_eq!(psi.len(), len);
    let mut k1 = vec![ZERO; len];
    let mut k2 = vec![ZERO; len];
    let mut k3 = vec![ZERO; len];
    let mut k4 = vec![ZERO; len];
    let mut tmp = vec![ZERO; len];
    let mut jump_buf = vec![ZERO; len];

    let mut jump_times = Vec::new();
    let mut detected_count = 0usize;
    let mut prev_n2 = norm2_range(psi, kernel.active());
    let mut threshold = match &mut jumps {
        Some(ctx) => draw_unit(ctx.rng),
        None => -1.0,
    };

    let n_steps = if t_end > 0.0 {
        ((t_end / dt) - 1e-9).ceil().max(1.0) as usize
    } else {
        0
    };
    for step in 0..n_steps {
        let t0 = step as f64 * dt;
        let h = if step + 1 == n_steps { t_end - t0 } else { dt };
        let act = kernel.active();

        kernel.drift_into(psi, &mut k1);
        if norm2_range(&k1, act.clone()) <= STATIONARY_TOL * STATIONARY_TOL * prev_n2 {
            // Drift-free states stay put and can never cross the threshold.
            break;
        }
        copy_range(&mut tmp, psi, act.clone());
        axpy_range(&mut tmp, 0.5 * h, &k1, act.clone());
        kernel.drift_into(&tmp, &mut k2);
        copy_range(&mut tmp, psi, act.clone());
        axpy_range(&mut tmp, 0.5 * h, &k2, act.clone());
        kernel.drift_into(&tmp, &mut k3);
        copy_range(&mut tmp, psi, act.clone());
        axpy_range(&mut tmp, h, &k3, act.clone());
        kernel.drift_into(&tmp, &mut k4);
        axpy_range(psi, h / 6.0, &k1, act.clone());
        axpy_range(psi, h / 3.0, &k2, act.clone());
        axpy_range(psi, h / 3.0, &k3, act.clone());
        axpy_range(psi, h / 6.0, &k4, act.clone());

        let n2 = norm2_range(psi, act);
        if !n2.is_finite() || n2 > prev_n2 * (1.0 + NORM_GROWTH_TOL) {
            return Err(Error::Unstable { growth: n2 / prev_n2 - 1.0 });
        }

        if let Some(ctx) = &mut jumps {
            if n2 <= threshold {
                // Interpolate the crossing of ‖ψ‖² = r inside the step.
                let frac = if prev_n2 > n2 {
                    ((prev_n2 - threshold) / (prev_n2 - n2)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                jump_times.push(t0 + frac * h);
                kernel.apply_jump(psi, &mut jump_buf);
                let act_new = kernel.active();
                let jn2 = norm2_range(&jump_buf, act_new.clone());
                if !(jn2 > 0.0 && jn2.is_finite()) {
                    return Err(Error::ZeroNorm);
                }
                scale_range(&mut jump_buf, 1.0 / jn2.sqrt(), act_new);
                std::mem::swap(psi, &mut jump_buf);
                if ctx.efficiency >= 1.0 || ctx.rng.gen::<f64>() < ctx.efficiency {
                    detected_count += 1;
                }
                threshold = draw_unit(ctx.rng);
                prev_n2 = 1.0;
                continue;
            }
        }
        prev_n2 = n2;
    }

    Ok(EvolveOutcome { jump_times, detected_count, final_norm2: prev_n2 })
}

/// Normalized state a trajectory ended in.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalState {
    Sector(SectorState),
    SpinPhoton(SpinPhotonState),
}

/// One Monte-Carlo trajectory.  Times are in units of `1/Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub index: usize,
    /// Every photon emission, whether or not the detector registered it.
    pub jump_times: Vec<f64>,
    pub emitted_count: usize,
    pub detected_count: usize,
    /// No detector click over the whole deadtime window.
    pub null: bool,
    pub elapsed: f64,
    /// Squared overlap of the final state with the dark state (photon
    /// vacuum slice for the full model); absent when M > N.
    pub fidelity_to_dark: Option<f64>,
    pub final_state: FinalState,
}

impl TrajectoryRecord {
    pub fn first_jump_time(&self) -> Option<f64> {
        self.jump_times.first().copied()
    }
}

fn dark_reference(split: RowSplit) -> Option<SectorState> {
    if split.m_top <= split.n_bottom {
        dark_sector_state(split).ok()
    } else {
        None
    }
}

/// Runs trajectory number `stream` from an arbitrary sector state.  Each
/// stream has its own counter-based RNG sequence derived from the seed, so
/// results do not depend on scheduling order.
pub fn run_trajectory_from(
    initial: &SectorState,
    params: &CavityParams,
    cfg: &TrajectoryConfig,
    stream: u64,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    cfg.validate()?;
    if params.collective_rate() <= 0.0 {
        return Err(Error::invalid(
            "collective rate 4g²/κ vanishes; trajectory time units need g ≠ 0 and κ > 0",
        ));
    }
    let start = initial.normalized()?;
    let split = start.split();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let dark = dark_reference(split);

    let t_end = cfg.horizon();
    let (outcome, final_state, fidelity_to_dark) = match cfg.model {
        Model::EffectiveCollective => {
            let (mut kernel, mut psi) = CollectiveKernel::new(&start);
            let outcome = evolve(
                &mut kernel,
                &mut psi,
                t_end,
                cfg.dt,
                Some(JumpContext { rng: &mut rng, efficiency: cfg.detector_efficiency }),
            )?;
            scale_range(&mut psi, 1.0 / outcome.final_norm2.sqrt(), kernel.active());
            let sector = kernel.to_sector(&psi);
            let fid = dark.as_ref().map(|d| d.inner_product(&sector).norm_sqr());
            (outcome, FinalState::Sector(sector), fid)
        }
        Model::FullCavity => {
            let (mut kernel, mut psi) = FullCavityKernel::new(params, split, &start)?;
            let outcome = evolve(
                &mut kernel,
                &mut psi,
                t_end,
                cfg.dt,
                Some(JumpContext { rng: &mut rng, efficiency: cfg.detector_efficiency }),
            )?;
            scale_range(&mut psi, 1.0 / outcome.final_norm2.sqrt(), kernel.active());
            let state = kernel.to_spin_photon(&psi);
            let fid = dark
                .as_ref()
                .map(|d| d.inner_product(&state.photon_vacuum_sector()).norm_sqr());
            (outcome, FinalState::SpinPhoton(state), fid)
        }
    };

    Ok(TrajectoryRecord {
        index: stream as usize,
        emitted_count: outcome.jump_times.len(),
        detected_count: outcome.detected_count,
        null: outcome.detected_count == 0,
        elapsed: t_end,
        jump_times: outcome.jump_times,
        fidelity_to_dark,
        final_state,
    })
}

/// Trajectory from the protocol's initial product state (top row up,
/// bottom row down).
pub fn run_trajectory(
    params: &CavityParams,
    split: RowSplit,
    cfg: &TrajectoryConfig,
    stream: u64,
) -> Result<TrajectoryRecord> {
    run_trajectory_from(&product_sector_state(split), params, cfg, stream)
}

/// Ensemble of `cfg.n_traj` trajectories from a custom initial state,
/// data-parallel over independent RNG streams with deterministic ordering.
pub fn run_ensemble_from(
    initial: &SectorState,
    params: &CavityParams,
    cfg: &TrajectoryConfig,
) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|stream| run_trajectory_from(initial, params, cfg, stream))
        .collect()
}

/// Ensemble from the protocol's initial product state.
pub fn run_ensemble(
    params: &CavityParams,
    split: RowSplit,
    cfg: &TrajectoryConfig,
) -> Result<Vec<TrajectoryRecord>> {
    run_ensemble_from(&product_sector_state(split), params, cfg)
}

/// Deterministic no-jump branch of the effective model for a time `t` (in
/// units of `1/Γ`), normalized, together with its squared overlap with the
/// dark state.
///
/// At `t = 0` the fidelity is the closed-form null probability; it then
/// grows monotonically toward 1 as bright components decay.
pub fn conditioned_dark_state(
    params: &CavityParams,
    split: RowSplit,
    t: f64,
) -> Result<(SectorState, f64)> {
    let survival_state = no_jump_state(params, split, t)?;
    let normalized = survival_state.normalized()?;
    let dark = dark_sector_state(split)?;
    let fidelity = dark.inner_product(&normalized).norm_sqr();
    Ok((normalized, fidelity))
}

/// Squared norm of the unnormalized no-jump state at time `t`: the
/// probability that no photon has been emitted yet.  Its large-`t` limit is
/// the closed form `(N - M + 1)/(N + 1)`.
pub fn no_jump_survival(params: &CavityParams, split: RowSplit, t: f64) -> Result<f64> {
    Ok(no_jump_state(params, split, t)?.squared_norm())
}

fn no_jump_state(params: &CavityParams, split: RowSplit, t: f64) -> Result<SectorState> {
    params.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("evolution time must be nonnegative"));
    }
    let dt = TrajectoryConfig::default_for(Model::EffectiveCollective).dt;
    let (mut kernel, mut psi) = CollectiveKernel::new(&product_sector_state(split));
    evolve(&mut kernel, &mut psi, t, dt, None)?;
    Ok(kernel.to_sector(&psi))
}

/// Null-emission statistics of a trajectory ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub n_null: usize,
    pub p_null_hat: f64,
    pub std_err: f64,
    /// Mean dark-state fidelity over the null-conditioned finals; absent
    /// when there are none (or no dark reference exists).
    pub mean_fidelity_to_rvb: Option<f64>,
}

impl EnsembleStats {
    pub fn to_json_string(&self) -> String {
        let fid = match self.mean_fidelity_to_rvb {
            Some(f) => f64_repr(f),
            None => "null".to_string(),
        };
        format!(
            "{{\"n_traj\": {}, \"n_null\": {}, \"p_null_hat\": {}, \"std_err\": {}, \
             \"mean_fidelity_to_rvb\": {}}}",
            self.n_traj,
            self.n_null,
            f64_repr(self.p_null_hat),
            f64_repr(self.std_err),
            fid
        )
    }
}

/// Binomial point estimate of the null probability with its standard error
/// `√(p̂(1-p̂)/n)`.
pub fn estimate_null_probability(records: &[TrajectoryRecord]) -> EnsembleStats {
    let n_traj = records.len();
    let n_null = records.iter().filter(|r| r.null).count();
    let p = if n_traj > 0 { n_null as f64 / n_traj as f64 } else { 0.0 };
    let std_err = if n_traj > 0 { (p * (1.0 - p) / n_traj as f64).sqrt() } else { 0.0 };
    let fidelities: Vec<f64> = records
        .iter()
        .filter(|r| r.null)
        .filter_map(|r| r.fidelity_to_dark)
        .collect();
    let mean_fidelity_to_rvb = if fidelities.is_empty() {
        None
    } else {
        Some(fidelities.iter().sum::<f64>() / fidelities.len() as f64)
    };
    EnsembleStats { n_traj, n_null, p_null_hat: p, std_err, mean_fidelity_to_rvb }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sector::{null_emission_probability, LadderDirection};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn resonant(split: RowSplit) -> CavityParams {
        CavityParams::protocol_defaults(split)
    }

    #[test]
    fn decoupled_hamiltonian_is_diagonal() {
        let split = RowSplit::new(1, 1);
        let params = CavityParams {
            qubit_splitting: 0.7,
            cavity_freq: 1.3,
            coupling: 0.0,
            cavity_decay: 50.0,
            photon_cutoff: 2,
        };
        let h = DickeHamiltonian::build(&params, split).unwrap();
        for i in 0..=1 {
            for j in 0..=1 {
                for nn in 0..=2 {
                    let mut unit = SpinPhotonState::zero(split, 2);
                    unit.set_amplitude(i, j, nn, Complex64::new(1.0, 0.0));
                    let out = h.apply(&unit).unwrap();
                    let expected = 0.7 * (1.0 - (i + j) as f64) + 1.3 * nn as f64;
                    assert_abs_diff_eq!(
                        out.amplitude(i, j, nn).re,
                        expected,
                        epsilon = 1e-14
                    );
                    let mut off = out.clone();
                    off.set_amplitude(i, j, nn, ZERO);
                    assert!(off.norm() < 1e-15);
                }
            }
        }
    }

    fn dense_hamiltonian(params: &CavityParams, split: RowSplit) -> DMatrix<f64> {
        let h = DickeHamiltonian::build(params, split).unwrap();
        let dim = h.dim();
        let levels = params.photon_cutoff + 1;
        let cols = split.n_bottom + 1;
        let mut mat = DMatrix::<f64>::zeros(dim, dim);
        for col in 0..dim {
            let nn = col % levels;
            let cell = col / levels;
            let mut unit = SpinPhotonState::zero(split, params.photon_cutoff);
            unit.set_amplitude(cell / cols, cell % cols, nn, Complex64::new(1.0, 0.0));
            let out = h.apply(&unit).unwrap();
            for (row, a) in out.amps.iter().enumerate() {
                assert!(a.im.abs() < 1e-15);
                mat[(row, col)] = a.re;
            }
        }
        mat
    }

    #[test]
    fn single_excitation_block_shows_collective_rabi_splitting() {
        // Two spins couple to the mode with combined strength g√2, so the
        // single-excitation eigenvalues at resonance are 0 and ±√2 g.
        let split = RowSplit::new(1, 1);
        let params = CavityParams {
            coupling: 2.5,
            ..CavityParams::protocol_defaults(split)
        };
        let mat = dense_hamiltonian(&params, split);
        let eigs = nalgebra::SymmetricEigen::new(mat).eigenvalues;
        let target = 2.5 * 2.0_f64.sqrt();
        for want in [target, -target, 0.0] {
            let closest = eigs
                .iter()
                .map(|e| (e - want).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(closest < 1e-12, "missing eigenvalue {want}");
        }
    }

    fn random_spin_photon(split: RowSplit, n_max: usize, seed: u64) -> SpinPhotonState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut st = SpinPhotonState::zero(split, n_max);
        for a in &mut st.amps {
            *a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        st
    }

    #[test]
    fn hamiltonian_is_hermitian_and_conserves_excitation() {
        let split = RowSplit::new(2, 2);
        let params = CavityParams {
            qubit_splitting: 0.3,
            cavity_freq: 0.9,
            ..resonant(split)
        };
        let h = DickeHamiltonian::build(&params, split).unwrap();
        let x = random_spin_photon(split, params.photon_cutoff, 1);
        let y = random_spin_photon(split, params.photon_cutoff, 2);
        let lhs = x.inner_product(&h.apply(&y).unwrap());
        let rhs = y.inner_product(&h.apply(&x).unwrap()).conj();
        assert!((lhs - rhs).norm() < 1e-12);

        // [H, Ŝ^z + a†a] = 0: the drive trades one spin excitation for one
        // photon.
        let excitation = |st: &SpinPhotonState| {
            let mut out = st.clone();
            for i in 0..=split.m_top {
                for j in 0..=split.n_bottom {
                    for nn in 0..=params.photon_cutoff {
                        let exc = 2.0 - (i + j) as f64 + nn as f64;
                        let v = st.amplitude(i, j, nn) * exc;
                        out.set_amplitude(i, j, nn, v);
                    }
                }
            }
            out
        };
        let a = h.apply(&excitation(&x)).unwrap();
        let b = excitation(&h.apply(&x).unwrap());
        let max_diff = a
            .amps
            .iter()
            .zip(&b.amps)
            .map(|(u, v)| (u - v).norm())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12);
    }

    #[test]
    fn cutoff_must_hold_reachable_photons() {
        let split = RowSplit::new(2, 2);
        let params = CavityParams { photon_cutoff: 2, ..resonant(split) };
        match DickeHamiltonian::build(&params, split) {
            Err(Error::PhotonCutoff { n_max: 2, required: 3 }) => {}
            other => panic!("expected cutoff error, got {other:?}"),
        }
    }

    #[test]
    fn no_jump_survival_reaches_closed_form() {
        for n in 1..=6 {
            for m in 0..=n {
                let split = RowSplit::new(m, n);
                let survival = no_jump_survival(&resonant(split), split, 40.0).unwrap();
                assert_abs_diff_eq!(
                    survival,
                    null_emission_probability(split),
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn conditioning_steers_onto_the_dark_state() {
        let split = RowSplit::new(2, 2);
        let params = resonant(split);
        let (_, f0) = conditioned_dark_state(&params, split, 0.0).unwrap();
        assert_abs_diff_eq!(f0, 1.0 / 3.0, epsilon = 1e-12);
        let mut prev = f0;
        for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let (_, f) = conditioned_dark_state(&params, split, t).unwrap();
            assert!(f >= prev - 1e-12, "fidelity fell from {prev} to {f} at t={t}");
            prev = f;
        }
        assert!(prev > 0.999);

        let split = RowSplit::new(3, 3);
        let (state, f) = conditioned_dark_state(&resonant(split), split, 20.0).unwrap();
        assert!(f > 1.0 - 1e-8);
        assert_abs_diff_eq!(state.norm(), 1.0, epsilon = 1e-12);

        // An empty top row is already dark.
        let split = RowSplit::new(0, 4);
        let (_, f) = conditioned_dark_state(&resonant(split), split, 0.0).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
        let (_, f) = conditioned_dark_state(&resonant(split), split, 3.0).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_spin_waiting_times_are_exponential() {
        // One excited spin, no partner row: every trajectory emits exactly
        // once and the click time is Exp(1) in units of 1/Γ.
        let split = RowSplit::new(1, 0);
        let params = resonant(split);
        let cfg = TrajectoryConfig {
            n_traj: 10_000,
            seed: 11,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let records = run_ensemble(&params, split, &cfg).unwrap();
        let mut times: Vec<f64> = records
            .iter()
            .map(|r| {
                assert_eq!(r.emitted_count, 1);
                r.first_jump_time().unwrap()
            })
            .collect();
        times.sort_by(f64::total_cmp);
        let n = times.len() as f64;
        let mut d_stat: f64 = 0.0;
        for (k, t) in times.iter().enumerate() {
            let cdf = 1.0 - (-t).exp();
            d_stat = d_stat
                .max((cdf - k as f64 / n).abs())
                .max((cdf - (k + 1) as f64 / n).abs());
        }
        // 1% critical value of the Kolmogorov distribution.
        assert!(d_stat < 1.628 / n.sqrt(), "KS statistic {d_stat} too large");

        let stats = estimate_null_probability(&records);
        assert_eq!(stats.n_null, 0);
        assert_eq!(stats.p_null_hat, 0.0);
        assert!(stats.mean_fidelity_to_rvb.is_none());
    }

    #[test]
    fn balanced_pair_null_fraction_matches_closed_form() {
        let split = RowSplit::new(1, 1);
        let cfg = TrajectoryConfig {
            n_traj: 3000,
            seed: 42,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let records = run_ensemble(&resonant(split), split, &cfg).unwrap();
        let stats = estimate_null_probability(&records);
        assert!((stats.p_null_hat - 0.5).abs() < 3.0 * (0.25f64 / 3000.0).sqrt());
        assert!(stats.mean_fidelity_to_rvb.unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn ten_pair_discard_rate_is_ten_elevenths() {
        let split = RowSplit::new(10, 10);
        let cfg = TrajectoryConfig {
            n_traj: 1200,
            seed: 5,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let records = run_ensemble(&resonant(split), split, &cfg).unwrap();
        let stats = estimate_null_probability(&records);
        let p: f64 = 1.0 / 11.0;
        let sigma = (p * (1.0 - p) / 1200.0).sqrt();
        assert!(
            (stats.p_null_hat - p).abs() < 3.0 * sigma,
            "p̂ = {} too far from 1/11",
            stats.p_null_hat
        );
    }

    #[test]
    fn ground_register_never_emits() {
        let split = RowSplit::new(0, 3);
        let cfg = TrajectoryConfig {
            n_traj: 100,
            seed: 1,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let records = run_ensemble(&resonant(split), split, &cfg).unwrap();
        assert!(records.iter().all(|r| r.null && r.emitted_count == 0));
        let stats = estimate_null_probability(&records);
        assert_eq!(stats.p_null_hat, 1.0);
        assert_eq!(stats.std_err, 0.0);
        assert!(stats.mean_fidelity_to_rvb.unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn doubly_dark_state_is_stable_in_both_models() {
        let split = RowSplit::new(2, 2);
        let params = resonant(split);
        let dark = dark_sector_state(split).unwrap();

        let cfg = TrajectoryConfig {
            n_traj: 64,
            seed: 2,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        for r in run_ensemble_from(&dark, &params, &cfg).unwrap() {
            assert!(r.null && r.emitted_count == 0);
            assert!(r.fidelity_to_dark.unwrap() > 1.0 - 1e-12);
        }

        let cfg = TrajectoryConfig {
            n_traj: 16,
            seed: 3,
            ..TrajectoryConfig::default_for(Model::FullCavity)
        };
        for r in run_ensemble_from(&dark, &params, &cfg).unwrap() {
            assert!(r.null && r.emitted_count == 0);
            assert!(r.fidelity_to_dark.unwrap() > 1.0 - 1e-12);
            match &r.final_state {
                FinalState::SpinPhoton(st) => assert!(st.photon_number() < 1e-12),
                other => panic!("full model must return a joint state, got {other:?}"),
            }
        }
    }

    #[test]
    fn full_model_agrees_with_effective_model() {
        let split = RowSplit::new(1, 1);
        let params = resonant(split);
        let full_cfg = TrajectoryConfig {
            n_traj: 80,
            seed: 3,
            t_max: 6.0,
            deadtime_factor: 6.0,
            ..TrajectoryConfig::default_for(Model::FullCavity)
        };
        let eff_cfg = TrajectoryConfig {
            n_traj: 2000,
            seed: 4,
            t_max: 6.0,
            deadtime_factor: 6.0,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let full = estimate_null_probability(&run_ensemble(&params, split, &full_cfg).unwrap());
        let eff = estimate_null_probability(&run_ensemble(&params, split, &eff_cfg).unwrap());
        let joint = (full.std_err.powi(2) + eff.std_err.powi(2)).sqrt();
        assert!(
            (full.p_null_hat - eff.p_null_hat).abs() < 3.0 * joint,
            "full {} vs effective {}",
            full.p_null_hat,
            eff.p_null_hat
        );
        assert!((full.p_null_hat - 0.5).abs() < 3.0 * (full.std_err + 1e-3));
    }

    #[test]
    fn detector_thinning_converts_clicks_to_nulls() {
        let split = RowSplit::new(1, 0);
        let cfg = TrajectoryConfig {
            n_traj: 2000,
            seed: 8,
            detector_efficiency: 0.5,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let records = run_ensemble(&resonant(split), split, &cfg).unwrap();
        for r in &records {
            assert_eq!(r.emitted_count, 1);
            assert!(r.detected_count <= r.emitted_count);
            assert_eq!(r.null, r.detected_count == 0);
        }
        let stats = estimate_null_probability(&records);
        assert!((stats.p_null_hat - 0.5).abs() < 3.0 * (0.25f64 / 2000.0).sqrt());
    }

    #[test]
    fn record_invariants_hold_at_unit_efficiency() {
        let split = RowSplit::new(2, 2);
        let cfg = TrajectoryConfig {
            n_traj: 400,
            seed: 6,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let records = run_ensemble(&resonant(split), split, &cfg).unwrap();
        for r in &records {
            assert_eq!(r.emitted_count, r.jump_times.len());
            assert_eq!(r.emitted_count, r.detected_count);
            assert_eq!(r.null, r.emitted_count == 0);
            assert!(r.elapsed >= cfg.deadtime_factor);
            assert!(r.jump_times.windows(2).all(|w| w[0] <= w[1]));
            match &r.final_state {
                FinalState::Sector(st) => {
                    assert_abs_diff_eq!(st.norm(), 1.0, epsilon = 1e-10);
                    // Emissions only ever lower the magnetization, so the
                    // final state is annihilated by further lowering iff it
                    // became dark; either way its norm is finite and the
                    // lowered norm is bounded by the ladder strength.
                    let lowered = crate::sector::sector_ladder(st, LadderDirection::Lower);
                    assert!(lowered.norm().is_finite());
                }
                other => panic!("effective model must return a sector state, got {other:?}"),
            }
        }
    }

    #[test]
    fn ensembles_are_reproducible() {
        let split = RowSplit::new(2, 2);
        let cfg = TrajectoryConfig {
            n_traj: 40,
            seed: 9,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let a = run_ensemble(&resonant(split), split, &cfg).unwrap();
        let b = run_ensemble(&resonant(split), split, &cfg).unwrap();
        assert_eq!(a, b);
        // trajectory records carry their stream index in submission order
        assert!(a.iter().enumerate().all(|(k, r)| r.index == k));
    }

    #[test]
    fn oversized_steps_are_rejected_as_unstable() {
        let split = RowSplit::new(4, 4);
        let cfg = TrajectoryConfig {
            dt: 1.0,
            t_max: 2.0,
            deadtime_factor: 2.0,
            n_traj: 1,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        match run_trajectory(&resonant(split), split, &cfg, 0) {
            Err(Error::Unstable { growth }) => assert!(growth > 0.0),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn config_and_parameter_validation() {
        let split = RowSplit::new(1, 1);
        let good = TrajectoryConfig::default_for(Model::EffectiveCollective);
        assert!(good.validate().is_ok());
        assert!(TrajectoryConfig { dt: 0.0, ..good }.validate().is_err());
        assert!(TrajectoryConfig { n_traj: 0, ..good }.validate().is_err());
        assert!(TrajectoryConfig { detector_efficiency: 1.5, ..good }.validate().is_err());
        let full = TrajectoryConfig::default_for(Model::FullCavity);
        assert!(TrajectoryConfig { dt: 0.02, ..full }.validate().is_err());

        let params = CavityParams { cavity_decay: -1.0, ..resonant(split) };
        assert!(params.validate().is_err());
        let params = CavityParams { photon_cutoff: 0, ..resonant(split) };
        assert!(params.validate().is_err());

        // Γ = 0 has no trajectory time unit.
        let params = CavityParams { coupling: 0.0, ..resonant(split) };
        assert!(run_trajectory(&params, split, &good, 0).is_err());
    }

    #[test]
    fn lossy_regime_heuristic() {
        let split = RowSplit::new(2, 2);
        let params = resonant(split);
        assert!(params.is_lossy_regime(4));
        let strong = CavityParams { cavity_decay: 5.0, ..params };
        assert!(!strong.is_lossy_regime(4));
    }

    #[test]
    fn synthetic_records_give_exact_statistics() {
        let split = RowSplit::new(1, 1);
        let sector = dark_sector_state(split).unwrap();
        let make = |null: bool, fid: Option<f64>| TrajectoryRecord {
            index: 0,
            jump_times: if null { vec![] } else { vec![0.5] },
            emitted_count: usize::from(!null),
            detected_count: usize::from(!null),
            null,
            elapsed: 20.0,
            fidelity_to_dark: fid,
            final_state: FinalState::Sector(sector.clone()),
        };
        let all_null = vec![make(true, Some(1.0)); 3];
        let stats = estimate_null_probability(&all_null);
        assert_eq!(stats.p_null_hat, 1.0);
        assert_eq!(stats.std_err, 0.0);
        assert_eq!(stats.mean_fidelity_to_rvb, Some(1.0));

        let mixed = vec![make(true, Some(0.5)), make(false, Some(0.1))];
        let stats = estimate_null_probability(&mixed);
        assert_abs_diff_eq!(stats.p_null_hat, 0.5);
        assert_abs_diff_eq!(stats.std_err, (0.25f64 / 2.0).sqrt());
        // only null-conditioned finals enter the fidelity average
        assert_eq!(stats.mean_fidelity_to_rvb, Some(0.5));

        assert!(stats.to_json_string().contains("\"n_null\": 1"));
    }

    #[test]
    fn partial_rows_reach_partial_fidelity() {
        // (1, 3): null probability 3/4 and the conditioned state is the
        // paired dark state.
        let split = RowSplit::new(1, 3);
        let cfg = TrajectoryConfig {
            n_traj: 2000,
            seed: 13,
            ..TrajectoryConfig::default_for(Model::EffectiveCollective)
        };
        let records = run_ensemble(&resonant(split), split, &cfg).unwrap();
        let stats = estimate_null_probability(&records);
        assert!((stats.p_null_hat - 0.75).abs() < 3.0 * (0.1875f64 / 2000.0).sqrt());
        assert!(stats.mean_fidelity_to_rvb.unwrap() > 1.0 - 1e-6);
    }
}
