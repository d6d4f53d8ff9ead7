//! Compressed states in the row-symmetric sector.
//!
//! Both constructions of the subradiant state and the conditional dynamics
//! that prepares it never leave the span of products of per-row symmetric
//! Dicke states.  A [`SectorState`] therefore stores one amplitude per pair
//! `(i, j)` with `i` top-row spins down and `j` bottom-row spins down, an
//! `(M+1) x (N+1)` grid, instead of `2^(M+N)` amplitudes.
//!
//! On this grid the subradiant state occupies the anti-diagonal
//! `(i, j) = (λ, N-λ)`, its Schmidt coefficients across the row cut can be
//! read off directly, and the collective ladder operators act as banded
//! matrices with the usual `sqrt((S ∓ m)(S ± m + 1))` elements per row.

use num_complex::Complex64;

use crate::angular::dark_coefficient;
use crate::error::{Error, Result};
use crate::numfmt::complex_repr;
use crate::spin_basis::{binomial, masks_with_popcount, FullState, RowSplit};

/// A full state must embed back to within this of itself to count as
/// row-symmetric.
pub const SECTOR_RESIDUAL_TOL: f64 = 1e-10;

/// Relative magnitude below which a grid entry counts as unoccupied.
const SUPPORT_THRESHOLD: f64 = 1e-12;

/// State in the span of `|M/2, M/2-i⟩_top ⊗ |N/2, N/2-j⟩_bottom`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorState {
    split: RowSplit,
    amps: Vec<Complex64>,
}

impl SectorState {
    pub fn zero(split: RowSplit) -> Self {
        let dim = (split.m_top + 1) * (split.n_bottom + 1);
        Self { split, amps: vec![Complex64::new(0.0, 0.0); dim] }
    }

    pub fn split(&self) -> RowSplit {
        self.split
    }

    /// Grid dimension `(M+1)(N+1)`.
    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.split.m_top && j <= self.split.n_bottom);
        i * (self.split.n_bottom + 1) + j
    }

    /// Amplitude of `i` top spins down, `j` bottom spins down.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.amps[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        let idx = self.index(i, j);
        self.amps[idx] = value;
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    /// Total magnetization of cell `(i, j)`: `(M+N)/2 - i - j`.
    pub fn cell_magnetization(&self, i: usize, j: usize) -> f64 {
        (self.split.m_top + self.split.n_bottom) as f64 / 2.0 - (i + j) as f64
    }

    pub fn inner_product(&self, other: &Self) -> Complex64 {
        assert_eq!(self.split, other.split, "inner product of mismatched grids");
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

    pub fn scaled(&self, factor: Complex64) -> Self {
        let mut out = self.clone();
        for a in &mut out.amps {
            *a *= factor;
        }
        out
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    pub fn max_abs_difference(&self, other: &Self) -> f64 {
        assert_eq!(self.split, other.split, "difference of mismatched grids");
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Expands into the full register; the embedded per-row Dicke basis is
    /// orthonormal, so norms and inner products are preserved.
    pub fn embed(&self) -> Result<FullState> {
        self.split.check_full_capacity()?;
        let (m, n) = (self.split.m_top, self.split.n_bottom);
        let mut out = FullState::zero(self.split.total());
        for i in 0..=m {
            for j in 0..=n {
                let a = self.get(i, j);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let scale = a / (binomial(m, i) * binomial(n, j)).sqrt();
                for top_ups in masks_with_popcount(m, m - i) {
                    for bottom_ups in masks_with_popcount(n, n - j) {
                        let idx = top_ups | bottom_ups << m;
                        out.set_amplitude(idx, out.amplitude(idx) + scale);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `{"m": .., "n": .., "amps": [[i, j, re, im], ..]}` with entries above
    /// the significance threshold in row-major order.
    pub fn to_json_string(&self) -> String {
        let mut out = format!(
            "{{\"m\": {}, \"n\": {}, \"amps\": [",
            self.split.m_top, self.split.n_bottom
        );
        let mut first = true;
        for i in 0..=self.split.m_top {
            for j in 0..=self.split.n_bottom {
                let a = self.get(i, j);
                if a.norm() <= 1e-15 {
                    continue;
                }
                if !first {
                    out.push_str(", ");
                }
                first = false;
                out.push_str(&format!("[{}, {}, {}]", i, j, complex_repr(a.re, a.im)));
            }
        }
        out.push_str("]}");
        out
    }
}

/// The protocol's starting point `|↑…↑↓…↓⟩` on the grid: one-hot at `(0, N)`.
pub fn product_sector_state(split: RowSplit) -> SectorState {
    let mut st = SectorState::zero(split);
    st.set(0, split.n_bottom, Complex64::new(1.0, 0.0));
    st
}

/// Projects a full state onto the row-symmetric sector.
///
/// Returns the grid together with the embedding residual
/// `‖ψ - embed(compress(ψ))‖`; a residual above [`SECTOR_RESIDUAL_TOL`] is
/// an error because information would be silently dropped.
pub fn compress(psi: &FullState, split: RowSplit) -> Result<(SectorState, f64)> {
    if psi.q() != split.total() {
        return Err(Error::invalid(format!(
            "state of {} spins does not match a {}+{} split",
            psi.q(),
            split.m_top,
            split.n_bottom
        )));
    }
    let (m, n) = (split.m_top, split.n_bottom);
    let mut grid = SectorState::zero(split);
    for i in 0..=m {
        for j in 0..=n {
            let mut acc = Complex64::new(0.0, 0.0);
            for top_ups in masks_with_popcount(m, m - i) {
                for bottom_ups in masks_with_popcount(n, n - j) {
                    acc += psi.amplitude(top_ups | bottom_ups << m);
                }
            }
            grid.set(i, j, acc / (binomial(m, i) * binomial(n, j)).sqrt());
        }
    }
    let mut difference = grid.embed()?;
    difference.add_scaled(Complex64::new(-1.0, 0.0), psi);
    let residual = difference.norm();
    if residual > SECTOR_RESIDUAL_TOL {
        return Err(Error::NotInSector { residual });
    }
    Ok((grid, residual))
}

/// The subradiant state on the grid: anti-diagonal entries
/// `(λ, N-λ) = C_λ` for `λ = 0..M`.
pub fn dark_sector_state(split: RowSplit) -> Result<SectorState> {
    split.check_dark_ordering()?;
    let (m, n) = (split.m_top, split.n_bottom);
    let mut st = SectorState::zero(split);
    for lambda in 0..=m {
        st.set(lambda, n - lambda, Complex64::new(dark_coefficient(m, n, lambda)?, 0.0));
    }
    Ok(st)
}

/// Schmidt coefficients across the top/bottom row cut.
#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtSpectrum {
    /// Signed real coefficients, ordered by the number of top-row flips.
    pub coefficients: Vec<f64>,
}

impl SchmidtSpectrum {
    pub fn squared_sum(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }
}

/// Reads the Schmidt coefficients off the occupied anti-diagonal.
///
/// Grid states of definite total magnetization are already written in
/// per-row Schmidt form, one coefficient per occupied cell.  States mixing
/// several magnetization diagonals need a genuine SVD and are rejected, as
/// are states whose entries are not real up to roundoff (fix the gauge
/// first).
pub fn schmidt_spectrum(state: &SectorState) -> Result<SchmidtSpectrum> {
    let norm = state.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let split = state.split();
    let threshold = SUPPORT_THRESHOLD * norm;
    let mut diagonals: Vec<usize> = Vec::new();
    for i in 0..=split.m_top {
        for j in 0..=split.n_bottom {
            if state.get(i, j).norm() > threshold && !diagonals.contains(&(i + j)) {
                diagonals.push(i + j);
            }
        }
    }
    if diagonals.len() != 1 {
        return Err(Error::MultiDiagonal { count: diagonals.len() });
    }
    let d = diagonals[0];
    let lo = d.saturating_sub(split.n_bottom);
    let hi = d.min(split.m_top);
    let mut coefficients = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let a = state.get(i, d - i);
        if a.im.abs() > threshold {
            return Err(Error::invalid(
                "grid entries are complex; apply a global phase before reading \
                 Schmidt coefficients"
                    .to_string(),
            ));
        }
        if a.norm() > threshold {
            coefficients.push(a.re);
        }
    }
    Ok(SchmidtSpectrum { coefficients })
}

/// Von Neumann entanglement entropy `-Σ C² ln C²` in natural-log units
/// (nats); zero-weight coefficients contribute nothing.
pub fn entanglement_entropy(spectrum: &SchmidtSpectrum) -> f64 {
    spectrum
        .coefficients
        .iter()
        .map(|c| {
            let w = c * c;
            if w > 0.0 {
                -w * w.ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// Probability that the protocol's null-measurement branch survives:
/// `(N - M + 1)/(N + 1)`, clamped at zero once `M` exceeds `N + 1`.
pub fn null_emission_probability(split: RowSplit) -> f64 {
    (split.n_bottom + 1).saturating_sub(split.m_top) as f64 / (split.n_bottom + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderDirection {
    Lower,
    Raise,
}

/// Collective `S⁻` or `S⁺` on the grid.
///
/// Lowering a row with `k` spins down out of `P` carries
/// `sqrt((P - k)(k + 1))`, raising carries `sqrt(k (P - k + 1))`.
pub fn sector_ladder(state: &SectorState, direction: LadderDirection) -> SectorState {
    let split = state.split();
    let (m, n) = (split.m_top, split.n_bottom);
    let mut out = SectorState::zero(split);
    for i in 0..=m {
        for j in 0..=n {
            let a = state.get(i, j);
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            match direction {
                LadderDirection::Lower => {
                    if i < m {
                        let c = (((m - i) * (i + 1)) as f64).sqrt();
                        let cur = out.get(i + 1, j);
                        out.set(i + 1, j, cur + c * a);
                    }
                    if j < n {
                        let c = (((n - j) * (j + 1)) as f64).sqrt();
                        let cur = out.get(i, j + 1);
                        out.set(i, j + 1, cur + c * a);
                    }
                }
                LadderDirection::Raise => {
                    if i > 0 {
                        let c = ((i * (m - i + 1)) as f64).sqrt();
                        let cur = out.get(i - 1, j);
                        out.set(i - 1, j, cur + c * a);
                    }
                    if j > 0 {
                        let c = ((j * (n - j + 1)) as f64).sqrt();
                        let cur = out.get(i, j - 1);
                        out.set(i, j - 1, cur + c * a);
                    }
                }
            }
        }
    }
    out
}

/// `⟨S^z⟩` of a grid state.
pub fn expectation_sz(state: &SectorState) -> f64 {
    let split = state.split();
    let mut acc = 0.0;
    for i in 0..=split.m_top {
        for j in 0..=split.n_bottom {
            acc += state.cell_magnetization(i, j) * state.get(i, j).norm_sqr();
        }
    }
    acc / state.squared_norm()
}

/// `⟨S²⟩ = ⟨S⁻S⁺⟩ + ⟨S^z(S^z + 1)⟩` of a grid state.
pub fn expectation_s_squared(state: &SectorState) -> f64 {
    let split = state.split();
    let raised = sector_ladder(state, LadderDirection::Raise);
    let mut acc = raised.squared_norm();
    for i in 0..=split.m_top {
        for j in 0..=split.n_bottom {
            let mz = state.cell_magnetization(i, j);
            acc += mz * (mz + 1.0) * state.get(i, j).norm_sqr();
        }
    }
    acc / state.squared_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvb::dark_state_projection;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_sector(split: RowSplit, seed: u64) -> SectorState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut st = SectorState::zero(split);
        for i in 0..=split.m_top {
            for j in 0..=split.n_bottom {
                st.set(
                    i,
                    j,
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                );
            }
        }
        st
    }

    #[test]
    fn one_hot_cells_embed_to_dicke_products() {
        let split = RowSplit::new(1, 1);
        let full = product_sector_state(split).embed().unwrap();
        assert_abs_diff_eq!(full.amplitude(0b01).re, 1.0, epsilon = 1e-15);

        // (i=1, j=1) on a 2+2 register: one top flip times one bottom flip.
        let mut st = SectorState::zero(RowSplit::new(2, 2));
        st.set(1, 1, Complex64::new(1.0, 0.0));
        let full = st.embed().unwrap();
        for idx in [0b0101u64, 0b1001, 0b0110, 0b1010] {
            assert_abs_diff_eq!(full.amplitude(idx).re, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn dark_grid_embeds_to_the_singlet() {
        let st = dark_sector_state(RowSplit::new(1, 1)).unwrap();
        let full = st.embed().unwrap();
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(full.amplitude(0b01).re, inv_sqrt2, epsilon = 1e-14);
        assert_abs_diff_eq!(full.amplitude(0b10).re, -inv_sqrt2, epsilon = 1e-14);
    }

    #[test]
    fn dark_grid_matches_projector_route() {
        for n in 1..=4 {
            for m in 0..=n {
                let split = RowSplit::new(m, n);
                let (full, _) = dark_state_projection(split).unwrap();
                let (grid, residual) = compress(&full, split).unwrap();
                assert!(residual < 1e-12);
                let reference = dark_sector_state(split).unwrap();
                assert!(grid.max_abs_difference(&reference) < 1e-12, "at {m},{n}");
            }
        }
    }

    #[test]
    fn compress_inverts_embed() {
        let split = RowSplit::new(2, 3);
        let st = random_sector(split, 5);
        let (back, residual) = compress(&st.embed().unwrap(), split).unwrap();
        assert!(residual < 1e-13);
        assert!(back.max_abs_difference(&st) < 1e-13);
    }

    #[test]
    fn antisymmetric_component_is_rejected() {
        // |↓⟩_top ⊗ (|↑↓⟩ - |↓↑⟩)/√2 on a 1+2 register.
        let split = RowSplit::new(1, 2);
        let mut psi = FullState::zero(3);
        let inv_sqrt2 = Complex64::new(1.0 / 2.0_f64.sqrt(), 0.0);
        psi.set_amplitude(0b010, inv_sqrt2);
        psi.set_amplitude(0b100, -inv_sqrt2);
        match compress(&psi, split) {
            Err(Error::NotInSector { residual }) => {
                assert_abs_diff_eq!(residual, 1.0, epsilon = 1e-12)
            }
            other => panic!("expected not-in-sector, got {other:?}"),
        }
    }

    #[test]
    fn schmidt_spectrum_of_known_states() {
        let spec = schmidt_spectrum(&dark_sector_state(RowSplit::new(2, 2)).unwrap()).unwrap();
        let inv_sqrt3 = 1.0 / 3.0_f64.sqrt();
        assert_eq!(spec.coefficients.len(), 3);
        assert_abs_diff_eq!(spec.coefficients[0], inv_sqrt3, epsilon = 1e-14);
        assert_abs_diff_eq!(spec.coefficients[1], -inv_sqrt3, epsilon = 1e-14);
        assert_abs_diff_eq!(spec.coefficients[2], inv_sqrt3, epsilon = 1e-14);

        let spec = schmidt_spectrum(&dark_sector_state(RowSplit::new(1, 3)).unwrap()).unwrap();
        assert_abs_diff_eq!(spec.coefficients[0], 3.0_f64.sqrt() / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(spec.coefficients[1], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(spec.squared_sum(), 1.0, epsilon = 1e-13);

        // Product states have Schmidt rank one.
        let spec = schmidt_spectrum(&product_sector_state(RowSplit::new(2, 2))).unwrap();
        assert_eq!(spec.coefficients, vec![1.0]);
    }

    #[test]
    fn schmidt_spectrum_needs_definite_magnetization() {
        let mut st = SectorState::zero(RowSplit::new(1, 1));
        st.set(0, 0, Complex64::new(0.6, 0.0));
        st.set(1, 1, Complex64::new(0.8, 0.0));
        match schmidt_spectrum(&st) {
            Err(Error::MultiDiagonal { count: 2 }) => {}
            other => panic!("expected multi-diagonal error, got {other:?}"),
        }
    }

    #[test]
    fn entropy_of_balanced_rows_is_log_of_pair_count() {
        for n in 1..=6usize {
            let spec = schmidt_spectrum(&dark_sector_state(RowSplit::new(n, n)).unwrap()).unwrap();
            assert_abs_diff_eq!(
                entanglement_entropy(&spec),
                ((n + 1) as f64).ln(),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn entropy_of_partial_coverage_is_frozen() {
        let spec = schmidt_spectrum(&dark_sector_state(RowSplit::new(1, 3)).unwrap()).unwrap();
        // -(3/4) ln(3/4) - (1/4) ln(1/4)
        assert_abs_diff_eq!(
            entanglement_entropy(&spec),
            0.5623351446188083,
            epsilon = 1e-14
        );
        let product = schmidt_spectrum(&product_sector_state(RowSplit::new(2, 2))).unwrap();
        assert_eq!(entanglement_entropy(&product), 0.0);
    }

    #[test]
    fn null_probability_closed_form() {
        assert_abs_diff_eq!(null_emission_probability(RowSplit::new(1, 1)), 0.5);
        assert_abs_diff_eq!(null_emission_probability(RowSplit::new(1, 3)), 0.75);
        assert_abs_diff_eq!(
            null_emission_probability(RowSplit::new(10, 10)),
            1.0 / 11.0,
            epsilon = 1e-16
        );
        // No dark component survives once the top row outnumbers the bottom.
        assert_eq!(null_emission_probability(RowSplit::new(1, 0)), 0.0);
        assert_eq!(null_emission_probability(RowSplit::new(3, 1)), 0.0);
    }

    #[test]
    fn null_probability_equals_dark_overlap() {
        for n in 1..=8 {
            for m in 0..=n {
                let split = RowSplit::new(m, n);
                let overlap = product_sector_state(split)
                    .inner_product(&dark_sector_state(split).unwrap());
                assert_abs_diff_eq!(
                    overlap.norm_sqr(),
                    null_emission_probability(split),
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn ladder_annihilates_the_dark_grid() {
        for n in 1..=6 {
            for m in 0..=n {
                let dark = dark_sector_state(RowSplit::new(m, n)).unwrap();
                assert!(sector_ladder(&dark, LadderDirection::Lower).norm() < 1e-13);
                if m == n {
                    assert!(sector_ladder(&dark, LadderDirection::Raise).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn ladder_matrix_elements_on_one_hot_cells() {
        let split = RowSplit::new(3, 2);
        let lowered = sector_ladder(&product_sector_state(split), LadderDirection::Lower);
        assert_abs_diff_eq!(lowered.get(1, 2).re, 3.0_f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(lowered.norm(), 3.0_f64.sqrt(), epsilon = 1e-14);

        // Fully raised grid cell is annihilated by raising.
        let mut top = SectorState::zero(split);
        top.set(0, 0, Complex64::new(1.0, 0.0));
        assert_eq!(sector_ladder(&top, LadderDirection::Raise).norm(), 0.0);
    }

    #[test]
    fn embedding_intertwines_the_ladders() {
        let split = RowSplit::new(2, 2);
        let st = random_sector(split, 9);
        let lhs = sector_ladder(&st, LadderDirection::Lower).embed().unwrap();
        let rhs = st.embed().unwrap().apply_lowering();
        assert!(lhs.max_abs_difference(&rhs) < 1e-12);

        let lhs = sector_ladder(&st, LadderDirection::Raise).embed().unwrap();
        let rhs = st.embed().unwrap().apply_raising();
        assert!(lhs.max_abs_difference(&rhs) < 1e-12);
    }

    #[test]
    fn grid_expectations_match_quantum_numbers() {
        let split = RowSplit::new(1, 3);
        let dark = dark_sector_state(split).unwrap();
        // Total spin (N-M)/2 = 1, magnetization (M-N)/2 = -1.
        assert_abs_diff_eq!(expectation_s_squared(&dark), 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(expectation_sz(&dark), -1.0, epsilon = 1e-13);

        let product = product_sector_state(RowSplit::new(0, 2));
        assert_abs_diff_eq!(expectation_s_squared(&product), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(expectation_sz(&product), -1.0, epsilon = 1e-14);
    }

    #[test]
    fn grid_json_lists_occupied_cells_in_order() {
        let st = dark_sector_state(RowSplit::new(1, 1)).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&st.to_json_string()).unwrap();
        assert_eq!(parsed["m"], 1);
        assert_eq!(parsed["n"], 1);
        let amps = parsed["amps"].as_array().unwrap();
        assert_eq!(amps.len(), 2);
        assert_eq!(amps[0][0], 0);
        assert_eq!(amps[0][1], 1);
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(amps[0][2].as_f64().unwrap(), inv_sqrt2, epsilon = 1e-15);
        assert_abs_diff_eq!(amps[1][2].as_f64().unwrap(), -inv_sqrt2, epsilon = 1e-15);
    }

    #[test]
    fn compress_checks_register_size() {
        let psi = FullState::zero(3);
        assert!(compress(&psi, RowSplit::new(1, 1)).is_err());
    }
}
