//! Exact spin-1/2 register states and collective (total-spin) operators.
//!
//! A system of `Q = M + N` spins is split into a top row of `M` qubits and a
//! bottom row of `N` qubits.  Basis states are bitmasks: bit `i` set means
//! spin `i` points up, bits `0..M` are the top row, bits `M..M+N` the bottom
//! row.  A [`FullState`] stores all `2^Q` complex amplitudes, indexed by the
//! bitmask value.
//!
//! Collective operators are sums of the per-spin ones,
//! `S^± = Σ_i σ_i^±`, `S^z = Σ_i σ_i^z / 2`, and the total-spin square is
//! evaluated as `S² = S⁻S⁺ + S^z(S^z + 1)`.  Every operator application is a
//! pure function returning a fresh state, so callers can fan work out across
//! threads without locking.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numfmt::complex_repr;

/// Largest register for which full `2^Q` amplitude vectors are allocated.
pub const DEFAULT_Q_MAX: usize = 24;

/// Amplitudes at or below this magnitude are omitted from serialized output.
pub const AMPLITUDE_EMIT_THRESHOLD: f64 = 1e-15;

/// Sizes of the two qubit rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSplit {
    /// Number of initially excited (top-row) spins, `M`.
    pub m_top: usize,
    /// Number of initially ground (bottom-row) spins, `N`.
    pub n_bottom: usize,
}

impl RowSplit {
    pub fn new(m_top: usize, n_bottom: usize) -> Self {
        Self { m_top, n_bottom }
    }

    /// Total register size `Q = M + N`.
    pub fn total(&self) -> usize {
        self.m_top + self.n_bottom
    }

    /// Bitmask selecting the top row.
    pub fn top_mask(&self) -> u64 {
        (1u64 << self.m_top) - 1
    }

    /// Bitmask selecting the bottom row.
    pub fn bottom_mask(&self) -> u64 {
        ((1u64 << self.n_bottom) - 1) << self.m_top
    }

    /// Bitmask selecting the whole register.
    pub fn full_mask(&self) -> u64 {
        (1u64 << self.total()) - 1
    }

    /// Errors unless a full `2^Q` amplitude vector fits the default budget.
    pub fn check_full_capacity(&self) -> Result<()> {
        self.check_full_capacity_with(DEFAULT_Q_MAX)
    }

    pub fn check_full_capacity_with(&self, q_max: usize) -> Result<()> {
        let q = self.total();
        if q > q_max {
            return Err(Error::Capacity { q, q_max });
        }
        Ok(())
    }

    /// Errors unless `M <= N`; the dark-state constructions need spare
    /// bottom-row spins to absorb every top-row excitation.
    pub fn check_dark_ordering(&self) -> Result<()> {
        if self.m_top > self.n_bottom {
            return Err(Error::invalid(format!(
                "M must not exceed N (got M = {}, N = {})",
                self.m_top, self.n_bottom
            )));
        }
        Ok(())
    }
}

/// One computational basis state of the register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisState {
    /// Bit `i` set means spin `i` is up.
    pub bits: u64,
}

impl BasisState {
    pub fn new(bits: u64) -> Self {
        Self { bits }
    }

    pub fn ups(&self) -> u32 {
        self.bits.count_ones()
    }

    /// Total magnetization `m = (#up - #down) / 2` for a register of `q` spins.
    pub fn magnetization(&self, q: usize) -> f64 {
        self.ups() as f64 - q as f64 / 2.0
    }

    pub fn is_up(&self, spin: usize) -> bool {
        self.bits >> spin & 1 == 1
    }
}

/// Dense state vector over all `2^q` basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    q: usize,
    amps: Vec<Complex64>,
}

impl FullState {
    /// All-zero state vector (not a physical state until amplitudes are set).
    pub fn zero(q: usize) -> Self {
        Self { q, amps: vec![Complex64::new(0.0, 0.0); 1usize << q] }
    }

    pub fn from_amplitudes(q: usize, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != 1usize << q {
            return Err(Error::invalid(format!(
                "expected {} amplitudes for {} spins, got {}",
                1usize << q,
                q,
                amps.len()
            )));
        }
        Ok(Self { q, amps })
    }

    /// Number of spins in the register.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Dimension of the state vector, `2^q`.
    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitude(&self, index: u64) -> Complex64 {
        self.amps[index as usize]
    }

    pub fn set_amplitude(&mut self, index: u64, value: Complex64) {
        self.amps[index as usize] = value;
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// `|↑…↑↓…↓⟩`: every top-row spin up, every bottom-row spin down.
    pub fn product_state(split: RowSplit) -> Result<Self> {
        split.check_full_capacity()?;
        let mut st = Self::zero(split.total());
        st.amps[split.top_mask() as usize] = Complex64::new(1.0, 0.0);
        Ok(st)
    }

    /// `S⁻ψ` restricted to the spins selected by `mask`.
    pub fn apply_lowering_on(&self, mask: u64) -> Self {
        let mut out = Self::zero(self.q);
        for (idx, &a) in self.amps.iter().enumerate() {
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mut ups = idx as u64 & mask;
            while ups != 0 {
                let bit = ups & ups.wrapping_neg();
                out.amps[idx & !(bit as usize)] += a;
                ups ^= bit;
            }
        }
        out
    }

    /// `S⁺ψ` restricted to the spins selected by `mask`.
    pub fn apply_raising_on(&self, mask: u64) -> Self {
        let mut out = Self::zero(self.q);
        for (idx, &a) in self.amps.iter().enumerate() {
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mut downs = !(idx as u64) & mask;
            while downs != 0 {
                let bit = downs & downs.wrapping_neg();
                out.amps[idx | bit as usize] += a;
                downs ^= bit;
            }
        }
        out
    }

    /// `S^zψ` restricted to the spins selected by `mask`.
    pub fn apply_sz_on(&self, mask: u64) -> Self {
        let half_count = mask.count_ones() as f64 / 2.0;
        let mut out = self.clone();
        for (idx, a) in out.amps.iter_mut().enumerate() {
            let m = (idx as u64 & mask).count_ones() as f64 - half_count;
            *a *= m;
        }
        out
    }

    /// `S²ψ = (S⁻S⁺ + S^z(S^z + 1))ψ` restricted to the spins in `mask`.
    pub fn apply_s_squared_on(&self, mask: u64) -> Self {
        let half_count = mask.count_ones() as f64 / 2.0;
        let mut out = self.apply_raising_on(mask).apply_lowering_on(mask);
        for (idx, a) in self.amps.iter().enumerate() {
            let m = (idx as u64 & mask).count_ones() as f64 - half_count;
            out.amps[idx] += m * (m + 1.0) * a;
        }
        out
    }

    pub fn apply_lowering(&self) -> Self {
        self.apply_lowering_on(u64::MAX >> (64 - self.q.max(1)))
    }

    pub fn apply_raising(&self) -> Self {
        self.apply_raising_on(u64::MAX >> (64 - self.q.max(1)))
    }

    pub fn apply_sz(&self) -> Self {
        self.apply_sz_on(u64::MAX >> (64 - self.q.max(1)))
    }

    pub fn apply_s_squared(&self) -> Self {
        self.apply_s_squared_on(u64::MAX >> (64 - self.q.max(1)))
    }

    /// Relabels spins: spin `i` of the input becomes spin `perm[i]`.
    pub fn apply_permutation(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.q {
            return Err(Error::invalid(format!(
                "permutation over {} spins applied to a register of {}",
                perm.len(),
                self.q
            )));
        }
        let mut seen = 0u64;
        for &p in perm {
            if p >= self.q || seen >> p & 1 == 1 {
                return Err(Error::invalid("not a permutation".to_string()));
            }
            seen |= 1 << p;
        }
        let mut out = Self::zero(self.q);
        for (idx, &a) in self.amps.iter().enumerate() {
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mut target = 0usize;
            for (i, &p) in perm.iter().enumerate() {
                if idx >> i & 1 == 1 {
                    target |= 1 << p;
                }
            }
            out.amps[target] = a;
        }
        Ok(out)
    }

    /// `⟨self|other⟩`, antilinear in `self`.
    pub fn inner_product(&self, other: &Self) -> Complex64 {
        assert_eq!(self.q, other.q, "inner product of mismatched registers");
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

    pub fn add_scaled(&mut self, factor: Complex64, other: &Self) {
        assert_eq!(self.q, other.q, "sum of mismatched registers");
        for (a, b) in self.amps.iter_mut().zip(&other.amps) {
            *a += factor * b;
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    /// Largest absolute difference between amplitudes of two states.
    pub fn max_abs_difference(&self, other: &Self) -> f64 {
        assert_eq!(self.q, other.q, "difference of mismatched registers");
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// JSON document `{"q": .., "amplitudes": [[index, re, im], ..]}` with
    /// entries above [`AMPLITUDE_EMIT_THRESHOLD`], indices ascending, doubles
    /// printed round-trip exact.
    pub fn to_json_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{{\"q\": {}, \"amplitudes\": [", self.q));
        let mut first = true;
        for (idx, a) in self.amps.iter().enumerate() {
            if a.norm() <= AMPLITUDE_EMIT_THRESHOLD {
                continue;
            }
            if !first {
                out.push_str(", ");
            }
            first = false;
            out.push_str(&format!("[{}, {}]", idx, complex_repr(a.re, a.im)));
        }
        out.push_str("]}");
        out
    }
}

/// Real expectation `⟨ψ|O|ψ⟩ / ⟨ψ|ψ⟩` given the already-applied image `Oψ`.
pub fn real_expectation(psi: &FullState, op_psi: &FullState) -> f64 {
    psi.inner_product(op_psi).re / psi.squared_norm()
}

/// All `width`-bit masks with exactly `k` set bits, in increasing numeric
/// order (Gosper's hack).
pub fn masks_with_popcount(width: usize, k: usize) -> impl Iterator<Item = u64> {
    let limit = 1u64 << width;
    let mut cur = if k <= width { ((1u64 << k) - 1).max(0) } else { limit };
    let mut exhausted = k > width;
    std::iter::from_fn(move || {
        if exhausted || cur >= limit {
            return None;
        }
        let item = cur;
        if k == 0 {
            exhausted = true;
        } else {
            let c = cur & cur.wrapping_neg();
            let r = cur + c;
            cur = (((r ^ cur) >> 2) / c) | r;
        }
        Some(item)
    })
}

/// Exact binomial coefficient as a double; callers stay far below 2^53.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc * (n - k + i) as u128 / i as u128;
    }
    acc as f64
}
