//! Round-trip-exact text form for floating-point output.
//!
//! Every machine-readable document this crate writes (state JSON, reports,
//! trajectory CSV) prints doubles through [`f64_repr`] so that re-running a
//! command with the same inputs yields byte-identical files.

/// Formats with 17 significant digits, enough to reconstruct any f64 exactly.
pub fn f64_repr(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Complex amplitude as a `re, im` fragment for JSON array entries.
pub fn complex_repr(re: f64, im: f64) -> String {
    format!("{}, {}", f64_repr(re), f64_repr(im))
}
