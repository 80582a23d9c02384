//! Lockstep definition, scoring and the exhaustive small-instance oracle.

mod oracle;
mod params;
mod score;
mod state;

pub use oracle::{verify_definition, OracleError, ORACLE_LIMIT};
pub use params::{DetectionParams, ParamError, RECOMMENDED_MIN_RHO};
pub use score::{objective, q_score};
pub use state::{Credit, Lockstep, ProductSlot};

use crate::Mode;

/// Weight constraint: promotion keeps `weight >= kappa`, defamation keeps
/// `weight <= kappa`. A weight equal to `kappa` passes in both modes.
#[inline]
pub fn lambda_weight(weight: u8, kappa: u8, mode: Mode) -> bool {
    match mode {
        Mode::Promotion => weight >= kappa,
        Mode::Defamation => weight <= kappa,
    }
}

/// True iff `|center - t| <= delta_t`.
#[inline]
pub fn phi_within_window(center: f64, t: u64, delta_t: u64) -> bool {
    (t as f64 - center).abs() <= delta_t as f64
}

/// `ceil(rho * size)`, guarded against products like `0.8 * 5` landing a
/// hair above an integer.
#[inline]
pub fn required_coverage(rho: f64, size: usize) -> usize {
    let raw = rho * size as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Mean of integer timestamps, summed exactly.
pub fn mean_timestamp<I: IntoIterator<Item = u64>>(timestamps: I) -> Option<f64> {
    let mut sum = 0u128;
    let mut count = 0u64;
    for t in timestamps {
        sum += t as u128;
        count += 1;
    }
    (count > 0).then(|| sum as f64 / count as f64)
}
