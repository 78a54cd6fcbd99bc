//! Pointwise nu-gap (chordal distance) between two realized systems over a frequency grid.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sysid::StateSpaceRealization;

pub const DEFAULT_GRID_POINTS: usize = 512;
/// Lowest grid frequency, 10 Hz.
pub const GRID_LOW_RAD_S: f64 = 2.0 * std::f64::consts::PI * 10.0;
/// Upper grid edge as a fraction of the Nyquist rate `pi / delta`.
pub const GRID_NYQUIST_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidGrid("empty".into()));
        }
        if omegas.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidGrid("frequencies must be positive and finite".into()));
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("frequencies must be strictly increasing".into()));
        }
        Ok(Self { omegas })
    }

    pub fn log_spaced(low: f64, high: f64, points: usize) -> Result<Self> {
        if points == 0 || !(low > 0.0 && high > low) {
            return Err(Error::InvalidGrid(format!(
                "log grid needs 0 < low < high and points > 0 (got {low}, {high}, {points})"
            )));
        }
        if points == 1 {
            return Self::new(vec![low]);
        }
        let (l0, l1) = (low.ln(), high.ln());
        let step = (l1 - l0) / (points - 1) as f64;
        Self::new((0..points).map(|k| (l0 + step * k as f64).exp()).collect())
    }

    /// `points` log-spaced from 10 Hz to `0.95 * pi / delta`.
    pub fn for_spacing(delta: f64, points: usize) -> Result<Self> {
        Self::log_spaced(
            GRID_LOW_RAD_S,
            GRID_NYQUIST_FRACTION * std::f64::consts::PI / delta,
            points,
        )
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// Gap value and the grid frequency where it is attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapValue {
    pub value: f64,
    pub argmax_omega: f64,
}

/// `|p1 - p2| / (sqrt(1 + |p1|^2) sqrt(1 + |p2|^2))`.
pub fn pointwise_psi(p1: Complex64, p2: Complex64) -> Result<f64> {
    if !(p1.re.is_finite() && p1.im.is_finite() && p2.re.is_finite() && p2.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    let num = (p1 - p2).norm();
    let den = (1.0 + p1.norm_sqr()).sqrt() * (1.0 + p2.norm_sqr()).sqrt();
    Ok((num / den).min(1.0))
}

/// Maximum of the pointwise chordal distance over paired frequency responses.
pub fn gap_from_responses(p1: &[Complex64], p2: &[Complex64], grid: &FrequencyGrid) -> Result<GapValue> {
    debug_assert_eq!(p1.len(), grid.len());
    debug_assert_eq!(p2.len(), grid.len());
    let mut best = GapValue {
        value: 0.0,
        argmax_omega: grid.omegas[0],
    };
    for ((a, b), &w) in p1.iter().zip(p2).zip(&grid.omegas) {
        let psi = pointwise_psi(*a, *b)?;
        if psi > best.value {
            best = GapValue {
                value: psi,
                argmax_omega: w,
            };
        }
    }
    Ok(best)
}

pub(crate) fn check_delta(d1: f64, d2: f64) -> Result<()> {
    if (d1 - d2).abs() > 1e-9 * d1.abs().max(d2.abs()) {
        return Err(Error::DeltaMismatch(d1, d2));
    }
    Ok(())
}

/// Pointwise nu-gap between two realizations identified at the same sample spacing.
pub fn nu_gap(r1: &StateSpaceRealization, r2: &StateSpaceRealization, grid: &FrequencyGrid) -> Result<GapValue> {
    check_delta(r1.delta, r2.delta)?;
    let p1 = r1.freq_response(&grid.omegas)?;
    let p2 = r2.freq_response(&grid.omegas)?;
    gap_from_responses(&p1, &p2, grid)
}
