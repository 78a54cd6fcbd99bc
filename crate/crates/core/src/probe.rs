//! Pulse compression: turn a measured plant current into Markov-parameter estimates.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalTrace;

/// Default high-pass cutoff removing the grid fundamental before correlation.
pub const DEFAULT_CUTOFF_HZ: f64 = 600.0;

/// Sampled impulse response `h[0..M]` with spacing equal to the bit duration.
///
/// Values carry the units of the probed transfer function (amperes per volt for a
/// voltage-in / current-out probe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSequence {
    pub values: Vec<f64>,
    pub spacing: f64,
}

impl MarkovSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `||est - reference|| / ||reference||`.
pub fn nrmse(estimate: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Damping terms `2 sin((2k - 1) pi / 8)` of the two sections of a fourth-order Butterworth.
const BUTTERWORTH4_DAMPING: [f64; 2] = [0.765_366_864_730_179_9, 1.847_759_065_022_573_5];

/// Second-order high-pass section (bilinear, prewarped).
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn highpass(cutoff_hz: f64, dt: f64, q: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff_hz * dt).tan();
        let norm = 1.0 / (1.0 + q * k + k * k);
        Self {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - q * k + k * k) * norm],
        }
    }

    /// Transposed direct form II, state initialised to the steady state for a constant
    /// input equal to the first sample.
    fn run(&self, x: impl Iterator<Item = f64>, first: f64, out: &mut Vec<f64>) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let dc_gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let y0 = dc_gain * first;
        let mut z2 = b2 * first - a2 * y0;
        let mut z1 = y0 - b0 * first;
        out.clear();
        for xn in x {
            let yn = b0 * xn + z1;
            z1 = b1 * xn - a1 * yn + z2;
            z2 = b2 * xn - a2 * yn;
            out.push(yn);
        }
    }
}

/// Causal fourth-order Butterworth high-pass filter. Causality keeps the recovered impulse
/// response free of energy at negative lags, which a cyclic correlation would wrap to the end
/// of the period.
pub fn highpass_filter(y: &SignalTrace, cutoff_hz: f64) -> Result<SignalTrace> {
    let nyquist = 0.5 / y.dt;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::CutoffOutOfRange {
            cutoff_hz,
            nyquist_hz: nyquist,
        });
    }
    if y.is_empty() {
        return Ok(y.clone());
    }
    let mut x = y.samples.clone();
    let mut out = Vec::with_capacity(y.len());
    for q in BUTTERWORTH4_DAMPING {
        Biquad::highpass(cutoff_hz, y.dt, q).run(x.iter().copied(), x[0], &mut out);
        std::mem::swap(&mut x, &mut out);
    }
    Ok(SignalTrace::new(x, y.dt, y.t_start))
}

/// Cyclic cross-correlation planner, reusable across traces of one period length.
pub struct Correlator {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    reference_spectrum: Vec<Complex<f64>>,
    dt: f64,
}

impl Correlator {
    /// `reference` holds exactly one period of `s(t)`.
    pub fn new(reference: &SignalTrace) -> Self {
        let n = reference.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut spec: Vec<Complex<f64>> = reference.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        forward.process(&mut spec);
        for c in &mut spec {
            *c = c.conj();
        }
        Self {
            n,
            forward,
            inverse,
            reference_spectrum: spec,
            dt: reference.dt,
        }
    }

    /// `z[m] = dt * sum_k y[k] * s[(k - m) mod N]` over the first period of `y`.
    pub fn correlate(&self, y: &SignalTrace) -> Result<SignalTrace> {
        if (y.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::SampleIntervalMismatch(y.dt, self.dt));
        }
        if y.len() < self.n {
            return Err(Error::InsufficientSamples {
                needed: self.n,
                available: y.len(),
            });
        }
        let mut buf: Vec<Complex<f64>> = y.samples[..self.n].iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.reference_spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        let scale = self.dt / self.n as f64;
        Ok(SignalTrace::new(
            buf.iter().map(|c| c.re * scale).collect(),
            self.dt,
            0.0,
        ))
    }
}

/// Cyclic cross-correlation of `y` (its first `T_p` seconds) with one period of `s`.
pub fn cross_correlate(y: &SignalTrace, s: &SignalTrace, period: f64) -> Result<SignalTrace> {
    if (y.dt - s.dt).abs() > 1e-12 * s.dt {
        return Err(Error::SampleIntervalMismatch(y.dt, s.dt));
    }
    let n = (period / s.dt).round() as usize;
    if s.len() < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            available: s.len(),
        });
    }
    let reference = SignalTrace::new(s.samples[..n].to_vec(), s.dt, 0.0);
    Correlator::new(&reference).correlate(y)
}

/// Samples `z` at lags `0, t0, ..., (M-1) t0` (nearest sample).
pub fn extract_markov(z: &SignalTrace, bit_duration: f64, count: usize) -> Result<MarkovSequence> {
    let available = (z.duration() / bit_duration + 1e-9).floor() as usize;
    if count > available || count == 0 {
        return Err(Error::MarkovLengthTooLarge {
            requested: count,
            available,
        });
    }
    let values = (0..count)
        .map(|k| {
            let idx = ((k as f64 * bit_duration) / z.dt).round() as usize;
            z.samples[idx.min(z.len() - 1)]
        })
        .collect();
    Ok(MarkovSequence {
        values,
        spacing: bit_duration,
    })
}

/// Extra estimation error caused by simultaneous probing, per plant:
/// `||z_all - z_solo|| / ||z_solo||`. Zero when nothing interferes.
pub fn interference_check(pairs: &[(MarkovSequence, MarkovSequence)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|(all, solo)| nrmse(&all.values, &solo.values))
        .collect()
}
