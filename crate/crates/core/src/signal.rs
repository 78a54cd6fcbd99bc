//! Maximal-length binary sequences and the probing / reference waveforms built from them.
//!
//! A probing pass injects one period of a pseudo-random binary pulse train (PRBPT): every
//! bit of a ±1 m-sequence held for one bit duration `t0` and scaled by the magnitude `a`.
//! The reference used for pulse compression has the same sign pattern with amplitude
//! `1 / (a * T_p)`, so that the cyclic correlation of the two has unit peak at lag zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Built-in primitive feedback polynomials, one or more per order (2..=16).
///
/// Each entry lists the exponents with non-zero coefficient other than the constant term.
const PRIMITIVE_TABLE: &[&[u32]] = &[
    &[2, 1],
    &[3, 2],
    &[3, 1],
    &[4, 3],
    &[4, 1],
    &[5, 3],
    &[5, 2],
    &[6, 5],
    &[6, 1],
    &[7, 6],
    &[7, 3],
    &[8, 6, 5, 4],
    &[8, 6, 5, 3],
    &[9, 5],
    &[9, 4],
    &[10, 7],
    &[10, 3],
    &[11, 9],
    &[11, 2],
    &[12, 11, 10, 4],
    &[12, 6, 4, 1],
    &[13, 12, 11, 8],
    &[14, 13, 12, 2],
    &[15, 14],
    &[16, 15, 13, 4],
];

/// Highest order accepted for user-supplied polynomials.
pub const MAX_ORDER: u32 = 20;

/// Feedback polynomial of a Fibonacci LFSR, written as `x^n+...+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Polynomial {
    taps: Vec<u32>,
}

impl Polynomial {
    /// Parses identifiers like `x^12+x^11+x^10+x^4+1`.
    pub fn parse(order: u32, id: &str) -> Result<Self> {
        let unknown = || Error::UnknownPolynomial {
            order,
            id: id.to_string(),
        };
        let mut taps = Vec::new();
        let mut has_constant = false;
        for term in id.split('+').map(str::trim) {
            match term {
                "1" => has_constant = true,
                "x" => taps.push(1),
                t => {
                    let exp = t
                        .strip_prefix("x^")
                        .and_then(|e| e.parse::<u32>().ok())
                        .ok_or_else(unknown)?;
                    taps.push(exp);
                }
            }
        }
        taps.sort_unstable_by(|a, b| b.cmp(a));
        taps.dedup();
        if !has_constant || taps.first() != Some(&order) || taps.contains(&0) {
            return Err(unknown());
        }
        Ok(Self { taps })
    }

    pub fn order(&self) -> u32 {
        self.taps[0]
    }

    pub fn id(&self) -> String {
        let mut s: Vec<String> = self
            .taps
            .iter()
            .map(|&t| if t == 1 { "x".into() } else { format!("x^{t}") })
            .collect();
        s.push("1".into());
        s.join("+")
    }
}

/// Identifiers of every shipped primitive polynomial of the given order.
pub fn builtin_polynomials(order: u32) -> Vec<String> {
    PRIMITIVE_TABLE
        .iter()
        .filter(|taps| taps[0] == order)
        .map(|taps| Polynomial { taps: taps.to_vec() }.id())
        .collect()
}

/// The first shipped polynomial of the given order.
pub fn default_polynomial(order: u32) -> Result<String> {
    builtin_polynomials(order)
        .into_iter()
        .next()
        .ok_or_else(|| Error::UnknownPolynomial {
            order,
            id: "<default>".into(),
        })
}

/// A ±1 maximal-length sequence of length `2^order - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrbsSequence {
    pub order: u32,
    pub bits: Vec<i8>,
    pub polynomial_id: String,
}

impl PrbsSequence {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// `(1/N) * sum_k b[k] * b[(k + lag) mod N]`.
    pub fn cyclic_autocorrelation(&self, lag: usize) -> f64 {
        let n = self.bits.len();
        let acc: i64 = (0..n)
            .map(|k| i64::from(self.bits[k]) * i64::from(self.bits[(k + lag) % n]))
            .sum();
        acc as f64 / n as f64
    }
}

/// Generates the m-sequence of a Fibonacci LFSR seeded with all ones.
pub fn generate_prbs(order: u32, polynomial_id: &str) -> Result<PrbsSequence> {
    if !(2..=MAX_ORDER).contains(&order) {
        return Err(Error::OrderOutOfRange(order));
    }
    let poly = Polynomial::parse(order, polynomial_id)?;
    let n = order;
    let expected = (1usize << n) - 1;
    let mask: u32 = (1u32 << n) - 1;
    let seed = mask;
    let mut state = seed;
    let mut bits = Vec::with_capacity(expected);
    for step in 1..=expected {
        bits.push(if state & 1 == 1 { 1 } else { -1 });
        let feedback = poly.taps.iter().fold(0u32, |acc, &t| acc ^ (state >> (n - t))) & 1;
        state = ((state >> 1) | (feedback << (n - 1))) & mask;
        if state == seed && step < expected {
            return Err(Error::NonPrimitivePolynomial {
                id: poly.id(),
                period: step,
                expected,
            });
        }
    }
    Ok(PrbsSequence {
        order,
        bits,
        polynomial_id: poly.id(),
    })
}

/// Probing signal parameters: PRBS order `n`, bit duration `t0`, magnitude `a`, and the
/// simulation sample interval `dt` (with `t0` an integer multiple of `dt`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbingConfig {
    pub order: u32,
    pub bit_duration: f64,
    pub magnitude: f64,
    pub sample_interval: f64,
}

impl ProbingConfig {
    pub fn new(order: u32, bit_duration: f64, magnitude: f64, sample_interval: f64) -> Result<Self> {
        let cfg = Self {
            order,
            bit_duration,
            magnitude,
            sample_interval,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_ORDER).contains(&self.order) {
            return Err(Error::OrderOutOfRange(self.order));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.bit_duration) || !positive(self.magnitude) || !positive(self.sample_interval) {
            return Err(Error::InvalidProbingConfig(
                "bit duration, magnitude and sample interval must be positive".into(),
            ));
        }
        let ratio = self.bit_duration / self.sample_interval;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::InvalidProbingConfig(format!(
                "bit duration {} s is not an integer multiple of sample interval {} s",
                self.bit_duration, self.sample_interval
            )));
        }
        Ok(())
    }

    /// Number of pulses per period, `2^n - 1`.
    pub fn pulses(&self) -> usize {
        (1usize << self.order) - 1
    }

    /// Probing period `T_p = (2^n - 1) * t0`.
    pub fn period(&self) -> f64 {
        self.pulses() as f64 * self.bit_duration
    }

    pub fn samples_per_bit(&self) -> usize {
        (self.bit_duration / self.sample_interval).round() as usize
    }

    pub fn period_samples(&self) -> usize {
        self.pulses() * self.samples_per_bit()
    }

    /// Reference amplitude `1 / (a * T_p)`.
    pub fn reference_amplitude(&self) -> f64 {
        1.0 / (self.magnitude * self.period())
    }
}

/// Uniformly sampled real waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTrace {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub t_start: f64,
}

impl SignalTrace {
    pub fn new(samples: Vec<f64>, dt: f64, t_start: f64) -> Self {
        debug_assert!(dt > 0.0);
        Self { samples, dt, t_start }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t_start + index as f64 * self.dt
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Index of the sample nearest to absolute time `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let k = ((t - self.t_start) / self.dt).round();
        (k >= 0.0 && (k as usize) < self.samples.len()).then_some(k as usize)
    }

    /// Writes `time,value` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,value")?;
        for (k, v) in self.samples.iter().enumerate() {
            writeln!(w, "{:.9e},{:.12e}", self.time(k), v)?;
        }
        Ok(())
    }
}

pub(crate) fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn check_pair(prbs: &PrbsSequence, cfg: &ProbingConfig) -> Result<()> {
    cfg.validate()?;
    if prbs.order != cfg.order {
        return Err(Error::OrderMismatch {
            prbs: prbs.order,
            config: cfg.order,
        });
    }
    Ok(())
}

fn hold(prbs: &PrbsSequence, cfg: &ProbingConfig, amplitude: f64) -> SignalTrace {
    let spb = cfg.samples_per_bit();
    let samples = prbs
        .bits
        .iter()
        .flat_map(|&b| std::iter::repeat_n(amplitude * f64::from(b), spb))
        .collect();
    SignalTrace::new(samples, cfg.sample_interval, 0.0)
}

/// One period of the probing pulse train `p(t) = a * eta(t) * sigma(t)`.
pub fn build_prbpt(prbs: &PrbsSequence, cfg: &ProbingConfig) -> Result<SignalTrace> {
    check_pair(prbs, cfg)?;
    Ok(hold(prbs, cfg, cfg.magnitude))
}

/// One period of the cyclic reference `s(t)`: the probing sign pattern at `±1/(a T_p)`.
pub fn build_reference(prbs: &PrbsSequence, cfg: &ProbingConfig) -> Result<SignalTrace> {
    check_pair(prbs, cfg)?;
    Ok(hold(prbs, cfg, cfg.reference_amplitude()))
}

/// Injection waveform for one probing pass: a cyclic prefix (the last `lead_in` seconds of the
/// period) followed by `n_periods` full periods, starting at `t_start`.
pub fn injection_waveform(period: &SignalTrace, lead_in: f64, n_periods: usize, t_start: f64) -> SignalTrace {
    let n = period.len();
    let pre = ((lead_in / period.dt).round() as usize).min(n);
    let mut samples = Vec::with_capacity(pre + n * n_periods);
    samples.extend_from_slice(&period.samples[n - pre..]);
    for _ in 0..n_periods {
        samples.extend_from_slice(&period.samples);
    }
    SignalTrace::new(samples, period.dt, t_start)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_six_has_63_bits() {
        let p = generate_prbs(6, &default_polynomial(6).unwrap()).unwrap();
        assert_eq!(p.len(), 63);
    }

    #[test]
    fn order_two_is_balanced() {
        let p = generate_prbs(2, "x^2+x+1").unwrap();
        assert_eq!(p.len(), 3);
        let s: i32 = p.bits.iter().map(|&b| i32::from(b)).sum();
        assert_eq!(s.abs(), 1);
    }

    #[test]
    fn order_four_autocorrelation_is_two_valued() {
        let p = generate_prbs(4, "x^4+x^3+1").unwrap();
        // brute force over all lags
        for lag in 0..15 {
            let mut acc = 0i32;
            for k in 0..15 {
                acc += i32::from(p.bits[k]) * i32::from(p.bits[(k + lag) % 15]);
            }
            let expect = if lag == 0 { 15 } else { -1 };
            assert_eq!(acc, expect, "lag {lag}");
        }
    }

    #[test]
    fn every_shipped_polynomial_is_primitive() {
        for order in 2..=16 {
            let ids = builtin_polynomials(order);
            assert!(!ids.is_empty(), "order {order}");
            for id in ids {
                let p = generate_prbs(order, &id).unwrap();
                assert_eq!(p.len(), (1 << order) - 1);
            }
        }
    }

    #[test]
    fn unknown_and_non_primitive_polynomials_are_rejected() {
        assert!(matches!(
            generate_prbs(6, "x^5+x+1"),
            Err(Error::UnknownPolynomial { .. })
        ));
        assert!(matches!(
            generate_prbs(6, "banana"),
            Err(Error::UnknownPolynomial { .. })
        ));
        // x^4 + x^2 + 1 = (x^2 + x + 1)^2 is not primitive
        assert!(matches!(
            generate_prbs(4, "x^4+x^2+1"),
            Err(Error::NonPrimitivePolynomial { .. })
        ));
        assert!(matches!(generate_prbs(1, "x+1"), Err(Error::OrderOutOfRange(1))));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_prbs(10, "x^10+x^7+1").unwrap();
        let b = generate_prbs(10, "x^10+x^7+1").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_i_periods() {
        let periods: Vec<f64> = [40e-6, 48e-6, 56e-6]
            .iter()
            .map(|&t0| ProbingConfig::new(12, t0, 600.0, 1e-6).unwrap().period())
            .collect();
        assert!((periods[0] - 0.1638).abs() < 1e-12);
        assert!((periods[1] - 0.19656).abs() < 1e-12);
        assert!((periods[2] - 0.22932).abs() < 1e-12);
    }

    #[test]
    fn prbpt_takes_only_plus_minus_a() {
        let cfg = ProbingConfig::new(6, 4e-6, 600.0, 1e-6).unwrap();
        let prbs = generate_prbs(6, &default_polynomial(6).unwrap()).unwrap();
        let p = build_prbpt(&prbs, &cfg).unwrap();
        assert_eq!(p.len(), cfg.period_samples());
        assert!(p.samples.iter().all(|&v| v == 600.0 || v == -600.0));
    }

    #[test]
    fn prbpt_holds_each_bit() {
        let cfg = ProbingConfig::new(2, 2e-6, 1.0, 1e-6).unwrap();
        let prbs = generate_prbs(2, "x^2+x+1").unwrap();
        let p = build_prbpt(&prbs, &cfg).unwrap();
        assert_eq!(p.len(), 6);
        for k in 0..3 {
            assert_eq!(p.samples[2 * k], f64::from(prbs.bits[k]));
            assert_eq!(p.samples[2 * k + 1], f64::from(prbs.bits[k]));
        }
    }

    #[test]
    fn reference_amplitude_for_table_i() {
        let cfg = ProbingConfig::new(12, 40e-6, 600.0, 4e-6).unwrap();
        assert!((cfg.reference_amplitude() - 1.0 / (600.0 * 0.1638)).abs() < 1e-15);
        assert!((cfg.reference_amplitude() - 1.0175e-2).abs() < 1e-6);
        let prbs = generate_prbs(12, &default_polynomial(12).unwrap()).unwrap();
        let p = build_prbpt(&prbs, &cfg).unwrap();
        let s = build_reference(&prbs, &cfg).unwrap();
        assert!(p.samples.iter().zip(&s.samples).all(|(a, b)| a.signum() == b.signum()));
    }

    #[test]
    fn misconfigured_inputs_fail() {
        assert!(ProbingConfig::new(12, 48e-6, 600.0, 5e-6).is_err());
        assert!(ProbingConfig::new(12, 40e-6, -1.0, 1e-6).is_err());
        let cfg = ProbingConfig::new(6, 4e-6, 1.0, 1e-6).unwrap();
        let prbs = generate_prbs(5, &default_polynomial(5).unwrap()).unwrap();
        assert!(matches!(build_prbpt(&prbs, &cfg), Err(Error::OrderMismatch { .. })));
    }

    #[test]
    fn injection_has_cyclic_prefix() {
        let period = SignalTrace::new((0..10).map(f64::from).collect(), 1.0, 0.0);
        let inj = injection_waveform(&period, 3.0, 2, 5.0);
        assert_eq!(inj.len(), 23);
        assert_eq!(&inj.samples[..4], &[7.0, 8.0, 9.0, 0.0]);
        assert_eq!(inj.t_start, 5.0);
    }
}
