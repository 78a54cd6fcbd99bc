#![allow(dead_code)]

use std::path::PathBuf;

use islandprobe::NetworkModel;
use num_complex::Complex64;

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/feeder34_reduced.json")
}

pub fn fixture() -> NetworkModel {
    NetworkModel::load(fixture_path()).expect("shipped fixture loads")
}

/// Continuous-time LTI system in modal form: `Y(s) = d + sum r_i / (s - p_i)`.
/// Complex modes must appear together with their conjugates.
#[derive(Debug, Clone)]
pub struct ModalSystem {
    pub poles: Vec<Complex64>,
    pub residues: Vec<Complex64>,
    pub d: f64,
}

impl ModalSystem {
    /// `g / (1 + s tau)`.
    pub fn first_order(gain: f64, tau: f64) -> Self {
        Self {
            poles: vec![Complex64::new(-1.0 / tau, 0.0)],
            residues: vec![Complex64::new(gain / tau, 0.0)],
            d: 0.0,
        }
    }

    /// `g wn^2 / (s^2 + 2 zeta wn s + wn^2)` with `zeta < 1`.
    pub fn second_order(gain: f64, wn: f64, zeta: f64) -> Self {
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let p = Complex64::new(-zeta * wn, wd);
        let r = Complex64::new(0.0, -gain * wn * wn / (2.0 * wd));
        Self {
            poles: vec![p, p.conj()],
            residues: vec![r, r.conj()],
            d: 0.0,
        }
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        self.poles
            .iter()
            .zip(&self.residues)
            .map(|(p, r)| r / (s - p))
            .sum::<Complex64>()
            + self.d
    }

    pub fn impulse(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.poles
            .iter()
            .zip(&self.residues)
            .map(|(p, r)| r * (p * t).exp())
            .sum::<Complex64>()
            .re
    }

    /// Slowest time constant.
    pub fn time_constant(&self) -> f64 {
        self.poles.iter().map(|p| -1.0 / p.re).fold(0.0, f64::max)
    }

    /// Exact response to a zero-order-hold input sampled at `dt`.
    pub fn simulate(&self, u: &[f64], dt: f64) -> Vec<f64> {
        let phi: Vec<Complex64> = self.poles.iter().map(|p| (p * dt).exp()).collect();
        let gam: Vec<Complex64> = self.poles.iter().zip(&phi).map(|(p, f)| (f - 1.0) / p).collect();
        let mut x = vec![Complex64::new(0.0, 0.0); self.poles.len()];
        u.iter()
            .map(|&uk| {
                let y: f64 = x.iter().zip(&self.residues).map(|(xi, r)| (r * xi).re).sum::<f64>() + self.d * uk;
                for i in 0..x.len() {
                    x[i] = phi[i] * x[i] + gam[i] * uk;
                }
                y
            })
            .collect()
    }

    /// Value of `(h * tri)(lag)` where `tri` is the unit-peak triangle of half-width `t0`,
    /// by composite Simpson integration.
    pub fn triangle_smoothed(&self, lag: f64, t0: f64) -> f64 {
        let lo = (lag - t0).max(0.0);
        let hi = lag + t0;
        if hi <= lo {
            return 0.0;
        }
        let n = 4000;
        let step = (hi - lo) / n as f64;
        let f = |tau: f64| self.impulse(tau) * (1.0 - (lag - tau).abs() / t0).max(0.0);
        let mut acc = f(lo) + f(hi);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + k as f64 * step);
        }
        acc * step / 3.0 + if lag == 0.0 { self.d } else { 0.0 }
    }
}

pub fn nrmse(est: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

pub struct SyntheticProbe {
    pub markov: islandprobe::MarkovSequence,
    pub realization: islandprobe::StateSpaceRealization,
    /// Expected bit-lag correlator output.
    pub oracle: Vec<f64>,
    /// `t0 * h(k t0)`.
    pub sampled_impulse: Vec<f64>,
}

/// Injects a cyclic-prefixed pulse train into `sys`, correlates one period of the response
/// and realizes the recovered Markov parameters.
pub fn probe_synthetic(sys: &ModalSystem, order: u32, t0: f64, dt: f64, lags: usize) -> SyntheticProbe {
    use islandprobe::probe::{extract_markov, Correlator};
    use islandprobe::signal::{build_prbpt, build_reference, default_polynomial, generate_prbs, injection_waveform};
    use islandprobe::sysid::{project_poles, realize, record_radius, DEFAULT_TOL};

    let cfg = islandprobe::ProbingConfig::new(order, t0, 600.0, dt).unwrap();
    let prbs = generate_prbs(order, &default_polynomial(order).unwrap()).unwrap();
    let p = build_prbpt(&prbs, &cfg).unwrap();
    let s = build_reference(&prbs, &cfg).unwrap();
    let lead_bits = ((10.0 * sys.time_constant()) / t0).ceil();
    let lead = lead_bits * t0;
    let u = injection_waveform(&p, lead, 1, 0.0);
    let y = sys.simulate(&u.samples, dt);
    let from = (lead / dt).round() as usize;
    let n = cfg.period_samples();
    let window = islandprobe::SignalTrace::new(y[from..from + n].to_vec(), dt, lead);
    let z = Correlator::new(&s).correlate(&window).unwrap();
    let markov = extract_markov(&z, t0, lags).unwrap();
    let realization = project_poles(&realize(&markov, DEFAULT_TOL).unwrap(), record_radius(lags));
    // pulse compression gives (N+1)/N times the triangle-smoothed response minus Y(0)/N
    let big_n = prbs.len() as f64;
    let dc = sys.response(0.0).re;
    let oracle = (0..lags)
        .map(|k| (big_n + 1.0) / big_n * sys.triangle_smoothed(k as f64 * t0, t0) - dc / big_n)
        .collect();
    let sampled_impulse = (0..lags).map(|k| t0 * sys.impulse(k as f64 * t0)).collect();
    SyntheticProbe {
        markov,
        realization,
        oracle,
        sampled_impulse,
    }
}
