//! Eigensystem Realization Algorithm: Hankel assembly, SVD truncation and discrete-time
//! state-space realization of a SISO Markov-parameter sequence.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::MarkovSequence;

/// Default relative singular-value threshold for order selection.
pub const DEFAULT_TOL: f64 = 1e-3;

/// Shifted Hankel pair built from `h[1..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    pub h0: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// `H0[i][j] = h[i+j+1]`, `H1[i][j] = h[i+j+2]`, with `r = c = floor((M-1)/2)`.
pub fn build_hankel(h: &MarkovSequence) -> Result<HankelPair> {
    let m = h.len();
    if m < 4 {
        return Err(Error::TooFewMarkovParameters { needed: 4, got: m });
    }
    let r = (m - 1) / 2;
    let v = &h.values;
    Ok(HankelPair {
        h0: DMatrix::from_fn(r, r, |i, j| v[i + j + 1]),
        h1: DMatrix::from_fn(r, r, |i, j| v[i + j + 2]),
        rows: r,
        cols: r,
    })
}

/// Discrete-time SISO realization `x[k+1] = A x[k] + B u[k]`, `y[k] = C x[k] + D u[k]`
/// with sample spacing `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceRealization {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub delta: f64,
}

impl StateSpaceRealization {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Pure feedthrough.
    pub fn static_gain(d: f64, delta: f64) -> Self {
        Self {
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            c: DVector::zeros(0),
            d,
            delta,
        }
    }

    /// `D, CB, CAB, CA^2B, ...` (`count` terms).
    pub fn markov_parameters(&self, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d);
        let mut x = self.b.clone();
        for _ in 1..count {
            out.push(self.c.dot(&x));
            x = &self.a * x;
        }
        out
    }

    pub fn spectral_radius(&self) -> f64 {
        if self.order() == 0 {
            return 0.0;
        }
        self.a.complex_eigenvalues().iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI / self.delta
    }

    /// `P(e^{j w delta}) = C (zI - A)^{-1} B + D` for each `w` in rad/s.
    pub fn freq_response(&self, omegas: &[f64]) -> Result<Vec<Complex64>> {
        let nyq = self.nyquist();
        if let Some(&w) = omegas.iter().find(|&&w| !(0.0..=nyq * (1.0 + 1e-12)).contains(&w)) {
            return Err(Error::BeyondNyquist { omega: w, nyquist: nyq });
        }
        let n = self.order();
        if n == 0 {
            return Ok(vec![Complex64::new(self.d, 0.0); omegas.len()]);
        }
        // reduce to upper Hessenberg once; each frequency is then an O(n^2) solve
        let hess = self.a.clone().hessenberg();
        let (q, h) = hess.unpack();
        let qb = q.transpose() * &self.b;
        let qc = q.transpose() * &self.c;
        let mut work = vec![Complex64::new(0.0, 0.0); n * n];
        let mut rhs = vec![Complex64::new(0.0, 0.0); n];
        omegas
            .iter()
            .map(|&w| {
                let z = Complex64::from_polar(1.0, w * self.delta);
                let x = solve_shifted_hessenberg(&h, z, &qb, &mut work, &mut rhs)
                    .ok_or(Error::SingularResolvent { omega: w })?;
                let y: Complex64 = x.iter().zip(qc.iter()).map(|(xi, ci)| xi * ci).sum();
                Ok(y + self.d)
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&RealizationFile::from(self))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: RealizationFile = serde_json::from_str(&text)?;
        file.try_into()
    }
}

/// Solves `(zI - H) x = b` for upper-Hessenberg `H` with adjacent-row partial pivoting.
fn solve_shifted_hessenberg<'a>(
    h: &DMatrix<f64>,
    z: Complex64,
    b: &DVector<f64>,
    work: &mut [Complex64],
    rhs: &'a mut [Complex64],
) -> Option<&'a [Complex64]> {
    let n = h.nrows();
    let at = |i: usize, j: usize| i * n + j;
    for i in 0..n {
        for j in 0..n {
            let v = if j + 1 >= i { -h[(i, j)] } else { 0.0 };
            work[at(i, j)] = Complex64::new(v, 0.0);
        }
        work[at(i, i)] += z;
        rhs[i] = Complex64::new(b[i], 0.0);
    }
    for k in 0..n.saturating_sub(1) {
        if work[at(k + 1, k)].norm_sqr() > work[at(k, k)].norm_sqr() {
            for j in k..n {
                work.swap(at(k, j), at(k + 1, j));
            }
            rhs.swap(k, k + 1);
        }
        let piv = work[at(k, k)];
        if piv.norm_sqr() == 0.0 {
            continue;
        }
        let l = work[at(k + 1, k)] / piv;
        if l.norm_sqr() != 0.0 {
            for j in k..n {
                let v = work[at(k, j)];
                work[at(k + 1, j)] -= l * v;
            }
            let r = rhs[k];
            rhs[k + 1] -= l * r;
        }
    }
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in i + 1..n {
            acc -= work[at(i, j)] * rhs[j];
        }
        let piv = work[at(i, i)];
        if piv.norm() <= f64::EPSILON * 1e-3 {
            return None;
        }
        rhs[i] = acc / piv;
    }
    if rhs.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return None;
    }
    Some(rhs)
}

/// SVD of a symmetric matrix from its eigendecomposition: `H = Q L Q^T` gives
/// `U = Q`, `S = |L|`, `V = Q sign(L)`.
fn symmetric_svd(h: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let eig = h.clone().symmetric_eigen();
    let q = eig.eigenvectors;
    let s = eig.eigenvalues.map(f64::abs);
    let v_t = DMatrix::from_fn(q.ncols(), q.nrows(), |k, c| eig.eigenvalues[k].signum() * q[(c, k)]);
    (q, s, v_t)
}

/// ERA: SVD of `H0`, truncation at relative singular value `tol`, balanced factors.
pub fn era(hankels: &HankelPair, h0: f64, delta: f64, tol: f64) -> Result<StateSpaceRealization> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidTolerance(tol));
    }
    let (u, singular_values, v_t) = symmetric_svd(&hankels.h0);
    let mut idx: Vec<usize> = (0..singular_values.len()).collect();
    idx.sort_by(|&i, &j| singular_values[j].total_cmp(&singular_values[i]));
    let sigma1 = idx.first().map_or(0.0, |&i| singular_values[i]);
    if !(sigma1.is_finite() && sigma1 > 0.0) {
        return Ok(StateSpaceRealization::static_gain(h0, delta));
    }
    let kept: Vec<usize> = idx
        .into_iter()
        .take_while(|&i| singular_values[i] / sigma1 > tol)
        .collect();
    let n = kept.len();
    let un = DMatrix::from_fn(u.nrows(), n, |r, k| u[(r, kept[k])]);
    let vn_t = DMatrix::from_fn(n, v_t.ncols(), |k, c| v_t[(kept[k], c)]);
    let s_sqrt = DVector::from_fn(n, |k, _| singular_values[kept[k]].sqrt());
    let s_isqrt = s_sqrt.map(|v| 1.0 / v);

    let core = un.transpose() * &hankels.h1 * vn_t.transpose();
    let a = DMatrix::from_fn(n, n, |i, j| s_isqrt[i] * core[(i, j)] * s_isqrt[j]);
    let b = DVector::from_fn(n, |k, _| s_sqrt[k] * vn_t[(k, 0)]);
    let c = DVector::from_fn(n, |k, _| un[(0, k)] * s_sqrt[k]);
    Ok(StateSpaceRealization { a, b, c, d: h0, delta })
}

/// Hankel assembly plus ERA, with `D = h[0]`.
pub fn realize(h: &MarkovSequence, tol: f64) -> Result<StateSpaceRealization> {
    let pair = build_hankel(h)?;
    era(&pair, h.values[0], h.spacing, tol)
}

/// Largest pole modulus a record of `markov_len` lags can support: a resonance no
/// narrower than the record's frequency resolution.
pub fn record_radius(markov_len: usize) -> f64 {
    1.0 - std::f64::consts::PI / markov_len as f64
}

/// Radial pole projection: every real-Schur diagonal block whose pole modulus exceeds
/// `max_radius` is scaled onto that circle, leaving the other poles and the couplings unchanged.
pub fn project_poles(r: &StateSpaceRealization, max_radius: f64) -> StateSpaceRealization {
    let n = r.order();
    if n == 0 {
        return r.clone();
    }
    let (q, mut t) = r.a.clone().schur().unpack();
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let mut i = 0;
    let mut changed = false;
    while i < n {
        let size = if i + 1 < n && t[(i + 1, i)].abs() > f64::EPSILON * scale {
            2
        } else {
            1
        };
        let modulus = if size == 1 {
            t[(i, i)].abs()
        } else {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let half = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc < 0.0 {
                (a * d - b * c).abs().sqrt()
            } else {
                half.abs() + disc.sqrt()
            }
        };
        if modulus > max_radius {
            let beta = max_radius / modulus;
            for r in i..i + size {
                for c in i..i + size {
                    t[(r, c)] *= beta;
                }
            }
            changed = true;
        }
        i += size;
    }
    if !changed {
        return r.clone();
    }
    StateSpaceRealization {
        a: &q * t * q.transpose(),
        ..r.clone()
    }
}

/// On-disk realization format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizationFile {
    pub order: usize,
    pub delta_seconds: f64,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "D")]
    pub d: f64,
}

impl From<&StateSpaceRealization> for RealizationFile {
    fn from(r: &StateSpaceRealization) -> Self {
        let n = r.order();
        Self {
            order: n,
            delta_seconds: r.delta,
            a: (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| r.a[(i, j)])
                .collect(),
            b: r.b.iter().copied().collect(),
            c: r.c.iter().copied().collect(),
            d: r.d,
        }
    }
}

impl TryFrom<RealizationFile> for StateSpaceRealization {
    type Error = Error;

    fn try_from(f: RealizationFile) -> Result<Self> {
        let n = f.order;
        if f.a.len() != n * n
            || f.b.len() != n
            || f.c.len() != n
            || !(f.delta_seconds.is_finite() && f.delta_seconds > 0.0)
        {
            return Err(Error::LibraryMismatch(format!(
                "realization file dimensions inconsistent with order {n}"
            )));
        }
        Ok(Self {
            a: DMatrix::from_row_slice(n, n, &f.a),
            b: DVector::from_vec(f.b),
            c: DVector::from_vec(f.c),
            d: f.d,
            delta: f.delta_seconds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: Vec<f64>) -> MarkovSequence {
        MarkovSequence { values, spacing: 1e-3 }
    }

    #[test]
    fn hankel_definition() {
        let p = build_hankel(&seq(vec![9.0, 1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!((p.rows, p.cols), (2, 2));
        assert_eq!(p.h0, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
        assert_eq!(p.h1, DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 3.0, 4.0]));
        assert!(build_hankel(&seq(vec![1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn zero_sequence_gives_static_gain() {
        let h = seq(vec![0.0; 20]);
        let p = build_hankel(&h).unwrap();
        assert!(p.h0.iter().all(|&v| v == 0.0));
        let r = realize(&h, DEFAULT_TOL).unwrap();
        assert_eq!(r.order(), 0);
        assert_eq!(r.d, 0.0);
    }

    #[test]
    fn geometric_sequence_is_first_order() {
        let mut v = vec![0.0];
        v.extend((1..40).map(|k| 0.5f64.powi(k - 1)));
        let h = seq(v);
        let pair = build_hankel(&h).unwrap();
        let rank = pair.h0.clone().svd(false, false).rank(1e-9);
        assert_eq!(rank, 1);
        let r = realize(&h, DEFAULT_TOL).unwrap();
        assert_eq!(r.order(), 1);
        assert!((r.a[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((r.c.dot(&r.b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn static_and_first_order_responses() {
        let r = StateSpaceRealization::static_gain(5.0, 1e-3);
        assert!(r
            .freq_response(&[0.0, 100.0])
            .unwrap()
            .iter()
            .all(|p| *p == Complex64::new(5.0, 0.0)));
        let r = StateSpaceRealization {
            a: DMatrix::from_element(1, 1, 0.5),
            b: DVector::from_element(1, 1.0),
            c: DVector::from_element(1, 1.0),
            d: 0.0,
            delta: 1e-3,
        };
        let p = r.freq_response(&[0.0]).unwrap()[0];
        assert!((p - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert!(matches!(r.freq_response(&[4000.0]), Err(Error::BeyondNyquist { .. })));
    }

    #[test]
    fn hessenberg_solve_matches_dense_solve() {
        let a = DMatrix::from_row_slice(3, 3, &[0.2, 0.1, -0.3, 0.5, -0.1, 0.2, 0.0, 0.4, 0.3]);
        let r = StateSpaceRealization {
            a: a.clone(),
            b: DVector::from_vec(vec![1.0, -0.5, 0.25]),
            c: DVector::from_vec(vec![0.3, 0.7, -1.1]),
            d: 0.1,
            delta: 1.0,
        };
        for w in [0.0, 0.3, 1.7, 3.1] {
            let z = Complex64::from_polar(1.0, w);
            let m = DMatrix::from_fn(3, 3, |i, j| {
                let v = Complex64::new(-a[(i, j)], 0.0);
                if i == j {
                    v + z
                } else {
                    v
                }
            });
            let b = r.b.map(|v| Complex64::new(v, 0.0));
            let x = m.lu().solve(&b).unwrap();
            let dense: Complex64 = x.iter().zip(r.c.iter()).map(|(x, c)| x * c).sum::<Complex64>() + r.d;
            let fast = r.freq_response(&[w]).unwrap()[0];
            assert!((dense - fast).norm() < 1e-12);
        }
    }

    #[test]
    fn persistence_round_trip() {
        let r = StateSpaceRealization {
            a: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]),
            b: DVector::from_vec(vec![1.0, 2.0]),
            c: DVector::from_vec(vec![0.5, -1.0]),
            d: 0.25,
            delta: 40e-6,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        r.save(&path).unwrap();
        let back = StateSpaceRealization::load(&path).unwrap();
        assert_eq!(r, back);
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["\"order\"", "\"delta_seconds\"", "\"A\"", "\"B\"", "\"C\"", "\"D\""] {
            assert!(text.contains(key));
        }
    }
}
