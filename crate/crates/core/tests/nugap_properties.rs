use islandprobe::nugap::{gap_from_responses, nu_gap, pointwise_psi};
use islandprobe::{FrequencyGrid, StateSpaceRealization};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

const DELTA: f64 = 48e-6;

fn complex() -> impl Strategy<Value = Complex64> {
    (-1e3f64..1e3, -1e3f64..1e3, -3.0f64..3.0).prop_map(|(re, im, e)| Complex64::new(re, im) * 10f64.powf(e) / 1e3)
}

/// Random stable realization: a 2x2 rotation-scaling block plus one real mode.
fn realization() -> impl Strategy<Value = StateSpaceRealization> {
    (
        0.1f64..0.9,
        0.0f64..3.0,
        -0.9f64..0.9,
        prop::array::uniform3(-2.0f64..2.0),
        prop::array::uniform3(-2.0f64..2.0),
        -2.0f64..2.0,
    )
        .prop_map(|(m, th, q, b, c, d)| {
            let (s, co) = th.sin_cos();
            StateSpaceRealization {
                a: DMatrix::from_row_slice(3, 3, &[m * co, -m * s, 0.0, m * s, m * co, 0.0, 0.0, 0.0, q]),
                b: DVector::from_row_slice(&b),
                c: DVector::from_row_slice(&c),
                d,
                delta: DELTA,
            }
        })
}

fn grid(points: usize) -> FrequencyGrid {
    FrequencyGrid::for_spacing(DELTA, points).unwrap()
}

/// Chordal distance through the stereographic embedding of the Riemann sphere.
fn chordal_oracle(a: Complex64, b: Complex64) -> f64 {
    let embed = |z: Complex64| {
        let n = 1.0 + z.norm_sqr();
        [2.0 * z.re / n, 2.0 * z.im / n, (z.norm_sqr() - 1.0) / n]
    };
    let (x, y) = (embed(a), embed(b));
    0.5 * ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn psi_equals_sphere_chord(a in complex(), b in complex()) {
        let psi = pointwise_psi(a, b).unwrap();
        prop_assert!((psi - chordal_oracle(a, b)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&psi));
        prop_assert_eq!(psi, pointwise_psi(b, a).unwrap());
        prop_assert_eq!(pointwise_psi(a, a).unwrap(), 0.0);
    }

    #[test]
    fn psi_triangle(a in complex(), b in complex(), c in complex()) {
        let ab = pointwise_psi(a, b).unwrap();
        let bc = pointwise_psi(b, c).unwrap();
        let ac = pointwise_psi(a, c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn gap_is_a_metric(r1 in realization(), r2 in realization(), r3 in realization()) {
        let g = grid(128);
        let d12 = nu_gap(&r1, &r2, &g).unwrap().value;
        let d21 = nu_gap(&r2, &r1, &g).unwrap().value;
        let d23 = nu_gap(&r2, &r3, &g).unwrap().value;
        let d13 = nu_gap(&r1, &r3, &g).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&d12));
        prop_assert_eq!(d12, d21);
        prop_assert_eq!(nu_gap(&r1, &r1, &g).unwrap().value, 0.0);
        prop_assert!(d13 <= d12 + d23 + 1e-12);
    }

    #[test]
    fn refined_grid_never_lowers_gap(r1 in realization(), r2 in realization(), k in 8usize..64) {
        // 2k-1 log points contain the k-point grid
        let coarse = nu_gap(&r1, &r2, &grid(k)).unwrap();
        let fine = nu_gap(&r1, &r2, &grid(2 * k - 1)).unwrap();
        prop_assert!(fine.value >= coarse.value - 1e-12);
    }

    #[test]
    fn gap_attained_at_reported_frequency(r1 in realization(), r2 in realization()) {
        let g = grid(64);
        let gap = nu_gap(&r1, &r2, &g).unwrap();
        let p1 = r1.freq_response(&[gap.argmax_omega]).unwrap()[0];
        let p2 = r2.freq_response(&[gap.argmax_omega]).unwrap()[0];
        prop_assert!((pointwise_psi(p1, p2).unwrap() - gap.value).abs() < 1e-12);
    }
}

#[test]
fn grid_bounds() {
    let g = grid(512);
    assert_eq!(g.len(), 512);
    assert!((g.omegas[0] - 2.0 * std::f64::consts::PI * 10.0).abs() < 1e-9);
    assert!((g.omegas[511] - 0.95 * std::f64::consts::PI / DELTA).abs() < 1e-6);
    let ratios: Vec<f64> = g.omegas.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-9));
}

#[test]
fn known_values() {
    let g = FrequencyGrid::new(vec![1.0]).unwrap();
    let z = [Complex64::new(0.0, 0.0)];
    let big = [Complex64::new(1e12, 0.0)];
    let one = [Complex64::new(1.0, 0.0)];
    let minus = [Complex64::new(-1.0, 0.0)];
    assert!((gap_from_responses(&z, &big, &g).unwrap().value - 1.0).abs() < 1e-9);
    assert!((gap_from_responses(&one, &minus, &g).unwrap().value - 1.0).abs() < 1e-15);
    assert!((gap_from_responses(&z, &one, &g).unwrap().value - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn mismatched_spacing_rejected() {
    let r1 = StateSpaceRealization::static_gain(1.0, DELTA);
    let r2 = StateSpaceRealization::static_gain(1.0, 40e-6);
    assert!(nu_gap(&r1, &r2, &grid(16)).is_err());
}

#[test]
fn non_finite_rejected() {
    assert!(pointwise_psi(Complex64::new(f64::NAN, 0.0), Complex64::new(0.0, 0.0)).is_err());
}
