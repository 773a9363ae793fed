use std::f64::consts::LN_2;

use approx::assert_abs_diff_eq;
use nlgqkd::entropy::{
    affine_moe_bound, binary_entropy, build_tripartite_upper_curve, build_vn_lower_curve, constrained_affine_bound,
    guessing_entropy, min_tradeoff_from_g, tangent_of_curve, AffineBound, BoundCurve, BoundKind, EntropyError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W3: f64 = 8.00077 / 9.0;
const UPPER_EXAMPLE: &str = include_str!("../data/msg_tripartite_upper_example.csv");
const VN_EXAMPLE: &str = include_str!("../data/msg_vn_lower_example.csv");

fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| k as f64 / (n - 1) as f64)
}

#[test]
fn binary_entropy_values() {
    assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
    assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
    let p: f64 = 0.11;
    let oracle = -p * p.ln() / LN_2 - (1.0 - p) * (1.0 - p).ln() / LN_2;
    assert_abs_diff_eq!(binary_entropy(p).unwrap(), oracle, epsilon = 1e-15);
    assert_abs_diff_eq!(binary_entropy(p).unwrap(), 0.499_915_958_164_528, epsilon = 1e-12);
    assert!(matches!(binary_entropy(-0.1), Err(EntropyError::OutOfRange(_))));
}

#[test]
fn affine_bound_values() {
    let g = affine_moe_bound(W3, W3).unwrap();
    assert_abs_diff_eq!(g.eval(W3), 0.0, epsilon = 1e-15);
    let g = affine_moe_bound(1.0, W3).unwrap();
    assert_abs_diff_eq!(g.eval(1.0), 0.169_786_148_726_806_6, epsilon = 1e-12);
    assert_abs_diff_eq!(g.eval(0.0), -1.453_089_570_485_303_3, epsilon = 1e-12);
    assert!(affine_moe_bound(0.5, W3).is_err());
}

#[test]
fn affine_bound_is_a_tangent_below_the_convex_bound() {
    for beta in [W3, 0.93, 0.97, 1.0] {
        let g = affine_moe_bound(beta, W3).unwrap();
        for p in grid(1000) {
            assert!(g.eval(p) <= guessing_entropy(p, W3) + 1e-12, "beta={beta} p={p}");
        }
        assert_abs_diff_eq!(g.eval(beta), guessing_entropy(beta, W3), epsilon = 1e-12);
    }
}

#[test]
fn constrained_bound_on_flat_curve_is_the_plain_bound() {
    let flat = build_tripartite_upper_curve(vec![(8.0 / 9.0, W3), (0.95, W3), (1.0, W3)]).unwrap();
    for beta in [W3, 0.92, 0.97, 1.0] {
        assert_eq!(constrained_affine_bound(beta, &flat).unwrap(), affine_moe_bound(beta, W3).unwrap());
    }
}

#[test]
fn constrained_bound_two_point_formula() {
    // Chord of {(8/9, 8/9), (1, 1/2)} evaluated at 0.95, done by hand.
    let hp = (0.5 - 8.0 / 9.0) / (1.0 - 8.0 / 9.0);
    let hv = 8.0 / 9.0 + hp * (0.95 - 8.0 / 9.0);
    let g = AffineBound::constrained(0.95, hv, hp).unwrap();
    assert_abs_diff_eq!(hv, 0.675, epsilon = 1e-12);
    assert_abs_diff_eq!(g.slope, 8.954_658_874_483_217, epsilon = 1e-9);
    assert_abs_diff_eq!(g.intercept, -8.042_978_830_999_266, epsilon = 1e-9);

    // The built two-point curve is flat at its base value, so h' = 0 there.
    let c = build_tripartite_upper_curve(vec![(8.0 / 9.0, 8.0 / 9.0), (1.0, 0.5)]).unwrap();
    assert_eq!(c.slope_at(0.95).unwrap(), 0.0);
    assert_eq!(constrained_affine_bound(0.95, &c).unwrap(), AffineBound::constrained(0.95, 8.0 / 9.0, 0.0).unwrap());
}

#[test]
fn constrained_bound_is_below_composite() {
    let c = BoundCurve::from_csv_str(UPPER_EXAMPLE).unwrap();
    let (lo, hi) = c.domain();
    for beta in [lo, 0.91, 0.95, 0.98, 0.995, hi] {
        let g = constrained_affine_bound(beta, &c).unwrap();
        for k in 0..=400 {
            let p = lo + (hi - lo) * k as f64 / 400.0;
            let composite = guessing_entropy(p, c.eval(p).unwrap());
            assert!(g.eval(p) <= composite + 1e-10, "beta={beta} p={p}");
        }
        assert_abs_diff_eq!(g.eval(beta), guessing_entropy(beta, c.eval(beta).unwrap()), epsilon = 1e-10);
    }
    let vn = BoundCurve::from_csv_str(VN_EXAMPLE).unwrap();
    assert!(matches!(constrained_affine_bound(0.95, &vn), Err(EntropyError::WrongKind(_))));
    assert!(matches!(constrained_affine_bound(0.5, &c), Err(EntropyError::OutsideDomain { .. })));
}

#[test]
fn upper_curve_three_point_example() {
    let c = build_tripartite_upper_curve(vec![(8.0 / 9.0, 8.0 / 9.0), (0.95, 0.8), (1.0, 0.5)]).unwrap();
    for p in [8.0 / 9.0, 0.9, 0.93, 0.95] {
        assert_abs_diff_eq!(c.eval(p).unwrap(), 8.0 / 9.0, epsilon = 1e-15);
    }
    let s0 = (0.8 - 8.0 / 9.0) / (0.95 - 8.0 / 9.0);
    assert_abs_diff_eq!(c.eval(0.97).unwrap(), 8.0 / 9.0 + s0 * 0.02, epsilon = 1e-12);
    assert_abs_diff_eq!(c.eval(0.97).unwrap(), 0.859_797_979_797_979_8, epsilon = 1e-12);
    for &(x, y) in c.points() {
        assert!(c.eval(x).unwrap() >= y - 1e-12);
    }
}

fn assert_continuous(c: &BoundCurve) {
    for &(x, _) in &c.points()[1..c.points().len() - 1] {
        let eps = 1e-13;
        let left = c.eval(x - eps).unwrap();
        let right = c.eval(x).unwrap();
        let slope = c.slope_at(x - eps).unwrap();
        // Remove the linear drift across the tiny step before comparing.
        assert!((left + slope * eps - right).abs() <= 1e-12, "jump at {x}");
    }
}

#[test]
fn shipped_tables_bound_their_points() {
    let up = BoundCurve::from_csv_str(UPPER_EXAMPLE).unwrap();
    assert_eq!(up.kind(), BoundKind::TripartiteWinUpper);
    assert_eq!(up.digest().len(), 64);
    for &(x, y) in up.points() {
        assert!(up.eval(x).unwrap() >= y - 1e-12);
    }
    assert_continuous(&up);

    let vn = BoundCurve::from_csv_str(VN_EXAMPLE).unwrap();
    assert_eq!(vn.kind(), BoundKind::VnLower);
    for &(x, y) in vn.points() {
        assert!(vn.eval(x).unwrap() <= y + 1e-12);
    }
    assert_continuous(&vn);
}

#[test]
fn vn_curve_examples() {
    let vn = build_vn_lower_curve(vec![(8.0 / 9.0, 0.0), (0.92, 0.05), (0.96, 0.3), (1.0, 0.9)]).unwrap();
    for p in [8.0 / 9.0, 0.9, 0.92] {
        assert_eq!(vn.eval(p).unwrap(), 0.0);
    }
    let flat = build_vn_lower_curve(vec![(0.9, 0.3), (0.95, 0.3), (1.0, 0.3)]).unwrap();
    for k in 0..=20 {
        assert_eq!(flat.eval(0.9 + 0.1 * k as f64 / 20.0).unwrap(), 0.3);
    }
}

#[test]
fn malformed_tables_report_rows() {
    let err = build_tripartite_upper_curve(vec![(0.9, 0.8), (0.95, 0.85), (1.0, 0.5)]).unwrap_err();
    assert!(matches!(err, EntropyError::Table { row: 1, .. }), "{err}");
    // Convex (not concave) but decreasing.
    let err = build_tripartite_upper_curve(vec![(0.9, 0.9), (0.95, 0.6), (1.0, 0.5)]).unwrap_err();
    assert!(matches!(err, EntropyError::Table { row: 2, .. }), "{err}");
    let err = build_vn_lower_curve(vec![(0.9, 0.0), (0.95, 0.5), (1.0, 0.6)]).unwrap_err();
    assert!(matches!(err, EntropyError::Table { row: 2, .. }), "{err}");
    let err = build_vn_lower_curve(vec![(0.9, 0.0), (0.9, 0.5)]).unwrap_err();
    assert!(matches!(err, EntropyError::Table { row: 1, .. }), "{err}");
    assert!(build_vn_lower_curve(vec![(0.9, 0.0)]).is_err());

    let csv = "# kind=vn_lower\nomega_ab,value\n0.9,0.0\n0.95,abc\n";
    assert!(matches!(BoundCurve::from_csv_str(csv), Err(EntropyError::Table { row: 1, .. })));
    assert!(matches!(BoundCurve::from_csv_str("omega_ab,value\n0.9,0\n1,1\n"), Err(EntropyError::Format(_))));
    assert!(BoundCurve::from_csv_str("# kind=vn_lower\nx,y\n0.9,0\n1,1\n").is_err());
}

#[test]
fn refinement_never_loosens_the_upper_curve() {
    let f = |x: f64| 0.9 - 2.0 * (x - 0.8) * (x - 0.8);
    let coarse_x = [0.8, 0.85, 0.9, 0.95, 1.0];
    let fine_x: Vec<f64> = (0..=20).map(|k| 0.8 + 0.01 * k as f64).collect();
    let coarse = build_tripartite_upper_curve(coarse_x.iter().map(|&x| (x, f(x))).collect()).unwrap();
    let fine = build_tripartite_upper_curve(fine_x.iter().map(|&x| (x, f(x))).collect()).unwrap();
    for &x in &coarse_x {
        assert!(fine.eval(x).unwrap() <= coarse.eval(x).unwrap() + 1e-12, "x={x}");
    }
}

#[test]
fn tangents_of_curves() {
    let single = build_vn_lower_curve(vec![(0.9, 0.2), (1.0, 0.6)]).unwrap();
    let t = tangent_of_curve(&single, 0.95).unwrap();
    assert_eq!(t.slope, 0.0);
    assert_eq!(t.eval(0.9), 0.2);

    let vn = BoundCurve::from_csv_str(VN_EXAMPLE).unwrap();
    for beta in [0.9, 0.93, 0.98, 1.0] {
        let t = tangent_of_curve(&vn, beta).unwrap();
        for &(x, _) in vn.points() {
            assert!(t.eval(x) <= vn.eval(x).unwrap() + 1e-12, "beta={beta} x={x}");
        }
    }
    let t = tangent_of_curve(&vn, 0.98).unwrap();
    assert_abs_diff_eq!(t.eval(0.98), vn.eval(0.98).unwrap(), epsilon = 1e-10);
}

#[test]
fn min_tradeoff_examples() {
    let flat = AffineBound { slope: 0.0, intercept: 0.3, beta: 0.9 };
    let f = min_tradeoff_from_g(&flat, 0.1).unwrap();
    assert_eq!((f.f0, f.f1, f.fbot), (0.3, 0.3, 0.3));
    assert_eq!(f.var_bound(), 0.0);

    let g = affine_moe_bound(0.95, W3).unwrap();
    let f = min_tradeoff_from_g(&g, 1.0).unwrap();
    assert_abs_diff_eq!(f.f0, g.eval(0.0), epsilon = 1e-15);
    assert_abs_diff_eq!(f.f1, g.eval(1.0), epsilon = 1e-15);

    let g = affine_moe_bound(1.0, W3).unwrap();
    let f = min_tradeoff_from_g(&g, 0.01).unwrap();
    let (g0, g1) = (-1.453_089_570_485_303_3, 0.169_786_148_726_806_6);
    assert_abs_diff_eq!(f.f0, g1 + 100.0 * (g0 - g1), epsilon = 1e-9);
    assert_eq!(f.f1, f.fbot);

    assert!(matches!(min_tradeoff_from_g(&g, 0.0), Err(EntropyError::BadGamma(_))));
    assert!(matches!(min_tradeoff_from_g(&g, 1.5), Err(EntropyError::BadGamma(_))));
    let down = AffineBound { slope: -1.0, intercept: 1.0, beta: 0.5 };
    assert!(matches!(min_tradeoff_from_g(&down, 0.5), Err(EntropyError::Decreasing(_))));
}

#[test]
fn min_tradeoff_statistics_hold_for_random_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let g = AffineBound { slope: rng.gen_range(0.0..5.0), intercept: rng.gen_range(-3.0..1.0), beta: 0.9 };
        let gamma: f64 = rng.gen_range(1e-3..1.0);
        let f = min_tradeoff_from_g(&g, gamma).unwrap();
        let (g0, g1) = (g.eval(0.0), g.eval(1.0));
        let values = [f.f0, f.f1, f.fbot];
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        assert!((f.max_f() - max).abs() <= 1e-12 * max.abs().max(1.0));
        assert!((f.min_f() - min).abs() <= 1e-12 * min.abs().max(1.0));
        // Achievable distributions: (gamma (1-p), gamma p, 1 - gamma) over (lose, win, no test).
        for p in grid(201) {
            let q = [gamma * (1.0 - p), gamma * p, 1.0 - gamma];
            let mean: f64 = q.iter().zip(values).map(|(a, b)| a * b).sum();
            let var: f64 = q.iter().zip(values).map(|(a, b)| a * (b - mean).powi(2)).sum();
            assert!(mean - f.min_sigma_bound() >= -1e-9, "mean {mean}");
            assert!(f.var_bound() - var >= -1e-9 * f.var_bound().max(1.0), "var {var} > {}", f.var_bound());
        }
        assert_eq!(f.min_sigma_bound(), g0);
        assert_abs_diff_eq!(f.var_bound(), (g1 - g0).powi(2) / gamma, epsilon = 1e-12);
    }
}
