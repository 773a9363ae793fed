use approx::assert_relative_eq;
use nlgqkd::entropy::{affine_moe_bound, binary_entropy, AffineBound, BoundCurve};
use nlgqkd::games::msg_expected_win;
use nlgqkd::keyrate::{
    asymptotic_rate, completeness_gamma, devetak_winter, eta, finite_key_length, geat_constants, kappa_min,
    min_lec_for_correctness, msg_asymptotic_rate, optimize_finite_rate, positivity_region, robustness_threshold,
    theta, BoundSource, OptimizerOptions, ProtocolParams, RateFrame, SecurityBudget,
};

const W3: f64 = 8.00077 / 9.0;

fn msg_g() -> AffineBound {
    affine_moe_bound(1.0, W3).unwrap()
}

fn budget(eps_s: f64) -> SecurityBudget {
    SecurityBudget::pedagogical(1e-6, eps_s, 1e-6, 1e-2, 1e-2)
}

/// Independent multiprecision evaluation, n -> (raw key length, gamma, d1, d0, kappa)
/// for beta = 1, q = 0, eps_sec = 1e-6, eps_s = 2.5e-7, eps_com = 1e-2, l_EC = 20.
const SWEEP: [(u64, f64, f64, f64, f64, f64); 6] = [
    (1_000_000, -929_020.037_243_370_4, 4.605_170_185_988_091e-4, 1_077.646_288_792_860_8, 107.785_804_989_959_18, 4.157_071_861_390_419e-3),
    (100_000_000, -31_415_001.221_366_7, 2.137_530_651_216_881e-5, 4_800.001_068_119_844, 5.432_895_815_139_053, 4.157_071_861_390_419e-4),
    (10_000_000_000, -517_923_426.250_328_8, 9.921_538_402_193_326e-7, 22_078.262_055_716_582, 0.256_793_648_128_661_8, 4.157_071_861_390_419e-5),
    (1_000_000_000_000, 67_342_678_410.514_41, 4.605_170_185_988_091e-8, 102_276.979_040_893_94, 0.011_966_255_217_548_492, 4.157_071_861_390_419e-6),
    (100_000_000_000_000, 12_229_811_936_614.018, 2.137_530_651_216_881e-9, 474_526.477_078_806_7, 5.558_954_833_678_638e-4, 4.157_071_861_390_419e-7),
    (1_000_000_000_000_000, 137_442_692_521_955.12, 4.605_170_185_988_091e-10, 1_022_272.520_047_699_6, 1.197_789_968_846_708e-4, 1.314_581_547_898_950_3e-7),
];

#[test]
fn completeness_gamma_examples() {
    assert_eq!(completeness_gamma(0.9, 0.01, 1000, 1.0).unwrap(), 0.0);
    let g = completeness_gamma(0.9845, 1e-2, 100_000_000, 1e-2).unwrap();
    assert_relative_eq!(g, (2.0 * 0.0155 + 0.01) / (1e-4 * 1e8) * 100f64.ln(), max_relative = 1e-12);
    assert_relative_eq!(g, 1.888_119_776_255_117_5e-5, max_relative = 1e-12);
    for n in [1_000_000u64, 1_000_000_000, 1_000_000_000_000] {
        let d = (n as f64).powf(-1.0 / 3.0);
        assert_relative_eq!(completeness_gamma(1.0, d, n, 1e-2).unwrap(), (n as f64).powf(-2.0 / 3.0) * 100f64.ln(), max_relative = 1e-9);
    }
    assert!(completeness_gamma(1.0, 0.0, 10, 0.1).is_err());
    assert!(completeness_gamma(1.0, 0.1, 10, 0.1).unwrap() > completeness_gamma(1.0, 0.1, 20, 0.1).unwrap());
    assert!(completeness_gamma(1.0, 0.2, 10, 0.1).unwrap() < completeness_gamma(1.0, 0.1, 10, 0.1).unwrap());
    assert!(completeness_gamma(1.0, 0.1, 10, 0.01).unwrap() > completeness_gamma(1.0, 0.1, 10, 0.1).unwrap());
}

#[test]
fn hash_length_examples() {
    assert_eq!(min_lec_for_correctness(1.0).unwrap(), 0);
    assert_eq!(min_lec_for_correctness(1e-6).unwrap(), 20);
    assert_eq!(min_lec_for_correctness(2f64.powi(-32)).unwrap(), 32);
    assert!(min_lec_for_correctness(0.0).is_err());
}

#[test]
fn theta_examples() {
    assert_eq!(theta(1.0).unwrap(), 0.0);
    assert_relative_eq!(theta(0.5).unwrap(), 2.899_968_626_952_991_7, max_relative = 1e-13);
    assert!(theta(0.0).is_err());
    let mut prev = f64::INFINITY;
    for k in 1..=1000 {
        let t = theta(k as f64 / 1000.0).unwrap();
        assert!(t < prev);
        prev = t;
    }
    assert!(theta(1e-12).unwrap().is_finite());
}

#[test]
fn kappa_examples() {
    assert_eq!(kappa_min(100, 1.0), 0.0);
    assert_relative_eq!(kappa_min(100_000_000, 1e-7 / 8.0), 4.265_857_146_299_927e-4, max_relative = 1e-12);
    assert_relative_eq!(kappa_min(400, 1e-3), kappa_min(100, 1e-3) / 2.0, max_relative = 1e-14);
}

#[test]
fn geat_constants_match_reevaluation() {
    let c = geat_constants(&msg_g(), 0.01, &budget(1e-7)).unwrap();
    assert_relative_eq!(c.d1, 280.161_235_066_580_3, max_relative = 1e-11);
    assert_relative_eq!(c.d0, 1_706.806_869_334_793, max_relative = 1e-11);
    assert_relative_eq!(c.v, 20.377_722_507_714_29, max_relative = 1e-12);
    assert_relative_eq!(c.eta, eta());
}

#[test]
fn geat_constants_for_constant_g() {
    let flat = AffineBound { slope: 0.0, intercept: 0.3, beta: 1.0 };
    let b = budget(1e-7);
    let c = geat_constants(&flat, 0.5, &b).unwrap();
    assert_relative_eq!(c.v, 17f64.log2() + 2f64.sqrt(), max_relative = 1e-14);
    // with no spread the exponential factor reduces to 2^(2(1-eta)/eta)
    let e = eta();
    let th = theta(b.eps_s_prime).unwrap();
    let la = (1.0 / b.eps_a).log2();
    let ln2 = std::f64::consts::LN_2;
    let expected = ((2.0 - e) * e * e * la + e * e * th) / (3.0 * ln2 * ln2 * c.v * c.v * (2.0 * e - 1.0).powi(3))
        * 2f64.powf(2.0 * (1.0 - e) / e)
        * (4.0 + std::f64::consts::E.powi(2)).ln().powi(3);
    assert_relative_eq!(c.d0, expected, max_relative = 1e-12);
}

#[test]
fn geat_constants_are_well_formed() {
    for gamma in [1e-6, 1e-3, 0.1, 1.0] {
        for eps_s in [1e-12, 1e-9, 4e-7] {
            let c = geat_constants(&msg_g(), gamma, &budget(eps_s)).unwrap();
            assert!(c.d1 >= 0.0 && c.d0 >= 0.0);
            assert!(c.eta > 0.5 && c.eta < 1.0);
            assert!(c.v >= 17f64.log2());
        }
    }
    assert!(geat_constants(&msg_g(), 0.0, &budget(1e-7)).is_err());
    assert!(geat_constants(&msg_g(), 0.1, &budget(6e-7)).is_err());
}

#[test]
fn budget_validation() {
    assert!(budget(1e-7).validate().is_ok());
    assert!(budget(5e-7).validate().is_err());
    let mut b = budget(1e-7);
    b.eps_s_dprime = b.eps_s / 4.0;
    assert!(b.validate().is_err());
    b = budget(1e-7);
    b.eps_a = 1e-6;
    assert!(b.validate().is_err());
}

#[test]
fn finite_key_length_matches_reevaluation() {
    let g = msg_g();
    let b = budget(2.5e-7);
    for (n, raw, gamma, d1, d0, kappa) in SWEEP {
        let p = ProtocolParams::honest(n, 1.0, &b, 1.1).unwrap();
        assert_eq!(p.lambda_ec, 0.0);
        assert_eq!(p.l_ec, 20);
        let r = finite_key_length(&g, &p, &b, false).unwrap();
        assert_relative_eq!(r.gamma, gamma, max_relative = 1e-12);
        assert_relative_eq!(r.d1, d1, max_relative = 1e-11);
        assert_relative_eq!(r.d0, d0, max_relative = 1e-9);
        assert_relative_eq!(r.kappa, kappa, max_relative = 1e-12);
        assert_relative_eq!(r.raw, raw, max_relative = 1e-9);
        assert_eq!(r.feasible, raw > 0.0);
        let expected = if raw > 0.0 { raw.floor() } else { 0.0 };
        assert!((r.l_key as f64 - expected).abs() <= 1e-9 * raw.abs().max(1.0));
        assert!(r.rate <= g.eval(1.0 - p.delta_tol) + 1e-9);
    }
}

#[test]
fn conservative_mode_removes_two_bits() {
    let g = msg_g();
    let b = budget(2.5e-7);
    let p = ProtocolParams::honest(1_000_000_000_000, 1.0, &b, 1.1).unwrap();
    let a = finite_key_length(&g, &p, &b, false).unwrap();
    let c = finite_key_length(&g, &p, &b, true).unwrap();
    assert!((a.raw - c.raw - 2.0).abs() < 1e-3);
}

#[test]
fn small_blocks_give_no_key() {
    let b = budget(2.5e-7);
    let p = ProtocolParams::honest(1000, 1.0, &b, 1.1).unwrap();
    let r = finite_key_length(&msg_g(), &p, &b, false).unwrap();
    assert_eq!(r.l_key, 0);
    assert!(!r.feasible);
}

#[test]
fn key_length_grows_and_rate_settles_with_fixed_gamma() {
    let g = msg_g();
    let b = budget(2.5e-7);
    let mut last_len = 0;
    let mut last_rate = None;
    let mut last_step = f64::INFINITY;
    for e in 6..=14 {
        let n = 10u64.pow(e);
        let p = ProtocolParams::with_gamma(n, 1e-4, 1e-3, 1.0, &b, 1.1).unwrap();
        let r = finite_key_length(&g, &p, &b, false).unwrap();
        assert!(r.l_key >= last_len);
        last_len = r.l_key;
        let rate = r.raw / n as f64;
        if let Some(prev) = last_rate {
            let step: f64 = rate - prev;
            assert!(step.abs() < last_step);
            last_step = step.abs();
        }
        last_rate = Some(rate);
    }
}

#[test]
fn rate_approaches_the_asymptote_slowly() {
    // The finite-size penalty d1/sqrt(n) still costs about 0.03 bits per round at 1e15.
    let g = msg_g();
    let b = budget(2.5e-7);
    let gap = |n: u64| {
        let p = ProtocolParams::honest(n, 1.0, &b, 1.1).unwrap();
        g.eval(1.0) - finite_key_length(&g, &p, &b, false).unwrap().rate
    };
    let (g12, g15) = (gap(1_000_000_000_000), gap(1_000_000_000_000_000));
    assert!(g15 < g12);
    assert!((g15 - 0.032_34).abs() < 1e-3);
}

#[test]
fn asymptotic_rate_examples() {
    assert_relative_eq!(asymptotic_rate(&msg_g(), 1.0, 0.0, 1.0).unwrap(), 0.169_786_148_726_806_6, max_relative = 1e-13);
    let w2 = (2.0 + 2f64.sqrt()) / 4.0;
    let chsh = affine_moe_bound(w2, 0.75).unwrap();
    assert!(asymptotic_rate(&chsh, w2, 1.0 - w2, 1.1).unwrap() < 0.0);
    let q = 0.05;
    let at_w3 = affine_moe_bound(W3, W3).unwrap();
    assert!(asymptotic_rate(&at_w3, W3, q, 1.0).unwrap() <= -binary_entropy(q).unwrap() + 1e-12);
}

#[test]
fn devetak_winter_examples() {
    assert_eq!(devetak_winter(1.0, 0.0).unwrap(), 1.0);
    let h = binary_entropy(0.2).unwrap();
    assert!(devetak_winter(h, 0.2).unwrap().abs() < 1e-15);
    let curve = BoundCurve::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/data/msg_vn_lower_example.csv")).unwrap();
    let r = devetak_winter(curve.eval(0.99).unwrap(), 0.01).unwrap();
    assert_relative_eq!(r, curve.eval(0.99).unwrap() - binary_entropy(0.01).unwrap());
    assert!(devetak_winter(1.5, 0.0).is_err());
}

fn frame(n: u64, omega_exp: f64) -> RateFrame {
    RateFrame {
        n,
        omega_exp,
        eps_sec: 1e-6,
        eps_corr: 1e-6,
        eps_com_pe: 1e-2,
        eps_com_ec: 1e-2,
        xi: 1.1,
        delta_tol: None,
        gamma: None,
        conservative: false,
    }
}

#[test]
fn optimizer_beats_a_fixed_point() {
    let src = BoundSource::Affine { omega2: 1.0, omega3: W3 };
    for n in [10_000_000_000u64, 1_000_000_000_000] {
        let f = frame(n, 1.0);
        let best = optimize_finite_rate(&src, &f, &OptimizerOptions::default()).unwrap();
        let b = f.budget(f.eps_sec / 4.0);
        let fixed = finite_key_length(&src.bound_at(1.0 - 1e-3).unwrap(), &f.params(&b).unwrap(), &b, false).unwrap();
        assert!(best.raw > fixed.raw);
        assert!(best.l_key >= fixed.l_key);
        assert!(best.beta >= W3 && best.beta <= 1.0);
    }
}

#[test]
fn exhaustive_search_never_loses() {
    let src = BoundSource::Affine { omega2: 1.0, omega3: W3 };
    let f = frame(1_000_000_000_000, 1.0);
    let coarse = optimize_finite_rate(&src, &f, &OptimizerOptions::default()).unwrap();
    let fine = optimize_finite_rate(&src, &f, &OptimizerOptions { exhaustive: true, ..Default::default() }).unwrap();
    assert!(fine.raw >= coarse.raw);
    let denser = optimize_finite_rate(&src, &f, &OptimizerOptions { eps_points: 119, ..Default::default() }).unwrap();
    assert!(denser.raw >= coarse.raw - 1e-6);
}

#[test]
fn degenerate_game_has_no_key() {
    let src = BoundSource::Affine { omega2: 0.9, omega3: 0.9 };
    let r = optimize_finite_rate(&src, &frame(1_000_000_000_000, 0.9), &OptimizerOptions::default()).unwrap();
    assert_eq!(r.l_key, 0);
}

#[test]
fn region_examples() {
    let w2c = (2.0 + 2f64.sqrt()) / 4.0;
    let cells = positivity_region(&[1.0, w2c], &[8.0 / 9.0, 0.75], 1.0).unwrap();
    let find = |a: f64, b: f64| cells.iter().find(|c| c.omega2 == a && c.omega3 == b).unwrap();
    assert!(find(1.0, 8.0 / 9.0).positive);
    assert!(!find(w2c, 0.75).positive);
    assert!(cells.iter().all(|c| c.omega3 <= c.omega2));

    let grid: Vec<f64> = (0..=20).map(|k| 0.5 + 0.025 * k as f64).collect();
    let diag = positivity_region(&grid, &grid, 1.0).unwrap();
    assert!(diag.iter().filter(|c| c.omega2 == c.omega3).all(|c| !c.positive));
}

#[test]
fn robustness_threshold_matches_scan() {
    let src = BoundSource::Affine { omega2: 1.0, omega3: W3 };
    let t = robustness_threshold(&src, 1.0).unwrap();
    assert!(!t.no_sign_change);
    // independent root of the same expression
    assert!((t.q_star - 0.012_637_200_103_485_846).abs() <= 1e-5);

    let steps = 1_000_000;
    let scan = (0..=steps)
        .map(|k| 0.5 * k as f64 / steps as f64)
        .find(|&q| {
            let w = msg_expected_win(q);
            -(1.0 - w + W3).log2() - binary_entropy(1.0 - w).unwrap() <= 0.0
        })
        .unwrap();
    assert!((t.q_star - scan).abs() <= 1e-5);
    assert!(msg_asymptotic_rate(&src, t.lo, 1.0).unwrap() > 0.0);
    assert!(msg_asymptotic_rate(&src, t.hi, 1.0).unwrap() <= 0.0);
}

#[test]
fn zero_bound_has_zero_threshold() {
    let zero = BoundCurve::from_csv_str("# kind=vn_lower\nomega_ab,value\n0.5,0\n1.0,0\n").unwrap();
    let t = robustness_threshold(&BoundSource::from_curve(zero), 1.0).unwrap();
    assert_eq!(t.q_star, 0.0);
    assert!(t.no_sign_change);
}
