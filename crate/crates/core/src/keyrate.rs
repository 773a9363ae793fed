//! Security arithmetic: completeness, correctness and secrecy parameters, the
//! finite key length, asymptotic rates, and the searches built on them.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::entropy::{
    self, affine_moe_bound, binary_entropy, constrained_affine_bound, min_tradeoff_from_g, tangent_of_curve,
    AffineBound, BoundCurve, BoundKind, EntropyError,
};
use crate::games::msg_expected_win;

/// Default error-correction inefficiency.
pub const DEFAULT_XI: f64 = 1.1;

/// eta = 2 ln 2 / (1 + 2 ln 2).
pub fn eta() -> f64 {
    2.0 * LN_2 / (1.0 + 2.0 * LN_2)
}

#[derive(Debug, Error)]
pub enum KeyRateError {
    #[error("infeasible security budget: {0}")]
    Budget(String),
    #[error("invalid protocol parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

fn check_prob(v: f64, what: &str) -> Result<(), KeyRateError> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(KeyRateError::Budget(format!("{what} = {v} must lie in (0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SecurityBudget {
    pub eps_sec: f64,
    pub eps_corr: f64,
    pub eps_com_pe: f64,
    pub eps_com_ec: f64,
    pub eps_s: f64,
    pub eps_s_prime: f64,
    pub eps_s_dprime: f64,
    pub eps_a: f64,
}

impl SecurityBudget {
    /// The split eps_a = eps_sec/2, eps_s' = eps_s/2, eps_s'' = eps_s/8.
    pub fn pedagogical(eps_sec: f64, eps_s: f64, eps_corr: f64, eps_com_pe: f64, eps_com_ec: f64) -> Self {
        Self {
            eps_sec,
            eps_corr,
            eps_com_pe,
            eps_com_ec,
            eps_s,
            eps_s_prime: eps_s / 2.0,
            eps_s_dprime: eps_s / 8.0,
            eps_a: eps_sec / 2.0,
        }
    }

    /// Smoothing left for the chain rule: eps_s - eps_s' - 2 eps_s''.
    pub fn delta(&self) -> f64 {
        self.eps_s - self.eps_s_prime - 2.0 * self.eps_s_dprime
    }

    pub fn validate(&self) -> Result<(), KeyRateError> {
        check_prob(self.eps_sec, "eps_sec")?;
        check_prob(self.eps_corr, "eps_corr")?;
        check_prob(self.eps_com_pe, "eps_com_pe")?;
        check_prob(self.eps_com_ec, "eps_com_ec")?;
        if !(self.eps_s > 0.0 && self.eps_s < self.eps_sec / 2.0) {
            return Err(KeyRateError::Budget(format!("eps_s = {} must lie in (0, eps_sec/2)", self.eps_s)));
        }
        if !(self.eps_a > 0.0 && self.eps_a <= self.eps_sec / 2.0) {
            return Err(KeyRateError::Budget(format!("eps_a = {} must lie in (0, eps_sec/2]", self.eps_a)));
        }
        check_prob(self.eps_s_prime, "eps_s'")?;
        check_prob(self.eps_s_dprime, "eps_s''")?;
        if self.delta() <= 0.0 {
            return Err(KeyRateError::Budget("eps_s - eps_s' - 2 eps_s'' must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProtocolParams {
    pub n: u64,
    pub gamma: f64,
    pub delta_tol: f64,
    pub omega_exp: f64,
    /// Syndrome length in bits.
    pub lambda_ec: f64,
    /// Verification hash length in bits.
    pub l_ec: u32,
    pub xi: f64,
}

impl ProtocolParams {
    /// Honest-implementation defaults: delta_tol = n^(-1/3), gamma from the
    /// completeness bound (clamped to 1), lambda_EC = ceil(xi n h(1 - omega_exp)),
    /// l_EC from eps_corr.
    pub fn honest(n: u64, omega_exp: f64, budget: &SecurityBudget, xi: f64) -> Result<Self, KeyRateError> {
        let delta_tol = (n as f64).powf(-1.0 / 3.0);
        let gamma = completeness_gamma(omega_exp, delta_tol, n, budget.eps_com_pe)?.min(1.0);
        Self::with_gamma(n, gamma, delta_tol, omega_exp, budget, xi)
    }

    pub fn with_gamma(
        n: u64,
        gamma: f64,
        delta_tol: f64,
        omega_exp: f64,
        budget: &SecurityBudget,
        xi: f64,
    ) -> Result<Self, KeyRateError> {
        if !(0.0..=1.0).contains(&omega_exp) {
            return Err(KeyRateError::Params(format!("omega_exp = {omega_exp} outside [0, 1]")));
        }
        let lambda_ec = (xi * n as f64 * binary_entropy(1.0 - omega_exp)?).ceil();
        let p = Self { n, gamma, delta_tol, omega_exp, lambda_ec, l_ec: min_lec_for_correctness(budget.eps_corr)?, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), KeyRateError> {
        if self.n == 0 {
            return Err(KeyRateError::Params("n must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(KeyRateError::Params(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        if self.delta_tol <= 0.0 {
            return Err(KeyRateError::Params("delta_tol must be positive".into()));
        }
        if self.lambda_ec < 0.0 || self.xi < 0.0 {
            return Err(KeyRateError::Params("lambda_EC and xi must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Testing probability that keeps the honest abort probability of the
/// parameter-estimation check below `eps` (multiplicative Chernoff bound).
pub fn completeness_gamma(omega_exp: f64, delta_tol: f64, n: u64, eps: f64) -> Result<f64, KeyRateError> {
    if delta_tol <= 0.0 {
        return Err(KeyRateError::Params("delta_tol must be positive".into()));
    }
    if n == 0 {
        return Err(KeyRateError::Params("n must be positive".into()));
    }
    check_prob(eps, "eps_com_pe")?;
    Ok((2.0 * (1.0 - omega_exp) + delta_tol) / (delta_tol * delta_tol * n as f64) * (1.0 / eps).ln())
}

/// Verification hash length for `eps_corr`-correctness: ceil(log2(1/eps)).
pub fn min_lec_for_correctness(eps_corr: f64) -> Result<u32, KeyRateError> {
    check_prob(eps_corr, "eps_corr")?;
    Ok((1.0 / eps_corr).log2().ceil() as u32)
}

/// theta(delta) = -log2(1 - sqrt(1 - delta^2)), computed without cancellation.
pub fn theta(delta: f64) -> Result<f64, KeyRateError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(KeyRateError::Budget(format!("smoothing parameter {delta} outside (0, 1]")));
    }
    let gap = delta * delta / (1.0 + (1.0 - delta * delta).sqrt());
    Ok(-gap.log2())
}

/// Hoeffding deviation for the number of test rounds: sqrt(-ln eps) / sqrt(n).
pub fn kappa_min(n: u64, eps_s_dprime: f64) -> f64 {
    (-eps_s_dprime.ln()).sqrt() / (n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeatConstants {
    pub d1: f64,
    pub d0: f64,
    pub eta: f64,
    pub v: f64,
}

/// Second-order constants of the entropy accumulation bound for the
/// min-tradeoff function built from `g` at testing probability `gamma`.
pub fn geat_constants(g: &AffineBound, gamma: f64, budget: &SecurityBudget) -> Result<GeatConstants, KeyRateError> {
    budget.validate()?;
    let f = min_tradeoff_from_g(g, gamma)?;
    let eta = eta();
    let v = 17f64.log2() + (2.0 + f.var_bound()).sqrt();
    let th = theta(budget.eps_s_prime)?;
    let log_a = (1.0 / budget.eps_a).log2();
    let d1 = (2.0 * LN_2 * v * v / eta * (th + (2.0 - eta) * log_a)).sqrt();
    let spread = 2.0 + f.max_f() - f.min_sigma_bound();
    let d0 = ((2.0 - eta) * eta * eta * log_a + eta * eta * th) / (3.0 * LN_2 * LN_2 * v * v * (2.0 * eta - 1.0).powi(3))
        * 2f64.powf((1.0 - eta) / eta * spread)
        * (2f64.powf(spread) + std::f64::consts::E.powi(2)).ln().powi(3);
    Ok(GeatConstants { d1, d0, eta, v })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KeyRateReport {
    pub n: u64,
    /// Secret key length, floored to an integer and clamped at 0.
    pub l_key: u64,
    /// The key-length expression before flooring and clamping.
    pub raw: f64,
    pub rate: f64,
    pub d1: f64,
    pub d0: f64,
    pub kappa: f64,
    pub theta_term: f64,
    pub gamma: f64,
    pub delta_tol: f64,
    pub feasible: bool,
    pub beta: f64,
    pub eps_s: f64,
    pub eps_s_prime: f64,
    pub eps_s_dprime: f64,
}

impl KeyRateReport {
    fn infeasible(n: u64) -> Self {
        Self {
            n,
            l_key: 0,
            raw: f64::NEG_INFINITY,
            rate: 0.0,
            d1: f64::NAN,
            d0: f64::NAN,
            kappa: f64::NAN,
            theta_term: f64::NAN,
            gamma: f64::NAN,
            delta_tol: f64::NAN,
            feasible: false,
            beta: f64::NAN,
            eps_s: f64::NAN,
            eps_s_prime: f64::NAN,
            eps_s_dprime: f64::NAN,
        }
    }
}

/// Secret key length for affine bound `g`. With `conservative` set, two further
/// bits are removed, matching the intermediate min-entropy chain.
pub fn finite_key_length(
    g: &AffineBound,
    params: &ProtocolParams,
    budget: &SecurityBudget,
    conservative: bool,
) -> Result<KeyRateReport, KeyRateError> {
    params.validate()?;
    budget.validate()?;
    let n = params.n as f64;
    let c = geat_constants(g, params.gamma, budget)?;
    let kappa = kappa_min(params.n, budget.eps_s_dprime);
    let theta_term = 2.0 * theta(budget.delta())?;
    let mut raw = n * g.eval(params.omega_exp - params.delta_tol)
        - c.d1 * n.sqrt()
        - c.d0
        - (2.0 - params.omega_exp + params.delta_tol) * n * (params.gamma + kappa)
        - theta_term
        - params.l_ec as f64
        - params.lambda_ec
        - 2.0 * (1.0 / (budget.eps_sec - 2.0 * budget.eps_s)).log2();
    if conservative {
        raw -= 2.0;
    }
    let l_key = if raw > 0.0 { raw.floor() as u64 } else { 0 };
    Ok(KeyRateReport {
        n: params.n,
        l_key,
        raw,
        rate: l_key as f64 / n,
        d1: c.d1,
        d0: c.d0,
        kappa,
        theta_term,
        gamma: params.gamma,
        delta_tol: params.delta_tol,
        feasible: raw > 0.0,
        beta: g.beta,
        eps_s: budget.eps_s,
        eps_s_prime: budget.eps_s_prime,
        eps_s_dprime: budget.eps_s_dprime,
    })
}

/// g(omega_exp) - xi h(Q).
pub fn asymptotic_rate(g: &AffineBound, omega_exp: f64, q: f64, xi: f64) -> Result<f64, KeyRateError> {
    Ok(g.eval(omega_exp) - xi * binary_entropy(q)?)
}

/// H(S_A|E) lower bound minus h(Q).
pub fn devetak_winter(h_bound: f64, q: f64) -> Result<f64, KeyRateError> {
    if !(0.0..=1.0).contains(&h_bound) || !(0.0..=0.5).contains(&q) {
        return Err(KeyRateError::Params(format!("devetak-winter inputs ({h_bound}, {q}) out of range")));
    }
    Ok(h_bound - binary_entropy(q)?)
}

/// Where the per-round entropy bound comes from.
#[derive(Clone, Debug)]
pub enum BoundSource {
    /// Tangents of -log2(1 - p + omega3) for beta in [omega3, omega2].
    Affine { omega2: f64, omega3: f64 },
    /// Tangents of -log2(1 - p + h(p)) for an upper curve h on the tripartite value.
    Tripartite(BoundCurve),
    /// Tangents of a von Neumann entropy lower curve.
    VonNeumann(BoundCurve),
}

impl BoundSource {
    pub fn from_curve(curve: BoundCurve) -> Self {
        match curve.kind() {
            BoundKind::TripartiteWinUpper => BoundSource::Tripartite(curve),
            BoundKind::VnLower => BoundSource::VonNeumann(curve),
        }
    }

    pub fn beta_range(&self) -> (f64, f64) {
        match self {
            BoundSource::Affine { omega2, omega3 } => (*omega3, *omega2),
            BoundSource::Tripartite(c) | BoundSource::VonNeumann(c) => c.domain(),
        }
    }

    pub fn bound_at(&self, beta: f64) -> Result<AffineBound, KeyRateError> {
        Ok(match self {
            BoundSource::Affine { omega3, .. } => affine_moe_bound(beta, *omega3)?,
            BoundSource::Tripartite(c) => constrained_affine_bound(beta, c)?,
            BoundSource::VonNeumann(c) => tangent_of_curve(c, beta)?,
        })
    }

    /// Largest single-round bound at winning probability `omega`. Every source
    /// is convex in p, so the best tangent is the one taken at `omega` itself.
    /// Curves give no bound outside their domain.
    pub fn entropy_at(&self, omega: f64) -> Result<Option<f64>, KeyRateError> {
        let (lo, hi) = self.beta_range();
        match self {
            BoundSource::Affine { .. } => Ok(Some(self.bound_at(omega.clamp(lo, hi))?.eval(omega))),
            _ if (lo..=hi).contains(&omega) => Ok(Some(self.bound_at(omega)?.eval(omega))),
            _ => Ok(None),
        }
    }
}

/// Everything the optimizer needs besides beta and the smoothing split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFrame {
    pub n: u64,
    pub omega_exp: f64,
    pub eps_sec: f64,
    pub eps_corr: f64,
    pub eps_com_pe: f64,
    pub eps_com_ec: f64,
    pub xi: f64,
    /// Overrides n^(-1/3).
    pub delta_tol: Option<f64>,
    /// Overrides the completeness-derived testing probability.
    pub gamma: Option<f64>,
    pub conservative: bool,
}

impl RateFrame {
    pub fn params(&self, budget: &SecurityBudget) -> Result<ProtocolParams, KeyRateError> {
        let delta_tol = self.delta_tol.unwrap_or_else(|| (self.n as f64).powf(-1.0 / 3.0));
        let gamma = match self.gamma {
            Some(g) => g,
            None => completeness_gamma(self.omega_exp, delta_tol, self.n, self.eps_com_pe)?.min(1.0),
        };
        ProtocolParams::with_gamma(self.n, gamma, delta_tol, self.omega_exp, budget, self.xi)
    }

    pub fn budget(&self, eps_s: f64) -> SecurityBudget {
        SecurityBudget::pedagogical(self.eps_sec, eps_s, self.eps_corr, self.eps_com_pe, self.eps_com_ec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OptimizerOptions {
    /// Number of log-spaced eps_s values in (0, eps_sec/2).
    pub eps_points: usize,
    /// Golden-section bracket width for beta.
    pub beta_tol: f64,
    /// Also search eps_s' and eps_s'' instead of fixing them to eps_s/2 and eps_s/8.
    pub exhaustive: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { eps_points: 60, beta_tol: 1e-6, exhaustive: false }
    }
}

/// Log-spaced eps_s candidates from 1e-6 to 0.99 of eps_sec/2.
pub fn eps_s_grid(eps_sec: f64, points: usize) -> Vec<f64> {
    let hi = 0.99 * eps_sec / 2.0;
    let lo = 1e-6 * eps_sec / 2.0;
    if points <= 1 {
        return vec![eps_sec / 4.0];
    }
    (0..points)
        .map(|k| lo * (hi / lo).powf(k as f64 / (points - 1) as f64))
        .collect()
}

/// Fractions (eps_s'/eps_s, eps_s''/eps_s) tried in exhaustive mode; the
/// default (1/2, 1/8) is always among them.
fn split_fractions(exhaustive: bool) -> Vec<(f64, f64)> {
    if !exhaustive {
        return vec![(0.5, 0.125)];
    }
    let prime = [0.1, 0.25, 0.5, 0.7, 0.9];
    let dprime = [0.01, 0.05, 0.125, 0.2, 0.3, 0.4];
    let mut out = vec![(0.5, 0.125)];
    for &a in &prime {
        for &b in &dprime {
            if a + 2.0 * b < 1.0 && (a, b) != (0.5, 0.125) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Maximise `f` on `[lo, hi]` by golden-section search, also checking the endpoints.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    for x in [lo, hi] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Maximise the finite key length over beta and the smoothing split.
pub fn optimize_finite_rate(
    source: &BoundSource,
    frame: &RateFrame,
    opts: &OptimizerOptions,
) -> Result<KeyRateReport, KeyRateError> {
    let (lo, hi) = source.beta_range();
    let candidates: Vec<(f64, f64, f64)> = eps_s_grid(frame.eps_sec, opts.eps_points)
        .into_iter()
        .flat_map(|e| split_fractions(opts.exhaustive).into_iter().map(move |(a, b)| (e, a * e, b * e)))
        .collect();

    let evaluate = |beta: f64, budget: &SecurityBudget| -> Option<KeyRateReport> {
        let params = frame.params(budget).ok()?;
        let g = source.bound_at(beta).ok()?;
        finite_key_length(&g, &params, budget, frame.conservative).ok()
    };

    let best = candidates
        .par_iter()
        .enumerate()
        .filter_map(|(idx, &(eps_s, esp, esdp))| {
            let budget = SecurityBudget { eps_s_prime: esp, eps_s_dprime: esdp, ..frame.budget(eps_s) };
            budget.validate().ok()?;
            let objective = |beta: f64| evaluate(beta, &budget).map_or(f64::NEG_INFINITY, |r| r.raw);
            let (beta, _) = if hi > lo { golden_section_max(objective, lo, hi, opts.beta_tol) } else { (lo, 0.0) };
            evaluate(beta, &budget).map(|r| (idx, r))
        })
        .reduce_with(|l, r| if r.1.raw > l.1.raw || (r.1.raw == l.1.raw && r.0 < l.0) { r } else { l });

    match best {
        Some((_, report)) => Ok(report),
        None => {
            // Surface the underlying configuration error if there is one.
            frame.params(&frame.budget(frame.eps_sec / 4.0))?;
            Ok(KeyRateReport::infeasible(frame.n))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegionCell {
    pub omega2: f64,
    pub omega3: f64,
    pub rate: f64,
    pub positive: bool,
}

/// Asymptotic rate with the best tangent for each (omega2, omega3) cell with
/// omega3 <= omega2; other combinations are skipped.
pub fn positivity_region(omega2: &[f64], omega3: &[f64], xi: f64) -> Result<Vec<RegionCell>, KeyRateError> {
    let cells: Vec<(f64, f64)> = omega2
        .iter()
        .flat_map(|&w2| omega3.iter().filter(move |&&w3| w3 <= w2).map(move |&w3| (w2, w3)))
        .collect();
    cells
        .par_iter()
        .map(|&(w2, w3)| {
            let g = affine_moe_bound(w2, w3)?;
            let rate = asymptotic_rate(&g, w2, 1.0 - w2, xi)?;
            Ok(RegionCell { omega2: w2, omega3: w3, rate, positive: rate > 0.0 })
        })
        .collect()
}

/// Asymptotic rate at winning probability `omega` with QBER `1 - omega`, using
/// the best bound the source offers there (none outside a curve's domain).
pub fn source_asymptotic_rate(source: &BoundSource, omega: f64, xi: f64) -> Result<f64, KeyRateError> {
    let qber = (1.0 - omega).clamp(0.0, 1.0);
    let ec = xi * entropy::binary_entropy(qber)?;
    Ok(source.entropy_at(omega)?.unwrap_or(0.0) - ec)
}

/// Asymptotic rate of the honest magic square implementation at noise `q`.
pub fn msg_asymptotic_rate(source: &BoundSource, q: f64, xi: f64) -> Result<f64, KeyRateError> {
    source_asymptotic_rate(source, msg_expected_win(q), xi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Threshold {
    pub q_star: f64,
    /// Final bisection bracket; the rate is positive at `lo` and not at `hi`.
    pub lo: f64,
    pub hi: f64,
    /// Set when the rate has no sign change on [0, 1/2].
    pub no_sign_change: bool,
}

/// Largest depolarizing noise with a positive asymptotic rate, by bisection to 1e-5.
pub fn robustness_threshold(source: &BoundSource, xi: f64) -> Result<Threshold, KeyRateError> {
    let rate = |q: f64| msg_asymptotic_rate(source, q, xi);
    if rate(0.0)? <= 0.0 {
        return Ok(Threshold { q_star: 0.0, lo: 0.0, hi: 0.0, no_sign_change: true });
    }
    if rate(0.5)? > 0.0 {
        return Ok(Threshold { q_star: 0.5, lo: 0.5, hi: 0.5, no_sign_change: true });
    }
    let (mut lo, mut hi) = (0.0, 0.5);
    while hi - lo > 1e-5 {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Threshold { q_star: 0.5 * (lo + hi), lo, hi, no_sign_change: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_is_in_range() {
        assert!((eta() - 0.580_940_215_803_594_8).abs() < 1e-12);
        assert!(eta() > 0.5 && eta() < 1.0);
    }

    #[test]
    fn theta_is_stable_for_tiny_delta() {
        let d: f64 = 1e-9;
        // 1 - sqrt(1 - d^2) ~ d^2 / 2
        assert!((theta(d).unwrap() - (-(d * d / 2.0).log2())).abs() < 1e-9);
    }

    #[test]
    fn golden_section_finds_interior_and_edge_maxima() {
        let (x, _) = golden_section_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-8);
        assert!((x - 0.3).abs() < 1e-6);
        let (x, _) = golden_section_max(|x| x, 0.0, 1.0, 1e-8);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn split_fractions_keep_delta_positive() {
        for (a, b) in split_fractions(true) {
            assert!(a + 2.0 * b < 1.0);
        }
        assert_eq!(split_fractions(true)[0], (0.5, 0.125));
    }
}
