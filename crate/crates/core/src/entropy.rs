//! Per-round entropy bounds: affine min-entropy bounds, piecewise curves built
//! from tabulated points, and the min-tradeoff function derived from them.

use std::f64::consts::LN_2;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Slack allowed when checking monotonicity and convexity of ingested tables.
pub const TABLE_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid tangent point: 1 - beta + omega3 = {0} must be positive")]
    BadTangent(f64),
    #[error("beta = {beta} outside the curve domain [{lo}, {hi}]")]
    OutsideDomain { beta: f64, lo: f64, hi: f64 },
    #[error("table row {row}: {reason}")]
    Table { row: usize, reason: String },
    #[error("bound table: {0}")]
    Format(String),
    #[error("testing probability {0} outside (0, 1]")]
    BadGamma(f64),
    #[error("min-tradeoff needs a nondecreasing bound (slope {0})")]
    Decreasing(f64),
    #[error("curve of kind {0} cannot be used here")]
    WrongKind(BoundKind),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// h(p) in bits, with h(0) = h(1) = 0.
pub fn binary_entropy(p: f64) -> Result<f64, EntropyError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EntropyError::OutOfRange(p));
    }
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    Ok(term(p) + term(1.0 - p))
}

/// `-log2(1 - p + w)`: min-entropy of Alice's key bit when the third party wins
/// the extended game with probability at most `w`.
pub fn guessing_entropy(p: f64, w: f64) -> f64 {
    // subtracting from zero keeps log2(1) from printing as -0
    0.0 - (1.0 - p + w).log2()
}

/// A line `g(p) = slope * p + intercept` on [0, 1], remembering where it was taken.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AffineBound {
    pub slope: f64,
    pub intercept: f64,
    pub beta: f64,
}

impl AffineBound {
    pub fn eval(&self, p: f64) -> f64 {
        self.slope * p + self.intercept
    }

    pub fn max_value(&self) -> f64 {
        self.eval(0.0).max(self.eval(1.0))
    }

    pub fn min_value(&self) -> f64 {
        self.eval(0.0).min(self.eval(1.0))
    }

    /// Tangent at `beta` of `p -> -log2(1 - p + h(p))` given `h(beta)` and `h'(beta)`.
    pub fn constrained(beta: f64, h_value: f64, h_slope: f64) -> Result<Self, EntropyError> {
        let base = 1.0 - beta + h_value;
        if base <= 0.0 {
            return Err(EntropyError::BadTangent(base));
        }
        let slope = (1.0 - h_slope) / (LN_2 * base);
        let at_beta = -base.log2();
        Ok(Self { slope, intercept: at_beta - slope * beta, beta })
    }
}

/// Tangent at `beta` of `p -> -log2(1 - p + omega3)`.
pub fn affine_moe_bound(beta: f64, omega3: f64) -> Result<AffineBound, EntropyError> {
    if !(0.0..=1.0).contains(&omega3) {
        return Err(EntropyError::OutOfRange(omega3));
    }
    if !(omega3..=1.0).contains(&beta) {
        return Err(EntropyError::OutsideDomain { beta, lo: omega3, hi: 1.0 });
    }
    AffineBound::constrained(beta, omega3, 0.0)
}

/// Tangent of the composite bound built on a tripartite upper curve.
pub fn constrained_affine_bound(beta: f64, curve: &BoundCurve) -> Result<AffineBound, EntropyError> {
    if curve.kind != BoundKind::TripartiteWinUpper {
        return Err(EntropyError::WrongKind(curve.kind));
    }
    AffineBound::constrained(beta, curve.eval(beta)?, curve.slope_at(beta)?)
}

/// Line touching the curve at `beta` with the curve's right-hand slope.
pub fn tangent_of_curve(curve: &BoundCurve, beta: f64) -> Result<AffineBound, EntropyError> {
    let value = curve.eval(beta)?;
    let slope = curve.slope_at(beta)?;
    Ok(AffineBound { slope, intercept: value - slope * beta, beta })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    TripartiteWinUpper,
    VnLower,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundKind::TripartiteWinUpper => "tripartite_win_upper",
            BoundKind::VnLower => "vn_lower",
        })
    }
}

impl FromStr for BoundKind {
    type Err = EntropyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "tripartite_win_upper" => Ok(BoundKind::TripartiteWinUpper),
            "vn_lower" => Ok(BoundKind::VnLower),
            other => Err(EntropyError::Format(format!("unknown kind {other:?}"))),
        }
    }
}

/// Piecewise-linear bound built from tabulated points `(x_k, y_k)`.
///
/// The curve is `y_0` on `[x_0, x_1]`. On `[x_j, x_{j+1}]` for `j >= 1` it
/// continues from its value at `x_j` with the slope of the chord through
/// points `j-1` and `j`, i.e. each chord is shifted one interval to the right.
/// For concave nonincreasing data this stays above every point, and for convex
/// nondecreasing data below every point, while remaining continuous.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCurve {
    kind: BoundKind,
    points: Vec<(f64, f64)>,
    knots: Vec<f64>,
    digest: String,
}

impl BoundCurve {
    pub fn build(kind: BoundKind, points: Vec<(f64, f64)>, digest: String) -> Result<Self, EntropyError> {
        validate_points(kind, &points)?;
        let mut knots = vec![points[0].1; points.len()];
        for j in 1..points.len() - 1 {
            let s = chord(&points, j - 1);
            knots[j + 1] = knots[j] + s * (points[j + 1].0 - points[j].0);
        }
        Ok(Self { kind, points, knots, digest })
    }

    /// Parse a bound table: a `# kind=...` line, a header `omega_ab,value`,
    /// then one row per point. Other `#` lines are ignored.
    pub fn from_csv_str(text: &str) -> Result<Self, EntropyError> {
        let mut kind = None;
        for line in text.lines() {
            if let Some(rest) = line.trim().strip_prefix('#') {
                if let Some(k) = rest.trim().strip_prefix("kind=") {
                    kind = Some(k.parse::<BoundKind>()?);
                }
            }
        }
        let kind = kind.ok_or_else(|| EntropyError::Format("missing `# kind=` line".into()))?;
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "omega_ab" || &headers[1] != "value" {
            return Err(EntropyError::Format("header must be `omega_ab,value`".into()));
        }
        let mut points = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64, EntropyError> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| EntropyError::Table { row, reason: "not a pair of finite numbers".into() })
            };
            points.push((parse(0)?, parse(1)?));
        }
        Self::build(kind, points, hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EntropyError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn kind(&self) -> BoundKind {
        self.kind
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// SHA-256 of the source table (empty for tables built in memory).
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    fn check_domain(&self, x: f64) -> Result<(), EntropyError> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&x) {
            return Err(EntropyError::OutsideDomain { beta: x, lo, hi });
        }
        Ok(())
    }

    /// Index `j` of the interval `[x_j, x_{j+1})` holding `x`; the right endpoint
    /// belongs to the last interval.
    fn interval(&self, x: f64) -> usize {
        let n = self.points.len();
        let j = self.points.partition_point(|&(xk, _)| xk <= x);
        j.saturating_sub(1).min(n - 2)
    }

    fn segment_slope(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            chord(&self.points, j - 1)
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, EntropyError> {
        self.check_domain(x)?;
        let j = self.interval(x);
        Ok(self.knots[j] + self.segment_slope(j) * (x - self.points[j].0))
    }

    /// Right-hand derivative; the last segment's slope at the right endpoint.
    pub fn slope_at(&self, x: f64) -> Result<f64, EntropyError> {
        self.check_domain(x)?;
        Ok(self.segment_slope(self.interval(x)))
    }

    /// Curve values at the tabulated abscissae.
    pub fn knot_values(&self) -> &[f64] {
        &self.knots
    }
}

fn chord(points: &[(f64, f64)], k: usize) -> f64 {
    let (x0, y0) = points[k];
    let (x1, y1) = points[k + 1];
    (y1 - y0) / (x1 - x0)
}

fn validate_points(kind: BoundKind, points: &[(f64, f64)]) -> Result<(), EntropyError> {
    if points.len() < 2 {
        return Err(EntropyError::Table { row: points.len(), reason: "at least two points are required".into() });
    }
    for (row, w) in points.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(EntropyError::Table { row: row + 1, reason: "x must be strictly increasing".into() });
        }
    }
    for (row, &(x, y)) in points.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) {
            return Err(EntropyError::Table { row, reason: format!("winning probability {x} outside [0, 1]") });
        }
        if kind == BoundKind::TripartiteWinUpper && !(0.0..=1.0).contains(&y) {
            return Err(EntropyError::Table { row, reason: format!("probability bound {y} outside [0, 1]") });
        }
    }
    for (row, w) in points.windows(2).enumerate() {
        let dy = w[1].1 - w[0].1;
        let bad = match kind {
            BoundKind::TripartiteWinUpper => dy > TABLE_SLACK,
            BoundKind::VnLower => dy < -TABLE_SLACK,
        };
        if bad {
            let want = if kind == BoundKind::TripartiteWinUpper { "nonincreasing" } else { "nondecreasing" };
            return Err(EntropyError::Table { row: row + 1, reason: format!("values must be {want}") });
        }
    }
    for k in 1..points.len() - 1 {
        let (s0, s1) = (chord(points, k - 1), chord(points, k));
        let bad = match kind {
            BoundKind::TripartiteWinUpper => s1 > s0 + TABLE_SLACK,
            BoundKind::VnLower => s1 < s0 - TABLE_SLACK,
        };
        if bad {
            let want = if kind == BoundKind::TripartiteWinUpper { "concave" } else { "convex" };
            return Err(EntropyError::Table { row: k + 1, reason: format!("points are not {want}") });
        }
    }
    Ok(())
}

pub fn build_tripartite_upper_curve(points: Vec<(f64, f64)>) -> Result<BoundCurve, EntropyError> {
    BoundCurve::build(BoundKind::TripartiteWinUpper, points, String::new())
}

pub fn build_vn_lower_curve(points: Vec<(f64, f64)>) -> Result<BoundCurve, EntropyError> {
    BoundCurve::build(BoundKind::VnLower, points, String::new())
}

/// Min-tradeoff function on the test alphabet {lose, win, no test}, obtained
/// from an affine per-round bound `g` and testing probability `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MinTradeoff {
    /// Value on a lost test round.
    pub f0: f64,
    /// Value on a won test round.
    pub f1: f64,
    /// Value on a generation round.
    pub fbot: f64,
    pub gamma: f64,
    pub g_max: f64,
    pub g_min: f64,
}

impl MinTradeoff {
    pub fn max_f(&self) -> f64 {
        self.g_max
    }

    pub fn min_f(&self) -> f64 {
        (1.0 - 1.0 / self.gamma) * self.g_max + self.g_min / self.gamma
    }

    /// Lower bound on the minimum over achievable distributions.
    pub fn min_sigma_bound(&self) -> f64 {
        self.g_min
    }

    /// Upper bound on the variance over achievable distributions.
    pub fn var_bound(&self) -> f64 {
        (self.g_max - self.g_min).powi(2) / self.gamma
    }
}

pub fn min_tradeoff_from_g(g: &AffineBound, gamma: f64) -> Result<MinTradeoff, EntropyError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EntropyError::BadGamma(gamma));
    }
    if g.slope < 0.0 {
        return Err(EntropyError::Decreasing(g.slope));
    }
    let (g0, g1) = (g.eval(0.0), g.eval(1.0));
    Ok(MinTradeoff { f0: g1 + (g0 - g1) / gamma, f1: g1, fbot: g1, gamma, g_max: g1, g_min: g0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_endpoints() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn interval_lookup() {
        let c = build_tripartite_upper_curve(vec![(0.0, 1.0), (0.5, 0.9), (1.0, 0.5)]).unwrap();
        assert_eq!(c.interval(0.0), 0);
        assert_eq!(c.interval(0.49), 0);
        assert_eq!(c.interval(0.5), 1);
        assert_eq!(c.interval(1.0), 1);
    }

    #[test]
    fn kind_round_trip() {
        for k in [BoundKind::TripartiteWinUpper, BoundKind::VnLower] {
            assert_eq!(k.to_string().parse::<BoundKind>().unwrap(), k);
        }
    }

    #[test]
    fn constrained_tangent_value() {
        let g = AffineBound::constrained(0.9, 0.8, -1.0).unwrap();
        assert_abs_diff_eq!(g.eval(0.9), -(0.9f64).log2(), epsilon = 1e-15);
        assert_abs_diff_eq!(g.slope, 2.0 / (LN_2 * 0.9), epsilon = 1e-15);
    }
}
