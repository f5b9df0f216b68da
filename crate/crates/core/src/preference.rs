//! Scores, probabilities and policy-level win rates.
//!
//! Scores (logits) are the canonical representation of a game. A
//! [`PreferenceScoreMatrix`] stores only its strict upper triangle and
//! mirrors it, so skew-symmetry holds bit-for-bit. Probabilities are derived
//! views.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_len, PrefError, Result};

/// Tolerance used by the validating constructors.
pub const SKEW_TOL: f64 = 1e-12;

/// Logistic function, evaluated without overflow for large |s|.
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(s) - 1/2`, computed as `tanh(s/2)/2` so that it is exactly odd.
pub(crate) fn centered_sigmoid(s: f64) -> f64 {
    0.5 * (0.5 * s).tanh()
}

pub fn score_to_prob(s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(PrefError::domain(format!("score must be finite, got {s}")));
    }
    Ok(sigmoid(s))
}

/// Logit of a win probability. Hard labels (0 or 1) are rejected rather than
/// clamped.
pub fn prob_to_score(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PrefError::domain(format!(
            "probability must lie strictly inside (0, 1), got {p}"
        )));
    }
    // ln(p) - ln1p(-p) keeps precision close to both ends of the interval.
    Ok(p.ln() - (-p).ln_1p())
}

/// Number of entries in the strict upper triangle of an `n x n` matrix.
pub fn upper_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// An `n x n` skew-symmetric matrix of pairwise logit scores; entry `(i, j)`
/// is the score of response `i` against response `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl PreferenceScoreMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Builds the matrix from its row-major strict upper triangle.
    pub fn from_upper(n: usize, upper: &[f64]) -> Result<Self> {
        check_len(upper_len(n), upper.len())?;
        if let Some(bad) = upper.iter().find(|v| !v.is_finite()) {
            return Err(PrefError::domain(format!("non-finite score {bad}")));
        }
        let mut m = Self::zeros(n);
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                m.set_pair(i, j, upper[k]);
                k += 1;
            }
        }
        Ok(m)
    }

    /// Builds the matrix from `score(i, j)` evaluated for `i < j`.
    pub fn from_fn(n: usize, mut score: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut upper = Vec::with_capacity(upper_len(n));
        for i in 0..n {
            for j in (i + 1)..n {
                upper.push(score(i, j));
            }
        }
        Self::from_upper(n, &upper)
    }

    /// Validating constructor for a full matrix. Rejects anything that is not
    /// square, finite and skew-symmetric to within [`SKEW_TOL`].
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for row in rows {
            check_len(n, row.len())?;
        }
        for i in 0..n {
            for j in i..n {
                let (a, b) = (rows[i][j], rows[j][i]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(PrefError::domain(format!("non-finite score at ({i}, {j})")));
                }
                if (a + b).abs() > SKEW_TOL {
                    return Err(PrefError::domain(format!(
                        "not skew-symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Self::from_fn(n, |i, j| rows[i][j])
    }

    fn set_pair(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = -v;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(upper_len(self.n));
        for i in 0..self.n {
            out.extend_from_slice(&self.row(i)[i + 1..]);
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_dot(&self, other: &Self) -> Result<f64> {
        check_len(self.n, other.n)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// `a * self + b * other`, computed on the upper triangle and mirrored.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        check_len(self.n, other.n)?;
        Self::from_fn(self.n, |i, j| a * self.get(i, j) + b * other.get(i, j))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_len(self.n, other.n)?;
        Self::from_fn(self.n, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_len(self.n, other.n)?;
        Self::from_fn(self.n, |i, j| self.get(i, j) - other.get(i, j))
    }

    pub fn probabilities(&self) -> ProbabilityMatrix {
        ProbabilityMatrix::from_scores(self)
    }

    /// The rock-paper-scissors game with unit scores.
    pub fn rock_paper_scissors() -> Self {
        Self::from_upper(3, &[1.0, -1.0, 1.0]).expect("valid constant")
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreMatrixJson {
    n: usize,
    upper: Vec<f64>,
}

impl Serialize for PreferenceScoreMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ScoreMatrixJson { n: self.n, upper: self.upper() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PreferenceScoreMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = ScoreMatrixJson::deserialize(deserializer)?;
        PreferenceScoreMatrix::from_upper(raw.n, &raw.upper).map_err(serde::de::Error::custom)
    }
}

/// Pairwise win probabilities `p[i][j] = sigmoid(s[i][j])`.
///
/// Only the upper triangle is evaluated; the lower one is stored as its
/// complement so `p[i][j] + p[j][i] == 1` as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn from_scores(scores: &PreferenceScoreMatrix) -> Self {
        let n = scores.n();
        let mut data = vec![0.5; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let p = sigmoid(scores.get(i, j));
                data[i * n + j] = p;
                data[j * n + i] = 1.0 - p;
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Converts back to scores; fails if any entry is a hard label.
    pub fn to_scores(&self) -> Result<PreferenceScoreMatrix> {
        let mut upper = Vec::with_capacity(upper_len(self.n));
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                upper.push(prob_to_score(self.get(i, j))?);
            }
        }
        PreferenceScoreMatrix::from_upper(self.n, &upper)
    }
}

/// Probability vector over a finite response set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TabularPolicy {
    p: Vec<f64>,
}

impl TabularPolicy {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(PrefError::domain("policy over an empty response set"));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PrefError::domain("policy entries must be finite and non-negative"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(PrefError::domain(format!("policy sums to {total}, not 1")));
        }
        Ok(Self { p })
    }

    /// Normalises non-negative weights onto the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PrefError::State("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(PrefError::State("weights sum to zero".into()));
        }
        Ok(Self { p: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn uniform(n: usize) -> Self {
        Self { p: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut p = vec![0.0; n];
        p[at] = 1.0;
        Self { p }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn entropy(&self) -> f64 {
        -self.p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.p.iter().zip(&other.p).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub(crate) fn from_raw(p: Vec<f64>) -> Self {
        Self { p }
    }
}

impl TryFrom<Vec<f64>> for TabularPolicy {
    type Error = PrefError;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

impl From<TabularPolicy> for Vec<f64> {
    fn from(policy: TabularPolicy) -> Self {
        policy.p
    }
}

/// `P(y_i > pi) = sum_j pi[j] * sigmoid(M[i][j])`.
pub fn win_prob_vs_policy(m: &PreferenceScoreMatrix, i: usize, pi: &TabularPolicy) -> Result<f64> {
    check_len(m.n(), pi.len())?;
    if i >= m.n() {
        return Err(PrefError::domain(format!("response index {i} out of range 0..{}", m.n())));
    }
    let advantage: f64 = m
        .row(i)
        .iter()
        .zip(pi.probs())
        .map(|(s, w)| w * centered_sigmoid(*s))
        .sum();
    Ok(0.5 + advantage)
}

/// `P(pi > pi') = pi^T sigmoid(M) pi'`.
///
/// Evaluated as `1/2 + sum_{i<j} (pi_i pi'_j - pi_j pi'_i) (sigmoid(M_ij) - 1/2)`,
/// which returns exactly `0.5` when both arguments are the same policy.
pub fn policy_vs_policy(
    m: &PreferenceScoreMatrix,
    pi: &TabularPolicy,
    other: &TabularPolicy,
) -> Result<f64> {
    check_len(m.n(), pi.len())?;
    check_len(m.n(), other.len())?;
    let (a, b) = (pi.probs(), other.probs());
    let mut total = 0.0;
    for i in 0..m.n() {
        for j in (i + 1)..m.n() {
            total += (a[i] * b[j] - a[j] * b[i]) * centered_sigmoid(m.get(i, j));
        }
    }
    Ok(0.5 + total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn score_prob_anchors() {
        assert_eq!(score_to_prob(0.0).unwrap(), 0.5);
        assert_abs_diff_eq!(score_to_prob(3f64.ln()).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(score_to_prob(-(3f64.ln())).unwrap(), 0.25, epsilon = 1e-15);
        assert!(score_to_prob(f64::NAN).is_err());
        assert!(score_to_prob(f64::INFINITY).is_err());

        assert_eq!(prob_to_score(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(prob_to_score(0.75).unwrap(), 3f64.ln(), epsilon = 1e-15);
        // logit(1 - 1e-7) = ln(9_999_999)
        let near = prob_to_score(0.9999999).unwrap();
        assert_abs_diff_eq!(near, 9_999_999f64.ln(), epsilon = 1e-8);
        assert!((near - 16.118).abs() < 1e-3);
    }

    #[test]
    fn hard_labels_are_rejected() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(prob_to_score(p), Err(PrefError::Domain(_))), "{p}");
        }
    }

    #[test]
    fn round_trip_grid() {
        for k in 0..1000 {
            let s = -20.0 + 40.0 * k as f64 / 999.0;
            let p = score_to_prob(s).unwrap();
            let back = prob_to_score(p).unwrap();
            // Storing p near 1 keeps only an absolute 2^-53 of 1 - p, so the
            // recovered logit is only as good as that rounding allows there.
            let conditioning = f64::EPSILON / (1.0 - p).min(p);
            let tol = 1e-10_f64.max(2.0 * conditioning);
            assert!((back - s).abs() <= tol, "{s} -> {back}");
            if s <= 13.0 {
                assert!((back - s).abs() <= 1e-10, "{s} -> {back}");
            }
        }
        for k in 0..=1000 {
            let p = 1e-6 + (1.0 - 2e-6) * k as f64 / 1000.0;
            let back = score_to_prob(prob_to_score(p).unwrap()).unwrap();
            assert!((back - p).abs() <= 1e-12, "{p} -> {back}");
        }
    }

    #[test]
    fn validating_constructor() {
        let rps = PreferenceScoreMatrix::rock_paper_scissors();
        assert_eq!(rps.to_rows(), vec![
            vec![0.0, 1.0, -1.0],
            vec![-1.0, 0.0, 1.0],
            vec![1.0, -1.0, 0.0],
        ]);
        assert_eq!(PreferenceScoreMatrix::from_rows(&rps.to_rows()).unwrap(), rps);

        let mut bad = rps.to_rows();
        bad[0][1] += 1e-9;
        assert!(PreferenceScoreMatrix::from_rows(&bad).is_err());
        let mut diag = rps.to_rows();
        diag[1][1] = 0.5;
        assert!(PreferenceScoreMatrix::from_rows(&diag).is_err());
        assert!(PreferenceScoreMatrix::from_rows(&[vec![0.0, 1.0]]).is_err());
        assert!(PreferenceScoreMatrix::from_upper(2, &[f64::NAN]).is_err());
        assert!(PreferenceScoreMatrix::from_upper(3, &[1.0]).is_err());
    }

    #[test]
    fn json_schema() {
        let rps = PreferenceScoreMatrix::rock_paper_scissors();
        let text = serde_json::to_string(&rps).unwrap();
        assert_eq!(text, r#"{"n":3,"upper":[1.0,-1.0,1.0]}"#);
        let back: PreferenceScoreMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rps);
        assert!(serde_json::from_str::<PreferenceScoreMatrix>(r#"{"n":3,"upper":[1.0]}"#).is_err());
    }

    #[test]
    fn probability_matrix_complements() {
        let m = PreferenceScoreMatrix::from_upper(3, &[0.3, -2.0, 7.5]).unwrap();
        let p = m.probabilities();
        for i in 0..3 {
            assert_eq!(p.get(i, i), 0.5);
            for j in 0..3 {
                assert_eq!(p.get(i, j) + p.get(j, i), 1.0);
            }
        }
        let back = p.to_scores().unwrap();
        for (a, b) in back.upper().iter().zip(m.upper()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn win_probabilities() {
        let rps = PreferenceScoreMatrix::rock_paper_scissors();
        let uniform = TabularPolicy::uniform(3);
        assert_eq!(win_prob_vs_policy(&rps, 0, &uniform).unwrap(), 0.5);

        let m = PreferenceScoreMatrix::from_upper(3, &[2.0, 2.0, -0.7]).unwrap();
        for j in 0..3 {
            let got = win_prob_vs_policy(&m, 1, &TabularPolicy::point_mass(3, j)).unwrap();
            assert_abs_diff_eq!(got, sigmoid(m.get(1, j)), epsilon = 1e-15);
        }
        let expected = (0.5 + 2.0 * sigmoid(2.0)) / 3.0;
        assert_abs_diff_eq!(win_prob_vs_policy(&m, 0, &uniform).unwrap(), expected, epsilon = 1e-15);
        assert!((expected - 0.75387).abs() < 1e-5);

        assert!(matches!(
            win_prob_vs_policy(&m, 0, &TabularPolicy::uniform(4)),
            Err(PrefError::Shape { .. })
        ));
        assert!(win_prob_vs_policy(&m, 3, &uniform).is_err());
    }

    #[test]
    fn policy_games() {
        let rps = PreferenceScoreMatrix::rock_paper_scissors();
        let uniform = TabularPolicy::uniform(3);
        for j in 0..3 {
            let mass = TabularPolicy::point_mass(3, j);
            assert_abs_diff_eq!(policy_vs_policy(&rps, &uniform, &mass).unwrap(), 0.5, epsilon = 1e-15);
            for i in 0..3 {
                let got = policy_vs_policy(&rps, &TabularPolicy::point_mass(3, i), &mass).unwrap();
                assert_abs_diff_eq!(got, sigmoid(rps.get(i, j)), epsilon = 1e-15);
            }
        }
        assert!(policy_vs_policy(&rps, &uniform, &TabularPolicy::uniform(2)).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(TabularPolicy::new(vec![0.5, 0.5]).is_ok());
        assert!(TabularPolicy::new(vec![0.5, 0.6]).is_err());
        assert!(TabularPolicy::new(vec![1.5, -0.5]).is_err());
        assert!(TabularPolicy::new(vec![]).is_err());
        assert!(serde_json::from_str::<TabularPolicy>("[0.2,0.2]").is_err());
        let p = TabularPolicy::from_weights(vec![1.0, 3.0]).unwrap();
        assert_eq!(p.probs(), &[0.25, 0.75]);
    }

    fn skew_and_policies(max_n: usize) -> impl Strategy<Value = (PreferenceScoreMatrix, TabularPolicy, TabularPolicy)> {
        (2..max_n).prop_flat_map(|n| {
            (
                prop::collection::vec(-8.0f64..8.0, upper_len(n)),
                prop::collection::vec(0.01f64..1.0, n),
                prop::collection::vec(0.01f64..1.0, n),
            )
                .prop_map(move |(u, a, b)| {
                    (
                        PreferenceScoreMatrix::from_upper(n, &u).unwrap(),
                        TabularPolicy::from_weights(a).unwrap(),
                        TabularPolicy::from_weights(b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn self_play_is_an_exact_tie((m, pi, _) in skew_and_policies(12)) {
            prop_assert_eq!(policy_vs_policy(&m, &pi, &pi).unwrap(), 0.5);
        }

        #[test]
        fn policy_game_is_constant_sum((m, a, b) in skew_and_policies(12)) {
            let total = policy_vs_policy(&m, &a, &b).unwrap() + policy_vs_policy(&m, &b, &a).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-14);
        }

        #[test]
        fn policy_game_matches_direct_sum((m, a, b) in skew_and_policies(8)) {
            let p = m.probabilities();
            let mut direct = 0.0;
            for i in 0..m.n() {
                for j in 0..m.n() {
                    direct += a.probs()[i] * b.probs()[j] * p.get(i, j);
                }
            }
            prop_assert!((policy_vs_policy(&m, &a, &b).unwrap() - direct).abs() < 1e-13);
        }

        #[test]
        fn sigmoid_is_quarter_lipschitz(x in -50.0f64..50.0, y in -50.0f64..50.0) {
            prop_assert!((sigmoid(x) - sigmoid(y)).abs() <= (x - y).abs() / 4.0 + 1e-16);
        }
    }
}
