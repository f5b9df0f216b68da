//! What low-rank skew-symmetric embeddings can represent.
//!
//! An item is embedded as one planar vector per subspace, stored in polar
//! form. The score of `i` over `j` is
//! `sum_l L_il * L_jl * sin(phi_jl - phi_il)`, which equals the bilinear form
//! `v_i^T R v_j` of the Cartesian embedding with block-diagonal
//! `R = [[0, 1], [-1, 0]]`.
//!
//! A preference counts as strict when its score exceeds [`STRICT_MARGIN`].
//! Angle grids use [`GRID_STEPS`] points on the circle followed by a local
//! refinement.

use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{PrefError, Result};
use crate::models::gated_skew_form;
use crate::rng::substream;

pub const STRICT_MARGIN: f64 = 1e-9;
pub const GRID_STEPS: usize = 3600;

/// Polar embedding of `n` items in `d` planar subspaces (row-major, item by
/// subspace).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanarJson", into = "PlanarJson")]
pub struct PlanarEmbedding {
    n: usize,
    d: usize,
    magnitude: Vec<f64>,
    angle: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PlanarJson {
    items: usize,
    subspaces: usize,
    magnitude: Vec<f64>,
    angle: Vec<f64>,
}

impl TryFrom<PlanarJson> for PlanarEmbedding {
    type Error = PrefError;
    fn try_from(j: PlanarJson) -> Result<Self> {
        PlanarEmbedding::new(j.items, j.subspaces, j.magnitude, j.angle)
    }
}

impl From<PlanarEmbedding> for PlanarJson {
    fn from(e: PlanarEmbedding) -> Self {
        PlanarJson { items: e.n, subspaces: e.d, magnitude: e.magnitude, angle: e.angle }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl PlanarEmbedding {
    pub fn new(n: usize, d: usize, magnitude: Vec<f64>, angle: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(PrefError::domain("need at least one subspace"));
        }
        crate::error::check_len(n * d, magnitude.len())?;
        crate::error::check_len(n * d, angle.len())?;
        if magnitude.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(PrefError::domain("magnitudes must be finite and non-negative"));
        }
        if angle.iter().any(|a| !(0.0..TAU).contains(a)) {
            return Err(PrefError::domain("angles must lie in [0, 2pi)"));
        }
        Ok(Self { n, d, magnitude, angle })
    }

    /// Like [`PlanarEmbedding::new`] but reduces angles modulo 2pi.
    pub fn wrapped(n: usize, d: usize, magnitude: Vec<f64>, angle: Vec<f64>) -> Result<Self> {
        if angle.iter().any(|a| !a.is_finite()) {
            return Err(PrefError::domain("angles must be finite"));
        }
        Self::new(n, d, magnitude, angle.into_iter().map(wrap_angle).collect())
    }

    /// From Cartesian vectors `(x_1, y_1, ..., x_d, y_d)`, one per item.
    pub fn from_cartesian(d: usize, vectors: &[Vec<f64>]) -> Result<Self> {
        let mut magnitude = Vec::with_capacity(vectors.len() * d);
        let mut angle = Vec::with_capacity(vectors.len() * d);
        for v in vectors {
            crate::error::check_len(2 * d, v.len())?;
            for l in 0..d {
                let (x, y) = (v[2 * l], v[2 * l + 1]);
                magnitude.push(x.hypot(y));
                angle.push(y.atan2(x));
            }
        }
        Self::wrapped(vectors.len(), d, magnitude, angle)
    }

    pub fn items(&self) -> usize {
        self.n
    }

    pub fn subspaces(&self) -> usize {
        self.d
    }

    pub fn magnitude(&self, i: usize, l: usize) -> f64 {
        self.magnitude[i * self.d + l]
    }

    pub fn angle(&self, i: usize, l: usize) -> f64 {
        self.angle[i * self.d + l]
    }

    pub fn to_cartesian(&self, i: usize) -> Vec<f64> {
        (0..self.d)
            .flat_map(|l| {
                let (m, a) = (self.magnitude(i, l), self.angle(i, l));
                [m * a.cos(), m * a.sin()]
            })
            .collect()
    }

    pub fn score_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| geometric_score(self, i, j)).collect())
            .collect()
    }
}

/// Logit score of item `i` over item `j`.
///
/// Panics if an index is out of range.
pub fn geometric_score(e: &PlanarEmbedding, i: usize, j: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    (0..e.d)
        .map(|l| e.magnitude(i, l) * e.magnitude(j, l) * (e.angle(j, l) - e.angle(i, l)).sin())
        .sum()
}

/// Required strict preferences: `+1` at `(i, j)` means `i` must beat `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<i8>>", into = "Vec<Vec<i8>>")]
pub struct SignPattern {
    signs: Vec<Vec<i8>>,
}

impl TryFrom<Vec<Vec<i8>>> for SignPattern {
    type Error = PrefError;
    fn try_from(rows: Vec<Vec<i8>>) -> Result<Self> {
        SignPattern::new(rows)
    }
}

impl From<SignPattern> for Vec<Vec<i8>> {
    fn from(p: SignPattern) -> Self {
        p.signs
    }
}

impl SignPattern {
    pub fn new(signs: Vec<Vec<i8>>) -> Result<Self> {
        let n = signs.len();
        for (i, row) in signs.iter().enumerate() {
            crate::error::check_len(n, row.len())?;
            for (j, &s) in row.iter().enumerate() {
                if !(-1..=1).contains(&s) {
                    return Err(PrefError::domain(format!("sign {s} at ({i}, {j})")));
                }
                if s != -signs[j][i] {
                    return Err(PrefError::domain(format!("pattern not antisymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { signs })
    }

    /// `n` unconstrained items.
    pub fn empty(n: usize) -> Self {
        Self { signs: vec![vec![0; n]; n] }
    }

    /// Require `winner` to beat `loser`.
    pub fn require(&mut self, winner: usize, loser: usize) -> Result<()> {
        let n = self.len();
        if winner >= n || loser >= n || winner == loser {
            return Err(PrefError::domain(format!("bad pair ({winner}, {loser}) for {n} items")));
        }
        self.signs[winner][loser] = 1;
        self.signs[loser][winner] = -1;
        Ok(())
    }

    /// Item `i` beats item `i + 1 (mod n)`.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(PrefError::domain("a cycle needs at least 3 items"));
        }
        let mut p = Self::empty(n);
        for i in 0..n {
            p.require(i, (i + 1) % n)?;
        }
        Ok(p)
    }

    /// Rock-paper-scissors: the 3-cycle.
    pub fn rps() -> Self {
        Self::cycle(3).expect("3 items")
    }

    /// A cycle on items `0..n` plus item `n`, which beats every cycle item.
    pub fn dominant_cycle(n: usize) -> Result<Self> {
        let cycle = Self::cycle(n)?;
        let mut p = Self::empty(n + 1);
        for i in 0..n {
            p.signs[i][..n].copy_from_slice(&cycle.signs[i]);
            p.require(n, i)?;
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.signs[i][j]
    }

    /// Constrained unordered pairs `(winner, loser)`.
    pub fn constraints(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                match self.signs[i][j] {
                    1 => out.push((i, j)),
                    -1 => out.push((j, i)),
                    _ => {}
                }
            }
        }
        out
    }

    /// `(satisfied, constrained)`: a constraint holds when the winner's score
    /// over the loser exceeds [`STRICT_MARGIN`].
    pub fn check(&self, score: impl Fn(usize, usize) -> f64) -> (usize, usize) {
        let cons = self.constraints();
        let ok = cons.iter().filter(|&&(w, l)| score(w, l) > STRICT_MARGIN).count();
        (ok, cons.len())
    }

    /// Fraction of constraints satisfied (1.0 when nothing is constrained).
    pub fn accuracy(&self, score: impl Fn(usize, usize) -> f64) -> f64 {
        let (ok, total) = self.check(score);
        if total == 0 {
            1.0
        } else {
            ok as f64 / total as f64
        }
    }
}

/// Machine-readable outcome of a construction or feasibility check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub construction: String,
    pub parameters: serde_json::Value,
    pub scores: Vec<Vec<f64>>,
    pub feasibility: bool,
    pub margin: Option<f64>,
}

/// Dominant item over an `n`-cycle in two subspaces.
///
/// Cycle items are `0..n` (item `k` is `A_{k+1}`, at angle
/// `2pi(k+1)/n` in subspace 1 and angle 0 in subspace 2). Item `n` is the
/// dominant: magnitude 0 in subspace 1, angle `-pi/2` in subspace 2.
pub fn build_dominant_cycle_d2(n: usize) -> Result<PlanarEmbedding> {
    if n < 3 {
        return Err(PrefError::domain(format!("cycle size must be at least 3, got {n}")));
    }
    let mut magnitude = Vec::with_capacity(2 * (n + 1));
    let mut angle = Vec::with_capacity(2 * (n + 1));
    for k in 0..n {
        magnitude.extend([1.0, 1.0]);
        angle.extend([TAU * (k + 1) as f64 / n as f64, 0.0]);
    }
    magnitude.extend([0.0, 1.0]);
    angle.extend([0.0, -PI / 2.0]);
    PlanarEmbedding::wrapped(n + 1, 2, magnitude, angle)
}

pub fn dominant_cycle_report(n: usize) -> Result<WitnessReport> {
    let e = build_dominant_cycle_d2(n)?;
    let pattern = SignPattern::dominant_cycle(n)?;
    let score = |i, j| geometric_score(&e, i, j);
    let margin = pattern.constraints().iter().map(|&(w, l)| score(w, l)).fold(f64::INFINITY, f64::min);
    let (ok, total) = pattern.check(score);
    Ok(WitnessReport {
        construction: "dominant_cycle_d2".into(),
        parameters: json!({ "n": n, "d": 2, "embedding": e }),
        scores: e.score_matrix(),
        feasibility: ok == total,
        margin: Some(margin),
    })
}

/// Result of the one-subspace dominance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemicircleReport {
    pub feasible: bool,
    pub witness: Option<f64>,
    pub margin: f64,
}

/// Can a single planar dominant beat every item at the given angles (unit
/// magnitudes, one subspace)?
///
/// The dominant at angle `delta` beats item `i` with score
/// `sin(theta_i - delta)`, so it must see every item within an open
/// half-turn. The best `delta` sits a quarter-turn behind the middle of the
/// smallest arc covering all items, and the achieved margin is
/// `cos(arc / 2)`.
pub fn d1_dominant_feasible(angles: &[f64]) -> Result<SemicircleReport> {
    if angles.is_empty() {
        return Err(PrefError::domain("need at least one angle"));
    }
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(PrefError::domain("angles must be finite"));
    }
    let mut sorted: Vec<f64> = angles.iter().map(|&a| wrap_angle(a)).collect();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    // the covering arc starts just after the largest gap
    let (mut start, mut gap) = (sorted[0], sorted[0] + TAU - sorted[k - 1]);
    for w in sorted.windows(2) {
        if w[1] - w[0] > gap {
            gap = w[1] - w[0];
            start = w[1];
        }
    }
    let spread = TAU - gap;
    let witness = wrap_angle(start + spread / 2.0 - PI / 2.0);
    let margin = angles.iter().map(|a| (a - witness).sin()).fold(f64::INFINITY, f64::min);
    let feasible = margin > STRICT_MARGIN;
    Ok(SemicircleReport { feasible, witness: feasible.then_some(witness), margin })
}

pub fn d1_report(angles: &[f64]) -> Result<WitnessReport> {
    let r = d1_dominant_feasible(angles)?;
    let n = angles.len();
    let mut all: Vec<f64> = angles.to_vec();
    all.push(r.witness.unwrap_or(0.0));
    let e = PlanarEmbedding::wrapped(n + 1, 1, vec![1.0; n + 1], all)?;
    Ok(WitnessReport {
        construction: "d1_dominant".into(),
        parameters: json!({ "angles": angles, "witness": r.witness }),
        scores: e.score_matrix(),
        feasibility: r.feasible,
        margin: Some(r.margin),
    })
}

/// Result of the aligned hard-cycle check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardCycleReport {
    pub n: usize,
    pub d: usize,
    pub max_min_score: f64,
    pub best_phase: f64,
    pub feasible: bool,
}

fn min_shifted_sine(thetas: &[f64], delta: f64) -> f64 {
    thetas.iter().map(|t| (t + delta).sin()).fold(f64::INFINITY, f64::min)
}

/// Maximize a function of one angle: grid of [`GRID_STEPS`] points, then a
/// golden-section refinement around the best grid point.
fn maximize_on_circle(f: impl Fn(f64) -> f64) -> (f64, f64) {
    let h = TAU / GRID_STEPS as f64;
    let (mut best_x, mut best) = (0.0, f(0.0));
    for k in 1..GRID_STEPS {
        let x = k as f64 * h;
        let v = f(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    let (mut a, mut b) = (best_x - h, best_x + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x);
    if v > best {
        (wrap_angle(x), v)
    } else {
        (best_x, best)
    }
}

/// The cycle whose items share angles `theta_i = 2pi i / n` in every
/// subspace. Against it, any dominant embedding scores
/// `sum_l A_l sin(theta_i - delta_l) = A sin(theta_i + delta)` for some
/// amplitude `A >= 0` and phase `delta`, so dominance is possible only if
/// `max_delta min_i sin(theta_i + delta) > 0`.
pub fn hard_cycle_infeasibility(n: usize, d: usize) -> Result<HardCycleReport> {
    if n < 2 {
        return Err(PrefError::domain(format!("cycle size must be at least 2, got {n}")));
    }
    if d == 0 {
        return Err(PrefError::domain("need at least one subspace"));
    }
    let thetas: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
    let (best_phase, max_min_score) = maximize_on_circle(|delta| min_shifted_sine(&thetas, delta));
    Ok(HardCycleReport { n, d, max_min_score, best_phase, feasible: max_min_score > STRICT_MARGIN })
}

pub fn hard_cycle_report(n: usize, d: usize) -> Result<WitnessReport> {
    let r = hard_cycle_infeasibility(n, d)?;
    // realise the best dominant: unit amplitude in subspace 1, phase -delta
    let mut magnitude = Vec::with_capacity((n + 1) * d);
    let mut angle = Vec::with_capacity((n + 1) * d);
    for i in 0..n {
        magnitude.extend(std::iter::repeat(1.0).take(d));
        angle.extend(std::iter::repeat(TAU * i as f64 / n as f64).take(d));
    }
    magnitude.push(1.0);
    magnitude.extend(std::iter::repeat(0.0).take(d - 1));
    angle.push(-r.best_phase);
    angle.extend(std::iter::repeat(0.0).take(d - 1));
    let e = PlanarEmbedding::wrapped(n + 1, d, magnitude, angle)?;
    Ok(WitnessReport {
        construction: "hard_cycle".into(),
        parameters: json!({ "n": n, "d": d, "best_phase": r.best_phase }),
        scores: e.score_matrix(),
        feasibility: r.feasible,
        margin: Some(r.max_min_score),
    })
}

/// Settings for [`pattern_capacity_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub restarts: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Logistic sharpness of the surrogate loss.
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { restarts: 16, iterations: 400, learning_rate: 0.2, sharpness: 8.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub accuracy: f64,
    pub satisfied: usize,
    pub constrained: usize,
    pub restart: usize,
    pub embedding: PlanarEmbedding,
}

fn project_unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn one_restart(pattern: &SignPattern, d: usize, cfg: &SearchConfig, restart: usize) -> (usize, Vec<Vec<f64>>) {
    let mut rng = substream(cfg.seed, &format!("restart/{restart}"));
    let n = pattern.len();
    let cons = pattern.constraints();
    let ones = vec![1.0; d];
    let mut vs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..2 * d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            project_unit(&mut v);
            v
        })
        .collect();
    let count = |vs: &[Vec<f64>]| {
        cons.iter().filter(|&&(w, l)| gated_skew_form(&ones, &vs[w], &vs[l]) > STRICT_MARGIN).count()
    };
    let (mut best, mut best_vs) = (count(&vs), vs.clone());
    for _ in 0..cfg.iterations {
        if best == cons.len() {
            break;
        }
        let mut grads = vec![vec![0.0; 2 * d]; n];
        for &(w, l) in &cons {
            let s = gated_skew_form(&ones, &vs[w], &vs[l]);
            // d/ds log(1 + exp(-k s)) = -k sigmoid(-k s)
            let g = -cfg.sharpness * crate::preference::sigmoid(-cfg.sharpness * s);
            for b in 0..d {
                let (x, y) = (2 * b, 2 * b + 1);
                grads[w][x] += g * vs[l][y];
                grads[w][y] -= g * vs[l][x];
                grads[l][y] += g * vs[w][x];
                grads[l][x] -= g * vs[w][y];
            }
        }
        for (v, g) in vs.iter_mut().zip(&grads) {
            v.iter_mut().zip(g).for_each(|(p, gi)| *p -= cfg.learning_rate * gi);
            project_unit(v);
        }
        let c = count(&vs);
        if c > best {
            best = c;
            best_vs = vs.clone();
        }
    }
    (best, best_vs)
}

/// Multi-restart projected gradient search for an embedding in `d`
/// subspaces that satisfies as many required strict preferences as possible.
///
/// Each item is a unit vector in `R^{2d}`; restart `k` draws its start from
/// the substream `restart/k` of `config.seed`, so results do not depend on
/// how restarts are scheduled.
pub fn pattern_capacity_search(pattern: &SignPattern, d: usize, config: &SearchConfig) -> Result<CapacityResult> {
    if d == 0 {
        return Err(PrefError::domain("need at least one subspace"));
    }
    if config.restarts == 0 {
        return Err(PrefError::domain("need at least one restart"));
    }
    let total = pattern.constraints().len();
    let mut best: Option<(usize, usize, Vec<Vec<f64>>)> = None;
    for r in 0..config.restarts {
        let (c, vs) = one_restart(pattern, d, config, r);
        if best.as_ref().map_or(true, |b| c > b.0) {
            best = Some((c, r, vs));
        }
        if c == total {
            break;
        }
    }
    let (satisfied, restart, vs) = best.expect("at least one restart");
    let embedding = PlanarEmbedding::from_cartesian(d, &vs)?;
    // recount on the polar form so the reported embedding backs the number
    let (satisfied_polar, constrained) = pattern.check(|i, j| geometric_score(&embedding, i, j));
    let satisfied = satisfied.min(satisfied_polar);
    let accuracy = if constrained == 0 { 1.0 } else { satisfied as f64 / constrained as f64 };
    Ok(CapacityResult { accuracy, satisfied, constrained, restart, embedding })
}
