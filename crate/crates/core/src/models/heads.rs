use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dense::{dot, norm, Dense};
use super::{softplus, softplus_inv};
use crate::error::{check_len, PrefError, Result};
use crate::preference::sigmoid;
use crate::rng::Rng;

/// Reward clip bound used when none is configured.
pub const DEFAULT_CLIP: f64 = 10.0;
/// Loss temperature.
pub const DEFAULT_TAU: f64 = 0.1;
/// Embeddings are normalised against `max(|u|, NORM_EPS)`.
pub const NORM_EPS: f64 = 1e-12;

/// Scalar reward head: `r(h) = clip(w_r . h, -delta, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtModel {
    pub w_r: Vec<f64>,
    pub clip: Option<f64>,
}

impl BtModel {
    pub fn new(w_r: Vec<f64>, clip: Option<f64>) -> Result<Self> {
        let model = Self { w_r, clip };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.w_r.iter().any(|v| !v.is_finite()) {
            return Err(PrefError::domain("reward weights must be finite"));
        }
        match self.clip {
            Some(d) if !(d > 0.0) => Err(PrefError::domain(format!("clip bound must be positive, got {d}"))),
            _ => Ok(()),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w_r.len()
    }

    /// Clipped reward and whether the clip is inactive (gradient flows).
    fn reward_with_slope(&self, h: &[f64]) -> (f64, bool) {
        let raw = dot(&self.w_r, h);
        match self.clip {
            Some(d) if raw >= d => (d, false),
            Some(d) if raw <= -d => (-d, false),
            _ => (raw, true),
        }
    }

    pub fn reward(&self, h: &[f64]) -> Result<f64> {
        check_len(self.w_r.len(), h.len())?;
        Ok(self.reward_with_slope(h).0)
    }

    pub fn score(&self, h_w: &[f64], h_l: &[f64]) -> Result<f64> {
        Ok(self.reward(h_w)? - self.reward(h_l)?)
    }

    fn backward(&self, h_w: &[f64], h_l: &[f64], upstream: f64, acc: &mut BtModel, g_w: &mut [f64], g_l: &mut [f64]) {
        for (h, sign, g_h) in [(h_w, 1.0, g_w), (h_l, -1.0, g_l)] {
            let (_, active) = self.reward_with_slope(h);
            if active {
                let g = sign * upstream;
                for (a, x) in acc.w_r.iter_mut().zip(h) {
                    *a += g * x;
                }
                for (gh, w) in g_h.iter_mut().zip(&self.w_r) {
                    *gh += g * w;
                }
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut f64> {
        self.w_r.iter_mut().collect()
    }

    fn zeroed(&self) -> Self {
        Self { w_r: vec![0.0; self.w_r.len()], clip: self.clip }
    }
}

/// Context gate `lambda(x) = softplus(W x + b)`, one value per 2-D subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingHead {
    pub weight: Dense,
    pub bias: Vec<f64>,
}

impl GatingHead {
    /// A gate that ignores the context and always returns `value`.
    pub fn constant(subspaces: usize, context_dim: usize, value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return Err(PrefError::domain("softplus gates are strictly positive"));
        }
        Ok(Self { weight: Dense::zeros(subspaces, context_dim), bias: vec![softplus_inv(value); subspaces] })
    }

    pub fn subspaces(&self) -> usize {
        self.bias.len()
    }

    pub fn context_dim(&self) -> usize {
        self.weight.cols()
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weight.matvec(x);
        for (z, b) in z.iter_mut().zip(&self.bias) {
            *z += b;
        }
        z
    }

    pub fn gates(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.context_dim(), x.len())?;
        Ok(self.pre_activation(x).into_iter().map(softplus).collect())
    }
}

/// Gated skew-symmetric bilinear head over `2d`-dimensional embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpmModel {
    /// `W_c`, shape `2d x m`.
    pub projection: Dense,
    pub gate: GatingHead,
    pub unit_norm: bool,
}

impl GpmModel {
    pub fn new(projection: Dense, gate: GatingHead, unit_norm: bool) -> Result<Self> {
        let model = Self { projection, gate, unit_norm };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.projection.rows() % 2 != 0 || self.projection.rows() == 0 {
            return Err(PrefError::domain("embedding dimension must be a positive even number"));
        }
        check_len(self.projection.rows() / 2, self.gate.subspaces())?;
        check_len(self.gate.subspaces(), self.gate.weight.rows())?;
        let finite = self.projection.data().iter().chain(self.gate.weight.data()).chain(&self.gate.bias);
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(PrefError::domain("GPM parameters must be finite"));
        }
        Ok(())
    }

    /// Number of 2-D subspaces `d`.
    pub fn subspaces(&self) -> usize {
        self.projection.rows() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn context_dim(&self) -> usize {
        self.gate.context_dim()
    }

    /// Embedding `v(h)`, normalised when `unit_norm` is set.
    pub fn embed(&self, h: &[f64]) -> Result<Vec<f64>> {
        check_len(self.feature_dim(), h.len())?;
        let mut u = self.projection.matvec(h);
        if self.unit_norm {
            let scale = norm(&u).max(NORM_EPS);
            u.iter_mut().for_each(|v| *v /= scale);
        }
        Ok(u)
    }

    pub fn score(&self, x: &[f64], h_w: &[f64], h_l: &[f64]) -> Result<f64> {
        let gates = self.gate.gates(x)?;
        let (v_w, v_l) = (self.embed(h_w)?, self.embed(h_l)?);
        Ok(gated_skew_form(&gates, &v_w, &v_l))
    }

    fn backward(
        &self,
        x: &[f64],
        h_w: &[f64],
        h_l: &[f64],
        upstream: f64,
        acc: &mut GpmModel,
        g_x: &mut [f64],
        g_w: &mut [f64],
        g_l: &mut [f64],
    ) {
        let z = self.gate.pre_activation(x);
        let u_w = self.projection.matvec(h_w);
        let u_l = self.projection.matvec(h_l);
        let (v_w, n_w) = self.normalise(&u_w);
        let (v_l, n_l) = self.normalise(&u_l);

        let mut gv_w = vec![0.0; v_w.len()];
        let mut gv_l = vec![0.0; v_l.len()];
        let mut g_z = vec![0.0; z.len()];
        for (k, &zk) in z.iter().enumerate() {
            let (a, b) = (2 * k, 2 * k + 1);
            let lambda = softplus(zk);
            let q = lambda * lambda;
            let cross = v_w[a] * v_l[b] - v_w[b] * v_l[a];
            gv_w[a] += upstream * q * v_l[b];
            gv_w[b] -= upstream * q * v_l[a];
            gv_l[b] += upstream * q * v_w[a];
            gv_l[a] -= upstream * q * v_w[b];
            g_z[k] = upstream * 2.0 * lambda * cross * sigmoid(zk);
        }

        acc.gate.weight.add_outer(&g_z, x);
        for (b, g) in acc.gate.bias.iter_mut().zip(&g_z) {
            *b += g;
        }
        for (gx, v) in g_x.iter_mut().zip(self.gate.weight.matvec_t(&g_z)) {
            *gx += v;
        }

        for (h, v, n, gv, g_h) in [(h_w, &v_w, n_w, gv_w, g_w), (h_l, &v_l, n_l, gv_l, g_l)] {
            let g_u: Vec<f64> = match n {
                Scaling::OnSphere(n) => {
                    let radial = dot(v, &gv);
                    gv.iter().zip(v.iter()).map(|(g, vi)| (g - vi * radial) / n).collect()
                }
                Scaling::Linear(n) => gv.iter().map(|g| g / n).collect(),
            };
            acc.projection.add_outer(&g_u, h);
            for (gh, val) in g_h.iter_mut().zip(self.projection.matvec_t(&g_u)) {
                *gh += val;
            }
        }
    }

    fn normalise(&self, u: &[f64]) -> (Vec<f64>, Scaling) {
        if !self.unit_norm {
            return (u.to_vec(), Scaling::Linear(1.0));
        }
        let n = norm(u);
        let scaling = if n >= NORM_EPS { Scaling::OnSphere(n) } else { Scaling::Linear(NORM_EPS) };
        let d = match scaling {
            Scaling::OnSphere(d) | Scaling::Linear(d) => d,
        };
        (u.iter().map(|v| v / d).collect(), scaling)
    }

    fn params_mut(&mut self) -> Vec<&mut f64> {
        self.projection
            .data_mut()
            .iter_mut()
            .chain(self.gate.weight.data_mut().iter_mut())
            .chain(self.gate.bias.iter_mut())
            .collect()
    }

    fn zeroed(&self) -> Self {
        Self {
            projection: Dense::zeros(self.projection.rows(), self.projection.cols()),
            gate: GatingHead {
                weight: Dense::zeros(self.gate.weight.rows(), self.gate.weight.cols()),
                bias: vec![0.0; self.gate.bias.len()],
            },
            unit_norm: self.unit_norm,
        }
    }
}

/// How an embedding was rescaled: projected onto the unit sphere, or divided
/// by a constant (no normalisation, or the near-zero guard).
#[derive(Clone, Copy)]
enum Scaling {
    OnSphere(f64),
    Linear(f64),
}

/// `v_w^T D R D v_l` with `D = diag(gates) (x) I_2` and `R` block-diagonal in
/// `[[0, 1], [-1, 0]]`.
pub(crate) fn gated_skew_form(gates: &[f64], v_w: &[f64], v_l: &[f64]) -> f64 {
    gates
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let (a, b) = (2 * k, 2 * k + 1);
            g * g * (v_w[a] * v_l[b] - v_w[b] * v_l[a])
        })
        .sum()
}

/// Hybrid head: `C1 * bt_score + C2 * gpm_score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrcModel {
    pub bt: BtModel,
    pub gpm: GpmModel,
    pub c1: f64,
    pub c2: f64,
}

impl HrcModel {
    pub fn new(bt: BtModel, gpm: GpmModel, c1: f64, c2: f64) -> Result<Self> {
        let model = Self { bt, gpm, c1, c2 };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.bt.clip.is_none() {
            return Err(PrefError::domain("the hybrid model requires a reward clip bound"));
        }
        self.bt.validate()?;
        self.gpm.validate()?;
        check_len(self.bt.feature_dim(), self.gpm.feature_dim())?;
        // Zero weights are allowed so that each component can be isolated.
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return Err(PrefError::domain("component weights must be non-negative"));
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64], h_w: &[f64], h_l: &[f64]) -> Result<f64> {
        Ok(self.c1 * self.bt.score(h_w, h_l)? + self.c2 * self.gpm.score(x, h_w, h_l)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bt,
    Gpm,
    Hrc,
}

impl std::str::FromStr for ModelKind {
    type Err = PrefError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bt" => Ok(ModelKind::Bt),
            "gpm" => Ok(ModelKind::Gpm),
            "hrc" => Ok(ModelKind::Hrc),
            other => Err(PrefError::domain(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreHead {
    Bt(BtModel),
    Gpm(GpmModel),
    Hrc(HrcModel),
}

/// A score head plus the loss temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    #[serde(flatten)]
    pub head: ScoreHead,
    pub tau: f64,
}

impl PreferenceModel {
    pub fn new(head: ScoreHead, tau: f64) -> Result<Self> {
        let model = Self { head, tau };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(PrefError::domain(format!("temperature must be positive, got {}", self.tau)));
        }
        match &self.head {
            ScoreHead::Bt(m) => m.validate(),
            ScoreHead::Gpm(m) => m.validate(),
            ScoreHead::Hrc(m) => m.validate(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.head {
            ScoreHead::Bt(_) => ModelKind::Bt,
            ScoreHead::Gpm(_) => ModelKind::Gpm,
            ScoreHead::Hrc(_) => ModelKind::Hrc,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match &self.head {
            ScoreHead::Bt(m) => m.feature_dim(),
            ScoreHead::Gpm(m) => m.feature_dim(),
            ScoreHead::Hrc(m) => m.bt.feature_dim(),
        }
    }

    /// Context dimension; 0 for the reward-only model, which ignores contexts.
    pub fn context_dim(&self) -> usize {
        match &self.head {
            ScoreHead::Bt(_) => 0,
            ScoreHead::Gpm(m) => m.context_dim(),
            ScoreHead::Hrc(m) => m.gpm.context_dim(),
        }
    }

    /// The cyclic head, when the model has one.
    pub fn cyclic_head(&self) -> Option<&GpmModel> {
        match &self.head {
            ScoreHead::Bt(_) => None,
            ScoreHead::Gpm(m) => Some(m),
            ScoreHead::Hrc(m) => Some(&m.gpm),
        }
    }

    /// Pairwise score; positive means `h_w` is preferred.
    pub fn score(&self, x: &[f64], h_w: &[f64], h_l: &[f64]) -> Result<f64> {
        match &self.head {
            ScoreHead::Bt(m) => m.score(h_w, h_l),
            ScoreHead::Gpm(m) => m.score(x, h_w, h_l),
            ScoreHead::Hrc(m) => m.score(x, h_w, h_l),
        }
    }

    /// Accumulates `upstream * d score / d theta` into `acc` and the feature
    /// gradients into `g_x`, `g_w`, `g_l`.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        h_w: &[f64],
        h_l: &[f64],
        upstream: f64,
        acc: &mut PreferenceModel,
        g_x: &mut [f64],
        g_w: &mut [f64],
        g_l: &mut [f64],
    ) {
        match (&self.head, &mut acc.head) {
            (ScoreHead::Bt(m), ScoreHead::Bt(a)) => m.backward(h_w, h_l, upstream, a, g_w, g_l),
            (ScoreHead::Gpm(m), ScoreHead::Gpm(a)) => m.backward(x, h_w, h_l, upstream, a, g_x, g_w, g_l),
            (ScoreHead::Hrc(m), ScoreHead::Hrc(a)) => {
                let bt = m.bt.score(h_w, h_l).unwrap_or(0.0);
                let gpm = m.gpm.score(x, h_w, h_l).unwrap_or(0.0);
                a.c1 += upstream * bt;
                a.c2 += upstream * gpm;
                m.bt.backward(h_w, h_l, upstream * m.c1, &mut a.bt, g_w, g_l);
                m.gpm.backward(x, h_w, h_l, upstream * m.c2, &mut a.gpm, g_x, g_w, g_l);
            }
            _ => unreachable!("gradient accumulator has a different head"),
        }
    }

    /// A model of the same shape with every trainable parameter zero.
    pub fn zeroed(&self) -> Self {
        let head = match &self.head {
            ScoreHead::Bt(m) => ScoreHead::Bt(m.zeroed()),
            ScoreHead::Gpm(m) => ScoreHead::Gpm(m.zeroed()),
            ScoreHead::Hrc(m) => ScoreHead::Hrc(HrcModel { bt: m.bt.zeroed(), gpm: m.gpm.zeroed(), c1: 0.0, c2: 0.0 }),
        };
        Self { head, tau: self.tau }
    }

    /// Trainable parameters in a fixed order: reward weights, projection,
    /// gate weights, gate bias, then `C1`, `C2` for the hybrid model.
    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        match &mut self.head {
            ScoreHead::Bt(m) => m.params_mut(),
            ScoreHead::Gpm(m) => m.params_mut(),
            ScoreHead::Hrc(m) => {
                let mut out = m.bt.params_mut();
                out.extend(m.gpm.params_mut());
                out.push(&mut m.c1);
                out.push(&mut m.c2);
                out
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.clone().params_mut().into_iter().map(|p| *p).collect()
    }

    /// Upper bound on `|score|` implied by the clip bound and unit-norm
    /// embeddings at context `x`; `None` when the model is unbounded.
    pub fn score_bound(&self, x: &[f64]) -> Result<Option<f64>> {
        let gate_bound = |m: &GpmModel| -> Result<Option<f64>> {
            if !m.unit_norm {
                return Ok(None);
            }
            let max_gate = m.gate.gates(x)?.into_iter().fold(0.0, f64::max);
            Ok(Some(max_gate * max_gate))
        };
        Ok(match &self.head {
            ScoreHead::Bt(m) => m.clip.map(|d| 2.0 * d),
            ScoreHead::Gpm(m) => gate_bound(m)?,
            ScoreHead::Hrc(m) => gate_bound(&m.gpm)?.map(|g| 2.0 * m.c1 * m.bt.clip.unwrap_or(f64::INFINITY) + m.c2 * g),
        })
    }

    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.build(rng)
    }
}

/// Shape and hyper-parameters for a freshly initialised model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Length `m` of a response feature vector.
    pub feature_dim: usize,
    /// Length of a context feature vector.
    pub context_dim: usize,
    /// Number of 2-D subspaces `d`; the embedding has `2d` coordinates.
    pub subspaces: usize,
    pub clip: Option<f64>,
    pub unit_norm: bool,
    pub c1: f64,
    pub c2: f64,
    pub tau: f64,
    /// Standard deviation of the Gaussian weight initialisation.
    pub init_scale: f64,
    /// Initial gate value (gate weights start at zero).
    pub gate_init: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, feature_dim: usize, subspaces: usize) -> Self {
        Self {
            kind,
            feature_dim,
            context_dim: 0,
            subspaces,
            clip: Some(DEFAULT_CLIP),
            unit_norm: true,
            c1: 1.0,
            c2: 1.0,
            tau: DEFAULT_TAU,
            init_scale: 0.1,
            gate_init: 1.0,
        }
    }

    fn build(&self, rng: &mut Rng) -> Result<PreferenceModel> {
        if !(self.init_scale >= 0.0) {
            return Err(PrefError::domain("init scale must be non-negative"));
        }
        let normal = Normal::new(0.0, self.init_scale).map_err(|e| PrefError::domain(e.to_string()))?;
        let mut sample = |len: usize| -> Vec<f64> { (0..len).map(|_| normal.sample(rng)).collect() };
        let bt = |sample: &mut dyn FnMut(usize) -> Vec<f64>| BtModel::new(sample(self.feature_dim), self.clip);
        let gpm = |sample: &mut dyn FnMut(usize) -> Vec<f64>| -> Result<GpmModel> {
            if self.subspaces == 0 {
                return Err(PrefError::domain("a cyclic head needs at least one subspace"));
            }
            let rows = 2 * self.subspaces;
            let projection = Dense::from_vec(rows, self.feature_dim, sample(rows * self.feature_dim))?;
            let gate = GatingHead::constant(self.subspaces, self.context_dim, self.gate_init)?;
            GpmModel::new(projection, gate, self.unit_norm)
        };
        let head = match self.kind {
            ModelKind::Bt => ScoreHead::Bt(bt(&mut sample)?),
            ModelKind::Gpm => ScoreHead::Gpm(gpm(&mut sample)?),
            ModelKind::Hrc => {
                let reward = bt(&mut sample)?;
                ScoreHead::Hrc(HrcModel::new(reward, gpm(&mut sample)?, self.c1, self.c2)?)
            }
        };
        PreferenceModel::new(head, self.tau)
    }
}
