use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{FeatureSource, PairDataset};
use super::heads::PreferenceModel;
use super::softplus;
use crate::error::{check_len, PrefError, Result};
use crate::preference::sigmoid;
use crate::rng::substream;

/// Gradient of the pairwise loss, laid out like the parameters it
/// differentiates: the model's own parameters plus one row per item and
/// context table entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub model: PreferenceModel,
    pub items: Vec<f64>,
    pub contexts: Vec<f64>,
}

impl GradientBundle {
    /// Same order as [`parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.model.params();
        out.extend_from_slice(&self.items);
        out.extend_from_slice(&self.contexts);
        out
    }
}

/// All trainable values: model parameters, then item rows, then context rows.
pub fn parameters(model: &PreferenceModel, data: &PairDataset) -> Vec<f64> {
    let mut out = model.params();
    out.extend_from_slice(data.items().values());
    out.extend_from_slice(data.contexts().values());
    out
}

/// Inverse of [`parameters`].
pub fn set_parameters(model: &mut PreferenceModel, data: &mut PairDataset, flat: &[f64]) -> Result<()> {
    let mut params = model.params_mut();
    let n_model = params.len();
    let n_items = data.items().values().len();
    let n_ctx = data.contexts().values().len();
    check_len(n_model + n_items + n_ctx, flat.len())?;
    for (p, v) in params.iter_mut().zip(flat) {
        **p = *v;
    }
    data.items_mut().values_mut().copy_from_slice(&flat[n_model..n_model + n_items]);
    data.contexts_mut().values_mut().copy_from_slice(&flat[n_model + n_items..]);
    Ok(())
}

/// `-log sigmoid(s / tau)`.
fn record_loss(score: f64, tau: f64) -> f64 {
    softplus(-score / tau)
}

fn loss_and_grad(
    model: &PreferenceModel,
    data: &PairDataset,
    indices: &[usize],
    want_grad: bool,
) -> Result<(f64, Option<GradientBundle>)> {
    if indices.is_empty() {
        return Err(PrefError::domain("loss over an empty batch"));
    }
    let scale = 1.0 / indices.len() as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| GradientBundle {
        model: model.zeroed(),
        items: vec![0.0; data.items().values().len()],
        contexts: vec![0.0; data.contexts().values().len()],
    });
    let (m, mx) = (data.items().dim(), data.contexts().dim());
    for &i in indices {
        let (x, h_w, h_l) = data.features(i)?;
        let s = model.score(x, h_w, h_l)?;
        total += record_loss(s, model.tau);
        if let Some(g) = grad.as_mut() {
            // d/ds of -log sigmoid(s / tau)
            let upstream = -sigmoid(-s / model.tau) / model.tau * scale;
            let mut g_x = vec![0.0; x.len()];
            let mut g_w = vec![0.0; h_w.len()];
            let mut g_l = vec![0.0; h_l.len()];
            model.backward(x, h_w, h_l, upstream, &mut g.model, &mut g_x, &mut g_w, &mut g_l);
            let r = &data.records()[i];
            for (src, gv) in [(&r.winner, &g_w), (&r.loser, &g_l)] {
                if let FeatureSource::Table(row) = src {
                    for (a, v) in g.items[row * m..(row + 1) * m].iter_mut().zip(gv) {
                        *a += v;
                    }
                }
            }
            if let Some(FeatureSource::Table(row)) = &r.context {
                for (a, v) in g.contexts[row * mx..(row + 1) * mx].iter_mut().zip(&g_x) {
                    *a += v;
                }
            }
        }
    }
    Ok((total * scale, grad))
}

/// Mean of `-log sigmoid(score / tau)` over the batch.
pub fn pair_loss(model: &PreferenceModel, batch: &PairDataset) -> Result<f64> {
    let all: Vec<usize> = (0..batch.len()).collect();
    if all.is_empty() {
        return Err(PrefError::domain("loss over an empty batch"));
    }
    Ok(loss_and_grad(model, batch, &all, false)?.0)
}

/// Analytic gradient of [`pair_loss`].
pub fn pair_loss_grad(model: &PreferenceModel, batch: &PairDataset) -> Result<GradientBundle> {
    let all: Vec<usize> = (0..batch.len()).collect();
    if all.is_empty() {
        return Err(PrefError::domain("gradient over an empty batch"));
    }
    Ok(loss_and_grad(model, batch, &all, true)?.1.expect("gradient requested"))
}

/// Fraction of records scored strictly positive; ties count as errors.
pub fn eval_accuracy(model: &PreferenceModel, data: &PairDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(PrefError::domain("accuracy over an empty dataset"));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let (x, w, l) = data.features(i)?;
        if model.score(x, w, l)? > 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Correct and total record counts for one context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    /// Context id, `"#inline"` for inline contexts, `"#none"` for none.
    pub context: String,
    pub correct: usize,
    pub total: usize,
}

impl GroupAccuracy {
    pub fn fraction(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Accuracy per context id, in order of first appearance.
pub fn accuracy_by_context(model: &PreferenceModel, data: &PairDataset) -> Result<Vec<GroupAccuracy>> {
    let mut out: Vec<GroupAccuracy> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for i in 0..data.len() {
        let key = match &data.records()[i].context {
            Some(FeatureSource::Table(c)) => data.contexts().ids()[*c].clone(),
            Some(FeatureSource::Inline(_)) => "#inline".to_string(),
            None => "#none".to_string(),
        };
        let k = *slot.entry(key.clone()).or_insert_with(|| {
            out.push(GroupAccuracy { context: key, correct: 0, total: 0 });
            out.len() - 1
        });
        let (x, w, l) = data.features(i)?;
        out[k].total += 1;
        if model.score(x, w, l)? > 0.0 {
            out[k].correct += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Records per gradient step; 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Also update the hybrid model's component weights `C1`, `C2`.
    pub train_weights: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 200, batch_size: 0, seed: 0, train_weights: false }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: PreferenceModel,
    /// The input dataset with trained table values.
    pub dataset: PairDataset,
    /// Full-dataset loss after each epoch.
    pub loss_history: Vec<f64>,
    /// Full-dataset accuracy after each epoch.
    pub accuracy_history: Vec<f64>,
    /// Mean cyclic embedding over all record endpoints, for models with a
    /// cyclic head. The zero-mean condition asks for this to vanish.
    pub mean_embedding: Option<Vec<f64>>,
}

/// Plain mini-batch gradient descent with seeded shuffling.
pub fn fit(model: &PreferenceModel, dataset: &PairDataset, config: &FitConfig) -> Result<FitReport> {
    if dataset.is_empty() {
        return Err(PrefError::domain("cannot fit an empty dataset"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(PrefError::domain("learning rate must be positive"));
    }
    let mut model = model.clone();
    let mut data = dataset.clone();
    let mut rng = substream(config.seed, "shuffle");
    let batch = if config.batch_size == 0 { data.len() } else { config.batch_size.min(data.len()) };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut accuracy_history = Vec::with_capacity(config.epochs);
    let lr = config.learning_rate;
    let mut step = 0usize;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let (loss, grad) = loss_and_grad(&model, &data, chunk, true)?;
            if !loss.is_finite() {
                return Err(PrefError::Training { step, reason: format!("loss is {loss}") });
            }
            let grad = grad.expect("gradient requested");
            apply_step(&mut model, &mut data, &grad, lr, config.train_weights);
            if parameters(&model, &data).iter().any(|p| !p.is_finite()) {
                return Err(PrefError::Training { step, reason: "parameters became non-finite".into() });
            }
            step += 1;
        }
        let loss = pair_loss(&model, &data)?;
        if !loss.is_finite() {
            return Err(PrefError::Training { step, reason: format!("epoch loss is {loss}") });
        }
        loss_history.push(loss);
        accuracy_history.push(eval_accuracy(&model, &data)?);
    }

    let mean_embedding = mean_embedding(&model, &data)?;
    Ok(FitReport { model, dataset: data, loss_history, accuracy_history, mean_embedding })
}

fn apply_step(model: &mut PreferenceModel, data: &mut PairDataset, grad: &GradientBundle, lr: f64, train_weights: bool) {
    let frozen = match (&model.head, train_weights) {
        (super::ScoreHead::Hrc(m), false) => Some((m.c1, m.c2)),
        _ => None,
    };
    for (p, g) in model.params_mut().into_iter().zip(grad.model.params()) {
        *p -= lr * g;
    }
    if let super::ScoreHead::Hrc(m) = &mut model.head {
        match frozen {
            Some((c1, c2)) => {
                m.c1 = c1;
                m.c2 = c2;
            }
            None => {
                m.c1 = m.c1.max(0.0);
                m.c2 = m.c2.max(0.0);
            }
        }
    }
    for (p, g) in data.items_mut().values_mut().iter_mut().zip(&grad.items) {
        *p -= lr * g;
    }
    for (p, g) in data.contexts_mut().values_mut().iter_mut().zip(&grad.contexts) {
        *p -= lr * g;
    }
}

fn mean_embedding(model: &PreferenceModel, data: &PairDataset) -> Result<Option<Vec<f64>>> {
    let Some(gpm) = model.cyclic_head() else {
        return Ok(None);
    };
    let mut sum = vec![0.0; 2 * gpm.subspaces()];
    for i in 0..data.len() {
        let (_, w, l) = data.features(i)?;
        for h in [w, l] {
            for (s, v) in sum.iter_mut().zip(gpm.embed(h)?) {
                *s += v;
            }
        }
    }
    let count = (2 * data.len()) as f64;
    Ok(Some(sum.into_iter().map(|s| s / count).collect()))
}
