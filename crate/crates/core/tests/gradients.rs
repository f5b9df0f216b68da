//! Analytic loss gradients against central finite differences.

use prefgame_core::models::{
    pair_loss, pair_loss_grad, parameters, set_parameters, ModelKind, ModelSpec, PairDataset,
    PreferenceModel, ScoreHead,
};
use prefgame_core::rng::substream;
use rand::Rng;

const STEP: f64 = 1e-6;

fn finite_difference(model: &PreferenceModel, data: &PairDataset) -> Vec<f64> {
    let base = parameters(model, data);
    let (mut m, mut d) = (model.clone(), data.clone());
    (0..base.len())
        .map(|k| {
            let mut probe = base.clone();
            probe[k] = base[k] + STEP;
            set_parameters(&mut m, &mut d, &probe).unwrap();
            let up = pair_loss(&m, &d).unwrap();
            probe[k] = base[k] - STEP;
            set_parameters(&mut m, &mut d, &probe).unwrap();
            let down = pair_loss(&m, &d).unwrap();
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// `|analytic - numeric|_inf / max(|analytic|_inf, |numeric|_inf)`.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    max_abs(&diff) / max_abs(analytic).max(max_abs(numeric)).max(1e-300)
}

/// A small random problem with both inline and tabular records, kept away
/// from the reward clip and from zero-norm embeddings.
fn random_problem(kind: ModelKind, subspaces: usize, seed: u64) -> (PreferenceModel, PairDataset) {
    let mut rng = substream(seed, "gradcheck");
    let m = rng.gen_range(2..6);
    let mx = 2;
    let mut spec = ModelSpec::new(kind, m, subspaces);
    spec.context_dim = mx;
    spec.init_scale = 0.7;
    spec.tau = rng.gen_range(0.1..1.0);
    spec.gate_init = rng.gen_range(0.5..1.5);
    spec.c1 = rng.gen_range(0.5..2.0);
    spec.c2 = rng.gen_range(0.5..2.0);
    let mut model = PreferenceModel::init(&spec, &mut rng).unwrap();
    if let ScoreHead::Gpm(g) | ScoreHead::Hrc(prefgame_core::models::HrcModel { gpm: g, .. }) = &mut model.head {
        for w in g.gate.weight.data_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
    }

    let mut data = PairDataset::default();
    for r in 0..4 {
        data.push_ids(Some(&format!("p{}", r % 2)), &format!("i{r}"), &format!("i{}", (r + 1) % 4)).unwrap();
    }
    data.init_tabular(m, mx, 0.8, &mut rng).unwrap();
    let inline = PairDataset::from_inline(
        (0..3)
            .map(|_| {
                let v = |rng: &mut prefgame_core::rng::Rng, k: usize| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
                (Some(v(&mut rng, mx)), v(&mut rng, m), v(&mut rng, m))
            })
            .collect(),
    )
    .unwrap();
    for rec in inline.records() {
        data.push(rec.clone()).unwrap();
    }
    (model, data)
}

fn check_kind(kind: ModelKind, subspaces: usize, label: &str) {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let (model, data) = random_problem(kind, subspaces, seed * 7919 + subspaces as u64);
        let analytic = pair_loss_grad(&model, &data).unwrap().flatten();
        let numeric = finite_difference(&model, &data);
        assert_eq!(analytic.len(), numeric.len());
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-5, "{label} seed {seed}: relative error {err:.3e}");
        worst = worst.max(err);
    }
    eprintln!("{label}: worst relative error {worst:.3e}");
}

#[test]
fn bt_dim_1() {
    check_kind(ModelKind::Bt, 1, "bt 1");
}

#[test]
fn gpm_dim_2_and_4() {
    check_kind(ModelKind::Gpm, 1, "gpm 2");
    check_kind(ModelKind::Gpm, 2, "gpm 4");
}

#[test]
fn hrc_dim_2_plus_1_and_4_plus_1() {
    check_kind(ModelKind::Hrc, 1, "hrc 2+1");
    check_kind(ModelKind::Hrc, 2, "hrc 4+1");
}

#[test]
fn gradients_without_unit_norm() {
    for seed in 0..10 {
        let (mut model, data) = random_problem(ModelKind::Hrc, 2, 1000 + seed);
        if let ScoreHead::Hrc(h) = &mut model.head {
            h.gpm.unit_norm = false;
        }
        let err = relative_error(&pair_loss_grad(&model, &data).unwrap().flatten(), &finite_difference(&model, &data));
        assert!(err <= 1e-5, "seed {seed}: {err:.3e}");
    }
}
