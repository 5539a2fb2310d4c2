use std::time::Instant;

use crate::data::dataset::{derive_seed, Dataset};
use crate::diff::{adam_step, AdamConfig, Tape};
use crate::error::{Result, XrecError};
use crate::model::scorer::score_car;
use crate::model::{ModelKind, ModelState};
use crate::train::bpr::{batch_loss, resolve_entries, BatchEntry};
use crate::train::triples::{sample_bpr_triples, BprTriple};
use crate::train::{
    check_compat, l2_norm, EpochTrace, PerturbKind, PerturbationRecord, TrainConfig, RECORD_STREAM,
    TRIPLE_STREAM,
};

/// Mask a gradient to the support and scale it to L2 norm `epsilon`.
/// A zero (or absent) masked gradient has no direction to follow and maps
/// to the zero perturbation.
fn scale_to_budget(grad: &[f64], support: &[usize], epsilon: f64) -> Vec<f64> {
    let mut delta = vec![0.0; grad.len()];
    if epsilon == 0.0 {
        return delta;
    }
    for &k in support {
        delta[k] = grad[k];
    }
    let norm = l2_norm(&delta);
    if norm == 0.0 {
        return vec![0.0; grad.len()];
    }
    let scale = epsilon / norm;
    for v in &mut delta {
        *v *= scale;
    }
    delta
}

/// Loss-ascending perturbations for every triple in one batch, against the
/// current parameters: gradient of the batch ranking loss w.r.t. each user
/// feature vector, masked to its support, scaled to L2 norm epsilon.
pub(crate) fn fgsm_deltas(state: &ModelState, entries: &[BatchEntry], epsilon: f64) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::frozen(&state.params);
    let (loss, fu_nodes) = batch_loss(&mut tape, state, entries, true)?;
    tape.backward(loss)?;
    entries
        .iter()
        .zip(&fu_nodes)
        .map(|(e, &node)| {
            let delta = match tape.grad(node) {
                // No gradient reached the features (e.g. empty support).
                None => vec![0.0; e.features.f_u.len()],
                Some(grad) => {
                    if grad.iter().any(|g| !g.is_finite()) {
                        return Err(XrecError::NonFiniteGradient { param: "user feature input".into() });
                    }
                    scale_to_budget(grad, &e.features.support_u, epsilon)
                }
            };
            Ok(delta)
        })
        .collect()
}

/// The loss-ascending perturbation for a single triple. See
/// [`train_adversarial`] for how these enter training.
pub fn fgsm_perturbation(state: &ModelState, ds: &Dataset, triple: BprTriple, epsilon: f64) -> Result<Vec<f64>> {
    check_compat(state, ds)?;
    if state.config.kind == ModelKind::Baseline {
        return Err(XrecError::Invalid("the ID-only scorer has no feature input to perturb".into()));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(XrecError::Config(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let entries = resolve_entries(ds, std::slice::from_ref(&triple))?;
    Ok(fgsm_deltas(state, &entries, epsilon)?.pop().expect("one entry in, one delta out"))
}

/// Robust ranking training: each batch minimizes the clean loss plus
/// `lambda` times the loss on the same triples with per-triple
/// loss-ascending perturbations (recomputed against the current
/// parameters) added to the user features.
pub fn train_adversarial(state: &mut ModelState, ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochTrace>> {
    cfg.validate()?;
    check_compat(state, ds)?;
    if state.config.kind == ModelKind::Baseline {
        return Err(XrecError::Invalid("adversarial training needs a model with feature inputs".into()));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut traces = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let triples =
            sample_bpr_triples(ds, cfg.negatives_per_positive, derive_seed(cfg.seed, TRIPLE_STREAM, epoch as u64))?;
        let entries = resolve_entries(ds, &triples)?;
        if entries.is_empty() {
            return Err(XrecError::Invalid("no trainable triples in epoch".into()));
        }
        let mut clean_sum = 0.0;
        let mut adv_sum = 0.0;
        for chunk in entries.chunks(cfg.batch_size) {
            let deltas = fgsm_deltas(state, chunk, cfg.epsilon)?;
            let adv_entries: Vec<BatchEntry> = chunk
                .iter()
                .zip(deltas)
                .map(|(e, d)| BatchEntry { delta: Some(d), ..e.clone() })
                .collect();
            let (clean_val, adv_val, grads) = {
                let mut tape = Tape::new(&state.params);
                let (clean, _) = batch_loss(&mut tape, state, chunk, false)?;
                let (adv, _) = batch_loss(&mut tape, state, &adv_entries, false)?;
                let total = tape.add_scaled(clean, adv, cfg.lambda)?;
                let grads = tape.backward(total)?;
                (tape.scalar(clean), tape.scalar(adv), grads)
            };
            if !clean_val.is_finite() || !adv_val.is_finite() {
                return Err(XrecError::Invalid(format!(
                    "training loss became non-finite (clean {clean_val}, perturbed {adv_val})"
                )));
            }
            adam_step(&mut state.params, &grads, &adam)?;
            clean_sum += clean_val * chunk.len() as f64;
            adv_sum += adv_val * chunk.len() as f64;
        }
        traces.push(EpochTrace {
            epoch,
            clean_loss: clean_sum / entries.len() as f64,
            aux_loss: Some(adv_sum / entries.len() as f64),
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(traces)
}

/// A perturbation pass against the (trained) parameters: one triple per
/// training positive with seeded negatives, each yielding its perturbation
/// and whether adding it flips the pair's ranking.
pub fn adversarial_perturbation_records(
    state: &ModelState,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<PerturbationRecord>> {
    cfg.validate()?;
    check_compat(state, ds)?;
    if !state.config.kind.uses_feature_maps() {
        return Err(XrecError::Invalid(format!(
            "perturbation records need a feature-mapping model, got {}",
            state.config.kind
        )));
    }
    let triples = sample_bpr_triples(ds, 1, derive_seed(cfg.seed, RECORD_STREAM, 0))?;
    let entries = resolve_entries(ds, &triples)?;
    let mut records = Vec::with_capacity(entries.len());
    for chunk in entries.chunks(cfg.batch_size) {
        let deltas = fgsm_deltas(state, chunk, cfg.epsilon)?;
        for (e, delta) in chunk.iter().zip(deltas) {
            let t = e.triple;
            let s_pos = score_car(state, t.user, t.pos_item, &e.features.positive_pair(), Some(&delta))?;
            let s_neg = score_car(state, t.user, t.neg_item, &e.features.negative_pair(), Some(&delta))?;
            records.push(PerturbationRecord::from_dense(
                t.user,
                t.pos_item,
                t.neg_item,
                PerturbKind::Adversarial,
                s_pos < s_neg,
                &delta,
            ));
        }
    }
    Ok(records)
}
