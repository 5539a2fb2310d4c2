use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::{derive_seed, Dataset};
use crate::diff::{AdamConfig, Tape};
use crate::error::{Result, XrecError};
use crate::model::features::TripleFeatures;
use crate::model::scorer::{build_pair_score, score_car, FuSource};
use crate::model::ModelState;
use crate::train::bpr::{resolve_entries, run_epoch, train_bpr, BatchEntry};
use crate::train::triples::{sample_bpr_triples, BprTriple};
use crate::train::{
    check_compat, DistanceKind, EpochTrace, PerturbKind, PerturbationRecord, TrainConfig,
    RECORD_STREAM, RETRAIN_STREAM, SEARCH_STREAM,
};

/// Size of a perturbation: squared L2 norm, plus the L1 norm for the
/// elastic-net kind.
pub fn perturbation_distance(delta: &[f64], kind: DistanceKind) -> f64 {
    let l2sq: f64 = delta.iter().map(|v| v * v).sum();
    match kind {
        DistanceKind::L2 => l2sq,
        DistanceKind::ElasticNet => l2sq + delta.iter().map(|v| v.abs()).sum::<f64>(),
    }
}

/// Proximal step on the distance penalty: ridge shrinkage, preceded by
/// soft-thresholding when the L1 term is present. The threshold produces
/// exact zeros, which is where elastic-net sparsity comes from.
fn prox_distance(v: f64, step: f64, xi: f64, kind: DistanceKind) -> f64 {
    let shrink = 1.0 + 2.0 * step * xi;
    match kind {
        DistanceKind::L2 => v / shrink,
        DistanceKind::ElasticNet => {
            let t = step * xi;
            let soft = if v > t {
                v - t
            } else if v < -t {
                v + t
            } else {
                0.0
            };
            soft / shrink
        }
    }
}

struct FlipStep {
    flip_loss: f64,
    s_pos: f64,
    s_neg: f64,
    grad: Vec<f64>,
}

/// Flip loss -log sigma(R_uj - R_ui) at f_u + delta, with its gradient
/// w.r.t. delta, parameters frozen.
fn flip_gradient(state: &ModelState, triple: BprTriple, feats: &TripleFeatures, delta: &[f64]) -> Result<FlipStep> {
    let fu: Vec<f64> = feats.f_u.iter().zip(delta).map(|(a, b)| a + b).collect();
    let mut tape = Tape::frozen(&state.params);
    let fu_node = tape.input(fu, true)?;
    let s_pos = build_pair_score(
        &mut tape,
        state,
        triple.user,
        triple.pos_item,
        FuSource::Node(fu_node),
        &feats.support_u,
        &feats.f_i,
        &feats.support_i,
    )?;
    let s_neg = build_pair_score(
        &mut tape,
        state,
        triple.user,
        triple.neg_item,
        FuSource::Node(fu_node),
        &feats.support_u,
        &feats.f_j,
        &feats.support_j,
    )?;
    let margin = tape.sub(s_neg, s_pos)?;
    let flip = tape.neg_log_sigmoid(margin)?;
    tape.backward(flip)?;
    let grad = tape.grad(fu_node).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; feats.f_u.len()]);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(XrecError::NonFiniteGradient { param: "user feature input".into() });
    }
    Ok(FlipStep { flip_loss: tape.scalar(flip), s_pos: tape.scalar(s_pos), s_neg: tape.scalar(s_neg), grad })
}

pub(crate) fn search_with_objective(
    state: &ModelState,
    triple: BprTriple,
    feats: &TripleFeatures,
    cfg: &TrainConfig,
) -> Result<(PerturbationRecord, f64)> {
    cfg.validate()?;
    if !state.config.kind.uses_feature_maps() {
        return Err(XrecError::Invalid(format!(
            "counterfactual search needs a feature-mapping model, got {}",
            state.config.kind
        )));
    }
    let s_pos = score_car(state, triple.user, triple.pos_item, &feats.positive_pair(), None)?;
    let s_neg = score_car(state, triple.user, triple.neg_item, &feats.negative_pair(), None)?;
    if !(s_pos > s_neg) {
        return Err(XrecError::Invalid(format!(
            "no decision to flip: positive scores {s_pos}, negative scores {s_neg}"
        )));
    }
    let mut delta = vec![0.0; feats.f_u.len()];
    let mut objective = crate::diff::tape::neg_log_sigmoid(s_neg - s_pos);
    if !feats.support_u.is_empty() {
        // Proximal gradient descent on flip loss + xi * distance, the
        // distance handled exactly by its proximal operator. Only support
        // coordinates move.
        let mut prev_dist = 0.0;
        for _ in 0..cfg.search_steps {
            let step = flip_gradient(state, triple, feats, &delta)?;
            let dist = perturbation_distance(&delta, cfg.distance);
            objective = step.flip_loss + cfg.xi * dist;
            if step.s_neg > step.s_pos && (prev_dist - dist).abs() < cfg.search_tol {
                break;
            }
            prev_dist = dist;
            for &k in &feats.support_u {
                let moved = delta[k] - cfg.search_lr * step.grad[k];
                delta[k] = prox_distance(moved, cfg.search_lr, cfg.xi, cfg.distance);
            }
        }
    }
    // The verdict comes from re-scoring with the final perturbation.
    let s_pos_d = score_car(state, triple.user, triple.pos_item, &feats.positive_pair(), Some(&delta))?;
    let s_neg_d = score_car(state, triple.user, triple.neg_item, &feats.negative_pair(), Some(&delta))?;
    let record = PerturbationRecord::from_dense(
        triple.user,
        triple.pos_item,
        triple.neg_item,
        PerturbKind::Counterfactual,
        s_pos_d < s_neg_d,
        &delta,
    );
    Ok((record, objective))
}

/// Search for the smallest perturbation of the user's feature vector that
/// makes the negative outrank the positive, with the model frozen.
/// Requires a decision to flip (the positive must outrank the negative);
/// exhausting the step budget without flipping is not an error — the
/// record comes back with `flipped = false`.
pub fn counterfactual_search(
    state: &ModelState,
    triple: BprTriple,
    feats: &TripleFeatures,
    cfg: &TrainConfig,
) -> Result<PerturbationRecord> {
    search_with_objective(state, triple, feats, cfg).map(|(record, _)| record)
}

/// One search per training positive (seeded negatives) against the current
/// parameters. Pairs the model already ranks the wrong way are skipped —
/// there is no decision to flip.
fn counterfactual_records(state: &ModelState, ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<PerturbationRecord>> {
    let triples = sample_bpr_triples(ds, 1, derive_seed(cfg.seed, RECORD_STREAM, 1))?;
    let entries = resolve_entries(ds, &triples)?;
    let mut records = Vec::new();
    for e in &entries {
        let s_pos = score_car(state, e.triple.user, e.triple.pos_item, &e.features.positive_pair(), None)?;
        let s_neg = score_car(state, e.triple.user, e.triple.neg_item, &e.features.negative_pair(), None)?;
        if !(s_pos > s_neg) {
            continue;
        }
        records.push(counterfactual_search(state, e.triple, &e.features, cfg)?);
    }
    Ok(records)
}

/// Alternating counterfactual training: pretrain on the plain ranking
/// loss, then `outer` rounds of (a) searching flipping perturbations on
/// sampled triples with the parameters frozen and (b) retraining on fresh
/// clean triples augmented with the flipped examples. Returns the traces
/// plus a final record pass run against the final parameters (so the
/// records describe the model that is returned).
pub fn train_counterfactual(
    state: &mut ModelState,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Vec<EpochTrace>, Vec<PerturbationRecord>)> {
    cfg.validate()?;
    check_compat(state, ds)?;
    if !state.config.kind.uses_feature_maps() {
        return Err(XrecError::Invalid(format!(
            "counterfactual training needs a feature-mapping model, got {}",
            state.config.kind
        )));
    }
    let mut traces = train_bpr(state, ds, cfg)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let p = ds.num_features();
    for round in 0..cfg.outer {
        let started = Instant::now();
        let mut triples = sample_bpr_triples(ds, 1, derive_seed(cfg.seed, SEARCH_STREAM, round as u64))?;
        triples.truncate(cfg.search_triples);
        let entries = resolve_entries(ds, &triples)?;
        let mut augmented: Vec<BatchEntry> = Vec::new();
        let mut searched = 0usize;
        let mut objective_sum = 0.0;
        for e in &entries {
            let s_pos = score_car(state, e.triple.user, e.triple.pos_item, &e.features.positive_pair(), None)?;
            let s_neg = score_car(state, e.triple.user, e.triple.neg_item, &e.features.negative_pair(), None)?;
            if !(s_pos > s_neg) {
                continue;
            }
            let (record, objective) = search_with_objective(state, e.triple, &e.features, cfg)?;
            searched += 1;
            objective_sum += objective;
            if record.flipped {
                augmented.push(BatchEntry {
                    triple: e.triple,
                    features: e.features.clone(),
                    delta: Some(record.dense_delta(p)),
                });
            }
        }
        let mut round_loss = f64::NAN;
        for retrain in 0..cfg.retrain_epochs {
            let seed = derive_seed(derive_seed(cfg.seed, RETRAIN_STREAM, round as u64), retrain as u64, 0);
            let clean = sample_bpr_triples(ds, cfg.negatives_per_positive, seed)?;
            let mut epoch_entries = resolve_entries(ds, &clean)?;
            epoch_entries.extend(augmented.iter().cloned());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
            epoch_entries.shuffle(&mut rng);
            round_loss = run_epoch(state, &adam, cfg.batch_size, &epoch_entries)?;
        }
        traces.push(EpochTrace {
            epoch: cfg.epochs + round,
            clean_loss: round_loss,
            aux_loss: (searched > 0).then_some(objective_sum / searched as f64),
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    let records = counterfactual_records(state, ds, cfg)?;
    Ok((traces, records))
}
