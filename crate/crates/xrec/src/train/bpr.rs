use std::time::Instant;

use crate::data::dataset::{derive_seed, Dataset};
use crate::diff::{adam_step, AdamConfig, NodeId, Tape};
use crate::error::{Result, XrecError};
use crate::model::features::{triple_features, TripleFeatures};
use crate::model::scorer::{build_pair_score, FuSource};
use crate::model::{ModelKind, ModelState};
use crate::train::triples::{sample_bpr_triples, BprTriple};
use crate::train::{check_compat, EpochTrace, TrainConfig, TRIPLE_STREAM};

/// One training example as it enters a batch: the triple, its resolved
/// features, and an optional perturbation added to the user feature vector
/// before scoring.
#[derive(Debug, Clone)]
pub(crate) struct BatchEntry {
    pub triple: BprTriple,
    pub features: TripleFeatures,
    pub delta: Option<Vec<f64>>,
}

pub(crate) fn resolve_entries(ds: &Dataset, triples: &[BprTriple]) -> Result<Vec<BatchEntry>> {
    triples
        .iter()
        .map(|&triple| {
            Ok(BatchEntry {
                triple,
                features: triple_features(ds, triple.pos_interaction, triple.neg_item)?,
                delta: None,
            })
        })
        .collect()
}

/// Build the batch ranking loss on the tape: mean over entries of
/// -log sigma(R_ui - R_uj), both scores sharing one user feature node.
/// With `track_user_features` the user feature vectors become
/// gradient-carrying inputs and their node ids are returned.
pub(crate) fn batch_loss(
    tape: &mut Tape,
    state: &ModelState,
    entries: &[BatchEntry],
    track_user_features: bool,
) -> Result<(NodeId, Vec<NodeId>)> {
    if entries.is_empty() {
        return Err(XrecError::Invalid("empty training batch".into()));
    }
    let mut fu_nodes = Vec::new();
    let mut per_triple = Vec::with_capacity(entries.len());
    for e in entries {
        let f = &e.features;
        let (s_pos, s_neg) = if state.config.kind == ModelKind::Baseline {
            (
                build_pair_score(tape, state, e.triple.user, e.triple.pos_item, FuSource::Data(&[]), &[], &[], &[])?,
                build_pair_score(tape, state, e.triple.user, e.triple.neg_item, FuSource::Data(&[]), &[], &[], &[])?,
            )
        } else {
            let fu_data: Vec<f64> = match &e.delta {
                Some(d) => {
                    if d.len() != f.f_u.len() {
                        return Err(XrecError::Invalid(format!(
                            "perturbation has length {}, feature vector has {}",
                            d.len(),
                            f.f_u.len()
                        )));
                    }
                    f.f_u.iter().zip(d).map(|(a, b)| a + b).collect()
                }
                None => f.f_u.clone(),
            };
            let fu = tape.input(fu_data, track_user_features)?;
            if track_user_features {
                fu_nodes.push(fu);
            }
            (
                build_pair_score(tape, state, e.triple.user, e.triple.pos_item, FuSource::Node(fu), &f.support_u, &f.f_i, &f.support_i)?,
                build_pair_score(tape, state, e.triple.user, e.triple.neg_item, FuSource::Node(fu), &f.support_u, &f.f_j, &f.support_j)?,
            )
        };
        let margin = tape.sub(s_pos, s_neg)?;
        per_triple.push(tape.neg_log_sigmoid(margin)?);
    }
    let loss = tape.mean_n(&per_triple)?;
    Ok((loss, fu_nodes))
}

/// One Adam pass over pre-shuffled entries. Returns the mean loss across
/// the epoch (each batch weighted by its size).
pub(crate) fn run_epoch(
    state: &mut ModelState,
    adam: &AdamConfig,
    batch_size: usize,
    entries: &[BatchEntry],
) -> Result<f64> {
    if entries.is_empty() {
        return Err(XrecError::Invalid("no trainable triples in epoch".into()));
    }
    let mut weighted = 0.0;
    for chunk in entries.chunks(batch_size) {
        let (loss_val, grads) = {
            let mut tape = Tape::new(&state.params);
            let (loss, _) = batch_loss(&mut tape, state, chunk, false)?;
            let grads = tape.backward(loss)?;
            (tape.scalar(loss), grads)
        };
        if !loss_val.is_finite() {
            return Err(XrecError::Invalid(format!("training loss became non-finite ({loss_val})")));
        }
        adam_step(&mut state.params, &grads, adam)?;
        weighted += loss_val * chunk.len() as f64;
    }
    Ok(weighted / entries.len() as f64)
}

/// Pairwise ranking training: `epochs` Adam passes over freshly sampled
/// triples, minimizing the mean of -log sigma(R_ui - R_uj).
pub fn train_bpr(state: &mut ModelState, ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochTrace>> {
    cfg.validate()?;
    check_compat(state, ds)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut traces = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let triples = sample_bpr_triples(ds, cfg.negatives_per_positive, derive_seed(cfg.seed, TRIPLE_STREAM, epoch as u64))?;
        let entries = resolve_entries(ds, &triples)?;
        let clean_loss = run_epoch(state, &adam, cfg.batch_size, &entries)?;
        traces.push(EpochTrace {
            epoch,
            clean_loss,
            aux_loss: None,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::test_util::{fast_cfg, tiny_dataset, tiny_state};

    fn epoch_entries(ds: &Dataset, seed: u64) -> Vec<BatchEntry> {
        let triples = sample_bpr_triples(ds, 1, seed).unwrap();
        resolve_entries(ds, &triples).unwrap()
    }

    #[test]
    fn equal_scores_cost_ln_two_per_triple() {
        let ds = tiny_dataset(1);
        for kind in [ModelKind::Baseline, ModelKind::Nar, ModelKind::Car] {
            let mut state = tiny_state(kind, &ds, 4);
            // Zero output weights make every score 0, so every margin is 0.
            let w = state.params.by_name_mut("mlp_w_out").unwrap();
            w.values.iter_mut().for_each(|v| *v = 0.0);
            let entries = epoch_entries(&ds, 2);
            let mut tape = Tape::frozen(&state.params);
            let (loss, _) = batch_loss(&mut tape, &state, &entries, false).unwrap();
            assert!((tape.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_frozen() {
        let ds = tiny_dataset(1);
        let mut state = tiny_state(ModelKind::Car, &ds, 4);
        let before: Vec<Vec<u64>> = state
            .params
            .iter()
            .map(|p| p.values.iter().map(|v| v.to_bits()).collect())
            .collect();
        let cfg = TrainConfig { lr: 0.0, epochs: 3, ..fast_cfg(9) };
        let traces = train_bpr(&mut state, &ds, &cfg).unwrap();
        assert_eq!(traces.len(), 3);
        let after: Vec<Vec<u64>> = state
            .params
            .iter()
            .map(|p| p.values.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn loss_drops_on_separable_data() {
        let ds = tiny_dataset(6);
        for kind in [ModelKind::Baseline, ModelKind::Nar, ModelKind::Car] {
            let mut state = tiny_state(kind, &ds, 11);
            let cfg = TrainConfig { epochs: 12, lr: 0.01, ..fast_cfg(3) };
            let traces = train_bpr(&mut state, &ds, &cfg).unwrap();
            assert!(traces.iter().all(|t| t.clean_loss.is_finite()));
            let first = traces.first().unwrap().clean_loss;
            let last = traces.last().unwrap().clean_loss;
            assert!(last < first, "{kind}: loss went {first} -> {last}");
        }
    }

    #[test]
    fn same_seed_reproduces_the_checkpoint_bytes() {
        let ds = tiny_dataset(6);
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for run in 0..2 {
            let mut state = tiny_state(ModelKind::Nar, &ds, 11);
            let cfg = fast_cfg(3);
            train_bpr(&mut state, &ds, &cfg).unwrap();
            let path = dir.path().join(format!("run{run}.ckpt"));
            state.save(&path).unwrap();
            paths.push(path);
        }
        let a = std::fs::read(&paths[0]).unwrap();
        let b = std::fs::read(&paths[1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        use crate::data::synth::{synth_generate, SynthConfig};
        let ds = tiny_dataset(1);
        let small = SynthConfig { users: 7, items: 9, features: 6, density: 0.4, planted_per_user: 2, item_profile_size: 2, noise: 0.0, t_max: 5 };
        let other = Dataset::build(&synth_generate(&small, 1).unwrap().records, 5, 1, None).unwrap();
        let mut state = tiny_state(ModelKind::Car, &ds, 4);
        assert!(train_bpr(&mut state, &other, &fast_cfg(0)).is_err());
        let mut tape = Tape::frozen(&state.params);
        assert!(batch_loss(&mut tape, &state, &[], false).is_err());
    }
}
