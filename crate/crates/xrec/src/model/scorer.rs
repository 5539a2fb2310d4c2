use crate::data::dataset::Dataset;
use crate::diff::tape::{NodeId, ParamGrads, Tape};
use crate::error::{Result, XrecError};
use crate::model::features::{scoring_features, PairFeatures};
use crate::model::{ModelKind, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionSide {
    User,
    Item,
}

impl AttentionSide {
    fn params(&self) -> (&'static str, &'static str) {
        match self {
            AttentionSide::User => ("user_embed", "attn_user"),
            AttentionSide::Item => ("item_embed", "attn_item"),
        }
    }
}

fn check_entities(state: &ModelState, user: usize, item: usize) -> Result<()> {
    if user >= state.num_users {
        return Err(XrecError::UnknownId { kind: "user", id: format!("index {user} of {}", state.num_users) });
    }
    if item >= state.num_items {
        return Err(XrecError::UnknownId { kind: "item", id: format!("index {item} of {}", state.num_items) });
    }
    Ok(())
}

fn check_feature_dim(state: &ModelState, len: usize, what: &str) -> Result<()> {
    if len != state.num_features {
        return Err(XrecError::Invalid(format!(
            "{what} has length {len}, expected {} features",
            state.num_features
        )));
    }
    Ok(())
}

/// Attention of an entity over a support of words: softmax over
/// `e^T M w_k` for each word `k` in the support. Every weight is in (0,1)
/// and they sum to 1.
pub fn attention_weights(state: &ModelState, side: AttentionSide, entity: usize, support: &[usize]) -> Result<Vec<f64>> {
    if state.config.kind != ModelKind::Nar {
        return Err(XrecError::Invalid(format!("attention is only defined for nar, not {}", state.config.kind)));
    }
    if support.is_empty() {
        return Err(XrecError::Invalid("attention over an empty support".into()));
    }
    let (embed, attn) = side.params();
    let count = match side {
        AttentionSide::User => state.num_users,
        AttentionSide::Item => state.num_items,
    };
    if entity >= count {
        return Err(XrecError::UnknownId { kind: "entity", id: format!("index {entity} of {count}") });
    }
    let e = state.params.row(state.params.id(embed)?, entity);
    let m = state.params.by_name(attn)?;
    let (rows, cols) = (m.shape.rows(), m.shape.cols());
    // proj = e^T M, an n-vector.
    let mut proj = vec![0.0; cols];
    for r in 0..rows {
        let row = &m.values[r * cols..(r + 1) * cols];
        for (p, w) in proj.iter_mut().zip(row) {
            *p += e[r] * w;
        }
    }
    let word_id = state.params.id("word_embed")?;
    let logits: Vec<f64> = support
        .iter()
        .map(|&k| {
            let wk = state.params.row(word_id, k);
            proj.iter().zip(wk).map(|(p, w)| p * w).sum()
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// Attention-weighted feature representation: `Σ_k α_k · f[k] · w_k` over
/// the support, an n-vector.
pub fn aggregate_features(state: &ModelState, alpha: &[f64], support: &[usize], f: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != support.len() {
        return Err(XrecError::Invalid(format!(
            "attention has {} entries but support has {}",
            alpha.len(),
            support.len()
        )));
    }
    check_feature_dim(state, f.len(), "feature vector")?;
    let word_id = state.params.id("word_embed")?;
    let mut out = vec![0.0; state.config.word_dim];
    for (&a, &k) in alpha.iter().zip(support) {
        let wk = state.params.row(word_id, k);
        let c = a * f[k];
        for (o, w) in out.iter_mut().zip(wk) {
            *o += c * w;
        }
    }
    Ok(out)
}

/// Where the user-side feature vector comes from when building a score
/// graph: an existing tape node (shared across a triple, possibly flagged
/// for input gradients) or plain data.
pub(crate) enum FuSource<'a> {
    Node(NodeId),
    Data(&'a [f64]),
}

fn attention_branch(
    tape: &mut Tape,
    attn: &'static str,
    embed_node: NodeId,
    support: &[usize],
    f_node: NodeId,
) -> Result<NodeId> {
    let proj = tape.matvec(attn, embed_node, true)?;
    let mut word_nodes = Vec::with_capacity(support.len());
    let mut logits = Vec::with_capacity(support.len());
    for &k in support {
        let wk = tape.param_row("word_embed", k)?;
        logits.push(tape.dot(proj, wk)?);
        word_nodes.push(wk);
    }
    let stacked = tape.concat(&logits)?;
    let alpha = tape.softmax(stacked)?;
    let mut terms = Vec::with_capacity(support.len());
    for (idx, (&k, &wk)) in support.iter().zip(&word_nodes).enumerate() {
        let ak = tape.gather(alpha, idx)?;
        let fk = tape.gather(f_node, k)?;
        let scaled = tape.scalar_mul(fk, wk)?;
        terms.push(tape.scalar_mul(ak, scaled)?);
    }
    tape.sum_n(&terms)
}

fn mlp(tape: &mut Tape, state: &ModelState, mut h: NodeId) -> Result<NodeId> {
    for l in 0..state.config.mlp_hidden.len() {
        h = tape.affine(&format!("mlp_w{l}"), &format!("mlp_b{l}"), h)?;
        h = tape.relu(h)?;
    }
    tape.affine("mlp_w_out", "mlp_b_out", h)
}

/// Build the relevance score for one pair on an existing tape. Returns the
/// scalar score node.
pub(crate) fn build_pair_score(
    tape: &mut Tape,
    state: &ModelState,
    user: usize,
    item: usize,
    f_u: FuSource,
    support_u: &[usize],
    f_i: &[f64],
    support_i: &[usize],
) -> Result<NodeId> {
    check_entities(state, user, item)?;
    let eu = tape.param_row("user_embed", user)?;
    let ei = tape.param_row("item_embed", item)?;
    let id_branch = tape.mul(eu, ei)?;
    let z = match state.config.kind {
        ModelKind::Baseline => id_branch,
        ModelKind::Nar => {
            let n = state.config.word_dim;
            let fu_t = if support_u.is_empty() {
                tape.constant(vec![0.0; n])?
            } else {
                let f_u_node = match f_u {
                    FuSource::Node(id) => id,
                    FuSource::Data(d) => {
                        check_feature_dim(state, d.len(), "user feature vector")?;
                        tape.constant(d.to_vec())?
                    }
                };
                attention_branch(tape, "attn_user", eu, support_u, f_u_node)?
            };
            let fi_t = if support_i.is_empty() {
                tape.constant(vec![0.0; n])?
            } else {
                check_feature_dim(state, f_i.len(), "item feature vector")?;
                let f_i_node = tape.constant(f_i.to_vec())?;
                attention_branch(tape, "attn_item", ei, support_i, f_i_node)?
            };
            let feat = tape.mul(fu_t, fi_t)?;
            tape.concat(&[id_branch, feat])?
        }
        ModelKind::Car | ModelKind::Cnr => {
            let f_u_node = match f_u {
                FuSource::Node(id) => id,
                FuSource::Data(d) => {
                    check_feature_dim(state, d.len(), "user feature vector")?;
                    tape.constant(d.to_vec())?
                }
            };
            check_feature_dim(state, f_i.len(), "item feature vector")?;
            let f_i_node = tape.constant(f_i.to_vec())?;
            let xu = tape.matvec("feat_map_user", f_u_node, false)?;
            let xi = tape.matvec("feat_map_item", f_i_node, false)?;
            let feat = tape.mul(xu, xi)?;
            tape.concat(&[id_branch, feat])?
        }
    };
    mlp(tape, state, z)
}

/// Attention-based relevance score for a pair with the given features.
pub fn score_nar(state: &ModelState, user: usize, item: usize, pair: &PairFeatures) -> Result<f64> {
    if state.config.kind != ModelKind::Nar {
        return Err(XrecError::Invalid(format!("score_nar called on a {} model", state.config.kind)));
    }
    let mut tape = Tape::frozen(&state.params);
    let s = build_pair_score(
        &mut tape,
        state,
        user,
        item,
        FuSource::Data(&pair.f_u),
        &pair.support_u,
        &pair.f_i,
        &pair.support_i,
    )?;
    Ok(tape.scalar(s))
}

/// Feature-mapping relevance score, optionally with a perturbation added to
/// the user feature vector before mapping. Passing `delta = 0` is
/// bit-identical to passing no delta.
pub fn score_car(
    state: &ModelState,
    user: usize,
    item: usize,
    pair: &PairFeatures,
    delta: Option<&[f64]>,
) -> Result<f64> {
    if !state.config.kind.uses_feature_maps() {
        return Err(XrecError::Invalid(format!("score_car called on a {} model", state.config.kind)));
    }
    let perturbed;
    let f_u: &[f64] = match delta {
        Some(d) => {
            check_feature_dim(state, d.len(), "perturbation")?;
            check_feature_dim(state, pair.f_u.len(), "user feature vector")?;
            perturbed = pair.f_u.iter().zip(d).map(|(f, d)| f + d).collect::<Vec<f64>>();
            &perturbed
        }
        None => &pair.f_u,
    };
    let mut tape = Tape::frozen(&state.params);
    let s = build_pair_score(
        &mut tape,
        state,
        user,
        item,
        FuSource::Data(f_u),
        &pair.support_u,
        &pair.f_i,
        &pair.support_i,
    )?;
    Ok(tape.scalar(s))
}

/// ID-embeddings-only relevance score.
pub fn score_baseline(state: &ModelState, user: usize, item: usize) -> Result<f64> {
    if state.config.kind != ModelKind::Baseline {
        return Err(XrecError::Invalid(format!("score_baseline called on a {} model", state.config.kind)));
    }
    let mut tape = Tape::frozen(&state.params);
    let empty = PairFeatures { f_u: vec![], f_i: vec![], support_u: vec![], support_i: vec![] };
    let s = build_pair_score(
        &mut tape,
        state,
        user,
        item,
        FuSource::Data(&empty.f_u),
        &empty.support_u,
        &empty.f_i,
        &empty.support_i,
    )?;
    Ok(tape.scalar(s))
}

/// Score an arbitrary pair the way evaluation does: features come from the
/// dataset aggregates, dispatch follows the model kind.
pub fn score_pair(state: &ModelState, ds: &Dataset, user: usize, item: usize) -> Result<f64> {
    match state.config.kind {
        ModelKind::Baseline => score_baseline(state, user, item),
        ModelKind::Nar => score_nar(state, user, item, &scoring_features(ds, user, item)),
        ModelKind::Car | ModelKind::Cnr => score_car(state, user, item, &scoring_features(ds, user, item), None),
    }
}

/// `score_pair` plus the gradients of the score with respect to every
/// parameter array it touched.
pub fn score_pair_grads(state: &ModelState, ds: &Dataset, user: usize, item: usize) -> Result<(f64, ParamGrads)> {
    let pair = scoring_features(ds, user, item);
    let mut tape = Tape::new(&state.params);
    let s = build_pair_score(
        &mut tape,
        state,
        user,
        item,
        FuSource::Data(&pair.f_u),
        &pair.support_u,
        &pair.f_i,
        &pair.support_i,
    )?;
    let grads = tape.backward(s)?;
    Ok((tape.scalar(s), grads))
}

/// Like `score_pair_grads`, but also differentiates through the user
/// feature vector: returns (score, parameter gradients, f_u, d score/d f_u).
/// Coordinates the score never reads (outside the support, or the whole
/// vector for the id-only kind) come back as exact zeros.
pub fn score_pair_grads_with_fu(
    state: &ModelState,
    ds: &Dataset,
    user: usize,
    item: usize,
) -> Result<(f64, ParamGrads, Vec<f64>, Vec<f64>)> {
    let pair = scoring_features(ds, user, item);
    let mut tape = Tape::new(&state.params);
    let fu = tape.input(pair.f_u.clone(), true)?;
    let s = build_pair_score(
        &mut tape,
        state,
        user,
        item,
        FuSource::Node(fu),
        &pair.support_u,
        &pair.f_i,
        &pair.support_i,
    )?;
    let grads = tape.backward(s)?;
    let d_fu = tape.grad(fu).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; pair.f_u.len()]);
    Ok((tape.scalar(s), grads, pair.f_u, d_fu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScorerConfig;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_state(kind: ModelKind) -> ModelState {
        ModelState::init(
            ScorerConfig { kind, id_dim: 4, word_dim: 3, mlp_hidden: vec![6, 5] },
            3, 4, 5, 42,
        )
        .unwrap()
    }

    fn set(state: &mut ModelState, name: &str, values: Vec<f64>) {
        let p = state.params.by_name_mut(name).unwrap();
        assert_eq!(p.values.len(), values.len(), "{name}");
        p.values = values;
    }

    #[test]
    fn attention_singleton_is_one() {
        let state = small_state(ModelKind::Nar);
        assert_eq!(attention_weights(&state, AttentionSide::User, 0, &[2]).unwrap(), vec![1.0]);
    }

    #[test]
    fn attention_zero_embedding_is_uniform() {
        let mut state = small_state(ModelKind::Nar);
        let id = state.params.id("user_embed").unwrap();
        let cols = state.params.param(id).shape.cols();
        for v in &mut state.params.param_mut(id).values[0..cols] {
            *v = 0.0;
        }
        let a = attention_weights(&state, AttentionSide::User, 0, &[0, 1, 4]).unwrap();
        for &w in &a {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_hand_softmax() {
        // Arrange logits (1, 0): e_u = (1,0,0,0), M picks coordinate 0 into
        // latent coordinate 0, w_0 = (1,0,0), w_1 = 0.
        let mut state = ModelState::init(
            ScorerConfig { kind: ModelKind::Nar, id_dim: 4, word_dim: 3, mlp_hidden: vec![2] },
            2, 2, 2, 0,
        )
        .unwrap();
        set(&mut state, "user_embed", vec![1.0, 0.0, 0.0, 0.0, /* user 1 */ 0.0, 0.0, 0.0, 0.0]);
        let mut m = vec![0.0; 12];
        m[0] = 1.0; // M[0][0]
        set(&mut state, "attn_user", m);
        set(&mut state, "word_embed", vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let a = attention_weights(&state, AttentionSide::User, 0, &[0, 1]).unwrap();
        // Reference values from a high-precision softmax evaluation.
        assert!((a[0] - 0.7310585786300049).abs() < 1e-15);
        assert!((a[1] - 0.2689414213699951).abs() < 1e-15);
    }

    #[test]
    fn attention_simplex_property() {
        let state = small_state(ModelKind::Nar);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let u = rng.random_range(0..4);
            let p = rng.random_range(1..=5);
            let mut pool: Vec<usize> = (0..5).collect();
            for k in 0..p {
                let j = rng.random_range(k..5);
                pool.swap(k, j);
            }
            let support = &pool[..p];
            let a = attention_weights(&state, AttentionSide::Item, u, support).unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if p == 1 {
                assert_eq!(a, vec![1.0]);
            } else {
                assert!(a.iter().all(|&w| w > 0.0 && w < 1.0));
            }
        }
    }

    #[test]
    fn attention_errors() {
        let state = small_state(ModelKind::Nar);
        assert!(attention_weights(&state, AttentionSide::User, 0, &[]).is_err());
        assert!(attention_weights(&state, AttentionSide::User, 99, &[0]).is_err());
        let car = small_state(ModelKind::Car);
        assert!(attention_weights(&car, AttentionSide::User, 0, &[0]).is_err());
    }

    #[test]
    fn aggregation_scales_words_by_weight_and_value() {
        let mut state = small_state(ModelKind::Nar);
        set(
            &mut state,
            "word_embed",
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5],
        );
        // All feature values zero -> zero vector.
        let zero = aggregate_features(&state, &[0.6, 0.4], &[0, 1], &vec![0.0; 5]).unwrap();
        assert_eq!(zero, vec![0.0, 0.0, 0.0]);
        // Single word, alpha = 1, f = 2 -> twice the word vector.
        let mut f = vec![0.0; 5];
        f[2] = 2.0;
        let double = aggregate_features(&state, &[1.0], &[2], &f).unwrap();
        assert_eq!(double, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn aggregation_convexity_bound() {
        // Orthonormal word vectors + uniform attention: the norm of the
        // aggregate never exceeds the largest feature value.
        let mut state = small_state(ModelKind::Nar);
        set(
            &mut state,
            "word_embed",
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let support = vec![0, 1, 2];
            let alpha = vec![1.0 / 3.0; 3];
            let mut f = vec![0.0; 5];
            for &k in &support {
                f[k] = rng.random_range(1.0..5.0);
            }
            let agg = aggregate_features(&state, &alpha, &support, &f).unwrap();
            let norm = agg.iter().map(|x| x * x).sum::<f64>().sqrt();
            let fmax = f.iter().cloned().fold(0.0, f64::max);
            assert!(norm <= fmax + 1e-12, "norm {norm} exceeds max value {fmax}");
        }
    }

    fn featureful_pair(state: &ModelState) -> PairFeatures {
        let p = state.num_features;
        let mut f_u = vec![0.0; p];
        let mut f_i = vec![0.0; p];
        f_u[1] = 2.5;
        f_u[3] = 1.5;
        f_i[1] = 3.0;
        f_i[3] = 2.0;
        PairFeatures { f_u, f_i, support_u: vec![1, 3], support_i: vec![1, 3] }
    }

    #[test]
    fn zero_mlp_weights_score_zero() {
        for kind in [ModelKind::Nar, ModelKind::Car, ModelKind::Baseline] {
            let mut state = small_state(kind);
            for l in 0..2 {
                let len = state.params.by_name(&format!("mlp_w{l}")).unwrap().values.len();
                set(&mut state, &format!("mlp_w{l}"), vec![0.0; len]);
            }
            let len = state.params.by_name("mlp_w_out").unwrap().values.len();
            set(&mut state, "mlp_w_out", vec![0.0; len]);
            let pair = featureful_pair(&state);
            let s = match kind {
                ModelKind::Nar => score_nar(&state, 0, 1, &pair).unwrap(),
                ModelKind::Car => score_car(&state, 0, 1, &pair, None).unwrap(),
                _ => score_baseline(&state, 0, 1).unwrap(),
            };
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn scores_are_deterministic_and_finite() {
        let state = small_state(ModelKind::Nar);
        let pair = featureful_pair(&state);
        let a = score_nar(&state, 0, 1, &pair).unwrap();
        let b = score_nar(&state, 0, 1, &pair).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.is_finite());
        let car = small_state(ModelKind::Car);
        let a = score_car(&car, 2, 3, &pair, None).unwrap();
        let b = score_car(&car, 2, 3, &pair, None).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn identical_items_score_identically() {
        let mut state = small_state(ModelKind::Nar);
        // Copy item 1's embedding into item 2.
        let id = state.params.id("item_embed").unwrap();
        let row1 = state.params.row(id, 1).to_vec();
        let cols = state.params.param(id).shape.cols();
        state.params.param_mut(id).values[2 * cols..3 * cols].copy_from_slice(&row1);
        let pair = featureful_pair(&state);
        let a = score_nar(&state, 0, 1, &pair).unwrap();
        let b = score_nar(&state, 0, 2, &pair).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        // The same holds for the baseline.
        let mut base = small_state(ModelKind::Baseline);
        let id = base.params.id("item_embed").unwrap();
        let row1 = base.params.row(id, 1).to_vec();
        base.params.param_mut(id).values[2 * cols..3 * cols].copy_from_slice(&row1);
        assert_eq!(
            score_baseline(&base, 0, 1).unwrap().to_bits(),
            score_baseline(&base, 0, 2).unwrap().to_bits()
        );
    }

    #[test]
    fn zero_delta_is_bit_identical_to_absent() {
        let state = small_state(ModelKind::Car);
        let pair = featureful_pair(&state);
        let plain = score_car(&state, 0, 1, &pair, None).unwrap();
        let zeroed = score_car(&state, 0, 1, &pair, Some(&vec![0.0; 5])).unwrap();
        assert_eq!(plain.to_bits(), zeroed.to_bits());
    }

    #[test]
    fn zero_feature_map_severs_feature_path() {
        let mut state = small_state(ModelKind::Car);
        for name in ["feat_map_user", "feat_map_item"] {
            let len = state.params.by_name(name).unwrap().values.len();
            set(&mut state, name, vec![0.0; len]);
        }
        let pair = featureful_pair(&state);
        let base = score_car(&state, 0, 1, &pair, None).unwrap();
        let mut other = pair.clone();
        other.f_u[1] = 4.9;
        let with_other_features = score_car(&state, 0, 1, &other, None).unwrap();
        let with_delta = score_car(&state, 0, 1, &pair, Some(&[0.3, -0.2, 0.1, 0.0, 0.9])).unwrap();
        assert_eq!(base.to_bits(), with_other_features.to_bits());
        assert_eq!(base.to_bits(), with_delta.to_bits());
    }

    #[test]
    fn dimension_mismatches_error() {
        let state = small_state(ModelKind::Car);
        let pair = featureful_pair(&state);
        assert!(score_car(&state, 0, 1, &pair, Some(&[0.0; 3])).is_err());
        let mut short = pair.clone();
        short.f_u.pop();
        assert!(score_car(&state, 0, 1, &short, None).is_err());
        assert!(score_car(&state, 99, 1, &pair, None).is_err());
        assert!(score_baseline(&small_state(ModelKind::Baseline), 0, 99).is_err());
    }

    #[test]
    fn car_with_zero_features_matches_restricted_baseline() {
        // With all-zero feature vectors the feature branch contributes a
        // zero block, so a baseline whose MLP equals the CAR MLP restricted
        // to the ID columns must produce the same score.
        let car = small_state(ModelKind::Car);
        let mut base = ModelState::init(
            ScorerConfig { kind: ModelKind::Baseline, id_dim: 4, word_dim: 3, mlp_hidden: vec![6, 5] },
            3, 4, 5, 1,
        )
        .unwrap();
        for name in ["user_embed", "item_embed", "mlp_b0", "mlp_b1", "mlp_w1", "mlp_w_out", "mlp_b_out"] {
            let v = car.params.by_name(name).unwrap().values.clone();
            set(&mut base, name, v);
        }
        // CAR's first layer is 6 x 7 (ID 4 + latent 3); keep only the first
        // four columns.
        let w0 = &car.params.by_name("mlp_w0").unwrap().values;
        let restricted: Vec<f64> = (0..6).flat_map(|r| w0[r * 7..r * 7 + 4].to_vec()).collect();
        set(&mut base, "mlp_w0", restricted);
        let zero_pair = PairFeatures {
            f_u: vec![0.0; 5],
            f_i: vec![0.0; 5],
            support_u: vec![],
            support_i: vec![],
        };
        let a = score_car(&car, 1, 2, &zero_pair, None).unwrap();
        let b = score_baseline(&base, 1, 2).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn nar_forward_matches_hand_computation() {
        let state = small_state(ModelKind::Nar);
        let pair = featureful_pair(&state);
        let (u, i) = (1, 2);
        // Hand-computed forward pass using only raw parameter values.
        let row = |name: &str, r: usize| state.params.row(state.params.id(name).unwrap(), r).to_vec();
        let eu = row("user_embed", u);
        let ei = row("item_embed", i);
        let id: Vec<f64> = eu.iter().zip(&ei).map(|(a, b)| a * b).collect();
        let au = attention_weights(&state, AttentionSide::User, u, &pair.support_u).unwrap();
        let ai = attention_weights(&state, AttentionSide::Item, i, &pair.support_i).unwrap();
        let fu_t = aggregate_features(&state, &au, &pair.support_u, &pair.f_u).unwrap();
        let fi_t = aggregate_features(&state, &ai, &pair.support_i, &pair.f_i).unwrap();
        let feat: Vec<f64> = fu_t.iter().zip(&fi_t).map(|(a, b)| a * b).collect();
        let mut h: Vec<f64> = id.iter().chain(&feat).copied().collect();
        for l in 0..2 {
            let w = state.params.by_name(&format!("mlp_w{l}")).unwrap();
            let b = state.params.by_name(&format!("mlp_b{l}")).unwrap();
            let (rows, cols) = (w.shape.rows(), w.shape.cols());
            h = (0..rows)
                .map(|r| {
                    let dot: f64 = w.values[r * cols..(r + 1) * cols].iter().zip(&h).map(|(w, x)| w * x).sum();
                    (dot + b.values[r]).max(0.0)
                })
                .collect();
        }
        let w = state.params.by_name("mlp_w_out").unwrap();
        let b = state.params.by_name("mlp_b_out").unwrap();
        let hand: f64 = w.values.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + b.values[0];
        let scored = score_nar(&state, u, i, &pair).unwrap();
        assert!((hand - scored).abs() < 1e-12, "hand {hand} vs scored {scored}");
    }

    #[test]
    fn car_forward_matches_hand_computation() {
        let state = small_state(ModelKind::Car);
        let pair = featureful_pair(&state);
        let delta = vec![0.05, -0.1, 0.0, 0.2, 0.0];
        let (u, i) = (2, 0);
        let row = |name: &str, r: usize| state.params.row(state.params.id(name).unwrap(), r).to_vec();
        let eu = row("user_embed", u);
        let ei = row("item_embed", i);
        let id: Vec<f64> = eu.iter().zip(&ei).map(|(a, b)| a * b).collect();
        let matvec = |name: &str, x: &[f64]| {
            let w = state.params.by_name(name).unwrap();
            let (rows, cols) = (w.shape.rows(), w.shape.cols());
            (0..rows)
                .map(|r| w.values[r * cols..(r + 1) * cols].iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
                .collect::<Vec<f64>>()
        };
        let fu: Vec<f64> = pair.f_u.iter().zip(&delta).map(|(f, d)| f + d).collect();
        let xu = matvec("feat_map_user", &fu);
        let xi = matvec("feat_map_item", &pair.f_i);
        let feat: Vec<f64> = xu.iter().zip(&xi).map(|(a, b)| a * b).collect();
        let mut h: Vec<f64> = id.iter().chain(&feat).copied().collect();
        for l in 0..2 {
            let w = state.params.by_name(&format!("mlp_w{l}")).unwrap();
            let b = state.params.by_name(&format!("mlp_b{l}")).unwrap();
            let (rows, cols) = (w.shape.rows(), w.shape.cols());
            h = (0..rows)
                .map(|r| {
                    let dot: f64 = w.values[r * cols..(r + 1) * cols].iter().zip(&h).map(|(w, x)| w * x).sum();
                    (dot + b.values[r]).max(0.0)
                })
                .collect();
        }
        let w = state.params.by_name("mlp_w_out").unwrap();
        let b = state.params.by_name("mlp_b_out").unwrap();
        let hand: f64 = w.values.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + b.values[0];
        let scored = score_car(&state, u, i, &pair, Some(&delta)).unwrap();
        assert!((hand - scored).abs() < 1e-12, "hand {hand} vs scored {scored}");
    }
}
