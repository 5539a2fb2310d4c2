//! Per-user explanation vectors over the feature vocabulary, and the
//! comparisons between them.
//!
//! Each strategy explains a user with a P-length vector φ_u: NAR with the
//! attention its scorer put on the user's review words, CAR and CNR with
//! the magnitudes of the perturbations found during training, and the
//! ground truth with a 0/1 indicator of the words the user actually wrote
//! with nonzero sentiment. Vectors from different sources are compared by
//! their top-k words and by per-user Pearson correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::data::vocab::FeatureVocabulary;
use crate::error::{Result, XrecError};
use crate::model::scorer::{attention_weights, AttentionSide};
use crate::model::{ModelKind, ModelState};
use crate::train::{PerturbKind, PerturbationRecord};

/// Which strategy produced an explanation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationSource {
    Gt,
    Nar,
    Car,
    Cnr,
}

impl ExplanationSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExplanationSource::Gt => "gt",
            ExplanationSource::Nar => "nar",
            ExplanationSource::Car => "car",
            ExplanationSource::Cnr => "cnr",
        }
    }

    /// The fixed order used by the correlation matrix and the dumps.
    pub fn all() -> [ExplanationSource; 4] {
        [ExplanationSource::Gt, ExplanationSource::Nar, ExplanationSource::Car, ExplanationSource::Cnr]
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(ExplanationSource::Gt),
            "nar" => Ok(ExplanationSource::Nar),
            "car" => Ok(ExplanationSource::Car),
            "cnr" => Ok(ExplanationSource::Cnr),
            other => Err(XrecError::Invalid(format!("unknown explanation source `{other}`"))),
        }
    }
}

impl fmt::Display for ExplanationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A per-user explanation: one value per vocabulary word.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationVector {
    pub user: usize,
    pub source: ExplanationSource,
    pub values: Vec<f64>,
    /// What the entries are: `indicator`, `mean-attention`, or
    /// `mean-abs-perturbation`.
    pub normalization: &'static str,
    /// True when the user had no evidence to aggregate (no featured
    /// training interactions, or no perturbation records); the values are
    /// then all zero.
    pub vacuous: bool,
}

impl ExplanationVector {
    /// `(index, value)` pairs for the nonzero entries, index-ascending.
    pub fn sparse(&self) -> Vec<(usize, f64)> {
        self.values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (k, *v)).collect()
    }
}

/// Ground-truth explanation: the 0/1 indicator of the words the user wrote
/// with nonzero sentiment anywhere in the corpus.
pub fn explanation_gt(ds: &Dataset, user: usize) -> Result<ExplanationVector> {
    check_user(ds, user)?;
    let g = ds.ground_truth_features(user);
    let mut values = vec![0.0; ds.num_features()];
    for &k in &g {
        values[k] = 1.0;
    }
    Ok(ExplanationVector {
        user,
        source: ExplanationSource::Gt,
        values,
        normalization: "indicator",
        vacuous: g.is_empty(),
    })
}

/// Attention explanation: for each word, the mean attention weight the
/// user-side scorer gave it, over the user's training interactions whose
/// review mentions it. Words never attended stay 0; a user with no
/// featured training interactions gets a vacuous zero vector.
pub fn explanation_nar(state: &ModelState, ds: &Dataset, user: usize) -> Result<ExplanationVector> {
    check_user(ds, user)?;
    if state.config.kind != ModelKind::Nar {
        return Err(XrecError::Invalid(format!(
            "attention explanations need a nar checkpoint, got {}",
            state.config.kind
        )));
    }
    let p = ds.num_features();
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    let mut seen = false;
    for &idx in &ds.train {
        if ds.interactions[idx].user != user {
            continue;
        }
        let Some(feats) = ds.features[idx].as_ref() else { continue };
        if feats.support.is_empty() {
            continue;
        }
        seen = true;
        let alpha = attention_weights(state, AttentionSide::User, user, &feats.support)?;
        for (&k, &a) in feats.support.iter().zip(&alpha) {
            sums[k] += a;
            counts[k] += 1;
        }
    }
    let values: Vec<f64> =
        sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
    Ok(ExplanationVector {
        user,
        source: ExplanationSource::Nar,
        values,
        normalization: "mean-attention",
        vacuous: !seen,
    })
}

/// Perturbation explanation: for each word, the mean |δ_k| over the user's
/// perturbation records of the given kind. Magnitudes, not signed values,
/// so a push and its opposite reinforce rather than cancel. No records →
/// vacuous zero vector.
pub fn explanation_perturb(
    ds: &Dataset,
    records: &[PerturbationRecord],
    user: usize,
    kind: PerturbKind,
) -> Result<ExplanationVector> {
    check_user(ds, user)?;
    let p = ds.num_features();
    let mut sums = vec![0.0; p];
    let mut n = 0usize;
    for r in records.iter().filter(|r| r.user == user && r.kind == kind) {
        n += 1;
        for &(k, v) in &r.delta {
            if k >= p {
                return Err(XrecError::Invalid(format!("perturbation index {k} out of range for P={p}")));
            }
            sums[k] += v.abs();
        }
    }
    let values: Vec<f64> =
        if n == 0 { sums } else { sums.iter().map(|s| s / n as f64).collect() };
    let source = match kind {
        PerturbKind::Adversarial => ExplanationSource::Car,
        PerturbKind::Counterfactual => ExplanationSource::Cnr,
    };
    Ok(ExplanationVector {
        user,
        source,
        values,
        normalization: "mean-abs-perturbation",
        vacuous: n == 0,
    })
}

/// The words of the k largest nonzero entries of φ, best first. Ties break
/// toward the vocabulary order (which is lexicographic), so the output is
/// deterministic. Fewer than k nonzero entries give a shorter list.
pub fn top_k_words<'a>(phi: &[f64], vocab: &'a FeatureVocabulary, k: usize) -> Result<Vec<&'a str>> {
    if k == 0 {
        return Err(XrecError::Invalid("top-k needs k >= 1".into()));
    }
    if phi.len() != vocab.len() {
        return Err(XrecError::Invalid(format!(
            "explanation has {} entries but the vocabulary has {}",
            phi.len(),
            vocab.len()
        )));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(XrecError::Invalid("explanation contains a non-finite value".into()));
    }
    let mut order: Vec<usize> = (0..phi.len()).filter(|&i| phi[i] != 0.0).collect();
    order.sort_by(|&a, &b| phi[b].partial_cmp(&phi[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    Ok(order.into_iter().map(|i| vocab.word(i)).collect())
}

/// Pearson correlation of two equal-length vectors; `None` when either is
/// constant (the correlation is undefined there).
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson over mismatched lengths");
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Mean pairwise Pearson correlations between explanation sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PearsonReport {
    /// Row/column order: gt, nar, car, cnr.
    pub matrix: [[f64; 4]; 4],
    /// Per cell: users dropped because one of the two vectors was constant.
    pub skipped: [[usize; 4]; 4],
    /// Users present in all four sources.
    pub users: usize,
}

/// Mean per-user Pearson correlation between every pair of sources, over
/// the users present in all four. A user whose vector is constant under
/// either source of a pair is skipped for that cell (and counted); the
/// diagonal is identically 1 for everyone who is not skipped.
pub fn pearson_matrix(vectors: &[ExplanationVector]) -> Result<PearsonReport> {
    let mut by_source: BTreeMap<ExplanationSource, BTreeMap<usize, &ExplanationVector>> = BTreeMap::new();
    for v in vectors {
        if let Some(old) = by_source.entry(v.source).or_default().insert(v.user, v) {
            return Err(XrecError::Invalid(format!(
                "duplicate {} explanation for user {}",
                old.source, old.user
            )));
        }
    }
    let sources = ExplanationSource::all();
    let mut shared: Option<BTreeSet<usize>> = None;
    for s in sources {
        let users: BTreeSet<usize> = by_source.get(&s).map(|m| m.keys().copied().collect()).unwrap_or_default();
        shared = Some(match shared {
            None => users,
            Some(acc) => acc.intersection(&users).copied().collect(),
        });
    }
    let shared = shared.unwrap_or_default();
    if shared.is_empty() {
        return Err(XrecError::Invalid("no user has explanations from all four sources".into()));
    }
    let mut matrix = [[0.0; 4]; 4];
    let mut skipped = [[0usize; 4]; 4];
    for (i, a) in sources.iter().enumerate() {
        for (j, b) in sources.iter().enumerate().skip(i) {
            let mut sum = 0.0;
            let mut used = 0usize;
            let mut dropped = 0usize;
            for &u in &shared {
                let va = &by_source[a][&u].values;
                let vb = &by_source[b][&u].values;
                // A vector correlates with itself at exactly 1 whenever the
                // correlation exists at all; only the existence check needs
                // the data.
                let r = if i == j { pearson(va, va).map(|_| 1.0) } else { pearson(va, vb) };
                match r {
                    Some(r) => {
                        sum += r;
                        used += 1;
                    }
                    None => dropped += 1,
                }
            }
            if used == 0 {
                return Err(XrecError::Invalid(format!(
                    "every shared user has a constant vector for ({a}, {b})"
                )));
            }
            let mean = sum / used as f64;
            matrix[i][j] = mean;
            matrix[j][i] = mean;
            skipped[i][j] = dropped;
            skipped[j][i] = dropped;
        }
    }
    Ok(PearsonReport { matrix, skipped, users: shared.len() })
}

pub const EXPLANATION_FORMAT: &str = "xrec-explanations/1";
pub const TOP_WORDS_FORMAT: &str = "xrec-top-words/1";

/// Write explanation vectors as `user<TAB>source<TAB>index:value,...`
/// (sparse, index-ascending), after a header line with the format version
/// and the config echo.
pub fn write_explanations(
    path: &Path,
    ds: &Dataset,
    vectors: &[ExplanationVector],
    config_echo: &serde_json::Value,
) -> Result<()> {
    let file = File::create(path).map_err(|e| XrecError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| XrecError::io(path, e);
    writeln!(w, "# format={EXPLANATION_FORMAT} config={config_echo}").map_err(io)?;
    for v in vectors {
        let sparse: Vec<String> = v.sparse().iter().map(|(k, x)| format!("{k}:{x}")).collect();
        writeln!(w, "{}\t{}\t{}", ds.user_id(v.user), v.source, sparse.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Write per-user top words as `user<TAB>source<TAB>w1,w2,...`, best first.
pub fn write_top_words(
    path: &Path,
    ds: &Dataset,
    vectors: &[ExplanationVector],
    k: usize,
    config_echo: &serde_json::Value,
) -> Result<()> {
    let file = File::create(path).map_err(|e| XrecError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| XrecError::io(path, e);
    writeln!(w, "# format={TOP_WORDS_FORMAT} k={k} config={config_echo}").map_err(io)?;
    for v in vectors {
        let words = top_k_words(&v.values, &ds.vocab, k)?;
        writeln!(w, "{}\t{}\t{}", ds.user_id(v.user), v.source, words.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Write the 4×4 correlation matrix as CSV with labeled rows and columns,
/// followed by comment lines carrying the intersection size and the
/// per-cell skip counts.
pub fn write_correlations(path: &Path, report: &PearsonReport, config_echo: &serde_json::Value) -> Result<()> {
    let file = File::create(path).map_err(|e| XrecError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| XrecError::io(path, e);
    let names: Vec<&str> = ExplanationSource::all().iter().map(|s| s.as_str()).collect();
    writeln!(w, "source,{}", names.join(",")).map_err(io)?;
    for (i, name) in names.iter().enumerate() {
        let row: Vec<String> = report.matrix[i].iter().map(|v| v.to_string()).collect();
        writeln!(w, "{name},{}", row.join(",")).map_err(io)?;
    }
    writeln!(w, "# users={} config={config_echo}", report.users).map_err(io)?;
    for (i, name) in names.iter().enumerate() {
        let row: Vec<String> = report.skipped[i].iter().map(|v| v.to_string()).collect();
        writeln!(w, "# skipped {name},{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn check_user(ds: &Dataset, user: usize) -> Result<()> {
    if user >= ds.num_users() {
        return Err(XrecError::UnknownId { kind: "user", id: format!("index {user} of {}", ds.num_users()) });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::{FeatureMention, InteractionRecord};
    use crate::data::synth::{synth_generate, SynthConfig};
    use crate::model::{ModelState, ScorerConfig};
    use crate::train::{train_bpr, TrainConfig};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(user: &str, item: &str, rating: u32, words: &[(&str, u32, f64)]) -> InteractionRecord {
        InteractionRecord {
            user_id: user.into(),
            item_id: item.into(),
            rating,
            features: words
                .iter()
                .map(|&(w, f, s)| FeatureMention { word: w.into(), frequency: f, sentiment: s })
                .collect(),
        }
    }

    /// Every record lands in the train split.
    fn all_train_dataset(records: &[InteractionRecord]) -> Dataset {
        let n = records.len();
        Dataset::build(records, 5, 0, Some(((0..n).collect(), vec![]))).unwrap()
    }

    fn nar_state(ds: &Dataset, seed: u64) -> ModelState {
        ModelState::init(
            ScorerConfig { kind: ModelKind::Nar, id_dim: 8, word_dim: 6, mlp_hidden: vec![12, 8] },
            ds.num_users(),
            ds.num_items(),
            ds.num_features(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn ground_truth_is_the_indicator_of_written_words() {
        let records = vec![
            rec("u1", "i1", 5, &[("sound", 2, 0.8), ("pedal", 1, -0.2)]),
            rec("u1", "i2", 4, &[("sound", 1, 0.5), ("case", 1, 0.0)]),
            rec("u2", "i1", 2, &[]),
        ];
        let ds = Dataset::build(&records, 5, 0, None).unwrap();
        let u1 = ds.user_index("u1").unwrap();
        let gt = explanation_gt(&ds, u1).unwrap();
        assert!(!gt.vacuous);
        assert!(gt.values.iter().all(|v| *v == 0.0 || *v == 1.0));
        let expect: BTreeSet<usize> = ds.ground_truth_features(u1);
        let got: BTreeSet<usize> = gt.sparse().iter().map(|(k, _)| *k).collect();
        assert_eq!(got, expect);
        // "case" had zero sentiment, so it is not ground truth.
        assert_eq!(gt.values[ds.vocab.index_of("case").unwrap()], 0.0);

        let u2 = ds.user_index("u2").unwrap();
        let empty = explanation_gt(&ds, u2).unwrap();
        assert!(empty.vacuous);
        assert!(empty.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn singleton_support_attended_with_weight_one() {
        let records = vec![
            rec("u1", "i1", 5, &[("sound", 2, 0.8)]),
            rec("u2", "i1", 4, &[("pedal", 1, 0.6)]),
        ];
        let ds = all_train_dataset(&records);
        let state = nar_state(&ds, 3);
        let phi = explanation_nar(&state, &ds, ds.user_index("u1").unwrap()).unwrap();
        assert!(!phi.vacuous);
        assert_eq!(phi.sparse(), vec![(ds.vocab.index_of("sound").unwrap(), 1.0)]);
    }

    #[test]
    fn uniform_attention_averages_to_half() {
        let records = vec![
            rec("u1", "i1", 5, &[("pedal", 1, 0.7), ("sound", 2, 0.8)]),
            rec("u1", "i2", 4, &[("pedal", 2, 0.5), ("sound", 1, 0.6)]),
        ];
        let ds = all_train_dataset(&records);
        let mut state = nar_state(&ds, 3);
        // Zero attention map → all logits equal → uniform weights.
        state.params.by_name_mut("attn_user").unwrap().values.fill(0.0);
        let phi = explanation_nar(&state, &ds, 0).unwrap();
        let k_pedal = ds.vocab.index_of("pedal").unwrap();
        let k_sound = ds.vocab.index_of("sound").unwrap();
        assert!((phi.values[k_pedal] - 0.5).abs() < 1e-12);
        assert!((phi.values[k_sound] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn user_without_featured_interactions_is_vacuous() {
        let records = vec![
            rec("u1", "i1", 5, &[("sound", 2, 0.8)]),
            rec("u2", "i1", 2, &[]),
        ];
        let ds = all_train_dataset(&records);
        let state = nar_state(&ds, 3);
        let phi = explanation_nar(&state, &ds, ds.user_index("u2").unwrap()).unwrap();
        assert!(phi.vacuous);
        assert!(phi.values.iter().all(|v| *v == 0.0));
        // Wrong model kind is a contract error, not a vacuous vector.
        let ds2 = all_train_dataset(&records);
        let car = ModelState::init(
            ScorerConfig::new(ModelKind::Car),
            ds2.num_users(),
            ds2.num_items(),
            ds2.num_features(),
            1,
        )
        .unwrap();
        assert!(explanation_nar(&car, &ds2, 0).is_err());
    }

    fn perturbation(user: usize, kind: PerturbKind, delta: &[f64]) -> PerturbationRecord {
        PerturbationRecord::from_dense(user, 0, 1, kind, false, delta)
    }

    #[test]
    fn perturbation_explanations_average_magnitudes() {
        let records = vec![
            rec("u1", "i1", 5, &[("sound", 2, 0.8)]),
            rec("u1", "i2", 4, &[("pedal", 1, 0.6)]),
            rec("u2", "i1", 4, &[("case", 1, 0.4)]),
        ];
        let ds = all_train_dataset(&records);
        let delta = vec![0.3, 0.0, -0.4];
        // A push and its exact opposite reinforce: magnitudes, not sums.
        let recs = vec![
            perturbation(0, PerturbKind::Adversarial, &delta),
            perturbation(0, PerturbKind::Adversarial, &delta.iter().map(|v| -v).collect::<Vec<_>>()),
        ];
        let phi = explanation_perturb(&ds, &recs, 0, PerturbKind::Adversarial).unwrap();
        assert_eq!(phi.values, vec![0.3, 0.0, 0.4]);
        assert_eq!(phi.normalization, "mean-abs-perturbation");
        assert_eq!(phi.source, ExplanationSource::Car);

        // Single record → its own magnitudes.
        let one = explanation_perturb(&ds, &recs[..1], 0, PerturbKind::Adversarial).unwrap();
        assert_eq!(one.values, vec![0.3, 0.0, 0.4]);

        // Records of the other kind or other users do not contribute.
        let other = explanation_perturb(&ds, &recs, 1, PerturbKind::Adversarial).unwrap();
        assert!(other.vacuous);
        let cf = explanation_perturb(&ds, &recs, 0, PerturbKind::Counterfactual).unwrap();
        assert!(cf.vacuous);
        assert_eq!(cf.source, ExplanationSource::Cnr);
    }

    #[test]
    fn perturbation_support_stays_inside_record_supports() {
        let records = vec![rec("u1", "i1", 5, &[("sound", 2, 0.8), ("pedal", 1, 0.6), ("case", 1, 0.1)])];
        let ds = all_train_dataset(&records);
        let recs = vec![
            perturbation(0, PerturbKind::Counterfactual, &[0.0, 0.2, 0.0]),
            perturbation(0, PerturbKind::Counterfactual, &[0.5, 0.0, 0.0]),
        ];
        let phi = explanation_perturb(&ds, &recs, 0, PerturbKind::Counterfactual).unwrap();
        let support: BTreeSet<usize> = phi.sparse().iter().map(|(k, _)| *k).collect();
        let union: BTreeSet<usize> =
            recs.iter().flat_map(|r| r.delta.iter().map(|(k, _)| *k)).collect();
        assert!(support.is_subset(&union));
        // Mean over the user's records, including the ones missing the word.
        assert!((phi.values[0] - 0.25).abs() < 1e-15);
        assert!((phi.values[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn top_words_order_and_ties() {
        let vocab = FeatureVocabulary::from_words(vec!["amp".into(), "bass".into(), "case".into()]).unwrap();
        assert_eq!(top_k_words(&[0.9, 0.1, 0.5], &vocab, 2).unwrap(), vec!["amp", "case"]);
        assert_eq!(top_k_words(&[0.0, 0.0, 0.0], &vocab, 2).unwrap(), Vec::<&str>::new());
        // Tie at 0.5: the vocabulary is lexicographic, so the first word wins.
        assert_eq!(top_k_words(&[0.5, 0.5, 0.0], &vocab, 1).unwrap(), vec!["amp"]);
        // Fewer nonzero entries than k → shorter list.
        assert_eq!(top_k_words(&[0.0, 0.3, 0.0], &vocab, 3).unwrap(), vec!["bass"]);
        assert!(top_k_words(&[0.1, 0.2, 0.3], &vocab, 0).is_err());
        assert!(top_k_words(&[0.1, 0.2], &vocab, 1).is_err());
    }

    #[test]
    fn pearson_point_values() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[2.0; 4]), None);
        assert_eq!(pearson(&[2.0; 4], &a), None);
        // Shifting and scaling changes nothing.
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_indicators_are_uncorrelated_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = 60;
        let density = 0.2;
        let mut sum = 0.0;
        let mut n = 0usize;
        for _ in 0..1000 {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..p).map(|_| if rng.random::<f64>() < density { 1.0 } else { 0.0 }).collect()
            };
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            if let Some(r) = pearson(&a, &b) {
                sum += r;
                n += 1;
            }
        }
        assert!(n >= 990, "too many constant draws: {n}");
        let mean = sum / n as f64;
        assert!(mean.abs() < 0.02, "mean correlation {mean}");
    }

    fn vector(user: usize, source: ExplanationSource, values: Vec<f64>) -> ExplanationVector {
        ExplanationVector { user, source, values, normalization: "test", vacuous: false }
    }

    #[test]
    fn matrix_is_symmetric_with_unit_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut vectors = Vec::new();
        for user in 0..6 {
            for source in ExplanationSource::all() {
                let values: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
                vectors.push(vector(user, source, values));
            }
        }
        let report = pearson_matrix(&vectors).unwrap();
        assert_eq!(report.users, 6);
        for i in 0..4 {
            assert_eq!(report.matrix[i][i], 1.0);
            for j in 0..4 {
                assert_eq!(report.matrix[i][j], report.matrix[j][i]);
                assert!(report.matrix[i][j].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn constant_vectors_are_skipped_and_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut vectors = Vec::new();
        for user in 0..4 {
            for source in ExplanationSource::all() {
                let values: Vec<f64> = if user == 0 && source == ExplanationSource::Car {
                    vec![0.0; 12]
                } else {
                    (0..12).map(|_| rng.random::<f64>()).collect()
                };
                vectors.push(vector(user, source, values));
            }
        }
        let report = pearson_matrix(&vectors).unwrap();
        // user 0 is unusable wherever car is involved, including the diagonal.
        for (i, a) in ExplanationSource::all().iter().enumerate() {
            for (j, b) in ExplanationSource::all().iter().enumerate() {
                let expect = if *a == ExplanationSource::Car || *b == ExplanationSource::Car { 1 } else { 0 };
                assert_eq!(report.skipped[i][j], expect, "({a}, {b})");
            }
        }
        assert_eq!(report.matrix[2][2], 1.0);
    }

    #[test]
    fn missing_source_or_empty_intersection_is_an_error() {
        let mut vectors = Vec::new();
        for source in [ExplanationSource::Gt, ExplanationSource::Nar, ExplanationSource::Car] {
            vectors.push(vector(0, source, vec![1.0, 0.0, 2.0]));
        }
        assert!(pearson_matrix(&vectors).is_err());
        // cnr exists but only for a different user: intersection still empty.
        vectors.push(vector(1, ExplanationSource::Cnr, vec![1.0, 0.5, 2.0]));
        assert!(pearson_matrix(&vectors).is_err());
        vectors.push(vector(0, ExplanationSource::Cnr, vec![1.0, 0.5, 2.0]));
        assert!(pearson_matrix(&vectors).is_ok());
        // Two vectors for the same (user, source) is a caller bug.
        vectors.push(vector(0, ExplanationSource::Cnr, vec![0.4, 0.5, 2.0]));
        assert!(pearson_matrix(&vectors).is_err());
    }

    #[test]
    fn trained_attention_prefers_planted_words() {
        let synth = SynthConfig {
            users: 50,
            items: 80,
            features: 20,
            density: 0.3,
            planted_per_user: 3,
            item_profile_size: 3,
            noise: 0.1,
            t_max: 5,
        };
        let out = synth_generate(&synth, 77).unwrap();
        let ds = Dataset::build(&out.records, synth.t_max, 77, None).unwrap();
        let mut state = nar_state(&ds, 5);
        let cfg = TrainConfig { epochs: 12, lr: 0.01, batch_size: 64, seed: 9, ..TrainConfig::default() };
        train_bpr(&mut state, &ds, &cfg).unwrap();
        let mut hits = 0usize;
        let mut scored = 0usize;
        for user in 0..ds.num_users() {
            let phi = explanation_nar(&state, &ds, user).unwrap();
            if phi.vacuous {
                continue;
            }
            let top = top_k_words(&phi.values, &ds.vocab, 1).unwrap();
            let planted = &out.planted[ds.user_id(user)];
            scored += 1;
            if planted.iter().any(|w| w == top[0]) {
                hits += 1;
            }
        }
        assert!(scored >= 40, "only {scored} users had featured interactions");
        let rate = hits as f64 / scored as f64;
        let chance = synth.planted_per_user as f64 / synth.features as f64;
        assert!(rate >= 2.0 * chance, "planted argmax rate {rate} vs chance {chance}");
    }

    #[test]
    fn dumps_round_trip_the_obvious_fields() {
        let records = vec![
            rec("u1", "i1", 5, &[("pedal", 1, 0.7), ("sound", 2, 0.8)]),
            rec("u2", "i1", 4, &[("pedal", 2, 0.5)]),
        ];
        let ds = all_train_dataset(&records);
        let state = nar_state(&ds, 3);
        let mut vectors = Vec::new();
        for user in 0..2 {
            vectors.push(explanation_gt(&ds, user).unwrap());
            vectors.push(explanation_nar(&state, &ds, user).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let echo = serde_json::json!({"seed": 3});
        let phi_path = dir.path().join("explanations.tsv");
        write_explanations(&phi_path, &ds, &vectors, &echo).unwrap();
        let text = std::fs::read_to_string(&phi_path).unwrap();
        assert!(text.starts_with(&format!("# format={EXPLANATION_FORMAT} config={{")));
        assert_eq!(text.lines().count(), 1 + vectors.len());
        assert!(text.contains("u1\tgt\t"));
        assert!(text.contains("u2\tnar\t"));

        let words_path = dir.path().join("top_words.tsv");
        write_top_words(&words_path, &ds, &vectors, 5, &echo).unwrap();
        let text = std::fs::read_to_string(&words_path).unwrap();
        assert!(text.contains("u1\tgt\tpedal,sound"));

        // Rewriting produces identical bytes.
        let again = dir.path().join("explanations2.tsv");
        write_explanations(&again, &ds, &vectors, &echo).unwrap();
        assert_eq!(std::fs::read_to_string(&phi_path).unwrap(), std::fs::read_to_string(&again).unwrap());
    }

    #[test]
    fn correlation_csv_has_labeled_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut vectors = Vec::new();
        for user in 0..5 {
            for source in ExplanationSource::all() {
                let values: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
                vectors.push(vector(user, source, values));
            }
        }
        let report = pearson_matrix(&vectors).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("correlations.csv");
        write_correlations(&path, &report, &serde_json::json!({"seed": 1})).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "source,gt,nar,car,cnr");
        let gt_row = lines.next().unwrap();
        assert!(gt_row.starts_with("gt,1,"), "{gt_row}");
        assert!(text.contains("# users=5"));
    }
}
