//! Pairwise ranking training and the two perturbation procedures built on
//! top of it: loss-ascending (adversarial) perturbations with augmented
//! retraining, and ranking-flipping (counterfactual) perturbation search
//! with alternating retraining.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Result, XrecError};
use crate::model::ModelState;

mod adversarial;
mod bpr;
mod counterfactual;
mod triples;

pub use adversarial::{adversarial_perturbation_records, fgsm_perturbation, train_adversarial};
pub use bpr::train_bpr;
pub use counterfactual::{counterfactual_search, perturbation_distance, train_counterfactual};
pub use triples::{sample_bpr_triples, BprTriple};

// Disjoint seed streams so the independently consumed RNGs never alias.
pub(crate) const TRIPLE_STREAM: u64 = 0x7215;
pub(crate) const SEARCH_STREAM: u64 = 0x53c4;
pub(crate) const RETRAIN_STREAM: u64 = 0x9e37;
pub(crate) const RECORD_STREAM: u64 = 0xd00d;

/// How the size of a perturbation is measured during counterfactual search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    L2,
    ElasticNet,
}

impl DistanceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceKind::L2 => "l2",
            DistanceKind::ElasticNet => "elastic_net",
        }
    }
}

/// Knobs for all three training procedures. The defaults reproduce the
/// reference regime: 50 epochs, lr 0.001, lambda 1, xi 0.001, 20 outer
/// rounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    /// L2 budget of adversarial perturbations.
    pub epsilon: f64,
    /// Weight of the perturbed loss term in adversarial training.
    pub lambda: f64,
    /// Weight of the distance penalty in counterfactual search.
    pub xi: f64,
    /// Alternation rounds of counterfactual search + retraining.
    pub outer: usize,
    pub distance: DistanceKind,
    /// Inner gradient steps of one counterfactual search.
    pub search_steps: usize,
    pub search_lr: f64,
    /// Early-stop threshold on the distance change once flipped.
    pub search_tol: f64,
    /// Triples searched per alternation round.
    pub search_triples: usize,
    /// Retraining epochs per alternation round.
    pub retrain_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 0.001,
            batch_size: 64,
            negatives_per_positive: 1,
            epsilon: 0.5,
            lambda: 1.0,
            xi: 0.001,
            outer: 20,
            distance: DistanceKind::ElasticNet,
            search_steps: 100,
            search_lr: 0.05,
            search_tol: 1e-6,
            search_triples: 200,
            retrain_epochs: 1,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lr", self.lr),
            ("epsilon", self.epsilon),
            ("lambda", self.lambda),
            ("xi", self.xi),
            ("search_tol", self.search_tol),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(XrecError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.search_lr.is_finite() || self.search_lr <= 0.0 {
            return Err(XrecError::Config(format!("search_lr must be finite and > 0, got {}", self.search_lr)));
        }
        if self.batch_size == 0 {
            return Err(XrecError::Config("batch_size must be >= 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(XrecError::Config("negatives_per_positive must be >= 1".into()));
        }
        if self.search_triples == 0 {
            return Err(XrecError::Config("search_triples must be >= 1".into()));
        }
        if self.retrain_epochs == 0 {
            return Err(XrecError::Config("retrain_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// One run-log line: losses for one epoch (or one alternation round).
/// `aux_loss` carries the perturbed-loss term where the procedure has one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub clean_loss: f64,
    pub aux_loss: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Adversarial,
    Counterfactual,
}

impl PerturbKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbKind::Adversarial => "adversarial",
            PerturbKind::Counterfactual => "counterfactual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adversarial" => Ok(PerturbKind::Adversarial),
            "counterfactual" => Ok(PerturbKind::Counterfactual),
            other => Err(XrecError::Invalid(format!("unknown perturbation kind '{other}'"))),
        }
    }
}

/// One generated perturbation of a user feature vector on one triple.
/// `delta` is sparse: (feature index, value) pairs with ascending indices,
/// nonzero values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub user: usize,
    pub pos_item: usize,
    pub neg_item: usize,
    pub kind: PerturbKind,
    /// Whether the perturbed scores rank the negative above the positive.
    pub flipped: bool,
    pub l2: f64,
    pub l1: f64,
    pub delta: Vec<(usize, f64)>,
}

impl PerturbationRecord {
    pub fn from_dense(
        user: usize,
        pos_item: usize,
        neg_item: usize,
        kind: PerturbKind,
        flipped: bool,
        delta: &[f64],
    ) -> Self {
        let sparse: Vec<(usize, f64)> =
            delta.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, &v)| (k, v)).collect();
        PerturbationRecord {
            user,
            pos_item,
            neg_item,
            kind,
            flipped,
            l2: l2_norm(delta),
            l1: l1_norm(delta),
            delta: sparse,
        }
    }

    pub fn dense_delta(&self, num_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_features];
        for &(k, v) in &self.delta {
            out[k] = v;
        }
        out
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn check_compat(state: &ModelState, ds: &Dataset) -> Result<()> {
    if state.num_users != ds.num_users()
        || state.num_items != ds.num_items()
        || state.num_features != ds.num_features()
    {
        return Err(XrecError::Invalid(format!(
            "model built for {} users x {} items x {} features, dataset has {} x {} x {}",
            state.num_users,
            state.num_items,
            state.num_features,
            ds.num_users(),
            ds.num_items(),
            ds.num_features()
        )));
    }
    Ok(())
}

/// Items each user has a training positive for; negatives are drawn outside
/// this set.
pub(crate) fn positive_item_sets(ds: &Dataset) -> Vec<BTreeSet<usize>> {
    let mut sets = vec![BTreeSet::new(); ds.num_users()];
    for (user, list) in ds.train_positives.iter().enumerate() {
        for &idx in list {
            sets[user].insert(ds.interactions[idx].item);
        }
    }
    sets
}

pub const PERTURBATION_FORMAT: &str = "xrec-perturbations/1";

/// Write perturbation records as TSV:
/// `user  pos_item  neg_item  kind  flipped  l2  l1  index:value,...`
/// with a header line carrying the format version and config echo.
pub fn write_perturbations(
    path: &Path,
    ds: &Dataset,
    records: &[PerturbationRecord],
    config_echo: &serde_json::Value,
) -> Result<()> {
    let file = File::create(path).map_err(|e| XrecError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| XrecError::io(path, e);
    writeln!(w, "# format={PERTURBATION_FORMAT} config={config_echo}").map_err(io)?;
    for r in records {
        let sparse: Vec<String> = r.delta.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            ds.user_id(r.user),
            ds.item_id(r.pos_item),
            ds.item_id(r.neg_item),
            r.kind.as_str(),
            r.flipped,
            r.l2,
            r.l1,
            sparse.join(",")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_perturbations(path: &Path, ds: &Dataset) -> Result<Vec<PerturbationRecord>> {
    let file = File::open(path).map_err(|e| XrecError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| XrecError::io(path, e))?;
        let lineno = i + 1;
        let fail = |msg: String| XrecError::Parse { path: path.display().to_string(), line: lineno, msg };
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(fail(format!("expected 8 tab-separated fields, found {}", fields.len())));
        }
        let flipped = match fields[4] {
            "true" => true,
            "false" => false,
            other => return Err(fail(format!("flipped must be true or false, got '{other}'"))),
        };
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| fail(format!("{what} is not a number: '{s}'")))
        };
        let mut delta = Vec::new();
        if !fields[7].is_empty() {
            let mut prev: Option<usize> = None;
            for entry in fields[7].split(',') {
                let (k, v) = entry
                    .split_once(':')
                    .ok_or_else(|| fail(format!("delta entry '{entry}' is not index:value")))?;
                let k: usize =
                    k.parse().map_err(|_| fail(format!("delta index is not an integer: '{k}'")))?;
                if k >= ds.num_features() {
                    return Err(fail(format!("delta index {k} out of range ({} features)", ds.num_features())));
                }
                if prev.is_some_and(|p| p >= k) {
                    return Err(fail("delta indices must be strictly ascending".into()));
                }
                prev = Some(k);
                delta.push((k, num(v, "delta value")?));
            }
        }
        out.push(PerturbationRecord {
            user: ds.user_index(fields[0])?,
            pos_item: ds.item_index(fields[1])?,
            neg_item: ds.item_index(fields[2])?,
            kind: PerturbKind::parse(fields[3])?,
            flipped,
            l2: num(fields[5], "l2")?,
            l1: num(fields[6], "l1")?,
            delta,
        });
    }
    Ok(out)
}
