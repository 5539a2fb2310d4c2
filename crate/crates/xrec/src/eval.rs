//! Sampled ranking evaluation and user-oriented explanation evaluation.
//!
//! Ranking: every held-out positive gets a candidate pool (itself plus
//! sampled never-interacted items), the model orders the pool, and
//! Precision/Recall/F1/HitRate/NDCG are read at a cutoff of 10 with MRR at
//! a cutoff of 1. Lists are averaged per user first so heavy users do not
//! dominate, then across users.
//!
//! Explanations: a user's φ vector is sorted descending and its top-k word
//! indices are compared against the ground-truth word set, giving
//! precision, recall, F1, and a binary-gain NDCG.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Result, XrecError};
use crate::explain::{ExplanationSource, ExplanationVector};
use crate::model::scorer::score_pair;
use crate::model::ModelState;

/// One scored candidate pool: items best-first with their relevance labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub user: usize,
    /// Candidate item indices, best score first, ties broken by item index.
    pub items: Vec<usize>,
    /// Relevance per candidate, aligned with `items`; true iff the item is
    /// one of the user's held-out positives.
    pub relevant: Vec<bool>,
}

/// Order a candidate pool by model score. Ties break toward the smaller
/// item index, so the ranking is independent of the pool's input order.
pub fn rank_candidates(state: &ModelState, ds: &Dataset, user: usize, pool: &[usize]) -> Result<RankedList> {
    let mut seen = BTreeSet::new();
    for &item in pool {
        if !seen.insert(item) {
            return Err(XrecError::Invalid(format!("candidate pool repeats item {item}")));
        }
    }
    let test_items: BTreeSet<usize> =
        ds.test_positives[user].iter().map(|&idx| ds.interactions[idx].item).collect();
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(pool.len());
    for &item in pool {
        scored.push((score_pair(state, ds, user, item)?, item));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(RankedList {
        user,
        items: scored.iter().map(|&(_, i)| i).collect(),
        relevant: scored.iter().map(|&(_, i)| test_items.contains(&i)).collect(),
    })
}

/// Mean ranking metrics over users. Thresholds: `k` for everything except
/// MRR, which is read at 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hit_rate: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub k: usize,
    pub mrr_k: usize,
    /// Users contributing at least one list.
    pub users: usize,
    pub lists: usize,
}

struct ListMetrics {
    precision: f64,
    recall: f64,
    f1: f64,
    hit: f64,
    ndcg: f64,
    mrr: f64,
}

fn log2_discount(rank: usize) -> f64 {
    // 1-based rank r is discounted by log2(r + 1).
    1.0 / ((rank + 1) as f64).log2()
}

fn list_metrics(list: &RankedList, k: usize) -> Result<ListMetrics> {
    if list.items.is_empty() || list.items.len() != list.relevant.len() {
        return Err(XrecError::Invalid("ranked list is empty or misaligned".into()));
    }
    let total_relevant = list.relevant.iter().filter(|r| **r).count();
    if total_relevant == 0 {
        return Err(XrecError::Invalid(format!("user {} has a list with no relevant item", list.user)));
    }
    let top = k.min(list.items.len());
    let hits = list.relevant[..top].iter().filter(|r| **r).count();
    let precision = hits as f64 / k as f64;
    let recall = hits as f64 / total_relevant as f64;
    let f1 = if hits == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let dcg: f64 =
        list.relevant[..top].iter().enumerate().filter(|(_, r)| **r).map(|(i, _)| log2_discount(i + 1)).sum();
    let ideal: f64 = (1..=k.min(total_relevant)).map(log2_discount).sum();
    Ok(ListMetrics {
        precision,
        recall,
        f1,
        hit: if hits > 0 { 1.0 } else { 0.0 },
        ndcg: dcg / ideal,
        mrr: if list.relevant[0] { 1.0 } else { 0.0 },
    })
}

/// Average ranking metrics: per-list metrics are averaged within each user
/// first, then across users, so users with many held-out positives weigh
/// the same as users with one.
pub fn ranking_metrics(lists: &[RankedList], k: usize) -> Result<RankingReport> {
    if lists.is_empty() {
        return Err(XrecError::Invalid("no ranked lists to evaluate".into()));
    }
    if k == 0 {
        return Err(XrecError::Invalid("cutoff k must be at least 1".into()));
    }
    let mut by_user: std::collections::BTreeMap<usize, Vec<ListMetrics>> = std::collections::BTreeMap::new();
    for list in lists {
        by_user.entry(list.user).or_default().push(list_metrics(list, k)?);
    }
    let users = by_user.len();
    let mut sums = [0.0; 6];
    for per_user in by_user.values() {
        let n = per_user.len() as f64;
        let mut u = [0.0; 6];
        for m in per_user {
            u[0] += m.precision;
            u[1] += m.recall;
            u[2] += m.f1;
            u[3] += m.hit;
            u[4] += m.ndcg;
            u[5] += m.mrr;
        }
        for (s, v) in sums.iter_mut().zip(&u) {
            *s += v / n;
        }
    }
    let d = users as f64;
    Ok(RankingReport {
        precision: sums[0] / d,
        recall: sums[1] / d,
        f1: sums[2] / d,
        hit_rate: sums[3] / d,
        ndcg: sums[4] / d,
        mrr: sums[5] / d,
        k,
        mrr_k: 1,
        users,
        lists: lists.len(),
    })
}

/// Eq.-10-style explanation quality for one user: the top-k words of φ
/// against the ground-truth word set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEval {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
}

/// Top-k indices of φ (nonzero entries, descending value, ties toward the
/// smaller index) intersected with g. Precision divides by the prefix
/// actually taken, so a φ with fewer than k nonzero entries is scored on
/// what it ranked, not padded with zeros.
pub fn explanation_metrics(phi: &[f64], g: &BTreeSet<usize>, k: usize) -> Result<ExplanationEval> {
    if k == 0 {
        return Err(XrecError::Invalid("cutoff k must be at least 1".into()));
    }
    if g.is_empty() {
        return Err(XrecError::Invalid("empty ground-truth word set".into()));
    }
    if let Some(&worst) = g.iter().next_back() {
        if worst >= phi.len() {
            return Err(XrecError::Invalid(format!("ground-truth index {worst} outside φ of length {}", phi.len())));
        }
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(XrecError::Invalid("explanation contains a non-finite value".into()));
    }
    let mut order: Vec<usize> = (0..phi.len()).filter(|&i| phi[i] != 0.0).collect();
    if order.is_empty() {
        return Err(XrecError::Invalid("explanation vector is all zero".into()));
    }
    order.sort_by(|&a, &b| phi[b].partial_cmp(&phi[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    let hits = order.iter().filter(|i| g.contains(i)).count();
    let precision = hits as f64 / order.len() as f64;
    let recall = hits as f64 / g.len() as f64;
    let f1 = if hits == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let dcg: f64 =
        order.iter().enumerate().filter(|(_, i)| g.contains(i)).map(|(pos, _)| log2_discount(pos + 1)).sum();
    let ideal: f64 = (1..=order.len().min(g.len())).map(log2_discount).sum();
    Ok(ExplanationEval { precision, recall, f1, ndcg: dcg / ideal })
}

/// Mean explanation quality for one source over many users, with the
/// skipped users counted by reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub source: ExplanationSource,
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
    pub users: usize,
    pub skipped_empty_gt: usize,
    pub skipped_zero_phi: usize,
}

/// Score every vector of one source against the dataset's ground truth.
/// Users with no ground-truth words or an all-zero φ are skipped and
/// counted, not errors.
pub fn explanation_report(ds: &Dataset, vectors: &[ExplanationVector], k: usize) -> Result<ExplanationReport> {
    if vectors.is_empty() {
        return Err(XrecError::Invalid("no explanation vectors to evaluate".into()));
    }
    let source = vectors[0].source;
    if vectors.iter().any(|v| v.source != source) {
        return Err(XrecError::Invalid("explanation report mixes sources".into()));
    }
    let mut sums = [0.0; 4];
    let mut users = 0usize;
    let mut skipped_empty_gt = 0usize;
    let mut skipped_zero_phi = 0usize;
    for v in vectors {
        let g = ds.ground_truth_features(v.user);
        if g.is_empty() {
            skipped_empty_gt += 1;
            continue;
        }
        if v.values.iter().all(|x| *x == 0.0) {
            skipped_zero_phi += 1;
            continue;
        }
        let m = explanation_metrics(&v.values, &g, k)?;
        sums[0] += m.precision;
        sums[1] += m.recall;
        sums[2] += m.f1;
        sums[3] += m.ndcg;
        users += 1;
    }
    if users == 0 {
        return Err(XrecError::Invalid(format!("every {source} vector was skipped")));
    }
    let d = users as f64;
    Ok(ExplanationReport {
        source,
        k,
        precision: sums[0] / d,
        recall: sums[1] / d,
        f1: sums[2] / d,
        ndcg: sums[3] / d,
        users,
        skipped_empty_gt,
        skipped_zero_phi,
    })
}

pub const EVAL_FORMAT: &str = "xrec-eval/1";
pub const EXPLANATION_REPORT_FORMAT: &str = "xrec-explanation-report/1";

/// Ranking report as JSON with the format version and config echo embedded.
pub fn write_ranking_json(path: &Path, report: &RankingReport, config_echo: &serde_json::Value) -> Result<()> {
    let doc = serde_json::json!({
        "format": EVAL_FORMAT,
        "config": config_echo,
        "report": report,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| XrecError::Invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| XrecError::io(path, e))
}

/// Ranking report as a one-row CSV in table column order, with a trailing
/// comment carrying the format version and config echo.
pub fn write_ranking_csv(path: &Path, report: &RankingReport, config_echo: &serde_json::Value) -> Result<()> {
    let file = File::create(path).map_err(|e| XrecError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| XrecError::io(path, e);
    writeln!(w, "precision,recall,f1,hit_rate,ndcg,mrr").map_err(io)?;
    writeln!(
        w,
        "{},{},{},{},{},{}",
        report.precision, report.recall, report.f1, report.hit_rate, report.ndcg, report.mrr
    )
    .map_err(io)?;
    writeln!(w, "# format={EVAL_FORMAT} k={} mrr_k={} users={} lists={} config={config_echo}",
        report.k, report.mrr_k, report.users, report.lists)
    .map_err(io)?;
    w.flush().map_err(io)
}

/// Explanation reports (one row per source) as JSON and CSV; the CSV keeps
/// the headline F1/NDCG columns first.
pub fn write_explanation_reports_json(
    path: &Path,
    reports: &[ExplanationReport],
    config_echo: &serde_json::Value,
) -> Result<()> {
    let doc = serde_json::json!({
        "format": EXPLANATION_REPORT_FORMAT,
        "config": config_echo,
        "reports": reports,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| XrecError::Invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| XrecError::io(path, e))
}

pub fn write_explanation_reports_csv(
    path: &Path,
    reports: &[ExplanationReport],
    config_echo: &serde_json::Value,
) -> Result<()> {
    let file = File::create(path).map_err(|e| XrecError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| XrecError::io(path, e);
    writeln!(w, "source,f1,ndcg,precision,recall,users,skipped_empty_gt,skipped_zero_phi").map_err(io)?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.source, r.f1, r.ndcg, r.precision, r.recall, r.users, r.skipped_empty_gt, r.skipped_zero_phi
        )
        .map_err(io)?;
    }
    writeln!(w, "# format={EXPLANATION_REPORT_FORMAT} config={config_echo}").map_err(io)?;
    w.flush().map_err(io)
}
