//! Shared fixtures for the integration suites: a brute-force ranking
//! oracle written independently of the library (plain loops, no shared
//! helpers), fifty frozen hand-computed explanation-metric cases, and a
//! runner for the compiled `xrec` binary.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use xrec::eval::RankedList;

// ---------------------------------------------------------------------------
// Brute-force ranking oracle
// ---------------------------------------------------------------------------

/// Re-derives [precision, recall, f1, hit_rate, ndcg, mrr] at cutoff `k` by
/// explicit enumeration: each list is scored on its own, lists are averaged
/// within a user, users are averaged in ascending id order. The arithmetic
/// follows the metric definitions directly; none of the library's evaluation
/// code is called.
pub fn oracle_ranking(lists: &[RankedList], k: usize) -> [f64; 6] {
    let mut users: Vec<usize> = lists.iter().map(|l| l.user).collect();
    users.sort_unstable();
    users.dedup();
    let mut totals = [0.0f64; 6];
    for &u in &users {
        let mut per_user = [0.0f64; 6];
        let mut count = 0.0f64;
        for list in lists.iter().filter(|l| l.user == u) {
            let m = oracle_list(&list.relevant, k);
            for j in 0..6 {
                per_user[j] += m[j];
            }
            count += 1.0;
        }
        for j in 0..6 {
            totals[j] += per_user[j] / count;
        }
    }
    let d = users.len() as f64;
    let mut out = [0.0f64; 6];
    for j in 0..6 {
        out[j] = totals[j] / d;
    }
    out
}

fn oracle_list(relevant: &[bool], k: usize) -> [f64; 6] {
    let total = relevant.iter().filter(|r| **r).count();
    assert!(total > 0, "oracle lists always carry a relevant item");
    let top = if k < relevant.len() { k } else { relevant.len() };
    let mut hits = 0usize;
    let mut dcg = 0.0f64;
    for pos in 0..top {
        if relevant[pos] {
            hits += 1;
            // 1-based rank pos+1 is discounted by log2(pos + 2).
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal_len = if k < total { k } else { total };
    let mut ideal = 0.0f64;
    for rank in 1..=ideal_len {
        ideal += 1.0 / ((rank + 1) as f64).log2();
    }
    let precision = hits as f64 / k as f64;
    let recall = hits as f64 / total as f64;
    let f1 = if hits == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let hit = if hits > 0 { 1.0 } else { 0.0 };
    let mrr = if relevant[0] { 1.0 } else { 0.0 };
    [precision, recall, f1, hit, dcg / ideal, mrr]
}

// ---------------------------------------------------------------------------
// Frozen hand-computed explanation-metric cases
// ---------------------------------------------------------------------------

/// One φ-against-ground-truth case with its expected
/// [precision, recall, f1, ndcg] at cutoff `k`, worked out by hand and
/// frozen. Small enough (|φ| ≤ 8, k ≤ 5) to re-derive on paper.
pub struct HandCase {
    pub phi: Vec<f64>,
    pub gt: BTreeSet<usize>,
    pub k: usize,
    pub expect: [f64; 4],
}

fn case(phi: &[f64], gt: &[usize], k: usize, expect: [f64; 4]) -> HandCase {
    HandCase { phi: phi.to_vec(), gt: gt.iter().copied().collect(), k, expect }
}

pub fn explanation_hand_cases() -> Vec<HandCase> {
    vec![
        case(&[1.0, 0.5, 0.25], &[0], 1, [1.0, 1.0, 1.0, 1.0]),
        case(&[1.0, 0.5, 0.25], &[2], 1, [0.0, 0.0, 0.0, 0.0]),
        case(&[1.0, 0.5, 0.25], &[2], 3, [0.3333333333333333, 1.0, 0.5, 0.5]),
        case(&[0.5, 0.5, 0.5], &[1], 2, [0.5, 1.0, 0.6666666666666666, 0.6309297535714575]),
        case(&[0.5, 1.0, 0.5, 0.0], &[0, 3], 4, [0.3333333333333333, 0.5, 0.4, 0.38685280723454163]),
        case(&[-1.0, 2.0, -0.5], &[0], 3, [0.3333333333333333, 1.0, 0.5, 0.5]),
        case(&[0.0, 0.0, 3.0], &[2], 5, [1.0, 1.0, 1.0, 1.0]),
        case(&[0.0, 0.0, 3.0], &[0], 5, [0.0, 0.0, 0.0, 0.0]),
        case(&[2.0, 1.0], &[0, 1], 1, [1.0, 0.5, 0.6666666666666666, 1.0]),
        case(&[4.0, 3.0, 2.0, 1.0], &[0, 1, 2, 3], 4, [1.0, 1.0, 1.0, 1.0]),
        case(&[1.0, 2.0, 3.0, 4.0], &[0], 2, [0.0, 0.0, 0.0, 0.0]),
        case(&[1.5, 1.5, 1.5, 1.5], &[1, 3], 3, [0.3333333333333333, 0.5, 0.4, 0.38685280723454163]),
        case(&[0.25, 0.0, 0.75, 0.0, 0.5], &[4], 2, [0.5, 1.0, 0.6666666666666666, 0.6309297535714575]),
        case(&[-2.0, -1.0, -3.0], &[1], 2, [0.5, 1.0, 0.6666666666666666, 1.0]),
        case(&[7.0], &[0], 4, [1.0, 1.0, 1.0, 1.0]),
        case(&[1.0, 0.5, 0.0, 3.0, 0.5, 0.0, -2.0, 2.0], &[1, 2, 3, 5, 6, 7], 4, [0.75, 0.5, 0.6, 0.8048099750039491]),
        case(&[-0.25, -2.0, -0.25, -0.5, 0.25], &[2, 4], 5, [0.4, 1.0, 0.5714285714285714, 0.9197207891481876]),
        case(&[-1.0, -0.5, -2.0, 0.0, 0.0], &[0, 1, 2, 3, 4], 1, [1.0, 0.2, 0.3333333333333333, 1.0]),
        case(&[1.0, 1.0], &[0, 1], 4, [1.0, 1.0, 1.0, 1.0]),
        case(&[0.75, 0.75, 0.0, -0.25], &[1], 5, [0.3333333333333333, 1.0, 0.5, 0.6309297535714575]),
        case(&[-2.0, 1.0, 2.0, 1.5, 0.0, -1.0], &[0, 1], 4, [0.25, 0.5, 0.3333333333333333, 0.3065735963827292]),
        case(&[-1.0, -2.0, 1.0], &[1], 4, [0.3333333333333333, 1.0, 0.5, 0.5]),
        case(&[2.0, 3.0, 3.0], &[0, 1, 2], 3, [1.0, 1.0, 1.0, 1.0]),
        case(&[-2.0, 0.0, 1.0, -0.25, 0.0], &[2, 3], 1, [1.0, 0.5, 0.6666666666666666, 1.0]),
        case(&[2.0, 0.5, -2.0, 2.0, 3.0, 1.0], &[2, 4, 5], 1, [1.0, 0.3333333333333333, 0.5, 1.0]),
        case(&[-1.0, 0.0, 1.5, 0.0, -1.0, -0.5, 0.75], &[0, 1, 2, 6], 1, [1.0, 0.25, 0.4, 1.0]),
        case(&[1.5, 2.0, 0.0, 0.0, -0.5, 0.75, 0.0], &[0, 1, 2, 5], 2, [1.0, 0.5, 0.6666666666666666, 1.0]),
        case(&[0.75, 0.0, 0.75, 0.75], &[0, 2, 3], 5, [1.0, 1.0, 1.0, 1.0]),
        case(&[-1.0, 0.75, 0.75, 0.0, 1.0, 1.5, -0.25], &[1, 2, 3, 4, 5], 3, [1.0, 0.6, 0.75, 1.0]),
        case(&[0.0, 2.0, 2.0, 0.0, 2.0, 0.0], &[3], 3, [0.0, 0.0, 0.0, 0.0]),
        case(&[1.5, -0.25, 0.0, 2.0, 0.25, 0.5, -1.0, -2.0], &[0, 1, 2, 3, 4, 5, 6, 7], 2, [1.0, 0.25, 0.4, 1.0]),
        case(&[0.25, -2.0, 2.0, 1.5, 0.75], &[0, 2, 4], 2, [0.5, 0.3333333333333333, 0.4, 0.6131471927654584]),
        case(&[3.0, 0.0], &[1], 5, [0.0, 0.0, 0.0, 0.0]),
        case(&[0.25, 0.75, -2.0, 0.0, -1.0], &[0, 1, 2, 3], 4, [0.75, 0.75, 0.75, 0.8048099750039491]),
        case(&[-0.5, -0.5], &[0, 1], 3, [1.0, 1.0, 1.0, 1.0]),
        case(&[0.0, 0.0, 0.0, 0.75, 2.0], &[1, 2, 3], 4, [0.5, 0.3333333333333333, 0.4, 0.38685280723454163]),
        case(&[0.75, -0.25, 2.0, 0.25], &[0, 1, 2, 3], 5, [1.0, 1.0, 1.0, 1.0]),
        case(&[-1.0, 0.0, 1.0, 0.0, 0.0, 0.5], &[2, 3], 4, [0.3333333333333333, 0.5, 0.4, 0.6131471927654584]),
        case(&[1.0, 0.0, 1.0, -1.0, -0.5, -0.25, 1.5, -2.0], &[1, 2, 7], 5, [0.2, 0.3333333333333333, 0.25, 0.23463936301137822]),
        case(&[-2.0, -0.25, -0.25, -0.5, 1.5, 0.75, 3.0, 0.0], &[1, 3, 4, 7], 1, [0.0, 0.0, 0.0, 0.0]),
        case(&[-2.0, 1.0, 2.0, 0.5], &[0, 1, 2, 3], 1, [1.0, 0.25, 0.4, 1.0]),
        case(&[0.0, 0.75, 0.5], &[1], 1, [1.0, 1.0, 1.0, 1.0]),
        case(&[-0.5, -0.5, 0.25, 0.0, 0.5, 1.0, -1.0], &[0, 6], 2, [0.0, 0.0, 0.0, 0.0]),
        case(&[3.0, 0.25, 0.5, -2.0, 0.25, 0.0], &[1, 3, 4, 5], 2, [0.0, 0.0, 0.0, 0.0]),
        case(&[3.0, 0.5, 1.0, 2.0, 1.5, 1.5, 0.75, 2.0], &[1, 2, 4], 3, [0.0, 0.0, 0.0, 0.0]),
        case(&[0.5, -1.0, -0.5, -0.25, 0.5, 0.75], &[0, 1, 2, 3, 4, 5], 4, [1.0, 0.6666666666666666, 0.8, 1.0]),
        case(&[0.25, 0.0, 0.5, 0.25], &[0, 2, 3], 5, [1.0, 1.0, 1.0, 1.0]),
        case(&[0.5, -0.5, -0.25], &[0, 1, 2], 2, [1.0, 0.6666666666666666, 0.8, 1.0]),
        case(&[-0.5, 0.0, -2.0, -1.0, 0.0], &[0, 1, 2, 4], 1, [1.0, 0.25, 0.4, 1.0]),
        case(&[1.0, 0.5, -1.0, -2.0, 1.5, 2.0], &[0, 1, 5], 1, [1.0, 0.3333333333333333, 0.5, 1.0]),
    ]
}

// ---------------------------------------------------------------------------
// Binary runner
// ---------------------------------------------------------------------------

pub fn xrec_bin() -> &'static str {
    env!("CARGO_BIN_EXE_xrec")
}

/// Runs the compiled binary with `args` in `dir` and returns the raw output.
pub fn run_xrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(xrec_bin()).current_dir(dir).args(args).output().expect("binary should spawn")
}

/// Same, but demands success and returns stdout.
pub fn run_xrec_ok(dir: &Path, args: &[&str]) -> String {
    let out = run_xrec(dir, args);
    assert!(
        out.status.success(),
        "xrec {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Byte-level fingerprint of one file (fnv-1a over the raw contents), used
/// for rerun-determinism checks without keeping whole artifacts in memory.
pub fn file_fingerprint(path: &Path) -> u64 {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    let mut h = 0xcbf29ce484222325u64;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
