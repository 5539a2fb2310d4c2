//! Pipeline stages behind the command-line interface. Every stage reads
//! the resolved run configuration, writes its artifacts into the output
//! directory, embeds the configuration echo plus a format version in each
//! file, and returns the paths it wrote. Rerunning a stage with the same
//! configuration and seed reproduces every artifact byte for byte, except
//! that run-log lines carry wall-clock timings.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{
    derive_seed, load_dataset, parse_interactions, synth_generate, write_interactions, Dataset,
    DatasetManifest,
};
use crate::error::{Result, XrecError};
use crate::eval::{
    rank_candidates, ranking_metrics, write_explanation_reports_csv, write_explanation_reports_json,
    write_ranking_csv, write_ranking_json, RankedList,
};
use crate::explain::{
    explanation_gt, explanation_nar, explanation_perturb, pearson_matrix, write_correlations,
    write_explanations, write_top_words, ExplanationSource, ExplanationVector,
};
use crate::model::{ModelKind, ModelState};
use crate::train::{
    adversarial_perturbation_records, read_perturbations, train_adversarial, train_bpr,
    train_counterfactual, write_perturbations, EpochTrace, PerturbKind,
};

pub const RUNLOG_FORMAT: &str = "xrec-runlog/1";
pub const REPORT_FORMAT: &str = "xrec-report/1";

/// Seed stream for model initialization, mixed with the model-kind tag so
/// different kinds trained under one master seed start from different
/// draws.
const INIT_STREAM: u64 = 0xa11c;
/// Seed stream for evaluation candidate pools.
const POOL_STREAM: u64 = 0xbea7;

fn kind_tag(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Baseline => 0,
        ModelKind::Nar => 1,
        ModelKind::Car => 2,
        ModelKind::Cnr => 3,
    }
}

const MODEL_KINDS: [ModelKind; 4] = [ModelKind::Baseline, ModelKind::Nar, ModelKind::Car, ModelKind::Cnr];

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| XrecError::io(&cfg.out, e))
}

fn load_prepared(cfg: &RunConfig) -> Result<(Dataset, DatasetManifest)> {
    let dir = cfg.data_dir();
    load_dataset(dir).map_err(|e| {
        XrecError::Invalid(format!("no prepared dataset in {}: {e}; run synth or prepare first", dir.display()))
    })
}

/// Artifact file names, all relative to the output directory.
pub fn checkpoint_file(kind: ModelKind) -> String {
    format!("{kind}.ckpt")
}

pub fn runlog_file(kind: ModelKind) -> String {
    format!("{kind}.runlog.jsonl")
}

pub fn perturbations_file(kind: ModelKind) -> String {
    format!("{kind}.perturbations.tsv")
}

pub fn eval_files(kind: ModelKind) -> (String, String) {
    (format!("{kind}.eval.json"), format!("{kind}.eval.csv"))
}

/// Generate a synthetic corpus and prepare it in place: `interactions.tsv`
/// plus `manifest.json` (which records the split, the rating ceiling, and
/// the planted preference sets) land in the output directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let output = synth_generate(&cfg.synth, cfg.seed)?;
    let ds = Dataset::build(&output.records, cfg.synth.t_max, cfg.seed, None)?;
    ensure_out(cfg)?;
    let interactions = cfg.out.join("interactions.tsv");
    write_interactions(&interactions, &output.records, &cfg.echo())?;
    let manifest_path = cfg.out.join("manifest.json");
    let manifest = DatasetManifest::for_dataset(&ds, cfg.echo(), Some(output.planted));
    manifest.save(&manifest_path)?;
    Ok(vec![interactions, manifest_path])
}

/// Parse an external interaction file and prepare it into the output
/// directory: the records are normalized (duplicates merged), split, and
/// written back as `interactions.tsv` plus `manifest.json`.
pub fn cmd_prepare(cfg: &RunConfig, input: &Path) -> Result<Vec<PathBuf>> {
    let records = parse_interactions(input, cfg.t_max)?;
    let ds = Dataset::build(&records, cfg.t_max, cfg.seed, None)?;
    ensure_out(cfg)?;
    let interactions = cfg.out.join("interactions.tsv");
    write_interactions(&interactions, &records, &cfg.echo())?;
    let manifest_path = cfg.out.join("manifest.json");
    let manifest = DatasetManifest::for_dataset(&ds, cfg.echo(), None);
    manifest.save(&manifest_path)?;
    Ok(vec![interactions, manifest_path])
}

fn write_runlog(path: &Path, traces: &[EpochTrace], echo: &serde_json::Value) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| XrecError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| XrecError::io(path, e);
    let header = serde_json::json!({ "format": RUNLOG_FORMAT, "config": echo });
    writeln!(w, "{header}").map_err(io)?;
    for t in traces {
        let line = serde_json::to_string(t).map_err(|e| XrecError::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Train the configured model kind on the prepared dataset. Writes the
/// checkpoint and the run log; adversarial and counterfactual training
/// also dump one perturbation record per training positive.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (ds, _) = load_prepared(cfg)?;
    let kind = cfg.model;
    let scorer = cfg.arch.scorer(kind);
    let init_seed = derive_seed(cfg.seed, INIT_STREAM, kind_tag(kind));
    let mut state = ModelState::init(scorer, ds.num_users(), ds.num_items(), ds.vocab.len(), init_seed)?;

    let (traces, records) = match kind {
        ModelKind::Baseline | ModelKind::Nar => (train_bpr(&mut state, &ds, &cfg.train)?, None),
        ModelKind::Car => {
            let traces = train_adversarial(&mut state, &ds, &cfg.train)?;
            let records = adversarial_perturbation_records(&state, &ds, &cfg.train)?;
            (traces, Some(records))
        }
        ModelKind::Cnr => {
            let (traces, records) = train_counterfactual(&mut state, &ds, &cfg.train)?;
            (traces, Some(records))
        }
    };

    ensure_out(cfg)?;
    let echo = cfg.echo();
    let ckpt = cfg.out.join(checkpoint_file(kind));
    state.save(&ckpt)?;
    let runlog = cfg.out.join(runlog_file(kind));
    write_runlog(&runlog, &traces, &echo)?;
    let mut written = vec![ckpt, runlog];
    if let Some(records) = records {
        let dump = cfg.out.join(perturbations_file(kind));
        write_perturbations(&dump, &ds, &records, &echo)?;
        written.push(dump);
    }
    Ok(written)
}

/// Rank one candidate pool per held-out positive and aggregate the ranking
/// metrics. Pool failures are reported per user on stderr and the run
/// continues; the report covers the lists that succeeded.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let (ds, _) = load_prepared(cfg)?;
    let default_path = cfg.out.join(checkpoint_file(cfg.model));
    let ckpt_path = checkpoint.unwrap_or(&default_path);
    let state = ModelState::load(ckpt_path)?;
    let kind = state.config.kind;

    let pool_seed = derive_seed(cfg.seed, POOL_STREAM, 0);
    let mut lists: Vec<RankedList> = Vec::new();
    let mut failures = 0usize;
    for user in 0..ds.num_users() {
        for &idx in &ds.test_positives[user] {
            let item = ds.interactions[idx].item;
            let pool = ds.sample_candidates(user, item, cfg.eval.pool_size, pool_seed);
            match rank_candidates(&state, &ds, user, &pool) {
                Ok(list) => lists.push(list),
                Err(e) => {
                    eprintln!("user {}: candidate pool for item {} skipped: {e}", ds.user_id(user), ds.item_id(item));
                    failures += 1;
                }
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} candidate pools skipped");
    }
    let report = ranking_metrics(&lists, cfg.eval.k)?;

    ensure_out(cfg)?;
    let echo = cfg.echo();
    let (json_name, csv_name) = eval_files(kind);
    let json_path = cfg.out.join(json_name);
    write_ranking_json(&json_path, &report, &echo)?;
    let csv_path = cfg.out.join(csv_name);
    write_ranking_csv(&csv_path, &report, &echo)?;
    Ok(vec![json_path, csv_path])
}

fn perturb_source(kind: ModelKind) -> Option<(PerturbKind, ExplanationSource)> {
    match kind {
        ModelKind::Car => Some((PerturbKind::Adversarial, ExplanationSource::Car)),
        ModelKind::Cnr => Some((PerturbKind::Counterfactual, ExplanationSource::Cnr)),
        _ => None,
    }
}

/// Build per-user explanation vectors from the ground truth plus every
/// given checkpoint, then dump the vectors, the top words, the per-source
/// agreement metrics, and (when all three model kinds are present) the
/// source-correlation matrix.
pub fn cmd_explain(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let (ds, _) = load_prepared(cfg)?;

    let paths: Vec<PathBuf> = if checkpoints.is_empty() {
        let found: Vec<PathBuf> = [ModelKind::Nar, ModelKind::Car, ModelKind::Cnr]
            .iter()
            .map(|&k| cfg.out.join(checkpoint_file(k)))
            .filter(|p| p.exists())
            .collect();
        if found.is_empty() {
            return Err(XrecError::Invalid(format!(
                "no checkpoints in {}; run train first or pass --checkpoint",
                cfg.out.display()
            )));
        }
        found
    } else {
        checkpoints.to_vec()
    };

    let mut states: Vec<ModelState> = Vec::new();
    for path in &paths {
        let state = ModelState::load(path)?;
        if state.config.kind == ModelKind::Baseline {
            return Err(XrecError::Invalid("baseline checkpoints carry no feature explanations".into()));
        }
        if states.iter().any(|s| s.config.kind == state.config.kind) {
            return Err(XrecError::Invalid(format!("two {} checkpoints given", state.config.kind)));
        }
        states.push(state);
    }
    states.sort_by_key(|s| kind_tag(s.config.kind));

    let mut vectors: Vec<ExplanationVector> = Vec::new();
    for user in 0..ds.num_users() {
        vectors.push(explanation_gt(&ds, user)?);
    }
    for state in &states {
        let kind = state.config.kind;
        match perturb_source(kind) {
            None => {
                for user in 0..ds.num_users() {
                    vectors.push(explanation_nar(state, &ds, user)?);
                }
            }
            Some((perturb, _)) => {
                let dump = cfg.out.join(perturbations_file(kind));
                if !dump.exists() {
                    return Err(XrecError::Invalid(format!(
                        "{} explanations need the perturbation dump {}; run train --model {kind} first",
                        kind,
                        dump.display()
                    )));
                }
                let records = read_perturbations(&dump, &ds)?;
                for user in 0..ds.num_users() {
                    vectors.push(explanation_perturb(&ds, &records, user, perturb)?);
                }
            }
        }
    }

    ensure_out(cfg)?;
    let echo = cfg.echo();
    let explanations = cfg.out.join("explanations.tsv");
    write_explanations(&explanations, &ds, &vectors, &echo)?;
    let top_words = cfg.out.join("top_words.tsv");
    write_top_words(&top_words, &ds, &vectors, cfg.eval.top_words, &echo)?;

    let mut reports = Vec::new();
    for state in &states {
        let source = match state.config.kind {
            ModelKind::Nar => ExplanationSource::Nar,
            ModelKind::Car => ExplanationSource::Car,
            ModelKind::Cnr => ExplanationSource::Cnr,
            ModelKind::Baseline => unreachable!("rejected above"),
        };
        let of_source: Vec<ExplanationVector> =
            vectors.iter().filter(|v| v.source == source).cloned().collect();
        reports.push(crate::eval::explanation_report(&ds, &of_source, cfg.eval.top_words)?);
    }
    let report_json = cfg.out.join("explanation_report.json");
    write_explanation_reports_json(&report_json, &reports, &echo)?;
    let report_csv = cfg.out.join("explanation_report.csv");
    write_explanation_reports_csv(&report_csv, &reports, &echo)?;

    let mut written = vec![explanations, top_words, report_json, report_csv];
    if states.len() == 3 {
        let correlations = cfg.out.join("correlations.csv");
        write_correlations(&correlations, &pearson_matrix(&vectors)?, &echo)?;
        written.push(correlations);
    } else {
        eprintln!("correlation matrix skipped: needs nar, car, and cnr checkpoints together");
    }
    Ok(written)
}

/// Aggregate whatever evaluation and explanation artifacts exist in the
/// output directory into one report document (JSON) plus a one-row-per-
/// model ranking table (CSV).
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let read_json = |path: &Path| -> Result<serde_json::Value> {
        let text = std::fs::read_to_string(path).map_err(|e| XrecError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| XrecError::Parse { path: path.display().to_string(), line: 0, msg: e.to_string() })
    };

    let mut ranking = serde_json::Map::new();
    for kind in MODEL_KINDS {
        let (json_name, _) = eval_files(kind);
        let path = cfg.out.join(json_name);
        if path.exists() {
            ranking.insert(kind.to_string(), read_json(&path)?["report"].take());
        }
    }
    if ranking.is_empty() {
        return Err(XrecError::Invalid(format!(
            "no evaluation artifacts in {}; run evaluate first",
            cfg.out.display()
        )));
    }
    let explanation_path = cfg.out.join("explanation_report.json");
    let explanations = if explanation_path.exists() {
        read_json(&explanation_path)?["reports"].take()
    } else {
        serde_json::Value::Null
    };

    ensure_out(cfg)?;
    let doc = serde_json::json!({
        "format": REPORT_FORMAT,
        "config": cfg.echo(),
        "ranking": ranking,
        "explanations": explanations,
    });
    let json_path = cfg.out.join("report.json");
    let text = serde_json::to_string_pretty(&doc).map_err(|e| XrecError::Invalid(e.to_string()))?;
    std::fs::write(&json_path, text + "\n").map_err(|e| XrecError::io(&json_path, e))?;

    let csv_path = cfg.out.join("report.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| XrecError::io(&csv_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| XrecError::io(&csv_path, e);
    writeln!(w, "model,precision,recall,f1,hit_rate,ndcg,mrr").map_err(io)?;
    for kind in MODEL_KINDS {
        if let Some(r) = ranking.get(&kind.to_string()) {
            let cell = |name: &str| r[name].as_f64().map_or_else(|| "".into(), |v| v.to_string());
            writeln!(
                w,
                "{kind},{},{},{},{},{},{}",
                cell("precision"), cell("recall"), cell("f1"), cell("hit_rate"), cell("ndcg"), cell("mrr")
            )
            .map_err(io)?;
        }
    }
    writeln!(w, "# format={REPORT_FORMAT} config={}", cfg.echo()).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(vec![json_path, csv_path])
}
