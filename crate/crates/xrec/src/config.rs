//! One configuration document for the whole pipeline. Defaults cover every
//! field, an optional JSON file replaces any subset of them, and command
//! line flags override the file. The resolved value is echoed verbatim
//! into every artifact a run writes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Result, XrecError};
use crate::model::{ModelKind, ScorerConfig};
use crate::train::{DistanceKind, TrainConfig};

/// Scorer architecture shared by every model kind in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub id_dim: usize,
    pub word_dim: usize,
    pub mlp_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { id_dim: 350, word_dim: 350, mlp_hidden: vec![128, 64] }
    }
}

impl ArchConfig {
    pub fn scorer(&self, kind: ModelKind) -> ScorerConfig {
        ScorerConfig {
            kind,
            id_dim: self.id_dim,
            word_dim: self.word_dim,
            mlp_hidden: self.mlp_hidden.clone(),
        }
    }
}

/// Evaluation settings: candidate pool size per held-out positive, the
/// ranking cutoff, and how many words an explanation keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pool_size: usize,
    pub k: usize,
    pub top_words: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { pool_size: 100, k: 10, top_words: 5 }
    }
}

/// The resolved run configuration. `seed` is the single master seed: when
/// a configuration is resolved it is copied into `train.seed`, and every
/// stage derives its streams from it, so a run is fully determined by this
/// document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory all artifacts are written into.
    pub out: PathBuf,
    /// Dataset directory read by train/evaluate/explain. Defaults to
    /// `out`, so one directory can host a whole synth-to-report pipeline.
    pub data: Option<PathBuf>,
    pub seed: u64,
    /// Model kind trained or evaluated when no checkpoint is named.
    pub model: ModelKind,
    /// Rating ceiling assumed when preparing an external interaction file.
    pub t_max: u32,
    pub synth: SynthConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            data: None,
            seed: 42,
            model: ModelKind::Nar,
            t_max: 5,
            synth: SynthConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line overrides: every field mirrors a flag and wins over both
/// the defaults and the configuration file when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub t_max: Option<u32>,

    pub users: Option<usize>,
    pub items: Option<usize>,
    pub features: Option<usize>,
    pub density: Option<f64>,
    pub planted_per_user: Option<usize>,
    pub item_profile_size: Option<usize>,
    pub noise: Option<f64>,

    pub id_dim: Option<usize>,
    pub word_dim: Option<usize>,
    pub mlp_hidden: Option<Vec<usize>>,

    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub negatives_per_positive: Option<usize>,
    pub epsilon: Option<f64>,
    pub lambda: Option<f64>,
    pub xi: Option<f64>,
    pub outer: Option<usize>,
    pub distance: Option<DistanceKind>,
    pub search_steps: Option<usize>,
    pub search_lr: Option<f64>,
    pub search_triples: Option<usize>,
    pub retrain_epochs: Option<usize>,

    pub pool_size: Option<usize>,
    pub k: Option<usize>,
    pub top_words: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { cfg.$($dst).+ = v; })*
            };
        }
        set! {
            out => out,
            seed => seed,
            model => model,
            t_max => t_max,
            users => synth.users,
            items => synth.items,
            features => synth.features,
            density => synth.density,
            planted_per_user => synth.planted_per_user,
            item_profile_size => synth.item_profile_size,
            noise => synth.noise,
            id_dim => arch.id_dim,
            word_dim => arch.word_dim,
            mlp_hidden => arch.mlp_hidden,
            epochs => train.epochs,
            lr => train.lr,
            batch_size => train.batch_size,
            negatives_per_positive => train.negatives_per_positive,
            epsilon => train.epsilon,
            lambda => train.lambda,
            xi => train.xi,
            outer => train.outer,
            distance => train.distance,
            search_steps => train.search_steps,
            search_lr => train.search_lr,
            search_triples => train.search_triples,
            retrain_epochs => train.retrain_epochs,
            pool_size => eval.pool_size,
            k => eval.k,
            top_words => eval.top_words,
        }
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        // Synth datasets carry their own rating ceiling; keep the two
        // ceilings in lockstep when either flag form is used.
        if let Some(t) = self.t_max {
            cfg.synth.t_max = t;
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| XrecError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| XrecError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then the file (if any), then the flags; the master seed is
    /// copied into the training seed so one value drives every stage.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        overrides.apply(&mut cfg);
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max < 3 {
            return Err(XrecError::Config("t_max must be at least 3".into()));
        }
        if self.arch.id_dim == 0 || self.arch.word_dim == 0 {
            return Err(XrecError::Config("embedding dimensions must be positive".into()));
        }
        if self.arch.mlp_hidden.iter().any(|&h| h == 0) {
            return Err(XrecError::Config("MLP hidden sizes must be positive".into()));
        }
        if self.eval.pool_size < 2 {
            return Err(XrecError::Config("pool_size must be at least 2".into()));
        }
        if self.eval.k == 0 || self.eval.top_words == 0 {
            return Err(XrecError::Config("k and top_words must be positive".into()));
        }
        self.synth.validate()?;
        self.train.validate()
    }

    /// The configuration echo embedded in every artifact.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run configuration serializes")
    }

    /// Dataset directory: explicit `data` when given, else `out`.
    pub fn data_dir(&self) -> &Path {
        self.data.as_deref().unwrap_or(&self.out)
    }
}
