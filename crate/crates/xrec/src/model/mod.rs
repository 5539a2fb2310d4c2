pub mod features;
pub mod scorer;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::params::ParamStore;
use crate::error::{Result, XrecError};

pub use features::{interaction_features, scoring_features, triple_features, PairFeatures, TripleFeatures};
pub use scorer::{
    aggregate_features, attention_weights, score_baseline, score_car, score_nar, score_pair,
    score_pair_grads, score_pair_grads_with_fu, AttentionSide,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// ID embeddings only; no feature branch, no explanations.
    Baseline,
    /// Attention over review words; attention weights are the explanation.
    Nar,
    /// Feature-mapping scorer trained with adversarial perturbations;
    /// perturbation magnitudes are the explanation.
    Car,
    /// Same scorer as `Car`, trained with counterfactual perturbations.
    Cnr,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Nar => "nar",
            ModelKind::Car => "car",
            ModelKind::Cnr => "cnr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "nar" => Ok(ModelKind::Nar),
            "car" => Ok(ModelKind::Car),
            "cnr" => Ok(ModelKind::Cnr),
            other => Err(XrecError::Config(format!("unknown model kind `{other}`"))),
        }
    }

    /// Whether the scorer maps feature vectors through E_u/E_i (and thus
    /// accepts perturbations).
    pub fn uses_feature_maps(&self) -> bool {
        matches!(self, ModelKind::Car | ModelKind::Cnr)
    }

    pub fn all() -> [ModelKind; 4] {
        [ModelKind::Baseline, ModelKind::Nar, ModelKind::Car, ModelKind::Cnr]
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture of a scorer: which model kind, the ID-embedding dimension
/// `m`, the word/feature latent dimension `n`, and the MLP hidden sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ModelKind,
    pub id_dim: usize,
    pub word_dim: usize,
    pub mlp_hidden: Vec<usize>,
}

impl ScorerConfig {
    pub fn new(kind: ModelKind) -> Self {
        ScorerConfig { kind, id_dim: 350, word_dim: 350, mlp_hidden: vec![128, 64] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id_dim == 0 || self.word_dim == 0 {
            return Err(XrecError::Config("embedding dimensions must be positive".into()));
        }
        if self.mlp_hidden.iter().any(|&h| h == 0) {
            return Err(XrecError::Config("MLP hidden sizes must be positive".into()));
        }
        Ok(())
    }

    /// Width of the concatenated MLP input.
    pub fn mlp_input_dim(&self) -> usize {
        match self.kind {
            ModelKind::Baseline => self.id_dim,
            _ => self.id_dim + self.word_dim,
        }
    }
}

/// A scorer's parameters plus the entity counts they were created for.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: ScorerConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub num_features: usize,
    pub params: ParamStore,
}

impl ModelState {
    /// Create freshly initialized parameters. The registration order is
    /// fixed, so a (config, counts, seed) triple fully determines every
    /// value.
    pub fn init(config: ScorerConfig, num_users: usize, num_items: usize, num_features: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_users == 0 || num_items == 0 || num_features == 0 {
            return Err(XrecError::Config("entity counts must be positive".into()));
        }
        let mut params = ParamStore::new(seed);
        params.add_matrix("user_embed", num_users, config.id_dim)?;
        params.add_matrix("item_embed", num_items, config.id_dim)?;
        match config.kind {
            ModelKind::Baseline => {}
            ModelKind::Nar => {
                params.add_matrix("word_embed", num_features, config.word_dim)?;
                params.add_matrix("attn_user", config.id_dim, config.word_dim)?;
                params.add_matrix("attn_item", config.id_dim, config.word_dim)?;
            }
            ModelKind::Car | ModelKind::Cnr => {
                params.add_matrix("feat_map_user", config.word_dim, num_features)?;
                params.add_matrix("feat_map_item", config.word_dim, num_features)?;
            }
        }
        let mut width = config.mlp_input_dim();
        for (l, &h) in config.mlp_hidden.iter().enumerate() {
            params.add_matrix(&format!("mlp_w{l}"), h, width)?;
            params.add_vector(&format!("mlp_b{l}"), h)?;
            width = h;
        }
        params.add_matrix("mlp_w_out", 1, width)?;
        params.add_vector("mlp_b_out", 1)?;
        Ok(ModelState { config, num_users, num_items, num_features, params })
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.config,
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_features": self.num_features,
        })
    }

    /// Write the checkpoint: named arrays plus a header carrying the model
    /// kind, architecture, entity counts, and the initialization seed.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| XrecError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.params.write_arrays(&mut w, &self.meta()).map_err(|e| XrecError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| XrecError::io(path, e))?;
        let mut r = std::io::BufReader::new(file);
        let display = path.display().to_string();
        let (params, meta) = ParamStore::read_arrays(&mut r, &display)?;
        let bad = |msg: String| XrecError::Checkpoint { path: display.clone(), msg };
        let config: ScorerConfig = serde_json::from_value(meta["model"].clone())
            .map_err(|e| bad(format!("bad model header: {e}")))?;
        let count = |field: &str| -> Result<usize> {
            meta[field]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| bad(format!("header missing {field}")))
        };
        let state = ModelState {
            config,
            num_users: count("num_users")?,
            num_items: count("num_items")?,
            num_features: count("num_features")?,
            params,
        };
        // The arrays must be exactly those init would create.
        let expect = ModelState::init(
            state.config.clone(),
            state.num_users,
            state.num_items,
            state.num_features,
            state.params.seed(),
        )?;
        if expect.params.len() != state.params.len()
            || expect
                .params
                .iter()
                .zip(state.params.iter())
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(bad("arrays do not match the declared architecture".into()));
        }
        Ok(state)
    }
}
