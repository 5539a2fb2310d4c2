use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::decompose::{decompose_features, DecomposedFeatures, SentimentTable};
use crate::data::record::{label_feedback, Feedback, InteractionRecord};
use crate::data::vocab::FeatureVocabulary;
use crate::error::{Result, XrecError};

/// An interaction after id interning and duplicate merging.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: u32,
    /// `(word index, frequency, sentiment)` sorted by word index.
    pub mentions: Vec<(usize, u32, f64)>,
}

/// A P-length feature vector aggregated over several interactions, with the
/// union of their supports. Used to score pairs that have no observed
/// review: entries are the mean of the per-interaction values of the
/// interactions that mention the word, so they stay in `[1, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateFeatures {
    pub values: Vec<f64>,
    pub support: Vec<usize>,
}

impl AggregateFeatures {
    fn empty(p: usize) -> Self {
        AggregateFeatures { values: vec![0.0; p], support: Vec::new() }
    }
}

/// Deterministically derive an independent seed from a base seed and two
/// indices (splitmix64 finalizer). Lets per-(user, item) draws stay stable
/// no matter what order callers visit them in.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ a) ^ b)
}

/// Split interactions into train and test indices: per user, when the
/// number of positives exceeds 5, a seeded 4:1 split sends every fifth
/// positive (rounded down) to test; otherwise all stay in train. Unlabeled
/// interactions always train.
pub fn split_train_test(
    interactions: &[Interaction],
    num_users: usize,
    t_max: u32,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if interactions.is_empty() {
        return Err(XrecError::Invalid("cannot split an empty dataset".into()));
    }
    let mut positives: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for (idx, it) in interactions.iter().enumerate() {
        if label_feedback(it.rating, t_max) == Feedback::Positive {
            positives[it.user].push(idx);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = BTreeSet::new();
    for pos in &positives {
        if pos.len() > 5 {
            let mut shuffled = pos.clone();
            shuffled.shuffle(&mut rng);
            for &idx in shuffled.iter().take(pos.len() / 5) {
                test.insert(idx);
            }
        }
    }
    let train: Vec<usize> = (0..interactions.len()).filter(|i| !test.contains(i)).collect();
    Ok((train, test.into_iter().collect()))
}

/// A fully prepared dataset: interned interactions, train/test partition,
/// per-interaction decomposed features for the training split, and the
/// per-user / per-item aggregates used to score unreviewed pairs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub t_max: u32,
    pub seed: u64,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub vocab: FeatureVocabulary,
    pub interactions: Vec<Interaction>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub sentiments: SentimentTable,
    /// Decomposed features, present for training interactions only.
    pub features: Vec<Option<DecomposedFeatures>>,
    pub user_aggregate: Vec<AggregateFeatures>,
    pub item_aggregate: Vec<AggregateFeatures>,
    /// Per user: training interactions with positive feedback.
    pub train_positives: Vec<Vec<usize>>,
    /// Per user: held-out test interactions (all positive by construction).
    pub test_positives: Vec<Vec<usize>>,
    /// Per user: every interacted item, train or test, any rating.
    pub interacted: Vec<BTreeSet<usize>>,
    user_index: BTreeMap<String, usize>,
    item_index: BTreeMap<String, usize>,
}

impl Dataset {
    /// Build from parsed records. Duplicate (user, item) records are merged
    /// first: frequencies sum per word, sentiments average, the last rating
    /// wins. When `split` is given (reloading a manifest) it is used
    /// verbatim instead of re-splitting.
    pub fn build(
        records: &[InteractionRecord],
        t_max: u32,
        seed: u64,
        split: Option<(Vec<usize>, Vec<usize>)>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(XrecError::Invalid("no interaction records".into()));
        }
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut user_index = BTreeMap::new();
        let mut item_index = BTreeMap::new();
        let vocab = FeatureVocabulary::from_records(records)?;

        // Merge duplicates in first-appearance order.
        let mut order: Vec<(usize, usize)> = Vec::new();
        let mut merged: BTreeMap<(usize, usize), (u32, BTreeMap<usize, (u32, f64, u32)>)> = BTreeMap::new();
        for r in records {
            let u = *user_index.entry(r.user_id.clone()).or_insert_with(|| {
                users.push(r.user_id.clone());
                users.len() - 1
            });
            let i = *item_index.entry(r.item_id.clone()).or_insert_with(|| {
                items.push(r.item_id.clone());
                items.len() - 1
            });
            let entry = merged.entry((u, i)).or_insert_with(|| {
                order.push((u, i));
                (r.rating, BTreeMap::new())
            });
            entry.0 = r.rating;
            for f in &r.features {
                let k = vocab.index_of(&f.word).expect("vocabulary covers all records");
                let slot = entry.1.entry(k).or_insert((0, 0.0, 0));
                slot.0 += f.frequency;
                slot.1 += f.sentiment;
                slot.2 += 1;
            }
        }
        let interactions: Vec<Interaction> = order
            .iter()
            .map(|key| {
                let (rating, words) = &merged[key];
                Interaction {
                    user: key.0,
                    item: key.1,
                    rating: *rating,
                    mentions: words.iter().map(|(&k, &(f, s, n))| (k, f, s / n as f64)).collect(),
                }
            })
            .collect();

        let (train, test) = match split {
            Some((train, test)) => {
                let mut seen = vec![false; interactions.len()];
                for &i in train.iter().chain(&test) {
                    if i >= interactions.len() || seen[i] {
                        return Err(XrecError::Invalid(format!("manifest split index {i} invalid or repeated")));
                    }
                    seen[i] = true;
                }
                if seen.iter().any(|s| !s) {
                    return Err(XrecError::Invalid("manifest split does not cover all interactions".into()));
                }
                (train, test)
            }
            None => split_train_test(&interactions, users.len(), t_max, seed)?,
        };

        // Sentiment means and decomposition come from the training split
        // only; held-out reviews must not leak into features.
        let train_set: BTreeSet<usize> = train.iter().copied().collect();
        let to_record = |idx: usize| -> InteractionRecord {
            let it = &interactions[idx];
            InteractionRecord {
                user_id: users[it.user].clone(),
                item_id: items[it.item].clone(),
                rating: it.rating,
                features: it
                    .mentions
                    .iter()
                    .map(|&(k, f, s)| crate::data::record::FeatureMention {
                        word: vocab.word(k).to_string(),
                        frequency: f,
                        sentiment: s,
                    })
                    .collect(),
            }
        };
        let train_records: Vec<(InteractionRecord, usize)> =
            train.iter().map(|&i| (to_record(i), interactions[i].item)).collect();
        let sentiments = SentimentTable::build(train_records.iter().map(|(r, i)| (r, *i)), &vocab);

        let mut features: Vec<Option<DecomposedFeatures>> = vec![None; interactions.len()];
        for (pos, &idx) in train.iter().enumerate() {
            features[idx] = Some(decompose_features(
                &train_records[pos].0,
                interactions[idx].item,
                &sentiments,
                t_max,
                &vocab,
            ));
        }

        let p = vocab.len();
        let mut user_aggregate = vec![AggregateFeatures::empty(p); users.len()];
        let mut item_aggregate = vec![AggregateFeatures::empty(p); items.len()];
        let mut user_counts = vec![vec![0u32; p]; users.len()];
        let mut item_counts = vec![vec![0u32; p]; items.len()];
        for &idx in &train {
            let it = &interactions[idx];
            let d = features[idx].as_ref().expect("train features decomposed");
            for &k in &d.support {
                user_aggregate[it.user].values[k] += d.user_vec[k];
                user_counts[it.user][k] += 1;
                item_aggregate[it.item].values[k] += d.item_vec[k];
                item_counts[it.item][k] += 1;
            }
        }
        for (agg, counts) in user_aggregate.iter_mut().zip(&user_counts).chain(item_aggregate.iter_mut().zip(&item_counts)) {
            for k in 0..p {
                if counts[k] > 0 {
                    agg.values[k] /= counts[k] as f64;
                    agg.support.push(k);
                }
            }
        }

        let mut train_positives = vec![Vec::new(); users.len()];
        let mut test_positives = vec![Vec::new(); users.len()];
        let mut interacted = vec![BTreeSet::new(); users.len()];
        for (idx, it) in interactions.iter().enumerate() {
            interacted[it.user].insert(it.item);
            let positive = label_feedback(it.rating, t_max) == Feedback::Positive;
            if train_set.contains(&idx) {
                if positive {
                    train_positives[it.user].push(idx);
                }
            } else {
                test_positives[it.user].push(idx);
            }
        }

        Ok(Dataset {
            t_max,
            seed,
            users,
            items,
            vocab,
            interactions,
            train,
            test,
            sentiments,
            features,
            user_aggregate,
            item_aggregate,
            train_positives,
            test_positives,
            interacted,
            user_index,
            item_index,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_features(&self) -> usize {
        self.vocab.len()
    }

    pub fn user_id(&self, u: usize) -> &str {
        &self.users[u]
    }

    pub fn item_id(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn user_index(&self, id: &str) -> Result<usize> {
        self.user_index
            .get(id)
            .copied()
            .ok_or_else(|| XrecError::UnknownId { kind: "user", id: id.to_string() })
    }

    pub fn item_index(&self, id: &str) -> Result<usize> {
        self.item_index
            .get(id)
            .copied()
            .ok_or_else(|| XrecError::UnknownId { kind: "item", id: id.to_string() })
    }

    /// The training interaction behind a (user, positive item) pair.
    /// Duplicate (user, item) reviews are merged at build time, so the pair
    /// names at most one interaction.
    pub fn train_positive_interaction(&self, user: usize, item: usize) -> Option<usize> {
        self.train_positives
            .get(user)?
            .iter()
            .copied()
            .find(|&idx| self.interactions[idx].item == item)
    }

    /// Candidate pool for one held-out positive: the positive itself plus
    /// up to `pool_size - 1` items the user never interacted with, sampled
    /// without replacement under a seed derived from (seed, user, item).
    /// Small catalogs yield smaller pools (all non-interacted items).
    pub fn sample_candidates(&self, user: usize, positive_item: usize, pool_size: usize, seed: u64) -> Vec<usize> {
        let mut available: Vec<usize> =
            (0..self.items.len()).filter(|i| !self.interacted[user].contains(i)).collect();
        let want = pool_size.saturating_sub(1);
        let mut pool = vec![positive_item];
        if available.len() <= want {
            pool.extend(available);
            return pool;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, user as u64, positive_item as u64));
        for n in 0..want {
            let j = rng.random_range(n..available.len());
            available.swap(n, j);
            pool.push(available[n]);
        }
        pool
    }

    /// Feature indices the user has voiced a nonzero sentiment on, across
    /// all of their records (train and test). This is the explanation
    /// ground truth; it never looks at model output.
    pub fn ground_truth_features(&self, user: usize) -> BTreeSet<usize> {
        let mut g = BTreeSet::new();
        for it in &self.interactions {
            if it.user == user {
                for &(k, _, s) in &it.mentions {
                    if s != 0.0 {
                        g.insert(k);
                    }
                }
            }
        }
        g
    }
}

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Sidecar metadata for an interaction file: the split, dimensions, seed,
/// and (for synthetic data) the planted preferences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub t_max: u32,
    pub seed: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub num_features: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub config_echo: serde_json::Value,
    #[serde(default)]
    pub planted: Option<BTreeMap<String, Vec<String>>>,
}

impl DatasetManifest {
    pub fn for_dataset(ds: &Dataset, config_echo: serde_json::Value, planted: Option<BTreeMap<String, Vec<String>>>) -> Self {
        DatasetManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            t_max: ds.t_max,
            seed: ds.seed,
            num_users: ds.num_users(),
            num_items: ds.num_items(),
            num_features: ds.num_features(),
            train: ds.train.clone(),
            test: ds.test.clone(),
            config_echo,
            planted,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| XrecError::Invalid(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| XrecError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| XrecError::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| XrecError::Parse { path: path.display().to_string(), line: 0, msg: e.to_string() })?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(XrecError::Invalid(format!("unsupported manifest format version {}", m.format_version)));
        }
        Ok(m)
    }
}

/// Load a prepared dataset directory (`interactions.tsv` + `manifest.json`),
/// verifying the manifest still matches the interaction file.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest = DatasetManifest::load(&dir.join("manifest.json"))?;
    let records = crate::data::record::parse_interactions(&dir.join("interactions.tsv"), manifest.t_max)?;
    let ds = Dataset::build(
        &records,
        manifest.t_max,
        manifest.seed,
        Some((manifest.train.clone(), manifest.test.clone())),
    )?;
    for (name, got, want) in [
        ("users", ds.num_users(), manifest.num_users),
        ("items", ds.num_items(), manifest.num_items),
        ("features", ds.num_features(), manifest.num_features),
    ] {
        if got != want {
            return Err(XrecError::Invalid(format!(
                "manifest mismatch: {name} = {got} in data but {want} in manifest"
            )));
        }
    }
    Ok((ds, manifest))
}
