use std::collections::BTreeMap;

use crate::data::record::InteractionRecord;
use crate::data::vocab::FeatureVocabulary;
use crate::diff::tape::sigmoid;

/// Mean review sentiment per (item, word) pair, aggregated over all users
/// who mentioned the word for that item. Pairs never mentioned read as 0
/// (neutral), which the item map below sends to the midpoint `(T+1)/2`.
#[derive(Debug, Clone, Default)]
pub struct SentimentTable {
    means: BTreeMap<(usize, usize), f64>,
}

impl SentimentTable {
    /// Build from records (typically the training split only, so held-out
    /// reviews cannot leak into the features).
    pub fn build<'a>(
        records: impl Iterator<Item = (&'a InteractionRecord, usize)>,
        vocab: &FeatureVocabulary,
    ) -> Self {
        let mut sums: BTreeMap<(usize, usize), (f64, u32)> = BTreeMap::new();
        for (r, item) in records {
            for f in &r.features {
                if let Some(k) = vocab.index_of(&f.word) {
                    let e = sums.entry((item, k)).or_insert((0.0, 0));
                    e.0 += f.sentiment;
                    e.1 += 1;
                }
            }
        }
        let means = sums.into_iter().map(|(key, (s, n))| (key, s / n as f64)).collect();
        SentimentTable { means }
    }

    pub fn mean(&self, item: usize, word: usize) -> f64 {
        self.means.get(&(item, word)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Map a review-word frequency to the user-side feature value in `[1, T]`:
/// `1 + (T-1) * (2*sigmoid(freq) - 1)`. Zero frequency gives the lower
/// bound 1; the upper bound T is approached but never attained.
pub fn user_feature_value(frequency: f64, t_max: u32) -> f64 {
    1.0 + (t_max as f64 - 1.0) * (2.0 * sigmoid(frequency) - 1.0)
}

/// Map a frequency and mean sentiment to the item-side feature value in
/// `[1, T]`: `1 + (T-1) * sigmoid(freq * sentiment)`. A neutral sentiment
/// gives the midpoint `(T+1)/2`.
pub fn item_feature_value(frequency: f64, sentiment: f64, t_max: u32) -> f64 {
    1.0 + (t_max as f64 - 1.0) * sigmoid(frequency * sentiment)
}

/// Feature vectors for one interaction over the full vocabulary. Entries on
/// the support lie in `[1, T]`; off-support entries are exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedFeatures {
    pub user_vec: Vec<f64>,
    pub item_vec: Vec<f64>,
    /// Sorted indices of the words this interaction mentions.
    pub support: Vec<usize>,
}

impl DecomposedFeatures {
    pub fn empty(p: usize) -> Self {
        DecomposedFeatures { user_vec: vec![0.0; p], item_vec: vec![0.0; p], support: Vec::new() }
    }
}

/// Decompose one interaction's review features into the user-side and
/// item-side vectors, reading mean sentiments from the table.
pub fn decompose_features(
    record: &InteractionRecord,
    item: usize,
    sentiments: &SentimentTable,
    t_max: u32,
    vocab: &FeatureVocabulary,
) -> DecomposedFeatures {
    let mut out = DecomposedFeatures::empty(vocab.len());
    for f in &record.features {
        let Some(k) = vocab.index_of(&f.word) else { continue };
        out.user_vec[k] = user_feature_value(f.frequency as f64, t_max);
        out.item_vec[k] = item_feature_value(f.frequency as f64, sentiments.mean(item, k), t_max);
        out.support.push(k);
    }
    out.support.sort_unstable();
    out.support.dedup();
    out
}
