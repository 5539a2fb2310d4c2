use std::collections::BTreeMap;

use crate::data::record::InteractionRecord;
use crate::error::{Result, XrecError};

/// The feature vocabulary: all distinct review words in lexicographic
/// order, giving every word a stable index in `[0, P)` without needing a
/// seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl FeatureVocabulary {
    pub fn from_records(records: &[InteractionRecord]) -> Result<Self> {
        let mut set: Vec<String> = records
            .iter()
            .flat_map(|r| r.features.iter().map(|f| f.word.clone()))
            .collect();
        set.sort();
        set.dedup();
        Self::from_words(set)
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(XrecError::Invalid("empty feature vocabulary".into()));
        }
        let mut sorted = words;
        sorted.sort();
        sorted.dedup();
        let index = sorted.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        Ok(FeatureVocabulary { words: sorted, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, k: usize) -> &str {
        &self.words[k]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::FeatureMention;

    fn rec(words: &[&str]) -> InteractionRecord {
        InteractionRecord {
            user_id: "u".into(),
            item_id: "i".into(),
            rating: 5,
            features: words
                .iter()
                .map(|w| FeatureMention { word: w.to_string(), frequency: 1, sentiment: 0.5 })
                .collect(),
        }
    }

    #[test]
    fn ordering_is_lexicographic_and_bijective() {
        let v = FeatureVocabulary::from_records(&[rec(&["pedal", "sound"]), rec(&["amp", "sound"])]).unwrap();
        assert_eq!(v.words(), &["amp".to_string(), "pedal".into(), "sound".into()]);
        for k in 0..v.len() {
            assert_eq!(v.index_of(v.word(k)), Some(k));
        }
        assert_eq!(v.index_of("missing"), None);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        assert!(FeatureVocabulary::from_records(&[rec(&[])]).is_err());
    }
}
