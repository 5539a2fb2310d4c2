use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::record::{FeatureMention, InteractionRecord};
use crate::error::{Result, XrecError};

/// Vocabulary pool for synthetic review features; indices past the pool
/// fall back to generated tokens.
const LEXICON: &[&str] = &[
    "action", "amp", "attack", "bag", "balance", "band", "bass", "battery", "bell", "blend",
    "board", "body", "bow", "bridge", "brightness", "buzz", "cable", "capo", "case", "chord",
    "clamp", "clarity", "click", "clip", "comfort", "cord", "crack", "delay", "design", "dial",
    "distortion", "drum", "durability", "echo", "effect", "feedback", "feel", "finish", "fit",
    "foam", "fret", "gain", "gig", "grip", "handle", "hardware", "harmony", "head", "hinge",
    "hiss", "hum", "input", "jack", "key", "knob", "latch", "layout", "lead", "light", "loop",
    "material", "melody", "mic", "mount", "mute", "neck", "noise", "note", "output", "pad",
    "paint", "pedal", "pick", "pickup", "pitch", "plate", "plug", "polish", "port", "power",
    "price", "quality", "range", "reed", "resonance", "reverb", "rhythm", "ring", "rubber",
    "scale", "screen", "screw", "seal", "shape", "shell", "shine", "size", "skin", "slide",
    "smell", "snare", "sound", "spring", "stand", "stick", "strap", "strength", "string",
    "stud", "support", "sustain", "switch", "texture", "throw", "tone", "travel", "tube",
    "tuner", "tuning", "valve", "value", "vibe", "volume", "warmth", "weight", "wire", "wood",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub features: usize,
    /// Probability that any (user, item) pair interacts.
    pub density: f64,
    /// Size of each user's planted preferred-feature set.
    pub planted_per_user: usize,
    /// Size of each item's feature profile.
    pub item_profile_size: usize,
    /// Probability that an interaction is corrupted: its rating re-rolled
    /// uniformly and one random off-plan word inserted.
    pub noise: f64,
    pub t_max: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 50,
            items: 100,
            features: 40,
            density: 0.05,
            planted_per_user: 5,
            item_profile_size: 5,
            noise: 0.0,
            t_max: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(XrecError::Config(msg));
        if self.users == 0 || self.items == 0 || self.features == 0 {
            return bad("users, items, and features must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.density) {
            return bad(format!("density {} outside [0, 1]", self.density));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1]", self.noise));
        }
        if self.planted_per_user == 0 || self.planted_per_user > self.features {
            return bad(format!("planted_per_user {} outside [1, features]", self.planted_per_user));
        }
        if self.item_profile_size == 0 || self.item_profile_size > self.features {
            return bad(format!("item_profile_size {} outside [1, features]", self.item_profile_size));
        }
        if self.t_max < 3 {
            return bad("t_max must be at least 3 so unlabeled ratings exist".into());
        }
        Ok(())
    }
}

/// A generated corpus plus its ground truth: which features each user was
/// planted to prefer.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub records: Vec<InteractionRecord>,
    /// user id -> planted preferred words (sorted).
    pub planted: BTreeMap<String, Vec<String>>,
    pub words: Vec<String>,
}

fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, from: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..from).collect();
    for k in 0..n {
        let j = rng.random_range(k..pool.len());
        pool.swap(k, j);
    }
    let mut picked: Vec<usize> = pool[..n].to_vec();
    picked.sort_unstable();
    picked
}

/// Generate a synthetic corpus with planted preferences.
///
/// Every user gets a preferred-feature set S_u and every item a feature
/// profile A_i. Interacting pairs with S_u ∩ A_i nonempty produce positive
/// ratings (top two levels) and review mentions of exactly the matched
/// words with positive sentiment; non-matching pairs produce low ratings
/// with no review features. With `noise = 0` every positive interaction's
/// features are therefore a subset of the user's planted set. Generation
/// is deterministic: the same config and seed give identical records.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..cfg.features)
        .map(|k| LEXICON.get(k).map_or_else(|| format!("w{k:04}"), |w| w.to_string()))
        .collect();
    let t = cfg.t_max;

    let user_prefs: Vec<Vec<usize>> =
        (0..cfg.users).map(|_| sample_distinct(&mut rng, cfg.planted_per_user, cfg.features)).collect();
    let item_profiles: Vec<Vec<usize>> =
        (0..cfg.items).map(|_| sample_distinct(&mut rng, cfg.item_profile_size, cfg.features)).collect();

    let mut records = Vec::new();
    for u in 0..cfg.users {
        for i in 0..cfg.items {
            if rng.random::<f64>() >= cfg.density {
                continue;
            }
            let matched: Vec<usize> = user_prefs[u]
                .iter()
                .filter(|k| item_profiles[i].binary_search(k).is_ok())
                .copied()
                .collect();
            let mut rating;
            let mut features: Vec<FeatureMention> = Vec::new();
            if matched.is_empty() {
                rating = rng.random_range(1..=t - 2);
            } else {
                rating = t - 1 + rng.random_range(0..=1);
                for &k in &matched {
                    features.push(FeatureMention {
                        word: words[k].clone(),
                        frequency: rng.random_range(1..=3),
                        sentiment: rng.random_range(0.5..1.0),
                    });
                }
            }
            if cfg.noise > 0.0 && rng.random::<f64>() < cfg.noise {
                rating = rng.random_range(1..=t);
                let extra = rng.random_range(0..cfg.features);
                if !features.iter().any(|f| f.word == words[extra]) {
                    features.push(FeatureMention {
                        word: words[extra].clone(),
                        frequency: 1,
                        sentiment: rng.random_range(-1.0..1.0),
                    });
                }
            }
            records.push(InteractionRecord {
                user_id: format!("u{u:04}"),
                item_id: format!("i{i:04}"),
                rating,
                features,
            });
        }
    }
    let planted = (0..cfg.users)
        .map(|u| (format!("u{u:04}"), user_prefs[u].iter().map(|&k| words[k].clone()).collect()))
        .collect();
    Ok(SynthOutput { records, planted, words })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::{label_feedback, Feedback};

    #[test]
    fn interaction_count_tracks_density() {
        let cfg = SynthConfig::default();
        let out = synth_generate(&cfg, 5).unwrap();
        // Expected 50 * 100 * 0.05 = 250.
        let n = out.records.len() as f64;
        assert!((150.0..350.0).contains(&n), "{n}");
    }

    #[test]
    fn noiseless_positive_features_are_planted() {
        let out = synth_generate(&SynthConfig::default(), 9).unwrap();
        for r in &out.records {
            match label_feedback(r.rating, 5) {
                Feedback::Positive => {
                    assert!(!r.features.is_empty());
                    let planted = &out.planted[&r.user_id];
                    for f in &r.features {
                        assert!(planted.contains(&f.word), "{} not planted for {}", f.word, r.user_id);
                        assert!(f.sentiment >= 0.5);
                    }
                }
                Feedback::Unlabeled => assert!(r.features.is_empty()),
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig { noise: 0.2, ..Default::default() };
        let a = synth_generate(&cfg, 33).unwrap();
        let b = synth_generate(&cfg, 33).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.planted, b.planted);
        let c = synth_generate(&cfg, 34).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let bad = SynthConfig { density: 1.5, ..Default::default() };
        assert!(synth_generate(&bad, 0).is_err());
        let bad = SynthConfig { planted_per_user: 100, features: 40, ..Default::default() };
        assert!(synth_generate(&bad, 0).is_err());
        let bad = SynthConfig { users: 0, ..Default::default() };
        assert!(synth_generate(&bad, 0).is_err());
    }

    #[test]
    fn large_feature_counts_fall_back_to_generated_tokens() {
        let cfg = SynthConfig { features: 130, planted_per_user: 5, ..Default::default() };
        let out = synth_generate(&cfg, 1).unwrap();
        assert!(out.words.iter().any(|w| w.starts_with('w') && w.len() == 5));
        assert_eq!(out.words.len(), 130);
    }
}
