use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Result, XrecError};

/// One review feature extracted from a user's review of an item: the word,
/// how often it occurs, and its sentiment in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMention {
    pub word: String,
    pub frequency: u32,
    pub sentiment: f64,
}

/// One observed interaction: a rating in `[1, T]` plus the review features.
/// An empty feature list is allowed; such interactions rank but carry no
/// explanation signal.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u32,
    pub features: Vec<FeatureMention>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    Positive,
    Unlabeled,
}

/// Ratings of `T-1` and above count as positive feedback; everything else
/// is unlabeled (not negative).
pub fn label_feedback(rating: u32, t_max: u32) -> Feedback {
    if rating + 1 >= t_max {
        Feedback::Positive
    } else {
        Feedback::Unlabeled
    }
}

fn parse_line(line: &str, path: &str, lineno: usize, t_max: u32) -> Result<InteractionRecord> {
    let err = |msg: String| XrecError::Parse { path: path.to_string(), line: lineno, msg };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
    }
    let (user_id, item_id, rating_s, feats) = (fields[0], fields[1], fields[2], fields[3]);
    if user_id.is_empty() || item_id.is_empty() {
        return Err(err("empty user or item id".into()));
    }
    let rating: u32 = rating_s
        .parse()
        .map_err(|_| err(format!("bad rating `{rating_s}`")))?;
    if rating < 1 || rating > t_max {
        return Err(err(format!("rating {rating} outside [1, {t_max}]")));
    }
    let mut features = Vec::new();
    let mut seen = BTreeSet::new();
    if !feats.is_empty() {
        for part in feats.split(',') {
            let mut it = part.split(':');
            let (word, freq, sent) = match (it.next(), it.next(), it.next(), it.next()) {
                (Some(w), Some(f), Some(s), None) => (w, f, s),
                _ => return Err(err(format!("bad feature entry `{part}` (want word:freq:sentiment)"))),
            };
            if word.is_empty() {
                return Err(err(format!("empty word in `{part}`")));
            }
            if !seen.insert(word.to_string()) {
                return Err(err(format!("duplicate word `{word}`")));
            }
            let frequency: u32 = freq
                .parse()
                .map_err(|_| err(format!("bad frequency `{freq}` for `{word}`")))?;
            let sentiment: f64 = sent
                .parse()
                .map_err(|_| err(format!("bad sentiment `{sent}` for `{word}`")))?;
            if !sentiment.is_finite() || !(-1.0..=1.0).contains(&sentiment) {
                return Err(err(format!("sentiment {sentiment} outside [-1, 1] for `{word}`")));
            }
            features.push(FeatureMention { word: word.to_string(), frequency, sentiment });
        }
    }
    Ok(InteractionRecord {
        user_id: user_id.to_string(),
        item_id: item_id.to_string(),
        rating,
        features,
    })
}

/// Parse an interaction file (see the format in [`write_interactions`]).
/// Lines starting with `#` and blank lines are skipped. Record order
/// follows file order.
pub fn parse_interactions(path: &Path, t_max: u32) -> Result<Vec<InteractionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| XrecError::io(path, e))?;
    let reader = BufReader::new(file);
    let display = path.display().to_string();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| XrecError::io(path, e))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        records.push(parse_line(&line, &display, i + 1, t_max)?);
    }
    Ok(records)
}

/// Write records as tab-separated lines
/// `user<TAB>item<TAB>rating<TAB>word:freq:sentiment,...` behind a comment
/// header carrying the format version and the creating configuration.
pub fn write_interactions(path: &Path, records: &[InteractionRecord], config_echo: &serde_json::Value) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# format=xrec-interactions/1 config={config_echo}\n"));
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\t", r.user_id, r.item_id, r.rating));
        for (i, f) in r.features.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}:{}:{}", f.word, f.frequency, f.sentiment));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| XrecError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| XrecError::io(path, e))
}
