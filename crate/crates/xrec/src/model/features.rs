use crate::data::dataset::Dataset;
use crate::error::{Result, XrecError};

/// Feature inputs for scoring one (user, item) pair: P-length value
/// vectors and the supports the attention path runs over.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub f_u: Vec<f64>,
    pub f_i: Vec<f64>,
    pub support_u: Vec<usize>,
    pub support_i: Vec<usize>,
}

/// Feature inputs for one training triple. The user vector comes from the
/// observed positive interaction and is shared by both the positive and
/// negative score (and is the vector perturbations apply to).
#[derive(Debug, Clone, PartialEq)]
pub struct TripleFeatures {
    pub f_u: Vec<f64>,
    pub support_u: Vec<usize>,
    pub f_i: Vec<f64>,
    pub support_i: Vec<usize>,
    pub f_j: Vec<f64>,
    pub support_j: Vec<usize>,
}

impl TripleFeatures {
    /// The (user, positive item) side as pair features.
    pub fn positive_pair(&self) -> PairFeatures {
        PairFeatures {
            f_u: self.f_u.clone(),
            f_i: self.f_i.clone(),
            support_u: self.support_u.clone(),
            support_i: self.support_i.clone(),
        }
    }

    /// The (user, negative item) side as pair features.
    pub fn negative_pair(&self) -> PairFeatures {
        PairFeatures {
            f_u: self.f_u.clone(),
            f_i: self.f_j.clone(),
            support_u: self.support_u.clone(),
            support_i: self.support_j.clone(),
        }
    }
}

/// Features for an observed training interaction: both sides come from
/// that interaction's own decomposed review.
pub fn interaction_features(ds: &Dataset, interaction: usize) -> Result<PairFeatures> {
    let d = ds.features.get(interaction).and_then(|f| f.as_ref()).ok_or_else(|| {
        XrecError::Invalid(format!("interaction {interaction} has no decomposed features (not in train split)"))
    })?;
    Ok(PairFeatures {
        f_u: d.user_vec.clone(),
        f_i: d.item_vec.clone(),
        support_u: d.support.clone(),
        support_i: d.support.clone(),
    })
}

/// Features for an arbitrary — possibly unobserved — pair. This is the one
/// place that decides what stands in for a missing review: the user's and
/// item's aggregate feature vectors over their training interactions.
pub fn scoring_features(ds: &Dataset, user: usize, item: usize) -> PairFeatures {
    let u = &ds.user_aggregate[user];
    let i = &ds.item_aggregate[item];
    PairFeatures {
        f_u: u.values.clone(),
        f_i: i.values.clone(),
        support_u: u.support.clone(),
        support_i: i.support.clone(),
    }
}

/// Features for a training triple: the positive interaction's own review on
/// the user/positive side, the item aggregate for the sampled negative.
pub fn triple_features(ds: &Dataset, pos_interaction: usize, neg_item: usize) -> Result<TripleFeatures> {
    let pair = interaction_features(ds, pos_interaction)?;
    let j = &ds.item_aggregate[neg_item];
    Ok(TripleFeatures {
        f_u: pair.f_u,
        support_u: pair.support_u,
        f_i: pair.f_i,
        support_i: pair.support_i,
        f_j: j.values.clone(),
        support_j: j.support.clone(),
    })
}
