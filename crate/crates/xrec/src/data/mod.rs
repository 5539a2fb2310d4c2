pub mod dataset;
pub mod decompose;
pub mod record;
pub mod synth;
pub mod vocab;

pub use dataset::{
    derive_seed, load_dataset, split_train_test, AggregateFeatures, Dataset, DatasetManifest, Interaction,
};
pub use decompose::{
    decompose_features, item_feature_value, user_feature_value, DecomposedFeatures, SentimentTable,
};
pub use record::{
    label_feedback, parse_interactions, write_interactions, Feedback, FeatureMention, InteractionRecord,
};
pub use synth::{synth_generate, SynthConfig, SynthOutput};
pub use vocab::FeatureVocabulary;
