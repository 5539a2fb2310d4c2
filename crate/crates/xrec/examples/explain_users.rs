//! Build per-user explanations from all three strategies, compare their
//! top words against the planted ground truth, and correlate the sources.

use xrec::data::{synth_generate, Dataset, SynthConfig};
use xrec::explain::{
    explanation_gt, explanation_nar, explanation_perturb, pearson_matrix, top_k_words, ExplanationSource,
};
use xrec::model::{ModelKind, ModelState, ScorerConfig};
use xrec::train::{
    adversarial_perturbation_records, train_adversarial, train_bpr, train_counterfactual, PerturbKind,
    TrainConfig,
};

fn main() -> xrec::Result<()> {
    let synth = SynthConfig {
        users: 30,
        items: 60,
        features: 15,
        density: 0.3,
        planted_per_user: 3,
        item_profile_size: 3,
        noise: 0.0,
        t_max: 5,
    };
    let output = synth_generate(&synth, 17)?;
    let ds = Dataset::build(&output.records, synth.t_max, 17, None)?;
    let arch = |kind| ScorerConfig { kind, id_dim: 8, word_dim: 6, mlp_hidden: vec![12, 8] };
    let cfg = TrainConfig {
        epochs: 10,
        lr: 0.01,
        batch_size: 64,
        outer: 3,
        search_triples: 30,
        search_steps: 300,
        seed: 9,
        ..TrainConfig::default()
    };

    let mut nar = ModelState::init(arch(ModelKind::Nar), ds.num_users(), ds.num_items(), ds.vocab.len(), 5)?;
    train_bpr(&mut nar, &ds, &cfg)?;

    let mut car = ModelState::init(arch(ModelKind::Car), ds.num_users(), ds.num_items(), ds.vocab.len(), 6)?;
    train_adversarial(&mut car, &ds, &cfg)?;
    let car_records = adversarial_perturbation_records(&car, &ds, &cfg)?;

    let mut cnr = ModelState::init(arch(ModelKind::Cnr), ds.num_users(), ds.num_items(), ds.vocab.len(), 7)?;
    let (_, cnr_records) = train_counterfactual(&mut cnr, &ds, &cfg)?;

    let mut vectors = Vec::new();
    for user in 0..ds.num_users() {
        vectors.push(explanation_gt(&ds, user)?);
    }
    for user in 0..ds.num_users() {
        vectors.push(explanation_nar(&nar, &ds, user)?);
    }
    for user in 0..ds.num_users() {
        vectors.push(explanation_perturb(&ds, &car_records, user, PerturbKind::Adversarial)?);
    }
    for user in 0..ds.num_users() {
        vectors.push(explanation_perturb(&ds, &cnr_records, user, PerturbKind::Counterfactual)?);
    }

    for user in [0, 1] {
        println!("user {} (planted {:?})", ds.user_id(user), output.planted[ds.user_id(user)]);
        for v in vectors.iter().filter(|v| v.user == user) {
            let words = top_k_words(&v.values, &ds.vocab, 3)?;
            println!("  {:4}: {}", v.source.as_str(), words.join(", "));
        }
    }

    let report = pearson_matrix(&vectors)?;
    println!("\ncorrelation over {} users:", report.users);
    let names: Vec<&str> = ExplanationSource::all().iter().map(|s| s.as_str()).collect();
    println!("      {}", names.iter().map(|n| format!("{n:>7}")).collect::<String>());
    for (i, name) in names.iter().enumerate() {
        let row: String = report.matrix[i].iter().map(|v| format!("{v:7.3}")).collect();
        println!("{name:4} {row}");
    }
    Ok(())
}
