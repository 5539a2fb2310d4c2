//! Adversarial training: each batch adds loss-ascending perturbations to
//! the user features and trains on clean plus perturbed triples. The
//! perturbations live on the words the user wrote, so their magnitudes
//! double as explanations.

use xrec::data::{synth_generate, Dataset, SynthConfig};
use xrec::model::{score_car, triple_features, ModelKind, ModelState, PairFeatures, ScorerConfig};
use xrec::train::{fgsm_perturbation, sample_bpr_triples, train_adversarial, TrainConfig};

fn main() -> xrec::Result<()> {
    let synth = SynthConfig {
        users: 30,
        items: 50,
        features: 15,
        density: 0.3,
        planted_per_user: 3,
        item_profile_size: 3,
        noise: 0.0,
        t_max: 5,
    };
    let output = synth_generate(&synth, 13)?;
    let ds = Dataset::build(&output.records, synth.t_max, 13, None)?;

    let config = ScorerConfig { kind: ModelKind::Car, id_dim: 8, word_dim: 6, mlp_hidden: vec![12, 8] };
    let mut state = ModelState::init(config, ds.num_users(), ds.num_items(), ds.vocab.len(), 5)?;

    let cfg = TrainConfig {
        epochs: 8,
        lr: 0.01,
        batch_size: 64,
        epsilon: 0.5,
        lambda: 1.0,
        seed: 9,
        ..TrainConfig::default()
    };
    let traces = train_adversarial(&mut state, &ds, &cfg)?;
    for t in traces.iter().step_by(2) {
        println!(
            "epoch {:2}  clean {:.4}  adversarial {:.4}",
            t.epoch,
            t.clean_loss,
            t.aux_loss.unwrap_or(f64::NAN)
        );
    }

    // The perturbation has exactly the requested budget and raises the
    // pairwise loss: score of the positive drops relative to the negative.
    let triples = sample_bpr_triples(&ds, 1, 99)?;
    println!("\nbudget {} perturbations on the first triples:", cfg.epsilon);
    for &t in triples.iter().take(4) {
        let delta = fgsm_perturbation(&state, &ds, t, cfg.epsilon)?;
        let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let feats = triple_features(&ds, t.pos_interaction, t.neg_item)?;
        let pair = PairFeatures {
            f_u: feats.f_u.clone(),
            support_u: feats.support_u.clone(),
            f_i: feats.f_i.clone(),
            support_i: feats.support_i.clone(),
        };
        let clean = score_car(&state, t.user, t.pos_item, &pair, None)?;
        let pushed = score_car(&state, t.user, t.pos_item, &pair, Some(&delta))?;
        println!(
            "  user {:4} pos {:4}: |delta| = {norm:.6}, positive score {clean:+.4} -> {pushed:+.4}",
            ds.user_id(t.user),
            ds.item_id(t.pos_item)
        );
    }
    Ok(())
}
