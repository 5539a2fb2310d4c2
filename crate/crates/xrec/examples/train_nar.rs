//! Train the attention-based scorer with pairwise ranking loss and look at
//! what the attention learned: the weights over each user's review words
//! are the model's own explanation.

use xrec::data::{synth_generate, Dataset, SynthConfig};
use xrec::model::{attention_weights, AttentionSide, ModelKind, ModelState, ScorerConfig};
use xrec::train::{train_bpr, TrainConfig};

fn main() -> xrec::Result<()> {
    let synth = SynthConfig {
        users: 40,
        items: 60,
        features: 18,
        density: 0.3,
        planted_per_user: 3,
        item_profile_size: 3,
        noise: 0.05,
        t_max: 5,
    };
    let output = synth_generate(&synth, 21)?;
    let ds = Dataset::build(&output.records, synth.t_max, 21, None)?;

    let config = ScorerConfig { kind: ModelKind::Nar, id_dim: 8, word_dim: 6, mlp_hidden: vec![12, 8] };
    let mut state = ModelState::init(config, ds.num_users(), ds.num_items(), ds.vocab.len(), 5)?;

    let cfg = TrainConfig { epochs: 10, lr: 0.01, batch_size: 64, seed: 9, ..TrainConfig::default() };
    let traces = train_bpr(&mut state, &ds, &cfg)?;
    for t in &traces {
        println!("epoch {:2}  ranking loss {:.4}", t.epoch, t.clean_loss);
    }

    // Attention over the words one user actually wrote.
    let user = 0;
    let mut support: Vec<usize> = Vec::new();
    for &idx in &ds.train {
        let it = &ds.interactions[idx];
        if it.user == user {
            if let Some(f) = &ds.features[idx] {
                support.extend(f.support.iter().copied());
            }
        }
    }
    support.sort();
    support.dedup();
    if support.is_empty() {
        println!("user {} wrote no featured reviews", ds.user_id(user));
        return Ok(());
    }

    let alpha = attention_weights(&state, AttentionSide::User, user, &support)?;
    let mut ranked: Vec<(f64, usize)> = alpha.iter().copied().zip(support.iter().copied()).collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let planted = &output.planted[ds.user_id(user)];
    println!("\nuser {} attention (planted: {:?})", ds.user_id(user), planted);
    for (w, k) in ranked.iter().take(5) {
        let word = ds.vocab.word(*k);
        let mark = if planted.iter().any(|p| p == word) { "  <- planted" } else { "" };
        println!("  {word:10} {w:.3}{mark}");
    }
    Ok(())
}
