//! Generate a synthetic review corpus with planted user preferences and
//! inspect what the preparation step derives from it: the train/test
//! split, the decomposed feature values, and each user's ground truth.

use xrec::data::{synth_generate, Dataset, SynthConfig};

fn main() -> xrec::Result<()> {
    let cfg = SynthConfig {
        users: 20,
        items: 40,
        features: 15,
        density: 0.25,
        planted_per_user: 3,
        item_profile_size: 4,
        noise: 0.05,
        t_max: 5,
    };
    let seed = 7;
    let output = synth_generate(&cfg, seed)?;
    println!("{} interactions over {} users / {} items", output.records.len(), cfg.users, cfg.items);

    for r in output.records.iter().take(3) {
        let words: Vec<String> =
            r.features.iter().map(|f| format!("{}:{}:{:.2}", f.word, f.frequency, f.sentiment)).collect();
        println!("  {}\t{}\t{}\t{}", r.user_id, r.item_id, r.rating, words.join(","));
    }

    let ds = Dataset::build(&output.records, cfg.t_max, seed, None)?;
    println!(
        "split: {} train / {} test interactions, vocabulary {}",
        ds.train.len(),
        ds.test.len(),
        ds.vocab.len()
    );

    // Planted preferences are the explanation ground truth.
    for (user, words) in output.planted.iter().take(2) {
        println!("{user} was planted to prefer {words:?}");
    }

    // Feature decomposition turns (frequency, sentiment) mentions into
    // values on the rating scale [1, T].
    let idx = ds.train[0];
    if let Some(feats) = &ds.features[idx] {
        let it = &ds.interactions[idx];
        println!(
            "first train interaction ({} -> {}): support {:?}",
            ds.user_id(it.user),
            ds.item_id(it.item),
            feats.support
        );
        for &k in feats.support.iter().take(3) {
            println!(
                "  word {:10} user-side {:.3} item-side {:.3}",
                ds.vocab.word(k),
                feats.user_vec[k],
                feats.item_vec[k]
            );
        }
    }
    Ok(())
}
