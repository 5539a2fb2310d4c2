//! Verify the reverse-mode gradients of every scorer against central
//! finite differences. The same machinery backs all training procedures,
//! so this is the first thing to run when touching the graph code.

use xrec::data::{synth_generate, Dataset, SynthConfig};
use xrec::diff::check::FdCoords;
use xrec::diff::finite_difference_check;
use xrec::model::{score_pair, score_pair_grads, ModelKind, ModelState, ScorerConfig};

fn main() -> xrec::Result<()> {
    let synth = SynthConfig {
        users: 10,
        items: 16,
        features: 12,
        density: 0.3,
        planted_per_user: 3,
        item_profile_size: 3,
        noise: 0.0,
        t_max: 5,
    };
    let output = synth_generate(&synth, 11)?;
    let ds = Dataset::build(&output.records, synth.t_max, 11, None)?;

    for kind in [ModelKind::Baseline, ModelKind::Nar, ModelKind::Car] {
        let config = ScorerConfig { kind, id_dim: 6, word_dim: 5, mlp_hidden: vec![8, 6] };
        let state = ModelState::init(config, ds.num_users(), ds.num_items(), ds.vocab.len(), 3)?;

        let mut worst: f64 = 0.0;
        let mut worst_at = String::new();
        let mut coords = 0;
        for user in 0..4 {
            for item in 0..4 {
                let (_, grads) = score_pair_grads(&state, &ds, user, item)?;
                let mut store = state.params.clone();
                let probe = state.clone();
                let check = finite_difference_check(
                    &mut store,
                    &mut [],
                    |s, _| {
                        let mut m = probe.clone();
                        m.params = s.clone();
                        score_pair(&m, &ds, user, item)
                    },
                    &grads,
                    &[],
                    1e-5,
                    FdCoords::Sampled { per_param: 4, seed: 17 },
                )?;
                if check.max_rel_err > worst {
                    worst = check.max_rel_err;
                    worst_at = format!("pair ({user},{item}) at {}", check.worst);
                }
                coords += check.coords_checked;
            }
        }
        println!("{kind}: {coords} coordinates probed, max relative error {worst:.3e}");
        assert!(worst < 1e-4, "{kind} gradients disagree with finite differences ({worst_at})");
    }
    println!("all scorers match finite differences");
    Ok(())
}
