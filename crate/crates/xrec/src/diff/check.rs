use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::params::ParamStore;
use crate::diff::tape::ParamGrads;
use crate::error::Result;

/// Outcome of a central finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdCheck {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Coordinates where the two one-sided slopes disagreed, i.e. the probe
    /// straddled a kink (ReLU corner). Central differences lie there, so
    /// those coordinates are not compared.
    pub coords_skipped_kink: usize,
    /// Coordinate with the largest relative error, e.g. `w0[3]` or `input0[7]`.
    pub worst: String,
}

impl FdCheck {
    fn observe(&mut self, label: String, ad: f64, fd: f64) {
        let rel = (ad - fd).abs() / f64::max(1.0, f64::max(ad.abs(), fd.abs()));
        self.coords_checked += 1;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = format!("{label}: analytic {ad} vs numeric {fd}");
        }
    }

    /// The probed interval straddles a kink when the left and right slopes
    /// differ by far more than the curvature of a smooth function could
    /// explain at this step size: a kink's slope jump is the downstream
    /// sensitivity, independent of the step, while smooth disagreement
    /// shrinks linearly with it. A kink small enough to slip under this
    /// threshold pollutes the central difference by at most half of it.
    fn straddles_kink(f0: f64, fp: f64, fm: f64, step: f64) -> bool {
        let right = (fp - f0) / step;
        let left = (f0 - fm) / step;
        (right - left).abs() > 1e-4 * f64::max(1.0, f64::max(right.abs(), left.abs()))
    }
}

/// Which parameter coordinates to probe. Input coordinates are always all
/// probed.
#[derive(Debug, Clone, Copy)]
pub enum FdCoords {
    All,
    /// Probe up to this many seeded random coordinates per parameter array.
    Sampled { per_param: usize, seed: u64 },
}

/// Compare analytic gradients against central finite differences
/// `(f(x+h) - f(x-h)) / 2h`.
///
/// `eval` must rebuild the computation from scratch on the given store and
/// inputs and return the scalar output. `ad_params` / `ad_inputs` are the
/// analytic gradients at the unperturbed point (one gradient vector per
/// input, shapes matching `inputs`). Relative error uses the denominator
/// `max(1, |ad|, |fd|)` so tiny gradients do not inflate the report.
/// Coordinates whose probe interval straddles a kink are skipped and
/// counted instead of compared; a genuinely wrong analytic gradient still
/// fails, because there both one-sided slopes agree with each other.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    inputs: &mut [Vec<f64>],
    mut eval: F,
    ad_params: &ParamGrads,
    ad_inputs: &[Vec<f64>],
    step: f64,
    coords: FdCoords,
) -> Result<FdCheck>
where
    F: FnMut(&ParamStore, &[Vec<f64>]) -> Result<f64>,
{
    let mut report =
        FdCheck { max_rel_err: 0.0, coords_checked: 0, coords_skipped_kink: 0, worst: String::new() };
    let f0 = eval(store, inputs)?;

    for (vi, gi) in ad_inputs.iter().enumerate() {
        for c in 0..inputs[vi].len() {
            let orig = inputs[vi][c];
            inputs[vi][c] = orig + step;
            let fp = eval(store, inputs)?;
            inputs[vi][c] = orig - step;
            let fm = eval(store, inputs)?;
            inputs[vi][c] = orig;
            if FdCheck::straddles_kink(f0, fp, fm, step) {
                report.coords_skipped_kink += 1;
                continue;
            }
            let fd = (fp - fm) / (2.0 * step);
            report.observe(format!("input{vi}[{c}]"), gi[c], fd);
        }
    }

    let mut rng = match coords {
        FdCoords::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        FdCoords::All => None,
    };
    for pid in 0..store.len() {
        let len = store.param(pid).values.len();
        let picks: Vec<usize> = match coords {
            FdCoords::All => (0..len).collect(),
            FdCoords::Sampled { per_param, .. } => {
                let rng = rng.as_mut().expect("sampled rng");
                let mut seen = std::collections::BTreeSet::new();
                while seen.len() < per_param.min(len) {
                    seen.insert(rng.random_range(0..len));
                }
                seen.into_iter().collect()
            }
        };
        for c in picks {
            let orig = store.param(pid).values[c];
            store.param_mut(pid).values[c] = orig + step;
            let fp = eval(store, inputs)?;
            store.param_mut(pid).values[c] = orig - step;
            let fm = eval(store, inputs)?;
            store.param_mut(pid).values[c] = orig;
            if FdCheck::straddles_kink(f0, fp, fm, step) {
                report.coords_skipped_kink += 1;
                continue;
            }
            let fd = (fp - fm) / (2.0 * step);
            let ad = ad_params.get(pid).map_or(0.0, |g| g[c]);
            report.observe(format!("{}[{c}]", store.param(pid).name), ad, fd);
        }
    }
    Ok(report)
}
