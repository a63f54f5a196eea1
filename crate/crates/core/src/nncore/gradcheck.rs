use rand::Rng;

use super::{params::stream_rng, Grads, ParamStore};
use crate::error::{Error, Result};

/// Max relative error between analytic gradients and central differences.
///
/// `f` evaluates the loss and its analytic gradients at the given parameters.
/// `n_probes` coordinates are drawn uniformly (seeded) over all parameters;
/// when `n_probes` covers every coordinate, all are checked.
/// Coordinates where both gradients are within the rounding error of the central
/// difference, `16 ε max(|L|, 1) / h`, are zero gradients and are skipped.
pub fn grad_check<F>(mut f: F, params: &ParamStore, n_probes: usize, h: f64, seed: u64) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(f64, Grads)>,
{
    let (loss, grads) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss at probe point".into()));
    }
    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(n, m)| (0..m.data().len()).map(move |i| (n.to_string(), i)))
        .collect();
    let probes: Vec<(String, usize)> = if n_probes >= coords.len() {
        coords
    } else {
        let mut rng = stream_rng(seed, "grad_check");
        (0..n_probes)
            .map(|_| coords[rng.random_range(0..coords.len())].clone())
            .collect()
    };
    let mut worst = 0.0f64;
    let mut work = params.clone();
    for (name, i) in probes {
        let base = params.get(&name)?.clone();
        let eval = |work: &mut ParamStore, f: &mut F, delta: f64| -> Result<f64> {
            let mut m = base.clone();
            m.data_mut()[i] += delta;
            work.set(&name, m)?;
            let (l, _) = f(work)?;
            if !l.is_finite() {
                return Err(Error::Numeric("non-finite loss during probing".into()));
            }
            Ok(l)
        };
        let plus = eval(&mut work, &mut f, h)?;
        let minus = eval(&mut work, &mut f, -h)?;
        work.set(&name, base.clone())?;
        let fd = (plus - minus) / (2.0 * h);
        let analytic = grads.get(&name).map_or(0.0, |g| g.data()[i]);
        let noise = 16.0 * f64::EPSILON * loss.abs().max(plus.abs()).max(minus.abs()).max(1.0) / h;
        if analytic.abs().max(fd.abs()) > noise {
            worst = worst.max((analytic - fd).abs() / (analytic.abs() + fd.abs()));
        }
    }
    Ok(worst)
}
