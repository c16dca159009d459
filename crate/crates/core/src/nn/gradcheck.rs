use alloc::vec::Vec;

use super::ParamSet;

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` around `params`.
///
/// `sample == 0` checks every coordinate; otherwise up to `sample`
/// evenly strided coordinates are checked. The caller compares the result
/// against its tolerance.
pub fn grad_check<P, F>(params: &P, analytic: &P, loss: F, step: f64, sample: usize) -> f64
where
    P: ParamSet + Clone,
    F: Fn(&P) -> f64,
{
    let flat_grad = analytic.flatten();
    let base = params.flatten();
    assert_eq!(base.len(), flat_grad.len(), "gradient not congruent with parameters");
    let coords: Vec<usize> = if sample == 0 || sample >= base.len() {
        (0..base.len()).collect()
    } else {
        let stride = base.len() as f64 / sample as f64;
        (0..sample).map(|k| (k as f64 * stride) as usize).collect()
    };
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst = 0.0f64;
    for idx in coords {
        flat[idx] = base[idx] + step;
        probe.assign_flat(&flat).expect("same shape");
        let up = loss(&probe);
        flat[idx] = base[idx] - step;
        probe.assign_flat(&flat).expect("same shape");
        let down = loss(&probe);
        flat[idx] = base[idx];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(rel_error(flat_grad[idx], numeric));
    }
    worst
}
