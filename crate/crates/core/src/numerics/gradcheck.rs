//! Central finite-difference verification of analytic gradients.

use rand::seq::index;

use super::rng::stream;
use super::ParamStore;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the gradient returned by `f` at `params` against central
/// differences at `samples` coordinates drawn without replacement (all of
/// them when `samples` exceeds the parameter count).
pub fn grad_check<F>(f: F, params: &ParamStore, h: f64, samples: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> (f64, ParamStore),
{
    if !(h > 0.0) || samples == 0 {
        return Err(Error::InvalidConfig("grad_check needs h > 0 and samples >= 1".into()));
    }
    let (_, analytic) = f(params);
    params.check_aligned(&analytic)?;
    let total = params.total_params();
    let coords: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        let mut rng = stream(seed, "gradcheck", 0);
        let mut v = index::sample(&mut rng, total, samples).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: coords.len() };
    for &c in &coords {
        let (name, local, v) = params.flat_get(c).expect("coordinate in range");
        probe.flat_set(c, v + h);
        let up = f(&probe).0;
        probe.flat_set(c, v - h);
        let down = f(&probe).0;
        probe.flat_set(c, v);
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic.flat_get(c).expect("aligned").2, numeric);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name.to_string(), local));
        }
    }
    Ok(report)
}
