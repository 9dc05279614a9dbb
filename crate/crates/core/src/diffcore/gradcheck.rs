use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Settings for [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed; all of them when the point is smaller.
    pub max_coords: usize,
    /// Seed for choosing which coordinates to probe.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            max_coords: 200,
            seed: 0,
        }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

fn eval<F>(f: &F, point: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let out = f(&mut g, x)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::numeric("grad_check", "non-finite function value"));
    }
    Ok((v, g.backward(out)?.get_or_zeros(x, point)))
}

fn eval_value<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let out = f(&mut g, x)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::numeric("grad_check", "non-finite function value at probe"));
    }
    Ok(v)
}

/// Compares the analytic gradient of `f` at `point` with central differences.
///
/// The error per coordinate is `|analytic - numeric| / max(1, |numeric|)`;
/// the maximum over probed coordinates is returned.
pub fn grad_check<F>(f: F, point: &Tensor, cfg: &GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if cfg.step <= 0.0 || !cfg.step.is_finite() {
        return Err(Error::config(format!("grad_check step must be > 0, got {}", cfg.step)));
    }
    let (_, grad) = eval(&f, point)?;
    let n = point.numel();
    let coords: Vec<usize> = if n <= cfg.max_coords {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, n, cfg.max_coords).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut worst = 0.0f64;
    for &i in &coords {
        let x0 = point.data()[i];
        let plus = eval_value(&f, &point.with_value(i, x0 + cfg.step))?;
        let minus = eval_value(&f, &point.with_value(i, x0 - cfg.step))?;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        coords_checked: coords.len(),
    })
}
