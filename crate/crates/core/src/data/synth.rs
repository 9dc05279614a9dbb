//! Synthetic generators used by tests, the acceptance suite and the smoke pipeline.

use super::store::{LogitRecord, LogitsStore};
use super::Dataset;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Isotropic Gaussian classes centred on scaled vertices of a random orthonormal frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    pub noise: f64,
}

impl Default for GaussianMixtureSpec {
    fn default() -> Self {
        GaussianMixtureSpec {
            classes: 10,
            dim: 16,
            per_class: 500,
            separation: 3.0,
            noise: 1.0,
        }
    }
}

/// `k` orthonormal vectors in `R^d` from Gram-Schmidt on Gaussian draws.
fn orthonormal_frame(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for q in &frame {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(q) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            frame.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    frame
}

/// Class centres `separation * q_k` of the mixture, reproducible by seed.
pub fn mixture_centres(spec: &GaussianMixtureSpec, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    orthonormal_frame(&mut rng, spec.classes, spec.dim)
        .into_iter()
        .map(|q| q.into_iter().map(|x| x * spec.separation).collect())
        .collect()
}

/// Samples are interleaved by class: sample `i` has label `i % K`.
pub fn gen_gaussian_mixture(spec: &GaussianMixtureSpec, seed: u64) -> Result<Dataset> {
    let GaussianMixtureSpec {
        classes: k,
        dim: d,
        per_class,
        separation,
        noise,
    } = *spec;
    if k < 2 || d < 2 {
        return Err(Error::config(format!("need K >= 2 and D >= 2, got K={k}, D={d}")));
    }
    if k > d {
        return Err(Error::config(format!(
            "an orthonormal frame in R^{d} has at most {d} vertices, asked for {k} classes"
        )));
    }
    if per_class == 0 {
        return Err(Error::config("per_class must be positive"));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::config(format!("separation must be > 0, got {separation}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::config(format!("noise must be >= 0, got {noise}")));
    }
    let centres = mixture_centres(spec, seed);
    // Separate stream for the per-sample noise so the centres do not depend on n.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let n = k * per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        for &c in &centres[y] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(c + noise * z);
        }
        labels.push(y);
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, k)
}

/// Two-exit store whose exits specialise on complementary halves of the classes.
///
/// Exit 1 is confidently correct (true logit raised by `margin`) on the first
/// `K/2` classes, exit 2 on the rest. Off its half an exit emits near-uniform
/// logits: jitter below 0.01 on every class plus a 0.05 bump on a random class
/// from its own half, so it is never correct there.
pub fn gen_complementary_store(classes: usize, n: usize, margin: f64, seed: u64) -> Result<LogitsStore> {
    if classes < 2 || classes % 2 != 0 {
        return Err(Error::config(format!("need an even class count >= 2, got {classes}")));
    }
    if n < 10 * classes {
        return Err(Error::config(format!("need n >= 10K = {}, got {n}", 10 * classes)));
    }
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(Error::config(format!("margin must be > 0, got {margin}")));
    }
    let half = classes / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let mut exits = Vec::with_capacity(2);
        for exit in 0..2 {
            let own = exit * half..(exit + 1) * half;
            let mut logits: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() * 0.01).collect();
            if own.contains(&label) {
                logits[label] += margin;
            } else {
                let pick = own.start + rng.random_range(0..half);
                logits[pick] += 0.05;
            }
            exits.push(logits);
        }
        records.push(LogitRecord {
            id: format!("s{i:06}"),
            label,
            exit_logits: exits,
        });
    }
    LogitsStore::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidential::argmax;

    #[test]
    fn mixture_is_reproducible_and_frame_is_orthonormal() {
        let spec = GaussianMixtureSpec { per_class: 20, ..Default::default() };
        let a = gen_gaussian_mixture(&spec, 9).unwrap();
        let b = gen_gaussian_mixture(&spec, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_gaussian_mixture(&spec, 10).unwrap();
        assert_ne!(a, c);
        let centres = mixture_centres(&spec, 9);
        for i in 0..spec.classes {
            for j in 0..spec.classes {
                let dot: f64 = centres[i].iter().zip(&centres[j]).map(|(x, y)| x * y).sum();
                let want = if i == j { 9.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_mixture_sits_on_centres() {
        let spec = GaussianMixtureSpec { per_class: 3, noise: 0.0, ..Default::default() };
        let d = gen_gaussian_mixture(&spec, 1).unwrap();
        let centres = mixture_centres(&spec, 1);
        for i in 0..d.len() {
            assert_eq!(d.features().row(i), centres[d.labels()[i]].as_slice());
        }
    }

    #[test]
    fn mixture_errors() {
        let bad = |s: GaussianMixtureSpec| gen_gaussian_mixture(&s, 0).is_err();
        assert!(bad(GaussianMixtureSpec { classes: 1, ..Default::default() }));
        assert!(bad(GaussianMixtureSpec { dim: 1, ..Default::default() }));
        assert!(bad(GaussianMixtureSpec { classes: 17, ..Default::default() }));
        assert!(bad(GaussianMixtureSpec { separation: 0.0, ..Default::default() }));
    }

    #[test]
    fn complementary_store_shape() {
        let s = gen_complementary_store(10, 200, 4.0, 3).unwrap();
        assert_eq!(s.len(), 200);
        assert_eq!(s.exit_count(), 2);
        let mut counts = [0usize; 10];
        for r in s.records() {
            counts[r.label] += 1;
            let p1 = argmax(&r.exit_logits[0]);
            let p2 = argmax(&r.exit_logits[1]);
            assert_eq!(p1 == r.label, r.label < 5);
            assert_eq!(p2 == r.label, r.label >= 5);
        }
        assert!(counts.iter().all(|&c| c == 20));
        assert!(gen_complementary_store(10, 99, 4.0, 3).is_err());
        assert!(gen_complementary_store(9, 1000, 4.0, 3).is_err());
    }
}
