//! Random-number plumbing: seeding, substreams and the few distributions
//! the model needs beyond `rand_distr`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};

/// Generator used everywhere in the crate.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a master seed with a path of stream tags into a child seed.
/// Distinct paths give statistically independent children.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// ChaCha generator keyed by `seed` on substream `stream`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills `out` with a Dirichlet(`alpha`) draw.
pub fn sample_dirichlet<R: RngCore + ?Sized>(rng: &mut R, alpha: &[f64], out: &mut [f64]) {
    debug_assert_eq!(alpha.len(), out.len());
    loop {
        let mut total = 0.0;
        for (o, &a) in out.iter_mut().zip(alpha) {
            let g = Gamma::new(a, 1.0).expect("positive Dirichlet concentration");
            *o = g.sample(rng);
            total += *o;
        }
        if total > 0.0 && total.is_finite() {
            out.iter_mut().for_each(|v| *v /= total);
            return;
        }
    }
}

pub fn sample_beta<R: RngCore + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("positive Beta shapes").sample(rng)
}

/// Index drawn with probability proportional to `weights` (non-negative,
/// not all zero).
pub fn sample_categorical<R: RngCore + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return k;
            }
            u -= w;
            last = k;
        }
    }
    last
}

/// Categorical draw from unnormalised log weights; `None` when every weight
/// is `-inf`.
pub fn sample_log_categorical<R: RngCore + ?Sized>(
    rng: &mut R,
    log_weights: &[f64],
    scratch: &mut [f64],
) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    for (s, &lw) in scratch.iter_mut().zip(log_weights) {
        *s = libm::exp(lw - max);
    }
    Some(sample_categorical(rng, &scratch[..log_weights.len()]))
}
