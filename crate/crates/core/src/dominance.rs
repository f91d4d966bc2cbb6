//! Local (kernel-weighted) and global relative dominance of states.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::model::{DominanceField, OccupancyPanel};

/// Kernel-weighted state composition around each site at one time:
/// `g[i][s] = sum_j K[i][j] 1(z_j = s) / sum_j K[i][j]`, returned row-major
/// as an `I x S` array.
pub fn local_dominance(z_t: &[usize], kernel: &KernelMatrix, states: usize) -> Result<Vec<f64>> {
    let sites = z_t.len();
    if kernel.sites() != sites {
        return Err(Error::ShapeMismatch(format!("{} states for a {}-site kernel", sites, kernel.sites())));
    }
    if let Some(&state) = z_t.iter().find(|&&s| s >= states) {
        return Err(Error::StateOutOfRange { state, states });
    }
    let mut g = vec![0.0; sites * states];
    for i in 0..sites {
        let row = &mut g[i * states..(i + 1) * states];
        for (&k, &s) in kernel.row(i).iter().zip(z_t) {
            row[s] += k;
        }
        let d = kernel.row_sum(i);
        row.iter_mut().for_each(|v| *v /= d);
    }
    Ok(g)
}

/// Quadrat-wide state frequencies at one time.
pub fn global_dominance(z_t: &[usize], states: usize) -> Result<Vec<f64>> {
    if z_t.is_empty() {
        return Err(Error::ShapeMismatch("no sites".into()));
    }
    let mut f = vec![0.0; states];
    for &s in z_t {
        if s >= states {
            return Err(Error::StateOutOfRange { state: s, states });
        }
        f[s] += 1.0;
    }
    let n = z_t.len() as f64;
    f.iter_mut().for_each(|v| *v /= n);
    Ok(f)
}

/// Local dominance for every period of a panel.
pub fn dominance_field(panel: &OccupancyPanel, kernel: &KernelMatrix, states: usize) -> Result<DominanceField> {
    let mut values = Vec::with_capacity(panel.sites() * panel.horizon() * states);
    for t in 0..panel.horizon() {
        values.extend(local_dominance(panel.at_time(t), kernel, states)?);
    }
    Ok(DominanceField::from_raw(panel.sites(), panel.horizon(), states, values))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::kernel::kernel_matrix;
    use crate::model::{BandwidthMatrix, SiteFrame};
    use crate::simulate::make_grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_states(n: usize, s: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0..s)).collect()
    }

    // The general per-state form: the denominator sums kernel weights over
    // states and sites instead of using the row sum directly.
    fn general_form(z: &[usize], k: &KernelMatrix, s: usize) -> Vec<f64> {
        let n = z.len();
        let mut out = vec![0.0; n * s];
        for i in 0..n {
            let mut denom = 0.0;
            for r in 0..s {
                for j in 0..n {
                    if z[j] == r {
                        denom += k.get(i, j);
                    }
                }
            }
            for state in 0..s {
                let mut num = 0.0;
                for j in 0..n {
                    if z[j] == state {
                        num += k.get(i, j);
                    }
                }
                out[i * s + state] = num / denom;
            }
        }
        out
    }

    #[test]
    fn uniform_occupancy_is_degenerate() {
        let f = make_grid(4, 4).unwrap();
        let k = kernel_matrix(&f, &BandwidthMatrix::isotropic(1.0).unwrap()).unwrap();
        let g = local_dominance(&[1; 16], &k, 3).unwrap();
        for row in g.chunks(3) {
            assert_eq!(row, &[0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn two_site_hand_value() {
        let f = SiteFrame::new(vec![[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let k = kernel_matrix(&f, &BandwidthMatrix::isotropic(1.0).unwrap()).unwrap();
        let g = local_dominance(&[0, 1], &k, 2).unwrap();
        let e2 = (-2.0f64).exp();
        assert!((g[0] - 1.0 / (1.0 + e2)).abs() < 1e-15);
        assert!((g[0] - 0.880_797).abs() < 1e-6);
        assert!((g[1] - 0.119_203).abs() < 1e-6);
    }

    #[test]
    fn global_counts() {
        assert_eq!(global_dominance(&[0, 0, 1, 1], 2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(global_dominance(&[0, 0, 0], 4).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert!(global_dominance(&[], 2).is_err());
        let z = random_states(225, 5, 11);
        let f = global_dominance(&z, 5).unwrap();
        for s in 0..5 {
            let tally = z.iter().filter(|&&v| v == s).count();
            assert_eq!(f[s], tally as f64 / 225.0);
        }
    }

    #[test]
    fn huge_bandwidth_reduces_to_global() {
        let f = make_grid(15, 15).unwrap();
        let k = kernel_matrix(&f, &BandwidthMatrix::isotropic(1e6).unwrap()).unwrap();
        let z = random_states(225, 5, 3);
        let g = local_dominance(&z, &k, 5).unwrap();
        let glob = global_dominance(&z, 5).unwrap();
        let worst = g.chunks(5).flat_map(|row| row.iter().zip(&glob).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn common_kernel_simplification_is_exact() {
        let f = make_grid(6, 5).unwrap();
        let k = kernel_matrix(&f, &BandwidthMatrix::new(0.8, 1.7, 0.3).unwrap()).unwrap();
        let z = random_states(30, 4, 5);
        let g = local_dominance(&z, &k, 4).unwrap();
        let general = general_form(&z, &k, 4);
        for (a, b) in g.iter().zip(&general) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let k = KernelMatrix::uniform(3);
        assert!(local_dominance(&[0, 1], &k, 2).is_err());
        assert!(local_dominance(&[0, 1, 2], &k, 2).is_err());
    }

    proptest! {
        #[test]
        fn rows_are_probability_vectors(
            seed in 0u64..1000, s1 in 0.2..5.0f64, s2 in 0.2..5.0f64, r in -0.9..0.9f64
        ) {
            let f = make_grid(5, 7).unwrap();
            let k = kernel_matrix(&f, &BandwidthMatrix::new(s1, s2, r).unwrap()).unwrap();
            let z = random_states(35, 4, seed);
            let g = local_dominance(&z, &k, 4).unwrap();
            for row in g.chunks(4) {
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
