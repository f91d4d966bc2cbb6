//! Gaussian kernel weights between sites.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::model::{BandwidthMatrix, Position, SiteFrame};

#[inline]
fn quad_form(precision: &[[f64; 2]; 2], dx: f64, dy: f64) -> f64 {
    precision[0][0] * dx * dx + 2.0 * precision[0][1] * dx * dy + precision[1][1] * dy * dy
}

/// `exp(-(a - b)' inv(Sigma) (a - b) / 2)`.
pub fn kernel_weight(a: Position, b: Position, bandwidth: &BandwidthMatrix) -> Result<f64> {
    let precision = bandwidth.precision()?;
    Ok(libm::exp(-0.5 * quad_form(&precision, a[0] - b[0], a[1] - b[1])))
}

/// Dense symmetric `I x I` kernel matrix with cached row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    sites: usize,
    values: Vec<f64>,
    row_sums: Vec<f64>,
}

impl KernelMatrix {
    fn from_values(sites: usize, values: Vec<f64>) -> Self {
        let row_sums = values.chunks(sites).map(|r| r.iter().sum()).collect();
        Self { sites, values, row_sums }
    }

    /// The all-ones matrix: every site weighs every other site equally,
    /// which turns local dominance into the quadrat-wide frequency.
    pub fn uniform(sites: usize) -> Self {
        Self::from_values(sites, vec![1.0; sites * sites])
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.sites + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.sites..(i + 1) * self.sites]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row_sums[i]
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }
}

/// Pairwise displacements of a site frame, deduplicated up to sign.
///
/// On a regular grid an `I x I` kernel has only `O(I)` distinct
/// displacements, so rebuilding the kernel for a new bandwidth costs one
/// exponential per distinct displacement.
#[derive(Debug, Clone)]
pub struct KernelGeometry {
    sites: usize,
    displacements: Vec<[f64; 2]>,
    index: Vec<u32>,
}

impl KernelGeometry {
    pub fn new(frame: &SiteFrame) -> Self {
        let sites = frame.len();
        let coords = frame.coords();
        let mut lookup: BTreeMap<(u64, u64), u32> = BTreeMap::new();
        let mut displacements = Vec::new();
        let mut index = vec![0u32; sites * sites];
        for i in 0..sites {
            for j in 0..sites {
                let mut dx = coords[i][0] - coords[j][0];
                let mut dy = coords[i][1] - coords[j][1];
                // d and -d give bit-identical weights
                if dx < 0.0 || (dx == 0.0 && dy < 0.0) {
                    dx = -dx;
                    dy = -dy;
                }
                let key = ((dx + 0.0).to_bits(), (dy + 0.0).to_bits());
                let slot = *lookup.entry(key).or_insert_with(|| {
                    displacements.push([dx, dy]);
                    (displacements.len() - 1) as u32
                });
                index[i * sites + j] = slot;
            }
        }
        Self { sites, displacements, index }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn distinct_displacements(&self) -> usize {
        self.displacements.len()
    }

    /// Kernel weights for every distinct displacement.
    pub fn weights(&self, bandwidth: &BandwidthMatrix) -> Result<Vec<f64>> {
        let precision = bandwidth.precision()?;
        Ok(self.displacements.iter().map(|d| libm::exp(-0.5 * quad_form(&precision, d[0], d[1]))).collect())
    }

    /// Weight of pair `(i, j)` given the output of [`KernelGeometry::weights`].
    #[inline]
    pub fn pair(&self, weights: &[f64], i: usize, j: usize) -> f64 {
        weights[self.index[i * self.sites + j] as usize]
    }

    pub fn kernel(&self, bandwidth: &BandwidthMatrix) -> Result<KernelMatrix> {
        let w = self.weights(bandwidth)?;
        let values = self.index.iter().map(|&k| w[k as usize]).collect();
        Ok(KernelMatrix::from_values(self.sites, values))
    }
}

/// Kernel matrix for all site pairs.
pub fn kernel_matrix(frame: &SiteFrame, bandwidth: &BandwidthMatrix) -> Result<KernelMatrix> {
    KernelGeometry::new(frame).kernel(bandwidth)
}
