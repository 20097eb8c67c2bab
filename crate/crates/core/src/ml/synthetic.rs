//! Gaussian-cluster data: class `c` is drawn from `N(s·u_c, I)` where `u_c`
//! is a fixed random unit direction and `s` the separation.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MlError;
use crate::encoder::DataMatrix;
use crate::linalg::Matrix;

pub const DEFAULT_SEPARATION: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub parties: usize,
    pub samples_per_party: usize,
    pub features: usize,
    pub classes: usize,
    pub seed: u64,
    pub separation: f64,
}

impl SyntheticSpec {
    pub fn new(
        parties: usize,
        samples_per_party: usize,
        features: usize,
        classes: usize,
        seed: u64,
    ) -> Self {
        Self {
            parties,
            samples_per_party,
            features,
            classes,
            seed,
            separation: DEFAULT_SEPARATION,
        }
    }
}

/// One `(data, labels)` pair per party. Row `i` of each party has label
/// `i mod classes`, so class counts differ by at most one.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<(DataMatrix, Vec<i32>)>, MlError> {
    if spec.parties == 0 || spec.samples_per_party == 0 || spec.features == 0 || spec.classes == 0 {
        return Err(MlError::InvalidArgument(
            "synthetic counts must be positive".into(),
        ));
    }
    if !spec.separation.is_finite() {
        return Err(MlError::InvalidArgument("separation must be finite".into()));
    }
    let f = spec.features;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let mut u: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut u {
                *v *= spec.separation / norm;
            }
            u
        })
        .collect();

    (0..spec.parties)
        .map(|p| {
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            rng.set_stream(p as u64 + 1);
            let n = spec.samples_per_party;
            let labels: Vec<i32> = (0..n).map(|i| (i % spec.classes) as i32).collect();
            let mut data = Vec::with_capacity(n * f);
            for &l in &labels {
                for mu in &means[l as usize] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(mu + z);
                }
            }
            let m =
                DataMatrix::new(Matrix::from_vec(n, f, data)).expect("gaussian draws are finite");
            Ok((m, labels))
        })
        .collect()
}
