//! Seeded sampling from the unitarily invariant measures.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::state::PureState;
use super::{ComplexMatrix, ComplexVector};
use crate::error::{Error, Result};

/// Root of a deterministic sample stream. Equal seeds give bit-identical samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomSeed(pub u64);

impl RandomSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for task `stream`; used to split work across
    /// restarts and chunks without sharing generator state.
    pub fn derive(self, stream: u64) -> RandomSeed {
        // splitmix64 finalizer over the pair
        let mut z = self
            .0
            .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stream.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        RandomSeed(z ^ (z >> 31))
    }
}

impl From<u64> for RandomSeed {
    fn from(seed: u64) -> Self {
        RandomSeed(seed)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im)
}

/// Matrix of i.i.d. standard complex Gaussian entries.
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    // row-major fill so the stream layout does not depend on storage order
    let mut m = ComplexMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = gaussian(rng);
        }
    }
    m
}

/// Uniformly distributed unit vector (normalized complex Gaussian).
pub fn haar_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> PureState {
    assert!(dim >= 1, "dimension must be positive");
    loop {
        let v = ComplexVector::from_iterator(dim, (0..dim).map(|_| gaussian(rng)));
        let norm = v.norm();
        if norm > 1e-300 {
            return PureState::from_normalized_unchecked(v / Complex64::new(norm, 0.0));
        }
    }
}

/// Haar-distributed unitary: QR of a Ginibre matrix with the phases of
/// `diag(R)` moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    assert!(dim >= 1, "dimension must be positive");
    let g = ginibre(dim, dim, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaarKind {
    State,
    Unitary,
}

#[derive(Debug, Clone)]
pub enum HaarSample {
    State(PureState),
    Unitary(ComplexMatrix),
}

pub fn haar_sample(
    dim: usize,
    kind: HaarKind,
    seed: RandomSeed,
    count: usize,
) -> Result<Vec<HaarSample>> {
    if dim == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let mut rng = seed.rng();
    Ok((0..count)
        .map(|_| match kind {
            HaarKind::State => HaarSample::State(haar_state(dim, &mut rng)),
            HaarKind::Unitary => HaarSample::Unitary(haar_unitary(dim, &mut rng)),
        })
        .collect())
}

/// Random probability vector drawn uniformly from the simplex.
pub fn simplex_point<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..len)
        .map(|_| {
            let u: f64 = rng.random::<f64>();
            -(1.0 - u).ln()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}
