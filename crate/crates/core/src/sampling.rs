//! Reproducible random components: directions on the positive unit sphere and
//! index subsets.
//!
//! Every base test `i` gets its own ChaCha8 stream. The key is the SHA-256 of
//! the master seed and a label, and the stream id is `i`, so the draws for `i`
//! do not depend on which thread evaluates it or in what order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Random stream handle for one base test.
pub type Stream = ChaCha8Rng;

const MAX_REDRAWS: usize = 100;

/// Master seed plus a label separating independent uses within one run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_label: String,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_label: impl Into<String>) -> Self {
        SeedSpec {
            master_seed,
            stream_label: stream_label.into(),
        }
    }

    /// A seed for an unrelated purpose derived from this one.
    pub fn child(&self, label: &str) -> SeedSpec {
        SeedSpec::new(self.master_seed, format!("{}/{label}", self.stream_label))
    }

    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master_seed.to_le_bytes());
        h.update((self.stream_label.len() as u64).to_le_bytes());
        h.update(self.stream_label.as_bytes());
        h.finalize().into()
    }
}

/// Deterministic stream for base test `i`.
pub fn stream_for(seed: &SeedSpec, i: u64) -> Stream {
    let mut rng = ChaCha8Rng::from_seed(seed.key());
    rng.set_stream(i);
    rng
}

/// Law of the direction `w = |xi| / ||xi||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightLaw {
    /// `xi ~ N(0, I)`: uniform on the positive orthant of the sphere.
    UniformPositiveSphere,
    /// `xi_j ~ N(0, a_j^2)`, so that `E w_j / E w_k = a_j / a_k`.
    AuxiliaryWeightedSphere { aux: Vec<f64> },
}

impl WeightLaw {
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            WeightLaw::UniformPositiveSphere => Ok(()),
            WeightLaw::AuxiliaryWeightedSphere { aux } => {
                if aux.len() != p {
                    return Err(Error::config(format!(
                        "auxiliary weights have length {}, expected {p}",
                        aux.len()
                    )));
                }
                if let Some(bad) = aux.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
                    return Err(Error::config(format!("auxiliary weight {bad} is not positive")));
                }
                Ok(())
            }
        }
    }
}

/// Draws `w` on the positive unit sphere for base test `i`.
pub fn sample_positive_direction(
    p: usize,
    law: &WeightLaw,
    seed: &SeedSpec,
    i: u64,
) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::domain("sample_positive_direction: p must be positive"));
    }
    law.validate(p)?;
    let mut w = vec![0.0; p];
    fill_positive_direction(&mut stream_for(seed, i), law, &mut w)?;
    Ok(w)
}

/// Fills `w` from `rng`; the law must already be validated for `w.len()`.
pub(crate) fn fill_positive_direction(rng: &mut Stream, law: &WeightLaw, w: &mut [f64]) -> Result<()> {
    for _ in 0..MAX_REDRAWS {
        let mut norm2 = 0.0;
        for (j, wj) in w.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let scale = match law {
                WeightLaw::UniformPositiveSphere => 1.0,
                WeightLaw::AuxiliaryWeightedSphere { aux } => aux[j],
            };
            *wj = (z * scale).abs();
            norm2 += *wj * *wj;
        }
        if norm2 > 0.0 && norm2.is_finite() {
            let inv = norm2.sqrt().recip();
            w.iter_mut().for_each(|x| *x *= inv);
            return Ok(());
        }
    }
    Err(Error::numerical(
        "sample_positive_direction",
        format!("{MAX_REDRAWS} consecutive degenerate Gaussian draws"),
    ))
}

/// Draws `s` distinct indices from `0..p` for base test `i`, sorted ascending.
pub fn sample_subset(p: usize, s: usize, seed: &SeedSpec, i: u64) -> Result<Vec<usize>> {
    if s == 0 || s > p {
        return Err(Error::domain(format!("sample_subset: need 1 <= s <= p, got s={s}, p={p}")));
    }
    Ok(draw_subset(&mut stream_for(seed, i), p, s))
}

/// Partial Fisher-Yates shuffle.
pub(crate) fn draw_subset(rng: &mut Stream, p: usize, s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p).collect();
    for k in 0..s {
        let j = rng.random_range(k..p);
        idx.swap(k, j);
    }
    idx.truncate(s);
    idx.sort_unstable();
    idx
}
