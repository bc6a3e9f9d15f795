use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// `K x D` codeword table with exponential-moving-average statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    k: usize,
    d: usize,
    pub vectors: Vec<f32>,
    pub ema_counts: Vec<f32>,
    pub ema_sums: Vec<f32>,
}

/// Nearest codeword by squared Euclidean distance; ties go to the lowest index.
pub fn quantize<'a>(latent: &[f32], cb: &'a Codebook) -> (usize, &'a [f32]) {
    let i = cb.nearest(latent);
    (i, cb.codeword(i))
}

impl Codebook {
    pub fn new(k: usize, d: usize, vectors: Vec<f32>) -> Result<Self> {
        if k < 2 || d == 0 || vectors.len() != k * d {
            return Err(Error::dim(format!(
                "codebook {k}x{d} with {} values",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite codeword".into()));
        }
        Ok(Codebook {
            k,
            d,
            ema_counts: vec![1.0; k],
            ema_sums: vectors.clone(),
            vectors,
        })
    }

    pub fn random(k: usize, d: usize, rng: &mut Rng) -> Self {
        let v = (0..k * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Codebook::new(k, d, v).expect("valid shape")
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn codeword(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    pub fn distance2(&self, latent: &[f32], i: usize) -> f64 {
        latent
            .iter()
            .zip(self.codeword(i))
            .map(|(a, b)| {
                let t = f64::from(*a) - f64::from(*b);
                t * t
            })
            .sum()
    }

    pub fn nearest(&self, latent: &[f32]) -> usize {
        debug_assert_eq!(latent.len(), self.d);
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.k {
            let dist = self.distance2(latent, i);
            if dist < best.0 {
                best = (dist, i);
            }
        }
        best.1
    }

    /// EMA update from one batch of `(index, latent)` assignments:
    /// `count <- decay * count + (1 - decay) * n`, likewise for the sums,
    /// then each codeword becomes its Laplace-smoothed mean.
    pub fn ema_update(&mut self, assignments: &[(usize, &[f32])], decay: f32) {
        let mut counts = vec![0f32; self.k];
        let mut sums = vec![0f32; self.k * self.d];
        for (i, z) in assignments {
            counts[*i] += 1.0;
            for (s, v) in sums[i * self.d..(i + 1) * self.d].iter_mut().zip(z.iter()) {
                *s += *v;
            }
        }
        for i in 0..self.k {
            self.ema_counts[i] = decay * self.ema_counts[i] + (1.0 - decay) * counts[i];
        }
        for (e, s) in self.ema_sums.iter_mut().zip(&sums) {
            *e = decay * *e + (1.0 - decay) * *s;
        }
        let eps = 1e-5f32;
        let total: f32 = self.ema_counts.iter().sum();
        for i in 0..self.k {
            let smoothed = (self.ema_counts[i] + eps) / (total + self.k as f32 * eps) * total;
            for j in 0..self.d {
                self.vectors[i * self.d + j] = self.ema_sums[i * self.d + j] / smoothed;
            }
        }
    }

    /// Re-seats codeword `i` on `latent` with unit count.
    pub fn reset_code(&mut self, i: usize, latent: &[f32]) {
        self.vectors[i * self.d..(i + 1) * self.d].copy_from_slice(latent);
        self.ema_sums[i * self.d..(i + 1) * self.d].copy_from_slice(latent);
        self.ema_counts[i] = 1.0;
    }
}
