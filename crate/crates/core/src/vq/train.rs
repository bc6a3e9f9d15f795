use rand::Rng as _;

use super::Tokenizer;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::{adamw_step, AdamState, OptimizerConfig, Tape, Tensor};

/// Loss components of one tokenizer update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub reconstruction: f64,
    pub commitment: f64,
    /// `reconstruction + beta * commitment`.
    pub total: f64,
}

/// Codes whose EMA count falls below this are re-seated on live latents.
const DEAD_CODE_COUNT: f32 = 0.03;
const RESTART_EVERY: u64 = 20;

/// Plain VQ training: pixel MSE plus beta-weighted commitment, EMA codebook,
/// straight-through gradients from decoder to encoder.
pub struct TokenizerTrainer {
    pub tokenizer: Tokenizer,
    opt: OptimizerConfig,
    adam: AdamState<f32>,
    step: u64,
    codebook_seeded: bool,
    rng: Rng,
}

impl TokenizerTrainer {
    pub fn new(tokenizer: Tokenizer, opt: OptimizerConfig, seed: u64) -> Result<Self> {
        opt.validate()?;
        Ok(TokenizerTrainer {
            adam: AdamState::new(tokenizer.params()),
            tokenizer,
            opt,
            step: 0,
            codebook_seeded: false,
            rng: crate::rng::substream(seed, "tokenizer-train"),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn into_tokenizer(self) -> Tokenizer {
        self.tokenizer
    }

    fn seed_codebook(&mut self, latents: &[Vec<f32>]) {
        let k = self.tokenizer.codebook().size();
        let cb = self.tokenizer.codebook_mut();
        if latents.len() >= k {
            let picks = rand::seq::index::sample(&mut self.rng, latents.len(), k);
            for (i, j) in picks.into_iter().enumerate() {
                cb.reset_code(i, &latents[j]);
            }
        } else {
            // Every latent gets its own code; the rest are jittered copies.
            for (i, l) in latents.iter().enumerate() {
                cb.reset_code(i, l);
            }
            for i in latents.len()..k {
                let src = &latents[self.rng.gen_range(0..latents.len())];
                let jittered: Vec<f32> = src.iter().map(|v| v + self.rng.gen_range(-0.05..0.05)).collect();
                cb.reset_code(i, &jittered);
            }
        }
        self.codebook_seeded = true;
    }

    pub fn train_step(&mut self, batch: &[Image]) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(Error::Training("empty tokenizer batch".into()));
        }
        let tok = &self.tokenizer;
        let beta = tok.config().commitment_beta;
        let mut tape = Tape::new();
        let vars = tok.param_vars(&mut tape, true);
        let x = tape.constant(tok.stack(batch)?);
        let z = tok.encoder(&mut tape, &vars, x)?;
        let latents = Tokenizer::gather_latents(tape.value(z));
        if !self.codebook_seeded {
            self.seed_codebook(&latents);
        }
        let tok = &self.tokenizer;
        let ids: Vec<u32> = latents
            .iter()
            .map(|l| tok.codebook().nearest(l) as u32)
            .collect();
        let q = tok.codewords_tensor(&ids, batch.len())?;
        // Straight-through: forward uses the codewords, backward is the identity.
        let zv = tape.value(z);
        let shift = Tensor::from_fn(zv.shape(), |i| q.data()[i] - zv.data()[i]);
        let shift = tape.constant(shift);
        let zq = tape.add(z, shift)?;
        let recon = tok.decoder(&mut tape, &vars, zq)?;
        let rec_loss = tape.mse(recon, x)?;
        let qc = tape.constant(q);
        let commit = tape.mse(z, qc)?;
        let weighted = tape.scale(commit, beta);
        let loss = tape.add(rec_loss, weighted)?;
        let losses = StepLosses {
            reconstruction: f64::from(tape.value(rec_loss).data()[0]),
            commitment: f64::from(tape.value(commit).data()[0]),
            total: f64::from(tape.value(loss).data()[0]),
        };
        if !losses.total.is_finite() {
            return Err(Error::Training(format!(
                "non-finite tokenizer loss at step {}",
                self.step + 1
            )));
        }
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor<f32>> = vars
            .iter()
            .zip(self.tokenizer.params().iter())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        self.step += 1;
        adamw_step(self.tokenizer.params_mut(), &grads, &mut self.adam, &self.opt, self.step)?;

        let decay = self.tokenizer.config().ema_decay as f32;
        let assignments: Vec<(usize, &[f32])> = ids
            .iter()
            .zip(&latents)
            .map(|(i, l)| (*i as usize, l.as_slice()))
            .collect();
        self.tokenizer.codebook_mut().ema_update(&assignments, decay);
        if self.step % RESTART_EVERY == 0 {
            let cb = self.tokenizer.codebook_mut();
            for i in 0..cb.size() {
                if cb.ema_counts[i] < DEAD_CODE_COUNT {
                    let j = self.rng.gen_range(0..latents.len());
                    cb.reset_code(i, &latents[j]);
                }
            }
        }
        Ok(losses)
    }
}
