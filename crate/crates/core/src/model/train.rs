//! Next-token training over packed windows, checkpoints and loss curves.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::Model;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::pack::PackedWindow;
use crate::rng;
use crate::tensor::{adamw_step, lr_at, AdamState, OptimizerConfig, Tape, Tensor};

/// Length of the probe sequence whose logits are stored in checkpoints.
pub const PROBE_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

impl LossPoint {
    pub fn csv_header() -> &'static str {
        "step,loss,lr"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.step, self.loss, self.lr)
    }
}

pub fn read_loss_csv(text: &str, source_name: &str) -> Result<Vec<LossPoint>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        if i == 0 {
            if line != LossPoint::csv_header() {
                return Err(err(format!("expected header {:?}", LossPoint::csv_header())));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(err("expected step,loss,lr".into()));
        }
        let bad = |what: &str| err(format!("bad {what} {line:?}"));
        out.push(LossPoint {
            step: f[0].parse().map_err(|_| bad("step"))?,
            loss: f[1].parse().map_err(|_| bad("loss"))?,
            lr: f[2].parse().map_err(|_| bad("lr"))?,
        });
    }
    Ok(out)
}

/// Owns the model and optimizer state. Windows are visited in a seeded
/// shuffle without repeats; a fresh shuffle starts if steps outrun the data.
pub struct Trainer {
    model: Model,
    opt: OptimizerConfig,
    adam: AdamState<f32>,
    step: u64,
    seed: u64,
    batch: usize,
    epoch_order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(model: Model, opt: OptimizerConfig, seed: u64, batch: usize) -> Result<Self> {
        opt.validate()?;
        if batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Trainer {
            adam: AdamState::new(model.params()),
            model,
            opt,
            step: 0,
            seed,
            batch,
            epoch_order: None,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Window index used as the `slot`-th sample overall.
    fn sample_index(&mut self, slot: u64, n: usize) -> usize {
        let epoch = slot / n as u64;
        if self.epoch_order.as_ref().map(|e| e.0) != Some(epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::indexed(self.seed, "data-order", epoch));
            self.epoch_order = Some((epoch, order));
        }
        self.epoch_order.as_ref().unwrap().1[(slot % n as u64) as usize]
    }

    /// Indices of the windows the next step will consume.
    pub fn next_batch(&mut self, n_windows: usize) -> Result<Vec<usize>> {
        if n_windows == 0 {
            return Err(Error::InsufficientData("no training windows".into()));
        }
        let first = self.step * self.batch as u64;
        Ok((0..self.batch as u64)
            .map(|b| self.sample_index(first + b, n_windows))
            .collect())
    }

    /// Mean next-token loss of one window (targets shifted by one).
    pub fn window_loss(model: &Model, window: &[u32]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = model.param_vars(&mut tape, false);
        let logits = model.forward_tape(&mut tape, &vars, &window[..window.len() - 1])?;
        let targets: Vec<usize> = window[1..].iter().map(|&t| t as usize).collect();
        let loss = tape.cross_entropy(logits, &targets)?;
        Ok(f64::from(tape.value(loss).data()[0]))
    }

    /// One AdamW update on the mean loss of `windows`. On a non-finite loss
    /// or gradient the model is left untouched.
    pub fn train_step(&mut self, windows: &[&[u32]]) -> Result<LossPoint> {
        if windows.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let scale = 1.0 / windows.len() as f32;
        let mut grads: Vec<Tensor<f32>> = self
            .model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        let mut loss_sum = 0.0f64;
        for w in windows {
            if w.len() < 2 {
                return Err(Error::Length(format!("window of {} tokens", w.len())));
            }
            let mut tape = Tape::new();
            let vars = self.model.param_vars(&mut tape, true);
            let logits = self.model.forward_tape(&mut tape, &vars, &w[..w.len() - 1])?;
            let targets: Vec<usize> = w[1..].iter().map(|&t| t as usize).collect();
            let loss = tape.cross_entropy(logits, &targets)?;
            let value = f64::from(tape.value(loss).data()[0]);
            if !value.is_finite() {
                return Err(Error::Training(format!("non-finite loss at step {}", self.step + 1)));
            }
            loss_sum += value;
            let mut g = tape.backward(loss)?;
            for (acc, v) in grads.iter_mut().zip(&vars) {
                if let Some(t) = g.take(*v) {
                    for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                        *a += *b * scale;
                    }
                }
            }
        }
        let step = self.step + 1;
        adamw_step(self.model.params_mut(), &grads, &mut self.adam, &self.opt, step)?;
        self.step = step;
        Ok(LossPoint {
            step,
            loss: loss_sum / windows.len() as f64,
            lr: lr_at(step, &self.opt),
        })
    }

    /// Runs `steps` updates over `windows`, reporting each point to `on_step`.
    pub fn run(
        &mut self,
        windows: &[PackedWindow],
        steps: u64,
        mut on_step: impl FnMut(&LossPoint),
    ) -> Result<Vec<LossPoint>> {
        let mut curve = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let idx = self.next_batch(windows.len())?;
            let batch: Vec<&[u32]> = idx.iter().map(|&i| windows[i].ids()).collect();
            let p = self.train_step(&batch)?;
            on_step(&p);
            curve.push(p);
        }
        Ok(curve)
    }

    fn probe_ids(&self) -> Vec<u32> {
        let c = self.model.config();
        let mut r = rng::substream(self.seed, "probe");
        let n = PROBE_LEN.min(c.context);
        (0..n).map(|_| r.gen_range(0..c.vocab_size as u32)).collect()
    }

    /// Weights, optimizer moments, counters and a probe forward for later verification.
    pub fn to_container(&self) -> Result<Container> {
        let mut c = self.model.to_container();
        c.config.push(("step".into(), self.step.to_string()));
        c.config.push(("seed".into(), self.seed.to_string()));
        c.config.push(("batch".into(), self.batch.to_string()));
        c.config.extend(self.opt.to_pairs("opt."));
        for (i, p) in self.model.params().iter().enumerate() {
            c.tensors.push((format!("adam.m.{}", p.name), self.adam.m[i].clone()));
            c.tensors.push((format!("adam.v.{}", p.name), self.adam.v[i].clone()));
        }
        let probe = self.probe_ids();
        let logits = self.model.logits(&probe)?;
        let ids = Tensor::new(&[probe.len()], probe.iter().map(|&i| i as f32).collect())?;
        c.tensors.push(("probe.tokens".into(), ids));
        c.tensors.push(("probe.logits".into(), logits));
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let model = Model::from_container(c)?;
        let opt = OptimizerConfig::from_lookup("opt.", |k| c.require(k).map(str::to_string))
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let mut t = Trainer::new(model, opt, c.parse_key("seed")?, c.parse_key("batch")?)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        t.step = c.parse_key("step")?;
        for i in 0..t.model.params().len() {
            let name = t.model.params().iter().nth(i).unwrap().name.clone();
            for (slot, prefix) in [(&mut t.adam.m[i], "adam.m."), (&mut t.adam.v[i], "adam.v.")] {
                let src = c.tensor(&format!("{prefix}{name}"))?;
                if src.shape() != slot.shape() {
                    return Err(Error::CorruptCheckpoint(format!("optimizer state shape for {name}")));
                }
                *slot = src.clone();
            }
        }
        Ok(t)
    }

    /// Largest absolute difference between stored probe logits and a fresh forward.
    pub fn probe_deviation(c: &Container) -> Result<f64> {
        let model = Model::from_container(c)?;
        let ids: Vec<u32> = c.tensor("probe.tokens")?.data().iter().map(|v| *v as u32).collect();
        let stored = c.tensor("probe.logits")?;
        let fresh = model.logits(&ids)?;
        if fresh.shape() != stored.shape() {
            return Err(Error::CorruptCheckpoint("probe logits shape".into()));
        }
        Ok(fresh
            .data()
            .iter()
            .zip(stored.data())
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
            .fold(0.0, f64::max))
    }
}
