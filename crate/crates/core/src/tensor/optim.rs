use super::{Float, Tensor};
use crate::error::{Error, Result};

/// AdamW hyperparameters and the warmup + cosine learning-rate schedule.
///
/// Defaults are the large-scale values (base 1.5e-4, final 1.5e-5, 2000
/// warmup steps, 144000 decay steps, weight decay 0.1, betas 0.9/0.95).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub final_lr: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1.5e-4,
            final_lr: 1.5e-5,
            warmup_steps: 2000,
            decay_steps: 144_000,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.final_lr >= 0.0
            && self.final_lr <= self.base_lr
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config {self:?}")))
        }
    }

    /// `key=value` echo; keys carry the given prefix.
    pub fn to_pairs(&self, prefix: &str) -> Vec<(String, String)> {
        [
            ("base_lr", self.base_lr.to_string()),
            ("final_lr", self.final_lr.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("decay_steps", self.decay_steps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
    }

    /// Inverse of [`Self::to_pairs`]; `get` reports missing keys.
    pub fn from_lookup(prefix: &str, get: impl Fn(&str) -> Result<String>) -> Result<Self> {
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        let f = |k: &str| -> Result<(String, String)> {
            let key = format!("{prefix}{k}");
            let v = get(&key)?;
            Ok((key, v))
        };
        let (k, v) = f("base_lr")?;
        let base_lr = num(&k, v)?;
        let (k, v) = f("final_lr")?;
        let final_lr = num(&k, v)?;
        let (k, v) = f("warmup_steps")?;
        let warmup_steps = num(&k, v)?;
        let (k, v) = f("decay_steps")?;
        let decay_steps = num(&k, v)?;
        let (k, v) = f("weight_decay")?;
        let weight_decay = num(&k, v)?;
        let (k, v) = f("beta1")?;
        let beta1 = num(&k, v)?;
        let (k, v) = f("beta2")?;
        let beta2 = num(&k, v)?;
        let (k, v) = f("eps")?;
        let eps = num(&k, v)?;
        let cfg = OptimizerConfig {
            base_lr,
            final_lr,
            warmup_steps,
            decay_steps,
            weight_decay,
            beta1,
            beta2,
            eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learning rate at `step`: linear ramp from 0 to `base_lr` over the warmup,
/// cosine from `base_lr` to `final_lr` over `decay_steps`, then flat.
pub fn lr_at(step: u64, cfg: &OptimizerConfig) -> f64 {
    if step <= cfg.warmup_steps {
        if cfg.warmup_steps == 0 {
            return cfg.base_lr;
        }
        return cfg.base_lr * step as f64 / cfg.warmup_steps as f64;
    }
    let t = step - cfg.warmup_steps;
    if t >= cfg.decay_steps {
        return cfg.final_lr;
    }
    let frac = t as f64 / cfg.decay_steps as f64;
    cfg.final_lr + 0.5 * (cfg.base_lr - cfg.final_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Float = f32> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether decoupled weight decay applies (matrices yes, gains and biases no).
    pub decay: bool,
}

/// Named, ordered parameter set.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Float = f32> {
    params: Vec<Param<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            decay,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.params[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.params[i].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Float = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }
}

/// One AdamW update at 1-based `step` with learning rate `lr_at(step)`.
///
/// Weight decay multiplies the parameter by `1 - lr * wd` before the
/// bias-corrected Adam step is subtracted.
pub fn adamw_step<T: Float>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &OptimizerConfig,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::Training("adamw step counter starts at 1".into()));
    }
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim(format!(
            "{} params, {} grads, {} moment pairs",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::dim(format!(
                "gradient {:?} for parameter {} {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {}",
                p.name
            )));
        }
    }
    let lr = lr_at(step, cfg);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::of(1.0 - cfg.beta1.powi(step as i32));
    let bc2 = T::of(1.0 - cfg.beta2.powi(step as i32));
    let lr_t = T::of(lr);
    let eps = T::of(cfg.eps);
    let shrink = T::of(1.0 - lr * cfg.weight_decay);
    for (i, p) in params.params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].data();
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            if p.decay {
                *w *= shrink;
            }
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_anchor_points() {
        let cfg = OptimizerConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert_eq!(lr_at(2000, &cfg), 1.5e-4);
        assert!((lr_at(1000, &cfg) - 7.5e-5).abs() < 1e-18);
        assert_eq!(lr_at(2000 + 144_000, &cfg), 1.5e-5);
        assert_eq!(lr_at(10_000_000, &cfg), 1.5e-5);
    }

    #[test]
    fn defaults_echo_large_scale_values() {
        let cfg = OptimizerConfig::default();
        assert_eq!((cfg.beta1, cfg.beta2, cfg.weight_decay), (0.9, 0.95, 0.1));
        assert_eq!((cfg.base_lr, cfg.final_lr), (1.5e-4, 1.5e-5));
        assert_eq!((cfg.warmup_steps, cfg.decay_steps), (2000, 144_000));
    }

    #[test]
    fn schedule_monotone_after_warmup_and_continuous() {
        let cfg = OptimizerConfig::default();
        let w = cfg.warmup_steps;
        assert!((lr_at(w, &cfg) - lr_at(w + 1, &cfg)).abs() < 1e-10);
        let mut prev = lr_at(w, &cfg);
        for s in (w..w + cfg.decay_steps + 10).step_by(97) {
            let lr = lr_at(s, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_gradient_applies_pure_decay() {
        let cfg = OptimizerConfig {
            warmup_steps: 0,
            ..Default::default()
        };
        let mut ps = ParamStore::<f64>::new();
        ps.push("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let mut st = AdamState::new(&ps);
        adamw_step(&mut ps, &[Tensor::zeros(&[3])], &mut st, &cfg, 1).unwrap();
        let f = 1.0 - lr_at(1, &cfg) * cfg.weight_decay;
        assert_eq!(ps.get(0).data(), &[1.0 * f, -2.0 * f, 0.5 * f]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = ParamStore::<f32>::new();
        ps.push("layer.0.wq", Tensor::zeros(&[2]), true);
        let mut st = AdamState::new(&ps);
        let g = Tensor::new(&[2], vec![f32::NAN, 0.0]).unwrap();
        let err = adamw_step(&mut ps, &[g], &mut st, &OptimizerConfig::default(), 1).unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains("layer.0.wq")));
    }

    #[test]
    fn identical_inputs_are_bit_deterministic() {
        let mk = || {
            let mut ps = ParamStore::<f32>::new();
            ps.push("a", Tensor::from_fn(&[5], |i| i as f32 * 0.3 - 0.7), true);
            ps
        };
        let g = Tensor::from_fn(&[5], |i| (i as f32).sin());
        let cfg = OptimizerConfig::default();
        let (mut p1, mut p2) = (mk(), mk());
        let (mut s1, mut s2) = (AdamState::new(&p1), AdamState::new(&p2));
        for step in 1..=20 {
            adamw_step(&mut p1, &[g.clone()], &mut s1, &cfg, step).unwrap();
            adamw_step(&mut p2, &[g.clone()], &mut s2, &cfg, step).unwrap();
        }
        let bits = |p: &ParamStore<f32>| p.get(0).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p1), bits(&p2));
    }
}
