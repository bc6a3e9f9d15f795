//! Multi-model drivers: scaling over model sizes and ablation over data mixes.

use super::{analogy_layout, prompt_tokens, EvalRecord, Example};
use crate::error::{Error, Result};
use crate::forge::{gen_scene, AnnotatedPair, AnnotationKind};
use crate::model::{LossPoint, Model, ModelConfig, Trainer};
use crate::pack::PackedWindow;
use crate::rng;
use crate::tensor::OptimizerConfig;
use crate::vq::Tokenizer;

/// Annotation tasks used for desk few-shot evaluation.
pub const DESK_TASKS: [AnnotationKind; 4] = [
    AnnotationKind::SegmentationMask,
    AnnotationKind::EdgeMap,
    AnnotationKind::KeypointRendering,
    AnnotationKind::GrayscaleInput,
];

/// One tokenized few-shot query: examples + query as prefix, the answer as target.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotProblem {
    pub task: String,
    pub prefix: Vec<u32>,
    pub target: Vec<u32>,
}

/// Held-out few-shot problems, tokenized once and reused across models.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FewShotSuite {
    pub problems: Vec<FewShotProblem>,
    pub shots: usize,
}

impl FewShotSuite {
    pub fn generate(
        tok: &Tokenizer,
        kinds: &[AnnotationKind],
        per_task: usize,
        shots: usize,
        seed: u64,
    ) -> Result<Self> {
        let size = tok.config().image_size;
        let mut problems = Vec::with_capacity(kinds.len() * per_task);
        for &kind in kinds {
            let stream = format!("fewshot-{}", kind.name());
            for q in 0..per_task {
                let pairs: Vec<AnnotatedPair> = (0..=shots)
                    .map(|j| {
                        let s = rng::derive(seed, &stream, (q * (shots + 1) + j) as u64);
                        let (img, scene) = gen_scene(s, size);
                        AnnotatedPair::from_scene(&scene, &img, kind, rng::derive(s, "annotation", 0))
                    })
                    .collect();
                let (query, examples) = pairs.split_last().unwrap();
                let examples: Vec<Example> = examples.iter().cloned().map(Example::from).collect();
                let ctx = analogy_layout(&examples, &query.input)?;
                problems.push(FewShotProblem {
                    task: kind.name().to_string(),
                    prefix: prompt_tokens(&ctx, tok)?,
                    target: tok.encode(&query.target)?.ids().to_vec(),
                });
            }
        }
        Ok(FewShotSuite { problems, shots })
    }

    /// Mean perplexity per task, in first-seen task order.
    pub fn evaluate(&self, model: &Model) -> Result<Vec<(String, f64)>> {
        let mut out: Vec<(String, f64, usize)> = Vec::new();
        for p in &self.problems {
            let ppl = model.sequence_nll(&p.prefix, &p.target)?.perplexity;
            match out.iter_mut().find(|o| o.0 == p.task) {
                Some(o) => {
                    o.1 += ppl;
                    o.2 += 1;
                }
                None => out.push((p.task.clone(), ppl, 1)),
            }
        }
        Ok(out.into_iter().map(|(t, s, n)| (t, s / n as f64)).collect())
    }
}

/// Mean loss over the last `window` points of a curve.
pub fn smoothed_final(curve: &[LossPoint], window: usize) -> f64 {
    let n = window.clamp(1, curve.len().max(1));
    let tail = &curve[curve.len().saturating_sub(n)..];
    tail.iter().map(|p| p.loss).sum::<f64>() / tail.len().max(1) as f64
}

pub struct ScalingReport {
    pub curves: Vec<(String, Vec<LossPoint>)>,
    pub records: Vec<EvalRecord>,
    pub models: Vec<Model>,
}

impl ScalingReport {
    /// `model,step,loss,lr` rows for every curve.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("model,step,loss,lr\n");
        for (name, c) in &self.curves {
            for p in c {
                out.push_str(&format!("{name},{}\n", p.csv_row()));
            }
        }
        out
    }
}

/// Trains every config on the same windows in the same order and reports
/// smoothed final losses plus few-shot perplexities.
#[allow(clippy::too_many_arguments)]
pub fn scaling_experiment(
    windows: &[PackedWindow],
    configs: &[(String, ModelConfig)],
    opt: &OptimizerConfig,
    steps: u64,
    batch: usize,
    seed: u64,
    suite: Option<&FewShotSuite>,
    mut progress: impl FnMut(&str, &LossPoint),
) -> Result<ScalingReport> {
    if configs.len() < 2 {
        return Err(Error::Config("a scaling experiment needs at least two model configs".into()));
    }
    let mut report = ScalingReport {
        curves: Vec::new(),
        records: Vec::new(),
        models: Vec::new(),
    };
    for (name, cfg) in configs {
        let model = Model::init(cfg.clone(), seed)?;
        let mut trainer = Trainer::new(model, opt.clone(), seed, batch)?;
        let curve = trainer.run(windows, steps, |p| progress(name, p))?;
        let window = (curve.len() / 10).max(1);
        report
            .records
            .push(EvalRecord::new("final_loss", name.clone(), window, smoothed_final(&curve, window), seed)?);
        let model = trainer.into_model();
        if let Some(suite) = suite {
            for (task, ppl) in suite.evaluate(&model)? {
                report.records.push(EvalRecord::new(task, name.clone(), suite.shots, ppl, seed)?);
            }
        }
        report.curves.push((name.clone(), curve));
        report.models.push(model);
    }
    Ok(report)
}

/// Truncates every subset to the size of the smallest one.
pub fn equalize_budgets(subsets: &[(String, Vec<PackedWindow>)]) -> Result<Vec<(String, &[PackedWindow])>> {
    let n = subsets.iter().map(|s| s.1.len()).min().unwrap_or(0);
    if n == 0 {
        return Err(Error::InsufficientData("every ablation subset needs at least one window".into()));
    }
    Ok(subsets.iter().map(|(name, w)| (name.clone(), &w[..n])).collect())
}

pub struct AblationReport {
    pub windows_per_subset: usize,
    pub steps: u64,
    pub records: Vec<EvalRecord>,
    pub models: Vec<(String, Model)>,
}

/// One model per data subset at an equal token budget (one pass over the
/// truncated subset), each scored on the few-shot suite.
pub fn ablation_experiment(
    subsets: &[(String, Vec<PackedWindow>)],
    config: &ModelConfig,
    opt: &OptimizerConfig,
    batch: usize,
    seed: u64,
    suite: &FewShotSuite,
    mut progress: impl FnMut(&str, &LossPoint),
) -> Result<AblationReport> {
    let equal = equalize_budgets(subsets)?;
    let n = equal[0].1.len();
    let steps = (n / batch.max(1)) as u64;
    if steps == 0 {
        return Err(Error::InsufficientData(format!("{n} windows cannot fill a batch of {batch}")));
    }
    let mut report = AblationReport {
        windows_per_subset: n,
        steps,
        records: Vec::new(),
        models: Vec::new(),
    };
    for (name, windows) in equal {
        let model = Model::init(config.clone(), seed)?;
        let mut trainer = Trainer::new(model, opt.clone(), seed, batch)?;
        trainer.run(windows, steps, |p| progress(&name, p))?;
        let model = trainer.into_model();
        let scores = suite.evaluate(&model)?;
        let mean = scores.iter().map(|s| s.1).sum::<f64>() / scores.len().max(1) as f64;
        for (task, ppl) in scores {
            report.records.push(EvalRecord::new(task, name.clone(), suite.shots, ppl, seed)?);
        }
        report.records.push(EvalRecord::new("mean", name.clone(), suite.shots, mean, seed)?);
        report.models.push((name, model));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(losses: &[f64]) -> Vec<LossPoint> {
        losses
            .iter()
            .enumerate()
            .map(|(i, &loss)| LossPoint {
                step: i as u64 + 1,
                loss,
                lr: 0.0,
            })
            .collect()
    }

    #[test]
    fn smoothing_tail() {
        assert_eq!(smoothed_final(&pts(&[9.0, 3.0, 1.0]), 2), 2.0);
        assert_eq!(smoothed_final(&pts(&[4.0]), 10), 4.0);
    }

    #[test]
    fn budgets_truncate_to_smallest() {
        let w = |n: usize| vec![PackedWindow::new(vec![0; 4]); n];
        let subsets = vec![("a".to_string(), w(5)), ("b".to_string(), w(3))];
        let eq = equalize_budgets(&subsets).unwrap();
        assert!(eq.iter().all(|s| s.1.len() == 3));
        assert!(equalize_budgets(&[("c".to_string(), w(0))]).is_err());
    }
}
