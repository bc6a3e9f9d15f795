mod support;

use lvm_core::forge::gen_scene;
use lvm_core::model::{Model, ModelConfig, Trainer};
use lvm_core::pack::PackedWindow;
use lvm_core::pipeline::tokenizer_opt;
use lvm_core::tensor::OptimizerConfig;
use lvm_core::vq::{Tokenizer, TokenizerConfig, TokenizerTrainer};
use rand::Rng;

fn random_window(len: usize, seed: u64) -> Vec<u32> {
    let mut r = support::rng(seed);
    (0..len).map(|_| r.gen_range(0..258)).collect()
}

#[test]
fn initial_loss_is_near_log_vocab() {
    for (i, name) in ["desk-micro", "desk-small", "desk-med"].iter().enumerate() {
        let model = Model::init(ModelConfig::preset(name).unwrap(), i as u64).unwrap();
        let loss = Trainer::window_loss(&model, &random_window(512, 10 + i as u64)).unwrap();
        let want = 258f64.ln();
        assert!((loss - want).abs() <= 0.05 * want, "{name}: {loss} vs {want}");
    }
}

fn memorize(window: &[u32], steps: u64) -> (Model, f64) {
    let model = Model::init(ModelConfig::preset("desk-micro").unwrap(), 3).unwrap();
    let opt = OptimizerConfig {
        base_lr: 1e-2,
        final_lr: 1e-3,
        warmup_steps: 20,
        decay_steps: steps,
        weight_decay: 0.0,
        ..OptimizerConfig::default()
    };
    let mut t = Trainer::new(model, opt, 3, 1).unwrap();
    let windows = vec![PackedWindow::new(window.to_vec())];
    let curve = t.run(&windows, steps, |_| {}).unwrap();
    (t.into_model(), curve.last().unwrap().loss)
}

#[test]
fn one_window_is_memorized() {
    let window = random_window(128, 77);
    let (model, loss) = memorize(&window, 300);
    assert!(loss < 0.1, "final loss {loss}");
    let nll = model.sequence_nll(&window[..64], &window[64..]).unwrap();
    assert!(nll.perplexity < 1.2, "perplexity {}", nll.perplexity);
}

#[test]
fn tokenizer_overfits_a_fixed_batch() {
    let images: Vec<_> = (0..16).map(|s| gen_scene(s, 32).0).collect();
    let tok = Tokenizer::init(TokenizerConfig::desk(), 4).unwrap();
    let mut trainer = TokenizerTrainer::new(tok, tokenizer_opt(100), 4).unwrap();
    let losses: Vec<f64> = (0..100)
        .map(|_| trainer.train_step(&images).unwrap().reconstruction)
        .collect();
    // every step sees all 16 images, so a block of 10 steps is 10 epochs
    let smooth: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for (i, pair) in smooth.windows(2).enumerate() {
        assert!(pair[1] < pair[0], "block {} did not improve: {:?}", i + 1, smooth);
    }
}
