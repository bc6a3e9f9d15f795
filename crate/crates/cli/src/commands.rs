use std::path::{Path, PathBuf};

use lvm_core::checkpoint::Container;
use lvm_core::eval::{
    ablation_experiment, colorization_eval, complete_tokens, context_sweep, heldout_videos, identity_agreement,
    read_prompt_manifest, scaling_experiment, sequential_prompt, EvalRecord, FewShotSuite, PromptMode,
    DESK_TASKS, SWEEP_LENGTHS,
};
use lvm_core::forge::{format_manifest, generate_corpus, load_sentence, read_manifest, CorpusMix, ManifestEntry, SentenceKind};
use lvm_core::model::{LossPoint, Model, ModelConfig, SamplerConfig, Trainer};
use lvm_core::pack::{
    corpus_stats, read_shard, read_token_streams, write_shard, write_token_streams, PackedWindow, VocabularyLayout,
};
use lvm_core::pipeline::{
    corpus_streams, model_opt, pack_streams, tokenize_sentences, tokenizer_image, tokenizer_opt, train_tokenizer,
};
use lvm_core::rng;
use lvm_core::vq::{codebook_usage, Tokenizer};
use lvm_core::{Error, Result};

use crate::config::RunConfig;
use crate::{Command, EvalKind};

const LOG_EVERY: u64 = 100;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Writes through a temporary name so an interrupted write never replaces
/// the previous good file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, bytes)?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InsufficientData(format!("{what} not found: {}", path.display())))
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

impl Run {
    fn new(cfg: RunConfig) -> Result<Self> {
        let out = cfg.path("out");
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        Ok(Run { cfg, out })
    }

    fn at(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self) -> Result<u64> {
        self.cfg.seed()
    }

    fn finish(&self) -> Result<()> {
        self.cfg.write_resolved(&self.out)
    }

    fn tokenizer(&self) -> Result<Tokenizer> {
        let p = self.cfg.path("tokenizer");
        require_file(&p, "tokenizer checkpoint")?;
        Tokenizer::from_container(&Container::read(&p)?)
    }

    fn model(&self) -> Result<Model> {
        let p = self.cfg.path("checkpoint");
        require_file(&p, "model checkpoint")?;
        Model::from_container(&Container::read(&p)?)
    }

    fn model_name(&self) -> String {
        self.cfg
            .path("checkpoint")
            .file_stem()
            .map(|s| s.to_string_lossy().replace(',', "_"))
            .unwrap_or_else(|| "model".into())
    }

    /// Preset resized to the vocabulary and window of the training data.
    fn model_config(&self, name: &str, layout: &VocabularyLayout, window: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::preset(name)?;
        c.vocab_size = layout.vocab_size();
        c.context = window;
        c.validate()?;
        Ok(c)
    }

    fn shards(&self) -> Result<(VocabularyLayout, usize, Vec<PackedWindow>)> {
        let p = self.cfg.path("shards");
        let files: Vec<PathBuf> = if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(&p)
                .map_err(io_err(&p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "lvms"))
                .collect();
            v.sort();
            v
        } else {
            require_file(&p, "shard")?;
            vec![p.clone()]
        };
        if files.is_empty() {
            return Err(Error::InsufficientData(format!("no .lvms shards in {}", p.display())));
        }
        let mut windows = Vec::new();
        let mut first = None;
        for f in &files {
            let (h, w) = read_shard(f)?;
            let key = (h.codebook_size, h.window);
            if *first.get_or_insert(key) != key {
                return Err(Error::CorruptShard(format!(
                    "{} has K={} L={}, earlier shards differ",
                    f.display(),
                    h.codebook_size,
                    h.window
                )));
            }
            windows.extend(w);
        }
        let (k, l) = first.expect("at least one shard");
        Ok((VocabularyLayout::new(k)?, l, windows))
    }

    fn sampler(&self, stream: &str, index: u64) -> Result<SamplerConfig> {
        let top_k: usize = self.cfg.get("top_k")?;
        let s = SamplerConfig {
            temperature: self.cfg.get("temperature")?,
            top_k: (top_k > 0).then_some(top_k),
            seed: rng::derive(self.seed()?, stream, index),
        };
        s.validate()?;
        Ok(s)
    }

    fn suite(&self, tok: &Tokenizer) -> Result<FewShotSuite> {
        FewShotSuite::generate(
            tok,
            &DESK_TASKS,
            self.cfg.get("queries")?,
            self.cfg.get("shots")?,
            rng::derive(self.seed()?, "fewshot-suite", 0),
        )
    }
}

fn log_progress(name: &str) -> impl FnMut(&LossPoint) + '_ {
    move |p| {
        if p.step % LOG_EVERY == 0 {
            eprintln!("{name} step {} loss {:.4} lr {:.3e}", p.step, p.loss, p.lr);
        }
    }
}

fn loss_csv(curve: &[LossPoint]) -> String {
    let mut s = format!("{}\n", LossPoint::csv_header());
    for p in curve {
        s.push_str(&p.csv_row());
        s.push('\n');
    }
    s
}

pub fn execute(command: &Command, cfg: RunConfig) -> Result<()> {
    let mut run = Run::new(cfg)?;
    match command {
        Command::GenData => gen_data(&run)?,
        Command::TrainTokenizer => cmd_train_tokenizer(&mut run)?,
        Command::Tokenize => tokenize(&run)?,
        Command::Pack => pack(&run)?,
        Command::Train => train(&mut run)?,
        Command::Eval { what } => match what {
            EvalKind::ContextSweep => eval_context_sweep(&run)?,
            EvalKind::FewShot => eval_few_shot(&run)?,
            EvalKind::Analogy => eval_analogy(&run)?,
            EvalKind::Checkpoint => eval_checkpoint(&run)?,
        },
        Command::Prompt => prompt(&run)?,
        Command::Stats => stats(&run)?,
        Command::Scaling => scaling(&mut run)?,
        Command::Ablation => ablation(&mut run)?,
    }
    run.finish()
}

fn gen_data(run: &Run) -> Result<()> {
    let seed = run.seed()?;
    let tcfg = run.cfg.tokenizer_config()?;
    let size = tcfg.image_size;
    let per = tcfg.tokens_per_image();
    let budget: usize = run.cfg.get("tokens")?;
    let mix = CorpusMix::by_name(run.cfg.raw("mix"))?;

    let images = run.at("images");
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;
    let mut entries = Vec::new();
    let (mut total, mut n_images) = (0usize, 0usize);
    generate_corpus(seed, &mix, size, |s| {
        let mut paths = Vec::with_capacity(s.len());
        for img in s.images() {
            let rel = PathBuf::from(format!("images/{n_images:07}.ppm"));
            img.write_ppm(&run.out.join(&rel))?;
            paths.push(rel);
            n_images += 1;
        }
        entries.push(ManifestEntry { kind: s.kind(), paths });
        total += 2 + s.len() * per;
        Ok(total >= budget)
    })?;
    write_file(&run.at("corpus.tsv"), format_manifest(&entries))?;

    let tdir = run.at("tokenizer");
    std::fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
    let n: u64 = run.cfg.get("tokenizer_images")?;
    let mut tentries = Vec::with_capacity(n as usize);
    for i in 0..n {
        let rel = PathBuf::from(format!("tokenizer/{i:06}.ppm"));
        tokenizer_image(seed, i, size).write_ppm(&run.out.join(&rel))?;
        tentries.push(ManifestEntry {
            kind: SentenceKind::Single,
            paths: vec![rel],
        });
    }
    write_file(&run.at("tokenizer.tsv"), format_manifest(&tentries))?;
    println!(
        "{} sentences, {n_images} images, {total} tokens; {n} tokenizer images",
        entries.len()
    );
    Ok(())
}

fn load_manifest_images(path: &Path) -> Result<Vec<lvm_core::image::Image>> {
    require_file(path, "manifest")?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for e in read_manifest(path)? {
        out.extend(load_sentence(&e, base)?.images().iter().cloned());
    }
    Ok(out)
}

fn cmd_train_tokenizer(run: &mut Run) -> Result<()> {
    let seed = run.seed()?;
    let tcfg = run.cfg.tokenizer_config()?;
    let images = load_manifest_images(&run.cfg.path("tokenizer_data"))?;
    if let Some(bad) = images.iter().find(|i| i.width() != tcfg.image_size || i.height() != tcfg.image_size) {
        return Err(Error::Dimension(format!(
            "tokenizer image is {}x{}, config image_size is {}",
            bad.width(),
            bad.height(),
            tcfg.image_size
        )));
    }
    let steps = match run.cfg.get::<u64>("steps")? {
        0 => run.cfg.get("tokenizer_steps")?,
        s => s,
    };
    let opt = run.cfg.resolve_optimizer(&tokenizer_opt(steps))?;
    let (tok, losses) = train_tokenizer(&images, tcfg, opt, steps, seed, |s, l| {
        if s % LOG_EVERY == 0 {
            eprintln!("tokenizer step {s} reconstruction {:.5}", l.reconstruction);
        }
    })?;
    let mut csv = String::from("step,reconstruction,commitment,total\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{},{},{}\n", i + 1, l.reconstruction, l.commitment, l.total));
    }
    write_file(&run.at("tokenizer_loss.csv"), csv)?;
    let grids = tok.encode_batch(&images)?;
    let usage = codebook_usage(&grids, tok.config().codebook_size);
    tok.to_container().write(&run.at("tokenizer.lvmw"))?;
    println!("codebook usage {:.1}% on {} training images", 100.0 * usage, images.len());
    Ok(())
}

fn tokenize(run: &Run) -> Result<()> {
    let tok = run.tokenizer()?;
    let path = run.cfg.path("data");
    require_file(&path, "corpus manifest")?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(&path)?;
    let mut streams = Vec::with_capacity(entries.len());
    for chunk in entries.chunks(64) {
        let sentences = chunk.iter().map(|e| load_sentence(e, base)).collect::<Result<Vec<_>>>()?;
        streams.extend(tokenize_sentences(&sentences, &tok)?);
    }
    let layout = VocabularyLayout::new(tok.config().codebook_size)?;
    write_token_streams(&run.at("streams.lvmt"), &layout, &streams)?;
    let total: usize = streams.iter().map(|s| s.ids.len()).sum();
    println!("{} sentences, {total} tokens", streams.len());
    Ok(())
}

fn pack(run: &Run) -> Result<()> {
    let path = run.cfg.path("streams");
    require_file(&path, "token streams")?;
    let (layout, streams) = read_token_streams(&path)?;
    let window: usize = run.cfg.get("L")?;
    let per_shard: usize = run.cfg.get("shard_windows")?;
    if per_shard == 0 {
        return Err(Error::Config("shard_windows must be at least 1".into()));
    }
    let windows = pack_streams(&streams, window, run.seed()?)?;
    for (i, chunk) in windows.chunks(per_shard).enumerate() {
        write_shard(&run.at(&format!("shard-{i:05}.lvms")), &layout, window, chunk)?;
    }
    println!("{} windows of {window} tokens", windows.len());
    Ok(())
}

fn train(run: &mut Run) -> Result<()> {
    let seed = run.seed()?;
    let (layout, window, windows) = run.shards()?;
    let batch: usize = run.cfg.get("batch")?;
    let steps = match run.cfg.get::<u64>("steps")? {
        0 => (windows.len() / batch.max(1)).max(1) as u64,
        s => s,
    };
    run.cfg.set("steps", &steps.to_string())?;
    let resume = run.cfg.path("resume");
    let mut trainer = if resume.as_os_str().is_empty() {
        let mcfg = run.model_config(run.cfg.raw("preset"), &layout, window)?;
        let opt = run.cfg.resolve_optimizer(&model_opt(steps))?;
        Trainer::new(Model::init(mcfg, seed)?, opt, seed, batch)?
    } else {
        require_file(&resume, "resume checkpoint")?;
        Trainer::from_container(&Container::read(&resume)?)?
    };
    let every: u64 = run.cfg.get("checkpoint_every")?;
    let ckpt = run.at("checkpoint.lvmw");
    let mut curve = Vec::new();
    let mut log = log_progress("train");
    let result = (|| -> Result<()> {
        while trainer.step_count() < steps {
            let p = trainer.run(&windows, 1, &mut log)?.remove(0);
            curve.push(p);
            if every > 0 && trainer.step_count() % every == 0 {
                write_atomic(&ckpt, &trainer.to_container()?.to_bytes())?;
            }
        }
        Ok(())
    })();
    write_file(&run.at("loss.csv"), loss_csv(&curve))?;
    result?;
    trainer.to_container()?.write(&run.at("model.lvmw"))?;
    println!("trained {} parameters for {steps} steps", trainer.model().num_params());
    Ok(())
}

fn eval_context_sweep(run: &Run) -> Result<()> {
    let (tok, model, seed) = (run.tokenizer()?, run.model()?, run.seed()?);
    let n: usize = run.cfg.get("videos")?;
    let videos = heldout_videos(seed, n, tok.config().image_size)?;
    let lengths: Vec<usize> = SWEEP_LENGTHS.collect();
    let name = run.model_name();
    let records = context_sweep(&videos, &lengths, &model, &tok)?
        .into_iter()
        .map(|(c, ppl)| EvalRecord::new("context_sweep", name.clone(), c, ppl, seed))
        .collect::<Result<Vec<_>>>()?;
    write_file(&run.at("context_sweep.csv"), EvalRecord::to_csv(&records))?;
    print!("{}", EvalRecord::to_csv(&records));
    Ok(())
}

fn eval_few_shot(run: &Run) -> Result<()> {
    let (tok, model, seed) = (run.tokenizer()?, run.model()?, run.seed()?);
    let suite = run.suite(&tok)?;
    let name = run.model_name();
    let records = suite
        .evaluate(&model)?
        .into_iter()
        .map(|(task, ppl)| EvalRecord::new(task, name.clone(), suite.shots, ppl, seed))
        .collect::<Result<Vec<_>>>()?;
    write_file(&run.at("few_shot.csv"), EvalRecord::to_csv(&records))?;
    print!("{}", EvalRecord::to_csv(&records));
    Ok(())
}

fn eval_analogy(run: &Run) -> Result<()> {
    let (tok, model, seed) = (run.tokenizer()?, run.model()?, run.seed()?);
    let queries: usize = run.cfg.get("queries")?;
    let shots: usize = run.cfg.get("shots")?;
    let name = run.model_name();
    let agreement = identity_agreement(&model, &tok, queries, shots, rng::derive(seed, "identity-eval", 0))?;
    let colour = colorization_eval(&model, &tok, queries, shots, rng::derive(seed, "colorization-eval", 0))?;
    let n = colour.len().max(1) as f64;
    let wins = colour.iter().filter(|r| r.beats_baseline()).count() as f64 / n;
    let pred = colour.iter().map(|r| r.predicted_mse).sum::<f64>() / n;
    let gray = colour.iter().map(|r| r.grayscale_mse).sum::<f64>() / n;
    let records = vec![
        EvalRecord::new("identity_agreement", name.clone(), shots, agreement, seed)?,
        EvalRecord::new("colorization_win_rate", name.clone(), shots, wins, seed)?,
        EvalRecord::new("colorization_mse", name.clone(), shots, pred, seed)?,
        EvalRecord::new("grayscale_baseline_mse", name, shots, gray, seed)?,
    ];
    write_file(&run.at("analogy.csv"), EvalRecord::to_csv(&records))?;
    print!("{}", EvalRecord::to_csv(&records));
    Ok(())
}

/// Re-serializes a checkpoint and compares bytes; training checkpoints also
/// replay their stored probe forward.
fn eval_checkpoint(run: &Run) -> Result<()> {
    let path = run.cfg.path("checkpoint");
    require_file(&path, "checkpoint")?;
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let c = Container::from_bytes(&bytes)?;
    let (kind, again, probe) = match c.get("kind") {
        Some("tokenizer") => ("tokenizer", Tokenizer::from_container(&c)?.to_container(), None),
        _ if c.get("step").is_some() => (
            "training",
            Trainer::from_container(&c)?.to_container()?,
            Some(Trainer::probe_deviation(&c)?),
        ),
        _ => ("model", Model::from_container(&c)?.to_container(), None),
    };
    let identical = again.to_bytes() == bytes;
    let mut report = format!("checkpoint={}\nkind={kind}\nbytes={}\nidentical={identical}\n", path.display(), bytes.len());
    if let Some(d) = probe {
        report.push_str(&format!("probe_max_abs_diff={d:e}\n"));
    }
    write_file(&run.at("checkpoint_report.txt"), &report)?;
    print!("{report}");
    if !identical {
        return Err(Error::CorruptCheckpoint(format!("{} does not re-serialize identically", path.display())));
    }
    if let Some(d) = probe.filter(|d| !(*d <= 1e-6)) {
        return Err(Error::CorruptCheckpoint(format!(
            "{}: probe logits differ by {d:e}",
            path.display()
        )));
    }
    Ok(())
}

fn prompt(run: &Run) -> Result<()> {
    let (tok, model) = (run.tokenizer()?, run.model()?);
    let path = run.cfg.path("prompts");
    require_file(&path, "prompt manifest")?;
    let base = path.parent().unwrap_or(Path::new("."));
    for (i, spec) in read_prompt_manifest(&path)?.iter().enumerate() {
        let images = spec.load_images(base)?;
        let sampler = run.sampler("prompt", i as u64)?;
        let predicted = match spec.mode {
            PromptMode::Sequential => sequential_prompt(&images, spec.n_predict, &model, &tok, &sampler)?,
            PromptMode::Analogy => {
                let ctx: Vec<&lvm_core::image::Image> = images.iter().collect();
                complete_tokens(&ctx, 1, &model, &tok, &sampler)?
                    .iter()
                    .map(|ids| tok.decode_ids(ids))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        for (j, img) in predicted.iter().enumerate() {
            let p = run.at(&format!("prompt-{i:03}-{j:02}.ppm"));
            img.write_ppm(&p)?;
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn stats(run: &Run) -> Result<()> {
    let path = run.cfg.path("data");
    require_file(&path, "corpus manifest")?;
    let per = run.cfg.tokenizer_config()?.tokens_per_image();
    let s = corpus_stats(&read_manifest(&path)?, per);
    write_file(&run.at("stats.csv"), s.to_csv())?;
    print!("{s}");
    Ok(())
}

fn scaling(run: &mut Run) -> Result<()> {
    let seed = run.seed()?;
    let (layout, window, windows) = run.shards()?;
    let batch: usize = run.cfg.get("batch")?;
    let steps = match run.cfg.get::<u64>("steps")? {
        0 => (windows.len() / batch.max(1)).max(1) as u64,
        s => s,
    };
    run.cfg.set("steps", &steps.to_string())?;
    let opt = run.cfg.resolve_optimizer(&model_opt(steps))?;
    let configs = run
        .cfg
        .list("presets")
        .into_iter()
        .map(|n| Ok((n.clone(), run.model_config(&n, &layout, window)?)))
        .collect::<Result<Vec<_>>>()?;
    let suite = match run.cfg.get::<usize>("queries")? {
        0 => None,
        _ => Some(run.suite(&run.tokenizer()?)?),
    };
    let report = scaling_experiment(&windows, &configs, &opt, steps, batch, seed, suite.as_ref(), |name, p| {
        if p.step % LOG_EVERY == 0 {
            eprintln!("{name} step {} loss {:.4}", p.step, p.loss);
        }
    })?;
    write_file(&run.at("curves.csv"), report.curves_csv())?;
    write_file(&run.at("scaling.csv"), EvalRecord::to_csv(&report.records))?;
    for ((name, _), model) in configs.iter().zip(&report.models) {
        model.to_container().write(&run.at(&format!("{name}.lvmw")))?;
    }
    print!("{}", EvalRecord::to_csv(&report.records));
    Ok(())
}

const ABLATION_MIXES: [(&str, &str); 4] = [
    ("single-only", "single-only"),
    ("+video", "video"),
    ("+annotations", "annotations"),
    ("full", "full"),
];

fn ablation(run: &mut Run) -> Result<()> {
    let seed = run.seed()?;
    let tok = run.tokenizer()?;
    let budget: usize = run.cfg.get("tokens")?;
    let window: usize = run.cfg.get("L")?;
    let batch: usize = run.cfg.get("batch")?;
    let layout = VocabularyLayout::new(tok.config().codebook_size)?;
    let mut subsets = Vec::new();
    for (mix, name) in ABLATION_MIXES {
        let streams = corpus_streams(seed, &CorpusMix::by_name(mix)?, &tok, budget)?;
        let windows = pack_streams(&streams, window, seed)?;
        eprintln!("{mix}: {} windows", windows.len());
        subsets.push((name.to_string(), windows));
    }
    let cfg = run.model_config(run.cfg.raw("preset"), &layout, window)?;
    let n = subsets.iter().map(|s| s.1.len()).min().unwrap_or(0);
    let steps = (n / batch.max(1)) as u64;
    run.cfg.set("steps", &steps.to_string())?;
    let opt = run.cfg.resolve_optimizer(&model_opt(steps))?;
    let suite = run.suite(&tok)?;
    let report = ablation_experiment(&subsets, &cfg, &opt, batch, seed, &suite, |name, p| {
        if p.step % LOG_EVERY == 0 {
            eprintln!("{name} step {} loss {:.4}", p.step, p.loss);
        }
    })?;
    write_file(&run.at("ablation.csv"), EvalRecord::to_csv(&report.records))?;
    for (name, model) in &report.models {
        model.to_container().write(&run.at(&format!("{name}.lvmw")))?;
    }
    print!("{}", EvalRecord::to_csv(&report.records));
    Ok(())
}
