use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--seed=11",
    "--set=tokens=20000",
    "--set=tokenizer_images=32",
    "--set=tokenizer_steps=8",
    "--set=preset=desk-micro",
    "--set=videos=2",
    "--set=queries=2",
];

fn lvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvm")).args(args).output().expect("spawn lvm")
}

fn stage(root: &Path, name: &str, cmd: &[&str], extra: &[String]) -> PathBuf {
    let out = root.join(name);
    let mut argv: Vec<String> = vec!["lvm".into()];
    argv.extend(cmd.iter().map(|s| s.to_string()));
    argv.extend(TINY.iter().map(|s| s.to_string()));
    argv.push(format!("--out={}", out.display()));
    argv.extend(extra.iter().cloned());
    assert_eq!(lvm_cli::run(&argv), 0, "{argv:?}");
    out
}

fn set(key: &str, path: PathBuf) -> String {
    format!("--set={key}={}", path.display())
}

/// Relative path -> bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut todo = vec![root.to_path_buf()];
    while let Some(dir) = todo.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                todo.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Trees equal up to the `out=` line of each resolved config.
fn assert_same_tree(a: &Path, b: &Path) {
    let strip = |t: BTreeMap<PathBuf, Vec<u8>>, root: &Path| -> BTreeMap<PathBuf, Vec<u8>> {
        t.into_iter()
            .map(|(k, v)| {
                if k.file_name().is_some_and(|n| n == "run.cfg") {
                    let text = String::from_utf8(v).unwrap().replace(&root.display().to_string(), "ROOT");
                    (k, text.into_bytes())
                } else {
                    (k, v)
                }
            })
            .collect()
    };
    let (ta, tb) = (strip(tree(a), a), strip(tree(b), b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs", k.display());
    }
}

fn pipeline(root: &Path) {
    let data = stage(root, "data", &["gen-data"], &[]);
    let tok = stage(root, "tok", &["train-tokenizer"], &[set("tokenizer_data", data.join("tokenizer.tsv"))]);
    let tokenizer = set("tokenizer", tok.join("tokenizer.lvmw"));
    let streams = stage(root, "streams", &["tokenize"], &[set("data", data.join("corpus.tsv")), tokenizer.clone()]);
    let shards = stage(root, "shards", &["pack"], &[set("streams", streams.join("streams.lvmt"))]);
    let model = stage(root, "model", &["train", "--steps=3"], &[set("shards", shards.clone())]);
    let ckpt = set("checkpoint", model.join("model.lvmw"));
    stage(root, "sweep", &["eval", "context-sweep"], &[tokenizer.clone(), ckpt.clone()]);
    stage(root, "fewshot", &["eval", "few-shot"], &[tokenizer, ckpt]);
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = stage(&dir.path().join("a"), "data", &["gen-data"], &[]);
    let b = stage(&dir.path().join("b"), "data", &["gen-data"], &[]);
    assert!(tree(&a).len() > 10);
    assert_same_tree(&a, &b);
}

#[test]
fn full_pipeline_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a);
    pipeline(&b);
    assert_same_tree(&a, &b);

    let sweep = std::fs::read_to_string(a.join("sweep/context_sweep.csv")).unwrap();
    let lengths: Vec<usize> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(lengths, (1..=15).collect::<Vec<_>>());
    let few = std::fs::read_to_string(a.join("fewshot/few_shot.csv")).unwrap();
    assert_eq!(few.lines().count(), 5);
    assert!(a.join("model/loss.csv").exists() && a.join("model/run.cfg").exists());
}

#[test]
fn commands_write_only_inside_out() {
    let dir = tempfile::tempdir().unwrap();
    let data = stage(dir.path(), "data", &["gen-data"], &[]);
    let before = tree(dir.path());
    stage(dir.path(), "stats", &["stats"], &[set("data", data.join("corpus.tsv"))]);
    let after = tree(dir.path());
    for (k, v) in &after {
        if before.get(k) != Some(v) {
            assert!(k.starts_with("stats"), "{} written outside --out", k.display());
        }
    }
    let csv = std::fs::read_to_string(dir.path().join("stats/stats.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}

#[test]
fn missing_inputs_exit_2_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere").join("corpus.tsv");
    let out = format!("--out={}", dir.path().display());
    for argv in [["stats", &out, &set("data", missing.clone())], ["train", &out, &set("shards", missing.clone())]] {
        let o = lvm(&argv);
        assert_eq!(o.status.code(), Some(2), "{argv:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(&missing.display().to_string()), "{err}");
    }
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed=3\nlearning_rate=0.1\n").unwrap();
    let o = lvm(&["stats", &format!("--config={}", cfg.display())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    assert_eq!(lvm(&["stats", "--set=nope=1"]).status.code(), Some(1));
    assert_eq!(lvm(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(lvm(&["--help"]).status.code(), Some(0));
}

#[test]
fn checkpoints_verify_and_truncation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = stage(root, "data", &["gen-data"], &[]);
    let tok = stage(root, "tok", &["train-tokenizer"], &[set("tokenizer_data", data.join("tokenizer.tsv"))]);
    let tokenizer = tok.join("tokenizer.lvmw");

    let ok = lvm(&["eval", "checkpoint", &format!("--out={}", root.join("v").display()), &set("checkpoint", tokenizer.clone())]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let report = std::fs::read_to_string(root.join("v/checkpoint_report.txt")).unwrap();
    assert!(report.contains("kind=tokenizer") && report.contains("identical=true"), "{report}");

    let bytes = std::fs::read(&tokenizer).unwrap();
    let cut = root.join("cut.lvmw");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = lvm(&["eval", "checkpoint", &format!("--out={}", root.join("w").display()), &set("checkpoint", cut)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_resumes_from_its_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = stage(root, "data", &["gen-data"], &[]);
    let tok = stage(root, "tok", &["train-tokenizer"], &[set("tokenizer_data", data.join("tokenizer.tsv"))]);
    let streams = stage(
        root,
        "streams",
        &["tokenize"],
        &[set("data", data.join("corpus.tsv")), set("tokenizer", tok.join("tokenizer.lvmw"))],
    );
    let shards = stage(root, "shards", &["pack"], &[set("streams", streams.join("streams.lvmt"))]);
    // a schedule independent of --steps, so two resumed steps continue the same curve
    let opt: Vec<String> = [
        "opt.base_lr=1e-3",
        "opt.final_lr=1e-4",
        "opt.warmup_steps=1",
        "opt.decay_steps=4",
        "opt.weight_decay=0.1",
    ]
    .iter()
    .map(|kv| format!("--set={kv}"))
    .chain([set("shards", shards)])
    .collect();
    let straight = stage(root, "straight", &["train", "--steps=4"], &opt);
    let two = stage(root, "two", &["train", "--steps=2"], &opt);
    let mut from_two = opt.clone();
    from_two.push(set("resume", two.join("model.lvmw")));
    let resumed = stage(root, "resumed", &["train", "--steps=4"], &from_two);
    let a = std::fs::read(straight.join("model.lvmw")).unwrap();
    let b = std::fs::read(resumed.join("model.lvmw")).unwrap();
    assert!(a == b, "resumed run diverged from the uninterrupted one");
}

#[test]
fn config_fuzz_seed_and_byte_edits() {
    let seed = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/config/run")).unwrap();
    let check = |b: &[u8]| {
        if let Ok(cfg) = std::str::from_utf8(b).map_err(|_| ()).and_then(|t| lvm_cli::RunConfig::parse(t, "f").map_err(|_| ())) {
            assert_eq!(lvm_cli::RunConfig::parse(&cfg.to_text(), "again").unwrap(), cfg);
            let _ = cfg.tokenizer_config();
            return true;
        }
        false
    };
    assert!(check(&seed));
    for i in 0..seed.len() {
        for v in [b'=', b'#', b'\n', b' ', b'\t', b'x', 0xff] {
            let mut b = seed.clone();
            b[i] = v;
            check(&b);
        }
        check(&seed[..i]);
    }
}
