use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attncorr_cli::commands::{eval_attention, eval_captions, gen_data, train_run, CHECKPOINT_FILE};
use attncorr_cli::config::RunConfig;
use attncorr_cli::dataset::read_split;
use attncorr_cli::records::{read_csv, write_csv, CaptionRow, RecordRow, WordRow};
use attncorr_cli::report::{report, RunInput};
use attncorr_core::captioner::{save_checkpoint, Checkpoint, Dims};
use attncorr_core::metrics::FULL_IMAGE_FRACTION;
use attncorr_core::pipeline::{build_vocab, evaluate_attention, EvalSettings};
use attncorr_core::{ModelParams, Split, SupervisionMode};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_attncorr"))
}

fn small_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        dataset: root.join("data"),
        output: root.join("run"),
        ..RunConfig::default()
    };
    cfg.world.train = 40;
    cfg.world.val = 4;
    cfg.world.test = 12;
    cfg.model.hidden = 8;
    cfg.model.embed = 6;
    cfg.train.epochs = 2;
    cfg.eval.pgm_images = 1;
    cfg
}

fn setup() -> (TempDir, RunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    gen_data(&cfg.world, &cfg.dataset).unwrap();
    (dir, cfg)
}

fn write_config(cfg: &RunConfig, path: &Path) -> PathBuf {
    fs::write(path, cfg.to_toml().unwrap()).unwrap();
    path.to_path_buf()
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn gen_data_writes_parseable_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let path = write_config(&cfg, &dir.path().join("c.toml"));
    let out = run_ok(bin().args(["gen-data", "--config"]).arg(&path));
    assert!(String::from_utf8_lossy(&out.stdout).contains("train 40"));
    for (split, n) in [(Split::Train, 40), (Split::Val, 4), (Split::Test, 12)] {
        assert_eq!(read_split(&cfg.dataset, split).unwrap().len(), n);
    }
    for f in ["embeddings.json", "lexicon.json", "world.toml"] {
        assert!(cfg.dataset.join(f).is_file(), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_dataset_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen_data(&cfg.world, &a).unwrap();
    gen_data(&cfg.world, &b).unwrap();
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "embeddings.json", "lexicon.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_output_path_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let out = bin().args(["gen-data", "--train", "4", "--test", "4", "--val", "1", "--out"]).arg(file.join("sub")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        vec!["train", "--no-such-flag"],
        vec!["eval-attention", "--caption-mode", "sideways"],
        vec!["eval-attention", "--aggregator", "median"],
        vec!["report", "--out", "x"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn missing_checkpoint_or_config_is_a_runtime_error() {
    let (dir, cfg) = setup();
    let out = bin()
        .args(["eval-attention", "--checkpoint"])
        .arg(dir.path().join("nope.ckpt"))
        .arg("--data")
        .arg(&cfg.dataset)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
    let out = bin().args(["train", "--config", "/definitely/missing.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dims_must_match_the_dataset() {
    let (_dir, mut cfg) = setup();
    cfg.model.features = Some(cfg.world.channels() + 1);
    assert!(train_run(&cfg).is_err());
    cfg.model.features = Some(cfg.world.channels());
    cfg.model.grid_side = Some(cfg.world.grid_side + 1);
    assert!(train_run(&cfg).is_err());
}

#[test]
fn implicit_equals_strong_with_zero_lambda() {
    let (dir, mut cfg) = setup();
    cfg.output = dir.path().join("none");
    let none = train_run(&cfg).unwrap();
    cfg.output = dir.path().join("strong0");
    cfg.train.supervision = SupervisionMode::Strong;
    cfg.train.lambda = 0.0;
    let strong = train_run(&cfg).unwrap();
    assert_eq!(none.log, strong.log);
    assert_eq!(none.params, strong.params);
    assert_eq!(
        fs::read(dir.path().join("none/train_log.csv")).unwrap(),
        fs::read(dir.path().join("strong0/train_log.csv")).unwrap()
    );
}

#[test]
fn strong_supervision_lowers_attention_loss() {
    let (_dir, mut cfg) = setup();
    cfg.train.supervision = SupervisionMode::Strong;
    cfg.train.epochs = 4;
    let out = train_run(&cfg).unwrap();
    let first = out.log.epochs.first().unwrap().attention_loss;
    let last = out.log.epochs.last().unwrap().attention_loss;
    assert!(last < first, "{first} -> {last}");
    let dump = fs::read_to_string(cfg.output.join("supervision.jsonl")).unwrap();
    assert_eq!(dump.lines().count(), 40);
}

#[test]
fn weak_training_reports_target_counts() {
    let (_dir, mut cfg) = setup();
    cfg.train.supervision = SupervisionMode::Weak;
    cfg.train.epochs = 1;
    let out = train_run(&cfg).unwrap();
    let stats = out.weak_stats.unwrap();
    assert!(stats.present > 0);
    assert_eq!(stats.missing_words, 0);
}

#[test]
fn reloaded_checkpoint_evaluates_like_the_in_memory_model() {
    let (_dir, cfg) = setup();
    let trained = train_run(&cfg).unwrap();
    let lexicon = attncorr_cli::dataset::read_lexicon(&cfg.dataset).unwrap();
    let train = read_split(&cfg.dataset, Split::Train).unwrap();
    let mut test = read_split(&cfg.dataset, Split::Test).unwrap();
    test.sort_by(|a, b| a.id.cmp(&b.id));
    let vocab = build_vocab(&train);
    let mem = evaluate_attention(&trained.params, &vocab, &lexicon, &test, &EvalSettings::default()).unwrap();
    let summary = eval_attention(&trained.checkpoint, &cfg.dataset, &cfg.output, &cfg.eval).unwrap();
    let rows: Vec<RecordRow> = read_csv(&cfg.output.join("ac_records_gt.csv")).unwrap();
    let mem_acs: Vec<f64> = mem.iter().flat_map(|e| e.records.iter().map(|r| r.ac)).collect();
    let disk_acs: Vec<f64> = rows.iter().map(|r| r.ac).collect();
    assert_eq!(mem_acs, disk_acs);
    assert_eq!(summary.records, rows.len());
}

#[test]
fn uniform_attention_model_scores_the_baseline() {
    let (dir, cfg) = setup();
    let train = read_split(&cfg.dataset, Split::Train).unwrap();
    let vocab = build_vocab(&train);
    let dims = Dims {
        vocab: vocab.len(),
        embed: 4,
        hidden: 4,
        feature: cfg.world.channels(),
        grid_side: cfg.world.grid_side,
    };
    let ckpt = dir.path().join("uniform.ckpt");
    save_checkpoint(
        &ckpt,
        &Checkpoint {
            params: ModelParams::zeros(dims).unwrap(),
            vocab,
            metadata: Default::default(),
        },
    )
    .unwrap();
    let s = eval_attention(&ckpt, &cfg.dataset, &dir.path().join("u"), &cfg.eval).unwrap();
    assert!(s.records > 0);
    assert!(s.mean_improvement.abs() < 1e-9, "{}", s.mean_improvement);
}

#[test]
fn gt_mode_scores_every_evaluable_phrase() {
    let (_dir, cfg) = setup();
    let trained = train_run(&cfg).unwrap();
    let s = eval_attention(&trained.checkpoint, &cfg.dataset, &cfg.output, &cfg.eval).unwrap();
    let test = read_split(&cfg.dataset, Split::Test).unwrap();
    let res = cfg.world.image_res() as f64;
    let expected = test
        .iter()
        .flat_map(|s| &s.entities)
        .filter_map(|e| e.bbox)
        .filter(|[x0, y0, x1, y1]| ((x1 - x0) * (y1 - y0)) as f64 / (res * res) < FULL_IMAGE_FRACTION)
        .count();
    assert_eq!(s.records, expected);
    assert_eq!(s.images, 12);
    let words: Vec<WordRow> = read_csv(&cfg.output.join("word_metrics_gt.csv")).unwrap();
    let rows: Vec<RecordRow> = read_csv(&cfg.output.join("ac_records_gt.csv")).unwrap();
    let span_words: usize = rows.iter().map(|r| r.span_end - r.span_start).sum();
    assert_eq!(words.len(), span_words);
    assert!(cfg.output.join("maps_gt").read_dir().unwrap().count() > 0);
}

#[test]
fn divergence_names_the_step() {
    let (dir, cfg) = setup();
    let out = bin()
        .arg("train")
        .arg("--data")
        .arg(&cfg.dataset)
        .arg("--out")
        .arg(dir.path().join("div"))
        .args(["--lr", "1e300", "--epochs", "1", "--hidden", "4", "--embed", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("step"), "{err}");
}

#[test]
fn full_cli_pipeline_and_report() {
    let (dir, cfg) = setup();
    let config = write_config(&cfg, &dir.path().join("c.toml"));
    run_ok(bin().args(["train", "--config"]).arg(&config));
    run_ok(bin().args(["eval-attention", "--config"]).arg(&config));
    run_ok(bin().args(["eval-attention", "--caption-mode", "generated", "--config"]).arg(&config));
    run_ok(bin().args(["eval-captions", "--config"]).arg(&config));
    let rep_dir = dir.path().join("rep");
    let out = run_ok(
        bin()
            .arg("report")
            .arg("--run")
            .arg(format!("implicit={}", cfg.output.display()))
            .arg("--out")
            .arg(&rep_dir),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("implicit"));
    for f in ["table1.csv", "table2.csv", "table3.csv", "table4.csv", "spearman.csv", "histogram.csv"] {
        assert!(rep_dir.join(f).is_file(), "{f}");
    }
    let t3 = fs::read_to_string(rep_dir.join("table3.csv")).unwrap();
    assert_eq!(t3.lines().count(), 2);
    let sp = fs::read_to_string(rep_dir.join("spearman.csv")).unwrap();
    assert_eq!(sp.lines().count(), 7);
}

fn run_input(p: &Path) -> RunInput {
    p.to_str().unwrap().parse().unwrap()
}

fn fake_run(dir: &Path, ids: &[&str], generated_equals_reference: bool) {
    fs::create_dir_all(dir).unwrap();
    let caps: Vec<CaptionRow> = ids
        .iter()
        .map(|id| CaptionRow {
            image_id: id.to_string(),
            generated: if generated_equals_reference { "a red box above a blue circle" } else { "a red box" }.into(),
            reference: "a red box above a blue circle".into(),
        })
        .collect();
    let recs: Vec<RecordRow> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| RecordRow {
            image_id: id.to_string(),
            phrase: "a red box".into(),
            source: "gt_caption".into(),
            span_start: 0,
            span_end: 3,
            area_fraction: 0.1 * (i + 1) as f64,
            baseline: 0.1 * (i + 1) as f64,
            ac: 0.2 * (i + 1) as f64,
            word_scores: format!("{}", 0.2 * (i + 1) as f64),
        })
        .collect();
    let words: Vec<WordRow> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| WordRow {
            image_id: id.to_string(),
            timestep: 0,
            word: "box".into(),
            ac: i as f64,
            neg_l1: i as f64,
            neg_l2: i as f64,
            neg_kl: i as f64,
        })
        .collect();
    write_csv(&dir.join("captions.csv"), &caps).unwrap();
    write_csv(&dir.join("ac_records_gt.csv"), &recs).unwrap();
    write_csv(&dir.join("word_metrics_gt.csv"), &words).unwrap();
}

#[test]
fn report_of_perfect_captions_has_unit_bleu() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("perfect");
    fake_run(&run, &["a", "b", "c"], true);
    let rep = report(&[run_input(&run)], &dir.path().join("out"), 10).unwrap();
    assert_eq!(rep.table1.len(), 1);
    assert_eq!(rep.table3.len(), 1);
    assert_eq!(rep.table3[0].bleu4, 1.0);
    assert_eq!(rep.table2.len(), 3);
    assert_eq!(rep.table4.len(), 3);
    assert!(rep.spearman.iter().all(|r| r.rho == 1.0));
}

#[test]
fn report_rejects_runs_on_different_images() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fake_run(&a, &["x1", "x2", "x3"], true);
    fake_run(&b, &["x1", "x2", "x4"], false);
    let err = report(
        &[run_input(&a), run_input(&b)],
        &dir.path().join("out"),
        10,
    )
    .unwrap_err();
    assert!(err.to_string().contains("different images"), "{err}");
}

#[test]
fn eval_captions_writes_bleu_table() {
    let (_dir, cfg) = setup();
    let trained = train_run(&cfg).unwrap();
    let b = eval_captions(&trained.checkpoint, &cfg.dataset, &cfg.output, Split::Test, 24).unwrap();
    assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
    let caps: Vec<CaptionRow> = read_csv(&cfg.output.join("captions.csv")).unwrap();
    assert_eq!(caps.len(), 12);
    assert!(caps.windows(2).all(|w| w[0].image_id < w[1].image_id));
    assert!(cfg.output.join(CHECKPOINT_FILE).is_file());
}
