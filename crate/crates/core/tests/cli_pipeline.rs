//! End-to-end command-line pipeline runs in temporary directories.

use std::path::{Path, PathBuf};

use polylearn::cli::run;
use polylearn::corpus::read_conll;
use polylearn::extraction::ConstraintSystem;
use polylearn::ilp::FamilyFile;
use polylearn::sequence::{save_scores, ScoreFile, ScoreMatrix};

fn corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/planted_citations.conll")
}

fn arg(path: &Path) -> String {
    path.display().to_string()
}

#[test]
fn learn_extract_train_decode_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.txt");
    let sys = dir.path().join("sys.txt");
    let model = dir.path().join("model.txt");
    let preds = dir.path().join("preds.conll");
    let report = dir.path().join("decode_report.txt");
    let corpus = corpus_path();

    // Ten hidden units expand into 2^10 - 1 inequality rows.
    assert_eq!(
        run([
            "polylearn", "learn", "--template", "ngram-labels", "--n", "2",
            "--hidden", "10", "--seed", "1", "--epochs", "300",
            "--data", &arg(&corpus), "--out", &arg(&net),
        ]),
        0
    );
    assert_eq!(
        run([
            "polylearn", "extract", "--net", &arg(&net), "--out", &arg(&sys),
            "--origin", "ngram-labels:2",
        ]),
        0
    );
    let system = ConstraintSystem::load(&sys).unwrap();
    assert_eq!(system.len(), 1023);
    assert_eq!(system.input_dim, 36);
    assert_eq!(system.origin, "ngram-labels:2");

    assert_eq!(
        run([
            "polylearn", "seq-train", "--data", &arg(&corpus), "--out", &arg(&model),
            "--mode", "hinge", "--epochs", "10", "--seed", "3",
        ]),
        0
    );
    // The recorded origin identifies the template, so --templates is not needed.
    assert_eq!(
        run([
            "polylearn", "seq-decode", "--model", &arg(&model), "--data", &arg(&corpus),
            "--beam", "50", "--systems", &arg(&sys), "--fallback",
            "--pred-out", &arg(&preds), "--report", &arg(&report),
        ]),
        0
    );
    let gold = read_conll(&corpus).unwrap();
    let decoded = read_conll(&preds).unwrap();
    assert_eq!(decoded.len(), gold.len());
    for (d, g) in decoded.iter().zip(&gold) {
        assert_eq!(d.tokens, g.tokens);
    }
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("token_accuracy = "), "missing accuracy in {text}");
    assert!(text.contains("fallback_decodes = "), "missing fallback count in {text}");
}

#[test]
fn gen_solve_eval_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let family = dir.path().join("family.txt");
    let solved = dir.path().join("solved.txt");
    let gen_report = dir.path().join("gen_report.txt");
    let eval_dir = dir.path().join("eval");

    assert_eq!(
        run([
            "polylearn", "gen-ilp", "--n", "12", "--m", "4", "--count", "8",
            "--seed", "5", "--out", &arg(&family), "--report", &arg(&gen_report),
        ]),
        0
    );
    assert_eq!(
        run(["polylearn", "solve-ilp", "--family", &arg(&family), "--out", &arg(&solved)]),
        0
    );
    let solved_family = FamilyFile::load(&solved).unwrap();
    assert_eq!(solved_family.instances.len(), 8);
    // The generator plants a feasible witness, so every instance solves.
    assert!(solved_family.golds.iter().all(|g| g.is_some()));

    assert_eq!(run(["polylearn", "report", "--in", &arg(&gen_report)]), 0);

    assert_eq!(
        run([
            "polylearn", "eval-ilp", "--n", "12", "--m", "6", "--count", "10",
            "--seed", "5", "--hidden", "4", "--epochs", "50",
            "--out-dir", &arg(&eval_dir),
        ]),
        0
    );
    for name in ["family.txt", "net.txt", "system.txt", "report.txt"] {
        assert!(eval_dir.join(name).exists(), "missing artifact {name}");
    }
    let text = std::fs::read_to_string(eval_dir.join("report.txt")).unwrap();
    for key in [
        "classification_accuracy_pct",
        "bitwise_accuracy_pct",
        "baseline_bitwise_accuracy_pct",
        "learned_satisfied_by_gold_pct",
    ] {
        assert!(text.contains(key), "report lacks {key}:\n{text}");
    }
    assert!(!text.contains("runtime"), "timing leaked into an artifact:\n{text}");
}

#[test]
fn config_file_overrides_flags_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let family = dir.path().join("family.txt");
    let report = dir.path().join("report.txt");

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("seed = 9\nout = {}\n", family.display())).unwrap();
    assert_eq!(
        run([
            "polylearn", "gen-ilp", "--n", "8", "--m", "3", "--count", "4",
            "--config", &arg(&cfg), "--report", &arg(&report),
        ]),
        0
    );
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("seed = 9"), "config seed not applied:\n{text}");
    assert!(family.exists());

    let bad_key = dir.path().join("bad_key.cfg");
    std::fs::write(&bad_key, "bogus = 1\n").unwrap();
    assert_eq!(run(["polylearn", "gen-ilp", "--config", &arg(&bad_key)]), 2);

    let bad_value = dir.path().join("bad_value.cfg");
    std::fs::write(&bad_value, "n = twelve\n").unwrap();
    assert_eq!(run(["polylearn", "gen-ilp", "--config", &arg(&bad_value)]), 2);
}

#[test]
fn score_file_decoding_needs_no_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.txt");
    let report = dir.path().join("report.txt");
    let file = ScoreFile {
        labels: vec!["A".into(), "B".into()],
        sentences: vec![
            ScoreMatrix::new(vec![vec![2.0, 0.0], vec![0.0, 1.0], vec![3.0, 0.5]]).unwrap(),
            ScoreMatrix::new(vec![vec![0.0, 2.0], vec![0.5, 0.0]]).unwrap(),
        ],
        transitions: Some(vec![vec![0.5, -0.5], vec![-0.5, 0.5]]),
    };
    save_scores(&scores, &file).unwrap();

    assert_eq!(
        run(["polylearn", "seq-decode", "--scores", &arg(&scores), "--report", &arg(&report)]),
        0
    );
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("sentences = 2"), "wrong sentence count:\n{text}");
    assert!(text.contains("tokens = 5"), "wrong token count:\n{text}");
    // No gold labels were supplied, so no accuracy is reported.
    assert!(!text.contains("token_accuracy"), "accuracy without gold:\n{text}");
}

#[test]
fn runtime_and_usage_failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.conll");
    let out = dir.path().join("net.txt");
    // A missing input file is a runtime error.
    assert_eq!(
        run([
            "polylearn", "learn", "--template", "ngram-labels", "--hidden", "2",
            "--seed", "1", "--data", &arg(&missing), "--out", &arg(&out),
        ]),
        1
    );
    // Decoding with neither a corpus nor scores is a usage error.
    assert_eq!(run(["polylearn", "seq-decode", "--beam", "5"]), 2);
    // An unknown template name is a usage error.
    assert_eq!(
        run([
            "polylearn", "learn", "--template", "mystery", "--hidden", "2",
            "--seed", "1", "--data", &arg(&corpus_path()), "--out", &arg(&out),
        ]),
        2
    );
}

#[test]
fn er_table_report_shows_full_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("er_report.txt");
    assert_eq!(run(["polylearn", "eval-er-tables", "--report", &arg(&report)]), 0);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("source_relation_pairs = 24"), "{text}");
    assert!(text.contains("relation_target_pairs = 24"), "{text}");
    assert!(text.contains("relation_relation_pairs = 36"), "{text}");
    assert!(text.contains("total_disagreements = 0"), "{text}");
}

#[test]
fn installed_binary_reports_errors_like_the_library() {
    let bin = env!("CARGO_BIN_EXE_polylearn");
    let ok = std::process::Command::new(bin).arg("--version").output().unwrap();
    assert!(ok.status.success());

    let usage = std::process::Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));

    let runtime = std::process::Command::new(bin)
        .args(["solve-ilp", "--family", "/nonexistent/family.txt", "--out", "/tmp/unused.txt"])
        .output()
        .unwrap();
    assert_eq!(runtime.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&runtime.stderr);
    assert!(stderr.contains("/nonexistent/family.txt"), "stderr: {stderr}");
}
