//! Command-line front end: each pipeline stage is a subcommand.
//!
//! Exit codes: 0 on success, 2 on usage or config errors, 1 on runtime errors.
//! Every command echoes its effective configuration and results as a small
//! `key = value` report on stdout and, when `--report` is given, into a file.
//! Wall-clock time is printed to stdout only, never into files, so repeated
//! runs with the same seed produce byte-identical artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::corpus::{read_conll, read_er_pairs, write_conll, LabelVocab, TaggedSequence};
use crate::er_tables::eval_er_tables;
use crate::extraction::extract_system;
use crate::extraction::ConstraintSystem;
use crate::features::{
    generate_dataset, pair_indicator_examples, FeatureTemplate, NegativeGenOptions,
    WindowNegativeScheme,
};
use crate::ilp::{generate_family, make_training_pairs, solve_exact, FamilyFile, IlpConstraintSet, SolveStatus};
use crate::rectifier::{
    classification_accuracy, train, train_grid, ConstraintNet, TrainConfig, LR_DECAY_GRID, LR_GRID,
};
use crate::sequence::{
    beam_decode_full, load_scores, token_accuracy, train_markov, viterbi, BeamOptions,
    DecodeInput, MarkovTrainConfig, SequenceModel, TrainMode,
};
use crate::{Error, Result};

/// Parse a `key = value` config value into a flag's type.
trait FromConfigValue: Sized {
    fn from_config(key: &str, value: &str) -> Result<Self>;
}

fn bad_value(key: &str, value: &str) -> Error {
    Error::Usage(format!("config key {key}: invalid value {value:?}"))
}

macro_rules! impl_from_config {
    ($($t:ty),+) => {$(
        impl FromConfigValue for $t {
            fn from_config(key: &str, value: &str) -> Result<Self> {
                value.parse().map_err(|_| bad_value(key, value))
            }
        }
    )+};
}

impl_from_config!(usize, u64, f64, String);

impl FromConfigValue for bool {
    fn from_config(key: &str, value: &str) -> Result<Self> {
        match value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad_value(key, value)),
        }
    }
}

impl FromConfigValue for PathBuf {
    fn from_config(_key: &str, value: &str) -> Result<Self> {
        Ok(PathBuf::from(value))
    }
}

impl<T: FromConfigValue> FromConfigValue for Option<T> {
    fn from_config(key: &str, value: &str) -> Result<Self> {
        T::from_config(key, value).map(Some)
    }
}

impl<T: FromConfigValue> FromConfigValue for Vec<T> {
    fn from_config(key: &str, value: &str) -> Result<Self> {
        value.split(',').filter(|s| !s.is_empty()).map(|s| T::from_config(key, s)).collect()
    }
}

/// Route one config entry to the matching field; unknown keys are rejected.
macro_rules! apply_keys {
    ($args:expr, $key:expr, $value:expr; $($name:literal => $field:ident),+ $(,)?) => {
        match $key {
            $($name => $args.$field = FromConfigValue::from_config($name, $value)?,)+
            other => return Err(Error::Usage(format!("unknown config key {other:?}"))),
        }
    };
}

fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!("config line {}: expected key = value, got {raw:?}", i + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn apply_config_file(
    path: Option<PathBuf>,
    mut set: impl FnMut(&str, &str) -> Result<()>,
) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    for (key, value) in parse_config_file(&path)? {
        set(&key, &value)?;
    }
    Ok(())
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::Usage(format!("{flag} is required")))
}

/// The `[config]`/`[results]` document every command emits.
struct Report {
    config: Vec<(String, String)>,
    results: Vec<(String, String)>,
}

impl Report {
    fn new(command: &str) -> Self {
        Report { config: vec![("command".into(), command.into())], results: Vec::new() }
    }

    fn cfg(&mut self, key: &str, value: impl std::fmt::Display) {
        self.config.push((key.to_string(), value.to_string()));
    }

    fn res(&mut self, key: &str, value: impl std::fmt::Display) {
        self.results.push((key.to_string(), value.to_string()));
    }

    fn render(&self) -> String {
        let mut out = String::from("format_version: 1\n[config]\n");
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("[results]\n");
        for (k, v) in &self.results {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Print the document and optionally persist it.
    fn emit(&self, path: Option<&Path>) -> Result<()> {
        let text = self.render();
        print!("{text}");
        if let Some(path) = path {
            crate::write_atomic(path, &text)?;
        }
        Ok(())
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Parser, Debug)]
#[command(name = "polylearn", version, about = "Learn linear constraints with a rectifier network, extract them, and apply them in exact ILP solving and constrained sequence decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a family of random ILP instances over shared constraints.
    GenIlp(GenIlpArgs),
    /// Solve every instance of a family under its shared constraints.
    SolveIlp(SolveIlpArgs),
    /// Train a constraint network on template features from a corpus.
    Learn(LearnArgs),
    /// Convert a trained network into an explicit inequality system.
    Extract(ExtractArgs),
    /// End-to-end constraint recovery study on a generated ILP family.
    EvalIlp(EvalIlpArgs),
    /// Train a first-order sequence model on a labeled corpus.
    SeqTrain(SeqTrainArgs),
    /// Decode sequences with beam search under inequality systems.
    SeqDecode(SeqDecodeArgs),
    /// Compare the bundled entity-relation tables against the designed rules.
    EvalErTables(EvalErTablesArgs),
    /// Pretty-print a previously written report file.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenIlpArgs {
    /// Binary variables per instance.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Shared constraint rows.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Instances in the family.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output family file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional report file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveIlpArgs {
    /// Family file to solve.
    #[arg(long)]
    family: Option<PathBuf>,
    /// Output family file with gold assignments filled in.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional report file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LearnArgs {
    /// Feature template kind (e.g. ngram-labels, label-existence, pos-window).
    #[arg(long)]
    template: Option<String>,
    /// Window width for templates that take one.
    #[arg(long)]
    n: Option<usize>,
    /// Hidden rectifier units.
    #[arg(long)]
    hidden: Option<usize>,
    /// RNG seed for initialization, shuffling, and negative sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Labeled corpus (CoNLL columns), or a pair file for pair templates.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output network file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training passes per grid point.
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    /// Minibatch size; 0 trains on the full batch every step.
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Cap on generated negative examples.
    #[arg(long, default_value_t = 50_000)]
    cap: usize,
    /// Negative scheme for window templates: enumerate or random-perturb.
    #[arg(long, default_value = "enumerate")]
    scheme: String,
    /// Perturbation attempts per structure for random-perturb.
    #[arg(long, default_value_t = 10)]
    attempts: usize,
    /// Optional report file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Trained network file.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Output inequality-system file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Origin string to record (a template spec lets seq-decode recover it).
    #[arg(long)]
    origin: Option<String>,
    /// Optional report file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalIlpArgs {
    /// Binary variables per instance.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Shared constraint rows.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Instances in the family.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// RNG seed for generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden rectifier units.
    #[arg(long, default_value_t = 10)]
    hidden: usize,
    /// Fraction of instances used for training.
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    /// Training passes per grid point.
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    /// Minibatch size; 0 trains on the full batch every step.
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Fixed learning rate: train one configuration instead of the rate/decay grid.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Directory for the family, network, system, and report artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Report file (default: report.txt inside --out-dir).
    #[arg(long)]
    report: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SeqTrainArgs {
    /// Labeled corpus (CoNLL columns).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trainer: hinge or perceptron.
    #[arg(long, default_value = "hinge")]
    mode: String,
    /// Passes over the corpus.
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// RNG seed for example shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Step size for margin updates.
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// L2 regularization strength for the margin trainer.
    #[arg(long, default_value_t = 0.0)]
    trade_off: f64,
    /// Optional report file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SeqDecodeArgs {
    /// Sequence model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Corpus to decode (CoNLL columns; its labels serve as gold).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Score file with precomputed emissions instead of (or aligned with) --data.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Beam width.
    #[arg(long, default_value_t = 50)]
    beam: usize,
    /// Inequality-system files, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    systems: Vec<PathBuf>,
    /// Template specs matching --systems (default: each system's origin).
    #[arg(long, value_delimiter = ',')]
    templates: Vec<String>,
    /// Restore pruned candidates at dead ends and fall back to the
    /// unconstrained beam when nothing satisfies the systems.
    #[arg(long)]
    fallback: bool,
    /// Rank violating candidates after satisfying ones instead of pruning.
    #[arg(long)]
    rerank: bool,
    /// Corpus that provides the part-of-speech vocabulary for pos-window systems.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Write predictions as a CoNLL file.
    #[arg(long)]
    pred_out: Option<PathBuf>,
    /// Optional report file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalErTablesArgs {
    /// Optional report file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report file to pretty-print.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// `key = value` file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Run the CLI against `argv` (including the program name) and return the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    match execute(cli.command) {
        Ok(()) => {
            println!("runtime_seconds: {:.3}", started.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenIlp(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v;
                    "n" => n, "m" => m, "count" => count, "seed" => seed,
                    "out" => out, "report" => report);
                Ok(())
            })?;
            exec_gen_ilp(a)
        }
        Command::SolveIlp(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v; "family" => family, "out" => out, "report" => report);
                Ok(())
            })?;
            exec_solve_ilp(a)
        }
        Command::Learn(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v;
                    "template" => template, "n" => n, "hidden" => hidden, "seed" => seed,
                    "data" => data, "out" => out, "epochs" => epochs, "batch" => batch,
                    "cap" => cap, "scheme" => scheme, "attempts" => attempts,
                    "report" => report);
                Ok(())
            })?;
            exec_learn(a)
        }
        Command::Extract(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v;
                    "net" => net, "out" => out, "origin" => origin, "report" => report);
                Ok(())
            })?;
            exec_extract(a)
        }
        Command::EvalIlp(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v;
                    "n" => n, "m" => m, "count" => count, "seed" => seed, "hidden" => hidden,
                    "train-frac" => train_frac, "epochs" => epochs, "batch" => batch,
                    "learning-rate" => learning_rate, "out-dir" => out_dir, "report" => report);
                Ok(())
            })?;
            exec_eval_ilp(a)
        }
        Command::SeqTrain(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v;
                    "data" => data, "out" => out, "mode" => mode, "epochs" => epochs,
                    "seed" => seed, "learning-rate" => learning_rate,
                    "trade-off" => trade_off, "report" => report);
                Ok(())
            })?;
            exec_seq_train(a)
        }
        Command::SeqDecode(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v;
                    "model" => model, "data" => data, "scores" => scores, "beam" => beam,
                    "systems" => systems, "templates" => templates, "fallback" => fallback,
                    "rerank" => rerank, "train-data" => train_data, "pred-out" => pred_out,
                    "report" => report);
                Ok(())
            })?;
            exec_seq_decode(a)
        }
        Command::EvalErTables(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v; "report" => report);
                Ok(())
            })?;
            exec_eval_er_tables(a)
        }
        Command::Report(mut a) => {
            apply_config_file(a.config.clone(), |k, v| {
                apply_keys!(a, k, v; "in" => input);
                Ok(())
            })?;
            exec_report(a)
        }
    }
}

fn exec_gen_ilp(a: GenIlpArgs) -> Result<()> {
    let seed = require(a.seed, "--seed")?;
    let out = require(a.out, "--out")?;
    let (shared, instances) = generate_family(a.n, a.m, a.count, seed)?;
    let family = FamilyFile::unsolved(shared, instances)?;
    family.save(&out)?;
    let mut report = Report::new("gen-ilp");
    report.cfg("n", a.n);
    report.cfg("m", a.m);
    report.cfg("count", a.count);
    report.cfg("seed", seed);
    report.cfg("out", out.display());
    report.res("instances", family.instances.len());
    report.res("constraint_rows", family.shared.constraint_count());
    report.emit(a.report.as_deref())
}

fn exec_solve_ilp(a: SolveIlpArgs) -> Result<()> {
    let family_path = require(a.family, "--family")?;
    let out = require(a.out, "--out")?;
    let mut family = FamilyFile::load(&family_path)?;
    let solutions: Vec<_> = family
        .instances
        .par_iter()
        .map(|inst| solve_exact(inst, &IlpConstraintSet::Shared(&family.shared)))
        .collect::<Result<_>>()?;
    let mut infeasible = 0usize;
    let mut objective_sum = 0.0;
    let mut solved = 0usize;
    family.golds = solutions
        .into_iter()
        .map(|sol| match sol.status {
            SolveStatus::Optimal => {
                solved += 1;
                objective_sum += sol.objective;
                Some(sol.assignment)
            }
            SolveStatus::Infeasible => {
                infeasible += 1;
                None
            }
        })
        .collect();
    family.save(&out)?;
    let mut report = Report::new("solve-ilp");
    report.cfg("family", family_path.display());
    report.cfg("out", out.display());
    report.res("instances", family.instances.len());
    report.res("solved", solved);
    report.res("infeasible", infeasible);
    if solved > 0 {
        report.res("mean_objective", fmt_f(objective_sum / solved as f64));
    }
    report.emit(a.report.as_deref())
}

fn parse_scheme(s: &str) -> Result<WindowNegativeScheme> {
    match s {
        "enumerate" => Ok(WindowNegativeScheme::Enumerate),
        "random-perturb" => Ok(WindowNegativeScheme::RandomPerturb),
        other => Err(Error::Usage(format!("unknown scheme {other:?}: expected enumerate or random-perturb"))),
    }
}

fn template_from_flags(kind: &str, n: Option<usize>) -> Result<FeatureTemplate> {
    let spec = match n {
        Some(n) => format!("{kind}:{n}"),
        None => kind.to_string(),
    };
    FeatureTemplate::parse_spec(&spec).map_err(|e| Error::Usage(e.to_string()))
}

fn exec_learn(a: LearnArgs) -> Result<()> {
    let kind = require(a.template, "--template")?;
    let hidden = require(a.hidden, "--hidden")?;
    let seed = require(a.seed, "--seed")?;
    let data = require(a.data, "--data")?;
    let out = require(a.out, "--out")?;
    let template = template_from_flags(&kind, a.n)?;
    let scheme = parse_scheme(&a.scheme)?;

    let dataset = if let FeatureTemplate::PairIndicator { role } = template {
        let records = read_er_pairs(&data)?;
        pair_indicator_examples(role, &records)?
    } else {
        let corpus = read_conll(&data)?;
        let vocab = LabelVocab::from_corpus(&corpus)?;
        let options = NegativeGenOptions { cap: a.cap, window_scheme: scheme, perturb_attempts: a.attempts };
        generate_dataset(&template, &corpus, &vocab, seed, &options)?
    };
    let combined = dataset.combined();
    let base = TrainConfig {
        seed,
        epochs: a.epochs,
        batch_size: (a.batch > 0).then_some(a.batch),
        ..TrainConfig::default()
    };
    let outcome = train_grid(dataset.dim, hidden, &combined, &base, &LR_GRID, &LR_DECAY_GRID)?;
    outcome.net.save(&out)?;
    let train_acc = classification_accuracy(&outcome.net, &combined)?;

    let mut report = Report::new("learn");
    report.cfg("template", template.spec_string());
    report.cfg("hidden", hidden);
    report.cfg("seed", seed);
    report.cfg("data", data.display());
    report.cfg("out", out.display());
    report.cfg("epochs", a.epochs);
    report.cfg("batch", a.batch);
    report.cfg("cap", a.cap);
    report.cfg("scheme", a.scheme);
    report.cfg("attempts", a.attempts);
    report.res("positives", dataset.positives.len());
    report.res("negatives", dataset.negatives.len());
    report.res("input_dim", dataset.dim);
    report.res("chosen_learning_rate", outcome.learning_rate);
    report.res("chosen_lr_decay", outcome.lr_decay);
    report.res("holdout_accuracy", fmt_f(outcome.holdout_accuracy));
    report.res("train_accuracy", fmt_f(train_acc));
    if let Some(loss) = outcome.history.last() {
        report.res("final_loss", fmt_f(*loss));
    }
    report.emit(a.report.as_deref())
}

fn exec_extract(a: ExtractArgs) -> Result<()> {
    let net_path = require(a.net, "--net")?;
    let out = require(a.out, "--out")?;
    let net = ConstraintNet::load(&net_path)?;
    let mut system = extract_system(&net)?;
    if let Some(origin) = a.origin {
        system.origin = origin;
    }
    system.save(&out)?;
    let mut report = Report::new("extract");
    report.cfg("net", net_path.display());
    report.cfg("out", out.display());
    report.cfg("origin", &system.origin);
    report.res("hidden", net.hidden_count());
    report.res("input_dim", system.input_dim);
    report.res("inequalities", system.len());
    report.emit(a.report.as_deref())
}

fn exec_eval_ilp(a: EvalIlpArgs) -> Result<()> {
    let seed = require(a.seed, "--seed")?;
    let out_dir = require(a.out_dir, "--out-dir")?;
    if !(a.train_frac > 0.0 && a.train_frac < 1.0) {
        return Err(Error::Usage("--train-frac must be strictly between 0 and 1".into()));
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let (shared, instances) = generate_family(a.n, a.m, a.count, seed)?;
    let solutions: Vec<_> = instances
        .par_iter()
        .map(|inst| solve_exact(inst, &IlpConstraintSet::Shared(&shared)))
        .collect::<Result<_>>()?;
    if let Some(i) = solutions.iter().position(|s| s.status != SolveStatus::Optimal) {
        return Err(Error::InvalidParameter(format!("generated instance {i} is infeasible")));
    }
    let train_count = (a.count as f64 * a.train_frac).round() as usize;
    if train_count == 0 || train_count >= a.count {
        return Err(Error::Usage(format!(
            "--train-frac {} leaves an empty split for {} instances",
            a.train_frac, a.count
        )));
    }

    let pairs = make_training_pairs(&instances[..train_count], &solutions[..train_count])?;
    let combined = pairs.combined();
    let base = TrainConfig {
        seed,
        epochs: a.epochs,
        batch_size: (a.batch > 0).then_some(a.batch),
        ..TrainConfig::default()
    };
    let (net, chosen_lr, chosen_decay, holdout) = match a.learning_rate {
        Some(rate) => {
            let config = TrainConfig { learning_rate: rate, ..base };
            let (net, _) = train(a.n, a.hidden, &combined, &config)?;
            (net, rate, config.lr_decay, None)
        }
        None => {
            let o = train_grid(a.n, a.hidden, &combined, &base, &LR_GRID, &LR_DECAY_GRID)?;
            (o.net, o.learning_rate, o.lr_decay, Some(o.holdout_accuracy))
        }
    };
    let system = extract_system(&net)?;
    let metrics = crate::ilp::evaluate_recovery(&instances[train_count..], &shared, &system, &net)?;

    let golds = solutions.iter().map(|s| Some(s.assignment.clone())).collect();
    FamilyFile::new(shared, instances, golds)?.save(&out_dir.join("family.txt"))?;
    net.save(&out_dir.join("net.txt"))?;
    system.save(&out_dir.join("system.txt"))?;

    let mut report = Report::new("eval-ilp");
    report.cfg("n", a.n);
    report.cfg("m", a.m);
    report.cfg("count", a.count);
    report.cfg("seed", seed);
    report.cfg("hidden", a.hidden);
    report.cfg("train_frac", a.train_frac);
    report.cfg("epochs", a.epochs);
    report.cfg("batch", a.batch);
    report.cfg(
        "learning_rate",
        a.learning_rate.map_or_else(|| "grid".into(), |v| v.to_string()),
    );
    report.cfg("out_dir", out_dir.display());
    report.res("train_instances", train_count);
    report.res("test_instances", metrics.instances);
    report.res("training_positives", pairs.positives.len());
    report.res("training_negatives", pairs.negatives.len());
    report.res("chosen_learning_rate", chosen_lr);
    report.res("chosen_lr_decay", chosen_decay);
    if let Some(h) = holdout {
        report.res("holdout_accuracy", fmt_f(h));
    }
    report.res("inequalities", system.len());
    report.res("classification_accuracy_pct", fmt_f(metrics.classification_acc));
    report.res("bitwise_accuracy_pct", fmt_f(metrics.bitwise_acc));
    report.res("baseline_bitwise_accuracy_pct", fmt_f(metrics.baseline_bitwise_acc));
    report.res("original_satisfied_pct", fmt_f(metrics.original_satisfied));
    report.res("baseline_original_satisfied_pct", fmt_f(metrics.baseline_original_satisfied));
    report.res("learned_satisfied_by_gold_pct", fmt_f(metrics.learned_satisfied));
    report.res("fallback_instances", metrics.fallback_instances.len());
    let report_path = a.report.unwrap_or_else(|| out_dir.join("report.txt"));
    report.emit(Some(&report_path))
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    match s {
        "hinge" => Ok(TrainMode::StructuredHinge),
        "perceptron" => Ok(TrainMode::AveragedPerceptron),
        other => Err(Error::Usage(format!("unknown mode {other:?}: expected hinge or perceptron"))),
    }
}

fn exec_seq_train(a: SeqTrainArgs) -> Result<()> {
    let data = require(a.data, "--data")?;
    let out = require(a.out, "--out")?;
    let seed = require(a.seed, "--seed")?;
    let mode = parse_mode(&a.mode)?;
    let corpus = read_conll(&data)?;
    let config = MarkovTrainConfig {
        mode,
        epochs: a.epochs,
        seed,
        learning_rate: a.learning_rate,
        trade_off: a.trade_off,
    };
    let model = train_markov(&corpus, &config)?;
    model.save(&out)?;

    let predictions: Vec<Vec<String>> = corpus
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            viterbi(&model, &DecodeInput::from_sequence(seq)).map_err(|e| Error::in_sequence(i, e))
        })
        .collect::<Result<_>>()?;
    let golds: Vec<Vec<String>> = corpus.iter().map(|s| s.labels.clone()).collect();
    let train_acc = token_accuracy(&predictions, &golds)?;

    let mut report = Report::new("seq-train");
    report.cfg("data", data.display());
    report.cfg("out", out.display());
    report.cfg("mode", a.mode);
    report.cfg("epochs", a.epochs);
    report.cfg("seed", seed);
    report.cfg("learning_rate", a.learning_rate);
    report.cfg("trade_off", a.trade_off);
    report.res("sequences", corpus.len());
    report.res("labels", model.label_count());
    report.res("features", model.feature_count());
    report.res("train_token_accuracy", fmt_f(train_acc));
    report.emit(a.report.as_deref())
}

/// Load systems and pair each with its feature template, taken from
/// `--templates` when given and from the system's recorded origin otherwise.
fn load_decode_systems(
    paths: &[PathBuf],
    specs: &[String],
) -> Result<Vec<(ConstraintSystem, FeatureTemplate)>> {
    if !specs.is_empty() && specs.len() != paths.len() {
        return Err(Error::Usage(format!(
            "--templates lists {} specs for {} systems",
            specs.len(),
            paths.len()
        )));
    }
    let mut out = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let system = ConstraintSystem::load(path)?;
        let template = if let Some(spec) = specs.get(i) {
            FeatureTemplate::parse_spec(spec).map_err(|e| Error::Usage(e.to_string()))?
        } else {
            FeatureTemplate::parse_spec(&system.origin).map_err(|_| {
                Error::Usage(format!(
                    "system {} records origin {:?}, which is not a template spec; pass --templates",
                    path.display(),
                    system.origin
                ))
            })?
        };
        out.push((system, template));
    }
    Ok(out)
}

fn exec_seq_decode(a: SeqDecodeArgs) -> Result<()> {
    let score_file = a.scores.as_deref().map(load_scores).transpose()?;
    let corpus = a.data.as_deref().map(read_conll).transpose()?;
    if corpus.is_none() && score_file.is_none() {
        return Err(Error::Usage("--data or --scores is required".into()));
    }
    let model = match (&a.model, &score_file) {
        (Some(path), _) => SequenceModel::load(path)?,
        (None, Some(f)) => SequenceModel::from_parts(f.labels.clone(), f.transitions.clone())?,
        (None, None) => return Err(Error::Usage("--model is required when decoding --data".into())),
    };
    if let (Some(corpus), Some(f)) = (&corpus, &score_file) {
        if corpus.len() != f.sentences.len() {
            return Err(Error::LengthMismatch { left: corpus.len(), right: f.sentences.len() });
        }
    }

    let systems = load_decode_systems(&a.systems, &a.templates)?;
    let needs_pos = systems.iter().any(|(_, t)| matches!(t, FeatureTemplate::PosWindow { .. }));
    let pos_values = if needs_pos {
        let train = require(a.train_data.as_ref(), "--train-data (for pos-window systems)")?;
        let train_corpus = read_conll(train)?;
        LabelVocab::from_corpus(&train_corpus)?.pos_values().to_vec()
    } else {
        Vec::new()
    };
    let vocab = LabelVocab::new(model.labels().to_vec(), pos_values)?;
    let options = BeamOptions { beam_width: a.beam, fallback: a.fallback, rerank: a.rerank };

    let count = corpus.as_ref().map(|c| c.len()).unwrap_or_else(|| {
        score_file.as_ref().map(|f| f.sentences.len()).unwrap_or(0)
    });
    let mut predictions = Vec::with_capacity(count);
    let mut mid_restores = 0usize;
    let mut fallback_decodes = 0usize;
    for i in 0..count {
        let input = match (&corpus, &score_file) {
            (Some(c), Some(f)) => DecodeInput::with_scores(&c[i], &f.sentences[i]),
            (Some(c), None) => DecodeInput::from_sequence(&c[i]),
            (None, Some(f)) => DecodeInput::from_scores(&f.sentences[i]),
            (None, None) => unreachable!("checked above"),
        };
        let (labels, log) = beam_decode_full(&model, &input, &systems, &vocab, &options)
            .map_err(|e| Error::in_sequence(i, e))?;
        mid_restores += log.mid_restores;
        fallback_decodes += log.used_fallback as usize;
        predictions.push(labels);
    }

    let mut report = Report::new("seq-decode");
    if let Some(path) = &a.model {
        report.cfg("model", path.display());
    }
    if let Some(path) = &a.data {
        report.cfg("data", path.display());
    }
    if let Some(path) = &a.scores {
        report.cfg("scores", path.display());
    }
    report.cfg("beam", a.beam);
    report.cfg("systems", join_paths(&a.systems));
    let specs: Vec<String> = systems.iter().map(|(_, t)| t.spec_string()).collect();
    report.cfg("templates", specs.join(","));
    report.cfg("fallback", a.fallback);
    report.cfg("rerank", a.rerank);
    if let Some(path) = &a.train_data {
        report.cfg("train_data", path.display());
    }
    report.res("sentences", count);
    report.res("tokens", predictions.iter().map(|p| p.len()).sum::<usize>());
    report.res("mid_restores", mid_restores);
    report.res("fallback_decodes", fallback_decodes);
    if let Some(corpus) = &corpus {
        let golds: Vec<Vec<String>> = corpus.iter().map(|s| s.labels.clone()).collect();
        report.res("token_accuracy", fmt_f(token_accuracy(&predictions, &golds)?));
    }

    if let Some(pred_out) = &a.pred_out {
        let corpus = corpus.as_ref().ok_or_else(|| {
            Error::Usage("--pred-out needs --data to supply the tokens".into())
        })?;
        let tagged: Vec<TaggedSequence> = corpus
            .iter()
            .zip(&predictions)
            .map(|(seq, labels)| {
                TaggedSequence::new(seq.tokens.clone(), seq.pos_tags.clone(), labels.clone())
            })
            .collect::<Result<_>>()?;
        write_conll(pred_out, &tagged)?;
        report.cfg("pred_out", pred_out.display());
    }
    report.emit(a.report.as_deref())
}

fn exec_eval_er_tables(a: EvalErTablesArgs) -> Result<()> {
    let reports = eval_er_tables()?;
    let mut report = Report::new("eval-er-tables");
    let mut total = 0usize;
    for table in &reports {
        let name = table.table.replace('-', "_");
        report.res(&format!("{name}_pairs"), table.pairs.len());
        report.res(&format!("{name}_disagreements"), table.disagreements);
        total += table.disagreements;
        for (i, pair) in table.pairs.iter().filter(|p| !p.agrees()).enumerate() {
            report.res(
                &format!("{name}_disagreement_{}", i),
                format!(
                    "({}, {}) learned={} designed={} margin={}",
                    pair.first,
                    pair.second,
                    pair.learned,
                    pair.designed,
                    fmt_f(pair.margin)
                ),
            );
        }
    }
    report.res("total_disagreements", total);
    report.emit(a.report.as_deref())
}

fn exec_report(a: ReportArgs) -> Result<()> {
    let path = require(a.input, "--in")?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "format_version: 1")) => {}
        Some((i, other)) => {
            return Err(Error::parse(i + 1, format!("expected \"format_version: 1\", got {other:?}")))
        }
        None => return Err(Error::EmptyInput("report file")),
    }
    let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            sections.push((name.to_string(), Vec::new()));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, got {line:?}")))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| Error::parse(i + 1, "entry before any [section] header"))?;
        section.1.push((key.trim().to_string(), value.trim().to_string()));
    }
    println!("{}", path.display());
    for (name, entries) in &sections {
        println!("  {name}:");
        let width = entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (key, value) in entries {
            println!("    {key:<width$}  {value}");
        }
    }
    Ok(())
}
