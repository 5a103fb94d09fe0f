use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use faithcheck::classifier::{BatchOptions, HttpScorer, MockScorer, Scorer, SCORER_TOKEN_ENV, SCORER_URL_ENV};
use faithcheck::corpus::{
    load_examples, save_examples, slice_test_set, ErrorType, EvalSlice, Example, KnowledgeBase, SliceKind,
    SplitAssignment,
};
use faithcheck::demo::{self, DemoConfig};
use faithcheck::report::{self, evaluate, EvalOptions, Granularity, MethodScores};
use faithcheck::rouge::{RougeDetector, RougeOptions};
use faithcheck::salience::synthetic::synthetic_map;
use faithcheck::salience::{map_file_name, Aggregation, MeanKind, SalienceDetector, SalienceMap};
use faithcheck::scores::{classifier_records, load_scores, rouge_records, salience_records, save_scores};
use faithcheck::synth::generate_synthetic_corpus;
use faithcheck::textproc::{StopWords, TextProcessor};
use faithcheck::{seed, Error};

/// Detect hallucination and coverage errors in responses generated from
/// pro/con arguments, and evaluate detectors on labeled slices.
#[derive(Parser, Debug)]
#[command(name = "faithcheck", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derive synthetic coverage and hallucination errors from error-free examples.
    Synth(SynthArgs),
    /// Score examples with one detector.
    Detect(DetectArgs),
    /// Extract one evaluation slice for one error type.
    Slice(SliceArgs),
    /// ROC AUCs, standard errors and paired significance tests.
    Eval(EvalArgs),
    /// Inter-annotator agreement against gold labels.
    Agreement(AgreementArgs),
    /// Run the bundled miniature benchmark end to end.
    Demo(DemoArgs),
    /// Write synthetic salience maps, one file per example.
    MockSalience(MockSalienceArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Examples file; only error-free examples are used.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the edit applied to each synthetic example.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Rouge,
    Salience,
    Classifier,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AggregationArg {
    Max,
    Sum,
    NegEntropy,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Max => Aggregation::Max,
            AggregationArg::Sum => Aggregation::Sum,
            AggregationArg::NegEntropy => Aggregation::NegEntropy,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MeanArg {
    Geometric,
    Arithmetic,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Examples file; may be repeated.
    #[arg(long = "in", required = true)]
    input: Vec<PathBuf>,
    /// Knowledge base to validate examples against.
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Directory of salience maps named after example ids.
    #[arg(long)]
    salience_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "max")]
    aggregation: AggregationArg,
    #[arg(long, value_enum, default_value = "geometric")]
    mean: MeanArg,
    #[arg(long, env = SCORER_URL_ENV)]
    scorer_url: Option<String>,
    /// Use the deterministic offline scorer instead of an endpoint.
    #[arg(long)]
    mock_scorer: bool,
    #[arg(long, default_value_t = 3)]
    max_attempts: usize,
    /// ROUGE: match argument phrases only, without explanations.
    #[arg(long)]
    phrases_only: bool,
    /// Stop word list, one word per line.
    #[arg(long)]
    stop_words: Option<PathBuf>,
    /// Include word-level scores.
    #[arg(long)]
    word_level: bool,
    /// Parallel workers (in-flight requests for the classifier).
    #[arg(long, default_value_t = 4)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SliceArg {
    FullOrganic,
    UnparaphrasedSynthetic,
    ParaphrasedSynthetic,
    AmbiguousOrganic,
}

impl From<SliceArg> for SliceKind {
    fn from(s: SliceArg) -> Self {
        match s {
            SliceArg::FullOrganic => SliceKind::FullOrganic,
            SliceArg::UnparaphrasedSynthetic => SliceKind::UnparaphrasedSynthetic,
            SliceArg::ParaphrasedSynthetic => SliceKind::ParaphrasedSynthetic,
            SliceArg::AmbiguousOrganic => SliceKind::AmbiguousOrganic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ErrorTypeArg {
    Hallucination,
    Coverage,
}

impl From<ErrorTypeArg> for ErrorType {
    fn from(e: ErrorTypeArg) -> Self {
        match e {
            ErrorTypeArg::Hallucination => ErrorType::Hallucination,
            ErrorTypeArg::Coverage => ErrorType::Coverage,
        }
    }
}

#[derive(Args, Debug)]
struct SliceArgs {
    /// Examples file; may be repeated (e.g. organic and synthetic).
    #[arg(long = "in", required = true)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum)]
    kind: SliceArg,
    #[arg(long, value_enum)]
    error_type: ErrorTypeArg,
    /// Keep only test-split topics of this split file (`procon` for the
    /// bundled assignment).
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Scores file as NAME=PATH (or PATH, named after the file stem); repeat
    /// for every method.
    #[arg(long = "scores", required = true)]
    scores: Vec<String>,
    /// Slice file; may be repeated.
    #[arg(long = "slice", required = true)]
    slices: Vec<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    n_perm: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate word-level scores as well.
    #[arg(long)]
    word_level: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the CSV summary.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AgreementArgs {
    /// JSON list of {rater, example_id, error_type, label}.
    #[arg(long)]
    ratings: PathBuf,
    /// JSON list of {example_id, error_type, label}, or an examples file.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// Directory for the generated artifacts.
    #[arg(long, default_value = "faithcheck-demo")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    n_perm: usize,
}

#[derive(Args, Debug)]
struct MockSalienceArgs {
    #[arg(long = "in", required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn load_all(paths: &[PathBuf], kb: Option<&KnowledgeBase>) -> Result<Vec<Example>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(load_examples(p, kb)?);
    }
    Ok(all)
}

fn text_processor(stop_words: Option<&Path>) -> Result<TextProcessor> {
    Ok(match stop_words {
        Some(path) => TextProcessor::new(StopWords::from_file(path)?),
        None => TextProcessor::english(),
    })
}

fn synth(args: SynthArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&args.kb)?;
    let examples = load_examples(&args.input, Some(&kb))?;
    let error_free: Vec<Example> = examples.into_iter().filter(|e| e.labels.is_error_free()).collect();
    let corpus = generate_synthetic_corpus(&error_free, &kb, seed::derive(args.seed, "synth"));
    save_examples(&corpus.examples, &args.out)?;
    if let Some(path) = &args.records {
        let text = serde_json::to_string_pretty(&corpus.records)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    for s in &corpus.skipped {
        eprintln!("skipped {} variant of {}: {}", s.variant, s.id, s.reason);
    }
    eprintln!(
        "{} synthetic examples from {} error-free inputs",
        corpus.examples.len(),
        error_free.len()
    );
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    // Check flag combinations before touching any file.
    match args.method {
        Method::Salience if args.salience_dir.is_none() => {
            return Err(Usage("--method salience requires --salience-dir DIR".into()).into())
        }
        Method::Classifier if args.scorer_url.is_none() && !args.mock_scorer => {
            return Err(Usage(format!(
                "--method classifier requires --scorer-url URL, {SCORER_URL_ENV}, or --mock-scorer"
            ))
            .into())
        }
        _ => {}
    }
    let kb = args.kb.as_deref().map(KnowledgeBase::load).transpose()?;
    let examples = load_all(&args.input, kb.as_ref())?;
    let text = text_processor(args.stop_words.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .context("starting worker pool")?;

    let records = match args.method {
        Method::Rouge => {
            let detector = RougeDetector::new(
                text,
                RougeOptions {
                    phrases_only: args.phrases_only,
                },
            );
            pool.install(|| rouge_records(&examples, &detector, args.word_level))?
        }
        Method::Salience => {
            let dir = args.salience_dir.as_deref().expect("checked above");
            let mean = match args.mean {
                MeanArg::Geometric => MeanKind::Geometric,
                MeanArg::Arithmetic => MeanKind::Arithmetic,
            };
            let detector = SalienceDetector::new(text, args.aggregation.into(), mean);
            let map_for = |e: &Example| SalienceMap::load(&dir.join(map_file_name(&e.id)));
            pool.install(|| salience_records(&examples, &detector, map_for, args.word_level))?
        }
        Method::Classifier => {
            let scorer: Box<dyn Scorer> = if args.mock_scorer {
                Box::new(MockScorer::hashed())
            } else {
                let url = args.scorer_url.clone().expect("checked above");
                Box::new(HttpScorer::new(url, std::env::var(SCORER_TOKEN_ENV).ok())?)
            };
            let options = BatchOptions {
                max_attempts: args.max_attempts.max(1),
                concurrency: args.jobs.max(1),
                retry_delay: Duration::from_millis(250),
            };
            let (records, failures) = classifier_records(&examples, scorer.as_ref(), &options);
            if !failures.is_empty() {
                save_scores(&records, &args.out)?;
                for (task, f) in &failures {
                    eprintln!("failed to score {} ({task}): {}", f.id, f.error);
                }
                let failed: std::collections::BTreeSet<&str> = failures.iter().map(|(_, f)| f.id.as_str()).collect();
                let transport = failures.iter().any(|(_, f)| f.transport);
                let message = format!(
                    "{} of {} examples could not be scored; partial scores written",
                    failed.len(),
                    examples.len()
                );
                return Err(if transport {
                    Error::Transport(message).into()
                } else {
                    Error::MalformedReply(message).into()
                });
            }
            records
        }
    };
    save_scores(&records, &args.out)?;
    eprintln!("scored {} examples", records.len());
    Ok(())
}

fn slice(args: SliceArgs) -> Result<()> {
    let mut examples = load_all(&args.input, None)?;
    if let Some(split) = &args.split {
        let assignment = if split == "procon" {
            SplitAssignment::procon_default()
        } else {
            SplitAssignment::load(Path::new(split))?
        };
        examples.retain(|e| assignment.test.contains(&e.topic_id));
    }
    let slice = slice_test_set(&examples, args.kind.into(), args.error_type.into());
    slice.save(&args.out)?;
    eprintln!(
        "{} / {}: {} error-free, {} with error",
        slice.kind,
        slice.error_type,
        slice.error_free.len(),
        slice.with_error.len()
    );
    Ok(())
}

fn parse_scores_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            (name, path)
        }
    }
}

fn print_summary(report: &report::EvalReport) {
    for e in &report.entries {
        println!(
            "{:<24} {:<13} {:<10} {:<7} AUC {:.3} ± {:.3}  ({} error / {} clean)",
            e.slice.name(),
            e.error_type.to_string(),
            e.method,
            e.granularity.name(),
            e.auc,
            e.std_error,
            e.n_error,
            e.n_clean
        );
    }
    for c in &report.comparisons {
        println!(
            "{:<24} {:<13} {} vs {} ({}): p = {:.4}, Bonferroni p = {:.4}",
            c.slice.name(),
            c.error_type.to_string(),
            c.method_a,
            c.method_b,
            c.granularity.name(),
            c.p_raw,
            c.p_bonferroni
        );
    }
    for s in &report.skipped {
        eprintln!("skipped: {s}");
    }
}

fn eval(args: EvalArgs) -> Result<()> {
    let methods = args
        .scores
        .iter()
        .map(|arg| {
            let (name, path) = parse_scores_arg(arg);
            Ok(MethodScores {
                name,
                records: load_scores(&path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slices = args
        .slices
        .iter()
        .map(|p| EvalSlice::load(p))
        .collect::<faithcheck::Result<Vec<_>>>()?;
    let options = EvalOptions {
        n_perm: args.n_perm,
        seed: args.seed,
        word_level: args.word_level,
    };
    let report = evaluate(&slices, &methods, &options)?;
    report.save_json(&args.out)?;
    if let Some(csv) = &args.csv {
        report.save_csv(csv)?;
    }
    print_summary(&report);
    Ok(())
}

fn agreement(args: AgreementArgs) -> Result<()> {
    let ratings = report::load_ratings(&args.ratings)?;
    let gold = match report::load_gold(&args.gold) {
        Ok(gold) => gold,
        Err(Error::Parse { .. }) => report::gold_from_examples(&load_examples(&args.gold, None)?),
        Err(e) => return Err(e.into()),
    };
    let stats = report::agreement(&ratings, &gold)?;
    let out = report::EvalReport {
        agreement: stats,
        ..Default::default()
    };
    out.save_json(&args.out)?;
    for a in &out.agreement {
        println!(
            "{:<13} alpha {:.3}  majority-vote agreement {:.3}  ({} items, {} raters)",
            a.error_type.to_string(),
            a.alpha,
            a.majority_vote_agreement,
            a.n_items,
            a.n_raters
        );
    }
    Ok(())
}

fn run_demo(args: DemoArgs) -> Result<()> {
    let config = DemoConfig {
        seed: args.seed,
        n_perm: args.n_perm,
        ..DemoConfig::default()
    };
    let run = demo::run(&config)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    run.write(&args.out)?;
    eprintln!(
        "{} organic and {} synthetic examples; artifacts in {}",
        run.organic.len(),
        run.synthetic.examples.len(),
        args.out.display()
    );
    print_summary(&run.report);
    let weakest = run
        .report
        .entries
        .iter()
        .filter(|e| e.granularity == Granularity::Example)
        .map(|e| e.auc)
        .fold(f64::INFINITY, f64::min);
    eprintln!("lowest example-level AUC: {weakest:.3}");
    Ok(())
}

fn mock_salience(args: MockSalienceArgs) -> Result<()> {
    let examples = load_all(&args.input, None)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let text = TextProcessor::english();
    let map_seed = seed::derive(args.seed, "salience");
    for e in &examples {
        synthetic_map(e, &text, map_seed)?.save(&args.out_dir.join(map_file_name(&e.id)))?;
    }
    eprintln!("wrote {} salience maps", examples.len());
    Ok(())
}

/// A flag combination clap cannot express.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// 2 for I/O and transport failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_environmental() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

/// The error and its causes, skipping causes already quoted by the
/// message before them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Detect(a) => detect(a),
        Command::Slice(a) => slice(a),
        Command::Eval(a) => eval(a),
        Command::Agreement(a) => agreement(a),
        Command::Demo(a) => run_demo(a),
        Command::MockSalience(a) => mock_salience(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if err.is::<Usage>() {
                eprintln!("error: {err}\n\nFor more information, try '--help'.");
            } else {
                eprintln!("error: {}", describe(&err));
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
