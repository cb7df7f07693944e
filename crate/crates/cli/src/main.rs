//! `nlpipe`: train, evaluate, and apply the pipeline from the command
//! line. Exit codes: 0 success, 1 usage/config error, 2 data error,
//! 3 training failure.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlpipe_core::config::PipelineConfig;
use nlpipe_core::corpus::{read_conllu, read_iob, write_conllu, write_iob, Dataset};
use nlpipe_core::error::Error;
use nlpipe_core::metrics::{iaa_report, MetricValue, MetricsReport};
use nlpipe_core::nn::{write_blob, ParamStore};
use nlpipe_core::pipeline::{
    benchmark, read_cats_jsonl, write_cats_jsonl, Pipeline, TrainData,
};
use nlpipe_core::tok2vec::{pretrain, train_floret, Tok2Vec};
use nlpipe_core::toygen;

#[derive(Parser)]
#[command(name = "nlpipe", version, about = "Trainable NLP pipeline toolkit")]
struct Cli {
    /// Pipeline configuration file (INI-style).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the [system].seed value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory searched when loading models by name.
    #[arg(long, global = true)]
    models_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a corpus between formats.
    Convert(ConvertArgs),
    /// Character-cloze pretraining of the token encoder.
    Pretrain(OutputArgs),
    /// Train static subword vectors.
    Vectors(OutputArgs),
    /// Train the full pipeline described by the config.
    Train(OutputArgs),
    /// Score a trained model against annotated data.
    Evaluate(ModelArgs),
    /// Annotate stdin text, one line per document, as JSON lines.
    Predict(ModelArgs),
    /// Inter-annotator agreement over aligned IOB2 files.
    Agreement(AgreementArgs),
    /// Cross-validated / multi-trial benchmark per the config.
    Benchmark(JsonArgs),
    /// Write the bundled toy corpus in all three formats.
    GenToy(GenToyArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Input format: conllu, iob, or jsonl.
    #[arg(long)]
    from: String,
    /// Output format: conllu, iob, or jsonl.
    #[arg(long)]
    to: String,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct OutputArgs {
    /// Output path (defaults to [paths].output from the config).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model directory or name under the models directory.
    model: String,
    /// Also print the report as JSON (evaluate only).
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AgreementArgs {
    /// Aligned IOB2 files, one per annotator (single round), or use
    /// --round for multiple rounds.
    files: Vec<PathBuf>,
    /// Round spec NAME=FILE1,FILE2,... (repeatable).
    #[arg(long)]
    round: Vec<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct JsonArgs {
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenToyArgs {
    #[arg(long, default_value_t = 32)]
    sentences: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving toy.conllu, toy.iob, and toy.jsonl.
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successes; everything else is a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 1,
        Error::Training { .. } | Error::Shape { .. } => 3,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("this command requires --config"))?;
    let mut cfg = PipelineConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        let text = std::fs::read_to_string(path)?;
        // Re-resolve with the override so stage seeds pick it up too.
        cfg = PipelineConfig::parse(&text)?;
        cfg.seed = seed;
        cfg.pretrain.seed = seed;
        cfg.vectors.seed = seed;
        cfg.training.seed = seed;
    }
    Ok(cfg)
}

fn read_corpus(path: &Path, format: &str) -> Result<Dataset, Error> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    match format {
        "conllu" => read_conllu(BufReader::new(file)),
        "iob" => {
            let read = read_iob(BufReader::new(file))?;
            if read.repairs > 0 {
                eprintln!("{}: repaired {} dangling I- tags", path.display(), read.repairs);
            }
            Ok(read.dataset)
        }
        "jsonl" => {
            let mut text = String::new();
            BufReader::new(file).read_to_string(&mut text)?;
            read_cats_jsonl(&text)
        }
        other => Err(Error::config(format!("unknown format {other:?} (use conllu, iob, or jsonl)"))),
    }
}

fn guess_format(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("conllu") => "conllu",
        Some("iob") | Some("tsv") => "iob",
        _ => "jsonl",
    }
}

fn load_train_data(cfg: &PipelineConfig) -> Result<TrainData, Error> {
    let mut data = TrainData::default();
    let read = |p: &Option<String>| -> Result<Dataset, Error> {
        match p {
            Some(p) => read_corpus(Path::new(p), guess_format(Path::new(p))),
            None => Ok(Dataset::default()),
        }
    };
    data.treebank_train = read(&cfg.paths.train)?;
    data.treebank_dev = read(&cfg.paths.dev)?;
    data.ner_train = read(&cfg.paths.ner_train)?;
    data.ner_dev = read(&cfg.paths.ner_dev)?;
    data.cat_train = read(&cfg.paths.cat_train)?;
    data.cat_dev = read(&cfg.paths.cat_dev)?;
    data.raw = read(&cfg.paths.raw)?;
    // Components without their own corpus fall back to the treebank,
    // which the toy generator annotates for every task.
    if data.ner_train.is_empty() {
        data.ner_train = data.treebank_train.clone();
    }
    if data.cat_train.is_empty() {
        data.cat_train = data.treebank_train.clone();
    }
    Ok(data)
}

fn output_path(cfg: &PipelineConfig, args: &OutputArgs) -> Result<PathBuf, Error> {
    args.output
        .clone()
        .or_else(|| cfg.paths.output.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::config("no output path: pass --output or set [paths].output"))
}

fn print_report(report: &MetricsReport, json: bool) -> Result<(), Error> {
    print!("{}", report.to_table());
    for note in &report.notes {
        println!("# {note}");
    }
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Convert(args) => {
            let ds = read_corpus(&args.input, &args.from)?;
            let text = match args.to.as_str() {
                "conllu" => write_conllu(&ds)?,
                "iob" => write_iob(&ds)?,
                "jsonl" => write_cats_jsonl(&ds)?,
                other => {
                    return Err(Error::config(format!(
                        "unknown format {other:?} (use conllu, iob, or jsonl)"
                    )))
                }
            };
            std::fs::write(&args.output, text)?;
            println!("wrote {} sentences to {}", ds.len(), args.output.display());
        }
        Command::Pretrain(args) => {
            let cfg = load_config(&cli)?;
            let out = output_path(&cfg, args)?;
            let data = load_train_data(&cfg)?;
            let encoder = Tok2Vec::new(cfg.tok2vec.clone());
            let corpus = if data.raw.is_empty() { data.treebank_train.clone() } else { data.raw };
            let (store, losses) = pretrain(&encoder, &corpus, &cfg.pretrain, None)?;
            for (epoch, loss) in losses.iter().enumerate() {
                println!("epoch {epoch}: cloze loss {loss:.6}");
            }
            let mut f = std::fs::File::create(&out)?;
            write_blob(&mut f, &store)?;
            println!("wrote pretrained weights to {}", out.display());
        }
        Command::Vectors(args) => {
            let cfg = load_config(&cli)?;
            let out = output_path(&cfg, args)?;
            let data = load_train_data(&cfg)?;
            let corpus = if data.raw.is_empty() { data.treebank_train.clone() } else { data.raw };
            let table = train_floret(&corpus, &cfg.vectors)?;
            let mut store = ParamStore::new();
            store.add("floret.weights".to_string(), table.weights.clone());
            let mut f = std::fs::File::create(&out)?;
            write_blob(&mut f, &store)?;
            println!(
                "wrote {} x {} bucket table to {}",
                table.buckets,
                table.width,
                out.display()
            );
        }
        Command::Train(args) => {
            let cfg = load_config(&cli)?;
            let out = output_path(&cfg, args)?;
            let data = load_train_data(&cfg)?;
            let pipeline = Pipeline::train(&cfg, &data)?;
            pipeline.save(&out)?;
            println!(
                "trained [{}] into {}",
                pipeline.meta.components.join(", "),
                out.display()
            );
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&cli)?;
            let pipeline = Pipeline::load(&args.model, cli.models_dir.as_deref())?;
            let data = load_train_data(&cfg)?;
            let eval = if data.treebank_dev.is_empty() {
                data.treebank_train.clone()
            } else {
                data.treebank_dev.clone()
            };
            let mut report = MetricsReport::default();
            if let Some(t) = &pipeline.tagger {
                report.insert(
                    "pos_accuracy",
                    MetricValue::single(t.accuracy(&eval, pipeline.floret.as_ref())?),
                );
            }
            if let Some(p) = &pipeline.parser {
                let (uas, las) = p.attachment(&eval, pipeline.floret.as_ref())?;
                report.insert("uas", MetricValue::single(uas));
                report.insert("las", MetricValue::single(las));
            }
            if let Some(n) = &pipeline.ner {
                let ner_eval =
                    if data.ner_dev.is_empty() { &data.ner_train } else { &data.ner_dev };
                let (p, r, f1) = n.f_score(ner_eval, pipeline.floret.as_ref());
                report.insert("ner_p", MetricValue::single(p));
                report.insert("ner_r", MetricValue::single(r));
                report.insert("ner_f1", MetricValue::single(f1));
            }
            if let Some(t) = &pipeline.textcat {
                let cat_eval =
                    if data.cat_dev.is_empty() { &data.cat_train } else { &data.cat_dev };
                report.insert("textcat_f1", MetricValue::single(t.macro_f1(cat_eval)?));
            }
            print_report(&report, args.json)?;
        }
        Command::Predict(args) => {
            let pipeline = Pipeline::load(&args.model, cli.models_dir.as_deref())?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for line in stdin.lock().lines() {
                let doc = pipeline.apply(&line?);
                writeln!(out, "{}", serde_json::to_string(&doc)?)?;
            }
        }
        Command::Agreement(args) => {
            let rounds: Vec<(String, Vec<PathBuf>)> = if args.round.is_empty() {
                if args.files.len() < 2 {
                    return Err(Error::config("agreement needs at least 2 aligned IOB2 files"));
                }
                vec![("all".to_string(), args.files.clone())]
            } else {
                args.round
                    .iter()
                    .map(|spec| {
                        let (name, files) = spec.split_once('=').ok_or_else(|| {
                            Error::config(format!("bad --round spec {spec:?}, expected NAME=F1,F2"))
                        })?;
                        Ok((name.to_string(), files.split(',').map(PathBuf::from).collect()))
                    })
                    .collect::<Result<_, Error>>()?
            };
            let mut combined = MetricsReport::default();
            for (name, files) in &rounds {
                let report = agreement_round(files)?;
                for (metric, value) in &report.metrics {
                    let key = if rounds.len() > 1 {
                        format!("{metric}[{name}]")
                    } else {
                        metric.clone()
                    };
                    combined.insert(key, value.clone());
                }
                combined.notes.extend(report.notes);
            }
            print_report(&combined, args.json)?;
        }
        Command::Benchmark(args) => {
            let cfg = load_config(&cli)?;
            let data = load_train_data(&cfg)?;
            let report = benchmark(&cfg, &data)?;
            print_report(&report, args.json)?;
        }
        Command::GenToy(args) => {
            let ds = toygen::generate(args.sentences, args.seed);
            std::fs::create_dir_all(&args.output)?;
            std::fs::write(args.output.join("toy.conllu"), write_conllu(&ds)?)?;
            std::fs::write(args.output.join("toy.iob"), write_iob(&ds)?)?;
            std::fs::write(args.output.join("toy.jsonl"), write_cats_jsonl(&ds)?)?;
            println!("wrote {} sentences to {}", ds.len(), args.output.display());
        }
    }
    Ok(())
}

/// Flatten each annotator's file into one tag sequence, verifying that
/// token texts line up across files.
fn agreement_round(files: &[PathBuf]) -> Result<MetricsReport, Error> {
    use nlpipe_core::corpus::spans_to_iob;
    if files.len() < 2 {
        return Err(Error::config("each round needs at least 2 files"));
    }
    let mut annotations: Vec<Vec<String>> = Vec::new();
    let mut reference: Option<Vec<String>> = None;
    for path in files {
        let ds = read_corpus(path, "iob")?;
        let mut tags = Vec::new();
        let mut tokens = Vec::new();
        for sent in &ds.sentences {
            tags.extend(spans_to_iob(sent.len(), &sent.ents)?);
            tokens.extend(sent.texts().iter().map(|t| t.to_string()));
        }
        match &reference {
            None => reference = Some(tokens),
            Some(r) => {
                if *r != tokens {
                    let line = r
                        .iter()
                        .zip(&tokens)
                        .position(|(a, b)| a != b)
                        .map(|i| i + 1)
                        .unwrap_or(r.len().min(tokens.len()) + 1);
                    return Err(Error::data(format!(
                        "{} is not aligned with {} (first mismatch at token {line})",
                        path.display(),
                        files[0].display()
                    )));
                }
            }
        }
        annotations.push(tags);
    }
    iaa_report(&annotations)
}
