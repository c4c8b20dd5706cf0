use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand};
use mmdial_cli::*;
use mmdial_core::datagen::{gen_catalog, gen_corpus, split_corpus, validate_corpus, DialogCorpus, GeneratorConfig, SPLIT_NAMES};
use mmdial_core::environment::{context_of, replay, ApiResult, Catalog, EnvState, MultimodalContext, TraceEntry};
use mmdial_core::fusion_model::{self, FusionModel, ModelConfig};
use mmdial_core::label_lang::{fixture_lines, parse_syntax, serialize, validate};
use mmdial_core::metrics::PredictionFile;
use mmdial_core::ontology::{Domain, OntologyGraph};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "mmdial", version, about = "Synthetic multimodal shopping dialogs: generation, validation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded item catalog.
    GenCatalog {
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        items: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dialog corpus over a catalog.
    GenDialogs {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        dialogs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus into train/dev/testdev/test files.
    Splits {
        #[arg(long)]
        corpus: PathBuf,
        /// Four comma-separated shares, as fractions or percentages.
        #[arg(long, default_value = "60,10,15,15")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check a corpus or an annotation file against the ontology.
    Validate {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long, required_unless_present = "annotations")]
        corpus: Option<PathBuf>,
        /// Catalog for `--corpus`; defaults to the corpus's own catalog file.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Annotated utterances, one per line, grouped by `@domain` headers.
        #[arg(long, conflicts_with = "corpus")]
        annotations: Option<PathBuf>,
    },
    /// Parse one annotated utterance and print its canonical form.
    Parse {
        #[command(flatten)]
        ontology: OntologyArg,
        #[arg(long, default_value = "furniture")]
        domain: Domain,
        text: String,
    },
    /// Replay an action trace against a catalog.
    Simulate {
        #[arg(long)]
        catalog: PathBuf,
        /// JSON lines of `{"turn": .., "action": .., "arguments": ..}` entries.
        #[arg(long)]
        trace: PathBuf,
        /// Initial state; defaults to the empty furniture scene or the first
        /// catalog item for fashion.
        #[arg(long)]
        initial: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fusion model on `train.json` with early stopping on `dev.json`.
    Train {
        #[arg(long)]
        corpus_dir: PathBuf,
        /// TOML file overriding model defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log, one JSON record per epoch; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write per-round predictions for a corpus.
    Predict {
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        model: Option<PathBuf>,
        #[arg(long, value_parser = ["tfidf"])]
        baseline: Option<String>,
        /// Train split for the baselines; required with `--baseline`.
        #[arg(long, required_if_eq("baseline", "tfidf"))]
        train: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Seed for the retrieval candidate pools.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions (or a corpus, for gold-vs-gold) against a gold corpus.
    Evaluate {
        #[arg(long, default_value = "all")]
        task: Task,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct OntologyArg {
    /// Ontology file; defaults to the shipped one.
    #[arg(long)]
    ontology: Option<PathBuf>,
}

impl OntologyArg {
    fn load(&self) -> CliResult<OntologyGraph> {
        match &self.ontology {
            None => Ok(OntologyGraph::shipped()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?;
                OntologyGraph::from_json(&text)
                    .with_context(|| format!("loading {}", p.display()))
                    .map_err(invalid)
            }
        }
    }
}

/// One replayed step.
#[derive(Serialize)]
struct SimStep<'a> {
    turn: usize,
    #[serde(flatten)]
    entry: &'a TraceEntry,
    result: &'a ApiResult,
    context: MultimodalContext,
}

fn load_corpus(path: &Path) -> CliResult<DialogCorpus> {
    read_json(path)
}

fn load_catalog_for(corpus_path: &Path, corpus: &DialogCorpus, explicit: Option<&Path>) -> CliResult<(PathBuf, Catalog)> {
    let path = catalog_path(corpus_path, corpus, explicit);
    let catalog: Catalog = read_json(&path)?;
    if catalog.domain != corpus.domain {
        return Err(invalid(anyhow!("{} is a {} catalog but the corpus is {}", path.display(), catalog.domain, corpus.domain)));
    }
    Ok((path, catalog))
}

fn parse_ratios(text: &str) -> CliResult<[f64; 4]> {
    let xs: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(anyhow!("bad --ratios `{text}`: {e}")))?;
    let arr: [f64; 4] = xs
        .try_into()
        .map_err(|_| usage(anyhow!("--ratios needs four values, got `{text}`")))?;
    let total: f64 = arr.iter().sum();
    // percentages are accepted as well as fractions
    Ok(if (total - 100.0).abs() < 1e-6 { arr.map(|x| x / 100.0) } else { arr })
}

fn run(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    match cli.command {
        Command::GenCatalog { domain, items, seed, out } => {
            let catalog = gen_catalog(domain, items, seed).map_err(usage)?;
            write_json(&out, &catalog)?;
            RunManifest::new(argv, &[], Some(seed))?.write_for(&out)
        }
        Command::GenDialogs { catalog: cat_path, dialogs, seed, out } => {
            let catalog: Catalog = read_json(&cat_path)?;
            let g = OntologyGraph::shipped();
            let problems = catalog.validate(&g);
            if !problems.is_empty() {
                return Err(invalid(anyhow!("catalog is invalid:\n  {}", problems.join("\n  "))));
            }
            let config = GeneratorConfig::new(catalog.domain, dialogs, seed);
            let file_name = cat_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let corpus = gen_corpus(&catalog, &config, &g, &file_name).map_err(usage)?;
            write_json(&out, &corpus)?;
            if out.parent() != cat_path.parent() {
                eprintln!("note: the corpus names catalog `{file_name}`; pass --catalog to later commands if it is not next to the corpus");
            }
            RunManifest::new(argv, &[&cat_path], Some(seed))?.write_for(&out)
        }
        Command::Splits { corpus: path, ratios, seed, out_dir } => {
            let ratios = parse_ratios(&ratios)?;
            let corpus = load_corpus(&path)?;
            if corpus.dialogs.is_empty() {
                return Err(invalid(anyhow!("{} has no dialogs", path.display())));
            }
            let parts = split_corpus(&corpus, ratios, seed).map_err(usage)?;
            let cat_src = catalog_path(&path, &corpus, None);
            let cat_dst = out_dir.join(&corpus.catalog_file);
            if cat_src.is_file() && cat_src != cat_dst {
                let text = fs::read_to_string(&cat_src).map_err(usage)?;
                write_text(&cat_dst, &text)?;
            }
            for (name, part) in SPLIT_NAMES.iter().zip(&parts) {
                let out = out_dir.join(format!("{name}.json"));
                write_json(&out, part)?;
                RunManifest::new(argv.clone(), &[&path], Some(seed))?.write_for(&out)?;
            }
            Ok(())
        }
        Command::Validate {
            ontology,
            corpus,
            catalog,
            annotations,
        } => {
            let g = ontology.load()?;
            let mut problems: Vec<String> = Vec::new();
            if let Some(path) = annotations {
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
                for (i, (domain, line)) in fixture_lines(&text).into_iter().enumerate() {
                    match parse_syntax(line) {
                        Err(e) => problems.push(format!("entry {}: {e}", i + 1)),
                        Ok(u) => problems.extend(validate(&u, &g, domain).into_iter().map(|d| format!("entry {}: {d}", i + 1))),
                    }
                }
            }
            if let Some(path) = corpus {
                let corpus = load_corpus(&path)?;
                if corpus.dialogs.is_empty() {
                    problems.push(format!("{} has no dialogs", path.display()));
                }
                let (_, catalog) = load_catalog_for(&path, &corpus, catalog.as_deref())?;
                problems.extend(catalog.validate(&g).into_iter().map(|p| format!("catalog: {p}")));
                problems.extend(validate_corpus(&corpus, &catalog, &g).into_iter().map(|i| i.to_string()));
            }
            for p in &problems {
                eprintln!("{p}");
            }
            if problems.is_empty() {
                Ok(())
            } else {
                Err(invalid(anyhow!("{} problem(s)", problems.len())))
            }
        }
        Command::Parse { ontology, domain, text } => {
            let g = ontology.load()?;
            let u = parse_syntax(&text).map_err(invalid)?;
            let diags = validate(&u, &g, domain);
            for d in &diags {
                eprintln!("{d}");
            }
            if !diags.is_empty() {
                return Err(invalid(anyhow!("{} diagnostic(s)", diags.len())));
            }
            println!("{}", serialize(&u));
            Ok(())
        }
        Command::Simulate {
            catalog: cat_path,
            trace,
            initial,
            out,
        } => {
            let catalog: Catalog = read_json(&cat_path)?;
            let text = fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display())).map_err(usage)?;
            let entries: Vec<TraceEntry> = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", trace.display(), i + 1)))
                .collect::<anyhow::Result<_>>()
                .map_err(invalid)?;
            let start: EnvState = match &initial {
                Some(p) => read_json(p)?,
                None => match catalog.domain {
                    Domain::Furniture => EnvState::furniture(),
                    Domain::Fashion => {
                        let first = catalog.items().first().ok_or_else(|| invalid(anyhow!("catalog is empty")))?;
                        EnvState::fashion(first.item_id.clone(), Vec::new(), &catalog).map_err(invalid)?
                    }
                },
            };
            if start.domain() != catalog.domain {
                return Err(invalid(anyhow!("initial state is {} but the catalog is {}", start.domain(), catalog.domain)));
            }
            let calls: Vec<_> = entries.iter().map(|e| e.call.clone()).collect();
            let steps = replay(&start, &calls, &catalog);
            let mut lines = String::new();
            for (entry, (state, result)) in entries.iter().zip(&steps) {
                let step = SimStep {
                    turn: entry.turn,
                    entry,
                    result,
                    context: context_of(state),
                };
                lines.push_str(&serde_json::to_string(&step).map_err(usage)?);
                lines.push('\n');
            }
            write_text(&out, &lines)?;
            let mut inputs: Vec<&Path> = vec![&cat_path, &trace];
            inputs.extend(initial.as_deref());
            RunManifest::new(argv, &inputs, None)?.write_for(&out)
        }
        Command::Train {
            corpus_dir,
            config,
            catalog,
            out,
            log,
        } => {
            let train_path = corpus_dir.join("train.json");
            let dev_path = corpus_dir.join("dev.json");
            let train = load_corpus(&train_path)?;
            let dev = load_corpus(&dev_path)?;
            let (cat_path, catalog) = load_catalog_for(&train_path, &train, catalog.as_deref())?;
            let overrides: TrainConfig = match &config {
                None => TrainConfig::default(),
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?;
                    toml::from_str(&text).with_context(|| format!("parsing {}", p.display())).map_err(usage)?
                }
            };
            let cfg = overrides.apply(ModelConfig::for_domain(train.domain));
            cfg.validate().map_err(usage)?;
            let seed = cfg.seed;
            let (model, records) = fusion_model::train(cfg, &train, &dev, &catalog).map_err(invalid)?;
            write_json(&out, &model)?;
            let log_path = log.unwrap_or_else(|| {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".log.jsonl");
                out.with_file_name(name)
            });
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).map_err(usage)?);
                text.push('\n');
            }
            write_text(&log_path, &text)?;
            let mut inputs: Vec<&Path> = vec![&train_path, &dev_path, &cat_path];
            inputs.extend(config.as_deref());
            let manifest = RunManifest::new(argv, &inputs, Some(seed))?;
            manifest.write_for(&out)?;
            manifest.write_for(&log_path)
        }
        Command::Predict {
            model,
            baseline: _,
            train,
            corpus: path,
            catalog,
            seed,
            out,
        } => {
            let corpus = load_corpus(&path)?;
            let train_corpus = train.as_deref().map(load_corpus).transpose()?;
            let mut inputs: Vec<PathBuf> = vec![path.clone()];
            inputs.extend(train.clone());
            let preds = match &model {
                Some(model_path) => {
                    let m: FusionModel = read_json(model_path)?;
                    let (cat_path, cat) = load_catalog_for(&path, &corpus, catalog.as_deref())?;
                    inputs.push(model_path.clone());
                    inputs.push(cat_path);
                    predict_fusion(&m, &cat, &corpus, train_corpus.as_ref(), seed)?
                }
                None => predict_tfidf(train_corpus.as_ref().expect("clap requires --train"), &corpus, seed)?,
            };
            write_json(&out, &preds)?;
            let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            RunManifest::new(argv, &inputs, Some(seed))?.write_for(&out)
        }
        Command::Evaluate { task, gold, pred, out } => {
            let gold_corpus = load_corpus(&gold)?;
            let value: serde_json::Value = read_json(&pred)?;
            let preds: PredictionFile = if value.get("dialogs").is_some() {
                let c: DialogCorpus = serde_json::from_value(value)
                    .with_context(|| format!("{} is not a corpus", pred.display()))
                    .map_err(invalid)?;
                gold_predictions(&c)
            } else {
                serde_json::from_value(value)
                    .with_context(|| format!("{} is not a prediction file", pred.display()))
                    .map_err(invalid)?
            };
            let report = evaluate(task, &gold_corpus, &preds).map_err(invalid)?;
            let mut text = report.to_json();
            text.push('\n');
            write_text(&out, &text)?;
            RunManifest::new(argv, &[&gold, &pred], None)?.write_for(&out)
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
