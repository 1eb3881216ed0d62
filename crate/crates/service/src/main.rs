use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cmdrisk::records::RecordLog;
use cmdrisk::service::{run_audit, Engines, Service};
use cmdrisk::settings::Settings;
use cmdrisk::trainers::{load_model, train_baseline, Backbone, BaselineKind, BaselineTrainer, TransformerTrainer};
use cmdrisk::{pipeline, read_log, LogEntry};
use cmdrisk_core::dataset::{
    collect_bash_files, extract_commands, read_dataset, stratified_split, write_dataset, DatasetHeader, LabeledCommand,
    SplitRatios,
};
use cmdrisk_core::eval::{render_curve, render_table, ConfusionMatrix, ReportRow};
use cmdrisk_core::experiment::{data_size_experiment, Trainer, DEFAULT_SIZES};
use cmdrisk_core::rules::render_audit_jsonl;
use cmdrisk_core::synth::{generate_synthetic_dataset, generate_synthetic_scripts, render_script, DEFAULT_RATIOS};
use cmdrisk_core::{load_rules, RiskClass, RiskModel, RuleSet, Vocabulary};
use cmdrisk_model::checkpoint::{load_checkpoint, save_checkpoint, Export};
use cmdrisk_model::{finetune, init_params, ModelConfig};

#[derive(Parser)]
#[command(name = "cmdrisk", version, about = "Shell command risk classification")]
struct Cli {
    /// key = value settings file; missing keys keep the full-size defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Model location: checkpoint directory or baseline model file
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Prediction log (serve) or training telemetry (pretrain, finetune)
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Where unlabeled scripts come from.
#[derive(Args)]
struct ScriptSource {
    /// Directory searched for bash scripts
    #[arg(long, conflicts_with = "synthetic")]
    scripts: Option<PathBuf>,
    /// Number of synthetic scripts to generate instead
    #[arg(long)]
    synthetic: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a BPE vocabulary from scripts
    TrainBpe {
        #[command(flatten)]
        source: ScriptSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the encoder with masked-token and next-command objectives
    Pretrain {
        #[command(flatten)]
        source: ScriptSource,
        /// Existing vocabulary; learned from the scripts when absent
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train the risk classifier on labeled commands
    Finetune {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Pretrained checkpoint; random initialization when absent
        #[arg(long)]
        init: Option<PathBuf>,
        /// Vocabulary for random initialization
        #[arg(long, required_unless_present = "init")]
        vocab: Option<PathBuf>,
    },
    /// Train a baseline: ngram, bow or w2v-forest
    TrainBaseline {
        kind: String,
        #[arg(long)]
        train: PathBuf,
        /// Extra unlabeled commands for the Word2Vec embeddings
        #[command(flatten)]
        source: ScriptSource,
    },
    /// Classify commands given as arguments, or one per stdin line
    Predict { commands: Vec<String> },
    /// Precision, recall and F1 for one or more models
    Evaluate {
        #[arg(long)]
        test: PathBuf,
        /// Models to compare; defaults to --checkpoint
        models: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// R+B F1 against training-set size for every model kind
    Curve {
        /// Directory holding train.tsv, dev.tsv and test.tsv
        #[arg(long)]
        data: PathBuf,
        /// Pretrained checkpoint
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Generate a labeled synthetic dataset, optionally with unlabeled scripts
    GenData {
        #[arg(long, default_value_t = 47158)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "scripts_out")]
        scripts: Option<usize>,
        #[arg(long)]
        scripts_out: Option<PathBuf>,
    },
    /// Stratified train/dev/test split of a dataset
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.7,0.2,0.1")]
        ratios: Vec<f64>,
    },
    /// Validate a rules file and optionally check it against labeled commands
    RulesCheck {
        #[arg(long)]
        rules: PathBuf,
        /// Lines of `command<TAB>LABEL`
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Answer newline-delimited JSON requests on stdin or a Unix socket
    Serve {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        socket: Option<PathBuf>,
    },
    /// Commands on which the model and the rules disagree
    Audit {
        #[arg(long)]
        rules: PathBuf,
        /// Dataset file, prediction log, or one command per line
        #[arg(long)]
        input: PathBuf,
    },
}

fn settings(cli: &Cli) -> Result<Settings> {
    match &cli.config {
        Some(p) => {
            let text = read(p)?;
            Settings::parse(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(Settings::default()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn dataset(path: &Path) -> Result<Vec<LabeledCommand>> {
    let (_, data) = read_dataset(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    Ok(data)
}

fn rules(path: &Path) -> Result<RuleSet> {
    load_rules(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn checkpoint(cli: &Cli) -> Result<&Path> {
    cli.checkpoint.as_deref().context("--checkpoint is required")
}

fn model(cli: &Cli) -> Result<Arc<dyn RiskModel>> {
    let path = checkpoint(cli)?;
    load_model(path).with_context(|| format!("loading {}", path.display()))
}

fn scripts(source: &ScriptSource, seed: u64) -> Result<Vec<Vec<String>>> {
    match (&source.scripts, source.synthetic) {
        (Some(dir), _) => {
            let corpus = collect_bash_files(dir)?;
            for s in &corpus.skipped {
                log::warn!("skipped {}: {}", s.origin.display(), s.reason);
            }
            Ok(corpus.scripts.iter().map(|s| extract_commands(&s.text)).filter(|c| !c.is_empty()).collect())
        }
        (None, Some(n)) => Ok(generate_synthetic_scripts(n, seed)),
        (None, None) => bail!("give --scripts <dir> or --synthetic <n>"),
    }
}

fn telemetry(cli: &Cli) -> Result<Option<BufWriter<fs::File>>> {
    cli.log
        .as_ref()
        .map(|p| fs::File::create(p).map(BufWriter::new).with_context(|| format!("creating {}", p.display())))
        .transpose()
}

fn commands_from(path: &Path) -> Result<Vec<String>> {
    let text = read(path)?;
    if text.starts_with("dataset v1") {
        return Ok(dataset(path)?.into_iter().map(|d| d.command).collect());
    }
    if text.starts_with('{') {
        let mut out = Vec::new();
        for entry in read_log(path)? {
            match entry {
                LogEntry::Record(r) => out.push(r.command),
                LogEntry::Quarantined(q) => log::warn!("{}: line {} quarantined: {}", path.display(), q.line, q.error),
            }
        }
        return Ok(out);
    }
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let settings = settings(&cli)?;
    let seed = cli.seed;
    match &cli.command {
        Command::TrainBpe { source, out } => {
            let vocab = pipeline::train_vocabulary(&scripts(source, seed)?, &settings.model)?;
            write(out, &vocab.to_file_string())?;
            log::info!("{} tokens written to {}", vocab.len(), out.display());
        }
        Command::Pretrain { source, vocab } => {
            let out = checkpoint(&cli)?;
            let scripts = scripts(source, seed)?;
            let vocab = match vocab {
                Some(p) => Vocabulary::from_file_str(&read(p)?)?,
                None => pipeline::train_vocabulary(&scripts, &settings.model)?,
            };
            let mut tel = telemetry(&cli)?;
            let result =
                pipeline::pretrain_scripts(&scripts, &vocab, &settings, seed, tel.as_mut().map(|w| w as &mut dyn Write))?;
            if let (Some(first), Some(last)) = (result.history.first(), result.history.last()) {
                log::info!("{} steps, loss {:.4} -> {:.4}", result.history.len(), first.total, last.total);
            }
            save_checkpoint(out, &result.params, &vocab, Export::Full)?;
            log::info!("checkpoint written to {}", out.display());
        }
        Command::Finetune { train, dev, init, vocab } => {
            let out = checkpoint(&cli)?;
            let (params, vocab) = match init {
                Some(dir) => {
                    let (p, v, _) = load_checkpoint(dir)?;
                    (p, v)
                }
                None => {
                    let path = vocab.as_ref().expect("clap enforces --vocab");
                    let v = Vocabulary::from_file_str(&read(path)?)?;
                    let cfg = ModelConfig { vocab_size: v.len(), ..settings.model.clone() };
                    (init_params(&cfg, seed), v)
                }
            };
            let config = cmdrisk_model::TrainConfig { seed, ..settings.finetune.clone() };
            let mut tel = telemetry(&cli)?;
            let result =
                finetune(params, &vocab, &dataset(train)?, &dataset(dev)?, &config, tel.as_mut().map(|w| w as &mut dyn Write))?;
            log::info!("best epoch {} with dev R+B F1 {}", result.best_epoch, result.best_dev_f1);
            save_checkpoint(out, &result.classifier.params, &vocab, Export::Full)?;
        }
        Command::TrainBaseline { kind, train, source } => {
            let out = checkpoint(&cli)?;
            let kind = BaselineKind::parse(kind).with_context(|| format!("unknown baseline {kind:?}"))?;
            let corpus: Vec<String> = if source.scripts.is_some() || source.synthetic.is_some() {
                scripts(source, seed)?.into_iter().flatten().collect()
            } else {
                Vec::new()
            };
            let model = train_baseline(kind, &dataset(train)?, &corpus, &settings.baselines, seed)?;
            write(out, &model.to_json()?)?;
        }
        Command::Predict { commands } => {
            let model = model(&cli)?;
            let commands: Vec<String> = if commands.is_empty() {
                io::stdin().lock().lines().collect::<io::Result<_>>()?
            } else {
                commands.clone()
            };
            let stdout = io::stdout();
            let mut out = stdout.lock();
            for c in commands {
                let p = model.predict(&c);
                let line = serde_json::json!({"cmd": c, "risk": p.risk, "probs": p.probs});
                writeln!(out, "{line}")?;
            }
        }
        Command::Evaluate { test, models, json } => {
            let test = dataset(test)?;
            let paths: Vec<PathBuf> =
                if models.is_empty() { vec![checkpoint(&cli)?.to_path_buf()] } else { models.clone() };
            let mut rows = Vec::new();
            for path in &paths {
                let model = load_model(path).with_context(|| format!("loading {}", path.display()))?;
                let mut cm = ConfusionMatrix::default();
                for d in &test {
                    cm.add(d.label, model.predict(&d.command).risk);
                }
                let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into());
                rows.push(ReportRow::from_matrix(name, &cm));
            }
            if *json {
                print!("{}", cmdrisk_core::eval::render_jsonl(&rows));
            } else {
                print!("{}", render_table(&rows));
            }
        }
        Command::Curve { data, pretrained, sizes } => {
            let train = dataset(&data.join("train.tsv"))?;
            let dev = dataset(&data.join("dev.tsv"))?;
            let test = dataset(&data.join("test.tsv"))?;
            let (params, vocab, manifest) = load_checkpoint(pretrained)?;
            let finetune_cfg = settings.finetune.clone();
            let pre = TransformerTrainer {
                name: "pretrained".into(),
                backbone: Backbone::Pretrained(params),
                vocab: vocab.clone(),
                config: finetune_cfg.clone(),
            };
            let rnd = TransformerTrainer {
                name: "random-init".into(),
                backbone: Backbone::Random(manifest.config),
                vocab,
                config: finetune_cfg,
            };
            let corpus: Vec<String> = train.iter().map(|d| d.command.clone()).collect();
            let baselines: Vec<BaselineTrainer> = BaselineKind::ALL
                .into_iter()
                .map(|kind| BaselineTrainer { kind, config: settings.baselines.clone(), corpus: corpus.clone() })
                .collect();
            let mut trainers: Vec<&dyn Trainer> = vec![&pre, &rnd];
            trainers.extend(baselines.iter().map(|b| b as &dyn Trainer));
            let sizes = sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec());
            let points = data_size_experiment(&trainers, &sizes, &train, &dev, &test, seed);
            print!("{}", render_curve(&points));
        }
        Command::GenData { count, out, scripts, scripts_out } => {
            let data = generate_synthetic_dataset(*count, DEFAULT_RATIOS, seed)?;
            let header = DatasetHeader { seed, ratios: SplitRatios::default().0 };
            write(out, &write_dataset(&header, &data)?)?;
            if let (Some(n), Some(dir)) = (scripts, scripts_out) {
                fs::create_dir_all(dir)?;
                for (i, s) in generate_synthetic_scripts(*n, seed).iter().enumerate() {
                    write(&dir.join(format!("script_{i:06}.sh")), &render_script(s))?;
                }
            }
        }
        Command::Split { input, out_dir, ratios } => {
            let ratios: [f64; 3] = ratios.as_slice().try_into().context("--ratios takes three numbers")?;
            let splits = stratified_split(&dataset(input)?, SplitRatios(ratios), seed)?;
            let header = DatasetHeader { seed, ratios };
            for (name, part) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
                write(&out_dir.join(format!("{name}.tsv")), &write_dataset(&header, part)?)?;
                log::info!("{name}: {} commands", part.len());
            }
        }
        Command::RulesCheck { rules: path, expect } => {
            let rs = rules(path)?;
            println!("{} rules, default {}", rs.rules().len(), rs.default_action());
            if let Some(expect) = expect {
                let mut failures = 0;
                for (i, line) in read(expect)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let (cmd, label) = line.rsplit_once('\t').with_context(|| format!("line {}: no tab", i + 1))?;
                    let want: RiskClass = label.trim().parse().map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1))?;
                    let got = rs.match_command(cmd);
                    if got.risk != want {
                        failures += 1;
                        println!("MISMATCH {cmd:?}: expected {want}, got {} ({:?})", got.risk, got.rule_id);
                    }
                }
                if failures > 0 {
                    bail!("{failures} commands classified differently");
                }
                println!("all expectations hold");
            }
        }
        Command::Serve { rules: rules_path, socket } => {
            let model = model(&cli)?;
            let rules = rules_path.as_deref().map(rules).transpose()?;
            let log_path = cli.log.clone().unwrap_or_else(|| PathBuf::from("predictions.jsonl"));
            let log = RecordLog::open(&log_path).with_context(|| format!("opening {}", log_path.display()))?;
            let service = Arc::new(Service::new(Engines { model, rules }, log));
            match socket {
                #[cfg(unix)]
                Some(path) => service.serve_unix(path)?,
                #[cfg(not(unix))]
                Some(_) => bail!("sockets need a Unix platform"),
                None => service.serve_stream(io::stdin().lock(), io::stdout().lock())?,
            }
        }
        Command::Audit { rules: rules_path, input } => {
            let model = model(&cli)?;
            let report = run_audit(&commands_from(input)?, model.as_ref(), &rules(rules_path)?);
            print!("{}", render_audit_jsonl(&report));
            log::info!("{} discrepancies", report.len());
        }
    }
    Ok(())
}
