//! `fnmt`: one subcommand per pipeline stage. Every run writes its outputs
//! into `--out` together with a `manifest.json` that records the config
//! hash and seed; tabular outputs also carry them in a leading `#` line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use factored_nmt::datagen::{augment_uppercase, make_upr_corpus, AugmentSpec, UprSpec};
use factored_nmt::experiment::{
    fit_and_train, grid_values, run_copy_point, upr_copy_data, ExperimentConfig, Grid, SweepPoint,
};
use factored_nmt::factorize::{deduce_case, format_factored, FactorLabel, FactoredToken, GenderFactor, GenderLexicon};
use factored_nmt::infer::{count_and_filter, read_pairs, score_pairs, write_pair_scores};
use factored_nmt::metrics::{
    bin_analysis, bleu, capitalized_token_ratio, upr, uppercased_sentence_ratio, uppercased_token_ratio,
    MetricRecord,
};
use factored_nmt::pipeline::{FactorConfig, Pipeline, PipelineState};
use factored_nmt::seq2seq::{write_curve_csv, FactoredSeq2Seq};
use factored_nmt::subword::{bpe_apply, bpe_train, SubwordModel};
use factored_nmt::text::{
    read_lines, tokenize, truecase_apply, truecase_train_sentences, write_sentences, ParallelCorpus, Sentence,
    TruecaseModel,
};

/// Environment variable holding the default number of parallel sweep jobs.
const JOBS_ENV: &str = "FNMT_JOBS";

#[derive(Parser)]
#[command(name = "fnmt", version, about = "Factored translation with target attribute prediction")]
struct Cli {
    /// Experiment configuration (JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Splits raw text into space-separated tokens.
    Tokenize(InputArg),
    /// Learns (or loads) a truecasing model and applies it.
    Truecase {
        #[command(flatten)]
        input: InputArg,
        /// Existing truecasing TSV; learned from the input when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Writes `form|case[|gender]` factored text.
    Factorize {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Learns BPE merges on a parallel corpus.
    BpeTrain {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Defaults to `subword.merges` from the config.
        #[arg(long)]
        merges: Option<usize>,
    },
    /// Segments tokenized text with learned merges.
    BpeApply {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Builds a corpus with a controlled uppercasing-preservation ratio.
    MakeUpr(CorpusArgs),
    /// Appends uppercased copies of sampled pairs.
    Augment(CorpusArgs),
    /// Trains a model; without a corpus, on the synthetic copy data of the config.
    Train {
        #[arg(long, requires = "target")]
        source: Option<PathBuf>,
        #[arg(long, requires = "source")]
        target: Option<PathBuf>,
        #[arg(long, requires = "valid_target")]
        valid_source: Option<PathBuf>,
        #[arg(long, requires = "valid_source")]
        valid_target: Option<PathBuf>,
        /// Gender lexicon; enables the gender factor stream.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Decodes tokenized source sentences.
    Translate {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        model: PathBuf,
    },
    /// Scores masculine/feminine profession translations by forced decoding.
    ScorePairs {
        #[arg(long)]
        model: PathBuf,
        /// TSV `english<TAB>masculine<TAB>feminine`.
        #[arg(long)]
        pairs: PathBuf,
        /// Target side of the training data; fills counts and drops rare pairs.
        #[arg(long)]
        train_target: Option<PathBuf>,
    },
    /// Computes metrics and writes them as JSON lines.
    Eval(EvalArgs),
    /// Trains and evaluates every factor configuration over a grid.
    Sweep {
        #[arg(long, value_enum)]
        grid: GridArg,
        /// Factor configurations; all four by default.
        #[arg(long, value_delimiter = ',')]
        configs: Vec<FactorConfig>,
        /// Grid values; the full grid by default.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Parallel grid points; defaults to $FNMT_JOBS or 1.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct InputArg {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    Upr,
    Augment,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Metric {
    Bleu,
    Upr,
    UpperRatio,
    CapitalizedRatio,
    UpperSentenceRatio,
    Bins,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    metric: Vec<Metric>,
    /// System output (bleu and the casing ratios).
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// References (bleu).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Lowercase both sides before computing BLEU.
    #[arg(long)]
    case_insensitive: bool,
    /// Parallel corpus (upr).
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    /// Output of `score-pairs` (bins).
    #[arg(long)]
    scores: Option<PathBuf>,
}

/// Resolved config plus the identity stamped on every output.
struct Run {
    config: ExperimentConfig,
    hash: String,
    seed: u64,
    out: PathBuf,
    command: &'static str,
    files: Vec<String>,
}

impl Run {
    fn new(cli: &Cli) -> Result<Self> {
        let mut config: ExperimentConfig = match &cli.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config = config.with_seed(seed);
        }
        let hash = hex::encode(Sha256::digest(serde_json::to_vec(&config)?));
        fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
        Ok(Run {
            seed: config.data.seed,
            config,
            hash,
            out: cli.out.clone(),
            command: command_name(&cli.command),
            files: Vec::new(),
        })
    }

    /// Registers an output file and returns its path.
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out.join(name)
    }

    fn stamp(&self) -> String {
        format!("config_sha256={} seed={}", self.hash, self.seed)
    }

    fn provenance(&self) -> Value {
        json!({"command": self.command, "config_sha256": self.hash, "seed": self.seed})
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut doc = self.provenance();
        doc["content"] = value.clone();
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }

    fn finish(self, report: Value) -> Result<()> {
        let mut doc = self.provenance();
        doc["config"] = serde_json::to_value(&self.config)?;
        doc["outputs"] = json!(self.files);
        doc["report"] = report;
        fs::write(self.out.join("manifest.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Tokenize(_) => "tokenize",
        Command::Truecase { .. } => "truecase",
        Command::Factorize { .. } => "factorize",
        Command::BpeTrain { .. } => "bpe-train",
        Command::BpeApply { .. } => "bpe-apply",
        Command::MakeUpr(_) => "make-upr",
        Command::Augment(_) => "augment",
        Command::Train { .. } => "train",
        Command::Translate { .. } => "translate",
        Command::ScorePairs { .. } => "score-pairs",
        Command::Eval(_) => "eval",
        Command::Sweep { .. } => "sweep",
    }
}

fn read_sentences(path: &Path) -> Result<Vec<Sentence>> {
    Ok(read_lines(path)
        .with_context(|| format!("reading {}", path.display()))?
        .iter()
        .map(|l| Sentence::from_tokenized(l))
        .collect())
}

fn read_corpus(c: &CorpusArgs) -> Result<ParallelCorpus> {
    ParallelCorpus::read("input", &c.source, &c.target)
        .with_context(|| format!("reading {} / {}", c.source.display(), c.target.display()))
}

fn read_lexicon(path: &Option<PathBuf>) -> Result<Option<GenderLexicon>> {
    path.as_ref()
        .map(|p| GenderLexicon::read_tsv(p).with_context(|| format!("reading lexicon {}", p.display())))
        .transpose()
}

fn load_model(path: &Path) -> Result<(FactoredSeq2Seq, factored_nmt::subword::Vocab, Pipeline)> {
    let (model, vocab, extra) =
        FactoredSeq2Seq::load(path).with_context(|| format!("loading model {}", path.display()))?;
    let state: PipelineState = serde_json::from_value(extra["pipeline"].clone())
        .with_context(|| format!("{} carries no preprocessing state", path.display()))?;
    Ok((model, vocab, Pipeline::from_state(state)?))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_gender(s: &str) -> Option<GenderFactor> {
    GenderFactor::ALL.into_iter().find(|&g| FactorLabel::Gender(g).as_str() == s)
}

/// `(training ratio, choice)` rows of a `score-pairs` TSV.
fn read_scores(path: &Path) -> Result<Vec<(f64, GenderFactor)>> {
    let lines = read_lines(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = lines.iter().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (_, header) = rows.next().context("empty scores file")?;
    let cols: Vec<&str> = header.split('\t').collect();
    let col = |name: &str| cols.iter().position(|&c| c == name).with_context(|| format!("missing column `{name}`"));
    let (ratio_col, choice_col) = (col("training_masculine_ratio")?, col("choice")?);
    rows.map(|(i, l)| {
        let f: Vec<&str> = l.split('\t').collect();
        let ratio: f64 = f
            .get(ratio_col)
            .and_then(|v| v.parse().ok())
            .with_context(|| format!("line {}: bad training_masculine_ratio", i + 1))?;
        let choice = f
            .get(choice_col)
            .and_then(|v| parse_gender(v))
            .with_context(|| format!("line {}: bad choice", i + 1))?;
        Ok((ratio, choice))
    })
    .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut r = Run::new(&cli)?;
    let report = match cli.command {
        Command::Tokenize(a) => {
            let lines = read_lines(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            let out = r.path("tokenized.txt");
            write_lines(&out, lines.iter().map(|l| tokenize(l).to_string()))?;
            json!({"lines": lines.len()})
        }
        Command::Truecase { input, model } => {
            let sentences = read_sentences(&input.input)?;
            let tc = match model {
                Some(p) => TruecaseModel::read_tsv(&p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    let tc = truecase_train_sentences(sentences.iter())?;
                    tc.write_tsv(&r.path("truecase.tsv"))?;
                    tc
                }
            };
            let out: Vec<Sentence> = sentences.iter().map(|s| truecase_apply(s, &tc)).collect();
            write_sentences(&r.path("truecased.txt"), out.iter())?;
            json!({"lines": out.len(), "entries": tc.len()})
        }
        Command::Factorize { input, lexicon } => {
            let lexicon = read_lexicon(&lexicon)?;
            let sentences = read_sentences(&input.input)?;
            let mut lines = Vec::with_capacity(sentences.len());
            for (i, s) in sentences.iter().enumerate() {
                let mut toks = Vec::with_capacity(s.len());
                for t in s.iter() {
                    let (form, case) = deduce_case(t).with_context(|| format!("line {}", i + 1))?;
                    let mut factors = vec![FactorLabel::Case(case)];
                    if let Some(l) = &lexicon {
                        factors.push(FactorLabel::Gender(l.lookup(t)));
                    }
                    toks.push(FactoredToken { form, factors });
                }
                lines.push(format_factored(&toks));
            }
            write_lines(&r.path("factored.txt"), lines)?;
            json!({"lines": sentences.len(), "streams": if lexicon.is_some() { 2 } else { 1 }})
        }
        Command::BpeTrain { corpus, merges } => {
            let corpus = read_corpus(&corpus)?;
            let model = bpe_train(&corpus, merges.unwrap_or(r.config.subword.merges))?;
            model.write_merges(&r.path("merges.txt"))?;
            model.vocab.write_tsv(&r.path("bpe_vocab.tsv"))?;
            json!({"merges": model.num_merges(), "vocab": model.vocab.len()})
        }
        Command::BpeApply { input, merges, vocab } => {
            let model = SubwordModel::read(&merges, &vocab).context("reading merges/vocab")?;
            let sentences = read_sentences(&input.input)?;
            let case_safe = r.config.subword.case_safe;
            let out: Vec<Sentence> = sentences.iter().map(|s| bpe_apply(s, &model, case_safe)).collect();
            write_sentences(&r.path("segmented.txt"), out.iter())?;
            json!({"lines": out.len(), "case_safe": case_safe})
        }
        Command::MakeUpr(c) => {
            let corpus = read_corpus(&c)?;
            let spec = UprSpec {
                upper_source_fraction: r.config.data.upper_source_fraction,
                upr: r.config.data.upr,
                seed: r.seed,
            };
            let (out, report) = make_upr_corpus(&corpus, &spec)?;
            let (s, t) = (r.path("upr.src"), r.path("upr.tgt"));
            out.write(&s, &t)?;
            let doc = json!({"spec": spec, "realized": report, "upr": upr(&out)});
            r.write_json("generation.json", &doc)?;
            doc
        }
        Command::Augment(c) => {
            let corpus = read_corpus(&c)?;
            let spec = AugmentSpec {
                fraction: r.config.data.augment,
                seed: r.seed,
            };
            let (out, report) = augment_uppercase(&corpus, &spec)?;
            let (s, t) = (r.path("augmented.src"), r.path("augmented.tgt"));
            out.write(&s, &t)?;
            let doc = json!({"spec": spec, "realized": report});
            r.write_json("generation.json", &doc)?;
            doc
        }
        Command::Train {
            source,
            target,
            valid_source,
            valid_target,
            lexicon,
        } => {
            let lexicon = read_lexicon(&lexicon)?;
            let (train, valid) = match (source, target) {
                (Some(s), Some(t)) => {
                    let train = read_corpus(&CorpusArgs { source: s, target: t })?;
                    let valid = match (valid_source, valid_target) {
                        (Some(s), Some(t)) => Some(read_corpus(&CorpusArgs { source: s, target: t })?),
                        _ => None,
                    };
                    (train, valid)
                }
                _ => {
                    let data = upr_copy_data(&r.config.data)?;
                    data.train.write(&r.path("train.src"), &r.path("train.tgt"))?;
                    write_sentences(&r.path("test.src"), data.test_sources.iter())?;
                    write_sentences(&r.path("test.ref"), data.test_references.iter())?;
                    (data.train, Some(data.valid))
                }
            };
            let trained = fit_and_train(&train, valid.as_ref(), &r.config, lexicon)?;
            write_curve_csv(&r.path("curve.csv"), &trained.curve)?;
            let extra = json!({
                "pipeline": trained.pipeline.state(),
                "config_sha256": r.hash,
                "seed": r.seed,
            });
            trained.model.save(&r.path("model.ckpt"), &trained.vocab, extra)?;
            json!({
                "pairs": train.len(),
                "steps": trained.steps_run,
                "final_loss": trained.final_loss(),
                "vocab": trained.vocab.len(),
            })
        }
        Command::Translate { input, model } => {
            let (model, vocab, pipeline) = load_model(&model)?;
            let eval = r.config.eval.clone();
            let mut out = Vec::new();
            let mut truncated = 0;
            for (i, s) in read_sentences(&input.input)?.iter().enumerate() {
                let src = pipeline
                    .prepare(s, factored_nmt::text::Side::Source)
                    .with_context(|| format!("line {}", i + 1))?;
                let h = if eval.beam <= 1 {
                    factored_nmt::infer::greedy_translate(&model, &vocab, &src, eval.max_len)?
                } else {
                    factored_nmt::infer::beam_translate(&model, &vocab, &src, eval.beam, eval.max_len)?
                };
                truncated += usize::from(h.truncated);
                out.push(h.surface);
            }
            write_sentences(&r.path("translations.txt"), out.iter())?;
            json!({"lines": out.len(), "truncated": truncated, "beam": eval.beam})
        }
        Command::ScorePairs {
            model,
            pairs,
            train_target,
        } => {
            let (model, vocab, pipeline) = load_model(&model)?;
            let mut pairs = read_pairs(&pairs).with_context(|| format!("reading {}", pairs.display()))?;
            let before = pairs.len();
            if let Some(t) = train_target {
                pairs = count_and_filter(&pairs, &read_sentences(&t)?, r.config.eval.pair_threshold);
            }
            let scores = score_pairs(&model, &vocab, &pipeline, &pairs, r.config.eval.score_mode)?;
            write_pair_scores(&r.path("pair_scores.tsv"), &scores, Some(&r.stamp()))?;
            let masc = scores.iter().filter(|s| s.choice == GenderFactor::Masculine).count();
            json!({
                "pairs_read": before,
                "pairs_scored": scores.len(),
                "masculine_choices": masc,
                "ties": scores.iter().filter(|s| s.tie).count(),
            })
        }
        Command::Eval(a) => {
            let records = evaluate(&a, r.config.eval.bins)?;
            let path = r.path("metrics.jsonl");
            let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
            for rec in &records {
                let mut v = serde_json::to_value(rec)?;
                v["config_sha256"] = json!(r.hash);
                v["seed"] = json!(r.seed);
                let line = serde_json::to_string(&v)?;
                writeln!(w, "{line}")?;
                println!("{line}");
            }
            w.flush()?;
            json!({"metrics": records.len()})
        }
        Command::Sweep {
            grid,
            configs,
            values,
            jobs,
        } => {
            let grid = match grid {
                GridArg::Upr => Grid::Upr,
                GridArg::Augment => Grid::Augment,
            };
            let configs = if configs.is_empty() { FactorConfig::ALL.to_vec() } else { configs };
            let values = if values.is_empty() { grid_values(grid) } else { values };
            let jobs = match jobs {
                Some(j) => j,
                None => std::env::var(JOBS_ENV)
                    .ok()
                    .map(|v| v.parse().with_context(|| format!("{JOBS_ENV}={v} is not a count")))
                    .transpose()?
                    .unwrap_or(1),
            }
            .max(1);
            let points = sweep_points(&r.config, grid, &configs, &values, jobs)?;
            let path = r.path("sweep.csv");
            let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
            writeln!(w, "# {}", r.stamp())?;
            writeln!(w, "config,grid_value,bleu_ci,upper_ratio,centroid_cos")?;
            for p in &points {
                let cos = p.centroid_cos.map_or(String::new(), |c| c.to_string());
                writeln!(w, "{},{},{},{},{}", p.config.name(), p.grid_value, p.bleu_ci, p.upper_ratio, cos)?;
            }
            w.flush()?;
            json!({"rows": points.len(), "points": points})
        }
    };
    r.finish(report)
}

/// Runs every (configuration, value) point, `jobs` at a time, in grid order.
fn sweep_points(
    base: &ExperimentConfig,
    grid: Grid,
    configs: &[FactorConfig],
    values: &[f64],
    jobs: usize,
) -> Result<Vec<SweepPoint>> {
    let tasks: Vec<ExperimentConfig> = configs
        .iter()
        .flat_map(|&c| {
            values.iter().map(move |&v| {
                let mut cfg = base.clone();
                cfg.factors.config = c;
                match grid {
                    Grid::Upr => cfg.data.upr = v,
                    Grid::Augment => cfg.data.augment = v,
                }
                cfg
            })
        })
        .collect();
    let grid_value = |cfg: &ExperimentConfig| match grid {
        Grid::Upr => cfg.data.upr,
        Grid::Augment => cfg.data.augment,
    };
    let mut results: Vec<Option<Result<SweepPoint>>> = (0..tasks.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_tasks, chunk_out) in tasks.chunks(jobs).zip(results.chunks_mut(jobs)) {
            let handles: Vec<_> = chunk_tasks
                .iter()
                .map(|cfg| {
                    scope.spawn(move || {
                        log::info!("sweep point {} {}", cfg.factors.config.name(), grid_value(cfg));
                        run_copy_point(cfg, grid_value(cfg)).map(|(p, _)| p).map_err(anyhow::Error::from)
                    })
                })
                .collect();
            for (h, slot) in handles.into_iter().zip(chunk_out.iter_mut()) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("sweep worker panicked"))));
            }
        }
    });
    results.into_iter().map(|r| r.expect("every task ran")).collect()
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str, metric: &str) -> Result<&'a PathBuf> {
    p.as_ref().with_context(|| format!("metric {metric} needs --{flag}"))
}

fn evaluate(a: &EvalArgs, bins: usize) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for &m in &a.metric {
        let rec = match m {
            Metric::Bleu => {
                let hyp = read_sentences(need(&a.hyp, "hyp", "bleu")?)?;
                let reference = read_sentences(need(&a.reference, "reference", "bleu")?)?;
                MetricRecord::bleu(&bleu(&hyp, &reference, a.case_insensitive)?, a.case_insensitive)
            }
            Metric::Upr => {
                let corpus = read_corpus(&CorpusArgs {
                    source: need(&a.source, "source", "upr")?.clone(),
                    target: need(&a.target, "target", "upr")?.clone(),
                })?;
                let value = upr(&corpus);
                let details = if value.is_none() {
                    json!({"note": "no all-uppercased source sentence"})
                } else {
                    json!({})
                };
                MetricRecord::new("upr", value, details)
            }
            Metric::UpperRatio => {
                let hyp = read_sentences(need(&a.hyp, "hyp", "upper-ratio")?)?;
                MetricRecord::new("upper_ratio", Some(uppercased_token_ratio(&hyp)?), json!({}))
            }
            Metric::CapitalizedRatio => {
                let hyp = read_sentences(need(&a.hyp, "hyp", "capitalized-ratio")?)?;
                MetricRecord::new("capitalized_ratio", Some(capitalized_token_ratio(&hyp)?), json!({}))
            }
            Metric::UpperSentenceRatio => {
                let hyp = read_sentences(need(&a.hyp, "hyp", "upper-sentence-ratio")?)?;
                MetricRecord::new("upper_sentence_ratio", Some(uppercased_sentence_ratio(&hyp)?), json!({}))
            }
            Metric::Bins => {
                let rows = read_scores(need(&a.scores, "scores", "bins")?)?;
                let report = bin_analysis(&rows, bins)?;
                MetricRecord::new(
                    "bin_mse",
                    Some(report.mse),
                    json!({"pair_mse": report.pair_mse, "bins": report.bins}),
                )
            }
        };
        out.push(rec);
    }
    Ok(out)
}

/// Stable error class for the machine-readable error line.
fn error_kind(e: &anyhow::Error) -> &'static str {
    use factored_nmt::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::EmptyCorpus => "empty-corpus",
                E::MixedCase(_) => "mixed-case",
                E::EmptySubwords | E::DanglingContinuation => "subword",
                E::Config(_) => "config",
                E::Shape(_) => "shape",
                E::Diverged { .. } => "diverged",
                E::EmptyGroup | E::ZeroNorm => "embedding",
                E::Invalid(_) => "invalid",
                E::Parse { .. } => "parse",
                E::Io(_) => "io",
                E::Json(_) => "json",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
    }
    "error"
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("{}", json!({"error": kind, "message": message}));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), &format!("{e:#}")),
    }
}
