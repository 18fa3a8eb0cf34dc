use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use desklm::bpe::TokenizerModel;
use desklm::corpus::CleaningConfig;
use desklm::fixtures::{FixtureSet, FixtureSpec};
use desklm::instruct::Templates;
use desklm::model::{forward, load_checkpoint, ModelConfig};
use desklm::pipeline::{self, write_json, PipelineConfig};
use desklm::train::{argmax, SamplingOptions, TrainConfig};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (formats: bpe-v1, packed-v1, ckpt-v1)");

#[derive(Parser)]
#[command(name = "desklm", version = VERSION, about = "Desk-scale language model pipeline")]
struct Cli {
    /// Seed for every randomized stage; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce foreign scripts and filter a JSONL corpus.
    Clean {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        seed_corpus: PathBuf,
        /// Cleaning config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a byte-level BPE tokenizer.
    TrainTokenizer {
        /// Corpus file; repeat for several.
        #[arg(long = "in", required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 4096)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the token ids of a string.
    Tokenize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Tokens per word and per character over a corpus.
    Fertility {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Also write the stats to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build instruct records from QA and translated records.
    BuildInstruct {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        translated: PathBuf,
        /// Template registry JSON; the bundled one when omitted.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a weighted mixture and pack it into fixed-length sequences.
    Mix {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        seq_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a freshly initialized checkpoint.
    InitModel {
        /// Model config JSON; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Next-token logits at the last position of a text.
    Logits {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Next-token training on packed sequences.
    Pretrain {
        #[arg(long)]
        ckpt_in: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log; defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Instruction tuning with the loss on response tokens only.
    Finetune {
        #[arg(long)]
        ckpt_in: PathBuf,
        #[arg(long)]
        instruct: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Template registry supplying the separator.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Continue a prompt.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        top_k: usize,
        #[arg(long, default_value_t = 64)]
        max_new: usize,
    },
    /// Run every stage on the fixture corpus.
    Demo {
        #[arg(long)]
        workdir: PathBuf,
        /// Pipeline config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fixture directory; generated into the workdir when omitted.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Summarize the artifacts of a work directory as JSON.
    Report {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic fixture corpus.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Clean { .. } => "clean",
            Command::TrainTokenizer { .. } => "train-tokenizer",
            Command::Tokenize { .. } => "tokenize",
            Command::Fertility { .. } => "fertility",
            Command::BuildInstruct { .. } => "build-instruct",
            Command::Mix { .. } => "mix",
            Command::InitModel { .. } => "init-model",
            Command::Logits { .. } => "logits",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Generate { .. } => "generate",
            Command::Demo { .. } => "demo",
            Command::Report { .. } => "report",
            Command::GenFixtures { .. } => "gen-fixtures",
        }
    }
}

struct Logger {
    color: bool,
}

impl Logger {
    fn new() -> Self {
        let color =
            std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty()) && std::io::stderr().is_terminal();
        Logger { color }
    }

    fn info(&self, stage: &str, msg: &str) {
        if self.color {
            eprintln!("\x1b[1;34m[{stage}]\x1b[0m {msg}");
        } else {
            eprintln!("[{stage}] {msg}");
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn load_templates(path: Option<&Path>) -> Result<Templates> {
    Ok(match path {
        Some(p) => Templates::load(p)?,
        None => Templates::default(),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_train_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli, log: &Logger) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed;
    let stage = cli.command.name();
    let started = Instant::now();
    match cli.command {
        Command::Clean { input, out, report, seed_corpus, config } => {
            let cfg = match config {
                Some(p) => pipeline::read_json::<CleaningConfig>(&p)?,
                None => CleaningConfig::default(),
            };
            let rep = pipeline::run_clean(&input, &seed_corpus, &cfg, &out, &report)?;
            log.info(
                stage,
                &format!(
                    "kept {}/{} documents (removal {:.3}, perplexity threshold {:.2})",
                    rep.kept_docs, rep.total_docs, rep.removal_fraction, rep.perplexity_threshold
                ),
            );
        }
        Command::TrainTokenizer { input, vocab_size, out } => {
            let m = pipeline::run_train_tokenizer(&input, vocab_size, &out)?;
            log.info(stage, &format!("{} tokens, {} merges", m.vocab_size(), m.merges().len()));
        }
        Command::Tokenize { model, text } => {
            print_json(&TokenizerModel::load(&model)?.encode(&text))?;
        }
        Command::Fertility { model, input, out } => {
            let stats = pipeline::run_fertility(&model, &input)?;
            if let Some(p) = out {
                write_json(&p, &stats)?;
            }
            print_json(&stats)?;
        }
        Command::BuildInstruct { qa, translated, templates, out } => {
            let t = load_templates(templates.as_deref())?;
            let recs = pipeline::run_build_instruct(&qa, &translated, &t, seed.unwrap_or(0), &out)?;
            log.info(stage, &format!("{} records", recs.len()));
        }
        Command::Mix { spec, tokenizer, seq_len, out } => {
            let h = pipeline::run_mix(&spec, &tokenizer, seq_len, seed, &out)?;
            log.info(
                stage,
                &format!(
                    "{} sequences, draw fractions {:?}, token fractions {:?}",
                    h.num_sequences,
                    h.draw_fractions(),
                    h.token_fractions()
                ),
            );
        }
        Command::InitModel { config, out } => {
            let cfg = match config {
                Some(p) => ModelConfig::load(&p)?,
                None => ModelConfig::desk(),
            };
            pipeline::run_init_model(&cfg, seed.unwrap_or(0), &out)?;
        }
        Command::Logits { ckpt, tokenizer, text } => {
            let (h, params) = load_checkpoint(&ckpt)?;
            let ids = TokenizerModel::load(&tokenizer)?.encode(&text);
            let logits = forward(&params, &h.config, &ids)?;
            let last = &logits[(ids.len() - 1) * h.config.vocab_size..];
            print_json(&serde_json::json!({
                "tokens": ids,
                "argmax": argmax(last),
                "logits": last,
            }))?;
        }
        Command::Pretrain { ckpt_in, data, config, out, metrics } => {
            let cfg = load_train_config(&config, seed)?;
            let metrics = metrics.unwrap_or_else(|| with_suffix(&out, ".metrics.jsonl"));
            let o = pipeline::run_pretrain(&ckpt_in, &data, &cfg, &out, Some(&metrics))?;
            log.info(stage, &format!("{} steps, final loss {:.4}", cfg.total_steps, o.final_loss));
        }
        Command::Finetune { ckpt_in, instruct, tokenizer, config, out, templates, metrics } => {
            let cfg = load_train_config(&config, seed)?;
            let sep = load_templates(templates.as_deref())?.separator;
            let metrics = metrics.unwrap_or_else(|| with_suffix(&out, ".metrics.jsonl"));
            let (o, skipped) =
                pipeline::run_finetune(&ckpt_in, &instruct, &tokenizer, &sep, &cfg, &out, Some(&metrics))?;
            log.info(
                stage,
                &format!(
                    "{} steps, final loss {:.4}, {skipped} records skipped as too long",
                    cfg.total_steps, o.final_loss
                ),
            );
        }
        Command::Generate { ckpt, tokenizer, prompt, temperature, top_k, max_new } => {
            let opts = SamplingOptions { max_new, temperature, top_k, seed: seed.unwrap_or(0) };
            println!("{}", pipeline::run_generate(&ckpt, &tokenizer, &prompt, &opts)?);
        }
        Command::Demo { workdir, config, fixtures } => {
            let mut cfg = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if fixtures.is_some() {
                cfg.fixtures = fixtures;
            }
            let r = pipeline::run_demo(&workdir, &cfg, &mut |m| log.info(stage, m))?;
            log.info(
                stage,
                &format!(
                    "done in {:.1}s; pretrain loss {:.3} -> {:.3}",
                    started.elapsed().as_secs_f64(),
                    r.loss.pretrain.initial_loss,
                    r.loss.pretrain.final_loss
                ),
            );
        }
        Command::Report { workdir, out } => {
            let r = pipeline::report(&workdir)?;
            if let Some(p) = out {
                write_json(&p, &r)?;
            }
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::GenFixtures { out } => {
            let spec =
                FixtureSpec { seed: seed.unwrap_or(FixtureSpec::default().seed), ..FixtureSpec::default() };
            FixtureSet::generate(&spec)?.write(&out).context("writing fixtures")?;
            log.info(stage, &format!("wrote {}", out.display()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = cli.command.name();
    let log = Logger::new();
    match run(cli, &log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": { "stage": stage, "message": format!("{e:#}") } });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn version_names_every_format() {
        for v in [desklm::bpe::FORMAT_VERSION, desklm::mix::PACKED_VERSION, desklm::model::CHECKPOINT_VERSION]
        {
            assert!(VERSION.contains(v), "{v}");
        }
    }
}
