//! File-level stage runners, the end-to-end demo and the workdir report.
//!
//! Every stage reads and writes plain files so the binary, the demo and the
//! tests drive exactly the same code.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bpe::{fertility, train_bpe, FertilityStats, TokenizerModel, DEFAULT_SPECIALS};
use crate::corpus::{
    clean_corpus, read_documents, read_jsonl, read_records, write_documents, write_jsonl, CleaningConfig,
    CleaningReport,
};
use crate::error::{Error, Result};
use crate::fixtures::{FixtureSet, FixtureSpec};
use crate::instruct::{build_instruct, InstructRecord, QaRecord, Templates, TranslatedRecord};
use crate::mix::{build_packed, ComponentSpec, MixtureSpec, PackedData, PackedHeader};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use crate::train::{
    generate, prepare_finetune, pretrain_examples, read_metrics, train, SamplingOptions, StepMetrics,
    TrainConfig, TrainOutcome, TrainOutputs,
};

/// Epoch-based training plan; the step count follows from the data size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub epochs: f64,
    pub peak_lr: f64,
    pub min_lr: f64,
    /// Share of total steps spent warming up.
    pub warmup_fraction: f64,
    pub global_batch: usize,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 10.0,
            peak_lr: 1e-3,
            min_lr: 1e-4,
            warmup_fraction: 0.1,
            global_batch: 8,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainPlan {
    /// Concrete config for `corpus_tokens` input tokens at `seq_len` per
    /// sequence.
    pub fn train_config(&self, corpus_tokens: u64, seq_len: usize, seed: u64) -> Result<TrainConfig> {
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must be in [0, 1)".into()));
        }
        let total = TrainConfig::steps_for(self.epochs, corpus_tokens, self.global_batch, seq_len).max(2);
        let cfg = TrainConfig {
            peak_lr: self.peak_lr,
            min_lr: self.min_lr,
            warmup_steps: ((total as f64 * self.warmup_fraction) as usize).min(total - 1),
            total_steps: total,
            global_batch: self.global_batch,
            seed,
            grad_clip: self.grad_clip,
            ..TrainConfig::large()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything the demo needs in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Propagated to every seeded stage.
    pub seed: u64,
    /// Directory holding `web.jsonl`, `rabbinic.jsonl`, `seed.jsonl`,
    /// `qa.jsonl` and `translated.jsonl`. When absent the default fixture set
    /// is generated into `<workdir>/fixtures`.
    pub fixtures: Option<PathBuf>,
    pub cleaning: CleaningConfig,
    pub vocab_size: usize,
    /// `vocab_size` is replaced by the trained tokenizer's size.
    pub model: ModelConfig,
    pub pretrain: TrainPlan,
    /// Defaults to [`TrainConfig::finetune_from`] of the pretraining config.
    pub finetune: Option<TrainConfig>,
    pub templates: Option<PathBuf>,
    pub sampling: SamplingOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            fixtures: None,
            cleaning: CleaningConfig::default(),
            vocab_size: 4096,
            model: ModelConfig::desk(),
            pretrain: TrainPlan::default(),
            finetune: None,
            templates: None,
            sampling: SamplingOptions { max_new: 48, temperature: 0.8, top_k: 20, seed: 0 },
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }
}

/// Fixed artifact names inside a work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

macro_rules! artifacts {
    ($($name:ident => $file:literal),* $(,)?) => {
        impl Layout {
            $(pub fn $name(&self) -> PathBuf { self.root.join($file) })*
        }
    };
}

artifacts! {
    fixtures => "fixtures",
    config => "pipeline.json",
    cleaned => "web.clean.jsonl",
    cleaning_report => "cleaning_report.json",
    tokenizer => "tokenizer.json",
    fertility => "fertility.json",
    templates => "templates.json",
    instruct => "instruct.jsonl",
    mixture => "mixture.json",
    packed => "packed.bin",
    init_checkpoint => "init.ckpt",
    pretrain_config => "pretrain.json",
    pretrain_checkpoint => "pretrain.ckpt",
    pretrain_metrics => "pretrain.metrics.jsonl",
    finetune_config => "finetune.json",
    finetune_checkpoint => "finetune.ckpt",
    finetune_metrics => "finetune.metrics.jsonl",
    generation => "generation.json",
    report => "report.json",
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { path, stage })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
}

/// Calibrates on the seed corpus, cleans `input` and writes the kept
/// documents and the report.
pub fn run_clean(
    input: &Path,
    seed_corpus: &Path,
    config: &CleaningConfig,
    out: &Path,
    report: &Path,
) -> Result<CleaningReport> {
    let seed = read_documents(seed_corpus)?;
    let mut config = config.clone();
    let lm = config.calibrate(&seed)?;
    let (docs, rep) = clean_corpus(&read_records(input)?, &lm, &config)?;
    write_documents(out, &docs)?;
    write_json(report, &rep)?;
    Ok(rep)
}

/// Trains a tokenizer on the texts of every input corpus, in order.
pub fn run_train_tokenizer(inputs: &[PathBuf], vocab_size: usize, out: &Path) -> Result<TokenizerModel> {
    let mut texts = Vec::new();
    for p in inputs {
        texts.extend(read_documents(p)?.into_iter().map(|d| d.text));
    }
    let model = train_bpe(&texts, vocab_size, &DEFAULT_SPECIALS)?;
    model.save(out)?;
    Ok(model)
}

pub fn run_fertility(tokenizer: &Path, corpus: &Path) -> Result<FertilityStats> {
    let model = TokenizerModel::load(tokenizer)?;
    let texts: Vec<String> = read_documents(corpus)?.into_iter().map(|d| d.text).collect();
    fertility(&model, &texts)
}

pub fn run_build_instruct(
    qa: &Path,
    translated: &Path,
    templates: &Templates,
    seed: u64,
    out: &Path,
) -> Result<Vec<InstructRecord>> {
    let qa: Vec<QaRecord> = read_jsonl(qa)?;
    let tr: Vec<TranslatedRecord> = read_jsonl(translated)?;
    let records = build_instruct(&qa, &tr, templates, seed)?;
    write_jsonl(out, &records)?;
    Ok(records)
}

/// Tokenizes every component of the spec (paths relative to the spec file)
/// and writes packed sequences of `seq_len` tokens.
pub fn run_mix(
    spec_path: &Path,
    tokenizer: &Path,
    seq_len: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<PackedHeader> {
    let mut spec = MixtureSpec::load(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let model = TokenizerModel::load(tokenizer)?;
    let mut corpora = Vec::new();
    for c in &spec.components {
        let docs = read_documents(&base.join(&c.path))?;
        if docs.is_empty() {
            return Err(Error::Empty("mixture component has no documents"));
        }
        corpora.push(docs.iter().map(|d| model.encode(&d.text)).collect::<Vec<_>>());
    }
    let packed = build_packed(&spec, &corpora, seq_len, model.eod_id()?, model.vocab_size())?;
    packed.write(out)?;
    Ok(packed.header)
}

pub fn run_init_model(config: &ModelConfig, seed: u64, out: &Path) -> Result<()> {
    let params = ModelParams::<f32>::init(config, seed)?;
    save_checkpoint(out, config, &params, 0)
}

pub fn run_pretrain(
    ckpt_in: &Path,
    data: &Path,
    config: &TrainConfig,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<TrainOutcome> {
    let (header, mut params) = load_checkpoint(ckpt_in)?;
    let examples = pretrain_examples(&PackedData::read(data)?, &header.config)?;
    let outputs =
        TrainOutputs { checkpoint: Some(out.to_path_buf()), metrics: metrics.map(Path::to_path_buf) };
    train(&mut params, &header.config, &examples, config, &outputs)
}

/// Returns the outcome and the number of records too long for the context.
pub fn run_finetune(
    ckpt_in: &Path,
    instruct: &Path,
    tokenizer: &Path,
    separator: &str,
    config: &TrainConfig,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<(TrainOutcome, usize)> {
    let (header, mut params) = load_checkpoint(ckpt_in)?;
    let model = TokenizerModel::load(tokenizer)?;
    if model.vocab_size() > header.config.vocab_size {
        return Err(Error::Config(format!(
            "tokenizer vocabulary {} exceeds model vocabulary {}",
            model.vocab_size(),
            header.config.vocab_size
        )));
    }
    let records: Vec<InstructRecord> = read_jsonl(instruct)?;
    let (examples, skipped) = prepare_finetune(&records, &model, separator, header.config.seq_len)?;
    let outputs =
        TrainOutputs { checkpoint: Some(out.to_path_buf()), metrics: metrics.map(Path::to_path_buf) };
    let outcome = train(&mut params, &header.config, &examples, config, &outputs)?;
    Ok((outcome, skipped))
}

pub fn run_generate(ckpt: &Path, tokenizer: &Path, prompt: &str, opts: &SamplingOptions) -> Result<String> {
    let (header, params) = load_checkpoint(ckpt)?;
    let model = TokenizerModel::load(tokenizer)?;
    generate(&params, &header.config, &model, prompt, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prompt: String,
    pub completion: String,
    pub options: SamplingOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub path: PathBuf,
    pub weight: f64,
    pub documents: usize,
    pub draw_fraction: f64,
    pub token_fraction: f64,
    pub sequence_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub num_sequences: usize,
    pub seq_len: usize,
    pub components: Vec<ComponentSummary>,
}

impl MixtureSummary {
    pub fn from_header(h: &PackedHeader) -> Self {
        let (d, t, s) = (h.draw_fractions(), h.token_fractions(), h.sequence_fractions());
        let components = h
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| ComponentSummary {
                path: c.path.clone(),
                weight: c.weight,
                documents: c.documents,
                draw_fraction: d[i],
                token_fraction: t[i],
                sequence_fraction: s[i],
            })
            .collect();
        MixtureSummary { num_sequences: h.num_sequences, seq_len: h.seq_len, components }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub tokens: u64,
    pub epochs: f64,
}

impl RunSummary {
    pub fn from_metrics(m: &[StepMetrics]) -> Result<Self> {
        let (first, last) = match (m.first(), m.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Empty("metrics log")),
        };
        Ok(RunSummary {
            steps: last.step,
            initial_loss: first.loss,
            final_loss: last.loss,
            tokens: last.tokens,
            epochs: last.epoch,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub pretrain: RunSummary,
    pub finetune: Option<RunSummary>,
}

/// Aggregated metrics of a work directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cleaning: CleaningReport,
    pub fertility: FertilityStats,
    pub mixture: MixtureSummary,
    pub loss: LossSummary,
    pub generation: Option<Generation>,
}

/// Reads the stage artifacts of `workdir`. A missing required artifact is
/// reported together with the stage that produces it.
pub fn report(workdir: &Path) -> Result<Report> {
    let l = Layout::new(workdir);
    let cleaning = read_json(&require(l.cleaning_report(), "clean")?)?;
    let fertility = read_json(&require(l.fertility(), "fertility")?)?;
    let packed = PackedData::read(&require(l.packed(), "mix")?)?;
    let pretrain = RunSummary::from_metrics(&read_metrics(&require(l.pretrain_metrics(), "pretrain")?)?)?;
    let finetune = match l.finetune_metrics() {
        p if p.exists() => Some(RunSummary::from_metrics(&read_metrics(&p)?)?),
        _ => None,
    };
    let generation = match l.generation() {
        p if p.exists() => Some(read_json(&p)?),
        _ => None,
    };
    Ok(Report {
        cleaning,
        fertility,
        mixture: MixtureSummary::from_header(&packed.header),
        loss: LossSummary { pretrain, finetune },
        generation,
    })
}

/// Runs every stage in order inside `workdir` and writes `report.json`.
/// `log` receives one line per stage.
pub fn run_demo(workdir: &Path, config: &PipelineConfig, log: &mut dyn FnMut(&str)) -> Result<Report> {
    let l = Layout::new(workdir);
    std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    write_json(&l.config(), config)?;

    let fixtures = match &config.fixtures {
        Some(dir) => dir.clone(),
        None => {
            FixtureSet::generate(&FixtureSpec::default())?.write(&l.fixtures())?;
            l.fixtures()
        }
    };
    let fx = |name: &str| require(fixtures.join(name), "gen-fixtures");

    let rep = run_clean(
        &fx("web.jsonl")?,
        &fx("seed.jsonl")?,
        &config.cleaning,
        &l.cleaned(),
        &l.cleaning_report(),
    )?;
    log(&format!(
        "clean: kept {}/{} documents, removal fraction {:.3}",
        rep.kept_docs, rep.total_docs, rep.removal_fraction
    ));

    let rabbinic = fx("rabbinic.jsonl")?;
    let tok = run_train_tokenizer(&[l.cleaned(), rabbinic.clone()], config.vocab_size, &l.tokenizer())?;
    let fert = run_fertility(&l.tokenizer(), &l.cleaned())?;
    write_json(&l.fertility(), &fert)?;
    log(&format!(
        "train-tokenizer: {} tokens, {:.3} tokens/word, {:.3} tokens/char",
        tok.vocab_size(),
        fert.tokens_per_word,
        fert.tokens_per_char
    ));

    let templates = match &config.templates {
        Some(p) => Templates::load(p)?,
        None => Templates::default(),
    };
    write_json(&l.templates(), &templates)?;
    let instruct = run_build_instruct(
        &fx("qa.jsonl")?,
        &fx("translated.jsonl")?,
        &templates,
        config.seed,
        &l.instruct(),
    )?;
    log(&format!("build-instruct: {} records", instruct.len()));

    let model = ModelConfig { vocab_size: tok.vocab_size(), ..config.model.clone() };
    model.validate()?;
    let spec = MixtureSpec {
        components: vec![
            ComponentSpec { path: relative_to(&l.cleaned(), workdir), weight: 0.5 },
            ComponentSpec { path: relative_to(&rabbinic, workdir), weight: 0.5 },
        ],
        seed: config.seed,
        num_documents: None,
    };
    write_json(&l.mixture(), &spec)?;
    let header = run_mix(&l.mixture(), &l.tokenizer(), model.seq_len + 1, None, &l.packed())?;
    log(&format!(
        "mix: {} sequences of {} tokens, draw fractions {:?}",
        header.num_sequences,
        header.seq_len,
        header.draw_fractions()
    ));

    run_init_model(&model, config.seed, &l.init_checkpoint())?;
    let input_tokens = (header.num_sequences * (header.seq_len - 1)) as u64;
    let pre = config.pretrain.train_config(input_tokens, model.seq_len, config.seed)?;
    write_json(&l.pretrain_config(), &pre)?;
    let out = run_pretrain(
        &l.init_checkpoint(),
        &l.packed(),
        &pre,
        &l.pretrain_checkpoint(),
        Some(&l.pretrain_metrics()),
    )?;
    log(&format!("pretrain: {} steps, final loss {:.4}", pre.total_steps, out.final_loss));

    let ft = config.finetune.clone().unwrap_or_else(|| pre.finetune_from());
    write_json(&l.finetune_config(), &ft)?;
    let (out, skipped) = run_finetune(
        &l.pretrain_checkpoint(),
        &l.instruct(),
        &l.tokenizer(),
        &templates.separator,
        &ft,
        &l.finetune_checkpoint(),
        Some(&l.finetune_metrics()),
    )?;
    log(&format!(
        "finetune: {} steps, final loss {:.4}, {skipped} records over length",
        ft.total_steps, out.final_loss
    ));

    let first = instruct.first().ok_or(Error::Empty("instruct records"))?;
    let mut prompt = String::new();
    if let Some(s) = &first.system {
        prompt.push_str(s);
        prompt.push_str(&templates.separator);
    }
    prompt.push_str(&first.prompt);
    prompt.push_str(&templates.separator);
    let prompt = fit_prompt(&prompt, &tok, model.seq_len)?;
    let opts = SamplingOptions { seed: config.seed, ..config.sampling.clone() };
    let completion = run_generate(&l.finetune_checkpoint(), &l.tokenizer(), &prompt, &opts)?;
    write_json(&l.generation(), &Generation { prompt, completion, options: opts })?;
    log("generate: wrote generation.json");

    let r = report(workdir)?;
    write_json(&l.report(), &r)?;
    Ok(r)
}

/// Keeps the tail of `prompt` so that it encodes to fewer than `seq_len / 2`
/// tokens, leaving room for the continuation.
fn fit_prompt(prompt: &str, tok: &TokenizerModel, seq_len: usize) -> Result<String> {
    let ids = tok.encode(prompt);
    let keep = (seq_len / 2).max(1);
    if ids.len() <= keep {
        return Ok(prompt.to_string());
    }
    let bytes = tok.decode_bytes(&ids[ids.len() - keep..])?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}
