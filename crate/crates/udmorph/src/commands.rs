//! Batch workflows shared by the binary and the tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;
use udmorph_core::conllu::Corpus;
use udmorph_core::embeddings::{ContextualSidecar, WordVectorTable};
use udmorph_core::ensemble::{Configuration, ModelConfigurationId};
use udmorph_core::lemma_rules::rule_inventory;
use udmorph_core::merge::{build_mask, merge_corpora, RestrictionMask};
use udmorph_core::model::{
    examples, fit, AuxInputs, EpochReport, LossBreakdown, ModelConfig, ModelError, TaggerModel,
    TrainConfig, Vocabulary,
};
use udmorph_core::tagset::build_inventory;
use udmorph_core::CategoryTable;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

/// Process exit status for a failed command: 1 usage, 2 data, 3 divergence.
pub fn exit_code(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if let Some(ModelError::Divergence { .. }) = cause.downcast_ref::<ModelError>() {
            return 3;
        }
        if let Some(CommandError::Usage(_)) = cause.downcast_ref::<CommandError>() {
            return 1;
        }
        if let Some(
            ConfigError::UnknownKey(_) | ConfigError::Syntax { .. } | ConfigError::Value { .. },
        ) = cause.downcast_ref::<ConfigError>()
        {
            return 1;
        }
    }
    2
}

/// Corpus size figures as reported per treebank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stats {
    pub words: usize,
    pub lemma_rules: usize,
    pub tags: usize,
    pub features: usize,
    pub categories: usize,
}

impl Stats {
    pub fn to_text(&self) -> String {
        format!(
            "words={}\nlemma_rules={}\ntags={}\nfeatures={}\ncategories={}\n",
            self.words, self.lemma_rules, self.tags, self.features, self.categories
        )
    }
}

pub fn stats(corpus: &Corpus, table: &CategoryTable) -> Result<Stats, CommandError> {
    if corpus.token_count() == 0 {
        return Err(CommandError::Data(format!(
            "{}: corpus has no tokens",
            corpus.treebank_id
        )));
    }
    let tags = build_inventory(corpus, table);
    Ok(Stats {
        words: corpus.token_count(),
        lemma_rules: rule_inventory(corpus).len(),
        tags: tags.bundle_count(),
        features: tags.feature_count(),
        categories: tags.category_count(),
    })
}

/// Turns on the pretrained and contextual inputs when their data is given,
/// unless the configuration already decides.
pub fn enable_inputs(
    config: &mut ModelConfig,
    explicit: impl Fn(&str) -> bool,
    word_vectors: Option<&WordVectorTable>,
    sidecar: Option<&ContextualSidecar>,
) {
    if let Some(table) = word_vectors {
        if !explicit("use_pretrained") {
            config.use_pretrained = true;
        }
        if !explicit("pretrained_dim") {
            config.pretrained_dim = table.dimension();
        }
    }
    if let Some(sidecar) = sidecar {
        if !explicit("use_contextual") {
            config.use_contextual = true;
        }
        if !explicit("contextual_dim") {
            config.contextual_dim = sidecar.dimension();
        }
    }
}

pub const LOSS_LOG_HEADER: &str =
    "epoch\ttotal\tlemma\tbundle\tcategory\tw\tdev_lemma_acc\tdev_morph_acc\n";

fn log_row(out: &mut String, epoch: usize, loss: &LossBreakdown, dev: Option<(f64, f64)>) {
    let (lemma_acc, morph_acc) = dev.map_or_else(
        || ("-".into(), "-".into()),
        |(l, m)| (l.to_string(), m.to_string()),
    );
    let _ = writeln!(
        out,
        "{epoch}\t{}\t{}\t{}\t{}\t{}\t{lemma_acc}\t{morph_acc}",
        loss.total(),
        loss.lemma,
        loss.bundle,
        loss.category,
        loss.weight
    );
}

/// Parsed row of a loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub total: f64,
    pub lemma: f64,
    pub bundle: f64,
    pub category: f64,
    pub weight: f64,
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossRow>, CommandError> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || CommandError::Data(format!("bad loss log line `{line}`"));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 8 {
                return Err(bad());
            }
            let num = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
            Ok(LossRow {
                epoch: fields[0].parse().map_err(|_| bad())?,
                total: num(1)?,
                lemma: num(2)?,
                bundle: num(3)?,
                category: num(4)?,
                weight: num(5)?,
            })
        })
        .collect()
}

pub struct TrainJob<'a> {
    pub train: &'a Corpus,
    pub dev: Option<&'a Corpus>,
    pub table: &'a CategoryTable,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub aux: AuxInputs<'a>,
}

pub struct Trained {
    pub model: TaggerModel,
    /// Tab-separated losses; row 0 is the initial model.
    pub loss_log: String,
    pub best_epoch: Option<usize>,
}

pub fn train_model(job: &TrainJob<'_>) -> Result<Trained, ModelError> {
    let vocab = Vocabulary::build(job.train, job.table, job.model_config.ngram_max)?;
    let model = TaggerModel::new(job.model_config.clone(), vocab, job.train_config.seed)?;
    let data = examples(&model, job.train, job.table, job.aux)?;
    let refs: Vec<_> = data.iter().collect();
    let mut loss_log = LOSS_LOG_HEADER.to_string();
    log_row(
        &mut loss_log,
        0,
        &model.loss(&refs, model.regularization_weight()),
        None,
    );
    let dev = job.dev.map(|d| (d, job.aux));
    let outcome = fit(
        model,
        &data,
        dev,
        &job.train_config,
        &mut |report: &EpochReport| {
            let dev = report.dev.map(|r| (r.lemma_accuracy, r.morph_accuracy));
            log_row(&mut loss_log, report.epoch, &report.train_loss, dev);
            log::info!(
                "epoch {} loss {:.4}",
                report.epoch,
                report.train_loss.total()
            );
        },
    )?;
    Ok(Trained {
        model: outcome.model,
        loss_log,
        best_epoch: outcome.best_epoch,
    })
}

/// One member of the configuration grid.
pub struct GridMember<'a> {
    pub id: ModelConfigurationId,
    pub train: &'a Corpus,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub with_contextual: bool,
}

/// The nine grid members. Replica `r` uses seed `seed + r - 1`; merged
/// members train on `merged`, the others on `train`.
pub fn grid_members<'a>(
    train: &'a Corpus,
    merged: &'a Corpus,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Vec<GridMember<'a>> {
    ModelConfigurationId::grid()
        .into_iter()
        .map(|id| {
            let mut config = model_config.clone();
            let with_contextual = id.configuration != Configuration::NoContextual;
            if !with_contextual {
                config.use_contextual = false;
                config.contextual_dim = 0;
            }
            GridMember {
                id,
                train: if id.configuration == Configuration::Merged {
                    merged
                } else {
                    train
                },
                model_config: config,
                train_config: TrainConfig {
                    seed: train_config.seed + u64::from(id.replica) - 1,
                    ..train_config.clone()
                },
                with_contextual,
            }
        })
        .collect()
}

/// Merged corpus of `target` and `others`, with `target`'s restriction mask
/// over the merged vocabulary.
pub fn merged_with_mask(
    target: &Corpus,
    others: &[Corpus],
    table: &CategoryTable,
    ngram_max: usize,
) -> anyhow::Result<(Corpus, RestrictionMask)> {
    let mut all = vec![target.clone()];
    all.extend(others.iter().cloned());
    let merged = merge_corpora(&all)?.corpus;
    let vocab = Vocabulary::build(&merged, table, ngram_max)?;
    let mask = build_mask(&vocab, target)?;
    Ok((merged, mask))
}

/// Model files of a directory, by file name.
pub fn model_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in
        std::fs::read_dir(dir).map_err(|e| CommandError::Data(format!("{}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "mfm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Member name of a model file: its stem.
pub fn member_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}
