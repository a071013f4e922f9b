use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use udmorph::commands::{
    enable_inputs, exit_code, grid_members, member_name, merged_with_mask, model_files, stats,
    train_model, CommandError, TrainJob,
};
use udmorph::config::RunConfig;
use udmorph::container::{load_model, save_model, LoadedModel};
use udmorph::formats::{
    load_category_table, load_ensemble_spec, load_mask, load_sidecars, load_word_vectors,
    read_corpus, write_bytes, write_corpus, write_rule_inventory,
};
use udmorph::{provenance, provenance_header};
use udmorph_core::conllu::Corpus;
use udmorph_core::ensemble::{
    ensemble_predict, select_any_subset, select_configuration, EnsembleSpec, Member,
    ModelConfigurationId, Objective, SelectionMethod,
};
use udmorph_core::lemma_rules::rule_inventory;
use udmorph_core::merge::{build_mask, merge_corpora, RestrictionMask};
use udmorph_core::metrics::{evaluate_with, F1Averaging};
use udmorph_core::model::{predict, AuxInputs, TaggerModel, Vocabulary};
use udmorph_core::CategoryTable;

#[derive(Parser)]
#[command(
    name = "udmorph",
    version,
    about = "Contextual lemmatizer and morphological tagger"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count the lemma rules of a corpus, most frequent first.
    InduceRules {
        train: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print word, rule, tag, feature and category counts.
    Stats {
        train: PathBuf,
        #[arg(long)]
        category_table: Option<PathBuf>,
    },
    /// Train one model, or the nine-model grid with `--grid`.
    Train(TrainArgs),
    /// Fill lemma and feature columns with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: PredictIo,
    },
    /// Score predictions against gold annotation.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Average F1 per token instead of over all feature values.
        #[arg(long)]
        per_token_f1: bool,
    },
    /// Predict with, or select, an ensemble of models.
    Ensemble(EnsembleArgs),
    /// Concatenate corpora of one language and write restriction masks.
    Merge {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write `<treebank>.mask` for every input here.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        category_table: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Model file, or output directory with `--grid`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    contextual_sidecar: Vec<PathBuf>,
    #[arg(long)]
    category_table: Option<PathBuf>,
    /// Other training corpora of the same language, for merged models.
    #[arg(long, num_args = 1..)]
    merge_with: Vec<PathBuf>,
    #[arg(long)]
    grid: bool,
    /// Extra `key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
}

#[derive(Args)]
struct PredictIo {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    contextual_sidecar: Vec<PathBuf>,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Member model files; defaults to every `.mfm` in `--models-dir`.
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Where spec members are looked up; defaults to the spec's directory.
    #[arg(long)]
    models_dir: Option<PathBuf>,
    #[arg(long, value_parser = ["any_subset", "configuration"])]
    select: Option<String>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Selected spec file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    contextual_sidecar: Vec<PathBuf>,
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    CommandError::Usage(message.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::InduceRules { train, out } => induce_rules(&train, out.as_deref()),
        Command::Stats {
            train,
            category_table,
        } => {
            let corpus = read_corpus(&train, None)?;
            let table = load_category_table(category_table.as_deref())?;
            print!("{}", stats(&corpus, &table)?.to_text());
            Ok(())
        }
        Command::Train(args) => train(args),
        Command::Predict { model, io } => predict_command(&model, io),
        Command::Evaluate {
            gold,
            pred,
            per_token_f1,
        } => {
            let averaging = if per_token_f1 {
                F1Averaging::PerToken
            } else {
                F1Averaging::Micro
            };
            let report = evaluate_with(
                &read_corpus(&gold, None)?,
                &read_corpus(&pred, None)?,
                averaging,
            )?;
            print!("{}\n{}", report.table(), report.key_values());
            Ok(())
        }
        Command::Ensemble(args) => ensemble(args),
        Command::Merge {
            inputs,
            out,
            masks,
            category_table,
        } => merge(&inputs, &out, masks.as_deref(), category_table.as_deref()),
    }
}

fn induce_rules(train: &Path, out: Option<&Path>) -> Result<()> {
    let corpus = read_corpus(train, None)?;
    let mut text = Vec::new();
    writeln!(text, "{}", provenance_header(&provenance("none", None)))?;
    write_rule_inventory(&mut text, &rule_inventory(&corpus))?;
    match out {
        Some(path) => write_bytes(path, &text)?,
        None => std::io::stdout().write_all(&text)?,
    }
    Ok(())
}

fn run_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let paths = [
        ("train", &args.train),
        ("dev", &args.dev),
        ("model_out", &args.out),
        ("word_vectors", &args.word_vectors),
        ("category_table", &args.category_table),
    ];
    for (key, path) in paths {
        if let Some(path) = path {
            config.set(key, &path.to_string_lossy())?;
        }
    }
    if !args.contextual_sidecar.is_empty() {
        let joined: Vec<String> = args
            .contextual_sidecar
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
        config.set("contextual_sidecar", &joined.join(","))?;
    }
    if let Some(w) = args.w {
        config.set("w", &w.to_string())?;
    }
    if let Some(seed) = args.seed {
        config.set("seed", &seed.to_string())?;
    }
    for setting in &args.settings {
        let (key, value) = setting
            .split_once('=')
            .ok_or_else(|| usage(format!("expected KEY=VALUE, got `{setting}`")))?;
        config.set(key.trim(), value.trim())?;
    }
    Ok(config)
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if !path.exists() {
        return Err(CommandError::Data(format!("{}: no such file", path.display())).into());
    }
    Ok(path)
}

fn train(args: TrainArgs) -> Result<()> {
    let config = run_config(&args)?;
    let train_path = existing(
        config
            .path("train")
            .ok_or_else(|| usage("--train is required"))?,
    )?;
    let out = config
        .path("model_out")
        .ok_or_else(|| usage("--out is required"))?;
    let table = load_category_table(
        config
            .path("category_table")
            .map(existing)
            .transpose()?
            .as_deref(),
    )?;
    let corpus = read_corpus(&train_path, None)?;
    let dev = config
        .path("dev")
        .map(existing)
        .transpose()?
        .map(|p| read_corpus(&p, None))
        .transpose()?;
    let word_vectors = config
        .path("word_vectors")
        .map(existing)
        .transpose()?
        .map(|p| load_word_vectors(&p))
        .transpose()?;
    let sidecar_paths: Vec<PathBuf> = config
        .get("contextual_sidecar")
        .map(|v| v.split(',').map(PathBuf::from).map(existing).collect())
        .transpose()?
        .unwrap_or_default();
    let sidecar = load_sidecars(&sidecar_paths)?;

    let mut model_config = config.model_config()?;
    enable_inputs(
        &mut model_config,
        |k| config.get(k).is_some(),
        word_vectors.as_ref(),
        sidecar.as_ref(),
    );
    model_config.validate()?;
    let train_config = config.train_config()?;
    let aux = AuxInputs {
        word_vectors: word_vectors.as_ref(),
        contextual: sidecar.as_ref(),
    };
    let hash = config.hash();

    if !args.grid {
        let trained = train_model(&TrainJob {
            train: &corpus,
            dev: dev.as_ref(),
            table: &table,
            model_config,
            train_config: train_config.clone(),
            aux,
        })?;
        save_model(
            &out,
            &trained.model,
            &provenance(&hash, Some(train_config.seed)),
        )?;
        write_bytes(&out.with_extension("loss.tsv"), trained.loss_log.as_bytes())?;
        if let Some(epoch) = trained.best_epoch {
            log::info!("kept epoch {epoch}");
        }
        return Ok(());
    }

    let others = args
        .merge_with
        .iter()
        .map(|p| read_corpus(&existing(p.clone())?, None).map_err(anyhow::Error::from))
        .collect::<Result<Vec<Corpus>>>()?;
    if others.is_empty() {
        log::warn!("no --merge-with corpora; merged models train on the target corpus alone");
    }
    let (merged, mask) = merged_with_mask(&corpus, &others, &table, model_config.ngram_max)?;
    if sidecar.is_some() && merged.sentences.iter().any(|s| s.sent_id().is_none()) {
        return Err(CommandError::Data(
            "merged training with contextual vectors needs a sent_id on every sentence".into(),
        )
        .into());
    }
    write_bytes(&out.join("merged.mask"), mask.to_text().as_bytes())?;
    for member in grid_members(&corpus, &merged, &model_config, &train_config) {
        log::info!("training {}", member.id);
        let aux = AuxInputs {
            contextual: if member.with_contextual {
                aux.contextual
            } else {
                None
            },
            ..aux
        };
        let trained = train_model(&TrainJob {
            train: member.train,
            dev: dev.as_ref(),
            table: &table,
            model_config: member.model_config,
            train_config: member.train_config.clone(),
            aux,
        })
        .with_context(|| format!("training {}", member.id))?;
        let path = out.join(format!("{}.mfm", member.id));
        save_model(
            &path,
            &trained.model,
            &provenance(&hash, Some(member.train_config.seed)),
        )?;
        write_bytes(
            &out.join(format!("{}.loss.tsv", member.id)),
            trained.loss_log.as_bytes(),
        )?;
    }
    Ok(())
}

struct Inputs {
    corpus: Corpus,
    mask: Option<RestrictionMask>,
    word_vectors: Option<udmorph_core::embeddings::WordVectorTable>,
    sidecar: Option<udmorph_core::embeddings::ContextualSidecar>,
}

impl Inputs {
    fn load(
        input: &Path,
        mask: Option<&Path>,
        word_vectors: Option<&Path>,
        sidecars: &[PathBuf],
    ) -> Result<Self> {
        Ok(Inputs {
            corpus: read_corpus(input, None)?,
            mask: mask.map(load_mask).transpose()?,
            word_vectors: word_vectors.map(load_word_vectors).transpose()?,
            sidecar: load_sidecars(sidecars)?,
        })
    }

    fn aux(&self) -> AuxInputs<'_> {
        AuxInputs {
            word_vectors: self.word_vectors.as_ref(),
            contextual: self.sidecar.as_ref(),
        }
    }
}

fn predict_command(model: &Path, io: PredictIo) -> Result<()> {
    let LoadedModel { model, provenance } = load_model(model)?;
    let inputs = Inputs::load(
        &io.input,
        io.mask.as_deref(),
        io.word_vectors.as_deref(),
        &io.contextual_sidecar,
    )?;
    if let Some(mask) = &inputs.mask {
        mask.check(model.vocab())?;
    }
    let predicted = predict(&model, &inputs.corpus, inputs.aux(), inputs.mask.as_ref())?;
    write_corpus(
        &io.output,
        &predicted,
        Some(&provenance_header(&provenance)),
    )?;
    Ok(())
}

fn load_members(paths: &[PathBuf]) -> Result<Vec<(String, TaggerModel)>> {
    paths
        .iter()
        .map(|p| Ok((member_name(p), load_model(p)?.model)))
        .collect()
}

fn ensemble(args: EnsembleArgs) -> Result<()> {
    let spec = args.spec.as_deref().map(load_ensemble_spec).transpose()?;
    let models_dir = args.models_dir.clone().or_else(|| {
        args.spec
            .as_ref()
            .and_then(|s| s.parent().map(Path::to_path_buf))
    });
    let paths = match (&spec, args.models.is_empty()) {
        (Some(_), false) => return Err(usage("give either --spec or --models")),
        (Some(spec), true) => {
            let dir = models_dir.unwrap_or_default();
            spec.members
                .iter()
                .map(|m| dir.join(format!("{m}.mfm")))
                .collect()
        }
        (None, false) => args.models.clone(),
        (None, true) => match &models_dir {
            Some(dir) => model_files(dir)?,
            None => return Err(usage("give --spec, --models or --models-dir")),
        },
    };
    if paths.is_empty() {
        return Err(CommandError::Data("no member models".into()).into());
    }
    let members = load_members(&paths)?;

    if let Some(method) = &args.select {
        let dev_path = args
            .dev
            .as_deref()
            .ok_or_else(|| usage("--select needs --dev"))?;
        let out = args
            .out
            .as_deref()
            .ok_or_else(|| usage("--select needs --out"))?;
        let inputs = Inputs::load(
            dev_path,
            args.mask.as_deref(),
            args.word_vectors.as_deref(),
            &args.contextual_sidecar,
        )?;
        let pool: Vec<Member<'_>> = members
            .iter()
            .map(|(name, model)| Member {
                name,
                model,
                id: name.parse::<ModelConfigurationId>().ok(),
            })
            .collect();
        let select = if method == "configuration" {
            select_configuration
        } else {
            select_any_subset
        };
        let selection = select(
            &pool,
            &inputs.corpus,
            inputs.aux(),
            inputs.mask.as_ref(),
            Objective::default(),
        )?;
        write_bytes(out, selection.spec.to_text().as_bytes())?;
        print!("{}", selection.report.key_values());
        return Ok(());
    }

    let input = args
        .input
        .as_deref()
        .ok_or_else(|| usage("--input is required"))?;
    let output = args
        .output
        .as_deref()
        .ok_or_else(|| usage("--output is required"))?;
    let inputs = Inputs::load(
        input,
        args.mask.as_deref(),
        args.word_vectors.as_deref(),
        &args.contextual_sidecar,
    )?;
    let refs: Vec<&TaggerModel> = members.iter().map(|(_, m)| m).collect();
    let predicted = ensemble_predict(&refs, &inputs.corpus, inputs.aux(), inputs.mask.as_ref())?;
    let spec = spec.unwrap_or_else(|| EnsembleSpec {
        members: members.iter().map(|(n, _)| n.clone()).collect(),
        method: SelectionMethod::Manual,
    });
    let spec_hash = udmorph::config::text_hash(&spec.to_text());
    write_corpus(
        output,
        &predicted,
        Some(&provenance_header(&provenance(&spec_hash, None))),
    )?;
    Ok(())
}

fn merge(inputs: &[PathBuf], out: &Path, masks: Option<&Path>, table: Option<&Path>) -> Result<()> {
    let table: CategoryTable = load_category_table(table)?;
    let corpora = inputs
        .iter()
        .map(|p| read_corpus(p, None))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = merge_corpora(&corpora)?;
    let header = provenance_header(&provenance("none", None));
    write_corpus(out, &merged.corpus, Some(&header))?;
    if let Some(dir) = masks {
        let vocab = Vocabulary::build(&merged.corpus, &table, 3)?;
        for corpus in &corpora {
            let mask = build_mask(&vocab, corpus)?;
            write_bytes(
                &dir.join(format!("{}.mask", corpus.treebank_id)),
                mask.to_text().as_bytes(),
            )?;
        }
    }
    Ok(())
}
