//! The `neurogpt` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Strategy;
use crate::signal::{eegbin, preprocess, Montage, Recording};
use crate::synth::{gen_pretrain_corpus, gen_trialset};
use crate::train::{
    finetune_trials, loso_evaluate, pretrain, sweep, trial_window, Checkpoint, SweepAxis, TrialSet,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "neurogpt", version, about = "EEG foundation-model pre-training and fine-tuning")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Start from the desk-scale preset instead of the full-size defaults.
    #[arg(long, global = true)]
    pub desk: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Pre-trained checkpoint to start from.
    #[arg(long, conflicts_with = "from_scratch")]
    pub checkpoint: Option<PathBuf>,
    /// Start from a fresh initialization instead of a checkpoint.
    #[arg(long)]
    pub from_scratch: bool,
    /// Load a checkpoint whose architecture fingerprint differs from the config.
    #[arg(long)]
    pub allow_fingerprint_mismatch: bool,
    #[arg(long)]
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and trial set.
    Gen,
    /// Clean every eegbin file of a directory.
    Preprocess {
        in_dir: PathBuf,
        /// Defaults to `<out>/preprocess`.
        out_dir: Option<PathBuf>,
    },
    /// Causal-reconstruction pre-training.
    Pretrain,
    /// Fine-tune a classifier on all trials.
    Finetune(ModelSource),
    /// Leave-one-subject-out evaluation.
    Eval(ModelSource),
    /// Pre-train and evaluate across values of one architecture axis.
    Sweep {
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Print the resolved configuration.
    Config,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::FingerprintMismatch { .. } => EXIT_CONFIG,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::FingerprintMismatch { .. } = e {
                eprintln!(
                    "the checkpoint was trained with a different architecture than this config describes; \
                     use the config it was trained with, or pass --allow-fingerprint-mismatch"
                );
            }
            exit_code(&e)
        }
    }
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match (&c.config, c.desk) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, true) => RunConfig::desk(),
        (None, false) => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
            Ok(EXIT_OK)
        }
        Command::Gen => cmd_gen(&cfg),
        Command::Preprocess { in_dir, out_dir } => {
            let out = out_dir.unwrap_or_else(|| cfg.out_dir.join("preprocess"));
            cmd_preprocess(&cfg, &in_dir, &out)
        }
        Command::Pretrain => cmd_pretrain(&cfg),
        Command::Finetune(src) => {
            apply_source(&mut cfg, &src);
            cmd_finetune(&cfg, &src)
        }
        Command::Eval(src) => {
            apply_source(&mut cfg, &src);
            cmd_eval(&cfg, &src)
        }
        Command::Sweep { axis, values } => {
            if let Some(a) = axis {
                cfg.sweep.axis = a;
            }
            if let Some(v) = values {
                cfg.sweep.values = v;
            }
            cmd_sweep(&cfg)
        }
    }
}

fn apply_source(cfg: &mut RunConfig, src: &ModelSource) {
    if let Some(s) = src.strategy {
        cfg.finetune.strategy = s;
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn eegbin_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "eegbin") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn load_corpus(cfg: &RunConfig) -> Result<Vec<Recording>> {
    match &cfg.data.corpus_dir {
        Some(dir) => {
            let files = eegbin_files(dir)?;
            if files.is_empty() {
                return Err(Error::Parameter(format!("no eegbin files in {}", dir.display())));
            }
            files.iter().map(|f| eegbin::load(f)).collect()
        }
        None => Ok(gen_pretrain_corpus(&cfg.corpus, cfg.seed)?.recordings),
    }
}

fn load_trials(cfg: &RunConfig) -> Result<TrialSet> {
    let mut set = match &cfg.data.trials_dir {
        Some(dir) => TrialSet::load(dir)?,
        None => gen_trialset(&cfg.trials, cfg.seed)?,
    };
    if let Some([a, b]) = cfg.data.trial_window_s {
        for t in &mut set.trials {
            t.data = trial_window(&t.data, a, b)?;
        }
    }
    Ok(set)
}

fn load_montage(cfg: &RunConfig) -> Result<Montage> {
    match &cfg.data.montage {
        Some(p) => Montage::from_file(p),
        None => Ok(Montage::default_22()),
    }
}

/// Loads the starting checkpoint, or `None` for a from-scratch run.
fn load_source(cfg: &RunConfig, src: &ModelSource) -> Result<Option<Checkpoint>> {
    match (&src.checkpoint, src.from_scratch) {
        (Some(p), _) => Ok(Some(Checkpoint::load_for(p, &cfg.arch, src.allow_fingerprint_mismatch)?)),
        (None, true) => Ok(None),
        (None, false) => Err(Error::Config(
            "give --checkpoint PATH, or --from-scratch for a model without pre-training".into(),
        )),
    }
}

fn provenance(ck: &Option<Checkpoint>) -> &'static str {
    if ck.is_some() {
        "pretrained"
    } else {
        "from_scratch"
    }
}

fn cmd_gen(cfg: &RunConfig) -> Result<i32> {
    cfg.validate()?;
    let corpus = gen_pretrain_corpus(&cfg.corpus, cfg.seed)?;
    let trials = gen_trialset(&cfg.trials, cfg.seed)?;
    let dir = cfg.out_dir.join("gen");
    let cdir = dir.join("corpus");
    create_dir(&cdir)?;
    for (i, r) in corpus.recordings.iter().enumerate() {
        eegbin::save(r, &cdir.join(format!("rec_{i:04}.eegbin")))?;
    }
    trials.save(&dir.join("trials"))?;
    cfg.write_resolved(&dir)?;
    println!(
        "wrote {} recordings and {} trials ({} subjects) to {}",
        corpus.recordings.len(),
        trials.trials.len(),
        trials.subjects.len(),
        dir.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_preprocess(cfg: &RunConfig, in_dir: &Path, out_dir: &Path) -> Result<i32> {
    cfg.validate()?;
    let montage = load_montage(cfg)?;
    let files = eegbin_files(in_dir)?;
    if files.is_empty() {
        log::warn!("0 files in {}", in_dir.display());
        return Ok(EXIT_OK);
    }
    create_dir(out_dir)?;
    let mut report = String::from("file\tstatus\toriginal_rate_hz\toutput_rate_hz\tinterpolated\n");
    let mut failed = Vec::new();
    for f in &files {
        let name = f.file_name().expect("listed file has a name").to_string_lossy().into_owned();
        let res = eegbin::load(f).and_then(|r| preprocess(&r, &montage, &cfg.preprocess));
        match res {
            Ok((out, rep)) => {
                eegbin::save(&out, &out_dir.join(&name))?;
                report.push_str(&format!(
                    "{name}\tok\t{}\t{}\t{}\n",
                    rep.original_rate_hz,
                    out.sample_rate_hz,
                    rep.interpolated.join(",")
                ));
            }
            Err(e) => {
                report.push_str(&format!("{name}\terror: {}\tNA\tNA\t\n", e.to_string().replace(['\t', '\n'], " ")));
                failed.push((name, e));
            }
        }
    }
    write(&out_dir.join("report.tsv"), &report)?;
    cfg.write_resolved(out_dir)?;
    println!("preprocessed {} of {} files into {}", files.len() - failed.len(), files.len(), out_dir.display());
    if failed.is_empty() {
        return Ok(EXIT_OK);
    }
    eprintln!("{} file(s) failed:", failed.len());
    for (name, e) in &failed {
        eprintln!("  {name}: {e}");
    }
    Ok(EXIT_INPUT)
}

fn cmd_pretrain(cfg: &RunConfig) -> Result<i32> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let out = pretrain::<f32>(&corpus, &cfg.arch, &cfg.pretrain, cfg.seed)?;
    let dir = cfg.out_dir.join("pretrain");
    create_dir(&dir)?;
    out.checkpoint.save(&dir.join("checkpoint.ngck"))?;
    out.log.write(&dir.join("metrics.jsonl"))?;
    cfg.write_resolved(&dir)?;
    if let (Some(first), Some(last)) = (out.losses.first(), out.losses.last()) {
        println!(
            "{} steps, loss {first:.6} -> {last:.6} ({:.2}% of initial)",
            out.losses.len(),
            100.0 * last / first
        );
    }
    if let Some(v) = out.val_losses.last() {
        println!("validation loss {v:.6}");
    }
    println!("checkpoint {}", dir.join("checkpoint.ngck").display());
    Ok(EXIT_OK)
}

fn run_dir(cfg: &RunConfig, cmd: &str, ck: &Option<Checkpoint>) -> PathBuf {
    cfg.out_dir.join(format!("{cmd}_{}_{}", cfg.finetune.strategy, provenance(ck)))
}

fn cmd_finetune(cfg: &RunConfig, src: &ModelSource) -> Result<i32> {
    cfg.validate()?;
    let ck = load_source(cfg, src)?;
    let set = load_trials(cfg)?;
    if set.trials.is_empty() {
        return Err(Error::Parameter("empty trial set".into()));
    }
    let trials: Vec<_> = set.trials.iter().collect();
    let out = finetune_trials(ck.as_ref().map(|c| &c.params), &cfg.arch, &cfg.finetune, &trials, cfg.seed)?;
    let dir = run_dir(cfg, "finetune", &ck);
    create_dir(&dir)?;
    let steps = out.log.records.iter().filter_map(|r| r.step).max().unwrap_or(0);
    Checkpoint::new(cfg.arch.clone(), cfg.seed, steps, &out.params).save(&dir.join("classifier.ngck"))?;
    out.log.write(&dir.join("metrics.jsonl"))?;
    cfg.write_resolved(&dir)?;
    println!(
        "{} ({}): {} trials, train accuracy {:.4}",
        cfg.finetune.strategy,
        provenance(&ck),
        trials.len(),
        out.train_accuracy
    );
    if cfg.finetune.strategy == Strategy::Linear {
        let digests: Vec<_> = out.log.records.iter().filter_map(|r| r.frozen_digest.as_deref()).collect();
        if let Some(d) = digests.first() {
            println!("encoder frozen: digest {d} unchanged over {} epochs", digests.len());
        }
    }
    Ok(EXIT_OK)
}

fn cmd_eval(cfg: &RunConfig, src: &ModelSource) -> Result<i32> {
    cfg.validate()?;
    let ck = load_source(cfg, src)?;
    let set = load_trials(cfg)?;
    let report = loso_evaluate(&set, &cfg.arch, &cfg.finetune, ck.as_ref().map(|c| &c.params), cfg.seed)?;
    let dir = run_dir(cfg, "eval", &ck);
    create_dir(&dir)?;
    let prov = provenance(&ck);
    let strategy = cfg.finetune.strategy;
    let mut tsv = String::from("subject\tn_train\tn_test\taccuracy\tstd\tstrategy\tprovenance\n");
    println!("{:<12} {:>8} {:>8} {:>10}", "subject", "n_train", "n_test", "accuracy");
    for f in &report.folds {
        println!("{:<12} {:>8} {:>8} {:>10.4}", f.test_subject, f.n_train, f.n_test, f.accuracy);
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\tNA\t{strategy}\t{prov}\n",
            f.test_subject, f.n_train, f.n_test, f.accuracy
        ));
    }
    let (n_train, n_test): (usize, usize) = report.folds.iter().fold((0, 0), |a, f| (a.0 + f.n_train, a.1 + f.n_test));
    println!(
        "{:<12} {:>8} {:>8} {:>10.4} ± {:.4}  ({strategy}, {prov})",
        "mean", n_train, n_test, report.mean, report.std
    );
    tsv.push_str(&format!(
        "mean\t{n_train}\t{n_test}\t{:.6}\t{:.6}\t{strategy}\t{prov}\n",
        report.mean, report.std
    ));
    write(&dir.join("results.tsv"), &tsv)?;
    let folds = serde_json::to_string_pretty(&report.folds).expect("folds serialize");
    write(&dir.join("folds.json"), &(folds + "\n"))?;
    report.log.write(&dir.join("metrics.jsonl"))?;
    cfg.write_resolved(&dir)?;
    Ok(EXIT_OK)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<i32> {
    cfg.validate()?;
    let axis: SweepAxis = cfg.sweep.axis.parse()?;
    if cfg.sweep.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let corpus = load_corpus(cfg)?;
    let set = load_trials(cfg)?;
    let rows = sweep(
        axis,
        &cfg.sweep.values,
        &cfg.arch,
        &cfg.pretrain,
        &cfg.finetune,
        &corpus,
        &set,
        cfg.seed,
    )?;
    let dir = cfg.out_dir.join("sweep");
    create_dir(&dir)?;
    let tsv = crate::train::sweep::to_tsv(&rows);
    write(&dir.join("sweep.tsv"), &tsv)?;
    cfg.write_resolved(&dir)?;
    print!("{tsv}");
    Ok(EXIT_OK)
}
