//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime/data error, 2 usage or configuration
//! error, 3 diverged training, 4 gradient check failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{parse_dataset, write_dataset, Sentence, SubtaskKind};
use crate::error::{Error, Result};
use crate::evaluation::{
    attention_gap_corpus, evaluate_model, heatmap_data, matrix_csv, matrix_difference, matrix_labels, EvalReport,
};
use crate::inference::{decode_corpus, DecodeOptions};
use crate::model::{Ablation, NodeInit, SynGen};
use crate::synth::synth_dataset;
use crate::training::{gradient_check, train_with_dev, GradCheckConfig, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "syngen", version, about = "Syntax-gated pointer network for aspect-based sentiment extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, stats and resolved config.
    Train(TrainArgs),
    /// Decode a dataset and print precision / recall / F1 as JSON.
    Evaluate(EvalArgs),
    /// Decode a dataset into JSON lines.
    Decode(DecodeArgs),
    /// Train and score every ablation configuration.
    Ablate(AblateArgs),
    /// Finite-difference check of the full model's gradients.
    Gradcheck(GradcheckArgs),
    /// Compare encoder attention of two checkpoints.
    AnalyzeAttention(AttentionArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

/// Training hyper-parameters; every flag overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// aesc, pair or triplet
    #[arg(long)]
    pub task: Option<SubtaskKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_gat: Option<f64>,
    #[arg(long)]
    pub lr_other: Option<f64>,
    /// Multiplies the GAT learning rate after all other resolution.
    #[arg(long)]
    pub lr_gat_scale: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long, env = "SYNGEN_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub blend_alpha: Option<f64>,
    /// full, no_graph, no_gate or no_graph_no_gate
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// pos_only, token_only or pos_plus_token
    #[arg(long)]
    pub node_init: Option<NodeInit>,
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    /// Disable gradient-norm clipping.
    #[arg(long)]
    pub no_clip: bool,
    /// Record training F1 every N epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Beam width for F1 measured during training.
    #[arg(long)]
    pub beam: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident => $g:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$g = v; })* };
        }
        set!(task => subtask, epochs => epochs, batch_size => batch_size, lr_gat => lr_gat,
             lr_other => lr_other, d => d, heads => heads, encoder_layers => encoder_layers,
             decoder_layers => decoder_layers, seed => seed, blend_alpha => blend_alpha,
             ablation => ablation, node_init => node_init, eval_every => eval_every, beam => beam);
        if let Some(v) = self.clip_norm {
            c.clip_norm = Some(v);
        }
        if self.no_clip {
            c.clip_norm = None;
        }
        if let Some(s) = self.lr_gat_scale {
            c.lr_gat *= s;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data (JSON lines).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Optional dev set; keeps the parameters of the best dev-F1 epoch.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// JSON run config (as written to resolved_config.json).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rewrite the checkpoint after every epoch.
    #[arg(long)]
    pub checkpoint_every_epoch: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

/// Fully resolved `train` / `ablate` invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeFlags {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "triplet")]
    pub task: SubtaskKind,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Mask grammatically invalid indices during search.
    #[arg(long)]
    pub constrained: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl DecodeFlags {
    fn options(&self) -> DecodeOptions {
        DecodeOptions {
            beam: self.beam,
            max_steps: self.max_steps,
            constrained: self.constrained,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Data to score each variant on (defaults to the training data).
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "triplet")]
    pub task: SubtaskKind,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Check a single ablation (default: all four).
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Check a single node initialisation (default: all three).
    #[arg(long)]
    pub node_init: Option<NodeInit>,
    #[arg(long, default_value_t = 3e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long, env = "SYNGEN_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Corrupt one backward rule; the check must then fail.
    #[arg(long)]
    pub break_gradient: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    /// Checkpoint of the syntax-enhanced model.
    #[arg(long)]
    pub ours: PathBuf,
    /// Checkpoint of the baseline model.
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write gnuplot data files and a plotting script.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of training sentences.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dev_n: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub test_n: Option<u64>,
    #[arg(long, env = "SYNGEN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_ERROR,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::AnalyzeAttention(a) => cmd_analyze_attention(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Defaults, then the config file, then flags.
fn resolve(
    command: &str,
    config: Option<&Path>,
    data: Option<&PathBuf>,
    extra: Option<&PathBuf>,
    out: Option<&PathBuf>,
    flags: &TrainFlags,
) -> Result<RunConfig> {
    let mut rc = match config {
        Some(p) => read_run_config(p)?,
        None => RunConfig::default(),
    };
    rc.command = command.to_string();
    if let Some(d) = data {
        rc.data = Some(d.clone());
    }
    match command {
        "ablate" => {
            if let Some(e) = extra {
                rc.eval = Some(e.clone());
            }
        }
        _ => {
            if let Some(e) = extra {
                rc.dev = Some(e.clone());
            }
        }
    }
    if let Some(o) = out {
        rc.out = Some(o.clone());
    }
    rc.out.get_or_insert_with(|| PathBuf::from("out"));
    flags.apply(&mut rc.train);
    rc.train.validate()?;
    if rc.data.is_none() {
        let mut cmd = Cli::command();
        let sub = cmd.find_subcommand_mut(command).expect("known subcommand").clone();
        let _ = sub
            .bin_name(format!("syngen {command}"))
            .error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "the following required argument was not provided: --data <DATA>",
            )
            .print();
        return Err(Error::Config("missing --data".into()));
    }
    Ok(rc)
}

fn load(path: &Path) -> Result<Vec<Sentence>> {
    parse_dataset(path)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut rc = resolve(
        "train",
        a.config.as_deref(),
        a.data.as_ref(),
        a.dev.as_ref(),
        a.out.as_ref(),
        &a.flags,
    )?;
    let out = rc.out.clone().expect("resolved");
    if a.checkpoint_every_epoch {
        rc.train.checkpoint_dir = Some(out.clone());
    }
    let json = to_json(&rc)?;
    eprint!("resolved config:\n{json}");
    write_file(&out.join("resolved_config.json"), &json)?;

    let data = load(rc.data.as_ref().expect("resolved"))?;
    let dev = rc.dev.as_deref().map(load).transpose()?;
    let (model, stats) = train_with_dev(&data, dev.as_deref(), &rc.train)?;
    model.save(out.join("checkpoint.json"))?;
    stats.write_csv(out.join("stats.csv"))?;
    let last = stats.epochs.last().map_or(f64::NAN, |e| e.loss);
    println!(
        "trained {} epochs ({} steps) in {:.1}s: final loss {last:.6}, training F1 {:.4}, kept epoch {}",
        stats.epochs.len(),
        stats.steps,
        stats.wall_clock_secs,
        stats.final_train_f1,
        stats.selected_epoch
    );
    Ok(EXIT_OK)
}

/// Rejects datasets the checkpoint cannot encode.
fn check_compatible(model: &SynGen, data: &[Sentence]) -> Result<()> {
    let limit = model.config.max_positions;
    if let Some(s) = data.iter().find(|s| s.len() + 2 > limit) {
        return Err(Error::Incompatible(format!(
            "sentence {} has {} tokens; the checkpoint supports at most {}",
            s.id,
            s.len(),
            limit - 2
        )));
    }
    let known = data
        .iter()
        .flat_map(|s| &s.tokens)
        .filter(|t| model.vocab.id(t) != crate::data::UNK)
        .count();
    if !data.is_empty() && known == 0 {
        return Err(Error::Incompatible(
            "dataset shares no tokens with the checkpoint vocabulary".into(),
        ));
    }
    Ok(())
}

fn load_pair(f: &DecodeFlags) -> Result<(SynGen, Vec<Sentence>)> {
    let model = SynGen::load(&f.checkpoint)?;
    let data = load(&f.data)?;
    check_compatible(&model, &data)?;
    Ok((model, data))
}

fn cmd_evaluate(a: EvalArgs) -> Result<i32> {
    let f = &a.decode;
    let (model, data) = load_pair(f)?;
    let report = evaluate_model(&model, &data, f.task, &f.options())?;
    let json = to_json(&report)?;
    write_file(&f.out.join("eval.json"), &json)?;
    print!("{json}");
    Ok(EXIT_OK)
}

fn cmd_decode(a: DecodeArgs) -> Result<i32> {
    let f = &a.decode;
    let (model, data) = load_pair(f)?;
    let records = decode_corpus(&model, &data, f.task, &f.options())?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    let path = f.out.join("predictions.jsonl");
    write_file(&path, &text)?;
    let malformed: usize = records.iter().map(|r| r.malformed_frames).sum();
    println!(
        "decoded {} sentences to {} ({malformed} malformed frames)",
        records.len(),
        path.display()
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    ablation: Ablation,
    final_loss: f64,
    report: EvalReport,
}

fn cmd_ablate(a: AblateArgs) -> Result<i32> {
    let rc = resolve(
        "ablate",
        a.config.as_deref(),
        a.data.as_ref(),
        a.eval.as_ref(),
        a.out.as_ref(),
        &a.flags,
    )?;
    let out = rc.out.clone().expect("resolved");
    let json = to_json(&rc)?;
    eprint!("resolved config:\n{json}");
    write_file(&out.join("resolved_config.json"), &json)?;

    let data = load(rc.data.as_ref().expect("resolved"))?;
    let eval = match &rc.eval {
        Some(p) => load(p)?,
        None => data.clone(),
    };
    let opts = DecodeOptions {
        beam: rc.train.beam,
        ..DecodeOptions::default()
    };
    let mut rows = Vec::new();
    let mut csv = String::from("ablation,final_loss,precision,recall,f1\n");
    for ablation in Ablation::ALL {
        let cfg = TrainConfig {
            ablation,
            ..rc.train.clone()
        };
        let (model, stats) = train_with_dev(&data, None, &cfg)?;
        let report = evaluate_model(&model, &eval, cfg.subtask, &opts)?;
        let final_loss = stats.epochs.last().map_or(f64::NAN, |e| e.loss);
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            ablation.as_str(),
            final_loss,
            report.precision,
            report.recall,
            report.f1
        ));
        println!("{:<17} loss {final_loss:.5}  F1 {:.4}", ablation.as_str(), report.f1);
        rows.push(AblationRow {
            ablation,
            final_loss,
            report,
        });
    }
    write_file(&out.join("ablations.csv"), &csv)?;
    write_file(&out.join("ablations.json"), &to_json(&rows)?)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct GradcheckRow {
    ablation: Ablation,
    node_init: NodeInit,
    max_rel_err: f64,
    worst_param: String,
    worst_index: usize,
    entries: usize,
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    let ablations: Vec<Ablation> = a.ablation.map_or(Ablation::ALL.to_vec(), |x| vec![x]);
    let inits: Vec<NodeInit> = a.node_init.map_or(NodeInit::ALL.to_vec(), |x| vec![x]);
    let mut rows = Vec::new();
    for &ablation in &ablations {
        for &node_init in &inits {
            let cfg = GradCheckConfig {
                subtask: a.task,
                d: a.d,
                n: a.n,
                ablation,
                node_init,
                epsilon: a.epsilon,
                seed: a.seed,
                break_gradient: a.break_gradient,
            };
            let r = gradient_check(&cfg)?;
            println!(
                "{:<17} {:<15} max_rel_err {:.3e}  worst {}[{}]",
                ablation.as_str(),
                node_init.as_str(),
                r.max_rel_err,
                r.worst_param,
                r.worst_index
            );
            rows.push(GradcheckRow {
                ablation,
                node_init,
                max_rel_err: r.max_rel_err,
                worst_param: r.worst_param,
                worst_index: r.worst_index,
                entries: r.entries_checked,
            });
        }
    }
    let worst = rows
        .iter()
        .max_by(|x, y| x.max_rel_err.total_cmp(&y.max_rel_err))
        .expect("at least one configuration");
    let pass = worst.max_rel_err < a.threshold;
    println!(
        "max_rel_err = {:.3e} {} {:.0e} (worst: {} under {}/{})",
        worst.max_rel_err,
        if pass { "<" } else { ">=" },
        a.threshold,
        worst.worst_param,
        worst.ablation.as_str(),
        worst.node_init.as_str()
    );
    if let Some(out) = &a.out {
        write_file(&out.join("gradcheck.json"), &to_json(&rows)?)?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_GRADCHECK })
}

const GNUPLOT_SCRIPT: &str = "\
# usage: gnuplot -e \"f='SENTENCE_diff.dat'\" heatmap.gp
set terminal pngcairo size 800,700
set output f.'.png'
set view map
set xlabel 'key position'
set ylabel 'query position'
set yrange [] reverse
plot f using 2:1:3 with image notitle
";

fn cmd_analyze_attention(a: AttentionArgs) -> Result<i32> {
    let ours = SynGen::load(&a.ours)?;
    let baseline = SynGen::load(&a.baseline)?;
    let data = load(&a.data)?;
    check_compatible(&ours, &data)?;
    let corpus = attention_gap_corpus(&ours, &baseline, &data)?;
    let dir = a.out.join("attention");
    for (i, s) in data.iter().enumerate() {
        let labels = matrix_labels(s);
        let diff = matrix_difference(&corpus.ours[i], &corpus.baseline[i])?;
        write_file(&dir.join(format!("{}_ours.csv", s.id)), &matrix_csv(&corpus.ours[i], &labels))?;
        write_file(
            &dir.join(format!("{}_baseline.csv", s.id)),
            &matrix_csv(&corpus.baseline[i], &labels),
        )?;
        write_file(&dir.join(format!("{}_diff.csv", s.id)), &matrix_csv(&diff, &labels))?;
        if a.gnuplot {
            write_file(&dir.join(format!("{}_diff.dat", s.id)), &heatmap_data(&diff, &labels))?;
        }
    }
    if a.gnuplot {
        write_file(&dir.join("heatmap.gp"), GNUPLOT_SCRIPT)?;
    }
    let report = &corpus.report;
    write_file(&a.out.join("gap_report.csv"), &report.summary_csv())?;
    write_file(&a.out.join("gap_pairs.csv"), &report.per_pair_csv())?;
    write_file(&a.out.join("gap_report.json"), &to_json(report)?)?;
    print!("{}", report.summary_csv());
    Ok(EXIT_OK)
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let sizes = [("train", Some(a.n)), ("dev", a.dev_n), ("test", a.test_n)];
    for (i, (name, size)) in sizes.into_iter().enumerate() {
        let Some(size) = size else { continue };
        let data = synth_dataset(size as usize, a.seed.wrapping_add(i as u64 * 0x9E37_79B9));
        let path = a.out.join(format!("{name}.jsonl"));
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_dataset(&path, &data)?;
        println!("wrote {} sentences to {}", data.len(), path.display());
    }
    Ok(EXIT_OK)
}
