//! Teacher-forced NLL training with separate GAT / other learning rates.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{decoder_input, linearize_targets, CandidateIndexSpace, Sentence, SubtaskKind, Vocabulary};
use crate::decoder::{candidate_states, decoder_forward, indices_to_tokens, step_distribution};
use crate::encoder::{encode, EncoderInput};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_model;
use crate::inference::DecodeOptions;
use crate::model::{Ablation, ModelConfig, ModelView, NodeInit, SynGen};
use crate::tensor::{clip_grad_norm, Adam, Tape, Var};

/// A sentence prepared for teacher forcing.
#[derive(Debug, Clone)]
pub struct Example {
    pub sentence_id: usize,
    pub input: EncoderInput,
    pub space: CandidateIndexSpace,
    /// Gold indices ending in `</s>`.
    pub target: Vec<usize>,
    /// `<s>`-shifted target converted to vocabulary ids.
    pub decoder_tokens: Vec<usize>,
}

impl Example {
    pub fn new(s: &Sentence, k: SubtaskKind, vocab: &Vocabulary) -> Result<Self> {
        let target = linearize_targets(s, k)?;
        Self::with_target(s, target, vocab)
    }

    pub fn with_target(s: &Sentence, target: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        let input = EncoderInput::new(s, vocab)?;
        let space = CandidateIndexSpace::for_sentence(s);
        let shifted = decoder_input(&target);
        let decoder_tokens = indices_to_tokens(&shifted, input.word_ids(), space, vocab)?;
        Ok(Self {
            sentence_id: s.id,
            input,
            space,
            target,
            decoder_tokens,
        })
    }
}

/// `-(1/T) Σ_t log Pro_t[target_t]` recorded on `tape`.
pub fn teacher_forced_loss(tape: &mut Tape, view: ModelView<'_>, ex: &Example) -> Result<Var> {
    if ex.target.is_empty() {
        return Err(Error::InvalidArgument("empty target sequence".into()));
    }
    if let Some(&bad) = ex.target.iter().find(|&&y| y >= ex.space.total()) {
        return Err(Error::Range {
            what: "target index",
            index: bad,
            limit: ex.space.total(),
        });
    }
    let enc = encode(tape, view, &ex.input, view.config.ablation, view.config.node_init)?;
    let dec = decoder_forward(tape, view, enc.h_e, &ex.decoder_tokens)?;
    let cands = candidate_states(tape, view, enc.h_e, enc.e_se)?;
    let probs = step_distribution(tape, cands.all, dec.states, None)?;
    let picked = tape.gather(probs, &ex.target)?;
    let logp = tape.log(picked);
    let mean = tape.mean(logp);
    Ok(tape.scale(mean, -1.0))
}

/// Loss on a fresh tape; handy for gradient checks.
pub fn loss_tape(view: ModelView<'_>, ex: &Example, faulty: bool) -> Result<(Tape, Var)> {
    let mut tape = if faulty {
        Tape::with_faulty_backward()
    } else {
        Tape::new()
    };
    let loss = teacher_forced_loss(&mut tape, view, ex)?;
    Ok((tape, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub subtask: SubtaskKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_gat: f64,
    pub lr_other: f64,
    pub d: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub seed: u64,
    pub blend_alpha: f64,
    pub ablation: Ablation,
    pub node_init: NodeInit,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Measure training-set F1 every this many epochs (0 = only at the end).
    pub eval_every: usize,
    pub beam: usize,
    /// Write `checkpoint.json` here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            subtask: SubtaskKind::Triplet,
            epochs: 200,
            batch_size: 8,
            lr_gat: 1e-5,
            lr_other: 1e-4,
            d: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            seed: 42,
            blend_alpha: 0.5,
            ablation: Ablation::Full,
            node_init: NodeInit::PosOnly,
            clip_norm: Some(5.0),
            eval_every: 0,
            beam: 1,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr_gat >= 0.0 && self.lr_other >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.d < 4 {
            return bad("d must be at least 4");
        }
        if self.beam == 0 {
            return bad("beam must be at least 1");
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, longest: usize) -> ModelConfig {
        let mut c = ModelConfig::with_width(vocab_size, self.d);
        c.heads = self.heads;
        c.encoder_layers = self.encoder_layers;
        c.decoder_layers = self.decoder_layers;
        c.blend_alpha = self.blend_alpha;
        c.ablation = self.ablation;
        c.node_init = self.node_init;
        c.max_positions = c.max_positions.max(longest);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
    pub wall_clock_secs: f64,
    /// Epoch whose parameters were kept (best dev F1, else the last one).
    pub selected_epoch: usize,
    pub final_train_f1: f64,
}

impl TrainStats {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,f1\n");
        for e in &self.epochs {
            let f1 = e.f1.map(|f| format!("{f}")).unwrap_or_default();
            writeln!(out, "{},{},{}", e.epoch, e.loss, f1).expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Builds the vocabulary from `train` and a freshly initialized model.
pub fn init_model(train: &[Sentence], cfg: &TrainConfig) -> Result<SynGen> {
    let vocab = Vocabulary::build(train);
    let longest = train
        .iter()
        .map(|s| (s.len() + 2).max(linearize_targets(s, cfg.subtask).map_or(0, |t| t.len())))
        .max()
        .unwrap_or(0);
    SynGen::new(cfg.model_config(vocab.len(), longest), vocab, cfg.seed)
}

/// One optimizer step over `batch`; returns the mean loss.
pub fn train_step(model: &mut SynGen, adam: &mut Adam, batch: &[Example], clip: Option<f64>) -> Result<f64> {
    model.params.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut store = std::mem::take(&mut model.params);
    let outcome = (|| -> Result<()> {
        for ex in batch {
            let view = model.view_with(&store);
            let mut tape = Tape::new();
            let loss = teacher_forced_loss(&mut tape, view, ex)?;
            total += tape.value(loss).item();
            tape.backward_into(loss, &mut store, scale)?;
        }
        if let Some(c) = clip {
            clip_grad_norm(&mut store, c);
        }
        adam.step(&mut store)
    })();
    model.params = store;
    outcome?;
    Ok(total * scale)
}

pub fn train(dataset: &[Sentence], cfg: &TrainConfig) -> Result<(SynGen, TrainStats)> {
    train_with_dev(dataset, None, cfg)
}

/// Trains on `dataset`; with a dev set the parameters of the best dev-F1
/// epoch are returned.
pub fn train_with_dev(
    dataset: &[Sentence],
    dev: Option<&[Sentence]>,
    cfg: &TrainConfig,
) -> Result<(SynGen, TrainStats)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let started = Instant::now();
    let mut model = init_model(dataset, cfg)?;
    let examples = dataset
        .iter()
        .map(|s| Example::new(s, cfg.subtask, &model.vocab))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(&model.params, cfg.lr_gat, cfg.lr_other);
    let decode = DecodeOptions {
        beam: cfg.beam,
        ..DecodeOptions::default()
    };

    let mut stats = TrainStats::default();
    let mut best: Option<(f64, usize, crate::tensor::ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        for batch in examples.chunks(cfg.batch_size) {
            let loss = train_step(&mut model, &mut adam, batch, cfg.clip_norm)?;
            stats.steps += 1;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: stats.steps,
                    loss,
                });
            }
            epoch_loss += loss * batch.len() as f64;
        }
        let loss = epoch_loss / examples.len() as f64;
        let f1 = if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 {
            Some(evaluate_model(&model, dataset, cfg.subtask, &decode)?.f1)
        } else {
            None
        };
        if let Some(dev) = dev {
            let dev_f1 = evaluate_model(&model, dev, cfg.subtask, &decode)?.f1;
            if best.as_ref().map_or(true, |(b, _, _)| dev_f1 > *b) {
                best = Some((dev_f1, epoch, model.params.clone()));
            }
        }
        stats.epochs.push(EpochStats { epoch, loss, f1 });
        if let Some(dir) = &cfg.checkpoint_dir {
            model.save(dir.join("checkpoint.json"))?;
        }
    }
    stats.selected_epoch = cfg.epochs;
    if let Some((_, epoch, params)) = best {
        model.params = params;
        stats.selected_epoch = epoch;
    }
    stats.final_train_f1 = evaluate_model(&model, dataset, cfg.subtask, &decode)?.f1;
    stats.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((model, stats))
}

/// Settings for a full-model finite-difference check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub subtask: SubtaskKind,
    pub d: usize,
    pub n: usize,
    pub ablation: Ablation,
    pub node_init: NodeInit,
    pub epsilon: f64,
    pub seed: u64,
    /// Corrupt one backward rule (negative control).
    pub break_gradient: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            subtask: SubtaskKind::Triplet,
            d: 8,
            n: 5,
            ablation: Ablation::Full,
            node_init: NodeInit::PosOnly,
            epsilon: 3e-5,
            seed: 7,
            break_gradient: false,
        }
    }
}

/// Builds a small random model and sentence and compares the loss gradient
/// of every trainable parameter against central differences.
pub fn gradient_check(cfg: &GradCheckConfig) -> Result<crate::tensor::GradCheckReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let sentence = crate::synth::random_sentence(cfg.n, &mut rng);
    let vocab = Vocabulary::build([&sentence]);
    let mut mc = ModelConfig::with_width(vocab.len(), cfg.d);
    mc.ablation = cfg.ablation;
    mc.node_init = cfg.node_init;
    let model = SynGen::new(mc, vocab, cfg.seed)?;
    let ex = Example::new(&sentence, cfg.subtask, &model.vocab)?;
    crate::tensor::finite_diff_check(
        &model.params,
        |store| loss_tape(model.view_with(store), &ex, cfg.break_gradient),
        cfg.epsilon,
    )
}
