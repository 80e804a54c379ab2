//! Supervised pre-training, the alternating semi-supervised loop, and the
//! self-training baseline schemes, with decoupled-weight-decay adaptive
//! updates and a linear warmup/decay schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusSplit, Database, DialogSession, Ontology};
use crate::evaluation::{evaluate_corpus, EvalError, RolloutCaps};
use crate::model::{ModelError, ModelParameters, TapeParams};
use crate::seq::{build_generative_sequence, build_inference_sequence, truncate, SeqError};
use crate::tape::Tape;
use crate::variational::{
    sample_latents_prior, unsupervised_step, EstimatorConfig, LatentSample, RequeryContext,
    UnsupervisedSession, VariationalError,
};
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("labeled corpus is empty")]
    EmptyCorpus,
    #[error("batch_size {batch} is not a multiple of grad_accum {accum}")]
    BadBatchShape { batch: usize, accum: usize },
    #[error("self-training requires an st_scheme in the config")]
    MissingScheme,
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Variational(#[from] VariationalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StScheme {
    ResponseStt,
    JointStt,
    Response,
    Joint,
}

impl StScheme {
    pub fn uses_stt(self) -> bool {
        matches!(self, StScheme::ResponseStt | StScheme::JointStt)
    }

    pub fn scores_latents(self) -> bool {
        matches!(self, StScheme::JointStt | StScheme::Joint)
    }

    pub const ALL: [StScheme; 4] = [
        StScheme::ResponseStt,
        StScheme::JointStt,
        StScheme::Response,
        StScheme::Joint,
    ];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_sup: usize,
    pub epochs_semi: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub max_lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub max_seq_len: usize,
    pub estimator: EstimatorConfig,
    pub st_scheme: Option<StScheme>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_sup: 10,
            epochs_semi: 10,
            batch_size: 8,
            grad_accum: 1,
            max_lr: 3e-3,
            warmup_frac: 0.2,
            weight_decay: 0.01,
            seed: 0,
            max_seq_len: 256,
            estimator: EstimatorConfig::default(),
            st_scheme: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.grad_accum == 0 || self.batch_size % self.grad_accum != 0 {
            return Err(TrainError::BadBatchShape {
                batch: self.batch_size,
                accum: self.grad_accum,
            });
        }
        Ok(())
    }
}

/// Linear warmup to `max_lr` over `warmup_frac` of the steps, then linear
/// decay to zero.
pub fn lr_schedule(step: usize, total_steps: usize, max_lr: f64, warmup_frac: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let warmup = (warmup_frac * total_steps as f64).round() as usize;
    if step <= warmup {
        if warmup == 0 {
            if step == 0 {
                return 0.0;
            }
        } else {
            return max_lr * step as f64 / warmup as f64;
        }
    }
    let remaining = (total_steps - step) as f64;
    let span = (total_steps - warmup).max(1) as f64;
    max_lr * (remaining / span).max(0.0)
}

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchKind {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub loss_p: f64,
    pub loss_q: f64,
    pub reconstruction: f64,
    pub kl_term: f64,
    pub val_combined: Option<f64>,
    pub val_latent_exact: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub batch_log: Vec<BatchKind>,
    /// Epoch whose checkpoint maximizes the validation combined score
    /// (earliest on ties); None when no validation set was supplied.
    pub selected_epoch: Option<usize>,
    pub best_combined: Option<f64>,
}

/// Training output: the run record plus the selected-checkpoint parameters.
pub struct TrainOutcome {
    pub record: RunRecord,
    pub best_p: ModelParameters,
    pub best_q: Option<ModelParameters>,
}

/// Validation context: held-out sessions plus the world needed to roll out.
pub struct EvalContext<'a> {
    pub vocab: &'a Vocab,
    pub ontology: &'a Ontology,
    pub database: &'a Database,
    pub validation: &'a [DialogSession],
    pub caps: RolloutCaps,
}

struct BestTracker {
    combined: f64,
    epoch: usize,
    p: ModelParameters,
    q: Option<ModelParameters>,
    seen_any: bool,
}

impl BestTracker {
    fn new(p: &ModelParameters, q: Option<&ModelParameters>) -> Self {
        Self {
            combined: f64::NEG_INFINITY,
            epoch: 0,
            p: p.clone(),
            q: q.map(Clone::clone),
            seen_any: false,
        }
    }

    fn offer(&mut self, epoch: usize, combined: f64, p: &ModelParameters, q: Option<&ModelParameters>) {
        self.seen_any = true;
        if combined > self.combined {
            self.combined = combined;
            self.epoch = epoch;
            self.p = p.clone();
            self.q = q.map(Clone::clone);
        }
    }

    fn finish(self, record: &mut RunRecord, final_p: &ModelParameters, final_q: Option<&ModelParameters>) -> (ModelParameters, Option<ModelParameters>) {
        if self.seen_any {
            record.selected_epoch = Some(self.epoch);
            record.best_combined = Some(self.combined);
            (self.p, self.q)
        } else {
            (final_p.clone(), final_q.map(Clone::clone))
        }
    }
}

fn validate_models(
    p: &ModelParameters,
    ctx: &EvalContext,
) -> Result<(f64, f64), TrainError> {
    let report = evaluate_corpus(
        p,
        ctx.validation,
        ctx.vocab,
        ctx.ontology,
        ctx.database,
        ctx.caps,
    )?;
    Ok((report.combined, report.latent_exact_match))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// One accumulated supervised batch update for both models.
#[allow(clippy::too_many_arguments)]
fn supervised_batch(
    p: &mut ModelParameters,
    q: &mut ModelParameters,
    batch: &[&DialogSession],
    vocab: &Vocab,
    cfg: &TrainConfig,
    opt_p: &mut AdamW,
    opt_q: &mut AdamW,
    lr: f64,
) -> Result<(f64, f64), TrainError> {
    let mut gp = vec![0.0; p.params.len()];
    let mut gq = vec![0.0; q.params.len()];
    let mut lp = 0.0;
    let mut lq = 0.0;
    let mut toks_p = 0usize;
    let mut toks_q = 0usize;
    for sess in batch {
        let gen = truncate(&build_generative_sequence(sess, vocab)?, cfg.max_seq_len)?;
        let inf = truncate(&build_inference_sequence(sess, vocab)?, cfg.max_seq_len)?;
        let (vp, dgp) = crate::model::teacher_forced_nll_grad(p, &gen)?;
        let (vq, dgq) = crate::model::teacher_forced_nll_grad(q, &inf)?;
        lp += vp;
        lq += vq;
        toks_p += gen.masked_count();
        toks_q += inf.masked_count();
        for (a, b) in gp.iter_mut().zip(&dgp) {
            *a += b;
        }
        for (a, b) in gq.iter_mut().zip(&dgq) {
            *a += b;
        }
    }
    // per-token normalization keeps the learning rate meaningful across
    // batch shapes and sequence lengths
    let np = toks_p.max(1) as f64;
    let nq = toks_q.max(1) as f64;
    for g in gp.iter_mut() {
        *g /= np;
    }
    for g in gq.iter_mut() {
        *g /= nq;
    }
    opt_p.update(p.params.flat_mut(), &gp, lr);
    opt_q.update(q.params.flat_mut(), &gq, lr);
    Ok((lp / np, lq / nq))
}

/// Supervised pre-training of both models on their respective layouts.
pub fn supervised_train(
    p: &mut ModelParameters,
    q: &mut ModelParameters,
    labeled: &[DialogSession],
    vocab: &Vocab,
    cfg: &TrainConfig,
    ctx: Option<&EvalContext>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut record = RunRecord::default();
    let mut best = BestTracker::new(p, Some(q));
    let batches_per_epoch = labeled.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs_sup * batches_per_epoch;
    let mut opt_p = AdamW::new(p.params.len(), cfg.weight_decay);
    let mut opt_q = AdamW::new(q.params.len(), cfg.weight_decay);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs_sup {
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_add(1));
        order.shuffle(&mut rng);
        let mut losses_p = Vec::new();
        let mut losses_q = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = lr_schedule(step, total_steps, cfg.max_lr, cfg.warmup_frac);
            let batch: Vec<&DialogSession> = chunk.iter().map(|&i| &labeled[i]).collect();
            let (lp, lq) = supervised_batch(p, q, &batch, vocab, cfg, &mut opt_p, &mut opt_q, lr)?;
            losses_p.push(lp);
            losses_q.push(lq);
            record.batch_log.push(BatchKind::Labeled);
        }
        let (val_combined, val_lem) = match ctx {
            Some(c) => {
                let (comb, lem) = validate_models(p, c)?;
                best.offer(epoch, comb, p, Some(q));
                (Some(comb), Some(lem))
            }
            None => (None, None),
        };
        record.epochs.push(EpochRecord {
            epoch,
            phase: "sup".into(),
            loss_p: mean(&losses_p),
            loss_q: mean(&losses_q),
            reconstruction: 0.0,
            kl_term: 0.0,
            val_combined,
            val_latent_exact: val_lem,
        });
    }
    let (best_p, best_q) = best.finish(&mut record, p, Some(q));
    Ok(TrainOutcome {
        record,
        best_p,
        best_q,
    })
}

/// Alternating semi-supervised training: one labeled batch with supervised
/// gradients, one unlabeled batch with variational gradients, repeated.
pub fn semi_supervised_train(
    p: &mut ModelParameters,
    q: &mut ModelParameters,
    split: &CorpusSplit,
    vocab: &Vocab,
    cfg: &TrainConfig,
    ctx: Option<&EvalContext>,
    requery: Option<&RequeryContext>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.labeled.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if split.unlabeled.is_empty() {
        eprintln!("warning: unlabeled set is empty; semi-supervised training degenerates to supervised continuation");
        let cfg_sup = TrainConfig {
            epochs_sup: cfg.epochs_semi,
            ..cfg.clone()
        };
        return supervised_train(p, q, &split.labeled, vocab, &cfg_sup, ctx);
    }

    let usessions: Vec<UnsupervisedSession> = split
        .unlabeled
        .iter()
        .map(|s| UnsupervisedSession::from_session(s, vocab, cfg.estimator.max_latent_len))
        .collect::<Result<_, _>>()?;

    let mut record = RunRecord::default();
    let mut best = BestTracker::new(p, Some(q));
    let rounds_per_epoch = split.unlabeled.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs_semi * rounds_per_epoch * 2;
    let mut opt_p = AdamW::new(p.params.len(), cfg.weight_decay);
    let mut opt_q = AdamW::new(q.params.len(), cfg.weight_decay);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs_semi {
        let mut lab_order: Vec<usize> = (0..split.labeled.len()).collect();
        let mut unl_order: Vec<usize> = (0..split.unlabeled.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA17E ^ ((epoch as u64) << 8));
        lab_order.shuffle(&mut rng);
        unl_order.shuffle(&mut rng);
        let mut lab_cursor = 0usize;
        let mut losses_p = Vec::new();
        let mut losses_q = Vec::new();
        let mut recon = Vec::new();
        let mut kls = Vec::new();

        for round in 0..rounds_per_epoch {
            // labeled mini-batch
            step += 1;
            let lr = lr_schedule(step, total_steps, cfg.max_lr, cfg.warmup_frac);
            let batch: Vec<&DialogSession> = (0..cfg.batch_size.min(split.labeled.len()))
                .map(|_| {
                    let s = &split.labeled[lab_order[lab_cursor % lab_order.len()]];
                    lab_cursor += 1;
                    s
                })
                .collect();
            let (lp, lq) = supervised_batch(p, q, &batch, vocab, cfg, &mut opt_p, &mut opt_q, lr)?;
            losses_p.push(lp);
            losses_q.push(lq);
            record.batch_log.push(BatchKind::Labeled);

            // unlabeled mini-batch
            step += 1;
            let lr = lr_schedule(step, total_steps, cfg.max_lr, cfg.warmup_frac);
            let lo = round * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(unl_order.len());
            let mut gp = vec![0.0; p.params.len()];
            let mut gq = vec![0.0; q.params.len()];
            let mut positions = 0usize;
            for &ui in &unl_order[lo..hi] {
                let draw_seed = cfg
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(((epoch * rounds_per_epoch + round) * split.unlabeled.len() + ui) as u64);
                let us =
                    unsupervised_step(p, q, &usessions[ui], &cfg.estimator, draw_seed, requery)?;
                recon.push(us.breakdown.reconstruction);
                kls.push(us.breakdown.kl_term);
                positions += us.scored_positions;
                // the bound is maximized: accumulate the negated gradients
                for (a, b) in gp.iter_mut().zip(&us.grad_p) {
                    *a -= b;
                }
                for (a, b) in gq.iter_mut().zip(&us.grad_q) {
                    *a -= b;
                }
            }
            let n = positions.max(1) as f64;
            for g in gp.iter_mut().chain(gq.iter_mut()) {
                *g /= n;
            }
            opt_p.update(p.params.flat_mut(), &gp, lr);
            opt_q.update(q.params.flat_mut(), &gq, lr);
            record.batch_log.push(BatchKind::Unlabeled);
        }

        let (val_combined, val_lem) = match ctx {
            Some(c) => {
                let (comb, lem) = validate_models(p, c)?;
                best.offer(epoch, comb, p, Some(q));
                (Some(comb), Some(lem))
            }
            None => (None, None),
        };
        record.epochs.push(EpochRecord {
            epoch,
            phase: "semi".into(),
            loss_p: mean(&losses_p),
            loss_q: mean(&losses_q),
            reconstruction: mean(&recon),
            kl_term: mean(&kls),
            val_combined,
            val_latent_exact: val_lem,
        });
    }
    let (best_p, best_q) = best.finish(&mut record, p, Some(q));
    Ok(TrainOutcome {
        record,
        best_p,
        best_q,
    })
}

/// Self-training objective for one pseudo-labeled session: response
/// log-likelihood, optionally plus the latent prior term, with optional
/// straight-through wrapping of pseudo-label tokens. Returns (value,
/// gradient of the objective w.r.t. the generative parameters, straight-
/// through node count).
pub fn self_train_objective(
    p: &ModelParameters,
    session: &UnsupervisedSession,
    h: &LatentSample,
    scheme: StScheme,
) -> Result<(f64, Vec<f64>, usize), TrainError> {
    let mut tape = Tape::new();
    let tp = TapeParams::load(&mut tape, p);
    let param_ids = tp.clone();
    let mut fwd = crate::model::TapeForward::new(&mut tape, p, tp);
    let mut terms = Vec::new();
    let mut stt_count = 0usize;
    for (turn, latents) in session.turns.iter().zip(&h.turns) {
        for &t in &turn.user {
            fwd.push_token(&mut tape, t)?;
        }
        for lt in latents {
            if lt.forced {
                fwd.push_token(&mut tape, lt.id)?;
                continue;
            }
            if scheme.uses_stt() || scheme.scores_latents() {
                let logits = fwd.next_logits(&mut tape);
                if scheme.scores_latents() {
                    let logp = tape.log_softmax_node(logits);
                    terms.push(tape.pick(logp, lt.id));
                }
                if scheme.uses_stt() {
                    let probs = tape.softmax_node(logits);
                    let row = tape.straight_through(probs, lt.id);
                    stt_count += 1;
                    fwd.push_row_node(&mut tape, row)?;
                    continue;
                }
            }
            fwd.push_token(&mut tape, lt.id)?;
        }
        for &t in &turn.response_prefix {
            fwd.push_token(&mut tape, t)?;
        }
        for &t in &turn.response_scored {
            let logits = fwd.next_logits(&mut tape);
            let logp = tape.log_softmax_node(logits);
            terms.push(tape.pick(logp, t));
            fwd.push_token(&mut tape, t)?;
        }
    }
    let root = tape.sum_scalars(terms);
    let value = tape.scalar(root);
    let node_grads = tape.backward(root);
    let mut grad = vec![0.0; p.params.len()];
    param_ids.read_grads(p, &node_grads, &mut grad);
    Ok((value, grad, stt_count))
}

/// Semi-supervised self-training: alternates labeled supervised batches with
/// pseudo-labeled batches. Only the generative model trains; pseudo-labels
/// come from its own latent prior via greedy decoding.
pub fn self_train(
    p: &mut ModelParameters,
    split: &CorpusSplit,
    vocab: &Vocab,
    cfg: &TrainConfig,
    ctx: Option<&EvalContext>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let scheme = cfg.st_scheme.ok_or(TrainError::MissingScheme)?;
    if split.labeled.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let usessions: Vec<UnsupervisedSession> = split
        .unlabeled
        .iter()
        .map(|s| UnsupervisedSession::from_session(s, vocab, cfg.estimator.max_latent_len))
        .collect::<Result<_, _>>()?;

    let mut record = RunRecord::default();
    let mut best = BestTracker::new(p, None);
    let rounds_per_epoch = split.unlabeled.len().max(1).div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs_semi * rounds_per_epoch * 2;
    let mut opt_p = AdamW::new(p.params.len(), cfg.weight_decay);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs_semi {
        let mut lab_order: Vec<usize> = (0..split.labeled.len()).collect();
        let mut unl_order: Vec<usize> = (0..split.unlabeled.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x57AB ^ ((epoch as u64) << 8));
        lab_order.shuffle(&mut rng);
        unl_order.shuffle(&mut rng);
        let mut lab_cursor = 0usize;
        let mut losses_p = Vec::new();
        let mut st_values = Vec::new();

        for round in 0..rounds_per_epoch {
            // labeled batch: supervised gradients for the generative model
            step += 1;
            let lr = lr_schedule(step, total_steps, cfg.max_lr, cfg.warmup_frac);
            let mut gp = vec![0.0; p.params.len()];
            let mut lp = 0.0;
            let bsz = cfg.batch_size.min(split.labeled.len());
            for _ in 0..bsz {
                let sess = &split.labeled[lab_order[lab_cursor % lab_order.len()]];
                lab_cursor += 1;
                let gen = truncate(&build_generative_sequence(sess, vocab)?, cfg.max_seq_len)?;
                let (v, g) = crate::model::teacher_forced_nll_grad(p, &gen)?;
                lp += v;
                for (a, b) in gp.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            for g in gp.iter_mut() {
                *g /= bsz as f64;
            }
            opt_p.update(p.params.flat_mut(), &gp, lr);
            losses_p.push(lp / bsz as f64);
            record.batch_log.push(BatchKind::Labeled);

            // pseudo-labeled batch
            step += 1;
            let lr = lr_schedule(step, total_steps, cfg.max_lr, cfg.warmup_frac);
            let lo = round * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(unl_order.len());
            if lo < hi {
                let mut gp = vec![0.0; p.params.len()];
                let mut positions = 0usize;
                for &ui in &unl_order[lo..hi] {
                    let h = sample_latents_prior(p, &usessions[ui], &cfg.estimator, 0, None)?;
                    let (v, g, _) = self_train_objective(p, &usessions[ui], &h, scheme)?;
                    st_values.push(v);
                    positions += usessions[ui]
                        .turns
                        .iter()
                        .map(|t| t.response_scored.len())
                        .sum::<usize>();
                    if scheme.scores_latents() {
                        positions += h
                            .turns
                            .iter()
                            .map(|t| t.iter().filter(|l| !l.forced).count())
                            .sum::<usize>();
                    }
                    for (a, b) in gp.iter_mut().zip(&g) {
                        *a -= b; // maximize
                    }
                }
                let n = positions.max(1) as f64;
                for g in gp.iter_mut() {
                    *g /= n;
                }
                opt_p.update(p.params.flat_mut(), &gp, lr);
                record.batch_log.push(BatchKind::Unlabeled);
            }
        }

        let (val_combined, val_lem) = match ctx {
            Some(c) => {
                let (comb, lem) = validate_models(p, c)?;
                best.offer(epoch, comb, p, None);
                (Some(comb), Some(lem))
            }
            None => (None, None),
        };
        record.epochs.push(EpochRecord {
            epoch,
            phase: "st".into(),
            loss_p: mean(&losses_p),
            loss_q: 0.0,
            reconstruction: mean(&st_values),
            kl_term: 0.0,
            val_combined,
            val_latent_exact: val_lem,
        });
    }
    let (best_p, _) = best.finish(&mut record, p, None);
    Ok(TrainOutcome {
        record,
        best_p,
        best_q: None,
    })
}
