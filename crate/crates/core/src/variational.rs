//! Variational machinery for unlabeled sessions: evidence-bound estimators
//! over sampled latent states, the straight-through trick, analytic
//! per-position KL terms, and the two computational strategies
//! (sampling-then-forward vs. a coupled pass that rebuilds the prefix graph
//! each turn).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Database, DialogSession, Ontology};
use crate::model::{
    CategoricalDistribution, DecodeMode, Decoder, ModelError, ModelParameters, TapeForward,
    TapeParams,
};
use crate::seq::render_segment;
use crate::tape::{log_softmax, NodeId, Tape};
use crate::vocab::{Segment, TokenId, Vocab};

/// Per-turn latent candidate spaces above this size refuse to enumerate.
pub const MAX_TURN_ENUMERATION: usize = 200_000;

#[derive(Debug, Error)]
pub enum VariationalError {
    #[error("latent sample has {got} turns, session has {want}")]
    TurnMismatch { got: usize, want: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("per-turn latent space of {size} sequences exceeds the enumeration cap {cap}")]
    EnumerationTooLarge { size: usize, cap: usize },
    #[error("vocabulary error: {0}")]
    Vocab(#[from] crate::vocab::VocabError),
}

// ---------------------------------------------------------------------------
// latent structure
// ---------------------------------------------------------------------------

/// One generated segment of a turn's latent stream: an optional forced opener
/// token, then sampled tokens until `stop` appears (or the budget runs out,
/// in which case `stop` is force-appended and the turn is flagged truncated).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub opener: Option<TokenId>,
    pub stop: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSchedule {
    pub segments: Vec<SegmentPlan>,
    /// Max sampled tokens per turn across all segments.
    pub max_latent_len: usize,
}

impl LatentSchedule {
    /// The dialog schedule: belief, db and act segments with their start
    /// delimiters forced and their end delimiters acting as stop tokens.
    pub fn dialog(vocab: &Vocab, max_latent_len: usize) -> Self {
        let seg = |s: Segment| SegmentPlan {
            opener: Some(vocab.open_id(s)),
            stop: vocab.close_id(s),
        };
        Self {
            segments: vec![seg(Segment::Belief), seg(Segment::Db), seg(Segment::Act)],
            max_latent_len,
        }
    }

    /// Single free-form segment ending at `stop`; used by small fixtures.
    pub fn flat(stop: TokenId, max_latent_len: usize) -> Self {
        Self {
            segments: vec![SegmentPlan { opener: None, stop }],
            max_latent_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentToken {
    pub id: TokenId,
    /// Forced tokens are structural inputs: never sampled, no KL position.
    pub forced: bool,
}

/// Sampled (or enumerated) latent states for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub turns: Vec<Vec<LatentToken>>,
    /// Source distributions at each sampled position, per turn, in order.
    pub source_dists: Vec<Vec<CategoricalDistribution>>,
    pub truncated: Vec<bool>,
}

impl LatentSample {
    pub fn from_token_streams(turns: Vec<Vec<LatentToken>>) -> Self {
        let n = turns.len();
        Self {
            turns,
            source_dists: vec![Vec::new(); n],
            truncated: vec![false; n],
        }
    }

    pub fn any_truncated(&self) -> bool {
        self.truncated.iter().any(|&t| t)
    }
}

/// The observed half of an unlabeled session, rendered to token ids.
#[derive(Debug, Clone)]
pub struct UnsupervisedTurn {
    /// Forced conditioning tokens (user segment, delimiters included).
    pub user: Vec<TokenId>,
    /// Forced response opener (e.g. the response start delimiter).
    pub response_prefix: Vec<TokenId>,
    /// Response tokens scored under the generative model (content plus the
    /// closing delimiter).
    pub response_scored: Vec<TokenId>,
}

#[derive(Debug, Clone)]
pub struct UnsupervisedSession {
    pub turns: Vec<UnsupervisedTurn>,
    pub schedule: LatentSchedule,
}

impl UnsupervisedSession {
    /// Renders the observed (user, response) side of a dialog session.
    /// Belief, db and act fields are deliberately not consulted.
    pub fn from_session(
        session: &DialogSession,
        vocab: &Vocab,
        max_latent_len: usize,
    ) -> Result<Self, VariationalError> {
        let mut turns = Vec::with_capacity(session.turns.len());
        for t in &session.turns {
            let u = render_segment(vocab, Segment::User, &t.user)?;
            let r = render_segment(vocab, Segment::Response, &t.response)?;
            let mut user = vec![u.open];
            user.extend(&u.content);
            user.push(u.close);
            let mut response_scored = r.content.clone();
            response_scored.push(r.close);
            turns.push(UnsupervisedTurn {
                user,
                response_prefix: vec![r.open],
                response_scored,
            });
        }
        Ok(Self {
            turns,
            schedule: LatentSchedule::dialog(vocab, max_latent_len),
        })
    }

    /// Ground-truth latent stream of a labeled session under the dialog
    /// schedule (content + end delimiters sampled, start delimiters forced).
    pub fn oracle_latents(
        session: &DialogSession,
        vocab: &Vocab,
    ) -> Result<Vec<Vec<LatentToken>>, VariationalError> {
        let mut turns = Vec::new();
        for t in &session.turns {
            let mut stream = Vec::new();
            for (seg, text) in [
                (Segment::Belief, &t.belief),
                (Segment::Db, &t.db),
                (Segment::Act, &t.act),
            ] {
                let r = render_segment(vocab, seg, text)?;
                stream.push(LatentToken {
                    id: r.open,
                    forced: true,
                });
                for id in r.content {
                    stream.push(LatentToken { id, forced: false });
                }
                stream.push(LatentToken {
                    id: r.close,
                    forced: false,
                });
            }
            turns.push(stream);
        }
        Ok(turns)
    }
}

// ---------------------------------------------------------------------------
// primitive terms
// ---------------------------------------------------------------------------

/// Analytic per-position term `sum_v q(v) log(p(v)/q(v))` = -KL(q || p).
/// Always <= 0, zero iff the distributions coincide. Returns -inf when p
/// lacks support where q has mass (a support violation).
pub fn kl_position_term(q: &CategoricalDistribution, p: &CategoricalDistribution) -> f64 {
    let mut acc = 0.0;
    for (&qv, &pv) in q.0.iter().zip(&p.0) {
        if qv == 0.0 {
            continue;
        }
        if pv == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += qv * (pv.ln() - qv.ln());
    }
    acc.min(0.0)
}

/// Straight-through wrap: forward value is the exact one-hot row of
/// `sampled_token`, the backward path routes gradients through `probs`.
pub fn stt_wrap(tape: &mut Tape, probs: NodeId, sampled_token: TokenId) -> NodeId {
    tape.straight_through(probs, sampled_token)
}

// ---------------------------------------------------------------------------
// latent sampling (gradient-free)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    NaiveMc,
    RmcaToken,
    RmcaTurn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub use_stt: bool,
    pub max_latent_len: usize,
    /// Greedy generation is the training default; note that unbiasedness of
    /// the estimators holds under stochastic sampling only, which is why the
    /// verification suite always samples or enumerates.
    pub sample_mode: DecodeMode,
    /// Re-derive db tokens by a database query on the sampled belief instead
    /// of sampling them from the inference model.
    pub db_requery: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::RmcaToken,
            use_stt: true,
            max_latent_len: 32,
            sample_mode: DecodeMode::Greedy,
            db_requery: false,
        }
    }
}

/// Context for the optional deterministic db re-query mode.
pub struct RequeryContext<'a> {
    pub vocab: &'a Vocab,
    pub ontology: &'a Ontology,
    pub database: &'a Database,
}

/// Ancestral latent generation from the inference model (posterior layout:
/// the response precedes the latents), gradient-free, deterministic given
/// `seed` and the config.
pub fn sample_latents(
    q: &ModelParameters,
    session: &UnsupervisedSession,
    cfg: &EstimatorConfig,
    seed: u64,
    requery: Option<&RequeryContext>,
) -> Result<LatentSample, VariationalError> {
    sample_latents_layout(q, session, cfg, seed, requery, true)
}

/// Pseudo-label generation from the generative model's latent prior (the
/// response is only fed after the turn's latents).
pub fn sample_latents_prior(
    p: &ModelParameters,
    session: &UnsupervisedSession,
    cfg: &EstimatorConfig,
    seed: u64,
    requery: Option<&RequeryContext>,
) -> Result<LatentSample, VariationalError> {
    sample_latents_layout(p, session, cfg, seed, requery, false)
}

fn sample_latents_layout(
    q: &ModelParameters,
    session: &UnsupervisedSession,
    cfg: &EstimatorConfig,
    seed: u64,
    requery: Option<&RequeryContext>,
    posterior: bool,
) -> Result<LatentSample, VariationalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dec = Decoder::new(q);
    let mut turns = Vec::with_capacity(session.turns.len());
    let mut dists = Vec::with_capacity(session.turns.len());
    let mut truncated = Vec::with_capacity(session.turns.len());

    for turn in &session.turns {
        dec.push_tokens(&turn.user)?;
        if posterior {
            dec.push_tokens(&turn.response_prefix)?;
            dec.push_tokens(&turn.response_scored)?;
        }

        let mut stream: Vec<LatentToken> = Vec::new();
        let mut turn_dists: Vec<CategoricalDistribution> = Vec::new();
        let mut budget = session.schedule.max_latent_len;
        let mut cut = false;
        let mut belief_tokens: Vec<TokenId> = Vec::new();

        for (seg_idx, seg) in session.schedule.segments.iter().enumerate() {
            if let Some(op) = seg.opener {
                dec.push_token(op)?;
                stream.push(LatentToken {
                    id: op,
                    forced: true,
                });
            }
            // deterministic db re-query replaces this segment's sampling
            let is_db_segment = seg_idx == 1 && session.schedule.segments.len() == 3;
            if cfg.db_requery && is_db_segment {
                let ctx = requery.expect("db_requery requires a RequeryContext");
                let belief_text = ctx.vocab.decode(&belief_tokens)?;
                let tok = ctx
                    .vocab
                    .id(&crate::corpus::db_result_token(
                        &belief_text,
                        ctx.ontology,
                        ctx.database,
                    ))
                    .expect("db bucket tokens are registered");
                for id in [tok, seg.stop] {
                    dec.push_token(id)?;
                    stream.push(LatentToken { id, forced: true });
                }
                continue;
            }
            loop {
                if budget == 0 {
                    dec.push_token(seg.stop)?;
                    stream.push(LatentToken {
                        id: seg.stop,
                        forced: true,
                    });
                    cut = true;
                    break;
                }
                let dist = dec.next_dist();
                let tok = match cfg.sample_mode {
                    DecodeMode::Greedy => dist.argmax(),
                    DecodeMode::Sample => dist.sample(&mut rng),
                };
                turn_dists.push(dist);
                dec.push_token(tok)?;
                stream.push(LatentToken {
                    id: tok,
                    forced: false,
                });
                budget -= 1;
                if tok == seg.stop {
                    break;
                }
                if seg_idx == 0 {
                    belief_tokens.push(tok);
                }
            }
        }
        if !posterior {
            dec.push_tokens(&turn.response_prefix)?;
            dec.push_tokens(&turn.response_scored)?;
        }
        turns.push(stream);
        dists.push(turn_dists);
        truncated.push(cut);
    }
    let sample = LatentSample {
        turns,
        source_dists: dists,
        truncated,
    };
    if sample.truncated.iter().all(|&t| t) && !sample.truncated.is_empty() {
        // common while models are undertrained and by construction in the
        // enumeration fixtures, so warn once per process
        static WARNED: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);
        if !WARNED.swap(true, std::sync::atomic::Ordering::Relaxed) {
            eprintln!(
                "warning: every turn hit max_latent_len={}; latents are truncated \
                 (reported once; see LatentSample::truncated for per-session stats)",
                session.schedule.max_latent_len
            );
        }
    }
    Ok(sample)
}

/// Enumerates the complete per-turn latent space of a schedule over a
/// `vocab_size`-token alphabet: every sampled-token string consistent with
/// the stop/budget protocol.
pub fn enumerate_turn_latents(
    schedule: &LatentSchedule,
    vocab_size: usize,
) -> Result<Vec<Vec<LatentToken>>, VariationalError> {
    fn extend(
        schedule: &LatentSchedule,
        vocab_size: usize,
        seg_idx: usize,
        budget: usize,
        prefix: &mut Vec<LatentToken>,
        out: &mut Vec<Vec<LatentToken>>,
    ) -> Result<(), VariationalError> {
        if seg_idx == schedule.segments.len() {
            out.push(prefix.clone());
            return Ok(());
        }
        let seg = &schedule.segments[seg_idx];
        if let Some(op) = seg.opener {
            prefix.push(LatentToken {
                id: op,
                forced: true,
            });
        }
        // walk all sampled strings for this segment
        fn seg_walk(
            schedule: &LatentSchedule,
            vocab_size: usize,
            seg_idx: usize,
            budget: usize,
            prefix: &mut Vec<LatentToken>,
            out: &mut Vec<Vec<LatentToken>>,
        ) -> Result<(), VariationalError> {
            if out.len() > MAX_TURN_ENUMERATION {
                return Err(VariationalError::EnumerationTooLarge {
                    size: out.len(),
                    cap: MAX_TURN_ENUMERATION,
                });
            }
            let seg = &schedule.segments[seg_idx];
            if budget == 0 {
                prefix.push(LatentToken {
                    id: seg.stop,
                    forced: true,
                });
                extend(schedule, vocab_size, seg_idx + 1, budget, prefix, out)?;
                prefix.pop();
                return Ok(());
            }
            for tok in 0..vocab_size {
                prefix.push(LatentToken {
                    id: tok,
                    forced: false,
                });
                if tok == seg.stop {
                    extend(schedule, vocab_size, seg_idx + 1, budget - 1, prefix, out)?;
                } else {
                    seg_walk(schedule, vocab_size, seg_idx, budget - 1, prefix, out)?;
                }
                prefix.pop();
            }
            Ok(())
        }
        seg_walk(schedule, vocab_size, seg_idx, budget, prefix, out)?;
        if seg.opener.is_some() {
            prefix.pop();
        }
        Ok(())
    }
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    extend(
        schedule,
        vocab_size,
        0,
        schedule.max_latent_len,
        &mut prefix,
        &mut out,
    )?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// objective evaluation (tape)
// ---------------------------------------------------------------------------

/// Reconstruction and divergence parts of one session's objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub reconstruction: f64,
    pub kl_term: f64,
    pub total: f64,
}

/// Computational strategy for building the objective's graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Latents are given; one incremental pass per model over the session.
    SamplingThenForward,
    /// Rebuilds both models' prefix graphs from scratch at every turn, the
    /// way a generation loop that retains gradients would.
    CoupledOnePass,
}

/// A fully built objective: value breakdown plus the tape for backward.
pub struct ObjectiveEval {
    pub breakdown: ElboBreakdown,
    pub tape: Tape,
    pub root: NodeId,
    pub p_params: TapeParams,
    pub q_params: TapeParams,
    /// Straight-through nodes created during the build (empty when STT off).
    pub stt_nodes: Vec<NodeId>,
}

impl ObjectiveEval {
    /// Gradients of the objective w.r.t. both models' flat parameters
    /// (ascent direction: these are gradients of the bound, not of a loss).
    pub fn gradients(&self, p: &ModelParameters, q: &ModelParameters) -> (Vec<f64>, Vec<f64>) {
        let node_grads = self.tape.backward(self.root);
        let mut gp = vec![0.0; p.params.len()];
        let mut gq = vec![0.0; q.params.len()];
        self.p_params.read_grads(p, &node_grads, &mut gp);
        self.q_params.read_grads(q, &node_grads, &mut gq);
        (gp, gq)
    }

    pub fn graph_nodes(&self) -> usize {
        self.tape.len()
    }
}

struct LoggedForward<'m> {
    fwd: TapeForward<'m>,
    log: Vec<ReplayItem>,
}

#[derive(Clone, Copy)]
enum ReplayItem {
    Tok(TokenId),
    Row(NodeId),
}

impl<'m> LoggedForward<'m> {
    fn new(tape: &mut Tape, model: &'m ModelParameters) -> Self {
        let tp = TapeParams::load(tape, model);
        Self {
            fwd: TapeForward::new(tape, model, tp),
            log: Vec::new(),
        }
    }

    fn push_token(&mut self, tape: &mut Tape, tok: TokenId) -> Result<(), ModelError> {
        self.fwd.push_token(tape, tok)?;
        self.log.push(ReplayItem::Tok(tok));
        Ok(())
    }

    fn push_row(&mut self, tape: &mut Tape, row: NodeId) -> Result<(), ModelError> {
        self.fwd.push_row_node(tape, row)?;
        self.log.push(ReplayItem::Row(row));
        Ok(())
    }

    fn next_logits(&mut self, tape: &mut Tape) -> NodeId {
        self.fwd.next_logits(tape)
    }

    /// Discards the current graph state and re-runs the whole input log
    /// through a fresh forward on the same tape (the coupled strategy's
    /// per-turn prefix recomputation). Parameter leaves are reused.
    fn rebuild(&mut self, tape: &mut Tape, model: &'m ModelParameters) -> Result<(), ModelError> {
        let tp = self.fwd.params().clone();
        self.fwd = TapeForward::new(tape, model, tp);
        for item in self.log.clone() {
            match item {
                ReplayItem::Tok(t) => self.fwd.push_token(tape, t)?,
                ReplayItem::Row(r) => self.fwd.push_row_node(tape, r)?,
            }
        }
        Ok(())
    }

    /// Snapshot of (keys, vals, position) for candidate scoring rollbacks.
    fn fork(&self) -> TapeForward<'m> {
        self.fwd.clone_state()
    }
}

fn check_turns(session: &UnsupervisedSession, h: &LatentSample) -> Result<(), VariationalError> {
    if session.turns.len() != h.turns.len() {
        return Err(VariationalError::TurnMismatch {
            got: h.turns.len(),
            want: session.turns.len(),
        });
    }
    Ok(())
}

/// Shared evaluator behind the token-level, turn-level and naive estimators.
/// Sampling steps are always skipped: `h` is given.
fn evaluate_objective(
    p: &ModelParameters,
    q: &ModelParameters,
    session: &UnsupervisedSession,
    h: &LatentSample,
    kind: EstimatorKind,
    use_stt: bool,
    strategy: Strategy,
) -> Result<ObjectiveEval, VariationalError> {
    check_turns(session, h)?;
    let mut tape = Tape::new();
    let mut fq = LoggedForward::new(&mut tape, q);
    let mut fp = LoggedForward::new(&mut tape, p);
    let q_param_ids = fq.fwd.params().clone();
    let p_param_ids = fp.fwd.params().clone();

    let mut recon_terms: Vec<NodeId> = Vec::new();
    let mut kl_terms: Vec<NodeId> = Vec::new();
    let mut stt_nodes: Vec<NodeId> = Vec::new();

    // turn-level candidate spaces are enumerated once (the space is the same
    // set of strings at every turn; only probabilities differ)
    let candidates = if kind == EstimatorKind::RmcaTurn {
        Some(enumerate_turn_latents(
            &session.schedule,
            q.config.vocab_size,
        )?)
    } else {
        None
    };

    for (turn, latents) in session.turns.iter().zip(&h.turns) {
        if strategy == Strategy::CoupledOnePass {
            fq.rebuild(&mut tape, q)?;
            fp.rebuild(&mut tape, p)?;
        }
        for &t in &turn.user {
            fq.push_token(&mut tape, t)?;
        }
        for &t in turn.response_prefix.iter().chain(&turn.response_scored) {
            fq.push_token(&mut tape, t)?;
        }
        for &t in &turn.user {
            fp.push_token(&mut tape, t)?;
        }

        // turn-level analytic sum over whole-turn candidates, before the
        // sampled latents advance the state
        if let Some(cands) = &candidates {
            let mut cand_terms = Vec::with_capacity(cands.len());
            for cand in cands {
                let mut cq = fq.fork();
                let mut cp = fp.fork();
                let mut logq_parts = Vec::new();
                let mut logp_parts = Vec::new();
                for lt in cand {
                    if !lt.forced {
                        let ql = cq.next_logits(&mut tape);
                        let qlog = tape.log_softmax_node(ql);
                        logq_parts.push(tape.pick(qlog, lt.id));
                        let pl = cp.next_logits(&mut tape);
                        let plog = tape.log_softmax_node(pl);
                        logp_parts.push(tape.pick(plog, lt.id));
                    }
                    cq.push_token(&mut tape, lt.id)?;
                    cp.push_token(&mut tape, lt.id)?;
                }
                let logq = tape.sum_scalars(logq_parts);
                let logp = tape.sum_scalars(logp_parts);
                let weight = tape.exp(logq);
                let neg_logq = tape.scale(logq, -1.0);
                let ratio = tape.add(logp, neg_logq);
                cand_terms.push(tape.mul(weight, ratio));
            }
            kl_terms.push(tape.sum_scalars(cand_terms));
        }

        // sampled latents drive both models forward
        for lt in latents {
            if lt.forced {
                fq.push_token(&mut tape, lt.id)?;
                fp.push_token(&mut tape, lt.id)?;
                continue;
            }
            let ql = fq.next_logits(&mut tape);
            let pl = fp.next_logits(&mut tape);
            match kind {
                EstimatorKind::RmcaToken => {
                    kl_terms.push(tape.kl_term(ql, pl));
                }
                EstimatorKind::NaiveMc => {
                    let qlog = tape.log_softmax_node(ql);
                    let plog = tape.log_softmax_node(pl);
                    let lp = tape.pick(plog, lt.id);
                    let lq = tape.pick(qlog, lt.id);
                    let neg_lq = tape.scale(lq, -1.0);
                    kl_terms.push(tape.add(lp, neg_lq));
                }
                EstimatorKind::RmcaTurn => {}
            }
            if use_stt {
                let probs = tape.softmax_node(ql);
                let row = stt_wrap(&mut tape, probs, lt.id);
                stt_nodes.push(row);
                fq.push_row(&mut tape, row)?;
                fp.push_row(&mut tape, row)?;
            } else {
                fq.push_token(&mut tape, lt.id)?;
                fp.push_token(&mut tape, lt.id)?;
            }
        }

        // response reconstruction under the generative model
        for &t in &turn.response_prefix {
            fp.push_token(&mut tape, t)?;
        }
        for &t in &turn.response_scored {
            let logits = fp.next_logits(&mut tape);
            let logp = tape.log_softmax_node(logits);
            recon_terms.push(tape.pick(logp, t));
            fp.push_token(&mut tape, t)?;
        }
    }

    let recon = tape.sum_scalars(recon_terms);
    let kl = tape.sum_scalars(kl_terms);
    let root = tape.add(recon, kl);
    let breakdown = ElboBreakdown {
        reconstruction: tape.scalar(recon),
        kl_term: tape.scalar(kl),
        total: tape.scalar(root),
    };
    Ok(ObjectiveEval {
        breakdown,
        tape,
        root,
        p_params: p_param_ids,
        q_params: q_param_ids,
        stt_nodes,
    })
}

/// Token-level recursive Monte Carlo objective: per sampled latent position
/// an analytic full-vocabulary divergence term, plus the response
/// log-likelihood after each turn's latents.
pub fn rmca_objective_token(
    p: &ModelParameters,
    q: &ModelParameters,
    session: &UnsupervisedSession,
    h: &LatentSample,
    use_stt: bool,
) -> Result<ObjectiveEval, VariationalError> {
    evaluate_objective(
        p,
        q,
        session,
        h,
        EstimatorKind::RmcaToken,
        use_stt,
        Strategy::SamplingThenForward,
    )
}

/// Turn-level variant: the analytic sum runs over whole-turn latent
/// candidates, so it is feasible only on enumerable instances.
pub fn rmca_objective_turn(
    p: &ModelParameters,
    q: &ModelParameters,
    session: &UnsupervisedSession,
    h: &LatentSample,
    use_stt: bool,
) -> Result<ObjectiveEval, VariationalError> {
    evaluate_objective(
        p,
        q,
        session,
        h,
        EstimatorKind::RmcaTurn,
        use_stt,
        Strategy::SamplingThenForward,
    )
}

/// Single-sample estimator without analytic terms: log p(r|..) plus the
/// log-ratio at the sampled latents.
pub fn naive_mc_objective(
    p: &ModelParameters,
    q: &ModelParameters,
    session: &UnsupervisedSession,
    h: &LatentSample,
) -> Result<ObjectiveEval, VariationalError> {
    evaluate_objective(
        p,
        q,
        session,
        h,
        EstimatorKind::NaiveMc,
        false,
        Strategy::SamplingThenForward,
    )
}

/// Objective evaluation with an explicit strategy, for the memory and
/// equivalence probes.
pub fn objective_with_strategy(
    p: &ModelParameters,
    q: &ModelParameters,
    session: &UnsupervisedSession,
    h: &LatentSample,
    cfg: &EstimatorConfig,
    strategy: Strategy,
) -> Result<ObjectiveEval, VariationalError> {
    evaluate_objective(p, q, session, h, cfg.kind, cfg.use_stt, strategy)
}

/// Gradient-free evaluation of the same objectives via the cache path; used
/// where only values are needed (variance sweeps, enumeration weighting).
/// Straight-through wrapping is value-invariant, so it plays no role here.
pub fn objective_value_nograd(
    p: &ModelParameters,
    q: &ModelParameters,
    session: &UnsupervisedSession,
    h: &LatentSample,
    kind: EstimatorKind,
) -> Result<ElboBreakdown, VariationalError> {
    check_turns(session, h)?;
    let mut dq = Decoder::new(q);
    let mut dp = Decoder::new(p);
    let mut recon = 0.0;
    let mut kl = 0.0;
    let candidates = if kind == EstimatorKind::RmcaTurn {
        Some(enumerate_turn_latents(
            &session.schedule,
            q.config.vocab_size,
        )?)
    } else {
        None
    };
    for (turn, latents) in session.turns.iter().zip(&h.turns) {
        dq.push_tokens(&turn.user)?;
        dq.push_tokens(&turn.response_prefix)?;
        dq.push_tokens(&turn.response_scored)?;
        dp.push_tokens(&turn.user)?;

        if let Some(cands) = &candidates {
            for cand in cands {
                let mut cq = dq.clone_state();
                let mut cp = dp.clone_state();
                let mut logq = 0.0;
                let mut logp = 0.0;
                for t in cand {
                    if !t.forced {
                        logq += log_softmax(&cq.next_logits())[t.id];
                        logp += log_softmax(&cp.next_logits())[t.id];
                    }
                    cq.push_token(t.id)?;
                    cp.push_token(t.id)?;
                }
                kl += logq.exp() * (logp - logq);
            }
        }
        for t in latents {
            if !t.forced {
                let ql = dq.next_logits();
                let pl = dp.next_logits();
                match kind {
                    EstimatorKind::RmcaToken => {
                        kl += kl_position_term(
                            &CategoricalDistribution::from_logits(&ql),
                            &CategoricalDistribution::from_logits(&pl),
                        );
                    }
                    EstimatorKind::NaiveMc => {
                        kl += log_softmax(&pl)[t.id] - log_softmax(&ql)[t.id];
                    }
                    EstimatorKind::RmcaTurn => {}
                }
            }
            dq.push_token(t.id)?;
            dp.push_token(t.id)?;
        }
        dp.push_tokens(&turn.response_prefix)?;
        for &t in &turn.response_scored {
            recon += log_softmax(&dp.next_logits())[t];
            dp.push_token(t)?;
        }
    }
    Ok(ElboBreakdown {
        reconstruction: recon,
        kl_term: kl,
        total: recon + kl,
    })
}

/// Log-probability of a latent sample under a model's layout: returns
/// (latent log-prob, response log-prob). `posterior` selects the inference
/// layout (response before latents) and skips response scoring.
pub fn session_log_probs(
    model: &ModelParameters,
    session: &UnsupervisedSession,
    h: &LatentSample,
    posterior: bool,
) -> Result<(f64, f64), VariationalError> {
    check_turns(session, h)?;
    let mut dec = Decoder::new(model);
    let mut lat = 0.0;
    let mut resp = 0.0;
    for (turn, latents) in session.turns.iter().zip(&h.turns) {
        dec.push_tokens(&turn.user)?;
        if posterior {
            dec.push_tokens(&turn.response_prefix)?;
            dec.push_tokens(&turn.response_scored)?;
        }
        for t in latents {
            if !t.forced {
                lat += log_softmax(&dec.next_logits())[t.id];
            }
            dec.push_token(t.id)?;
        }
        if !posterior {
            dec.push_tokens(&turn.response_prefix)?;
            for &t in &turn.response_scored {
                resp += log_softmax(&dec.next_logits())[t];
                dec.push_token(t)?;
            }
        }
    }
    Ok((lat, resp))
}

/// Output of one unsupervised step: the bound's breakdown plus ascent
/// gradients for both models.
pub struct UnsupervisedStep {
    pub breakdown: ElboBreakdown,
    pub grad_p: Vec<f64>,
    pub grad_q: Vec<f64>,
    pub latents: LatentSample,
    /// Sampled latent positions plus scored response positions; a natural
    /// per-token normalizer for the gradients.
    pub scored_positions: usize,
}

/// One full unsupervised step: gradient-free latent generation, forward
/// computation treating the latents as given, then backward.
pub fn unsupervised_step(
    p: &ModelParameters,
    q: &ModelParameters,
    session: &UnsupervisedSession,
    cfg: &EstimatorConfig,
    seed: u64,
    requery: Option<&RequeryContext>,
) -> Result<UnsupervisedStep, VariationalError> {
    let h = sample_latents(q, session, cfg, seed, requery)?;
    let eval = evaluate_objective(
        p,
        q,
        session,
        &h,
        cfg.kind,
        cfg.use_stt,
        Strategy::SamplingThenForward,
    )?;
    let (grad_p, grad_q) = eval.gradients(p, q);
    let scored_positions = h
        .turns
        .iter()
        .map(|t| t.iter().filter(|l| !l.forced).count())
        .sum::<usize>()
        + session
            .turns
            .iter()
            .map(|t| t.response_scored.len())
            .sum::<usize>();
    Ok(UnsupervisedStep {
        breakdown: eval.breakdown,
        grad_p,
        grad_q,
        latents: h,
        scored_positions,
    })
}
