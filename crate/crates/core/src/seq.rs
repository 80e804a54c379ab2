//! Session-level training sequences for the generative and inference models.
//!
//! Generative layout per turn: `u b d a r`; inference layout: `u r b d a`.
//! Every segment is wrapped in its start/end delimiter. Start delimiters are
//! structural (never loss-scored, force-fed at generation time); end
//! delimiters inherit the loss mask of the segment they close, so the models
//! learn to terminate segments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DialogSession, DialogTurn};
use crate::vocab::{Segment, TokenId, Vocab, VocabError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentTag {
    User,
    Belief,
    Db,
    Act,
    Response,
    Delim,
}

impl From<Segment> for SegmentTag {
    fn from(seg: Segment) -> Self {
        match seg {
            Segment::User => SegmentTag::User,
            Segment::Belief => SegmentTag::Belief,
            Segment::Db => SegmentTag::Db,
            Segment::Act => SegmentTag::Act,
            Segment::Response => SegmentTag::Response,
        }
    }
}

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("session {0} is unlabeled; only labeled sessions have training sequences")]
    Unlabeled(String),
    #[error("vocabulary error: {0}")]
    Vocab(#[from] VocabError),
    #[error("turn {turn_index} spans {len} tokens, exceeding max_len {max_len}; session rejected")]
    TurnTooLong {
        turn_index: usize,
        len: usize,
        max_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSequence {
    pub token_ids: Vec<TokenId>,
    pub tags: Vec<SegmentTag>,
    pub loss_mask: Vec<bool>,
    /// Half-open `[start, end)` index ranges, one per dialog turn, in order.
    pub turn_boundaries: Vec<(usize, usize)>,
}

impl TrainingSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

/// A segment rendered to token ids, delimiters included.
#[derive(Debug, Clone)]
pub struct RenderedSegment {
    pub seg: Segment,
    pub open: TokenId,
    pub content: Vec<TokenId>,
    pub close: TokenId,
}

pub fn render_segment(
    vocab: &Vocab,
    seg: Segment,
    text: &str,
) -> Result<RenderedSegment, VocabError> {
    Ok(RenderedSegment {
        seg,
        open: vocab.open_id(seg),
        content: vocab.encode(text)?,
        close: vocab.close_id(seg),
    })
}

/// Incremental constructor shared by the labeled-sequence builders and the
/// unsupervised layouts.
#[derive(Debug, Default)]
pub(crate) struct SeqBuilder {
    ids: Vec<TokenId>,
    tags: Vec<SegmentTag>,
    mask: Vec<bool>,
    boundaries: Vec<(usize, usize)>,
    turn_start: usize,
}

impl SeqBuilder {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn begin_turn(&mut self) {
        self.turn_start = self.ids.len();
    }

    pub(crate) fn end_turn(&mut self) {
        self.boundaries.push((self.turn_start, self.ids.len()));
    }

    /// Appends a rendered segment. The start delimiter is never scored; the
    /// content and end delimiter take `scored`.
    pub(crate) fn push_segment(&mut self, seg: &RenderedSegment, scored: bool) {
        self.ids.push(seg.open);
        self.tags.push(SegmentTag::Delim);
        self.mask.push(false);
        for &id in &seg.content {
            self.ids.push(id);
            self.tags.push(seg.seg.into());
            self.mask.push(scored);
        }
        self.ids.push(seg.close);
        self.tags.push(SegmentTag::Delim);
        self.mask.push(scored);
    }

    pub(crate) fn finish(self) -> TrainingSequence {
        TrainingSequence {
            token_ids: self.ids,
            tags: self.tags,
            loss_mask: self.mask,
            turn_boundaries: self.boundaries,
        }
    }
}

fn turn_segments(
    vocab: &Vocab,
    turn: &DialogTurn,
) -> Result<[RenderedSegment; 5], VocabError> {
    Ok([
        render_segment(vocab, Segment::User, &turn.user)?,
        render_segment(vocab, Segment::Belief, &turn.belief)?,
        render_segment(vocab, Segment::Db, &turn.db)?,
        render_segment(vocab, Segment::Act, &turn.act)?,
        render_segment(vocab, Segment::Response, &turn.response)?,
    ])
}

/// `u b d a r` layout: the conditional objective scores belief, db, act and
/// response tokens but never user tokens.
pub fn build_generative_sequence(
    session: &DialogSession,
    vocab: &Vocab,
) -> Result<TrainingSequence, SeqError> {
    if !session.labeled {
        return Err(SeqError::Unlabeled(session.id.clone()));
    }
    let mut b = SeqBuilder::new();
    for turn in &session.turns {
        let [u, bel, db, act, resp] = turn_segments(vocab, turn)?;
        b.begin_turn();
        b.push_segment(&u, false);
        b.push_segment(&bel, true);
        b.push_segment(&db, true);
        b.push_segment(&act, true);
        b.push_segment(&resp, true);
        b.end_turn();
    }
    Ok(b.finish())
}

/// `u r b d a` layout: the posterior scores only the latent segments, with
/// the response moved into the conditioning prefix.
pub fn build_inference_sequence(
    session: &DialogSession,
    vocab: &Vocab,
) -> Result<TrainingSequence, SeqError> {
    if !session.labeled {
        return Err(SeqError::Unlabeled(session.id.clone()));
    }
    let mut b = SeqBuilder::new();
    for turn in &session.turns {
        let [u, bel, db, act, resp] = turn_segments(vocab, turn)?;
        b.begin_turn();
        b.push_segment(&u, false);
        b.push_segment(&resp, false);
        b.push_segment(&bel, true);
        b.push_segment(&db, true);
        b.push_segment(&act, true);
        b.end_turn();
    }
    Ok(b.finish())
}

/// Pre-truncation: drops earliest whole turns until the sequence fits
/// `max_len`. Never splits inside a turn.
pub fn truncate(seq: &TrainingSequence, max_len: usize) -> Result<TrainingSequence, SeqError> {
    if seq.len() <= max_len {
        return Ok(seq.clone());
    }
    let mut keep_from = None;
    for (i, &(start, end)) in seq.turn_boundaries.iter().enumerate() {
        let turn_len = end - start;
        if turn_len > max_len {
            return Err(SeqError::TurnTooLong {
                turn_index: i,
                len: turn_len,
                max_len,
            });
        }
        if seq.len() - start <= max_len {
            keep_from = Some(i);
            break;
        }
    }
    let Some(first_turn) = keep_from else {
        // every suffix of whole turns overflows; only possible when a single
        // turn exceeds max_len, which the loop above reports
        let last = seq.turn_boundaries.len() - 1;
        let (s, e) = seq.turn_boundaries[last];
        return Err(SeqError::TurnTooLong {
            turn_index: last,
            len: e - s,
            max_len,
        });
    };
    let offset = seq.turn_boundaries[first_turn].0;
    Ok(TrainingSequence {
        token_ids: seq.token_ids[offset..].to_vec(),
        tags: seq.tags[offset..].to_vec(),
        loss_mask: seq.loss_mask[offset..].to_vec(),
        turn_boundaries: seq.turn_boundaries[first_turn..]
            .iter()
            .map(|&(s, e)| (s - offset, e - offset))
            .collect(),
    })
}

/// Recovers per-turn fields from a built sequence by walking its delimiter
/// structure. Inverse of the builders for well-formed sequences.
pub fn parse_sequence(
    seq: &TrainingSequence,
    vocab: &Vocab,
) -> Result<Vec<DialogTurn>, VocabError> {
    let mut turns = Vec::new();
    for &(start, end) in &seq.turn_boundaries {
        let mut fields: std::collections::HashMap<Segment, String> = Default::default();
        let mut i = start;
        while i < end {
            let seg = Segment::ALL
                .iter()
                .copied()
                .find(|s| vocab.open_id(*s) == seq.token_ids[i])
                .ok_or_else(|| VocabError::UnknownToken("expected segment opener".into()))?;
            let close = vocab.close_id(seg);
            let mut j = i + 1;
            let mut content = Vec::new();
            while j < end && seq.token_ids[j] != close {
                content.push(seq.token_ids[j]);
                j += 1;
            }
            fields.insert(seg, vocab.decode(&content)?);
            i = j + 1;
        }
        turns.push(DialogTurn {
            user: fields.remove(&Segment::User).unwrap_or_default(),
            belief: fields.remove(&Segment::Belief).unwrap_or_default(),
            db: fields.remove(&Segment::Db).unwrap_or_default(),
            act: fields.remove(&Segment::Act).unwrap_or_default(),
            response: fields.remove(&Segment::Response).unwrap_or_default(),
        });
    }
    Ok(turns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, generate_synthetic_corpus, GeneratorConfig};
    use proptest::prelude::*;

    fn fixture() -> (Vec<DialogSession>, Vocab) {
        let corpus = generate_synthetic_corpus(
            &GeneratorConfig {
                sessions: 10,
                ..GeneratorConfig::default()
            },
            23,
        )
        .unwrap();
        let vocab = build_vocab(&corpus.ontology, &corpus.sessions);
        (corpus.sessions, vocab)
    }

    #[test]
    fn generative_layout_tag_order_and_mask() {
        let (sessions, vocab) = fixture();
        let sess = &sessions[0];
        let seq = build_generative_sequence(sess, &vocab).unwrap();
        assert_eq!(seq.token_ids.len(), seq.tags.len());
        assert_eq!(seq.token_ids.len(), seq.loss_mask.len());
        // tag order within the first turn: USER then BELIEF then DB then ACT
        // then RESPONSE (delimiters interleaved)
        let order: Vec<SegmentTag> = seq.tags[..seq.turn_boundaries[0].1]
            .iter()
            .copied()
            .filter(|t| *t != SegmentTag::Delim)
            .collect();
        let mut dedup = order.clone();
        dedup.dedup();
        assert_eq!(
            dedup,
            vec![
                SegmentTag::User,
                SegmentTag::Belief,
                SegmentTag::Db,
                SegmentTag::Act,
                SegmentTag::Response
            ]
        );
        for (tag, mask) in seq.tags.iter().zip(&seq.loss_mask) {
            if *tag == SegmentTag::User {
                assert!(!mask, "user tokens are never scored in the generative layout");
            }
        }
        // every user end delimiter is unscored, every other end delimiter is scored
        for (i, &id) in seq.token_ids.iter().enumerate() {
            for seg in Segment::ALL {
                if id == vocab.close_id(seg) {
                    assert_eq!(seq.loss_mask[i], seg != Segment::User, "segment {seg:?}");
                }
                if id == vocab.open_id(seg) {
                    assert!(!seq.loss_mask[i], "start delimiters are structural");
                }
            }
        }
    }

    #[test]
    fn inference_layout_tag_order_and_mask() {
        let (sessions, vocab) = fixture();
        let seq = build_inference_sequence(&sessions[0], &vocab).unwrap();
        let order: Vec<SegmentTag> = seq.tags[..seq.turn_boundaries[0].1]
            .iter()
            .copied()
            .filter(|t| *t != SegmentTag::Delim)
            .collect();
        let mut dedup = order.clone();
        dedup.dedup();
        assert_eq!(
            dedup,
            vec![
                SegmentTag::User,
                SegmentTag::Response,
                SegmentTag::Belief,
                SegmentTag::Db,
                SegmentTag::Act
            ]
        );
        for (tag, mask) in seq.tags.iter().zip(&seq.loss_mask) {
            if matches!(tag, SegmentTag::User | SegmentTag::Response) {
                assert!(!mask, "conditioning segments are unscored in the inference layout");
            }
        }
    }

    #[test]
    fn layouts_are_token_permutations() {
        let (sessions, vocab) = fixture();
        for sess in &sessions {
            let g = build_generative_sequence(sess, &vocab).unwrap();
            let q = build_inference_sequence(sess, &vocab).unwrap();
            let mut a = g.token_ids.clone();
            let mut b = q.token_ids.clone();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn token_count_matches_concatenation_oracle() {
        let (sessions, vocab) = fixture();
        for sess in &sessions {
            let seq = build_generative_sequence(sess, &vocab).unwrap();
            // independent re-count: sum of whitespace token counts plus two
            // delimiters per segment
            let mut want = 0usize;
            for t in &sess.turns {
                for field in [&t.user, &t.belief, &t.db, &t.act, &t.response] {
                    want += field.split_whitespace().count() + 2;
                }
            }
            assert_eq!(seq.len(), want);
        }
    }

    #[test]
    fn unlabeled_sessions_are_rejected() {
        let (mut sessions, vocab) = fixture();
        sessions[0].labeled = false;
        assert!(matches!(
            build_generative_sequence(&sessions[0], &vocab),
            Err(SeqError::Unlabeled(_))
        ));
        assert!(matches!(
            build_inference_sequence(&sessions[0], &vocab),
            Err(SeqError::Unlabeled(_))
        ));
    }

    #[test]
    fn parse_sequence_round_trips_turn_fields() {
        let (sessions, vocab) = fixture();
        for sess in &sessions {
            for build in [build_generative_sequence, build_inference_sequence] {
                let seq = build(sess, &vocab).unwrap();
                let turns = parse_sequence(&seq, &vocab).unwrap();
                assert_eq!(&turns, &sess.turns);
            }
        }
    }

    #[test]
    fn truncate_keeps_suffix_of_whole_turns() {
        let (sessions, vocab) = fixture();
        let sess = sessions
            .iter()
            .find(|s| s.turns.len() == 3)
            .expect("fixture contains a 3-turn session");
        let seq = build_generative_sequence(sess, &vocab).unwrap();
        let t1_len = seq.turn_boundaries[0].1;
        let keep = seq.len() - t1_len;
        let cut = truncate(&seq, keep).unwrap();
        assert_eq!(cut.turn_boundaries.len(), 2);
        assert_eq!(cut.token_ids[..], seq.token_ids[t1_len..]);
        assert_eq!(cut.turn_boundaries[0].0, 0);

        // identity when it already fits
        let same = truncate(&seq, seq.len()).unwrap();
        assert_eq!(same, seq);

        // single oversized turn is rejected
        let err = truncate(&seq, 3).unwrap_err();
        assert!(matches!(err, SeqError::TurnTooLong { .. }), "{err}");
    }

    proptest! {
        #[test]
        fn truncate_matches_rebuild_oracle(sess_idx in 0usize..10, max_len in 10usize..400) {
            let (sessions, vocab) = fixture();
            let sess = &sessions[sess_idx];
            let seq = build_generative_sequence(sess, &vocab).unwrap();
            match truncate(&seq, max_len) {
                Ok(cut) => {
                    prop_assert!(cut.len() <= max_len);
                    // boundaries still partition
                    let mut pos = 0;
                    for &(s, e) in &cut.turn_boundaries {
                        prop_assert_eq!(s, pos);
                        prop_assert!(e > s);
                        pos = e;
                    }
                    prop_assert_eq!(pos, cut.len());
                    // oracle: rebuild from the kept turn suffix
                    let dropped = sess.turns.len() - cut.turn_boundaries.len();
                    let rebuilt_sess = DialogSession {
                        turns: sess.turns[dropped..].to_vec(),
                        ..sess.clone()
                    };
                    let rebuilt = build_generative_sequence(&rebuilt_sess, &vocab).unwrap();
                    prop_assert_eq!(cut, rebuilt);
                }
                Err(SeqError::TurnTooLong { len, .. }) => prop_assert!(len > max_len),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
