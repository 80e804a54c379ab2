//! Synthetic task-oriented dialog corpus: ontology, database, sessions,
//! delexicalization, belief/act grammar, and label-proportion splits.

mod gen;
mod io;

pub use gen::{generate_synthetic_corpus, GeneratorConfig};
pub use io::{load_corpus, load_world, save_corpus, save_world, CorpusFileError, WorldFile};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("ontology is empty: at least one domain with one slot is required")]
    EmptyOntology,
    #[error("slot {domain}/{slot} violates the ontology contract: {reason}")]
    BadSlot {
        domain: String,
        slot: String,
        reason: String,
    },
    #[error("database entity in {domain} uses slot {slot} absent from the ontology")]
    UnknownDbSlot { domain: String, slot: String },
    #[error("label proportion must lie in (0, 1], got {0}")]
    BadProportion(f64),
}

/// One slot of a domain: surface values plus its delexicalization placeholder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    /// Surface values; a value may span several whitespace tokens.
    pub values: Vec<String>,
    /// Placeholder token substituted for any of the values, e.g. `[value_food]`.
    pub placeholder: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Bracketed domain token, e.g. `[restaurant]`.
    pub name: String,
    pub slots: Vec<SlotSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ontology {
    pub domains: Vec<DomainSpec>,
}

impl Ontology {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.domains.is_empty() || self.domains.iter().all(|d| d.slots.is_empty()) {
            return Err(CorpusError::EmptyOntology);
        }
        for d in &self.domains {
            for s in &d.slots {
                if s.values.is_empty() {
                    return Err(CorpusError::BadSlot {
                        domain: d.name.clone(),
                        slot: s.name.clone(),
                        reason: "no surface values".into(),
                    });
                }
                if s.placeholder.is_empty() {
                    return Err(CorpusError::BadSlot {
                        domain: d.name.clone(),
                        slot: s.name.clone(),
                        reason: "missing placeholder".into(),
                    });
                }
                if s.values.iter().any(|v| v == &s.placeholder) {
                    return Err(CorpusError::BadSlot {
                        domain: d.name.clone(),
                        slot: s.name.clone(),
                        reason: "placeholder collides with a surface value".into(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self, name: &str) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn slot_names(&self, domain: &str) -> Vec<&str> {
        self.domain(domain)
            .map(|d| d.slots.iter().map(|s| s.name.as_str()).collect())
            .unwrap_or_default()
    }

    /// All (value tokens, placeholder) replacement rules, longest value first,
    /// then deterministic by (domain, slot) declaration order.
    fn delex_rules(&self) -> Vec<(Vec<&str>, &str)> {
        let mut rules: Vec<(Vec<&str>, &str)> = Vec::new();
        for d in &self.domains {
            for s in &d.slots {
                for v in &s.values {
                    rules.push((v.split_whitespace().collect(), s.placeholder.as_str()));
                }
            }
        }
        rules.sort_by_key(|(toks, _)| std::cmp::Reverse(toks.len()));
        rules
    }
}

/// Entity records for one domain; each record maps slot name -> value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatabaseTable {
    pub domain: String,
    pub entities: Vec<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Database {
    pub tables: Vec<DatabaseTable>,
}

impl Database {
    pub fn table(&self, domain: &str) -> Option<&DatabaseTable> {
        self.tables.iter().find(|t| t.domain == domain)
    }

    pub fn validate(&self, ontology: &Ontology) -> Result<(), CorpusError> {
        for t in &self.tables {
            let slots = ontology.slot_names(&t.domain);
            for e in &t.entities {
                for slot in e.keys() {
                    if !slots.contains(&slot.as_str()) {
                        return Err(CorpusError::UnknownDbSlot {
                            domain: t.domain.clone(),
                            slot: slot.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// One dialog turn; fields hold content tokens without segment delimiters
/// (delimiters are attached when training sequences are rendered). The wire
/// names are the single-letter field keys of the corpus file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogTurn {
    #[serde(rename = "u")]
    pub user: String,
    #[serde(rename = "b")]
    pub belief: String,
    #[serde(rename = "d")]
    pub db: String,
    #[serde(rename = "a")]
    pub act: String,
    #[serde(rename = "r")]
    pub response: String,
}

/// Target of a synthetic session, kept as evaluation ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub domain: String,
    pub constraints: Vec<(String, String)>,
    pub requested: Vec<String>,
    pub target_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogSession {
    pub id: String,
    pub turns: Vec<DialogTurn>,
    pub labeled: bool,
    pub goal: Goal,
}

/// A session-level split into labeled and unlabeled subsets.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub labeled: Vec<DialogSession>,
    pub unlabeled: Vec<DialogSession>,
    pub proportion: f64,
    pub seed: u64,
}

/// Belief state parsed under `[domain] slot value (slot value)*` grammar.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedBelief {
    pub groups: Vec<(String, Vec<(String, String)>)>,
}

impl ParsedBelief {
    /// Constraints for one domain, later mentions overriding earlier ones.
    pub fn constraints_for(&self, domain: &str) -> Option<BTreeMap<String, String>> {
        let mut found = false;
        let mut merged = BTreeMap::new();
        for (d, pairs) in &self.groups {
            if d == domain {
                found = true;
                for (s, v) in pairs {
                    merged.insert(s.clone(), v.clone());
                }
            }
        }
        found.then_some(merged)
    }

    /// The most recently mentioned domain, if any.
    pub fn active_domain(&self) -> Option<&str> {
        self.groups.last().map(|(d, _)| d.as_str())
    }
}

/// System act parsed as `[domain] [act-type] slot*` groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActGroup {
    pub domain: String,
    pub act_type: String,
    pub slots: Vec<String>,
}

fn is_domain_token(tok: &str) -> bool {
    tok.starts_with('[') && tok.ends_with(']') && !tok.starts_with("[value_") && {
        // act types and db buckets are bracketed too; exclude them
        !crate::vocab::ACT_TYPE_TOKENS.contains(&tok) && !crate::vocab::DB_BUCKET_TOKENS.contains(&tok)
    }
}

/// Parses a belief token string. Returns `None` when the string does not
/// follow the grammar (a model error, not a crash).
pub fn parse_belief(belief: &str, ontology: &Ontology) -> Option<ParsedBelief> {
    let toks: Vec<&str> = belief.split_whitespace().collect();
    if toks.is_empty() {
        return Some(ParsedBelief::default());
    }
    let mut groups: Vec<(String, Vec<(String, String)>)> = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        if !is_domain_token(toks[i]) {
            return None;
        }
        let domain = toks[i].to_string();
        let slot_names = ontology.slot_names(&domain);
        i += 1;
        let mut pairs = Vec::new();
        while i < toks.len() && !is_domain_token(toks[i]) {
            let slot = toks[i];
            if !slot_names.contains(&slot) {
                return None;
            }
            i += 1;
            let mut value_toks = Vec::new();
            while i < toks.len() && !is_domain_token(toks[i]) && !slot_names.contains(&toks[i]) {
                value_toks.push(toks[i]);
                i += 1;
            }
            if value_toks.is_empty() {
                return None;
            }
            pairs.push((slot.to_string(), value_toks.join(" ")));
        }
        groups.push((domain, pairs));
    }
    Some(ParsedBelief { groups })
}

/// Parses an act token string into `[domain] [act-type] slot*` groups.
pub fn parse_act(act: &str) -> Option<Vec<ActGroup>> {
    let toks: Vec<&str> = act.split_whitespace().collect();
    if toks.is_empty() {
        return Some(Vec::new());
    }
    let mut groups = Vec::new();
    let mut i = 0;
    let mut domain: Option<String> = None;
    while i < toks.len() {
        if is_domain_token(toks[i]) {
            domain = Some(toks[i].to_string());
            i += 1;
            continue;
        }
        if crate::vocab::ACT_TYPE_TOKENS.contains(&toks[i]) {
            let act_type = toks[i].to_string();
            i += 1;
            let mut slots = Vec::new();
            while i < toks.len()
                && !is_domain_token(toks[i])
                && !crate::vocab::ACT_TYPE_TOKENS.contains(&toks[i])
            {
                slots.push(toks[i].to_string());
                i += 1;
            }
            groups.push(ActGroup {
                domain: domain.clone()?,
                act_type,
                slots,
            });
            continue;
        }
        return None;
    }
    Some(groups)
}

/// Replaces ontology surface values with their slot placeholders.
///
/// Longest match wins; among equal-length candidates the earliest-declared
/// rule applies. Non-value tokens pass through unchanged, so the operation
/// never fails and is idempotent (placeholders are never surface values).
pub fn delexicalize(response: &str, ontology: &Ontology) -> String {
    let toks: Vec<&str> = response.split_whitespace().collect();
    let rules = ontology.delex_rules();
    let mut out: Vec<&str> = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        let hit = rules
            .iter()
            .find(|(value, _)| toks[i..].starts_with(value.as_slice()));
        match hit {
            Some((value, placeholder)) => {
                out.push(placeholder);
                i += value.len();
            }
            None => {
                out.push(toks[i]);
                i += 1;
            }
        }
    }
    out.join(" ")
}

/// All records of `db` matching every constraint the belief states for the
/// table's domain. A belief that does not mention the domain (or does not
/// parse) yields an empty result.
pub fn db_query<'a>(
    belief: &ParsedBelief,
    db: &'a DatabaseTable,
) -> Vec<&'a BTreeMap<String, String>> {
    let Some(constraints) = belief.constraints_for(&db.domain) else {
        return Vec::new();
    };
    db.entities
        .iter()
        .filter(|e| {
            constraints
                .iter()
                .all(|(slot, value)| e.get(slot).map(String::as_str) == Some(value.as_str()))
        })
        .collect()
}

/// Queries the db for the belief's active domain and returns the bucketed
/// db-result token. Unparseable beliefs land in the empty bucket.
pub fn db_result_token(belief_text: &str, ontology: &Ontology, db: &Database) -> String {
    let count = parse_belief(belief_text, ontology)
        .and_then(|parsed| {
            parsed
                .active_domain()
                .and_then(|d| db.table(d))
                .map(|table| db_query(&parse_belief(belief_text, ontology).unwrap(), table).len())
        })
        .unwrap_or(0);
    crate::vocab::DB_BUCKET_TOKENS[crate::vocab::db_bucket(count)].to_string()
}

/// Session-level split by label proportion; deterministic in `seed`.
pub fn split_by_label_proportion(
    corpus: &[DialogSession],
    proportion: f64,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(CorpusError::BadProportion(proportion));
    }
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_labeled = (proportion * corpus.len() as f64).round() as usize;
    let n_labeled = n_labeled.clamp(usize::from(!corpus.is_empty()), corpus.len());
    let mut labeled_idx: Vec<usize> = indices[..n_labeled].to_vec();
    let mut unlabeled_idx: Vec<usize> = indices[n_labeled..].to_vec();
    labeled_idx.sort_unstable();
    unlabeled_idx.sort_unstable();
    let mark = |idx: &[usize], labeled: bool| {
        idx.iter()
            .map(|&i| {
                let mut s = corpus[i].clone();
                s.labeled = labeled;
                s
            })
            .collect::<Vec<_>>()
    };
    Ok(CorpusSplit {
        labeled: mark(&labeled_idx, true),
        unlabeled: mark(&unlabeled_idx, false),
        proportion,
        seed,
    })
}

/// Builds the closed vocabulary for a corpus: fixed specials, the ontology's
/// domains and placeholders, then every surface word seen in the ontology or
/// the sessions, sorted for determinism.
pub fn build_vocab(ontology: &Ontology, sessions: &[DialogSession]) -> Vocab {
    let domains: Vec<String> = ontology.domains.iter().map(|d| d.name.clone()).collect();
    let placeholders: Vec<String> = ontology
        .domains
        .iter()
        .flat_map(|d| d.slots.iter().map(|s| s.placeholder.clone()))
        .collect();
    let mut words: Vec<String> = Vec::new();
    for d in &ontology.domains {
        for s in &d.slots {
            words.push(s.name.clone());
            for v in &s.values {
                words.extend(v.split_whitespace().map(str::to_string));
            }
        }
    }
    for sess in sessions {
        for t in &sess.turns {
            for field in [&t.user, &t.belief, &t.db, &t.act, &t.response] {
                words.extend(field.split_whitespace().map(str::to_string));
            }
        }
    }
    Vocab::build(&domains, &placeholders, &words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_ontology() -> Ontology {
        Ontology {
            domains: vec![DomainSpec {
                name: "[restaurant]".into(),
                slots: vec![
                    SlotSpec {
                        name: "food".into(),
                        values: vec!["spanish".into(), "indian".into()],
                        placeholder: "[value_food]".into(),
                    },
                    SlotSpec {
                        name: "area".into(),
                        values: vec!["centre".into(), "north".into()],
                        placeholder: "[value_area]".into(),
                    },
                    SlotSpec {
                        name: "name".into(),
                        values: vec!["nirala".into(), "casa".into(), "casa royal".into()],
                        placeholder: "[value_name]".into(),
                    },
                    SlotSpec {
                        name: "address".into(),
                        values: vec!["7 milton road".into(), "milton road".into(), "mill lane".into()],
                        placeholder: "[value_address]".into(),
                    },
                ],
            }],
        }
    }

    fn toy_db() -> DatabaseTable {
        let mk = |food: &str, area: &str, name: &str| {
            BTreeMap::from([
                ("food".to_string(), food.to_string()),
                ("area".to_string(), area.to_string()),
                ("name".to_string(), name.to_string()),
            ])
        };
        DatabaseTable {
            domain: "[restaurant]".into(),
            entities: vec![
                mk("spanish", "centre", "casa"),
                mk("spanish", "centre", "casa royal"),
                mk("indian", "north", "nirala"),
            ],
        }
    }

    #[test]
    fn delexicalize_replaces_values_with_placeholders() {
        let ont = toy_ontology();
        let out = delexicalize("the nirala address is 7 milton road", &ont);
        assert_eq!(out, "the [value_name] address is [value_address]");
    }

    #[test]
    fn delexicalize_no_values_is_identity() {
        let ont = toy_ontology();
        assert_eq!(delexicalize("hello there friend", &ont), "hello there friend");
    }

    #[test]
    fn delexicalize_prefers_longest_match() {
        let ont = toy_ontology();
        // "casa royal" must win over its prefix "casa".
        assert_eq!(delexicalize("try casa royal today", &ont), "try [value_name] today");
        assert_eq!(delexicalize("try casa today", &ont), "try [value_name] today");
    }

    /// Exhaustive replacement-order oracle: applies single replacements in
    /// every possible order and keeps the outcome covering the most tokens.
    fn delex_oracle(tokens: &[&str], ont: &Ontology) -> Vec<String> {
        fn covered(toks: &[String], ont: &Ontology) -> usize {
            let placeholders: Vec<&str> = ont
                .domains
                .iter()
                .flat_map(|d| d.slots.iter().map(|s| s.placeholder.as_str()))
                .collect();
            toks.iter().filter(|t| placeholders.contains(&t.as_str())).count()
        }
        fn step(toks: Vec<String>, ont: &Ontology, best: &mut Option<Vec<String>>) {
            let mut extended = false;
            for d in &ont.domains {
                for s in &d.slots {
                    for v in &s.values {
                        let vt: Vec<&str> = v.split_whitespace().collect();
                        for i in 0..toks.len() {
                            if i + vt.len() <= toks.len()
                                && toks[i..i + vt.len()].iter().map(String::as_str).eq(vt.iter().copied())
                            {
                                let mut next = toks[..i].to_vec();
                                next.push(s.placeholder.clone());
                                next.extend_from_slice(&toks[i + vt.len()..]);
                                extended = true;
                                step(next, ont, best);
                            }
                        }
                    }
                }
            }
            if !extended {
                let better = match best {
                    None => true,
                    Some(b) => {
                        let (cb, ct) = (covered(b, ont), covered(&toks, ont));
                        // maximal coverage, then leftmost-longest tiebreak via
                        // fewer leftover tokens
                        ct > cb || (ct == cb && toks.len() < b.len())
                    }
                };
                if better {
                    *best = Some(toks);
                }
            }
        }
        let mut best = None;
        step(tokens.iter().map(|t| t.to_string()).collect(), ont, &mut best);
        best.unwrap()
    }

    #[test]
    fn delexicalize_matches_replacement_order_oracle() {
        let ont = toy_ontology();
        let cases = [
            "casa royal is in centre",
            "visit casa and casa royal",
            "spanish casa royal milton road",
            "mill lane mill lane",
            "nothing to see",
        ];
        for c in &cases {
            let toks: Vec<&str> = c.split_whitespace().collect();
            assert!(toks.len() <= 8);
            let got = delexicalize(c, &ont);
            let want = delex_oracle(&toks, &ont).join(" ");
            assert_eq!(got, want, "case {c:?}");
        }
    }

    #[test]
    fn belief_parses_and_queries() {
        let ont = toy_ontology();
        let db = toy_db();
        let parsed = parse_belief("[restaurant] food spanish area centre", &ont).unwrap();
        assert_eq!(db_query(&parsed, &db).len(), 2);
    }

    #[test]
    fn empty_constraints_match_all() {
        let ont = toy_ontology();
        let db = toy_db();
        let parsed = parse_belief("[restaurant]", &ont).unwrap();
        assert_eq!(db_query(&parsed, &db).len(), 3);
    }

    #[test]
    fn unknown_domain_yields_empty() {
        let ont = toy_ontology();
        let db = toy_db();
        let parsed = ParsedBelief {
            groups: vec![("[spaceport]".into(), vec![])],
        };
        assert!(db_query(&parsed, &db).is_empty());
        assert!(parse_belief("[restaurant] warp high", &ont).is_none());
        assert_eq!(db_result_token("garbage in", &ont, &Database { tables: vec![toy_db()] }), "[db_0]");
    }

    #[test]
    fn multiword_values_parse_in_beliefs() {
        let ont = toy_ontology();
        let parsed = parse_belief("[restaurant] name casa royal area centre", &ont).unwrap();
        assert_eq!(
            parsed.groups[0].1,
            vec![
                ("name".to_string(), "casa royal".to_string()),
                ("area".to_string(), "centre".to_string())
            ]
        );
    }

    #[test]
    fn act_grammar_round_trip() {
        let acts = parse_act("[restaurant] [inform] name address [general] [reqmore]").unwrap();
        assert_eq!(acts.len(), 2);
        assert_eq!(acts[0].slots, vec!["name", "address"]);
        assert_eq!(acts[1].act_type, "[reqmore]");
        assert!(parse_act("name without domain").is_none());
    }

    #[test]
    fn split_counts_and_determinism() {
        let sessions: Vec<DialogSession> = (0..100)
            .map(|i| DialogSession {
                id: format!("s{i}"),
                turns: vec![],
                labeled: true,
                goal: Goal {
                    domain: "[restaurant]".into(),
                    constraints: vec![],
                    requested: vec![],
                    target_name: String::new(),
                },
            })
            .collect();
        let a = split_by_label_proportion(&sessions, 0.1, 7).unwrap();
        assert_eq!(a.labeled.len(), 10);
        assert_eq!(a.unlabeled.len(), 90);
        let b = split_by_label_proportion(&sessions, 0.1, 7).unwrap();
        assert_eq!(
            a.labeled.iter().map(|s| &s.id).collect::<Vec<_>>(),
            b.labeled.iter().map(|s| &s.id).collect::<Vec<_>>()
        );
        let c = split_by_label_proportion(&sessions, 0.1, 8).unwrap();
        assert_ne!(
            a.labeled.iter().map(|s| &s.id).collect::<Vec<_>>(),
            c.labeled.iter().map(|s| &s.id).collect::<Vec<_>>()
        );
        assert_eq!(c.labeled.len(), 10);

        let full = split_by_label_proportion(&sessions, 1.0, 3).unwrap();
        assert!(full.unlabeled.is_empty());
        assert!(split_by_label_proportion(&sessions, 0.0, 3).is_err());
        assert!(split_by_label_proportion(&sessions, 1.5, 3).is_err());
    }

    proptest! {
        #[test]
        fn delexicalize_is_idempotent(words in proptest::collection::vec(
            prop_oneof![
                Just("casa".to_string()),
                Just("royal".to_string()),
                Just("milton".to_string()),
                Just("road".to_string()),
                Just("spanish".to_string()),
                Just("the".to_string()),
                Just("is".to_string()),
            ],
            0..10,
        )) {
            let ont = toy_ontology();
            let text = words.join(" ");
            let once = delexicalize(&text, &ont);
            let twice = delexicalize(&once, &ont);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn splits_are_disjoint_and_sized(n in 1usize..40, prop in 0.05f64..1.0, seed in 0u64..50) {
            let sessions: Vec<DialogSession> = (0..n)
                .map(|i| DialogSession {
                    id: format!("s{i}"),
                    turns: vec![],
                    labeled: true,
                    goal: Goal {
                        domain: String::new(),
                        constraints: vec![],
                        requested: vec![],
                        target_name: String::new(),
                    },
                })
                .collect();
            let split = split_by_label_proportion(&sessions, prop, seed).unwrap();
            let labeled_ids: Vec<&String> = split.labeled.iter().map(|s| &s.id).collect();
            for s in &split.unlabeled {
                prop_assert!(!labeled_ids.contains(&&s.id));
            }
            prop_assert_eq!(split.labeled.len() + split.unlabeled.len(), n);
            let want = (prop * n as f64).round();
            prop_assert!((split.labeled.len() as f64 - want).abs() <= 1.0);
        }
    }

    #[test]
    fn random_queries_match_linear_scan_oracle() {
        use rand::Rng;
        let ont = toy_ontology();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let foods = ["spanish", "indian"];
            let areas = ["centre", "north"];
            let entities: Vec<BTreeMap<String, String>> = (0..10)
                .map(|i| {
                    BTreeMap::from([
                        ("food".to_string(), foods[rng.gen_range(0..2)].to_string()),
                        ("area".to_string(), areas[rng.gen_range(0..2)].to_string()),
                        ("name".to_string(), format!("place{i}")),
                    ])
                })
                .collect();
            let table = DatabaseTable {
                domain: "[restaurant]".into(),
                entities,
            };
            let food = foods[rng.gen_range(0..2)];
            let area = areas[rng.gen_range(0..2)];
            let belief = format!("[restaurant] food {food} area {area}");
            let parsed = parse_belief(&belief, &ont).unwrap();
            let got = db_query(&parsed, &table).len();
            let want = table
                .entities
                .iter()
                .filter(|e| e["food"] == food && e["area"] == area)
                .count();
            assert_eq!(got, want);
        }
    }
}
