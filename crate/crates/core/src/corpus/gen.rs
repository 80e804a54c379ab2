//! Templated user-simulator + rule-based policy over a closed-vocabulary
//! world, so belief/db/act ground truth is exact by construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    db_query, delexicalize, parse_belief, CorpusError, Database, DatabaseTable, DialogSession,
    DialogTurn, DomainSpec, Goal, Ontology, SlotSpec,
};
use crate::vocab::{db_bucket, DB_BUCKET_TOKENS, GENERAL_DOMAIN};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub sessions: usize,
    /// Number of domains drawn from the built-in pool (1 or 2).
    pub domains: usize,
    /// Surface values kept per informable slot (2..=5).
    pub values_per_slot: usize,
    pub entities_per_domain: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            sessions: 300,
            domains: 2,
            values_per_slot: 3,
            entities_per_domain: 8,
        }
    }
}

struct DomainPool {
    domain: &'static str,
    domain_word: &'static str,
    informable: &'static [(&'static str, &'static [&'static str])],
    names: &'static [&'static str],
    addresses: &'static [&'static str],
    phones: &'static [&'static str],
}

const RESTAURANT: DomainPool = DomainPool {
    domain: "[restaurant]",
    domain_word: "restaurant",
    informable: &[
        ("food", &["spanish", "indian", "chinese", "italian", "thai"]),
        ("area", &["centre", "north", "south", "east", "west"]),
        ("pricerange", &["cheap", "moderate", "expensive"]),
    ],
    names: &["nirala", "casa", "casa royal", "goldenhouse", "bloom", "harbor", "olive", "lotus"],
    addresses: &["milton road", "mill lane", "regent street", "station road", "bridge street"],
    phones: &["5550101", "5550124", "5550177", "5550190", "5550203"],
};

const HOTEL: DomainPool = DomainPool {
    domain: "[hotel]",
    domain_word: "hotel",
    informable: &[
        ("area", &["centre", "north", "south", "east", "west"]),
        ("pricerange", &["cheap", "moderate", "expensive"]),
        ("stars", &["three", "four", "five"]),
    ],
    names: &["acorn", "ashley", "royal gate", "lensfield", "gonville", "aylesbray", "warkworth", "alpha"],
    addresses: &["chesterton road", "lensfield road", "tenison road", "barton road", "holt street"],
    phones: &["5550310", "5550333", "5550361", "5550388", "5550402"],
};

const REQUESTABLE: [&str; 2] = ["address", "phone"];

/// Every surface word the templates can emit, so vocabularies built from a
/// synthetic world cover any session the same world can generate.
pub const TEMPLATE_WORDS: [&str; 69] = [
    "i", "am", "looking", "for", "a", "hello", "need", "can", "you", "find", "me", "serving",
    "that", "serves", "food", "in", "the", "area", "located", "price", "range", "priced", "with",
    "stars", "rated", "what", "is", "get", "and", "?", ".", "please", "how", "about", "one",
    "would", "prefer", "make", "it", "there", "are", "several", "options", "which", "do", "have",
    "found", "few", "choices", "preference", "recommend", "great", "choice", "matches", "thank",
    "goodbye", "thanks", "all", "no", "welcome", "glad", "to", "help", "share", "details", "tell",
    "more", "restaurant", "hotel",
];

fn pools(count: usize) -> Vec<&'static DomainPool> {
    [&RESTAURANT, &HOTEL][..count.min(2)].to_vec()
}

/// Builds the ontology implied by a generator config.
pub fn world_ontology(cfg: &GeneratorConfig) -> Result<Ontology, CorpusError> {
    if cfg.domains == 0 {
        return Err(CorpusError::EmptyOntology);
    }
    let mut domains = Vec::new();
    for pool in pools(cfg.domains) {
        let mut slots: Vec<SlotSpec> = pool
            .informable
            .iter()
            .map(|(name, values)| SlotSpec {
                name: name.to_string(),
                values: values[..cfg.values_per_slot.clamp(2, values.len())]
                    .iter()
                    .map(|v| v.to_string())
                    .collect(),
                placeholder: format!("[value_{name}]"),
            })
            .collect();
        slots.push(SlotSpec {
            name: "name".into(),
            values: pool.names.iter().map(|v| v.to_string()).collect(),
            placeholder: "[value_name]".into(),
        });
        slots.push(SlotSpec {
            name: "address".into(),
            values: pool.addresses.iter().map(|v| v.to_string()).collect(),
            placeholder: "[value_address]".into(),
        });
        slots.push(SlotSpec {
            name: "phone".into(),
            values: pool.phones.iter().map(|v| v.to_string()).collect(),
            placeholder: "[value_phone]".into(),
        });
        domains.push(DomainSpec {
            name: pool.domain.to_string(),
            slots,
        });
    }
    let ontology = Ontology { domains };
    ontology.validate()?;
    Ok(ontology)
}

/// Deterministically populates one entity table per domain.
pub fn world_database(cfg: &GeneratorConfig, ontology: &Ontology, seed: u64) -> Database {
    let mut tables = Vec::new();
    for (pool_idx, pool) in pools(cfg.domains).iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x0D0B + pool_idx as u64));
        let spec = ontology.domain(pool.domain).expect("world domains exist");
        let n = cfg.entities_per_domain.min(pool.names.len());
        let entities = (0..n)
            .map(|i| {
                let mut e = BTreeMap::new();
                e.insert("name".to_string(), pool.names[i].to_string());
                for slot in &spec.slots {
                    match slot.name.as_str() {
                        "name" => {}
                        "address" => {
                            e.insert(
                                "address".into(),
                                pool.addresses[rng.gen_range(0..pool.addresses.len())].to_string(),
                            );
                        }
                        "phone" => {
                            e.insert(
                                "phone".into(),
                                pool.phones[rng.gen_range(0..pool.phones.len())].to_string(),
                            );
                        }
                        _ => {
                            e.insert(
                                slot.name.clone(),
                                slot.values[rng.gen_range(0..slot.values.len())].clone(),
                            );
                        }
                    }
                }
                e
            })
            .collect();
        tables.push(DatabaseTable {
            domain: pool.domain.to_string(),
            entities,
        });
    }
    Database { tables }
}

pub struct SyntheticCorpus {
    pub ontology: Ontology,
    pub database: Database,
    pub sessions: Vec<DialogSession>,
}

impl SyntheticCorpus {
    /// Vocabulary covering the ontology, every template word, and the
    /// sessions; total over anything the same world can generate.
    pub fn vocab(&self) -> crate::vocab::Vocab {
        let mut sessions_plus = self.sessions.clone();
        sessions_plus.push(DialogSession {
            id: "template-words".into(),
            turns: vec![DialogTurn {
                user: TEMPLATE_WORDS.join(" "),
                belief: String::new(),
                db: String::new(),
                act: String::new(),
                response: String::new(),
            }],
            labeled: true,
            goal: Goal {
                domain: String::new(),
                constraints: vec![],
                requested: vec![],
                target_name: String::new(),
            },
        });
        super::build_vocab(&self.ontology, &sessions_plus)
    }
}

/// splitmix64-style mixing for per-session seeds.
fn mix(seed: u64, idx: u64) -> u64 {
    let mut z = seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn constraint_phrase(rng: &mut ChaCha8Rng, slot: &str, value: &str) -> String {
    let variants: [String; 2] = match slot {
        "food" => [format!("serving {value} food"), format!("that serves {value} food")],
        "area" => [format!("in the {value} area"), format!("located in the {value}")],
        "pricerange" => [format!("in the {value} price range"), format!("{value} priced")],
        "stars" => [format!("with {value} stars"), format!("rated {value} stars")],
        _ => [format!("with {slot} {value}"), format!("{slot} {value}")],
    };
    variants[rng.gen_range(0..variants.len())].clone()
}

fn request_phrase(rng: &mut ChaCha8Rng, requested: &[String]) -> String {
    // half the requests are vague: the informed slots then surface only in
    // the system response, never in the user turn
    if rng.gen_bool(0.5) {
        let vague = ["can you share the details ?", "tell me more about it ?"];
        return vague[rng.gen_range(0..vague.len())].to_string();
    }
    match requested {
        [one] => format!("what is the {one} ?"),
        [a, b] => format!("can i get the {a} and the {b} ?"),
        _ => String::new(),
    }
}

fn generate_session(
    idx: usize,
    seed: u64,
    ontology: &Ontology,
    database: &Database,
    domains: &[&'static DomainPool],
) -> DialogSession {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, idx as u64));
    let pool = domains[rng.gen_range(0..domains.len())];
    let table = database.table(pool.domain).expect("table exists");
    let target = &table.entities[rng.gen_range(0..table.entities.len())];
    let spec = ontology.domain(pool.domain).expect("domain exists");

    let mut informable: Vec<&str> = pool.informable.iter().map(|(n, _)| *n).collect();
    informable.shuffle(&mut rng);
    let k = rng.gen_range(2..=informable.len().min(3));
    let constraints: Vec<(String, String)> = informable[..k]
        .iter()
        .map(|s| (s.to_string(), target[*s].clone()))
        .collect();

    let n_req = *[0usize, 1, 1, 2, 2].choose(&mut rng).unwrap();
    let mut req_pool: Vec<&str> = REQUESTABLE.to_vec();
    req_pool.shuffle(&mut rng);
    let requested: Vec<String> = req_pool[..n_req].iter().map(|s| s.to_string()).collect();

    // group constraints into 1..=2 user turns
    let groups: Vec<&[(String, String)]> = if k > 2 || (k == 2 && rng.gen_bool(0.5)) {
        let cut = if k == 2 { 1 } else { rng.gen_range(1..k) };
        vec![&constraints[..cut], &constraints[cut..]]
    } else {
        vec![&constraints[..]]
    };

    let openers = [
        format!("i am looking for a {}", pool.domain_word),
        format!("hello i need a {}", pool.domain_word),
        format!("can you find me a {}", pool.domain_word),
    ];

    let mut turns: Vec<DialogTurn> = Vec::new();
    let mut stated: Vec<(String, String)> = Vec::new();
    let mut offered_name = String::new();

    for (gi, group) in groups.iter().enumerate() {
        let last_group = gi + 1 == groups.len();
        let phrases: Vec<String> = group
            .iter()
            .map(|(s, v)| constraint_phrase(&mut rng, s, v))
            .collect();
        let mut user = if gi == 0 {
            format!("{} {}", openers[rng.gen_range(0..openers.len())].clone(), phrases.join(" and "))
        } else {
            let connectors = ["i would prefer one", "how about one", "make it one"];
            format!("{} {}", connectors[rng.gen_range(0..connectors.len())], phrases.join(" and "))
        };
        if last_group && !requested.is_empty() {
            user = format!("{user} . {}", request_phrase(&mut rng, &requested));
        } else {
            user.push_str(" please");
        }
        stated.extend(group.iter().cloned());

        let belief = render_belief(pool.domain, &stated);
        let parsed = parse_belief(&belief, ontology).expect("generated beliefs parse");
        let matches = db_query(&parsed, table);
        let count = matches.len();
        let db_tok = DB_BUCKET_TOKENS[db_bucket(count)].to_string();

        let (act, raw_response) = if last_group {
            let offered = matches.first().copied().unwrap_or(target);
            offered_name = offered["name"].clone();
            if requested.is_empty() {
                let templates = [
                    format!("i recommend {} .", offered["name"]),
                    format!("{} is a great choice .", offered["name"]),
                ];
                (
                    format!("{} [inform] name", pool.domain),
                    templates[rng.gen_range(0..templates.len())].clone(),
                )
            } else {
                let mut parts = Vec::new();
                for r in &requested {
                    parts.push(format!("the {r} is {}", offered[r]));
                }
                (
                    format!("{} [inform] name {}", pool.domain, requested.join(" ")),
                    format!("{} matches . {} .", offered["name"], parts.join(" and ")),
                )
            }
        } else {
            let next_slot = constraints[stated.len()].0.clone();
            let templates = [
                format!("there are several options . which {next_slot} do you prefer ?"),
                format!("i found a few choices . do you have a {next_slot} preference ?"),
            ];
            (
                format!("{} [request] {next_slot}", pool.domain),
                templates[rng.gen_range(0..templates.len())].clone(),
            )
        };

        turns.push(DialogTurn {
            user,
            belief,
            db: db_tok,
            act,
            response: delexicalize(&raw_response, ontology),
        });
    }

    // closing turn
    let byes = ["thank you goodbye", "thanks that is all goodbye", "no that is all thank you"];
    let bye_responses = ["you are welcome . goodbye .", "glad to help . goodbye ."];
    let belief = render_belief(pool.domain, &stated);
    let parsed = parse_belief(&belief, ontology).expect("generated beliefs parse");
    let count = db_query(&parsed, table).len();
    turns.push(DialogTurn {
        user: byes[rng.gen_range(0..byes.len())].to_string(),
        belief,
        db: DB_BUCKET_TOKENS[db_bucket(count)].to_string(),
        act: format!("{GENERAL_DOMAIN} [bye]"),
        response: bye_responses[rng.gen_range(0..bye_responses.len())].to_string(),
    });

    let _ = spec;
    DialogSession {
        id: format!("syn{idx:04}"),
        turns,
        labeled: true,
        goal: Goal {
            domain: pool.domain.to_string(),
            constraints,
            requested,
            target_name: offered_name,
        },
    }
}

fn render_belief(domain: &str, stated: &[(String, String)]) -> String {
    let mut parts = vec![domain.to_string()];
    for (s, v) in stated {
        parts.push(s.clone());
        parts.push(v.clone());
    }
    parts.join(" ")
}

/// Generates a deterministic synthetic corpus with exact latent ground truth.
pub fn generate_synthetic_corpus(
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<SyntheticCorpus, CorpusError> {
    let ontology = world_ontology(cfg)?;
    let database = world_database(cfg, &ontology, seed);
    database.validate(&ontology)?;
    let domains = pools(cfg.domains);
    let sessions = (0..cfg.sessions)
        .map(|i| generate_session(i, seed, &ontology, &database, &domains))
        .collect();
    Ok(SyntheticCorpus {
        ontology,
        database,
        sessions,
    })
}
