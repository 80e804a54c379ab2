//! Scratch tuning harness (deleted once the acceptance settings freeze).

use std::time::Instant;

use dialvar::corpus::{build_vocab, generate_synthetic_corpus, split_by_label_proportion, GeneratorConfig};
use dialvar::evaluation::{evaluate_corpus, RolloutCaps};
use dialvar::model::{ModelConfig, ModelParameters, ModelRole};
use dialvar::training::{self_train, semi_supervised_train, supervised_train, StScheme, TrainConfig};
use dialvar::variational::EstimatorConfig;

#[test]
#[ignore]
fn tune_experiment() {
    let gen_cfg = GeneratorConfig {
        sessions: 300,
        domains: 1,
        values_per_slot: 3,
        entities_per_domain: 6,
    };
    let t_all = Instant::now();
    for seed in [0u64, 1, 2] {
        let t0 = Instant::now();
        let train_corpus = generate_synthetic_corpus(&gen_cfg, 1000 + seed).unwrap();
        let test_corpus = generate_synthetic_corpus(
            &GeneratorConfig {
                sessions: 60,
                ..gen_cfg.clone()
            },
            5000 + seed,
        )
        .unwrap();
        let vocab = build_vocab(&train_corpus.ontology, &train_corpus.sessions);
        let split = split_by_label_proportion(&train_corpus.sessions, 0.1, seed).unwrap();

        let mcfg = ModelConfig {
            vocab_size: vocab.len(),
            layers: 2,
            heads: 2,
            hidden_dim: 48,
            context_len: 256,
            seed,
        };
        let sup_cfg = TrainConfig {
            epochs_sup: 40,
            batch_size: 8,
            max_lr: 8e-3,
            seed,
            estimator: EstimatorConfig {
                max_latent_len: 24,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut p = ModelParameters::init(ModelRole::Generative, mcfg).unwrap();
        let mut q = ModelParameters::init(ModelRole::Inference, mcfg).unwrap();
        supervised_train(&mut p, &mut q, &split.labeled, &vocab, &sup_cfg, None).unwrap();
        let t_sup = t0.elapsed().as_secs_f64();

        // score over the unlabeled training split plus the held-out set:
        // ~1000 turns, which keeps per-method noise near one percent
        let mut eval_sessions = split.unlabeled.clone();
        eval_sessions.extend(test_corpus.sessions.iter().cloned());
        let eval = |model: &ModelParameters| {
            evaluate_corpus(
                model,
                &eval_sessions,
                &vocab,
                &train_corpus.ontology,
                &train_corpus.database,
                RolloutCaps::default(),
            )
            .unwrap()
        };
        let sup_report = eval(&p);

        // Semi-VL
        let t1 = Instant::now();
        let semi_cfg = TrainConfig {
            epochs_semi: 10,
            batch_size: 8,
            max_lr: 2e-3,
            seed,
            estimator: EstimatorConfig {
                max_latent_len: 24,
                ..Default::default()
            },
            ..Default::default()
        };
        let (mut pv, mut qv) = (p.clone(), q.clone());
        semi_supervised_train(&mut pv, &mut qv, &split, &vocab, &semi_cfg, None, None).unwrap();
        let vl_report = eval(&pv);
        let t_vl = t1.elapsed().as_secs_f64();

        // Semi-ST response+stt
        let t2 = Instant::now();
        let st_cfg = TrainConfig {
            st_scheme: Some(StScheme::ResponseStt),
            ..semi_cfg.clone()
        };
        let mut pst = p.clone();
        self_train(&mut pst, &split, &vocab, &st_cfg, None).unwrap();
        let st_report = eval(&pst);
        let t_st = t2.elapsed().as_secs_f64();

        // joint no-stt for criterion 9 ordering
        let mut pj = p.clone();
        self_train(
            &mut pj,
            &split,
            &vocab,
            &TrainConfig {
                st_scheme: Some(StScheme::Joint),
                ..semi_cfg.clone()
            },
            None,
        )
        .unwrap();
        let joint_report = eval(&pj);

        println!(
            "seed {seed}: lem sup {:.2} vl {:.2} st {:.2} | combined sup {:.2} vl {:.2} st {:.2} joint {:.2} | times sup {:.0}s vl {:.0}s st {:.0}s",
            sup_report.latent_exact_match,
            vl_report.latent_exact_match,
            st_report.latent_exact_match,
            sup_report.combined,
            vl_report.combined,
            st_report.combined,
            joint_report.combined,
            t_sup,
            t_vl,
            t_st,
        );
    }
    println!("total {:.0}s", t_all.elapsed().as_secs_f64());
}
