use draftmix::decode::DecodeMode;
use draftmix::experiment::*;
use draftmix::models::{average_models, train_ngram, DomainCorpus};

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.generator.sequences_per_domain = 300;
    c.generator.sequence_length = 64;
    c.prompts_per_domain = 10;
    c.eval_length = 16;
    c.seeds = vec![4];
    c.lambda_grid = vec![0.0, 0.5, 1.0];
    c
}

#[test]
fn domains_are_deterministic_per_seed() {
    let c = small_config();
    let (x, y, z) = (generate_domains(&c, 1).unwrap(), generate_domains(&c, 1).unwrap(), generate_domains(&c, 2).unwrap());
    assert_eq!(x.corpus_a, y.corpus_a);
    assert_eq!(x.corpus_b.to_text(), y.corpus_b.to_text());
    assert_eq!(x.prompts_a, y.prompts_a);
    assert_ne!(x.corpus_a, z.corpus_a);
    for corpus in [&x.corpus_a, &x.corpus_b] {
        assert_eq!(corpus.sequences.len(), 300);
        assert!(corpus.sequences.iter().flatten().all(|t| (*t as usize) < c.vocab_size));
    }
    assert!(x.prompts_b.iter().all(|p| p.len() == c.generator.prompt_length));
}

#[test]
fn each_corpus_is_likelier_under_its_own_source() {
    let c = small_config();
    for seed in 0..5 {
        let d = generate_domains(&c, seed).unwrap();
        let (a, b) = (&d.corpus_a.sequences, &d.corpus_b.sequences);
        assert!(d.source_a.cross_entropy(a) < d.source_b.cross_entropy(a), "seed {seed}");
        assert!(d.source_b.cross_entropy(b) < d.source_a.cross_entropy(b), "seed {seed}");
    }
}

#[test]
fn variants_follow_their_construction() {
    let c = small_config();
    let d = generate_domains(&c, 0).unwrap();
    let v = build_variants(&c, &d).unwrap();
    assert!(v.target.order() > v.drafter_a.order());
    let half = |corpus: &DomainCorpus| DomainCorpus {
        sequences: corpus.sequences[..150].to_vec(),
        ..corpus.clone()
    };
    let small = half(&d.corpus_a).concat(&half(&d.corpus_b), "s").unwrap();
    assert_eq!(v.mixed_small.table(), train_ngram(&small, 2, c.smoothing_alpha).unwrap().table());
    let union = d.corpus_a.concat(&d.corpus_b, "u").unwrap();
    assert_eq!(v.mixed_large.table(), train_ngram(&union, 2, c.smoothing_alpha).unwrap().table());
    assert_eq!(v.target.table(), train_ngram(&union, 3, c.smoothing_alpha).unwrap().table());
    assert_eq!(*v.averaged, average_models(&v.drafter_a, &v.drafter_b, 0.5).unwrap());
}

#[test]
fn minimal_run_is_complete_and_reproducible() {
    let c = small_config();
    let report = run_experiments(&c).unwrap();
    let again = run_experiments(&c).unwrap();
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
    assert_eq!(report_csv(&report), report_csv(&again));

    let s = &report.seeds[0];
    for name in StrategyName::ALL {
        for mode in [DecodeMode::Greedy, DecodeMode::Sampling] {
            for domain in [DOMAIN_A, DOMAIN_B] {
                let cell = s.cell(name, mode, domain).unwrap();
                assert_eq!(cell.prompts, 10);
                assert!(cell.depth_table.values().all(|r| (0.0..=1.0).contains(r)));
            }
        }
    }
    assert_eq!(s.sweep.len(), 3 * 2 * 2);
    for mode in [DecodeMode::Greedy, DecodeMode::Sampling] {
        for domain in [DOMAIN_A, DOMAIN_B] {
            assert_eq!(s.sweep_acceptance(1.0, mode, domain), s.cell(StrategyName::SingleA, mode, domain).map(|x| x.mean_acceptance));
            assert_eq!(s.sweep_acceptance(0.0, mode, domain), s.cell(StrategyName::SingleB, mode, domain).map(|x| x.mean_acceptance));
        }
    }
    assert_eq!(s.routing.len(), 4);
    for r in &s.routing {
        let total: usize = r.table.counts.values().flat_map(|row| row.values()).sum();
        assert_eq!(total, 20);
        assert_eq!(r.records.len(), 20);
    }
    let routing = routing_csv(&report);
    assert_eq!(routing.lines().count(), 1 + 4 * 20);
    assert!(routing.starts_with("seed,mode,domain,signal,chosen,score_1,score_2\n"));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small_config();
    c.seeds = vec![1, 1];
    assert!(c.validate().is_err());
    let mut c = small_config();
    c.lambda_grid.push(1.5);
    assert!(c.validate().is_err());
    let mut c = small_config();
    c.prompts_per_domain = 0;
    assert!(run_experiments(&c).is_err());
}

#[test]
fn config_round_trips_through_json_with_defaults() {
    let c: ExperimentConfig = serde_json::from_str(r#"{"seeds": [3, 5]}"#).unwrap();
    assert_eq!(c.seeds, vec![3, 5]);
    assert_eq!(c.vocab_size, 32);
    assert_eq!(c.lambda_grid.len(), 11);
    let text = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
}
