mod common;

use std::sync::Arc;

use common::*;
use draftmix::analysis::{acceptance_stats, depth_acceptance, empirical_target_distribution, tv_distance};
use draftmix::decode::{autoregressive_decode, speculative_decode, DecodeMode, LabeledDrafter, Strategy};
use draftmix::models::Categorical;
use draftmix::router::RoutingSignal;
use draftmix::tree::TreeParams;
use draftmix::verify::{accept_probability, residual_distribution};
use proptest::prelude::*;
use rand::rngs::mock::StepRng;
use rand::Rng;

fn strategies(a: LabeledDrafter, b: LabeledDrafter, tree: TreeParams, mode: DecodeMode) -> Vec<Strategy> {
    vec![
        Strategy::single(a.clone(), tree, mode),
        Strategy::averaged(&a, &b, 0.5, tree, mode).unwrap(),
        Strategy::routed(a.clone(), b.clone(), RoutingSignal::Confidence, tree, mode),
        Strategy::routed(a.clone(), b.clone(), RoutingSignal::Entropy, tree, mode),
        Strategy::merged(a, b, tree, mode),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_matches_autoregressive(
        seed in any::<u64>(),
        total_nodes in 1usize..20,
        max_depth in 1usize..6,
        branch_k in 1usize..4,
    ) {
        let mut rng = rng_for(seed, 0);
        let vocab = rng.gen_range(2..8);
        let target = random_model(vocab, rng.gen_range(1..4), 3.0, 0.2, &mut rng);
        let a = labeled("a", random_model(vocab, 2, 3.0, 0.3, &mut rng));
        let b = labeled("b", random_model(vocab, 2, 3.0, 0.3, &mut rng));
        let prompt = random_prompt(vocab, 4, &mut rng);
        let tree = TreeParams { total_nodes, max_depth, branch_k };
        let reference = autoregressive_decode(&target, &prompt, 40, DecodeMode::Greedy, &mut StepRng::new(0, 0)).unwrap();
        for s in strategies(a, b, tree, DecodeMode::Greedy) {
            let out = speculative_decode(&target, &s, &prompt, 40, &mut StepRng::new(0, 0)).unwrap();
            prop_assert_eq!(&out.output_tokens, &reference);
            for o in &out.outcomes {
                prop_assert!(o.accepted_length <= max_depth);
                prop_assert!(!o.records.is_empty());
            }
        }
    }
}

#[test]
fn self_drafting_chain_accepts_every_draft() {
    let mut rng = rng_for(7, 0);
    let model = random_model(5, 2, 3.0, 0.0, &mut rng);
    let me = LabeledDrafter::new("self", Arc::new(model.clone()));
    let chain = TreeParams { total_nodes: 5, max_depth: 5, branch_k: 1 };
    let prompt = random_prompt(5, 3, &mut rng);
    let out = speculative_decode(&model, &Strategy::single(me, chain, DecodeMode::Greedy), &prompt, 60, &mut rng).unwrap();
    assert!(out.outcomes.iter().all(|o| o.accepted_length == 5));
    assert_eq!(acceptance_stats(&[out.clone()]).unwrap(), 5.0);
    let depths = depth_acceptance(&[out]).unwrap();
    assert_eq!(depths.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert!(depths.values().all(|r| *r == 1.0));
}

/// Exact first-token law of one node whose children are fixed tokens tried
/// in order, under either acceptance rule.
fn first_token_law(q: &Categorical, p: &Categorical, children: &[u32], point_mass: bool) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    let mut remaining = 1.0;
    let mut cur = q.clone();
    for &c in children {
        let proposal = if point_mass { Categorical::one_hot(q.len(), c) } else { p.clone() };
        let alpha = accept_probability(cur.prob(c), proposal.prob(c)).unwrap();
        out[c as usize] += remaining * alpha;
        remaining *= 1.0 - alpha;
        cur = residual_distribution(&cur, &proposal);
    }
    for (o, r) in out.iter_mut().zip(cur.probs()) {
        *o += remaining * r;
    }
    out
}

#[test]
fn drafter_ratio_rule_is_biased_for_fixed_children() {
    let q = Categorical::new(vec![0.5, 0.5]).unwrap();
    let p = Categorical::new(vec![0.9, 0.1]).unwrap();
    let ratio = first_token_law(&q, &p, &[0], false);
    assert!((ratio[0] - 0.5 / 0.9).abs() < 1e-12);
    assert_eq!(first_token_law(&q, &p, &[0], true), vec![0.5, 0.5]);
}

#[test]
fn point_mass_rule_is_exact_for_any_children() {
    let mut rng = rng_for(11, 0);
    for _ in 0..2000 {
        let vocab = rng.gen_range(2..8);
        let w: Vec<f64> = (0..vocab).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen() }).collect();
        let Ok(q) = Categorical::from_weights(w) else { continue };
        let p = Categorical::uniform(vocab);
        let mut children: Vec<u32> = (0..vocab as u32).filter(|_| rng.gen_bool(0.6)).collect();
        children.sort_by_key(|_| rng.gen::<u32>());
        let law = first_token_law(&q, &p, &children, true);
        assert!(tv_distance(&law, q.probs()).unwrap() < 1e-12, "{law:?} vs {:?}", q.probs());
    }
}

#[test]
fn sampling_first_token_follows_the_target() {
    let mut rng = rng_for(3, 0);
    let target = random_model(4, 1, 1.5, 0.0, &mut rng);
    let a = labeled("a", random_model(4, 1, 1.5, 0.0, &mut rng));
    let b = labeled("b", random_model(4, 1, 1.5, 0.0, &mut rng));
    let prompt = vec![2];
    let q = target.next_distribution(&prompt).unwrap();
    let n = 40_000;
    let baseline = empirical_target_distribution(&target, &prompt, 1, n, 99).unwrap();
    let noise = tv_distance(&baseline, q.probs()).unwrap();
    for s in strategies(a, b, TreeParams::default(), DecodeMode::Sampling) {
        let mut counts = [0.0; 4];
        for i in 0..n as u64 {
            let out = speculative_decode(&target, &s, &prompt, 1, &mut rng_for(5, i)).unwrap();
            counts[out.output_tokens[0] as usize] += 1.0 / n as f64;
        }
        let tv = tv_distance(&counts, q.probs()).unwrap();
        assert!(tv <= 1.5 * noise + 0.01, "{:?}: tv {tv} vs noise {noise}", s.kind());
    }
}
