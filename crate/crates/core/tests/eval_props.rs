use conflict_decode_core::bench::{ConflictInstance, Label};
use conflict_decode_core::dist::TokenDistribution;
use conflict_decode_core::eval::{aggregate_records, spearman_topk, InstanceRecord};
use conflict_decode_core::source::{ScriptedScenario, ScriptedSource};
use conflict_decode_core::strategy::{decode_sequence, DecodeStrategy};
use proptest::prelude::*;

fn normalized(set: impl IntoIterator<Item = u32>) -> Vec<f64> {
    let w: Vec<f64> = set.into_iter().map(f64::from).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn distinct_probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(1_000u32..100_000, 3..30).prop_map(normalized)
}

fn distinct_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..30).prop_flat_map(|n| {
        let set = prop::collection::btree_set(1_000u32..100_000, n);
        let shuffled = set.clone().prop_map(|s| s.into_iter().collect::<Vec<_>>()).prop_shuffle();
        (set, shuffled).prop_map(|(a, b)| (normalized(a), normalized(b)))
    })
}

proptest! {
    #[test]
    fn self_correlation_is_one(p in distinct_probs(), k in 1usize..30) {
        let d = TokenDistribution::from_probs(&p).unwrap();
        let k = k.min(d.vocab_size());
        prop_assert_eq!(spearman_topk(&d, &d, k).unwrap(), 1.0);
    }

    #[test]
    fn reversing_negates(p in distinct_probs(), k in 2usize..30) {
        let base = TokenDistribution::from_probs(&p).unwrap();
        let k = k.min(base.vocab_size());
        let top = base.top_k(k).unwrap();
        // give the top-k ids reversed weights, everything else stays below
        let mut adj = vec![1e-6; p.len()];
        for (rank, (id, _)) in top.iter().enumerate() {
            adj[*id as usize] = (rank + 1) as f64;
        }
        let adj = TokenDistribution::from_weights(&adj).unwrap();
        prop_assert!((spearman_topk(&base, &adj, k).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_transform_invariance((p, q) in distinct_pair(), power in 0.5f64..3.0) {
        let base = TokenDistribution::from_probs(&p).unwrap();
        let adj = TokenDistribution::from_probs(&q).unwrap();
        let warped: Vec<f64> = adj.probs().iter().map(|x| x.powf(power)).collect();
        let warped = TokenDistribution::from_weights(&warped).unwrap();
        let k = p.len().min(20);
        let a = spearman_topk(&base, &adj, k).unwrap();
        let b = spearman_topk(&base, &warped, k).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }
}

#[test]
fn identical_pairs_floor_alpha_max_at_lambda() {
    let scenario = ScriptedScenario::from_json(
        r#"{"vocab":["<bos>","<eos>","a","b"],"steps":[
            {"p_ctx":[0.1,0.1,0.5,0.3],"p_noctx":[0.1,0.1,0.5,0.3]},
            {"p_ctx":[0.1,0.1,0.2,0.6],"p_noctx":[0.1,0.1,0.2,0.6]},
            {"p_ctx":[0.1,0.7,0.1,0.1],"p_noctx":[0.1,0.7,0.1,0.1]}]}"#,
    )
    .unwrap();
    let source = ScriptedSource::new(scenario).unwrap();
    let strategy = DecodeStrategy::adacad(0.3).unwrap().with_max_tokens(8).unwrap();
    let records: Vec<InstanceRecord> = (0..4)
        .map(|i| {
            let inst = ConflictInstance {
                id: format!("s{i}"),
                label: Label::Synth,
                context: vec![2],
                query: vec![3],
                gold: 2,
                parametric: 2,
            };
            let out = decode_sequence(&strategy, &source, &inst).unwrap();
            InstanceRecord::from_decoded(&inst, &out, 20).unwrap()
        })
        .collect();
    let summary = aggregate_records("adacad:lambda=0.3", &records).unwrap();
    let synth = summary.label(Label::Synth).unwrap();
    assert!((synth.mean_alpha_max - 0.3).abs() < 1e-15);
    assert_eq!(synth.mean_rho, 1.0);
    assert_eq!(summary.sensitivity, None);
}
