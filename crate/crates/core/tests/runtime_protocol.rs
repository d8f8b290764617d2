use covnet_core::error::Error;
use covnet_core::features::encode_all;
use covnet_core::neural::{argmax_rows, ModelConfig, ModelParams};
use covnet_core::runtime::{
    run_decentralized_inference, run_protocol, MessageStats, Protocol, RuntimeOptions, Scheduler,
};
use covnet_core::selectors::objective_fast;
use covnet_core::world::{build_comm_graph, generate_scenario, CommGraph, ScenarioParams};
use ndarray::Array2;
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = CommGraph> {
    (1usize..16).prop_flat_map(|n| {
        prop::collection::vec(prop::option::weighted(0.3, 0.1f64..2.0), n * n).prop_map(move |cells| {
            let mut s = Array2::zeros((n, n));
            for i in 0..n {
                for j in (i + 1)..n {
                    if let Some(w) = cells[i * n + j] {
                        s[[i, j]] = w;
                        s[[j, i]] = w;
                    }
                }
            }
            CommGraph::from_adjacency(&s)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn protocol_equals_batched_forward(g in graph_strategy(), seed in any::<u64>(), taps in 0usize..=3) {
        let n = g.n();
        let cfg = ModelConfig { taps, ..Default::default() };
        let p = ModelParams::<f64>::init(cfg, seed).unwrap();
        let mut k = seed;
        let x = Array2::from_shape_simple_fn((n, 60), || {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (k >> 11) as f64 / (1u64 << 53) as f64 * 40.0 - 20.0
        });
        let central = p.forward(&g, &x).unwrap();
        let out = run_protocol(&g, &p, &x, RuntimeOptions { trace: true, scheduler: Scheduler::Sequential }).unwrap();
        let d = out.logits.iter().zip(&central).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(d <= 1e-9, "{d}");
        prop_assert_eq!(out.actions, argmax_rows(&central));
        let edges = g.directed_edges() as u64;
        prop_assert_eq!(out.stats.rounds, 2 * taps);
        prop_assert_eq!(out.stats.messages, edges * 2 * taps as u64);
        prop_assert_eq!(out.stats, MessageStats::expected_for(&g, &p));
        prop_assert_eq!(out.trace.len() as u64, out.stats.messages);
        prop_assert!(out.trace.iter().all(|t| g.is_edge(t.receiver, t.sender)));
    }

    #[test]
    fn first_round_sees_only_neighbors(g in graph_strategy(), seed in any::<u64>()) {
        let n = g.n();
        let p = ModelParams::<f64>::init(ModelConfig::default(), seed).unwrap();
        let x = Array2::from_shape_fn((n, 60), |(i, c)| ((i * 61 + c) % 17) as f64 - 8.0);
        let round_one = |x: &Array2<f64>| {
            let mut proto = Protocol::new(&g, &p, x, RuntimeOptions::default()).unwrap();
            proto.encode().unwrap();
            proto.begin_layer().unwrap();
            proto.exchange().unwrap();
            proto.nodes.iter().map(|node| node.shifted_terms().to_vec()).collect::<Vec<_>>()
        };
        let base = round_one(&x);
        for i in 0..n {
            let mut y = x.clone();
            for j in (0..n).filter(|&j| j != i && !g.is_edge(i, j)) {
                y.row_mut(j).fill(123.0);
            }
            prop_assert_eq!(&round_one(&y)[i], &base[i]);
        }
    }
}

#[test]
fn scenario_inference_matches_centralized() {
    for (k, n) in [1usize, 5, 20, 50].into_iter().enumerate() {
        let s = generate_scenario(n, ScenarioParams::default(), 100 + k as u64).unwrap();
        let g = build_comm_graph(&s);
        let p = ModelParams::<f64>::init(ModelConfig::default(), k as u64).unwrap();
        let (a, stats) = run_decentralized_inference(&s, &g, &p).unwrap();
        let central = argmax_rows(&p.forward(&g, &encode_all(&s).unwrap()).unwrap());
        assert_eq!(a.indices().iter().map(|&v| v as usize).collect::<Vec<_>>(), central);
        assert_eq!(stats.messages, 2 * g.directed_edges() as u64);
        assert!(objective_fast(&s, &a) <= s.n_targets());
    }
}

#[test]
fn parallel_scheduler_is_identical() {
    let s = generate_scenario(40, ScenarioParams::default(), 9).unwrap();
    let g = build_comm_graph(&s);
    let p = ModelParams::<f32>::init(ModelConfig::default(), 9).unwrap();
    let x = encode_all(&s).unwrap().mapv(|v| v as f32);
    let a = run_protocol(&g, &p, &x, RuntimeOptions::default()).unwrap();
    let b = run_protocol(&g, &p, &x, RuntimeOptions { scheduler: Scheduler::Parallel, trace: false }).unwrap();
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.stats, b.stats);
}

#[test]
fn rejects_mismatched_inputs() {
    let g = CommGraph::empty(3);
    let p = ModelParams::<f64>::init(ModelConfig::default(), 0).unwrap();
    assert!(matches!(run_protocol(&g, &p, &Array2::zeros((2, 60)), RuntimeOptions::default()), Err(Error::Shape { .. })));
    assert!(matches!(run_protocol(&g, &p, &Array2::zeros((3, 59)), RuntimeOptions::default()), Err(Error::Shape { .. })));
    let mut x = Array2::zeros((3, 60));
    x[[1, 4]] = f64::NAN;
    assert!(matches!(run_protocol(&g, &p, &x, RuntimeOptions::default()), Err(Error::NonFinite { .. })));
}
