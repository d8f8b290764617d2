use covnet_core::bench::{
    aggregate, run_benchmark, write_metrics, Algorithm, BenchConfig, MetricRow, Trial, METRICS_HEADER,
};
use covnet_core::neural::{ModelConfig, ModelParams};

fn config(sizes: Vec<usize>, trials: usize, seed: u64) -> BenchConfig {
    BenchConfig {
        sizes,
        trials,
        seed,
        model: Some(ModelParams::init(ModelConfig::default(), 2).unwrap()),
        ..Default::default()
    }
}

fn csv(rows: &[MetricRow]) -> String {
    let mut buf = Vec::new();
    write_metrics(rows, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn parse(text: &str) -> Vec<MetricRow> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 8);
            MetricRow {
                algorithm: f[0].into(),
                n_robots: f[1].parse().unwrap(),
                trial: if f[2] == "mean" { Trial::Mean } else { Trial::Index(f[2].parse().unwrap()) },
                covered: f[3].parse().unwrap(),
                greedy_covered: f[4].parse().unwrap(),
                ratio: f[5].parse().unwrap(),
                runtime_us: f[6].parse().unwrap(),
                seed: f[7].parse().unwrap(),
            }
        })
        .collect()
}

#[test]
fn aggregates_recompute_exactly_from_the_table() {
    let text = csv(&run_benchmark(&config(vec![3, 5], 9, 4)).unwrap());
    let rows = parse(&text);
    for n in [3, 5] {
        let block: Vec<MetricRow> = rows.iter().filter(|r| r.n_robots == n).cloned().collect();
        let trials: Vec<MetricRow> = block.iter().filter(|r| r.trial != Trial::Mean).cloned().collect();
        let means: Vec<MetricRow> = block.iter().filter(|r| r.trial == Trial::Mean).cloned().collect();
        assert_eq!(trials.len(), 9 * 5);
        assert_eq!(aggregate(&trials, 4), means);
    }
    assert_eq!(csv(&rows), text);
}

fn without_runtime(text: &str) -> String {
    text.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(6);
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn tables_reproduce_apart_from_runtime() {
    let a = csv(&run_benchmark(&config(vec![4, 7], 6, 11)).unwrap());
    let b = csv(&run_benchmark(&config(vec![4, 7], 6, 11)).unwrap());
    assert_eq!(without_runtime(&a), without_runtime(&b));
    let c = csv(&run_benchmark(&config(vec![4, 7], 6, 12)).unwrap());
    assert_ne!(without_runtime(&a), without_runtime(&c));
}

#[test]
fn greedy_is_near_optimal_at_four_robots() {
    let cfg = BenchConfig {
        sizes: vec![4],
        trials: 200,
        algorithms: vec![Algorithm::Opt, Algorithm::Greedy],
        seed: 21,
        ..Default::default()
    };
    let rows = run_benchmark(&cfg).unwrap();
    let opt: Vec<f64> = rows.iter().filter(|r| r.algorithm == "opt" && r.trial != Trial::Mean).map(|r| r.covered).collect();
    let greedy: Vec<f64> =
        rows.iter().filter(|r| r.algorithm == "greedy" && r.trial != Trial::Mean).map(|r| r.covered).collect();
    let ratios: Vec<f64> = greedy.iter().zip(&opt).map(|(g, o)| if *o == 0.0 { 1.0 } else { g / o }).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean >= 0.9, "{mean}");
    assert!(ratios.iter().all(|&r| r >= 0.5));
}

#[test]
fn dgreedy_and_random_stay_below_the_optimum() {
    let mut cfg = config(vec![5], 30, 8);
    cfg.algorithms = vec![Algorithm::Opt, Algorithm::DecentralizedGreedy, Algorithm::Random, Algorithm::GnnCentral];
    let rows = run_benchmark(&cfg).unwrap();
    for trial in rows.chunks(4).take(30) {
        assert!(trial.iter().all(|r| r.covered <= trial[0].covered && r.seed == trial[0].seed));
    }
}
