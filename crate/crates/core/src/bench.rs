//! Experiment harness: paired per-trial comparisons of every selector and the
//! generalization matrix of trained models across team sizes.
//!
//! Metric tables are comma-separated with the header
//! `algorithm,n_robots,trial,covered,greedy_covered,ratio,runtime_us,seed`.
//! After the per-trial rows of each team size comes one aggregate row per
//! algorithm with `trial = mean`: the arithmetic means, in row order, of the
//! per-trial `covered`, `greedy_covered`, `ratio` and `runtime_us` values.
//! Aggregate rows carry the master seed.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imitation::{coverage_ratio, evaluate_policy, fresh_instances, instance_seed, random_seed_for, Policy};
use crate::neural::ModelParams;
use crate::runtime::{run_scenario, RuntimeOptions};
use crate::selectors::{
    exhaustive_opt, greedy_central, greedy_decentralized, objective_fast, random_assign, DEFAULT_OPT_CAP,
};
use crate::world::{build_comm_graph, generate_scenario, Assignment, MotionPrimitive, Scenario, ScenarioParams};

pub const METRICS_HEADER: &str = "algorithm,n_robots,trial,covered,greedy_covered,ratio,runtime_us,seed";
pub const MATRIX_HEADER: &str = "train_size,test_size,trials,mean_ratio";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Opt,
    Greedy,
    #[serde(rename = "dgreedy")]
    DecentralizedGreedy,
    /// Message-passing inference; runtime is the slowest robot's compute.
    Gnn,
    /// Batched forward pass of the same network on one machine.
    #[serde(rename = "gnn-central")]
    GnnCentral,
    Random,
}

impl Algorithm {
    pub const DEFAULT: [Algorithm; 5] = [
        Algorithm::Opt,
        Algorithm::Greedy,
        Algorithm::DecentralizedGreedy,
        Algorithm::Gnn,
        Algorithm::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Opt => "opt",
            Algorithm::Greedy => "greedy",
            Algorithm::DecentralizedGreedy => "dgreedy",
            Algorithm::Gnn => "gnn",
            Algorithm::GnnCentral => "gnn-central",
            Algorithm::Random => "random",
        }
    }

    fn needs_model(self) -> bool {
        matches!(self, Algorithm::Gnn | Algorithm::GnnCentral)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Algorithm::Opt,
            Algorithm::Greedy,
            Algorithm::DecentralizedGreedy,
            Algorithm::Gnn,
            Algorithm::GnnCentral,
            Algorithm::Random,
        ]
        .into_iter()
        .find(|a| a.name() == s.trim())
        .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trial {
    Index(usize),
    Mean,
}

impl fmt::Display for Trial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trial::Index(t) => write!(f, "{t}"),
            Trial::Mean => f.write_str("mean"),
        }
    }
}

/// One line of a metrics table. Per-trial counts are whole numbers stored as
/// `f64` so aggregate rows share the type.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub algorithm: String,
    pub n_robots: usize,
    pub trial: Trial,
    pub covered: f64,
    pub greedy_covered: f64,
    pub ratio: f64,
    pub runtime_us: f64,
    pub seed: u64,
}

impl fmt::Display for MetricRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.algorithm,
            self.n_robots,
            self.trial,
            self.covered,
            self.greedy_covered,
            self.ratio,
            self.runtime_us,
            self.seed
        )
    }
}

pub fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

pub fn write_metrics(rows: &[MetricRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

/// Mean rows, one per algorithm in first-appearance order, computed from
/// the per-trial rows given.
pub fn aggregate(rows: &[MetricRow], seed: u64) -> Vec<MetricRow> {
    let mut names: Vec<(&str, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.trial != Trial::Mean) {
        if !names.contains(&(r.algorithm.as_str(), r.n_robots)) {
            names.push((r.algorithm.as_str(), r.n_robots));
        }
    }
    names
        .into_iter()
        .map(|(alg, n)| {
            let mine: Vec<&MetricRow> = rows
                .iter()
                .filter(|r| r.trial != Trial::Mean && r.algorithm == alg && r.n_robots == n)
                .collect();
            let mean = |f: fn(&MetricRow) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / mine.len() as f64;
            MetricRow {
                algorithm: alg.to_string(),
                n_robots: n,
                trial: Trial::Mean,
                covered: mean(|r| r.covered),
                greedy_covered: mean(|r| r.greedy_covered),
                ratio: mean(|r| r.ratio),
                runtime_us: mean(|r| r.runtime_us),
                seed,
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub opt_cap: u64,
    pub params: ScenarioParams,
    pub model: Option<ModelParams<f32>>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![4, 6, 8, 10],
            trials: 100,
            algorithms: Algorithm::DEFAULT.to_vec(),
            seed: 0,
            opt_cap: DEFAULT_OPT_CAP,
            params: ScenarioParams::default(),
            model: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.trials == 0 || self.algorithms.is_empty() {
            return Err(Error::Config("need at least one size, one trial and one algorithm".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::NoRobots);
        }
        self.params.validate()?;
        if self.algorithms.iter().any(|a| a.needs_model()) {
            match &self.model {
                None => return Err(Error::Config("gnn requested but no model given".into())),
                Some(m) => crate::imitation::eval::check_model(m)?,
            }
        }
        if self.algorithms.contains(&Algorithm::Opt) {
            for &n in &self.sizes {
                let fits = (MotionPrimitive::COUNT as u64).checked_pow(n as u32).is_some_and(|t| t <= self.opt_cap);
                if !fits {
                    return Err(Error::InstanceTooLarge { n_robots: n, cap: self.opt_cap });
                }
            }
        }
        Ok(())
    }
}

/// Seed of trial `trial` at team size `n`.
pub fn trial_seed(master: u64, n: usize, trial: usize) -> u64 {
    instance_seed(instance_seed(master, n as u64), trial as u64)
}

struct Outcome {
    assignment: Assignment,
    runtime: Duration,
}

fn run_one(alg: Algorithm, s: &Scenario, cfg: &BenchConfig) -> Result<Outcome> {
    let g = build_comm_graph(s);
    Ok(match alg {
        Algorithm::Opt => {
            let r = exhaustive_opt(s, cfg.opt_cap)?;
            Outcome { assignment: r.assignment, runtime: r.elapsed }
        }
        Algorithm::Greedy => {
            let r = greedy_central(s);
            Outcome { assignment: r.assignment, runtime: r.elapsed }
        }
        Algorithm::DecentralizedGreedy => {
            let r = greedy_decentralized(s, &g);
            Outcome { assignment: r.assignment, runtime: r.elapsed }
        }
        Algorithm::Gnn => {
            let model = cfg.model.as_ref().expect("validated");
            let out = run_scenario(s, &g, model, RuntimeOptions::default())?;
            let runtime = out.max_node_compute();
            let a = out.actions.iter().map(|&k| MotionPrimitive::ALL[k]).collect();
            Outcome { assignment: Assignment(a), runtime }
        }
        Algorithm::GnnCentral => {
            let model = cfg.model.as_ref().expect("validated");
            let (assignment, runtime) = crate::imitation::policy_assignment(Policy::Model(model), s)?;
            Outcome { assignment, runtime }
        }
        Algorithm::Random => {
            let r = random_assign(s, random_seed_for(s.seed));
            Outcome { assignment: r.assignment, runtime: r.elapsed }
        }
    })
}

fn run_trial(n: usize, trial: usize, cfg: &BenchConfig) -> Result<Vec<MetricRow>> {
    let seed = trial_seed(cfg.seed, n, trial);
    let s = generate_scenario(n, cfg.params, seed)?;
    let greedy = greedy_central(&s).value;
    cfg.algorithms
        .iter()
        .map(|&alg| {
            let o = run_one(alg, &s, cfg)?;
            let covered = objective_fast(&s, &o.assignment);
            Ok(MetricRow {
                algorithm: alg.name().to_string(),
                n_robots: n,
                trial: Trial::Index(trial),
                covered: covered as f64,
                greedy_covered: greedy as f64,
                ratio: coverage_ratio(covered, greedy),
                runtime_us: micros(o.runtime),
                seed,
            })
        })
        .collect()
}

/// Every requested algorithm on the same scenario per trial; per-trial rows
/// then an aggregate block for each team size.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let per_trial: Vec<Vec<MetricRow>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(n, t, cfg))
            .collect::<Result<_>>()?;
        let block: Vec<MetricRow> = per_trial.into_iter().flatten().collect();
        let means = aggregate(&block, cfg.seed);
        rows.extend(block);
        rows.extend(means);
    }
    Ok(rows)
}

/// Which policy fills a generalization-matrix row.
#[derive(Clone, Debug)]
pub enum MatrixModel {
    Trained { train_size: usize, model: ModelParams<f32> },
    Expert,
}

impl MatrixModel {
    fn label(&self) -> String {
        match self {
            MatrixModel::Trained { train_size, .. } => train_size.to_string(),
            MatrixModel::Expert => "expert".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixEntry {
    pub train: String,
    pub test_size: usize,
    pub trials: usize,
    pub mean_ratio: f64,
}

impl fmt::Display for MatrixEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.train, self.test_size, self.trials, self.mean_ratio)
    }
}

pub fn write_matrix(entries: &[MatrixEntry], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{MATRIX_HEADER}")?;
    for e in entries {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

/// Mean GNN-to-greedy ratio of every model at every test size. All models
/// see the same `trials` scenarios at a given test size.
pub fn generalization_matrix(
    models: &[MatrixModel],
    test_sizes: &[usize],
    trials: usize,
    params: ScenarioParams,
    seed: u64,
) -> Result<Vec<MatrixEntry>> {
    if models.is_empty() || test_sizes.is_empty() || trials == 0 {
        return Err(Error::Config("need at least one model, one test size and one trial".into()));
    }
    let mut out = Vec::new();
    for m in models {
        for &e in test_sizes {
            let scenarios = fresh_instances(e, trials, params, instance_seed(seed, e as u64))?;
            let policy = match m {
                MatrixModel::Trained { model, .. } => Policy::Model(model),
                MatrixModel::Expert => Policy::Expert,
            };
            let summary = evaluate_policy(policy, &scenarios)?;
            out.push(MatrixEntry {
                train: m.label(),
                test_size: e,
                trials,
                mean_ratio: summary.mean_ratio,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ModelConfig;

    fn quick(algs: &[Algorithm]) -> BenchConfig {
        BenchConfig {
            sizes: vec![3, 4],
            trials: 6,
            algorithms: algs.to_vec(),
            seed: 5,
            model: Some(ModelParams::init(ModelConfig::default(), 1).unwrap()),
            ..Default::default()
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::DEFAULT.into_iter().chain([Algorithm::GnnCentral]) {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("astar".parse::<Algorithm>().is_err());
    }

    #[test]
    fn rows_layout_and_pairing() {
        let rows = run_benchmark(&quick(&Algorithm::DEFAULT)).unwrap();
        assert_eq!(rows.len(), 2 * (6 * 5 + 5));
        for block in rows.chunks(35) {
            for trial in block[..30].chunks(5) {
                assert!(trial.iter().all(|r| r.seed == trial[0].seed && r.greedy_covered == trial[0].greedy_covered));
                let opt = trial[0].covered;
                assert!(trial.iter().all(|r| r.covered <= opt));
                assert_eq!(trial[1].ratio, 1.0);
            }
            assert!(block[30..].iter().all(|r| r.trial == Trial::Mean && r.seed == 5));
        }
    }

    #[test]
    fn opt_over_cap_is_refused() {
        let mut cfg = quick(&[Algorithm::Opt]);
        cfg.opt_cap = 100;
        assert!(matches!(run_benchmark(&cfg), Err(Error::InstanceTooLarge { n_robots: 3, cap: 100 })));
    }

    #[test]
    fn gnn_needs_model() {
        let mut cfg = quick(&[Algorithm::Gnn]);
        cfg.model = None;
        assert!(run_benchmark(&cfg).is_err());
    }

    #[test]
    fn aggregate_means() {
        let row = |c: f64| MetricRow {
            algorithm: "greedy".into(),
            n_robots: 2,
            trial: Trial::Index(0),
            covered: c,
            greedy_covered: 4.0,
            ratio: c / 4.0,
            runtime_us: 1.5,
            seed: 1,
        };
        let m = aggregate(&[row(1.0), row(2.0)], 9);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].covered, m[0].ratio, m[0].seed), (1.5, 0.375, 9));
        assert_eq!(m[0].to_string(), "greedy,2,mean,1.5,4,0.375,1.5,9");
    }

    #[test]
    fn expert_matrix_row_is_one() {
        let m = generalization_matrix(&[MatrixModel::Expert], &[4, 7], 5, ScenarioParams::default(), 1).unwrap();
        assert!(m.iter().all(|e| e.mean_ratio == 1.0 && e.train == "expert"));
    }
}
