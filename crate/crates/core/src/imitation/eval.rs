use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::dataset::instance_seed;
use crate::error::{Error, Result};
use crate::features::{encode_all, FEATURE_WIDTH};
use crate::neural::ModelParams;
use crate::selectors::{greedy_central, objective_fast, random_assign};
use crate::world::{build_comm_graph, generate_scenario, Assignment, MotionPrimitive, Scenario, ScenarioParams};

/// Who picks the actions under evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Policy<'a> {
    Model(&'a ModelParams<f32>),
    /// The greedy expert itself; every ratio is exactly 1.
    Expert,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceEval {
    pub trial: usize,
    pub seed: u64,
    pub n_robots: usize,
    pub assignment: Assignment,
    pub covered: usize,
    pub greedy_covered: usize,
    pub ratio: f64,
    pub random_covered: usize,
    pub random_ratio: f64,
    pub random_seed: u64,
    pub random_runtime: Duration,
    /// Forward pass and argmax only; encoding is excluded.
    pub runtime: Duration,
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub instances: Vec<InstanceEval>,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub mean_random_ratio: f64,
    pub std_random_ratio: f64,
    pub mean_runtime: Duration,
}

/// `covered / greedy`, with `0 / 0 = 1`.
pub fn coverage_ratio(covered: usize, greedy: usize) -> f64 {
    if greedy == 0 {
        if covered == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        covered as f64 / greedy as f64
    }
}

/// Seed of the random-assignment baseline paired with a scenario seed.
pub fn random_seed_for(scenario_seed: u64) -> u64 {
    instance_seed(scenario_seed, 1)
}

/// `trials` fresh scenarios; trial `t` uses `instance_seed(seed, t)`.
pub fn fresh_instances(n_robots: usize, trials: usize, params: ScenarioParams, seed: u64) -> Result<Vec<Scenario>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| generate_scenario(n_robots, params, instance_seed(seed, t)))
        .collect()
}

pub fn check_model(model: &ModelParams<f32>) -> Result<()> {
    model.config.validate()?;
    if model.config.input_width != FEATURE_WIDTH || model.config.actions != MotionPrimitive::COUNT {
        return Err(Error::Shape {
            op: "evaluate",
            detail: format!(
                "model maps {} features to {} actions, scenarios need {FEATURE_WIDTH} to {}",
                model.config.input_width,
                model.config.actions,
                MotionPrimitive::COUNT
            ),
        });
    }
    Ok(())
}

/// Assignment chosen by a policy, with the time spent choosing it.
pub fn policy_assignment(policy: Policy, s: &Scenario) -> Result<(Assignment, Duration)> {
    match policy {
        Policy::Expert => {
            let r = greedy_central(s);
            Ok((r.assignment, r.elapsed))
        }
        Policy::Model(p) => {
            let g = build_comm_graph(s);
            let x = encode_all(s)?.mapv(|v| v as f32);
            let start = Instant::now();
            let actions = p.select(&g, &x)?;
            let elapsed = start.elapsed();
            let a = actions.into_iter().map(|k| MotionPrimitive::from_index(k).expect("head width checked")).collect();
            Ok((Assignment(a), elapsed))
        }
    }
}

pub fn evaluate_instance(policy: Policy, trial: usize, s: &Scenario) -> Result<InstanceEval> {
    let (assignment, runtime) = policy_assignment(policy, s)?;
    let covered = objective_fast(s, &assignment);
    let greedy_covered = greedy_central(s).value;
    let random_seed = random_seed_for(s.seed);
    let random = random_assign(s, random_seed);
    let random_covered = random.value;
    Ok(InstanceEval {
        trial,
        seed: s.seed,
        n_robots: s.n_robots(),
        assignment,
        covered,
        greedy_covered,
        ratio: coverage_ratio(covered, greedy_covered),
        random_covered,
        random_ratio: coverage_ratio(random_covered, greedy_covered),
        random_seed,
        random_runtime: random.elapsed,
        runtime,
    })
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn evaluate_policy(policy: Policy, scenarios: &[Scenario]) -> Result<EvalSummary> {
    if let Policy::Model(p) = policy {
        check_model(p)?;
    }
    let instances: Vec<InstanceEval> = scenarios
        .par_iter()
        .enumerate()
        .map(|(t, s)| evaluate_instance(policy, t, s))
        .collect::<Result<_>>()?;
    let (mean_ratio, std_ratio) = mean_std(instances.iter().map(|e| e.ratio));
    let (mean_random_ratio, std_random_ratio) = mean_std(instances.iter().map(|e| e.random_ratio));
    let mean_runtime = if instances.is_empty() {
        Duration::ZERO
    } else {
        instances.iter().map(|e| e.runtime).sum::<Duration>() / instances.len() as u32
    };
    Ok(EvalSummary {
        instances,
        mean_ratio,
        std_ratio,
        mean_random_ratio,
        std_random_ratio,
        mean_runtime,
    })
}

/// Evaluates a model on `trials` fresh scenarios with `n_robots` robots.
pub fn evaluate_model(
    model: &ModelParams<f32>,
    n_robots: usize,
    trials: usize,
    params: ScenarioParams,
    seed: u64,
) -> Result<EvalSummary> {
    check_model(model)?;
    evaluate_policy(Policy::Model(model), &fresh_instances(n_robots, trials, params, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ModelConfig;

    #[test]
    fn ratio_conventions() {
        assert_eq!(coverage_ratio(0, 0), 1.0);
        assert_eq!(coverage_ratio(3, 4), 0.75);
    }

    #[test]
    fn expert_scores_exactly_one() {
        let sc = fresh_instances(8, 20, ScenarioParams::default(), 11).unwrap();
        let sum = evaluate_policy(Policy::Expert, &sc).unwrap();
        assert!(sum.instances.iter().all(|e| e.ratio == 1.0));
        assert_eq!(sum.mean_ratio, 1.0);
        assert_eq!(sum.std_ratio, 0.0);
    }

    #[test]
    fn rejects_mismatched_model() {
        let cfg = ModelConfig { input_width: 12, ..Default::default() };
        let p = ModelParams::<f32>::init(cfg, 1).unwrap();
        assert!(evaluate_model(&p, 5, 2, ScenarioParams::default(), 0).is_err());
    }

    #[test]
    fn instances_follow_trial_seeds() {
        let a = fresh_instances(5, 3, ScenarioParams::default(), 2).unwrap();
        assert_eq!(a[2].seed, instance_seed(2, 2));
        assert_eq!(a, fresh_instances(5, 3, ScenarioParams::default(), 2).unwrap());
    }
}
