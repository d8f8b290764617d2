//! Property suites behind `covnet verify`: greedy against the exhaustive
//! optimum, monotone submodularity of the coverage objective, analytic
//! gradients against finite differences, structural properties of the
//! network and parity of the message-passing runtime.

use std::collections::VecDeque;
use std::fmt;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::encode_all;
use crate::imitation::instance_seed;
use crate::neural::{argmax_rows, grad_check, ModelConfig, ModelParams};
use crate::runtime::{run_scenario, MessageStats, RuntimeOptions};
use crate::selectors::{exhaustive_opt, greedy_central, DEFAULT_OPT_CAP};
use crate::world::{
    build_comm_graph, generate_scenario, marginal_gain, objective_partial, CommGraph, MotionPrimitive,
    PartialAssignment, Scenario, ScenarioParams,
};

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub checks: u64,
    pub failures: u64,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} checks, {} failures, {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checks,
            self.failures,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn scenario(n: usize, master: u64, k: u64) -> Result<Scenario> {
    generate_scenario(n, ScenarioParams::default(), instance_seed(master, k))
}

/// Greedy covers at least half the optimum on every instance and at least
/// `min_mean` of it on average.
pub fn greedy_bound(instances: usize, min_mean: f64, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let (mut failures, mut sum, mut worst) = (0, 0.0, f64::INFINITY);
    for k in 0..instances {
        let s = scenario(2 + k % 3, seed, k as u64)?;
        let greedy = greedy_central(&s).value;
        let opt = exhaustive_opt(&s, DEFAULT_OPT_CAP)?.value;
        let ratio = if opt == 0 { 1.0 } else { greedy as f64 / opt as f64 };
        if 2 * greedy < opt {
            failures += 1;
        }
        sum += ratio;
        worst = worst.min(ratio);
    }
    let mean = sum / instances.max(1) as f64;
    Ok(SuiteReport {
        name: "greedy-bound",
        passed: failures == 0 && mean >= min_mean,
        checks: instances as u64,
        failures,
        detail: format!("mean greedy/opt {mean:.4} (need >= {min_mean}), worst {worst:.4}"),
        elapsed: start.elapsed(),
    })
}

struct Tally {
    checks: u64,
    failures: u64,
    first: Option<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
            self.first.get_or_insert_with(what);
        }
    }
}

/// Checks `f(A) <= f(B)` and `Δ(e | A) >= Δ(e | B)` for `A ⊆ B` and every
/// admissible `e` outside `B`.
fn check_pair(s: &Scenario, a: &PartialAssignment, b: &PartialAssignment, t: &mut Tally) -> Result<()> {
    let (fa, fb) = (objective_partial(s, a)?, objective_partial(s, b)?);
    t.check(fa <= fb, || format!("monotonicity: f(A)={fa} > f(B)={fb}"));
    for r in 0..s.n_robots() {
        if b.0[r].is_some() {
            continue;
        }
        for m in MotionPrimitive::ALL {
            let (ga, gb) = (marginal_gain(s, a, r, m)?, marginal_gain(s, b, r, m)?);
            t.check(ga >= gb, || format!("diminishing returns: robot {r} {m:?}: {ga} < {gb}"));
        }
    }
    Ok(())
}

/// Every `A ⊆ B` pair for small teams, random chains for larger ones.
pub fn submodularity(exhaustive: usize, randomized: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut t = Tally { checks: 0, failures: 0, first: None };
    // Per robot: unassigned in both, assigned only in B, or equal in both.
    for k in 0..exhaustive {
        let n = 1 + k % 3;
        let s = scenario(n, seed, k as u64)?;
        let states = 1 + 2 * MotionPrimitive::COUNT;
        for code in 0..states.pow(n as u32) {
            let (mut a, mut b) = (PartialAssignment::empty(n), PartialAssignment::empty(n));
            let mut c = code;
            for r in 0..n {
                let st = c % states;
                c /= states;
                if st >= 1 {
                    let m = MotionPrimitive::ALL[(st - 1) % MotionPrimitive::COUNT];
                    b = b.with(r, m);
                    if st > MotionPrimitive::COUNT {
                        a = a.with(r, m);
                    }
                }
            }
            check_pair(&s, &a, &b, &mut t)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for k in 0..randomized {
        let n = rng.gen_range(1..=10);
        let s = scenario(n, seed.wrapping_add(1), k as u64)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let in_b = rng.gen_range(0..=n);
        let in_a = rng.gen_range(0..=in_b);
        let (mut a, mut b) = (PartialAssignment::empty(n), PartialAssignment::empty(n));
        for (pos, &r) in order[..in_b].iter().enumerate() {
            let m = MotionPrimitive::ALL[rng.gen_range(0..MotionPrimitive::COUNT)];
            b = b.with(r, m);
            if pos < in_a {
                a = a.with(r, m);
            }
        }
        check_pair(&s, &a, &b, &mut t)?;
    }
    Ok(SuiteReport {
        name: "submodularity",
        passed: t.failures == 0,
        checks: t.checks,
        failures: t.failures,
        detail: t.first.unwrap_or_else(|| "no violations".into()),
        elapsed: start.elapsed(),
    })
}

/// Central-difference step used by [`gradients`].
pub const GRAD_STEP: f64 = 1e-3;

/// Double-precision gradient check on random models and instances.
pub fn gradients(pairs: usize, tolerance: f64, seed: u64) -> Result<SuiteReport> {
    gradients_with_step(pairs, GRAD_STEP, tolerance, seed)
}

pub fn gradients_with_step(pairs: usize, step: f64, tolerance: f64, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let (mut worst, mut failures, mut checked, mut skipped) = (0.0f64, 0, 0, 0);
    let mut where_worst = String::new();
    for k in 0..pairs {
        let s = scenario(4 + k % 9, seed, k as u64)?;
        let g = build_comm_graph(&s);
        let x = encode_all(&s)?;
        let labels = greedy_central(&s).assignment.indices().iter().map(|&l| l as usize).collect::<Vec<_>>();
        let p = ModelParams::<f64>::init(ModelConfig::default(), instance_seed(seed, 1000 + k as u64))?;
        let r = grad_check(&p, &g, &x, &labels, step, 24, seed.wrapping_add(k as u64))?;
        checked += r.checked;
        skipped += r.skipped;
        if r.max_rel_error >= tolerance {
            failures += 1;
        }
        if r.max_rel_error > worst {
            worst = r.max_rel_error;
            where_worst = format!("pair {k} {}", r.worst);
        }
    }
    Ok(SuiteReport {
        name: "gradient-check",
        passed: failures == 0 && checked > 0,
        checks: checked as u64,
        failures,
        detail: format!("max relative error {worst:.3e} at {where_worst} (need < {tolerance:e}), {skipped} kinked probes skipped"),
        elapsed: start.elapsed(),
    })
}

/// Hop distance from `src` to every node; `usize::MAX` when unreachable.
pub fn hop_distances(g: &CommGraph, src: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.n()];
    let mut queue = VecDeque::from([src]);
    dist[src] = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &g.neighbors[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relabelling robots permutes the logits the same way, and a robot's logits
/// ignore everything beyond its receptive field.
pub fn structure(instances: usize, tolerance: f64, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut t = Tally { checks: 0, failures: 0, first: None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..instances {
        let n = rng.gen_range(2..=40);
        let s = scenario(n, seed, k as u64)?;
        let g = build_comm_graph(&s);
        let x = encode_all(&s)?;
        let p = ModelParams::<f64>::init(ModelConfig::default(), instance_seed(seed, 7000 + k as u64))?;
        let logits = p.forward(&g, &x)?;

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut px = Array2::zeros(x.raw_dim());
        let mut expected = Array2::zeros(logits.raw_dim());
        for i in 0..n {
            px.row_mut(perm[i]).assign(&x.row(i));
            expected.row_mut(perm[i]).assign(&logits.row(i));
        }
        let got = p.forward(&g.permuted(&perm), &px)?;
        let d = max_abs_diff(&got, &expected);
        t.check(d <= tolerance, || format!("equivariance: instance {k} differs by {d:e}"));

        let reach = p.config.receptive_field();
        for i in 0..n {
            let dist = hop_distances(&g, i);
            let mut y = x.clone();
            let mut touched = false;
            for j in 0..n {
                if dist[j] > reach {
                    touched = true;
                    y.row_mut(j).mapv_inplace(|_| rng.gen_range(-20.0..20.0));
                }
            }
            if !touched {
                continue;
            }
            let out = p.forward(&g, &y)?;
            let d = out.row(i).iter().zip(logits.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            t.check(d <= tolerance, || format!("locality: instance {k} robot {i} moved by {d:e}"));
        }
    }
    Ok(SuiteReport {
        name: "equivariance-locality",
        passed: t.failures == 0,
        checks: t.checks,
        failures: t.failures,
        detail: t.first.unwrap_or_else(|| format!("all within {tolerance:e}")),
        elapsed: start.elapsed(),
    })
}

/// Message-passing inference against the batched forward pass.
pub fn parity(instances: usize, max_robots: usize, tolerance: f64, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut t = Tally { checks: 0, failures: 0, first: None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = rng.gen_range(1..=max_robots);
        let s = scenario(n, seed, k as u64)?;
        let g = build_comm_graph(&s);
        let p = ModelParams::<f64>::init(ModelConfig::default(), instance_seed(seed, 9000 + k as u64))?;
        let central = p.forward(&g, &encode_all(&s)?)?;
        let out = run_scenario(&s, &g, &p, RuntimeOptions::default())?;
        let d = max_abs_diff(&out.logits, &central);
        worst = worst.max(d);
        t.check(d <= tolerance, || format!("instance {k}: logits differ by {d:e}"));
        t.check(out.actions == argmax_rows(&central), || format!("instance {k}: actions differ"));
        let want = MessageStats::expected_for(&g, &p);
        t.check(out.stats == want, || format!("instance {k}: stats {:?}, formula {want:?}", out.stats));
    }
    Ok(SuiteReport {
        name: "runtime-parity",
        passed: t.failures == 0,
        checks: t.checks,
        failures: t.failures,
        detail: t.first.unwrap_or_else(|| format!("max logit difference {worst:.3e}")),
        elapsed: start.elapsed(),
    })
}

/// The suites `covnet verify` runs, at their acceptance sizes.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        greedy_bound(500, 0.9, seed)?,
        submodularity(100, 2000, seed)?,
        gradients(10, 1e-4, seed)?,
        structure(50, 1e-9, seed)?,
        parity(100, 50, 1e-6, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_distances_on_a_path() {
        let g = CommGraph::from_neighbors(vec![vec![1], vec![0, 2], vec![1], vec![]]);
        assert_eq!(hop_distances(&g, 0), vec![0, 1, 2, usize::MAX]);
    }

    #[test]
    fn small_suites_pass() {
        for r in [
            greedy_bound(12, 0.0, 1).unwrap(),
            submodularity(3, 20, 1).unwrap(),
            gradients(1, 1e-4, 1).unwrap(),
            structure(2, 1e-9, 1).unwrap(),
            parity(3, 10, 1e-6, 1).unwrap(),
        ] {
            assert!(r.passed, "{r}");
            assert!(r.checks > 0);
        }
    }
}
