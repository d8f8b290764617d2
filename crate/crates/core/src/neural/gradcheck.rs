use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::ModelParams;
use super::ops::cross_entropy;
use crate::error::Result;
use crate::world::CommGraph;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter with the largest error, as `tensor[index]`.
    pub worst: String,
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
    /// Probes skipped because a ReLU changed state inside `[-h, h]`, where
    /// the loss is not differentiable.
    pub skipped: usize,
}

/// Analytic gradients against central differences on a sample of up to
/// `per_tensor` entries from every parameter tensor.
pub fn grad_check(
    p: &ModelParams<f64>,
    g: &CommGraph,
    x: &Array2<f64>,
    labels: &[usize],
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let tape = p.forward_tape(g, x)?;
    let (_, dlogits) = cross_entropy(&tape.logits, labels);
    let grads = p.backward(g, &tape, &dlogits);
    compare_gradients(p, g, x, labels, &grads, h, per_tensor, seed)
}

fn loss_and_pattern(p: &ModelParams<f64>, g: &CommGraph, x: &Array2<f64>, labels: &[usize]) -> Result<(f64, Vec<bool>)> {
    let tape = p.forward_tape(g, x)?;
    Ok((cross_entropy(&tape.logits, labels).0, tape.activation_pattern()))
}

fn nudged(p: &ModelParams<f64>, flat_index: usize, delta: f64) -> ModelParams<f64> {
    let mut q = p.clone();
    let mut offset = 0;
    q.for_each_tensor_mut(|t| {
        if (offset..offset + t.len()).contains(&flat_index) {
            t[flat_index - offset] += delta;
        }
        offset += t.len();
    });
    q
}

/// Compares supplied `analytic` gradients with the fourth-order central
/// difference at `±h, ±2h`; probes whose perturbations flip any ReLU are
/// skipped. Error per entry is `|a - n| / max(1e-12, |a| + |n|)`.
#[allow(clippy::too_many_arguments)]
pub fn compare_gradients(
    p: &ModelParams<f64>,
    g: &CommGraph,
    x: &Array2<f64>,
    labels: &[usize],
    analytic: &ModelParams<f64>,
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut tensors: Vec<(String, Vec<f64>)> = Vec::new();
    analytic.for_each_tensor(|name, t| tensors.push((name.to_string(), t.to_vec())));
    let (_, base_pattern) = loss_and_pattern(p, g, x, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        per_tensor: Vec::new(),
        checked: 0,
        skipped: 0,
    };
    let mut offset = 0;
    for (name, values) in &tensors {
        let picks: Vec<usize> = if values.len() <= per_tensor {
            (0..values.len()).collect()
        } else {
            let mut v = index::sample(&mut rng, values.len(), per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut tensor_max = 0.0f64;
        for k in picks {
            let mut f = [0.0; 4];
            let mut kinked = false;
            for (slot, step) in f.iter_mut().zip([h, -h, 2.0 * h, -2.0 * h]) {
                let (l, pat) = loss_and_pattern(&nudged(p, offset + k, step), g, x, labels)?;
                kinked |= pat != base_pattern;
                *slot = l;
            }
            if kinked {
                report.skipped += 1;
                continue;
            }
            let numeric = (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * h);
            let a = values[k];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            report.checked += 1;
            tensor_max = tensor_max.max(err);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{k}]");
            }
        }
        report.per_tensor.push((name.clone(), tensor_max));
        offset += values.len();
    }
    Ok(report)
}
