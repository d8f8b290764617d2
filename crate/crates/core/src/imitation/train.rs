use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{stack, Sample};
use crate::error::{Error, Result};
use crate::neural::{
    argmax_rows, cosine_lr, cross_entropy, optimizer_step, AdamConfig, Checkpoint, ModelConfig, ModelParams,
    TrainState, TrainingMeta,
};

/// Stream offset separating the minibatch shuffle from the weight draw.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 64,
            lr_max: 5e-3,
            lr_min: 1e-6,
            seed: 0,
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr_max.is_finite() && self.lr_min.is_finite() && 0.0 <= self.lr_min && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "learning rates need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelParams<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
    pub halted: Option<String>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig, n_train: usize, n_val: usize) -> Checkpoint {
        Checkpoint::new(
            self.model.clone(),
            Some(TrainingMeta {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                lr_max: cfg.lr_max,
                lr_min: cfg.lr_min,
                seed: cfg.seed,
                best_epoch: self.best_epoch,
                best_val_loss: self.best_val_loss,
                train_instances: n_train,
                val_instances: n_val,
                n_robots: None,
                dataset_seed: None,
                halted: self.halted.clone(),
            }),
        )
    }
}

/// Mean per-robot loss and action accuracy over a set of samples.
pub fn evaluate_loss(model: &ModelParams<f32>, samples: &[Sample], batch_size: usize) -> Result<(f64, f64)> {
    let (mut loss, mut hits, mut rows) = (0.0, 0usize, 0usize);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let b = stack(&refs);
        let logits = model.forward(&b.graph, &b.features)?;
        let (l, _) = cross_entropy(&logits, &b.labels);
        loss += l as f64 * b.labels.len() as f64;
        hits += argmax_rows(&logits).iter().zip(&b.labels).filter(|(a, b)| a == b).count();
        rows += b.labels.len();
    }
    if rows == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    Ok((loss / rows as f64, hits as f64 / rows as f64))
}

fn check_widths(cfg: &ModelConfig, samples: &[Sample]) -> Result<()> {
    for s in samples {
        if s.features.ncols() != cfg.input_width {
            return Err(Error::Shape {
                op: "train",
                detail: format!("features are {} wide, model expects {}", s.features.ncols(), cfg.input_width),
            });
        }
        if s.labels.iter().any(|&l| l >= cfg.actions) {
            return Err(Error::Dataset(format!("label outside 0..{}", cfg.actions)));
        }
    }
    Ok(())
}

/// Minibatch training with a per-step cosine schedule. The parameters with
/// the lowest validation loss are returned (training loss when `val` is
/// empty). A non-finite loss stops training and keeps the best parameters
/// seen so far.
pub fn train(train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train_set, val_set, cfg, |_| {})
}

pub fn train_with(
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    check_widths(&cfg.model, train_set)?;
    check_widths(&cfg.model, val_set)?;

    let mut params = ModelParams::<f32>::init(cfg.model.clone(), cfg.seed)?;
    let mut state = TrainState::new(&params, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut halted = None;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut rows) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let b = stack(&refs);
            let tape = match params.forward_tape(&b.graph, &b.features) {
                Ok(t) => t,
                Err(Error::NonFinite { stage, detail }) => {
                    halted = Some(format!("epoch {epoch}, step {}: non-finite {stage}: {detail}", state.step));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let (loss, dlogits) = cross_entropy(&tape.logits, &b.labels);
            if !loss.is_finite() {
                halted = Some(format!("epoch {epoch}, step {}: loss is {loss}", state.step));
                break 'epochs;
            }
            loss_sum += loss as f64 * b.labels.len() as f64;
            hits += argmax_rows(&tape.logits).iter().zip(&b.labels).filter(|(a, b)| a == b).count();
            rows += b.labels.len();
            let grads = params.backward(&b.graph, &tape, &dlogits);
            let lr = cosine_lr(state.step, total_steps, cfg.lr_max, cfg.lr_min);
            optimizer_step(&mut params, &grads, &mut state, lr)?;
            if !params.all_finite() {
                halted = Some(format!("epoch {epoch}, step {}: parameters became non-finite", state.step));
                break 'epochs;
            }
        }
        let train_loss = loss_sum / rows as f64;
        let train_accuracy = hits as f64 / rows as f64;
        let (val_loss, val_accuracy) = match evaluate_loss(&params, val_set, cfg.batch_size.max(256)) {
            Ok(v) => v,
            Err(Error::NonFinite { stage, detail }) => {
                halted = Some(format!("epoch {epoch}: validation non-finite {stage}: {detail}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let stats = EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
            lr: state.lr,
            steps: state.step,
        };
        on_epoch(&stats);
        history.push(stats);
        let score = if val_set.is_empty() { train_loss } else { val_loss };
        if score < best_loss {
            best_loss = score;
            best_epoch = epoch;
            best = params.clone();
        }
    }

    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        best_val_loss: best_loss,
        steps: state.step,
        halted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imitation::dataset::{generate_records, prepare};
    use crate::world::ScenarioParams;

    fn samples(n_robots: usize, count: u64, seed: u64) -> Vec<Sample> {
        prepare(&generate_records(n_robots, ScenarioParams::default(), seed, 0..count).unwrap()).unwrap()
    }

    #[test]
    fn one_epoch_of_one_batch_is_one_step() {
        let s = samples(5, 64, 1);
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let out = train(&s, &[], &cfg).unwrap();
        assert_eq!(out.steps, 1);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].steps, 1);
    }

    #[test]
    fn steps_cover_partial_batches() {
        let s = samples(4, 65, 2);
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        assert_eq!(train(&s, &[], &cfg).unwrap().steps, 6);
    }

    #[test]
    fn training_is_deterministic() {
        let s = samples(6, 20, 3);
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 9, ..Default::default() };
        let a = train(&s[..15], &s[15..], &cfg).unwrap();
        let b = train(&s[..15], &s[15..], &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn divergence_halts_with_last_good_model() {
        let s = samples(6, 16, 4);
        let cfg = TrainConfig { epochs: 5, batch_size: 4, lr_max: 1e30, lr_min: 1e30, ..Default::default() };
        let out = train(&s, &[], &cfg).unwrap();
        assert!(out.halted.is_some());
        assert!(out.model.all_finite());
    }

    #[test]
    fn rejects_width_mismatch() {
        let s = samples(4, 4, 5);
        let mut cfg = TrainConfig::default();
        cfg.model.input_width = 61;
        assert!(matches!(train(&s, &[], &cfg), Err(Error::Shape { .. })));
        assert!(train(&[], &[], &TrainConfig::default()).is_err());
    }
}
