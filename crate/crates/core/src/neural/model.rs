use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{argmax_rows, graph_conv_sparse, shift, shift_transpose};
use super::{real, Real};
use crate::error::{Error, Result};
use crate::features::FEATURE_WIDTH;
use crate::world::{CommGraph, MotionPrimitive};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, pre: &Array2<T>) -> Array2<T> {
        match self {
            Activation::Relu => pre.mapv(|v| v.max(T::zero())),
            Activation::Identity => pre.clone(),
        }
    }

    fn backprop<T: Real>(self, pre: &Array2<T>, mut dout: Array2<T>) -> Array2<T> {
        if self == Activation::Relu {
            dout.zip_mut_with(pre, |d, &p| {
                if p <= T::zero() {
                    *d = T::zero();
                }
            });
        }
        dout
    }
}

/// Layer widths and structural switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_width: usize,
    pub encoder_widths: Vec<usize>,
    pub gnn_widths: Vec<usize>,
    /// Filter order `K`: each graph layer uses taps `H_0..=H_K`.
    pub taps: usize,
    pub actions: usize,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_width: FEATURE_WIDTH,
            encoder_widths: vec![32, 16, 8],
            gnn_widths: vec![32, 128],
            taps: 1,
            actions: MotionPrimitive::COUNT,
            activation: Activation::Relu,
            bias: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.actions == 0 {
            return Err(Error::Config("input width and action count must be positive".into()));
        }
        if self.encoder_widths.iter().chain(&self.gnn_widths).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn encoder_dims(&self) -> Vec<(usize, usize)> {
        let mut prev = self.input_width;
        self.encoder_widths
            .iter()
            .map(|&w| {
                let d = (prev, w);
                prev = w;
                d
            })
            .collect()
    }

    fn encoded_width(&self) -> usize {
        self.encoder_widths.last().copied().unwrap_or(self.input_width)
    }

    fn gnn_dims(&self) -> Vec<(usize, usize)> {
        let mut prev = self.encoded_width();
        self.gnn_widths
            .iter()
            .map(|&w| {
                let d = (prev, w);
                prev = w;
                d
            })
            .collect()
    }

    fn head_input(&self) -> usize {
        self.gnn_widths.last().copied().unwrap_or_else(|| self.encoded_width())
    }

    /// Number of learnable scalars; depends on layer sizes only.
    pub fn param_count(&self) -> usize {
        let b = usize::from(self.bias);
        let dense = |(i, o): (usize, usize)| i * o + b * o;
        self.encoder_dims().into_iter().map(dense).sum::<usize>()
            + self
                .gnn_dims()
                .into_iter()
                .map(|(i, o)| (self.taps + 1) * i * o + b * o)
                .sum::<usize>()
            + dense((self.head_input(), self.actions))
    }

    /// Hops whose data can reach a robot's output.
    pub fn receptive_field(&self) -> usize {
        self.gnn_widths.len() * self.taps
    }
}

/// Fully connected layer `x W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Dense<T> {
    #[serde(with = "super::checkpoint::matrix")]
    pub weight: Array2<T>,
    #[serde(with = "super::checkpoint::vector")]
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    fn forward(&self, x: &Array2<T>, bias: bool) -> Array2<T> {
        let mut out = x.dot(&self.weight);
        if bias {
            out += &self.bias;
        }
        out
    }
}

/// Polynomial graph filter: one `in × out` tap per power of the shift
/// operator, plus a bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GnnLayer<T> {
    #[serde(with = "super::checkpoint::matrices")]
    pub taps: Vec<Array2<T>>,
    #[serde(with = "super::checkpoint::vector")]
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub init_seed: u64,
    pub encoder: Vec<Dense<T>>,
    pub gnn: Vec<GnnLayer<T>>,
    pub head: Dense<T>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    pub input: Array2<T>,
    pub encoder_pre: Vec<Array2<T>>,
    pub encoder_out: Vec<Array2<T>>,
    /// Per graph layer: `[X, S X, …, S^K X]`.
    pub gnn_shifted: Vec<Vec<Array2<T>>>,
    pub gnn_pre: Vec<Array2<T>>,
    pub gnn_out: Vec<Array2<T>>,
    pub logits: Array2<T>,
}

impl<T> Tape<T> {
    /// Sign pattern of every nonlinearity input; identical patterns mean the
    /// network is locally linear between two evaluations.
    pub fn activation_pattern(&self) -> Vec<bool>
    where
        T: Real,
    {
        self.encoder_pre
            .iter()
            .chain(&self.gnn_pre)
            .flat_map(|a| a.iter().map(|&v| v > T::zero()))
            .collect()
    }
}

fn uniform_matrix<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || real(rng.gen_range(-bound..=bound)))
}

fn uniform_vector<T: Real>(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Array1<T> {
    Array1::from_shape_simple_fn(len, || real(rng.gen_range(-bound..=bound)))
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization: every weight and bias uniform in
    /// `±sqrt(1/fan_in)`. Values are drawn in `f64` so the same seed gives the
    /// same model in every precision (up to rounding).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = |rng: &mut ChaCha8Rng, (i, o): (usize, usize)| {
            let bound = (1.0 / i as f64).sqrt();
            let weight = uniform_matrix(rng, i, o, bound);
            let bias = if config.bias {
                uniform_vector(rng, o, bound)
            } else {
                Array1::zeros(o)
            };
            Dense { weight, bias }
        };
        let encoder = config.encoder_dims().into_iter().map(|d| dense(&mut rng, d)).collect();
        let head = (config.head_input(), config.actions);
        let gnn = config
            .gnn_dims()
            .into_iter()
            .map(|(i, o)| {
                let bound = (1.0 / i as f64).sqrt();
                let taps = (0..=config.taps).map(|_| uniform_matrix(&mut rng, i, o, bound)).collect();
                let bias = if config.bias {
                    uniform_vector(&mut rng, o, bound)
                } else {
                    Array1::zeros(o)
                };
                GnnLayer { taps, bias }
            })
            .collect();
        let head = dense(&mut rng, head);
        Ok(Self {
            config,
            init_seed: seed,
            encoder,
            gnn,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|t| t.fill(T::zero()));
        z
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let c2 = |a: &Array2<T>| a.mapv(|v| U::from(v).unwrap());
        let c1 = |a: &Array1<T>| a.mapv(|v| U::from(v).unwrap());
        let dense = |d: &Dense<T>| Dense {
            weight: c2(&d.weight),
            bias: c1(&d.bias),
        };
        ModelParams {
            config: self.config.clone(),
            init_seed: self.init_seed,
            encoder: self.encoder.iter().map(dense).collect(),
            gnn: self
                .gnn
                .iter()
                .map(|l| GnnLayer {
                    taps: l.taps.iter().map(c2).collect(),
                    bias: c1(&l.bias),
                })
                .collect(),
            head: dense(&self.head),
        }
    }

    /// Visit every parameter tensor in a fixed order: encoder layers
    /// (weight, bias), graph layers (taps, bias), head (weight, bias).
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &[T])) {
        for (l, d) in self.encoder.iter().enumerate() {
            f(&format!("encoder.{l}.weight"), d.weight.as_slice().unwrap());
            f(&format!("encoder.{l}.bias"), d.bias.as_slice().unwrap());
        }
        for (l, g) in self.gnn.iter().enumerate() {
            for (k, h) in g.taps.iter().enumerate() {
                f(&format!("gnn.{l}.tap{k}"), h.as_slice().unwrap());
            }
            f(&format!("gnn.{l}.bias"), g.bias.as_slice().unwrap());
        }
        f("head.weight", self.head.weight.as_slice().unwrap());
        f("head.bias", self.head.bias.as_slice().unwrap());
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut [T])) {
        for d in &mut self.encoder {
            f(d.weight.as_slice_mut().unwrap());
            f(d.bias.as_slice_mut().unwrap());
        }
        for g in &mut self.gnn {
            for h in &mut g.taps {
                f(h.as_slice_mut().unwrap());
            }
            f(g.bias.as_slice_mut().unwrap());
        }
        f(self.head.weight.as_slice_mut().unwrap());
        f(self.head.bias.as_slice_mut().unwrap());
    }

    /// Scalars that training actually updates (biases excluded when disabled).
    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    fn check_input(&self, g: &CommGraph, x: &Array2<T>) -> Result<()> {
        if x.ncols() != self.config.input_width {
            return Err(Error::Shape {
                op: "gnn_forward",
                detail: format!("features are {} wide, model expects {}", x.ncols(), self.config.input_width),
            });
        }
        if g.n() != x.nrows() {
            return Err(Error::Shape {
                op: "gnn_forward",
                detail: format!("graph has {} nodes, features have {} rows", g.n(), x.nrows()),
            });
        }
        Ok(())
    }

    /// Per-robot logits (`N × actions`).
    pub fn forward(&self, g: &CommGraph, x: &Array2<T>) -> Result<Array2<T>> {
        self.check_input(g, x)?;
        let act = self.config.activation;
        let mut h = x.clone();
        finite(&h, || "input features".to_string())?;
        for (l, d) in self.encoder.iter().enumerate() {
            let pre = d.forward(&h, self.config.bias);
            finite(&pre, || format!("encoder layer {l}"))?;
            h = act.apply(&pre);
        }
        for (l, layer) in self.gnn.iter().enumerate() {
            let pre = graph_conv_sparse(g, &h, layer)?;
            finite(&pre, || format!("graph layer {l}"))?;
            h = act.apply(&pre);
        }
        let logits = self.head.forward(&h, self.config.bias);
        finite(&logits, || "action head".to_string())?;
        Ok(logits)
    }

    /// Greedy action per robot from the logits.
    pub fn select(&self, g: &CommGraph, x: &Array2<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(g, x)?))
    }

    pub fn forward_tape(&self, g: &CommGraph, x: &Array2<T>) -> Result<Tape<T>> {
        self.check_input(g, x)?;
        let act = self.config.activation;
        let bias = self.config.bias;
        let mut encoder_pre = Vec::with_capacity(self.encoder.len());
        let mut encoder_out = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for d in &self.encoder {
            let pre = d.forward(&h, bias);
            h = act.apply(&pre);
            encoder_pre.push(pre);
            encoder_out.push(h.clone());
        }
        let mut gnn_shifted = Vec::with_capacity(self.gnn.len());
        let mut gnn_pre = Vec::with_capacity(self.gnn.len());
        let mut gnn_out = Vec::with_capacity(self.gnn.len());
        for layer in &self.gnn {
            let mut shifted = Vec::with_capacity(layer.taps.len());
            shifted.push(h);
            for _ in 1..layer.taps.len() {
                let next = shift(g, shifted.last().unwrap().view());
                shifted.push(next);
            }
            let mut pre = Array2::zeros((x.nrows(), layer.bias.len()));
            for (z, tap) in shifted.iter().zip(&layer.taps) {
                pre += &z.dot(tap);
            }
            if bias {
                pre += &layer.bias;
            }
            h = act.apply(&pre);
            gnn_shifted.push(shifted);
            gnn_pre.push(pre);
            gnn_out.push(h.clone());
        }
        let logits = self.head.forward(&h, bias);
        for (l, pre) in encoder_pre.iter().chain(&gnn_pre).enumerate() {
            finite(pre, || format!("hidden layer {l}"))?;
        }
        finite(&logits, || "action head".to_string())?;
        Ok(Tape {
            input: x.clone(),
            encoder_pre,
            encoder_out,
            gnn_shifted,
            gnn_pre,
            gnn_out,
            logits,
        })
    }

    /// Reverse-mode gradients of a scalar loss given `dloss/dlogits`.
    pub fn backward(&self, g: &CommGraph, tape: &Tape<T>, dlogits: &Array2<T>) -> ModelParams<T> {
        let act = self.config.activation;
        let bias = self.config.bias;
        let mut grads = self.zeros_like();

        let head_in = tape
            .gnn_out
            .last()
            .or(tape.encoder_out.last())
            .unwrap_or(&tape.input);
        grads.head.weight = head_in.t().dot(dlogits);
        if bias {
            grads.head.bias = dlogits.sum_axis(Axis(0));
        }
        let mut d = dlogits.dot(&self.head.weight.t());

        for (l, layer) in self.gnn.iter().enumerate().rev() {
            let dpre = act.backprop(&tape.gnn_pre[l], d);
            if bias {
                grads.gnn[l].bias = dpre.sum_axis(Axis(0));
            }
            // dX = Σ_k (Sᵀ)^k dZ_k, accumulated Horner-style from the top tap.
            let mut acc: Option<Array2<T>> = None;
            for k in (0..layer.taps.len()).rev() {
                grads.gnn[l].taps[k] = tape.gnn_shifted[l][k].t().dot(&dpre);
                let dz = dpre.dot(&layer.taps[k].t());
                acc = Some(match acc {
                    None => dz,
                    Some(a) => shift_transpose(g, a.view()) + dz,
                });
            }
            d = acc.expect("a graph layer has at least one tap");
        }

        for (l, dense) in self.encoder.iter().enumerate().rev() {
            let dpre = act.backprop(&tape.encoder_pre[l], d);
            let input = if l == 0 { &tape.input } else { &tape.encoder_out[l - 1] };
            grads.encoder[l].weight = input.t().dot(&dpre);
            if bias {
                grads.encoder[l].bias = dpre.sum_axis(Axis(0));
            }
            d = if l > 0 {
                dpre.dot(&dense.weight.t())
            } else {
                Array2::zeros((0, 0))
            };
        }
        grads
    }
}

fn finite<T: Real>(a: &Array2<T>, stage: impl FnOnce() -> String) -> Result<()> {
    match a.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(pos) => Err(Error::NonFinite {
            stage: stage(),
            detail: format!(
                "entry ({}, {}) of a {:?} activation is {}",
                pos / a.ncols(),
                pos % a.ncols(),
                a.dim(),
                a.as_slice().map(|s| s[pos]).unwrap_or_else(T::nan)
            ),
        }),
    }
}

/// Dense-adjacency entry point: logits for every robot given the shift
/// operator `S` and the encoded features `X0`.
pub fn gnn_forward<T: Real>(s: &Array2<T>, x0: &Array2<T>, p: &ModelParams<T>) -> Result<Array2<T>> {
    if !s.is_square() {
        return Err(Error::Shape {
            op: "gnn_forward",
            detail: format!("shift operator is {:?}", s.dim()),
        });
    }
    let g = CommGraph::from_adjacency(&s.mapv(|v| v.to_f64().unwrap()));
    p.forward(&g, x0)
}
