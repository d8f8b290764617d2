//! The action network executed as a per-robot message-passing protocol.
//!
//! Every robot holds its own copy of the parameters and only its own feature
//! row. Each power of the shift operator costs one synchronous exchange round
//! in which every robot sends its current vector to each neighbor, so a
//! network with `L` graph layers of `K` shifts needs `L·K` rounds.

use std::io::{self, Write};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::encode;
use crate::neural::{Activation, ModelParams, Real};
use crate::world::{observe, Assignment, CommGraph, MotionPrimitive, Scenario};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageStats {
    pub rounds: usize,
    pub messages: u64,
    pub payload_values: u64,
}

impl MessageStats {
    /// Closed form for a full inference: `rounds = L·K` and every round
    /// carries one message per directed edge. `input_widths[l]` is the width
    /// of the vectors graph layer `l` shifts.
    pub fn expected(g: &CommGraph, input_widths: &[usize], taps: usize) -> Self {
        let edges = g.directed_edges() as u64;
        let rounds = input_widths.len() * taps;
        Self {
            rounds,
            messages: edges * rounds as u64,
            payload_values: input_widths.iter().map(|&w| edges * (w * taps) as u64).sum(),
        }
    }

    pub fn expected_for<T: Real>(g: &CommGraph, model: &ModelParams<T>) -> Self {
        let c = &model.config;
        let mut widths = vec![c.encoder_widths.last().copied().unwrap_or(c.input_width)];
        widths.extend(c.gnn_widths.iter().take(c.gnn_widths.len().saturating_sub(1)));
        Self::expected(g, &widths, c.taps)
    }
}

/// One delivered message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub payload_len: usize,
}

pub fn write_trace(entries: &[TraceEntry], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "round,sender,receiver,payload_len")?;
    for e in entries {
        writeln!(out, "{},{},{},{}", e.round, e.sender, e.receiver, e.payload_len)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheduler {
    /// Nodes step one after another in id order.
    #[default]
    Sequential,
    /// Nodes step concurrently between round barriers.
    Parallel,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RuntimeOptions {
    pub scheduler: Scheduler,
    pub trace: bool,
}

/// A robot's local state.
#[derive(Clone, Debug)]
pub struct RobotNode<T> {
    pub id: usize,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    model: ModelParams<T>,
    input: Array1<T>,
    hidden: Array1<T>,
    /// `[x, Sx, …]` as seen from this node for the current graph layer.
    shifted: Vec<Array1<T>>,
    inbox: Vec<(usize, Array1<T>)>,
    logits: Option<Array1<T>>,
    compute: Duration,
}

fn activate<T: Real>(act: Activation, mut v: Array1<T>) -> Array1<T> {
    if act == Activation::Relu {
        v.mapv_inplace(|x| x.max(T::zero()));
    }
    v
}

fn dense<T: Real>(x: ArrayView1<T>, w: &Array2<T>, b: &Array1<T>, bias: bool) -> Array1<T> {
    let mut out = if bias { b.clone() } else { Array1::zeros(w.ncols()) };
    for (&xi, row) in x.iter().zip(w.rows()) {
        out.scaled_add(xi, &row);
    }
    out
}

impl<T: Real> RobotNode<T> {
    pub fn new(id: usize, g: &CommGraph, model: ModelParams<T>, input: Array1<T>) -> Result<Self> {
        if input.len() != model.config.input_width {
            return Err(Error::Shape {
                op: "robot_node",
                detail: format!("input has {} values, model expects {}", input.len(), model.config.input_width),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "input features".into(),
                detail: format!("robot {id}"),
            });
        }
        Ok(Self {
            id,
            neighbors: g.neighbors[id].clone(),
            weights: g.weights[id].clone(),
            model,
            hidden: input.clone(),
            input,
            shifted: Vec::new(),
            inbox: Vec::new(),
            logits: None,
            compute: Duration::ZERO,
        })
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Time spent in local computation so far.
    pub fn compute_time(&self) -> Duration {
        self.compute
    }

    /// Shift terms gathered so far for the current graph layer.
    pub fn shifted_terms(&self) -> &[Array1<T>] {
        &self.shifted
    }

    pub fn logits(&self) -> Option<&Array1<T>> {
        self.logits.as_ref()
    }

    fn timed<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        let start = Instant::now();
        let r = f(self);
        self.compute += start.elapsed();
        r
    }

    pub fn run_encoder(&mut self) {
        self.timed(|n| {
            let (act, bias) = (n.model.config.activation, n.model.config.bias);
            let mut h = n.input.clone();
            for d in &n.model.encoder {
                h = activate(act, dense(h.view(), &d.weight, &d.bias, bias));
            }
            n.hidden = h;
        })
    }

    pub fn begin_layer(&mut self) {
        self.shifted = vec![self.hidden.clone()];
    }

    /// The vector this node broadcasts in the next round.
    pub fn outgoing(&self) -> &Array1<T> {
        self.shifted.last().expect("begin_layer precedes exchanges")
    }

    /// Accepts a payload, refusing anything from outside the neighbor list.
    pub fn receive(&mut self, sender: usize, payload: Array1<T>) -> Result<()> {
        if self.neighbors.binary_search(&sender).is_err() {
            return Err(Error::ProtocolViolation { sender, receiver: self.id });
        }
        self.inbox.push((sender, payload));
        Ok(())
    }

    /// Weighted sum of this round's payloads, one per neighbor.
    pub fn aggregate(&mut self) -> Result<()> {
        let width = self.outgoing().len();
        let mut inbox = std::mem::take(&mut self.inbox);
        inbox.sort_by_key(|m| m.0);
        let senders: Vec<usize> = inbox.iter().map(|m| m.0).collect();
        if senders != self.neighbors {
            return Err(Error::InvalidParams(format!(
                "robot {} expected payloads from {:?}, got {:?}",
                self.id, self.neighbors, senders
            )));
        }
        if inbox.iter().any(|m| m.1.len() != width) {
            return Err(Error::Shape {
                op: "aggregate",
                detail: format!("robot {} received a payload of the wrong width", self.id),
            });
        }
        self.timed(|n| {
            let mut acc = Array1::zeros(width);
            for ((_, payload), &w) in inbox.iter().zip(&n.weights) {
                acc.scaled_add(T::from(w).expect("weight is finite"), payload);
            }
            n.shifted.push(acc);
        });
        Ok(())
    }

    pub fn finish_layer(&mut self, layer: usize) -> Result<()> {
        let taps = self.model.gnn[layer].taps.len();
        if self.shifted.len() != taps {
            return Err(Error::InvalidParams(format!(
                "robot {} has {} shifted terms for a {}-tap layer",
                self.id,
                self.shifted.len(),
                taps
            )));
        }
        self.timed(|n| {
            let l = &n.model.gnn[layer];
            let mut pre = Array1::zeros(l.bias.len());
            for (z, h) in n.shifted.iter().zip(&l.taps) {
                pre += &dense(z.view(), h, &l.bias, false);
            }
            if n.model.config.bias {
                pre += &l.bias;
            }
            n.hidden = activate(n.model.config.activation, pre);
            n.shifted.clear();
        });
        Ok(())
    }

    pub fn run_head(&mut self) -> Result<usize> {
        let logits = self.timed(|n| {
            let h = &n.model.head;
            dense(n.hidden.view(), &h.weight, &h.bias, n.model.config.bias)
        });
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "action head".into(),
                detail: format!("robot {}", self.id),
            });
        }
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        self.logits = Some(logits);
        Ok(best)
    }
}

#[derive(Clone, Debug)]
pub struct InferenceOutput<T> {
    pub actions: Vec<usize>,
    pub logits: Array2<T>,
    pub stats: MessageStats,
    pub trace: Vec<TraceEntry>,
    /// Local computation time of each robot.
    pub node_compute: Vec<Duration>,
}

impl<T> InferenceOutput<T> {
    pub fn max_node_compute(&self) -> Duration {
        self.node_compute.iter().copied().max().unwrap_or_default()
    }
}

/// A running protocol instance over a fixed graph.
pub struct Protocol<'g, T> {
    graph: &'g CommGraph,
    pub nodes: Vec<RobotNode<T>>,
    pub stats: MessageStats,
    pub trace: Vec<TraceEntry>,
    options: RuntimeOptions,
}

impl<'g, T: Real> Protocol<'g, T> {
    /// One node per graph vertex; node `i` receives row `i` of `features`.
    pub fn new(g: &'g CommGraph, model: &ModelParams<T>, features: &Array2<T>, options: RuntimeOptions) -> Result<Self> {
        model.config.validate()?;
        if features.nrows() != g.n() {
            return Err(Error::Shape {
                op: "protocol",
                detail: format!("graph has {} nodes, {} feature rows", g.n(), features.nrows()),
            });
        }
        let nodes = features
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| RobotNode::new(i, g, model.clone(), row.to_owned()))
            .collect::<Result<_>>()?;
        Ok(Self {
            graph: g,
            nodes,
            stats: MessageStats::default(),
            trace: Vec::new(),
            options,
        })
    }

    fn each(&mut self, f: impl Fn(&mut RobotNode<T>) -> Result<()> + Sync + Send) -> Result<()> {
        match self.options.scheduler {
            Scheduler::Sequential => self.nodes.iter_mut().try_for_each(f),
            Scheduler::Parallel => self.nodes.par_iter_mut().try_for_each(f),
        }
    }

    /// One synchronous round: every node sends its current vector to each
    /// neighbor, then every node folds its inbox into the next shifted term.
    pub fn exchange(&mut self) -> Result<()> {
        self.stats.rounds += 1;
        let round = self.stats.rounds;
        let outgoing: Vec<Array1<T>> = self.nodes.iter().map(|n| n.outgoing().clone()).collect();
        for (sender, payload) in outgoing.iter().enumerate() {
            for &receiver in &self.graph.neighbors[sender] {
                self.nodes[receiver].receive(sender, payload.clone())?;
                self.stats.messages += 1;
                self.stats.payload_values += payload.len() as u64;
                if self.options.trace {
                    self.trace.push(TraceEntry {
                        round,
                        sender,
                        receiver,
                        payload_len: payload.len(),
                    });
                }
            }
        }
        self.each(|n| n.aggregate())
    }

    /// Every node runs its observation encoder.
    pub fn encode(&mut self) -> Result<()> {
        self.each(|n| {
            n.run_encoder();
            Ok(())
        })
    }

    pub fn begin_layer(&mut self) -> Result<()> {
        self.each(|n| {
            n.begin_layer();
            Ok(())
        })
    }

    pub fn finish_layer(&mut self, layer: usize) -> Result<()> {
        self.each(|n| n.finish_layer(layer))
    }

    /// Encoder, every graph layer with its exchange rounds, then the head.
    pub fn run(mut self) -> Result<InferenceOutput<T>> {
        self.encode()?;
        let layers = self.nodes.first().map_or(0, |n| n.model.gnn.len());
        for l in 0..layers {
            self.begin_layer()?;
            let taps = self.nodes[0].model.gnn[l].taps.len();
            for _ in 1..taps {
                self.exchange()?;
            }
            self.finish_layer(l)?;
        }
        let actions = match self.options.scheduler {
            Scheduler::Sequential => self.nodes.iter_mut().map(|n| n.run_head()).collect::<Result<Vec<_>>>()?,
            Scheduler::Parallel => self.nodes.par_iter_mut().map(|n| n.run_head()).collect::<Result<Vec<_>>>()?,
        };
        let width = self.nodes.first().map_or(0, |n| n.model.config.actions);
        let mut logits = Array2::zeros((self.nodes.len(), width));
        for (mut row, n) in logits.rows_mut().into_iter().zip(&self.nodes) {
            row.assign(n.logits().expect("head ran"));
        }
        Ok(InferenceOutput {
            actions,
            logits,
            stats: self.stats,
            trace: self.trace,
            node_compute: self.nodes.iter().map(|n| n.compute).collect(),
        })
    }
}

/// Runs the protocol from already-encoded per-robot features.
pub fn run_protocol<T: Real>(
    g: &CommGraph,
    model: &ModelParams<T>,
    features: &Array2<T>,
    options: RuntimeOptions,
) -> Result<InferenceOutput<T>> {
    Protocol::new(g, model, features, options)?.run()
}

/// Each robot observes and encodes locally, then the protocol runs.
pub fn run_scenario<T: Real>(
    s: &Scenario,
    g: &CommGraph,
    model: &ModelParams<T>,
    options: RuntimeOptions,
) -> Result<InferenceOutput<T>> {
    if g.n() != s.n_robots() {
        return Err(Error::Shape {
            op: "run_decentralized_inference",
            detail: format!("graph has {} nodes, scenario has {} robots", g.n(), s.n_robots()),
        });
    }
    let mut x = Array2::zeros((s.n_robots(), model.config.input_width));
    for i in 0..s.n_robots() {
        let f = encode(&observe(s, i)?);
        if f.len() != model.config.input_width {
            return Err(Error::Shape {
                op: "run_decentralized_inference",
                detail: format!("features are {} wide, model expects {}", f.len(), model.config.input_width),
            });
        }
        for (k, v) in f.iter().enumerate() {
            x[[i, k]] = T::from(*v).expect("feature is finite");
        }
    }
    run_protocol(g, model, &x, options)
}

pub fn run_decentralized_inference<T: Real>(
    s: &Scenario,
    g: &CommGraph,
    model: &ModelParams<T>,
) -> Result<(Assignment, MessageStats)> {
    let out = run_scenario(s, g, model, RuntimeOptions::default())?;
    let a = out
        .actions
        .iter()
        .map(|&k| {
            MotionPrimitive::from_index(k).ok_or_else(|| Error::InvalidParams(format!("action index {k} out of range")))
        })
        .collect::<Result<_>>()?;
    Ok((Assignment(a), out.stats))
}
