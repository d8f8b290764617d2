//! Expert-labelled datasets.
//!
//! On disk a dataset is JSON Lines: the first line is the header document,
//! every following line one record. Records keep raw geometry; features are
//! recomputed from it when a dataset is loaded for training.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::encode_all;
use crate::selectors::{greedy_central, GreedyVariant};
use crate::world::{build_comm_graph, generate_scenario, Assignment, CommGraph, Point2, Scenario, ScenarioParams};

pub const DATASET_FORMAT: &str = "covnet-dataset";
pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const PRNG_NAME: &str = "ChaCha8Rng";
pub const DEFAULT_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];

/// Seed of instance `index` under `master_seed`: the first output of a
/// ChaCha8 generator seeded with `master_seed` on stream `index`.
pub fn instance_seed(master_seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub format_version: u32,
    pub n_robots: usize,
    pub instances: usize,
    pub master_seed: u64,
    pub params: ScenarioParams,
    pub split: [f64; 3],
    pub prng: String,
    pub instance_seed_rule: String,
    pub expert: String,
}

impl DatasetHeader {
    pub fn new(n_robots: usize, instances: usize, params: ScenarioParams, master_seed: u64) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            format_version: DATASET_FORMAT_VERSION,
            n_robots,
            instances,
            master_seed,
            params,
            split: DEFAULT_SPLIT,
            prng: PRNG_NAME.into(),
            instance_seed_rule: "seed_i = ChaCha8Rng::seed_from_u64(master_seed), set_stream(i), next_u64()".into(),
            expert: format!("greedy-central/{}", GreedyVariant::GlobalPairwise.name()),
        }
    }
}

/// One labelled snapshot. Points are `[x, y]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub index: u64,
    pub seed: u64,
    pub env_side: f64,
    pub params: ScenarioParams,
    pub robots: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
    pub neighbors: Vec<Vec<usize>>,
    pub labels: Vec<u8>,
}

impl TrainRecord {
    pub fn from_scenario(index: u64, s: &Scenario) -> Self {
        let expert = greedy_central(s);
        let pts = |v: &[Point2]| v.iter().map(|p| [p.x, p.y]).collect();
        Self {
            index,
            seed: s.seed,
            env_side: s.env_side,
            params: s.params,
            robots: pts(&s.robots),
            targets: pts(&s.targets),
            neighbors: build_comm_graph(s).neighbors,
            labels: expert.assignment.indices(),
        }
    }

    pub fn scenario(&self) -> Scenario {
        let pts = |v: &[[f64; 2]]| v.iter().map(|p| Point2::new(p[0], p[1])).collect();
        Scenario {
            params: self.params,
            env_side: self.env_side,
            robots: pts(&self.robots),
            targets: pts(&self.targets),
            seed: self.seed,
        }
    }

    pub fn labels(&self) -> Result<Assignment> {
        Assignment::from_indices(&self.labels)
            .filter(|a| a.len() == self.robots.len())
            .ok_or_else(|| Error::Dataset(format!("record {} has invalid labels", self.index)))
    }
}

pub fn generate_record(n_robots: usize, params: ScenarioParams, master_seed: u64, index: u64) -> Result<TrainRecord> {
    let s = generate_scenario(n_robots, params, instance_seed(master_seed, index))?;
    Ok(TrainRecord::from_scenario(index, &s))
}

/// Records `range` of the dataset, generated in parallel and returned in
/// index order.
pub fn generate_records(
    n_robots: usize,
    params: ScenarioParams,
    master_seed: u64,
    range: std::ops::Range<u64>,
) -> Result<Vec<TrainRecord>> {
    range
        .into_par_iter()
        .map(|i| generate_record(n_robots, params, master_seed, i))
        .collect()
}

/// Writes a dataset file. Identical arguments produce byte-identical files.
pub fn generate_dataset(
    n_robots: usize,
    n_instances: usize,
    params: ScenarioParams,
    master_seed: u64,
    out: &Path,
) -> Result<DatasetHeader> {
    if n_instances == 0 {
        return Err(Error::Config("a dataset needs at least one instance".into()));
    }
    params.validate()?;
    let header = DatasetHeader::new(n_robots, n_instances, params, master_seed);
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(out, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    const CHUNK: u64 = 1024;
    let total = n_instances as u64;
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        for rec in generate_records(n_robots, params, master_seed, start..end)? {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(io)?;
        }
        start = end;
    }
    w.flush().map_err(io)?;
    Ok(header)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<TrainRecord>,
}

impl Dataset {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Dataset("empty dataset file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        if header.format != DATASET_FORMAT || header.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported dataset format {} v{}",
                header.format, header.format_version
            )));
        }
        let mut records = Vec::with_capacity(header.instances);
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrainRecord = serde_json::from_str(&line)?;
            rec.labels()?;
            records.push(rec);
        }
        if records.len() != header.instances {
            return Err(Error::Dataset(format!(
                "header promises {} records, file has {}",
                header.instances,
                records.len()
            )));
        }
        Ok(Self { header, records })
    }
}

/// Seeded shuffle followed by contiguous slices. The first two parts take
/// `round(ratio * n)` items, the last takes the remainder.
pub fn split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let n = items.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Dataset(format!("splitting {n} items by {ratios:?} leaves a part empty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// A record turned into network inputs.
#[derive(Clone, Debug)]
pub struct Sample {
    pub graph: CommGraph,
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
}

impl Sample {
    pub fn from_record(rec: &TrainRecord) -> Result<Self> {
        let s = rec.scenario();
        let graph = build_comm_graph(&s);
        if graph.neighbors != rec.neighbors {
            return Err(Error::Dataset(format!(
                "record {}: stored neighbor lists disagree with the geometry",
                rec.index
            )));
        }
        Ok(Self {
            graph,
            features: encode_all(&s)?.mapv(|v| v as f32),
            labels: rec.labels.iter().map(|&l| l as usize).collect(),
        })
    }
}

pub fn prepare(records: &[TrainRecord]) -> Result<Vec<Sample>> {
    records.par_iter().map(Sample::from_record).collect()
}

/// Several samples stacked into one block-diagonal graph.
pub fn stack(samples: &[&Sample]) -> Sample {
    let rows: usize = samples.iter().map(|s| s.features.nrows()).sum();
    let width = samples.first().map_or(0, |s| s.features.ncols());
    let mut features = Array2::zeros((rows, width));
    let mut at = 0;
    for s in samples {
        let n = s.features.nrows();
        features.slice_mut(ndarray::s![at..at + n, ..]).assign(&s.features);
        at += n;
    }
    Sample {
        graph: CommGraph::disjoint_union(samples.iter().map(|s| &s.graph)),
        features,
        labels: samples.iter().flat_map(|s| s.labels.iter().copied()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| instance_seed(7, i)).collect();
        let b: Vec<u64> = (0..100).map(|i| instance_seed(7, i)).collect();
        assert_eq!(a, b);
        let mut d = a.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 100);
        assert_ne!(instance_seed(8, 0), a[0]);
    }

    #[test]
    fn split_sizes_and_partition() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, va, te) = split(&items, DEFAULT_SPLIT, 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (6, 2, 2));
        let mut all: Vec<u32> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split(&items, DEFAULT_SPLIT, 3).unwrap(), (tr.clone(), va, te));
        assert_ne!(split(&items, DEFAULT_SPLIT, 4).unwrap().0, tr);
    }

    #[test]
    fn split_rejects_bad_input() {
        let items: Vec<u32> = (0..3).collect();
        assert!(split(&items, DEFAULT_SPLIT, 1).is_err());
        assert!(split(&(0..10).collect::<Vec<_>>(), [0.5, 0.2, 0.2], 1).is_err());
    }

    #[test]
    fn record_labels_are_greedy() {
        let rec = generate_record(12, ScenarioParams::default(), 5, 3).unwrap();
        assert_eq!(rec.labels.len(), 12);
        assert!(rec.labels.iter().all(|&l| l < 5));
        let again = greedy_central(&rec.scenario());
        assert_eq!(again.assignment, rec.labels().unwrap());
    }

    #[test]
    fn stacking_offsets_graphs() {
        let recs = generate_records(6, ScenarioParams::default(), 1, 0..3).unwrap();
        let samples = prepare(&recs).unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let b = stack(&refs);
        assert_eq!(b.features.nrows(), 18);
        assert_eq!(b.labels.len(), 18);
        for (k, s) in samples.iter().enumerate() {
            for i in 0..6 {
                let shifted: Vec<usize> = s.graph.neighbors[i].iter().map(|j| j + 6 * k).collect();
                assert_eq!(b.graph.neighbors[6 * k + i], shifted);
            }
        }
    }
}
