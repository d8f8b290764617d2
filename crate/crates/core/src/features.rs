//! Fixed-width encoding of a robot's observation.
//!
//! The sensor block holds the relative positions of the 10 nearest observed
//! robots, the camera block those of the 20 nearest coverable targets. Both
//! are sorted by ascending distance (ties by ascending id), flattened as
//! `x, y` pairs and padded with `-1`.

use ndarray::Array2;

use crate::error::Result;
use crate::world::{observe, Observation, Point2, Scenario};

pub const MAX_ROBOTS: usize = 10;
pub const MAX_TARGETS: usize = 20;
pub const FEATURE_WIDTH: usize = 2 * (MAX_ROBOTS + MAX_TARGETS);
pub const PAD: f64 = -1.0;

pub type FeatureVector = [f64; FEATURE_WIDTH];

fn nearest(entries: &[(usize, Point2)], cap: usize) -> Vec<Point2> {
    let mut sorted: Vec<(f64, usize, Point2)> = entries.iter().map(|&(id, p)| (p.norm(), id, p)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    sorted.into_iter().take(cap).map(|e| e.2).collect()
}

fn fill(block: &mut [f64], points: &[Point2]) {
    for (slot, p) in block.chunks_exact_mut(2).zip(points) {
        slot[0] = p.x;
        slot[1] = p.y;
    }
}

pub fn encode(obs: &Observation) -> FeatureVector {
    let mut v = [PAD; FEATURE_WIDTH];
    let (sensor, camera) = v.split_at_mut(2 * MAX_ROBOTS);
    fill(sensor, &nearest(&obs.robots, MAX_ROBOTS));
    fill(camera, &nearest(&obs.targets, MAX_TARGETS));
    v
}

/// Row `i` is the encoding of robot `i`'s observation.
pub fn encode_all(s: &Scenario) -> Result<Array2<f64>> {
    let n = s.n_robots();
    let mut x = Array2::zeros((n, FEATURE_WIDTH));
    for i in 0..n {
        let v = encode(&observe(s, i)?);
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&v[..]));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::fixtures::two_robots_with_observer;
    use crate::world::{generate_scenario, ScenarioParams};

    fn obs(robots: Vec<(usize, Point2)>, targets: Vec<(usize, Point2)>) -> Observation {
        Observation {
            robot: 0,
            robots,
            targets,
        }
    }

    #[test]
    fn empty_observation_is_all_padding() {
        let v = encode(&obs(vec![], vec![]));
        assert_eq!(v.len(), 60);
        assert!(v.iter().all(|&x| x == -1.0));
    }

    #[test]
    fn padding_follows_real_entries() {
        let robots = vec![
            (3, Point2::new(5.0, 0.0)),
            (1, Point2::new(0.0, 2.0)),
            (2, Point2::new(-3.0, 0.0)),
        ];
        let v = encode(&obs(robots, vec![]));
        assert_eq!(&v[..6], &[0.0, 2.0, -3.0, 0.0, 5.0, 0.0]);
        assert!(v[6..].iter().all(|&x| x == -1.0));
    }

    #[test]
    fn only_ten_nearest_robots_kept() {
        let robots: Vec<_> = (0..15).map(|k| (k, Point2::new(15.0 - k as f64, 0.0))).collect();
        let v = encode(&obs(robots, vec![]));
        let xs: Vec<f64> = v[..20].chunks(2).map(|c| c[0]).collect();
        assert_eq!(xs, (1..=10).map(|d| d as f64).collect::<Vec<_>>());
    }

    #[test]
    fn distance_ties_break_by_id() {
        let robots = vec![(7, Point2::new(0.0, 1.0)), (2, Point2::new(1.0, 0.0))];
        let v = encode(&obs(robots, vec![]));
        assert_eq!(&v[..4], &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn camera_block_capped_at_twenty() {
        let targets: Vec<_> = (0..25).map(|k| (k, Point2::new(0.0, k as f64 + 1.0))).collect();
        let v = encode(&obs(vec![], targets));
        assert!(v[..20].iter().all(|&x| x == -1.0));
        assert_eq!(v[20 + 39], 20.0);
    }

    #[test]
    fn encode_all_rows() {
        let s = generate_scenario(1, ScenarioParams::default(), 3).unwrap();
        assert_eq!(encode_all(&s).unwrap().dim(), (1, 60));

        let s = two_robots_with_observer();
        let x = encode_all(&s).unwrap();
        // Robot 0 sees robot 1 at (8, 0) and robot 2 at (0, -15).
        assert_eq!(x.row(0).iter().take(4).copied().collect::<Vec<_>>(), vec![8.0, 0.0, 0.0, -15.0]);
    }

    #[test]
    fn permuting_robots_permutes_rows() {
        let s = generate_scenario(25, ScenarioParams::default(), 12).unwrap();
        let x = encode_all(&s).unwrap();
        let perm: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();
        let mut p = s.clone();
        for i in 0..25 {
            p.robots[perm[i]] = s.robots[i];
        }
        let xp = encode_all(&p).unwrap();
        for i in 0..25 {
            assert_eq!(x.row(i), xp.row(perm[i]));
        }
    }
}
