use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CameraPose;

/// Poses produced by [`poisson_sample_views`], together with the separation
/// that was actually enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub poses: Vec<CameraPose>,
    pub min_dist: f64,
}

const ATTEMPTS_PER_VIEW: usize = 1000;

/// Dart throwing in `[theta1 +- range1] x [theta2 +- range2]` around `center`.
///
/// Distances are Euclidean in degrees. Whenever `n` poses cannot be placed
/// within `1000 * n` throws the separation is halved and sampling restarts.
/// All poses inherit `center.look_at`.
pub fn poisson_sample_views(center: &CameraPose, range1: f64, range2: f64, n: usize, min_dist: f64, seed: u64) -> ViewSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n.max(1);
    let r1 = range1.abs();
    let r2 = range2.abs();
    let mut dist = min_dist.max(0.0);
    loop {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
        for _ in 0..ATTEMPTS_PER_VIEW * n {
            let p = [draw(&mut rng, center.theta1, r1), draw(&mut rng, center.theta2, r2)];
            if pts.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= dist) {
                pts.push(p);
                if pts.len() == n {
                    break;
                }
            }
        }
        if pts.len() == n {
            let poses = pts
                .into_iter()
                .map(|[a, b]| CameraPose {
                    theta1: a,
                    theta2: b,
                    look_at: center.look_at,
                })
                .collect();
            return ViewSample { poses, min_dist: dist };
        }
        log::debug!("placing {n} views at separation {dist} failed, halving");
        dist *= 0.5;
    }
}

fn draw(rng: &mut ChaCha8Rng, c: f64, r: f64) -> f64 {
    if r > 0.0 {
        rng.random_range(c - r..=c + r)
    } else {
        c
    }
}
