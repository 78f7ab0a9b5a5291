use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Farthest point sampling. The first index is drawn uniformly from `seed`;
/// each later pick maximizes the distance to the nearest point already
/// chosen, ties going to the lowest index.
pub fn farthest_point_sample(points: &[[f64; 3]], count: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if count > n {
        return Err(Error::Config(format!(
            "cannot sample {count} control points from {n} points"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut chosen = Vec::with_capacity(count);
    // Squared distance to the nearest chosen point; -1 marks chosen points.
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        chosen.push(current);
        nearest[current] = -1.0;
        if chosen.len() == count {
            break;
        }
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if nearest[i] < 0.0 {
                continue;
            }
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(chosen)
}
