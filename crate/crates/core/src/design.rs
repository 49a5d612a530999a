use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Latin-hypercube design of `m` points in the unit box.
///
/// Each dimension's coordinates fall in every stratum `[(j-1)/m, j/m)` exactly
/// once; stratum order is an independent random permutation per dimension.
pub fn latin_hypercube(m: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    latin_hypercube_with(m, dims, &mut rng)
}

pub fn latin_hypercube_with<R: Rng>(m: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; m];
    let mut perm: Vec<usize> = (0..m).collect();
    for d in 0..dims {
        perm.shuffle(rng);
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            // keep the sample strictly inside its stratum
            let v = (stratum as f64 + u) / m as f64;
            pts[i][d] = v.min(((stratum + 1) as f64 / m as f64).next_down());
        }
    }
    pts
}
