use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Median and mean of a sample with 95% percentile-bootstrap intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub median_interval: [f64; 2],
    pub mean: f64,
    pub mean_interval: [f64; 2],
}

pub const BOOTSTRAP_RESAMPLES: usize = 2000;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, 0.5)
}

/// Linear-interpolation percentile of an ascending sample, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Summarizes `values`; the bootstrap depends only on `seed`.
pub fn summarize(values: &[f64], seed: u64) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 0 {
        return Summary {
            n,
            median: f64::NAN,
            median_interval: [f64::NAN; 2],
            mean: f64::NAN,
            mean_interval: [f64::NAN; 2],
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medians = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut means = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut draw = vec![0.0; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for d in draw.iter_mut() {
            *d = values[rng.random_range(0..n)];
        }
        means.push(draw.iter().sum::<f64>() / n as f64);
        medians.push(median(&draw));
    }
    medians.sort_by(f64::total_cmp);
    means.sort_by(f64::total_cmp);
    let ci = |v: &[f64]| [percentile_sorted(v, 0.025), percentile_sorted(v, 0.975)];
    Summary {
        n,
        median: median(values),
        median_interval: ci(&medians),
        mean,
        mean_interval: ci(&means),
    }
}
