use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("at least one ratio is required")]
    NoRatios,
    #[error("ratio {0} is not positive")]
    NonPositive(f64),
    #[error("ratios must sum to 1 (got {0})")]
    BadSum(f64),
}

/// Part sizes by largest-remainder rounding; ties go to the earlier part.
fn part_sizes(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Partitions a dataset into disjoint parts after a seeded shuffle.
pub fn sample_split(dataset: &Dataset, ratios: &[f64], seed: u64) -> Result<Vec<Dataset>, SplitError> {
    if ratios.is_empty() {
        return Err(SplitError::NoRatios);
    }
    if let Some(&r) = ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(SplitError::NonPositive(r));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SplitError::BadSum(sum));
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut parts = Vec::with_capacity(ratios.len());
    let mut cursor = 0;
    for size in part_sizes(dataset.len(), ratios) {
        let idx = &order[cursor..cursor + size];
        cursor += size;
        parts.push(Dataset {
            taxonomy_version: dataset.taxonomy_version.clone(),
            examples: idx.iter().map(|&i| dataset.examples[i].clone()).collect(),
            lines: if dataset.lines.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| dataset.lines[i]).collect()
            },
        });
    }
    Ok(parts)
}
