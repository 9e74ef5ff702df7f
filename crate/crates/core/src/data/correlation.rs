use crate::error::{Error, Result};

/// Grid on which correlation values are stored (2⁻⁴⁰).
///
/// Values on this grid add without rounding, so set correlations are exact
/// sums that do not depend on summation order.
pub const CORR_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

fn quantize(v: f64) -> f64 {
    (v / CORR_QUANTUM).round() * CORR_QUANTUM
}

/// Symmetric `n×n` Pearson correlation of binary attribute labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Builds a matrix from explicit values (quantized, symmetrized from the upper triangle).
    pub fn from_values(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::shape("correlation", &[n, n], &[values.len()]));
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = quantize(values[i * n + j]);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        Ok(Self { n, values: out })
    }
}

/// Pearson correlation between the binary label vectors of every attribute pair.
///
/// `labels` yields the attribute set of each training instance. An attribute
/// that is always present or always absent has no variance: its row is 0 off
/// the diagonal and 1 on it.
pub fn compute_correlation<'a>(labels: impl IntoIterator<Item = &'a [usize]>, n: usize) -> Result<CorrelationMatrix> {
    let mut count = vec![0u64; n];
    let mut joint = vec![0u64; n * n];
    let mut records = 0u64;
    for attrs in labels {
        records += 1;
        for &i in attrs {
            if i >= n {
                return Err(Error::Contract(format!("attribute index {i} out of range for {n} attributes")));
            }
            count[i] += 1;
            for &j in attrs {
                joint[i * n + j] += 1;
            }
        }
    }
    if records < 2 {
        return Err(Error::Contract(format!("correlation needs at least 2 records, got {records}")));
    }
    let total = records as f64;
    let mean: Vec<f64> = count.iter().map(|&c| c as f64 / total).collect();
    // cov(Yi, Yj) = E[Yi·Yj] − E[Yi]·E[Yj]
    let cov = |i: usize, j: usize| joint[i * n + j] as f64 / total - mean[i] * mean[j];
    let degenerate: Vec<bool> = (0..n).map(|i| count[i] == 0 || count[i] == records).collect();
    for (i, _) in degenerate.iter().enumerate().filter(|(_, d)| **d) {
        log::warn!("attribute {i} has zero label variance; its correlations are set to 0");
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            if degenerate[i] || degenerate[j] {
                continue;
            }
            let v = (cov(i, j) / (cov(i, i).sqrt() * cov(j, j).sqrt())).clamp(-1.0, 1.0);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    CorrelationMatrix::from_values(n, &values)
}

/// Correlation between attribute `a` and an attribute set: `Σ_{j∈X} C[a][j]`.
pub fn corr_to_set(c: &CorrelationMatrix, a: usize, set: &[usize]) -> f64 {
    set.iter().map(|&j| c.get(a, j)).sum()
}
