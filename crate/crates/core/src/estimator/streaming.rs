use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::CovarianceBlocks;
use crate::error::{Error, Result};

/// Fixed-capacity sliding-window mean and covariance.
///
/// Samples are added and evicted with Welford-style rank-one updates; every
/// `capacity` pushes the moments are recomputed from the buffer so rounding
/// drift stays bounded.
#[derive(Debug, Clone)]
pub struct SlidingCovariance {
    capacity: usize,
    buf: VecDeque<DVector<f64>>,
    mean: DVector<f64>,
    /// Sum of outer products of deviations from the mean.
    scatter: DMatrix<f64>,
    since_refresh: usize,
}

impl SlidingCovariance {
    pub fn new(dim: usize, capacity: usize) -> Result<Self> {
        if capacity < 2 || dim == 0 {
            return Err(Error::InvalidInput("sliding window needs capacity >= 2 and dim >= 1".into()));
        }
        Ok(Self {
            capacity,
            buf: VecDeque::with_capacity(capacity),
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.dim() {
            return Err(Error::InvalidInput(format!("sample has {} values, expected {}", sample.len(), self.dim())));
        }
        if self.buf.len() == self.capacity {
            self.pop_oldest();
        }
        let x = DVector::from_column_slice(sample);
        let n = self.buf.len() as f64 + 1.0;
        let before = &x - &self.mean;
        self.mean += &before / n;
        let after = &x - &self.mean;
        self.scatter.ger(1.0, &before, &after, 1.0);
        self.buf.push_back(x);
        self.since_refresh += 1;
        if self.since_refresh >= self.capacity {
            self.refresh();
        }
        Ok(())
    }

    /// Evict the oldest sample.
    pub fn pop_oldest(&mut self) -> Option<DVector<f64>> {
        let x = self.buf.pop_front()?;
        let n = self.buf.len() as f64;
        if self.buf.is_empty() {
            self.mean.fill(0.0);
            self.scatter.fill(0.0);
            return Some(x);
        }
        let old_mean = self.mean.clone();
        self.mean = (&old_mean * (n + 1.0) - &x) / n;
        let a = &x - &self.mean;
        let b = &x - &old_mean;
        self.scatter.ger(-1.0, &a, &b, 1.0);
        Some(x)
    }

    /// Exact recomputation from the buffered samples.
    pub fn refresh(&mut self) {
        self.since_refresh = 0;
        let n = self.buf.len();
        self.mean.fill(0.0);
        self.scatter.fill(0.0);
        if n == 0 {
            return;
        }
        for x in &self.buf {
            self.mean += x;
        }
        self.mean /= n as f64;
        for x in &self.buf {
            let dev = x - &self.mean;
            self.scatter.ger(1.0, &dev, &dev, 1.0);
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance with divisor `N − 1`, symmetrized.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.buf.len();
        if n < 2 {
            return Err(Error::InsufficientSamples { have: n, need: 2 });
        }
        let c = &self.scatter / (n - 1) as f64;
        Ok((&c + c.transpose()) * 0.5)
    }

    /// Blocks for a `[δ̃, ω̃]` sample layout; `window` is caller metadata.
    pub fn blocks(&self, window: (f64, f64)) -> Result<CovarianceBlocks> {
        if self.dim() % 2 != 0 {
            return Err(Error::InvalidInput("state dimension must be even for block split".into()));
        }
        Ok(CovarianceBlocks::from_joint(&self.covariance()?, window, self.buf.len()))
    }
}
