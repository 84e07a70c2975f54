//! Dense row-major `[channels, time]` value container.

use crate::error::{Error, Result};

/// A 2-D grid of f64 values, row-major with time contiguous. Kernel
/// parameters fold their trailing dimensions into `time` (e.g. a
/// `[C_out, C_in, K]` kernel is stored as `[C_out, C_in*K]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub channels: usize,
    pub time: usize,
    pub data: Vec<f64>,
    /// When false on a graph input, backward skips materializing its
    /// gradient. Parameters always accumulate gradients.
    pub requires_grad: bool,
}

impl ValueGrid {
    pub fn new(channels: usize, time: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * time {
            return Err(Error::shape(format!(
                "grid data length {} != {channels}x{time}",
                data.len()
            )));
        }
        Ok(ValueGrid {
            channels,
            time,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(channels: usize, time: usize) -> Self {
        ValueGrid {
            channels,
            time,
            data: vec![0.0; channels * time],
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> Self {
        ValueGrid {
            channels: 1,
            time: 1,
            data: vec![v],
            requires_grad: false,
        }
    }

    /// Single-channel grid over a sample slice.
    pub fn from_samples(samples: &[f64]) -> Self {
        ValueGrid {
            channels: 1,
            time: samples.len(),
            data: samples.to_vec(),
            requires_grad: false,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.time)
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize) -> f64 {
        debug_assert!(c < self.channels && t < self.time);
        self.data[c * self.time + t]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, t: usize) -> &mut f64 {
        debug_assert!(c < self.channels && t < self.time);
        &mut self.data[c * self.time + t]
    }

    #[inline]
    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.time..(c + 1) * self.time]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.time..(c + 1) * self.time]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &ValueGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "add_assign: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major_time_contiguous() {
        let g = ValueGrid::new(2, 3, vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        assert_eq!(g.at(0, 2), 2.0);
        assert_eq!(g.at(1, 0), 10.0);
        assert_eq!(g.row(1), &[10.0, 11.0, 12.0]);
        assert!(ValueGrid::new(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn add_assign_checks_shape() {
        let mut a = ValueGrid::zeros(2, 2);
        let b = ValueGrid::new(2, 2, vec![1.0; 4]).unwrap();
        a.add_assign(&b).unwrap();
        assert_eq!(a.data, vec![1.0; 4]);
        assert!(a.add_assign(&ValueGrid::zeros(1, 4)).is_err());
    }
}
