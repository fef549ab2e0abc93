//! Classification metrics: top-1 accuracy and mean class accuracy.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

/// Row = true class, column = predicted class.
#[derive(Debug, Clone)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<usize>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn top1(&self) -> f64 {
        let correct: usize = (0..self.classes)
            .map(|k| self.counts[k * self.classes + k])
            .sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Unweighted mean of per-class recalls (classes without support skipped).
    pub fn mean_class_accuracy(&self) -> f64 {
        let mut sum = 0.0;
        let mut supported = 0usize;
        for k in 0..self.classes {
            let row = &self.counts[k * self.classes..(k + 1) * self.classes];
            let support: usize = row.iter().sum();
            if support > 0 {
                sum += row[k] as f64 / support as f64;
                supported += 1;
            }
        }
        sum / supported.max(1) as f64
    }

    /// Accuracy restricted to a class subset.
    pub fn subset_top1(&self, classes: &[usize]) -> f64 {
        let mut correct = 0usize;
        let mut total = 0usize;
        for &k in classes {
            let row = &self.counts[k * self.classes..(k + 1) * self.classes];
            correct += row[k];
            total += row.iter().sum::<usize>();
        }
        correct as f64 / total.max(1) as f64
    }
}

/// Index of the largest logit (first wins ties).
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
