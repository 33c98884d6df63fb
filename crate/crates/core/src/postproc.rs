//! Majority vote over a sliding window of per-frame predictions.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::train::network::NUM_CLASSES;

pub const DEFAULT_WINDOW: usize = 5;

/// FIFO of the most recent predictions. The emitted class is the most
/// frequent one in the buffer; ties go to the class seen most recently.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeWindow {
    capacity: usize,
    buffer: VecDeque<usize>,
}

impl Default for ModeWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW).expect("nonzero")
    }
}

impl ModeWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("vote window must hold at least one frame".into()));
        }
        Ok(Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn buffer(&self) -> &VecDeque<usize> {
        &self.buffer
    }

    pub fn clear(&mut self) {
        self.buffer.clear();
    }

    /// Pushes `pred` (evicting the oldest entry when full) and returns the
    /// current mode. Panics if `pred` is not a class index.
    pub fn push_and_predict(&mut self, pred: usize) -> usize {
        assert!(pred < NUM_CLASSES, "class {pred} out of range");
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(pred);
        let mut counts = [0usize; NUM_CLASSES];
        let mut last = [0usize; NUM_CLASSES];
        for (i, &p) in self.buffer.iter().enumerate() {
            counts[p] += 1;
            last[p] = i;
        }
        (0..NUM_CLASSES)
            .filter(|&c| counts[c] > 0)
            .max_by_key(|&c| (counts[c], last[c]))
            .expect("buffer is non-empty")
    }
}

/// Smooths one session's ordered predictions with a fresh window.
pub fn apply_to_stream(capacity: usize, preds: &[usize]) -> Result<Vec<usize>> {
    if let Some(&p) = preds.iter().find(|&&p| p >= NUM_CLASSES) {
        return Err(Error::InvalidArgument(format!("class {p} out of range")));
    }
    let mut w = ModeWindow::new(capacity)?;
    Ok(preds.iter().map(|&p| w.push_and_predict(p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last(w: usize, xs: &[usize]) -> usize {
        *apply_to_stream(w, xs).unwrap().last().unwrap()
    }

    #[test]
    fn majority() {
        assert_eq!(last(5, &[1, 1, 2, 1, 3]), 1);
    }

    #[test]
    fn warm_up() {
        assert_eq!(last(5, &[2]), 2);
    }

    #[test]
    fn tie_goes_to_most_recent() {
        assert_eq!(last(5, &[1, 1, 2, 2]), 2);
        assert_eq!(last(5, &[2, 2, 1, 1]), 1);
    }

    #[test]
    fn eviction() {
        assert_eq!(last(3, &[0, 0, 0, 3, 3]), 3);
    }

    #[test]
    fn isolated_flip_is_removed() {
        let mut xs = vec![2; 12];
        xs[6] = 0;
        assert_eq!(apply_to_stream(5, &xs).unwrap(), vec![2; 12]);
    }

    #[test]
    fn rejects_zero_window_and_bad_class() {
        assert!(ModeWindow::new(0).is_err());
        assert!(apply_to_stream(5, &[4]).is_err());
    }
}
