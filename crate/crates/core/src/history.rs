//! Fixed-capacity ring buffer of per-velocity samples taken every `step`.

use crate::operators::FluxHistory;

#[derive(Debug, Clone)]
pub struct TraceHistory {
    cells: usize,
    capacity: usize,
    step: f64,
    data: Vec<f64>,
    // slot of the newest sample
    head: usize,
    len: usize,
}

impl TraceHistory {
    pub fn new(cells: usize, capacity: usize, step: f64) -> Self {
        assert!(cells > 0 && capacity > 0 && step > 0.0);
        Self {
            cells,
            capacity,
            step,
            data: vec![0.0; cells * capacity],
            head: capacity - 1,
            len: 0,
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends the newest sample, evicting the oldest when full.
    pub fn push(&mut self, sample: &[f64]) {
        assert_eq!(sample.len(), self.cells);
        self.head = (self.head + 1) % self.capacity;
        let at = self.head * self.cells;
        self.data[at..at + self.cells].copy_from_slice(sample);
        self.len = (self.len + 1).min(self.capacity);
    }

    /// Sample `n` steps back; `lag(0)` is the newest.
    pub fn lag(&self, n: usize) -> &[f64] {
        assert!(
            n < self.len,
            "lag {n} beyond stored history of {}",
            self.len
        );
        let slot = (self.head + self.capacity - n) % self.capacity;
        &self.data[slot * self.cells..(slot + 1) * self.cells]
    }

    /// Linear interpolation at fractional lag `p ≥ 0` (in steps).
    pub fn interpolate(&self, p: f64, out: &mut [f64]) {
        let n = (p.floor().max(0.0) as usize).min(self.len - 1);
        let frac = (p - n as f64).clamp(0.0, 1.0);
        let a = self.lag(n);
        if frac == 0.0 || n + 1 >= self.len {
            out.copy_from_slice(a);
        } else {
            let b = self.lag(n + 1);
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o = (1.0 - frac) * x + frac * y;
            }
        }
    }

    /// Value of one cell at fractional lag `p`.
    pub fn interpolate_cell(&self, p: f64, k: usize) -> f64 {
        let n = (p.floor().max(0.0) as usize).min(self.len - 1);
        let frac = (p - n as f64).clamp(0.0, 1.0);
        let a = self.lag(n)[k];
        if frac == 0.0 || n + 1 >= self.len {
            a
        } else {
            (1.0 - frac) * a + frac * self.lag(n + 1)[k]
        }
    }
}

impl FluxHistory for TraceHistory {
    fn span(&self) -> f64 {
        self.len.saturating_sub(1) as f64 * self.step
    }

    fn trace(&self, theta: f64, out: &mut [f64]) {
        self.interpolate(-theta / self.step, out);
    }
}
