//! Compensated summation with a fixed reduction order.
//!
//! Every reduction in the crate goes through [`Compensated`] so that results
//! depend only on the input order, never on how work is split across threads.

/// Neumaier (improved Kahan–Babuška) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Three-component compensated accumulator for vector sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedVec {
    parts: [Compensated; 3],
}

impl CompensatedVec {
    #[inline]
    pub fn add(&mut self, v: &[f64; 3]) {
        self.parts[0].add(v[0]);
        self.parts[1].add(v[1]);
        self.parts[2].add(v[2]);
    }

    #[inline]
    pub fn add_scaled(&mut self, v: &[f64; 3], s: f64) {
        self.parts[0].add(v[0] * s);
        self.parts[1].add(v[1] * s);
        self.parts[2].add(v[2] * s);
    }

    pub fn value(&self) -> [f64; 3] {
        [
            self.parts[0].value(),
            self.parts[1].value(),
            self.parts[2].value(),
        ]
    }
}

pub fn sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = Compensated::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum(a.iter().zip(b).map(|(x, y)| x * y))
}
