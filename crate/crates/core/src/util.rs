//! Small numeric helpers.

use crate::scalar::Real;

/// Kahan–Babuška compensated accumulator.
///
/// Enumeration sweeps add millions of tiny atom weights to totals that
/// are later compared at 1e-12; plain summation would leak rounding
/// error of the same order.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<F> {
    sum: F,
    carry: F,
}

impl<F: Real> KahanSum<F> {
    pub fn new() -> Self {
        Self {
            sum: F::zero(),
            carry: F::zero(),
        }
    }

    pub fn add(&mut self, x: F) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> F {
        self.sum + self.carry
    }
}

impl<F: Real> Default for KahanSum<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Pairwise sum of a slice; deterministic for a fixed element order no
/// matter how the elements were produced.
pub fn pairwise_sum<F: Real>(xs: &[F]) -> F {
    match xs.len() {
        0 => F::zero(),
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Sample mean and standard error via pairwise sums.
pub fn mean_and_std_error<F: Real>(xs: &[F]) -> (F, F) {
    let n = F::from_usize(xs.len()).unwrap();
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, F::zero());
    }
    let sq: Vec<F> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - F::one());
    (mean, (var / n).sqrt())
}

/// FNV-1a over a byte stream; stable across platforms and builds.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Self(0xcbf29ce484222325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn write_u64(&mut self, x: u64) {
        self.write(&x.to_le_bytes());
    }

    pub fn write_f64(&mut self, x: f64) {
        self.write_u64(x.to_bits());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}
