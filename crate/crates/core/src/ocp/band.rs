//! Symmetric banded matrices with an in-place Cholesky factorization.

/// Lower band storage: entry `(i, j)` with `0 ≤ i − j ≤ bw` lives at
/// `data[i * (bw + 1) + (i − j)]`.
#[derive(Debug, Clone)]
pub struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Band {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to the symmetric pair `(i, j)`, `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// Replaces row and column `i` by the identity.
    pub fn isolate(&mut self, i: usize) {
        for j in i.saturating_sub(self.bw)..i {
            let s = self.slot(i, j);
            self.data[s] = 0.0;
        }
        for r in i + 1..(i + self.bw + 1).min(self.n) {
            let s = self.slot(r, i);
            self.data[s] = 0.0;
        }
        let s = self.slot(i, i);
        self.data[s] = 1.0;
    }

    /// `A = L Lᵀ` in place; false when a pivot is not positive.
    pub fn cholesky(&mut self) -> bool {
        let bw = self.bw;
        for j in 0..self.n {
            let lo = j.saturating_sub(bw);
            let mut d = self.data[self.slot(j, j)];
            for k in lo..j {
                let v = self.data[self.slot(j, k)];
                d -= v * v;
            }
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            let sjj = self.slot(j, j);
            self.data[sjj] = d;
            for i in j + 1..(j + bw + 1).min(self.n) {
                let mut v = self.data[self.slot(i, j)];
                for k in i.saturating_sub(bw).max(lo)..j {
                    v -= self.data[self.slot(i, k)] * self.data[self.slot(j, k)];
                }
                let s = self.slot(i, j);
                self.data[s] = v / d;
            }
        }
        true
    }

    /// Solves `L Lᵀ x = b` in place after [`Band::cholesky`].
    pub fn solve(&self, b: &mut [f64]) {
        let bw = self.bw;
        for i in 0..self.n {
            let mut v = b[i];
            for k in i.saturating_sub(bw)..i {
                v -= self.data[self.slot(i, k)] * b[k];
            }
            b[i] = v / self.data[self.slot(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut v = b[i];
            for k in i + 1..(i + bw + 1).min(self.n) {
                v -= self.data[self.slot(k, i)] * b[k];
            }
            b[i] = v / self.data[self.slot(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_dense_solve(n in 1usize..30, bw in 0usize..6, seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut band = Band::zeros(n, bw);
            let mut dense = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i.saturating_sub(bw)..=i {
                    let v = if i == j { 10.0 + rng.random_range(0.0..1.0) } else { rng.random_range(-1.0..1.0) };
                    band.add(i, j, v);
                    dense[(i, j)] += v;
                    if i != j {
                        dense[(j, i)] += v;
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let expected = dense.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&b));
            prop_assert!(band.cholesky());
            let mut x = b.clone();
            band.solve(&mut x);
            for i in 0..n {
                prop_assert!((x[i] - expected[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolate_decouples_a_row() {
        let mut b = Band::zeros(3, 1);
        for i in 0..3 {
            b.add(i, i, 4.0);
        }
        b.add(1, 0, 1.0);
        b.add(2, 1, 1.0);
        b.isolate(1);
        assert_eq!((b.get(0, 1), b.get(1, 2), b.get(1, 1)), (0.0, 0.0, 1.0));
        assert_eq!(b.get(0, 0), 4.0);
    }
}
