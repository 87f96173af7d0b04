//! Symmetric banded matrices and their Cholesky factors.
//!
//! The structured P1 meshes number nodes row by row, so every operator on the
//! free degrees of freedom is banded with half-bandwidth `n + 2`. Storage keeps
//! the lower band only.

use crate::error::{Error, Result};
use nalgebra::DVector;

#[derive(Debug, Clone, PartialEq)]
pub struct BandedSymmetric {
    n: usize,
    bw: usize,
    // Row i holds columns i-bw ..= i at offsets 0 ..= bw.
    data: Vec<f64>,
}

impl BandedSymmetric {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to the symmetric pair `(i, j)` / `(j, i)`.
    ///
    /// # Panics
    /// If the entry lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// `self += s * other`; both must share shape.
    pub fn axpy(&mut self, s: f64, other: &BandedSymmetric) {
        assert_eq!((self.n, self.bw), (other.n, other.bw));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Linear combination `Σ_q c_q B_q` of same-shape matrices.
    pub fn combination(coeffs: &[f64], blocks: &[BandedSymmetric]) -> Self {
        assert_eq!(coeffs.len(), blocks.len());
        assert!(!blocks.is_empty());
        let mut out = Self::zeros(blocks[0].n, blocks[0].bw);
        for (c, b) in coeffs.iter().zip(blocks) {
            out.axpy(*c, b);
        }
        out
    }

    pub fn mul(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = 0.0;
            for j in lo..i {
                let a = row[j + self.bw - i];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc + row[self.bw] * x[i];
        }
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let mut l = self.data.clone();
        let at = |i: usize, j: usize| i * (bw + 1) + (j + bw - i);
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = l[at(i, j)];
                for k in lo..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite {
                            context: format!("banded Cholesky pivot {i} = {s:e}"),
                        });
                    }
                    l[at(i, i)] = s.sqrt();
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }
}

/// Lower-triangular banded factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (j + self.bw - i)]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.at(i, k) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [f64]) {
        assert_eq!(y.len(), self.n);
        for i in (0..self.n).rev() {
            let mut s = y[i];
            let hi = (i + self.bw).min(self.n - 1);
            for k in i + 1..=hi {
                s -= self.at(k, i) * y[k];
            }
            y[i] = s / self.at(i, i);
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_lower_in_place(b);
        self.solve_upper_in_place(b);
    }

    pub fn solve(&self, b: &[f64]) -> DVector<f64> {
        let mut x = DVector::from_column_slice(b);
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// `Lᵀ x`.
    pub fn mul_upper(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        DVector::from_fn(self.n, |i, _| {
            let hi = (i + self.bw).min(self.n - 1);
            (i..=hi).map(|k| self.at(k, i) * x[k]).sum()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, bw: usize, seed: u64) -> BandedSymmetric {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandedSymmetric::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                a.add(i, j, rng.random_range(-1.0..1.0));
            }
        }
        // Diagonal dominance.
        for i in 0..n {
            a.add(i, i, 2.0 * (bw as f64) + 1.0);
        }
        a
    }

    #[test]
    fn cholesky_matches_dense_solve() {
        let a = random_spd(40, 5, 1);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = a.cholesky().unwrap().solve(&b);
        let dense = a.to_dense();
        let xd = dense.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        assert!((x - xd).norm() < 1e-12);
        let ax = a.mul(x_slice(&a.cholesky().unwrap().solve(&b)));
        let r = ax - DVector::from_vec(b);
        assert!(r.norm() < 1e-12);
    }

    fn x_slice(v: &DVector<f64>) -> &[f64] {
        v.as_slice()
    }

    #[test]
    fn factor_reproduces_matrix() {
        let a = random_spd(25, 3, 7);
        let c = a.cholesky().unwrap();
        let x: Vec<f64> = (0..25).map(|i| 1.0 + i as f64).collect();
        // xᵀAx = ‖Lᵀx‖²
        let q = a.bilinear(&x, &x);
        let lt = c.mul_upper(&x);
        assert!((q - lt.norm_squared()).abs() < 1e-10 * q);
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = BandedSymmetric::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 2, 1.0);
        assert!(matches!(
            a.cholesky(),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
