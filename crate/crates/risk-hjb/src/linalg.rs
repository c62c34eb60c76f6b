//! Small dense/banded linear algebra kernels used by the grid solvers.
//!
//! The implicit time step assembles a banded system whose matrix is fixed
//! for the whole solve, so the LU factorization is done once and reused
//! for every step. Storage follows the LAPACK band layout: entry `(i, j)`
//! lives at `ab[j * ldab + kv + i - j]` with `kv = kl + ku`, leaving `kl`
//! extra superdiagonals for pivoting fill.

use crate::error::{Error, Result};

/// Banded matrix with `kl` subdiagonals and `ku` superdiagonals.
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
            ipiv: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn kv(&self) -> usize {
        self.kl + self.ku
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry is outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(!self.factored, "matrix already factored");
        let kv = self.kv() as isize;
        let off = kv + i as isize - j as isize;
        assert!(
            off >= kv - self.ku as isize && off <= kv + self.kl as isize,
            "entry ({i},{j}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        self.ab[j * self.ldab + off as usize] += v;
    }

    /// LU factorization with row partial pivoting (LAPACK `gbtrf` scheme).
    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kv();
        let ldab = self.ldab;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // pivot among rows j..=j+km in column j
            let mut jp = 0usize;
            let mut best = self.ab[j * ldab + kv].abs();
            for p in 1..=km {
                let v = self.ab[j * ldab + kv + p].abs();
                if v > best {
                    best = v;
                    jp = p;
                }
            }
            self.ipiv[j] = j + jp;
            let pivot = self.ab[j * ldab + kv + jp];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Solver(format!(
                    "banded LU breakdown at column {j} (pivot {pivot})"
                )));
            }
            if jp != 0 {
                // swap rows j and j+jp across the affected columns
                let hi = (j + kv).min(n - 1);
                for col in j..=hi {
                    let o1 = col * ldab + (kv + j - col);
                    let o2 = col * ldab + (kv + j + jp - col);
                    self.ab.swap(o1, o2);
                }
            }
            let pivot = self.ab[j * ldab + kv];
            for p in 1..=km {
                let mult = self.ab[j * ldab + kv + p] / pivot;
                self.ab[j * ldab + kv + p] = mult;
                if mult != 0.0 {
                    let hi = (j + kv).min(n - 1);
                    for col in (j + 1)..=hi {
                        let uj = self.ab[col * ldab + (kv + j - col)];
                        if uj != 0.0 {
                            self.ab[col * ldab + (kv + j + p - col)] -= mult * uj;
                        }
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place using the stored factorization.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "call factor() first");
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        let kv = self.kv();
        let ldab = self.ldab;
        // forward: permute and apply L
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            for q in 1..=km {
                b[j + q] -= self.ab[j * ldab + kv + q] * b[j];
            }
        }
        // back substitution with U (bandwidth kv)
        for j in (0..n).rev() {
            let mut s = b[j];
            let hi = (j + kv).min(n - 1);
            for col in (j + 1)..=hi {
                s -= self.ab[col * ldab + (kv + j - col)] * b[col];
            }
            b[j] = s / self.ab[j * ldab + kv];
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix given row-major as a slice.
pub fn min_symmetric_eigenvalue(dim: usize, data: &[f64]) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(dim, dim, data);
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix, nalgebra::DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if j + kl >= i && i + ku >= j {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    let v = if i == j { v + 4.0 } else { v };
                    band.add(i, j, v);
                    dense[(i, j)] = v;
                }
            }
        }
        (band, dense)
    }

    #[test]
    fn banded_lu_matches_dense_solve() {
        for (n, kl, ku, seed) in [(12, 2, 2, 1u64), (30, 4, 7, 2), (50, 1, 1, 3), (25, 6, 3, 4)] {
            let (mut band, dense) = random_banded(n, kl, ku, seed);
            band.factor().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut x = b.clone();
            band.solve_in_place(&mut x);
            let xd = dense
                .lu()
                .solve(&nalgebra::DVector::from_column_slice(&b))
                .unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - xd[i]).abs() < 1e-10,
                    "n={n} kl={kl} ku={ku}: x[{i}]={} vs {}",
                    x[i],
                    xd[i]
                );
            }
        }
    }

    #[test]
    fn banded_lu_pivots_on_weak_diagonal() {
        // constraint-style rows (diag 1, off-diag -2/+1) need pivoting to stay stable
        let n = 8;
        let mut band = BandMatrix::zeros(n, 2, 2);
        let mut dense = nalgebra::DMatrix::zeros(n, n);
        let mut put = |band: &mut BandMatrix, i: usize, j: usize, v: f64| {
            band.add(i, j, v);
            dense[(i, j)] = v;
        };
        put(&mut band, 0, 0, 1.0);
        put(&mut band, 0, 1, -2.0);
        put(&mut band, 0, 2, 1.0);
        for i in 1..n - 1 {
            put(&mut band, i, i - 1, -0.45);
            put(&mut band, i, i, 1.02);
            put(&mut band, i, i + 1, -0.55);
        }
        put(&mut band, n - 1, n - 1, 1.0);
        put(&mut band, n - 1, n - 2, -2.0);
        put(&mut band, n - 1, n - 3, 1.0);
        band.factor().unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = b.clone();
        band.solve_in_place(&mut x);
        let xd = dense
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&b))
            .unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_reports_breakdown() {
        let mut band = BandMatrix::zeros(3, 1, 1);
        band.add(0, 0, 1.0);
        band.add(1, 1, 0.0);
        band.add(2, 2, 1.0);
        assert!(band.factor().is_err());
    }
}
