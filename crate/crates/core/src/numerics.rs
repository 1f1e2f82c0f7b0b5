//! Dense row-major linear algebra, seeded random streams and batch statistics.
//!
//! Everything here is `f64` and single-threaded. Loop orders are fixed so that
//! results are bit-identical from run to run.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ClaireError, Result};

/// Ridge added to the normal equations of the weighted least-squares solver.
pub const WLS_RIDGE: f64 = 1e-10;

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ClaireError::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(ClaireError::Shape {
                    op: "from_rows",
                    left: (i, cols),
                    right: (i, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield no rows
        let cols = self.cols.max(1);
        self.data
            .chunks_exact(cols)
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// New matrix holding the given columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * indices.len());
        for r in self.iter_rows() {
            data.extend(indices.iter().map(|&j| r[j]));
        }
        Self {
            rows: self.rows,
            cols: indices.len(),
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(ClaireError::Shape {
                op: "vstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// `self · otherᵀ` without materialising a transposed copy of `self`.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(ClaireError::Shape {
                op: "matmul_transposed",
                left: self.shape(),
                right: other.shape(),
            });
        }
        matmul(self, &other.transpose())
    }

    /// `selfᵀ · other`.
    pub fn transposed_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(ClaireError::Shape {
                op: "transposed_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let dst = out.row_mut(i);
                for (d, &bj) in dst.iter_mut().zip(b) {
                    *d += ai * bj;
                }
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

// Matrices travel through JSON as nested arrays, one inner array per row.
impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for r in self.iter_rows() {
            seq.serialize_element(r)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        Matrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Standard matrix product. The `i-k-j` loop order is fixed, so the result
/// is bit-identical across runs.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(ClaireError::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let dst = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (d, &bkj) in dst.iter_mut().zip(b_row) {
                *d += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Per-column mean and population variance (divisor = row count).
pub fn column_mean_var(m: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if m.rows == 0 {
        return Err(ClaireError::EmptyInput("column_mean_var on zero rows".into()));
    }
    let n = m.rows as f64;
    let mut mean = vec![0.0; m.cols];
    for r in m.iter_rows() {
        for (acc, &v) in mean.iter_mut().zip(r) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; m.cols];
    for r in m.iter_rows() {
        for ((acc, &v), &mu) in var.iter_mut().zip(r).zip(&mean) {
            let d = v - mu;
            *acc += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    Ok((mean, var))
}

/// Cholesky factor `L` of a symmetric positive-definite matrix (`A = L Lᵀ`).
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(ClaireError::Shape {
            op: "cholesky",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(ClaireError::Conditioning(format!(
                "matrix is not positive definite (pivot {j} = {diag:e})"
            )));
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` for every column of `B`, given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.rows;
    if b.rows != n {
        return Err(ClaireError::Shape {
            op: "cholesky_solve",
            left: l.shape(),
            right: b.shape(),
        });
    }
    let mut x = b.clone();
    for c in 0..b.cols {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Coefficients minimising `Σ wᵢ ‖designᵢ·β − targetsᵢ‖²`, one column of `β`
/// per target column. Solved through ridge-damped normal equations
/// `(XᵀWX + 1e-10·I) β = XᵀWY`.
pub fn solve_weighted_least_squares(design: &Matrix, targets: &Matrix, weights: &[f64]) -> Result<Matrix> {
    if design.rows != targets.rows || design.rows != weights.len() {
        return Err(ClaireError::Shape {
            op: "solve_weighted_least_squares",
            left: design.shape(),
            right: (targets.rows, weights.len()),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(ClaireError::Conditioning(format!(
            "weights must be finite and nonnegative, found {w}"
        )));
    }
    let p = design.cols;
    let mut normal = Matrix::zeros(p, p);
    let mut rhs = Matrix::zeros(p, targets.cols);
    for (r, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let x = design.row(r);
        let y = targets.row(r);
        for i in 0..p {
            let wxi = w * x[i];
            if wxi == 0.0 {
                continue;
            }
            let nrow = normal.row_mut(i);
            for (n, &xj) in nrow.iter_mut().zip(x) {
                *n += wxi * xj;
            }
            let rrow = rhs.row_mut(i);
            for (t, &yj) in rrow.iter_mut().zip(y) {
                *t += wxi * yj;
            }
        }
    }
    for i in 0..p {
        normal[(i, i)] += WLS_RIDGE;
    }
    let l = cholesky(&normal)?;
    let beta = cholesky_solve(&l, &rhs)?;
    if !beta.is_finite() {
        return Err(ClaireError::Conditioning(
            "weighted least-squares solution is not finite".into(),
        ));
    }
    Ok(beta)
}

/// Deterministic random stream. ChaCha8 keeps draw sequences identical across
/// platforms for a given seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this stream's seed and a name.
    /// Depends only on the seed, never on how many draws were taken.
    pub fn substream(&self, name: &str) -> RngStream {
        RngStream::new(derive_seed(self.seed, name))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// SplitMix64 finaliser over the seed mixed with an FNV-1a hash of the name.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random matrix with entries uniform on `[lo, hi)`.
pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut RngStream) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform_range(lo, hi)).collect();
    Matrix { rows, cols, data }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mu = mean(values);
    values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let v = Matrix::from_rows(&[[2.0], [3.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&v).unwrap(), v);
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_slice(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngStream::new(7);
        let a = random_matrix(5, 7, -1.0, 1.0, &mut rng);
        let b = random_matrix(7, 3, -1.0, 1.0, &mut rng);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).abs() <= 1e-14, "{x} vs {y}");
        }
        let bt = b.transpose();
        let via_t = a.matmul_transposed(&bt).unwrap();
        assert_eq!(via_t, fast);
        let at = a.transpose();
        let via_tm = at.transposed_matmul(&b).unwrap();
        for (x, y) in via_tm.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).abs() <= 1e-14);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn mean_var_cases() {
        let (m, v) = column_mean_var(&Matrix::from_rows(&[[1.0], [3.0]]).unwrap()).unwrap();
        assert_eq!((m[0], v[0]), (2.0, 1.0));
        let (_, v) = column_mean_var(&Matrix::from_rows(&[[4.0], [4.0], [4.0]]).unwrap()).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(matches!(
            column_mean_var(&Matrix::zeros(0, 3)),
            Err(ClaireError::EmptyInput(_))
        ));
    }

    #[test]
    fn mean_var_matches_two_pass_reference() {
        let mut rng = RngStream::new(11);
        let m = random_matrix(20, 4, -3.0, 5.0, &mut rng);
        let (mean, var) = column_mean_var(&m).unwrap();
        for j in 0..4 {
            let col = m.column(j);
            let mu: f64 = col.iter().sum::<f64>() / 20.0;
            let s2: f64 = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 20.0;
            assert!((mean[j] - mu).abs() < 1e-14);
            assert!((var[j] - s2).abs() < 1e-14);
        }
    }

    #[test]
    fn wls_identity_and_line() {
        let targets = Matrix::from_rows(&[[1.5], [-2.0], [0.25]]).unwrap();
        let beta = solve_weighted_least_squares(&Matrix::identity(3), &targets, &[1.0; 3]).unwrap();
        for (b, t) in beta.as_slice().iter().zip(targets.as_slice()) {
            assert!((b - t).abs() < 1e-9);
        }
        let design = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let y = Matrix::from_rows(&[[2.0], [4.0], [6.0]]).unwrap();
        let slope = solve_weighted_least_squares(&design, &y, &[1.0; 3]).unwrap();
        assert!((slope[(0, 0)] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn wls_matches_extended_precision_normal_equations() {
        // Oracle: explicit normal equations accumulated with compensated
        // (Kahan) sums and solved by Gaussian elimination with partial pivoting.
        let mut rng = RngStream::new(3);
        let x = random_matrix(50, 6, -1.0, 1.0, &mut rng);
        let y = random_matrix(50, 2, -1.0, 1.0, &mut rng);
        let w: Vec<f64> = (0..50).map(|_| rng.uniform_range(0.1, 2.0)).collect();
        let beta = solve_weighted_least_squares(&x, &y, &w).unwrap();

        let kahan = |terms: &mut dyn Iterator<Item = f64>| {
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for t in terms {
                let yk = t - c;
                let tk = s + yk;
                c = (tk - s) - yk;
                s = tk;
            }
            s
        };
        for col in 0..2 {
            let mut aug = vec![vec![0.0; 7]; 6];
            for i in 0..6 {
                for j in 0..6 {
                    aug[i][j] = kahan(&mut (0..50).map(|r| w[r] * x[(r, i)] * x[(r, j)]));
                }
                aug[i][6] = kahan(&mut (0..50).map(|r| w[r] * x[(r, i)] * y[(r, col)]));
            }
            for p in 0..6 {
                let piv = (p..6)
                    .max_by(|&a, &b| aug[a][p].abs().total_cmp(&aug[b][p].abs()))
                    .unwrap();
                aug.swap(p, piv);
                for r in (p + 1)..6 {
                    let f = aug[r][p] / aug[p][p];
                    for c in p..7 {
                        aug[r][c] -= f * aug[p][c];
                    }
                }
            }
            let mut sol = [0.0; 6];
            for i in (0..6).rev() {
                let s: f64 = ((i + 1)..6).map(|k| aug[i][k] * sol[k]).sum();
                sol[i] = (aug[i][6] - s) / aug[i][i];
            }
            for i in 0..6 {
                assert!(
                    (beta[(i, col)] - sol[i]).abs() < 1e-8,
                    "{} vs {}",
                    beta[(i, col)],
                    sol[i]
                );
            }
        }
    }

    #[test]
    fn wls_singular_beyond_ridge_is_conditioning_error() {
        let design = Matrix::from_rows(&[[1e200, 1e200], [1e200, 1e200]]).unwrap();
        let y = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert!(matches!(
            solve_weighted_least_squares(&design, &y, &[1.0, 1.0]),
            Err(ClaireError::Conditioning(_))
        ));
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngStream::new(99);
        let mut b = RngStream::new(99);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(a.substream("shuffle").next_u64(), a.substream("dropout").next_u64());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0]), Some(2.0));
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(&[]), None);
    }

    fn arb_matrix(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-2.0f64..2.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative((a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(m, n, p, q)| (arb_matrix(m, n), arb_matrix(n, p), arb_matrix(p, q)))) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.as_slice().iter().fold(1.0f64, |s, v| s.max(v.abs()));
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn shifting_rows_shifts_means_only(m in arb_matrix(6, 3), shift in -10.0f64..10.0) {
            let (mu, var) = column_mean_var(&m).unwrap();
            let shifted = m.map(|v| v + shift);
            let (mu2, var2) = column_mean_var(&shifted).unwrap();
            for j in 0..3 {
                prop_assert!((mu2[j] - mu[j] - shift).abs() < 1e-12);
                prop_assert!((var2[j] - var[j]).abs() < 1e-12);
            }
        }
    }
}
