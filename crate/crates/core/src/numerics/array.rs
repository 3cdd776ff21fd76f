use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};

/// Dense row-major array of `f64`.
///
/// Most of the crate works with rank-2 arrays. A rank-1 array of length `n`
/// behaves as a `1 × n` row wherever a matrix is expected.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) && !data.is_empty() {
            return Err(shape_err!("zero-sized dimension in {shape:?} with {} values", data.len()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// A `1 × n` row.
    pub fn row_vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self {
            shape: vec![1, n],
            data,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self {
            shape: vec![n],
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(shape_err!("ragged rows"));
        }
        Self::matrix(r, c, rows.concat())
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn row_array(&self, r: usize) -> DenseArray {
        DenseArray::row_vector(self.row(r).to_vec())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Same data viewed as `rows × cols`.
    pub fn as_matrix(&self) -> DenseArray {
        DenseArray {
            shape: vec![self.rows(), self.cols()],
            data: self.data.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseArray {
        DenseArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &DenseArray, f: impl Fn(f64, f64) -> f64) -> Result<DenseArray> {
        if self.data.len() != other.data.len() {
            return Err(shape_err!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(DenseArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &DenseArray) -> Result<DenseArray> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseArray) -> Result<DenseArray> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> DenseArray {
        self.map(|v| v * k)
    }

    pub fn add_assign_scaled(&mut self, other: &DenseArray, k: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &DenseArray) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseArray) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> DenseArray {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        DenseArray {
            shape: vec![c, r],
            data: out,
        }
    }

    pub fn matmul(&self, other: &DenseArray) -> Result<DenseArray> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(shape_err!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(DenseArray {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &DenseArray) -> Result<DenseArray> {
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(shape_err!("matmul_t {m}x{k} by ({n}x{k2})ᵀ"));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(DenseArray {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> DenseArray {
        let mut out = self.as_matrix();
        let c = out.cols();
        for row in out.data.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        out.shape = self.shape.clone();
        out
    }

    /// Mean over rows, as a `1 × cols` row.
    pub fn mean_rows(&self) -> Result<DenseArray> {
        let (r, c) = (self.rows(), self.cols());
        if r == 0 {
            return Err(Error::Precondition("mean over zero rows".into()));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(DenseArray::row_vector(out))
    }

    pub fn select_rows(&self, idx: &[usize]) -> DenseArray {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseArray {
            shape: vec![idx.len(), c],
            data,
        }
    }

    /// Column `j` as an `rows × 1` array.
    pub fn select_cols(&self, j: usize) -> DenseArray {
        let r = self.rows();
        DenseArray {
            shape: vec![r, 1],
            data: (0..r).map(|i| self.get(i, j)).collect(),
        }
    }

    pub fn vstack(parts: &[&DenseArray]) -> Result<DenseArray> {
        let c = parts.first().map_or(0, |p| p.cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.cols() != c {
                return Err(shape_err!("vstack column mismatch {} vs {c}", p.cols()));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        DenseArray::matrix(rows, c, data)
    }

    pub fn normalized(&self) -> DenseArray {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n)
        } else {
            self.clone()
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &DenseArray, b: &DenseArray) -> DenseArray {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = DenseArray::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_and_zero_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DenseArray::randn(&[3, 3], 1.0, &mut rng);
        assert_eq!(DenseArray::identity(3).matmul(&a).unwrap(), a);
        let z = a.matmul(&DenseArray::zeros(&[3, 2])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = DenseArray::randn(&[4, 3], 1.0, &mut rng);
            let b = DenseArray::randn(&[3, 2], 1.0, &mut rng);
            assert!(a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
            let bt = b.transpose();
            assert!(a.matmul_t(&bt).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = DenseArray::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&a), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_cases() {
        let s = DenseArray::row_vector(vec![0.0, 0.0, 0.0]).softmax_rows();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(DenseArray::row_vector(vec![42.0]).softmax_rows().data(), &[1.0]);
        let s = DenseArray::row_vector(vec![1000.0, 0.0]).softmax_rows();
        // shifted closed form: [1/(1+e^-1000), e^-1000/(1+e^-1000)]
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
        assert!(s.is_finite());
    }

    #[test]
    fn new_checks_length() {
        assert!(DenseArray::new(vec![2, 2], vec![1.0; 3]).is_err());
    }
}
