//! Forward operations and their backward rules.
//!
//! Max-style reductions route gradient to the argmax element, ties resolved
//! to the lowest index, which keeps training deterministic. No operation
//! mutates its inputs.

use std::rc::Rc;

use super::{make_output, Tensor};
use crate::{Error, Result};

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn want_2d(op: &str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::shape(format!(
            "{op}: expected a 2-D tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// out(m x n) = a(m x k) * b(k x n)
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// out(m x k) = a(m x n) * b(k x n)^T
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// out(k x n) = a(m x k)^T * b(m x n)
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let orow = &mut out[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        make_output("add", &[self, other], data, self.shape().to_vec(), |up| {
            vec![up.to_vec(), up.to_vec()]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        make_output("sub", &[self, other], data, self.shape().to_vec(), |up| {
            vec![up.to_vec(), up.iter().map(|g| -g).collect()]
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let a = Rc::clone(&self.data);
        let b = Rc::clone(&other.data);
        make_output("mul", &[self, other], data, self.shape().to_vec(), move |up| {
            vec![
                up.iter().zip(b.iter()).map(|(g, v)| g * v).collect(),
                up.iter().zip(a.iter()).map(|(g, v)| g * v).collect(),
            ]
        })
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        make_output("scale", &[self], data, self.shape().to_vec(), move |up| {
            vec![up.iter().map(|g| g * c).collect()]
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        want_2d("matmul", self)?;
        want_2d("matmul", other)?;
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions {k} and {k2} differ"
            )));
        }
        let data = mm(self.data(), other.data(), m, k, n);
        let a = Rc::clone(&self.data);
        let b = Rc::clone(&other.data);
        make_output("matmul", &[self, other], data, vec![m, n], move |up| {
            vec![mm_nt(up, &b, m, n, k), mm_tn(&a, up, m, k, n)]
        })
    }

    /// Adds a 1-D bias to every row of a 2-D tensor.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        want_2d("add_row", self)?;
        if bias.shape().len() != 1 || bias.numel() != self.cols() {
            return Err(Error::shape(format!(
                "add_row: bias shape {:?} does not match {} columns",
                bias.shape(),
                self.cols()
            )));
        }
        let n = self.cols();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias.data()[i % n])
            .collect();
        let m = self.rows();
        make_output("add_row", &[self, bias], data, self.shape().to_vec(), move |up| {
            let mut db = vec![0.0; n];
            for r in 0..m {
                for (d, g) in db.iter_mut().zip(&up[r * n..(r + 1) * n]) {
                    *d += g;
                }
            }
            vec![up.to_vec(), db]
        })
    }

    /// Row-wise affine map: `self (m x in) * w (in x out) + b`.
    pub fn linear(&self, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.matmul(w)?.add_row(b)
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.max(0.0)).collect();
        let x = Rc::clone(&self.data);
        make_output("relu", &[self], data, self.shape().to_vec(), move |up| {
            vec![up
                .iter()
                .zip(x.iter())
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect()]
        })
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.tanh()).collect();
        let y = data.clone();
        make_output("tanh", &[self], data, self.shape().to_vec(), move |up| {
            vec![up.iter().zip(&y).map(|(g, v)| g * (1.0 - v * v)).collect()]
        })
    }

    pub fn log(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.ln()).collect();
        let x = Rc::clone(&self.data);
        make_output("log", &[self], data, self.shape().to_vec(), move |up| {
            vec![up.iter().zip(x.iter()).map(|(g, v)| g / v).collect()]
        })
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.exp()).collect();
        let y = data.clone();
        make_output("exp", &[self], data, self.shape().to_vec(), move |up| {
            vec![up.iter().zip(&y).map(|(g, v)| g * v).collect()]
        })
    }

    /// Sum of all elements, a scalar.
    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        let numel = self.numel();
        make_output("sum", &[self], vec![total], vec![], move |up| {
            vec![vec![up[0]; numel]]
        })
    }

    /// Mean of all elements, a scalar.
    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let numel = self.numel();
        let total: f64 = self.data().iter().sum();
        make_output("mean", &[self], vec![total / numel as f64], vec![], move |up| {
            vec![vec![up[0] / numel as f64; numel]]
        })
    }

    /// Reduces a 2-D tensor along `axis` by max; gradient routes to the
    /// argmax element (lowest index on ties). axis 0 pools over rows
    /// yielding one value per column, axis 1 the transpose.
    pub fn max_over_set(&self, axis: usize) -> Result<Tensor> {
        want_2d("max_over_set", self)?;
        let (m, n) = (self.rows(), self.cols());
        let numel = self.numel();
        match axis {
            0 => {
                let mut out = vec![f64::NEG_INFINITY; n];
                let mut arg = vec![0usize; n];
                for i in 0..m {
                    for j in 0..n {
                        let v = self.data()[i * n + j];
                        if v > out[j] {
                            out[j] = v;
                            arg[j] = i;
                        }
                    }
                }
                make_output("max_over_set", &[self], out, vec![n], move |up| {
                    let mut g = vec![0.0; numel];
                    for j in 0..n {
                        g[arg[j] * n + j] = up[j];
                    }
                    vec![g]
                })
            }
            1 => {
                let mut out = vec![f64::NEG_INFINITY; m];
                let mut arg = vec![0usize; m];
                for i in 0..m {
                    for j in 0..n {
                        let v = self.data()[i * n + j];
                        if v > out[i] {
                            out[i] = v;
                            arg[i] = j;
                        }
                    }
                }
                make_output("max_over_set", &[self], out, vec![m], move |up| {
                    let mut g = vec![0.0; numel];
                    for i in 0..m {
                        g[i * n + arg[i]] = up[i];
                    }
                    vec![g]
                })
            }
            _ => Err(Error::invalid(format!("max_over_set: axis {axis} out of range"))),
        }
    }

    /// Max-pools consecutive blocks of `rows_per_group` rows:
    /// (g*r x c) -> (g x c). Same argmax routing as [`Tensor::max_over_set`].
    pub fn max_over_groups(&self, rows_per_group: usize) -> Result<Tensor> {
        want_2d("max_over_groups", self)?;
        let (m, n) = (self.rows(), self.cols());
        if rows_per_group == 0 || m % rows_per_group != 0 {
            return Err(Error::shape(format!(
                "max_over_groups: {m} rows not divisible into groups of {rows_per_group}"
            )));
        }
        let groups = m / rows_per_group;
        let mut out = vec![f64::NEG_INFINITY; groups * n];
        let mut arg = vec![0usize; groups * n];
        for g in 0..groups {
            for r in 0..rows_per_group {
                let row = g * rows_per_group + r;
                for j in 0..n {
                    let v = self.data()[row * n + j];
                    if v > out[g * n + j] {
                        out[g * n + j] = v;
                        arg[g * n + j] = row;
                    }
                }
            }
        }
        let numel = self.numel();
        make_output("max_over_groups", &[self], out, vec![groups, n], move |up| {
            let mut grad = vec![0.0; numel];
            for (slot, g) in up.iter().enumerate() {
                let j = slot % n;
                grad[arg[slot] * n + j] = *g;
            }
            vec![grad]
        })
    }

    /// Gathers rows of a 2-D tensor; indices may repeat. Gradient
    /// scatter-adds back to the source rows.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        want_2d("gather_rows", self)?;
        let (m, n) = (self.rows(), self.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::invalid(format!(
                "gather_rows: index {bad} out of range for {m} rows"
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * n..(i + 1) * n]);
        }
        let idx: Vec<usize> = indices.to_vec();
        let numel = self.numel();
        make_output("gather_rows", &[self], data, vec![indices.len(), n], move |up| {
            let mut grad = vec![0.0; numel];
            for (r, &i) in idx.iter().enumerate() {
                for (g, u) in grad[i * n..(i + 1) * n].iter_mut().zip(&up[r * n..(r + 1) * n]) {
                    *g += u;
                }
            }
            vec![grad]
        })
    }

    /// Repeats each row `r` times consecutively: (m x c) -> (m*r x c).
    pub fn repeat_rows(&self, r: usize) -> Result<Tensor> {
        want_2d("repeat_rows", self)?;
        if r == 0 {
            return Err(Error::invalid("repeat_rows: repeat count must be positive"));
        }
        let (m, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(m * r * n);
        for i in 0..m {
            for _ in 0..r {
                data.extend_from_slice(&self.data()[i * n..(i + 1) * n]);
            }
        }
        make_output("repeat_rows", &[self], data, vec![m * r, n], move |up| {
            let mut grad = vec![0.0; m * n];
            for (row, chunk) in up.chunks(n).enumerate() {
                let parent = row / r;
                for (g, u) in grad[parent * n..(parent + 1) * n].iter_mut().zip(chunk) {
                    *g += u;
                }
            }
            vec![grad]
        })
    }

    /// Broadcasts a 1-D tensor to `m` identical rows; gradient sums rows.
    pub fn broadcast_rows(&self, m: usize) -> Result<Tensor> {
        if self.shape().len() != 1 {
            return Err(Error::shape(format!(
                "broadcast_rows: expected 1-D tensor, got {:?}",
                self.shape()
            )));
        }
        let n = self.numel();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(self.data());
        }
        make_output("broadcast_rows", &[self], data, vec![m, n], move |up| {
            let mut grad = vec![0.0; n];
            for chunk in up.chunks(n) {
                for (g, u) in grad.iter_mut().zip(chunk) {
                    *g += u;
                }
            }
            vec![grad]
        })
    }

    /// Concatenates two 2-D tensors along columns.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        want_2d("concat_cols", self)?;
        want_2d("concat_cols", other)?;
        if self.rows() != other.rows() {
            return Err(Error::shape(format!(
                "concat_cols: row counts {} and {} differ",
                self.rows(),
                other.rows()
            )));
        }
        let (m, p, q) = (self.rows(), self.cols(), other.cols());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&self.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&other.data()[i * q..(i + 1) * q]);
        }
        make_output("concat_cols", &[self, other], data, vec![m, p + q], move |up| {
            let mut ga = vec![0.0; m * p];
            let mut gb = vec![0.0; m * q];
            for i in 0..m {
                let row = &up[i * (p + q)..(i + 1) * (p + q)];
                ga[i * p..(i + 1) * p].copy_from_slice(&row[..p]);
                gb[i * q..(i + 1) * q].copy_from_slice(&row[p..]);
            }
            vec![ga, gb]
        })
    }

    /// Concatenates two 2-D tensors along rows.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor> {
        want_2d("concat_rows", self)?;
        want_2d("concat_rows", other)?;
        if self.cols() != other.cols() {
            return Err(Error::shape(format!(
                "concat_rows: column counts {} and {} differ",
                self.cols(),
                other.cols()
            )));
        }
        let (p, q, n) = (self.rows(), other.rows(), self.cols());
        let mut data = Vec::with_capacity((p + q) * n);
        data.extend_from_slice(self.data());
        data.extend_from_slice(other.data());
        let split = p * n;
        make_output("concat_rows", &[self, other], data, vec![p + q, n], move |up| {
            vec![up[..split].to_vec(), up[split..].to_vec()]
        })
    }

    /// Reinterprets the data with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape()
            )));
        }
        make_output(
            "reshape",
            &[self],
            self.data().to_vec(),
            shape.to_vec(),
            |up| vec![up.to_vec()],
        )
    }

    /// Row-wise softmax of a 2-D tensor, numerically stabilized by the row
    /// max.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        want_2d("softmax_rows", self)?;
        let (m, n) = (self.rows(), self.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data()[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * n..(i + 1) * n];
            let mut total = 0.0;
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        let p = data.clone();
        make_output("softmax_rows", &[self], data, vec![m, n], move |up| {
            let mut grad = vec![0.0; m * n];
            for i in 0..m {
                let pr = &p[i * n..(i + 1) * n];
                let ur = &up[i * n..(i + 1) * n];
                let dot: f64 = pr.iter().zip(ur).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    grad[i * n + j] = pr[j] * (ur[j] - dot);
                }
            }
            vec![grad]
        })
    }

    /// Row-wise log-softmax; the numerically robust path for cross-entropy
    /// and KL terms.
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        want_2d("log_softmax_rows", self)?;
        let (m, n) = (self.rows(), self.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data()[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for j in 0..n {
                data[i * n + j] = row[j] - log_z;
            }
        }
        let logp = data.clone();
        make_output("log_softmax_rows", &[self], data, vec![m, n], move |up| {
            let mut grad = vec![0.0; m * n];
            for i in 0..m {
                let lr = &logp[i * n..(i + 1) * n];
                let ur = &up[i * n..(i + 1) * n];
                let usum: f64 = ur.iter().sum();
                for j in 0..n {
                    grad[i * n + j] = ur[j] - lr[j].exp() * usum;
                }
            }
            vec![grad]
        })
    }

    /// Views an (n x 3) tensor as a list of points.
    pub fn rows3(&self) -> Result<Vec<[f64; 3]>> {
        if self.shape().len() != 2 || self.cols() != 3 {
            return Err(Error::shape(format!(
                "rows3: expected an (n x 3) tensor, got {:?}",
                self.shape()
            )));
        }
        Ok(self
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect())
    }

    /// Standardizes each column to zero mean and unit variance (plus `eps`
    /// inside the square root), gradients flowing through mean and variance.
    pub fn standardize_cols(&self, eps: f64) -> Result<Tensor> {
        want_2d("standardize_cols", self)?;
        let (m, n) = (self.rows(), self.cols());
        if m == 0 {
            return Err(Error::invalid("standardize_cols: empty tensor"));
        }
        let mf = m as f64;
        let mut mean = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                mean[j] += self.data()[i * n + j];
            }
        }
        for v in &mut mean {
            *v /= mf;
        }
        let mut var = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                let d = self.data()[i * n + j] - mean[j];
                var[j] += d * d;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / mf + eps).sqrt()).collect();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = (self.data()[i * n + j] - mean[j]) * inv_std[j];
            }
        }
        let z = data.clone();
        let inv = inv_std.clone();
        make_output("standardize_cols", &[self], data, vec![m, n], move |up| {
            // Per column: dx = inv_std * (up - mean(up) - z * mean(up .* z)).
            let mut grad = vec![0.0; m * n];
            for j in 0..n {
                let mut up_mean = 0.0;
                let mut upz_mean = 0.0;
                for i in 0..m {
                    up_mean += up[i * n + j];
                    upz_mean += up[i * n + j] * z[i * n + j];
                }
                up_mean /= mf;
                upz_mean /= mf;
                for i in 0..m {
                    grad[i * n + j] =
                        inv[j] * (up[i * n + j] - up_mean - z[i * n + j] * upz_mean);
                }
            }
            vec![grad]
        })
    }
}
