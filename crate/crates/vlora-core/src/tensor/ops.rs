//! Forward operations and their backward rules.
//!
//! Each op validates shapes, computes the result eagerly, and registers a
//! closure that maps the output gradient onto the parents. The set is
//! deliberately small: exactly what a decoder-only LM, a weight generator,
//! and their training loop consume. Layout is row-major with no strided
//! views, so slices copy.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, Element, Shape, Tensor};
use crate::error::{Error, Result};

fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Element> Tensor<T> {
    /// `C[m×n] = A[m×k] · B[k×n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, ka) = self.dims2("matmul")?;
        let (kb, n) = rhs.dims2("matmul")?;
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: {} vs {}", self.shape(), rhs.shape()),
            ));
        }
        let data = gemm::nn(&self.data(), &rhs.data(), m, ka, n);
        Tensor::from_op(
            "matmul",
            Shape::matrix(m, n),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |parents, _out, grad| {
                let (a, b) = (&parents[0], &parents[1]);
                if a.tracked() {
                    a.accumulate_grad(&gemm::nt(grad, &b.data(), m, n, ka));
                }
                if b.tracked() {
                    b.accumulate_grad(&gemm::tn(&a.data(), grad, ka, m, n));
                }
            }),
        )
    }

    /// `C[m×n] = A[m×k] · Bᵀ` with `B` stored `n×k`; used for attention
    /// scores so keys never need a transposed copy.
    pub fn matmul_nt(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, ka) = self.dims2("matmul_nt")?;
        let (n, kb) = rhs.dims2("matmul_nt")?;
        if ka != kb {
            return Err(Error::shape(
                "matmul_nt",
                format!("contraction extents differ: {} vs {}", self.shape(), rhs.shape()),
            ));
        }
        let data = gemm::nt(&self.data(), &rhs.data(), m, ka, n);
        Tensor::from_op(
            "matmul_nt",
            Shape::matrix(m, n),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |parents, _out, grad| {
                let (a, b) = (&parents[0], &parents[1]);
                if a.tracked() {
                    a.accumulate_grad(&gemm::nn(grad, &b.data(), m, n, ka));
                }
                if b.tracked() {
                    b.accumulate_grad(&gemm::tn(grad, &a.data(), n, m, ka));
                }
            }),
        )
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                "add",
                format!("{} vs {}", self.shape(), rhs.shape()),
            ));
        }
        let data = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            "add",
            self.shape().clone(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|parents, _out, grad| {
                parents[0].accumulate_grad(grad);
                parents[1].accumulate_grad(grad);
            }),
        )
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                "mul",
                format!("{} vs {}", self.shape(), rhs.shape()),
            ));
        }
        let data = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Tensor::from_op(
            "mul",
            self.shape().clone(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|parents, _out, grad| {
                let (a, b) = (&parents[0], &parents[1]);
                if a.tracked() {
                    let delta: Vec<T> = grad.iter().zip(b.data().iter()).map(|(&g, &v)| g * v).collect();
                    a.accumulate_grad(&delta);
                }
                if b.tracked() {
                    let delta: Vec<T> = grad.iter().zip(a.data().iter()).map(|(&g, &v)| g * v).collect();
                    b.accumulate_grad(&delta);
                }
            }),
        )
    }

    /// Multiplication by a compile-time-known constant (not a parameter).
    pub fn scale(&self, factor: f64) -> Result<Tensor<T>> {
        let c = T::from_f64(factor);
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().clone(),
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let delta: Vec<T> = grad.iter().map(|&g| g * c).collect();
                parents[0].accumulate_grad(&delta);
            }),
        )
    }

    /// Elementwise `x · σ(x)`; the activation between the two FFN layers.
    pub fn silu(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&x| x * sigmoid(x)).collect();
        Tensor::from_op(
            "silu",
            self.shape().clone(),
            data,
            vec![self.clone()],
            Box::new(|parents, _out, grad| {
                let x = &parents[0];
                let delta: Vec<T> = grad
                    .iter()
                    .zip(x.data().iter())
                    .map(|(&g, &x)| {
                        let s = sigmoid(x);
                        g * s * (T::one() + x * (T::one() - s))
                    })
                    .collect();
                x.accumulate_grad(&delta);
            }),
        )
    }

    /// Row-wise softmax with optional causal masking.
    ///
    /// With `causal` set, entry `(i, j)` participates only when `j ≤ i`;
    /// masked entries are exactly zero in the output and receive zero
    /// gradient. Stabilized by subtracting each row's running maximum.
    pub fn softmax_rows(&self, causal: bool) -> Result<Tensor<T>> {
        let (m, n) = self.dims2("softmax_rows")?;
        let input = self.data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            let limit = if causal { (i + 1).min(n) } else { n };
            if limit == 0 {
                return Err(Error::AllMasked { row: i });
            }
            let row = &input[i * n..i * n + limit];
            let max = row.iter().cloned().fold(row[0], T::max);
            let mut denom = T::zero();
            for j in 0..limit {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                denom += e;
            }
            for j in 0..limit {
                data[i * n + j] /= denom;
            }
        }
        drop(input);
        Tensor::from_op(
            "softmax_rows",
            Shape::matrix(m, n),
            data,
            vec![self.clone()],
            Box::new(move |parents, out, grad| {
                // dx_j = y_j (g_j − Σ_l g_l y_l), rowwise over live entries.
                let mut delta = vec![T::zero(); m * n];
                for i in 0..m {
                    let limit = if causal { (i + 1).min(n) } else { n };
                    let y = &out[i * n..i * n + limit];
                    let g = &grad[i * n..i * n + limit];
                    let dot: T = y.iter().zip(g).map(|(&y, &g)| y * g).sum();
                    for j in 0..limit {
                        delta[i * n + j] = y[j] * (g[j] - dot);
                    }
                }
                parents[0].accumulate_grad(&delta);
            }),
        )
    }

    /// Per-row RMS normalization with a learned gain:
    /// `y_ij = x_ij · gain_j / √(meanⱼ x_ij² + eps)`.
    pub fn rms_norm(&self, gain: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let (m, h) = self.dims2("rms_norm")?;
        if gain.shape().dims() != [h] {
            return Err(Error::shape(
                "rms_norm",
                format!("gain {} does not match row width {}", gain.shape(), h),
            ));
        }
        let eps = T::from_f64(eps);
        let hh = T::from_f64(h as f64);
        let x = self.data();
        let g = gain.data();
        let mut data = vec![T::zero(); m * h];
        let mut scales = vec![T::zero(); m];
        for i in 0..m {
            let row = &x[i * h..(i + 1) * h];
            let ms: T = row.iter().map(|&v| v * v).sum::<T>() / hh;
            let s = (ms + eps).sqrt();
            scales[i] = s;
            for j in 0..h {
                data[i * h + j] = row[j] * g[j] / s;
            }
        }
        drop(x);
        drop(g);
        Tensor::from_op(
            "rms_norm",
            Shape::matrix(m, h),
            data,
            vec![self.clone(), gain.clone()],
            Box::new(move |parents, _out, grad| {
                let (x_t, gain_t) = (&parents[0], &parents[1]);
                let x = x_t.data();
                let g = gain_t.data();
                if x_t.tracked() {
                    let mut delta = vec![T::zero(); m * h];
                    for i in 0..m {
                        let s = scales[i];
                        let row = &x[i * h..(i + 1) * h];
                        let grow = &grad[i * h..(i + 1) * h];
                        // Σ_l G_l gain_l x_l feeds the norm's own dependence on x.
                        let dot: T = (0..h).map(|l| grow[l] * g[l] * row[l]).sum();
                        for j in 0..h {
                            delta[i * h + j] = grow[j] * g[j] / s - row[j] * dot / (hh * s * s * s);
                        }
                    }
                    x_t.accumulate_grad(&delta);
                }
                if gain_t.tracked() {
                    let mut delta = vec![T::zero(); h];
                    for i in 0..m {
                        let s = scales[i];
                        for j in 0..h {
                            delta[j] += grad[i * h + j] * x[i * h + j] / s;
                        }
                    }
                    gain_t.accumulate_grad(&delta);
                }
            }),
        )
    }

    /// Gathers `ids` rows from an embedding table; gradient scatter-adds.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let (vocab, h) = self.dims2("embed")?;
        if ids.is_empty() {
            return Err(Error::shape("embed", "empty id list".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::TokenOutOfRange { id: bad, vocab });
        }
        let table = self.data();
        let mut data = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            data.extend_from_slice(&table[id * h..(id + 1) * h]);
        }
        drop(table);
        let ids: Vec<usize> = ids.to_vec();
        Tensor::from_op(
            "embed",
            Shape::matrix(ids.len(), h),
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut delta = vec![T::zero(); vocab * h];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..h {
                        delta[id * h + j] += grad[row * h + j];
                    }
                }
                parents[0].accumulate_grad(&delta);
            }),
        )
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let (m, n) = self.dims2("slice_rows")?;
        if start >= end || end > m {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{end} out of 0..{m}"),
            ));
        }
        let data = self.data()[start * n..end * n].to_vec();
        Tensor::from_op(
            "slice_rows",
            Shape::matrix(end - start, n),
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut delta = vec![T::zero(); m * n];
                delta[start * n..end * n].copy_from_slice(grad);
                parents[0].accumulate_grad(&delta);
            }),
        )
    }

    /// Copy of columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let (m, n) = self.dims2("slice_cols")?;
        if start >= end || end > n {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{end} out of 0..{n}"),
            ));
        }
        let w = end - start;
        let src = self.data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        drop(src);
        Tensor::from_op(
            "slice_cols",
            Shape::matrix(m, w),
            data,
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let mut delta = vec![T::zero(); m * n];
                for i in 0..m {
                    delta[i * n + start..i * n + end].copy_from_slice(&grad[i * w..(i + 1) * w]);
                }
                parents[0].accumulate_grad(&delta);
            }),
        )
    }

    /// Column-wise concatenation of matrices with equal row counts
    /// (reassembles attention heads).
    pub fn concat_cols(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no operands".into()));
        }
        let (m, _) = parts[0].dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_cols")?;
            if pm != m {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", m, pm),
                ));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        Tensor::from_op(
            "concat_cols",
            Shape::matrix(m, n),
            data,
            parts.to_vec(),
            Box::new(move |parents, _out, grad| {
                let mut offset = 0;
                for (p, &w) in parents.iter().zip(&widths) {
                    if p.tracked() {
                        let mut delta = vec![T::zero(); m * w];
                        for i in 0..m {
                            delta[i * w..(i + 1) * w]
                                .copy_from_slice(&grad[i * n + offset..i * n + offset + w]);
                        }
                        p.accumulate_grad(&delta);
                    }
                    offset += w;
                }
            }),
        )
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor<T>> {
        if shape.numel() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{} has {} elements, target {} has {}", self.shape(), self.numel(), shape, shape.numel()),
            ));
        }
        Tensor::from_op(
            "reshape",
            shape,
            self.to_vec(),
            vec![self.clone()],
            Box::new(|parents, _out, grad| {
                parents[0].accumulate_grad(grad);
            }),
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let total: T = self.data().iter().cloned().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum_all",
            Shape::scalar(),
            vec![total],
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                parents[0].accumulate_grad(&vec![grad[0]; n]);
            }),
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// the logits; the training loss.
    pub fn cross_entropy_rows(&self, targets: &[usize]) -> Result<Tensor<T>> {
        let (m, vocab) = self.dims2("cross_entropy_rows")?;
        if targets.len() != m {
            return Err(Error::shape(
                "cross_entropy_rows",
                format!("{} logit rows but {} targets", m, targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&id| id >= vocab) {
            return Err(Error::TokenOutOfRange { id: bad, vocab });
        }
        let logits = self.data();
        let mut total = T::zero();
        let mut lses = vec![T::zero(); m];
        for i in 0..m {
            let row = &logits[i * vocab..(i + 1) * vocab];
            let max = row.iter().cloned().fold(row[0], T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            lses[i] = lse;
            total += lse - row[targets[i]];
        }
        drop(logits);
        let mean = total / T::from_f64(m as f64);
        let targets: Vec<usize> = targets.to_vec();
        Tensor::from_op(
            "cross_entropy_rows",
            Shape::scalar(),
            vec![mean],
            vec![self.clone()],
            Box::new(move |parents, _out, grad| {
                let logits_t = &parents[0];
                let logits = logits_t.data();
                let scale = grad[0] / T::from_f64(m as f64);
                let mut delta = vec![T::zero(); m * vocab];
                for i in 0..m {
                    let row = &logits[i * vocab..(i + 1) * vocab];
                    for j in 0..vocab {
                        let p = (row[j] - lses[i]).exp();
                        let target = if j == targets[i] { T::one() } else { T::zero() };
                        delta[i * vocab + j] = (p - target) * scale;
                    }
                }
                drop(logits);
                logits_t.accumulate_grad(&delta);
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use alloc::vec;
    use alloc::vec::Vec;

    use approx::assert_abs_diff_eq;

    use crate::rng::Rng;
    use crate::tensor::{Shape, Tensor};

    fn matrix(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::matrix(rows, cols), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_by_identity_is_identity() {
        let i2 = matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = matrix(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(i2.matmul(&a).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn matmul_row_by_column() {
        let a = matrix(1, 2, &[1.0, 2.0]);
        let b = matrix(2, 1, &[3.0, 4.0]);
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(7);
        let (m, k, n) = (5, 7, 3);
        let a = Tensor::<f64>::randn(Shape::matrix(m, k), 1.0, &mut rng);
        let b = Tensor::<f64>::randn(Shape::matrix(k, n), 1.0, &mut rng);
        let got = a.matmul(&b).unwrap();
        let (ad, bd) = (a.to_vec(), b.to_vec());
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    want[i * n + j] += ad[i * k + p] * bd[p * n + j];
                }
            }
        }
        for (g, w) in got.to_vec().iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12 * w.abs().max(1.0));
        }
    }

    #[test]
    fn matmul_rejects_mismatched_inner_extents() {
        let a = matrix(2, 3, &[0.0; 6]);
        let b = matrix(2, 2, &[0.0; 4]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn matmul_nt_agrees_with_matmul_on_transposed_copy() {
        let mut rng = Rng::new(8);
        let a = Tensor::<f64>::randn(Shape::matrix(4, 6), 1.0, &mut rng);
        let b = Tensor::<f64>::randn(Shape::matrix(5, 6), 1.0, &mut rng);
        let bd = b.to_vec();
        let mut bt = vec![0.0; 30];
        for i in 0..5 {
            for j in 0..6 {
                bt[j * 5 + i] = bd[i * 6 + j];
            }
        }
        let via_nt = a.matmul_nt(&b).unwrap().to_vec();
        let via_nn = a.matmul(&matrix(6, 5, &bt)).unwrap().to_vec();
        for (x, y) in via_nt.iter().zip(&via_nn) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn causal_softmax_first_row_is_one_hot() {
        let a = matrix(3, 3, &[5.0, 9.0, 2.0, 1.0, 1.0, 7.0, 0.0, 0.0, 0.0]);
        let y = a.softmax_rows(true).unwrap().to_vec();
        assert_eq!(y[0], 1.0);
        assert_eq!(&y[1..3], &[0.0, 0.0]);
        assert_abs_diff_eq!(y[3] + y[4], 1.0, epsilon = 1e-12);
        assert_eq!(y[5], 0.0);
    }

    #[test]
    fn softmax_of_equal_scores_is_uniform() {
        let y = matrix(1, 2, &[0.0, 0.0]).softmax_rows(false).unwrap().to_vec();
        assert_abs_diff_eq!(y[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn softmax_matches_closed_form() {
        let y = matrix(1, 2, &[0.0, 3.0f64.ln()]).softmax_rows(false).unwrap().to_vec();
        assert_abs_diff_eq!(y[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_invariant_under_row_shift() {
        let a = matrix(1, 3, &[0.3, -1.2, 2.0]);
        let b = matrix(1, 3, &[100.3, 98.8, 102.0]);
        let ya = a.softmax_rows(false).unwrap().to_vec();
        let yb = b.softmax_rows(false).unwrap().to_vec();
        for (x, y) in ya.iter().zip(&yb) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rms_norm_fixes_unit_rows() {
        let x = matrix(2, 3, &[1.0; 6]);
        let gain = Tensor::from_vec(Shape::vector(3), vec![1.0; 3]).unwrap();
        let y = x.rms_norm(&gain, 0.0).unwrap().to_vec();
        for v in y {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rms_norm_matches_hand_computed_scale() {
        let x = matrix(1, 2, &[3.0, 4.0]);
        let gain = Tensor::from_vec(Shape::vector(2), vec![1.0, 1.0]).unwrap();
        let y = x.rms_norm(&gain, 0.0).unwrap().to_vec();
        let s = 12.5f64.sqrt();
        assert_abs_diff_eq!(y[0], 3.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 4.0 / s, epsilon = 1e-12);
    }

    #[test]
    fn rms_norm_of_zero_vector_is_zero_not_nan() {
        let x = matrix(1, 4, &[0.0; 4]);
        let gain = Tensor::from_vec(Shape::vector(4), vec![1.0; 4]).unwrap();
        let y = x.rms_norm(&gain, 1e-6).unwrap().to_vec();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn silu_fixed_points_and_asymptote() {
        let x = matrix(1, 3, &[0.0, 20.0, 1.0]);
        let y = x.silu().unwrap().to_vec();
        assert_eq!(y[0], 0.0);
        assert_abs_diff_eq!(y[1], 20.0, epsilon = 1e-6);
        assert_abs_diff_eq!(y[2], 0.7310585786300049, epsilon = 1e-12);
    }

    #[test]
    fn backward_of_linear_map_gives_outer_product_grads() {
        // loss = Σ (W·x) ⇒ dL/dW_ij = x_j, dL/dx_j = Σ_i W_ij.
        let w = matrix(2, 2, &[1.0, 2.0, 3.0, 4.0]).with_requires_grad(true);
        let x = matrix(2, 1, &[5.0, 6.0]).with_requires_grad(true);
        let loss = w.matmul(&x).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![5.0, 6.0, 5.0, 6.0]);
        assert_eq!(x.grad().unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn unused_leaf_gets_no_gradient() {
        let used = matrix(1, 1, &[2.0]).with_requires_grad(true);
        let unused = matrix(1, 1, &[3.0]).with_requires_grad(true);
        let loss = used.sum_all().unwrap();
        loss.backward().unwrap();
        assert!(unused.grad().is_none());
        assert_eq!(unused.grad_or_zeros(), vec![0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = matrix(1, 1, &[2.0]).with_requires_grad(true);
        let loss = w.scale(3.0).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0]);
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![6.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let a = matrix(2, 2, &[1.0; 4]).with_requires_grad(true);
        assert!(a.add(&a).unwrap().backward().is_err());
    }

    #[test]
    fn shared_subexpression_grads_sum_over_paths() {
        // loss = Σ (x ⊙ x) ⇒ dL/dx = 2x.
        let x = matrix(1, 3, &[1.0, -2.0, 0.5]).with_requires_grad(true);
        let loss = x.mul(&x).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn embed_gathers_and_scatter_adds() {
        let table = matrix(3, 2, &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]).with_requires_grad(true);
        let rows = table.embed(&[2, 0, 2]).unwrap();
        assert_eq!(rows.to_vec(), vec![20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
        rows.sum_all().unwrap().backward().unwrap();
        // Row 2 used twice, row 1 never.
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embed_rejects_out_of_range_ids() {
        let table = matrix(3, 2, &[0.0; 6]);
        assert!(table.embed(&[3]).is_err());
    }

    #[test]
    fn slices_and_concat_round_trip() {
        let a = matrix(2, 4, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let left = a.slice_cols(0, 2).unwrap();
        let right = a.slice_cols(2, 4).unwrap();
        let back = Tensor::concat_cols(&[left, right]).unwrap();
        assert_eq!(back.to_vec(), a.to_vec());
        let top = a.slice_rows(0, 1).unwrap();
        assert_eq!(top.to_vec(), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn slice_grads_place_into_source_positions() {
        let a = matrix(2, 3, &[1.0; 6]).with_requires_grad(true);
        let mid = a.slice_cols(1, 2).unwrap();
        mid.sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn reshape_preserves_order_and_grads() {
        let a = matrix(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).with_requires_grad(true);
        let b = a.reshape(Shape::matrix(3, 2)).unwrap();
        assert_eq!(b.to_vec(), a.to_vec());
        b.sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_vocab() {
        let logits = matrix(2, 4, &[0.0; 8]);
        let loss = logits.cross_entropy_rows(&[1, 3]).unwrap().scalar_value().unwrap();
        assert_abs_diff_eq!(loss, 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot_over_rows() {
        let logits = matrix(1, 3, &[1.0, 2.0, 3.0]).with_requires_grad(true);
        let loss = logits.cross_entropy_rows(&[0]).unwrap();
        loss.backward().unwrap();
        let probs: Vec<f64> = {
            let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
            [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect()
        };
        let grad = logits.grad().unwrap();
        assert_abs_diff_eq!(grad[0], probs[0] - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[1], probs[1], epsilon = 1e-12);
        assert_abs_diff_eq!(grad[2], probs[2], epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_target_outside_vocab() {
        let logits = matrix(1, 3, &[0.0; 3]);
        assert!(logits.cross_entropy_rows(&[3]).is_err());
    }

    #[test]
    fn forward_ops_reject_non_finite_results() {
        let big = Tensor::from_vec(Shape::matrix(1, 1), vec![f32::MAX]).unwrap();
        assert!(big.mul(&big).is_err());
    }
}
