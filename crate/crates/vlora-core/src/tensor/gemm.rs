//! Matrix-multiply kernels shared by forward ops and their backward passes.
//!
//! All three kernels use the same `(m, k, n)` convention: `m` output rows,
//! `k` contraction length, `n` output columns; the transpose suffix says how
//! the operand buffers are laid out. Each call reports `2·m·n·k` floating
//! point operations to [`crate::cost::counter`], so backward-pass matmuls
//! are tallied exactly like forward ones.

use alloc::vec;
use alloc::vec::Vec;

use super::Element;
use crate::cost::counter;

/// `C[m×n] = A[m×k] · B[k×n]`.
pub fn nn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    counter::record(2 * (m as u64) * (n as u64) * (k as u64));
    let mut c = vec![T::zero(); m * n];
    // i-k-j order keeps the inner loop streaming over rows of B and C.
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
    c
}

/// `C[m×n] = A[m×k] · Bᵀ` with `B` stored `n×k` (a row-dot-row product).
pub fn nt<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    counter::record(2 * (m as u64) * (n as u64) * (k as u64));
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// `C[m×n] = Aᵀ · B[k×n]` with `A` stored `k×m`.
pub fn tn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    counter::record(2 * (m as u64) * (n as u64) * (k as u64));
    let mut c = vec![T::zero(); m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a_row[i];
            if a_pi == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += a_pi * b_row[j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    // 2x3 · 3x2 worked by hand.
    const A: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    const B: [f64; 6] = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
    const AB: [f64; 4] = [58.0, 64.0, 139.0, 154.0];

    #[test]
    fn nn_matches_hand_computed_product() {
        assert_eq!(nn(&A, &B, 2, 3, 2), AB);
    }

    #[test]
    fn nt_matches_nn_on_pretransposed_operand() {
        // B stored transposed (2x3): nt must undo the transposition.
        let b_t = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        assert_eq!(nt(&A, &b_t, 2, 3, 2), AB);
    }

    #[test]
    fn tn_matches_nn_on_pretransposed_operand() {
        // A stored transposed (3x2).
        let a_t = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        assert_eq!(tn(&a_t, &B, 2, 3, 2), AB);
    }

    // Exact `2mnk` tallies are asserted in `tests/cost_instrumented.rs`,
    // which owns the process-global counter; enabling it here would race
    // with concurrently running unit tests.
}
