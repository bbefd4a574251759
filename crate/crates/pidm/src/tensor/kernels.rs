//! Raw dense kernels behind the graph ops.
//!
//! Every kernel accumulates or assigns with a fixed, per-output-element
//! sequential order so results are bit-identical regardless of thread count.

use rayon::prelude::*;

use super::Scalar;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_FLOP_THRESHOLD: usize = 1 << 18;

/// c = a @ b with a: [m, k], b: [k, n], all row-major. Overwrites c.
pub(crate) fn gemm_nn<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, out: &mut [E]| {
        for v in out.iter_mut() {
            *v = E::zero();
        }
        let ar = &a[i * k..(i + 1) * k];
        for (p, &aip) in ar.iter().enumerate() {
            let br = &b[p * n..p * n + n];
            for (o, &bv) in out.iter_mut().zip(br) {
                *o = *o + aip * bv;
            }
        }
    };
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out)| row(i, out));
    } else {
        for (i, out) in c.chunks_mut(n).enumerate() {
            row(i, out);
        }
    }
}

/// c += a @ b^T with a: [m, k], b: [n, k]. Used for dA = dC @ B^T.
pub(crate) fn gemm_nt_acc<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, out: &mut [E]| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, o) in out.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            let mut s = E::zero();
            for (&x, &y) in ar.iter().zip(br) {
                s = s + x * y;
            }
            *o = *o + s;
        }
    };
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out)| row(i, out));
    } else {
        for (i, out) in c.chunks_mut(n).enumerate() {
            row(i, out);
        }
    }
}

/// c += a^T @ b with a: [m, k], b: [m, n], c: [k, n]. Used for dB = A^T @ dC.
///
/// The outer loop runs over `m`, so parallelism goes over output rows of `c`
/// via a column split instead; at our sizes the sequential form is fine and
/// keeps accumulation order fixed.
pub(crate) fn gemm_tn_acc<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    if m * k * n >= PAR_FLOP_THRESHOLD && k > 1 {
        // Each worker owns a band of rows of c; every band re-reads a and b.
        c.par_chunks_mut(n).enumerate().for_each(|(p, out)| {
            for i in 0..m {
                let aip = a[i * k + p];
                let br = &b[i * n..(i + 1) * n];
                for (o, &bv) in out.iter_mut().zip(br) {
                    *o = *o + aip * bv;
                }
            }
        });
    } else {
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            let br = &b[i * n..(i + 1) * n];
            for (p, &aip) in ar.iter().enumerate() {
                let out = &mut c[p * n..(p + 1) * n];
                for (o, &bv) in out.iter_mut().zip(br) {
                    *o = *o + aip * bv;
                }
            }
        }
    }
}

/// Row-major transpose of the last two dims: in [.., r, c] -> out [.., c, r].
pub(crate) fn transpose_last2<E: Scalar>(input: &[E], batch: usize, r: usize, c: usize, out: &mut [E]) {
    for bi in 0..batch {
        let iofs = bi * r * c;
        let oofs = bi * r * c;
        for i in 0..r {
            for j in 0..c {
                out[oofs + j * r + i] = input[iofs + i * c + j];
            }
        }
    }
}

/// Softmax over rows of length `d`; `-inf` entries get probability exactly 0.
/// Returns Err on a row with no finite entry.
pub(crate) fn softmax_rows<E: Scalar>(input: &[E], d: usize, out: &mut [E]) -> Result<(), usize> {
    for (ri, (ir, or)) in input.chunks(d).zip(out.chunks_mut(d)).enumerate() {
        let mut mx = E::neg_infinity();
        for &x in ir {
            if x > mx {
                mx = x;
            }
        }
        if !mx.is_finite() {
            return Err(ri);
        }
        let mut sum = E::zero();
        for (o, &x) in or.iter_mut().zip(ir) {
            let e = if x == E::neg_infinity() {
                E::zero()
            } else {
                (x - mx).exp()
            };
            *o = e;
            sum = sum + e;
        }
        let inv = E::one() / sum;
        for o in or.iter_mut() {
            *o = *o * inv;
        }
    }
    Ok(())
}
