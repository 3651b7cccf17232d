// Shared numeric kernels. Both the graph ops and the tape-free inference
// paths call these, so a forward pass gives bit-identical values either way.

use super::Scalar;

/// `out[m, n] = a[m, k] · b[k, n]`, accumulated in f64.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let aip = aip.as_f64();
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in acc.iter_mut().zip(brow) {
                *o += aip * bv.as_f64();
            }
        }
        out.extend(acc.iter().map(|&v| T::of(v)));
    }
    out
}

/// `out[k, n] = a[m, k]ᵀ · g[m, n]`.
pub(crate) fn matmul_at_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let aip = aip.as_f64();
            if aip == 0.0 {
                continue;
            }
            let dst = &mut acc[p * n..(p + 1) * n];
            for (d, &gv) in dst.iter_mut().zip(grow) {
                *d += aip * gv.as_f64();
            }
        }
    }
    acc.into_iter().map(T::of).collect()
}

/// `out[m, k] = g[m, n] · b[k, n]ᵀ`.
pub(crate) fn matmul_a_bt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * k);
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let s: f64 = grow
                .iter()
                .zip(brow)
                .map(|(&x, &y)| x.as_f64() * y.as_f64())
                .sum();
            out.push(T::of(s));
        }
    }
    out
}

pub(crate) fn add_bias<T: Scalar>(x: &mut [T], b: &[T]) {
    let n = b.len();
    for row in x.chunks_mut(n) {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v = *v + bv;
        }
    }
}

#[inline]
pub(crate) fn leaky_relu<T: Scalar>(x: T, slope: f64) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::of(slope)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    T::of(s)
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn log_softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| T::of(v.as_f64() - lse)));
    }
    out
}

pub(crate) fn softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| T::of(e / z)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] · [5 6; 7 8] = [19 22; 43 50]
        let c = matmul(&[1.0f64, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
        let at_b = matmul_at_b(&[1.0f64, 2.0, 3.0, 4.0], &[1.0, 0.0, 0.0, 1.0], 2, 2, 2);
        assert_eq!(at_b, vec![1.0, 3.0, 2.0, 4.0]);
        let a_bt = matmul_a_bt(&[1.0f64, 0.0, 0.0, 1.0], &[1.0, 2.0, 3.0, 4.0], 2, 2, 2);
        assert_eq!(a_bt, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&[1.0f32, 2.0, 3.0, -50.0, 0.0, 50.0], 3);
        for row in p.chunks(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
