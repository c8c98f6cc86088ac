//! Log-determinant of a dense complex matrix held as separate real and
//! imaginary row-major planes.
//!
//! Splitting the planes lets the caller assemble the matrix straight from
//! real GEMM products. The determinant is returned as `(ln|det|, arg det)`
//! so that very small values never underflow.

use num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub log_abs: f64,
    /// Argument of the determinant, wrapped into `(-pi, pi]`.
    pub phase: f64,
}

impl LogDet {
    pub fn value(&self) -> Complex64 {
        Complex64::from_polar(self.log_abs.exp(), self.phase)
    }
}

pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// In-place LU with partial pivoting. Both slices are overwritten.
pub fn log_det_split(re: &mut [f64], im: &mut [f64], n: usize) -> LogDet {
    assert_eq!(re.len(), n * n);
    assert_eq!(im.len(), n * n);
    let mut log_abs = 0.0;
    let mut phase = 0.0;
    for k in 0..n {
        let mut piv = k;
        let mut best = -1.0;
        for i in k..n {
            let m = re[i * n + k].hypot(im[i * n + k]);
            if m > best {
                best = m;
                piv = i;
            }
        }
        if best == 0.0 {
            return LogDet {
                log_abs: f64::NEG_INFINITY,
                phase: 0.0,
            };
        }
        if piv != k {
            for j in 0..n {
                re.swap(k * n + j, piv * n + j);
                im.swap(k * n + j, piv * n + j);
            }
            phase += PI;
        }
        let pr = re[k * n + k];
        let pi = im[k * n + k];
        log_abs += best.ln();
        phase += pi.atan2(pr);
        let d = pr * pr + pi * pi;
        let (ir, ii) = (pr / d, -pi / d);
        let (pivot_re, rest_re) = re.split_at_mut((k + 1) * n);
        let (pivot_im, rest_im) = im.split_at_mut((k + 1) * n);
        let prow_re = &pivot_re[k * n..];
        let prow_im = &pivot_im[k * n..];
        for (row_re, row_im) in rest_re.chunks_exact_mut(n).zip(rest_im.chunks_exact_mut(n)) {
            let (ar, ai) = (row_re[k], row_im[k]);
            if ar == 0.0 && ai == 0.0 {
                continue;
            }
            let lr = ar * ir - ai * ii;
            let li = ar * ii + ai * ir;
            for j in k + 1..n {
                let (br, bi) = (prow_re[j], prow_im[j]);
                row_re[j] -= lr * br - li * bi;
                row_im[j] -= lr * bi + li * br;
            }
        }
    }
    LogDet {
        log_abs,
        phase: wrap_phase(phase),
    }
}

/// Convenience wrapper for a nalgebra matrix.
pub fn log_det(m: &nalgebra::DMatrix<Complex64>) -> LogDet {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut re = vec![0.0; n * n];
    let mut im = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            re[i * n + j] = m[(i, j)].re;
            im[i * n + j] = m[(i, j)].im;
        }
    }
    log_det_split(&mut re, &mut im, n)
}
