//! Discrete Fourier transform over complex sequences.
//!
//! Power-of-two lengths take an iterative radix-2 path; every other length
//! falls back to the direct O(n²) sum. The forward transform is unnormalized
//! and the inverse carries the 1/n factor.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::NumericsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexSeq {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
}

impl ComplexSeq {
    pub fn new(real: Vec<f64>, imag: Vec<f64>) -> Result<Self, NumericsError> {
        if real.len() != imag.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "complex",
                lhs: vec![real.len()],
                rhs: vec![imag.len()],
            });
        }
        Ok(Self { real, imag })
    }

    pub fn from_real(real: Vec<f64>) -> Self {
        let imag = vec![0.0; real.len()];
        Self { real, imag }
    }

    pub fn len(&self) -> usize {
        self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.real.iter().zip(&self.imag).map(|(r, i)| r * r + i * i).sum()
    }
}

pub fn dft(seq: &ComplexSeq) -> ComplexSeq {
    let mut out = seq.clone();
    transform_in_place(&mut out.real, &mut out.imag, false);
    out
}

pub fn idft(seq: &ComplexSeq) -> ComplexSeq {
    let mut out = seq.clone();
    transform_in_place(&mut out.real, &mut out.imag, true);
    out
}

/// Transforms `re + i·im` in place. `inverse` flips the twiddle sign and
/// scales by 1/n.
pub fn transform_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(re, im, inverse);
    } else {
        direct(re, im, inverse);
    }
    if inverse {
        let s = 1.0 / n as f64;
        re.iter_mut().for_each(|v| *v *= s);
        im.iter_mut().for_each(|v| *v *= s);
    }
}

fn radix2(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        for k in 0..half {
            // Twiddles are evaluated directly rather than by recurrence so
            // that round-off does not accumulate across a stage.
            let (wi, wr) = (step * k as f64).sin_cos();
            let mut start = 0;
            while start < n {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                start += len;
            }
        }
        len <<= 1;
    }
}

fn direct(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for (k, (or, oi)) in out_re.iter_mut().zip(out_im.iter_mut()).enumerate() {
        let mut sr = 0.0;
        let mut si = 0.0;
        for j in 0..n {
            // (k·j) mod n keeps the angle small and exact.
            let angle = sign * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
            let (s, c) = angle.sin_cos();
            sr += re[j] * c - im[j] * s;
            si += re[j] * s + im[j] * c;
        }
        *or = sr;
        *oi = si;
    }
    re.copy_from_slice(&out_re);
    im.copy_from_slice(&out_im);
}
