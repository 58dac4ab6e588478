//! Minimal convolutional building blocks with hand-written backward passes.
//!
//! Feature maps are single samples laid out channel-major (`c × h × w`).
//! Convolutions use same padding and stride 1, lowered to a GEMM over an
//! im2col buffer.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c ← alpha·op(a)·op(b) + beta·c` on raw strided buffers.
    ///
    /// # Safety
    /// Strides and dimensions must describe valid regions of the buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            unsafe fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// `c (m×n) [+]= op(a) (m×k) · op(b) (k×n)`, all row-major. A transposed
/// operand is stored with its dimensions swapped.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, c: &mut [T], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::ONE } else { T::ZERO };
    // SAFETY: bounds asserted above; strides describe row-major storage.
    unsafe {
        T::gemm(m, k, n, T::ONE, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Map<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Map<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::ZERO; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    pub fn add_assign(&mut self, o: &Map<T>) {
        debug_assert_eq!(self.data.len(), o.data.len());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += *b;
        }
    }

    pub fn cast<U: Real>(&self) -> Map<U> {
        Map {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Lowers a map to `[c·k·k, h·w]` patches with zero padding `k / 2`.
pub fn im2col<T: Real>(x: &Map<T>, k: usize) -> Vec<T> {
    let (c, h, w) = (x.c, x.h, x.w);
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![T::ZERO; c * k * k * hw];
    for ci in 0..c {
        let src = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let dst = &mut cols[row + y * w + x0..row + y * w + x1];
                    let s0 = (sy as usize) * w + (x0 as isize + dx) as usize;
                    dst.copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Map<T> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut out = Map::zeros(c, h, w);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let s0 = ci * hw + (sy as usize) * w + (x0 as isize + dx) as usize;
                    let src = &cols[row + y * w + x0..row + y * w + x1];
                    for (o, v) in out.data[s0..s0 + (x1 - x0)].iter_mut().zip(src) {
                        *o += *v;
                    }
                }
            }
        }
    }
    out
}

/// Weight `[cout, cin·k·k]`, bias `[cout]`.
pub fn conv_forward<T: Real>(x: &Map<T>, weight: &[T], bias: &[T], cout: usize, k: usize) -> Map<T> {
    let hw = x.plane();
    let ckk = x.c * k * k;
    let mut out = Map::zeros(cout, x.h, x.w);
    for (o, b) in bias.iter().enumerate() {
        out.data[o * hw..(o + 1) * hw].fill(*b);
    }
    if k == 1 {
        matmul(cout, ckk, hw, weight, false, &x.data, false, &mut out.data, true);
    } else {
        let cols = im2col(x, k);
        matmul(cout, ckk, hw, weight, false, &cols, false, &mut out.data, true);
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// asked for.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    x: &Map<T>,
    dout: &Map<T>,
    weight: &[T],
    k: usize,
    dweight: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Map<T>> {
    let hw = x.plane();
    let ckk = x.c * k * k;
    let cout = dout.c;
    for (o, db) in dbias.iter_mut().enumerate() {
        let mut s = T::ZERO;
        for v in &dout.data[o * hw..(o + 1) * hw] {
            s += *v;
        }
        *db += s;
    }
    let cols_owned;
    let cols: &[T] = if k == 1 {
        &x.data
    } else {
        cols_owned = im2col(x, k);
        &cols_owned
    };
    matmul(cout, hw, ckk, &dout.data, false, cols, true, dweight, true);
    if !need_dx {
        return None;
    }
    let mut dcols = vec![T::ZERO; ckk * hw];
    matmul(ckk, cout, hw, weight, true, &dout.data, false, &mut dcols, false);
    if k == 1 {
        Some(Map::from_vec(x.c, x.h, x.w, dcols))
    } else {
        Some(col2im(&dcols, x.c, x.h, x.w, k))
    }
}

pub fn leaky_relu_inplace<T: Real>(x: &mut Map<T>, slope: T) {
    for v in &mut x.data {
        if *v < T::ZERO {
            *v = *v * slope;
        }
    }
}

/// Backward through a leaky ReLU given its output.
pub fn leaky_relu_backward<T: Real>(out: &Map<T>, dout: &mut Map<T>, slope: T) {
    for (d, o) in dout.data.iter_mut().zip(&out.data) {
        if *o <= T::ZERO {
            *d = *d * slope;
        }
    }
}

pub fn avg_pool2<T: Real>(x: &Map<T>) -> Map<T> {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let q = T::from_f64(0.25);
    let mut out = Map::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.channel(c);
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                out.data[c * h2 * w2 + y * w2 + xx] = (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * q;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(dout: &Map<T>) -> Map<T> {
    let (h, w) = (dout.h * 2, dout.w * 2);
    let q = T::from_f64(0.25);
    let mut dx = Map::zeros(dout.c, h, w);
    for c in 0..dout.c {
        for y in 0..h {
            for x in 0..w {
                dx.data[c * h * w + y * w + x] = dout.data[c * dout.h * dout.w + (y / 2) * dout.w + x / 2] * q;
            }
        }
    }
    dx
}

pub fn upsample2<T: Real>(x: &Map<T>) -> Map<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Map::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[c * h * w + y * w + xx] = x.data[c * x.h * x.w + (y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dout: &Map<T>) -> Map<T> {
    let (h2, w2) = (dout.h / 2, dout.w / 2);
    let mut dx = Map::zeros(dout.c, h2, w2);
    for c in 0..dout.c {
        for y in 0..dout.h {
            for x in 0..dout.w {
                dx.data[c * h2 * w2 + (y / 2) * w2 + x / 2] += dout.data[c * dout.h * dout.w + y * dout.w + x];
            }
        }
    }
    dx
}

pub fn concat<T: Real>(a: &Map<T>, b: &Map<T>) -> Map<T> {
    assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Map::from_vec(a.c + b.c, a.h, a.w, data)
}

pub fn split<T: Real>(x: Map<T>, first: usize) -> (Map<T>, Map<T>) {
    let cut = first * x.plane();
    let mut data = x.data;
    let rest = data.split_off(cut);
    (
        Map::from_vec(first, x.h, x.w, data),
        Map::from_vec(x.c - first, x.h, x.w, rest),
    )
}
