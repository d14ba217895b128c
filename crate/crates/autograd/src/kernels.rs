//! Raw numeric kernels used by the tape operations.
//!
//! Everything here works on plain slices in row-major layout. The kernels are
//! sequential so results are bit-reproducible across runs.

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m × k` and `op(b)` is `k × n`.
///
/// `a` is stored `m × k` when `ta` is false and `k × m` when true (likewise `b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe exactly the `m×k`, `k×n` and `m×n` extents
    // of the slices checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution with square stride and symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        ConvGeom { stride, pad }
    }

    /// `same` padding for an odd kernel at stride 1.
    pub fn same(kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel, got {kernel}");
        ConvGeom {
            stride: 1,
            pad: kernel / 2,
        }
    }

    pub fn out_size(&self, input: usize, kernel: usize) -> usize {
        assert!(
            input + 2 * self.pad >= kernel,
            "kernel {kernel} larger than padded input {input}"
        );
        (input + 2 * self.pad - kernel) / self.stride + 1
    }
}

/// Dimensions shared by the three convolution kernels.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeom,
}

impl ConvDims {
    pub fn from_shapes(x: &[usize], w: &[usize], geom: ConvGeom) -> Self {
        assert_eq!(x.len(), 4, "conv input must be [B, C, H, W], got {x:?}");
        assert_eq!(w.len(), 4, "conv weight must be [Co, Ci, kh, kw], got {w:?}");
        assert_eq!(
            x[1], w[1],
            "conv input has {} channels, weight expects {}",
            x[1], w[1]
        );
        let ho = geom.out_size(x[2], w[2]);
        let wo = geom.out_size(x[3], w[3]);
        ConvDims {
            batch: x[0],
            c_in: x[1],
            h: x[2],
            w: x[3],
            c_out: w[0],
            kh: w[2],
            kw: w[3],
            ho,
            wo,
            geom,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_in, self.h, self.w]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.c_in, self.kh, self.kw]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_out, self.ho, self.wo]
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == 1 && self.geom.pad == 0
    }
}

/// Output columns `oj` whose source column `oj·s + kj − p` lies inside `0..w`.
fn valid_cols(d: &ConvDims, kj: usize) -> (usize, usize) {
    let (s, p) = (d.geom.stride, d.geom.pad);
    let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
    let hi = if d.w + p > kj { ((d.w + p - kj - 1) / s + 1).min(d.wo) } else { 0 };
    (lo, hi.max(lo))
}

fn im2col(d: &ConvDims, x: &[f64], cols: &mut [f64]) {
    let (s, p) = (d.geom.stride, d.geom.pad as isize);
    let ncols = d.col_cols();
    for c in 0..d.c_in {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = valid_cols(d, kj);
                for oi in 0..d.ho {
                    let ii = (oi * s) as isize + ki as isize - p;
                    let out_row = &mut dst[oi * d.wo..(oi + 1) * d.wo];
                    if ii < 0 || ii >= d.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * d.w..(ii as usize + 1) * d.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let first = lo * s + kj - d.geom.pad;
                    if s == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (k, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src[first + k * s];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(d: &ConvDims, cols: &[f64], x: &mut [f64]) {
    let (s, p) = (d.geom.stride, d.geom.pad as isize);
    let ncols = d.col_cols();
    for c in 0..d.c_in {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = valid_cols(d, kj);
                for oi in 0..d.ho {
                    let ii = (oi * s) as isize + ki as isize - p;
                    if ii < 0 || ii >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * d.w..(ii as usize + 1) * d.w];
                    let first = lo * s + kj - d.geom.pad;
                    let from = &src[oi * d.wo + lo..oi * d.wo + hi];
                    for (k, v) in from.iter().enumerate() {
                        dst[first + k * s] += v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation `y[b] = W ⋆ x[b]` (no bias).
pub fn conv2d(d: &ConvDims, x: &[f64], w: &[f64]) -> Vec<f64> {
    let (rows, ncols) = (d.col_rows(), d.col_cols());
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * ncols;
    let mut y = vec![0.0; d.batch * out_len];
    let mut cols = if d.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * ncols]
    };
    for b in 0..d.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let yb = &mut y[b * out_len..(b + 1) * out_len];
        if d.is_pointwise() {
            gemm(d.c_out, rows, ncols, w, false, xb, false, 0.0, yb);
        } else {
            im2col(d, xb, &mut cols);
            gemm(d.c_out, rows, ncols, w, false, &cols, false, 0.0, yb);
        }
    }
    y
}

/// Adjoint of [`conv2d`] with respect to its input: maps an output-shaped
/// tensor back to input shape using the same weights.
pub fn conv2d_back_input(d: &ConvDims, gy: &[f64], w: &[f64]) -> Vec<f64> {
    let (rows, ncols) = (d.col_rows(), d.col_cols());
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * ncols;
    let mut gx = vec![0.0; d.batch * in_len];
    let mut cols = vec![0.0; rows * ncols];
    for b in 0..d.batch {
        let gyb = &gy[b * out_len..(b + 1) * out_len];
        let gxb = &mut gx[b * in_len..(b + 1) * in_len];
        if d.is_pointwise() {
            gemm(rows, d.c_out, ncols, w, true, gyb, false, 0.0, gxb);
        } else {
            gemm(rows, d.c_out, ncols, w, true, gyb, false, 0.0, &mut cols);
            col2im_add(d, &cols, gxb);
        }
    }
    gx
}

/// Adjoint of [`conv2d`] with respect to its weights: correlates the input
/// with an output-shaped tensor, summing over the batch.
pub fn conv2d_back_weight(d: &ConvDims, x: &[f64], gy: &[f64]) -> Vec<f64> {
    let (rows, ncols) = (d.col_rows(), d.col_cols());
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * ncols;
    let mut gw = vec![0.0; d.c_out * rows];
    let mut cols = if d.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * ncols]
    };
    for b in 0..d.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gyb = &gy[b * out_len..(b + 1) * out_len];
        if d.is_pointwise() {
            gemm(d.c_out, ncols, rows, gyb, false, xb, true, 1.0, &mut gw);
        } else {
            im2col(d, xb, &mut cols);
            gemm(d.c_out, ncols, rows, gyb, false, &cols, true, 1.0, &mut gw);
        }
    }
    gw
}

/// Nearest-neighbour 2× upsampling of the two trailing axes.
pub fn upsample2x(planes: usize, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = vec![0.0; planes * h2 * w2];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * h2 * w2..(p + 1) * h2 * w2];
        for i in 0..h2 {
            for j in 0..w2 {
                dst[i * w2 + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    y
}

/// Sums non-overlapping 2×2 blocks of the two trailing axes (adjoint of [`upsample2x`]).
pub fn sum_pool2x(planes: usize, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
    assert!(h % 2 == 0 && w % 2 == 0, "sum_pool2x needs even dims");
    let (h2, w2) = (h / 2, w / 2);
    let mut y = vec![0.0; planes * h2 * w2];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * h2 * w2..(p + 1) * h2 * w2];
        for i in 0..h {
            for j in 0..w {
                dst[(i / 2) * w2 + j / 2] += src[i * w + j];
            }
        }
    }
    y
}

/// Repeats each of the `n` input elements over an `outer × · × inner` layout.
pub fn broadcast(outer: usize, inner: usize, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y = Vec::with_capacity(outer * n * inner);
    for _ in 0..outer {
        for &v in x {
            y.extend(std::iter::repeat_n(v, inner));
        }
    }
    y
}

/// Sums an `outer × n × inner` layout down to `n` elements (adjoint of [`broadcast`]).
pub fn reduce_sum(outer: usize, inner: usize, x: &[f64]) -> Vec<f64> {
    assert!(outer * inner > 0 && x.len() % (outer * inner) == 0);
    let n = x.len() / (outer * inner);
    let mut y = vec![0.0; n];
    for o in 0..outer {
        for (i, acc) in y.iter_mut().enumerate() {
            let start = (o * n + i) * inner;
            *acc += x[start..start + inner].iter().sum::<f64>();
        }
    }
    y
}

/// Takes `[start, start + len)` along the middle axis of an `outer × mid × inner` layout.
pub fn slice_mid(outer: usize, mid: usize, inner: usize, start: usize, len: usize, x: &[f64]) -> Vec<f64> {
    assert!(start + len <= mid);
    let mut y = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * mid + start) * inner;
        y.extend_from_slice(&x[base..base + len * inner]);
    }
    y
}

/// Places an `outer × len × inner` block at `start` inside a zero `outer × mid × inner` layout.
pub fn pad_mid(outer: usize, mid: usize, inner: usize, start: usize, len: usize, x: &[f64]) -> Vec<f64> {
    assert!(start + len <= mid);
    let mut y = vec![0.0; outer * mid * inner];
    for o in 0..outer {
        let base = (o * mid + start) * inner;
        y[base..base + len * inner].copy_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
    }
    y
}
