//! Convolution, ReLU and bilinear-upsampling primitives over `C x H x W`
//! feature maps.
//!
//! Every operation takes an output [`Rect`] and touches only that window, so
//! the training path can evaluate the decoder on the receptive field of a
//! single pixel while inference runs the same code on the full frame.
//! Convolutions pad by `k / 2` replicating the edge values, so a constant
//! input yields constant features all the way to the border.

/// Half-open window `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Rect {
    pub const fn full(h: usize, w: usize) -> Self {
        Self { r0: 0, r1: h, c0: 0, c1: w }
    }

    pub const fn pixel(r: usize, c: usize) -> Self {
        Self { r0: r, r1: r + 1, c0: c, c1: c + 1 }
    }

    pub const fn rows(&self) -> std::ops::Range<usize> {
        self.r0..self.r1
    }

    pub const fn len(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feat {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Feat {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn ones(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![1.0; c * h * w] }
    }

    #[inline]
    pub fn at(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.h + r) * self.w + c]
    }

    #[inline]
    fn row(&self, ch: usize, r: usize) -> &[f64] {
        let start = (ch * self.h + r) * self.w;
        &self.data[start..start + self.w]
    }

    #[inline]
    fn row_mut(&mut self, ch: usize, r: usize) -> &mut [f64] {
        let start = (ch * self.h + r) * self.w;
        &mut self.data[start..start + self.w]
    }
}

/// Shape of one convolution layer. Weights are stored `[cout][cin][k][k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub const fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    const fn pad(&self) -> usize {
        self.k / 2
    }

    pub const fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.pad() - self.k) / self.stride + 1
    }

    #[cfg(test)]
    const fn widx(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.cin + ci) * self.k + ky) * self.k + kx
    }

    /// Input window read when computing the output window `out`.
    pub fn input_rect(&self, out: Rect, in_h: usize, in_w: usize) -> Rect {
        let span = |lo: usize, hi: usize, n: usize| {
            let start = (lo * self.stride).saturating_sub(self.pad());
            let end = ((hi - 1) * self.stride + self.k).saturating_sub(self.pad()).min(n);
            (start, end)
        };
        let (r0, r1) = span(out.r0, out.r1, in_h);
        let (c0, c1) = span(out.c0, out.c1, in_w);
        Rect { r0, r1, c0, c1 }
    }

    #[inline]
    fn input_coord(&self, o: usize, k: usize, n: usize) -> usize {
        (o * self.stride + k).saturating_sub(self.pad()).min(n - 1)
    }
}

/// Adds `bias[co]` over the window.
pub fn add_bias(out: &mut Feat, rect: Rect, bias: &[f64]) {
    for (co, &b) in bias.iter().enumerate().take(out.c) {
        for r in rect.rows() {
            for v in &mut out.row_mut(co, r)[rect.c0..rect.c1] {
                *v += b;
            }
        }
    }
}

/// Output columns of `[lo, hi)` whose tap `kx` falls inside `[0, in_w)`.
#[inline]
fn tap_cols(shape: ConvShape, kx: usize, lo: usize, hi: usize, in_w: usize) -> (usize, usize) {
    let (p, s) = (shape.pad(), shape.stride);
    // ix = ox * s + kx - p must satisfy 0 <= ix < in_w
    let min_ox = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    let max_ox = if in_w + p > kx { (in_w + p - kx - 1) / s + 1 } else { 0 };
    (lo.max(min_ox), hi.min(max_ox).max(lo.max(min_ox)))
}

/// Unrolls the receptive fields of the output window into a
/// `(input.c * k * k) x pixels` row-major matrix.
fn im2col(input: &Feat, rect: Rect, shape: ConvShape) -> Vec<f64> {
    let (k, s, p) = (shape.k, shape.stride, shape.pad());
    let npix = rect.len();
    let width = rect.c1 - rect.c0;
    let mut col = vec![0.0; input.c * k * k * npix];
    for (j, row) in col.chunks_exact_mut(npix).enumerate() {
        let (ci, ky, kx) = (j / (k * k), j / k % k, j % k);
        let (lo, hi) = tap_cols(shape, kx, rect.c0, rect.c1, input.w);
        for (i, oy) in rect.rows().enumerate() {
            let src = input.row(ci, shape.input_coord(oy, ky, input.h));
            let dst = &mut row[i * width..(i + 1) * width];
            let (a, b) = (lo - rect.c0, hi - rect.c0);
            dst[..a].fill(src[0]);
            dst[b..].fill(src[input.w - 1]);
            if s == 1 {
                dst[a..b].copy_from_slice(&src[lo + kx - p..hi + kx - p]);
            } else {
                for (d, ox) in dst[a..b].iter_mut().zip(lo..hi) {
                    *d = src[ox * s + kx - p];
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters a column matrix back onto `grad_in`.
fn col2im(col: &[f64], rect: Rect, shape: ConvShape, grad_in: &mut Feat) {
    let (k, s, p) = (shape.k, shape.stride, shape.pad());
    let npix = rect.len();
    let width = rect.c1 - rect.c0;
    let last = grad_in.w - 1;
    for (j, row) in col.chunks_exact(npix).enumerate() {
        let (ci, ky, kx) = (j / (k * k), j / k % k, j % k);
        let (lo, hi) = tap_cols(shape, kx, rect.c0, rect.c1, grad_in.w);
        for (i, oy) in rect.rows().enumerate() {
            let iy = shape.input_coord(oy, ky, grad_in.h);
            let src = &row[i * width..(i + 1) * width];
            let (a, b) = (lo - rect.c0, hi - rect.c0);
            let dst = grad_in.row_mut(ci, iy);
            dst[0] += src[..a].iter().sum::<f64>();
            dst[last] += src[b..].iter().sum::<f64>();
            if s == 1 {
                for (d, v) in dst[lo + kx - p..hi + kx - p].iter_mut().zip(&src[a..b]) {
                    *d += v;
                }
            } else {
                for (v, ox) in src[a..b].iter().zip(lo..hi) {
                    dst[ox * s + kx - p] += v;
                }
            }
        }
    }
}

/// Strided matrix view: element `(i, j)` lives at `offset + i * rs + j * cs`.
#[derive(Clone, Copy)]
struct View {
    offset: usize,
    rs: usize,
    cs: usize,
}

impl View {
    const fn rows(offset: usize, rs: usize) -> Self {
        Self { offset, rs, cs: 1 }
    }

    const fn transposed(offset: usize, rs: usize) -> Self {
        Self { offset, rs: 1, cs: rs }
    }

    fn end(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs + 1
    }
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], av: View, b: &[f64], bv: View, beta: f64, c: &mut [f64], cv: View) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || av.end(m, k) <= a.len(), "lhs view out of bounds");
    assert!(k == 0 || bv.end(k, n) <= b.len(), "rhs view out of bounds");
    assert!(cv.end(m, n) <= c.len(), "output view out of bounds");
    // SAFETY: the asserts above keep every strided access inside its slice,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// Copies the window of every channel into a dense `c x pixels` matrix.
fn gather(f: &Feat, rect: Rect) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.c * rect.len());
    for ch in 0..f.c {
        for r in rect.rows() {
            out.extend_from_slice(&f.row(ch, r)[rect.c0..rect.c1]);
        }
    }
    out
}

/// Accumulates the contribution of `input` into `out` over `rect`.
///
/// `input` supplies weight input-channels `[cin_offset, cin_offset + input.c)`
/// of a layer with `shape.cin` total inputs; concatenated inputs are handled
/// by calling this once per part.
pub fn conv_accum(out: &mut Feat, rect: Rect, input: &Feat, weights: &[f64], shape: ConvShape, cin_offset: usize) {
    let kk = shape.k * shape.k;
    let kdim = input.c * kk;
    let npix = rect.len();
    let col = im2col(input, rect, shape);
    let wv = View::rows(cin_offset * kk, shape.cin * kk);
    if rect == Rect::full(out.h, out.w) {
        let plane = out.h * out.w;
        gemm(shape.cout, kdim, npix, weights, wv, &col, View::rows(0, npix), 1.0, &mut out.data, View::rows(0, plane));
        return;
    }
    let mut tmp = vec![0.0; shape.cout * npix];
    gemm(shape.cout, kdim, npix, weights, wv, &col, View::rows(0, npix), 0.0, &mut tmp, View::rows(0, npix));
    let mut src = tmp.iter();
    for co in 0..shape.cout {
        for r in rect.rows() {
            for (d, s) in out.row_mut(co, r)[rect.c0..rect.c1].iter_mut().zip(&mut src) {
                *d += s;
            }
        }
    }
}

/// Backward pass of [`conv_accum`]: accumulates weight gradients and, when
/// requested, the gradient with respect to `input`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    grad_out: &Feat,
    rect: Rect,
    input: &Feat,
    weights: &[f64],
    grad_w: &mut [f64],
    shape: ConvShape,
    cin_offset: usize,
    grad_in: Option<&mut Feat>,
) {
    let kk = shape.k * shape.k;
    let kdim = input.c * kk;
    let npix = rect.len();
    let col = im2col(input, rect, shape);
    let gathered;
    let (g, gv): (&[f64], View) = if rect == Rect::full(grad_out.h, grad_out.w) {
        (&grad_out.data, View::rows(0, grad_out.h * grad_out.w))
    } else {
        gathered = gather(grad_out, rect);
        (&gathered, View::rows(0, npix))
    };
    let wrow = shape.cin * kk;
    // dW[co, j] += sum_p g[co, p] * col[j, p]
    gemm(shape.cout, npix, kdim, g, gv, &col, View::transposed(0, npix), 1.0, grad_w, View::rows(cin_offset * kk, wrow));
    if let Some(gin) = grad_in {
        // dcol[j, p] = sum_co w[co, j] * g[co, p]
        let mut dcol = vec![0.0; kdim * npix];
        gemm(kdim, shape.cout, npix, weights, View::transposed(cin_offset * kk, wrow), g, gv, 0.0, &mut dcol, View::rows(0, npix));
        col2im(&dcol, rect, shape, gin);
    }
}

pub fn bias_backward(grad_out: &Feat, rect: Rect, grad_b: &mut [f64]) {
    for (co, gb) in grad_b.iter_mut().enumerate().take(grad_out.c) {
        for r in rect.rows() {
            *gb += grad_out.row(co, r)[rect.c0..rect.c1].iter().sum::<f64>();
        }
    }
}

pub fn relu(f: &mut Feat, rect: Rect) {
    for ch in 0..f.c {
        for r in rect.rows() {
            for v in &mut f.row_mut(ch, r)[rect.c0..rect.c1] {
                *v = v.max(0.0);
            }
        }
    }
}

/// Zeroes gradient entries where the post-activation value is not positive.
pub fn relu_backward(grad: &mut Feat, activation: &Feat, rect: Rect) {
    for ch in 0..grad.c {
        for r in rect.rows() {
            let act = activation.row(ch, r);
            let g = grad.row_mut(ch, r);
            for x in rect.c0..rect.c1 {
                if act[x] <= 0.0 {
                    g[x] = 0.0;
                }
            }
        }
    }
}

/// Source taps of a 2x bilinear upsample (half-pixel centers, edge clamped).
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

#[inline]
fn tap(o: usize, n: usize) -> Tap {
    let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let w_hi = src - lo as f64;
    Tap { lo, hi, w_lo: 1.0 - w_hi, w_hi }
}

/// Source window of a 2x upsample producing output window `out`.
pub fn upsample_source_rect(out: Rect, in_h: usize, in_w: usize) -> Rect {
    Rect {
        r0: tap(out.r0, in_h).lo,
        r1: tap(out.r1 - 1, in_h).hi + 1,
        c0: tap(out.c0, in_w).lo,
        c1: tap(out.c1 - 1, in_w).hi + 1,
    }
}

/// Writes the 2x bilinear upsample of `input` into `out` over `rect`.
pub fn upsample2x(input: &Feat, out: &mut Feat, rect: Rect) {
    let cols: Vec<Tap> = (rect.c0..rect.c1).map(|x| tap(x, input.w)).collect();
    for ch in 0..input.c {
        for oy in rect.rows() {
            let ty = tap(oy, input.h);
            let a = input.row(ch, ty.lo);
            let b = input.row(ch, ty.hi);
            let dst = out.row_mut(ch, oy);
            for (x, tx) in (rect.c0..rect.c1).zip(&cols) {
                let top = tx.w_lo * a[tx.lo] + tx.w_hi * a[tx.hi];
                let bot = tx.w_lo * b[tx.lo] + tx.w_hi * b[tx.hi];
                dst[x] = ty.w_lo * top + ty.w_hi * bot;
            }
        }
    }
}

/// Adjoint of [`upsample2x`]: scatters `grad_out` over `rect` into `grad_in`.
pub fn upsample2x_backward(grad_out: &Feat, grad_in: &mut Feat, rect: Rect) {
    let cols: Vec<Tap> = (rect.c0..rect.c1).map(|x| tap(x, grad_in.w)).collect();
    for ch in 0..grad_out.c {
        for oy in rect.rows() {
            let ty = tap(oy, grad_in.h);
            for (x, tx) in (rect.c0..rect.c1).zip(&cols) {
                let g = grad_out.at(ch, oy, x);
                if g == 0.0 {
                    continue;
                }
                let (gt, gb) = (ty.w_lo * g, ty.w_hi * g);
                let top = grad_in.row_mut(ch, ty.lo);
                top[tx.lo] += tx.w_lo * gt;
                top[tx.hi] += tx.w_hi * gt;
                let bot = grad_in.row_mut(ch, ty.hi);
                bot[tx.lo] += tx.w_lo * gb;
                bot[tx.hi] += tx.w_hi * gb;
            }
        }
    }
}
