//! Forward and adjoint kernels over `[C, H, W]` feature maps.
//!
//! Every kernel here is single-threaded with a fixed accumulation order, so
//! repeated evaluation is bit-identical.

use crate::{Float, Tensor};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Float>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    debug_assert_eq!(col.len(), g.col_rows() * n);
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // valid ox range: 0 <= ox + kx - pad < w
                        let lo = g.pad.saturating_sub(kx).min(ow);
                        let hi = (g.w + g.pad).saturating_sub(kx).min(ow).max(lo);
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        let s0 = lo + kx - g.pad;
                        drow[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *d = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Float>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let lo = g.pad.saturating_sub(kx).min(ow);
                        let hi = (g.w + g.pad).saturating_sub(kx).min(ow).max(lo);
                        let s0 = lo + kx - g.pad;
                        for (d, &s) in drow[s0..s0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                            *d += s;
                        }
                    } else {
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn conv_geom<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> ConvGeom {
    let (c_in, h, wd) = x.dims3();
    let ws = w.shape();
    assert!(
        ws.len() == 4 && ws[1] == c_in && ws[2] == ws[3],
        "conv2d: weight {ws:?} incompatible with input {:?}",
        x.shape()
    );
    assert_eq!(b.shape(), &[ws[0]], "conv2d: bias shape");
    let g = ConvGeom {
        c_in,
        h,
        w: wd,
        k: ws[2],
        stride,
        pad,
    };
    assert!(
        h + 2 * pad >= g.k && wd + 2 * pad >= g.k,
        "conv2d: kernel {} larger than padded input {h}x{wd}",
        g.k
    );
    g
}


/// Padded copy used by the "same" stride-1 path: each channel plane is
/// `(h + 2p) x (w + 2p)` followed by a `k - 1` element zero gap, so every
/// kernel tap is a constant pointer offset into one contiguous buffer.
struct PaddedPlanes {
    wp: usize,
    plane: usize,
}

impl PaddedPlanes {
    fn new(h: usize, w: usize, k: usize) -> Self {
        let p = k / 2;
        let wp = w + 2 * p;
        Self {
            wp,
            plane: (h + 2 * p) * wp + k - 1,
        }
    }

    fn fill<T: Float>(&self, src: &[T], c: usize, h: usize, w: usize, p: usize, dst: &mut [T]) {
        dst.fill(T::zero());
        for ch in 0..c {
            for y in 0..h {
                let s = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
                let d0 = ch * self.plane + (y + p) * self.wp + p;
                dst[d0..d0 + w].copy_from_slice(s);
            }
        }
    }
}

fn is_same_conv(g: &ConvGeom) -> bool {
    g.stride == 1 && g.k > 1 && g.k % 2 == 1 && g.pad == g.k / 2
}

// Output on the padded-width grid: row y holds w valid columns then 2p junk ones.
fn conv_same<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let c_out = w.shape()[0];
    let (h, wd, k, ci) = (g.h, g.w, g.k, g.c_in);
    let pp = PaddedPlanes::new(h, wd, k);
    let n = h * pp.wp;
    let mut ext = Vec::with_capacity(c_out * n);
    for &bv in b.data() {
        ext.extend(std::iter::repeat_n(bv, n));
    }
    T::with_scratch(ci * pp.plane, |xp| {
        pp.fill(x.data(), ci, h, wd, g.pad, xp);
        for ky in 0..k {
            for kx in 0..k {
                let off = ky * pp.wp + kx;
                unsafe {
                    T::gemm(
                        c_out,
                        ci,
                        n,
                        T::one(),
                        w.data().as_ptr().add(ky * k + kx),
                        (ci * k * k) as isize,
                        (k * k) as isize,
                        xp.as_ptr().add(off),
                        pp.plane as isize,
                        1,
                        T::one(),
                        ext.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    });
    let mut out = Vec::with_capacity(c_out * h * wd);
    for row in ext.chunks_exact(pp.wp) {
        out.extend_from_slice(&row[..wd]);
    }
    Tensor::from_vec(&[c_out, h, wd], out).expect("conv output")
}

fn conv_same_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let c_out = w.shape()[0];
    let (h, wd, k, ci) = (g.h, g.w, g.k, g.c_in);
    let pp = PaddedPlanes::new(h, wd, k);
    let n = h * pp.wp;
    // dy on the padded-width grid; junk columns must be zero
    let mut dy_ext = vec![T::zero(); c_out * n];
    for (src, dst) in dy.data().chunks_exact(wd).zip(dy_ext.chunks_exact_mut(pp.wp)) {
        dst[..wd].copy_from_slice(src);
    }
    let mut dw: Tensor<T> = Tensor::zeros(w.shape());
    let mut dxp = vec![T::zero(); ci * pp.plane];
    T::with_scratch(ci * pp.plane, |xp| {
        pp.fill(x.data(), ci, h, wd, g.pad, xp);
        for ky in 0..k {
            for kx in 0..k {
                let off = ky * pp.wp + kx;
                let tap = ky * k + kx;
                unsafe {
                    // shifted(dxp) += W[:, :, ky, kx]^T * dY_ext
                    T::gemm(
                        ci,
                        c_out,
                        n,
                        T::one(),
                        w.data().as_ptr().add(tap),
                        (k * k) as isize,
                        (ci * k * k) as isize,
                        dy_ext.as_ptr(),
                        n as isize,
                        1,
                        T::one(),
                        dxp.as_mut_ptr().add(off),
                        pp.plane as isize,
                        1,
                    );
                }
            }
        }
        // dW = dY_ext * cols^T, where cols row (c, tap) is the tap-shifted plane c
        let kk = k * k;
        let mut cols = Vec::with_capacity(ci * kk * n);
        for c in 0..ci {
            for tap in 0..kk {
                let off = c * pp.plane + (tap / k) * pp.wp + tap % k;
                cols.extend_from_slice(&xp[off..off + n]);
            }
        }
        unsafe {
            T::gemm(
                ci * kk,
                n,
                c_out,
                T::one(),
                cols.as_ptr(),
                n as isize,
                1,
                dy_ext.as_ptr(),
                1,
                n as isize,
                T::zero(),
                dw.data_mut().as_mut_ptr(),
                1,
                (ci * kk) as isize,
            );
        }
    });
    let p = g.pad;
    let mut dx = Vec::with_capacity(ci * h * wd);
    for c in 0..ci {
        for y in 0..h {
            let r0 = c * pp.plane + (y + p) * pp.wp + p;
            dx.extend_from_slice(&dxp[r0..r0 + wd]);
        }
    }
    let dx = Tensor::from_vec(x.shape(), dx).expect("conv dx");
    (dx, dw)
}

/// Cross-correlation with zero padding, as in every mainstream conv layer.
pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
    let g = conv_geom(x, w, b, stride, pad);
    if is_same_conv(&g) {
        return conv_same(x, w, b, &g);
    }
    let c_out = w.shape()[0];
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    let kk = g.col_rows();
    let mut out = Vec::with_capacity(c_out * n);
    for &bv in b.data() {
        out.extend(std::iter::repeat_n(bv, n));
    }
    let run = |col: &[T], out: &mut [T]| unsafe {
        T::gemm(
            c_out,
            kk,
            n,
            T::one(),
            w.data().as_ptr(),
            kk as isize,
            1,
            col.as_ptr(),
            n as isize,
            1,
            T::one(),
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    };
    if g.is_pointwise() {
        run(x.data(), &mut out);
    } else {
        T::with_scratch(kk * n, |col| {
            im2col(x.data(), &g, col);
            run(col, &mut out);
        });
    }
    Tensor::from_vec(&[c_out, oh, ow], out).expect("conv2d output")
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let g = conv_geom(x, w, b, stride, pad);
    let c_out = w.shape()[0];
    let n = g.out_h() * g.out_w();
    let kk = g.col_rows();
    assert_eq!(dy.shape(), &[c_out, g.out_h(), g.out_w()], "conv2d backward: dy shape");

    let db = Tensor::from_fn(&[c_out], |o| dy.data()[o * n..(o + 1) * n].iter().copied().sum());
    if is_same_conv(&g) {
        let (dx, dw) = conv_same_backward(x, w, &g, dy);
        return (dx, dw, db);
    }

    let mut dw = Tensor::zeros(w.shape());
    // dW[o, r] = sum_j dY[o, j] * col[r, j]
    let weight_grad = |col: &[T], dw: &mut [T]| unsafe {
        T::gemm(
            c_out,
            n,
            kk,
            T::one(),
            dy.data().as_ptr(),
            n as isize,
            1,
            col.as_ptr(),
            1,
            n as isize,
            T::zero(),
            dw.as_mut_ptr(),
            kk as isize,
            1,
        );
    };
    // dcol = W^T dY
    let col_grad = |dcol: &mut [T]| unsafe {
        T::gemm(
            kk,
            c_out,
            n,
            T::one(),
            w.data().as_ptr(),
            1,
            kk as isize,
            dy.data().as_ptr(),
            n as isize,
            1,
            T::zero(),
            dcol.as_mut_ptr(),
            n as isize,
            1,
        );
    };

    let mut dx = Tensor::zeros(x.shape());
    if g.is_pointwise() {
        weight_grad(x.data(), dw.data_mut());
        col_grad(dx.data_mut());
    } else {
        T::with_scratch(kk * n, |buf| {
            im2col(x.data(), &g, buf);
            weight_grad(buf, dw.data_mut());
            col_grad(buf);
            col2im(buf, &g, dx.data_mut());
        });
    }
    (dx, dw, db)
}

// Bilinear x2 along one axis with half-pixel centers and edge clamping:
// out[2i] = 3/4 x[i] + 1/4 x[i-1], out[2i+1] = 3/4 x[i] + 1/4 x[i+1].
fn up2_rows<T: Float>(src: &[T], h: usize, w: usize, dst: &mut [T]) {
    let (q, tq) = (T::lit(0.25), T::lit(0.75));
    for i in 0..h {
        let prev = &src[i.saturating_sub(1) * w..(i.saturating_sub(1) + 1) * w];
        let cur = &src[i * w..(i + 1) * w];
        let next_i = (i + 1).min(h - 1);
        let next = &src[next_i * w..(next_i + 1) * w];
        let (top, bottom) = dst[2 * i * w..(2 * i + 2) * w].split_at_mut(w);
        for x in 0..w {
            top[x] = tq * cur[x] + q * prev[x];
            bottom[x] = tq * cur[x] + q * next[x];
        }
    }
}

fn up2_cols<T: Float>(src: &[T], h: usize, w: usize, dst: &mut [T]) {
    let (q, tq) = (T::lit(0.25), T::lit(0.75));
    let w2 = 2 * w;
    for y in 0..h {
        let s = &src[y * w..(y + 1) * w];
        let d = &mut dst[y * w2..(y + 1) * w2];
        for x in 0..w {
            let l = s[x.saturating_sub(1)];
            let r = s[(x + 1).min(w - 1)];
            d[2 * x] = tq * s[x] + q * l;
            d[2 * x + 1] = tq * s[x] + q * r;
        }
    }
}

/// Bilinear x2 upsampling (half-pixel centers, clamped borders).
pub fn upsample2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.dims3();
    let mut tmp = vec![T::zero(); 2 * h * w];
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    for ch in 0..c {
        up2_rows(&x.data()[ch * h * w..(ch + 1) * h * w], h, w, &mut tmp);
        up2_cols(&tmp, 2 * h, w, &mut out.data_mut()[ch * 4 * h * w..(ch + 1) * 4 * h * w]);
    }
    out
}

/// Adjoint of [`upsample2`].
pub fn upsample2_backward<T: Float>(dy: &Tensor<T>) -> Tensor<T> {
    let (c, h2, w2) = dy.dims3();
    let (h, w) = (h2 / 2, w2 / 2);
    let (q, tq) = (T::lit(0.25), T::lit(0.75));
    let mut out = Tensor::zeros(&[c, h, w]);
    let mut tmp = vec![T::zero(); h2 * w];
    for ch in 0..c {
        let g = &dy.data()[ch * h2 * w2..(ch + 1) * h2 * w2];
        tmp.fill(T::zero());
        for y in 0..h2 {
            let s = &g[y * w2..(y + 1) * w2];
            let d = &mut tmp[y * w..(y + 1) * w];
            for x in 0..w {
                let (a, b) = (s[2 * x], s[2 * x + 1]);
                d[x] += tq * (a + b);
                d[x.saturating_sub(1)] += q * a;
                d[(x + 1).min(w - 1)] += q * b;
            }
        }
        let d = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            let prev = i.saturating_sub(1);
            let next = (i + 1).min(h - 1);
            for x in 0..w {
                let a = tmp[2 * i * w + x];
                let b = tmp[(2 * i + 1) * w + x];
                d[i * w + x] += tq * (a + b);
                d[prev * w + x] += q * a;
                d[next * w + x] += q * b;
            }
        }
    }
    out
}

/// 2x2 average pooling; equals bilinear x0.5 with half-pixel centers.
pub fn avg_pool2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.dims3();
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let xs = x.data();
    Tensor::from_fn(&[c, oh, ow], |i| {
        let ch = i / (oh * ow);
        let y = (i / ow) % oh;
        let xx = i % ow;
        let base = ch * h * w + 2 * y * w + 2 * xx;
        quarter * (xs[base] + xs[base + 1] + xs[base + w] + xs[base + w + 1])
    })
}

pub fn avg_pool2_backward<T: Float>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, oh, ow) = dy.dims3();
    let quarter = T::lit(0.25);
    let g = dy.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        if y / 2 >= oh || x / 2 >= ow {
            return T::zero();
        }
        quarter * g[ch * oh * ow + (y / 2) * ow + x / 2]
    })
}

/// Per-channel spatial mean: `[C, H, W] -> [C, 1, 1]`.
pub fn mean_spatial<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.dims3();
    let n = h * w;
    let inv = T::one() / T::from(n).unwrap();
    Tensor::from_fn(&[c, 1, 1], |ch| {
        x.data()[ch * n..(ch + 1) * n].iter().copied().sum::<T>() * inv
    })
}

pub fn mean_spatial_backward<T: Float>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let c = dy.shape()[0];
    let n = h * w;
    let inv = T::one() / T::from(n).unwrap();
    Tensor::from_fn(&[c, h, w], |i| dy.data()[i / n] * inv)
}

/// `x[c, :, :] * g[c]` for a `[C, 1, 1]` gate.
pub fn scale_channels<T: Float>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.dims3();
    assert_eq!(g.shape(), &[c, 1, 1], "scale_channels: gate shape");
    let n = h * w;
    Tensor::from_fn(x.shape(), |i| x.data()[i] * g.data()[i / n])
}

pub fn scale_channels_backward<T: Float>(x: &Tensor<T>, g: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = x.dims3();
    let n = h * w;
    let dx = Tensor::from_fn(x.shape(), |i| dy.data()[i] * g.data()[i / n]);
    let dg = Tensor::from_fn(&[c, 1, 1], |ch| {
        let xs = &x.data()[ch * n..(ch + 1) * n];
        let ds = &dy.data()[ch * n..(ch + 1) * n];
        xs.iter().zip(ds).map(|(&a, &b)| a * b).sum()
    });
    (dx, dg)
}

pub fn add<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
    let mut out = a.clone();
    out.add_assign(b);
    out
}

pub fn relu<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Channel concatenation of `[C_i, H, W]` maps.
pub fn concat<T: Float>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let (_, h, w) = parts[0].dims3();
    let mut c = 0;
    let mut data = Vec::new();
    for p in parts {
        let (pc, ph, pw) = p.dims3();
        assert_eq!((ph, pw), (h, w), "concat: spatial mismatch");
        c += pc;
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(&[c, h, w], data).expect("concat")
}

/// `sum(sqrt((p - t)^2 + eps^2))` as a `[1, 1, 1]` tensor.
pub fn charbonnier_sum<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, eps: T) -> Tensor<T> {
    assert_eq!(pred.shape(), target.shape(), "charbonnier: shape mismatch");
    // summed in f64 so long sequences do not lose the loss to rounding
    let e2 = eps * eps;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            (d * d + e2).sqrt().to_f64().unwrap_or(f64::NAN)
        })
        .sum();
    Tensor::full(&[1, 1, 1], T::from_f64(s).unwrap_or(T::nan()))
}

pub fn charbonnier_sum_backward<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, eps: T, dy: T) -> Tensor<T> {
    let e2 = eps * eps;
    Tensor::from_fn(pred.shape(), |i| {
        let d = pred.data()[i] - target.data()[i];
        dy * d / (d * d + e2).sqrt()
    })
}
