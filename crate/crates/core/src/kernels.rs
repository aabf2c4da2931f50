//! Numeric kernels: GEMM-backed convolution and bilinear resampling.
//!
//! Everything here works on raw channel-major slices and knows nothing about
//! the autodiff graph; [`crate::graph`] wires these into forward/backward ops.

/// `C = alpha * A * B + beta * C` over strided row/column views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Geometry of one 2-D convolution over a single batch item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// A 1x1, stride-1, unpadded convolution reads its input as the column
    /// matrix directly.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` is in range.
fn valid_span(g: &ConvGeom, kx: usize, ow: usize) -> (usize, usize) {
    let (s, p) = (g.stride, g.pad);
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    // Largest ox with ox * s + kx - p <= in_w - 1.
    let hi = if g.in_w + p <= kx { 0 } else { ((g.in_w - 1 + p - kx) / s + 1).min(ow) };
    (lo.min(hi), hi)
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (k, s) = (g.kernel, g.stride);
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                let (lo, hi) = valid_span(g, kx, ow);
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize || lo == hi {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let first = lo * s + kx - g.pad;
                    if s == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, &xv) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(s)) {
                            *v = xv;
                        }
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (k, s) = (g.kernel, g.stride);
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                let (lo, hi) = valid_span(g, kx, ow);
                if lo == hi {
                    continue;
                }
                let first = lo * s + kx - g.pad;
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let line = &src[oy * ow + lo..oy * ow + hi];
                    if s == 1 {
                        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(s).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of one batch item. `w` is `out_c × in_c × k × k`.
pub(crate) fn conv_forward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    let p = g.out_plane();
    let kk = g.patch_len();
    let cols: &[f64] = if g.is_pointwise() {
        x
    } else {
        scratch.resize(kk * p, 0.0);
        im2col(g, x, scratch);
        scratch
    };
    gemm(g.out_c, kk, p, 1.0, w, (kk, 1), cols, (p, 1), 0.0, out, p);
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_exact_mut(p).zip(b) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// Backward convolution of one batch item; accumulates into `dw`, `db`, and
/// (when requested) `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    scratch: &mut Vec<f64>,
) {
    let p = g.out_plane();
    let kk = g.patch_len();
    if let Some(db) = db {
        for (acc, row) in db.iter_mut().zip(dout.chunks_exact(p)) {
            *acc += row.iter().sum::<f64>();
        }
    }
    let pointwise = g.is_pointwise();
    {
        let cols: &[f64] = if pointwise {
            x
        } else {
            scratch.resize(kk * p, 0.0);
            im2col(g, x, scratch);
            scratch
        };
        // dW += dout * cols^T
        gemm(g.out_c, p, kk, 1.0, dout, (p, 1), cols, (1, p), 1.0, dw, kk);
    }
    if let Some(dx) = dx {
        if pointwise {
            // dx += W^T * dout
            gemm(kk, g.out_c, p, 1.0, w, (1, kk), dout, (p, 1), 1.0, dx, p);
        } else {
            scratch.resize(kk * p, 0.0);
            gemm(kk, g.out_c, p, 1.0, w, (1, kk), dout, (p, 1), 0.0, scratch, p);
            col2im(g, scratch, dx);
        }
    }
}

/// Source taps for one output coordinate of a bilinear resample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-centre bilinear taps mapping `src` samples onto `dst` samples.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Resamples one `in_h × in_w` plane into `out` using precomputed taps.
pub(crate) fn resize_plane(src: &[f64], in_w: usize, ys: &[Tap], xs: &[Tap], out: &mut [f64]) {
    let ow = xs.len();
    for (oy, ty) in ys.iter().enumerate() {
        let r0 = &src[ty.lo * in_w..(ty.lo + 1) * in_w];
        let r1 = &src[ty.hi * in_w..(ty.hi + 1) * in_w];
        let line = &mut out[oy * ow..(oy + 1) * ow];
        for (v, tx) in line.iter_mut().zip(xs) {
            let top = r0[tx.lo] * (1.0 - tx.frac) + r0[tx.hi] * tx.frac;
            let bottom = r1[tx.lo] * (1.0 - tx.frac) + r1[tx.hi] * tx.frac;
            *v = top * (1.0 - ty.frac) + bottom * ty.frac;
        }
    }
}

/// Adjoint of [`resize_plane`]: scatters output gradients back onto the source.
pub(crate) fn resize_plane_adjoint(
    dout: &[f64],
    in_w: usize,
    ys: &[Tap],
    xs: &[Tap],
    dsrc: &mut [f64],
) {
    let ow = xs.len();
    for (oy, ty) in ys.iter().enumerate() {
        let line = &dout[oy * ow..(oy + 1) * ow];
        for (&g, tx) in line.iter().zip(xs) {
            let top = g * (1.0 - ty.frac);
            let bottom = g * ty.frac;
            dsrc[ty.lo * in_w + tx.lo] += top * (1.0 - tx.frac);
            dsrc[ty.lo * in_w + tx.hi] += top * tx.frac;
            dsrc[ty.hi * in_w + tx.lo] += bottom * (1.0 - tx.frac);
            dsrc[ty.hi * in_w + tx.hi] += bottom * tx.frac;
        }
    }
}
