//! Raw slice kernels shared by the tape ops. Shapes are validated by callers.

use super::Scalar;

/// `c = a·b + beta·c` where `a` is logically `[m, k]` and `b` is `[k, n]`.
/// A `*_t` flag means the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; c does not alias a or b (distinct borrows).
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

/// Geometry of a 2-D convolution over NCHW input with OIHW weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Output columns `lo..hi` whose input column `oj·stride + kj − pad` lies
/// inside the image.
fn valid_cols(g: &ConvGeom, kj: usize, ow: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(ow);
    let hi = (g.width + g.pad).saturating_sub(kj).div_ceil(g.stride).clamp(lo, ow);
    (lo, hi)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.channels {
        let xc = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kj, ow);
                for oi in 0..oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oi * ow..(oi + 1) * ow];
                    if ii < 0 || ii >= g.height as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ii as usize * g.width..(ii as usize + 1) * g.width];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, jj) in out_row[lo..hi].iter_mut().zip((first..).step_by(g.stride)) {
                            *v = src[jj];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.channels {
        let dxc = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kj, ow);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oi in 0..oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let dst = &mut dxc[ii as usize * g.width..(ii as usize + 1) * g.width];
                    let from = &src[oi * ow + lo..oi * ow + hi];
                    for (&v, jj) in from.iter().zip((first..).step_by(g.stride)) {
                        dst[jj] += v;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    weight: &[T],
    bias: &[T],
    g: &ConvGeom,
) -> Vec<T> {
    let plane = g.out_plane();
    let out_len = g.out_channels * plane;
    let mut out = vec![T::zero(); batch * out_len];
    let mut cols = vec![T::zero(); g.patch_len() * plane];
    for s in 0..batch {
        im2col(&x[s * g.in_len()..(s + 1) * g.in_len()], g, &mut cols);
        let y = &mut out[s * out_len..(s + 1) * out_len];
        for (o, chunk) in y.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[o]);
        }
        gemm(
            g.out_channels,
            g.patch_len(),
            plane,
            weight,
            false,
            &cols,
            false,
            T::one(),
            y,
        );
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    weight: &[T],
    dy: &[T],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let plane = g.out_plane();
    let out_len = g.out_channels * plane;
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); g.out_channels];
    let mut dx = need_dx.then(|| vec![T::zero(); batch * g.in_len()]);
    let mut cols = vec![T::zero(); g.patch_len() * plane];
    let mut dcols = vec![T::zero(); g.patch_len() * plane];
    for s in 0..batch {
        let dys = &dy[s * out_len..(s + 1) * out_len];
        for (o, chunk) in dys.chunks(plane).enumerate() {
            db[o] += chunk.iter().copied().sum::<T>();
        }
        im2col(&x[s * g.in_len()..(s + 1) * g.in_len()], g, &mut cols);
        // dW[O, CKK] += dY[O, P] · cols[CKK, P]^T
        gemm(
            g.out_channels,
            plane,
            g.patch_len(),
            dys,
            false,
            &cols,
            true,
            T::one(),
            &mut dw,
        );
        if let Some(dx) = dx.as_mut() {
            // dcols[CKK, P] = W[O, CKK]^T · dY[O, P]
            gemm(
                g.patch_len(),
                g.out_channels,
                plane,
                weight,
                true,
                dys,
                false,
                T::zero(),
                &mut dcols,
            );
            col2im_add(&dcols, g, &mut dx[s * g.in_len()..(s + 1) * g.in_len()]);
        }
    }
    (dx, dw, db)
}

/// Non-overlapping `k×k` average pooling over `planes` planes of `h×w`.
pub fn avg_pool_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::lit((k * k) as f64);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = T::zero();
                for di in 0..k {
                    let row = &src[(i * k + di) * w + j * k..(i * k + di) * w + j * k + k];
                    for &v in row {
                        acc += v;
                    }
                }
                dst[i * ow + j] = acc * inv;
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::lit((k * k) as f64);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = src[(i / k) * ow + j / k] * inv;
            }
        }
    }
    dx
}

/// Keeps every `stride`-th row and column.
pub fn subsample_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, stride: usize) -> Vec<T> {
    let (oh, ow) = (h / stride, w / stride);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                out.push(src[i * stride * w + j * stride]);
            }
        }
    }
    out
}

pub fn subsample_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize, stride: usize) -> Vec<T> {
    let (oh, ow) = (h / stride, w / stride);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for i in 0..oh {
            for j in 0..ow {
                dx[p * h * w + i * stride * w + j * stride] = dy[p * oh * ow + i * ow + j];
            }
        }
    }
    dx
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Per-channel statistics of an NCHW batch: `(mean, biased variance)`.
pub fn channel_stats<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let m = T::lit((n * plane) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for s in 0..n {
            let base = (s * c + ch) * plane;
            acc += x[base..base + plane].iter().copied().sum::<T>();
        }
        mean[ch] = acc / m;
        let mut sq = T::zero();
        for s in 0..n {
            let base = (s * c + ch) * plane;
            for &v in &x[base..base + plane] {
                let d = v - mean[ch];
                sq += d * d;
            }
        }
        var[ch] = sq / m;
    }
    (mean, var)
}
