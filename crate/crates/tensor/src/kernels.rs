//! Raw numeric loops behind the heavyweight tape ops.
//!
//! Everything is direct (no im2col, no FFT): at desk scale the naive loops are
//! fast enough and keep the arithmetic order fixed, which the determinism
//! invariant depends on.

use crate::dtype::Real;
use crate::tape::Padding;

/// Output extent and leading pad for one spatial axis.
///
/// SAME follows the ceil convention: out = ceil(in / stride), with the total
/// padding split low-side-first. VALID requires in >= k.
pub fn conv_axis(in_len: usize, k: usize, stride: usize, pad: Padding) -> (usize, usize) {
    match pad {
        Padding::Same => {
            let out = in_len.div_ceil(stride);
            let needed = ((out - 1) * stride + k).saturating_sub(in_len);
            (out, needed / 2)
        }
        Padding::Valid => ((in_len - k) / stride + 1, 0),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd<S: Real>(
    x: &[S],
    xs: [usize; 4],
    w: &[S],
    k: usize,
    c_out: usize,
    bias: &[S],
    stride: usize,
    pad: Padding,
) -> (Vec<S>, [usize; 4]) {
    let [b, c_in, h, wd] = xs;
    let (oh, pad_y) = conv_axis(h, k, stride, pad);
    let (ow, pad_x) = conv_axis(wd, k, stride, pad);
    let mut out = vec![S::zero(); b * c_out * oh * ow];
    // Accumulate per output pixel across all input taps; the inner loop runs
    // over c_out so the kernel tensor [k,k,c_in,c_out] is walked contiguously.
    let mut acc = vec![S::zero(); c_out];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                acc.copy_from_slice(bias);
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad_y as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad_x as isize;
                        if ix < 0 || ix as usize >= wd {
                            continue;
                        }
                        for ci in 0..c_in {
                            let xv = x[((bi * c_in + ci) * h + iy as usize) * wd + ix as usize];
                            let wbase = ((ky * k + kx) * c_in + ci) * c_out;
                            for co in 0..c_out {
                                acc[co] += xv * w[wbase + co];
                            }
                        }
                    }
                }
                for co in 0..c_out {
                    out[((bi * c_out + co) * oh + oy) * ow + ox] = acc[co];
                }
            }
        }
    }
    (out, [b, c_out, oh, ow])
}

/// Gradients of conv2d. `dx`/`dw`/`db` are accumulated into when the
/// corresponding flag is set (callers skip dx for leaf images).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd<S: Real>(
    x: &[S],
    xs: [usize; 4],
    w: &[S],
    k: usize,
    c_out: usize,
    stride: usize,
    pad: Padding,
    dout: &[S],
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    let [b, c_in, h, wd] = xs;
    let (oh, pad_y) = conv_axis(h, k, stride, pad);
    let (ow, pad_x) = conv_axis(wd, k, stride, pad);
    if let Some(db) = db {
        for bi in 0..b {
            for co in 0..c_out {
                let mut s = S::zero();
                for oy in 0..oh {
                    for ox in 0..ow {
                        s += dout[((bi * c_out + co) * oh + oy) * ow + ox];
                    }
                }
                db[co] += s;
            }
        }
    }
    let need_dx = dx.is_some();
    let need_dw = dw.is_some();
    if !need_dx && !need_dw {
        return;
    }
    let mut dxs = dx;
    let mut dws = dw;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let dbase = (bi * c_out) * oh * ow + oy * ow + ox;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad_y as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad_x as isize;
                        if ix < 0 || ix as usize >= wd {
                            continue;
                        }
                        for ci in 0..c_in {
                            let xoff = ((bi * c_in + ci) * h + iy as usize) * wd + ix as usize;
                            let wbase = ((ky * k + kx) * c_in + ci) * c_out;
                            let xv = x[xoff];
                            let mut gx = S::zero();
                            for co in 0..c_out {
                                let g = dout[dbase + co * oh * ow];
                                gx += g * w[wbase + co];
                                if let Some(dw) = dws.as_deref_mut() {
                                    dw[wbase + co] += g * xv;
                                }
                            }
                            if let Some(dx) = dxs.as_deref_mut() {
                                dx[xoff] += gx;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling, VALID windows only. Returns output and the flat input argmax
/// per output element; ties resolve to the first (lowest flat index) element.
pub fn maxpool2d_fwd<S: Real>(
    x: &[S],
    xs: [usize; 4],
    window: usize,
    stride: usize,
) -> (Vec<S>, [usize; 4], Vec<usize>) {
    let [b, c, h, w] = xs;
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![S::zero(); b * c * oh * ow];
    let mut arg = vec![0usize; out.len()];
    for bi in 0..b {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = S::neg_infinity();
                    let mut best_at = 0usize;
                    for dy in 0..window {
                        for dx in 0..window {
                            let off = plane + (oy * stride + dy) * w + (ox * stride + dx);
                            if x[off] > best {
                                best = x[off];
                                best_at = off;
                            }
                        }
                    }
                    let o = ((bi * c + ci) * oh + oy) * ow + ox;
                    out[o] = best;
                    arg[o] = best_at;
                }
            }
        }
    }
    (out, [b, c, oh, ow], arg)
}

/// a [m,k] * b [k,n] -> out [m,n].
pub fn matmul_fwd<S: Real>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// Gradients of matmul: da = dout * b^T, db = a^T * dout.
pub fn matmul_bwd<S: Real>(
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    dout: &[S],
    da: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let drow = &dout[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                let mut s = S::zero();
                for j in 0..n {
                    s += drow[j] * brow[j];
                }
                da[i * k + p] += s;
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let drow = &dout[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &mut db[p * n..(p + 1) * n];
                for j in 0..n {
                    brow[j] += av * drow[j];
                }
            }
        }
    }
}
