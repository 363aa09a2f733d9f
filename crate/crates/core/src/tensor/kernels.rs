//! Raw NCHW kernels: convolution, pooling and per-channel normalization.
//! Shapes are validated by the tape before these are called.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolParams {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

/// `floor((size + 2p - d(k-1) - 1) / s) + 1`, or an error when that is not positive.
pub fn conv_out_extent(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<usize> {
    if stride == 0 || dilation == 0 || kernel == 0 {
        return Err(Error::invalid(
            "conv_out_extent",
            "stride, dilation and kernel must be positive",
        ));
    }
    let span = dilation * (kernel - 1) + 1;
    let padded = size + 2 * padding;
    if padded < span {
        return Err(Error::invalid(
            "conv_out_extent",
            format!("non-positive output extent (input {size}, kernel {kernel}, padding {padding}, dilation {dilation})"),
        ));
    }
    Ok((padded - span) / stride + 1)
}

/// Output positions `o` for which `o*stride + offset - padding` lands in `0..size`.
#[inline]
fn valid_range(
    out: usize,
    size: usize,
    stride: usize,
    offset: usize,
    padding: usize,
) -> (usize, usize) {
    let off = offset as isize - padding as isize;
    let s = stride as isize;
    // smallest o with o*s + off >= 0
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    // largest o with o*s + off <= size-1
    let hi_excl = {
        let lim = size as isize - 1 - off;
        if lim < 0 {
            0
        } else {
            (lim / s + 1).min(out as isize)
        }
    };
    let lo = lo.min(out as isize);
    (lo as usize, hi_excl.max(lo) as usize)
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub p: ConvParams,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], p: ConvParams) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: x.to_vec(),
                right: k.to_vec(),
            });
        }
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (o, ci, kh, kw) = (k[0], k[1], k[2], k[3]);
        if p.groups == 0 || c % p.groups != 0 || o % p.groups != 0 {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "channels in={c} out={o} not divisible by groups={}",
                    p.groups
                ),
            ));
        }
        if ci != c / p.groups {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: x.to_vec(),
                right: k.to_vec(),
            });
        }
        let oh = conv_out_extent(h, kh, p.stride, p.padding, p.dilation)?;
        let ow = conv_out_extent(w, kw, p.stride, p.padding, p.dilation)?;
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            oh,
            ow,
            p,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.oh, self.ow]
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.o * g.oh * g.ow];
    let cg = g.c / g.p.groups;
    let og = g.o / g.p.groups;
    let ConvParams {
        stride: s,
        padding: pad,
        dilation: d,
        ..
    } = g.p;
    for n in 0..g.n {
        for oc in 0..g.o {
            let grp = oc / og;
            let obase = (n * g.o + oc) * g.oh * g.ow;
            for icl in 0..cg {
                let ic = grp * cg + icl;
                let xbase = (n * g.c + ic) * g.h * g.w;
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = valid_range(g.oh, g.h, s, ki * d, pad);
                    for kj in 0..g.kw {
                        let wv = k[((oc * cg + icl) * g.kh + ki) * g.kw + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_range(g.ow, g.w, s, kj * d, pad);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + ki * d - pad;
                            let orow = obase + oh * g.ow;
                            let xrow = xbase + ih * g.w;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * s + kj * d - pad;
                                out[orow + ow] += wv * x[xrow + iw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dk)`.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    k: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let cg = g.c / g.p.groups;
    let og = g.o / g.p.groups;
    let ConvParams {
        stride: s,
        padding: pad,
        dilation: d,
        ..
    } = g.p;
    for n in 0..g.n {
        for oc in 0..g.o {
            let grp = oc / og;
            let obase = (n * g.o + oc) * g.oh * g.ow;
            for icl in 0..cg {
                let ic = grp * cg + icl;
                let xbase = (n * g.c + ic) * g.h * g.w;
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = valid_range(g.oh, g.h, s, ki * d, pad);
                    for kj in 0..g.kw {
                        let widx = ((oc * cg + icl) * g.kh + ki) * g.kw + kj;
                        let wv = k[widx];
                        let (ow_lo, ow_hi) = valid_range(g.ow, g.w, s, kj * d, pad);
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + ki * d - pad;
                            let orow = obase + oh * g.ow;
                            let xrow = xbase + ih * g.w;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * s + kj * d - pad;
                                let gy = dy[orow + ow];
                                acc += gy * x[xrow + iw];
                                dx[xrow + iw] += wv * gy;
                            }
                        }
                        dk[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dk)
}

pub(crate) struct PoolGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub p: PoolParams,
}

impl PoolGeom {
    pub fn new(x: &[usize], p: PoolParams) -> Result<Self> {
        if x.len() != 4 {
            return Err(Error::invalid(
                "pool2d",
                format!("expected NCHW input, got {x:?}"),
            ));
        }
        if p.padding >= p.window {
            return Err(Error::invalid(
                "pool2d",
                "padding must be smaller than the window",
            ));
        }
        let oh = conv_out_extent(x[2], p.window, p.stride, p.padding, 1)?;
        let ow = conv_out_extent(x[3], p.window, p.stride, p.padding, 1)?;
        Ok(PoolGeom {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            oh,
            ow,
            p,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.c, self.oh, self.ow]
    }

    /// Input index ranges covered by output cell `(oh, ow)`, clipped to the image.
    #[inline]
    fn window(&self, oh: usize, ow: usize) -> (usize, usize, usize, usize) {
        let h0 = (oh * self.p.stride) as isize - self.p.padding as isize;
        let w0 = (ow * self.p.stride) as isize - self.p.padding as isize;
        let k = self.p.window as isize;
        let hs = h0.max(0) as usize;
        let he = (h0 + k).min(self.h as isize) as usize;
        let ws = w0.max(0) as usize;
        let we = (w0 + k).min(self.w as isize) as usize;
        (hs, he, ws, we)
    }
}

/// Max pooling. Also returns, per output, the flat input index of the
/// maximum; the first one in row-major window order wins ties.
pub(crate) fn max_pool_forward(g: &PoolGeom, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.n * g.c * g.oh * g.ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..g.n * g.c {
        let base = plane * g.h * g.w;
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let (hs, he, ws, we) = g.window(oh, ow);
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + hs * g.w + ws;
                for ih in hs..he {
                    for iw in ws..we {
                        let i = base + ih * g.w + iw;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

/// Average pooling over the in-bounds part of each window (padding is not counted).
pub(crate) fn avg_pool_forward(g: &PoolGeom, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.n * g.c * g.oh * g.ow);
    for plane in 0..g.n * g.c {
        let base = plane * g.h * g.w;
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let (hs, he, ws, we) = g.window(oh, ow);
                let mut acc = 0.0;
                for ih in hs..he {
                    for iw in ws..we {
                        acc += x[base + ih * g.w + iw];
                    }
                }
                out.push(acc / ((he - hs) * (we - ws)) as f64);
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(g: &PoolGeom, dy: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; g.n * g.c * g.h * g.w];
    let mut o = 0;
    for plane in 0..g.n * g.c {
        let base = plane * g.h * g.w;
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let (hs, he, ws, we) = g.window(oh, ow);
                let share = dy[o] / ((he - hs) * (we - ws)) as f64;
                for ih in hs..he {
                    for iw in ws..we {
                        dx[base + ih * g.w + iw] += share;
                    }
                }
                o += 1;
            }
        }
    }
    dx
}

/// Per-channel mean and biased variance over (N, H, W) of an NCHW buffer.
pub(crate) fn channel_moments(shape: &[usize], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            acc += x[base..base + hw].iter().sum::<f64>();
        }
        let mu = acc / m;
        let mut sq = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            sq += x[base..base + hw]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    (mean, var)
}
