//! Direct 2D convolution kernels (forward and backward).
//!
//! Layout is NCHW for activations and OIKK for kernels. The stride-1
//! paths reduce the inner loop to contiguous slice updates so the
//! compiler can vectorize them; these dominate the training cost.
//! Parallel decomposition is per output plane (forward), per input
//! plane (input gradient) and per output channel (kernel gradient), so
//! every element is written by exactly one task and results are
//! bitwise independent of thread count.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

pub(super) struct Geometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub padding: usize,
}

pub(super) fn geometry(
    input_shape: &[usize],
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    if input_shape.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "conv2d expects an NCHW input, got shape {input_shape:?}"
        )));
    }
    if kernel_shape.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "conv2d expects an OIKK kernel, got shape {kernel_shape:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    let (n, c_in, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (c_out, k_in, kh, kw) = (
        kernel_shape[0],
        kernel_shape[1],
        kernel_shape[2],
        kernel_shape[3],
    );
    if k_in != c_in {
        return Err(Error::ShapeMismatch {
            context: "conv2d channels",
            lhs: input_shape.to_vec(),
            rhs: kernel_shape.to_vec(),
        });
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::InvalidShape(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    Ok(Geometry {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh,
        ow,
        stride,
        padding,
    })
}

pub(super) fn forward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Vec<f32>, Vec<usize>)> {
    let g = geometry(input.shape(), kernel.shape(), stride, padding)?;
    let out_plane = g.oh * g.ow;
    let mut out = vec![0.0f32; g.n * g.c_out * out_plane];
    let x = input.data();
    let k = kernel.data();

    out.par_chunks_mut(out_plane).enumerate().for_each(|(p, plane)| {
        let ni = p / g.c_out;
        let oc = p % g.c_out;
        for ic in 0..g.c_in {
            let src = &x[(ni * g.c_in + ic) * g.h * g.w..][..g.h * g.w];
            let ker = &k[(oc * g.c_in + ic) * g.kh * g.kw..][..g.kh * g.kw];
            accumulate_plane(plane, src, ker, &g);
        }
    });

    Ok((out, vec![g.n, g.c_out, g.oh, g.ow]))
}

/// plane[oh,ow] += sum_{r,c} ker[r,c] * src[oh*s + r - p, ow*s + c - p]
fn accumulate_plane(plane: &mut [f32], src: &[f32], ker: &[f32], g: &Geometry) {
    for ohr in 0..g.oh {
        let row = &mut plane[ohr * g.ow..][..g.ow];
        let ih0 = (ohr * g.stride) as isize - g.padding as isize;
        for r in 0..g.kh {
            let ih = ih0 + r as isize;
            if ih < 0 || ih >= g.h as isize {
                continue;
            }
            let irow = &src[(ih as usize) * g.w..][..g.w];
            let krow = &ker[r * g.kw..][..g.kw];
            if g.stride == 1 {
                for (c, &kv) in krow.iter().enumerate() {
                    let shift = c as isize - g.padding as isize;
                    let lo = (-shift).max(0) as usize;
                    let hi = (g.ow as isize).min(g.w as isize - shift).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    let s = &irow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (d, &v) in row[lo..hi].iter_mut().zip(s) {
                        *d += kv * v;
                    }
                }
            } else {
                for (c, &kv) in krow.iter().enumerate() {
                    let base = c as isize - g.padding as isize;
                    for (o, d) in row.iter_mut().enumerate() {
                        let iw = base + (o * g.stride) as isize;
                        if iw >= 0 && iw < g.w as isize {
                            *d += kv * irow[iw as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the input: scatter of `grad_out` through the kernel.
pub(super) fn grad_input(grad_out: &[f32], kernel: &[f32], g: &Geometry) -> Vec<f32> {
    let in_plane = g.h * g.w;
    let mut gi = vec![0.0f32; g.n * g.c_in * in_plane];

    gi.par_chunks_mut(in_plane).enumerate().for_each(|(p, plane)| {
        let ni = p / g.c_in;
        let ic = p % g.c_in;
        for oc in 0..g.c_out {
            let go = &grad_out[(ni * g.c_out + oc) * g.oh * g.ow..][..g.oh * g.ow];
            let ker = &kernel[(oc * g.c_in + ic) * g.kh * g.kw..][..g.kh * g.kw];
            for ohr in 0..g.oh {
                let grow = &go[ohr * g.ow..][..g.ow];
                let ih0 = (ohr * g.stride) as isize - g.padding as isize;
                for r in 0..g.kh {
                    let ih = ih0 + r as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let irow = &mut plane[(ih as usize) * g.w..][..g.w];
                    let krow = &ker[r * g.kw..][..g.kw];
                    if g.stride == 1 {
                        for (c, &kv) in krow.iter().enumerate() {
                            let shift = c as isize - g.padding as isize;
                            let lo = (-shift).max(0) as usize;
                            let hi = (g.ow as isize).min(g.w as isize - shift).max(0) as usize;
                            if lo >= hi {
                                continue;
                            }
                            let dst = &mut irow
                                [(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            for (d, &v) in dst.iter_mut().zip(&grow[lo..hi]) {
                                *d += kv * v;
                            }
                        }
                    } else {
                        for (c, &kv) in krow.iter().enumerate() {
                            let base = c as isize - g.padding as isize;
                            for (o, &v) in grow.iter().enumerate() {
                                let iw = base + (o * g.stride) as isize;
                                if iw >= 0 && iw < g.w as isize {
                                    irow[iw as usize] += kv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    gi
}

/// Gradient w.r.t. the kernel: correlation of `grad_out` with the input.
pub(super) fn grad_kernel(grad_out: &[f32], input: &[f32], g: &Geometry) -> Vec<f32> {
    let k_chunk = g.c_in * g.kh * g.kw;
    let mut gk = vec![0.0f32; g.c_out * k_chunk];

    gk.par_chunks_mut(k_chunk).enumerate().for_each(|(oc, kchunk)| {
        for ni in 0..g.n {
            let go = &grad_out[(ni * g.c_out + oc) * g.oh * g.ow..][..g.oh * g.ow];
            for ic in 0..g.c_in {
                let src = &input[(ni * g.c_in + ic) * g.h * g.w..][..g.h * g.w];
                let kk = &mut kchunk[ic * g.kh * g.kw..][..g.kh * g.kw];
                for ohr in 0..g.oh {
                    let grow = &go[ohr * g.ow..][..g.ow];
                    let ih0 = (ohr * g.stride) as isize - g.padding as isize;
                    for r in 0..g.kh {
                        let ih = ih0 + r as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let irow = &src[(ih as usize) * g.w..][..g.w];
                        for c in 0..g.kw {
                            let shift = c as isize - g.padding as isize;
                            let mut acc = 0.0f32;
                            if g.stride == 1 {
                                let lo = (-shift).max(0) as usize;
                                let hi =
                                    (g.ow as isize).min(g.w as isize - shift).max(0) as usize;
                                if lo < hi {
                                    let s = &irow[(lo as isize + shift) as usize
                                        ..(hi as isize + shift) as usize];
                                    for (&gv, &iv) in grow[lo..hi].iter().zip(s) {
                                        acc += gv * iv;
                                    }
                                }
                            } else {
                                for (o, &gv) in grow.iter().enumerate() {
                                    let iw = shift + (o * g.stride) as isize;
                                    if iw >= 0 && iw < g.w as isize {
                                        acc += gv * irow[iw as usize];
                                    }
                                }
                            }
                            kk[r * g.kw + c] += acc;
                        }
                    }
                }
            }
        }
    });

    gk
}
