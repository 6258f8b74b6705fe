//! Convolution kernels (im2col + GEMM).

use super::Tensor;
use crate::error::{Error, Result};

/// Shape bookkeeping for a 2-D convolution mapping `[cin, h, w]` to
/// `[cout, ho, wo]`. A transposed convolution reuses the geometry of the
/// convolution it is the adjoint of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    /// Geometry of `conv2d(input, kernel)`.
    pub fn conv(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (b, cin, h, w) = dims4(input, "conv2d input")?;
        let (cout, kc, kh, kw) = dims4(kernel, "conv2d kernel")?;
        if kc != cin {
            return Err(Error::InvalidShape(format!(
                "conv2d: input has {cin} channels, kernel expects {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidShape("conv2d: stride must be positive".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::InvalidShape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeometry {
            batch: b,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    /// Geometry of the convolution whose input-gradient is
    /// `conv_transpose2d(input, kernel)`. Here `cin/h/w` describe the
    /// transposed op's *output* and `cout/ho/wo` its input.
    pub fn transposed(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (b, cin_t, h, w) = dims4(input, "conv_transpose2d input")?;
        let (kc, cout_t, kh, kw) = dims4(kernel, "conv_transpose2d kernel")?;
        if kc != cin_t {
            return Err(Error::InvalidShape(format!(
                "conv_transpose2d: input has {cin_t} channels, kernel expects {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidShape(
                "conv_transpose2d: stride must be positive".into(),
            ));
        }
        let full_h = (h as isize - 1) * stride as isize + kh as isize - 2 * pad as isize;
        let full_w = (w as isize - 1) * stride as isize + kw as isize - 2 * pad as isize;
        if h == 0 || w == 0 || full_h <= 0 || full_w <= 0 {
            return Err(Error::InvalidShape(format!(
                "conv_transpose2d: empty output ({full_h}x{full_w})"
            )));
        }
        Ok(ConvGeometry {
            batch: b,
            cin: cout_t,
            h: full_h as usize,
            w: full_w as usize,
            cout: cin_t,
            kh,
            kw,
            stride,
            pad,
            ho: h,
            wo: w,
        })
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * self.ho * self.wo
    }
}

fn dims4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::InvalidShape(format!(
            "{what} must be 4-D, got {shape:?}"
        ))),
    }
}

/// `c = a·b + beta·c` with optional transposition of the row-major operands.
/// `a` is m×k (or k×m if `ta`), `b` is k×n (or n×k if `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
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
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides and extents describe exactly the slices passed in.
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

fn im2col(x: &[f64], g: &ConvGeometry, col: &mut [f64]) {
    let p = g.col_cols();
    for c in 0..g.cin {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let dst = &mut col[row + oy * g.wo..row + (oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeometry, x: &mut [f64]) {
    let p = g.col_cols();
    for c in 0..g.cin {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + iy as usize) * g.w..][..g.w];
                    let src = &col[row + oy * g.wo..row + (oy + 1) * g.wo];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(bias: &Tensor, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::InvalidShape(format!(
            "bias shape {:?}, expected [{channels}]",
            bias.shape()
        )));
    }
    Ok(())
}

/// Forward convolution without recording to a graph.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::conv(input.shape(), kernel.shape(), stride, padding)?;
    check_bias(bias, g.cout)?;
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut col = vec![0.0; k * p];
    let mut out = vec![0.0; g.batch * g.out_len()];
    for b in 0..g.batch {
        im2col(&input.data()[b * g.in_len()..][..g.in_len()], &g, &mut col);
        let o = &mut out[b * g.out_len()..][..g.out_len()];
        for (c, chunk) in o.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[c]);
        }
        gemm(g.cout, k, p, kernel.data(), false, &col, false, 1.0, o);
    }
    Tensor::new(&[g.batch, g.cout, g.ho, g.wo], out)
}

/// Gradients of a convolution w.r.t. (input, kernel, bias); each is computed
/// only when requested.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    g: &ConvGeometry,
    gout: &[f64],
    need: [bool; 3],
) -> [Option<Vec<f64>>; 3] {
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut dx = need[0].then(|| vec![0.0; input.numel()]);
    let mut dw = need[1].then(|| vec![0.0; kernel.numel()]);
    let db = need[2].then(|| bias_grad(gout, g.batch, g.cout, p));
    let mut col = vec![0.0; k * p];
    for b in 0..g.batch {
        let go = &gout[b * g.out_len()..][..g.out_len()];
        if let Some(dw) = dw.as_mut() {
            im2col(&input.data()[b * g.in_len()..][..g.in_len()], g, &mut col);
            gemm(g.cout, p, k, go, false, &col, true, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(k, g.cout, p, kernel.data(), true, go, false, 0.0, &mut col);
            col2im(&col, g, &mut dx[b * g.in_len()..][..g.in_len()]);
        }
    }
    [dx, dw, db]
}

fn bias_grad(gout: &[f64], batch: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for b in 0..batch {
        for (c, d) in db.iter_mut().enumerate() {
            *d += gout[(b * channels + c) * plane..][..plane].iter().sum::<f64>();
        }
    }
    db
}

/// Forward transposed convolution without recording to a graph.
pub fn conv_transpose2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::transposed(input.shape(), kernel.shape(), stride, padding)?;
    check_bias(bias, g.cin)?;
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut col = vec![0.0; k * p];
    let mut out = vec![0.0; g.batch * g.in_len()];
    let plane = g.h * g.w;
    for b in 0..g.batch {
        let x = &input.data()[b * g.out_len()..][..g.out_len()];
        // col[k, p] = W^T[k, cout] · x[cout, p], W stored as [cout, k]
        gemm(k, g.cout, p, kernel.data(), true, x, false, 0.0, &mut col);
        let o = &mut out[b * g.in_len()..][..g.in_len()];
        for (c, chunk) in o.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[c]);
        }
        col2im(&col, &g, o);
    }
    Tensor::new(&[g.batch, g.cin, g.h, g.w], out)
}

pub(crate) fn conv_transpose2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    g: &ConvGeometry,
    gout: &[f64],
    need: [bool; 3],
) -> [Option<Vec<f64>>; 3] {
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut dx = need[0].then(|| vec![0.0; input.numel()]);
    let mut dw = need[1].then(|| vec![0.0; kernel.numel()]);
    let db = need[2].then(|| bias_grad(gout, g.batch, g.cin, g.h * g.w));
    if dx.is_none() && dw.is_none() {
        return [dx, dw, db];
    }
    let mut col = vec![0.0; k * p];
    for b in 0..g.batch {
        im2col(&gout[b * g.in_len()..][..g.in_len()], g, &mut col);
        if let Some(dx) = dx.as_mut() {
            let d = &mut dx[b * g.out_len()..][..g.out_len()];
            gemm(g.cout, k, p, kernel.data(), false, &col, false, 0.0, d);
        }
        if let Some(dw) = dw.as_mut() {
            let x = &input.data()[b * g.out_len()..][..g.out_len()];
            gemm(g.cout, p, k, x, false, &col, true, 1.0, dw);
        }
    }
    [dx, dw, db]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_sliding_window() {
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let k = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn hand_block_expansion() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv_transpose2d_forward(&x, &k, &Tensor::zeros(&[1]), 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        #[rustfmt::skip]
        let expected = [1.0, 1.0, 2.0, 2.0,
                        1.0, 1.0, 2.0, 2.0,
                        3.0, 3.0, 4.0, 4.0,
                        3.0, 3.0, 4.0, 4.0];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn rejects_channel_mismatch_and_empty_output() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0),
            Err(Error::InvalidShape(_))
        ));
        let k = Tensor::zeros(&[1, 2, 5, 5]);
        assert!(matches!(
            conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0),
            Err(Error::InvalidShape(_))
        ));
        let k = Tensor::zeros(&[2, 1, 1, 1]);
        let x1 = Tensor::zeros(&[1, 2, 1, 1]);
        assert!(conv_transpose2d_forward(&x1, &k, &Tensor::zeros(&[1]), 1, 1).is_err());
    }

    #[test]
    fn doubling_geometry() {
        let x = Tensor::zeros(&[1, 3, 8, 8]);
        let k = Tensor::zeros(&[3, 2, 4, 4]);
        let y = conv_transpose2d_forward(&x, &k, &Tensor::zeros(&[2]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 16, 16]);
    }
}
