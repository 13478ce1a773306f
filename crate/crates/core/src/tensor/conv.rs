//! Grouped, strided, dilated 2D convolution via im2col + GEMM.

use super::linalg::{add_macs, gemm, Layout};
use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a 2D convolution. Pairs are `(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    /// Stride 1 with "same" zero padding for an odd `k×k` kernel.
    pub fn same(k: usize) -> Self {
        Conv2dOptions {
            padding: (k / 2, k / 2),
            ..Default::default()
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let eh = self.dilation.0 * (kh - 1) + 1;
        let ew = self.dilation.1 * (kw - 1) + 1;
        let ph = h + 2 * self.padding.0;
        let pw = w + 2 * self.padding.1;
        if ph < eh || pw < ew {
            return None;
        }
        Some(((ph - eh) / self.stride.0 + 1, (pw - ew) / self.stride.1 + 1))
    }
}

struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    opts: Conv2dOptions,
}

impl Geom {
    fn cg(&self) -> usize {
        self.cin / self.opts.groups
    }

    fn coutg(&self) -> usize {
        self.cout / self.opts.groups
    }

    fn krows(&self) -> usize {
        self.cg() * self.kh * self.kw
    }

    fn npix(&self) -> usize {
        self.ho * self.wo
    }

    /// Source pixel for output (oy, ox) and kernel tap (ky, kx), if inside.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.opts.stride.0 + ky * self.opts.dilation.0) as isize - self.opts.padding.0 as isize;
        let x = (ox * self.opts.stride.1 + kx * self.opts.dilation.1) as isize - self.opts.padding.1 as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some(y as usize * self.w + x as usize)
        }
    }

    fn im2col(&self, x: &[f64], group: usize, cols: &mut [f64]) {
        let np = self.npix();
        let c0 = group * self.cg();
        for c in 0..self.cg() {
            let plane = &x[(c0 + c) * self.h * self.w..(c0 + c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * np..(row + 1) * np];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            dst[oy * self.wo + ox] = match self.src(oy, ox, ky, kx) {
                                Some(i) => plane[i],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], group: usize, dx: &mut [f64]) {
        let np = self.npix();
        let c0 = group * self.cg();
        for c in 0..self.cg() {
            let plane = &mut dx[(c0 + c) * self.h * self.w..(c0 + c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * np..(row + 1) * np];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some(i) = self.src(oy, ox, ky, kx) {
                                plane[i] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// Convolves `self: [C_in×H×W]` with `weight: [C_out×C_in/groups×kh×kw]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, opts: Conv2dOptions) -> Result<Tensor> {
        if self.rank() != 3 || weight.rank() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects [C,H,W] input and [O,I,kh,kw] weight, got {:?} and {:?}",
                self.shape(),
                weight.shape()
            )));
        }
        let (cin, h, w) = (self.dim(0), self.dim(1), self.dim(2));
        let (cout, cg, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
        let g = opts.groups;
        if g == 0 || cin % g != 0 || cout % g != 0 || cg * g != cin {
            return Err(Error::config(format!(
                "conv2d groups {g} incompatible with {cin} input / {cout} output channels (weight {:?})",
                weight.shape()
            )));
        }
        if opts.dilation.0 == 0 || opts.dilation.1 == 0 || opts.stride.0 == 0 || opts.stride.1 == 0 {
            return Err(Error::config("conv2d stride and dilation must be >= 1"));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::dim(format!("conv2d bias {:?} for {cout} outputs", b.shape())));
            }
        }
        let (ho, wo) = opts
            .output_size(h, w, kh, kw)
            .ok_or_else(|| Error::dim(format!("conv2d kernel {kh}x{kw} larger than padded input {h}x{w}")))?;
        let geom = Geom { cin, h, w, cout, kh, kw, ho, wo, opts };
        let np = geom.npix();
        let kr = geom.krows();
        let mut out = vec![0.0; cout * np];
        let mut cols = vec![0.0; kr * np];
        for grp in 0..g {
            geom.im2col(self.data(), grp, &mut cols);
            let wg = &weight.data()[grp * geom.coutg() * kr..(grp + 1) * geom.coutg() * kr];
            let og = &mut out[grp * geom.coutg() * np..(grp + 1) * geom.coutg() * np];
            gemm(geom.coutg(), kr, np, wg, Layout::row_major(kr), &cols, Layout::row_major(np), og, false);
        }
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                out[o * np..(o + 1) * np].iter_mut().for_each(|v| *v += bv);
            }
        }
        add_macs((cout * kr * np) as u64);

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (x, wt, has_bias) = (self.clone(), weight.clone(), bias.is_some());
        Ok(Tensor::from_op("conv2d", vec![cout, ho, wo], out, parents, move |gy| {
            let mut gx = x.requires_grad().then(|| vec![0.0; x.numel()]);
            let mut gw = wt.requires_grad().then(|| vec![0.0; wt.numel()]);
            let mut cols = vec![0.0; kr * np];
            let mut dcols = vec![0.0; kr * np];
            let coutg = geom.coutg();
            for grp in 0..geom.opts.groups {
                let gyg = &gy[grp * coutg * np..(grp + 1) * coutg * np];
                if let Some(gw) = gw.as_mut() {
                    geom.im2col(x.data(), grp, &mut cols);
                    let dst = &mut gw[grp * coutg * kr..(grp + 1) * coutg * kr];
                    gemm(coutg, np, kr, gyg, Layout::row_major(np), &cols, Layout::transposed(np), dst, false);
                }
                if let Some(gx) = gx.as_mut() {
                    let wg = &wt.data()[grp * coutg * kr..(grp + 1) * coutg * kr];
                    gemm(kr, coutg, np, wg, Layout::transposed(kr), gyg, Layout::row_major(np), &mut dcols, false);
                    geom.col2im(&dcols, grp, gx);
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                let gb = (0..geom.cout).map(|o| gy[o * np..(o + 1) * np].iter().sum()).collect();
                grads.push(Some(gb));
            }
            grads
        }))
    }
}
