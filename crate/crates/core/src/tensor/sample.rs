use super::Tensor;
use crate::error::{Error, Result};

/// Bilinear corner indices and weights for one sample point.
#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    // d(pixel coordinate)/d(normalized coordinate); zero when clamped
    sx: f64,
    sy: f64,
}

fn tap(u: f64, v: f64, h: usize, w: usize) -> Tap {
    let axis = |t: f64, n: usize| -> (usize, usize, f64, f64) {
        let span = (n - 1) as f64;
        let inside = (0.0..=1.0).contains(&t);
        let p = t.clamp(0.0, 1.0) * span;
        let i0 = (p.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64, if inside { span } else { 0.0 })
    };
    let (x0, x1, fx, sx) = axis(u, w);
    let (y0, y1, fy, sy) = axis(v, h);
    Tap { x0, x1, y0, y1, fx, fy, sx, sy }
}

impl Tensor {
    /// Samples `self: [C×H×W]` at normalized points `[P×2]` given as `(u, v)`,
    /// with `u` spanning columns and `v` rows; `0` and `1` land on the first and
    /// last cell centres. Points outside `[0,1]²` clamp to the border.
    /// Returns `[P×C]`, differentiable in both the features and the points.
    pub fn bilinear_sample(&self, points: &Tensor) -> Result<Tensor> {
        if self.rank() != 3 || points.rank() != 2 || points.dim(1) != 2 {
            return Err(Error::dim(format!(
                "bilinear_sample expects [C,H,W] and [P,2], got {:?} and {:?}",
                self.shape(),
                points.shape()
            )));
        }
        if let Some(bad) = points.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample coordinate {bad}")));
        }
        let (c, h, w) = (self.dim(0), self.dim(1), self.dim(2));
        let p = points.dim(0);
        let plane = h * w;
        let taps: Vec<Tap> = points.data().chunks(2).map(|uv| tap(uv[0], uv[1], h, w)).collect();
        let f = self.data();
        let mut out = vec![0.0; p * c];
        for (i, t) in taps.iter().enumerate() {
            let (a, b) = (t.y0 * w + t.x0, t.y0 * w + t.x1);
            let (cc, d) = (t.y1 * w + t.x0, t.y1 * w + t.x1);
            let (w00, w01) = ((1.0 - t.fy) * (1.0 - t.fx), (1.0 - t.fy) * t.fx);
            let (w10, w11) = (t.fy * (1.0 - t.fx), t.fy * t.fx);
            for ch in 0..c {
                let base = ch * plane;
                out[i * c + ch] = w00 * f[base + a] + w01 * f[base + b] + w10 * f[base + cc] + w11 * f[base + d];
            }
        }
        let (feat, pts) = (self.clone(), points.clone());
        Ok(Tensor::from_op("bilinear_sample", vec![p, c], out, vec![self.clone(), points.clone()], move |g| {
            let f = feat.data();
            let mut gf = feat.requires_grad().then(|| vec![0.0; feat.numel()]);
            let mut gp = pts.requires_grad().then(|| vec![0.0; pts.numel()]);
            for (i, t) in taps.iter().enumerate() {
                let (a, b) = (t.y0 * w + t.x0, t.y0 * w + t.x1);
                let (cc, d) = (t.y1 * w + t.x0, t.y1 * w + t.x1);
                let (w00, w01) = ((1.0 - t.fy) * (1.0 - t.fx), (1.0 - t.fy) * t.fx);
                let (w10, w11) = (t.fy * (1.0 - t.fx), t.fy * t.fx);
                let mut du = 0.0;
                let mut dv = 0.0;
                for ch in 0..c {
                    let gv = g[i * c + ch];
                    let base = ch * plane;
                    if let Some(gf) = gf.as_mut() {
                        gf[base + a] += w00 * gv;
                        gf[base + b] += w01 * gv;
                        gf[base + cc] += w10 * gv;
                        gf[base + d] += w11 * gv;
                    }
                    let (f00, f01, f10, f11) = (f[base + a], f[base + b], f[base + cc], f[base + d]);
                    du += gv * ((1.0 - t.fy) * (f01 - f00) + t.fy * (f11 - f10));
                    dv += gv * ((1.0 - t.fx) * (f10 - f00) + t.fx * (f11 - f01));
                }
                if let Some(gp) = gp.as_mut() {
                    gp[2 * i] = du * t.sx;
                    gp[2 * i + 1] = dv * t.sy;
                }
            }
            vec![gf, gp]
        }))
    }
}
