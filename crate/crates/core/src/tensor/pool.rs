use super::Tensor;
use crate::error::{Error, Result};

fn chw(t: &Tensor, op: &str) -> Result<(usize, usize, usize)> {
    if t.rank() != 3 {
        return Err(Error::dim(format!("{op} expects [C,H,W], got {:?}", t.shape())));
    }
    Ok((t.dim(0), t.dim(1), t.dim(2)))
}

/// Half-open window of output cell `i` when `n` inputs pool into `out` cells.
pub(crate) fn adaptive_window(i: usize, n: usize, out: usize) -> (usize, usize) {
    let start = i * n / out;
    let end = ((i + 1) * n).div_ceil(out);
    (start, end)
}

impl Tensor {
    /// Max over adaptive windows; the gradient routes to each window's argmax.
    pub fn adaptive_max_pool2d(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (c, h, w) = chw(self, "adaptive_max_pool2d")?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::config(format!(
                "adaptive_max_pool2d output {out_h}x{out_w} invalid for input {h}x{w}"
            )));
        }
        let x = self.data();
        let mut out = vec![0.0; c * out_h * out_w];
        let mut arg = vec![0usize; out.len()];
        for ch in 0..c {
            for i in 0..out_h {
                let (y0, y1) = adaptive_window(i, h, out_h);
                for j in 0..out_w {
                    let (x0, x1) = adaptive_window(j, w, out_w);
                    let mut best = f64::NEG_INFINITY;
                    let mut bi = 0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let idx = (ch * h + y) * w + xx;
                            if x[idx] > best {
                                best = x[idx];
                                bi = idx;
                            }
                        }
                    }
                    let o = (ch * out_h + i) * out_w + j;
                    out[o] = best;
                    arg[o] = bi;
                }
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op("adaptive_max_pool2d", vec![c, out_h, out_w], out, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            for (o, &a) in arg.iter().enumerate() {
                gi[a] += g[o];
            }
            vec![Some(gi)]
        }))
    }

    /// Nearest-neighbour upsampling by an integer `factor`, cropped to
    /// `out_h × out_w` (which must not exceed `factor` times the input).
    pub fn upsample_nearest(&self, factor: usize, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (c, h, w) = chw(self, "upsample_nearest")?;
        if factor == 0 || out_h > h * factor || out_w > w * factor {
            return Err(Error::dim(format!(
                "cannot upsample {h}x{w} by {factor} to {out_h}x{out_w}"
            )));
        }
        let x = self.data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            for y in 0..out_h {
                for xx in 0..out_w {
                    out[(ch * out_h + y) * out_w + xx] = x[(ch * h + y / factor) * w + xx / factor];
                }
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op("upsample_nearest", vec![c, out_h, out_w], out, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            for ch in 0..c {
                for y in 0..out_h {
                    for xx in 0..out_w {
                        gi[(ch * h + y / factor) * w + xx / factor] += g[(ch * out_h + y) * out_w + xx];
                    }
                }
            }
            vec![Some(gi)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_size_pool_is_identity() {
        let x = Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| (v as f64).sin()).collect());
        assert_eq!(x.adaptive_max_pool2d(4, 4).unwrap().data(), x.data());
    }

    #[test]
    fn global_pool_takes_max() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.adaptive_max_pool2d(1, 1).unwrap().data(), &[4.0]);
    }

    #[test]
    fn matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..35).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[1, 7, 5], data.clone());
        let y = x.adaptive_max_pool2d(3, 2).unwrap();
        // Windows per the floor/ceil rule, written out by hand.
        let rows = [(0, 3), (2, 5), (4, 7)];
        let cols = [(0, 3), (2, 5)];
        for (i, &(r0, r1)) in rows.iter().enumerate() {
            for (j, &(c0, c1)) in cols.iter().enumerate() {
                let mut m = f64::NEG_INFINITY;
                for r in r0..r1 {
                    for c in c0..c1 {
                        m = m.max(data[r * 5 + c]);
                    }
                }
                assert_eq!(y.data()[i * 2 + j], m);
            }
        }
    }

    #[test]
    fn oversized_output_is_config_error() {
        let x = Tensor::zeros(&[1, 3, 3]);
        assert!(matches!(x.adaptive_max_pool2d(4, 2), Err(Error::Config(_))));
    }

    #[test]
    fn pool_gradient_hits_argmax_only() {
        let x = Tensor::leaf(&[1, 2, 2], vec![1.0, 5.0, 3.0, 4.0]);
        x.adaptive_max_pool2d(1, 1).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_repeats_and_crops() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = x.upsample_nearest(2, 3, 4).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
    }
}
