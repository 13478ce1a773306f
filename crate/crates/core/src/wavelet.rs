//! Single-level orthonormal 2D Haar transform.
//!
//! Each 2×2 block `[[a, b], [c, d]]` maps to
//! `ll = (a+b+c+d)/2`, `lh = (a+b−c−d)/2`, `hl = (a−b+c−d)/2`,
//! `hh = (a−b−c+d)/2`. The block matrix is symmetric and orthogonal, so it is
//! its own inverse. Odd sizes are padded by repeating the last row/column and
//! the inverse crops back to the stored size.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bands of one decomposition level, each `[C × ⌈H/2⌉ × ⌈W/2⌉]`.
#[derive(Debug, Clone)]
pub struct Subbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
    /// Spatial size of the signal before analysis.
    pub size: (usize, usize),
}

impl Subbands {
    /// The four bands stacked along channels as `[ll; lh; hl; hh]`.
    pub fn stacked(&self) -> Result<Tensor> {
        Tensor::concat(&[self.ll.clone(), self.lh.clone(), self.hl.clone(), self.hh.clone()], 0)
    }

    /// Splits a `[4C × h × w]` stack back into bands.
    pub fn from_stacked(stack: &Tensor, size: (usize, usize)) -> Result<Subbands> {
        if stack.rank() != 3 || !stack.dim(0).is_multiple_of(4) {
            return Err(Error::dim(format!(
                "stacked bands need [4C,h,w], got {:?}",
                stack.shape()
            )));
        }
        let c = stack.dim(0) / 4;
        Ok(Subbands {
            ll: stack.narrow(0, 0, c)?,
            lh: stack.narrow(0, c, c)?,
            hl: stack.narrow(0, 2 * c, c)?,
            hh: stack.narrow(0, 3 * c, c)?,
            size,
        })
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Haar analysis of an even `[C × 2h × 2w]` grid into `[4 × C × h × w]`.
fn analyze_even(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (hh_, ww) = (2 * h, 2 * w);
    let band = c * h * w;
    let mut out = vec![0.0; 4 * band];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let base = ch * hh_ * ww;
                let a = x[base + 2 * i * ww + 2 * j];
                let b = x[base + 2 * i * ww + 2 * j + 1];
                let cc = x[base + (2 * i + 1) * ww + 2 * j];
                let d = x[base + (2 * i + 1) * ww + 2 * j + 1];
                let o = (ch * h + i) * w + j;
                out[o] = 0.5 * (a + b + cc + d);
                out[band + o] = 0.5 * (a + b - cc - d);
                out[2 * band + o] = 0.5 * (a - b + cc - d);
                out[3 * band + o] = 0.5 * (a - b - cc + d);
            }
        }
    }
    out
}

/// Inverse of [`analyze_even`].
fn synthesize_even(s: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (hh_, ww) = (2 * h, 2 * w);
    let band = c * h * w;
    let mut out = vec![0.0; c * hh_ * ww];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let o = (ch * h + i) * w + j;
                let (ll, lh, hl, hh) = (s[o], s[band + o], s[2 * band + o], s[3 * band + o]);
                let base = ch * hh_ * ww;
                out[base + 2 * i * ww + 2 * j] = 0.5 * (ll + lh + hl + hh);
                out[base + 2 * i * ww + 2 * j + 1] = 0.5 * (ll + lh - hl - hh);
                out[base + (2 * i + 1) * ww + 2 * j] = 0.5 * (ll - lh + hl - hh);
                out[base + (2 * i + 1) * ww + 2 * j + 1] = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
    out
}

/// Copies `[C×H×W]` into `[C×ph×pw]`; with `repeat` the extra row/column
/// duplicates the last one, otherwise it is zero.
fn pad(x: &[f64], c: usize, (h, w): (usize, usize), (ph, pw): (usize, usize), repeat: bool) -> Vec<f64> {
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for i in 0..ph {
            if i >= h && !repeat {
                continue;
            }
            let si = i.min(h - 1);
            for j in 0..pw {
                if j >= w && !repeat {
                    continue;
                }
                let sj = j.min(w - 1);
                out[(ch * ph + i) * pw + j] = x[(ch * h + si) * w + sj];
            }
        }
    }
    out
}

/// Adjoint of the repeat padding: folds padded cells back onto their source.
fn unpad_accumulate(g: &[f64], c: usize, (h, w): (usize, usize), (ph, pw): (usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..ph {
            let si = i.min(h - 1);
            for j in 0..pw {
                let sj = j.min(w - 1);
                out[(ch * h + si) * w + sj] += g[(ch * ph + i) * pw + j];
            }
        }
    }
    out
}

/// Crops `[C×ph×pw]` to `[C×H×W]`.
fn crop(x: &[f64], c: usize, (ph, pw): (usize, usize), (h, w): (usize, usize)) -> Vec<f64> {
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..h {
            let row = (ch * ph + i) * pw;
            out.extend_from_slice(&x[row..row + w]);
        }
    }
    out
}

/// Analysis returning the bands stacked as `[4C × ⌈H/2⌉ × ⌈W/2⌉]`.
pub fn dwt2_stacked(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::dim(format!("dwt2 expects [C,H,W], got {:?}", x.shape())));
    }
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    if h < 2 || w < 2 {
        return Err(Error::dim(format!(
            "dwt2 needs H, W >= 2, got {h}x{w}"
        )));
    }
    let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
    let padded_size = (2 * h2, 2 * w2);
    let needs_pad = padded_size != (h, w);
    let out = if needs_pad {
        analyze_even(&pad(x.data(), c, (h, w), padded_size, true), c, h2, w2)
    } else {
        analyze_even(x.data(), c, h2, w2)
    };
    Ok(Tensor::from_op("dwt2", vec![4 * c, h2, w2], out, vec![x.clone()], move |g| {
        let full = synthesize_even(g, c, h2, w2);
        let gi = if needs_pad {
            unpad_accumulate(&full, c, (h, w), padded_size)
        } else {
            full
        };
        vec![Some(gi)]
    }))
}

/// Synthesis from a `[4C × h × w]` stack, cropped to `size`.
pub fn iwt2_stacked(stack: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    if stack.rank() != 3 || !stack.dim(0).is_multiple_of(4) {
        return Err(Error::dim(format!(
            "iwt2 expects stacked bands [4C,h,w], got {:?}",
            stack.shape()
        )));
    }
    let (c, h2, w2) = (stack.dim(0) / 4, stack.dim(1), stack.dim(2));
    let (h, w) = size;
    if h.div_ceil(2) != h2 || w.div_ceil(2) != w2 || h < 2 || w < 2 {
        return Err(Error::dim(format!(
            "band size {h2}x{w2} is inconsistent with signal size {h}x{w}"
        )));
    }
    let padded_size = (2 * h2, 2 * w2);
    let full = synthesize_even(stack.data(), c, h2, w2);
    let out = if padded_size != size {
        crop(&full, c, padded_size, size)
    } else {
        full
    };
    Ok(Tensor::from_op("iwt2", vec![c, h, w], out, vec![stack.clone()], move |g| {
        let gi = if padded_size != size {
            analyze_even(&pad(g, c, size, padded_size, false), c, h2, w2)
        } else {
            analyze_even(g, c, h2, w2)
        };
        vec![Some(gi)]
    }))
}

pub fn dwt2(x: &Tensor) -> Result<Subbands> {
    let stack = dwt2_stacked(x)?;
    Subbands::from_stacked(&stack, (x.dim(1), x.dim(2)))
}

pub fn iwt2(s: &Subbands) -> Result<Tensor> {
    let shape = s.ll.shape();
    if [&s.lh, &s.hl, &s.hh].iter().any(|b| b.shape() != shape) {
        return Err(Error::dim(format!(
            "subband shapes differ: ll {:?}, lh {:?}, hl {:?}, hh {:?}",
            s.ll.shape(),
            s.lh.shape(),
            s.hl.shape(),
            s.hh.shape()
        )));
    }
    iwt2_stacked(&s.stacked()?, s.size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheckOptions};
    use proptest::prelude::*;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn constant_map() {
        let s = dwt2(&Tensor::full(&[2, 4, 6], 1.5)).unwrap();
        assert!(s.ll.data().iter().all(|&v| v == 3.0));
        for b in [&s.lh, &s.hl, &s.hh] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_block_by_hand() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let s = dwt2(&x).unwrap();
        assert_eq!(
            (s.ll.item(), s.lh.item(), s.hl.item(), s.hh.item()),
            (5.0, -2.0, -1.0, 0.0)
        );
        assert_eq!(iwt2(&s).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn energy_of_6x6() {
        let x = random(&[1, 6, 6], 3);
        let e: f64 = x.data().iter().map(|v| v * v).sum();
        assert!((dwt2(&x).unwrap().energy() - e).abs() < 1e-10);
    }

    #[test]
    fn zero_bands_give_zero() {
        let z = Tensor::zeros(&[1, 3, 3]);
        let s = Subbands {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
            size: (5, 6),
        };
        assert!(iwt2(&s).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_or_inconsistent() {
        assert!(matches!(dwt2(&Tensor::zeros(&[1, 1, 4])), Err(Error::Dimension(_))));
        let z = Tensor::zeros(&[1, 2, 2]);
        let s = Subbands {
            ll: z.clone(),
            lh: z.clone(),
            hl: Tensor::zeros(&[1, 2, 3]),
            hh: z,
            size: (4, 4),
        };
        assert!(matches!(iwt2(&s), Err(Error::Dimension(_))));
        let stack = Tensor::zeros(&[4, 2, 2]);
        assert!(iwt2_stacked(&stack, (6, 4)).is_err());
    }

    #[test]
    fn gradient_through_round_trip_and_bands() {
        for (seed, shape) in [(1, [2, 5, 7]), (2, [1, 4, 4]), (3, [3, 6, 3])] {
            let x = random(&shape, seed);
            let report = check_gradients(
                &[x],
                &[],
                |xs| {
                    let s = dwt2_stacked(&xs[0])?;
                    let scaled = s.mul(&s)?.add(&s)?;
                    iwt2_stacked(&scaled, (shape[1], shape[2]))
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.worst() < 1e-6, "{report:?}");
        }
    }

    proptest! {
        #[test]
        fn perfect_reconstruction(c in 1usize..4, h in 2usize..14, w in 2usize..14, seed in any::<u64>()) {
            let x = random(&[c, h, w], seed);
            let y = iwt2(&dwt2(&x).unwrap()).unwrap();
            prop_assert_eq!(y.shape(), x.shape());
            let err = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-10);
        }

        #[test]
        fn energy_preserved_on_even(c in 1usize..4, h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
            let x = random(&[c, 2 * h, 2 * w], seed);
            let e: f64 = x.data().iter().map(|v| v * v).sum();
            prop_assert!((dwt2(&x).unwrap().energy() - e).abs() <= 1e-10 * e.max(1.0));
        }

        #[test]
        fn linear(h in 2usize..9, w in 2usize..9, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let x = random(&[2, h, w], seed);
            let y = random(&[2, h, w], seed ^ 0x9e37);
            let combo = x.mul_scalar(a).add(&y.mul_scalar(b)).unwrap();
            let lhs = dwt2_stacked(&combo).unwrap();
            let rhs = dwt2_stacked(&x).unwrap().mul_scalar(a).add(&dwt2_stacked(&y).unwrap().mul_scalar(b)).unwrap();
            for (p, q) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
