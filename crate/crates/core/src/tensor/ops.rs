//! Elementwise, broadcasting, reduction and shape kernels.

use super::{numel_of, strides_of, Tensor};
use crate::error::{Error, Result};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(format!(
                    "shapes {a:?} and {b:?} do not broadcast"
                )))
            }
        };
    }
    Ok(out)
}

/// For each flat index of `out`, the flat index into a tensor of shape
/// `input` broadcast against it.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - input.len();
    let in_strides = strides_of(input);
    let mut eff = vec![0usize; rank];
    for i in 0..input.len() {
        if input[i] != 1 {
            eff[i + offset] = in_strides[i];
        }
    }
    let n = numel_of(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += eff[d];
            if idx[d] < out[d] {
                break;
            }
            flat -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

type BinFn = fn(f64, f64) -> f64;
type BinGrad = fn(f64, f64, f64) -> f64;

fn binary(name: &'static str, a: &Tensor, b: &Tensor, f: BinFn, da: BinGrad, db: BinGrad) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let (ac, bc) = (a.clone(), b.clone());
        return Ok(Tensor::from_op(name, a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |g| {
            let ga = ac.requires_grad().then(|| {
                g.iter().zip(ac.data().iter().zip(bc.data())).map(|(&g, (&x, &y))| da(g, x, y)).collect()
            });
            let gb = bc.requires_grad().then(|| {
                g.iter().zip(ac.data().iter().zip(bc.data())).map(|(&g, (&x, &y))| db(g, x, y)).collect()
            });
            vec![ga, gb]
        }));
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let ma = broadcast_map(&shape, a.shape());
    let mb = broadcast_map(&shape, b.shape());
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = ma.iter().zip(&mb).map(|(&i, &j)| f(ad[i], bd[j])).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(name, shape, data, vec![a.clone(), b.clone()], move |g| {
        let (ad, bd) = (ac.data(), bc.data());
        let ga = ac.requires_grad().then(|| {
            let mut ga = vec![0.0; ad.len()];
            for (k, &gk) in g.iter().enumerate() {
                ga[ma[k]] += da(gk, ad[ma[k]], bd[mb[k]]);
            }
            ga
        });
        let gb = bc.requires_grad().then(|| {
            let mut gb = vec![0.0; bd.len()];
            for (k, &gk) in g.iter().enumerate() {
                gb[mb[k]] += db(gk, ad[ma[k]], bd[mb[k]]);
            }
            gb
        });
        vec![ga, gb]
    }))
}

/// `axis` split of `shape` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

impl Tensor {
    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        let out = data.clone();
        Tensor::from_op(name, self.shape().to_vec(), data, vec![self.clone()], move |g| {
            let gi = g
                .iter()
                .zip(input.data().iter().zip(&out))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gi)]
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |x, y| x + y, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |x, y| x - y, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary("mul", self, other, |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary("div", self, other, |x, y| x / y, |g, _, y| g / y, |g, x, y| -g * x / (y * y))
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary("mul_scalar", |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor {
        self.unary("silu", |x| x * sigmoid(x), |x, _| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn abs(&self) -> Tensor {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn powf(&self, e: f64) -> Tensor {
        self.unary("powf", move |x| x.powf(e), move |x, _| {
            if x == 0.0 && e >= 1.0 {
                if e == 1.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                e * x.powf(e - 1.0)
            }
        })
    }

    /// Clamps into `[lo, hi]`; values pinned at a bound pass no gradient.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary("clamp", move |x| x.clamp(lo, hi), move |x, _| {
            if x >= lo && x <= hi {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::from_op("sum", vec![1], vec![s], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Maximum over all elements; the gradient goes to the first argmax.
    pub fn max(&self) -> Tensor {
        let (arg, &m) = self
            .data()
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        let n = self.numel();
        Tensor::from_op("max", vec![1], vec![m], vec![self.clone()], move |g| {
            let mut gi = vec![0.0; n];
            gi[arg] = g[0];
            vec![Some(gi)]
        })
    }

    fn reduced_shape(&self, axis: usize) -> Vec<usize> {
        let mut s = self.shape().to_vec();
        s.remove(axis);
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    /// Sum over `axis`, dropping it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = split_axis(self.shape(), axis)?;
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op("sum_axis", self.reduced_shape(axis), out, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            for o in 0..outer {
                for k in 0..n {
                    gi[(o * n + k) * inner..(o * n + k + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gi)]
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::dim(format!("axis {axis} out of range for shape {:?}", self.shape())))?;
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / n as f64))
    }

    /// Population variance over `axis`.
    pub fn var_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = split_axis(self.shape(), axis)?;
        let x = self.data().to_vec();
        let mut mean = vec![0.0; outer * inner];
        let mut var = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let m = (0..n).map(|k| x[(o * n + k) * inner + i]).sum::<f64>() / n as f64;
                let v = (0..n).map(|k| (x[(o * n + k) * inner + i] - m).powi(2)).sum::<f64>() / n as f64;
                mean[o * inner + i] = m;
                var[o * inner + i] = v;
            }
        }
        Ok(Tensor::from_op("var_axis", self.reduced_shape(axis), var, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let m = mean[o * inner + i];
                    let go = g[o * inner + i];
                    for k in 0..n {
                        let idx = (o * n + k) * inner + i;
                        gi[idx] = go * 2.0 * (x[idx] - m) / n as f64;
                    }
                }
            }
            vec![Some(gi)]
        }))
    }

    /// Maximum over `axis`; the gradient goes to the first argmax.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = split_axis(self.shape(), axis)?;
        let x = self.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let v = x[(o * n + k) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = (o * n + k) * inner + i;
                    }
                }
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op("max_axis", self.reduced_shape(axis), out, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            for (j, &a) in arg.iter().enumerate() {
                gi[a] += g[j];
            }
            vec![Some(gi)]
        }))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = split_axis(self.shape(), axis)?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for k in 0..n {
                    let e = (x[at(k)] - m).exp();
                    y[at(k)] = e;
                    s += e;
                }
                for k in 0..n {
                    y[at(k)] /= s;
                }
            }
        }
        let yc = y.clone();
        Ok(Tensor::from_op("softmax", self.shape().to_vec(), y, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; yc.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * yc[at(k)]).sum();
                    for k in 0..n {
                        gi[at(k)] = yc[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(gi)]
        }))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = split_axis(self.shape(), axis)?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..n).map(|k| (x[at(k)] - m).exp()).sum::<f64>().ln();
                for k in 0..n {
                    y[at(k)] = x[at(k)] - lse;
                }
            }
        }
        let yc = y.clone();
        Ok(Tensor::from_op("log_softmax", self.shape().to_vec(), y, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; yc.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let gs: f64 = (0..n).map(|k| g[at(k)]).sum();
                    for k in 0..n {
                        gi[at(k)] = g[at(k)] - yc[at(k)].exp() * gs;
                    }
                }
            }
            vec![Some(gi)]
        }))
    }

    /// Normalizes each row over the last axis to zero mean and unit
    /// variance. No affine part; compose with `mul`/`add` for that.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let n = *self
            .shape()
            .last()
            .ok_or_else(|| Error::dim("layer_norm on rank-0 tensor"))?;
        let rows = self.numel() / n.max(1);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let m = row.iter().sum::<f64>() / n as f64;
            let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (v + eps).sqrt();
            inv_std[r] = is;
            for k in 0..n {
                y[r * n + k] = (row[k] - m) * is;
            }
        }
        let yc = y.clone();
        Ok(Tensor::from_op("layer_norm", self.shape().to_vec(), y, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; yc.len()];
            for r in 0..rows {
                let gr = &g[r * n..(r + 1) * n];
                let yr = &yc[r * n..(r + 1) * n];
                let mg = gr.iter().sum::<f64>() / n as f64;
                let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for k in 0..n {
                    gi[r * n + k] = inv_std[r] * (gr[k] - mg - yr[k] * mgy);
                }
            }
            vec![Some(gi)]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op("reshape", shape.to_vec(), self.data().to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::dim(format!("concat axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::dim(format!(
                    "concat shape mismatch: {:?} vs {:?} on axis {axis}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let row: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op("concat", shape, data, parts.to_vec(), move |g| {
            let mut grads: Vec<Vec<f64>> = lens.iter().map(|&l| Vec::with_capacity(l * outer)).collect();
            for o in 0..outer {
                let mut off = o * row;
                for (gp, &len) in grads.iter_mut().zip(&lens) {
                    gp.extend_from_slice(&g[off..off + len]);
                    off += len;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// The slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, n, inner) = split_axis(self.shape(), axis)?;
        if start + len > n {
            return Err(Error::dim(format!(
                "narrow {start}..{} exceeds axis {axis} of size {n}",
                start + len
            )));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let total = self.numel();
        Ok(Tensor::from_op("narrow", shape, data, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            for o in 0..outer {
                gi[(o * n + start) * inner..(o * n + start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gi)]
        }))
    }

    /// Gathers rows (entries along axis 0).
    pub fn index_select(&self, rows: &[usize]) -> Result<Tensor> {
        let n = *self.shape().first().ok_or_else(|| Error::dim("index_select on rank-0"))?;
        let inner = self.numel() / n.max(1);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dim(format!("row {bad} out of range for {n} rows")));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&x[r * inner..(r + 1) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = rows.len();
        let rows = rows.to_vec();
        let total = self.numel();
        Ok(Tensor::from_op("index_select", shape, data, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            for (j, &r) in rows.iter().enumerate() {
                gi[r * inner..(r + 1) * inner]
                    .iter_mut()
                    .zip(&g[j * inner..(j + 1) * inner])
                    .for_each(|(a, b)| *a += b);
            }
            vec![Some(gi)]
        }))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
