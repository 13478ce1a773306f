use super::grid_coords;
use crate::error::{Error, Result};
use crate::nn::{tokens, Init, LayerNorm, Linear};
use crate::tensor::{Module, Parameter, Tensor};

/// Uniform `side × side` grid of cell centres over `[0,1]²`, row-major in
/// `v` then `u`. `count` must be a perfect square.
pub fn anchor_grid(count: usize) -> Result<Vec<[f64; 2]>> {
    let side = (count as f64).sqrt().round() as usize;
    if side == 0 || side * side != count {
        return Err(Error::config(format!("query count {count} is not a positive perfect square")));
    }
    let c = |i: usize| (i as f64 + 0.5) / side as f64;
    Ok((0..count).map(|q| [c(q % side), c(q / side)]).collect())
}

/// Up to `count` local maxima of a `[rows×cols]` map as align-corners
/// `(u, v)` anchors, strongest first. Missing slots are filled from
/// `fallback` in order. A flat map yields `fallback` unchanged.
pub fn peak_anchors(map: &Tensor, count: usize, fallback: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    if map.rank() != 2 {
        return Err(Error::dim(format!("peak search needs a [rows, cols] map, got {:?}", map.shape())));
    }
    if fallback.len() < count {
        return Err(Error::contract(format!("{} fallback anchors for {count} slots", fallback.len())));
    }
    let (rows, cols) = (map.dim(0), map.dim(1));
    let x = map.data();
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12) {
        return Ok(fallback[..count].to_vec());
    }
    // A cell is a peak if it beats earlier neighbours strictly and later
    // ones weakly, so a plateau yields at most one peak.
    let mut peaks = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let at = i * cols + j;
            let mut is_peak = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || ni < 0 || nj < 0 || ni >= rows as i64 || nj >= cols as i64 {
                        continue;
                    }
                    let n = ni as usize * cols + nj as usize;
                    if x[n] > x[at] || (n < at && x[n] == x[at]) {
                        is_peak = false;
                    }
                }
            }
            if is_peak {
                peaks.push(at);
            }
        }
    }
    peaks.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let coord = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let mut out: Vec<[f64; 2]> = peaks.iter().take(count).map(|&p| [coord(p % cols, cols), coord(p / cols, rows)]).collect();
    out.extend_from_slice(&fallback[out.len()..count]);
    Ok(out)
}

/// Fixed sinusoidal features of `(u, v)` anchors at `bands` octaves,
/// `[N×4·bands]`.
pub fn anchor_features(anchors: &[[f64; 2]], bands: usize) -> Tensor {
    let mut data = Vec::with_capacity(anchors.len() * 4 * bands);
    for a in anchors {
        for &c in a {
            for b in 0..bands {
                let w = std::f64::consts::PI * (1u64 << b) as f64 * c;
                data.extend([w.sin(), w.cos()]);
            }
        }
    }
    Tensor::from_vec(&[anchors.len(), 4 * bands], data)
}

/// Single-head cross-attention of queries against a max-pooled feature grid
/// with a learned positional encoding.
pub struct PoolAttn {
    pub pooled: (usize, usize),
    pub query: Linear,
    /// Bias-free: a key bias only shifts every logit of a query equally.
    pub key: Parameter,
    pub value: Linear,
    pub pos: Linear,
}

impl PoolAttn {
    pub fn new(init: &mut Init, name: &str, dim: usize, channels: usize, pooled: (usize, usize)) -> Self {
        init.scoped(name, |init| PoolAttn {
            pooled,
            query: Linear::new(init, "query", dim, dim),
            key: init.uniform("key", &[channels, dim], 1.0 / (channels as f64).sqrt()),
            value: Linear::new(init, "value", channels, dim),
            pos: Linear::new(init, "pos", 2, channels),
        })
    }

    /// `[Nq×d]`, `[C×H×W] → [Nq×d]`.
    pub fn forward(&self, queries: &Tensor, features: &Tensor) -> Result<Tensor> {
        let (ph, pw) = self.pooled;
        let pooled = tokens(&features.adaptive_max_pool2d(ph, pw)?)?.add(&self.pos.forward(&grid_coords(ph, pw))?)?;
        let q = self.query.forward(queries)?;
        let k = pooled.matmul(&self.key.tensor())?;
        let v = self.value.forward(&pooled)?;
        let scale = 1.0 / (q.dim(1) as f64).sqrt();
        q.matmul(&k.transpose()?)?.mul_scalar(scale).softmax(1)?.matmul(&v)
    }
}

impl Module for PoolAttn {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.query.visit_parameters(f);
        f(&self.key);
        self.value.visit_parameters(f);
        self.pos.visit_parameters(f);
    }
}

/// Plain-value view of one query after reference generation.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    pub embedding: Vec<f64>,
    pub anchor: [f64; 2],
    pub reference: [f64; 2],
    pub confidence: f64,
}

/// Reference points and confidences for a batch of queries.
#[derive(Debug, Clone)]
pub struct ReferencePoints {
    /// Fused query embeddings `[Nq×d]`.
    pub queries: Tensor,
    pub anchors: Vec<[f64; 2]>,
    /// `[Nq×2]` in `[0,1]²`, `(u, v)` = (azimuth, range) fractions.
    pub points: Tensor,
    /// `[Nq×1]` in `(0,1)`.
    pub confidence: Tensor,
}

impl ReferencePoints {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn states(&self) -> Vec<QueryState> {
        let d = self.queries.dim(1);
        (0..self.len())
            .map(|i| QueryState {
                embedding: self.queries.data()[i * d..(i + 1) * d].to_vec(),
                anchor: self.anchors[i],
                reference: [self.points.data()[2 * i], self.points.data()[2 * i + 1]],
                confidence: self.confidence.data()[i],
            })
            .collect()
    }
}

/// Multi-modal reference point generation from image and EA cues.
pub struct ReferenceGenerator {
    pub project: Linear,
    pub image_attn: PoolAttn,
    pub ea_attn: PoolAttn,
    pub norm: LayerNorm,
    pub offset: Linear,
    pub confidence: Linear,
}

impl ReferenceGenerator {
    pub fn new(init: &mut Init, name: &str, dim: usize, image_channels: usize, ea_channels: usize) -> Self {
        init.scoped(name, |init| ReferenceGenerator {
            project: Linear::new(init, "project", dim, dim),
            image_attn: PoolAttn::new(init, "image_attn", dim, image_channels, (4, 4)),
            ea_attn: PoolAttn::new(init, "ea_attn", dim, ea_channels, (4, 4)),
            norm: LayerNorm::new(init, "norm", dim),
            offset: Linear::zeroed(init, "offset", dim, 2),
            confidence: Linear::new(init, "confidence", dim, 1),
        })
    }

    pub fn forward(&self, queries: &Tensor, image: &Tensor, ea: &Tensor, anchors: &[[f64; 2]]) -> Result<ReferencePoints> {
        if queries.rank() != 2 || queries.dim(0) != anchors.len() {
            return Err(Error::contract(format!(
                "{} anchors supplied for query batch {:?}",
                anchors.len(),
                queries.shape()
            )));
        }
        let fused = self
            .project
            .forward(queries)?
            .add(&self.image_attn.forward(queries, image)?)?
            .add(&self.ea_attn.forward(queries, ea)?)?;
        let fused = self.norm.forward(&fused)?;
        let anchor_t = Tensor::from_vec(&[anchors.len(), 2], anchors.iter().flatten().copied().collect());
        let points = anchor_t.add(&self.offset.forward(&fused)?)?.clamp(0.0, 1.0);
        let confidence = self.confidence.forward(&fused)?.sigmoid();
        Ok(ReferencePoints {
            queries: fused,
            anchors: anchors.to_vec(),
            points,
            confidence,
        })
    }
}

impl Module for ReferenceGenerator {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.project.visit_parameters(f);
        self.image_attn.visit_parameters(f);
        self.ea_attn.visit_parameters(f);
        self.norm.visit_parameters(f);
        self.offset.visit_parameters(f);
        self.confidence.visit_parameters(f);
    }
}
