//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.
//!
//! Criteria 1–8 run twice from scratch; criterion 9 compares the two
//! transcripts byte for byte.

use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wrcfusion_core::config::RunConfig;
use wrcfusion_core::detection::{detection_loss, hungarian_match, DetectionHead, FocalParams, HeadConfig, LossWeights, MatchTarget};
use wrcfusion_core::gpf::{DeformableAttention, Gsa, GsaConfig};
use wrcfusion_core::model::StreamMask;
use wrcfusion_core::nn::Init;
use wrcfusion_core::pipeline;
use wrcfusion_core::radar::{project, project_raw, RadarCube, RadarGeometry, View, CHANNEL_NAMES, EA_TRIM};
use wrcfusion_core::tensor::gradcheck::{check_gradients, GradCheckOptions};
use wrcfusion_core::tensor::{no_grad, Conv2dOptions, Module, Tensor};
use wrcfusion_core::wa_moe::{top_k_softmax, WaMoe, WaMoeConfig};
use wrcfusion_core::wavelet::{dwt2, iwt2};

struct Outcome {
    pass: bool,
    summary: String,
    /// Every number the criterion computed, for the determinism check.
    record: String,
}

fn random(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.random_range(lo..hi)).collect())
}

fn randomize(module: &dyn Module, rng: &mut impl Rng, scale: f64) {
    module.visit_parameters(&mut |p| {
        p.set_data((0..p.numel()).map(|_| rng.random_range(-scale..scale)).collect()).unwrap();
    });
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------- 1

fn wavelet_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rec, mut worst_energy) = (0.0f64, 0.0f64);
    let mut odd_cases = 0;
    for _ in 0..200 {
        let c = rng.random_range(1..=8);
        let h = rng.random_range(4..=33);
        let w = rng.random_range(4..=33);
        let x = random(&[c, h, w], &mut rng, -5.0, 5.0);
        let bands = dwt2(&x).unwrap();
        let back = iwt2(&bands).unwrap();
        let err = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_rec = worst_rec.max(err);
        if h % 2 == 0 && w % 2 == 0 {
            let e: f64 = x.data().iter().map(|v| v * v).sum();
            worst_energy = worst_energy.max((bands.energy() - e).abs() / e);
        } else {
            odd_cases += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_rec < 1e-10 && worst_energy < 1e-10 && odd_cases > 0 && within(elapsed, 10.0);
    Outcome {
        pass,
        summary: format!(
            "wavelet exactness: max reconstruction error {worst_rec:.2e}, max relative energy drift {worst_energy:.2e} \
             over 200 tensors ({odd_cases} odd), {:.2}s",
            elapsed.as_secs_f64()
        ),
        record: format!("{worst_rec:e} {worst_energy:e} {odd_cases}"),
    }
}

// ---------------------------------------------------------------- 2

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let opts = GradCheckOptions::default();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut note = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(err),
        None => worst.push((name, err)),
    };
    for inst in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
        let o = GradCheckOptions { seed: inst, ..opts.clone() };

        let x = random(&[3, 6, 5], &mut rng, -1.0, 1.0);
        let w = random(&[4, 3, 3, 3], &mut rng, -0.5, 0.5);
        let b = random(&[4], &mut rng, -0.5, 0.5);
        let conv_opts = Conv2dOptions::same(3).with_stride(1 + inst as usize % 2, 1);
        let r = check_gradients(&[x, w, b], &[], |t| t[0].conv2d(&t[1], Some(&t[2]), conv_opts), &o).unwrap();
        note("conv2d", r.worst());

        let x = random(&[4, 7, 7], &mut rng, -1.0, 1.0);
        let w = random(&[4, 2, 3, 3], &mut rng, -0.5, 0.5);
        let gdc = Conv2dOptions::same(3).with_groups(2).with_dilation(2).with_padding(2, 2);
        let r = check_gradients(&[x, w], &[], |t| t[0].conv2d(&t[1], None, gdc), &o).unwrap();
        note("gdc", r.worst());

        // Distinct values keep max pooling away from ties.
        let mut vals: Vec<f64> = (0..2 * 7 * 9).map(|i| i as f64 * 0.01).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::from_vec(&[2, 7, 9], vals);
        let r = check_gradients(&[x], &[], |t| t[0].adaptive_max_pool2d(3, 4), &o).unwrap();
        note("pooling", r.worst());

        let map = random(&[3, 5, 6], &mut rng, -1.0, 1.0);
        let pts = random(&[7, 2], &mut rng, 0.03, 0.97);
        let r = check_gradients(&[map, pts], &[], |t| t[0].bilinear_sample(&t[1]), &o).unwrap();
        note("bilinear", r.worst());

        let mut init = Init::new(inst);
        let block = WaMoe::new(&mut init, "m", WaMoeConfig { hidden: 3, ..WaMoeConfig::new(2) }).unwrap();
        randomize(&block, &mut rng, 0.4);
        let x = random(&[2, 6, 6], &mut rng, -1.0, 1.0);
        let r = check_gradients(&[x], &block.parameters(), |t| block.forward(&t[0]), &o).unwrap();
        note("wa_moe", r.worst());

        let cfg = GsaConfig {
            pooled: (2, 2),
            groups: 2,
            dilation: 2,
            ..GsaConfig::new(2, 2, 4)
        };
        let gsa = Gsa::new(&mut init, "g", cfg).unwrap();
        randomize(&gsa, &mut rng, 0.5);
        let ea = random(&[2, 3, 4], &mut rng, -1.0, 1.0);
        let img = random(&[2, 4, 4], &mut rng, -1.0, 1.0);
        let r = check_gradients(&[ea, img], &gsa.parameters(), |t| gsa.forward(&t[0], &t[1]), &o).unwrap();
        note("gsa", r.worst());

        let attn = DeformableAttention::new(&mut init, "d", 3, 2, 2).unwrap();
        randomize(&attn, &mut rng, 0.3);
        let q = random(&[3, 3], &mut rng, -1.0, 1.0);
        let p = random(&[3, 2], &mut rng, 0.3, 0.7);
        let maps = [random(&[3, 5, 6], &mut rng, -1.0, 1.0), random(&[3, 3, 3], &mut rng, -1.0, 1.0)];
        let r = check_gradients(
            &[q, p, maps[0].clone(), maps[1].clone()],
            &attn.parameters(),
            |t| {
                let out = attn.forward(&t[0], &t[1], &t[2..4])?;
                Tensor::concat(&[out.features, out.uncertainty], 1)
            },
            &o,
        )
        .unwrap();
        note("deformable", r.worst());

        let head = DetectionHead::new(&mut init, "h", HeadConfig { iterations: 2, ..HeadConfig::new(3, 2) }, 10.0).unwrap();
        randomize(&head, &mut rng, 0.5);
        let q = random(&[3, 3], &mut rng, -1.0, 1.0);
        let p = random(&[3, 2], &mut rng, 0.0, 1.0);
        let r = check_gradients(
            &[q, p],
            &head.parameters(),
            |t| {
                let its = head.forward(&t[0], &t[1])?;
                let parts: Vec<Tensor> = its.iter().flat_map(|i| [i.logits.clone(), i.boxes.clone()]).collect();
                Tensor::concat(&parts, 1)
            },
            &o,
        )
        .unwrap();
        note("head", r.worst());

        let logits = random(&[4, 3], &mut rng, -2.0, 2.0);
        let boxes = random(&[4, 8], &mut rng, -1.0, 1.0);
        let targets: Vec<MatchTarget> = (0..2)
            .map(|i| MatchTarget {
                class: i % 2,
                params: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let r = check_gradients(
            &[logits, boxes],
            &[],
            |t| {
                let its = vec![wrcfusion_core::detection::IterationOutput {
                    logits: t[0].clone(),
                    boxes: t[1].clone(),
                }];
                Ok(detection_loss(&its, &targets, LossWeights::default(), FocalParams::default())?.total)
            },
            &o,
        )
        .unwrap();
        note("loss", r.worst());
    }
    let elapsed = start.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let pass = max < 1e-6 && worst.len() == 9 && within(elapsed, 120.0);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome {
        pass,
        summary: format!(
            "gradient suite (5 instances each, h=1e-5): worst {max:.2e} [{}], {:.1}s",
            detail.join(", "),
            elapsed.as_secs_f64()
        ),
        record: worst.iter().map(|(n, e)| format!("{n}={e:e}")).collect::<Vec<_>>().join(" "),
    }
}

// ---------------------------------------------------------------- 3

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-step attention written out with loops.
fn gsa_oracle(q: &Tensor, pooled: &Tensor, k: &Tensor, v: &Tensor, bias: f64) -> Vec<f64> {
    let d = q.dim(1);
    let scale = 1.0 / (d as f64).sqrt();
    let row = |t: &Tensor, i: usize| t.data()[i * d..(i + 1) * d].to_vec();
    let n = pooled.dim(0);
    let mut summary = vec![vec![0.0; d]; n];
    for (i, s) in summary.iter_mut().enumerate() {
        for j in 0..k.dim(0) {
            let a = sigmoid(dot(&row(pooled, i), &row(k, j)) * scale + bias);
            for (c, vj) in row(v, j).iter().enumerate() {
                s[c] += a * vj;
            }
        }
    }
    let mut out = vec![0.0; q.dim(0) * d];
    for t in 0..q.dim(0) {
        for (i, s) in summary.iter().enumerate() {
            let a = sigmoid(dot(&row(q, t), &row(pooled, i)) * scale + bias);
            for c in 0..d {
                out[t * d + c] += a * s[c];
            }
        }
    }
    out
}

fn gsa_linearity() -> Outcome {
    let report = pipeline::bench(&RunConfig::default()).unwrap();
    let formula_ok = report.gsa.iter().all(|p| p.attention_macs == p.formula_macs);
    let sweep_ok = report.gsa.iter().map(|p| p.queries).eq(pipeline::GSA_SWEEP) && report.gsa_pooled == 144;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for inst in 0..50u64 {
        let d = 4 * rng.random_range(1..=2);
        let cfg = GsaConfig {
            pooled: (rng.random_range(1..=2), 2),
            groups: 2,
            dilation: rng.random_range(1..=2),
            ..GsaConfig::new(2, 4, d)
        };
        let gsa = Gsa::new(&mut Init::new(inst), "g", cfg).unwrap();
        randomize(&gsa, &mut rng, 0.5);
        let ea = random(&[2, rng.random_range(2..=4), rng.random_range(3..=5)], &mut rng, -1.0, 1.0);
        let img = random(&[4, rng.random_range(2..=4), rng.random_range(2..=4)], &mut rng, -1.0, 1.0);
        let got = no_grad(|| gsa.forward(&ea, &img)).unwrap();
        let [q, pooled, k, v] = no_grad(|| gsa.embeddings(&ea, &img)).unwrap();
        let want = gsa_oracle(&q, &pooled, &k, &v, gsa.bias.tensor().item());
        let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    let pass = report.gsa_slope < 1.1 && formula_ok && sweep_ok && worst < 1e-10;
    let macs: Vec<String> = report.gsa.iter().map(|p| format!("{}:{}", p.queries, p.attention_macs)).collect();
    Outcome {
        pass,
        summary: format!(
            "gsa linearity: log-log slope {:.4} over N=256..4096 at n=144 (counts match closed form: {formula_ok}), \
             oracle max error {worst:.2e} over 50 instances",
            report.gsa_slope
        ),
        record: format!("{:e} {} {worst:e}", report.gsa_slope, macs.join(",")),
    }
}

// ---------------------------------------------------------------- 4

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn bilinear_oracle(map: &[f64], h: usize, w: usize, u: f64, v: f64) -> f64 {
    let x = u.clamp(0.0, 1.0) * (w - 1) as f64;
    let y = v.clamp(0.0, 1.0) * (h - 1) as f64;
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |r: usize, c: usize| map[r * w + c];
    at(y0, x0) * (1.0 - fx) * (1.0 - fy) + at(y0, x1) * fx * (1.0 - fy) + at(y1, x0) * (1.0 - fx) * fy + at(y1, x1) * fx * fy
}

/// Slab statistics straight from their definitions.
fn stats_oracle(amps: &[f64], dops: &[f64]) -> [f64; 6] {
    let n = amps.len() as f64;
    let mut s = amps.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    let median = if m % 2 == 1 { s[m / 2] } else { (s[m / 2 - 1] + s[m / 2]) / 2.0 };
    let mean = amps.iter().sum::<f64>() / n;
    let var = amps.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let total: f64 = amps.iter().sum();
    let best = s[m - 1];
    let dop_max = amps
        .iter()
        .zip(dops)
        .filter(|(a, _)| **a == best)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let mut levels: Vec<f64> = dops.to_vec();
    levels.sort_by(f64::total_cmp);
    let dop_median = *levels
        .iter()
        .find(|&&lv| amps.iter().zip(dops).filter(|(_, d)| **d <= lv).map(|(a, _)| a).sum::<f64>() >= total / 2.0)
        .unwrap();
    let wmean = amps.iter().zip(dops).map(|(a, d)| a * d).sum::<f64>() / total;
    let wvar = amps.iter().zip(dops).map(|(a, d)| a * (d - wmean) * (d - wmean)).sum::<f64>() / total;
    [best, median, var, dop_max, dop_median, wvar]
}

fn small_geometry() -> RadarGeometry {
    let mut g = RadarGeometry::default();
    g.dims.range = 10;
    g.dims.azimuth = 5;
    g.dims.elevation = 3;
    g.dims.doppler = 4;
    g
}

fn random_cube(rng: &mut impl Rng) -> RadarCube {
    let mut cube = RadarCube::zeros(&small_geometry());
    // Coarse amplitude levels make ties, which exercise tie-breaking.
    cube.amp = Tensor::from_vec(
        cube.amp.shape(),
        (0..cube.amp.numel()).map(|_| rng.random_range(0..6) as f64 * 0.5).collect(),
    );
    cube
}

fn oracle_equivalences() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let perms = permutations(5);
    let mut hungarian_exact = true;
    for _ in 0..100 {
        let cost: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let sum = |assign: &[usize]| (0..5).fold(0.0, |acc, r| acc + cost[r][assign[r]]);
        let brute = perms.iter().map(|p| sum(p)).fold(f64::INFINITY, f64::min);
        let pairs = hungarian_match(&cost).unwrap();
        let mut assign = vec![0; 5];
        for (r, c) in pairs {
            assign[r] = c;
        }
        hungarian_exact &= sum(&assign) == brute;
    }

    let mut bilinear_err = 0.0f64;
    for _ in 0..50 {
        let (c, h, w) = (rng.random_range(1..4), rng.random_range(1..7), rng.random_range(1..7));
        let map = random(&[c, h, w], &mut rng, -2.0, 2.0);
        let pts = random(&[9, 2], &mut rng, -0.3, 1.3);
        let got = map.bilinear_sample(&pts).unwrap();
        for p in 0..9 {
            let (u, v) = (pts.data()[2 * p], pts.data()[2 * p + 1]);
            for ch in 0..c {
                let want = bilinear_oracle(&map.data()[ch * h * w..(ch + 1) * h * w], h, w, u, v);
                bilinear_err = bilinear_err.max((got.data()[p * c + ch] - want).abs());
            }
        }
    }

    let mut stats_err = 0.0f64;
    for _ in 0..10 {
        let cube = random_cube(&mut rng);
        let d = cube.dims();
        for view in [View::RangeAzimuth, View::ElevationAzimuth] {
            let map = project_raw(&cube, view).unwrap();
            let (rows, cols) = (map.channels.dim(1), map.channels.dim(2));
            for row in 0..rows {
                for a in 0..cols {
                    let (mut amps, mut dops) = (Vec::new(), Vec::new());
                    let ranges: Vec<usize> = match view {
                        View::RangeAzimuth => vec![row],
                        View::ElevationAzimuth => (EA_TRIM..d.range - EA_TRIM).collect(),
                    };
                    let elevations: Vec<usize> = match view {
                        View::RangeAzimuth => (0..d.elevation).collect(),
                        View::ElevationAzimuth => vec![row],
                    };
                    for &r in &ranges {
                        for &e in &elevations {
                            for k in 0..d.doppler {
                                amps.push(cube.at(r, a, e, k));
                                dops.push(cube.doppler_mps[k]);
                            }
                        }
                    }
                    let total: f64 = amps.iter().sum();
                    let mut want = stats_oracle(&amps, &dops);
                    if total == 0.0 {
                        want[3..].fill(0.0);
                    }
                    for (ch, wv) in want.iter().enumerate() {
                        let got = map.channels.data()[(ch * rows + row) * cols + a];
                        stats_err = stats_err.max((got - wv).abs());
                    }
                }
            }
        }
    }

    let mut gate_err = 0.0f64;
    let mut gate_sets_equal = true;
    for _ in 0..50 {
        let n = rng.random_range(2..7);
        let k = rng.random_range(1..=n);
        let cells = 6;
        // Rounded logits force ties.
        let logits = Tensor::from_vec(&[n, 2, 3], (0..n * cells).map(|_| (rng.random_range(-2.0..2.0f64) * 2.0).round() / 2.0).collect());
        let got = top_k_softmax(&logits, k).unwrap();
        for loc in 0..cells {
            let col: Vec<f64> = (0..n).map(|e| logits.data()[e * cells + loc]).collect();
            // Best k-subset by total logit, lexicographically first on ties.
            let mut best: Option<(f64, Vec<usize>)> = None;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let set: Vec<usize> = (0..n).filter(|e| mask >> e & 1 == 1).collect();
                let total: f64 = set.iter().map(|&e| col[e]).sum();
                let better = match &best {
                    None => true,
                    Some((bt, bs)) => total > *bt || (total == *bt && set < *bs),
                };
                if better {
                    best = Some((total, set));
                }
            }
            let set = best.unwrap().1;
            let z: f64 = set.iter().map(|&e| col[e].exp()).sum();
            let mut chosen: Vec<usize> = got.active[loc].clone();
            chosen.sort();
            gate_sets_equal &= chosen == set;
            for e in 0..n {
                let want = if set.contains(&e) { col[e].exp() / z } else { 0.0 };
                gate_err = gate_err.max((got.weights.data()[e * cells + loc] - want).abs());
            }
        }
    }

    let mut deform_err = 0.0f64;
    for inst in 0..20u64 {
        let (d, levels, samples, nq) = (3, 2, 3, 4);
        let attn = DeformableAttention::new(&mut Init::new(inst), "d", d, levels, samples).unwrap();
        randomize(&attn, &mut rng, 0.4);
        let q = random(&[nq, d], &mut rng, -1.0, 1.0);
        let p = random(&[nq, 2], &mut rng, 0.0, 1.0);
        let maps = vec![random(&[d, 5, 7], &mut rng, -1.0, 1.0), random(&[d, 3, 4], &mut rng, -1.0, 1.0)];
        let got = no_grad(|| attn.forward(&q, &p, &maps)).unwrap();
        let lin = |l: &wrcfusion_core::nn::Linear, x: &[f64]| -> Vec<f64> {
            let (wt, b) = (l.weight.tensor(), l.bias.tensor());
            let out = l.out_features();
            (0..out).map(|o| b.data()[o] + (0..x.len()).map(|i| x[i] * wt.data()[i * out + o]).sum::<f64>()).collect()
        };
        for i in 0..nq {
            let qi = &q.data()[i * d..(i + 1) * d];
            let offs = lin(&attn.offset, qi);
            let logits = lin(&attn.weight, qi);
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let u: Vec<f64> = lin(&attn.uncertainty, qi).iter().map(|&x| sigmoid(x)).collect();
            let mut feat = vec![0.0; d];
            for (s, map) in maps.iter().enumerate() {
                let (h, w) = (map.dim(1), map.dim(2));
                for k in 0..samples {
                    let j = s * samples + k;
                    let (su, sv) = (p.data()[2 * i] + offs[2 * j], p.data()[2 * i + 1] + offs[2 * j + 1]);
                    let wgt = (logits[j] - m).exp() / z * u[j];
                    for (c, f) in feat.iter_mut().enumerate() {
                        *f += wgt * bilinear_oracle(&map.data()[c * h * w..(c + 1) * h * w], h, w, su, sv);
                    }
                }
            }
            for c in 0..d {
                deform_err = deform_err.max((got.features.data()[i * d + c] - feat[c]).abs());
            }
        }
    }

    let elapsed = start.elapsed();
    let tol = 1e-9;
    let pass = hungarian_exact
        && bilinear_err < tol
        && stats_err < tol
        && gate_err < tol
        && gate_sets_equal
        && deform_err < tol
        && within(elapsed, 60.0);
    Outcome {
        pass,
        summary: format!(
            "oracle equivalences: hungarian exact on 100 5x5 costs: {hungarian_exact}; max errors bilinear {bilinear_err:.1e}, \
             projection stats {stats_err:.1e}, gating {gate_err:.1e} (sets equal: {gate_sets_equal}), \
             deformable {deform_err:.1e}; {:.1}s",
            elapsed.as_secs_f64()
        ),
        record: format!("{hungarian_exact} {bilinear_err:e} {stats_err:e} {gate_err:e} {gate_sets_equal} {deform_err:e}"),
    }
}

// ---------------------------------------------------------------- 5

fn residual_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact = 0;
    for inst in 0..20u64 {
        let c = rng.random_range(1..=4);
        let block = WaMoe::new(&mut Init::new(inst), "m", WaMoeConfig::new(c)).unwrap();
        block.fill_parameters(0.0);
        let x = random(&[c, rng.random_range(4..=13), rng.random_range(4..=13)], &mut rng, -3.0, 3.0);
        let y = no_grad(|| block.forward(&x)).unwrap();
        let same = y.shape() == x.shape() && y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        exact += same as usize;
    }
    Outcome {
        pass: exact == 20,
        summary: format!("residual identity: {exact}/20 zero-initialized blocks return their input bit for bit"),
        record: exact.to_string(),
    }
}

// ---------------------------------------------------------------- 6

fn projection_contract() -> Outcome {
    let order_ok = CHANNEL_NAMES == ["amp_max", "amp_median", "amp_var", "dop_max", "dop_median", "dop_var"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cube = random_cube(&mut rng);
    let r = cube.dims().range;
    let ra = project(&cube, View::RangeAzimuth).unwrap();
    let ea = project(&cube, View::ElevationAzimuth).unwrap();
    let channels_ok = ra.channels.dim(0) == 6 && ea.channels.dim(0) == 6;
    let consumed = ea.range_bins.len();
    let trim_ok = consumed == r - 6;

    // Bins outside the consumed window must not influence the EA view.
    let mut outside = cube.clone();
    let mut amp = outside.amp.to_vec();
    let d = outside.dims();
    for rr in (0..EA_TRIM).chain(d.range - EA_TRIM..d.range) {
        for a in 0..d.azimuth {
            for e in 0..d.elevation {
                for k in 0..d.doppler {
                    amp[outside.index(rr, a, e, k)] = 9.0;
                }
            }
        }
    }
    outside.amp = Tensor::from_vec(outside.amp.shape(), amp);
    let ea_unchanged = project_raw(&outside, View::ElevationAzimuth).unwrap().channels.data()
        == project_raw(&cube, View::ElevationAzimuth).unwrap().channels.data();

    let mut constant = RadarCube::zeros(&small_geometry());
    constant.amp = Tensor::full(constant.amp.shape(), 0.7);
    let mut zero_var = true;
    for view in [View::RangeAzimuth, View::ElevationAzimuth] {
        let m = project_raw(&constant, view).unwrap();
        let plane = m.channels.dim(1) * m.channels.dim(2);
        zero_var &= m.channels.data()[2 * plane..3 * plane].iter().all(|&v| v == 0.0);
    }
    let pass = order_ok && channels_ok && trim_ok && ea_unchanged && zero_var;
    Outcome {
        pass,
        summary: format!(
            "projection contract: 6 ordered channels: {}; EA consumes {consumed} of {r} range bins, ignores the rest: {ea_unchanged}; \
             constant cube gives zero amp_var: {zero_var}",
            order_ok && channels_ok
        ),
        record: format!("{order_ok} {channels_ok} {consumed} {ea_unchanged} {zero_var}"),
    }
}

// ---------------------------------------------------------------- 7, 8

fn learning(root: &Path) -> (Outcome, Outcome) {
    let start = Instant::now();
    let cfg = RunConfig {
        train_dir: root.join("train"),
        eval_dir: root.join("eval"),
        ..RunConfig::default()
    };
    pipeline::synthesize_split(&cfg, false).unwrap();
    pipeline::synthesize_split(&cfg, true).unwrap();
    let train = pipeline::load_split(&cfg, &cfg.train_dir).unwrap();
    let eval = pipeline::load_split(&cfg, &cfg.eval_dir).unwrap();

    let random_model = pipeline::build_model(&cfg).unwrap();
    let initial = pipeline::mean_loss(&random_model, &cfg, &train).unwrap();
    let (random_metrics, _) = pipeline::evaluate_split(&random_model, &cfg, &eval, StreamMask::ALL).unwrap();

    let (model, log) = pipeline::train(&cfg, &train, None, |_| {}).unwrap();
    let fin = pipeline::mean_loss(&model, &cfg, &train).unwrap();
    let (metrics, dets) = pipeline::evaluate_split(&model, &cfg, &eval, StreamMask::ALL).unwrap();
    let elapsed = start.elapsed();

    let ratio = fin / initial;
    let ap = metrics.mean_bev;
    let pass7 = train.len() == 64
        && eval.len() == 50
        && log.len() == 200
        && ratio < 0.5
        && ap >= 0.5
        && random_metrics.mean_bev < 0.05
        && within(elapsed, 900.0);
    let mut record = String::new();
    for r in &log {
        let _ = writeln!(record, "{}", r.to_json());
    }
    let _ = write!(
        record,
        "{initial:e} {fin:e} {ap:e} {:e} {:e} {}",
        metrics.mean_3d,
        random_metrics.mean_bev,
        dets.len()
    );
    let o7 = Outcome {
        pass: pass7,
        summary: format!(
            "desk-scale learning: training-set loss {initial:.3} -> {fin:.3} ({:.1}% of initial) after {} steps; \
             AP_BEV@0.3 {ap:.3} on {} held-out scenes (AP_3D {:.3}); random weights {:.4}; {:.0}s",
            100.0 * ratio,
            log.len(),
            eval.len(),
            metrics.mean_3d,
            random_metrics.mean_bev,
            elapsed.as_secs_f64()
        ),
        record,
    };

    let subset = |mask| pipeline::evaluate_split(&model, &cfg, &eval, mask).unwrap().0.mean_bev;
    let (cam, ra, ea) = (subset(StreamMask::CAMERA), subset(StreamMask::RA), subset(StreamMask::EA));
    let pass8 = ra > ea && ap >= cam && ap >= ra && ap >= ea;
    let o8 = Outcome {
        pass: pass8,
        summary: format!(
            "modality ablation AP_BEV@0.3: camera+RA+EA {ap:.3}, RA-only {ra:.3}, EA-only {ea:.3}, camera-only {cam:.3}"
        ),
        record: format!("{ap:e} {ra:e} {ea:e} {cam:e}"),
    };
    (o7, o8)
}

fn criteria_1_to_8(root: &Path) -> Vec<Outcome> {
    let mut out = vec![
        wavelet_exactness(),
        gradient_suite(),
        gsa_linearity(),
        oracle_equivalences(),
        residual_identity(),
        projection_contract(),
    ];
    let (o7, o8) = learning(root);
    out.push(o7);
    out.push(o8);
    out
}

fn transcript(outcomes: &[Outcome]) -> String {
    outcomes.iter().enumerate().map(|(i, o)| format!("[{}] {} {}\n", i + 1, o.pass, o.record)).collect()
}

fn report(n: usize, o: &Outcome) {
    println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.summary);
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--list`; only a listing
    // request changes behaviour.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let first_dir = tempfile::tempdir().unwrap();
    let first = criteria_1_to_8(first_dir.path());
    for (i, o) in first.iter().enumerate() {
        report(i + 1, o);
    }
    let second_dir = tempfile::tempdir().unwrap();
    let second = criteria_1_to_8(second_dir.path());
    let (a, b) = (transcript(&first), transcript(&second));
    let same_data = (0..64).all(|i| {
        let rel = Path::new("scenes").join(format!("{i:04}"));
        ["cube.bin", "image.bin", "boxes.txt"].iter().all(|f| {
            std::fs::read(first_dir.path().join("train").join(&rel).join(f)).ok()
                == std::fs::read(second_dir.path().join("train").join(&rel).join(f)).ok()
        })
    });
    let determinism = Outcome {
        pass: a == b && same_data,
        summary: format!(
            "determinism: two full runs of criteria 1-8 give identical transcripts ({} bytes): {}; identical datasets: {same_data}",
            a.len(),
            a == b
        ),
        record: String::new(),
    };
    report(9, &determinism);
    let all = first.iter().chain([&determinism]).all(|o| o.pass);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
