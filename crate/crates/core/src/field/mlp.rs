//! The radiance-field network and its hand-written backward pass.
//!
//! Layout: a ReLU trunk over the encoded position (inverted dropout after
//! every trunk layer), a density head `σ = softplus(x - 1)` on the trunk
//! output, and a color branch that concatenates the trunk output with the
//! encoded view direction, applies one ReLU layer and a logistic output.

use crate::raymarch::encode_into;
use crate::rng::{self, Purpose};
use crate::{Error, Result};
use nalgebra::Vector3;
use ndarray::{concatenate, s, Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldArch {
    pub pos_levels: usize,
    pub dir_levels: usize,
    pub trunk_depth: usize,
    pub trunk_width: usize,
    pub head_width: usize,
}

impl FieldArch {
    /// Raw coordinates plus sin/cos pairs.
    pub fn pos_dim(&self) -> usize {
        3 + 6 * self.pos_levels
    }

    pub fn dir_dim(&self) -> usize {
        3 + 6 * self.dir_levels
    }

    pub fn from_config(cfg: &crate::config::TrainConfig) -> Self {
        Self {
            pos_levels: cfg.pos_levels,
            dir_levels: cfg.dir_levels,
            trunk_depth: cfg.trunk_depth,
            trunk_width: cfg.trunk_width,
            head_width: cfg.head_width,
        }
    }
}

/// Cube mapped onto `[-0.5, 0.5]^3` before encoding, which keeps the lowest
/// encoding frequency (period 2) free of wrap-around.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub center: [f64; 3],
    pub extent: f64,
}

impl Bounds {
    pub fn from_box(min: [f64; 3], max: [f64; 3]) -> Self {
        let center = [0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1]), 0.5 * (min[2] + max[2])];
        let extent = (0..3).map(|k| max[k] - min[k]).fold(0.0, f64::max);
        Self { center, extent }
    }

    pub fn normalize(&self, p: &Vector3<f64>) -> [f64; 3] {
        [
            (p.x - self.center[0]) / self.extent,
            (p.y - self.center[1]) / self.extent,
            (p.z - self.center[2]) / self.extent,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn uniform(fan_in: usize, fan_out: usize, bound: f64, rng: &mut impl Rng) -> Self {
        Self {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound)),
            b: Array1::zeros(fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.w);
        z += &self.b;
        z
    }
}

/// Dropout settings for one forward pass; `key` selects the mask.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
    pub key: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldOutput {
    pub sigma: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

/// Activations recorded by [`Field::forward`] for the backward pass.
pub struct ForwardCache {
    pos: Array2<f64>,
    /// Post-activation (and post-dropout) trunk outputs.
    hidden: Vec<Array2<f64>>,
    /// `∂h/∂z` of each trunk layer: ReLU gate times dropout scale.
    gates: Vec<Array2<f64>>,
    sigma_raw: Array1<f64>,
    color_in: Array2<f64>,
    color_hidden: Array2<f64>,
    color: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    arch: FieldArch,
    bounds: Bounds,
    /// Trunk layers, then the density head, color hidden and color output.
    layers: Vec<Linear>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Shift applied before the density softplus.
const SIGMA_SHIFT: f64 = 1.0;

impl Field {
    /// He-uniform weights for ReLU layers, Glorot-uniform for the heads,
    /// zero biases. `net` distinguishes the coarse and fine networks.
    pub fn new(arch: FieldArch, bounds: Bounds, seed: u64, net: u64) -> Self {
        let mut layers = Vec::with_capacity(arch.trunk_depth + 3);
        let mut fan_in = arch.pos_dim();
        for l in 0..arch.trunk_depth {
            let mut r = rng::stream(seed, Purpose::Init, &[net, l as u64]);
            layers.push(Linear::uniform(fan_in, arch.trunk_width, (6.0 / fan_in as f64).sqrt(), &mut r));
            fan_in = arch.trunk_width;
        }
        let w = arch.trunk_width;
        let glorot = |i: usize, o: usize| (6.0 / (i + o) as f64).sqrt();
        let mut r = rng::stream(seed, Purpose::Init, &[net, arch.trunk_depth as u64]);
        layers.push(Linear::uniform(w, 1, glorot(w, 1), &mut r));
        let ci = w + arch.dir_dim();
        let mut r = rng::stream(seed, Purpose::Init, &[net, arch.trunk_depth as u64 + 1]);
        layers.push(Linear::uniform(ci, arch.head_width, (6.0 / ci as f64).sqrt(), &mut r));
        let mut r = rng::stream(seed, Purpose::Init, &[net, arch.trunk_depth as u64 + 2]);
        layers.push(Linear::uniform(arch.head_width, 3, glorot(arch.head_width, 3), &mut r));
        Self { arch, bounds, layers }
    }

    /// Same architecture, every parameter zero (used as a gradient buffer).
    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            bounds: self.bounds,
            layers: self.layers.iter().map(|l| Linear::zeros(l.w.nrows(), l.w.ncols())).collect(),
        }
    }

    pub fn arch(&self) -> FieldArch {
        self.arch
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    /// Parameter tensors as `(name, shape, values)` in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w"), l.w.shape().to_vec(), l.w.as_slice().expect("standard layout")));
            out.push((format!("layer{i}.b"), l.b.shape().to_vec(), l.b.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Rebuilds a field from tensors in [`Field::tensors`] order.
    pub fn from_tensors(arch: FieldArch, bounds: Bounds, tensors: &[(Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let mut f = Self::new(arch, bounds, 0, 0);
        if tensors.len() != 2 * f.layers.len() {
            return Err(Error::input(format!(
                "expected {} tensors, got {}",
                2 * f.layers.len(),
                tensors.len()
            )));
        }
        for (i, l) in f.layers.iter_mut().enumerate() {
            let (ws, wv) = &tensors[2 * i];
            let (bs, bv) = &tensors[2 * i + 1];
            if ws.as_slice() != l.w.shape() || bs.as_slice() != l.b.shape() {
                return Err(Error::input(format!("tensor shape mismatch in layer {i}")));
            }
            l.w.as_slice_mut().unwrap().copy_from_slice(wv);
            l.b.as_slice_mut().unwrap().copy_from_slice(bv);
        }
        Ok(f)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Field) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    /// Encodes positions and unit view directions, one row per point.
    pub fn encode(&self, points: &[Vector3<f64>], dirs: &[Vector3<f64>]) -> (Array2<f64>, Array2<f64>) {
        let (pd, dd) = (self.arch.pos_dim(), self.arch.dir_dim());
        let mut pos = Array2::zeros((points.len(), pd));
        let mut dir = Array2::zeros((dirs.len(), dd));
        for (mut row, p) in pos.rows_mut().into_iter().zip(points) {
            let q = self.bounds.normalize(p);
            let r = row.as_slice_mut().unwrap();
            r[..3].copy_from_slice(&q);
            encode_into(&q, self.arch.pos_levels, &mut r[3..]);
        }
        for (mut row, d) in dir.rows_mut().into_iter().zip(dirs) {
            let q = [d.x, d.y, d.z];
            let r = row.as_slice_mut().unwrap();
            r[..3].copy_from_slice(&q);
            encode_into(&q, self.arch.dir_levels, &mut r[3..]);
        }
        (pos, dir)
    }

    pub fn forward(&self, pos: &Array2<f64>, dir: &Array2<f64>, dropout: Option<Dropout>) -> Result<(FieldOutput, ForwardCache)> {
        let a = &self.arch;
        if pos.ncols() != a.pos_dim() || dir.ncols() != a.dir_dim() || pos.nrows() != dir.nrows() {
            return Err(Error::input(format!(
                "encoding shape ({}x{}, {}x{}) does not match the field ({} / {} columns)",
                pos.nrows(),
                pos.ncols(),
                dir.nrows(),
                dir.ncols(),
                a.pos_dim(),
                a.dir_dim()
            )));
        }
        let n = pos.nrows();
        let mut hidden = Vec::with_capacity(a.trunk_depth);
        let mut gates = Vec::with_capacity(a.trunk_depth);
        let mut h = pos.clone();
        for l in 0..a.trunk_depth {
            let mut z = self.layers[l].apply(&h);
            let mut gate: Array2<f64> = Array2::zeros(z.raw_dim());
            match dropout {
                Some(d) if d.p > 0.0 => {
                    let keep_scale = 1.0 / (1.0 - d.p);
                    let threshold = (d.p * 4294967296.0) as u64;
                    let base = rng::counter(d.key, l as u64);
                    let width = z.ncols() as u64;
                    for (((i, j), zv), gv) in z.indexed_iter_mut().zip(gate.iter_mut()) {
                        let bits = rng::counter(base, i as u64 * width + j as u64) >> 32;
                        let g = if *zv > 0.0 && bits >= threshold { keep_scale } else { 0.0 };
                        *gv = g;
                        *zv *= g;
                    }
                }
                _ => {
                    Zip::from(&mut z).and(&mut gate).for_each(|zv, gv| {
                        if *zv > 0.0 {
                            *gv = 1.0;
                        } else {
                            *zv = 0.0;
                        }
                    });
                }
            }
            hidden.push(z.clone());
            gates.push(gate);
            h = z;
        }
        let sigma_raw = self.layers[a.trunk_depth].apply(&h).column(0).to_owned();
        let sigma: Vec<f64> = sigma_raw.iter().map(|&x| softplus(x - SIGMA_SHIFT)).collect();

        let color_in = concatenate(Axis(1), &[h.view(), dir.view()]).expect("row counts checked");
        let mut color_hidden = self.layers[a.trunk_depth + 1].apply(&color_in);
        color_hidden.mapv_inplace(|v| v.max(0.0));
        let mut color = self.layers[a.trunk_depth + 2].apply(&color_hidden);
        color.mapv_inplace(logistic);
        let out = FieldOutput {
            sigma,
            color: (0..n).map(|i| [color[[i, 0]], color[[i, 1]], color[[i, 2]]]).collect(),
        };
        Ok((
            out,
            ForwardCache {
                pos: pos.clone(),
                hidden,
                gates,
                sigma_raw,
                color_in,
                color_hidden,
                color,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` given `∂L/∂σ` and
    /// `∂L/∂c` per point.
    pub fn backward(&self, cache: &ForwardCache, grad_sigma: &[f64], grad_color: &[[f64; 3]], grads: &mut Field) {
        let a = &self.arch;
        let n = cache.pos.nrows();
        let depth = a.trunk_depth;

        // color output: c = logistic(raw)
        let mut d_raw_c = Array2::zeros((n, 3));
        for i in 0..n {
            for k in 0..3 {
                let c = cache.color[[i, k]];
                d_raw_c[[i, k]] = grad_color[i][k] * c * (1.0 - c);
            }
        }
        let out = &self.layers[depth + 2];
        grads.layers[depth + 2].w += &cache.color_hidden.t().dot(&d_raw_c);
        grads.layers[depth + 2].b += &d_raw_c.sum_axis(Axis(0));
        let mut d_ch = d_raw_c.dot(&out.w.t());
        Zip::from(&mut d_ch).and(&cache.color_hidden).for_each(|g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
        let hid = &self.layers[depth + 1];
        grads.layers[depth + 1].w += &cache.color_in.t().dot(&d_ch);
        grads.layers[depth + 1].b += &d_ch.sum_axis(Axis(0));
        let d_color_in = d_ch.dot(&hid.w.t());
        let mut dh = d_color_in.slice(s![.., ..a.trunk_width]).to_owned();

        // density head: σ = softplus(raw - shift), σ' = logistic(raw - shift)
        let d_raw_s = Array1::from_iter(
            grad_sigma
                .iter()
                .zip(cache.sigma_raw.iter())
                .map(|(g, &r)| g * logistic(r - SIGMA_SHIFT)),
        );
        let last_h = &cache.hidden[depth - 1];
        let sig = &self.layers[depth];
        {
            let gw = last_h.t().dot(&d_raw_s);
            let mut col = grads.layers[depth].w.column_mut(0);
            col += &gw;
        }
        grads.layers[depth].b[0] += d_raw_s.sum();
        let wcol = sig.w.column(0);
        for (mut row, &g) in dh.rows_mut().into_iter().zip(d_raw_s.iter()) {
            row.scaled_add(g, &wcol);
        }

        for l in (0..depth).rev() {
            let mut dz = dh;
            dz *= &cache.gates[l];
            let input = if l == 0 { &cache.pos } else { &cache.hidden[l - 1] };
            grads.layers[l].w += &input.t().dot(&dz);
            grads.layers[l].b += &dz.sum_axis(Axis(0));
            dh = if l > 0 { dz.dot(&self.layers[l].w.t()) } else { Array2::zeros((0, 0)) };
        }
    }
}
