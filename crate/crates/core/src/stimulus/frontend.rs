//! Small convolutional encoder standing in for a pretrained vision model.
//!
//! Three `3×3 conv → ReLU → 2×2 max-pool` stages; the flattened output of
//! the last stage is the perceptual vector. The encoder is pretrained with
//! linear category/identity/location heads, checked with the decodability
//! gate, then frozen.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{render_stimulus, Background, CanvasConfig, Image, StimulusSpec, N_LOCATIONS};
use crate::artifact;
use crate::decode::{CvConfig, DecoderSet};
use crate::error::{domain_err, Error, Result};
use crate::optimize::{adamw_step, AdamWConfig, OptimizerState};
use crate::scalar::Scalar;
use crate::task::Feature;

const MAGIC: &[u8; 8] = b"WMFRONT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub channels: [usize; 3],
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Run the gate every this many epochs once the heads fit the data.
    pub gate_every: usize,
    pub gate_threshold: f64,
    pub gate_folds: usize,
    /// Texture draws per combination when the canvas uses textures.
    pub textures_per_spec: usize,
    pub seed: u64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            channels: [8, 16, 16],
            lr: 2e-3,
            batch_size: 32,
            max_epochs: 120,
            gate_every: 5,
            gate_threshold: 0.99,
            gate_folds: 2,
            textures_per_spec: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConvLayer<T> {
    /// `[c_out, c_in · 9]`
    w: Array2<T>,
    b: Array1<T>,
    c_in: usize,
    c_out: usize,
}

struct LayerCache<T> {
    cols: Array2<T>,
    pre: Array2<T>,
    argmax: Vec<usize>,
    h: usize,
    w: usize,
}

/// Frozen perceptual encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualFrontend<T> {
    layers: Vec<ConvLayer<T>>,
    pub height: usize,
    pub width: usize,
    pub out_dim: usize,
    pub frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct FrontendHeader {
    height: usize,
    width: usize,
    channels: Vec<usize>,
    out_dim: usize,
    frozen: bool,
}

fn im2col<T: Scalar>(a: ArrayView2<'_, T>, h: usize, w: usize) -> Array2<T> {
    let c = a.nrows();
    let mut cols = Array2::<T>::zeros((c * 9, h * w));
    for ch in 0..c {
        let src = a.row(ch);
        for ky in 0..3 {
            for kx in 0..3 {
                let r = ch * 9 + ky * 3 + kx;
                let mut dst = cols.row_mut(r);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[y * w + x] = src[sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: ArrayView2<'_, T>, c: usize, h: usize, w: usize) -> Array2<T> {
    let mut a = Array2::<T>::zeros((c, h * w));
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let src = cols.row(ch * 9 + ky * 3 + kx);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        a[[ch, sy as usize * w + sx as usize]] += src[y * w + x];
                    }
                }
            }
        }
    }
    a
}

/// 2×2 max-pool over `[c, h·w]` after ReLU; returns pooled map and argmax.
fn relu_pool<T: Scalar>(pre: &Array2<T>, h: usize, w: usize) -> (Array2<T>, Vec<usize>) {
    let (c, _) = pre.dim();
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Array2::<T>::zeros((c, ph * pw));
    let mut arg = vec![0usize; c * ph * pw];
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                let mut best = 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * y + dy) * w + 2 * x + dx;
                    if pre[[ch, idx]] > pre[[ch, best]] {
                        best = idx;
                    }
                }
                out[[ch, y * pw + x]] = pre[[ch, best]].max(T::zero());
                arg[ch * ph * pw + y * pw + x] = best;
            }
        }
    }
    (out, arg)
}

impl<T: Scalar> PerceptualFrontend<T> {
    pub fn init(canvas: &CanvasConfig, channels: [usize; 3], rng: &mut impl Rng) -> Result<Self> {
        canvas.validate()?;
        let mut layers = Vec::new();
        let mut c_in = 1;
        for &c_out in &channels {
            let fan_in = (c_in * 9) as f64;
            let std = (2.0 / fan_in).sqrt();
            let w = Array2::from_shape_fn((c_out, c_in * 9), |_| {
                T::from_f64c(std * rng.sample::<f64, _>(StandardNormal))
            });
            layers.push(ConvLayer {
                w,
                b: Array1::zeros(c_out),
                c_in,
                c_out,
            });
            c_in = c_out;
        }
        Ok(Self {
            layers,
            height: canvas.height,
            width: canvas.width,
            out_dim: channels[2] * (canvas.height / 8) * (canvas.width / 8),
            frozen: false,
        })
    }

    fn forward_cached(&self, image: &Image) -> Result<(Array1<T>, Vec<LayerCache<T>>)> {
        if image.dim() != (self.height, self.width) {
            return domain_err!(
                "image is {:?}, frontend expects {}x{}",
                image.dim(),
                self.height,
                self.width
            );
        }
        let (mut h, mut w) = (self.height, self.width);
        let mut a: Array2<T> = image
            .view()
            .into_shape_with_order((1, h * w))
            .expect("contiguous image")
            .mapv(|x| T::from_f64c(x as f64));
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let cols = im2col(a.view(), h, w);
            let mut pre = layer.w.dot(&cols);
            pre += &layer.b.view().insert_axis(ndarray::Axis(1));
            let (pooled, argmax) = relu_pool(&pre, h, w);
            caches.push(LayerCache { cols, pre, argmax, h, w });
            a = pooled;
            h /= 2;
            w /= 2;
        }
        let feat = a.into_shape_with_order(self.out_dim).expect("flatten");
        Ok((feat, caches))
    }

    /// Perceptual vector of one image.
    pub fn embed(&self, image: &Image) -> Result<Array1<T>> {
        let (f, _) = self.forward_cached(image)?;
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite perceptual features".into()));
        }
        Ok(f)
    }

    /// Accumulate parameter gradients given `d loss / d features`.
    fn backward(&self, caches: &[LayerCache<T>], dfeat: &Array1<T>, grads: &mut [(Array2<T>, Array1<T>)]) {
        let last = self.layers.last().expect("layers");
        let mut da = dfeat
            .clone()
            .into_shape_with_order((last.c_out, self.out_dim / last.c_out))
            .expect("unflatten");
        for (k, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let hw = cache.h * cache.w;
            let pooled = da.ncols();
            let mut dpre = Array2::<T>::zeros((layer.c_out, hw));
            for ch in 0..layer.c_out {
                for p in 0..pooled {
                    let idx = cache.argmax[ch * pooled + p];
                    if cache.pre[[ch, idx]] > T::zero() {
                        dpre[[ch, idx]] += da[[ch, p]];
                    }
                }
            }
            let (gw, gb) = &mut grads[k];
            *gw += &dpre.dot(&cache.cols.t());
            *gb += &dpre.sum_axis(ndarray::Axis(1));
            if k > 0 {
                let dcols = layer.w.t().dot(&dpre);
                da = col2im(dcols.view(), layer.c_in, cache.h, cache.w);
            }
        }
    }

    fn zero_grads(&self) -> Vec<(Array2<T>, Array1<T>)> {
        self.layers
            .iter()
            .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
            .collect()
    }

    fn param_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter().map(|x| x.to_f64c()));
            out.extend(l.b.iter().map(|x| x.to_f64c()));
        }
        out
    }

    /// SHA-256 over the parameter values.
    pub fn content_hash(&self) -> String {
        artifact::hash_floats(&self.param_vec())
    }

    pub fn channels(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.c_out).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = FrontendHeader {
            height: self.height,
            width: self.width,
            channels: self.channels(),
            out_dim: self.out_dim,
            frozen: self.frozen,
        };
        artifact::write(path, MAGIC, &header, &self.param_vec())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (FrontendHeader, Vec<f64>) = artifact::read(path, MAGIC)?;
        let mut layers = Vec::new();
        let mut off = 0;
        let mut c_in = 1;
        for &c_out in &h.channels {
            let nw = c_out * c_in * 9;
            let need = off + nw + c_out;
            if payload.len() < need {
                return Err(Error::integrity(path, "payload shorter than declared shapes"));
            }
            let w = Array2::from_shape_vec((c_out, c_in * 9), payload[off..off + nw].iter().map(|&x| T::from_f64c(x)).collect())
                .expect("shape");
            let b = Array1::from(payload[off + nw..need].iter().map(|&x| T::from_f64c(x)).collect::<Vec<_>>());
            layers.push(ConvLayer { w, b, c_in, c_out });
            off = need;
            c_in = c_out;
        }
        if off != payload.len() {
            return Err(Error::integrity(path, "payload longer than declared shapes"));
        }
        Ok(Self {
            layers,
            height: h.height,
            width: h.width,
            out_dim: h.out_dim,
            frozen: h.frozen,
        })
    }

    /// Convert the parameters to another scalar type.
    pub fn cast<U: Scalar>(&self) -> PerceptualFrontend<U> {
        PerceptualFrontend {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    w: l.w.mapv(|x| U::from_f64c(x.to_f64c())),
                    b: l.b.mapv(|x| U::from_f64c(x.to_f64c())),
                    c_in: l.c_in,
                    c_out: l.c_out,
                })
                .collect(),
            height: self.height,
            width: self.width,
            out_dim: self.out_dim,
            frozen: self.frozen,
        }
    }
}

/// Cross-validated per-attribute decoding accuracies of a frontend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub category: f64,
    pub identity: f64,
    pub location: f64,
    pub threshold: f64,
}

impl GateReport {
    pub fn passed(&self) -> bool {
        self.category >= self.threshold && self.identity >= self.threshold && self.location >= self.threshold
    }
}

fn embed_matrix<T: Scalar>(frontend: &PerceptualFrontend<T>, specs: &[StimulusSpec], canvas: &CanvasConfig) -> Result<Array2<f64>> {
    let mut x = Array2::<f64>::zeros((specs.len(), frontend.out_dim));
    for (i, s) in specs.iter().enumerate() {
        let f = frontend.embed(&render_stimulus(s, canvas)?)?;
        x.row_mut(i).assign(&f.mapv(|v| v.to_f64c()));
    }
    Ok(x)
}

fn attribute_labels(specs: &[StimulusSpec], canvas: &CanvasConfig, feature: Feature) -> Vec<usize> {
    specs.iter().map(|s| feature.label(s, canvas)).collect()
}

/// K-fold cross-validated one-vs-rest (margin-argmax) accuracy for each
/// attribute, computed on the perceptual vectors of `specs`.
///
/// `labels` may be overridden (permutation controls); by default they come
/// from the specs.
pub fn decodability_gate<T: Scalar>(
    frontend: &PerceptualFrontend<T>,
    specs: &[StimulusSpec],
    canvas: &CanvasConfig,
    folds: usize,
    threshold: f64,
) -> Result<GateReport> {
    let x = embed_matrix(frontend, specs, canvas)?;
    let acc = |f: Feature| -> Result<f64> {
        let labels = attribute_labels(specs, canvas, f);
        gate_accuracy(&x, &labels, f.cardinality(canvas), folds)
    };
    Ok(GateReport {
        category: acc(Feature::Category)?,
        identity: acc(Feature::Identity)?,
        location: acc(Feature::Location)?,
        threshold,
    })
}

/// Outer k-fold accuracy of a decoder set; each training fold runs the
/// usual inner grid-search CV.
pub fn gate_accuracy(x: &Array2<f64>, labels: &[usize], n_values: usize, folds: usize) -> Result<f64> {
    if folds < 2 {
        return domain_err!("gate needs at least 2 folds");
    }
    for v in 0..n_values {
        let count = labels.iter().filter(|&&l| l == v).count();
        if count < 50 {
            return domain_err!("gate needs at least 50 samples per value, value {v} has {count}");
        }
    }
    let assign = crate::decode::stratified_folds(labels, folds);
    let mut hits = 0usize;
    for fold in 0..folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| assign[i] != fold).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| assign[i] == fold).collect();
        let xt = x.select(ndarray::Axis(0), &train);
        let yt: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let set = DecoderSet::fit(xt.view(), &yt, n_values, &CvConfig::default())?;
        let xe = x.select(ndarray::Axis(0), &test);
        let pred = set.predict(xe.view());
        hits += pred.iter().zip(&test).filter(|(p, &i)| **p == labels[i]).count();
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Pretraining dataset: every training combination, over blank or textured
/// backgrounds depending on the canvas.
pub fn pretraining_specs(canvas: &CanvasConfig, cfg: &FrontendConfig) -> Vec<StimulusSpec> {
    match canvas.texture {
        None => canvas.training_specs(Background::Blank),
        Some(t) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e47);
            let mut out = Vec::new();
            for s in canvas.training_specs(Background::Blank) {
                for _ in 0..cfg.textures_per_spec.max(1) {
                    let seed = t.base_seed + rng.random_range(0..t.pool.max(1)) as u64;
                    out.push(StimulusSpec {
                        background: Background::Texture(seed),
                        ..s
                    });
                }
            }
            out
        }
    }
}

/// Train the encoder with three linear attribute heads until the
/// decodability gate passes, then freeze it.
pub fn pretrain_frontend(specs: &[StimulusSpec], canvas: &CanvasConfig, cfg: &FrontendConfig) -> Result<PerceptualFrontend<f32>> {
    for f in [Feature::Category, Feature::Identity, Feature::Location] {
        let mut values: Vec<usize> = attribute_labels(specs, canvas, f);
        values.sort_unstable();
        values.dedup();
        if values.len() < 2 {
            return Err(Error::Training(format!(
                "{f:?} labels are degenerate ({} distinct value); decodability gate cannot pass",
                values.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PerceptualFrontend::<f32>::init(canvas, cfg.channels, &mut rng)?;
    let images: Vec<Image> = specs.iter().map(|s| render_stimulus(s, canvas)).collect::<Result<_>>()?;
    let heads = [
        (Feature::Category, canvas.n_cat),
        (Feature::Identity, canvas.n_identities() + canvas.n_cat),
        (Feature::Location, N_LOCATIONS),
    ];
    let n_out: usize = heads.iter().map(|h| h.1).sum();
    let labels: Vec<[usize; 3]> = specs
        .iter()
        .map(|s| {
            [
                Feature::Category.label(s, canvas),
                Feature::Identity.label(s, canvas),
                Feature::Location.label(s, canvas),
            ]
        })
        .collect();
    let head_std = (1.0 / net.out_dim as f64).sqrt();
    let mut head_w = Array2::<f32>::from_shape_fn((n_out, net.out_dim), |_| (head_std * rng.sample::<f64, _>(StandardNormal)) as f32);
    let mut head_b = Array1::<f32>::zeros(n_out);

    let adam = AdamWConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut state = {
        let mut sizes: Vec<usize> = net.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect();
        sizes.push(head_w.len());
        sizes.push(head_b.len());
        OptimizerState::<f32>::new(&sizes)
    };
    let mut order: Vec<usize> = (0..specs.len()).collect();
    let mut best = GateReport {
        category: 0.0,
        identity: 0.0,
        location: 0.0,
        threshold: cfg.gate_threshold,
    };
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut correct = [0usize; 3];
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grads = net.zero_grads();
            let mut g_hw = Array2::<f32>::zeros(head_w.raw_dim());
            let mut g_hb = Array1::<f32>::zeros(head_b.raw_dim());
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let (feat, caches) = net.forward_cached(&images[i])?;
                let logits = head_w.dot(&feat) + &head_b;
                let mut dlogits = Array1::<f32>::zeros(n_out);
                let mut off = 0;
                for (h, &(_, k)) in heads.iter().enumerate() {
                    let z = logits.slice(s![off..off + k]);
                    let p = crate::optimize::softmax_row(z.as_slice().expect("contiguous"));
                    let y = labels[i][h];
                    let pred = p
                        .iter()
                        .enumerate()
                        .fold((0, f32::MIN), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                        .0;
                    if pred == y {
                        correct[h] += 1;
                    }
                    for j in 0..k {
                        dlogits[off + j] = (p[j] - if j == y { 1.0 } else { 0.0 }) * scale;
                    }
                    off += k;
                }
                g_hw += &dlogits
                    .view()
                    .insert_axis(ndarray::Axis(1))
                    .dot(&feat.view().insert_axis(ndarray::Axis(0)));
                g_hb += &dlogits;
                let dfeat = head_w.t().dot(&dlogits);
                net.backward(&caches, &dfeat, &mut grads);
            }
            let mut params: Vec<&mut [f32]> = Vec::new();
            for l in net.layers.iter_mut() {
                params.push(l.w.as_slice_mut().expect("contiguous"));
                params.push(l.b.as_slice_mut().expect("contiguous"));
            }
            params.push(head_w.as_slice_mut().expect("contiguous"));
            params.push(head_b.as_slice_mut().expect("contiguous"));
            let mut g: Vec<&[f32]> = Vec::new();
            for (gw, gb) in &grads {
                g.push(gw.as_slice().expect("contiguous"));
                g.push(gb.as_slice().expect("contiguous"));
            }
            g.push(g_hw.as_slice().expect("contiguous"));
            g.push(g_hb.as_slice().expect("contiguous"));
            adamw_step(&mut params, &g, &mut state, cfg.lr, &adam)?;
        }
        let train_acc = correct.map(|c| c as f64 / specs.len() as f64);
        let fitted = train_acc.iter().all(|&a| a >= cfg.gate_threshold);
        if (fitted && epoch % cfg.gate_every.max(1) == 0) || epoch == cfg.max_epochs {
            let report = decodability_gate(&net, specs, canvas, cfg.gate_folds, cfg.gate_threshold)?;
            let score = |r: &GateReport| r.category.min(r.identity).min(r.location);
            if score(&report) >= score(&best) {
                best = report.clone();
            }
            if report.passed() {
                net.frozen = true;
                return Ok(net);
            }
        }
    }
    Err(Error::Training(format!(
        "decodability gate not passed within {} epochs; best category {:.4}, identity {:.4}, location {:.4}",
        cfg.max_epochs, best.category, best.identity, best.location
    )))
}

/// Perceptual vectors keyed by stimulus; blank-background stimuli are
/// precomputed, textured ones are added on demand.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    frontend: PerceptualFrontend<f32>,
    canvas: CanvasConfig,
    map: HashMap<StimulusSpec, Array1<f32>>,
}

impl EmbeddingCache {
    pub fn new(frontend: PerceptualFrontend<f32>, canvas: &CanvasConfig) -> Result<Self> {
        if !frontend.frozen {
            return domain_err!("frontend must be frozen before embedding task stimuli");
        }
        let mut cache = Self {
            frontend,
            canvas: canvas.clone(),
            map: HashMap::new(),
        };
        for s in canvas.all_blank_specs() {
            cache.ensure(&s)?;
        }
        Ok(cache)
    }

    pub fn out_dim(&self) -> usize {
        self.frontend.out_dim
    }

    pub fn frontend(&self) -> &PerceptualFrontend<f32> {
        &self.frontend
    }

    pub fn canvas(&self) -> &CanvasConfig {
        &self.canvas
    }

    pub fn ensure(&mut self, spec: &StimulusSpec) -> Result<()> {
        if !self.map.contains_key(spec) {
            let v = self.frontend.embed(&render_stimulus(spec, &self.canvas)?)?;
            self.map.insert(*spec, v);
        }
        Ok(())
    }

    pub fn ensure_all<'a>(&mut self, specs: impl IntoIterator<Item = &'a StimulusSpec>) -> Result<()> {
        for s in specs {
            self.ensure(s)?;
        }
        Ok(())
    }

    /// Embedding of a stimulus already present in the cache.
    pub fn get(&self, spec: &StimulusSpec) -> Result<&Array1<f32>> {
        self.map
            .get(spec)
            .ok_or_else(|| Error::Domain(format!("stimulus {spec:?} not embedded")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(category: usize, identity: usize, location: usize, view_angle: u16) -> StimulusSpec {
        StimulusSpec {
            category,
            identity,
            location,
            view_angle,
            background: Background::Blank,
        }
    }

    #[test]
    fn embed_is_deterministic_with_right_dim() {
        let c = CanvasConfig::default();
        let f = PerceptualFrontend::<f32>::init(&c, [8, 16, 16], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(f.out_dim, 256);
        let img = render_stimulus(&spec(1, 0, 2, 30), &c).unwrap();
        let a = f.embed(&img).unwrap();
        assert_eq!(a, f.embed(&img).unwrap());
        assert_eq!(a.len(), 256);
        assert!(f.embed(&Image::zeros((16, 16))).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let c = CanvasConfig {
            height: 16,
            width: 16,
            ..CanvasConfig::default()
        };
        let mut f = PerceptualFrontend::<f64>::init(&c, [2, 3, 2], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for l in f.layers.iter_mut() {
            l.b.fill(0.05);
        }
        let img = render_stimulus(&spec(0, 1, 1, 60), &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probe = Array1::from_shape_fn(f.out_dim, |_| rng.random_range(-1.0..1.0));
        let loss = |net: &PerceptualFrontend<f64>| net.embed(&img).unwrap().dot(&probe);
        let (_, caches) = f.forward_cached(&img).unwrap();
        let mut grads = f.zero_grads();
        f.backward(&caches, &probe, &mut grads);
        let h = 1e-6;
        for k in 0..f.layers.len() {
            for idx in [0usize, 3, 7] {
                let idx = idx % f.layers[k].w.len();
                let (r, col) = (idx / f.layers[k].w.ncols(), idx % f.layers[k].w.ncols());
                let mut plus = f.clone();
                plus.layers[k].w[[r, col]] += h;
                let mut minus = f.clone();
                minus.layers[k].w[[r, col]] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grads[k].0[[r, col]];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "layer {k} w[{r},{col}]: {fd} vs {an}");
            }
            let mut plus = f.clone();
            plus.layers[k].b[0] += h;
            let mut minus = f.clone();
            minus.layers[k].b[0] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - grads[k].1[0]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn single_category_dataset_fails_explicitly() {
        let c = CanvasConfig::default();
        let specs: Vec<_> = c.training_specs(Background::Blank).into_iter().filter(|s| s.category == 0).collect();
        let err = pretrain_frontend(&specs, &c, &FrontendConfig::default()).unwrap_err();
        match err {
            Error::Training(msg) => assert!(msg.contains("Category"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = CanvasConfig::default();
        let f = PerceptualFrontend::<f32>::init(&c, [4, 8, 16], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        f.save(&dir.path().join("f.bin")).unwrap();
        let g = PerceptualFrontend::<f32>::load(&dir.path().join("f.bin")).unwrap();
        assert_eq!(f, g);
        assert_eq!(f.content_hash(), g.content_hash());
    }
}
