//! The frozen visual encoder. Three strided convolutions produce a spatial
//! map; a dense layer on top produces the scene vector. A classification head
//! is used only while pretraining and then thrown away.

pub mod conv;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::diffcore::gemm::{gemm, View};
use crate::diffcore::{hash_parameters, AdamConfig, AdamState, Parameter, Tensor};
use crate::env::{render_class_instance, Image, Pose, Screen};
use crate::error::{Error, Result};
use crate::seed;
use conv::{avg_pool, avg_pool_backward, conv_backward, conv_forward, ConvShape};

pub const CHECKPOINT_KIND: &str = "encoder";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub kernel: usize,
    pub channels: usize,
    pub stride: usize,
    /// Average-pooling factor applied after the rectifier; 1 means none.
    pub pool: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RandomFrozen,
    PretrainedFrozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub screen: Screen,
    pub stages: Vec<ConvStage>,
    pub scene_width: usize,
    /// Rectify the scene vector before it leaves the encoder.
    pub rectified_scene: bool,
    pub seed: u64,
    pub provenance: Provenance,
    /// Multipliers that give the scene vector and the spatial map unit RMS on
    /// the data the encoder was frozen with.
    pub scene_scale: f64,
    pub spatial_scale: f64,
}

impl EncoderSpec {
    /// 64×64 input, 8/16/32 channels, 8×8×32 spatial map, 128-wide scene vector.
    pub fn desk(seed: u64) -> Self {
        Self::for_screen(Screen::DESK, seed)
    }

    /// Pools after the first two stages on large screens so the spatial map
    /// stays small.
    pub fn for_screen(screen: Screen, seed: u64) -> Self {
        let pool = if screen.height.min(screen.width) > 96 { 2 } else { 1 };
        let stage = |channels, pool| ConvStage {
            kernel: 3,
            channels,
            stride: 2,
            pool,
        };
        Self {
            screen,
            stages: vec![stage(8, pool), stage(16, pool), stage(32, 1)],
            scene_width: 128,
            rectified_scene: true,
            seed,
            provenance: Provenance::RandomFrozen,
            scene_scale: 1.0,
            spatial_scale: 1.0,
        }
    }

    fn conv_shapes(&self) -> Result<Vec<(ConvShape, usize)>> {
        let (mut h, mut w, mut c) = (self.screen.height as usize, self.screen.width as usize, 3);
        let mut out = Vec::new();
        for st in &self.stages {
            if st.kernel == 0 || st.stride == 0 || st.channels == 0 || st.pool == 0 {
                return Err(Error::Config("encoder stage sizes must be positive".into()));
            }
            let s = ConvShape {
                h,
                w,
                c_in: c,
                c_out: st.channels,
                kernel: st.kernel,
                stride: st.stride,
                pad: st.kernel / 2,
            };
            if h + 2 * s.pad < st.kernel || w + 2 * s.pad < st.kernel {
                return Err(Error::Config("encoder input too small for its stages".into()));
            }
            h = s.out_h() / st.pool;
            w = s.out_w() / st.pool;
            c = st.channels;
            if h == 0 || w == 0 {
                return Err(Error::Config("encoder stages shrink the map to nothing".into()));
            }
            out.push((s, st.pool));
        }
        Ok(out)
    }

    /// `(h, w, c)` of the spatial map.
    pub fn spatial_dims(&self) -> Result<(usize, usize, usize)> {
        let shapes = self.conv_shapes()?;
        let (s, pool) = shapes.last().ok_or_else(|| Error::Config("encoder has no stages".into()))?;
        Ok((s.out_h() / pool, s.out_w() / pool, s.c_out))
    }
}

/// Output of the encoder for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub scene: Vec<f64>,
    /// Channels-last `h × w × c`.
    pub spatial: Vec<f64>,
    pub spatial_dims: (usize, usize, usize),
}

#[derive(Clone, Debug)]
pub struct Encoder {
    spec: EncoderSpec,
    shapes: Vec<(ConvShape, usize)>,
    /// `conv0.w, conv0.b, …, fc.w, fc.b`, all frozen.
    params: Vec<Parameter>,
    hash: String,
}

struct Trace {
    cols: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    flat: Vec<f64>,
    scene_pre: Vec<f64>,
}

impl Encoder {
    /// Seeded initialisation, frozen immediately.
    pub fn random(spec: EncoderSpec) -> Result<Self> {
        let shapes = spec.conv_shapes()?;
        let mut rng = seed::stream(spec.seed, "encoder/init");
        let mut params = Vec::new();
        for (i, (s, _)) in shapes.iter().enumerate() {
            params.push(he(&mut rng, &format!("conv{i}.w"), s.c_out, s.patch()));
            params.push(Parameter::new(format!("conv{i}.b"), Tensor::zeros(vec![s.c_out])));
        }
        let (h, w, c) = spec.spatial_dims()?;
        params.push(he(&mut rng, "fc.w", spec.scene_width, h * w * c));
        params.push(Parameter::new("fc.b", Tensor::zeros(vec![spec.scene_width])));
        Self::from_parts(spec, params)
    }

    fn from_parts(spec: EncoderSpec, mut params: Vec<Parameter>) -> Result<Self> {
        let shapes = spec.conv_shapes()?;
        if params.len() != 2 * shapes.len() + 2 {
            return Err(Error::Config("encoder parameter list does not match its spec".into()));
        }
        for (i, (s, _)) in shapes.iter().enumerate() {
            if params[2 * i].len() != s.c_out * s.patch() || params[2 * i + 1].len() != s.c_out {
                return Err(Error::Config(format!("encoder stage {i} has mis-sized weights")));
            }
        }
        let (h, w, c) = spec.spatial_dims()?;
        let n = params.len();
        if params[n - 2].len() != spec.scene_width * h * w * c || params[n - 1].len() != spec.scene_width {
            return Err(Error::Config("encoder dense layer has mis-sized weights".into()));
        }
        for p in &mut params {
            p.trainable = false;
        }
        let hash = hash_parameters(&params);
        Ok(Self {
            spec,
            shapes,
            params,
            hash,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    /// Content hash of the frozen weights.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn scene_width(&self) -> usize {
        self.spec.scene_width
    }

    fn trace(&self, pixels: Vec<f64>, params: &[Parameter]) -> Trace {
        let mut cols = Vec::new();
        let mut pre = Vec::new();
        let mut x = pixels;
        for (i, (s, pool)) in self.shapes.iter().enumerate() {
            let (z, c) = conv_forward(s, &x, params[2 * i].values(), params[2 * i + 1].values());
            let a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            let next = if *pool > 1 {
                avg_pool(&a, s.out_h(), s.out_w(), s.c_out, *pool)
            } else {
                a
            };
            x = next;
            cols.push(c);
            pre.push(z);
        }
        let f = 2 * self.shapes.len();
        let (fw, fb) = (params[f].values(), params[f + 1].values());
        let d = self.spec.scene_width;
        let mut s = fb.to_vec();
        gemm(1, x.len(), d, View::rows(&x, x.len()), View::transposed(fw, x.len()), 1.0, &mut s, d);
        Trace {
            cols,
            pre,
            flat: x,
            scene_pre: s,
        }
    }

    /// Pure function of the frame; never consumes randomness.
    pub fn encode(&self, image: &Image) -> Result<Encoding> {
        if image.screen() != self.spec.screen {
            return Err(Error::Input(format!(
                "frame is {}×{}, encoder expects {}×{}",
                image.screen().height,
                image.screen().width,
                self.spec.screen.height,
                self.spec.screen.width
            )));
        }
        let t = self.trace(image.to_unit(), &self.params);
        let scene = t
            .scene_pre
            .iter()
            .map(|&v| if self.spec.rectified_scene { v.max(0.0) } else { v } * self.spec.scene_scale)
            .collect();
        let spatial = t.flat.iter().map(|v| v * self.spec.spatial_scale).collect();
        Ok(Encoding {
            scene,
            spatial,
            spatial_dims: self.spec.spatial_dims()?,
        })
    }

    /// Sets the output scales so both outputs have unit RMS over `images`.
    fn calibrate(&mut self, images: &[&Image]) -> Result<()> {
        self.spec.scene_scale = 1.0;
        self.spec.spatial_scale = 1.0;
        let (mut ss, mut sn, mut ps, mut pn) = (0.0, 0usize, 0.0, 0usize);
        for img in images {
            let e = self.encode(img)?;
            ss += e.scene.iter().map(|v| v * v).sum::<f64>();
            sn += e.scene.len();
            ps += e.spatial.iter().map(|v| v * v).sum::<f64>();
            pn += e.spatial.len();
        }
        let rms = |s: f64, n: usize| (s / n.max(1) as f64).sqrt();
        let (sr, pr) = (rms(ss, sn), rms(ps, pn));
        self.spec.scene_scale = if sr > 1e-12 { 1.0 / sr } else { 1.0 };
        self.spec.spatial_scale = if pr > 1e-12 { 1.0 / pr } else { 1.0 };
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::new(CHECKPOINT_KIND, self.spec.clone(), self.params.clone()).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::<EncoderSpec>::load(path, CHECKPOINT_KIND)?;
        Self::from_parts(ck.spec, ck.params)
    }
}

fn he(rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize) -> Parameter {
    let n = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
    let v = (0..rows * cols).map(|_| n.sample(rng)).collect();
    Parameter::new(name, Tensor::matrix(rows, cols, v).expect("sized"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch: 16,
            lr: 2e-3,
        }
    }
}

/// The discarded classification head, kept only for evaluation.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    w: Parameter,
    b: Parameter,
    classes: usize,
}

impl ClassifierHead {
    pub fn predict(&self, encoder: &Encoder, image: &Image) -> Result<usize> {
        let e = encoder.encode(image)?;
        let d = encoder.scene_width();
        let scale = encoder.spec.scene_scale;
        let feats: Vec<f64> = e.scene.iter().map(|v| (v / scale).max(0.0)).collect();
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..self.classes {
            let z = self.b.values()[k]
                + self.w.values()[k * d..(k + 1) * d].iter().zip(&feats).map(|(a, b)| a * b).sum::<f64>();
            if z > best.1 {
                best = (k, z);
            }
        }
        Ok(best.0)
    }

    pub fn accuracy(&self, encoder: &Encoder, data: &[(Image, usize)]) -> Result<f64> {
        let mut hits = 0;
        for (img, y) in data {
            hits += (self.predict(encoder, img)? == *y) as usize;
        }
        Ok(hits as f64 / data.len().max(1) as f64)
    }
}

pub struct Pretrained {
    pub encoder: Encoder,
    pub head: ClassifierHead,
    pub epoch_losses: Vec<f64>,
}

/// Labelled renders of `classes` in random poses; labels index into `classes`.
pub fn pretraining_set(screen: Screen, classes: &[usize], per_class: usize, seed: u64) -> Result<Vec<(Image, usize)>> {
    let mut rng = seed::stream(seed, "pretraining-set");
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for _ in 0..per_class {
        for (label, &c) in classes.iter().enumerate() {
            let pose = Pose::sample(&mut rng, 0.15, 0.45);
            let img = render_class_instance(screen, c, pose, rng.random())?;
            out.push((img.image, label));
        }
    }
    Ok(out)
}

/// Trains the encoder to classify `data`, then freezes it. With zero epochs
/// the seeded initialisation is returned, still frozen and calibrated.
pub fn pretrain(spec: EncoderSpec, data: &[(Image, usize)], config: PretrainConfig) -> Result<Pretrained> {
    let classes = data.iter().map(|(_, y)| y + 1).max().unwrap_or(0);
    let distinct = {
        let mut seen = vec![false; classes];
        for (_, y) in data {
            seen[*y] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Input("pretraining needs at least two classes".into()));
    }
    if config.batch == 0 {
        return Err(Error::Config("pretraining batch must be positive".into()));
    }
    let mut encoder = Encoder::random(spec)?;
    let d = encoder.scene_width();
    let mut rng = seed::stream(encoder.spec.seed, "encoder/pretrain");
    let mut params = encoder.params.clone();
    for p in &mut params {
        p.trainable = true;
    }
    let head_std = (1.0 / d as f64).sqrt();
    let normal = Normal::new(0.0, head_std).expect("positive std");
    let hw: Vec<f64> = (0..classes * d).map(|_| normal.sample(&mut rng)).collect();
    params.push(Parameter::new("head.w", Tensor::matrix(classes, d, hw)?));
    params.push(Parameter::new("head.b", Tensor::zeros(vec![classes])));
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
            for &i in chunk {
                total += encoder.accumulate(&params, &data[i].0, data[i].1, classes, &mut grads);
            }
            let inv = 1.0 / chunk.len() as f64;
            let grads: Vec<Option<Vec<f64>>> = grads
                .into_iter()
                .map(|g| Some(g.into_iter().map(|v| v * inv).collect()))
                .collect();
            let mut refs: Vec<&mut Parameter> = params.iter_mut().collect();
            adam.step(&mut refs, &grads).map_err(|e| match e {
                Error::Training { param, message } => Error::Training {
                    param,
                    message: format!("epoch {epoch}: {message}"),
                },
                other => other,
            })?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training {
                param: "encoder".into(),
                message: format!("non-finite pretraining loss in epoch {epoch}"),
            });
        }
        log::debug!("encoder pretraining epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    let head_b = params.pop().expect("head bias");
    let head_w = params.pop().expect("head weight");
    let mut spec = encoder.spec.clone();
    if config.epochs > 0 {
        spec.provenance = Provenance::PretrainedFrozen;
    }
    encoder = Encoder::from_parts(spec, params)?;
    let images: Vec<&Image> = data.iter().map(|(i, _)| i).collect();
    encoder.calibrate(&images)?;
    Ok(Pretrained {
        encoder,
        head: ClassifierHead {
            w: head_w,
            b: head_b,
            classes,
        },
        epoch_losses,
    })
}

impl Encoder {
    /// Forward and backward for one labelled image; returns its loss.
    fn accumulate(&self, params: &[Parameter], image: &Image, label: usize, classes: usize, grads: &mut [Vec<f64>]) -> f64 {
        let t = self.trace(image.to_unit(), params);
        let d = self.spec.scene_width;
        let n = params.len();
        let feats: Vec<f64> = t.scene_pre.iter().map(|v| v.max(0.0)).collect();
        let (hw, hb) = (params[n - 2].values(), params[n - 1].values());
        let logits: Vec<f64> = (0..classes)
            .map(|k| hb[k] + hw[k * d..(k + 1) * d].iter().zip(&feats).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let loss = -(logits[label] - m - z.ln());
        let dl: Vec<f64> = (0..classes)
            .map(|k| (logits[k] - m).exp() / z - (k == label) as u8 as f64)
            .collect();
        // head
        let mut dfeat = vec![0.0; d];
        for k in 0..classes {
            grads[n - 1][k] += dl[k];
            for j in 0..d {
                grads[n - 2][k * d + j] += dl[k] * feats[j];
                dfeat[j] += dl[k] * hw[k * d + j];
            }
        }
        let ds: Vec<f64> = dfeat
            .iter()
            .zip(&t.scene_pre)
            .map(|(g, s)| if *s > 0.0 { *g } else { 0.0 })
            .collect();
        // dense layer
        let fi = t.flat.len();
        let fw = params[n - 4].values();
        for (g, v) in grads[n - 3].iter_mut().zip(&ds) {
            *g += v;
        }
        gemm(d, 1, fi, View::rows(&ds, 1), View::rows(&t.flat, fi), 1.0, &mut grads[n - 4], fi);
        let mut dx = vec![0.0; fi];
        gemm(1, d, fi, View::rows(&ds, d), View::rows(fw, fi), 0.0, &mut dx, fi);
        // convolutions, last to first
        for i in (0..self.shapes.len()).rev() {
            let (s, pool) = self.shapes[i];
            let da = if pool > 1 {
                avg_pool_backward(&dx, s.out_h(), s.out_w(), s.c_out, pool)
            } else {
                dx
            };
            let dz: Vec<f64> = da
                .iter()
                .zip(&t.pre[i])
                .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                .collect();
            let (gw, rest) = grads[2 * i..].split_at_mut(1);
            let w = params[2 * i].values();
            dx = conv_backward(&s, &t.cols[i], w, &dz, &mut gw[0], &mut rest[0], i > 0).unwrap_or_default();
        }
        loss
    }
}

/// Memoised encodings keyed by frame content.
pub struct EncodingCache {
    encoder: Arc<Encoder>,
    map: HashMap<u64, Arc<Encoding>>,
    capacity: usize,
}

impl EncodingCache {
    pub fn new(encoder: Arc<Encoder>, capacity: usize) -> Self {
        Self {
            encoder,
            map: HashMap::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn encoder(&self) -> &Arc<Encoder> {
        &self.encoder
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&mut self, image: &Image) -> Result<Arc<Encoding>> {
        if let Some(e) = self.map.get(&image.digest()) {
            return Ok(e.clone());
        }
        if self.map.len() >= self.capacity {
            self.map.clear();
        }
        let e = Arc::new(self.encoder.encode(image)?);
        self.map.insert(image.digest(), e.clone());
        Ok(e)
    }
}

/// Encoder used throughout the lab unless a checkpoint is supplied: trained
/// on every synthetic class.
pub fn default_encoder(screen: Screen, seed: u64) -> Result<Encoder> {
    let classes: Vec<usize> = (0..crate::env::CLASS_COUNT).collect();
    let data = pretraining_set(screen, &classes, 60, seed)?;
    let spec = EncoderSpec::for_screen(screen, seed);
    Ok(pretrain(spec, &data, PretrainConfig::default())?.encoder)
}
