//! The video-text matching network.
//!
//! A video vector and a text vector are each projected to a shared width by a
//! dense layer, fused by element-wise product, and scored by a small fully
//! connected head ending in a sigmoid. All arithmetic is `f64`.
//!
//! Parameters are addressed in a fixed order everywhere (flat iteration,
//! gradients, checkpoints): video projection weights then bias, text projection
//! weights then bias, then each head layer's weights and bias. Weight matrices
//! are `out × in`, row-major.

mod checkpoint;
pub mod gradcheck;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::TEXT_DIM;
use crate::error::{Error, Result};
use crate::features::VIDEO_DIM;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{Example, TrainConfig, TrainPreset};

/// Matching threshold: a pair matches when the degree is strictly above this.
pub const MATCH_THRESHOLD: f64 = 0.5;
/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const LOSS_EPS: f64 = 1e-7;

/// Layer widths of a [`MatchingNetwork`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub video_in: usize,
    pub text_in: usize,
    /// Output width of both projections.
    pub joint: usize,
    /// Hidden widths of the scoring head; a final layer to a single unit follows.
    pub head_hidden: Vec<usize>,
}

impl Default for NetDims {
    fn default() -> Self {
        Self {
            video_in: VIDEO_DIM,
            text_in: TEXT_DIM,
            joint: 1024,
            head_hidden: vec![512, 128],
        }
    }
}

impl NetDims {
    fn head_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.joint];
        widths.extend(&self.head_hidden);
        widths.push(1);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        let dense = |(o, i): (usize, usize)| o * i + o;
        dense((self.joint, self.video_in))
            + dense((self.joint, self.text_in))
            + self.head_shapes().into_iter().map(dense).sum::<usize>()
    }

    fn validate(&self) -> Result<()> {
        let widths = [self.video_in, self.text_in, self.joint];
        if widths.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!("zero-width layer in {self:?}")));
        }
        Ok(())
    }
}

/// Activation applied to each projection before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// Network output for one (video, text) pair, in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MatchDegree(f64);

impl MatchDegree {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_match(self) -> bool {
        self.0 > MATCH_THRESHOLD
    }
}

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weights: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)); biases start at zero.
    fn glorot(out: usize, inp: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inp + out) as f64).sqrt();
        Self {
            weights: Array2::from_shape_simple_fn((out, inp), || rng.random_range(-limit..limit)),
            bias: Array1::zeros(out),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.dim()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Flat parameter access: weights row-major, then bias.
    pub fn param(&self, k: usize) -> f64 {
        let nw = self.weights.len();
        if k < nw {
            self.weights.as_slice().expect("standard layout")[k]
        } else {
            self.bias[k - nw]
        }
    }

    pub fn param_mut(&mut self, k: usize) -> &mut f64 {
        let nw = self.weights.len();
        if k < nw {
            &mut self.weights.as_slice_mut().expect("standard layout")[k]
        } else {
            &mut self.bias[k - nw]
        }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.dot(&self.weights.t());
        h += &self.bias;
        h
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Parameters of the matching network.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingNetwork {
    dims: NetDims,
    projection_activation: Activation,
    pub video_proj: DenseLayer,
    pub text_proj: DenseLayer,
    pub head: Vec<DenseLayer>,
    dropout_rate: f64,
    /// Bumped on every parameter update so stale activation caches are caught.
    version: u64,
}

impl MatchingNetwork {
    /// Seeded Glorot-uniform initialisation.
    pub fn new(dims: NetDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let video_proj = DenseLayer::glorot(dims.joint, dims.video_in, &mut rng);
        let text_proj = DenseLayer::glorot(dims.joint, dims.text_in, &mut rng);
        let head = dims
            .head_shapes()
            .into_iter()
            .map(|(o, i)| DenseLayer::glorot(o, i, &mut rng))
            .collect();
        Ok(Self {
            dims,
            projection_activation: Activation::Relu,
            video_proj,
            text_proj,
            head,
            dropout_rate: 0.0,
            version: 0,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(dims: NetDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            video_proj: DenseLayer::zeros(dims.joint, dims.video_in),
            text_proj: DenseLayer::zeros(dims.joint, dims.text_in),
            head: dims
                .head_shapes()
                .into_iter()
                .map(|(o, i)| DenseLayer::zeros(o, i))
                .collect(),
            dims,
            projection_activation: Activation::Relu,
            dropout_rate: 0.0,
            version: 0,
        })
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn projection_activation(&self) -> Activation {
        self.projection_activation
    }

    pub fn set_projection_activation(&mut self, act: Activation) {
        self.projection_activation = act;
        self.version += 1;
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} not in [0, 1)")));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Layers in parameter order.
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        [&self.video_proj, &self.text_proj].into_iter().chain(&self.head)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.version += 1;
        [&mut self.video_proj, &mut self.text_proj]
            .into_iter()
            .chain(&mut self.head)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(DenseLayer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(DenseLayer::is_finite)
    }

    fn check_inputs(&self, videos: &ArrayView2<f64>, texts: &ArrayView2<f64>) -> Result<()> {
        if videos.ncols() != self.dims.video_in {
            return Err(Error::dims("video input", self.dims.video_in, videos.ncols()));
        }
        if texts.ncols() != self.dims.text_in {
            return Err(Error::dims("text input", self.dims.text_in, texts.ncols()));
        }
        Ok(())
    }

    fn activate(&self, h: &Array2<f64>) -> Array2<f64> {
        match self.projection_activation {
            Activation::Relu => h.mapv(relu),
            Activation::Identity => h.clone(),
        }
    }

    /// Activated video projections, one row per input row. Inference only.
    pub fn project_videos(&self, videos: ArrayView2<f64>) -> Result<Array2<f64>> {
        if videos.ncols() != self.dims.video_in {
            return Err(Error::dims("video input", self.dims.video_in, videos.ncols()));
        }
        Ok(self.activate(&self.video_proj.forward(&videos)))
    }

    /// Activated text projections, one row per input row. Inference only.
    pub fn project_texts(&self, texts: ArrayView2<f64>) -> Result<Array2<f64>> {
        if texts.ncols() != self.dims.text_in {
            return Err(Error::dims("text input", self.dims.text_in, texts.ncols()));
        }
        Ok(self.activate(&self.text_proj.forward(&texts)))
    }

    /// Runs the head on already fused rows and returns sigmoid outputs.
    pub fn score_fused(&self, fused: ArrayView2<f64>) -> Result<Array1<f64>> {
        if fused.ncols() != self.dims.joint {
            return Err(Error::dims("fused input", self.dims.joint, fused.ncols()));
        }
        let mut a = fused.to_owned();
        let last = self.head.len() - 1;
        for (l, layer) in self.head.iter().enumerate() {
            let h = layer.forward(&a.view());
            a = if l == last { h } else { h.mapv(relu) };
        }
        Ok(a.column(0).mapv(sigmoid))
    }

    /// Matching degree of every `(videos[i], texts[i])` row pair; dropout disabled.
    pub fn predict_batch(&self, videos: ArrayView2<f64>, texts: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_inputs(&videos, &texts)?;
        if videos.nrows() != texts.nrows() {
            return Err(Error::dims("batch rows", videos.nrows(), texts.nrows()));
        }
        let fused = self.project_videos(videos)? * self.project_texts(texts)?;
        self.score_fused(fused.view())
    }

    /// Matching degree of one pair in inference mode.
    pub fn predict(&self, video: &[f64], text: &[f64]) -> Result<MatchDegree> {
        let v = ArrayView2::from_shape((1, video.len()), video).expect("row view");
        let t = ArrayView2::from_shape((1, text.len()), text).expect("row view");
        Ok(MatchDegree(self.predict_batch(v, t)?[0]))
    }

    /// Degrees for all `videos × texts` combinations, `[video][text]`.
    pub fn degree_matrix(&self, videos: ArrayView2<f64>, texts: ArrayView2<f64>) -> Result<Array2<f64>> {
        let pv = self.project_videos(videos)?;
        let pt = self.project_texts(texts)?;
        let (nv, nt) = (pv.nrows(), pt.nrows());
        let mut fused = Array2::zeros((nv * nt, self.dims.joint));
        for (r, mut row) in fused.rows_mut().into_iter().enumerate() {
            Zip::from(&mut row)
                .and(pv.row(r / nt))
                .and(pt.row(r % nt))
                .for_each(|f, &a, &b| *f = a * b);
        }
        let scores = self.score_fused(fused.view())?;
        Ok(scores.into_shape_with_order((nv, nt)).expect("nv * nt scores"))
    }

    /// Draws inverted-dropout masks for a batch of `rows` using the current rate.
    pub fn sample_masks(&self, rows: usize, rng: &mut impl Rng) -> DropoutMasks {
        let p = self.dropout_rate;
        if p == 0.0 {
            return DropoutMasks::none(self.head.len() - 1);
        }
        let keep = 1.0 / (1.0 - p);
        let mut draw = |cols: usize| {
            Some(Array2::from_shape_simple_fn((rows, cols), || {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            }))
        };
        let video = draw(self.dims.joint);
        let text = draw(self.dims.joint);
        let head = self.dims.head_hidden.iter().map(|&w| draw(w)).collect();
        DropoutMasks { video, text, head }
    }

    /// Training-mode forward pass with freshly sampled dropout masks.
    pub fn forward_train(&self, videos: Array2<f64>, texts: Array2<f64>, rng: &mut impl Rng) -> Result<ForwardCache> {
        let masks = self.sample_masks(videos.nrows(), rng);
        self.forward_with_masks(videos, texts, masks)
    }

    /// Training-mode forward pass with caller-supplied masks; keeps every
    /// intermediate needed by [`MatchingNetwork::backward`].
    pub fn forward_with_masks(
        &self,
        videos: Array2<f64>,
        texts: Array2<f64>,
        masks: DropoutMasks,
    ) -> Result<ForwardCache> {
        self.check_inputs(&videos.view(), &texts.view())?;
        if videos.nrows() != texts.nrows() {
            return Err(Error::dims("batch rows", videos.nrows(), texts.nrows()));
        }
        if masks.head.len() != self.head.len() - 1 {
            return Err(Error::dims("dropout masks", self.head.len() - 1, masks.head.len()));
        }
        let pre_video = self.video_proj.forward(&videos.view());
        let pre_text = self.text_proj.forward(&texts.view());
        let mut act_video = self.activate(&pre_video);
        let mut act_text = self.activate(&pre_text);
        if let Some(m) = &masks.video {
            act_video *= m;
        }
        if let Some(m) = &masks.text {
            act_text *= m;
        }
        let fused = &act_video * &act_text;

        let last = self.head.len() - 1;
        let mut head_pre = Vec::with_capacity(self.head.len());
        let mut head_act: Vec<Array2<f64>> = Vec::with_capacity(last);
        for (l, layer) in self.head.iter().enumerate() {
            let input = head_act.last().unwrap_or(&fused);
            let h = layer.forward(&input.view());
            if l < last {
                let mut a = h.mapv(relu);
                if let Some(m) = &masks.head[l] {
                    a *= m;
                }
                head_act.push(a);
            }
            head_pre.push(h);
        }
        let probs = head_pre[last].column(0).mapv(sigmoid);
        Ok(ForwardCache {
            version: self.version,
            videos,
            texts,
            pre_video,
            pre_text,
            act_video,
            act_text,
            fused,
            head_pre,
            head_act,
            masks,
            probs,
        })
    }

    /// Exact gradients of the batch-mean cross-entropy with respect to every
    /// parameter. The output-layer error uses `p - y`, which is the derivative of
    /// the unclamped loss; the two agree wherever the clamp is inactive.
    pub fn backward(&self, cache: &ForwardCache, labels: &[f64]) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let n = cache.probs.len();
        if labels.len() != n {
            return Err(Error::dims("labels", n, labels.len()));
        }
        let last = self.head.len() - 1;
        let mut head_grads = vec![DenseLayer::zeros(0, 0); self.head.len()];

        // d loss / d logit, averaged over the batch.
        let mut delta = Array2::from_shape_fn((n, 1), |(i, _)| (cache.probs[i] - labels[i]) / n as f64);
        for l in (0..=last).rev() {
            let input = if l == 0 { &cache.fused } else { &cache.head_act[l - 1] };
            head_grads[l] = DenseLayer {
                weights: delta.t().dot(input),
                bias: delta.sum_axis(Axis(0)),
            };
            let mut upstream = delta.dot(&self.head[l].weights);
            if l > 0 {
                if let Some(m) = &cache.masks.head[l - 1] {
                    upstream *= m;
                }
                Zip::from(&mut upstream)
                    .and(&cache.head_pre[l - 1])
                    .for_each(|g, &h| *g *= relu_grad(h));
            }
            delta = upstream;
        }

        // `delta` is now d loss / d fused.
        let mut d_video = &delta * &cache.act_text;
        let mut d_text = &delta * &cache.act_video;
        if let Some(m) = &cache.masks.video {
            d_video *= m;
        }
        if let Some(m) = &cache.masks.text {
            d_text *= m;
        }
        if self.projection_activation == Activation::Relu {
            Zip::from(&mut d_video)
                .and(&cache.pre_video)
                .for_each(|g, &h| *g *= relu_grad(h));
            Zip::from(&mut d_text)
                .and(&cache.pre_text)
                .for_each(|g, &h| *g *= relu_grad(h));
        }
        Ok(Gradients {
            video_proj: DenseLayer {
                weights: d_video.t().dot(&cache.videos),
                bias: d_video.sum_axis(Axis(0)),
            },
            text_proj: DenseLayer {
                weights: d_text.t().dot(&cache.texts),
                bias: d_text.sum_axis(Axis(0)),
            },
            head: head_grads,
        })
    }

    /// Plain SGD: every parameter moves by `-lr * gradient`.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        grads.check_shape(self)?;
        let layers = self.layers_mut();
        for (layer, g) in layers.zip(grads.layers()) {
            layer.weights.scaled_add(-learning_rate, &g.weights);
            layer.bias.scaled_add(-learning_rate, &g.bias);
        }
        Ok(())
    }
}

/// Inverted-dropout masks (entries `0` or `1 / (1 - p)`); `None` means no dropout
/// at that position.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub video: Option<Array2<f64>>,
    pub text: Option<Array2<f64>>,
    /// One entry per hidden head layer.
    pub head: Vec<Option<Array2<f64>>>,
}

impl DropoutMasks {
    pub fn none(hidden_layers: usize) -> Self {
        Self {
            video: None,
            text: None,
            head: vec![None; hidden_layers],
        }
    }
}

/// Intermediates of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    videos: Array2<f64>,
    texts: Array2<f64>,
    pre_video: Array2<f64>,
    pre_text: Array2<f64>,
    act_video: Array2<f64>,
    act_text: Array2<f64>,
    fused: Array2<f64>,
    head_pre: Vec<Array2<f64>>,
    head_act: Vec<Array2<f64>>,
    masks: DropoutMasks,
    probs: Array1<f64>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> &Array1<f64> {
        &self.probs
    }

    pub fn masks(&self) -> &DropoutMasks {
        &self.masks
    }
}

/// Gradients with the same layout as [`MatchingNetwork`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub video_proj: DenseLayer,
    pub text_proj: DenseLayer,
    pub head: Vec<DenseLayer>,
}

impl Gradients {
    pub fn zeros_like(net: &MatchingNetwork) -> Self {
        let z = |l: &DenseLayer| {
            let (o, i) = l.shape();
            DenseLayer::zeros(o, i)
        };
        Self {
            video_proj: z(&net.video_proj),
            text_proj: z(&net.text_proj),
            head: net.head.iter().map(z).collect(),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        [&self.video_proj, &self.text_proj].into_iter().chain(&self.head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        [&mut self.video_proj, &mut self.text_proj]
            .into_iter()
            .chain(&mut self.head)
    }

    /// Adds `scale * other` in place.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    /// Every gradient value in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.layers()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_shape(&self, net: &MatchingNetwork) -> Result<()> {
        if self.head.len() != net.head.len() {
            return Err(Error::dims("gradient head layers", net.head.len(), self.head.len()));
        }
        for (g, p) in self.layers().zip(net.layers()) {
            if g.shape() != p.shape() || g.bias.len() != p.bias.len() {
                return Err(Error::dims("gradient layer", p.param_count(), g.param_count()));
            }
        }
        Ok(())
    }
}

/// Binary cross-entropy with the prediction clamped to `[LOSS_EPS, 1 - LOSS_EPS]`.
pub fn bce_loss(prediction: f64, label: f64) -> f64 {
    let p = prediction.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean [`bce_loss`] over a batch.
pub fn mean_bce(predictions: &Array1<f64>, labels: &[f64]) -> f64 {
    let n = predictions.len() as f64;
    predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_loss(p, y))
        .sum::<f64>()
        / n
}

pub(crate) fn rows_from_slices(rows: &[&[f64]], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), width));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(*src));
    }
    out
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn relu_grad(h: f64) -> f64 {
    if h > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_dims() -> NetDims {
        NetDims {
            video_in: 2,
            text_in: 2,
            joint: 1,
            head_hidden: vec![1, 1],
        }
    }

    fn set_layer(layer: &mut DenseLayer, w: &[f64], b: f64) {
        layer.weights = Array2::from_shape_vec(layer.weights.dim(), w.to_vec()).unwrap();
        layer.bias = array![b];
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let net = MatchingNetwork::zeros(NetDims::default()).unwrap();
        let d = net.predict(&vec![0.3; VIDEO_DIM], &vec![-0.1; TEXT_DIM]).unwrap();
        assert_eq!(d.value(), 0.5);
        assert!(!d.is_match());
    }

    #[test]
    fn hand_computed_toy_forward() {
        // video (1, 2), text (3, -1)
        // pv = relu(0.5*1 + 0.25*2 + 0.1) = 1.1
        // pt = relu(1*3 + 1*-1 - 1)       = 1.0
        // fused = 1.1
        // h1 = relu(2*1.1 - 0.2) = 2.0
        // h2 = relu(-0.5*2.0 + 3) = 2.0
        // logit = 0.75*2.0 - 1 = 0.5 -> sigmoid(0.5)
        let mut net = MatchingNetwork::zeros(toy_dims()).unwrap();
        set_layer(&mut net.video_proj, &[0.5, 0.25], 0.1);
        set_layer(&mut net.text_proj, &[1.0, 1.0], -1.0);
        set_layer(&mut net.head[0], &[2.0], -0.2);
        set_layer(&mut net.head[1], &[-0.5], 3.0);
        set_layer(&mut net.head[2], &[0.75], -1.0);
        let d = net.predict(&[1.0, 2.0], &[3.0, -1.0]).unwrap();
        let expected = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((d.value() - expected).abs() < 1e-15);
        assert!(d.is_match());
    }

    #[test]
    fn output_is_strictly_inside_unit_interval() {
        let net = MatchingNetwork::new(NetDims::default(), 3).unwrap();
        for k in 0..5 {
            let v: Vec<f64> = (0..VIDEO_DIM).map(|i| ((i * (k + 1)) % 7) as f64 - 3.0).collect();
            let t: Vec<f64> = (0..TEXT_DIM).map(|i| ((i + k) % 5) as f64 - 2.0).collect();
            let d = net.predict(&v, &t).unwrap().value();
            assert!(d > 0.0 && d < 1.0);
        }
    }

    #[test]
    fn wrong_input_length_is_dimension_mismatch() {
        let net = MatchingNetwork::zeros(toy_dims()).unwrap();
        assert!(matches!(
            net.predict(&[1.0, 2.0, 3.0], &[1.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn inference_ignores_dropout_rate() {
        let mut net = MatchingNetwork::new(toy_dims(), 1).unwrap();
        let a = net.predict(&[0.4, -0.3], &[1.0, 2.0]).unwrap();
        net.set_dropout_rate(0.9).unwrap();
        let b = net.predict(&[0.4, -0.3], &[1.0, 2.0]).unwrap();
        assert_eq!(a.value().to_bits(), b.value().to_bits());
    }

    #[test]
    fn loss_values() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(1.0, 1.0) < 1e-6);
        assert!(bce_loss(0.0, 0.0) < 1e-6);
        assert!((bce_loss(0.9, 0.0) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!(bce_loss(1.0, 0.0).is_finite());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut net = MatchingNetwork::zeros(toy_dims()).unwrap();
        *net.video_proj.param_mut(0) = 1.0;
        let mut g = Gradients::zeros_like(&net);
        *g.video_proj.param_mut(0) = 0.5;
        net.sgd_step(&g, 0.5).unwrap();
        assert_eq!(net.video_proj.param(0), 0.75);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut net = MatchingNetwork::new(toy_dims(), 9).unwrap();
        let before = net.clone();
        let mut g = Gradients::zeros_like(&net);
        g.head[2].bias[0] = 3.0;
        net.sgd_step(&g, 0.0).unwrap();
        assert!(net.layers().zip(before.layers()).all(|(a, b)| a == b));
    }

    #[test]
    fn sgd_rejects_mismatched_gradients() {
        let mut net = MatchingNetwork::zeros(toy_dims()).unwrap();
        let other = MatchingNetwork::zeros(NetDims { joint: 3, ..toy_dims() }).unwrap();
        let g = Gradients::zeros_like(&other);
        assert!(matches!(net.sgd_step(&g, 0.1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn two_steps_differ_from_one_summed_step_on_nonlinear_loss() {
        let dims = NetDims {
            video_in: 3,
            text_in: 2,
            joint: 4,
            head_hidden: vec![3],
        };
        let base = MatchingNetwork::new(dims, 3).unwrap();
        let v = array![[0.5, -1.0, 2.0]];
        let t = array![[1.5, 0.7]];
        let y = [1.0];
        let lr = 0.3;

        let mut two = base.clone();
        let c = two
            .forward_with_masks(v.clone(), t.clone(), DropoutMasks::none(1))
            .unwrap();
        let g1 = two.backward(&c, &y).unwrap();
        two.sgd_step(&g1, lr).unwrap();
        let c = two
            .forward_with_masks(v.clone(), t.clone(), DropoutMasks::none(1))
            .unwrap();
        let g2 = two.backward(&c, &y).unwrap();
        two.sgd_step(&g2, lr).unwrap();

        // Same first gradient counted twice: only equal if the gradient did not
        // move between the steps, i.e. if the loss were linear.
        let mut one = base.clone();
        let mut summed = g1.clone();
        summed.accumulate(&g1, 1.0);
        one.sgd_step(&summed, lr).unwrap();

        let diff = two
            .layers()
            .zip(one.layers())
            .flat_map(|(a, b)| (&a.weights - &b.weights).into_iter().collect::<Vec<_>>())
            .fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(diff > 1e-9, "max difference {diff}");
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = MatchingNetwork::new(toy_dims(), 2).unwrap();
        let c = net
            .forward_with_masks(array![[1.0, 2.0]], array![[0.5, 0.5]], DropoutMasks::none(2))
            .unwrap();
        let g = net.backward(&c, &[1.0]).unwrap();
        net.sgd_step(&g, 0.1).unwrap();
        assert!(matches!(net.backward(&c, &[1.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn saturated_correct_prediction_has_tiny_gradients() {
        let mut net = MatchingNetwork::zeros(toy_dims()).unwrap();
        net.head[2].bias[0] = 40.0;
        let c = net
            .forward_with_masks(array![[1.0, 2.0]], array![[0.5, 0.5]], DropoutMasks::none(2))
            .unwrap();
        let g = net.backward(&c, &[1.0]).unwrap();
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn dropped_unit_gets_no_upstream_gradient() {
        let dims = NetDims {
            video_in: 3,
            text_in: 2,
            joint: 4,
            head_hidden: vec![3, 2],
        };
        let net = MatchingNetwork::new(dims, 11).unwrap();
        let mut masks = DropoutMasks::none(2);
        // Drop joint unit 1 on the video side and hidden unit 0 in the first head layer.
        masks.video = Some(array![[2.0, 0.0, 2.0, 2.0]]);
        masks.head[0] = Some(array![[0.0, 2.0, 2.0]]);
        let c = net
            .forward_with_masks(array![[0.3, -0.2, 0.9]], array![[1.0, -0.4]], masks)
            .unwrap();
        let g = net.backward(&c, &[0.0]).unwrap();
        assert!(g.video_proj.weights.row(1).iter().all(|&x| x == 0.0));
        assert_eq!(g.video_proj.bias[1], 0.0);
        assert!(g.head[0].weights.row(0).iter().all(|&x| x == 0.0));
        assert_eq!(g.head[0].bias[0], 0.0);
    }

    #[test]
    fn degree_matrix_matches_pairwise_predictions() {
        let dims = NetDims {
            video_in: 3,
            text_in: 2,
            joint: 5,
            head_hidden: vec![4],
        };
        let net = MatchingNetwork::new(dims, 4).unwrap();
        let videos = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let texts = array![[1.0, 0.0], [0.3, -0.7], [2.0, 2.0]];
        let m = net.degree_matrix(videos.view(), texts.view()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let p = net
                    .predict(videos.row(i).as_slice().unwrap(), texts.row(j).as_slice().unwrap())
                    .unwrap()
                    .value();
                assert!((m[[i, j]] - p).abs() < 1e-15);
            }
        }
    }
}
