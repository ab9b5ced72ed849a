//! Speech decomposition network: a self-supervised autoencoder that factors
//! acoustic features into a time-pooled speaker embedding and a
//! frame-synchronous, instance-normalised content embedding.

mod pretrain;
mod probe;

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use pretrain::{pretrain_sdn, AcousticUtterance, PretrainLog, PretrainOptions, PretrainPoint};
pub use probe::{linear_probe, ProbeResult};

use crate::checkpoint;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::frontend::{zscore_apply, AcousticFeatures, NormalizationStats, StatsScope};
use crate::nn::{kernels, Activation, ChannelStats, Conv1d, Graph, Linear, ParamStore, Var};

pub const SDN_KIND: &str = "sdn-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdnConfig {
    pub feature_dim: usize,
    pub kernel: usize,
    pub speaker_channels: Vec<usize>,
    pub dense_layers: usize,
    pub dense_growth: usize,
    pub speaker_dim: usize,
    pub content_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub activation: Activation,
    pub eps: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub eval_every: u64,
    /// Evaluations without validation improvement before stopping.
    pub patience: usize,
    pub gradient_clip_norm: f64,
    pub validation_fraction: f64,
}

impl Default for SdnConfig {
    fn default() -> Self {
        SdnConfig {
            feature_dim: 39,
            kernel: 5,
            speaker_channels: vec![64, 128, 128],
            dense_layers: 2,
            dense_growth: 64,
            speaker_dim: 128,
            content_channels: vec![64, 64, 64],
            decoder_channels: vec![64, 64, 64],
            activation: Activation::Relu,
            eps: 1e-5,
            batch_size: 25,
            learning_rate: 5e-4,
            steps: 20_000,
            eval_every: 500,
            patience: 10,
            gradient_clip_norm: 5.0,
            validation_fraction: 0.1,
        }
    }
}

impl SdnConfig {
    pub fn content_dim(&self) -> usize {
        *self.content_channels.last().expect("validated")
    }

    /// Width of the personalised features `[content | speaker]`.
    pub fn personalized_dim(&self) -> usize {
        self.content_dim() + self.speaker_dim
    }

    /// Shortest input both encoders accept: the larger receptive field.
    pub fn min_frames(&self) -> usize {
        let depth = self.speaker_channels.len().max(self.content_channels.len());
        1 + (self.kernel - 1) * depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sdn: {m}")));
        if self.kernel.is_multiple_of(2) {
            return bad("kernel must be odd");
        }
        if self.speaker_channels.is_empty() || self.content_channels.is_empty() || self.decoder_channels.is_empty() {
            return bad("every stack needs at least one block");
        }
        let widths = [self.feature_dim, self.speaker_dim, self.dense_growth];
        if widths.contains(&0) || self.speaker_channels.contains(&0) || self.content_channels.contains(&0) || self.decoder_channels.contains(&0) {
            return bad("widths must be positive");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.eval_every == 0 {
            return bad("batch_size, learning_rate and eval_every must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Time-pooled speaker vector, `d_s` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding(pub Array1<f64>);

/// Frame-synchronous content matrix, `T × d_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentEmbedding(pub Array2<f64>);

/// Pure instance normalisation over time for each column (channel).
pub fn instance_norm(map: &Array2<f64>, eps: f64) -> (Array2<f64>, ChannelStats) {
    kernels::instance_norm_forward(map.view(), eps)
}

/// `γ_c · IN(x)_c + β_c`.
pub fn adain(content: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>, eps: f64) -> Result<Array2<f64>> {
    if gamma.len() != content.ncols() || beta.len() != content.ncols() {
        return Err(Error::shape(
            "adain",
            format!(
                "map has {} channels, style has γ {} and β {}",
                content.ncols(),
                gamma.len(),
                beta.len()
            ),
        ));
    }
    let (n, _) = instance_norm(content, eps);
    Ok(n * gamma.view().insert_axis(Axis(0)) + beta.view().insert_axis(Axis(0)))
}

/// Graph nodes of the speaker path.
#[derive(Debug, Clone, Copy)]
pub struct SpeakerTap {
    /// Input to the average pool, `T × d_s`.
    pub pre_pool: Var,
    pub embedding: Var,
}

#[derive(Debug, Clone)]
pub struct ContentTap {
    /// Inputs to each instance normalisation, in order.
    pub pre_norm: Vec<Var>,
    /// Every instance-normalisation output, in order; the last is the
    /// embedding.
    pub norm_outputs: Vec<Var>,
    pub output: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderTap {
    /// `(γ, β)` rows per AdaIN site, projected from the speaker embedding.
    pub styles: Vec<(Var, Var)>,
    pub pre_norm: Vec<Var>,
    /// Instance-normalised maps before the style affine.
    pub norm_outputs: Vec<Var>,
    pub output: Var,
}

#[derive(Debug, Clone)]
struct StyleMap {
    gamma: Linear,
    beta: Linear,
}

#[derive(Debug, Clone)]
pub struct SdnModel {
    pub config: SdnConfig,
    pub store: ParamStore,
    /// Feature standardisation applied before both encoders.
    pub input_stats: NormalizationStats,
    /// Speakers whose audio the model was pretrained on.
    pub pretrained_on: Vec<String>,
    speaker_convs: Vec<Conv1d>,
    dense: Vec<Linear>,
    speaker_out: Linear,
    content_convs: Vec<Conv1d>,
    decoder_convs: Vec<Conv1d>,
    styles: Vec<StyleMap>,
    output: Linear,
}

impl SdnModel {
    pub fn new(config: SdnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k = config.kernel;

        let mut speaker_convs = Vec::new();
        let mut width = config.feature_dim;
        for (i, &c) in config.speaker_channels.iter().enumerate() {
            speaker_convs.push(Conv1d::new(&mut store, &mut rng, &format!("sdn.speaker.conv{i}"), k, width, c));
            width = c;
        }
        let mut dense = Vec::new();
        for i in 0..config.dense_layers {
            dense.push(Linear::new(&mut store, &mut rng, &format!("sdn.speaker.dense{i}"), width, config.dense_growth));
            width += config.dense_growth;
        }
        let speaker_out = Linear::new(&mut store, &mut rng, "sdn.speaker.out", width, config.speaker_dim);

        let mut content_convs = Vec::new();
        let mut width = config.feature_dim;
        for (i, &c) in config.content_channels.iter().enumerate() {
            content_convs.push(Conv1d::new(&mut store, &mut rng, &format!("sdn.content.conv{i}"), k, width, c));
            width = c;
        }

        let mut decoder_convs = Vec::new();
        let mut styles = Vec::new();
        for (i, &c) in config.decoder_channels.iter().enumerate() {
            decoder_convs.push(Conv1d::new(&mut store, &mut rng, &format!("sdn.decoder.conv{i}"), k, width, c));
            let gamma = Linear::new(&mut store, &mut rng, &format!("sdn.decoder.style{i}.gamma"), config.speaker_dim, c);
            store.get_mut(gamma.bias).fill(1.0);
            let beta = Linear::new(&mut store, &mut rng, &format!("sdn.decoder.style{i}.beta"), config.speaker_dim, c);
            styles.push(StyleMap { gamma, beta });
            width = c;
        }
        let output = Linear::new(&mut store, &mut rng, "sdn.decoder.out", width, config.feature_dim);

        Ok(SdnModel {
            input_stats: NormalizationStats::identity(config.feature_dim, StatsScope::Global),
            pretrained_on: Vec::new(),
            config,
            store,
            speaker_convs,
            dense,
            speaker_out,
            content_convs,
            decoder_convs,
            styles,
            output,
        })
    }

    pub fn speaker_graph(&self, g: &mut Graph, x: Var) -> SpeakerTap {
        let act = self.config.activation;
        let mut h = x;
        for conv in &self.speaker_convs {
            let y = conv.forward(g, h);
            h = act.apply(g, y);
        }
        // dense block: each layer sees every earlier output
        let mut features = vec![h];
        for layer in &self.dense {
            let input = if features.len() == 1 { features[0] } else { g.concat_cols(&features) };
            let y = layer.forward(g, input);
            features.push(act.apply(g, y));
        }
        let all = if features.len() == 1 { features[0] } else { g.concat_cols(&features) };
        let pre_pool = self.speaker_out.forward(g, all);
        let embedding = g.mean_rows(pre_pool);
        SpeakerTap { pre_pool, embedding }
    }

    pub fn content_graph(&self, g: &mut Graph, x: Var) -> ContentTap {
        let act = self.config.activation;
        let mut h = x;
        let mut pre_norm = Vec::new();
        let mut norm_outputs = Vec::new();
        for conv in &self.content_convs {
            let y = conv.forward(g, h);
            let y = act.apply(g, y);
            h = g.instance_norm(y, self.config.eps);
            pre_norm.push(y);
            norm_outputs.push(h);
        }
        ContentTap {
            pre_norm,
            norm_outputs,
            output: h,
        }
    }

    pub fn decoder_graph(&self, g: &mut Graph, speaker: Var, content: Var) -> DecoderTap {
        let act = self.config.activation;
        let mut h = content;
        let mut styles = Vec::new();
        let mut pre_norm = Vec::new();
        let mut norm_outputs = Vec::new();
        for (conv, style) in self.decoder_convs.iter().zip(&self.styles) {
            let y = conv.forward(g, h);
            let y = act.apply(g, y);
            let n = g.instance_norm(y, self.config.eps);
            let gamma = style.gamma.forward(g, speaker);
            let beta = style.beta.forward(g, speaker);
            let scaled = g.mul_row(n, gamma);
            h = g.add_row(scaled, beta);
            styles.push((gamma, beta));
            pre_norm.push(y);
            norm_outputs.push(n);
        }
        let output = self.output.forward(g, h);
        DecoderTap {
            styles,
            pre_norm,
            norm_outputs,
            output,
        }
    }

    /// Summed absolute reconstruction error of a standardised input.
    pub fn reconstruction_graph(&self, g: &mut Graph, x: &Array2<f64>) -> Var {
        let input = g.constant(x.clone());
        let spk = self.speaker_graph(g, input);
        let content = self.content_graph(g, input);
        let dec = self.decoder_graph(g, spk.embedding, content.output);
        g.abs_error_sum(dec.output, x.clone())
    }

    /// Mean absolute reconstruction error of raw features.
    pub fn reconstruction_loss(&self, features: &AcousticFeatures) -> Result<f64> {
        let x = self.standardized(features)?;
        let mut g = Graph::new(&self.store);
        let total = self.reconstruction_graph(&mut g, &x);
        Ok(g.scalar(total) / x.len() as f64)
    }

    pub fn standardized(&self, features: &AcousticFeatures) -> Result<Array2<f64>> {
        if features.dim() != self.config.feature_dim {
            return Err(Error::shape(
                "sdn input",
                format!("expected {} feature columns, got {}", self.config.feature_dim, features.dim()),
            ));
        }
        if features.frames() < self.config.min_frames() {
            return Err(Error::Data(format!(
                "utterance has {} frames, SDN receptive field needs {}",
                features.frames(),
                self.config.min_frames()
            )));
        }
        Ok(zscore_apply(&features.data, &self.input_stats))
    }

    pub fn encode_speaker(&self, features: &AcousticFeatures) -> Result<SpeakerEmbedding> {
        let x = self.standardized(features)?;
        let mut g = Graph::new(&self.store);
        let input = g.constant(x);
        let tap = self.speaker_graph(&mut g, input);
        Ok(SpeakerEmbedding(g.value(tap.embedding).row(0).to_owned()))
    }

    pub fn encode_content(&self, features: &AcousticFeatures) -> Result<ContentEmbedding> {
        let x = self.standardized(features)?;
        let mut g = Graph::new(&self.store);
        let input = g.constant(x);
        let tap = self.content_graph(&mut g, input);
        Ok(ContentEmbedding(g.value(tap.output).clone()))
    }

    /// Reconstructs features (in the standardised space the SDN is trained
    /// in) from any speaker/content pairing.
    pub fn decode(&self, speaker: &SpeakerEmbedding, content: &ContentEmbedding) -> Result<Array2<f64>> {
        if speaker.0.len() != self.config.speaker_dim {
            return Err(Error::shape(
                "decode",
                format!("speaker embedding has {} dims, model uses {}", speaker.0.len(), self.config.speaker_dim),
            ));
        }
        if content.0.ncols() != self.config.content_dim() {
            return Err(Error::shape(
                "decode",
                format!("content embedding has {} dims, model uses {}", content.0.ncols(), self.config.content_dim()),
            ));
        }
        let mut g = Graph::new(&self.store);
        let s = g.constant(speaker.0.clone().insert_axis(Axis(0)));
        let c = g.constant(content.0.clone());
        let tap = self.decoder_graph(&mut g, s, c);
        Ok(g.value(tap.output).clone())
    }

    /// Personalised features `[content | speaker broadcast]`, `T × (d_c + d_s)`.
    pub fn personalized(&self, features: &AcousticFeatures) -> Result<Array2<f64>> {
        let x = self.standardized(features)?;
        let mut g = Graph::new(&self.store);
        let input = g.constant(x);
        let spk = self.speaker_graph(&mut g, input);
        let content = self.content_graph(&mut g, input);
        let t = features.frames();
        let s = g.value(spk.embedding);
        let c = g.value(content.output);
        let mut p = Array2::zeros((t, self.config.personalized_dim()));
        p.slice_mut(ndarray::s![.., ..c.ncols()]).assign(c);
        p.slice_mut(ndarray::s![.., c.ncols()..])
            .assign(&s.broadcast((t, s.ncols())).expect("single row"));
        Ok(p)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(SDN_KIND);
        checkpoint::embed_config(&mut c, &self.config)?;
        self.write_params(&mut c, "");
        Ok(c)
    }

    /// Adds stats and parameter blocks under `prefix`.
    pub fn write_params(&self, c: &mut Container, prefix: &str) {
        c.set(&format!("{prefix}pretrained_on"), self.pretrained_on.join(","));
        checkpoint::push_stats(c, &format!("{prefix}input_stats"), &self.input_stats);
        checkpoint::push_store(c, &format!("{prefix}param."), &self.store);
    }

    /// Rebuilds a model from blocks written by [`SdnModel::write_params`].
    pub fn read_params(config: SdnConfig, c: &Container, prefix: &str) -> Result<Self> {
        let mut model = SdnModel::new(config, 0)?;
        checkpoint::load_store(c, &format!("{prefix}param."), &mut model.store)?;
        model.input_stats = checkpoint::load_stats(c, &format!("{prefix}input_stats"), StatsScope::Global)?;
        let speakers = c.get(&format!("{prefix}pretrained_on"))?;
        model.pretrained_on = speakers.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
        Ok(model)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != SDN_KIND {
            return Err(Error::Data(format!("expected an SDN checkpoint, found kind `{}`", c.kind)));
        }
        Self::read_params(checkpoint::extract_config(c)?, c, "")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Mean absolute error over all elements.
/// Statistics of every instance-normalisation site (content encoder and
/// decoder) over one forward pass. Channels whose pre-normalisation variance
/// is below `100 ε` are counted but excluded from the extrema.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSiteCheck {
    pub sites: usize,
    pub channels: usize,
    pub low_variance_channels: usize,
    pub max_abs_mean: f64,
    pub min_std: f64,
    pub max_std: f64,
    /// Smallest pre-normalisation variance seen, in units of ε.
    pub min_variance_ratio: f64,
    /// Largest gap between an output std and `sqrt(v / (v + ε))`, the value
    /// the normalisation must produce for pre-normalisation variance `v`.
    pub max_closed_form_error: f64,
}

impl NormSiteCheck {
    pub fn merge(&mut self, other: &NormSiteCheck) {
        self.sites += other.sites;
        self.channels += other.channels;
        self.low_variance_channels += other.low_variance_channels;
        self.max_abs_mean = self.max_abs_mean.max(other.max_abs_mean);
        self.min_std = self.min_std.min(other.min_std);
        self.max_std = self.max_std.max(other.max_std);
        self.min_variance_ratio = self.min_variance_ratio.min(other.min_variance_ratio);
        self.max_closed_form_error = self.max_closed_form_error.max(other.max_closed_form_error);
    }

    pub fn empty() -> Self {
        NormSiteCheck {
            sites: 0,
            channels: 0,
            low_variance_channels: 0,
            max_abs_mean: 0.0,
            min_std: f64::INFINITY,
            max_std: 0.0,
            min_variance_ratio: f64::INFINITY,
            max_closed_form_error: 0.0,
        }
    }
}

impl SdnModel {
    /// Runs a full reconstruction pass on a standardised input and measures
    /// every normalisation site.
    pub fn check_norm_sites(&self, x: &Array2<f64>) -> NormSiteCheck {
        let mut g = Graph::new(&self.store);
        let input = g.constant(x.clone());
        let spk = self.speaker_graph(&mut g, input);
        let content = self.content_graph(&mut g, input);
        let dec = self.decoder_graph(&mut g, spk.embedding, content.output);
        let eps = self.config.eps;
        let mut out = NormSiteCheck::empty();
        let pairs = content
            .pre_norm
            .iter()
            .zip(&content.norm_outputs)
            .chain(dec.pre_norm.iter().zip(&dec.norm_outputs));
        for (&pre, &post) in pairs {
            out.sites += 1;
            let (pre, post) = (g.value(pre), g.value(post));
            let t = pre.nrows() as f64;
            for c in 0..pre.ncols() {
                out.channels += 1;
                let (a, b) = (pre.column(c), post.column(c));
                let m = a.sum() / t;
                let var = a.mapv(|v| (v - m) * (v - m)).sum() / t;
                let mean = b.sum() / t;
                let std = (b.mapv(|v| (v - mean) * (v - mean)).sum() / t).sqrt();
                out.min_variance_ratio = out.min_variance_ratio.min(var / eps);
                out.max_closed_form_error = out.max_closed_form_error.max((std - (var / (var + eps)).sqrt()).abs());
                if var < 100.0 * eps {
                    out.low_variance_channels += 1;
                    continue;
                }
                out.max_abs_mean = out.max_abs_mean.max(mean.abs());
                out.min_std = out.min_std.min(std);
                out.max_std = out.max_std.max(std);
            }
        }
        out
    }
}

pub fn sdn_loss(x: &Array2<f64>, x_hat: &Array2<f64>) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(Error::shape("sdn_loss", format!("{:?} vs {:?}", x.dim(), x_hat.dim())));
    }
    if x.is_empty() {
        return Err(Error::Data("sdn_loss of an empty map".into()));
    }
    Ok((x - x_hat).mapv(f64::abs).sum() / x.len() as f64)
}
