//! Supervised inversion stack: multi-scale convolutional acoustic encoder,
//! auxiliary (lip) network, feature transformation/fusion, and the BLSTM
//! tongue regressor, plus the combined lip/tongue loss.

mod variant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use variant::{AblationVariant, VariantFlags};

use crate::error::{Error, Result};
use crate::nn::{Activation, Blstm, BlstmTap, Conv1d, Graph, Linear, ParamStore, Var};
use crate::sdn::SdnModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub acoustic_dim: usize,
    /// Width of the personalised features supplied by the SDN.
    pub personalized_dim: usize,
    pub kernels: Vec<usize>,
    pub conv_channels: usize,
    pub encoder_activation: Activation,
    pub afn_layers: usize,
    pub afn_hidden: usize,
    pub afn_fc: usize,
    pub ain_layers: usize,
    pub ain_hidden: usize,
    pub ain_fc: usize,
    /// Activation between the two FC layers of the AFN and AIN heads.
    pub head_activation: Activation,
    pub d_p: usize,
    /// Include the encoded acoustics in the fusion input when the SDN
    /// stream is present.
    pub fuse_encoded_acoustics: bool,
    pub lip_dim: usize,
    pub tongue_dim: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            acoustic_dim: 39,
            personalized_dim: 192,
            kernels: vec![3, 5, 7],
            conv_channels: 32,
            encoder_activation: Activation::Relu,
            afn_layers: 3,
            afn_hidden: 100,
            afn_fc: 64,
            ain_layers: 3,
            ain_hidden: 100,
            ain_fc: 64,
            head_activation: Activation::Relu,
            d_p: 64,
            fuse_encoded_acoustics: true,
            lip_dim: 6,
            tongue_dim: 6,
        }
    }
}

impl InversionConfig {
    pub fn encoded_dim(&self) -> usize {
        self.kernels.len() * self.conv_channels
    }

    pub fn min_frames(&self) -> usize {
        self.kernels.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("inversion: {m}")));
        if self.kernels.is_empty() || self.kernels.iter().any(|k| k % 2 == 0) {
            return bad("kernels must be a non-empty set of odd sizes");
        }
        let widths = [
            self.acoustic_dim,
            self.personalized_dim,
            self.conv_channels,
            self.afn_hidden,
            self.afn_fc,
            self.ain_hidden,
            self.ain_fc,
            self.d_p,
            self.lip_dim,
            self.tongue_dim,
        ];
        if widths.contains(&0) {
            return bad("widths must be positive");
        }
        if self.afn_layers == 0 || self.ain_layers == 0 {
            return bad("BLSTM stacks need at least one layer");
        }
        Ok(())
    }
}

/// Parallel same-padded convolutions, one per kernel size, concatenated.
#[derive(Debug, Clone)]
pub struct MultiscaleEncoder {
    pub branches: Vec<Conv1d>,
    pub activation: Activation,
}

impl MultiscaleEncoder {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let outs: Vec<Var> = self
            .branches
            .iter()
            .map(|conv| {
                let y = conv.forward(g, x);
                self.activation.apply(g, y)
            })
            .collect();
        if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        }
    }
}

/// BLSTM layers followed by a hidden FC layer and a linear output layer.
#[derive(Debug, Clone)]
pub struct BlstmRegressor {
    pub layers: Vec<Blstm>,
    pub hidden: Linear,
    pub output: Linear,
    pub activation: Activation,
}

/// Graph nodes of a [`BlstmRegressor`] pass.
#[derive(Debug, Clone)]
pub struct RegressorTap {
    pub blstm: Vec<BlstmTap>,
    pub output: Var,
}

impl BlstmRegressor {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        layers: usize,
        hidden: usize,
        fc: usize,
        out: usize,
        activation: Activation,
    ) -> Self {
        let mut blstm = Vec::new();
        let mut width = input;
        for i in 0..layers {
            blstm.push(Blstm::new(store, rng, &format!("{name}.blstm{i}"), width, hidden));
            width = hidden;
        }
        BlstmRegressor {
            layers: blstm,
            hidden: Linear::new(store, rng, &format!("{name}.fc0"), width, fc),
            output: Linear::new(store, rng, &format!("{name}.fc1"), fc, out),
            activation,
        }
    }

    pub fn forward_tapped(&self, g: &mut Graph, x: Var) -> RegressorTap {
        let mut h = x;
        let mut taps = Vec::new();
        for layer in &self.layers {
            let tap = layer.forward_tapped(g, h);
            h = tap.output;
            taps.push(tap);
        }
        let y = self.hidden.forward(g, h);
        let y = self.activation.apply(g, y);
        RegressorTap {
            blstm: taps,
            output: self.output.forward(g, y),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.forward_tapped(g, x).output
    }
}

/// Per-stream affine projections to a common width, concatenated.
#[derive(Debug, Clone)]
pub struct FeatureTransform {
    pub personalized: Option<Linear>,
    pub lip: Option<Linear>,
    pub encoded: Option<Linear>,
}

impl FeatureTransform {
    /// Projects whichever streams are configured, in the order P, A, E.
    pub fn forward(&self, g: &mut Graph, p: Option<Var>, a: Option<Var>, e: Option<Var>) -> Var {
        let mut parts = Vec::new();
        for (proj, v) in [(&self.personalized, p), (&self.lip, a), (&self.encoded, e)] {
            if let (Some(proj), Some(v)) = (proj, v) {
                parts.push(proj.forward(g, v));
            }
        }
        if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)
        }
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for l in [&self.personalized, &self.lip, &self.encoded].into_iter().flatten() {
            l.zero(store);
        }
    }
}

/// Inputs of one utterance in model space: standardised acoustics and,
/// when the variant uses the SDN, the personalised features.
#[derive(Debug, Clone, Copy)]
pub struct InversionInput<'a> {
    pub acoustic: &'a Array2<f64>,
    pub personalized: Option<&'a Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardTap {
    pub encoded: Var,
    pub personalized: Option<Var>,
    pub afn: Option<RegressorTap>,
    pub lip: Option<Var>,
    pub fused: Var,
    pub ain: RegressorTap,
    pub tongue: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub lip: Option<Array2<f64>>,
    pub tongue: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct InversionModel {
    pub config: InversionConfig,
    pub variant: AblationVariant,
    pub store: ParamStore,
    pub encoder: MultiscaleEncoder,
    pub afn: Option<BlstmRegressor>,
    pub ftn: Option<FeatureTransform>,
    pub ain: BlstmRegressor,
}

impl InversionModel {
    pub fn new(config: InversionConfig, variant: AblationVariant, seed: u64) -> Result<Self> {
        config.validate()?;
        let flags = variant.flags();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let branches = config
            .kernels
            .iter()
            .map(|&k| Conv1d::new(&mut store, &mut rng, &format!("enc.k{k}"), k, config.acoustic_dim, config.conv_channels))
            .collect();
        let encoder = MultiscaleEncoder {
            branches,
            activation: config.encoder_activation,
        };
        let e_dim = config.encoded_dim();
        let p_dim = config.personalized_dim;
        let include_e = !flags.use_sdn || config.fuse_encoded_acoustics;

        let afn = flags.use_afn.then(|| {
            // without the SDN the AFN reads the encoded acoustics instead
            let input = if flags.use_sdn { p_dim } else { e_dim };
            BlstmRegressor::new(
                &mut store,
                &mut rng,
                "afn",
                input,
                config.afn_layers,
                config.afn_hidden,
                config.afn_fc,
                config.lip_dim,
                config.head_activation,
            )
        });

        let (ftn, fused_dim) = if flags.use_ftn {
            let proj = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize| {
                Linear::new(store, rng, &format!("ftn.{name}"), input, config.d_p)
            };
            let personalized = flags.use_sdn.then(|| proj(&mut store, &mut rng, "p", p_dim));
            let lip = flags.use_afn.then(|| proj(&mut store, &mut rng, "a", config.lip_dim));
            let encoded = include_e.then(|| proj(&mut store, &mut rng, "e", e_dim));
            let n = [personalized.is_some(), lip.is_some(), encoded.is_some()]
                .iter()
                .filter(|&&b| b)
                .count();
            (
                Some(FeatureTransform {
                    personalized,
                    lip,
                    encoded,
                }),
                n * config.d_p,
            )
        } else {
            let mut d = 0;
            if flags.use_sdn {
                d += p_dim;
            }
            if flags.use_afn {
                d += config.lip_dim;
            }
            if include_e {
                d += e_dim;
            }
            (None, d)
        };

        let ain = BlstmRegressor::new(
            &mut store,
            &mut rng,
            "ain",
            fused_dim,
            config.ain_layers,
            config.ain_hidden,
            config.ain_fc,
            config.tongue_dim,
            config.head_activation,
        );
        Ok(InversionModel {
            config,
            variant,
            store,
            encoder,
            afn,
            ftn,
            ain,
        })
    }

    pub fn flags(&self) -> VariantFlags {
        self.variant.flags()
    }

    fn check_input(&self, input: &InversionInput) -> Result<usize> {
        let t = input.acoustic.nrows();
        if input.acoustic.ncols() != self.config.acoustic_dim {
            return Err(Error::shape(
                "acoustic input",
                format!("{} columns, expected {}", input.acoustic.ncols(), self.config.acoustic_dim),
            )
            .in_stage("encoder"));
        }
        if t < self.config.min_frames() {
            return Err(Error::Data(format!(
                "{t} frames is below the largest encoder kernel {}",
                self.config.min_frames()
            ))
            .in_stage("encoder"));
        }
        match (self.flags().use_sdn, input.personalized) {
            (true, None) => {
                return Err(Error::Config(format!("variant {} needs personalised features", self.variant)).in_stage("sdn"))
            }
            (true, Some(p)) if p.dim() != (t, self.config.personalized_dim) => {
                return Err(Error::shape(
                    "personalised features",
                    format!("{:?}, expected ({t}, {})", p.dim(), self.config.personalized_dim),
                )
                .in_stage("sdn"))
            }
            _ => {}
        }
        Ok(t)
    }

    /// Full forward pass recorded on `g`.
    pub fn forward_graph(&self, g: &mut Graph, input: &InversionInput) -> Result<ForwardTap> {
        self.check_input(input)?;
        let flags = self.flags();
        let x = g.constant(input.acoustic.clone());
        let encoded = self.encoder.forward(g, x);
        let personalized = if flags.use_sdn {
            input.personalized.map(|p| g.constant(p.clone()))
        } else {
            None
        };
        let afn = self.afn.as_ref().map(|afn| {
            let src = personalized.unwrap_or(encoded);
            afn.forward_tapped(g, src)
        });
        let lip = afn.as_ref().map(|t| t.output);
        let include_e = !flags.use_sdn || self.config.fuse_encoded_acoustics;
        let e = include_e.then_some(encoded);
        let fused = match &self.ftn {
            Some(ftn) => ftn.forward(g, personalized, lip, e),
            None => {
                let parts: Vec<Var> = [personalized, lip, e].into_iter().flatten().collect();
                if parts.len() == 1 {
                    parts[0]
                } else {
                    g.concat_cols(&parts)
                }
            }
        };
        let ain = self.ain.forward_tapped(g, fused);
        let tongue = ain.output;
        Ok(ForwardTap {
            encoded,
            personalized,
            afn,
            lip,
            fused,
            ain,
            tongue,
        })
    }

    /// Records the forward pass and the combined loss node. The lip term is
    /// present only for variants with the auxiliary network.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        input: &InversionInput,
        lip_target: &Array2<f64>,
        tongue_target: &Array2<f64>,
        alpha: f64,
        beta: f64,
    ) -> Result<(Var, ForwardTap)> {
        let tap = self.forward_graph(g, input)?;
        let t = input.acoustic.nrows();
        if tongue_target.dim() != (t, self.config.tongue_dim) {
            return Err(Error::shape("tongue target", format!("{:?}", tongue_target.dim())).in_stage("loss"));
        }
        let tongue = g.squared_error_sum(tap.tongue, tongue_target.clone());
        let mut loss = g.scale(tongue, beta);
        if let Some(lip) = tap.lip {
            if lip_target.dim() != (t, self.config.lip_dim) {
                return Err(Error::shape("lip target", format!("{:?}", lip_target.dim())).in_stage("loss"));
            }
            let l = g.squared_error_sum(lip, lip_target.clone());
            let l = g.scale(l, alpha);
            loss = g.add(loss, l);
        }
        Ok((loss, tap))
    }

    pub fn predict(&self, input: &InversionInput) -> Result<Prediction> {
        let mut g = Graph::new(&self.store);
        let tap = self.forward_graph(&mut g, input)?;
        Ok(Prediction {
            lip: tap.lip.map(|v| g.value(v).clone()),
            tongue: g.value(tap.tongue).clone(),
        })
    }

    /// Zeroes the final affine layer of each regression head.
    pub fn zero_heads(&mut self) {
        if let Some(afn) = &self.afn {
            afn.output.zero(&mut self.store);
        }
        self.ain.output.zero(&mut self.store);
    }
}

/// `α Σ (y_l − ŷ_l)² + β Σ (y_t − ŷ_t)²` over all frames and channels.
pub fn safn_loss(
    y_lip: &Array2<f64>,
    lip_hat: &Array2<f64>,
    y_tongue: &Array2<f64>,
    tongue_hat: &Array2<f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if y_lip.dim() != lip_hat.dim() {
        return Err(Error::shape("safn_loss", format!("lip {:?} vs {:?}", y_lip.dim(), lip_hat.dim())));
    }
    if y_tongue.dim() != tongue_hat.dim() {
        return Err(Error::shape(
            "safn_loss",
            format!("tongue {:?} vs {:?}", y_tongue.dim(), tongue_hat.dim()),
        ));
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::Config("loss weights must be non-negative".into()));
    }
    let sq = |a: &Array2<f64>, b: &Array2<f64>| (a - b).mapv(|d| d * d).sum();
    Ok(alpha * sq(y_lip, lip_hat) + beta * sq(y_tongue, tongue_hat))
}

/// Runs the frozen SDN (when the variant uses it) and the inversion model on
/// standardised acoustics. Errors carry the failing stage.
pub fn forward_full(
    features: &crate::frontend::AcousticFeatures,
    standardized: &Array2<f64>,
    sdn: Option<&SdnModel>,
    model: &InversionModel,
) -> Result<Prediction> {
    let personalized = if model.flags().use_sdn {
        let sdn = sdn.ok_or_else(|| Error::Config("variant needs a pretrained SDN".into()).in_stage("sdn"))?;
        Some(sdn.personalized(features).map_err(|e| e.in_stage("sdn"))?)
    } else {
        None
    };
    model.predict(&InversionInput {
        acoustic: standardized,
        personalized: personalized.as_ref(),
    })
}
