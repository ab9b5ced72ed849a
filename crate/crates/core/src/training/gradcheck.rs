use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::inversion::{AblationVariant, InversionConfig, InversionInput, InversionModel};
use crate::nn::{Activation, Blstm, Conv1d, Graph, Linear, LstmCell, Mat, ParamStore, Var};
use crate::sdn::{SdnConfig, SdnModel};

/// Finite-difference step used by the suite.
pub const STEP: f64 = 1e-5;
/// Gate for composite networks.
pub const TOLERANCE: f64 = 1e-4;
/// Gate for the instance-normalisation op checked alone.
pub const IN_TOLERANCE: f64 = 1e-6;

/// Floor on the relative-error denominator so that vanishing gradients are
/// compared absolutely. With a 1e-5 step in f64 the central difference of an
/// O(1) loss carries roughly 1e-10 of roundoff, so derivatives much below
/// 1e-5 cannot be resolved to 1e-4 relative.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LeafCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub worst: (usize, usize),
    /// Analytic and numeric derivative at `worst`.
    pub worst_pair: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst_leaf(&self) -> Option<&LeafCheck> {
        self.leaves.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn summary(&self) -> String {
        format!(
            "{} leaves, max relative error {:.3e} (tolerance {:.0e}){}: {}",
            self.leaves.len(),
            self.max_rel_error,
            self.tolerance,
            self.worst_leaf()
                .map(|l| format!(
                    ", worst {}{:?} analytic {:.6e} numeric {:.6e}",
                    l.name, l.worst, l.worst_pair.0, l.worst_pair.1
                ))
                .unwrap_or_default(),
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the reverse-mode gradient of the scalar built by `build` with
/// central finite differences for every element of every leaf in `store`.
pub fn grad_check<F>(store: &ParamStore, build: F, step: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g);
        g.backward(loss)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let loss = build(&mut g);
        g.scalar(loss)
    };
    let mut probe = store.clone();
    let mut leaves = Vec::new();
    for id in store.ids() {
        let (rows, cols) = store.get(id).dim();
        let mut worst = (0, 0);
        let mut max_rel: f64 = 0.0;
        let mut worst_pair = (0.0, 0.0);
        for r in 0..rows {
            for c in 0..cols {
                let orig = store.get(id)[[r, c]];
                probe.get_mut(id)[[r, c]] = orig + step;
                let plus = eval(&probe);
                probe.get_mut(id)[[r, c]] = orig - step;
                let minus = eval(&probe);
                probe.get_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let rel = relative_error(analytic.get(id)[[r, c]], numeric);
                if rel > max_rel || rel.is_nan() {
                    max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
                    worst = (r, c);
                    worst_pair = (analytic.get(id)[[r, c]], numeric);
                }
            }
        }
        leaves.push(LeafCheck {
            name: store.name(id).to_string(),
            elements: rows * cols,
            max_rel_error: max_rel,
            worst,
            worst_pair,
        });
    }
    let max_rel_error = leaves.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        leaves,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// One downsized check: a named scalar graph over its own parameters.
pub struct GradCase {
    pub name: &'static str,
    pub tolerance: f64,
    pub store: ParamStore,
    build: Box<dyn Fn(&mut Graph) -> Var>,
}

impl GradCase {
    pub fn run(&self) -> GradCheckReport {
        self.run_with_step(STEP)
    }

    pub fn run_with_step(&self, step: f64) -> GradCheckReport {
        grad_check(&self.store, |g| (self.build)(g), step, self.tolerance)
    }
}

/// Downsized checks for every differentiable building block and for both
/// full networks. Smooth activations keep the probes away from ReLU kinks.
pub fn gradcheck_suite(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();

    {
        let mut store = ParamStore::new();
        let x = store.add("x", random(&mut rng, 5, 2));
        let target = random(&mut rng, 5, 2);
        cases.push(GradCase {
            name: "instance-norm",
            tolerance: IN_TOLERANCE,
            store,
            build: Box::new(move |g| {
                let x = g.param(x);
                let y = g.instance_norm(x, 1e-5);
                g.squared_error_sum(y, target.clone())
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let x = store.add("x", random(&mut rng, 6, 3));
        let s = store.add("speaker", random(&mut rng, 1, 4));
        let gamma = Linear::new(&mut store, &mut rng, "gamma", 4, 3);
        let beta = Linear::new(&mut store, &mut rng, "beta", 4, 3);
        let target = random(&mut rng, 6, 3);
        cases.push(GradCase {
            name: "adain",
            tolerance: TOLERANCE,
            store,
            build: Box::new(move |g| {
                let x = g.param(x);
                let s = g.param(s);
                let n = g.instance_norm(x, 1e-5);
                let gm = gamma.forward(g, s);
                let bt = beta.forward(g, s);
                let y = g.mul_row(n, gm);
                let y = g.add_row(y, bt);
                g.squared_error_sum(y, target.clone())
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let x = store.add("x", random(&mut rng, 7, 2));
        let conv = Conv1d::new(&mut store, &mut rng, "conv", 3, 2, 3);
        let target = random(&mut rng, 7, 3);
        cases.push(GradCase {
            name: "conv1d",
            tolerance: TOLERANCE,
            store,
            build: Box::new(move |g| {
                let x = g.param(x);
                let y = conv.forward(g, x);
                g.squared_error_sum(y, target.clone())
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let x = store.add("x", random(&mut rng, 4, 2));
        let cell = LstmCell::new(&mut store, &mut rng, "cell", 2, 3);
        let target = random(&mut rng, 4, 3);
        cases.push(GradCase {
            name: "lstm-cell",
            tolerance: TOLERANCE,
            store,
            build: Box::new(move |g| {
                let x = g.param(x);
                let y = cell.forward(g, x, false);
                g.squared_error_sum(y, target.clone())
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let x = store.add("x", random(&mut rng, 4, 2));
        let blstm = Blstm::new(&mut store, &mut rng, "blstm", 2, 3);
        let target = random(&mut rng, 4, 3);
        cases.push(GradCase {
            name: "blstm-average",
            tolerance: TOLERANCE,
            store,
            build: Box::new(move |g| {
                let x = g.param(x);
                let y = blstm.forward(g, x);
                g.squared_error_sum(y, target.clone())
            }),
        });
    }
    {
        let cfg = InversionConfig {
            acoustic_dim: 4,
            personalized_dim: 4,
            kernels: vec![1, 3],
            conv_channels: 4,
            encoder_activation: Activation::Tanh,
            afn_layers: 1,
            afn_hidden: 4,
            afn_fc: 4,
            ain_layers: 2,
            ain_hidden: 4,
            ain_fc: 4,
            head_activation: Activation::Tanh,
            d_p: 4,
            lip_dim: 4,
            tongue_dim: 4,
            ..InversionConfig::default()
        };
        let model = InversionModel::new(cfg, AblationVariant::Safn, seed).expect("valid downsized config");
        let t = 5;
        let acoustic = random(&mut rng, t, 4);
        let personalized = random(&mut rng, t, 4);
        let lip = random(&mut rng, t, 4);
        let tongue = random(&mut rng, t, 4);
        let store = model.store.clone();
        cases.push(GradCase {
            name: "safn",
            tolerance: TOLERANCE,
            store,
            build: Box::new(move |g| {
                let input = InversionInput {
                    acoustic: &acoustic,
                    personalized: Some(&personalized),
                };
                model.loss_graph(g, &input, &lip, &tongue, 0.5, 0.5).expect("shapes match").0
            }),
        });
    }
    {
        let cfg = SdnConfig {
            feature_dim: 2,
            kernel: 3,
            speaker_channels: vec![2],
            dense_layers: 1,
            dense_growth: 2,
            speaker_dim: 2,
            content_channels: vec![2],
            decoder_channels: vec![2],
            activation: Activation::Tanh,
            ..SdnConfig::default()
        };
        let model = SdnModel::new(cfg, seed).expect("valid downsized config");
        let x: Array2<f64> = random(&mut rng, 6, 2);
        let store = model.store.clone();
        cases.push(GradCase {
            name: "sdn",
            tolerance: TOLERANCE,
            store,
            build: Box::new(move |g| model.reconstruction_graph(g, &x)),
        });
    }
    cases
}
