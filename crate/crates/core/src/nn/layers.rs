use ndarray::{s, Array2};
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{uniform, xavier, Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Linear => x,
        }
    }
}

/// Affine map applied per frame: `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, in_dim, out_dim));
        let bias = store.add(format!("{name}.bias"), Mat::zeros((1, out_dim)));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).fill(0.0);
        store.get_mut(self.bias).fill(0.0);
    }
}

/// Same-padded 1-D convolution over time with edge replication.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: usize,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd for same padding");
        let fan_in = kernel * in_channels;
        let weight = store.add(format!("{name}.weight"), xavier(rng, fan_in, out_channels));
        let bias = store.add(format!("{name}.bias"), Mat::zeros((1, out_channels)));
        Conv1d {
            kernel,
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let stacked = if self.kernel == 1 {
            x
        } else {
            g.shift_stack(x, self.kernel)
        };
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(stacked, w);
        g.add_row(y, b)
    }

    /// Weight block multiplying the input frame at offset `tap - kernel/2`.
    pub fn tap_block(&self, store: &ParamStore, tap: usize) -> Array2<f64> {
        let c = self.in_channels;
        store
            .get(self.weight)
            .slice(s![tap * c..(tap + 1) * c, ..])
            .to_owned()
    }
}

/// One LSTM direction. Gate layout `[i | f | g | o]`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(format!("{name}.w_ih"), uniform(rng, input, 4 * hidden, limit));
        let w_hh = store.add(format!("{name}.w_hh"), uniform(rng, hidden, 4 * hidden, limit));
        let mut b = Mat::zeros((1, 4 * hidden));
        // forget gate starts open
        b.slice_mut(s![0, hidden..2 * hidden]).fill(1.0);
        let b_ih = store.add(format!("{name}.b_ih"), b);
        let b_hh = store.add(format!("{name}.b_hh"), Mat::zeros((1, 4 * hidden)));
        LstmCell {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            input,
            hidden,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Var {
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b_ih = g.param(self.b_ih);
        let b_hh = g.param(self.b_hh);
        g.lstm(x, w_ih, w_hh, b_ih, b_hh, reverse)
    }
}

/// Bidirectional LSTM layer whose output is the average of the two
/// directions, `O_t = ½ (O_t^fwd + O_t^bwd)`, not their concatenation.
#[derive(Debug, Clone)]
pub struct Blstm {
    pub forward_cell: LstmCell,
    pub backward_cell: LstmCell,
}

/// Both direction outputs of a [`Blstm`] alongside their average.
#[derive(Debug, Clone, Copy)]
pub struct BlstmTap {
    pub forward: Var,
    pub backward: Var,
    pub output: Var,
}

impl Blstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        Blstm {
            forward_cell: LstmCell::new(store, rng, &format!("{name}.fwd"), input, hidden),
            backward_cell: LstmCell::new(store, rng, &format!("{name}.bwd"), input, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward_cell.hidden
    }

    pub fn forward_tapped(&self, g: &mut Graph, x: Var) -> BlstmTap {
        let forward = self.forward_cell.forward(g, x, false);
        let backward = self.backward_cell.forward(g, x, true);
        let sum = g.add(forward, backward);
        let output = g.scale(sum, 0.5);
        BlstmTap {
            forward,
            backward,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.forward_tapped(g, x).output
    }
}
