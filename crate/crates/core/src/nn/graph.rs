//! A small reverse-mode autodiff tape over time-major `f64` matrices.

use std::collections::HashMap;

use ndarray::{s, Axis};

use super::kernels::{self, ChannelStats, LstmCache, LstmWeights};
use super::params::{Grads, Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    ShiftStack(Var, usize),
    InstanceNorm(Var, ChannelStats),
    MeanRows(Var),
    BroadcastRows(Var),
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        cache: Box<LstmCache>,
    },
    AbsErrorSum(Var, Mat),
    SquaredErrorSum(Var, Mat),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Mat,
}

/// Records a forward computation so that [`Graph::backward`] can return
/// gradients for every parameter leaf that was touched.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(Op::Param(id), self.params.get(id).clone());
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        self.push(Op::Scale(a, s), value)
    }

    /// `a` (T×C) plus a 1×C row broadcast over frames.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), value)
    }

    /// `a` (T×C) scaled per column by a 1×C row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) * self.value(row);
        self.push(Op::MulRow(a, row), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(kernels::sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat: frame counts differ");
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn shift_stack(&mut self, a: Var, kernel: usize) -> Var {
        let value = kernels::shift_stack(self.value(a).view(), kernel);
        self.push(Op::ShiftStack(a, kernel), value)
    }

    pub fn instance_norm(&mut self, a: Var, eps: f64) -> Var {
        let (value, stats) = kernels::instance_norm_forward(self.value(a).view(), eps);
        self.push(Op::InstanceNorm(a, stats), value)
    }

    /// Mean over frames: T×C → 1×C.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean over zero frames")
            .insert_axis(Axis(0));
        self.push(Op::MeanRows(a), value)
    }

    /// Repeats a 1×C row `frames` times.
    pub fn broadcast_rows(&mut self, row: Var, frames: usize) -> Var {
        let r = self.value(row);
        let value = r
            .broadcast((frames, r.ncols()))
            .expect("broadcast of a single row")
            .to_owned();
        self.push(Op::BroadcastRows(row), value)
    }

    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var, reverse: bool) -> Var {
        let weights = LstmWeights {
            w_ih: self.value(w_ih).view(),
            w_hh: self.value(w_hh).view(),
            b_ih: self.value(b_ih).view(),
            b_hh: self.value(b_hh).view(),
        };
        let (value, cache) = kernels::lstm_forward(self.value(x).view(), &weights, reverse);
        self.push(
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache: Box::new(cache),
            },
            value,
        )
    }

    /// `Σ |a − target|` as a 1×1 node.
    pub fn abs_error_sum(&mut self, a: Var, target: Mat) -> Var {
        let s: f64 = (self.value(a) - &target).mapv(f64::abs).sum();
        self.push(Op::AbsErrorSum(a, target), Mat::from_elem((1, 1), s))
    }

    /// `Σ (a − target)²` as a 1×1 node.
    pub fn squared_error_sum(&mut self, a: Var, target: Mat) -> Var {
        let s: f64 = (self.value(a) - &target).mapv(|d| d * d).sum();
        self.push(Op::SquaredErrorSum(a, target), Mat::from_elem((1, 1), s))
    }

    /// Reverse sweep from a scalar node. Gradients of parameters that did not
    /// participate are zero.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        let mut adj: Vec<Option<Mat>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        adj[loss.0] = Some(Mat::ones(self.value(loss).dim()));

        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.values[id.index()] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut adj, *a, g * *s),
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*row);
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &y| {
                            if y <= 0.0 {
                                *d = 0.0
                            }
                        });
                    acc(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = &g * &node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut adj, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ShiftStack(a, kernel) => {
                    let c = self.value(*a).ncols();
                    acc(&mut adj, *a, kernels::shift_stack_backward(g.view(), *kernel, c));
                }
                Op::InstanceNorm(a, stats) => {
                    let ga = kernels::instance_norm_backward(g.view(), node.value.view(), stats);
                    acc(&mut adj, *a, ga);
                }
                Op::MeanRows(a) => {
                    let t = self.value(*a).nrows();
                    let ga = g.broadcast((t, g.ncols())).unwrap().mapv(|x| x / t as f64);
                    acc(&mut adj, *a, ga);
                }
                Op::BroadcastRows(row) => {
                    acc(&mut adj, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Lstm {
                    x,
                    w_ih,
                    w_hh,
                    b_ih,
                    b_hh,
                    cache,
                } => {
                    let weights = LstmWeights {
                        w_ih: self.value(*w_ih).view(),
                        w_hh: self.value(*w_hh).view(),
                        b_ih: self.value(*b_ih).view(),
                        b_hh: self.value(*b_hh).view(),
                    };
                    let lg = kernels::lstm_backward(
                        g.view(),
                        self.value(*x).view(),
                        node.value.view(),
                        &weights,
                        cache,
                    );
                    acc(&mut adj, *x, lg.dx);
                    acc(&mut adj, *w_ih, lg.dw_ih);
                    acc(&mut adj, *w_hh, lg.dw_hh);
                    acc(&mut adj, *b_ih, lg.db.clone());
                    acc(&mut adj, *b_hh, lg.db);
                }
                Op::AbsErrorSum(a, target) => {
                    let scale = g[[0, 0]];
                    let ga = (self.value(*a) - target).mapv(|d| scale * sign(d));
                    acc(&mut adj, *a, ga);
                }
                Op::SquaredErrorSum(a, target) => {
                    let scale = g[[0, 0]];
                    let ga = (self.value(*a) - target).mapv(|d| 2.0 * scale * d);
                    acc(&mut adj, *a, ga);
                }
            }
        }
        grads
    }
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}
