//! Forward/backward kernels that the autodiff graph composes.
//!
//! Every sequence matrix is time-major: rows are frames, columns are channels.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::Mat;

/// Per-channel statistics produced by instance normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub eps: f64,
}

/// Normalises every column of `x` over time: `(x - mean) / sqrt(var + eps)`,
/// with the biased (1/T) variance.
pub fn instance_norm_forward(x: ArrayView2<f64>, eps: f64) -> (Mat, ChannelStats) {
    let t = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / t;
    let centered = &x - &mean.view().insert_axis(Axis(0));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / t;
    let std = var.mapv(|v| (v + eps).sqrt());
    let y = &centered / &std.view().insert_axis(Axis(0));
    (y, ChannelStats { mean, std, eps })
}

/// Gradient of instance normalisation given its output `y` and stats.
pub fn instance_norm_backward(dy: ArrayView2<f64>, y: ArrayView2<f64>, stats: &ChannelStats) -> Mat {
    let t = y.nrows() as f64;
    let mean_dy = dy.sum_axis(Axis(0)) / t;
    let mean_dyy = (&dy * &y).sum_axis(Axis(0)) / t;
    let mut dx = dy.to_owned();
    dx -= &mean_dy.view().insert_axis(Axis(0));
    dx -= &(&y * &mean_dyy.view().insert_axis(Axis(0)));
    dx /= &stats.std.view().insert_axis(Axis(0));
    dx
}

/// Stacks `kernel` time-shifted copies of `x` side by side (im2col for a
/// same-padded 1-D convolution). Out-of-range frames replicate the edge frame.
pub fn shift_stack(x: ArrayView2<f64>, kernel: usize) -> Mat {
    assert!(kernel % 2 == 1, "kernel size must be odd");
    let (t, c) = x.dim();
    let pad = (kernel / 2) as isize;
    let mut out = Mat::zeros((t, kernel * c));
    for row in 0..t {
        for k in 0..kernel {
            let src = (row as isize + k as isize - pad).clamp(0, t as isize - 1) as usize;
            out.slice_mut(s![row, k * c..(k + 1) * c])
                .assign(&x.row(src));
        }
    }
    out
}

pub fn shift_stack_backward(dout: ArrayView2<f64>, kernel: usize, channels: usize) -> Mat {
    let t = dout.nrows();
    let pad = (kernel / 2) as isize;
    let mut dx = Mat::zeros((t, channels));
    for row in 0..t {
        for k in 0..kernel {
            let src = (row as isize + k as isize - pad).clamp(0, t as isize - 1) as usize;
            let mut target = dx.row_mut(src);
            target += &dout.slice(s![row, k * channels..(k + 1) * channels]);
        }
    }
    dx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Values kept from an LSTM forward pass for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Gate activations per frame, laid out `[i | f | g | o]`.
    pub gates: Mat,
    pub cells: Mat,
    pub tanh_cells: Mat,
    pub reverse: bool,
}

/// Parameter views for a single-direction LSTM with gate layout `[i | f | g | o]`.
pub struct LstmWeights<'a> {
    pub w_ih: ArrayView2<'a, f64>,
    pub w_hh: ArrayView2<'a, f64>,
    pub b_ih: ArrayView2<'a, f64>,
    pub b_hh: ArrayView2<'a, f64>,
}

pub struct LstmGrads {
    pub dx: Mat,
    pub dw_ih: Mat,
    pub dw_hh: Mat,
    pub db: Mat,
}

fn time_order(t: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t).rev())
    } else {
        Box::new(0..t)
    }
}

/// Runs one LSTM direction over `x` (T×D) from zero initial state.
/// With `reverse`, frames are consumed from last to first; the returned
/// hidden states are still indexed by the original frame order.
pub fn lstm_forward(x: ArrayView2<f64>, w: &LstmWeights, reverse: bool) -> (Mat, LstmCache) {
    let t_len = x.nrows();
    let h = w.w_hh.nrows();
    let mut pre = x.dot(&w.w_ih);
    pre += &w.b_ih;
    pre += &w.b_hh;

    let mut out = Mat::zeros((t_len, h));
    let mut gates = Mat::zeros((t_len, 4 * h));
    let mut cells = Mat::zeros((t_len, h));
    let mut tanh_cells = Mat::zeros((t_len, h));
    let mut h_prev = Array1::<f64>::zeros(h);
    let mut c_prev = Array1::<f64>::zeros(h);

    for t in time_order(t_len, reverse) {
        let z = &pre.row(t) + &h_prev.dot(&w.w_hh);
        let mut g_row = gates.row_mut(t);
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let g_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            let c = f_g * c_prev[j] + i_g * g_g;
            let tc = c.tanh();
            g_row[j] = i_g;
            g_row[h + j] = f_g;
            g_row[2 * h + j] = g_g;
            g_row[3 * h + j] = o_g;
            cells[[t, j]] = c;
            tanh_cells[[t, j]] = tc;
            out[[t, j]] = o_g * tc;
        }
        h_prev.assign(&out.row(t));
        c_prev.assign(&cells.row(t));
    }
    (
        out,
        LstmCache {
            gates,
            cells,
            tanh_cells,
            reverse,
        },
    )
}

/// Backpropagation through time for [`lstm_forward`]. The returned `db`
/// applies to both bias vectors (they enter the pre-activation identically).
pub fn lstm_backward(
    dout: ArrayView2<f64>,
    x: ArrayView2<f64>,
    out: ArrayView2<f64>,
    w: &LstmWeights,
    cache: &LstmCache,
) -> LstmGrads {
    let t_len = x.nrows();
    let h = w.w_hh.nrows();
    let mut dz = Mat::zeros((t_len, 4 * h));
    // hidden state fed into each frame's recurrence (zero at the sequence start)
    let mut h_in = Mat::zeros((t_len, h));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    let order: Vec<usize> = time_order(t_len, cache.reverse).collect();

    for (pos, &t) in order.iter().enumerate().rev() {
        let prev = if pos == 0 { None } else { Some(order[pos - 1]) };
        if let Some(p) = prev {
            h_in.row_mut(t).assign(&out.row(p));
        }
        let g = cache.gates.row(t);
        let mut dz_row = dz.row_mut(t);
        for j in 0..h {
            let (i_g, f_g, g_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = cache.tanh_cells[[t, j]];
            let c_prev = prev.map_or(0.0, |p| cache.cells[[p, j]]);
            let dh = dout[[t, j]] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
            let d_i = dc * g_g;
            let d_g = dc * i_g;
            let d_f = dc * c_prev;
            dc_next[j] = dc * f_g;
            dz_row[j] = d_i * i_g * (1.0 - i_g);
            dz_row[h + j] = d_f * f_g * (1.0 - f_g);
            dz_row[2 * h + j] = d_g * (1.0 - g_g * g_g);
            dz_row[3 * h + j] = d_o * o_g * (1.0 - o_g);
        }
        dh_next = w.w_hh.dot(&dz.row(t));
    }

    LstmGrads {
        dx: dz.dot(&w.w_ih.t()),
        dw_ih: x.t().dot(&dz),
        dw_hh: h_in.t().dot(&dz),
        db: dz.sum_axis(Axis(0)).insert_axis(Axis(0)),
    }
}

/// Matrix from a flat row-major buffer; panics on length mismatch.
pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
    Array2::from_shape_vec((rows, cols), data).expect("row-major buffer length")
}
