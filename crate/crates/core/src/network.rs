//! Network representations: implicit, feedforward, and weight-tied models,
//! their activation functions, and the structural feedforward-to-implicit
//! conversion.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Elementwise activation. Every member is weakly increasing with difference
/// quotients in [0, 1], which is what the contraction and interval arguments
/// rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative, with the subgradient value 0 at the ReLU kink.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn apply(self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.eval(x)).collect()
    }

    pub fn apply_in_place(self, v: &mut [f64]) {
        for x in v {
            *x = self.eval(*x);
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::ModelFormat(format!("unknown activation {other:?}"))),
        }
    }
}

/// Applies a diagonal activation to a vector.
pub fn apply_activation(act: Activation, v: &[f64]) -> Vec<f64> {
    act.apply(v)
}

fn check_vec(name: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{name} has dim {}, expected {dim}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.into()));
    }
    Ok(())
}

/// Implicit network: hidden state solves `z = act(W z + U x + b)`, output is
/// `y = C z + c`. Well-posedness is certified separately, not assumed here.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitNetwork {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
    pub c: Matrix,
    pub c_bias: Vec<f64>,
    pub activation: Activation,
}

impl ImplicitNetwork {
    pub fn new(
        w: Matrix,
        u: Matrix,
        b: Vec<f64>,
        c: Matrix,
        c_bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::NotSquare {
                rows: w.rows(),
                cols: w.cols(),
            });
        }
        let n = w.rows();
        if u.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "U has {} rows, expected {n}",
                u.rows()
            )));
        }
        if c.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "C has {} cols, expected {n}",
                c.cols()
            )));
        }
        check_vec("b", &b, n)?;
        check_vec("c_bias", &c_bias, c.rows())?;
        Ok(Self {
            w,
            u,
            b,
            c,
            c_bias,
            activation,
        })
    }

    /// Hidden dimension.
    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    /// Input dimension.
    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    /// Output dimension.
    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    /// Output map `y = C z + c` for a given hidden state.
    pub fn output(&self, z: &[f64]) -> Vec<f64> {
        let mut y = self.c.matvec(z);
        for (yi, ci) in y.iter_mut().zip(&self.c_bias) {
            *yi += ci;
        }
        y
    }
}

/// One affine layer of a feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Feedforward network: `z_i = act(W_i z_{i-1} + b_i)` with affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNetwork {
    pub layers: Vec<Layer>,
    pub c: Matrix,
    pub c_bias: Vec<f64>,
    pub activation: Activation,
}

impl FeedforwardNetwork {
    pub fn new(
        layers: Vec<Layer>,
        c: Matrix,
        c_bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch(
                "feedforward network needs at least one layer".into(),
            ));
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[1].weight.cols() != pair[0].weight.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} output dim {} does not feed layer {} input dim {}",
                    idx,
                    pair[0].weight.rows(),
                    idx + 1,
                    pair[1].weight.cols()
                )));
            }
        }
        for (idx, layer) in layers.iter().enumerate() {
            check_vec(
                &format!("bias of layer {idx}"),
                &layer.bias,
                layer.weight.rows(),
            )?;
        }
        let last = layers.last().unwrap().weight.rows();
        if c.cols() != last {
            return Err(Error::DimensionMismatch(format!(
                "output weight has {} cols, expected {last}",
                c.cols()
            )));
        }
        check_vec("c_bias", &c_bias, c.rows())?;
        Ok(Self {
            layers,
            c,
            c_bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    /// Total hidden width across layers.
    pub fn hidden_dim(&self) -> usize {
        self.layers.iter().map(|l| l.weight.rows()).sum()
    }
}

/// Sequential evaluation of a feedforward network.
pub fn ffnn_forward(net: &FeedforwardNetwork, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has dim {}, expected {}",
            x.len(),
            net.input_dim()
        )));
    }
    let mut z = x.to_vec();
    for layer in &net.layers {
        let mut pre = layer.weight.matvec(&z);
        for (p, b) in pre.iter_mut().zip(&layer.bias) {
            *p += b;
        }
        net.activation.apply_in_place(&mut pre);
        z = pre;
    }
    let mut y = net.c.matvec(&z);
    for (yi, ci) in y.iter_mut().zip(&net.c_bias) {
        *yi += ci;
    }
    Ok(y)
}

/// Converts a feedforward network into the equivalent implicit network.
///
/// The hidden state stacks layer activations deepest-first,
/// `z = [z_k, ..., z_1]`, so the big weight matrix is strictly block upper
/// triangular with `W_k, ..., W_2` on the block superdiagonal, the input block
/// carries the first layer in its last block row, and the output weight reads
/// the first block.
pub fn ffnn_to_inn(net: &FeedforwardNetwork) -> ImplicitNetwork {
    let k = net.layers.len();
    let n = net.hidden_dim();
    let r = net.input_dim();
    let q = net.output_dim();

    // Row offset of each layer block in the stacked state: layer k first.
    let mut offsets = vec![0usize; k];
    let mut acc = 0;
    for layer_idx in (0..k).rev() {
        offsets[layer_idx] = acc;
        acc += net.layers[layer_idx].weight.rows();
    }

    let mut w = Matrix::zeros(n, n);
    let mut u = Matrix::zeros(n, r);
    let mut b = vec![0.0; n];
    for (layer_idx, layer) in net.layers.iter().enumerate() {
        let row0 = offsets[layer_idx];
        for (i, bi) in layer.bias.iter().enumerate() {
            b[row0 + i] = *bi;
        }
        if layer_idx == 0 {
            // First layer reads the input.
            for i in 0..layer.weight.rows() {
                for j in 0..layer.weight.cols() {
                    u.set(row0 + i, j, layer.weight.get(i, j));
                }
            }
        } else {
            let col0 = offsets[layer_idx - 1];
            for i in 0..layer.weight.rows() {
                for j in 0..layer.weight.cols() {
                    w.set(row0 + i, col0 + j, layer.weight.get(i, j));
                }
            }
        }
    }

    let mut c = Matrix::zeros(q, n);
    let last_rows = net.layers[k - 1].weight.rows();
    let last0 = offsets[k - 1];
    debug_assert_eq!(last0, 0);
    for i in 0..q {
        for j in 0..last_rows {
            c.set(i, last0 + j, net.c.get(i, j));
        }
    }

    ImplicitNetwork {
        w,
        u,
        b,
        c,
        c_bias: net.c_bias.clone(),
        activation: net.activation,
    }
}

/// Weight-tied input-injected network: `z_i = act(W z_{i-1} + U x + b)` for a
/// fixed or unbounded number of steps, read out through `y = C z_k + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTiedNetwork {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
    pub c: Matrix,
    pub c_bias: Vec<f64>,
    /// `None` means unbounded depth (the infinite-layer limit).
    pub depth: Option<usize>,
    pub activation: Activation,
}

impl WeightTiedNetwork {
    pub fn new(
        w: Matrix,
        u: Matrix,
        b: Vec<f64>,
        c: Matrix,
        c_bias: Vec<f64>,
        depth: Option<usize>,
        activation: Activation,
    ) -> Result<Self> {
        let inn = ImplicitNetwork::new(w, u, b, c, c_bias, activation)?;
        Ok(Self {
            w: inn.w,
            u: inn.u,
            b: inn.b,
            c: inn.c,
            c_bias: inn.c_bias,
            depth,
            activation,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    /// The same parameters read as an implicit network.
    pub fn as_implicit(&self) -> ImplicitNetwork {
        ImplicitNetwork {
            w: self.w.clone(),
            u: self.u.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            c_bias: self.c_bias.clone(),
            activation: self.activation,
        }
    }
}

/// Runs a weight-tied network for `k` steps. The initial state is the input
/// when hidden and input dimensions agree, and zero otherwise.
pub fn weight_tied_forward(net: &WeightTiedNetwork, x: &[f64], k: usize) -> Result<Vec<f64>> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has dim {}, expected {}",
            x.len(),
            net.input_dim()
        )));
    }
    if k == 0 {
        return Err(Error::Config("weight-tied depth must be >= 1".into()));
    }
    let n = net.hidden_dim();
    let mut z = if n == net.input_dim() {
        x.to_vec()
    } else {
        vec![0.0; n]
    };
    let mut ux = net.u.matvec(x);
    for (v, b) in ux.iter_mut().zip(&net.b) {
        *v += b;
    }
    let mut pre = vec![0.0; n];
    for _ in 0..k {
        net.w.matvec_into(&z, &mut pre);
        for i in 0..n {
            pre[i] += ux[i];
        }
        net.activation.apply_in_place(&mut pre);
        std::mem::swap(&mut z, &mut pre);
    }
    let mut y = net.c.matvec(&z);
    for (yi, ci) in y.iter_mut().zip(&net.c_bias) {
        *yi += ci;
    }
    Ok(y)
}
