//! Parameterised layers shared by every module: affine maps, perceptrons and
//! stacked LSTM cells.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::autodiff::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Glorot-uniform matrix.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, bound)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, output, input));
        let b = store.add(format!("{name}.b"), Tensor::zeros(output, 1));
        Self { w, b, input, output }
    }

    pub fn lookup(store: &ParamStore, name: &str) -> crate::Result<Self> {
        let w = store.id(&format!("{name}.w"))?;
        let b = store.id(&format!("{name}.b"))?;
        let (output, input) = store.get(w).shape();
        Ok(Self { w, b, input, output })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.affine(self.w, self.b, x)
    }
}

/// Perceptron with rectified-linear hidden layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes` lists every width, input first: `[in, h1, ..., out]`.
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn lookup(store: &ParamStore, name: &str, depth: usize) -> crate::Result<Self> {
        let layers = (0..depth)
            .map(|i| Linear::lookup(store, &format!("{name}.{i}")))
            .collect::<crate::Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i < last {
                h = g.relu(h);
                h = g.dropout(h);
            }
        }
        h
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("mlp has layers")
    }
}

/// Hidden and cell vectors of one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Multi-layer LSTM; gate order in the fused weight is input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub layers: Vec<Linear>,
    pub hidden: usize,
}

impl LstmStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let in_dim = if l == 0 { input } else { hidden };
                Linear::new(store, &format!("{name}.{l}"), in_dim + hidden, 4 * hidden, rng)
            })
            .collect();
        Self { layers, hidden }
    }

    pub fn lookup(store: &ParamStore, name: &str, depth: usize) -> crate::Result<Self> {
        let layers: Vec<Linear> = (0..depth)
            .map(|l| Linear::lookup(store, &format!("{name}.{l}")))
            .collect::<crate::Result<_>>()?;
        let hidden = layers[0].output / 4;
        Ok(Self { layers, hidden })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_state(&self, g: &mut Graph) -> Vec<LstmState> {
        (0..self.depth())
            .map(|_| LstmState {
                h: g.zeros(self.hidden),
                c: g.zeros(self.hidden),
            })
            .collect()
    }

    /// One time step through every layer. Returns the new per-layer states;
    /// the top layer's `h` is the step output.
    pub fn step(&self, g: &mut Graph, x: Var, state: &[LstmState]) -> Vec<LstmState> {
        let n = self.hidden;
        let mut input = x;
        let mut next = Vec::with_capacity(self.depth());
        for (layer, prev) in self.layers.iter().zip(state) {
            let xh = g.concat(&[input, prev.h]);
            let z = layer.forward(g, xh);
            let i = g.slice(z, 0, n);
            let f = g.slice(z, n, n);
            let c_hat = g.slice(z, 2 * n, n);
            let o = g.slice(z, 3 * n, n);
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let c_hat = g.tanh(c_hat);
            let o = g.sigmoid(o);
            let keep = g.mul(f, prev.c);
            let write = g.mul(i, c_hat);
            let c = g.add(keep, write);
            let tc = g.tanh(c);
            let h = g.mul(o, tc);
            next.push(LstmState { h, c });
            input = g.dropout(h);
        }
        next
    }

    /// Runs the whole sequence; returns per-step top-layer outputs and the final states.
    pub fn run(&self, g: &mut Graph, inputs: &[Var], init: Vec<LstmState>) -> (Vec<Var>, Vec<LstmState>) {
        let mut state = init;
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in inputs {
            state = self.step(g, *x, &state);
            outputs.push(state.last().expect("non-empty stack").h);
        }
        (outputs, state)
    }
}
