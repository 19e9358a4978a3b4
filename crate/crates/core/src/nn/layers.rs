use rand::Rng;

use super::params::{xavier, Binding, ParamId, ParamStore};
use super::tape::{ConvGeom, Mat, Tape, Var};

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), xavier(rng, input, output)),
            bias: store.add(format!("{name}.bias"), Mat::zeros((1, output))),
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Var {
        tape.affine(x, p.var(self.weight), p.var(self.bias))
    }
}

/// Single-layer LSTM with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut bias = Mat::zeros((1, 4 * hidden));
        // Forget gate starts open.
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        Self {
            w_input: store.add(format!("{name}.w_input"), xavier(rng, input, 4 * hidden)),
            w_hidden: store.add(format!("{name}.w_hidden"), xavier(rng, hidden, 4 * hidden)),
            bias: store.add(format!("{name}.bias"), bias),
            input,
            hidden,
        }
    }

    /// Runs the sequence from zero state and returns every hidden state.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, inputs: &[Var]) -> Vec<Var> {
        let batch = tape.value(inputs[0]).nrows();
        let mut h = tape.leaf(Mat::zeros((batch, self.hidden)));
        let mut c = tape.leaf(Mat::zeros((batch, self.hidden)));
        let (wx, wh, b) = (p.var(self.w_input), p.var(self.w_hidden), p.var(self.bias));
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let xi = tape.matmul(x, wx);
            let hh = tape.matmul(h, wh);
            let pre = tape.add(xi, hh);
            let gates = tape.add_bias(pre, b);
            let hc = tape.lstm_cell(gates, c);
            h = tape.slice_cols(hc, 0, self.hidden);
            c = tape.slice_cols(hc, self.hidden, self.hidden);
            outputs.push(h);
        }
        outputs
    }

    /// Final hidden state of the sequence.
    pub fn encode(&self, tape: &mut Tape, p: &Binding, inputs: &[Var]) -> Var {
        *self.forward(tape, p, inputs).last().expect("non-empty sequence")
    }
}

/// Strided convolution followed by nothing; callers add activations.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl Conv2dLayer {
    pub fn new(store: &mut ParamStore, name: &str, geom: ConvGeom, rng: &mut impl Rng) -> Self {
        let fan_in = geom.kernel * geom.kernel * geom.in_channels;
        let fan_out = geom.kernel * geom.kernel * geom.out_channels;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Mat::from_shape_fn((fan_in, geom.out_channels), |_| rng.random_range(-limit..limit));
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Mat::zeros((1, geom.out_channels))),
            geom,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Var {
        tape.conv2d(x, p.var(self.weight), p.var(self.bias), self.geom)
    }
}
