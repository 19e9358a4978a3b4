//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D matrix whose rows are batch items. The
//! graph is rebuilt for each forward pass; [`Tape::backward`] walks it in
//! reverse creation order.

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Geometry of a strided 2-D convolution over `H x W x C_in` images stored
/// row-major (channels fastest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    /// "Same"-style padding: output side is `ceil(input / stride)`.
    pub fn same(height: usize, width: usize, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        let out_height = height.div_ceil(stride);
        let out_width = width.div_ceil(stride);
        let pad_h = ((out_height - 1) * stride + kernel).saturating_sub(height);
        let pad_w = ((out_width - 1) * stride + kernel).saturating_sub(width);
        Self {
            height,
            width,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_height,
            out_width,
        }
    }

    pub fn input_len(&self) -> usize {
        self.height * self.width * self.in_channels
    }

    pub fn output_len(&self) -> usize {
        self.out_height * self.out_width * self.out_channels
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    /// Input offset read by patch column `col` of output position `(oy, ox)`.
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.pad_top as isize;
        let x = (ox * self.stride + kx) as isize - self.pad_left as isize;
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            return None;
        }
        Some((y as usize * self.width + x as usize) * self.in_channels)
    }

    fn im2col(&self, image: &[f64]) -> Mat {
        let c = self.in_channels;
        let mut col = Mat::zeros((self.out_height * self.out_width, self.patch_len()));
        for oy in 0..self.out_height {
            for ox in 0..self.out_width {
                let mut row = col.row_mut(oy * self.out_width + ox);
                let row = row.as_slice_mut().expect("standard layout");
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        if let Some(src) = self.source(oy, ox, ky, kx) {
                            let dst = (ky * self.kernel + kx) * c;
                            row[dst..dst + c].copy_from_slice(&image[src..src + c]);
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im_add(&self, col: &Mat, image: &mut [f64]) {
        let c = self.in_channels;
        for oy in 0..self.out_height {
            for ox in 0..self.out_width {
                let row = col.row(oy * self.out_width + ox);
                let row = row.as_slice().expect("standard layout");
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        if let Some(src) = self.source(oy, ox, ky, kx) {
                            let from = (ky * self.kernel + kx) * c;
                            for k in 0..c {
                                image[src + k] += row[from + k];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    /// Fused LSTM cell: gates `[B, 4H]` (i, f, g, o) and previous cell state
    /// `[B, H]` give `[B, 2H]` = `[h | c]`.
    LstmCell(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    /// Mean over spatial positions of `[B, P * C]` channel-fastest rows.
    SpatialMean(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a [B, N] + bias [1, N]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let v = self.value(a) + &self.value(bias).row(0);
        self.push(v, Op::AddBias(a, bias))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Column-wise concatenation of equal-height matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat: row counts differ");
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Row `k` of the output is row `rows[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Mat::from_elem((1, 1), m.sum() / m.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Var {
        let g = self.value(gates);
        let c = self.value(c_prev);
        let (b, h) = c.dim();
        assert_eq!(g.dim(), (b, 4 * h), "lstm_cell: gate shape");
        let mut out = Mat::zeros((b, 2 * h));
        for r in 0..b {
            for k in 0..h {
                let i = sigmoid(g[[r, k]]);
                let f = sigmoid(g[[r, h + k]]);
                let gg = g[[r, 2 * h + k]].tanh();
                let o = sigmoid(g[[r, 3 * h + k]]);
                let cn = f * c[[r, k]] + i * gg;
                out[[r, k]] = o * cn.tanh();
                out[[r, h + k]] = cn;
            }
        }
        self.push(out, Op::LstmCell(gates, c_prev))
    }

    /// Strided 2-D convolution of each row (an image) with `weight
    /// [k*k*C_in, C_out]` and `bias [1, C_out]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeom) -> Var {
        let x = self.value(input);
        assert_eq!(x.ncols(), geom.input_len(), "conv2d: input length");
        let w = self.value(weight);
        let bvec = self.value(bias).row(0).to_owned();
        let mut out = Mat::zeros((x.nrows(), geom.output_len()));
        for (r, img) in x.outer_iter().enumerate() {
            let col = geom.im2col(img.as_slice().expect("standard layout"));
            let y = col.dot(w) + &bvec;
            out.row_mut(r)
                .assign(&y.into_shape_with_order(geom.output_len()).expect("contiguous"));
        }
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn spatial_mean(&mut self, a: Var, channels: usize) -> Var {
        let x = self.value(a);
        let positions = x.ncols() / channels;
        let mut out = Mat::zeros((x.nrows(), channels));
        for (r, row) in x.outer_iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                out[[r, k % channels]] += v;
            }
        }
        out /= positions as f64;
        self.push(out, Op::SpatialMean(a, channels))
    }

    /// Gradients of the scalar node `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Mat::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Option<Mat>], v: Var, d: Mat| match &mut grads[v.0] {
            Some(existing) => *existing += &d,
            slot => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.dot(&self.value(*b).t());
                let db = self.value(*a).t().dot(g);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::AddBias(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g * self.value(*b));
                acc(grads, *b, g * self.value(*a));
            }
            Op::Scale(a, c) => acc(grads, *a, g * *c),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                acc(grads, *a, d);
            }
            Op::Exp(a) => acc(grads, *a, g * &node.value),
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    acc(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let mut d = Mat::zeros(src.dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(grads, *a, d);
            }
            Op::GatherRows(a, rows) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                acc(grads, *a, d);
            }
            Op::Sum(a) => acc(grads, *a, Mat::from_elem(self.value(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let dim = self.value(*a).dim();
                acc(grads, *a, Mat::from_elem(dim, g[[0, 0]] / (dim.0 * dim.1) as f64));
            }
            Op::LstmCell(gates, c_prev) => {
                let gv = self.value(*gates);
                let cv = self.value(*c_prev);
                let (b, h) = cv.dim();
                let mut dg = Mat::zeros((b, 4 * h));
                let mut dc = Mat::zeros((b, h));
                for r in 0..b {
                    for k in 0..h {
                        let i = sigmoid(gv[[r, k]]);
                        let f = sigmoid(gv[[r, h + k]]);
                        let gg = gv[[r, 2 * h + k]].tanh();
                        let o = sigmoid(gv[[r, 3 * h + k]]);
                        let cn = node.value[[r, h + k]];
                        let tc = cn.tanh();
                        let dh = g[[r, k]];
                        let dcn = g[[r, h + k]] + dh * o * (1.0 - tc * tc);
                        dg[[r, k]] = dcn * gg * i * (1.0 - i);
                        dg[[r, h + k]] = dcn * cv[[r, k]] * f * (1.0 - f);
                        dg[[r, 2 * h + k]] = dcn * i * (1.0 - gg * gg);
                        dg[[r, 3 * h + k]] = dh * tc * o * (1.0 - o);
                        dc[[r, k]] = dcn * f;
                    }
                }
                acc(grads, *gates, dg);
                acc(grads, *c_prev, dc);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let mut dx = Mat::zeros(x.dim());
                let mut dw = Mat::zeros(w.dim());
                let mut db = Mat::zeros((1, geom.out_channels));
                let positions = geom.out_height * geom.out_width;
                for (r, img) in x.outer_iter().enumerate() {
                    let dy = g
                        .row(r)
                        .to_owned()
                        .into_shape_with_order((positions, geom.out_channels))
                        .expect("contiguous");
                    let col = geom.im2col(img.as_slice().expect("standard layout"));
                    dw += &col.t().dot(&dy);
                    db += &dy.sum_axis(Axis(0));
                    let dcol = dy.dot(&w.t());
                    let mut drow = dx.row_mut(r);
                    geom.col2im_add(&dcol, drow.as_slice_mut().expect("standard layout"));
                }
                acc(grads, *input, dx);
                acc(grads, *weight, dw);
                acc(grads, *bias, db);
            }
            Op::SpatialMean(a, channels) => {
                let dim = self.value(*a).dim();
                let positions = (dim.1 / channels) as f64;
                let d = Mat::from_shape_fn(dim, |(r, k)| g[[r, k % channels]] / positions);
                acc(grads, *a, d);
            }
        }
    }
}

/// Gradients from one backward pass.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    /// Gradient of `v`, or `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
#[path = "tape_tests.rs"]
mod tests;
