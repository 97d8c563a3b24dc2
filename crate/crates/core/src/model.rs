//! Deep residual networks with a linear head:
//!
//! ```text
//! h_0 = x,   h_l = h_{l-1} + Φ_l(h_{l-1}),   f(x) = wᵀ h_L (+ c)
//! ```
//!
//! with residual parts `Φ_l(t) = V_l φ_l(U_l t)` (or `V_1 φ_1(t)` for a
//! [`BlockSpec::First`] block). Parameters live in one flat vector, see
//! [`Theta`] and [`ParamLayout`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::loss::LossKind;

pub const DEFAULT_FD_STEP: f64 = 1e-5;
const MAX_HESSIAN_PARAMS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InnerKind {
    /// `φ(s) = σ(s)` elementwise.
    Relu,
    /// `φ(s) = σ(Z s + z)` with `Z ∈ R^{hidden×m}`, `z ∈ R^{hidden}`.
    AffineRelu { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "block")]
pub enum BlockSpec {
    /// `Φ(h) = V φ(U h)` with `U ∈ R^{m×d_x}`.
    General { m: usize, inner: InnerKind },
    /// `Φ(h) = v σ(uᵀh)`; stored as `V = v` (d_x×1) and `U = uᵀ` (1×d_x).
    SimpleVector,
    /// `Φ(x) = V φ(x)` with no input matrix. Only valid in position 0.
    First { inner: InnerKind },
}

impl BlockSpec {
    fn has_u(&self) -> bool {
        !matches!(self, BlockSpec::First { .. })
    }

    fn inner(&self) -> InnerKind {
        match *self {
            BlockSpec::General { inner, .. } | BlockSpec::First { inner } => inner,
            BlockSpec::SimpleVector => InnerKind::Relu,
        }
    }

    /// Width `m` of the argument of φ.
    pub fn input_width(&self, d_x: usize) -> usize {
        match *self {
            BlockSpec::General { m, .. } => m,
            BlockSpec::SimpleVector => 1,
            BlockSpec::First { .. } => d_x,
        }
    }

    /// Width `n` of the output of φ (columns of `V`).
    pub fn output_width(&self, d_x: usize) -> usize {
        match self.inner() {
            InnerKind::Relu => self.input_width(d_x),
            InnerKind::AffineRelu { hidden } => hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetSpec {
    pub d_x: usize,
    pub blocks: Vec<BlockSpec>,
    /// Adds a scalar output bias `c`, i.e. `f(x) = wᵀh_L + c`.
    #[serde(default)]
    pub output_bias: bool,
}

impl ResNetSpec {
    pub fn new(d_x: usize, blocks: Vec<BlockSpec>) -> Result<Self> {
        let spec = Self {
            d_x,
            blocks,
            output_bias: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_output_bias(mut self, on: bool) -> Self {
        self.output_bias = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 {
            return Err(Error::InvalidSpec("d_x must be positive".into()));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            if l > 0 && matches!(b, BlockSpec::First { .. }) {
                return Err(Error::InvalidSpec(format!(
                    "block {l}: a first-block form may only appear at position 0"
                )));
            }
            if b.input_width(self.d_x) == 0 || b.output_width(self.d_x) == 0 {
                return Err(Error::InvalidSpec(format!("block {l} has zero width")));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Dimension of the head features: `d_x`, plus one with an output bias.
    pub fn head_dim(&self) -> usize {
        self.d_x + usize::from(self.output_bias)
    }

    /// `Σ_{l≥2} m_l`, the architectural quantity behind parameter coverage.
    pub fn stacked_width(&self) -> usize {
        self.blocks
            .iter()
            .skip(1)
            .filter(|b| b.has_u())
            .map(|b| b.input_width(self.d_x))
            .sum()
    }

    pub fn layout(&self) -> ParamLayout {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |block: Option<usize>, name: ParamName, rows: usize, cols: usize| {
            slots.push(ParamSlot {
                block,
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        push(None, ParamName::W, self.d_x, 1);
        if self.output_bias {
            push(None, ParamName::C, 1, 1);
        }
        for (l, b) in self.blocks.iter().enumerate() {
            let m = b.input_width(self.d_x);
            let n = b.output_width(self.d_x);
            push(Some(l), ParamName::V, self.d_x, n);
            if b.has_u() {
                push(Some(l), ParamName::U, m, self.d_x);
            }
            if let InnerKind::AffineRelu { hidden } = b.inner() {
                push(Some(l), ParamName::Z, hidden, m);
                push(Some(l), ParamName::ZBias, hidden, 1);
            }
        }
        ParamLayout { slots, len: offset }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamName {
    /// head weights `w`
    W,
    /// head bias `c`
    C,
    V,
    U,
    /// inner weight matrix of an affine-ReLU φ
    Z,
    /// inner bias of an affine-ReLU φ
    ZBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamSlot {
    /// `None` for the head.
    pub block: Option<usize>,
    pub name: ParamName,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Index map from `(block, name, row, col)` to flat offsets. Matrices are
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamLayout {
    slots: Vec<ParamSlot>,
    len: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, block: Option<usize>, name: ParamName) -> Option<&ParamSlot> {
        self.slots
            .iter()
            .find(|s| s.block == block && s.name == name)
    }

    pub fn index(&self, block: Option<usize>, name: ParamName, row: usize, col: usize) -> Option<usize> {
        let s = self.slot(block, name)?;
        (row < s.rows && col < s.cols).then(|| s.offset + row * s.cols + col)
    }

    /// Inverse of [`ParamLayout::index`].
    pub fn locate(&self, flat: usize) -> Option<(Option<usize>, ParamName, usize, usize)> {
        let s = self.slots.iter().find(|s| s.range().contains(&flat))?;
        let k = flat - s.offset;
        Some((s.block, s.name, k / s.cols, k % s.cols))
    }
}

/// Flat parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theta {
    values: Vec<f64>,
    #[serde(skip)]
    layout: ParamLayout,
}

impl Theta {
    pub fn zeros(spec: &ResNetSpec) -> Self {
        let layout = spec.layout();
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_flat(spec: &ResNetSpec, values: Vec<f64>) -> Result<Self> {
        let layout = spec.layout();
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    /// Entries drawn uniformly from `[−scale, scale]`.
    pub fn random<R: Rng + ?Sized>(spec: &ResNetSpec, rng: &mut R, scale: f64) -> Self {
        let mut t = Self::zeros(spec);
        for v in &mut t.values {
            *v = rng.gen_range(-scale..=scale);
        }
        t
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// `self + step · direction`
    pub fn offset(&self, direction: &[f64], step: f64) -> Theta {
        let mut out = self.clone();
        for (v, d) in out.values.iter_mut().zip(direction) {
            *v += step * d;
        }
        out
    }

    fn slice(&self, block: Option<usize>, name: ParamName) -> &[f64] {
        match self.layout.slot(block, name) {
            Some(s) => &self.values[s.range()],
            None => &[],
        }
    }

    pub fn w(&self) -> &[f64] {
        self.slice(None, ParamName::W)
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        let r = self.layout.slot(None, ParamName::W).expect("head always present").range();
        &mut self.values[r]
    }

    pub fn c(&self) -> f64 {
        self.slice(None, ParamName::C).first().copied().unwrap_or(0.0)
    }

    pub fn set_c(&mut self, c: f64) -> Result<()> {
        let s = *self
            .layout
            .slot(None, ParamName::C)
            .ok_or_else(|| Error::InvalidSpec("network has no output bias".into()))?;
        self.values[s.offset] = c;
        Ok(())
    }

    /// Copy of a parameter block as a matrix.
    pub fn matrix(&self, block: Option<usize>, name: ParamName) -> Option<Matrix> {
        let s = self.layout.slot(block, name)?;
        Some(Matrix::from_fn(s.rows, s.cols, |i, j| {
            self.values[s.offset + i * s.cols + j]
        }))
    }

    pub fn set_matrix(&mut self, block: Option<usize>, name: ParamName, m: &Matrix) -> Result<()> {
        let s = *self
            .layout
            .slot(block, name)
            .ok_or_else(|| Error::InvalidSpec(format!("no {name:?} in block {block:?}")))?;
        if (s.rows, s.cols) != (m.rows(), m.cols()) {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                got: m.rows() * m.cols(),
            });
        }
        self.values[s.range()].copy_from_slice(m.as_slice());
        Ok(())
    }

    pub fn set(&mut self, block: Option<usize>, name: ParamName, row: usize, col: usize, v: f64) -> Result<()> {
        let k = self
            .layout
            .index(block, name, row, col)
            .ok_or_else(|| Error::InvalidSpec(format!("no entry ({row},{col}) of {name:?} in block {block:?}")))?;
        self.values[k] = v;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockTrace {
    /// Argument of φ: `U h_{l-1}`, or `h_{l-1}` for a first block.
    pub projected: Vec<f64>,
    /// ReLU pre-activations.
    pub preact: Vec<f64>,
    /// φ output.
    pub act: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardTrace {
    /// `h_0 … h_L`
    pub hidden: Vec<Vec<f64>>,
    pub blocks: Vec<BlockTrace>,
    pub output: f64,
}

impl ForwardTrace {
    pub fn last_hidden(&self) -> &[f64] {
        self.hidden.last().expect("h_0 always present")
    }

    /// `h_L`, with a trailing 1 when the network has an output bias.
    pub fn head_features(&self, spec: &ResNetSpec) -> Vec<f64> {
        let mut f = self.last_hidden().to_vec();
        if spec.output_bias {
            f.push(1.0);
        }
        f
    }
}

fn check_theta(spec: &ResNetSpec, theta: &Theta) -> Result<()> {
    let expected = spec.layout();
    if theta.layout != expected {
        return Err(Error::DimensionMismatch {
            expected: expected.len(),
            got: theta.len(),
        });
    }
    Ok(())
}

fn relu(t: f64) -> f64 {
    t.max(0.0)
}

/// `y = M x` for a row-major `rows × cols` slice.
fn apply(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows).map(|i| dot(&m[i * cols..(i + 1) * cols], x)).collect()
}

/// `y = Mᵀ x`
fn apply_t(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate().take(rows) {
        if *xi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(&m[i * cols..(i + 1) * cols]) {
            *o += a * xi;
        }
    }
    out
}

fn forward_unchecked(spec: &ResNetSpec, theta: &Theta, x: &[f64]) -> ForwardTrace {
    let d = spec.d_x;
    let mut hidden = Vec::with_capacity(spec.depth() + 1);
    let mut blocks = Vec::with_capacity(spec.depth());
    hidden.push(x.to_vec());
    for (l, b) in spec.blocks.iter().enumerate() {
        let h = hidden.last().expect("nonempty");
        let m = b.input_width(d);
        let n = b.output_width(d);
        let projected = if b.has_u() {
            apply(theta.slice(Some(l), ParamName::U), m, d, h)
        } else {
            h.clone()
        };
        let preact = match b.inner() {
            InnerKind::Relu => projected.clone(),
            InnerKind::AffineRelu { hidden: k } => {
                let mut q = apply(theta.slice(Some(l), ParamName::Z), k, m, &projected);
                for (qi, zi) in q.iter_mut().zip(theta.slice(Some(l), ParamName::ZBias)) {
                    *qi += zi;
                }
                q
            }
        };
        let act: Vec<f64> = preact.iter().map(|&t| relu(t)).collect();
        let residual = apply(theta.slice(Some(l), ParamName::V), d, n, &act);
        let next: Vec<f64> = h.iter().zip(&residual).map(|(a, r)| a + r).collect();
        hidden.push(next);
        blocks.push(BlockTrace {
            projected,
            preact,
            act,
        });
    }
    let output = dot(theta.w(), hidden.last().expect("nonempty")) + theta.c();
    ForwardTrace {
        hidden,
        blocks,
        output,
    }
}

pub fn forward(spec: &ResNetSpec, theta: &Theta, x: &[f64]) -> Result<ForwardTrace> {
    check_theta(spec, theta)?;
    if x.len() != spec.d_x {
        return Err(Error::DimensionMismatch {
            expected: spec.d_x,
            got: x.len(),
        });
    }
    Ok(forward_unchecked(spec, theta, x))
}

/// Accumulates into `grad` the gradient of `gᵀ h_L` with respect to all
/// block parameters, where `g = grad_last_hidden`. Head entries are untouched.
///
/// ReLU derivative convention: `σ′(0) = 0`.
pub fn backprop_hidden(
    spec: &ResNetSpec,
    theta: &Theta,
    trace: &ForwardTrace,
    grad_last_hidden: &[f64],
    grad: &mut [f64],
) {
    let d = spec.d_x;
    let layout = &theta.layout;
    let mut g_h = grad_last_hidden.to_vec();
    for (l, b) in spec.blocks.iter().enumerate().rev() {
        let bt = &trace.blocks[l];
        let h_prev = &trace.hidden[l];
        let m = b.input_width(d);
        let n = b.output_width(d);

        let v_slot = layout.slot(Some(l), ParamName::V).expect("V present");
        for i in 0..d {
            if g_h[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                grad[v_slot.offset + i * n + j] += g_h[i] * bt.act[j];
            }
        }
        let g_a = apply_t(theta.slice(Some(l), ParamName::V), d, n, &g_h);
        let g_q: Vec<f64> = g_a
            .iter()
            .zip(&bt.preact)
            .map(|(g, q)| if *q > 0.0 { *g } else { 0.0 })
            .collect();
        let g_s = match b.inner() {
            InnerKind::Relu => g_q,
            InnerKind::AffineRelu { hidden: k } => {
                let z_slot = layout.slot(Some(l), ParamName::Z).expect("Z present");
                let zb_slot = layout.slot(Some(l), ParamName::ZBias).expect("z present");
                for i in 0..k {
                    grad[zb_slot.offset + i] += g_q[i];
                    for j in 0..m {
                        grad[z_slot.offset + i * m + j] += g_q[i] * bt.projected[j];
                    }
                }
                apply_t(theta.slice(Some(l), ParamName::Z), k, m, &g_q)
            }
        };
        if b.has_u() {
            let u_slot = layout.slot(Some(l), ParamName::U).expect("U present");
            for i in 0..m {
                if g_s[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    grad[u_slot.offset + i * d + j] += g_s[i] * h_prev[j];
                }
            }
            let back = apply_t(theta.slice(Some(l), ParamName::U), m, d, &g_s);
            g_h.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
        } else {
            g_h.iter_mut().zip(&g_s).for_each(|(a, b)| *a += b);
        }
    }
}

/// Value `(1/n) Σ_i weights_i f(x_i)` and its gradient in θ.
pub fn weighted_output_grad(
    spec: &ResNetSpec,
    theta: &Theta,
    inputs: &Matrix,
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_theta(spec, theta)?;
    if inputs.cols() != spec.d_x {
        return Err(Error::DimensionMismatch {
            expected: spec.d_x,
            got: inputs.cols(),
        });
    }
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut value = 0.0;
    for (i, &wt) in weights.iter().enumerate().take(n) {
        let trace = forward_unchecked(spec, theta, inputs.row(i));
        value += wt * trace.output;
        accumulate_sample(spec, theta, &trace, wt * inv_n, &mut grad);
    }
    Ok((value * inv_n, grad))
}

/// Adds `scale · ∂f(x)/∂θ` for one traced example.
fn accumulate_sample(spec: &ResNetSpec, theta: &Theta, trace: &ForwardTrace, scale: f64, grad: &mut [f64]) {
    if scale == 0.0 {
        return;
    }
    let layout = &theta.layout;
    let w_slot = layout.slot(None, ParamName::W).expect("head present");
    for (k, h) in trace.last_hidden().iter().enumerate() {
        grad[w_slot.offset + k] += scale * h;
    }
    if let Some(c_slot) = layout.slot(None, ParamName::C) {
        grad[c_slot.offset] += scale;
    }
    let g_last: Vec<f64> = theta.w().iter().map(|w| scale * w).collect();
    backprop_hidden(spec, theta, trace, &g_last, grad);
}

pub fn predictions(spec: &ResNetSpec, theta: &Theta, data: &Dataset) -> Result<Vec<f64>> {
    check_theta(spec, theta)?;
    check_data(spec, data)?;
    Ok((0..data.len())
        .map(|i| forward_unchecked(spec, theta, data.x(i)).output)
        .collect())
}

fn check_data(spec: &ResNetSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if data.d_x() != spec.d_x {
        return Err(Error::DimensionMismatch {
            expected: spec.d_x,
            got: data.d_x(),
        });
    }
    Ok(())
}

/// `R(θ) = (1/n) Σ ℓ(f(x_i); y_i)`
pub fn risk(spec: &ResNetSpec, theta: &Theta, data: &Dataset, loss: LossKind) -> Result<f64> {
    let preds = predictions(spec, theta, data)?;
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(data.labels()) {
        total += loss.eval(*p, *y)?.value;
    }
    Ok(total / data.len() as f64)
}

/// Risk and its exact gradient (with `σ′(0) = 0`).
pub fn risk_and_grad(
    spec: &ResNetSpec,
    theta: &Theta,
    data: &Dataset,
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    check_theta(spec, theta)?;
    check_data(spec, data)?;
    let inv_n = 1.0 / data.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut total = 0.0;
    for i in 0..data.len() {
        let trace = forward_unchecked(spec, theta, data.x(i));
        let e = loss.eval(trace.output, data.y(i))?;
        total += e.value;
        accumulate_sample(spec, theta, &trace, e.d1 * inv_n, &mut grad);
    }
    Ok((total * inv_n, grad))
}

/// Smallest `|pre-activation|` over every ReLU and every example; `+∞` for a
/// network without blocks.
pub fn kink_margin(spec: &ResNetSpec, theta: &Theta, data: &Dataset) -> Result<f64> {
    check_theta(spec, theta)?;
    check_data(spec, data)?;
    let mut margin = f64::INFINITY;
    for i in 0..data.len() {
        let trace = forward_unchecked(spec, theta, data.x(i));
        for bt in &trace.blocks {
            for q in &bt.preact {
                margin = margin.min(q.abs());
            }
        }
    }
    Ok(margin)
}

/// Symmetrised central differences of the analytic gradient, with step
/// `step·(1 + |θ_i|)` in coordinate `i`.
pub fn hessian_fd(
    spec: &ResNetSpec,
    theta: &Theta,
    data: &Dataset,
    loss: LossKind,
    step: f64,
) -> Result<Matrix> {
    let p = theta.len();
    if p > MAX_HESSIAN_PARAMS {
        return Err(Error::InvalidSpec(format!(
            "{p} parameters exceed the finite-difference Hessian limit of {MAX_HESSIAN_PARAMS}"
        )));
    }
    let margin = kink_margin(spec, theta, data)?;
    if margin <= 2.0 * step {
        return Err(Error::KinkTooClose {
            margin,
            required: 2.0 * step,
        });
    }
    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            let h = step * (1.0 + theta.values[i].abs());
            let mut plus = theta.clone();
            plus.values[i] += h;
            let mut minus = theta.clone();
            minus.values[i] -= h;
            let (_, gp) = risk_and_grad(spec, &plus, data, loss)?;
            let (_, gm) = risk_and_grad(spec, &minus, data, loss)?;
            Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(Matrix::from_fn(p, p, |i, j| 0.5 * (columns[j][i] + columns[i][j])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_block() -> BlockSpec {
        BlockSpec::First {
            inner: InnerKind::AffineRelu { hidden: 1 },
        }
    }

    #[test]
    fn layout_round_trip() {
        let spec = ResNetSpec::new(
            3,
            vec![
                BlockSpec::First {
                    inner: InnerKind::Relu,
                },
                BlockSpec::General {
                    m: 2,
                    inner: InnerKind::AffineRelu { hidden: 4 },
                },
                BlockSpec::SimpleVector,
            ],
        )
        .unwrap()
        .with_output_bias(true);
        let layout = spec.layout();
        // w 3, c 1, V1 9, V2 12, U2 6, Z 8, z 4, v 3, u 3
        assert_eq!(layout.len(), 3 + 1 + 9 + 12 + 6 + 8 + 4 + 3 + 3);
        for k in 0..layout.len() {
            let (b, name, r, c) = layout.locate(k).unwrap();
            assert_eq!(layout.index(b, name, r, c), Some(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Theta::random(&spec, &mut rng, 1.0);
        let back = Theta::from_flat(&spec, t.clone().into_vec()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn first_block_only_at_position_zero() {
        let err = ResNetSpec::new(2, vec![BlockSpec::SimpleVector, scalar_block()]);
        assert!(matches!(err, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn forward_rejects_wrong_input_dimension() {
        let spec = ResNetSpec::new(2, vec![BlockSpec::SimpleVector]).unwrap();
        let t = Theta::zeros(&spec);
        assert_eq!(
            forward(&spec, &t, &[1.0]).unwrap_err(),
            Error::DimensionMismatch { expected: 2, got: 1 }
        );
    }

    #[test]
    fn zero_parameters_give_identity_blocks() {
        let spec = ResNetSpec::new(
            3,
            vec![
                BlockSpec::First {
                    inner: InnerKind::Relu,
                },
                BlockSpec::General {
                    m: 2,
                    inner: InnerKind::Relu,
                },
            ],
        )
        .unwrap();
        let x = [0.3, -1.0, 2.0];
        let tr = forward(&spec, &Theta::zeros(&spec), &x).unwrap();
        for h in &tr.hidden {
            assert_eq!(h.as_slice(), &x);
        }
        assert_eq!(tr.output, 0.0);
    }

    #[test]
    fn single_scalar_block_output() {
        let rho = 0.7;
        let spec = ResNetSpec::new(1, vec![scalar_block()]).unwrap();
        let mut t = Theta::zeros(&spec);
        t.set(Some(0), ParamName::V, 0, 0, 0.5 * rho).unwrap();
        t.set(Some(0), ParamName::Z, 0, 0, 1.0).unwrap();
        t.set(Some(0), ParamName::ZBias, 0, 0, -3.0).unwrap();
        let expected = [0.0, 1.0, 2.0, 3.0, 4.0 + 0.5 * rho, 5.0 + rho];
        for (x, e) in (0..6).zip(expected) {
            let tr = forward(&spec, &t, &[x as f64]).unwrap();
            assert!((tr.hidden[1][0] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_parameters_squared_loss_head_gradient() {
        let spec = ResNetSpec::new(2, vec![BlockSpec::SimpleVector]).unwrap();
        let data = Dataset::new(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 1.0]]).unwrap(),
            vec![0.5, 2.0, -1.0],
        )
        .unwrap();
        let (_, g) = risk_and_grad(&spec, &Theta::zeros(&spec), &data, LossKind::Squared).unwrap();
        for k in 0..2 {
            let expected: f64 =
                -(2.0 / 3.0) * (0..3).map(|i| data.y(i) * data.x(i)[k]).sum::<f64>();
            assert!((g[k] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn kink_margin_examples() {
        let spec = ResNetSpec::new(2, vec![BlockSpec::SimpleVector]).unwrap();
        let data = Dataset::new(Matrix::identity(2), vec![1.0, 0.0]).unwrap();
        assert_eq!(kink_margin(&spec, &Theta::zeros(&spec), &data).unwrap(), 0.0);

        let mut t = Theta::zeros(&spec);
        t.set(Some(0), ParamName::U, 0, 0, 0.5).unwrap();
        t.set(Some(0), ParamName::U, 0, 1, 0.8).unwrap();
        assert!(kink_margin(&spec, &t, &data).unwrap() >= 0.5);

        let empty = ResNetSpec::new(2, vec![]).unwrap();
        assert_eq!(
            kink_margin(&empty, &Theta::zeros(&empty), &data).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn kink_margin_zero_at_breakpoint_data_point() {
        let spec = ResNetSpec::new(1, vec![scalar_block()]).unwrap().with_output_bias(true);
        let mut t = Theta::zeros(&spec);
        t.set(Some(0), ParamName::Z, 0, 0, 1.0).unwrap();
        t.set(Some(0), ParamName::ZBias, 0, 0, -3.0).unwrap();
        let xs: Vec<f64> = (0..6).map(f64::from).collect();
        let data = Dataset::scalar(&xs, &xs).unwrap();
        // oracle: min_i |x_i − 3|
        let oracle = xs.iter().map(|x| (x - 3.0).abs()).fold(f64::INFINITY, f64::min);
        assert_eq!(kink_margin(&spec, &t, &data).unwrap(), oracle);
        assert!(matches!(
            hessian_fd(&spec, &t, &data, LossKind::Squared, DEFAULT_FD_STEP),
            Err(Error::KinkTooClose { .. })
        ));
    }

    #[test]
    fn one_parameter_hessian() {
        let spec = ResNetSpec::new(1, vec![]).unwrap();
        let data = Dataset::scalar(&[1.0], &[0.0]).unwrap();
        let mut t = Theta::zeros(&spec);
        t.w_mut()[0] = 0.3;
        let h = hessian_fd(&spec, &t, &data, LossKind::Squared, DEFAULT_FD_STEP).unwrap();
        assert_eq!((h.rows(), h.cols()), (1, 1));
        assert!((h[(0, 0)] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn blockless_network_hessian_is_gram_matrix() {
        let spec = ResNetSpec::new(3, vec![]).unwrap().with_output_bias(true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::from_fn(7, 3, |_, _| rng.gen_range(-2.0..2.0));
        let y: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(x.clone(), y).unwrap();
        let t = Theta::random(&spec, &mut rng, 1.0);
        let h = hessian_fd(&spec, &t, &data, LossKind::Squared, DEFAULT_FD_STEP).unwrap();
        // closed form (2/n) Σ x̃ x̃ᵀ with x̃ = (x, 1)
        let aug = Matrix::from_fn(7, 4, |i, j| if j < 3 { x[(i, j)] } else { 1.0 });
        let gram = aug.transpose().matmul(&aug).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((h[(i, j)] - 2.0 * gram[(i, j)] / 7.0).abs() < 1e-7);
            }
        }
    }
}
