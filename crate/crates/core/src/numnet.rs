//! Minimal dense network core.
//!
//! Parameters live in one flat [`ParamVector`]. Each layer occupies a
//! `rows x (cols + 1)` block stored row-major, where a row is one output
//! neuron's incoming weights followed by its bias. That row is the atom
//! the evolution operators swap and perturb, so keeping it contiguous lets
//! [`RowHandle`]s hand out plain slices.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    LeakyRelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative expressed through the activation's output. Leaky ReLU
    /// preserves sign, so the output is enough to pick the branch.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if a > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

/// Shape of a fully connected network: hidden layers use `activation`,
/// the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Placement of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    /// Output width (number of neurons / rows).
    pub rows: usize,
    /// Input width.
    pub cols: usize,
    pub offset: usize,
}

impl LayerLayout {
    #[inline]
    pub fn row_width(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.row_width()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::LeakyRelu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "all layer widths must be positive, got {} -> {:?} -> {}",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.output_dim);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let layer = LayerLayout {
                    rows: w[1],
                    cols: w[0],
                    offset,
                };
                offset += layer.len();
                layer
            })
            .collect()
    }

    /// `sum over layers of (in * out + out)`.
    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerLayout::len).sum()
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut params = ParamVector::zeros(self.layout());
        for layer in params.layout.clone() {
            let limit = (6.0 / (layer.cols + layer.rows) as f64).sqrt();
            for r in 0..layer.rows {
                let start = layer.offset + r * layer.row_width();
                for w in &mut params.values[start..start + layer.cols] {
                    *w = rng.random_range(-limit..limit);
                }
            }
        }
        params
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout != self.layout() {
            return Err(Error::Config(
                "parameter layout does not match the network spec".into(),
            ));
        }
        Ok(())
    }

    /// Batched forward pass; `inputs` is `(batch, input_dim)`.
    pub fn forward_batch(&self, params: &ParamVector, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_cached(params, inputs.to_owned()).map(|(out, _)| out)
    }

    /// Forward pass that keeps each layer's input for a later [`MlpSpec::backward`].
    pub fn forward_cached(
        &self,
        params: &ParamVector,
        inputs: Array2<f64>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_params(params)?;
        if inputs.ncols() != self.input_dim {
            return Err(Error::Config(format!(
                "input width {} does not match network input_dim {}",
                inputs.ncols(),
                self.input_dim
            )));
        }
        let n_layers = params.layout.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut current = inputs;
        for (l, layer) in params.layout.iter().enumerate() {
            let w = params.weights(l);
            let b = params.bias(l);
            let mut z = current.dot(&w.t());
            z += &b;
            if l + 1 < n_layers {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            debug_assert_eq!(z.ncols(), layer.rows);
            layer_inputs.push(current);
            current = z;
        }
        Ok((current, ForwardCache { layer_inputs }))
    }

    /// Gradient of `sum over batch rows of <upstream_row, output_row>` with
    /// respect to the parameters.
    pub fn backward(
        &self,
        params: &ParamVector,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<ParamVector> {
        self.check_params(params)?;
        let n_layers = params.layout.len();
        let batch = cache.layer_inputs.first().map_or(0, |a| a.nrows());
        if upstream.ncols() != self.output_dim || upstream.nrows() != batch {
            return Err(Error::Config(format!(
                "upstream shape {:?} does not match (batch {}, output_dim {})",
                upstream.shape(),
                batch,
                self.output_dim
            )));
        }
        let mut grad = ParamVector::zeros(params.layout.clone());
        let mut delta = upstream.to_owned();
        for l in (0..n_layers).rev() {
            let layer = params.layout[l];
            let a_in = &cache.layer_inputs[l];
            let dw = delta.t().dot(a_in);
            let db = delta.sum_axis(Axis(0));
            for r in 0..layer.rows {
                let start = layer.offset + r * layer.row_width();
                let row = &mut grad.values[start..start + layer.row_width()];
                for (c, g) in row[..layer.cols].iter_mut().enumerate() {
                    *g = dw[[r, c]];
                }
                row[layer.cols] = db[r];
            }
            if l > 0 {
                let mut da = delta.dot(&params.weights(l));
                let act = self.activation;
                da.zip_mut_with(a_in, |d, &a| *d *= act.derivative_from_output(a));
                delta = da;
            }
        }
        Ok(grad)
    }
}

/// Per-layer inputs recorded by [`MlpSpec::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_inputs: Vec<Array2<f64>>,
}

/// Single-sample forward pass.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != spec.input_dim {
        return Err(Error::Config(format!(
            "input length {} does not match input_dim {}",
            input.len(),
            spec.input_dim
        )));
    }
    let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
    Ok(spec.forward_batch(params, x)?.row(0).to_vec())
}

/// Single-sample gradient of `<upstream, output>` with respect to the parameters.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    upstream: &[f64],
) -> Result<ParamVector> {
    if input.len() != spec.input_dim || upstream.len() != spec.output_dim {
        return Err(Error::Config(format!(
            "expected input {} / upstream {}, got {} / {}",
            spec.input_dim,
            spec.output_dim,
            input.len(),
            upstream.len()
        )));
    }
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
    let (_, cache) = spec.forward_cached(params, x)?;
    let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row");
    spec.backward(params, &cache, up)
}

/// Flat parameter store with per-layer row structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerLayout>,
}

/// One weight row plus its bias entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowHandle {
    pub layer: usize,
    pub index: usize,
    start: usize,
    width: usize,
}

impl RowHandle {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

impl ParamVector {
    pub fn zeros(layout: Vec<LayerLayout>) -> Self {
        let len = layout.iter().map(LayerLayout::len).sum();
        Self {
            values: vec![0.0; len],
            layout,
        }
    }

    pub fn from_values(layout: Vec<LayerLayout>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayerLayout::len).sum();
        if values.len() != expected {
            return Err(Error::Config(format!(
                "layout needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.layout.len()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    /// Bitwise equality of values (distinguishes `-0.0` and NaN payloads).
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Weight matrix of `layer` as a `(rows, cols)` strided view.
    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let l = self.layout[layer];
        let block = &self.values[l.offset..l.offset + l.len()];
        ArrayView2::from_shape((l.rows, l.cols).strides((l.row_width(), 1)), block)
            .expect("layer block fits its layout")
    }

    /// Bias vector of `layer` as a strided view.
    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let l = self.layout[layer];
        let block = &self.values[l.offset + l.cols..l.offset + l.len()];
        ArrayView1::from_shape((l.rows,).strides((l.row_width(),)), block)
            .expect("layer block fits its layout")
    }

    /// Row handles of one layer.
    pub fn row_views(&self, layer: usize) -> Result<Vec<RowHandle>> {
        let l = self.layout.get(layer).ok_or_else(|| {
            Error::Config(format!(
                "layer {layer} out of range ({} layers)",
                self.layout.len()
            ))
        })?;
        Ok((0..l.rows)
            .map(|index| RowHandle {
                layer,
                index,
                start: l.offset + index * l.row_width(),
                width: l.row_width(),
            })
            .collect())
    }

    /// Every row handle of every layer, in storage order.
    pub fn all_rows(&self) -> Vec<RowHandle> {
        (0..self.layout.len())
            .flat_map(|l| self.row_views(l).expect("layer index in range"))
            .collect()
    }

    pub fn total_rows(&self) -> usize {
        self.layout.iter().map(|l| l.rows).sum()
    }

    #[inline]
    pub fn row(&self, handle: RowHandle) -> &[f64] {
        &self.values[handle.range()]
    }

    #[inline]
    pub fn row_mut(&mut self, handle: RowHandle) -> &mut [f64] {
        &mut self.values[handle.range()]
    }

    /// Overwrite one row with the same row of `other`.
    pub fn copy_row_from(&mut self, other: &ParamVector, handle: RowHandle) {
        let range = handle.range();
        self.values[range.clone()].copy_from_slice(&other.values[range]);
    }

    /// Rebuild a vector from rows listed in storage order.
    pub fn from_rows(layout: Vec<LayerLayout>, rows: &[Vec<f64>]) -> Result<Self> {
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_values(layout, values)
    }
}

/// Adam moments with the standard defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One bias-corrected Adam update. Nothing is modified when a gradient
    /// entry is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Config(format!(
                "adam length mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(
    params: &mut ParamVector,
    grads: &ParamVector,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(Error::Config("gradient layout differs from parameters".into()));
    }
    state.step(&mut params.values, &grads.values, lr)
}
