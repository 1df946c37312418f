//! Fully connected sigmoid network with a softmax output layer, trained by
//! plain mini-batch SGD on mean softmax cross-entropy.
//!
//! The experiment family is `[N, N, 10]` with `N = 49 * k`; the engine itself
//! accepts any chain of layer sizes. Every layer but the last is sigmoid.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mnist_io::{LabeledDataset, NUM_CLASSES};

/// Length of a decimated input vector; the over-sampled width is `BASE_WIDTH * k`.
pub const BASE_WIDTH: usize = 49;
pub const DEFAULT_EPOCHS: usize = 400;
pub const DEFAULT_CHECKPOINTS: [usize; 5] = [25, 50, 100, 200, 400];
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_BATCH_SIZE: usize = 100;
const PROB_FLOOR: f64 = 1e-12;
const MODEL_MAGIC: &[u8; 6] = b"OSMLP1";
const EVAL_CHUNK: usize = 500;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(out, in)`; row `i` holds the incoming weights of unit `i`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn activation_for(index: usize, count: usize) -> Activation {
    if index + 1 == count {
        Activation::Softmax
    } else {
        Activation::Sigmoid
    }
}

impl MlpModel {
    /// Assembles a model from explicit parameters. `(weights, biases)` pairs
    /// must chain; the last layer gets softmax, the rest sigmoid.
    pub fn from_parameters(params: Vec<(Array2<f64>, Array1<f64>)>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Shape("a model needs at least one layer".into()));
        }
        let count = params.len();
        let mut layers = Vec::with_capacity(count);
        for (i, (weights, biases)) in params.into_iter().enumerate() {
            if biases.len() != weights.nrows() {
                return Err(Error::Shape(format!(
                    "layer {i}: {} biases for {} units",
                    biases.len(),
                    weights.nrows()
                )));
            }
            if let Some(prev) = layers.last().map(Layer::outputs) {
                if weights.ncols() != prev {
                    return Err(Error::Shape(format!(
                        "layer {i} takes {} inputs but layer {} has {prev} units",
                        weights.ncols(),
                        i - 1
                    )));
                }
            }
            layers.push(Layer {
                weights,
                biases,
                activation: activation_for(i, count),
            });
        }
        Ok(Self { layers })
    }

    /// `dims = [input, hidden.., output]`; weights uniform on ±1/√fan_in,
    /// biases zero.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {dims:?}")));
        }
        let mut rng = rng_for(seed, STREAM_INIT);
        let params = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    rng.random_range(-bound..=bound)
                });
                (w, Array1::zeros(fan_out))
            })
            .collect();
        Self::from_parameters(params)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("invalid layer sizes {dims:?}")));
        }
        Self::from_parameters(
            dims.windows(2)
                .map(|p| (Array2::zeros((p[1], p[0])), Array1::zeros(p[1])))
                .collect(),
        )
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Unit counts per layer, e.g. `[49, 49, 10]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::outputs).collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
        })
    }
}

/// The `[49k, 49k, 10]` model for over-sampling factor `k`.
pub fn init_model(k: usize, seed: u64) -> Result<MlpModel> {
    if k < 1 {
        return Err(Error::Config("oversample factor must be at least 1".into()));
    }
    let n = BASE_WIDTH * k;
    MlpModel::random(&[n, n, n, NUM_CLASSES], seed)
}

pub fn count_parameters(model: &MlpModel) -> usize {
    model
        .layers
        .iter()
        .map(|l| l.outputs() * l.inputs() + l.outputs())
        .sum()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Max-subtracted softmax in place.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Per-layer activations for one input; the last entry is the softmax output.
pub fn forward(model: &MlpModel, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    if input.len() != model.input_len() {
        return Err(Error::Shape(format!(
            "input length {} but model expects {}",
            input.len(),
            model.input_len()
        )));
    }
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
    Ok(forward_batch(model, x)
        .into_iter()
        .map(|a| a.into_raw_vec_and_offset().0)
        .collect())
}

fn affine(layer: &Layer, input: ArrayView2<f64>) -> Array2<f64> {
    let mut z = input.dot(&layer.weights.t());
    z += &layer.biases;
    z
}

fn activate(activation: Activation, z: &mut Array2<f64>) {
    match activation {
        Activation::Sigmoid => z.mapv_inplace(sigmoid),
        Activation::Softmax => z.rows_mut().into_iter().for_each(|mut row| {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }),
    }
}

fn forward_batch(model: &MlpModel, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let input = outputs.last().map_or(x, |a| a.view());
        let mut z = affine(layer, input);
        activate(layer.activation, &mut z);
        outputs.push(z);
    }
    outputs
}

/// `-ln p[label]` with `p` floored at 1e-12.
pub fn loss_cross_entropy(probabilities: &[f64], label: u8) -> Result<f64> {
    let p = probabilities
        .get(label as usize)
        .filter(|_| (label as usize) < NUM_CLASSES);
    match p {
        Some(&p) => Ok(-p.max(PROB_FLOOR).ln()),
        None => Err(Error::Shape(format!("label {label} is not a class index"))),
    }
}

/// Parameter-shaped gradient (or update) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Inverted dropout is applied only when training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Per-unit multipliers: 0 with probability `rate`, otherwise `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_dropout_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect())
}

pub fn apply_inverted_dropout<R: Rng + ?Sized>(
    activations: &mut [f64],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<()> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(());
    }
    let mask = dropout_mask(activations.len(), rate, rng)?;
    activations.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
    Ok(())
}

fn stack_rows(rows: &[&[f64]], width: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Shape(format!(
                "sample {i} has length {} but model expects {width}",
                row.len()
            )));
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(*row));
    }
    Ok(x)
}

/// Backpropagation over one batch. Returns gradients of the mean loss and
/// the mean loss itself.
fn batch_gradients(
    model: &MlpModel,
    x: ArrayView2<f64>,
    labels: &[u8],
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(Gradients, f64)> {
    let batch = x.nrows();
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{batch} samples but {} labels",
            labels.len()
        )));
    }
    let last = model.layers.len() - 1;
    // `used[l]` feeds layer l+1; `raw[l]` is the unmasked sigmoid output.
    let mut raw: Vec<Array2<f64>> = Vec::with_capacity(last + 1);
    let mut masks: Vec<Option<Array2<f64>>> = Vec::with_capacity(last);
    let mut used: Vec<Array2<f64>> = Vec::with_capacity(last);
    for (l, layer) in model.layers.iter().enumerate() {
        let input = if l == 0 { x } else { used[l - 1].view() };
        let mut z = affine(layer, input);
        activate(layer.activation, &mut z);
        if l < last {
            let mask = match dropout.as_mut() {
                Some((rate, rng)) if *rate > 0.0 => {
                    let m = dropout_mask(z.len(), *rate, &mut **rng)?;
                    Some(Array2::from_shape_vec(z.raw_dim(), m).expect("mask shape"))
                }
                _ => None,
            };
            used.push(match &mask {
                Some(m) => &z * m,
                None => z.clone(),
            });
            masks.push(mask);
        }
        raw.push(z);
    }

    let probs = &raw[last];
    let mut loss = 0.0;
    let mut delta = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        if label as usize >= delta.ncols() {
            return Err(Error::Shape(format!("label {label} is not a class index")));
        }
        loss -= probs[[i, label as usize]].max(PROB_FLOOR).ln();
        delta[[i, label as usize]] -= 1.0;
    }
    let scale = 1.0 / batch as f64;
    delta.mapv_inplace(|d| d * scale);

    let mut grad_w = Vec::with_capacity(last + 1);
    let mut grad_b = Vec::with_capacity(last + 1);
    for l in (0..=last).rev() {
        let input = if l == 0 { x } else { used[l - 1].view() };
        grad_w.push(delta.t().dot(&input));
        grad_b.push(delta.sum_axis(Axis(0)));
        if l > 0 {
            let mut back = delta.dot(&model.layers[l].weights);
            let a = &raw[l - 1];
            back.zip_mut_with(a, |d, &a| *d *= a * (1.0 - a));
            if let Some(mask) = &masks[l - 1] {
                back *= mask;
            }
            delta = back;
        }
    }
    grad_w.reverse();
    grad_b.reverse();
    Ok((
        Gradients {
            weights: grad_w,
            biases: grad_b,
        },
        loss * scale,
    ))
}

/// Gradients of the mean cross-entropy over `inputs`/`labels`.
pub fn backward(model: &MlpModel, inputs: &[&[f64]], labels: &[u8]) -> Result<Gradients> {
    if inputs.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let x = stack_rows(inputs, model.input_len())?;
    batch_gradients(model, x.view(), labels, None).map(|(g, _)| g)
}

/// Mean cross-entropy of the model over a batch (no dropout).
pub fn mean_loss(model: &MlpModel, inputs: &[&[f64]], labels: &[u8]) -> Result<f64> {
    let x = stack_rows(inputs, model.input_len())?;
    let probs = forward_batch(model, x.view())
        .pop()
        .expect("at least one layer");
    let mut total = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        total += loss_cross_entropy(row.as_slice().expect("standard layout"), label)?;
    }
    Ok(total / labels.len() as f64)
}

/// `θ ← θ − η·g`. Rejects non-finite gradients before touching the model.
pub fn sgd_step(model: &mut MlpModel, gradients: &Gradients, learning_rate: f64) -> Result<()> {
    if gradients.weights.len() != model.layers.len() || gradients.biases.len() != model.layers.len()
    {
        return Err(Error::Shape(
            "gradient layer count differs from model".into(),
        ));
    }
    for (l, layer) in model.layers.iter().enumerate() {
        if gradients.weights[l].dim() != layer.weights.dim()
            || gradients.biases[l].len() != layer.biases.len()
        {
            return Err(Error::Shape(format!(
                "gradient shape mismatch at layer {l}"
            )));
        }
    }
    if !gradients.is_finite() {
        return Err(Error::Numerics("non-finite gradient".into()));
    }
    for (l, layer) in model.layers.iter_mut().enumerate() {
        layer
            .weights
            .scaled_add(-learning_rate, &gradients.weights[l]);
        layer
            .biases
            .scaled_add(-learning_rate, &gradients.biases[l]);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Full sweeps over the training set.
    pub epochs: usize,
    /// Strictly increasing, each in `1..=epochs`.
    pub checkpoint_epochs: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            checkpoint_epochs: DEFAULT_CHECKPOINTS.to_vec(),
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            dropout_rate: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        check_dropout_rate(self.dropout_rate)?;
        let mut prev = 0;
        for &c in &self.checkpoint_epochs {
            if c <= prev || c > self.epochs {
                return Err(Error::Config(format!(
                    "checkpoints {:?} must be strictly increasing within 1..={}",
                    self.checkpoint_epochs, self.epochs
                )));
            }
            prev = c;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub oversample_factor: usize,
    pub epoch: usize,
    pub test_error: f64,
    /// Mean crest factor (dB) of layers 1, 2 and 3.
    pub mean_crest_db_per_layer: [f64; 3],
}

fn check_width(data: &LabeledDataset, model: &MlpModel, name: &str) -> Result<()> {
    if data.vector_length() != model.input_len() {
        return Err(Error::Shape(format!(
            "{name} vectors have length {} but the model expects {}",
            data.vector_length(),
            model.input_len()
        )));
    }
    Ok(())
}

/// Runs `config.epochs` sweeps of shuffled mini-batch SGD, recording test
/// error and the hook's per-layer crest factors at each checkpoint epoch.
pub fn train_with_checkpoints<F>(
    model: &mut MlpModel,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &TrainConfig,
    oversample_factor: usize,
    mut spectral_hook: F,
) -> Result<Vec<CheckpointRecord>>
where
    F: FnMut(&MlpModel) -> Result<[f64; 3]>,
{
    config.validate()?;
    check_width(train, model, "training")?;
    check_width(test, model, "test")?;
    if config.epochs > 0 && train.is_empty() {
        return Err(Error::Shape("empty training set".into()));
    }
    let mut shuffle_rng = rng_for(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = rng_for(config.seed, STREAM_DROPOUT);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let width = model.input_len();
    let mut records = Vec::with_capacity(config.checkpoint_epochs.len());
    let mut next_checkpoint = config.checkpoint_epochs.iter().peekable();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut x = Array2::zeros((chunk.len(), width));
            let mut labels = Vec::with_capacity(chunk.len());
            for (row, &i) in chunk.iter().enumerate() {
                x.slice_mut(s![row, ..])
                    .assign(&ndarray::ArrayView1::from(train.input(i)));
                labels.push(train.label(i));
            }
            let dropout =
                (config.dropout_rate > 0.0).then_some((config.dropout_rate, &mut dropout_rng));
            let (grads, loss) = batch_gradients(model, x.view(), &labels, dropout)?;
            sgd_step(model, &grads, config.learning_rate)
                .map_err(|e| e.context(format!("epoch {epoch}")))?;
            debug_assert!(model.is_finite(), "non-finite parameter after update");
            epoch_loss += loss * chunk.len() as f64;
        }
        log::debug!(
            "k={oversample_factor} epoch {epoch}: mean training loss {:.6}",
            epoch_loss / train.len() as f64
        );
        if next_checkpoint.peek() == Some(&&epoch) {
            next_checkpoint.next();
            let test_error = evaluate_error(model, test)?;
            let crest = spectral_hook(model)?;
            log::info!(
                "k={oversample_factor} epoch {epoch}: test error {test_error:.4}, crest dB {crest:.3?}"
            );
            records.push(CheckpointRecord {
                oversample_factor,
                epoch,
                test_error,
                mean_crest_db_per_layer: crest,
            });
        }
    }
    Ok(records)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose predicted class differs from the label.
pub fn evaluate_error(model: &MlpModel, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Shape("empty test set".into()));
    }
    check_width(test, model, "test")?;
    let mut wrong = 0usize;
    let indices: Vec<usize> = (0..test.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let rows: Vec<&[f64]> = chunk.iter().map(|&i| test.input(i)).collect();
        let x = stack_rows(&rows, model.input_len())?;
        let probs = forward_batch(model, x.view())
            .pop()
            .expect("at least one layer");
        for (row, &i) in probs.rows().into_iter().zip(chunk) {
            if argmax(row.as_slice().expect("standard layout")) != test.label(i) as usize {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / test.len() as f64)
}

/// Serializes to the `OSMLP1` container: magic, layer count, `(out, in)`
/// per layer (u64 LE), then every layer's row-major weights followed by its
/// biases (f64 LE).
pub fn save_model(model: &MlpModel) -> Vec<u8> {
    let params = count_parameters(model);
    let mut out = Vec::with_capacity(6 + 8 + 16 * model.layers.len() + 8 * params);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(model.layers.len() as u64).to_le_bytes());
    for layer in &model.layers {
        out.extend_from_slice(&(layer.outputs() as u64).to_le_bytes());
        out.extend_from_slice(&(layer.inputs() as u64).to_le_bytes());
    }
    for layer in &model.layers {
        for w in layer.weights.iter() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in layer.biases.iter() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::Format(format!(
                "model container truncated in {what}"
            ))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format("parameter count overflows".into()))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_model(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MODEL_MAGIC.len(), "magic")? != MODEL_MAGIC {
        return Err(Error::Format("not an OSMLP1 model container".into()));
    }
    let count = r.u64("layer count")? as usize;
    if count == 0 || count > 1024 {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let mut dims = Vec::with_capacity(count);
    for l in 0..count {
        let out = r.u64("layer dimensions")? as usize;
        let inp = r.u64("layer dimensions")? as usize;
        if out == 0 || inp == 0 {
            return Err(Error::Format(format!("layer {l} has a zero dimension")));
        }
        dims.push((out, inp));
    }
    let mut payload = 0usize;
    for &(out, inp) in &dims {
        payload = out
            .checked_mul(inp)
            .and_then(|w| w.checked_add(out))
            .and_then(|p| p.checked_add(payload))
            .ok_or_else(|| Error::Format("parameter count overflows".into()))?;
    }
    let remaining = bytes.len() - r.pos;
    if payload.checked_mul(8) != Some(remaining) {
        return Err(Error::Format(format!(
            "header declares {payload} parameters but {remaining} payload bytes follow"
        )));
    }
    let mut params = Vec::with_capacity(count);
    for &(out, inp) in &dims {
        let w = Array2::from_shape_vec((out, inp), r.f64s(out * inp, "weights")?)
            .expect("shape checked");
        let b = Array1::from(r.f64s(out, "biases")?);
        params.push((w, b));
    }
    MlpModel::from_parameters(params).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnist_io::LabelSet;

    #[test]
    fn full_and_base_architectures() {
        let m1 = init_model(1, 0).unwrap();
        assert_eq!(m1.layer_dims(), vec![49, 49, 10]);
        assert_eq!(m1.input_len(), 49);
        assert_eq!(
            m1.activations(),
            vec![
                Activation::Sigmoid,
                Activation::Sigmoid,
                Activation::Softmax
            ]
        );
        let m16 = init_model(16, 0).unwrap();
        assert_eq!(m16.layer_dims(), vec![784, 784, 10]);
        assert!(matches!(init_model(0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_model(2, 42).unwrap();
        assert_eq!(a, init_model(2, 42).unwrap());
        assert_ne!(a, init_model(2, 43).unwrap());
        for layer in a.layers() {
            let bound = 1.0 / (layer.inputs() as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= bound));
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_parameters(&init_model(1, 0).unwrap()), 5400);
        assert_eq!(count_parameters(&init_model(16, 0).unwrap()), 1_238_730);
        assert_eq!(
            count_parameters(&MlpModel::zeros(&[1, 1, 1, 10]).unwrap()),
            24
        );
    }

    #[test]
    fn zero_model_outputs_uniform() {
        let model = MlpModel::zeros(&[5, 4, 3, 10]).unwrap();
        let acts = forward(&model, &[0.3, -1.0, 2.0, 0.0, 4.0]).unwrap();
        assert!(acts[0].iter().chain(&acts[1]).all(|&a| a == 0.5));
        assert!(acts[2].iter().all(|&p| (p - 0.1).abs() < 1e-15));
        assert!(matches!(forward(&model, &[0.0; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_extremes_stay_normalized() {
        let mut z = vec![
            1000.0, -1000.0, 999.0, 0.0, -999.5, 1000.0, 3.0, 0.0, 0.0, -1.0,
        ];
        softmax_in_place(&mut z);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(z.iter().all(|p| p.is_finite() && *p >= 0.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut onehot = [0.0; 10];
        onehot[4] = 1.0;
        assert_eq!(loss_cross_entropy(&onehot, 4).unwrap(), 0.0);
        let uniform = [0.1; 10];
        assert!((loss_cross_entropy(&uniform, 0).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert_eq!(loss_cross_entropy(&onehot, 3).unwrap(), -(1e-12f64).ln());
        assert!(matches!(
            loss_cross_entropy(&uniform, 10),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn output_delta_vanishes_for_confident_correct_prediction() {
        // Output bias large enough that softmax is exactly one-hot in f64.
        let mut model = MlpModel::zeros(&[3, 2, 2, 10]).unwrap();
        model.layers_mut()[2].biases[7] = 800.0;
        let x = [0.1, 0.2, 0.3];
        let g = backward(&model, &[&x], &[7]).unwrap();
        assert!(g.biases[2].iter().all(|&d| d == 0.0));
        assert!(g.weights[2].iter().all(|&d| d == 0.0));
    }

    #[test]
    fn duplicated_batch_matches_single_sample() {
        let model = MlpModel::random(&[6, 6, 6, 10], 3).unwrap();
        let x = [0.5, -0.2, 0.1, 0.9, -0.7, 0.3];
        let one = backward(&model, &[&x], &[2]).unwrap();
        let two = backward(&model, &[&x, &x], &[2, 2]).unwrap();
        for (a, b) in one.weights.iter().zip(&two.weights) {
            assert!(a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-15));
        }
    }

    #[test]
    fn sgd_step_contracts() {
        let mut model = MlpModel::random(&[4, 3, 3, 10], 1).unwrap();
        let original = model.clone();
        let x = [1.0, 0.0, -1.0, 0.5];
        let g = backward(&model, &[&x], &[1]).unwrap();
        sgd_step(&mut model, &g, 0.0).unwrap();
        assert_eq!(model, original);
        let zero = Gradients {
            weights: g
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: g.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        };
        sgd_step(&mut model, &zero, 0.5).unwrap();
        assert_eq!(model, original);

        sgd_step(&mut model, &g, 0.25).unwrap();
        let expected = original.layers()[0].weights[[1, 2]] - 0.25 * g.weights[0][[1, 2]];
        assert_eq!(model.layers()[0].weights[[1, 2]], expected);

        let mut bad = g.clone();
        bad.biases[1][0] = f64::NAN;
        let before = model.clone();
        assert!(matches!(
            sgd_step(&mut model, &bad, 0.1),
            Err(Error::Numerics(_))
        ));
        assert_eq!(model, before);
    }

    #[test]
    fn dropout_contracts() {
        let mut rng = rng_for(9, 0);
        let mut a = vec![0.3; 8];
        apply_inverted_dropout(&mut a, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(a, vec![0.3; 8]);
        apply_inverted_dropout(&mut a, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, vec![0.3; 8]);
        apply_inverted_dropout(&mut a, 0.5, Mode::Train, &mut rng).unwrap();
        assert!(a.iter().all(|&v| v == 0.0 || v == 0.6));
        assert!(matches!(
            apply_inverted_dropout(&mut a, 1.0, Mode::Train, &mut rng),
            Err(Error::Config(_))
        ));

        let m1 = dropout_mask(1000, 0.5, &mut rng_for(4, 2)).unwrap();
        let m2 = dropout_mask(1000, 0.5, &mut rng_for(4, 2)).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn dropout_zero_fraction_monte_carlo() {
        let mask = dropout_mask(100_000, 0.5, &mut rng_for(17, 2)).unwrap();
        let zeroed = mask.iter().filter(|&&m| m == 0.0).count() as f64 / mask.len() as f64;
        assert!((zeroed - 0.5).abs() < 0.01, "zeroed fraction {zeroed}");
    }

    fn constant_class_model(class: usize) -> MlpModel {
        let mut model = MlpModel::zeros(&[3, 2, 2, 10]).unwrap();
        model.layers_mut()[2].biases[class] = 5.0;
        model
    }

    fn toy_set(labels: &[u8]) -> LabeledDataset {
        let inputs = labels.iter().map(|&l| vec![l as f64, 1.0, -1.0]).collect();
        LabeledDataset::from_vectors(inputs, LabelSet::new(labels.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn evaluation_error_examples() {
        let data = toy_set(&[3, 3, 1, 3, 0, 3, 9, 3]);
        let err = evaluate_error(&constant_class_model(3), &data).unwrap();
        assert!((err - (1.0 - 5.0 / 8.0)).abs() < 1e-15);
        // Zero model: uniform output, tie goes to class 0.
        let zero = MlpModel::zeros(&[3, 2, 2, 10]).unwrap();
        assert_eq!(evaluate_error(&zero, &toy_set(&[0, 0])).unwrap(), 0.0);
        assert!(matches!(
            evaluate_error(&zero, &toy_set(&[])),
            Err(Error::Shape(_))
        ));
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn training_schedule() {
        let data = toy_set(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let base = MlpModel::random(&[3, 4, 4, 10], 5).unwrap();
        let hook = |_: &MlpModel| Ok([1.0, 2.0, 3.0]);

        let mut model = base.clone();
        let cfg = TrainConfig {
            epochs: 0,
            checkpoint_epochs: vec![],
            ..TrainConfig::default()
        };
        let recs = train_with_checkpoints(&mut model, &data, &data, &cfg, 1, hook).unwrap();
        assert!(recs.is_empty());
        assert_eq!(model, base);

        let cfg = TrainConfig {
            epochs: 1,
            checkpoint_epochs: vec![1],
            batch_size: 3,
            ..TrainConfig::default()
        };
        let recs = train_with_checkpoints(&mut model, &data, &data, &cfg, 7, hook).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!((recs[0].epoch, recs[0].oversample_factor), (1, 7));
        assert_eq!(recs[0].mean_crest_db_per_layer, [1.0, 2.0, 3.0]);
        assert_ne!(model, base);

        let bad = TrainConfig {
            epochs: 3,
            checkpoint_epochs: vec![2, 2],
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_with_checkpoints(&mut model, &data, &data, &bad, 1, hook),
            Err(Error::Config(_))
        ));
        let wide = MlpModel::random(&[4, 2, 2, 10], 0).unwrap();
        assert!(matches!(
            train_with_checkpoints(&mut wide.clone(), &data, &data, &cfg, 1, hook),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn container_round_trip_and_corruption() {
        let model = MlpModel::random(&[5, 4, 3, 10], 8).unwrap();
        let bytes = save_model(&model);
        assert_eq!(&bytes[..6], b"OSMLP1");
        assert_eq!(load_model(&bytes).unwrap(), model);

        assert!(matches!(
            load_model(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(load_model(&bytes[..20]), Err(Error::Format(_))));
        let mut wrong_dims = bytes.clone();
        wrong_dims[14..22].copy_from_slice(&5u64.to_le_bytes());
        assert!(matches!(load_model(&wrong_dims), Err(Error::Format(_))));
        let mut wrong_magic = bytes;
        wrong_magic[0] = b'X';
        assert!(matches!(load_model(&wrong_magic), Err(Error::Format(_))));
    }
}
