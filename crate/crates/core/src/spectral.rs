//! Filter selectivity of learned weights.
//!
//! Each neuron's incoming weight row is treated as FIR coefficients. Its
//! transfer function is the one-sided DFT magnitude over bins `0..=N/2`
//! (DC included, no zero padding, bias excluded). Selectivity is the crest
//! factor `g = 10·log10(max|H| / min|H|)` in dB, with the minimum clamped to
//! `max·1e-12`, so `g` lies in `[0, 120]`.

use std::fmt::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::network::MlpModel;

pub const MIN_RELATIVE_MAGNITUDE: f64 = 1e-12;
pub const MAX_CREST_DB: f64 = 120.0;

/// Human-readable statement of the conventions above, echoed in reports.
pub const CONVENTIONS: &str = "H = |DFT(weights)|, one-sided bins 0..=N/2 with DC, \
DFT length = fan-in (no padding), biases excluded; g = 10*log10(max H / min H) dB \
with min clamped to max*1e-12 (g <= 120 dB), g = 0 when max H = 0; \
layer value = arithmetic mean over units";

#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub magnitudes: Vec<f64>,
    pub source_length: usize,
}

impl TransferFunction {
    /// `bin magnitude` pairs, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (bin, m) in self.magnitudes.iter().enumerate() {
            writeln!(out, "{bin} {m:e}").unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CrestFactorDb(pub f64);

/// Reusable FFT plan for one filter length.
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Shape(format!("filter length {len} is below 2")));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            fft,
            len,
            buffer: vec![Complex::default(); len],
            scratch,
        })
    }

    pub fn transfer_function(&mut self, weights: &[f64]) -> Result<TransferFunction> {
        if weights.len() != self.len {
            return Err(Error::Shape(format!(
                "analyzer built for length {} got {}",
                self.len,
                weights.len()
            )));
        }
        if let Some(pos) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Numerics(format!("non-finite weight at tap {pos}")));
        }
        for (b, &w) in self.buffer.iter_mut().zip(weights) {
            *b = Complex::new(w, 0.0);
        }
        self.fft
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        Ok(TransferFunction {
            magnitudes: self.buffer[..=self.len / 2]
                .iter()
                .map(|c| c.norm())
                .collect(),
            source_length: self.len,
        })
    }
}

pub fn dft_magnitude(weights: &[f64]) -> Result<TransferFunction> {
    SpectrumAnalyzer::new(weights.len())?.transfer_function(weights)
}

pub fn crest_factor_db(h: &TransferFunction) -> CrestFactorDb {
    let max = h.magnitudes.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return CrestFactorDb(0.0);
    }
    let min = h.magnitudes.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = min.max(max * MIN_RELATIVE_MAGNITUDE);
    CrestFactorDb((10.0 * (max / floor).log10()).clamp(0.0, MAX_CREST_DB))
}

/// Mean crest factor over the units of layer `layer_index` (1-based: 1 and 2
/// are the hidden layers, 3 the softmax output).
pub fn layer_mean_crest_db(model: &MlpModel, layer_index: usize) -> Result<f64> {
    let layer = layer_index
        .checked_sub(1)
        .and_then(|i| model.layers().get(i))
        .ok_or_else(|| {
            Error::Shape(format!(
                "layer index {layer_index} outside 1..={}",
                model.layers().len()
            ))
        })?;
    let mut analyzer = SpectrumAnalyzer::new(layer.inputs())?;
    let mut total = 0.0;
    for row in layer.weights.rows() {
        let row = row.to_vec();
        total += crest_factor_db(&analyzer.transfer_function(&row)?).0;
    }
    Ok(total / layer.outputs() as f64)
}

/// Mean crest factor for layers 1, 2 and 3; the training checkpoint hook.
pub fn all_layer_crest_db(model: &MlpModel) -> Result<[f64; 3]> {
    Ok([
        layer_mean_crest_db(model, 1)?,
        layer_mean_crest_db(model, 2)?,
        layer_mean_crest_db(model, 3)?,
    ])
}

/// Whether scaling the filter by `c` leaves its crest factor unchanged
/// (within 1e-9 dB). Always true for valid input.
pub fn scale_invariance_check(weights: &[f64], c: f64) -> Result<bool> {
    if c == 0.0 || !c.is_finite() {
        return Err(Error::Config(format!(
            "scale {c} must be finite and nonzero"
        )));
    }
    let scaled: Vec<f64> = weights.iter().map(|w| c * w).collect();
    let g = crest_factor_db(&dft_magnitude(weights)?).0;
    let gc = crest_factor_db(&dft_magnitude(&scaled)?).0;
    Ok((g - gc).abs() <= 1e-9)
}
