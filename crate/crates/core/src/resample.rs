//! Input preprocessing: per-vector zero-mean normalization, decimation of the
//! unpacked 784-sample image vector, and interpolation back up by an
//! over-sampling factor.
//!
//! All filters are Hann-windowed sinc lowpass kernels with odd length and
//! linear phase. Signal edges use whole-sample symmetric reflection
//! (`x[-i] = x[i]`, `x[n-1+i] = x[n-1-i]`), applied to input indices.

use std::f64::consts::PI;
use std::fmt::Write;

use crate::error::{Error, Result};

pub const DEFAULT_DECIMATION: usize = 16;
pub const DEFAULT_OVERSAMPLE_FACTORS: [usize; 5] = [1, 2, 4, 8, 16];
pub const DEFAULT_TAPS_PER_PHASE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolationKernel {
    /// Windowed-sinc interpolation with `taps_per_phase * k + 1` taps.
    WindowedSinc {
        taps_per_phase: usize,
        window: Window,
    },
    /// Piecewise-linear interpolation between neighbouring samples.
    Linear,
}

impl InterpolationKernel {
    pub fn name(&self) -> &'static str {
        match self {
            InterpolationKernel::WindowedSinc { .. } => "sinc",
            InterpolationKernel::Linear => "linear",
        }
    }
}

impl Default for InterpolationKernel {
    fn default() -> Self {
        InterpolationKernel::WindowedSinc {
            taps_per_phase: DEFAULT_TAPS_PER_PHASE,
            window: Window::Hann,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleSpec {
    pub decimation_factor: usize,
    pub oversample_factor: usize,
    pub kernel: InterpolationKernel,
    /// Lowpass before striding. When false, decimation keeps every
    /// `decimation_factor`-th sample directly.
    pub antialias_decimation: bool,
}

impl Default for ResampleSpec {
    fn default() -> Self {
        Self {
            decimation_factor: DEFAULT_DECIMATION,
            oversample_factor: 1,
            kernel: InterpolationKernel::default(),
            antialias_decimation: true,
        }
    }
}

impl ResampleSpec {
    pub fn with_oversample(oversample_factor: usize) -> Self {
        Self {
            oversample_factor,
            ..Self::default()
        }
    }

    fn taps_per_phase(&self) -> usize {
        match self.kernel {
            InterpolationKernel::WindowedSinc { taps_per_phase, .. } => taps_per_phase,
            InterpolationKernel::Linear => DEFAULT_TAPS_PER_PHASE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.decimation_factor == 0 {
            return Err(Error::Config("decimation_factor must be positive".into()));
        }
        if self.oversample_factor == 0 {
            return Err(Error::Config("oversample_factor must be at least 1".into()));
        }
        if let InterpolationKernel::WindowedSinc { taps_per_phase, .. } = self.kernel {
            if taps_per_phase < 2 {
                return Err(Error::Config("taps_per_phase must be at least 2".into()));
            }
        }
        Ok(())
    }
}

/// Linear-phase FIR lowpass with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    pub coefficients: Vec<f64>,
    /// Cutoff in cycles per sample, in (0, 0.5].
    pub nominal_cutoff: f64,
}

impl FilterKernel {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn center(&self) -> usize {
        self.coefficients.len() / 2
    }

    /// One coefficient per line, full precision.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# lowpass cutoff={} taps={}\n",
            self.nominal_cutoff,
            self.len()
        );
        for c in &self.coefficients {
            writeln!(out, "{c:e}").unwrap();
        }
        out
    }
}

fn hann(n: usize, taps: usize) -> f64 {
    // Endpoint-free variant: no zero-valued taps at either end.
    0.5 - 0.5 * (2.0 * PI * (n + 1) as f64 / (taps + 1) as f64).cos()
}

/// Hann-windowed sinc lowpass, normalized so the coefficients sum to one.
pub fn design_lowpass_kernel(cutoff: f64, taps: usize) -> Result<FilterKernel> {
    if !(cutoff > 0.0 && cutoff <= 0.5) {
        return Err(Error::Config(format!("cutoff {cutoff} outside (0, 0.5]")));
    }
    if taps < 3 || taps.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "taps must be odd and >= 3, got {taps}"
        )));
    }
    let center = (taps / 2) as f64;
    let mut coefficients: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - center;
            let ideal = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * x).sin() / (PI * x)
            };
            ideal * hann(n, taps)
        })
        .collect();
    let sum: f64 = coefficients.iter().sum();
    coefficients.iter_mut().for_each(|c| *c /= sum);
    // Pair up mirrored taps so the kernel is exactly symmetric.
    for i in 0..taps / 2 {
        let avg = 0.5 * (coefficients[i] + coefficients[taps - 1 - i]);
        coefficients[i] = avg;
        coefficients[taps - 1 - i] = avg;
    }
    Ok(FilterKernel {
        coefficients,
        nominal_cutoff: cutoff,
    })
}

/// Maps any integer index onto `0..n` by whole-sample symmetric reflection.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn normalize_zero_mean(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Shape("cannot normalize an empty vector".into()));
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok(v.iter().map(|x| x - mean).collect())
}

/// Precomputed filters for one [`ResampleSpec`], reusable across samples.
#[derive(Debug, Clone)]
pub struct Resampler {
    spec: ResampleSpec,
    antialias: Option<FilterKernel>,
    /// Interpolation taps scaled by `k`, each polyphase branch summing to one.
    interpolator: Option<Vec<f64>>,
}

impl Resampler {
    pub fn new(spec: ResampleSpec) -> Result<Self> {
        spec.validate()?;
        let antialias = if spec.antialias_decimation && spec.decimation_factor > 1 {
            let d = spec.decimation_factor;
            Some(design_lowpass_kernel(
                0.5 / d as f64,
                spec.taps_per_phase() * d + 1,
            )?)
        } else {
            None
        };
        let k = spec.oversample_factor;
        let interpolator = match spec.kernel {
            InterpolationKernel::WindowedSinc { taps_per_phase, .. } if k > 1 => {
                let kernel = design_lowpass_kernel(0.5 / k as f64, taps_per_phase * k + 1)?;
                Some(polyphase_normalized(&kernel.coefficients, k))
            }
            _ => None,
        };
        Ok(Self {
            spec,
            antialias,
            interpolator,
        })
    }

    pub fn spec(&self) -> &ResampleSpec {
        &self.spec
    }

    pub fn antialias_kernel(&self) -> Option<&FilterKernel> {
        self.antialias.as_ref()
    }

    pub fn decimate(&self, v: &[f64]) -> Result<Vec<f64>> {
        let d = self.spec.decimation_factor;
        if v.is_empty() || !v.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "length {} is not a positive multiple of decimation factor {d}",
                v.len()
            )));
        }
        let out_len = v.len() / d;
        let Some(kernel) = &self.antialias else {
            return Ok(v.iter().step_by(d).copied().collect());
        };
        let center = kernel.center() as isize;
        Ok((0..out_len)
            .map(|j| {
                let pos = (j * d) as isize;
                kernel
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(t, h)| h * v[reflect_index(pos + center - t as isize, v.len())])
                    .sum()
            })
            .collect())
    }

    pub fn upsample(&self, v: &[f64]) -> Result<Vec<f64>> {
        let k = self.spec.oversample_factor;
        if v.is_empty() {
            return Err(Error::Shape("cannot upsample an empty vector".into()));
        }
        if k == 1 {
            return Ok(v.to_vec());
        }
        let n = v.len();
        match (&self.spec.kernel, &self.interpolator) {
            (InterpolationKernel::Linear, _) => Ok((0..n * k)
                .map(|m| {
                    let j = m / k;
                    let frac = (m % k) as f64 / k as f64;
                    let next = v[reflect_index(j as isize + 1, n)];
                    v[j] + (next - v[j]) * frac
                })
                .collect()),
            (InterpolationKernel::WindowedSinc { .. }, Some(taps)) => {
                let center = (taps.len() / 2) as isize;
                let k_i = k as isize;
                Ok((0..n * k)
                    .map(|m| {
                        // Only taps landing on original sample positions contribute.
                        let m = m as isize;
                        let first = (m + center).rem_euclid(k_i);
                        (first..taps.len() as isize)
                            .step_by(k)
                            .map(|t| {
                                let src = (m + center - t).div_euclid(k_i);
                                taps[t as usize] * v[reflect_index(src, n)]
                            })
                            .sum()
                    })
                    .collect())
            }
            (InterpolationKernel::WindowedSinc { .. }, None) => {
                unreachable!("interpolator is designed for every k > 1")
            }
        }
    }

    /// Zero-mean normalization, decimation, then up-sampling.
    pub fn preprocess(&self, image_vector: &[f64]) -> Result<Vec<f64>> {
        let centered = normalize_zero_mean(image_vector)?;
        self.upsample(&self.decimate(&centered)?)
    }
}

fn polyphase_normalized(coefficients: &[f64], k: usize) -> Vec<f64> {
    let mut taps = coefficients.to_vec();
    for phase in 0..k {
        let sum: f64 = taps.iter().skip(phase).step_by(k).sum();
        taps.iter_mut()
            .skip(phase)
            .step_by(k)
            .for_each(|t| *t /= sum);
    }
    taps
}

pub fn decimate(v: &[f64], spec: &ResampleSpec) -> Result<Vec<f64>> {
    Resampler::new(*spec)?.decimate(v)
}

pub fn upsample(v: &[f64], spec: &ResampleSpec) -> Result<Vec<f64>> {
    Resampler::new(*spec)?.upsample(v)
}

pub fn preprocess(image_vector: &[f64], spec: &ResampleSpec) -> Result<Vec<f64>> {
    Resampler::new(*spec)?.preprocess(image_vector)
}
