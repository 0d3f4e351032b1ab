//! Fourier-space dissimilarity between a reservoir output and its inputs.
//!
//! An output series `o` is approximated by `z = Σ c_i u_i`, a combination of
//! the input series with one complex weight per input. A complex weight acts
//! on the positive-frequency half of the spectrum as `c` and on the mirrored
//! half as `conj(c)`, so `z` stays a real signal: in the time domain
//! `z(t) = Σ Re(c_i) u_i(t) - Im(c_i) H[u_i](t)` where `H` shifts every
//! component by a quarter period. The dissimilarity is the relative residual
//! `δ = ‖o - z‖ / ‖o‖` over the included bins.

use std::cmp::Ordering;
use std::f64::consts::TAU;
use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NodeId;
use crate::util::{fmt_num, solve_psd};

/// Relative eigenvalue cutoff for the Gram matrix.
const RANK_RTOL: f64 = 1e-12;

/// An output whose included-bin norm is this small relative to its full
/// spectrum is treated as zero (rounding noise left over from a constant).
const ZERO_OUTPUT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub dt: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Angular frequency of bin `k`, `2πk / (N dt)`.
    pub fn omega(&self, k: usize) -> f64 {
        TAU * k as f64 / (self.len() as f64 * self.dt)
    }

    /// `k,omega,re,im,abs`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,omega,re,im,abs")?;
        for (k, b) in self.bins.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{},{},{}",
                fmt_num(self.omega(k)),
                fmt_num(b.re),
                fmt_num(b.im),
                fmt_num(b.norm())
            )?;
        }
        Ok(())
    }
}

/// Unnormalized forward transform, `X[k] = Σ x[n] exp(-2πi kn/N)`.
pub fn dft(series: &[f64], dt: f64) -> Result<Spectrum> {
    if series.len() < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 samples, got {}",
            series.len()
        )));
    }
    let mut bins: Vec<Complex64> = series.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(bins.len())
        .process(&mut bins);
    Ok(Spectrum { bins, dt })
}

/// Which half of the spectrum bin `k` belongs to.
#[derive(Clone, Copy, PartialEq)]
enum Half {
    /// DC, and Nyquist for even lengths: the weight acts through its real part.
    SelfConjugate,
    Positive,
    Negative,
}

fn half(k: usize, n: usize) -> Half {
    if k == 0 || 2 * k == n {
        Half::SelfConjugate
    } else if 2 * k < n {
        Half::Positive
    } else {
        Half::Negative
    }
}

fn apply_weight(c: Complex64, u: Complex64, h: Half) -> Complex64 {
    match h {
        Half::Positive => c * u,
        Half::Negative => c.conj() * u,
        Half::SelfConjugate => c.re * u,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub weights: Vec<Complex64>,
    /// `‖o - z‖` over the included bins.
    pub residual_norm: f64,
    /// `‖o‖` over the included bins.
    pub output_norm: f64,
    /// The fitted spectrum `z` on every bin.
    pub fitted: Vec<Complex64>,
    /// The inputs were (numerically) linearly dependent; the weights are the
    /// minimum-norm least-squares solution.
    pub rank_deficient: bool,
}

impl Fit {
    pub fn delta(&self) -> Result<f64> {
        if self.output_norm == 0.0 {
            return Err(Error::ZeroOutput);
        }
        Ok(self.residual_norm / self.output_norm)
    }
}

/// Least-squares weights for `output ≈ Σ c_i inputs[i]`, solved through the
/// normal equations. With `exclude_dc` bin 0 is left out of the fit and of
/// both norms.
pub fn fit_linear_combination(
    output: &Spectrum,
    inputs: &[Spectrum],
    exclude_dc: bool,
) -> Result<Fit> {
    let n = output.len();
    if inputs.is_empty() {
        return Err(Error::SpectrumMismatch("no input spectra".into()));
    }
    for (i, s) in inputs.iter().enumerate() {
        if s.len() != n {
            return Err(Error::SpectrumMismatch(format!(
                "input {i} has {} bins, output has {n}",
                s.len()
            )));
        }
        if s.dt != output.dt {
            return Err(Error::SpectrumMismatch(format!(
                "input {i} has dt {}, output has {}",
                s.dt, output.dt
            )));
        }
    }
    let first = usize::from(exclude_dc);
    if first >= n {
        return Err(Error::SpectrumMismatch("no bins left to fit".into()));
    }

    // Unknowns are (Re c_0, Im c_0, Re c_1, ...). Each bin contributes two
    // real rows: the real and imaginary parts of the model.
    let p = inputs.len();
    let dim = 2 * p;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DMatrix::<f64>::zeros(dim, 1);
    let mut row_re = vec![0.0; dim];
    let mut row_im = vec![0.0; dim];
    for k in first..n {
        let h = half(k, n);
        for (i, s) in inputs.iter().enumerate() {
            let u = s.bins[k];
            // d z / d(Re c), d z / d(Im c)
            let (d_re, d_im) = match h {
                Half::Positive => (u, Complex64::i() * u),
                Half::Negative => (u, -Complex64::i() * u),
                Half::SelfConjugate => (u, Complex64::new(0.0, 0.0)),
            };
            row_re[2 * i] = d_re.re;
            row_re[2 * i + 1] = d_im.re;
            row_im[2 * i] = d_re.im;
            row_im[2 * i + 1] = d_im.im;
        }
        let o = output.bins[k];
        for a in 0..dim {
            rhs[(a, 0)] += row_re[a] * o.re + row_im[a] * o.im;
            for b in a..dim {
                gram[(a, b)] += row_re[a] * row_re[b] + row_im[a] * row_im[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    // pseudo-inverse gives the minimum-norm solution when inputs are dependent
    let (x, rank) = solve_psd(gram, &rhs, RANK_RTOL);
    let weights: Vec<Complex64> = (0..p)
        .map(|i| Complex64::new(x[2 * i], x[2 * i + 1]))
        .collect();

    let fitted: Vec<Complex64> = (0..n)
        .map(|k| {
            let h = half(k, n);
            inputs
                .iter()
                .zip(&weights)
                .map(|(s, &c)| apply_weight(c, s.bins[k], h))
                .sum()
        })
        .collect();
    let residual_norm = (first..n)
        .map(|k| (output.bins[k] - fitted[k]).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let included = (first..n).map(|k| output.bins[k].norm_sqr()).sum::<f64>().sqrt();
    let total = output.bins.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
    let output_norm = if included <= ZERO_OUTPUT_RTOL * total {
        0.0
    } else {
        included
    };
    Ok(Fit {
        weights,
        residual_norm,
        output_norm,
        fitted,
        rank_deficient: rank < dim,
    })
}

/// `δ = ‖o - z‖ / ‖o‖` for real series sampled at `dt`.
pub fn dissimilarity(
    output: &[f64],
    inputs: &[&[f64]],
    dt: f64,
    exclude_dc: bool,
) -> Result<f64> {
    let o = dft(output, dt)?;
    let u = inputs
        .iter()
        .map(|s| dft(s, dt))
        .collect::<Result<Vec<_>>>()?;
    fit_linear_combination(&o, &u, exclude_dc)?.delta()
}

/// Circularly delayed copies of `series`, one per entry of `shifts`
/// (in samples). Appending these to the input list enlarges the fit basis
/// beyond one complex weight per input.
pub fn time_shifted_copies(series: &[f64], shifts: &[usize]) -> Vec<Vec<f64>> {
    let n = series.len();
    shifts
        .iter()
        .map(|&s| (0..n).map(|i| series[(i + n - s % n) % n]).collect())
        .collect()
}

/// Identifies an analysed series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutputId {
    NodeVoltage(NodeId),
    /// Link index in declaration order.
    LinkResistance(usize),
}

impl fmt::Display for OutputId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputId::NodeVoltage(id) => write!(f, "V_node_{id}"),
            OutputId::LinkResistance(k) => write!(f, "R_link_{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityReport {
    pub output: OutputId,
    pub delta: f64,
    pub weights: Vec<Complex64>,
    pub residual_norm: f64,
    pub output_norm: f64,
    pub rank_deficient: bool,
}

/// Output spectrum together with its fit, for plotting.
#[derive(Debug, Clone)]
pub struct AnalyzedOutput {
    pub report: DissimilarityReport,
    pub spectrum: Spectrum,
    pub fitted: Spectrum,
}

/// Fits every output against the same input set.
pub fn analyze_outputs(
    outputs: &[(OutputId, &[f64])],
    inputs: &[&[f64]],
    dt: f64,
    exclude_dc: bool,
) -> Result<Vec<AnalyzedOutput>> {
    let u = inputs
        .iter()
        .map(|s| dft(s, dt))
        .collect::<Result<Vec<_>>>()?;
    outputs
        .iter()
        .map(|&(id, series)| {
            let spectrum = dft(series, dt)?;
            let fit = fit_linear_combination(&spectrum, &u, exclude_dc)?;
            let delta = fit.delta()?;
            Ok(AnalyzedOutput {
                report: DissimilarityReport {
                    output: id,
                    delta,
                    weights: fit.weights,
                    residual_norm: fit.residual_norm,
                    output_norm: fit.output_norm,
                    rank_deficient: fit.rank_deficient,
                },
                fitted: Spectrum {
                    bins: fit.fitted,
                    dt,
                },
                spectrum,
            })
        })
        .collect()
}

/// Output ids by descending δ, ties by ascending id.
pub fn rank_outputs(reports: &[DissimilarityReport]) -> Vec<OutputId> {
    let mut order: Vec<&DissimilarityReport> = reports.iter().collect();
    order.sort_by(|a, b| match b.delta.total_cmp(&a.delta) {
        Ordering::Equal => a.output.cmp(&b.output),
        other => other,
    });
    order.into_iter().map(|r| r.output).collect()
}

/// `output_id,delta` rows in ranked order.
pub fn write_report_csv<W: Write>(reports: &[DissimilarityReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "output_id,delta")?;
    for id in rank_outputs(reports) {
        let r = reports.iter().find(|r| r.output == id).expect("id came from reports");
        writeln!(w, "{id},{}", fmt_num(r.delta))?;
    }
    Ok(())
}
