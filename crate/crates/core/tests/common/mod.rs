//! Independent reference computations shared by the integration tests.
//! Nothing here goes through the network solver or the Fourier fit.

#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, TAU};

use memnet::network::benchmark_memristor;
use nalgebra::{DMatrix, DVector};

pub const SERIES_R: f64 = 10_000.0;

/// Explicit Euler on the divider-reduced benchmark,
/// `dR/dt = alpha * V_ext(t) * R / (R + 10 kΩ)`, clamped to the hard limits.
/// Returns `R` at every multiple of `dt_out` from 0 to `t_end`.
pub fn benchmark_oracle(freq: f64, h: f64, t_end: f64, dt_out: f64) -> Vec<f64> {
    let p = benchmark_memristor();
    let v = |t: f64| 2.0 * (TAU * freq * t).cos();
    let per = (dt_out / h).round() as usize;
    let n_out = (t_end / dt_out).round() as usize;
    let mut r = p.r_init;
    let mut out = Vec::with_capacity(n_out + 1);
    out.push(r);
    for i in 0..n_out * per {
        let t = i as f64 * h;
        let vm = v(t) * r / (r + SERIES_R);
        r = p.clamp(r + h * p.alpha * vm);
        if (i + 1) % per == 0 {
            out.push(r);
        }
    }
    out
}

/// A real series built from sinusoids with integer numbers of periods over
/// the window, plus an offset. Keeps the parameters so the quarter-period
/// analogue can be written down exactly.
#[derive(Debug, Clone)]
pub struct ToneSeries {
    pub n: usize,
    pub offset: f64,
    /// (cycles per window, amplitude, phase)
    pub tones: Vec<(usize, f64, f64)>,
}

impl ToneSeries {
    pub fn samples(&self) -> Vec<f64> {
        self.eval(0.0, self.offset)
    }

    /// Every tone advanced by a quarter of its own period; no offset.
    pub fn quarter(&self) -> Vec<f64> {
        self.eval(FRAC_PI_2, 0.0)
    }

    fn eval(&self, shift: f64, offset: f64) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                offset
                    + self
                        .tones
                        .iter()
                        .map(|&(m, a, ph)| {
                            a * (TAU * m as f64 * i as f64 / self.n as f64 + ph + shift).sin()
                        })
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Time-domain least squares of `output` on `{u_i, quarter(u_i)}` by QR,
/// returning the residual norm. With `center` the means are removed first,
/// which is what dropping the zero-frequency bin does.
pub fn time_domain_residual(output: &[f64], inputs: &[ToneSeries], center: bool) -> f64 {
    let n = output.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for u in inputs {
        columns.push(u.samples());
        columns.push(u.quarter());
    }
    let mut y = output.to_vec();
    if center {
        for c in columns.iter_mut().chain(std::iter::once(&mut y)) {
            let m = c.iter().sum::<f64>() / n as f64;
            c.iter_mut().for_each(|x| *x -= m);
        }
    }
    let a = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let b = DVector::from_column_slice(&y);
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * &b;
    let x = qr
        .r()
        .solve_upper_triangular(&qtb)
        .expect("random tone basis has full column rank");
    (b - a * x).norm()
}

/// Small deterministic generator so the oracle inputs don't depend on the
/// crate's own RNG plumbing.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// One randomized instance: an arbitrary output and 1-3 tone inputs with
/// distinct frequencies strictly between DC and Nyquist.
pub fn random_fit_case(rng: &mut SplitMix) -> (Vec<f64>, Vec<ToneSeries>) {
    let n = 16 + rng.below(48);
    let p = 1 + rng.below(3);
    let mut used = Vec::new();
    let inputs = (0..p)
        .map(|_| {
            let tones = (0..1 + rng.below(2))
                .map(|_| {
                    let mut m = 1 + rng.below(n / 2 - 1);
                    while used.contains(&m) {
                        m = 1 + rng.below(n / 2 - 1);
                    }
                    used.push(m);
                    (m, rng.range(0.2, 2.0), rng.range(0.0, TAU))
                })
                .collect();
            ToneSeries {
                n,
                offset: rng.range(-1.0, 1.0),
                tones,
            }
        })
        .collect();
    let output = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
    (output, inputs)
}
