//! Periodic voltage sources for external nodes.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Sine,
    Cosine,
    Square,
    Sawtooth,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub kind: SignalKind,
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

impl Signal {
    pub fn sine(amplitude: f64, frequency: f64) -> Self {
        Self::new(SignalKind::Sine, amplitude, frequency)
    }

    pub fn cosine(amplitude: f64, frequency: f64) -> Self {
        Self::new(SignalKind::Cosine, amplitude, frequency)
    }

    pub fn square(amplitude: f64, frequency: f64) -> Self {
        Self::new(SignalKind::Square, amplitude, frequency)
    }

    pub fn sawtooth(amplitude: f64, frequency: f64) -> Self {
        Self::new(SignalKind::Sawtooth, amplitude, frequency)
    }

    /// A DC source of `value` volts.
    pub fn constant(value: f64) -> Self {
        Self {
            kind: SignalKind::Constant,
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
            offset: value,
        }
    }

    pub fn new(kind: SignalKind, amplitude: f64, frequency: f64) -> Self {
        Self {
            kind,
            amplitude,
            frequency,
            phase: 0.0,
            offset: 0.0,
        }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.frequency >= 0.0
            && self.frequency.is_finite()
            && self.amplitude.is_finite()
            && self.phase.is_finite()
            && self.offset.is_finite()
    }

    /// Source voltage at time `t`.
    pub fn evaluate(&self, t: f64) -> f64 {
        let a = self.amplitude;
        let wave = match self.kind {
            SignalKind::Sine => a * (TAU * self.frequency * t + self.phase).sin(),
            SignalKind::Cosine => a * (TAU * self.frequency * t + self.phase).cos(),
            // +A on the closed first half of each cycle, so exact sine zeros map to +A
            SignalKind::Square => {
                if self.cycle_fraction(t) <= 0.5 {
                    a
                } else {
                    -a
                }
            }
            SignalKind::Sawtooth => a * (2.0 * self.cycle_fraction(t) - 1.0),
            SignalKind::Constant => 0.0,
        };
        wave + self.offset
    }

    /// Position within the current cycle, in `[0, 1)`.
    fn cycle_fraction(&self, t: f64) -> f64 {
        let x = self.frequency * t + self.phase / TAU;
        let f = x - x.floor();
        if f >= 1.0 {
            0.0
        } else {
            f
        }
    }
}
