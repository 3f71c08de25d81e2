//! Drive envelopes `Ω(t) = Ωx(t) cos ω_d t + Ωy(t) sin ω_d t`.

use std::f64::consts::PI;

use statrs::function::erf::erf;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum EnvelopeShape {
    /// Constant quadratures switched on at t = 0.
    Constant { x: f64, y: f64 },
    /// Truncated, baseline-subtracted Gaussian with a DRAG quadrature.
    Drag {
        theta: f64,
        gate_time: f64,
        sigma: f64,
        xi: f64,
        anharmonicity: f64,
        // θ / normalization of the Gaussian
        amplitude: f64,
        baseline: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseEnvelope {
    pub shape: EnvelopeShape,
    pub carrier: f64,
}

pub fn rabi_envelope(omega_x: f64, omega_y: f64, carrier: f64) -> PulseEnvelope {
    PulseEnvelope {
        shape: EnvelopeShape::Constant {
            x: omega_x,
            y: omega_y,
        },
        carrier,
    }
}

pub fn zero_drive(carrier: f64) -> PulseEnvelope {
    rabi_envelope(0.0, 0.0, carrier)
}

pub fn drag_envelope(
    theta: f64,
    gate_time: f64,
    sigma: f64,
    xi: f64,
    anharmonicity: f64,
    carrier: f64,
) -> Result<PulseEnvelope> {
    if !(gate_time > 0.0) {
        return Err(Error::param(format!("gate time must be positive, got {gate_time}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    if anharmonicity == 0.0 || !anharmonicity.is_finite() {
        return Err(Error::param("DRAG requires a nonzero anharmonicity"));
    }
    let baseline = (-gate_time * gate_time / (8.0 * sigma * sigma)).exp();
    let norm = (2.0 * PI * sigma * sigma).sqrt() * erf(gate_time / (8.0 * sigma * sigma).sqrt())
        - gate_time * baseline;
    Ok(PulseEnvelope {
        shape: EnvelopeShape::Drag {
            theta,
            gate_time,
            sigma,
            xi,
            anharmonicity,
            amplitude: theta / norm,
            baseline,
        },
        carrier,
    })
}

impl PulseEnvelope {
    pub fn omega_x(&self, t: f64) -> f64 {
        match self.shape {
            EnvelopeShape::Constant { x, .. } => {
                if t < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            EnvelopeShape::Drag {
                gate_time,
                sigma,
                amplitude,
                baseline,
                ..
            } => {
                if !(0.0..=gate_time).contains(&t) {
                    return 0.0;
                }
                let d = t - gate_time / 2.0;
                amplitude * ((-d * d / (2.0 * sigma * sigma)).exp() - baseline)
            }
        }
    }

    pub fn omega_x_dot(&self, t: f64) -> f64 {
        match self.shape {
            EnvelopeShape::Constant { .. } => 0.0,
            EnvelopeShape::Drag {
                gate_time,
                sigma,
                amplitude,
                ..
            } => {
                if !(0.0..=gate_time).contains(&t) {
                    return 0.0;
                }
                let d = t - gate_time / 2.0;
                -amplitude * d / (sigma * sigma) * (-d * d / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    pub fn omega_y(&self, t: f64) -> f64 {
        match self.shape {
            EnvelopeShape::Constant { y, .. } => {
                if t < 0.0 {
                    0.0
                } else {
                    y
                }
            }
            EnvelopeShape::Drag {
                xi, anharmonicity, ..
            } => -xi * self.omega_x_dot(t) / anharmonicity,
        }
    }

    /// `Ω(t)` including the carrier.
    pub fn evaluate(&self, t: f64) -> f64 {
        let (s, c) = (self.carrier * t).sin_cos();
        self.omega_x(t) * c + self.omega_y(t) * s
    }

    /// `Ω_R = √(Ωx² + Ωy²)` for constant drives, the peak `|Ωx|` for shaped ones.
    pub fn rabi_frequency(&self) -> f64 {
        match self.shape {
            EnvelopeShape::Constant { x, y } => x.hypot(y),
            EnvelopeShape::Drag { gate_time, .. } => self.omega_x(gate_time / 2.0).abs(),
        }
    }

    /// Upper bound on `√(Ωx² + Ωy²)` over the pulse.
    pub fn max_amplitude(&self) -> f64 {
        match self.shape {
            EnvelopeShape::Constant { x, y } => x.hypot(y),
            EnvelopeShape::Drag {
                sigma,
                amplitude,
                xi,
                anharmonicity,
                ..
            } => {
                // |Ω̇x| peaks at |d| = σ
                let dot = amplitude / sigma * (-0.5f64).exp();
                self.rabi_frequency().hypot(xi * dot / anharmonicity)
            }
        }
    }

    pub fn gate_time(&self) -> Option<f64> {
        match self.shape {
            EnvelopeShape::Constant { .. } => None,
            EnvelopeShape::Drag { gate_time, .. } => Some(gate_time),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, EnvelopeShape::Constant { x, y } if x == 0.0 && y == 0.0)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.shape, EnvelopeShape::Constant { .. })
    }

    /// Same pulse with a different DRAG coefficient (no-op for constant drives).
    pub fn with_xi(&self, new_xi: f64) -> PulseEnvelope {
        let mut p = self.clone();
        if let EnvelopeShape::Drag { ref mut xi, .. } = p.shape {
            *xi = new_xi;
        }
        p
    }
}

pub fn evaluate_drive(p: &PulseEnvelope, t: f64) -> f64 {
    p.evaluate(t)
}
