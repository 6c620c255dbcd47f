//! One-dimensional profiles shared by the constructions: the sawtooth and the
//! quintic interpolant used to bend interfaces between two periods.

/// `Z(t) = dist(t + 1/4, ℤ) - 1/4`, a 1-periodic zigzag with slopes ±1.
pub fn unit_sawtooth(t: f64) -> f64 {
    let r = t + 0.25;
    (r - r.round()).abs() - 0.25
}

/// `Z_h(t) = h Z(t / h)`.
pub fn sawtooth(h: f64, t: f64) -> f64 {
    assert!(h > 0.0, "sawtooth period must be positive");
    h * unit_sawtooth(t / h)
}

/// Derivative of `Z_h`; at kinks the value of the piece to the left is returned.
pub fn sawtooth_slope(h: f64, t: f64) -> f64 {
    let phase = (t / h).rem_euclid(1.0);
    if phase <= 0.25 || phase > 0.75 {
        1.0
    } else {
        -1.0
    }
}

/// `γ(t) = 10t³ - 15t⁴ + 6t⁵` and its first two derivatives.
pub fn quintic_gamma(t: f64) -> (f64, f64, f64) {
    let [g, g1, g2, _] = quintic_jet(t);
    (g, g1, g2)
}

/// `γ, γ', γ'', γ'''` at `t`.
pub fn quintic_jet(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        t3 * (10.0 + t * (-15.0 + 6.0 * t)),
        30.0 * t2 * (1.0 + t * (-2.0 + t)),
        60.0 * t * (1.0 + t * (-3.0 + 2.0 * t)),
        60.0 + t * (-360.0 + 360.0 * t),
    ]
}

/// The interpolating profile used inside period-doubling cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Profile {
    #[default]
    Quintic,
    /// `γ(t) = t`; only admissible for the shear cells, where no second
    /// derivative of `γ` enters the traces.
    Linear,
}

impl Profile {
    pub fn jet(&self, t: f64) -> [f64; 4] {
        match self {
            Profile::Quintic => quintic_jet(t),
            Profile::Linear => [t, 1.0, 0.0, 0.0],
        }
    }

    /// `∫₀¹ γ`.
    pub fn mean(&self) -> f64 {
        0.5
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Quintic => "quintic",
            Profile::Linear => "linear",
        }
    }
}
