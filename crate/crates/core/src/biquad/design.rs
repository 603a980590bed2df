//! Cookbook biquad design with exact Jacobians.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dual::{Dual, Real};
use crate::error::{Error, Result};
use crate::params::FilterParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterKind {
    Peak,
    LowShelf,
    HighShelf,
    LowPass,
    HighPass,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::Peak,
        FilterKind::LowShelf,
        FilterKind::HighShelf,
        FilterKind::LowPass,
        FilterKind::HighPass,
    ];

    pub fn has_gain(self) -> bool {
        matches!(self, FilterKind::Peak | FilterKind::LowShelf | FilterKind::HighShelf)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub freq: f64,
    pub q: f64,
    pub gain_db: f64,
    pub sample_rate: f64,
}

/// Shelf Q accepted by [`FilterSpec::validate`].
pub const SHELF_Q: f64 = 0.707;

impl FilterSpec {
    pub fn new(kind: FilterKind, p: &FilterParams, sample_rate: f64) -> Self {
        Self {
            kind,
            freq: p.freq,
            q: p.q,
            gain_db: if kind.has_gain() { p.gain_db } else { 0.0 },
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fs = self.sample_rate;
        if !(fs > 0.0 && self.freq > 0.0 && self.freq < 0.5 * fs) {
            return Err(Error::OutOfBounds {
                name: format!("{:?} frequency", self.kind),
                value: self.freq,
                lo: 0.0,
                hi: 0.5 * fs,
            });
        }
        if !(self.q > 0.0 && self.q.is_finite()) || !self.gain_db.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid Q/gain in {self:?}")));
        }
        match self.kind {
            FilterKind::LowPass | FilterKind::HighPass if self.q < 0.5 => Err(Error::OutOfBounds {
                name: format!("{:?} Q", self.kind),
                value: self.q,
                lo: 0.5,
                hi: f64::INFINITY,
            }),
            FilterKind::LowShelf | FilterKind::HighShelf if (self.q - SHELF_Q).abs() > 1e-12 => {
                Err(Error::InvalidArgument(format!(
                    "shelf Q must be {SHELF_Q}, got {}",
                    self.q
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Normalised coefficients of `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    pub const IDENTITY: BiquadCoeffs = BiquadCoeffs {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    pub fn as_array(&self) -> [f64; 5] {
        [self.b0, self.b1, self.b2, self.a1, self.a2]
    }

    pub fn from_array(c: [f64; 5]) -> Self {
        Self {
            b0: c[0],
            b1: c[1],
            b2: c[2],
            a1: c[3],
            a2: c[4],
        }
    }

    /// State transition of `[w[n-1], w[n-2]]`.
    pub fn transition(&self) -> [[f64; 2]; 2] {
        [[-self.a1, -self.a2], [1.0, 0.0]]
    }

    /// Output row acting on `[w[n-1], w[n-2]]`; the feed-through is `b0`.
    pub fn output_row(&self) -> [f64; 2] {
        [self.b1 - self.b0 * self.a1, self.b2 - self.b0 * self.a2]
    }
}

fn cookbook<R: Real>(kind: FilterKind, f: R, q: R, g: R, fs: f64) -> [R; 5] {
    let one = R::cst(1.0);
    let two = R::cst(2.0);
    let w0 = f * R::cst(2.0 * PI / fs);
    let (cw, sw) = (w0.cos(), w0.sin());
    let alpha = sw / (two * q);
    // A = 10^(g/40)
    let a = (g * R::cst(10f64.ln() / 40.0)).exp();
    let (b0, b1, b2, a0, a1, a2) = match kind {
        FilterKind::Peak => (
            one + alpha * a,
            -two * cw,
            one - alpha * a,
            one + alpha / a,
            -two * cw,
            one - alpha / a,
        ),
        FilterKind::LowShelf => {
            let k = two * a.sqrt() * alpha;
            (
                a * ((a + one) - (a - one) * cw + k),
                two * a * ((a - one) - (a + one) * cw),
                a * ((a + one) - (a - one) * cw - k),
                (a + one) + (a - one) * cw + k,
                -two * ((a - one) + (a + one) * cw),
                (a + one) + (a - one) * cw - k,
            )
        }
        FilterKind::HighShelf => {
            let k = two * a.sqrt() * alpha;
            (
                a * ((a + one) + (a - one) * cw + k),
                -two * a * ((a - one) + (a + one) * cw),
                a * ((a + one) + (a - one) * cw - k),
                (a + one) - (a - one) * cw + k,
                two * ((a - one) - (a + one) * cw),
                (a + one) - (a - one) * cw - k,
            )
        }
        FilterKind::LowPass => {
            let h = (one - cw) / two;
            (h, one - cw, h, one + alpha, -two * cw, one - alpha)
        }
        FilterKind::HighPass => {
            let h = (one + cw) / two;
            (h, -(one + cw), h, one + alpha, -two * cw, one - alpha)
        }
    };
    [b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0]
}

/// Coefficients of `spec`.
pub fn design(spec: &FilterSpec) -> Result<BiquadCoeffs> {
    spec.validate()?;
    let c = cookbook(spec.kind, spec.freq, spec.q, spec.gain_db, spec.sample_rate);
    Ok(BiquadCoeffs::from_array(c))
}

/// `d coeff[i] / d (freq, q, gain)[j]`, rows ordered b0, b1, b2, a1, a2.
pub type DesignJacobian = [[f64; 3]; 5];

pub fn design_with_jacobian(spec: &FilterSpec) -> Result<(BiquadCoeffs, DesignJacobian)> {
    spec.validate()?;
    let c = cookbook(
        spec.kind,
        Dual::<3>::var(spec.freq, 0),
        Dual::var(spec.q, 1),
        Dual::var(spec.gain_db, 2),
        spec.sample_rate,
    );
    let coeffs = BiquadCoeffs::from_array(c.map(|d| d.v));
    Ok((coeffs, c.map(|d| d.d)))
}

/// Pulls coefficient cotangents back to `(freq, q, gain)`.
pub fn design_vjp(jac: &DesignJacobian, grad: &BiquadCoeffs) -> FilterParams {
    let g = grad.as_array();
    let mut out = [0.0; 3];
    for (row, gi) in jac.iter().zip(g) {
        for j in 0..3 {
            out[j] += row[j] * gi;
        }
    }
    FilterParams {
        freq: out[0],
        q: out[1],
        gain_db: out[2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biquad::response::frequency_response;

    fn spec(kind: FilterKind, freq: f64, q: f64, gain_db: f64) -> FilterSpec {
        FilterSpec {
            kind,
            freq,
            q,
            gain_db,
            sample_rate: 44100.0,
        }
    }

    #[test]
    fn zero_gain_peak_and_shelves_are_flat() {
        let freqs: Vec<f64> = (1..200).map(|i| i as f64 * 110.0).collect();
        for (kind, q) in [
            (FilterKind::Peak, 3.0),
            (FilterKind::LowShelf, SHELF_Q),
            (FilterKind::HighShelf, SHELF_Q),
        ] {
            let c = design(&spec(kind, 1200.0, q, 0.0)).unwrap();
            for h in frequency_response(&c, &freqs, 44100.0) {
                assert!((h.norm() - 1.0).abs() < 1e-12, "{kind:?}");
            }
        }
    }

    #[test]
    fn low_pass_corner_is_half_power() {
        let fc = 3000.0;
        let c = design(&spec(FilterKind::LowPass, fc, std::f64::consts::FRAC_1_SQRT_2, 0.0)).unwrap();
        // evaluated directly from the transfer function; the analogue prototype has |H| = Q at
        // its corner, and the bilinear map sends that corner to w0
        let w0 = 2.0 * PI * fc / 44100.0;
        let z = num_complex::Complex64::from_polar(1.0, -w0);
        let num = c.b0 + c.b1 * z + c.b2 * z * z;
        let den = 1.0 + c.a1 * z + c.a2 * z * z;
        assert!(((num / den).norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_specs_are_rejected() {
        assert!(design(&spec(FilterKind::Peak, 30000.0, 1.0, 0.0)).is_err());
        assert!(design(&spec(FilterKind::LowPass, 1000.0, 0.4, 0.0)).is_err());
        assert!(design(&spec(FilterKind::LowShelf, 100.0, 2.0, 3.0)).is_err());
        assert!(design(&spec(FilterKind::Peak, -5.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let h = 1e-6;
        for kind in FilterKind::ALL {
            let q = if matches!(kind, FilterKind::LowShelf | FilterKind::HighShelf) { SHELF_Q } else { 1.3 };
            let base = spec(kind, 2100.0, q, 4.5);
            let (_, jac) = design_with_jacobian(&base).unwrap();
            for j in 0..3 {
                if j == 1 && q == SHELF_Q {
                    continue;
                }
                let scale = [base.freq, base.q, 1.0][j];
                let step = h * scale;
                let mut p = base;
                let mut m = base;
                match j {
                    0 => {
                        p.freq += step;
                        m.freq -= step;
                    }
                    1 => {
                        p.q += step;
                        m.q -= step;
                    }
                    _ => {
                        p.gain_db += step;
                        m.gain_db -= step;
                    }
                }
                let cp = design(&p).unwrap().as_array();
                let cm = design(&m).unwrap().as_array();
                for i in 0..5 {
                    let fd = (cp[i] - cm[i]) / (2.0 * step);
                    assert!((fd - jac[i][j]).abs() <= 1e-6 * fd.abs().max(1.0 / scale), "{kind:?} {i} {j}");
                }
            }
        }
    }
}
