//! Ping-pong delay realised as a truncated FIR by frequency sampling, with a damped complex
//! exponential standing in for the delay operator so the delay time receives gradients.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::biquad::{design_vjp, design_with_jacobian, BiquadCoeffs, FilterKind, FilterSpec};
use crate::error::{Error, Result};
use crate::fft::{convolve, correlate, irfft, irfft_adjoint};
use crate::params::{DelayParams, FilterParams};

/// IR length and frequency-sampling grid of the delay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelayConfig {
    pub ir_len: usize,
    pub fft_len: usize,
}

impl DelayConfig {
    /// IR of `ir_len` samples on a grid of the next power of two `>= 2 ir_len`.
    pub fn new(ir_len: usize) -> Self {
        Self {
            ir_len,
            fft_len: (2 * ir_len.max(1)).next_power_of_two(),
        }
    }

    /// Four-second IR.
    pub fn for_sample_rate(sample_rate: f64) -> Self {
        Self::new((4.0 * sample_rate).round() as usize)
    }
}

/// Constant-power pan law `(cos(p pi/2), sin(p pi/2))`.
pub fn pan_gains(p: f64) -> (f64, f64) {
    let a = p * FRAC_PI_2;
    (a.cos(), a.sin())
}

/// Derivatives of [`pan_gains`].
pub fn pan_gains_deriv(p: f64) -> (f64, f64) {
    let a = p * FRAC_PI_2;
    (-FRAC_PI_2 * a.sin(), FRAC_PI_2 * a.cos())
}

/// Number of odd and even echo terms for delay `d` within `ir_len` samples. At least the
/// direct (first) echo is always kept.
pub fn term_counts(d: f64, ir_len: usize) -> (usize, usize) {
    let n = ir_len as f64;
    let odd = ((n - d) / (2.0 * d)).floor().max(1.0) as usize;
    let even = ((n / (2.0 * d)).floor() - 1.0).max(0.0) as usize;
    (odd, even)
}

fn low_pass_spec(p: &DelayParams, fs: f64) -> FilterSpec {
    FilterSpec::new(FilterKind::LowPass, &p.low_pass, fs)
}

fn bin_omega(k: usize, fft_len: usize) -> f64 {
    2.0 * PI * k as f64 / fft_len as f64
}

fn lp_response(c: &BiquadCoeffs, w: f64) -> (Complex64, Complex64, Complex64) {
    let z1 = Complex64::from_polar(1.0, -w);
    let z2 = z1 * z1;
    let num = c.b0 + c.b1 * z1 + c.b2 * z2;
    let den = 1.0 + c.a1 * z1 + c.a2 * z2;
    (num / den, z1, den)
}

/// `(H_odd, H_even)` on the `fft_len / 2 + 1` bins of the frequency-sampling grid.
pub fn delay_responses(p: &DelayParams, fs: f64, cfg: &DelayConfig) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if !(p.delay >= 1.0) {
        return Err(Error::InvalidArgument(format!("delay must be at least one sample, got {}", p.delay)));
    }
    let (c, _) = design_with_jacobian(&low_pass_spec(p, fs))?;
    let (ko, ke) = term_counts(p.delay, cfg.ir_len);
    let g2 = p.feedback * p.feedback;
    let damp = p.log_eta * cfg.ir_len as f64 / (2.0 * PI);
    let bins = cfg.fft_len / 2 + 1;
    let (odd, even): (Vec<_>, Vec<_>) = (0..bins)
        .into_par_iter()
        .map(|k| {
            let w = bin_omega(k, cfg.fft_len);
            let r = lp_response(&c, w).0 * Complex64::new(damp * w, -w * p.delay).exp();
            let r2 = r * r;
            let (mut odd, mut even) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            // term j of the odd sum is g^{2j} r^{2j+1}; term j of the even sum is g^{2j+2} r^{2j+2}
            let mut t = r;
            for j in 0..ko.max(ke) {
                if j < ko {
                    odd += t;
                }
                if j < ke {
                    even += t * r * g2;
                }
                t *= r2 * g2;
            }
            (odd, even)
        })
        .unzip();
    Ok((odd, even))
}

/// Stereo delay IR and its odd/even components.
#[derive(Clone, Debug)]
pub struct DelayIr {
    pub odd: Vec<f64>,
    pub even: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// `h_DLY = PAN_odd(h_odd) + PAN_even(h_even)`, truncated to `ir_len`.
pub fn delay_ir(p: &DelayParams, fs: f64, cfg: &DelayConfig) -> Result<DelayIr> {
    let (ho, he) = delay_responses(p, fs, cfg)?;
    let mut odd = irfft(&ho, cfg.fft_len);
    let mut even = irfft(&he, cfg.fft_len);
    odd.truncate(cfg.ir_len);
    even.truncate(cfg.ir_len);
    let (ol, or) = pan_gains(p.pan_odd);
    let (el, er) = pan_gains(p.pan_even);
    let left = odd.iter().zip(&even).map(|(o, e)| ol * o + el * e).collect();
    let right = odd.iter().zip(&even).map(|(o, e)| or * o + er * e).collect();
    Ok(DelayIr { odd, even, left, right })
}

/// Values kept for [`pingpong_vjp`].
#[derive(Clone, Debug)]
pub struct DelayTape {
    pub ir: DelayIr,
    wet: [Vec<f64>; 2],
}

/// `y = g_DLY (x * h_DLY)`, truncated to the input length.
pub fn pingpong(x: &[f64], p: &DelayParams, fs: f64, cfg: &DelayConfig) -> Result<[Vec<f64>; 2]> {
    pingpong_forward(x, p, fs, cfg).map(|(y, _)| y)
}

pub fn pingpong_forward(x: &[f64], p: &DelayParams, fs: f64, cfg: &DelayConfig) -> Result<([Vec<f64>; 2], DelayTape)> {
    let ir = delay_ir(p, fs, cfg)?;
    let n = x.len();
    let (wl, wr) = rayon::join(|| convolve(x, &ir.left, n), || convolve(x, &ir.right, n));
    let y = [
        wl.iter().map(|v| v * p.gain).collect(),
        wr.iter().map(|v| v * p.gain).collect(),
    ];
    Ok((y, DelayTape { ir, wet: [wl, wr] }))
}

/// Cotangents of the input and of the delay parameters.
pub fn pingpong_vjp(
    x: &[f64],
    p: &DelayParams,
    fs: f64,
    cfg: &DelayConfig,
    tape: &DelayTape,
    gy: [&[f64]; 2],
) -> Result<(Vec<f64>, DelayParams)> {
    let mut grad = DelayParams::default();
    grad.gain = (0..2)
        .map(|c| gy[c].iter().zip(&tape.wet[c]).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let n = x.len();
    let ir_used = cfg.ir_len.min(n);
    let ((xl, xr), (hl, hr)) = rayon::join(
        || {
            rayon::join(
                || correlate(gy[0], &tape.ir.left, n),
                || correlate(gy[1], &tape.ir.right, n),
            )
        },
        || rayon::join(|| correlate(gy[0], x, ir_used), || correlate(gy[1], x, ir_used)),
    );
    let gx: Vec<f64> = xl.iter().zip(&xr).map(|(a, b)| p.gain * (a + b)).collect();
    let gl: Vec<f64> = hl.iter().map(|v| v * p.gain).collect();
    let gr: Vec<f64> = hr.iter().map(|v| v * p.gain).collect();
    let g_ir = delay_ir_vjp(p, fs, cfg, &tape.ir, &gl, &gr)?;
    grad.feedback = g_ir.feedback;
    grad.delay = g_ir.delay;
    grad.log_eta = g_ir.log_eta;
    grad.low_pass = g_ir.low_pass;
    grad.pan_odd = g_ir.pan_odd;
    grad.pan_even = g_ir.pan_even;
    Ok((gx, grad))
}

/// Pulls cotangents of the left/right IRs (possibly shorter than `ir_len`) back to the
/// parameters that shape the IR.
pub fn delay_ir_vjp(
    p: &DelayParams,
    fs: f64,
    cfg: &DelayConfig,
    ir: &DelayIr,
    g_left: &[f64],
    g_right: &[f64],
) -> Result<DelayParams> {
    let mut grad = DelayParams::default();
    let m = g_left.len().min(cfg.ir_len);
    let (ol, or) = pan_gains(p.pan_odd);
    let (el, er) = pan_gains(p.pan_even);
    let (dol, dor) = pan_gains_deriv(p.pan_odd);
    let (del, der) = pan_gains_deriv(p.pan_even);
    let mut g_odd = vec![0.0; m];
    let mut g_even = vec![0.0; m];
    for i in 0..m {
        g_odd[i] = ol * g_left[i] + or * g_right[i];
        g_even[i] = el * g_left[i] + er * g_right[i];
        grad.pan_odd += ir.odd[i] * (dol * g_left[i] + dor * g_right[i]);
        grad.pan_even += ir.even[i] * (del * g_left[i] + der * g_right[i]);
    }
    let go = irfft_adjoint(&g_odd, cfg.fft_len);
    let ge = irfft_adjoint(&g_even, cfg.fft_len);

    let (c, jac) = design_with_jacobian(&low_pass_spec(p, fs))?;
    let (ko, ke) = term_counts(p.delay, cfg.ir_len);
    let gamma = p.feedback;
    let g2 = gamma * gamma;
    let big_n = cfg.ir_len as f64;
    let damp = p.log_eta * big_n / (2.0 * PI);

    // per bin: [d, log_eta, gamma, b0, b1, b2, a1, a2]
    let acc = (0..go.len())
        .into_par_iter()
        .fold(
            || [0.0f64; 8],
            |mut acc, k| {
                let w = bin_omega(k, cfg.fft_len);
                let (h, z1, den) = lp_response(&c, w);
                let dd = Complex64::new(damp * w, -w * p.delay).exp();
                let r = h * dd;
                let r2 = r * r;
                // dH/dr and dH/dgamma for both sums
                let (mut dodd_r, mut dodd_g) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                let (mut deven_r, mut deven_g) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                // rp = r^{2j}, gp = gamma^{2j}
                let mut rp = Complex64::new(1.0, 0.0);
                let mut gp = 1.0;
                for j in 0..ko.max(ke) {
                    let jf = j as f64;
                    if j < ko {
                        dodd_r += rp * gp * (2.0 * jf + 1.0);
                        if j > 0 {
                            dodd_g += rp * r * (2.0 * jf) * gamma.powi(2 * j as i32 - 1);
                        }
                    }
                    if j < ke {
                        deven_r += rp * r * gp * g2 * (2.0 * jf + 2.0);
                        deven_g += rp * r2 * gp * (2.0 * jf + 2.0) * gamma;
                    }
                    rp *= r2;
                    gp *= g2;
                }
                // doubled interior bins are already folded into the irfft adjoint
                let gr = go[k] * dodd_r.conj() + ge[k] * deven_r.conj();
                acc[2] += (go[k].conj() * dodd_g + ge[k].conj() * deven_g).re;
                let g_dd = gr * h.conj();
                let g_h = gr * dd.conj();
                acc[0] += (g_dd.conj() * (Complex64::new(0.0, -w) * dd)).re;
                acc[1] += (g_dd.conj() * (dd * (w * big_n / (2.0 * PI)))).re;
                let zk = [Complex64::new(1.0, 0.0), z1, z1 * z1];
                for i in 0..3 {
                    acc[3 + i] += (g_h.conj() * (zk[i] / den)).re;
                }
                for i in 1..3 {
                    acc[5 + i] += (g_h.conj() * (-h * zk[i] / den)).re;
                }
                acc
            },
        )
        .reduce(
            || [0.0; 8],
            |mut a, b| {
                for i in 0..8 {
                    a[i] += b[i];
                }
                a
            },
        );
    grad.delay = acc[0];
    grad.log_eta = acc[1];
    grad.feedback = acc[2];
    let gc = BiquadCoeffs::from_array([acc[3], acc[4], acc[5], acc[6], acc[7]]);
    let gf: FilterParams = design_vjp(&jac, &gc);
    grad.low_pass = FilterParams {
        freq: gf.freq,
        q: gf.q,
        gain_db: 0.0,
    };
    Ok(grad)
}
