//! Six-line feedback delay network with an orthogonal feedback matrix and frequency-dependent
//! attenuation, realised as a truncated 2-in/2-out IR by frequency sampling.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biquad::{
    design_vjp, design_with_jacobian, filter_forward, filter_vjp, BiquadCoeffs, DesignJacobian, FilterKind,
    FilterSpec,
};
use crate::error::{Error, Result};
use crate::fft::{convolve, correlate, irfft, irfft_adjoint};
use crate::params::{FdnParams, FilterParams, ToneParams};

/// Delay-line lengths in samples, pairwise co-prime.
pub const DELAY_LENGTHS: [usize; 6] = [997, 1153, 1327, 1559, 1801, 2099];

/// Number of attenuation samples spread evenly over `[0, pi]`.
pub const GAMMA_POINTS: usize = 49;

const LINES: usize = 6;
/// Bins per work item; fixed so sums are reduced in the same order for any worker count.
const BIN_BLOCK: usize = 4096;
const SINGULAR_PIVOT: f64 = 1e-13;
const REGULARISATION: f64 = 1e-12;

static SINGULAR_WARNED: AtomicBool = AtomicBool::new(false);

type C = Complex64;
type Mat6 = [[C; LINES]; LINES];

/// How the 49 attenuation samples are upsampled to the FFT bins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Monotone piecewise-cubic Hermite.
    #[default]
    Pchip,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FdnConfig {
    pub ir_len: usize,
    pub fft_len: usize,
    pub interpolation: Interpolation,
}

impl FdnConfig {
    pub fn new(ir_len: usize) -> Self {
        Self {
            ir_len,
            fft_len: (2 * ir_len.max(1)).next_power_of_two(),
            interpolation: Interpolation::Pchip,
        }
    }

    /// Twelve-second IR.
    pub fn for_sample_rate(sample_rate: f64) -> Self {
        Self::new((12.0 * sample_rate).round() as usize)
    }

    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }
}

fn pchip_slopes(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let delta: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a * b > 0.0 {
            d[k] = 2.0 * a * b / (a + b);
        }
    }
    d[0] = edge_slope(delta[0], delta[1]);
    d[n - 1] = edge_slope(delta[n - 2], delta[n - 3]);
    d
}

fn edge_slope(d0: f64, d1: f64) -> f64 {
    let d = (3.0 * d0 - d1) / 2.0;
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

// d(edge slope)/d(d0, d1)
fn edge_slope_grad(d0: f64, d1: f64) -> (f64, f64) {
    let d = (3.0 * d0 - d1) / 2.0;
    if d.signum() != d0.signum() || d0 == 0.0 {
        (0.0, 0.0)
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        (3.0, 0.0)
    } else {
        (1.5, -0.5)
    }
}

fn bin_position(k: usize, bins: usize, nodes: usize) -> (usize, f64) {
    let u = if bins > 1 { k as f64 * (nodes - 1) as f64 / (bins - 1) as f64 } else { 0.0 };
    let seg = (u.floor() as usize).min(nodes - 2);
    (seg, u - seg as f64)
}

fn hermite(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2]
}

/// Attenuation `gamma` at each of `bins` evenly spaced bins over `[0, pi]`.
pub fn attenuation_response(samples: &[f64], bins: usize, kind: Interpolation) -> Vec<f64> {
    if samples.len() == 1 {
        return vec![samples[0]; bins];
    }
    let d = pchip_slopes(samples);
    (0..bins)
        .into_par_iter()
        .map(|k| {
            let (s, t) = bin_position(k, bins, samples.len());
            let (y0, y1) = (samples[s], samples[s + 1]);
            match kind {
                Interpolation::Linear => y0 + t * (y1 - y0),
                Interpolation::Pchip => {
                    let h = hermite(t);
                    h[0] * y0 + h[1] * d[s] + h[2] * y1 + h[3] * d[s + 1]
                }
            }
        })
        .collect()
}

/// Pulls per-bin cotangents back to the attenuation samples.
pub fn attenuation_vjp(samples: &[f64], grad_bins: &[f64], kind: Interpolation) -> Vec<f64> {
    let n = samples.len();
    let bins = grad_bins.len();
    let mut gy = vec![0.0; n];
    if n == 1 {
        gy[0] = grad_bins.iter().sum();
        return gy;
    }
    let mut gd = vec![0.0; n];
    for (k, &g) in grad_bins.iter().enumerate() {
        let (s, t) = bin_position(k, bins, n);
        match kind {
            Interpolation::Linear => {
                gy[s] += g * (1.0 - t);
                gy[s + 1] += g * t;
            }
            Interpolation::Pchip => {
                let h = hermite(t);
                gy[s] += g * h[0];
                gd[s] += g * h[1];
                gy[s + 1] += g * h[2];
                gd[s + 1] += g * h[3];
            }
        }
    }
    if kind == Interpolation::Linear {
        return gy;
    }
    let delta: Vec<f64> = samples.windows(2).map(|w| w[1] - w[0]).collect();
    let mut gdelta = vec![0.0; n - 1];
    if n == 2 {
        gdelta[0] = gd[0] + gd[1];
    } else {
        for k in 1..n - 1 {
            let (a, b) = (delta[k - 1], delta[k]);
            if a * b > 0.0 {
                let s2 = (a + b) * (a + b);
                gdelta[k - 1] += gd[k] * 2.0 * b * b / s2;
                gdelta[k] += gd[k] * 2.0 * a * a / s2;
            }
        }
        let (g0, g1) = edge_slope_grad(delta[0], delta[1]);
        gdelta[0] += gd[0] * g0;
        gdelta[1] += gd[0] * g1;
        let (g0, g1) = edge_slope_grad(delta[n - 2], delta[n - 3]);
        gdelta[n - 2] += gd[n - 1] * g0;
        gdelta[n - 3] += gd[n - 1] * g1;
    }
    for (k, g) in gdelta.iter().enumerate() {
        gy[k + 1] += g;
        gy[k] -= g;
    }
    gy
}

/// T60 in seconds for a per-sample attenuation `gamma`; infinite at `gamma >= 1`.
pub fn t60(gamma: f64, sample_rate: f64) -> f64 {
    if gamma >= 1.0 {
        return f64::INFINITY;
    }
    if gamma <= 0.0 {
        return 0.0;
    }
    -60.0 / (20.0 * gamma.log10()) / sample_rate
}

/// T60 at each bin of the interpolated attenuation curve.
pub fn t60_map(samples: &[f64], bins: usize, sample_rate: f64, kind: Interpolation) -> Vec<f64> {
    attenuation_response(samples, bins, kind)
        .into_iter()
        .map(|g| t60(g, sample_rate))
        .collect()
}

/// `freq_hz,t60_s` over `points` frequencies from 0 to Nyquist.
pub fn t60_csv(samples: &[f64], sample_rate: f64, points: usize, kind: Interpolation) -> String {
    let t = t60_map(samples, points, sample_rate, kind);
    let mut out = String::from("freq_hz,t60_s\n");
    for (k, v) in t.iter().enumerate() {
        let f = k as f64 * sample_rate / 2.0 / (points.max(2) - 1) as f64;
        out.push_str(&format!("{f},{v}\n"));
    }
    out
}

struct Lu {
    m: Mat6,
    piv: [usize; LINES],
    inv_diag: [C; LINES],
}

fn lu_factor(mut m: Mat6) -> (Lu, bool) {
    let mut piv = [0; LINES];
    let mut inv_diag = [C::new(0.0, 0.0); LINES];
    let mut singular = false;
    for k in 0..LINES {
        let p = (k..LINES)
            .max_by(|&a, &b| m[a][k].norm_sqr().total_cmp(&m[b][k].norm_sqr()))
            .unwrap();
        piv[k] = p;
        m.swap(k, p);
        let pivot = m[k][k];
        if pivot.norm() < SINGULAR_PIVOT {
            singular = true;
        }
        if pivot.norm_sqr() == 0.0 {
            continue;
        }
        let inv = pivot.inv();
        inv_diag[k] = inv;
        for i in k + 1..LINES {
            let f = m[i][k] * inv;
            m[i][k] = f;
            for j in k + 1..LINES {
                let v = m[k][j];
                m[i][j] -= f * v;
            }
        }
    }
    (Lu { m, piv, inv_diag }, singular)
}

impl Lu {
    fn solve(&self, b: &mut [C; LINES]) {
        for k in 0..LINES {
            b.swap(k, self.piv[k]);
        }
        for i in 0..LINES {
            for j in 0..i {
                let v = b[j];
                b[i] -= self.m[i][j] * v;
            }
        }
        for i in (0..LINES).rev() {
            for j in i + 1..LINES {
                let v = b[j];
                b[i] -= self.m[i][j] * v;
            }
            b[i] *= self.inv_diag[i];
        }
    }
}

impl Lu {
    /// Solves `M^H y = b` with the factors of `P M = L U`: `U^H z = b`, `L^H v = z`, `y = P^T v`.
    fn solve_adjoint(&self, b: &mut [C; LINES]) {
        for i in 0..LINES {
            for j in 0..i {
                let v = b[j];
                b[i] -= self.m[j][i].conj() * v;
            }
            b[i] *= self.inv_diag[i].conj();
        }
        for i in (0..LINES).rev() {
            for j in i + 1..LINES {
                let v = b[j];
                b[i] -= self.m[j][i].conj() * v;
            }
        }
        for k in (0..LINES).rev() {
            b.swap(k, self.piv[k]);
        }
    }
}

fn factor_regularised(m: Mat6) -> Lu {
    let (lu, singular) = lu_factor(m);
    if !singular {
        return lu;
    }
    if !SINGULAR_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("near-singular FDN system at some bin; adding {REGULARISATION} to the diagonal");
    }
    let mut m = m;
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += REGULARISATION;
    }
    lu_factor(m).0
}

/// `diag(z^m) - U diag(gamma^m)` with `z^m` given per line.
fn system_matrix(u: &[[f64; LINES]; LINES], line_gain: &[f64; LINES], zm: &[C; LINES]) -> Mat6 {
    let mut m = [[C::new(0.0, 0.0); LINES]; LINES];
    for i in 0..LINES {
        for j in 0..LINES {
            m[i][j] = C::new(-u[i][j] * line_gain[j], 0.0);
        }
        m[i][i] += zm[i];
    }
    m
}

/// `z^(m_i)` on consecutive bins of an `fft_len` grid, seeded exactly at the first bin of a
/// block and advanced by rotation.
struct LinePhasors {
    z: [C; LINES],
    step: [C; LINES],
}

impl LinePhasors {
    fn new(first_bin: usize, fft_len: usize) -> Self {
        let at = |k: usize, m: usize| {
            let r = ((k as u128 * m as u128) % fft_len as u128) as f64;
            C::from_polar(1.0, 2.0 * PI * r / fft_len as f64)
        };
        Self {
            z: std::array::from_fn(|i| at(first_bin, DELAY_LENGTHS[i])),
            step: std::array::from_fn(|i| at(1, DELAY_LENGTHS[i])),
        }
    }

    fn next(&mut self) -> [C; LINES] {
        let out = self.z;
        for i in 0..LINES {
            self.z[i] *= self.step[i];
        }
        out
    }
}

fn line_gains(gamma: f64) -> [f64; LINES] {
    std::array::from_fn(|i| gamma.powi(DELAY_LENGTHS[i] as i32))
}

fn solve_columns(lu: &Lu, b: &[[f64; 2]; LINES]) -> [[C; LINES]; 2] {
    std::array::from_fn(|j| {
        let mut col: [C; LINES] = std::array::from_fn(|i| C::new(b[i][j], 0.0));
        lu.solve(&mut col);
        col
    })
}

/// Per-bin 2x2 transfer `H[out][in]` on the `fft_len / 2 + 1` bins.
pub fn fdn_transfer(p: &FdnParams, cfg: &FdnConfig) -> Result<[[Vec<C>; 2]; 2]> {
    check_params(p)?;
    let bins = cfg.bins();
    let gamma = attenuation_response(&p.gamma, bins, cfg.interpolation);
    let mut h: [[Vec<C>; 2]; 2] = std::array::from_fn(|_| std::array::from_fn(|_| vec![C::new(0.0, 0.0); bins]));
    let [[h00, h01], [h10, h11]] = &mut h;
    h00.par_chunks_mut(BIN_BLOCK)
        .zip(h01.par_chunks_mut(BIN_BLOCK))
        .zip(h10.par_chunks_mut(BIN_BLOCK).zip(h11.par_chunks_mut(BIN_BLOCK)))
        .enumerate()
        .for_each(|(blk, ((a, b), (c, d)))| {
            let mut ph = LinePhasors::new(blk * BIN_BLOCK, cfg.fft_len);
            for (o, k) in (blk * BIN_BLOCK..).take(a.len()).enumerate() {
                let lu = factor_regularised(system_matrix(&p.u, &line_gains(gamma[k]), &ph.next()));
                let x = solve_columns(&lu, &p.b);
                let out = |ch: usize, j: usize| (0..LINES).map(|i| p.c[ch][i] * x[j][i]).sum::<C>();
                a[o] = out(0, 0);
                b[o] = out(0, 1);
                c[o] = out(1, 0);
                d[o] = out(1, 1);
            }
        });
    Ok(h)
}

fn check_params(p: &FdnParams) -> Result<()> {
    if p.gamma.len() < 2 {
        return Err(Error::Layout {
            expected: GAMMA_POINTS,
            actual: p.gamma.len(),
        });
    }
    if let Some(g) = p.gamma.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
        return Err(Error::InvalidArgument(format!("attenuation sample {g} is outside (0, 1)")));
    }
    Ok(())
}

/// Stereo IR `h[out][in]`.
#[derive(Clone, Debug)]
pub struct FdnIr {
    pub h: [[Vec<f64>; 2]; 2],
}

impl FdnIr {
    pub fn len(&self) -> usize {
        self.h[0][0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tone PEQ stages applied to the reverb IR: two peaks, low shelf, high shelf.
pub fn tone_specs(t: &ToneParams, fs: f64) -> [FilterSpec; 4] {
    [
        FilterSpec::new(FilterKind::Peak, &t.pk1, fs),
        FilterSpec::new(FilterKind::Peak, &t.pk2, fs),
        FilterSpec::new(FilterKind::LowShelf, &t.low_shelf, fs),
        FilterSpec::new(FilterKind::HighShelf, &t.high_shelf, fs),
    ]
}

/// Values kept for [`fdn_ir_vjp`].
#[derive(Clone, Debug)]
pub struct FdnIrTape {
    tone: [(BiquadCoeffs, DesignJacobian); 4],
    // states[c][j][stage]
    states: Vec<Vec<f64>>,
}

/// Full-length IR with the tone PEQ applied.
pub fn fdn_ir(p: &FdnParams, fs: f64, cfg: &FdnConfig) -> Result<FdnIr> {
    fdn_ir_forward(p, fs, cfg, cfg.ir_len).map(|(ir, _)| ir)
}

/// IR truncated to `min(len, ir_len)` samples. The tone PEQ is causal, so truncating before
/// filtering gives the same samples as truncating afterwards.
pub fn fdn_ir_forward(p: &FdnParams, fs: f64, cfg: &FdnConfig, len: usize) -> Result<(FdnIr, FdnIrTape)> {
    let len = len.min(cfg.ir_len);
    let h = fdn_transfer(p, cfg)?;
    let tone: [(BiquadCoeffs, DesignJacobian); 4] = {
        let specs = tone_specs(&p.tone, fs);
        let mut out = [(BiquadCoeffs::IDENTITY, [[0.0; 3]; 5]); 4];
        for (o, s) in out.iter_mut().zip(&specs) {
            *o = design_with_jacobian(s)?;
        }
        out
    };
    let raw: Vec<Vec<f64>> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .par_iter()
        .map(|&(c, j)| {
            let mut v = irfft(&h[c][j], cfg.fft_len);
            v.truncate(len);
            v
        })
        .collect();
    let filtered: Vec<(Vec<f64>, Vec<Vec<f64>>)> = raw
        .into_par_iter()
        .map(|mut v| {
            let mut states = Vec::with_capacity(4);
            for (c, _) in &tone {
                let (y, w) = filter_forward(&v, c)?;
                states.push(w);
                v = y;
            }
            Ok((v, states))
        })
        .collect::<Result<_>>()?;
    let mut states = Vec::with_capacity(16);
    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(4);
    for (v, s) in filtered {
        outs.push(v);
        states.extend(s);
    }
    let mut it = outs.into_iter();
    let mut next = || it.next().unwrap();
    let ir = FdnIr {
        h: [[next(), next()], [next(), next()]],
    };
    Ok((ir, FdnIrTape { tone, states }))
}

/// Pulls IR cotangents `g[out][in]` back to the FDN parameters.
pub fn fdn_ir_vjp(p: &FdnParams, cfg: &FdnConfig, tape: &FdnIrTape, g: &[[Vec<f64>; 2]; 2]) -> Result<FdnParams> {
    check_params(p)?;
    let pairs = [(0, 0), (0, 1), (1, 0), (1, 1)];
    // back through the tone PEQ
    let through: Vec<(Vec<f64>, [BiquadCoeffs; 4])> = pairs
        .par_iter()
        .enumerate()
        .map(|(idx, &(c, j))| {
            let mut gv = g[c][j].clone();
            let mut gc = [BiquadCoeffs::from_array([0.0; 5]); 4];
            for stage in (0..4).rev() {
                let (gx, gcs) = filter_vjp(&tape.states[idx * 4 + stage], &tape.tone[stage].0, &gv)?;
                gc[stage] = gcs;
                gv = gx;
            }
            Ok((gv, gc))
        })
        .collect::<Result<_>>()?;
    let mut grad = FdnParams {
        gamma: vec![0.0; p.gamma.len()],
        ..FdnParams::default()
    };
    let mut tone_grads = [FilterParams::default(); 4];
    for (stage, tg) in tone_grads.iter_mut().enumerate() {
        let mut sum = [0.0; 5];
        for (_, gc) in &through {
            for (s, v) in sum.iter_mut().zip(gc[stage].as_array()) {
                *s += v;
            }
        }
        *tg = design_vjp(&tape.tone[stage].1, &BiquadCoeffs::from_array(sum));
    }
    grad.tone = ToneParams {
        pk1: tone_grads[0],
        pk2: tone_grads[1],
        low_shelf: tone_grads[2],
        high_shelf: tone_grads[3],
    };

    let spec_grads: Vec<Vec<C>> = through.par_iter().map(|(gv, _)| irfft_adjoint(gv, cfg.fft_len)).collect();
    let gamma = attenuation_response(&p.gamma, cfg.bins(), cfg.interpolation);

    #[derive(Clone, Copy)]
    struct Acc {
        b: [[f64; 2]; LINES],
        c: [[f64; LINES]; 2],
        u: [[f64; LINES]; LINES],
    }
    let zero = Acc {
        b: [[0.0; 2]; LINES],
        c: [[0.0; LINES]; 2],
        u: [[0.0; LINES]; LINES],
    };
    let add = |t: &mut Acc, a: &Acc| {
        for i in 0..LINES {
            for j in 0..2 {
                t.b[i][j] += a.b[i][j];
                t.c[j][i] += a.c[j][i];
            }
            for j in 0..LINES {
                t.u[i][j] += a.u[i][j];
            }
        }
    };
    let mut g_gamma = vec![0.0; cfg.bins()];
    // fixed blocks summed in order, so the result does not depend on the worker count
    let partial: Vec<Acc> = g_gamma
        .par_chunks_mut(BIN_BLOCK)
        .enumerate()
        .map(|(blk, gg_out)| {
            let mut a = zero;
            let mut ph = LinePhasors::new(blk * BIN_BLOCK, cfg.fft_len);
            for (o, k) in (blk * BIN_BLOCK..).take(gg_out.len()).enumerate() {
                let hb = [[spec_grads[0][k], spec_grads[1][k]], [spec_grads[2][k], spec_grads[3][k]]];
                let lg = line_gains(gamma[k]);
                let lu = factor_regularised(system_matrix(&p.u, &lg, &ph.next()));
                let x = solve_columns(&lu, &p.b);
                for c in 0..2 {
                    for i in 0..LINES {
                        a.c[c][i] += (0..2).map(|j| (hb[c][j] * x[j][i].conj()).re).sum::<f64>();
                    }
                }
                // y = M^{-H} C^T Hbar, one column per input
                let y: [[C; LINES]; 2] = std::array::from_fn(|j| {
                    let mut col: [C; LINES] = std::array::from_fn(|i| (0..2).map(|c| hb[c][j] * p.c[c][i]).sum());
                    lu.solve_adjoint(&mut col);
                    col
                });
                for i in 0..LINES {
                    for j in 0..2 {
                        a.b[i][j] += y[j][i].re;
                    }
                }
                let mut g_lines = [0.0; LINES];
                for r in 0..LINES {
                    for s in 0..LINES {
                        // Mbar = -y x^H
                        let mbar = -(y[0][r] * x[0][s].conj() + y[1][r] * x[1][s].conj()).re;
                        a.u[r][s] -= lg[s] * mbar;
                        g_lines[s] -= p.u[r][s] * mbar;
                    }
                }
                let g = gamma[k];
                gg_out[o] = (0..LINES)
                    .map(|s| {
                        let m = DELAY_LENGTHS[s] as i32;
                        g_lines[s] * m as f64 * g.powi(m - 1)
                    })
                    .sum();
            }
            a
        })
        .collect();
    let mut acc = zero;
    for a in &partial {
        add(&mut acc, a);
    }
    grad.b = acc.b;
    grad.c = acc.c;
    grad.u = acc.u;
    grad.gamma = attenuation_vjp(&p.gamma, &g_gamma, cfg.interpolation);
    Ok(grad)
}

/// `y_out = sum_in x_in * h[out][in]`, truncated to the input length.
pub fn reverb(x: [&[f64]; 2], ir: &FdnIr) -> [Vec<f64>; 2] {
    let n = x[0].len();
    let parts: Vec<Vec<f64>> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .par_iter()
        .map(|&(c, j)| convolve(x[j], &ir.h[c][j], n))
        .collect();
    [
        parts[0].iter().zip(&parts[1]).map(|(a, b)| a + b).collect(),
        parts[2].iter().zip(&parts[3]).map(|(a, b)| a + b).collect(),
    ]
}

/// Cotangents of the inputs and of the IR (`h[out][in]`, truncated to `min(n, ir.len())`).
pub fn reverb_vjp(x: [&[f64]; 2], ir: &FdnIr, gy: [&[f64]; 2]) -> ([Vec<f64>; 2], [[Vec<f64>; 2]; 2]) {
    let n = x[0].len();
    let m = ir.len().min(n);
    let pairs = [(0, 0), (0, 1), (1, 0), (1, 1)];
    let gx_parts: Vec<Vec<f64>> = pairs.par_iter().map(|&(c, j)| correlate(gy[c], &ir.h[c][j], n)).collect();
    let gh: Vec<Vec<f64>> = pairs.par_iter().map(|&(c, j)| correlate(gy[c], x[j], m)).collect();
    let gx = [
        gx_parts[0].iter().zip(&gx_parts[2]).map(|(a, b)| a + b).collect(),
        gx_parts[1].iter().zip(&gx_parts[3]).map(|(a, b)| a + b).collect(),
    ];
    let mut it = gh.into_iter();
    let mut next = || it.next().unwrap();
    (gx, [[next(), next()], [next(), next()]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::orthogonal::map_orthogonal;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const FS: f64 = 44100.0;

    fn neutral_tone() -> ToneParams {
        let f = |freq| FilterParams { freq, q: 0.707, gain_db: 0.0 };
        ToneParams {
            pk1: f(500.0),
            pk2: f(3000.0),
            low_shelf: f(200.0),
            high_shelf: f(8000.0),
        }
    }

    fn random_orthogonal(rng: &mut ChaCha8Rng) -> [[f64; 6]; 6] {
        let theta = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = map_orthogonal(&theta).unwrap();
        std::array::from_fn(|i| std::array::from_fn(|j| u[(i, j)]))
    }

    fn random_params(rng: &mut ChaCha8Rng, gamma: Vec<f64>) -> FdnParams {
        FdnParams {
            b: std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))),
            c: std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))),
            u: random_orthogonal(rng),
            gamma,
            tone: neutral_tone(),
        }
    }

    /// Sample-by-sample recursion with per-line gains `gamma^m`:
    /// `q[n] = B x[n] + U G s[n]`, `s_i[n] = q_i[n - m_i]`, `y[n] = C s[n]`.
    fn recursion(p: &FdnParams, gamma: f64, input: usize, len: usize) -> [Vec<f64>; 2] {
        let lg = line_gains(gamma);
        let mut q = vec![[0.0; LINES]; len];
        let mut y = [vec![0.0; len], vec![0.0; len]];
        for n in 0..len {
            let s: [f64; LINES] = std::array::from_fn(|i| if n >= DELAY_LENGTHS[i] { q[n - DELAY_LENGTHS[i]][i] } else { 0.0 });
            let x = if n == 0 { 1.0 } else { 0.0 };
            for i in 0..LINES {
                q[n][i] = p.b[i][input] * x + (0..LINES).map(|j| p.u[i][j] * lg[j] * s[j]).sum::<f64>();
            }
            for c in 0..2 {
                y[c][n] = (0..LINES).map(|i| p.c[c][i] * s[i]).sum();
            }
        }
        y
    }

    fn snr_db(reference: &[f64], test: &[f64]) -> f64 {
        let s: f64 = reference.iter().map(|v| v * v).sum();
        let e: f64 = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum();
        10.0 * (s / e.max(1e-300)).log10()
    }

    #[test]
    fn constant_samples_interpolate_to_constant() {
        for kind in [Interpolation::Pchip, Interpolation::Linear] {
            let g = attenuation_response(&[0.97; GAMMA_POINTS], 1025, kind);
            assert!(g.iter().all(|&v| (v - 0.97).abs() < 1e-15));
        }
    }

    #[test]
    fn nodes_are_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..GAMMA_POINTS).map(|_| rng.gen_range(0.9..0.999)).collect();
        let bins = 48 * 16 + 1;
        let g = attenuation_response(&s, bins, Interpolation::Pchip);
        for k in 0..GAMMA_POINTS {
            assert!((g[k * 16] - s[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn ramp_is_piecewise_linear() {
        let s: Vec<f64> = (0..GAMMA_POINTS).map(|k| 0.9 + 0.001 * k as f64).collect();
        let bins = 1000;
        for kind in [Interpolation::Pchip, Interpolation::Linear] {
            let g = attenuation_response(&s, bins, kind);
            for (k, v) in g.iter().enumerate() {
                let expected = 0.9 + 0.001 * 48.0 * k as f64 / (bins - 1) as f64;
                assert!((v - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn interpolation_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<f64> = (0..GAMMA_POINTS).map(|_| rng.gen_range(0.5..0.99)).collect();
        let bins = 333;
        let w: Vec<f64> = (0..bins).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for kind in [Interpolation::Pchip, Interpolation::Linear] {
            let g = attenuation_vjp(&s, &w, kind);
            for k in 0..GAMMA_POINTS {
                let f = |d: f64| {
                    let mut t = s.clone();
                    t[k] += d;
                    attenuation_response(&t, bins, kind).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                };
                let fd = (f(1e-7) - f(-1e-7)) / 2e-7;
                assert!((fd - g[k]).abs() < 1e-6, "{kind:?} node {k}: {fd} vs {}", g[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn pchip_stays_within_node_range(s in proptest::collection::vec(0.01f64..0.999, GAMMA_POINTS)) {
            let g = attenuation_response(&s, 500, Interpolation::Pchip);
            let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = s.iter().cloned().fold(0.0, f64::max);
            prop_assert!(g.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }

    #[test]
    fn zero_output_gains_give_zero_transfer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_params(&mut rng, vec![0.999; GAMMA_POINTS]);
        p.c = [[0.0; 6]; 2];
        let h = fdn_transfer(&p, &FdnConfig::new(2048)).unwrap();
        assert!(h.iter().flatten().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn all_ones_input_with_zero_output_gives_zero_ir() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_params(&mut rng, vec![0.9999; GAMMA_POINTS]);
        p.b = [[1.0; 2]; 6];
        p.c = [[0.0; 6]; 2];
        let ir = fdn_ir(&p, FS, &FdnConfig::new(4096)).unwrap();
        assert!(ir.h.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn vanishing_attenuation_leaves_six_taps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(&mut rng, vec![1e-3; GAMMA_POINTS]);
        let ir = fdn_ir(&p, FS, &FdnConfig::new(4096)).unwrap();
        for c in 0..2 {
            for j in 0..2 {
                let h = &ir.h[c][j];
                for (n, v) in h.iter().enumerate() {
                    let expected = DELAY_LENGTHS
                        .iter()
                        .position(|&m| m == n)
                        .map(|i| p.c[c][i] * p.b[i][j])
                        .unwrap_or(0.0);
                    assert!((v - expected).abs() < 1e-12, "h[{c}][{j}][{n}]");
                }
            }
        }
    }

    #[test]
    fn half_attenuation_matches_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_params(&mut rng, vec![0.5; GAMMA_POINTS]);
        let ir = fdn_ir(&p, FS, &FdnConfig::new(44100)).unwrap();
        for j in 0..2 {
            let y = recursion(&p, 0.5, j, 44100);
            for c in 0..2 {
                assert!(snr_db(&y[c], &ir.h[c][j]) >= 40.0);
            }
        }
    }

    #[test]
    fn long_decay_matches_recursion_on_random_presets() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let len = 44100;
        for _ in 0..20 {
            let gamma = rng.gen_range(0.9995..0.99995);
            let p = random_params(&mut rng, vec![gamma; GAMMA_POINTS]);
            let ir = fdn_ir(&p, FS, &FdnConfig::new(len)).unwrap();
            let j = rng.gen_range(0..2);
            let y = recursion(&p, gamma, j, len);
            for c in 0..2 {
                let snr = snr_db(&y[c], &ir.h[c][j]);
                assert!(snr >= 40.0, "gamma {gamma}: {snr} dB");
            }
        }
    }

    #[test]
    fn transfer_is_linear_in_b_and_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = FdnConfig::new(1024);
        let gamma: Vec<f64> = (0..GAMMA_POINTS).map(|_| rng.gen_range(0.99..0.9999)).collect();
        let p1 = random_params(&mut rng, gamma.clone());
        let mut p2 = p1.clone();
        p2.b = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let mut p12 = p1.clone();
        for i in 0..6 {
            for j in 0..2 {
                p12.b[i][j] = 2.0 * p1.b[i][j] - 0.5 * p2.b[i][j];
            }
        }
        let (h1, h2, h12) = (
            fdn_transfer(&p1, &cfg).unwrap(),
            fdn_transfer(&p2, &cfg).unwrap(),
            fdn_transfer(&p12, &cfg).unwrap(),
        );
        for c in 0..2 {
            for j in 0..2 {
                for k in 0..cfg.bins() {
                    let e = 2.0 * h1[c][j][k] - 0.5 * h2[c][j][k];
                    assert!((h12[c][j][k] - e).norm() <= 1e-9 * (1.0 + e.norm()));
                }
            }
        }
        let mut p3 = p1.clone();
        p3.c = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let mut p13 = p1.clone();
        for c in 0..2 {
            for i in 0..6 {
                p13.c[c][i] = p1.c[c][i] + p3.c[c][i];
            }
        }
        let (h3, h13) = (fdn_transfer(&p3, &cfg).unwrap(), fdn_transfer(&p13, &cfg).unwrap());
        for c in 0..2 {
            for j in 0..2 {
                for k in 0..cfg.bins() {
                    let e = h1[c][j][k] + h3[c][j][k];
                    assert!((h13[c][j][k] - e).norm() <= 1e-9 * (1.0 + e.norm()));
                }
            }
        }
    }

    #[test]
    fn system_is_well_conditioned_within_bounds() {
        let bounds = crate::params::BoundsConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let gamma = bounds.fdn_gamma.hi;
            let p = random_params(&mut rng, vec![gamma; GAMMA_POINTS]);
            for _ in 0..50 {
                let w = rng.gen_range(0.0..PI);
                let zm = std::array::from_fn(|i| C::from_polar(1.0, w * DELAY_LENGTHS[i] as f64));
                let m = system_matrix(&p.u, &line_gains(gamma), &zm);
                let dm = DMatrix::from_fn(6, 6, |i, j| m[i][j]);
                let sv = dm.singular_values();
                let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
                // orthogonal U gives sigma_min >= 1 - gamma^{m_min}
                assert!(smallest >= 0.9 * (1.0 - gamma.powi(997)), "{smallest}");
            }
        }
    }

    #[test]
    fn neutral_tone_leaves_ir_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_params(&mut rng, vec![0.9999; GAMMA_POINTS]);
        let cfg = FdnConfig::new(8192);
        let ir = fdn_ir(&p, FS, &cfg).unwrap();
        let h = fdn_transfer(&p, &cfg).unwrap();
        for c in 0..2 {
            for j in 0..2 {
                let raw = irfft(&h[c][j], cfg.fft_len);
                for n in 0..cfg.ir_len {
                    assert!((raw[n] - ir.h[c][j][n]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn block_energy_decays_at_init() {
        let bounds = crate::params::BoundsConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = bounds.fdn_gamma;
        let gamma: Vec<f64> = (0..GAMMA_POINTS)
            .map(|_| g.lo + (g.hi - g.lo) * rng.gen_range(0.4..0.6))
            .collect();
        let p = random_params(&mut rng, gamma);
        let cfg = FdnConfig::for_sample_rate(FS);
        let ir = fdn_ir(&p, FS, &cfg).unwrap();
        let block = 4410;
        for c in 0..2 {
            let e: Vec<f64> = ir.h[c][0].chunks(block).map(|b| b.iter().map(|v| v * v).sum()).collect();
            let floor = e[1] * 1e-20;
            for k in 2..e.len() {
                if e[k - 1] > floor {
                    assert!(e[k] < e[k - 1], "block {k}: {} vs {}", e[k], e[k - 1]);
                }
            }
        }
    }

    #[test]
    fn t60_values() {
        let g9 = 10f64.powf(-60.0 / (20.0 * FS * 9.0));
        assert!((t60(g9, FS) - 9.0).abs() < 1e-9);
        assert!(t60(1e-300, FS) < 1e-4);
        assert!((t60(0.5, FS) - 60.0 / (20.0 * 2f64.log10()) / FS).abs() < 1e-18);
        assert!((t60(0.5, FS) - 2.26e-4).abs() < 1e-6);
        assert!(t60(1.0, FS).is_infinite());
    }

    #[test]
    fn reverb_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_params(&mut rng, vec![0.9995; GAMMA_POINTS]);
        let ir = fdn_ir(&p, FS, &FdnConfig::new(4096)).unwrap();
        let zero = vec![0.0; 3000];
        let y = reverb([&zero, &zero], &ir);
        assert!(y.iter().flatten().all(|&v| v == 0.0));
        let mut imp = vec![0.0; 3000];
        imp[0] = 1.0;
        let y = reverb([&imp, &zero], &ir);
        for c in 0..2 {
            for n in 0..3000 {
                assert!((y[c][n] - ir.h[c][0][n]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fs = 8000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let gamma: Vec<f64> = (0..GAMMA_POINTS).map(|_| rng.gen_range(0.9990..0.9998)).collect();
        let mut p = random_params(&mut rng, gamma);
        p.tone.pk1.gain_db = 3.0;
        p.tone.pk2.gain_db = 2.0;
        p.tone.high_shelf.gain_db = -4.0;
        p.tone.high_shelf.freq = 2500.0;
        let cfg = FdnConfig::new(4000);
        let n = 4000;
        let x: [Vec<f64>; 2] = std::array::from_fn(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let loss = |p: &FdnParams| {
            let (ir, _) = fdn_ir_forward(p, fs, &cfg, n).unwrap();
            let y = reverb([&x[0], &x[1]], &ir);
            y.iter().flatten().map(|v| v * v).sum::<f64>()
        };
        let (ir, tape) = fdn_ir_forward(&p, fs, &cfg, n).unwrap();
        let y = reverb([&x[0], &x[1]], &ir);
        let gy: [Vec<f64>; 2] = std::array::from_fn(|c| y[c].iter().map(|v| 2.0 * v).collect());
        let (_, gh) = reverb_vjp([&x[0], &x[1]], &ir, [&gy[0], &gy[1]]);
        let grad = fdn_ir_vjp(&p, &cfg, &tape, &gh).unwrap();

        let check = |name: &str, analytic: f64, perturb: &dyn Fn(&mut FdnParams, f64), h: f64| {
            let mut pp = p.clone();
            perturb(&mut pp, h);
            let mut pm = p.clone();
            perturb(&mut pm, -h);
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
            let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            assert!(err <= 1e-3, "{name}: {analytic} vs {fd}");
        };
        for i in [0, 3, 5] {
            check("b", grad.b[i][1], &|q, h| q.b[i][1] += h, 1e-6);
            check("c", grad.c[0][i], &|q, h| q.c[0][i] += h, 1e-6);
        }
        // orthogonality is not preserved here: the check is on the matrix entries themselves
        for (i, j) in [(0, 1), (2, 5), (4, 4)] {
            check("u", grad.u[i][j], &|q, h| q.u[i][j] += h, 1e-6);
        }
        for k in [0, 10, 24, 48] {
            check("gamma", grad.gamma[k], &|q, h| q.gamma[k] += h, 1e-8);
        }
        check("tone.pk1.gain", grad.tone.pk1.gain_db, &|q, h| q.tone.pk1.gain_db += h, 1e-5);
        check("tone.hs.freq", grad.tone.high_shelf.freq, &|q, h| q.tone.high_shelf.freq += h, 1e-3);
        check("tone.pk2.q", grad.tone.pk2.q, &|q, h| q.tone.pk2.q += h, 1e-6);
    }
}
