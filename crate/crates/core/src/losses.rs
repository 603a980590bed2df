//! Training objective: A-weighted multi-resolution STFT loss, multi-resolution loudness
//! dynamic range loss, both on left/right and mid/side views, plus the `eta` regulariser.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::biquad::{cascade_response, filter_sequential, BiquadCoeffs};
use crate::error::{Error, Result};
use crate::fft::{rfft_adjoint_frames, rfft_frames};

/// STFT sizes of the multi-resolution spectral loss; hop is a quarter of each.
pub const FFT_SIZES: [usize; 3] = [128, 512, 2048];

/// Floor applied to magnitudes and envelopes before taking logs.
pub const EPS: f64 = 1e-8;

// analog A-weighting pole frequencies in Hz
const A_POLES: [f64; 4] = [20.598997, 107.65265, 737.86223, 12194.217];

/// A-weighting as three bilinear-transformed biquads, normalised to 0 dB at 1 kHz.
#[derive(Clone, Debug)]
pub struct AWeighting {
    pub stages: [BiquadCoeffs; 3],
    pub sample_rate: f64,
}

fn bilinear(b: [f64; 3], a: [f64; 3], fs: f64) -> BiquadCoeffs {
    // b, a hold the s^2, s, 1 coefficients
    let k = 2.0 * fs;
    let k2 = k * k;
    let d = |c: [f64; 3]| [c[0] * k2 + c[1] * k + c[2], 2.0 * (c[2] - c[0] * k2), c[0] * k2 - c[1] * k + c[2]];
    let (nb, na) = (d(b), d(a));
    BiquadCoeffs {
        b0: nb[0] / na[0],
        b1: nb[1] / na[0],
        b2: nb[2] / na[0],
        a1: na[1] / na[0],
        a2: na[2] / na[0],
    }
}

impl AWeighting {
    pub fn new(sample_rate: f64) -> Self {
        let w: Vec<f64> = A_POLES.iter().map(|f| 2.0 * PI * f).collect();
        let mut stages = [
            bilinear([1.0, 0.0, 0.0], [1.0, 2.0 * w[0], w[0] * w[0]], sample_rate),
            bilinear([1.0, 0.0, 0.0], [1.0, 2.0 * w[3], w[3] * w[3]], sample_rate),
            bilinear([0.0, 0.0, 1.0], [1.0, w[1] + w[2], w[1] * w[2]], sample_rate),
        ];
        let g = cascade_response(&stages, &[1000.0], sample_rate)[0].norm();
        stages[0].b0 /= g;
        stages[0].b1 /= g;
        stages[0].b2 /= g;
        Self { stages, sample_rate }
    }

    /// Filtered signal. The stages run as plain recursions: the scan path loses precision
    /// on the pole pair near DC and that noise would swamp finite-difference checks.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.stages.iter().fold(x.to_vec(), |v, c| filter_sequential(&v, c, [0.0; 2]).0)
    }

    /// Cotangent of the input; the filter is time-invariant, so this is the same cascade run
    /// backwards in time.
    pub fn vjp(&self, gy: &[f64]) -> Vec<f64> {
        let mut g = gy.to_vec();
        g.reverse();
        let mut g = self.apply(&g);
        g.reverse();
        g
    }
}

/// A-weighted copy of `x`.
pub fn a_weight(x: &[f64], sample_rate: f64) -> Vec<f64> {
    AWeighting::new(sample_rate).apply(x)
}

fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Complex STFT with a periodic Hann window and reflect-padded centred frames.
#[derive(Clone, Debug)]
pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    pub frames: usize,
    pub bins: usize,
    /// frame-major, `frames * bins`
    pub data: Vec<Complex64>,
}

impl Stft {
    fn clone_header(&self) -> Self {
        Self {
            data: Vec::new(),
            ..*self
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm_sqr().sqrt().max(EPS)).collect()
    }
}

pub fn frame_count(len: usize, n_fft: usize) -> usize {
    1 + len / (n_fft / 4)
}

pub fn stft(x: &[f64], n_fft: usize) -> Stft {
    let hop = n_fft / 4;
    let frames = frame_count(x.len(), n_fft);
    let bins = n_fft / 2 + 1;
    let win = hann(n_fft);
    let pad = (n_fft / 2) as isize;
    let data = rfft_frames(frames, n_fft, |f, buf| {
        let start = (f * hop) as isize - pad;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = win[i] * x[reflect(start + i as isize, x.len())];
        }
    });
    Stft {
        n_fft,
        hop,
        frames,
        bins,
        data,
    }
}

/// Cotangent of the signal given cotangents of every STFT bin.
pub fn stft_adjoint(g: &[Complex64], n_fft: usize, len: usize) -> Vec<f64> {
    let hop = n_fft / 4;
    let bins = n_fft / 2 + 1;
    let frames = g.len() / bins;
    let win = hann(n_fft);
    let pad = (n_fft / 2) as isize;
    let per_frame = rfft_adjoint_frames(&g[..frames * bins], n_fft);
    let mut out = vec![0.0; len];
    for (f, t) in per_frame.chunks(n_fft).enumerate() {
        let start = (f * hop) as isize - pad;
        for (i, (v, w)) in t.iter().zip(&win).enumerate() {
            let j = start + i as isize;
            if j >= 0 && (j as usize) < len {
                out[j as usize] += v * w;
            } else {
                out[reflect(j, len)] += v * w;
            }
        }
    }
    out
}

/// Spectral convergence plus mean absolute log-magnitude distance at one resolution, with the
/// cotangent of the predicted STFT. `denom` is the norm used for spectral convergence.
fn resolution_terms(pred: &Stft, target_mag: &[f64], target_log: &[f64], denom: f64) -> (f64, f64, Vec<Complex64>) {
    let count = target_mag.len() as f64;
    let pm = pred.magnitudes();
    let diff2: f64 = pm.iter().zip(target_mag).map(|(a, b)| (a - b) * (a - b)).sum();
    let dn = diff2.sqrt();
    let sc = dn / denom;
    let mut log_term = 0.0;
    let grads: Vec<Complex64> = pred
        .data
        .iter()
        .zip(pm.iter().zip(target_mag.iter().zip(target_log)))
        .map(|(x, (&m, (&t, &tl)))| {
            let d = m.ln() - tl;
            log_term += d.abs();
            let raw = x.norm_sqr().sqrt();
            if raw < EPS {
                return Complex64::new(0.0, 0.0);
            }
            let mut gm = if dn > 0.0 { (m - t) / (dn * denom) } else { 0.0 };
            gm += d.signum() * if d == 0.0 { 0.0 } else { 1.0 } / (count * m);
            x * (gm / raw)
        })
        .collect();
    (sc, log_term / count, grads)
}

/// Target spectrogram at one resolution.
#[derive(Clone, Debug)]
pub struct SpecTarget {
    pub mag: Vec<f64>,
    pub log_mag: Vec<f64>,
    pub norm: f64,
}

impl SpecTarget {
    fn new(x: &[f64], n_fft: usize) -> Self {
        Self::from_spectrum(&stft(x, n_fft).data)
    }

    fn from_spectrum(data: &[Complex64]) -> Self {
        let mag: Vec<f64> = data.iter().map(|v| v.norm_sqr().sqrt().max(EPS)).collect();
        let norm = mag.iter().map(|v| v * v).sum::<f64>().sqrt();
        let log_mag = mag.iter().map(|v| v.ln()).collect();
        Self { mag, log_mag, norm }
    }
}

/// MRS value and the cotangent of the (already A-weighted) predicted signal, given target
/// spectrograms and spectral-convergence denominators.
fn mrs_weighted(pred: &[f64], targets: &[SpecTarget], denoms: &[f64]) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = FFT_SIZES
        .par_iter()
        .zip(targets.par_iter().zip(denoms))
        .map(|(&n, (t, &d))| {
            let s = stft(pred, n);
            let (sc, lg, g) = resolution_terms(&s, &t.mag, &t.log_mag, d);
            (sc + lg, stft_adjoint(&g, n, pred.len()))
        })
        .collect();
    let k = FFT_SIZES.len() as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut value = 0.0;
    for (v, g) in parts {
        value += v / k;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / k);
    }
    (value, grad)
}

/// Stereo MRS over the [L, R, L+R, L-R] views of A-weighted channels. The STFT is linear, so
/// the sum and difference spectra come from the channel spectra and their cotangents fold back
/// before the adjoint transform. Returns per-view values and the weighted channel cotangents.
fn mrs_stereo(
    pl: &[f64],
    pr: &[f64],
    targets: &[Vec<SpecTarget>; 4],
    denoms: &[Vec<f64>; 4],
    view_weights: [f64; 4],
) -> ([f64; 4], [Vec<f64>; 2]) {
    let k = FFT_SIZES.len() as f64;
    let a = view_weights.map(|w| w / k);
    let parts: Vec<([f64; 4], [Vec<f64>; 2])> = FFT_SIZES
        .par_iter()
        .enumerate()
        .map(|(r, &n)| {
            let (sl, sr) = rayon::join(|| stft(pl, n), || stft(pr, n));
            let combine = |sign: f64| Stft {
                data: sl.data.iter().zip(&sr.data).map(|(x, y)| x + y * sign).collect(),
                ..sl.clone_header()
            };
            let views = [&sl, &sr, &combine(1.0), &combine(-1.0)];
            let mut values = [0.0; 4];
            let mut grads = Vec::with_capacity(4);
            for v in 0..4 {
                let (sc, lg, g) = resolution_terms(views[v], &targets[v][r].mag, &targets[v][r].log_mag, denoms[v][r]);
                values[v] = sc + lg;
                grads.push(g);
            }
            let bins = grads[0].len();
            let gl: Vec<Complex64> = (0..bins)
                .map(|i| grads[0][i] * a[0] + grads[2][i] * a[2] + grads[3][i] * a[3])
                .collect();
            let gr: Vec<Complex64> = (0..bins)
                .map(|i| grads[1][i] * a[1] + grads[2][i] * a[2] - grads[3][i] * a[3])
                .collect();
            let (tl, tr) = rayon::join(|| stft_adjoint(&gl, n, pl.len()), || stft_adjoint(&gr, n, pr.len()));
            (values, [tl, tr])
        })
        .collect();
    let mut values = [0.0; 4];
    let mut grad = [vec![0.0; pl.len()], vec![0.0; pr.len()]];
    for (v, g) in parts {
        for i in 0..4 {
            values[i] += v[i] / k;
        }
        for c in 0..2 {
            grad[c].iter_mut().zip(&g[c]).for_each(|(x, y)| *x += y);
        }
    }
    (values, grad)
}

/// Multi-resolution STFT loss with A-weighting applied to both signals.
pub fn mrs_loss(pred: &[f64], target: &[f64], sample_rate: f64) -> Result<f64> {
    check_lengths(pred, target)?;
    if target.iter().all(|&v| v == 0.0) {
        return Err(Error::Silent);
    }
    let aw = AWeighting::new(sample_rate);
    let (p, t) = (aw.apply(pred), aw.apply(target));
    let targets: Vec<SpecTarget> = FFT_SIZES.iter().map(|&n| SpecTarget::new(&t, n)).collect();
    let denoms: Vec<f64> = targets.iter().map(|t| t.norm).collect();
    if denoms.iter().any(|&d| d == 0.0) {
        return Err(Error::Silent);
    }
    Ok(mrs_weighted(&p, &targets, &denoms).0)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "signals must be non-empty and of equal length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Integration times of one loudness-dynamic-range scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdrParams {
    pub t_short: f64,
    pub t_long: f64,
    pub sample_rate: f64,
}

impl LdrParams {
    pub fn new(t_short: f64, t_long: f64, sample_rate: f64) -> Result<Self> {
        if !(t_short > 0.0 && t_long >= 10.0 * t_short && sample_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "LDR times need 0 < 10 t_short <= t_long (got {t_short}, {t_long})"
            )));
        }
        Ok(Self {
            t_short,
            t_long,
            sample_rate,
        })
    }

    /// The two scales `t in {1, 2}` with short time `t / 20`.
    pub fn scales(sample_rate: f64) -> [Self; 2] {
        [1.0, 2.0].map(|t| Self::new(t / 20.0, t, sample_rate).expect("valid scales"))
    }

    fn windows(&self) -> (usize, usize, usize) {
        let ws = ((self.t_short * self.sample_rate).round() as usize).max(1);
        let wl = ((self.t_long * self.sample_rate).round() as usize).max(1);
        let shift = ((self.t_long - self.t_short) * self.sample_rate / 2.0).floor() as usize;
        (ws, wl, shift)
    }
}

// prefix sums in double-double so that differences of nearby prefixes stay exact
fn prefix_sums(v: &[f64], len: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(len + 1);
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    out.push((0.0, 0.0));
    for i in 0..len {
        let x = v.get(i).copied().unwrap_or(0.0);
        let s = hi + x;
        let bp = s - hi;
        let err = (hi - (s - bp)) + (x - bp);
        hi = s;
        lo += err;
        out.push((hi, lo));
    }
    out
}

/// Causal moving average over `w` samples at positions `offset..offset + n` of a signal that
/// is zero outside `v`.
fn moving_average(p: &[(f64, f64)], w: usize, offset: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let b = i + offset + 1;
            let a = b.saturating_sub(w);
            ((p[b].0 - p[a].0) + (p[b].1 - p[a].1)) / w as f64
        })
        .collect()
}

/// Running sum of `g` over the next `w` samples, the adjoint of [`moving_average`].
fn moving_average_adjoint(g: &[f64], w: usize, offset: usize, len: usize) -> Vec<f64> {
    // out[j] = sum_{i : i + offset in [j, j + w)} g[i] / w
    let p = prefix_sums(g, g.len());
    (0..len)
        .map(|j| {
            let lo = j.saturating_sub(offset);
            let hi = (j + w).saturating_sub(offset).min(g.len());
            if hi <= lo || j + w <= offset {
                0.0
            } else {
                ((p[hi].0 - p[lo].0) + (p[hi].1 - p[lo].1)) / w as f64
            }
        })
        .collect()
}

fn envelopes(x: &[f64], p: &LdrParams) -> (Vec<f64>, Vec<f64>) {
    let (ws, wl, shift) = p.windows();
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let pre = prefix_sums(&sq, x.len() + shift);
    (moving_average(&pre, ws, 0, x.len()), moving_average(&pre, wl, shift, x.len()))
}

/// `log(E_short[n] / E_long[n + shift])` with rectangular energy envelopes.
pub fn ldr(x: &[f64], p: &LdrParams) -> Vec<f64> {
    let (es, el) = envelopes(x, p);
    es.iter().zip(&el).map(|(s, l)| s.max(EPS).ln() - l.max(EPS).ln()).collect()
}

/// Cotangent of `x` given the cotangent of [`ldr`].
pub fn ldr_vjp(x: &[f64], p: &LdrParams, g: &[f64]) -> Vec<f64> {
    let (ws, wl, shift) = p.windows();
    let (es, el) = envelopes(x, p);
    let gs: Vec<f64> = g.iter().zip(&es).map(|(g, e)| if *e > EPS { g / e } else { 0.0 }).collect();
    let gl: Vec<f64> = g.iter().zip(&el).map(|(g, e)| if *e > EPS { -g / e } else { 0.0 }).collect();
    let a = moving_average_adjoint(&gs, ws, 0, x.len());
    let b = moving_average_adjoint(&gl, wl, shift, x.len());
    x.iter().zip(a.iter().zip(&b)).map(|(x, (a, b))| 2.0 * x * (a + b)).collect()
}

fn mldr_with_targets(pred: &[f64], targets: &[Vec<f64>; 2], sample_rate: f64) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = LdrParams::scales(sample_rate)
        .par_iter()
        .zip(targets.par_iter())
        .map(|(p, t)| {
            let l = ldr(pred, p);
            let mut v = 0.0;
            let g: Vec<f64> = l
                .iter()
                .zip(t)
                .map(|(a, b)| {
                    let d = a - b;
                    v += d.abs();
                    if d == 0.0 {
                        0.0
                    } else {
                        d.signum() / n
                    }
                })
                .collect();
            (v / n, ldr_vjp(pred, p, &g))
        })
        .collect();
    let mut grad = vec![0.0; pred.len()];
    let mut value = 0.0;
    for (v, g) in parts {
        value += v;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    (value, grad)
}

/// Multi-resolution LDR loss over the scales `t in {1, 2}`.
pub fn mldr_loss(pred: &[f64], target: &[f64], sample_rate: f64) -> Result<f64> {
    check_lengths(pred, target)?;
    let t = LdrParams::scales(sample_rate).map(|p| ldr(target, &p));
    Ok(mldr_with_targets(pred, &t, sample_rate).0)
}

/// Orthonormal left/right to mid/side transform; its own inverse.
pub fn hadamard(x: [&[f64]; 2]) -> [Vec<f64>; 2] {
    let s = 1.0 / SQRT_2;
    [
        x[0].iter().zip(x[1]).map(|(a, b)| s * (a + b)).collect(),
        x[0].iter().zip(x[1]).map(|(a, b)| s * (a - b)).collect(),
    ]
}

/// Weights of the total objective; the whole bracket is additionally averaged over the two
/// channels of each view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mrs_lr: f64,
    pub mrs_ms: f64,
    pub mldr_lr: f64,
    pub mldr_ms: f64,
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mrs_lr: 1.0,
            mrs_ms: 0.5,
            mldr_lr: 0.5,
            mldr_ms: 0.25,
            eta: 1.0,
        }
    }
}

/// Per-term values, each already summed over both channels of its view and weighted by 1/2,
/// before the component weights are applied.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mrs_lr: f64,
    pub mrs_ms: f64,
    pub mldr_lr: f64,
    pub mldr_ms: f64,
    pub eta: f64,
    pub total: f64,
}

/// Precomputed target features for one stereo segment.
#[derive(Clone, Debug)]
pub struct LossTarget {
    sample_rate: f64,
    len: usize,
    aw: AWeighting,
    // [L, R, L+R, L-R] spectrogram targets, per resolution
    spec: [Vec<SpecTarget>; 4],
    denoms: [Vec<f64>; 4],
    // [L, R, M, S] LDR targets, per scale
    ldr: [[Vec<f64>; 2]; 4],
    pub degenerate_views: Vec<&'static str>,
}

const VIEW_NAMES: [&str; 4] = ["left", "right", "mid", "side"];

impl LossTarget {
    pub fn new(target: [&[f64]; 2], sample_rate: f64) -> Result<Self> {
        check_lengths(target[0], target[1])?;
        let aw = AWeighting::new(sample_rate);
        let wl = aw.apply(target[0]);
        let wr = aw.apply(target[1]);
        let per_res: Vec<[SpecTarget; 4]> = FFT_SIZES
            .par_iter()
            .map(|&n| {
                let (sl, sr) = rayon::join(|| stft(&wl, n), || stft(&wr, n));
                let sum: Vec<Complex64> = sl.data.iter().zip(&sr.data).map(|(a, b)| a + b).collect();
                let dif: Vec<Complex64> = sl.data.iter().zip(&sr.data).map(|(a, b)| a - b).collect();
                [&sl.data, &sr.data, &sum, &dif].map(|d| SpecTarget::from_spectrum(d))
            })
            .collect();
        let spec: Vec<Vec<SpecTarget>> = (0..4).map(|v| per_res.iter().map(|r| r[v].clone()).collect()).collect();
        let mut degenerate = Vec::new();
        let mut denoms: [Vec<f64>; 4] = Default::default();
        for r in 0..FFT_SIZES.len() {
            let top = (0..4).map(|v| spec[v][r].norm).fold(0.0, f64::max);
            if top == 0.0 {
                return Err(Error::Silent);
            }
            for v in 0..4 {
                let n = spec[v][r].norm;
                if n < EPS * top {
                    if !degenerate.contains(&VIEW_NAMES[v]) {
                        degenerate.push(VIEW_NAMES[v]);
                    }
                    denoms[v].push(EPS * top);
                } else {
                    denoms[v].push(n);
                }
            }
        }
        if !degenerate.is_empty() {
            log::warn!("degenerate target views {degenerate:?}: spectral convergence denominator floored");
        }
        let ms = hadamard(target);
        let ldr_views = [target[0], target[1], &ms[0][..], &ms[1][..]];
        let ldr: Vec<[Vec<f64>; 2]> = ldr_views
            .par_iter()
            .map(|v| LdrParams::scales(sample_rate).map(|p| ldr(v, &p)))
            .collect();
        let mut spec_it = spec.into_iter();
        let mut ldr_it = ldr.into_iter();
        Ok(Self {
            sample_rate,
            len: target[0].len(),
            aw,
            spec: std::array::from_fn(|_| spec_it.next().unwrap()),
            denoms,
            ldr: std::array::from_fn(|_| ldr_it.next().unwrap()),
            degenerate_views: degenerate,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Loss value, cotangent of the predicted stereo signal and derivative with respect to `eta`.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub breakdown: LossBreakdown,
    pub grad: [Vec<f64>; 2],
    pub grad_eta: f64,
}

/// Value and gradient of the total objective for one segment.
pub fn total_loss_grad(pred: [&[f64]; 2], target: &LossTarget, eta: f64, w: &LossWeights) -> Result<LossGrad> {
    if pred[0].len() != target.len || pred[1].len() != target.len {
        return Err(Error::InvalidArgument(format!(
            "prediction length {} does not match target length {}",
            pred[0].len(),
            target.len
        )));
    }
    if pred.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::Stage("loss"));
    }
    let fs = target.sample_rate;
    let aw = &target.aw;
    let (pl, pr) = rayon::join(|| aw.apply(pred[0]), || aw.apply(pred[1]));
    let ms = hadamard(pred);
    let ldr_inputs: [&[f64]; 4] = [pred[0], pred[1], &ms[0], &ms[1]];
    let view_weights = [0.5 * w.mrs_lr, 0.5 * w.mrs_lr, 0.5 * w.mrs_ms, 0.5 * w.mrs_ms];
    let (spec_values, [awl, awr]) = mrs_stereo(&pl, &pr, &target.spec, &target.denoms, view_weights);
    let ldr_parts: Vec<(f64, Vec<f64>)> = (0..4)
        .into_par_iter()
        .map(|v| mldr_with_targets(ldr_inputs[v], &target.ldr[v], fs))
        .collect();

    let b = LossBreakdown {
        mrs_lr: 0.5 * (spec_values[0] + spec_values[1]),
        mrs_ms: 0.5 * (spec_values[2] + spec_values[3]),
        mldr_lr: 0.5 * (ldr_parts[0].0 + ldr_parts[1].0),
        mldr_ms: 0.5 * (ldr_parts[2].0 + ldr_parts[3].0),
        eta: (1.0 - eta) * (1.0 - eta),
        total: 0.0,
    };
    let total = w.mrs_lr * b.mrs_lr + w.mrs_ms * b.mrs_ms + w.mldr_lr * b.mldr_lr + w.mldr_ms * b.mldr_ms + w.eta * b.eta;
    let breakdown = LossBreakdown { total, ..b };

    let n = target.len;
    let s = 1.0 / SQRT_2;
    let (gl, gr) = rayon::join(|| aw.vjp(&awl), || aw.vjp(&awr));
    let mut grad = [gl, gr];
    for i in 0..n {
        let gm = 0.5 * w.mldr_ms * ldr_parts[2].1[i];
        let gs = 0.5 * w.mldr_ms * ldr_parts[3].1[i];
        grad[0][i] += 0.5 * w.mldr_lr * ldr_parts[0].1[i] + s * (gm + gs);
        grad[1][i] += 0.5 * w.mldr_lr * ldr_parts[1].1[i] + s * (gm - gs);
    }
    Ok(LossGrad {
        breakdown,
        grad,
        grad_eta: -2.0 * w.eta * (1.0 - eta),
    })
}

/// Total objective for one stereo segment.
pub fn total_loss(pred: [&[f64]; 2], target: [&[f64]; 2], eta: f64, sample_rate: f64) -> Result<f64> {
    let t = LossTarget::new(target, sample_rate)?;
    Ok(total_loss_grad(pred, &t, eta, &LossWeights::default())?.breakdown.total)
}
