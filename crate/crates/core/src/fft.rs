//! Real FFT helpers with cached plans, plus the adjoints needed to backpropagate through
//! frequency-sampled impulse responses and FFT convolutions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

type Plans = (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>);

fn plans(n: usize) -> Plans {
    static CACHE: OnceLock<Mutex<(RealFftPlanner<f64>, HashMap<usize, Plans>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((RealFftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, map) = &mut *guard;
    if let Some(p) = map.get(&n) {
        return p.clone();
    }
    let p = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    map.insert(n, p.clone());
    p
}

/// Smallest even length `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(2);
    loop {
        if m % 2 == 0 {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            if r == 1 {
                return m;
            }
        }
        m += 1;
    }
}

/// Forward real FFT of `x` zero-padded (or truncated) to `n` samples; `n / 2 + 1` bins.
pub fn rfft(x: &[f64], n: usize) -> Vec<Complex64> {
    let (fwd, _) = plans(n);
    let mut input = vec![0.0; n];
    let m = x.len().min(n);
    input[..m].copy_from_slice(&x[..m]);
    let mut out = fwd.make_output_vec();
    fwd.process(&mut input, &mut out).expect("rfft length mismatch");
    out
}

/// Inverse real FFT, normalised by `1 / n`. Imaginary parts of the DC and Nyquist bins are
/// ignored.
pub fn irfft(spec: &[Complex64], n: usize) -> Vec<f64> {
    let (_, inv) = plans(n);
    assert_eq!(spec.len(), n / 2 + 1, "irfft bin count");
    let mut buf = spec.to_vec();
    buf[0].im = 0.0;
    buf[n / 2].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut buf, &mut out).expect("irfft length mismatch");
    let scale = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Cotangent of the spectrum given the cotangent `g` of `irfft(spec, n)`; `g` may be shorter
/// than `n` (implicit zeros). Complex cotangents are `dL/dRe + i dL/dIm`.
pub fn irfft_adjoint(g: &[f64], n: usize) -> Vec<Complex64> {
    let mut r = rfft(g, n);
    let interior = 2.0 / n as f64;
    let edge = 1.0 / n as f64;
    let last = r.len() - 1;
    for (k, v) in r.iter_mut().enumerate() {
        if k == 0 || k == last {
            *v = Complex64::new(v.re * edge, 0.0);
        } else {
            *v *= interior;
        }
    }
    r
}

/// Cotangent of the time signal given the cotangent of `rfft(x, n)`, truncated to `out_len`.
pub fn rfft_adjoint(g: &[Complex64], n: usize, out_len: usize) -> Vec<f64> {
    let (_, inv) = plans(n);
    let last = n / 2;
    let mut buf: Vec<Complex64> = g
        .iter()
        .enumerate()
        .map(|(k, v)| {
            if k == 0 || k == last {
                Complex64::new(v.re, 0.0)
            } else {
                v * 0.5
            }
        })
        .collect();
    let mut out = inv.make_output_vec();
    inv.process(&mut buf, &mut out).expect("rfft adjoint length mismatch");
    out.truncate(out_len);
    out
}

const FRAMES_PER_TASK: usize = 64;

/// Forward real FFTs of `frames` length-`n` frames, frame-major; `fill(f, buf)` writes frame `f`
/// into `buf`. One plan lookup and one scratch buffer per group of frames.
pub fn rfft_frames<F>(frames: usize, n: usize, fill: F) -> Vec<Complex64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let (fwd, _) = plans(n);
    let bins = n / 2 + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); frames * bins];
    out.par_chunks_mut(bins * FRAMES_PER_TASK).enumerate().for_each(|(t, chunk)| {
        let mut buf = vec![0.0; n];
        let mut scratch = fwd.make_scratch_vec();
        for (i, spec) in chunk.chunks_mut(bins).enumerate() {
            fill(t * FRAMES_PER_TASK + i, &mut buf);
            fwd.process_with_scratch(&mut buf, spec, &mut scratch).expect("rfft length mismatch");
        }
    });
    out
}

/// [`rfft_adjoint`] of every frame of a frame-major spectrum; returns `frames * n` samples.
pub fn rfft_adjoint_frames(g: &[Complex64], n: usize) -> Vec<f64> {
    let (_, inv) = plans(n);
    let bins = n / 2 + 1;
    let frames = g.len() / bins;
    let mut out = vec![0.0; frames * n];
    out.par_chunks_mut(n * FRAMES_PER_TASK).enumerate().for_each(|(t, chunk)| {
        let mut buf = vec![Complex64::new(0.0, 0.0); bins];
        let mut scratch = inv.make_scratch_vec();
        for (i, frame) in chunk.chunks_mut(n).enumerate() {
            let f = t * FRAMES_PER_TASK + i;
            for (k, (b, v)) in buf.iter_mut().zip(&g[f * bins..(f + 1) * bins]).enumerate() {
                *b = if k == 0 || k == bins - 1 { Complex64::new(v.re, 0.0) } else { v * 0.5 };
            }
            inv.process_with_scratch(&mut buf, frame, &mut scratch).expect("rfft adjoint length mismatch");
        }
    });
    out
}

/// Linear convolution `x * h`, truncated to `out_len` samples.
pub fn convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    if x.len().min(h.len()) <= 32 {
        let mut y = vec![0.0; out_len];
        for (n, yn) in y.iter_mut().enumerate() {
            let lo = n.saturating_sub(h.len() - 1);
            let hi = n.min(x.len() - 1);
            for m in lo..=hi {
                *yn += x[m] * h[n - m];
            }
        }
        return y;
    }
    // samples past out_len cannot reach the retained outputs
    let x = &x[..x.len().min(out_len)];
    let h = &h[..h.len().min(out_len)];
    let n = next_fast_len(x.len() + h.len() - 1);
    let xs = rfft(x, n);
    let hs = rfft(h, n);
    let prod: Vec<Complex64> = xs.iter().zip(&hs).map(|(a, b)| a * b).collect();
    let mut y = irfft(&prod, n);
    y.resize(out_len, 0.0);
    y
}

/// Cross-correlation `c[k] = sum_m g[m] h[m - k]` for `0 <= k < out_len`, i.e. the adjoint of
/// `x -> convolve(x, h, g.len())` applied to `g`.
pub fn correlate(g: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if g.is_empty() || h.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let h = &h[..h.len().min(g.len())];
    let n = next_fast_len(g.len().max(h.len() + out_len - 1));
    let gs = rfft(g, n);
    let hs = rfft(h, n);
    let prod: Vec<Complex64> = gs.iter().zip(&hs).map(|(a, b)| a * b.conj()).collect();
    let mut c = irfft(&prod, n);
    c.truncate(out_len);
    c.resize(out_len, 0.0);
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn fast_len_is_smooth_and_even() {
        assert_eq!(next_fast_len(1), 2);
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(1_058_399), 1_062_882);
        for n in [3, 97, 1000, 44_101] {
            let m = next_fast_len(n);
            assert!(m >= n && m % 2 == 0);
        }
    }

    #[test]
    fn irfft_inverts_rfft() {
        let mut r = rng();
        let x: Vec<f64> = (0..30).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = irfft(&rfft(&x, 30), 30);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let mut r = rng();
        let x: Vec<f64> = (0..200).map(|_| r.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..77).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = convolve(&x, &h, 250);
        for n in 0..250 {
            let mut s = 0.0;
            for m in 0..x.len() {
                if n >= m && n - m < h.len() {
                    s += x[m] * h[n - m];
                }
            }
            assert!((s - y[n]).abs() < 1e-10, "{n}");
        }
    }

    #[test]
    fn adjoints_satisfy_dot_product_identity() {
        let mut r = rng();
        let n = 24;
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let gy: Vec<Complex64> = (0..n / 2 + 1)
            .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
            .collect();
        // <rfft(x), gy>_R == <x, rfft_adjoint(gy)>
        let lhs: f64 = rfft(&x, n).iter().zip(&gy).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        let rhs: f64 = x.iter().zip(rfft_adjoint(&gy, n, n)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        let mut spec = gy.clone();
        spec[0].im = 0.0;
        spec[n / 2].im = 0.0;
        let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = irfft(&spec, n).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = spec
            .iter()
            .zip(irfft_adjoint(&g, n))
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);

        let h: Vec<f64> = (0..50).map(|_| r.gen_range(-1.0..1.0)).collect();
        let xx: Vec<f64> = (0..90).map(|_| r.gen_range(-1.0..1.0)).collect();
        let gg: Vec<f64> = (0..90).map(|_| r.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = convolve(&xx, &h, 90).iter().zip(&gg).map(|(a, b)| a * b).sum();
        let rhs: f64 = correlate(&gg, &h, 90).iter().zip(&xx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
