//! Frequency responses and their CSV dump.

use std::f64::consts::PI;
use std::fmt::Write;

use num_complex::Complex64;

use super::design::BiquadCoeffs;

/// `H(e^{iw})` at each frequency in Hz.
pub fn frequency_response(c: &BiquadCoeffs, freqs: &[f64], sample_rate: f64) -> Vec<Complex64> {
    freqs
        .iter()
        .map(|&f| {
            let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / sample_rate);
            let z2 = z1 * z1;
            (c.b0 + c.b1 * z1 + c.b2 * z2) / (1.0 + c.a1 * z1 + c.a2 * z2)
        })
        .collect()
}

/// Product of the responses of a cascade.
pub fn cascade_response(cs: &[BiquadCoeffs], freqs: &[f64], sample_rate: f64) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(1.0, 0.0); freqs.len()];
    for c in cs {
        for (acc, v) in h.iter_mut().zip(frequency_response(c, freqs, sample_rate)) {
            *acc *= v;
        }
    }
    h
}

/// `n` log-spaced frequencies from `lo` to `hi` Hz inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// CSV with columns `freq_hz,magnitude_db,phase_rad` for a cascade on a 20 Hz - 20 kHz grid.
pub fn response_csv(cs: &[BiquadCoeffs], sample_rate: f64, points: usize) -> String {
    let freqs = log_grid(20.0, 20000.0_f64.min(0.499 * sample_rate), points);
    let h = cascade_response(cs, &freqs, sample_rate);
    let mut out = String::from("freq_hz,magnitude_db,phase_rad\n");
    for (f, v) in freqs.iter().zip(h) {
        let _ = writeln!(out, "{f:.6},{:.9},{:.9}", 20.0 * v.norm().max(1e-30).log10(), v.arg());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_flat() {
        let h = frequency_response(&BiquadCoeffs::IDENTITY, &[10.0, 1000.0, 20000.0], 44100.0);
        assert!(h.iter().all(|v| (*v - 1.0).norm() < 1e-15));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = response_csv(&[BiquadCoeffs::IDENTITY], 44100.0, 16);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "freq_hz,magnitude_db,phase_rad");
        assert_eq!(lines.len(), 17);
        assert!(lines[1].starts_with("20.000000,0.000000000"));
    }
}
