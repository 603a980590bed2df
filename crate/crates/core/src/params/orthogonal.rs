//! Orthogonal feedback-matrix parametrisation `U = exp(T - T^T)` with `T` the strictly upper
//! triangle of a square logit matrix, its vector-Jacobian product, and a matrix logarithm for
//! the inverse direction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const TAYLOR_ORDER: usize = 16;

/// Intermediate values of one matrix exponential, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ExpmTape {
    scaled: DMatrix<f64>,
    horner: Vec<DMatrix<f64>>,
    squares: Vec<DMatrix<f64>>,
    scale: f64,
}

/// Skew-symmetric matrix built from the strictly upper triangle of `theta`.
pub fn skew_from_upper(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = theta.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i < j {
            theta[(i, j)]
        } else if i > j {
            -theta[(j, i)]
        } else {
            0.0
        }
    })
}

/// Matrix exponential by scaling and squaring with a Taylor polynomial evaluated in Horner
/// form, returning the tape needed for [`expm_vjp`].
pub fn expm_with_tape(s: &DMatrix<f64>) -> (DMatrix<f64>, ExpmTape) {
    let n = s.nrows();
    let norm = (0..n)
        .map(|j| s.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > 0.5 {
        squarings += 1;
    }
    let scale = 2f64.powi(-(squarings as i32));
    let a = s * scale;
    let eye = DMatrix::<f64>::identity(n, n);

    // horner[j] = I + A horner[j+1] / (j+1), horner[K] = I
    let mut horner = vec![eye.clone(); TAYLOR_ORDER + 1];
    for j in (0..TAYLOR_ORDER).rev() {
        horner[j] = &eye + (&a * &horner[j + 1]) / (j as f64 + 1.0);
    }
    let mut x = horner[0].clone();
    let mut squares = Vec::with_capacity(squarings as usize);
    for _ in 0..squarings {
        squares.push(x.clone());
        x = &x * &x;
    }
    (
        x,
        ExpmTape {
            scaled: a,
            horner,
            squares,
            scale,
        },
    )
}

pub fn expm(s: &DMatrix<f64>) -> DMatrix<f64> {
    expm_with_tape(s).0
}

/// Pulls a cotangent of `expm(S)` back to a cotangent of `S`.
pub fn expm_vjp(tape: &ExpmTape, upstream: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = upstream.clone();
    for x in tape.squares.iter().rev() {
        g = &g * x.transpose() + x.transpose() * &g;
    }
    let a_t = tape.scaled.transpose();
    let n = g.nrows();
    let mut grad_a = DMatrix::<f64>::zeros(n, n);
    let mut r_bar = g;
    for j in 0..TAYLOR_ORDER {
        let k = j as f64 + 1.0;
        grad_a += &r_bar * tape.horner[j + 1].transpose() / k;
        r_bar = &a_t * &r_bar / k;
    }
    grad_a * tape.scale
}

/// `U = exp(T - T^T)` for the strictly upper triangle `T` of `theta`.
pub fn map_orthogonal(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("orthogonal-matrix logit".into()));
    }
    if theta.nrows() != theta.ncols() {
        return Err(Error::InvalidArgument("logit matrix must be square".into()));
    }
    Ok(expm(&skew_from_upper(theta)))
}

/// Cotangent of the logit matrix given a cotangent of the skew matrix. Entries on and below
/// the diagonal are exactly zero.
pub fn skew_vjp(grad_s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = grad_s.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i < j {
            grad_s[(i, j)] - grad_s[(j, i)]
        } else {
            0.0
        }
    })
}

fn sqrtm_denman_beavers(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().ok_or(Error::Logm)?;
        let zi = z.clone().try_inverse().ok_or(Error::Logm)?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = (&y_next - &y).abs().max();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.abs().max().max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::Logm)
}

/// Principal matrix logarithm by inverse scaling and squaring.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut roots = 0;
    while (&x - &eye).abs().max() > 0.05 {
        x = sqrtm_denman_beavers(&x)?;
        roots += 1;
        if roots > 60 {
            return Err(Error::Logm);
        }
    }
    // log(I + Y) = sum_k (-1)^{k+1} Y^k / k
    let y = &x - &eye;
    let mut term = y.clone();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for k in 1..=60 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        out += &term * (sign / k as f64);
        term = &term * &y;
        if term.abs().max() < 1e-18 {
            break;
        }
    }
    let out = out * 2f64.powi(roots);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Logm);
    }
    Ok(out)
}

/// Logit matrix whose [`map_orthogonal`] image is `u`. Only the strictly upper triangle is
/// populated. Fails if `u` is not a rotation or has an eigenvalue at -1.
pub fn unmap_orthogonal(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = u.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    if (u.transpose() * u - &eye).abs().max() > 1e-8 || u.determinant() <= 0.0 {
        return Err(Error::InvalidArgument(
            "feedback matrix is not a proper rotation".into(),
        ));
    }
    let l = logm(u)?;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i < j {
            0.5 * (l[(i, j)] - l[(j, i)])
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.gen_range(-scale..scale))
    }

    fn orthogonality_error(u: &DMatrix<f64>) -> f64 {
        let n = u.nrows();
        (u.transpose() * u - DMatrix::<f64>::identity(n, n)).abs().max()
    }

    #[test]
    fn zero_logits_give_identity() {
        let u = map_orthogonal(&DMatrix::zeros(6, 6)).unwrap();
        assert_eq!(u, DMatrix::identity(6, 6));
    }

    #[test]
    fn two_by_two_is_rotation() {
        for &t in &[0.3, -1.2, 2.9, 7.0] {
            let theta = DMatrix::from_row_slice(2, 2, &[0.0, t, 0.0, 0.0]);
            let u = map_orthogonal(&theta).unwrap();
            let expected = DMatrix::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
            assert!((u - expected).abs().max() < 1e-13);
        }
    }

    #[test]
    fn random_logits_give_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let u = map_orthogonal(&random_logits(&mut rng, 6, 3.0)).unwrap();
            assert!(orthogonality_error(&u) <= 1e-10);
            assert!((u.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut theta = DMatrix::zeros(6, 6);
        theta[(0, 3)] = f64::NAN;
        assert!(map_orthogonal(&theta).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = random_logits(&mut rng, 6, 1.5);
        let w = random_logits(&mut rng, 6, 1.0);
        let loss = |t: &DMatrix<f64>| map_orthogonal(t).unwrap().component_mul(&w).sum();
        let (_, tape) = expm_with_tape(&skew_from_upper(&theta));
        let grad = skew_vjp(&expm_vjp(&tape, &w));
        let h = 1e-6;
        for i in 0..6 {
            for j in 0..6 {
                let mut p = theta.clone();
                p[(i, j)] += h;
                let mut m = theta.clone();
                m[(i, j)] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - grad[(i, j)]).abs() < 1e-7, "({i},{j}) {fd} vs {}", grad[(i, j)]);
            }
        }
        for i in 0..6 {
            for j in 0..=i {
                assert_eq!(grad[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn identity_unmaps_to_zero() {
        let theta = unmap_orthogonal(&DMatrix::identity(6, 6)).unwrap();
        assert_eq!(theta.abs().max(), 0.0);
    }

    #[test]
    fn reflection_is_rejected() {
        let mut u = DMatrix::<f64>::identity(6, 6);
        u[(0, 0)] = -1.0;
        assert!(unmap_orthogonal(&u).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn logm_round_trip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = map_orthogonal(&random_logits(&mut rng, 6, 0.8)).unwrap();
            let theta = unmap_orthogonal(&u).unwrap();
            let back = map_orthogonal(&theta).unwrap();
            prop_assert!((back - u).abs().max() < 1e-10);
        }
    }
}
