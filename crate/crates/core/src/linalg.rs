//! Dense linear-algebra helpers for plant-sized matrices.

use nalgebra::DMatrix;

use crate::error::{CcdError, Result};
use crate::tensorgrad::Matrix;

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Largest number of squarings before the exponential is declared unusable.
pub const MAX_SQUARINGS: i32 = 60;

/// Matrix exponential by scaling and squaring around a degree-13 Padé
/// approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(CcdError::dim("expm (square matrix)", n, a.ncols()));
    }
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Err(CcdError::Numeric("expm input is not finite".into()));
    }
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    if s > MAX_SQUARINGS {
        return Err(CcdError::Numeric(format!(
            "expm needs {s} squarings (norm {norm1:.3e}), budget is {MAX_SQUARINGS}"
        )));
    }
    let a = a / 2f64.powi(s);
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut r = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CcdError::Numeric("singular Padé denominator in expm".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(CcdError::Numeric("expm overflowed".into()));
    }
    Ok(r)
}

/// Stabilizing solution of the discrete algebraic Riccati equation by fixed-point
/// iteration, with the matching feedback gain `K` (`u = -K x`).
pub fn dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut p = q.clone();
    for _ in 0..max_iter {
        let bt_p = b.transpose() * &p;
        let s = r + &bt_p * b;
        let k = s
            .clone()
            .lu()
            .solve(&(&bt_p * a))
            .ok_or_else(|| CcdError::Numeric("singular matrix in Riccati iteration".into()))?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if delta <= tol * (1.0 + p.amax()) {
            let bt_p = b.transpose() * &p;
            let s = r + &bt_p * b;
            let k = s.lu().solve(&(&bt_p * a)).ok_or_else(|| {
                CcdError::Numeric("singular matrix in Riccati gain".into())
            })?;
            return Ok((p, k));
        }
    }
    Err(CcdError::Numeric(format!(
        "Riccati iteration did not converge in {max_iter} iterations"
    )))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm(&z).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_scalar_matches_exp() {
        for a in [-1.0, 0.3, -50.0, 12.0] {
            let m = DMatrix::from_element(1, 1, a);
            let e = expm(&m).unwrap()[(0, 0)];
            assert!((e - f64::exp(a)).abs() <= 1e-13 * f64::exp(a).max(1.0), "{a}");
        }
    }

    #[test]
    fn expm_rotation() {
        let t = 0.7;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&m).unwrap();
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - t.sin()).abs() < 1e-14);
    }

    #[test]
    fn expm_rejects_huge_norm() {
        let m = DMatrix::from_element(1, 1, 1e300);
        assert!(expm(&m).is_err());
    }

    #[test]
    fn dare_scalar_closed_form() {
        // p = q + a^2 p - a^2 p^2 b^2 / (r + b^2 p)
        let (a, b, q, r) = (1.2, 1.0, 1.0, 1.0);
        let am = DMatrix::from_element(1, 1, a);
        let bm = DMatrix::from_element(1, 1, b);
        let (p, k) = dare(
            &am,
            &bm,
            &DMatrix::from_element(1, 1, q),
            &DMatrix::from_element(1, 1, r),
            10_000,
            1e-14,
        )
        .unwrap();
        // b=q=r=1: p^2 - a^2 p - 1 = 0 after clearing denominators.
        let exact = (a * a + (a.powi(4) + 4.0).sqrt()) / 2.0;
        assert!((p[(0, 0)] - exact).abs() < 1e-9);
        assert!((k[(0, 0)] - a * exact / (1.0 + exact)).abs() < 1e-9);
    }
}
