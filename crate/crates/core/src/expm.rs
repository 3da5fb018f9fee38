//! Matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant.

use nalgebra::DMatrix;
use num_complex::Complex64;

type CMat = DMatrix<Complex64>;

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

fn norm1(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return a.clone();
    }
    let norm = norm1(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * Complex64::new(0.5f64.powi(s), 0.0);

    let ident = CMat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |i: usize| Complex64::new(PADE13[i], 0.0);

    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9)) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &ident * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8)) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &ident * b(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_rotation() {
        let a = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.5, 0.0),
            Complex64::new(-3.0, 2.0),
        ]));
        let e = expm(&a);
        assert!((e[(0, 0)] - Complex64::new(0.5, 0.0).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - Complex64::new(-3.0, 2.0).exp()).norm() < 1e-14);

        // exp([[0, -θ], [θ, 0]]) is a rotation; large θ exercises squaring
        let th = 40.0;
        let r = CMat::from_row_slice(2, 2, &[
            Complex64::new(0.0, 0.0),
            Complex64::new(-th, 0.0),
            Complex64::new(th, 0.0),
            Complex64::new(0.0, 0.0),
        ]);
        let e = expm(&r);
        assert!((e[(0, 0)].re - th.cos()).abs() < 1e-12);
        assert!((e[(1, 0)].re - th.sin()).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let e = expm(&CMat::zeros(3, 3));
        assert_eq!(e, CMat::identity(3, 3));
    }
}
