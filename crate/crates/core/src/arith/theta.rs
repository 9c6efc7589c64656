//! Imaginary quadratic fields and the theta series of the trivial Hecke
//! character, whose n-th coefficient counts integral ideals of norm n.

use crate::arith::chars::DirichletCharacter;
use crate::zmod::{factor_u64, kronecker};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ThetaError {
    #[error("{0} is not a negative fundamental discriminant")]
    NotFundamental(i64),
}

#[derive(Clone, Debug)]
pub struct ImagQuadField {
    pub disc: i64,
    pub chi: DirichletCharacter,
}

fn is_squarefree(mut n: u64) -> bool {
    let mut d = 2u64;
    while d * d <= n {
        if n % (d * d) == 0 {
            return false;
        }
        while n % d == 0 {
            n /= d;
        }
        d += 1;
    }
    true
}

impl ImagQuadField {
    pub fn new(disc: i64) -> Result<Self, ThetaError> {
        let ok = disc < 0
            && match disc.rem_euclid(4) {
                1 => is_squarefree(disc.unsigned_abs()),
                0 => {
                    let m = disc / 4;
                    let r = m.rem_euclid(4);
                    (r == 2 || r == 3) && is_squarefree(m.unsigned_abs())
                }
                _ => false,
            };
        if !ok {
            return Err(ThetaError::NotFundamental(disc));
        }
        Ok(ImagQuadField { disc, chi: DirichletCharacter::kronecker_of(disc) })
    }

    /// Splitting of a rational prime: 1 split, -1 inert, 0 ramified.
    pub fn splitting(&self, l: u64) -> i64 {
        kronecker(self.disc, l as i64)
    }

    /// Number of integral ideals of norm n, by explicit factorization.
    pub fn ideal_count(&self, n: u64) -> u64 {
        if n == 0 {
            return 0;
        }
        let mut out = 1u64;
        for (l, e) in factor_u64(n) {
            match self.splitting(l) {
                1 => out *= u64::from(e) + 1,
                -1 => {
                    if e % 2 == 1 {
                        return 0;
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Coefficients a_1..a_M of theta(1_K) = E_1(1, chi_K): a_n = sum_{d|n} chi_K(d).
    pub fn theta_trivial_coeffs(&self, m_qprec: usize) -> Vec<i64> {
        let modulus = self.disc.unsigned_abs();
        let mut out = vec![0i64; m_qprec + 1];
        for d in 1..=m_qprec as u64 {
            let c = kronecker(self.disc, (d % modulus) as i64 + modulus as i64);
            if c == 0 {
                continue;
            }
            let mut r = d;
            while (r as usize) <= m_qprec {
                out[r as usize] += c;
                r += d;
            }
        }
        out[1..].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fundamental_discriminants() {
        assert!(ImagQuadField::new(-11).is_ok());
        assert!(ImagQuadField::new(-20).is_ok());
        assert!(ImagQuadField::new(-24).is_ok());
        assert!(ImagQuadField::new(-4).is_ok());
        assert!(ImagQuadField::new(-5).is_err()); // -5 ≡ 3 mod 4: not fundamental
        assert!(ImagQuadField::new(-12).is_err());
        assert!(ImagQuadField::new(5).is_err());
    }

    #[test]
    fn theta_minus_11_first_coefficients() {
        let k = ImagQuadField::new(-11).unwrap();
        let a = k.theta_trivial_coeffs(12);
        // a_1=1, a_2=0 (2 inert), a_3=2 (3 split), a_4=1, a_5=2 (5 split)
        assert_eq!(&a[..5], &[1, 0, 2, 1, 2]);
        // cross-check with explicit ideal enumeration
        for n in 1..=12u64 {
            assert_eq!(a[n as usize - 1], k.ideal_count(n) as i64, "n = {}", n);
        }
    }

    #[test]
    fn theta_matches_ideal_enumeration_class_number_two() {
        // Q(sqrt{-5}) has class number 2; the divisor-sum identity holds regardless
        let k = ImagQuadField::new(-20).unwrap();
        let a = k.theta_trivial_coeffs(200);
        assert_eq!(a[2], 2); // a_3 = 2 even though 3 is non-principal-split
        for n in 1..=200u64 {
            assert_eq!(a[n as usize - 1], k.ideal_count(n) as i64, "n = {}", n);
        }
    }

    #[test]
    fn splitting_table_rows() {
        // table rows: (-11, 5) split, (-11, 7) inert, (-15, 5) ramified
        assert_eq!(ImagQuadField::new(-11).unwrap().splitting(5), 1);
        assert_eq!(ImagQuadField::new(-11).unwrap().splitting(7), -1);
        assert_eq!(ImagQuadField::new(-15).unwrap().splitting(5), 0);
        assert_eq!(ImagQuadField::new(-20).unwrap().splitting(7), 1);
    }
}
