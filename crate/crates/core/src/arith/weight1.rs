//! Weight-one eigenforms with exact number-field coefficients, loaded from
//! JSON files or constructed as trivial-character theta series.

use crate::arith::chars::{enumerate_characters, DirichletCharacter, UnitGroup};
use crate::arith::theta::ImagQuadField;
use crate::padic::{PadicContext, PadicElement};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Weight1Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("a_1 must be 1 (normalized eigenform)")]
    NotNormalized,
    #[error("multiplicativity fails at a_{0} * a_{1} != a_{2}")]
    NotMultiplicative(usize, usize, usize),
    #[error("character generator values do not determine a unique character ({0} matches)")]
    AmbiguousCharacter(usize),
    #[error("field minimal polynomial must be monic")]
    BadField,
    #[error("coefficient index {0} out of stored range {1}")]
    OutOfRange(usize, usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CharacterSpec {
    pub modulus: u64,
    /// [residue, value order, value exponent]: chi(residue) = zeta_order^exponent
    pub generator_values: Vec<(u64, u64, u32)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldSpec {
    /// monic integer minimal polynomial, low degree first
    pub minpoly: Vec<i64>,
    pub generator: String,
    /// image of the generator under complex conjugation, as a polynomial in it
    pub conjugate: Vec<i64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightOneFile {
    pub label: String,
    pub level: u64,
    pub character: CharacterSpec,
    pub field: FieldSpec,
    pub q_prec: usize,
    /// a_1, a_2, ... as integer vectors in the field generator
    pub coefficients: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FormSource {
    ThetaTrivial(i64),
    File(String),
}

#[derive(Clone, Debug)]
pub struct WeightOneForm {
    pub label: String,
    pub level: u64,
    pub nebentype: DirichletCharacter,
    pub minpoly: Vec<i64>,
    pub conj_gen: Vec<i64>,
    /// a_1.. as polynomials in the generator
    pub coeffs: Vec<Vec<i64>>,
    pub source: FormSource,
}

// ---- integer polynomial arithmetic mod a monic minpoly ----

fn poly_trim(v: &mut Vec<i64>) {
    while v.len() > 1 && *v.last().unwrap() == 0 {
        v.pop();
    }
}

pub fn poly_mul_mod(a: &[i64], b: &[i64], minpoly: &[i64]) -> Vec<i64> {
    let d = minpoly.len() - 1;
    let mut prod = vec![0i128; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            prod[i + j] += i128::from(x) * i128::from(y);
        }
    }
    // reduce by the monic minpoly
    while prod.len() > d.max(1) {
        let k = prod.len() - 1;
        let c = prod[k];
        prod.pop();
        if c != 0 && d > 0 {
            for i in 0..d {
                prod[k - d + i] -= c * i128::from(minpoly[i]);
            }
        }
    }
    let mut out: Vec<i64> = prod.iter().map(|&c| i64::try_from(c).expect("coefficient overflow")).collect();
    poly_trim(&mut out);
    out
}

pub fn poly_add(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out = vec![0i64; a.len().max(b.len())];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.get(i).copied().unwrap_or(0) + b.get(i).copied().unwrap_or(0);
    }
    poly_trim(&mut out);
    out
}

/// Substitute x -> image in a polynomial, mod minpoly.
pub fn poly_compose_mod(poly: &[i64], image: &[i64], minpoly: &[i64]) -> Vec<i64> {
    let mut acc = vec![0i64];
    for &c in poly.iter().rev() {
        acc = poly_mul_mod(&acc, image, minpoly);
        acc = poly_add(&acc, &[c]);
    }
    acc
}

impl WeightOneForm {
    pub fn load(path: &Path) -> Result<WeightOneForm, Weight1Error> {
        let text = std::fs::read_to_string(path)?;
        let file: WeightOneFile = serde_json::from_str(&text)?;
        Self::from_file_struct(file, path.display().to_string())
    }

    pub fn from_file_struct(file: WeightOneFile, origin: String) -> Result<WeightOneForm, Weight1Error> {
        if file.field.minpoly.len() < 2 || *file.field.minpoly.last().unwrap() != 1 {
            return Err(Weight1Error::BadField);
        }
        let mut coeffs = file.coefficients.clone();
        if coeffs.len() > file.q_prec.saturating_sub(1) {
            coeffs.truncate(file.q_prec.saturating_sub(1));
        }
        // a_1 = 1
        let a1 = coeffs.first().ok_or(Weight1Error::NotNormalized)?;
        let mut a1t = a1.clone();
        poly_trim(&mut a1t);
        if a1t != vec![1] {
            return Err(Weight1Error::NotNormalized);
        }
        // resolve the nebentype from generator values
        let ug = UnitGroup::new(file.character.modulus);
        let matches: Vec<DirichletCharacter> = enumerate_characters(&ug)
            .into_iter()
            .filter(|chi| {
                file.character.generator_values.iter().all(|&(r, ord, e)| match chi.exp_at(r) {
                    None => false,
                    Some(ce) => {
                        // chi(r) = zeta_chiorder^{ce} must equal zeta_ord^{e}
                        let lcm = num_integer::lcm(chi.order, ord);
                        u64::from(ce) * (lcm / chi.order) % lcm == u64::from(e) * (lcm / ord) % lcm
                    }
                })
            })
            .collect();
        if matches.len() != 1 {
            return Err(Weight1Error::AmbiguousCharacter(matches.len()));
        }
        let form = WeightOneForm {
            label: file.label,
            level: file.level,
            nebentype: matches.into_iter().next().unwrap(),
            minpoly: file.field.minpoly,
            conj_gen: file.field.conjugate,
            coeffs,
            source: FormSource::File(origin),
        };
        form.check_multiplicativity()?;
        Ok(form)
    }

    /// theta(1_K): a_n counts ideals of norm n; level |D_K|, nebentype chi_K.
    pub fn theta_trivial(k: &ImagQuadField, m_qprec: usize) -> WeightOneForm {
        let a = k.theta_trivial_coeffs(m_qprec.saturating_sub(1));
        WeightOneForm {
            label: format!("theta({})", k.disc),
            level: k.disc.unsigned_abs(),
            nebentype: k.chi.clone(),
            minpoly: vec![-1, 1],
            conj_gen: vec![0, 1],
            coeffs: a.iter().map(|&c| vec![c]).collect(),
            source: FormSource::ThetaTrivial(k.disc),
        }
    }

    pub fn check_multiplicativity(&self) -> Result<(), Weight1Error> {
        let max = self.coeffs.len();
        for m in 2..=max {
            for n in 2..=max / m {
                if num_integer::gcd(m, n) != 1 {
                    continue;
                }
                let prod = poly_mul_mod(&self.coeffs[m - 1], &self.coeffs[n - 1], &self.minpoly);
                let mut stored = self.coeffs[m * n - 1].clone();
                poly_trim(&mut stored);
                if prod != stored {
                    return Err(Weight1Error::NotMultiplicative(m, n, m * n));
                }
            }
        }
        Ok(())
    }

    pub fn a(&self, n: usize) -> Result<&[i64], Weight1Error> {
        self.coeffs.get(n - 1).map(|v| v.as_slice()).ok_or(Weight1Error::OutOfRange(n, self.coeffs.len()))
    }

    /// a_n of the complex conjugate form.
    pub fn a_conj(&self, n: usize) -> Result<Vec<i64>, Weight1Error> {
        Ok(poly_compose_mod(self.a(n)?, &self.conj_gen, &self.minpoly))
    }

    /// The conjugate form g* (coefficientwise complex conjugation).
    pub fn conjugate_form(&self) -> WeightOneForm {
        WeightOneForm {
            label: format!("{}*", self.label),
            level: self.level,
            nebentype: self.nebentype.conjugate(),
            minpoly: self.minpoly.clone(),
            conj_gen: self.conj_gen.clone(),
            coeffs: (1..=self.coeffs.len()).map(|n| self.a_conj(n).unwrap()).collect(),
            source: self.source.clone(),
        }
    }

    pub fn a_in(&self, ctx: &PadicContext, n: usize) -> Result<PadicElement, Weight1Error> {
        Ok(ctx.from_poly(self.a(n)?))
    }

    /// Stored coefficients evaluated into the context (a_1..a_len, zero-padded
    /// is an error: the caller must not ask beyond the stored range).
    pub fn coeffs_in(&self, ctx: &PadicContext, len: usize) -> Result<Vec<u64>, Weight1Error> {
        if len > self.coeffs.len() {
            return Err(Weight1Error::OutOfRange(len, self.coeffs.len()));
        }
        Ok((1..=len).map(|n| ctx.scalar(&ctx.from_poly(&self.coeffs[n - 1]))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g175c_json() -> &'static str {
        r#"{
            "label": "g175c",
            "level": 175,
            "character": { "modulus": 175, "generator_values": [[127, 2, 1], [101, 2, 1]] },
            "field": { "minpoly": [1, 0, 1], "generator": "i", "conjugate": [0, -1] },
            "q_prec": 30,
            "coefficients": [
                [1], [0,1], [0], [0], [0], [0], [0,-1], [0,1], [-1], [0],
                [-1], [0], [0], [1], [0], [-1], [0], [0,-1], [0], [0],
                [0], [0,-1], [0,-1], [0], [0], [0], [0], [0], [1]
            ]
        }"#
    }

    #[test]
    fn load_companion_form_175c() {
        let file: WeightOneFile = serde_json::from_str(g175c_json()).unwrap();
        let g = WeightOneForm::from_file_struct(file, "inline".into()).unwrap();
        // paper expansion: q + iq^2 - iq^7 + iq^8 - q^9 - q^11 ...
        assert_eq!(g.a(2).unwrap(), &[0, 1]);
        assert_eq!(g.a(7).unwrap(), &[0, -1]);
        assert_eq!(g.a(9).unwrap(), &[-1]);
        assert_eq!(g.a(11).unwrap(), &[-1]);
        // i^2 = -1 in the field
        assert_eq!(poly_mul_mod(&[0, 1], &[0, 1], &g.minpoly), vec![-1]);
        // nebentype is chi_{-7} chi_5 induced mod 175
        let expected = DirichletCharacter::kronecker_of(-7)
            .induce(175)
            .unwrap()
            .mul(&DirichletCharacter::kronecker_of(5).induce(175).unwrap())
            .unwrap();
        assert_eq!(g.nebentype, expected);
        // conjugation flips a_2
        assert_eq!(g.a_conj(2).unwrap(), vec![0, -1]);
        let gstar = g.conjugate_form();
        assert_eq!(gstar.a(2).unwrap(), &[0, -1]);
        assert_eq!(gstar.a(9).unwrap(), &[-1]);
    }

    #[test]
    fn a1_zero_rejected() {
        let mut file: WeightOneFile = serde_json::from_str(g175c_json()).unwrap();
        file.coefficients[0] = vec![0];
        assert!(matches!(
            WeightOneForm::from_file_struct(file, "inline".into()),
            Err(Weight1Error::NotNormalized)
        ));
    }

    #[test]
    fn multiplicativity_violation_rejected() {
        let mut file: WeightOneFile = serde_json::from_str(g175c_json()).unwrap();
        // corrupt a_14 = a_2 * a_7 = 1
        file.coefficients[13] = vec![0, 1];
        assert!(matches!(
            WeightOneForm::from_file_struct(file, "inline".into()),
            Err(Weight1Error::NotMultiplicative(2, 7, 14))
        ));
    }

    #[test]
    fn theta_trivial_form() {
        let k = ImagQuadField::new(-11).unwrap();
        let g = WeightOneForm::theta_trivial(&k, 40);
        assert_eq!(g.a(1).unwrap(), &[1]);
        assert_eq!(g.a(3).unwrap(), &[2]);
        assert_eq!(g.a(5).unwrap(), &[2]);
        g.check_multiplicativity().unwrap();
        let ctx = PadicContext::plain(5, 8).unwrap();
        assert_eq!(ctx.scalar(&g.a_in(&ctx, 3).unwrap()), 2);
    }
}
