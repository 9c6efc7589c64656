//! Joint Galois traces of products of Eisenstein series whose character values
//! do not embed in the working context.
//!
//! A product of trace-averaged series is not diamond-isotypic (the orbit mixes
//! nebentypes), so products involving such pairs must be traced jointly:
//!   row_c = sum_{j ≡ 1 mod t} zeta_n^{jc} sigma_j(E_1 ... E_r).
//! Coefficients of each factor live in the group ring Z[Z/n]; products are
//! taken componentwise in NTT frequency space (2n forward transforms and n^2
//! pointwise multiply-accumulates instead of n^2 convolutions), and the final
//! trace collapses exponents through the closed-form subgroup sums.

use crate::arith::bernoulli::{generalized_bernoulli, rational_in, subgroup_sum};
use crate::arith::chars::DirichletCharacter;
use crate::ntt::FreqVec;
use crate::padic::{PadicContext, PadicError};
use crate::qseries::shared_convolver;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

/// A raw (untwisted) Eisenstein factor with exponents taken in base zeta_n.
#[derive(Clone, Debug)]
pub struct GrFactor {
    pub k: u32,
    pub chi1: DirichletCharacter,
    pub chi2: DirichletCharacter,
    pub v_shift: u64,
}

impl GrFactor {
    pub fn level(&self) -> u64 {
        self.chi1.modulus.max(1) * self.chi2.modulus.max(1) * self.v_shift
    }

    pub fn key(&self) -> String {
        format!("G{}[{}|{}]V{}", self.k, self.chi1.key(), self.chi2.key(), self.v_shift)
    }
}

/// A joint-trace candidate: the twisted trace of a product of raw factors.
#[derive(Clone, Debug)]
pub struct JointSpec {
    pub factors: Vec<GrFactor>,
    /// common exponent base
    pub n: u64,
    /// trace target order (zeta_t exists in the context, ord(chi_total) | t)
    pub t: u64,
    /// twisted-trace shift c
    pub shift: u64,
    /// p-power scaling to clear constant denominators
    pub scale_pow: u32,
}

impl JointSpec {
    pub fn key(&self) -> String {
        let mut parts: Vec<String> = self.factors.iter().map(|f| f.key()).collect();
        parts.sort();
        format!("J[{}]n{}t{}c{}s{}", parts.join("*"), self.n, self.t, self.shift, self.scale_pow)
    }

    pub fn level(&self) -> u64 {
        self.factors.iter().map(|f| f.level()).fold(1, num_integer::lcm)
    }

    /// Group-ring components (n series of length len) of one factor.
    fn factor_components(&self, ctx: &PadicContext, f: &GrFactor, len: usize) -> Result<Vec<Vec<u64>>, PadicError> {
        let zn = ctx.zn();
        let n = self.n;
        let o1 = f.chi1.value_order().max(1);
        let o2 = f.chi2.value_order().max(1);
        let m1 = f.chi1.modulus.max(1);
        let m2 = f.chi2.modulus.max(1);
        let e1_table: Vec<Option<u64>> = (0..m1)
            .map(|r| f.chi1.exp_at(r).map(|e| u64::from(e) * (f.chi1.order / o1) % o1 * (n / o1)))
            .collect();
        let e2_table: Vec<Option<u64>> = (0..m2)
            .map(|r| f.chi2.exp_at(r).map(|e| u64::from(e) * (f.chi2.order / o2) % o2 * (n / o2)))
            .collect();
        let base_len = len.div_ceil(f.v_shift as usize);
        let mut comps = vec![vec![0u64; base_len]; n as usize];
        let scale = zn.pow(ctx.p, u64::from(self.scale_pow));
        for d in 1..base_len as u64 {
            let Some(e2) = e2_table[(d % m2) as usize] else { continue };
            let dk = zn.mul(zn.pow(d % zn.n, u64::from(f.k) - 1), scale);
            let mut r = d;
            let mut q = 1u64;
            while (r as usize) < base_len {
                if let Some(e1) = e1_table[(q % m1) as usize] {
                    let e = ((e1 + e2) % n) as usize;
                    comps[e][r as usize] = zn.add(comps[e][r as usize], dk);
                }
                r += d;
                q += 1;
            }
        }
        // constant term (chi1 trivial of modulus 1): components of -B_{k,chi2}/2k
        if f.chi1.modulus == 1 {
            let b = generalized_bernoulli(&f.chi2, f.k as usize);
            let minus_2k = BigRational::from(BigInt::from(-2i64 * i64::from(f.k)));
            let mut pscale = BigRational::from(BigInt::from(1));
            for _ in 0..self.scale_pow {
                pscale *= BigRational::from(BigInt::from(ctx.p));
            }
            for (e, coeff) in b.coeffs.iter().enumerate() {
                if coeff.is_zero() {
                    continue;
                }
                let val = rational_in(ctx, &(coeff * &pscale / &minus_2k))?;
                let idx = (e as u64 * (n / b.n) % n) as usize;
                comps[idx][0] = zn.add(comps[idx][0], ctx.scalar(&val));
            }
        }
        if f.v_shift > 1 {
            for c in comps.iter_mut() {
                *c = crate::qseries::dense::v_op(c, f.v_shift, len);
            }
        } else {
            for c in comps.iter_mut() {
                c.resize(len, 0);
            }
        }
        Ok(comps)
    }

    /// The traced series to `len` coefficients.
    pub fn series(&self, ctx: &PadicContext, len: usize) -> Result<Vec<u64>, PadicError> {
        let zn = ctx.zn();
        let cv = shared_convolver();
        let n = self.n as usize;
        let big_l = (2 * len).next_power_of_two();
        // componentwise product of all factors in frequency space, reducing to
        // coefficient space between stages to stay inside the CRT range
        let mut acc: Option<Vec<Vec<u64>>> = None;
        for f in &self.factors {
            let comps = self.factor_components(ctx, f, len)?;
            acc = Some(match acc {
                None => comps,
                Some(prev) => {
                    let fa: Vec<FreqVec> = prev.iter().map(|c| cv.forward(c, big_l)).collect();
                    let fb: Vec<FreqVec> = comps.iter().map(|c| cv.forward(c, big_l)).collect();
                    let mut out_freq: Vec<FreqVec> = (0..n).map(|_| cv.zero_freq(big_l)).collect();
                    for (e1, fa_e) in fa.iter().enumerate() {
                        for (e2, fb_e) in fb.iter().enumerate() {
                            let e = (e1 + e2) % n;
                            cv.mac(&mut out_freq[e], fa_e, fb_e, 1);
                        }
                    }
                    out_freq.iter().map(|fq| cv.inverse(zn, fq, len)).collect()
                }
            });
        }
        let comps = acc.expect("at least one factor");
        // trace: sum_e comps[e] * S(e + shift), with S = integer * zeta_t^g
        let zeta_t = ctx.zeta(self.t)?;
        let mut out = vec![0u64; len];
        for (e, comp) in comps.iter().enumerate() {
            let Some((fint, g)) = subgroup_sum(self.n, self.t, e as u64 + self.shift) else {
                continue;
            };
            let w = ctx.mul(&ctx.from_i64(fint), &ctx.pow_u64(&zeta_t, g));
            let wm = zn.to_mont(ctx.scalar(&w));
            for (o, &c) in out.iter_mut().zip(comp.iter()) {
                *o = zn.add(*o, zn.mul_mont_plain(wm, c));
            }
        }
        Ok(out)
    }
}

/// Size of the trace orbit {j mod n : gcd(j, n) = 1, j ≡ 1 mod t}.
pub fn joint_orbit_size(n: u64, t: u64) -> u64 {
    (0..n)
        .filter(|&j| crate::zmod::gcd_u64(j, n) == 1 && j % t == 1 % t)
        .count()
        .max(1) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::chars::UnitGroup;
    use crate::arith::eisenstein::{eis_series, make_spec};

    #[test]
    fn joint_single_matches_plain_trace() {
        // one factor with trace-stable product character: the joint trace must
        // agree with the averaged eis_series path
        let ctx = PadicContext::plain(5, 8).unwrap();
        let ug = UnitGroup::new(11);
        let quintic = DirichletCharacter::from_generator_values(&ug, &[(5, 1)]).unwrap();
        let chi_k = DirichletCharacter::kronecker_of(-11);
        let chi2 = chi_k.mul(&quintic.conjugate()).unwrap();
        let spec = make_spec(&ctx, 1, &quintic, &chi2, 0).unwrap();
        assert_eq!((spec.n, spec.t), (10, 2));
        for shift in 0..2u64 {
            let mut s = spec.clone();
            s.shift = shift;
            let plain = eis_series(&ctx, &s, 40).unwrap();
            let joint = JointSpec {
                factors: vec![GrFactor {
                    k: 1,
                    chi1: quintic.clone(),
                    chi2: chi2.clone(),
                    v_shift: 1,
                }],
                n: 10,
                t: 2,
                shift,
                scale_pow: 0,
            };
            let js = joint.series(&ctx, 40).unwrap();
            assert_eq!(js, plain, "shift {}", shift);
        }
    }

    #[test]
    fn joint_product_is_isotypic() {
        // E_1(1, psi) * E_1(1, conj psi) traced: lands in M_2(Gamma_0(11), trivial);
        // verify by checking it against the classical weight-2 span
        let ctx = PadicContext::plain(5, 8).unwrap();
        let ug = UnitGroup::new(11);
        let psi = DirichletCharacter::from_generator_values(&ug, &[(10, 1)]).unwrap();
        let triv1 = DirichletCharacter::trivial(1);
        let joint = JointSpec {
            factors: vec![
                GrFactor { k: 1, chi1: triv1.clone(), chi2: psi.clone(), v_shift: 1 },
                GrFactor { k: 1, chi1: triv1.clone(), chi2: psi.conjugate(), v_shift: 1 },
            ],
            n: 10,
            t: 1,
            shift: 0,
            scale_pow: 0,
        };
        let js = joint.series(&ctx, 60).unwrap();
        // compare against span of M_2(11, trivial)
        let trivial11 = DirichletCharacter::trivial(11);
        let basis = crate::spaces::classical_basis(&ctx, 2, 11, &trivial11, 60, 0).unwrap();
        let st = crate::matrix::echelonize(ctx.zn(), 5, 8, &basis.prefixes);
        let (_, r) = st.reduce(ctx.zn(), 5, &js);
        assert!(
            r.iter().all(|&x| x % 5u64.pow(6) == 0),
            "joint trace must lie in M_2(11): residual {:?}",
            &r.iter().enumerate().filter(|(_, &x)| x != 0).take(4).collect::<Vec<_>>()
        );
    }
}
