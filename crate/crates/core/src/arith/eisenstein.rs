//! Eisenstein series E_k(chi1, chi2) as dense q-expansions over a context.
//!
//! When the pair's values generate a cyclotomic field that does not embed in
//! the context, the series is replaced by its twisted Galois traces (shift
//! parameter c); those always have context-rational coefficients and together
//! span the same space over Z_p. A fully embeddable pair is the special case
//! where the trace subgroup is trivial.

use crate::arith::bernoulli::{embed_averaged, generalized_bernoulli, rational_in, subgroup_sum};
use crate::arith::chars::DirichletCharacter;
use crate::padic::{PadicContext, PadicError};
use crate::zmod::gcd_u64;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EisError {
    #[error("parity mismatch: chi1*chi2(-1) != (-1)^k")]
    ParityMismatch,
    #[error("character values of order {0} do not embed and no trace order is available")]
    NoTraceOrder(u64),
    #[error(transparent)]
    Padic(#[from] PadicError),
    #[error("constant term has p-adic valuation below -2; candidate rejected")]
    ConstantTooDeep,
}

/// A (possibly trace-averaged) Eisenstein series specification.
/// chi1, chi2 are primitive; level = cond(chi1) * cond(chi2).
#[derive(Clone, Debug)]
pub struct EisSpec {
    pub k: u32,
    pub chi1: DirichletCharacter,
    pub chi2: DirichletCharacter,
    /// common value order n of the pair
    pub n: u64,
    /// trace target order t | n (t = n means no averaging)
    pub t: u64,
    /// twisted-trace shift c (exponent of zeta_n)
    pub shift: u64,
    /// series is scaled by p^scale_pow to clear a p in the constant denominator
    pub scale_pow: u32,
}

impl EisSpec {
    pub fn level(&self) -> u64 {
        self.chi1.modulus.max(1) * self.chi2.modulus.max(1)
    }

    /// exponents (base zeta_n) of chi1(p), chi2(p), chi1chi2(p); None = value 0
    pub fn exps_at(&self, p: u64) -> (Option<u64>, Option<u64>, Option<u64>) {
        let o1 = self.chi1.value_order().max(1);
        let o2 = self.chi2.value_order().max(1);
        let e1 = self.chi1.exp_at(p % self.chi1.modulus.max(1)).map(|e| {
            u64::from(e) * (self.chi1.order / o1) % o1 * (self.n / o1)
        });
        let e2 = self.chi2.exp_at(p % self.chi2.modulus.max(1)).map(|e| {
            u64::from(e) * (self.chi2.order / o2) % o2 * (self.n / o2)
        });
        let e12 = match (e1, e2) {
            (Some(a), Some(b)) => Some((a + b) % self.n),
            _ => None,
        };
        (e1, e2, e12)
    }

    pub fn key(&self) -> String {
        format!(
            "E{}[{}|{}]n{}t{}c{}s{}",
            self.k,
            self.chi1.key(),
            self.chi2.key(),
            self.n,
            self.t,
            self.shift,
            self.scale_pow
        )
    }
}

/// Largest divisor t of n with mult | t and zeta_t available in the context.
pub fn max_trace_order(ctx: &PadicContext, n: u64, mult: u64) -> Option<u64> {
    let mut best = None;
    for t in 1..=n {
        if n % t == 0 && t % mult == 0 && ctx.zeta(t).is_ok() {
            best = Some(t);
        }
    }
    best
}

/// Build the parity-checked spec, choosing the trace order automatically.
pub fn make_spec(
    ctx: &PadicContext,
    k: u32,
    chi1: &DirichletCharacter,
    chi2: &DirichletCharacter,
    shift: u64,
) -> Result<EisSpec, EisError> {
    let parity = chi1.parity() * chi2.parity();
    let want = if k % 2 == 0 { 1 } else { -1 };
    if parity != want {
        return Err(EisError::ParityMismatch);
    }
    let o1 = chi1.value_order().max(1);
    let o2 = chi2.value_order().max(1);
    let n = num_integer::lcm(o1, o2);
    // the product character's values must embed
    let prod_ord = {
        let m = num_integer::lcm(chi1.modulus.max(1), chi2.modulus.max(1));
        let c1 = chi1.induce(m).map_err(|_| EisError::NoTraceOrder(n))?;
        let c2 = chi2.induce(m).map_err(|_| EisError::NoTraceOrder(n))?;
        c1.mul(&c2).map_err(|_| EisError::NoTraceOrder(n))?.value_order().max(1)
    };
    let t = max_trace_order(ctx, n, prod_ord).ok_or(EisError::NoTraceOrder(n))?;
    Ok(EisSpec { k, chi1: chi1.primitive_part(), chi2: chi2.primitive_part(), n, t, shift, scale_pow: 0 })
}

/// Number of independent twisted traces for a spec (= index of the trace subgroup).
pub fn orbit_size(spec: &EisSpec) -> u64 {
    let mut count = 0;
    for j in 0..spec.n {
        if gcd_u64(j, spec.n) == 1 && j % spec.t == 1 % spec.t {
            count += 1;
        }
    }
    count.max(1)
}

/// The q-expansion (a_0 included) to `len` coefficients.
pub fn eis_series(ctx: &PadicContext, spec: &EisSpec, len: usize) -> Result<Vec<u64>, EisError> {
    let zn = ctx.zn();
    let n = spec.n;
    // S-table: value of sum_{j ≡ 1 mod t} zeta_n^{j e} in the context
    let mut s_table = vec![0u64; n as usize];
    let zeta_t = ctx.zeta(spec.t)?;
    for e in 0..n {
        if let Some((f, ze)) = subgroup_sum(n, spec.t, e) {
            let v = ctx.mul(&ctx.from_i64(f), &ctx.pow_u64(&zeta_t, ze));
            s_table[e as usize] = ctx.scalar(&v);
        }
    }
    let o1 = spec.chi1.value_order().max(1);
    let o2 = spec.chi2.value_order().max(1);
    let m1 = spec.chi1.modulus.max(1);
    let m2 = spec.chi2.modulus.max(1);
    // exponent tables in base zeta_n
    let e1_table: Vec<Option<u64>> = (0..m1)
        .map(|r| spec.chi1.exp_at(r).map(|e| u64::from(e) * (spec.chi1.order / o1) % o1 * (n / o1)))
        .collect();
    let e2_table: Vec<Option<u64>> = (0..m2)
        .map(|r| spec.chi2.exp_at(r).map(|e| u64::from(e) * (spec.chi2.order / o2) % o2 * (n / o2)))
        .collect();
    let mut out = vec![0u64; len];
    let scale = zn.pow(ctx.p, u64::from(spec.scale_pow));
    let scale_m = zn.to_mont(scale);
    for d in 1..len as u64 {
        let Some(e2) = e2_table[(d % m2) as usize] else { continue };
        let dk = zn.pow(d % zn.n, u64::from(spec.k) - 1);
        let dk = zn.mul_mont_plain(scale_m, dk);
        let dkm = zn.to_mont(dk);
        let mut r = d;
        let mut q = 1u64;
        while (r as usize) < len {
            if let Some(e1) = e1_table[(q % m1) as usize] {
                let e = (e1 + e2 + spec.shift) % n;
                let s = s_table[e as usize];
                if s != 0 {
                    out[r as usize] = zn.add(out[r as usize], zn.mul_mont_plain(dkm, s));
                }
            }
            r += d;
            q += 1;
        }
    }
    // constant term: only when chi1 is the trivial character of modulus 1
    if spec.chi1.modulus == 1 && !out.is_empty() {
        let b = generalized_bernoulli(&spec.chi2, spec.k as usize);
        // rebase exponents from order o2 to n, divide by -2k, scale by p^scale_pow
        let mut reb = crate::arith::bernoulli::GroupRingQ::zero(n);
        for (e, c) in b.coeffs.iter().enumerate() {
            if !c.is_zero() {
                reb.add_term(e as u64 * (n / b.n), c.clone());
            }
        }
        let minus_2k = BigRational::from(BigInt::from(-2i64 * i64::from(spec.k)));
        let mut pscale = BigRational::from(BigInt::from(1));
        for _ in 0..spec.scale_pow {
            pscale *= BigRational::from(BigInt::from(ctx.p));
        }
        reb.scale(&(pscale / minus_2k));
        let c0 = embed_averaged(ctx, &reb, spec.t, spec.shift).map_err(|e| match e {
            PadicError::NonUnitDenominator => EisError::ConstantTooDeep,
            other => EisError::Padic(other),
        })?;
        out[0] = ctx.scalar(&c0);
    }
    Ok(out)
}

/// Level-1 Eisenstein series normalized to constant term 1:
/// 1 - (2k/B_k) sum sigma_{k-1}(n) q^n. The scaling factor is p-integral for
/// regular p, which covers every prime this artifact touches.
pub fn eis_level1_normalized(ctx: &PadicContext, k: u32, len: usize) -> Result<Vec<u64>, EisError> {
    let triv = DirichletCharacter::trivial(1);
    let b = generalized_bernoulli(&triv, k as usize).as_rational().unwrap();
    let factor = BigRational::from(BigInt::from(-2i64 * i64::from(k))) / b;
    let f = rational_in(ctx, &factor)?;
    let zn = ctx.zn();
    let fm = zn.to_mont(ctx.scalar(&f));
    let mut out = vec![0u64; len];
    for d in 1..len as u64 {
        let dk = zn.pow(d % zn.n, u64::from(k) - 1);
        let mut r = d;
        while (r as usize) < len {
            out[r as usize] = zn.add(out[r as usize], dk);
            r += d;
        }
    }
    for c in out.iter_mut() {
        *c = zn.mul_mont_plain(fm, *c);
    }
    out[0] = 1;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::chars::UnitGroup;

    #[test]
    fn e4_and_e8_product() {
        let ctx = PadicContext::plain(5, 10).unwrap();
        let zn = ctx.zn();
        let e4 = eis_level1_normalized(&ctx, 4, 8).unwrap();
        // divisor-sum oracle: sigma_3
        let sigma3 = |n: u64| -> u64 { (1..=n).filter(|d| n % d == 0).map(|d| d * d * d).sum() };
        for n in 1..8u64 {
            assert_eq!(e4[n as usize], zn.mul(240 % zn.n, sigma3(n) % zn.n));
        }
        assert_eq!(e4[0], 1);
        // E4 * E4 = E8: a_1 = 480 * sigma_7(1)
        let prod = crate::qseries::dense::mul_trunc(zn, &e4, &e4, 8);
        let e8 = eis_level1_normalized(&ctx, 8, 8).unwrap();
        assert_eq!(prod, e8);
        assert_eq!(e8[1], 480);
    }

    #[test]
    fn e12_at_13_is_one_mod_p() {
        let ctx = PadicContext::plain(13, 10).unwrap();
        let e12 = eis_level1_normalized(&ctx, 12, 50).unwrap();
        assert_eq!(e12[0], 1);
        for &c in &e12[1..] {
            assert_eq!(c % 13, 0, "E_12 must be 1 mod 13 coefficientwise");
        }
        // a_1 = 65520/691 in Z/13^10
        let a1 = ctx
            .div(&ctx.from_u64(65520), &ctx.from_u64(691))
            .unwrap();
        assert_eq!(e12[1], ctx.scalar(&a1));
    }

    #[test]
    fn weight1_eisenstein_theta_coefficients() {
        // E_1(1, chi_{-11}): a_n = sum_{d|n} chi(d) (ideal-count oracle in theta tests)
        let ctx = PadicContext::plain(5, 10).unwrap();
        let chi = DirichletCharacter::kronecker_of(-11);
        let triv = DirichletCharacter::trivial(1);
        let spec = make_spec(&ctx, 1, &triv, &chi, 0).unwrap();
        let e = eis_series(&ctx, &spec, 12).unwrap();
        let zn = ctx.zn();
        let oracle = |n: u64| -> u64 {
            let mut s = 0i64;
            for d in 1..=n {
                if n % d == 0 {
                    s += crate::zmod::kronecker(-11, d as i64);
                }
            }
            zn.from_i64(s)
        };
        for n in 1..12u64 {
            assert_eq!(e[n as usize], oracle(n), "at n={}", n);
        }
        // constant term: -B_{1,chi}/2 = 1/2
        let half = ctx.invert(&ctx.from_u64(2)).unwrap();
        assert_eq!(e[0], ctx.scalar(&half));
        // parity mismatch is rejected
        assert!(matches!(make_spec(&ctx, 2, &triv, &chi, 0), Err(EisError::ParityMismatch)));
    }

    #[test]
    fn averaged_pair_traces() {
        // quintic characters mod 11 at p = 5: zeta_5 does not embed in Q_5,
        // so E_1-type pairs (chi, chi_{-11} chi^{-1})-style need averaging.
        // Take chi1 = quintic mod 11, chi2 = chi_{-11} * conj(quintic): product
        // is chi_{-11} (order 2, embeddable).
        let ctx = PadicContext::plain(5, 8).unwrap();
        let ug = UnitGroup::new(11);
        let quintic = DirichletCharacter::from_generator_values(&ug, &[(5, 1)]).unwrap();
        let chi_k = DirichletCharacter::kronecker_of(-11);
        let chi2 = chi_k.mul(&quintic.conjugate()).unwrap();
        let spec = make_spec(&ctx, 1, &quintic, &chi2, 0).unwrap();
        assert_eq!(spec.n, 10);
        assert_eq!(spec.t, 2);
        assert_eq!(orbit_size(&spec), 4);
        // the averaged series must be context-rational: just check it computes
        // and that the four shifts give genuinely different rows
        let rows: Vec<Vec<u64>> = (0..4)
            .map(|c| {
                let mut s = spec.clone();
                s.shift = c;
                eis_series(&ctx, &s, 40).unwrap()
            })
            .collect();
        assert!(rows[0] != rows[1] || rows[0] != rows[2]);
        // oracle: the sum over ALL shifts c with weight 1 equals the full trace of
        // the orbit sum = |J| * (rational-part rows); verify S-consistency instead:
        // row at shift c equals sum over j in J of conjugated series; test the
        // defining linearity via the subgroup sums at a few exponents
        for e in 0..10u64 {
            let s0 = subgroup_sum(10, 2, e);
            // the subgroup {1, 3, 7, 9} mod 10: direct complex-free check via
            // group ring: sum_j zeta_10^{je} has zeta_2-rational value iff ...
            // here only consistency of the closed form with |J| at e = 0:
            if e == 0 {
                assert_eq!(s0, Some((4, 0)));
            }
        }
    }
}
