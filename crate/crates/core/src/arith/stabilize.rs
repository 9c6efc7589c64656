//! p-stabilization: roots of the Hecke polynomial X^2 - a_p X + det and the
//! passage g -> g_alpha = g(q) - beta g(q^p).

use crate::padic::{PadicContext, PadicElement, PadicError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StabilizeError {
    #[error("form is not ordinary at p: both Hecke roots have positive valuation")]
    NotOrdinary,
    #[error("no root with residue {0} mod p")]
    NoSuchResidue(u64),
    #[error("roots are congruent mod p but not equal: separation lost at this precision")]
    InsufficientSeparation,
    #[error(transparent)]
    Padic(#[from] PadicError),
}

/// Which root of the Hecke polynomial becomes alpha.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootChoice {
    /// the unit root (weight 2 ordinary)
    UnitRoot,
    /// deterministic first root (smallest scalar residue)
    First,
    Second,
    /// the root congruent to the given residue mod p
    Residue(u64),
}

#[derive(Clone, Debug)]
pub struct Stabilization {
    pub ap: PadicElement,
    pub det_term: PadicElement,
    pub alpha: PadicElement,
    pub beta: PadicElement,
    pub choice: RootChoice,
    /// alpha = beta to working precision (the paper's alpha != beta assumption fails)
    pub degenerate: bool,
}

/// Roots of X^2 - a_p X + det in the context, ordered per `choice`.
pub fn stabilize_roots(
    ctx: &PadicContext,
    ap: &PadicElement,
    det_term: &PadicElement,
    choice: RootChoice,
) -> Result<Stabilization, StabilizeError> {
    let disc = ctx.sub(&ctx.mul(ap, ap), &ctx.mul_u64(det_term, 4));
    let half = ctx.invert(&ctx.from_u64(2))?;
    let (alpha, beta, degenerate) = if ctx.is_zero_to_precision(&disc) {
        // double root a_p / 2
        let r = ctx.mul(ap, &half);
        (r.clone(), r, true)
    } else {
        let v = ctx.valuation(&disc);
        if v == 0 {
            let s = ctx.sqrt_unit(&disc).map_err(|_| StabilizeError::InsufficientSeparation)?;
            let a = ctx.mul(&ctx.add(ap, &s), &half);
            let b = ctx.mul(&ctx.sub(ap, &s), &half);
            (a, b, false)
        } else if ctx.valuation(det_term) > 0 {
            // weight-2 shape: det = p * unit; ordinary iff a_p is a unit
            if ctx.valuation(ap) > 0 {
                return Err(StabilizeError::NotOrdinary);
            }
            // Newton for the unit root of X^2 - ap X + det from residue ap mod p
            let apv = ctx.scalar(ap);
            let detv = ctx.scalar(det_term);
            let zn = ctx.zn();
            let mut r = apv % ctx.p;
            for _ in 0..ctx.m.ilog2() + 2 {
                let fr = zn.add(zn.sub(zn.mul(r, r), zn.mul(apv, r)), detv);
                let dr = zn.sub(zn.add(r, r), apv);
                let dinv = crate::qseries::modn_inv_pub(zn.n, dr);
                r = zn.sub(r, zn.mul(fr, dinv));
            }
            let a = ctx.from_u64(r);
            let b = ctx.sub(ap, &a);
            (a, b, false)
        } else {
            // roots congruent mod p with nonzero separation: the sqrt of disc
            // exists only after removing an even power of p
            if v % 2 == 1 {
                return Err(StabilizeError::InsufficientSeparation);
            }
            let unit = ctx.divide_p_power(&disc, v)?;
            let s0 = ctx.sqrt_unit(&unit).map_err(|_| StabilizeError::InsufficientSeparation)?;
            let s = ctx.mul(&s0, &ctx.from_u64(ctx.p.pow(v / 2)));
            let a = ctx.mul(&ctx.add(ap, &s), &half);
            let b = ctx.mul(&ctx.sub(ap, &s), &half);
            (a, b, false)
        }
    };
    // order the pair per the requested choice
    let (alpha, beta) = match choice {
        RootChoice::UnitRoot => {
            if ctx.valuation(&alpha) == 0 {
                (alpha, beta)
            } else if ctx.valuation(&beta) == 0 {
                (beta, alpha)
            } else {
                return Err(StabilizeError::NotOrdinary);
            }
        }
        RootChoice::First => {
            if ctx.scalar(&alpha) <= ctx.scalar(&beta) {
                (alpha, beta)
            } else {
                (beta, alpha)
            }
        }
        RootChoice::Second => {
            if ctx.scalar(&alpha) <= ctx.scalar(&beta) {
                (beta, alpha)
            } else {
                (alpha, beta)
            }
        }
        RootChoice::Residue(r) => {
            if ctx.scalar(&alpha) % ctx.p == r % ctx.p {
                (alpha, beta)
            } else if ctx.scalar(&beta) % ctx.p == r % ctx.p {
                (beta, alpha)
            } else {
                return Err(StabilizeError::NoSuchResidue(r));
            }
        }
    };
    Ok(Stabilization { ap: ap.clone(), det_term: det_term.clone(), alpha, beta, choice, degenerate })
}

/// g_alpha(q) = g(q) - beta * g(q^p) on dense coefficient vectors
/// (index 0 = a_0); output has the same length as the input.
pub fn stabilized_series(ctx: &PadicContext, g: &[u64], beta: &PadicElement, p: u64) -> Vec<u64> {
    let zn = ctx.zn();
    let bm = zn.to_mont(ctx.scalar(beta));
    let mut out = g.to_vec();
    for n in 0..out.len() {
        if n as u64 % p == 0 {
            let src = n / p as usize;
            if src < g.len() {
                out[n] = zn.sub(out[n], zn.mul_mont_plain(bm, g[src]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::theta::ImagQuadField;

    #[test]
    fn theta_split_degenerate() {
        // theta(1_K), K = Q(sqrt(-20) field disc -20): p = 7 splits, a_7 = 2,
        // chi(7) = 1: X^2 - 2X + 1 = (X-1)^2, degenerate flag set
        let ctx = PadicContext::plain(7, 8).unwrap();
        let k = ImagQuadField::new(-20).unwrap();
        assert_eq!(k.splitting(7), 1);
        let ap = ctx.from_u64(2);
        let det = ctx.from_u64(1);
        let s = stabilize_roots(&ctx, &ap, &det, RootChoice::First).unwrap();
        assert!(s.degenerate);
        assert_eq!(ctx.scalar(&s.alpha), 1);
        assert_eq!(ctx.scalar(&s.beta), 1);
    }

    #[test]
    fn theta_inert_roots() {
        // theta(1_K), K = Q(sqrt(-11)): p = 7 inert, a_7 = 0, chi(7) = -1,
        // roots of X^2 - 1: alpha = 1, beta = -1
        let ctx = PadicContext::plain(7, 8).unwrap();
        let ap = ctx.zero();
        let det = ctx.from_i64(-1);
        let s = stabilize_roots(&ctx, &ap, &det, RootChoice::Residue(1)).unwrap();
        assert!(!s.degenerate);
        assert_eq!(ctx.scalar(&s.alpha), 1);
        assert_eq!(s.beta, ctx.from_i64(-1));
        // alpha + beta = a_p, alpha * beta = det
        assert!(ctx.is_zero_to_precision(&ctx.sub(&ctx.add(&s.alpha, &s.beta), &ap)));
        assert!(ctx.is_zero_to_precision(&ctx.sub(&ctx.mul(&s.alpha, &s.beta), &det)));
    }

    #[test]
    fn weight2_unit_root() {
        // 11a at p = 5: a_5 = 1, X^2 - X + 5, unit root = 1 mod 5
        let ctx = PadicContext::plain(5, 10).unwrap();
        let ap = ctx.one();
        let det = ctx.from_u64(5);
        let s = stabilize_roots(&ctx, &ap, &det, RootChoice::UnitRoot).unwrap();
        assert_eq!(ctx.scalar(&s.alpha) % 5, 1);
        assert_eq!(ctx.valuation(&s.beta), 1);
        // hensel oracle
        let oracle = ctx.hensel_root(&[5, -1, 1], 1).unwrap();
        assert_eq!(ctx.scalar(&s.alpha), ctx.scalar(&oracle));
        // non-ordinary rejected
        let bad = stabilize_roots(&ctx, &ctx.from_u64(5), &det, RootChoice::UnitRoot);
        assert!(matches!(bad, Err(StabilizeError::NotOrdinary)));
    }

    #[test]
    fn stabilized_series_eigen_relation() {
        // U_p(g_alpha) = alpha g_alpha for theta(1_{Q(sqrt{-11})}) at p = 7
        let ctx = PadicContext::plain(7, 8).unwrap();
        let k = ImagQuadField::new(-11).unwrap();
        let m = 210usize;
        let mut g = vec![0u64; m];
        let zn = ctx.zn();
        // include the Eisenstein constant term -B_{1,chi}/2 = 1/2
        let half = ctx.invert(&ctx.from_u64(2)).unwrap();
        g[0] = ctx.scalar(&half);
        for (n, c) in k.theta_trivial_coeffs(m - 1).iter().enumerate() {
            g[n + 1] = zn.from_i64(*c);
        }
        let s = stabilize_roots(&ctx, &ctx.zero(), &ctx.from_i64(-1), RootChoice::Residue(1)).unwrap();
        let ga = stabilized_series(&ctx, &g, &s.beta, 7);
        let u: Vec<u64> = ga.iter().step_by(7).copied().collect();
        let am = zn.to_mont(ctx.scalar(&s.alpha));
        for (n, &c) in u.iter().enumerate() {
            assert_eq!(c, zn.mul_mont_plain(am, ga[n]), "eigen relation fails at {}", n);
        }
    }
}
