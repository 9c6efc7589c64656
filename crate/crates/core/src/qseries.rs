//! Truncated q-expansion calculus over a p-adic coefficient ring: products,
//! U/V operators, p-depletion and the overconvergent anti-derivative d^{-1}.

use crate::ntt::Convolver;
use crate::padic::{PadicContext, PadicElement};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QSeriesError {
    #[error("series belong to different contexts")]
    ContextMismatch,
    #[error("q-precision {0} is smaller than p = {1}")]
    PrecisionTooSmall(usize, u64),
    #[error("series is not p-depleted (a_{0} != 0)")]
    NotDepleted(usize),
    #[error("constant term must vanish before d^-1")]
    ConstantTermNonzero,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeriesMeta {
    pub weight: Option<i64>,
    pub level: Option<u64>,
    pub character: Option<String>,
}

/// A q-expansion a_0 + a_1 q + ... + a_{M-1} q^{M-1} over a fixed context.
#[derive(Clone, Debug)]
pub struct QExpansion {
    ctx_id: u32,
    pub coeffs: Vec<PadicElement>,
    pub meta: Option<SeriesMeta>,
}

fn convolver() -> &'static Convolver {
    static CV: OnceLock<Convolver> = OnceLock::new();
    CV.get_or_init(Convolver::new)
}

impl QExpansion {
    pub fn new(ctx: &PadicContext, coeffs: Vec<PadicElement>) -> Self {
        for c in &coeffs {
            assert!(ctx.same_context(c), "coefficient from a different context");
        }
        QExpansion { ctx_id: ctx.id(), coeffs, meta: None }
    }

    pub fn with_meta(mut self, meta: SeriesMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn from_u64(ctx: &PadicContext, coeffs: &[u64]) -> Self {
        QExpansion::new(ctx, coeffs.iter().map(|&c| ctx.from_u64(c)).collect())
    }

    pub fn from_i64(ctx: &PadicContext, coeffs: &[i64]) -> Self {
        QExpansion::new(ctx, coeffs.iter().map(|&c| ctx.from_i64(c)).collect())
    }

    pub fn zero(ctx: &PadicContext, len: usize) -> Self {
        QExpansion::new(ctx, vec![ctx.zero(); len])
    }

    pub fn q_prec(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeff<'a>(&'a self, n: usize) -> Option<&'a PadicElement> {
        self.coeffs.get(n)
    }

    /// Degree-1 contexts only: the raw residue vector.
    pub fn scalar_vec(&self, ctx: &PadicContext) -> Vec<u64> {
        self.coeffs.iter().map(|c| ctx.scalar(c)).collect()
    }

    pub fn is_zero_to_precision(&self, ctx: &PadicContext) -> bool {
        self.coeffs.iter().all(|c| ctx.is_zero_to_precision(c))
    }

    fn check_pair(&self, other: &QExpansion) -> Result<(), QSeriesError> {
        if self.ctx_id != other.ctx_id {
            return Err(QSeriesError::ContextMismatch);
        }
        Ok(())
    }
}

/// Truncated Cauchy product to q-precision min(M_a, M_b); weights add when both present.
pub fn multiply(ctx: &PadicContext, a: &QExpansion, b: &QExpansion) -> Result<QExpansion, QSeriesError> {
    a.check_pair(b)?;
    let out_len = a.q_prec().min(b.q_prec());
    let prec = a
        .coeffs
        .iter()
        .chain(b.coeffs.iter())
        .map(|c| c.known_precision)
        .min()
        .unwrap_or(ctx.m);
    let mut out = if ctx.deg() == 1 {
        let av = a.scalar_vec(ctx);
        let bv = b.scalar_vec(ctx);
        let prod = convolver().conv_mod(ctx.zn(), &av, &bv, out_len);
        let mut coeffs: Vec<PadicElement> = prod.iter().map(|&c| ctx.from_u64(c)).collect();
        for c in coeffs.iter_mut() {
            c.known_precision = prec;
        }
        QExpansion::new(ctx, coeffs)
    } else {
        let mut coeffs = vec![ctx.zero(); out_len];
        for (i, x) in a.coeffs.iter().enumerate().take(out_len) {
            for (j, y) in b.coeffs.iter().enumerate() {
                if i + j >= out_len {
                    break;
                }
                let t = ctx.mul(x, y);
                coeffs[i + j] = ctx.add(&coeffs[i + j], &t);
            }
        }
        QExpansion::new(ctx, coeffs)
    };
    out.meta = match (&a.meta, &b.meta) {
        (Some(ma), Some(mb)) => Some(SeriesMeta {
            weight: match (ma.weight, mb.weight) {
                (Some(x), Some(y)) => Some(x + y),
                _ => None,
            },
            level: match (ma.level, mb.level) {
                (Some(x), Some(y)) => Some(num_integer::lcm(x, y)),
                _ => None,
            },
            character: None,
        }),
        _ => None,
    };
    Ok(out)
}

pub fn add(ctx: &PadicContext, a: &QExpansion, b: &QExpansion) -> Result<QExpansion, QSeriesError> {
    a.check_pair(b)?;
    let out_len = a.q_prec().min(b.q_prec());
    let coeffs = (0..out_len).map(|i| ctx.add(&a.coeffs[i], &b.coeffs[i])).collect();
    Ok(QExpansion::new(ctx, coeffs))
}

pub fn sub(ctx: &PadicContext, a: &QExpansion, b: &QExpansion) -> Result<QExpansion, QSeriesError> {
    a.check_pair(b)?;
    let out_len = a.q_prec().min(b.q_prec());
    let coeffs = (0..out_len).map(|i| ctx.sub(&a.coeffs[i], &b.coeffs[i])).collect();
    Ok(QExpansion::new(ctx, coeffs))
}

pub fn scale(ctx: &PadicContext, a: &QExpansion, s: &PadicElement) -> QExpansion {
    QExpansion::new(ctx, a.coeffs.iter().map(|c| ctx.mul(c, s)).collect())
}

/// U_p: coefficient n of the output is coefficient np of the input.
pub fn u_operator(ctx: &PadicContext, a: &QExpansion, p: u64) -> Result<QExpansion, QSeriesError> {
    let _ = ctx;
    if a.q_prec() < p as usize {
        return Err(QSeriesError::PrecisionTooSmall(a.q_prec(), p));
    }
    let out_len = a.q_prec() / p as usize;
    let mut coeffs = Vec::with_capacity(out_len);
    let mut n = 0usize;
    while coeffs.len() < out_len {
        coeffs.push(a.coeffs[n].clone());
        n += p as usize;
    }
    Ok(QExpansion { ctx_id: a.ctx_id, coeffs, meta: a.meta.clone() })
}

/// V_p: output(q) = a(q^p), to `out_len` coefficients (default p * M).
pub fn v_operator(ctx: &PadicContext, a: &QExpansion, p: u64, out_len: Option<usize>) -> QExpansion {
    let len = out_len.unwrap_or(a.q_prec() * p as usize);
    let mut coeffs = vec![ctx.zero(); len];
    for (n, c) in a.coeffs.iter().enumerate() {
        let idx = n * p as usize;
        if idx < len {
            coeffs[idx] = c.clone();
        }
    }
    QExpansion { ctx_id: a.ctx_id, coeffs, meta: a.meta.clone() }
}

/// p-depletion: zero every coefficient with index divisible by p (including a_0).
pub fn p_deplete(ctx: &PadicContext, a: &QExpansion, p: u64) -> QExpansion {
    let mut coeffs = a.coeffs.clone();
    let mut n = 0usize;
    while n < coeffs.len() {
        coeffs[n] = ctx.zero();
        n += p as usize;
    }
    QExpansion { ctx_id: a.ctx_id, coeffs, meta: a.meta.clone() }
}

/// d^{-1} on a p-depleted series with vanishing constant term: a_n -> a_n / n.
pub fn d_inverse(ctx: &PadicContext, a: &QExpansion, p: u64) -> Result<QExpansion, QSeriesError> {
    if !ctx.is_zero_to_precision(&a.coeffs[0]) {
        return Err(QSeriesError::ConstantTermNonzero);
    }
    let mut coeffs = vec![ctx.zero(); a.q_prec()];
    for (n, c) in a.coeffs.iter().enumerate().skip(1) {
        if n as u64 % p == 0 {
            if !ctx.is_zero_to_precision(c) {
                return Err(QSeriesError::NotDepleted(n));
            }
            continue;
        }
        let ninv = ctx.invert(&ctx.from_u64(n as u64 % ctx.pm)).expect("n is a unit");
        coeffs[n] = ctx.mul(c, &ninv);
    }
    let meta = a.meta.as_ref().map(|m| SeriesMeta {
        weight: m.weight.map(|w| w - 2),
        level: m.level,
        character: m.character.clone(),
    });
    Ok(QExpansion { ctx_id: a.ctx_id, coeffs, meta })
}

/// Formal derivative d = q d/dq: a_n -> n * a_n.
pub fn d_operator(ctx: &PadicContext, a: &QExpansion) -> QExpansion {
    let coeffs = a
        .coeffs
        .iter()
        .enumerate()
        .map(|(n, c)| ctx.mul(c, &ctx.from_u64(n as u64 % ctx.pm)))
        .collect();
    QExpansion { ctx_id: a.ctx_id, coeffs, meta: a.meta.clone() }
}

// ---------- dense scalar-series helpers for the heavy pipeline (degree-1 rings) ----------

/// Operations on raw residue vectors over Z/p^m; the performance path behind the
/// element-level API above.
pub mod dense {
    use super::convolver;
    use crate::zmod::Zn;

    pub fn mul_trunc(zn: &Zn, a: &[u64], b: &[u64], out_len: usize) -> Vec<u64> {
        convolver().conv_mod(zn, a, b, out_len)
    }

    pub fn add_into(zn: &Zn, acc: &mut [u64], b: &[u64]) {
        for (x, &y) in acc.iter_mut().zip(b.iter()) {
            *x = zn.add(*x, y);
        }
    }

    pub fn sub_into(zn: &Zn, acc: &mut [u64], b: &[u64]) {
        for (x, &y) in acc.iter_mut().zip(b.iter()) {
            *x = zn.sub(*x, y);
        }
    }

    pub fn scale(zn: &Zn, a: &[u64], s: u64) -> Vec<u64> {
        let sm = zn.to_mont(s);
        a.iter().map(|&c| zn.mul_mont_plain(sm, c)).collect()
    }

    pub fn scale_into(zn: &Zn, a: &mut [u64], s: u64) {
        let sm = zn.to_mont(s);
        for c in a.iter_mut() {
            *c = zn.mul_mont_plain(sm, *c);
        }
    }

    /// acc -= s * b
    pub fn submul_into(zn: &Zn, acc: &mut [u64], b: &[u64], s: u64) {
        let sm = zn.to_mont(s);
        for (x, &y) in acc.iter_mut().zip(b.iter()) {
            *x = zn.sub(*x, zn.mul_mont_plain(sm, y));
        }
    }

    pub fn u_op(a: &[u64], p: u64) -> Vec<u64> {
        a.iter().step_by(p as usize).copied().collect()
    }

    pub fn v_op(a: &[u64], p: u64, out_len: usize) -> Vec<u64> {
        let mut out = vec![0u64; out_len];
        for (n, &c) in a.iter().enumerate() {
            let idx = n * p as usize;
            if idx < out_len {
                out[idx] = c;
            }
        }
        out
    }

    /// Newton inverse of a series with unit constant term, to out_len coefficients.
    pub fn inverse(zn: &Zn, a: &[u64], out_len: usize) -> Vec<u64> {
        let a0inv = super::modn_inv_pub(zn.n, a[0]);
        let mut x = vec![a0inv];
        let mut len = 1usize;
        while len < out_len {
            len = (len * 2).min(out_len);
            // x <- x * (2 - a*x) truncated to len
            let ax = mul_trunc(zn, &a[..a.len().min(len)], &x, len);
            let mut corr = vec![0u64; len];
            corr[0] = zn.sub(2 % zn.n, ax[0]);
            for i in 1..len {
                corr[i] = zn.neg(ax[i]);
            }
            x = mul_trunc(zn, &x, &corr, len);
        }
        x
    }

    /// Exact quotient a / b where b has unit constant term.
    pub fn div(zn: &Zn, a: &[u64], b: &[u64], out_len: usize) -> Vec<u64> {
        let binv = inverse(zn, b, out_len);
        mul_trunc(zn, a, &binv, out_len)
    }
}

pub(crate) fn modn_inv_pub(n: u64, a: u64) -> u64 {
    let (mut r0, mut r1) = (n as i128, (a % n) as i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    assert_eq!(r0, 1, "series constant term is not a unit");
    t0.rem_euclid(n as i128) as u64
}

/// Shared convolver handle for heavy modules.
pub fn shared_convolver() -> &'static Convolver {
    convolver()
}

/// Render a scalar series as a short human-readable string.
pub fn to_string_prefix(ctx: &PadicContext, a: &QExpansion, terms: usize) -> String {
    let mut s = String::new();
    let mut first = true;
    for (n, c) in a.coeffs.iter().take(terms).enumerate() {
        if ctx.is_zero_to_precision(c) {
            continue;
        }
        let v = ctx.scalar(c);
        if !first {
            s.push_str(" + ");
        }
        if n == 0 {
            s.push_str(&format!("{}", v));
        } else if v == 1 {
            s.push_str(&format!("q^{}", n));
        } else {
            s.push_str(&format!("{}*q^{}", v, n));
        }
        first = false;
    }
    if first {
        s.push('0');
    }
    s.push_str(&format!(" + O(q^{})", terms.min(a.q_prec())));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::padic::PadicContext;
    use crate::zmod::Zn;

    fn ctx5() -> PadicContext {
        PadicContext::plain(5, 10).unwrap()
    }

    #[test]
    fn multiply_basics() {
        let ctx = ctx5();
        // (1 + q)(1 - q) = 1 - q^2 at M = 3
        let a = QExpansion::from_i64(&ctx, &[1, 1, 0]);
        let b = QExpansion::from_i64(&ctx, &[1, -1, 0]);
        let prod = multiply(&ctx, &a, &b).unwrap();
        assert_eq!(prod.scalar_vec(&ctx), QExpansion::from_i64(&ctx, &[1, 0, -1]).scalar_vec(&ctx));
        // identity
        let one = QExpansion::from_i64(&ctx, &[1, 0, 0]);
        let again = multiply(&ctx, &a, &one).unwrap();
        assert_eq!(again.scalar_vec(&ctx), a.scalar_vec(&ctx));
    }

    #[test]
    fn u_v_deplete_laws() {
        let ctx = ctx5();
        let a = QExpansion::from_u64(&ctx, &[3, 1, 4, 1, 5, 9, 2, 6, 5, 3]);
        // U_5 on 10 coefficients keeps indices 0 and 5
        let u = u_operator(&ctx, &a, 5).unwrap();
        assert_eq!(u.scalar_vec(&ctx), vec![3, 9]);
        // U_p(V_p(a)) = a
        let v = v_operator(&ctx, &a, 5, None);
        let uv = u_operator(&ctx, &v, 5).unwrap();
        assert_eq!(uv.scalar_vec(&ctx), a.scalar_vec(&ctx));
        // V on q + q^2 with p = 2
        let ctx3 = PadicContext::plain(3, 6).unwrap();
        let b = QExpansion::from_u64(&ctx3, &[0, 1, 1]);
        let vb = v_operator(&ctx3, &b, 2, Some(5));
        assert_eq!(vb.scalar_vec(&ctx3), vec![0, 0, 1, 0, 1]);
        // depletion: index sieve with p = 2 over 7 coefficients
        let c = QExpansion::from_u64(&ctx, &[7, 1, 2, 3, 4, 5, 6]);
        let d = p_deplete(&ctx, &c, 2);
        assert_eq!(d.scalar_vec(&ctx), vec![0, 1, 0, 3, 0, 5, 0]);
        // idempotence and U_p(deplete) = 0
        let dd = p_deplete(&ctx, &d, 2);
        assert_eq!(dd.scalar_vec(&ctx), d.scalar_vec(&ctx));
        let e = p_deplete(&ctx, &a, 5);
        let ue = u_operator(&ctx, &e, 5).unwrap();
        assert!(ue.is_zero_to_precision(&ctx));
        // deplete = id - V U where defined
        let vu = v_operator(&ctx, &u, 5, Some(a.q_prec()));
        let diff = sub(&ctx, &a, &vu).unwrap();
        assert_eq!(diff.scalar_vec(&ctx), e.scalar_vec(&ctx));
    }

    #[test]
    fn d_inverse_laws() {
        let ctx = ctx5();
        // q -> q
        let a = QExpansion::from_u64(&ctx, &[0, 1, 0]);
        let di = d_inverse(&ctx, &a, 5).unwrap();
        assert_eq!(di.scalar_vec(&ctx), vec![0, 1, 0]);
        // q + q^2 over Z/5^10: coefficient of q^2 becomes 1/2 (leading digit 3)
        let b = QExpansion::from_u64(&ctx, &[0, 1, 1]);
        let db = d_inverse(&ctx, &b, 5).unwrap();
        assert_eq!(ctx.scalar(&db.coeffs[2]) % 5, 3);
        assert_eq!(ctx.scalar(&ctx.mul_u64(&db.coeffs[2], 2)), 1);
        // d(d^{-1}(a)) = a on depleted series with a_0 = 0
        let c = p_deplete(&ctx, &QExpansion::from_u64(&ctx, &[0, 3, 1, 4, 1, 5, 9, 2, 6]), 5);
        let roundtrip = d_operator(&ctx, &d_inverse(&ctx, &c, 5).unwrap());
        assert_eq!(roundtrip.scalar_vec(&ctx), c.scalar_vec(&ctx));
        // errors
        assert!(matches!(
            d_inverse(&ctx, &QExpansion::from_u64(&ctx, &[1, 1]), 5),
            Err(QSeriesError::ConstantTermNonzero)
        ));
        let bad = QExpansion::from_u64(&ctx, &[0, 1, 0, 0, 0, 7, 0]);
        assert!(matches!(d_inverse(&ctx, &bad, 5), Err(QSeriesError::NotDepleted(5))));
    }

    #[test]
    fn context_mismatch_rejected() {
        let a_ctx = ctx5();
        let b_ctx = ctx5();
        let a = QExpansion::from_u64(&a_ctx, &[1, 2, 3]);
        let b = QExpansion::from_u64(&b_ctx, &[1, 2, 3]);
        assert!(matches!(multiply(&a_ctx, &a, &b), Err(QSeriesError::ContextMismatch)));
    }

    #[test]
    fn dense_inverse_and_div() {
        let zn = Zn::new(5u64.pow(10));
        let a: Vec<u64> = vec![4, 1, 3, 0, 2, 9, 8, 1, 1, 6, 0, 2];
        let ainv = dense::inverse(&zn, &a, 12);
        let prod = dense::mul_trunc(&zn, &a, &ainv, 12);
        let mut expected = vec![0u64; 12];
        expected[0] = 1;
        assert_eq!(prod, expected);
        let b: Vec<u64> = vec![1, 7, 0, 0, 4, 4, 4, 1, 0, 3, 3, 1];
        let q = dense::div(&zn, &b, &a, 12);
        assert_eq!(dense::mul_trunc(&zn, &q, &a, 12), b);
    }

    #[test]
    fn weights_add_in_multiply() {
        let ctx = ctx5();
        let a = QExpansion::from_u64(&ctx, &[1, 1, 1]).with_meta(SeriesMeta {
            weight: Some(4),
            level: Some(1),
            character: None,
        });
        let b = QExpansion::from_u64(&ctx, &[1, 2, 3]).with_meta(SeriesMeta {
            weight: Some(4),
            level: Some(1),
            character: None,
        });
        let prod = multiply(&ctx, &a, &b).unwrap();
        assert_eq!(prod.meta.unwrap().weight, Some(8));
    }
}
