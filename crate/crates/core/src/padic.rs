//! Finite-precision p-adic coefficient rings (Z/p^m)[x]/(h(x)) and their elements.
//!
//! A context fixes the prime p, the absolute precision p^m, and a monic integer
//! polynomial whose chosen irreducible factor mod p is Hensel-lifted to p^m; the
//! quotient by that lifted factor is the coefficient ring. Degree 1 means plain
//! Z/p^m. Elements track the number of digits still guaranteed correct.

use crate::zmod::{is_prime_u64, Zn};
use std::sync::atomic::{AtomicU32, Ordering};
use thiserror::Error;

static NEXT_CTX_ID: AtomicU32 = AtomicU32::new(1);

#[derive(Debug, Error)]
pub enum PadicError {
    #[error("p = {0} is not an odd prime")]
    CompositePrime(u64),
    #[error("precision must be >= 1")]
    BadPrecision,
    #[error("minimal polynomial must be monic of degree >= 1")]
    NotMonic,
    #[error("minimal polynomial is not squarefree mod p; choose another prime or polynomial")]
    NotSquarefree,
    #[error("p^m does not fit the 62-bit scalar ring")]
    ModulusTooLarge,
    #[error("element is not a unit (valuation {0} > 0)")]
    NonUnit(u32),
    #[error("elements belong to different contexts")]
    ContextMismatch,
    #[error("root is not simple mod p: f'(r0) = 0 (alpha = beta degeneracy)")]
    NonSimpleRoot,
    #[error("f(r0) != 0 mod p: not a root")]
    NotARoot,
    #[error("no root of unity of order {0} in this context")]
    NoRootOfUnity(u64),
    #[error("embedding index {0} out of range: {1} factors available")]
    BadEmbedding(usize, usize),
    #[error("denominator is not a p-adic unit")]
    NonUnitDenominator,
}

/// Context for a finite-precision p-adic coefficient ring.
pub struct PadicContext {
    id: u32,
    pub p: u64,
    pub m: u32,
    pub pm: u64,
    pub minpoly: Vec<i64>,
    /// Hensel-lifted monic irreducible factor (coefficients mod p^m, degree = residue_degree)
    pub factor: Vec<u64>,
    pub residue_degree: usize,
    /// index of the chosen factor in the deterministic factor ordering
    pub embedding_index: usize,
    /// number of irreducible factors of minpoly mod p
    pub factor_count: usize,
    zn: Zn,
    /// order n when minpoly is the n-th cyclotomic polynomial (seeds the root-of-unity table)
    cyclo_order: Option<u64>,
}

impl std::fmt::Debug for PadicContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "PadicContext(p={}, m={}, deg={}, embedding={})",
            self.p, self.m, self.residue_degree, self.embedding_index
        )
    }
}

#[derive(Clone, PartialEq, Eq)]
enum Coeffs {
    One(u64),
    Many(Box<[u64]>),
}

/// Element of a p-adic context, with `known_precision` digits guaranteed.
#[derive(Clone, PartialEq, Eq)]
pub struct PadicElement {
    ctx_id: u32,
    pub known_precision: u32,
    c: Coeffs,
}

impl std::fmt::Debug for PadicElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.c {
            Coeffs::One(v) => write!(f, "{}+O(prec {})", v, self.known_precision),
            Coeffs::Many(v) => write!(f, "{:?}+O(prec {})", v, self.known_precision),
        }
    }
}

// ---------- polynomial helpers over F_p (dense u64 vectors, low degree) ----------

fn mulp(p: u64, a: u64, b: u64) -> u64 {
    ((u128::from(a) * u128::from(b)) % u128::from(p)) as u64
}

fn ptrim(v: &mut Vec<u64>) {
    while v.len() > 1 && *v.last().unwrap() == 0 {
        v.pop();
    }
}

fn pdeg(v: &[u64]) -> usize {
    let mut d = v.len() - 1;
    while d > 0 && v[d] == 0 {
        d -= 1;
    }
    d
}

fn is_pzero(v: &[u64]) -> bool {
    v.iter().all(|&c| c == 0)
}

fn pmul(p: u64, a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = (out[i + j] + mulp(p, x, y)) % p;
        }
    }
    ptrim(&mut out);
    out
}

fn inv_mod_p(p: u64, a: u64) -> u64 {
    // extended Euclid; works for any modulus with a a unit
    let (mut r0, mut r1) = (p as i128, (a % p) as i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    assert_eq!(r0, 1, "not a unit mod p");
    t0.rem_euclid(p as i128) as u64
}

/// (quotient, remainder) of a by b over F_p; b nonzero.
fn pdivrem(p: u64, a: &[u64], b: &[u64]) -> (Vec<u64>, Vec<u64>) {
    let db = pdeg(b);
    let mut r: Vec<u64> = a.to_vec();
    ptrim(&mut r);
    if pdeg(&r) < db || is_pzero(&r) {
        return (vec![0], r);
    }
    let li = inv_mod_p(p, b[db]);
    let mut q = vec![0u64; pdeg(&r) - db + 1];
    while !is_pzero(&r) && pdeg(&r) >= db {
        let dr = pdeg(&r);
        let c = mulp(p, r[dr], li);
        let k = dr - db;
        q[k] = c;
        for i in 0..=db {
            let sub = mulp(p, c, b[i]);
            r[k + i] = (r[k + i] + p - sub) % p;
        }
        ptrim(&mut r);
        if dr == 0 {
            break;
        }
    }
    ptrim(&mut q);
    (q, r)
}

fn prem(p: u64, a: &[u64], b: &[u64]) -> Vec<u64> {
    pdivrem(p, a, b).1
}

fn pgcd(p: u64, a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    ptrim(&mut a);
    ptrim(&mut b);
    while !is_pzero(&b) {
        let r = prem(p, &a, &b);
        a = b;
        b = r;
    }
    if is_pzero(&a) {
        return a;
    }
    let li = inv_mod_p(p, a[pdeg(&a)]);
    for c in a.iter_mut() {
        *c = mulp(p, *c, li);
    }
    a
}

fn pderiv(p: u64, a: &[u64]) -> Vec<u64> {
    if a.len() <= 1 {
        return vec![0];
    }
    let mut out = vec![0u64; a.len() - 1];
    for i in 1..a.len() {
        out[i - 1] = mulp(p, a[i], i as u64 % p);
    }
    ptrim(&mut out);
    out
}

fn ppowmod(p: u64, a: &[u64], mut e: u128, f: &[u64]) -> Vec<u64> {
    let mut acc = vec![1u64];
    let mut base = prem(p, a, f);
    while e > 0 {
        if e & 1 == 1 {
            acc = prem(p, &pmul(p, &acc, &base), f);
        }
        base = prem(p, &pmul(p, &base, &base), f);
        e >>= 1;
    }
    acc
}

fn pdiv_exact(p: u64, a: &[u64], b: &[u64]) -> Vec<u64> {
    let (q, r) = pdivrem(p, a, b);
    debug_assert!(is_pzero(&r), "division not exact");
    q
}

/// All monic irreducible factors of a squarefree monic f mod p,
/// by distinct-degree then equal-degree splitting.
fn factor_squarefree_mod_p(p: u64, f: &[u64]) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    let mut rem_f = f.to_vec();
    ptrim(&mut rem_f);
    let x = vec![0u64, 1];
    let mut d = 1usize;
    let mut xq = ppowmod(p, &x, u128::from(p), &rem_f);
    while pdeg(&rem_f) >= 2 * d {
        // gcd(x^(p^d) - x, rem_f)
        let mut diff = xq.clone();
        if diff.len() < 2 {
            diff.resize(2, 0);
        }
        diff[1] = (diff[1] + p - 1) % p;
        let g = pgcd(p, &diff, &rem_f);
        if pdeg(&g) > 0 {
            split_equal_degree(p, &g, d, &mut out);
            rem_f = pdiv_exact(p, &rem_f, &g);
            if pdeg(&rem_f) == 0 {
                break;
            }
            xq = prem(p, &xq, &rem_f);
        }
        d += 1;
        xq = ppowmod(p, &xq, u128::from(p), &rem_f);
    }
    if pdeg(&rem_f) > 0 {
        out.push(rem_f);
    }
    out
}

/// Equal-degree splitting: root scan for d = 1, Cantor–Zassenhaus with a
/// deterministic trial sequence otherwise.
fn split_equal_degree(p: u64, g: &[u64], d: usize, out: &mut Vec<Vec<u64>>) {
    let deg = pdeg(g);
    if deg == d {
        let mut h = g.to_vec();
        ptrim(&mut h);
        out.push(h);
        return;
    }
    if d == 1 && p <= 2_000_000 {
        let eval = |r: u64| -> u64 {
            let mut acc = 0u64;
            for &c in g.iter().rev() {
                acc = (mulp(p, acc, r) + c) % p;
            }
            acc
        };
        for r in 0..p {
            if eval(r) == 0 {
                out.push(vec![(p - r) % p, 1]);
            }
        }
        return;
    }
    let mut seed = 0x9e37_79b9_7f4a_7c15u64 ^ (p << 16) ^ (d as u64);
    loop {
        let deg_t = deg - 1;
        let mut t = vec![0u64; deg_t + 1];
        for c in t.iter_mut() {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *c = (seed >> 11) % p;
        }
        t[deg_t] = 1;
        let e = (pow_u128(p, d as u32) - 1) / 2;
        let mut h = ppowmod(p, &t, e, g);
        h[0] = (h[0] + p - 1) % p;
        let w = pgcd(p, &h, g);
        let dw = pdeg(&w);
        if dw > 0 && dw < deg {
            split_equal_degree(p, &w, d, out);
            let other = pdiv_exact(p, g, &w);
            split_equal_degree(p, &other, d, out);
            return;
        }
    }
}

fn pow_u128(p: u64, d: u32) -> u128 {
    let mut acc = 1u128;
    for _ in 0..d {
        acc *= u128::from(p);
    }
    acc
}

/// n-th cyclotomic polynomial with integer coefficients (n small).
pub fn cyclotomic(n: u64) -> Vec<i64> {
    let mut num = vec![0i64; n as usize + 1];
    num[0] = -1;
    num[n as usize] = 1;
    for d in 1..n {
        if n % d == 0 {
            let phi_d = cyclotomic(d);
            num = ipoly_div_exact(&num, &phi_d);
        }
    }
    num
}

fn ipoly_div_exact(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut r = a.to_vec();
    let db = b.len() - 1;
    let mut q = vec![0i64; a.len() - db];
    for k in (0..q.len()).rev() {
        let c = r[k + db] / b[db];
        q[k] = c;
        for i in 0..=db {
            r[k + i] -= c * b[i];
        }
    }
    q
}

// ---------- Hensel lifting of a proper factor (linear steps; m is small) ----------

fn hensel_lift_factor(p: u64, pm: u64, f_modpm: &[u64], h0: &[u64]) -> Vec<u64> {
    let zn = Zn::new(pm);
    let f_modp: Vec<u64> = f_modpm.iter().map(|&c| c % p).collect();
    let g0 = pdiv_exact(p, &f_modp, h0);
    let (a0, b0) = ppoly_bezout(p, h0, &g0);
    let dh = pdeg(h0);
    let dg = pdeg(&g0);
    let mut h: Vec<u64> = h0[..=dh].to_vec();
    let mut g: Vec<u64> = g0[..=dg].to_vec();
    let mut modulus = p;
    while modulus < pm {
        // e := (f - h*g)/modulus mod p
        let hg = zpoly_mul(&zn, &h, &g);
        let mut e = vec![0u64; f_modpm.len()];
        for i in 0..f_modpm.len() {
            let hv = if i < hg.len() { hg[i] } else { 0 };
            let diff = zn.sub(f_modpm[i], hv);
            debug_assert_eq!(diff % modulus, 0);
            e[i] = (diff / modulus) % p;
        }
        ptrim(&mut e);
        // delta_h = (b*e mod h), delta_g = a*e + quo(b*e, h)*g  (all mod p)
        let be = pmul(p, &b0, &e);
        let (u, delta_h) = pdivrem(p, &be, &h.iter().map(|&c| c % p).collect::<Vec<_>>());
        let ae = pmul(p, &a0, &e);
        let ug = pmul(p, &u, &g.iter().map(|&c| c % p).collect::<Vec<_>>());
        let mut delta_g = vec![0u64; ae.len().max(ug.len())];
        for i in 0..delta_g.len() {
            let x = if i < ae.len() { ae[i] } else { 0 };
            let y = if i < ug.len() { ug[i] } else { 0 };
            delta_g[i] = (x + y) % p;
        }
        debug_assert!(pdeg(&delta_h) < dh || is_pzero(&delta_h));
        for (i, &c) in delta_h.iter().enumerate() {
            h[i] = zn.add(h[i], zn.mul(c, modulus % pm));
        }
        for (i, &c) in delta_g.iter().enumerate() {
            if i <= dg {
                g[i] = zn.add(g[i], zn.mul(c, modulus % pm));
            }
        }
        modulus = modulus.saturating_mul(p).min(pm);
        if modulus == pm {
            // one more pass handles the final digit, then the loop exits
            let hg = zpoly_mul(&zn, &h, &g);
            let ok = f_modpm.iter().enumerate().all(|(i, &fv)| {
                let hv = if i < hg.len() { hg[i] } else { 0 };
                fv == hv
            });
            if ok {
                break;
            }
        }
    }
    debug_assert_eq!(h[dh], 1, "lifted factor must stay monic");
    h
}

fn zpoly_mul(zn: &Zn, a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = zn.add(out[i + j], zn.mul(x, y));
        }
    }
    out
}

fn ppoly_bezout(p: u64, h: &[u64], g: &[u64]) -> (Vec<u64>, Vec<u64>) {
    // (a, b) with a*h + b*g = 1 mod p
    let (mut r0, mut r1) = (h.to_vec(), g.to_vec());
    let (mut s0, mut s1) = (vec![1u64], vec![0u64]);
    let (mut t0, mut t1) = (vec![0u64], vec![1u64]);
    while !is_pzero(&r1) {
        let (q, r2) = pdivrem(p, &r0, &r1);
        let s2 = psub(p, &s0, &pmul(p, &q, &s1));
        let t2 = psub(p, &t0, &pmul(p, &q, &t1));
        r0 = r1;
        r1 = r2;
        s0 = s1;
        s1 = s2;
        t0 = t1;
        t1 = t2;
    }
    assert_eq!(pdeg(&r0), 0, "factors are not coprime mod p");
    let li = inv_mod_p(p, r0[0]);
    let a: Vec<u64> = s0.iter().map(|&c| mulp(p, c, li)).collect();
    let b: Vec<u64> = t0.iter().map(|&c| mulp(p, c, li)).collect();
    (a, b)
}

fn psub(p: u64, a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; a.len().max(b.len())];
    for i in 0..out.len() {
        let x = if i < a.len() { a[i] } else { 0 };
        let y = if i < b.len() { b[i] % p } else { 0 };
        out[i] = (x % p + p - y) % p;
    }
    ptrim(&mut out);
    out
}

fn modn_inv(n: u64, a: u64) -> u64 {
    inv_mod_p(n, a)
}

// ---------- context construction ----------

impl PadicContext {
    /// Build a context; the irreducible factor of `minpoly` mod p is chosen
    /// deterministically (smallest degree, then smallest root / negated
    /// coefficient tuple) unless `embedding_index` selects a conjugate.
    pub fn with_embedding(
        p: u64,
        m: u32,
        minpoly: &[i64],
        embedding_index: usize,
    ) -> Result<PadicContext, PadicError> {
        if !is_prime_u64(p) || p == 2 {
            return Err(PadicError::CompositePrime(p));
        }
        if m < 1 {
            return Err(PadicError::BadPrecision);
        }
        if minpoly.len() < 2 || *minpoly.last().unwrap() != 1 {
            return Err(PadicError::NotMonic);
        }
        let pm = p.checked_pow(m).filter(|&x| x < (1 << 62)).ok_or(PadicError::ModulusTooLarge)?;
        let zn = Zn::new(pm);
        let f_modp: Vec<u64> = minpoly.iter().map(|&c| c.rem_euclid(p as i64) as u64).collect();
        let deriv = pderiv(p, &f_modp);
        let g = pgcd(p, &f_modp, &deriv);
        if pdeg(&g) > 0 {
            return Err(PadicError::NotSquarefree);
        }
        let mut factors = factor_squarefree_mod_p(p, &f_modp);
        // deterministic order: degree, then lexicographically smallest tuple of
        // negated coefficients (for a linear factor x - r this sorts by the root r)
        factors.sort_by_key(|h| {
            let mut key: Vec<u64> = Vec::with_capacity(h.len());
            key.push(pdeg(h) as u64);
            for i in (0..pdeg(h)).rev() {
                key.push((p - h[i] % p) % p);
            }
            key
        });
        if embedding_index >= factors.len() {
            return Err(PadicError::BadEmbedding(embedding_index, factors.len()));
        }
        let h0 = factors[embedding_index].clone();
        let f_modpm: Vec<u64> = minpoly.iter().map(|&c| zn.from_i64(c)).collect();
        let factor = if pdeg(&h0) + 1 == f_modpm.len() {
            f_modpm.clone()
        } else if pdeg(&h0) == 1 {
            // Newton on the root directly
            let r0 = (p - h0[0] % p) % p;
            let mut ctx_tmp = Self::raw(p, m, pm, zn.clone(), minpoly, vec![0, 1], 1, embedding_index, factors.len());
            let r = ctx_tmp.hensel_root(minpoly, r0)?;
            let rv = ctx_tmp.scalar(&r);
            ctx_tmp.factor = vec![zn.neg(rv), 1];
            ctx_tmp.cyclo_order = detect_cyclotomic(minpoly);
            return Ok(ctx_tmp);
        } else {
            hensel_lift_factor(p, pm, &f_modpm, &h0)
        };
        let residue_degree = factor.len() - 1;
        let mut ctx = Self::raw(p, m, pm, zn, minpoly, factor, residue_degree, embedding_index, factors.len());
        ctx.cyclo_order = detect_cyclotomic(minpoly);
        Ok(ctx)
    }

    #[allow(clippy::too_many_arguments)]
    fn raw(
        p: u64,
        m: u32,
        pm: u64,
        zn: Zn,
        minpoly: &[i64],
        factor: Vec<u64>,
        residue_degree: usize,
        embedding_index: usize,
        factor_count: usize,
    ) -> PadicContext {
        PadicContext {
            id: NEXT_CTX_ID.fetch_add(1, Ordering::Relaxed),
            p,
            m,
            pm,
            minpoly: minpoly.to_vec(),
            factor,
            residue_degree,
            embedding_index,
            factor_count,
            zn,
            cyclo_order: None,
        }
    }

    pub fn new(p: u64, m: u32, minpoly: &[i64]) -> Result<PadicContext, PadicError> {
        Self::with_embedding(p, m, minpoly, 0)
    }

    /// Plain Z/p^m context.
    pub fn plain(p: u64, m: u32) -> Result<PadicContext, PadicError> {
        Self::new(p, m, &[-1, 1])
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn zn(&self) -> &Zn {
        &self.zn
    }

    pub fn deg(&self) -> usize {
        self.residue_degree
    }

    // ----- element constructors -----

    pub fn zero(&self) -> PadicElement {
        self.from_u64(0)
    }

    pub fn one(&self) -> PadicElement {
        self.from_u64(1)
    }

    pub fn from_u64(&self, v: u64) -> PadicElement {
        let v = v % self.pm;
        if self.residue_degree == 1 {
            PadicElement { ctx_id: self.id, known_precision: self.m, c: Coeffs::One(v) }
        } else {
            let mut cs = vec![0u64; self.residue_degree];
            cs[0] = v;
            PadicElement { ctx_id: self.id, known_precision: self.m, c: Coeffs::Many(cs.into()) }
        }
    }

    pub fn from_i64(&self, v: i64) -> PadicElement {
        self.from_u64(self.zn.from_i64(v))
    }

    pub fn from_i128(&self, v: i128) -> PadicElement {
        self.from_u64(self.zn.from_i128(v))
    }

    /// Image of the generator (the class of x) in this ring.
    pub fn generator(&self) -> PadicElement {
        if self.residue_degree == 1 {
            // factor = x + c0, so x = -c0
            self.from_u64(self.zn.neg(self.factor[0]))
        } else {
            let mut cs = vec![0u64; self.residue_degree];
            cs[1] = 1;
            PadicElement { ctx_id: self.id, known_precision: self.m, c: Coeffs::Many(cs.into()) }
        }
    }

    /// Evaluate an integer-coefficient polynomial at the generator image.
    pub fn from_poly(&self, coeffs: &[i64]) -> PadicElement {
        let g = self.generator();
        let mut acc = self.zero();
        for &c in coeffs.iter().rev() {
            acc = self.mul(&acc, &g);
            acc = self.add(&acc, &self.from_i64(c));
        }
        acc
    }

    /// Map an exact rational num/den with p-unit denominator.
    pub fn from_ratio_i128(&self, num: i128, den: i128) -> Result<PadicElement, PadicError> {
        let d = self.zn.from_i128(den);
        if d % self.p == 0 {
            return Err(PadicError::NonUnitDenominator);
        }
        let dinv = modn_inv(self.pm, d);
        Ok(self.from_u64(self.zn.mul(self.zn.from_i128(num), dinv)))
    }

    fn make(&self, mut cs: Vec<u64>, prec: u32) -> PadicElement {
        if self.residue_degree == 1 {
            PadicElement { ctx_id: self.id, known_precision: prec, c: Coeffs::One(cs[0]) }
        } else {
            cs.resize(self.residue_degree, 0);
            PadicElement { ctx_id: self.id, known_precision: prec, c: Coeffs::Many(cs.into()) }
        }
    }

    /// The single residue of a degree-1 element.
    pub fn scalar(&self, a: &PadicElement) -> u64 {
        debug_assert_eq!(a.ctx_id, self.id);
        match &a.c {
            Coeffs::One(v) => *v,
            Coeffs::Many(v) => {
                debug_assert!(v[1..].iter().all(|&c| c == 0));
                v[0]
            }
        }
    }

    pub fn coeff_vec(&self, a: &PadicElement) -> Vec<u64> {
        match &a.c {
            Coeffs::One(v) => vec![*v],
            Coeffs::Many(v) => v.to_vec(),
        }
    }

    fn check(&self, a: &PadicElement) {
        assert_eq!(a.ctx_id, self.id, "context mismatch");
    }

    pub fn same_context(&self, a: &PadicElement) -> bool {
        a.ctx_id == self.id
    }

    // ----- arithmetic -----

    pub fn add(&self, a: &PadicElement, b: &PadicElement) -> PadicElement {
        self.check(a);
        self.check(b);
        let prec = a.known_precision.min(b.known_precision);
        match (&a.c, &b.c) {
            (Coeffs::One(x), Coeffs::One(y)) => {
                PadicElement { ctx_id: self.id, known_precision: prec, c: Coeffs::One(self.zn.add(*x, *y)) }
            }
            _ => {
                let av = self.coeff_vec(a);
                let bv = self.coeff_vec(b);
                let cs: Vec<u64> = av.iter().zip(bv.iter()).map(|(&x, &y)| self.zn.add(x, y)).collect();
                self.make(cs, prec)
            }
        }
    }

    pub fn sub(&self, a: &PadicElement, b: &PadicElement) -> PadicElement {
        self.add(a, &self.neg(b))
    }

    pub fn neg(&self, a: &PadicElement) -> PadicElement {
        self.check(a);
        match &a.c {
            Coeffs::One(x) => {
                PadicElement { ctx_id: self.id, known_precision: a.known_precision, c: Coeffs::One(self.zn.neg(*x)) }
            }
            Coeffs::Many(v) => {
                let cs: Vec<u64> = v.iter().map(|&x| self.zn.neg(x)).collect();
                self.make(cs, a.known_precision)
            }
        }
    }

    pub fn mul(&self, a: &PadicElement, b: &PadicElement) -> PadicElement {
        self.check(a);
        self.check(b);
        let prec = a.known_precision.min(b.known_precision);
        match (&a.c, &b.c) {
            (Coeffs::One(x), Coeffs::One(y)) => {
                PadicElement { ctx_id: self.id, known_precision: prec, c: Coeffs::One(self.zn.mul(*x, *y)) }
            }
            _ => {
                let av = self.coeff_vec(a);
                let bv = self.coeff_vec(b);
                let prod = zpoly_mul(&self.zn, &av, &bv);
                let red = self.reduce_mod_factor(prod);
                self.make(red, prec)
            }
        }
    }

    fn reduce_mod_factor(&self, mut v: Vec<u64>) -> Vec<u64> {
        let d = self.residue_degree;
        while v.len() > d {
            let k = v.len() - 1;
            let c = v[k];
            v.pop();
            if c != 0 {
                for i in 0..d {
                    let sub = self.zn.mul(c, self.factor[i]);
                    v[k - d + i] = self.zn.sub(v[k - d + i], sub);
                }
            }
        }
        v.resize(d, 0);
        v
    }

    pub fn mul_u64(&self, a: &PadicElement, s: u64) -> PadicElement {
        let sv = self.from_u64(s % self.pm);
        self.mul(a, &sv)
    }

    pub fn pow_u64(&self, a: &PadicElement, e: u64) -> PadicElement {
        self.pow_u128(a, u128::from(e))
    }

    fn pow_u128(&self, a: &PadicElement, mut e: u128) -> PadicElement {
        let mut acc = self.one();
        let mut base = a.clone();
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(&acc, &base);
            }
            base = self.mul(&base, &base);
            e >>= 1;
        }
        acc
    }

    /// p-adic valuation, capped at known precision.
    pub fn valuation(&self, a: &PadicElement) -> u32 {
        self.check(a);
        let pv = |mut c: u64| -> u32 {
            if c == 0 {
                return self.m;
            }
            let mut v = 0;
            while c % self.p == 0 {
                c /= self.p;
                v += 1;
            }
            v
        };
        let v = match &a.c {
            Coeffs::One(x) => pv(*x),
            Coeffs::Many(cs) => cs.iter().map(|&c| pv(c)).min().unwrap(),
        };
        v.min(a.known_precision)
    }

    pub fn is_zero_to_precision(&self, a: &PadicElement) -> bool {
        self.valuation(a) >= a.known_precision
    }

    /// Multiplicative inverse of a unit; full known precision is preserved.
    pub fn invert(&self, a: &PadicElement) -> Result<PadicElement, PadicError> {
        self.check(a);
        let v = self.valuation(a);
        if v > 0 || self.is_zero_to_precision(a) {
            return Err(PadicError::NonUnit(v));
        }
        let q = pow_u128(self.p, self.residue_degree as u32);
        let mut x = self.pow_u128(a, q - 2);
        for _ in 0..self.m.ilog2() + 2 {
            let ax = self.mul(a, &x);
            let corr = self.sub(&self.from_u64(2), &ax);
            x = self.mul(&x, &corr);
        }
        x.known_precision = a.known_precision;
        debug_assert!({
            let prod = self.mul(a, &x);
            self.is_zero_to_precision(&self.sub(&prod, &self.one()))
        });
        Ok(x)
    }

    /// Exact division by p^v; lowers known precision by v.
    pub fn divide_p_power(&self, a: &PadicElement, v: u32) -> Result<PadicElement, PadicError> {
        self.check(a);
        if v == 0 {
            return Ok(a.clone());
        }
        if self.valuation(a) < v {
            return Err(PadicError::NonUnit(self.valuation(a)));
        }
        let pv = self.p.pow(v);
        let cs: Vec<u64> = self.coeff_vec(a).iter().map(|&c| c / pv).collect();
        let prec = a.known_precision.saturating_sub(v).max(1);
        Ok(self.make(cs, prec))
    }

    pub fn div(&self, a: &PadicElement, b: &PadicElement) -> Result<PadicElement, PadicError> {
        Ok(self.mul(a, &self.invert(b)?))
    }

    /// Teichmüller representative of a unit.
    pub fn teichmuller(&self, a: &PadicElement) -> PadicElement {
        let q = pow_u128(self.p, self.residue_degree as u32);
        let mut x = a.clone();
        for _ in 0..self.m + 2 {
            x = self.pow_u128(&x, q);
        }
        x
    }

    /// Canonical primitive n-th root of unity. Seeded by the generator when the
    /// minimal polynomial is cyclotomic; otherwise the Teichmüller lift of the
    /// smallest generator of the residue field.
    pub fn zeta(&self, n: u64) -> Result<PadicElement, PadicError> {
        if n == 1 {
            return Ok(self.one());
        }
        if n == 2 {
            return Ok(self.neg(&self.one()));
        }
        if let Some(c) = self.cyclo_order {
            if c % n == 0 {
                let g = self.generator();
                return Ok(self.pow_u64(&g, c / n));
            }
        }
        let q_minus_1 = (pow_u128(self.p, self.residue_degree as u32) - 1) as u64;
        if q_minus_1 % n != 0 {
            return Err(PadicError::NoRootOfUnity(n));
        }
        if self.residue_degree == 1 {
            let g0 = smallest_primitive_root(self.p);
            let t = self.teichmuller(&self.from_u64(g0));
            Ok(self.pow_u64(&t, q_minus_1 / n))
        } else {
            let mut cand_idx = 1u64;
            loop {
                cand_idx += 1;
                let mut cs = vec![0u64; self.residue_degree];
                let mut k = cand_idx;
                for c in cs.iter_mut() {
                    *c = k % self.p;
                    k /= self.p;
                }
                let e = self.make(cs, self.m);
                if self.valuation(&e) > 0 {
                    continue;
                }
                let t = self.teichmuller(&e);
                let mut ok = true;
                for (f, _) in crate::zmod::factor_u64(q_minus_1) {
                    if self.pow_u64(&t, q_minus_1 / f) == self.one() {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    return Ok(self.pow_u64(&t, q_minus_1 / n));
                }
            }
        }
    }

    // ----- Hensel root of an integer polynomial -----

    /// Newton-lift a simple root r0 of f mod p to full precision.
    pub fn hensel_root(&self, f: &[i64], r0: u64) -> Result<PadicElement, PadicError> {
        let p = self.p;
        let n = self.pm;
        let eval = |poly_iter: &mut dyn Iterator<Item = i64>, x: u64, nn: u64| -> u64 {
            let mut acc = 0u64;
            for c in poly_iter {
                let cv = c.rem_euclid(nn as i64) as u64;
                acc = ((u128::from(acc) * u128::from(x) + u128::from(cv)) % u128::from(nn)) as u64;
            }
            acc
        };
        let deriv: Vec<i64> = f.iter().enumerate().skip(1).map(|(i, &c)| c * i as i64).collect();
        let f_at = |x: u64, nn: u64| eval(&mut f.iter().rev().copied(), x, nn);
        let d_at = |x: u64, nn: u64| eval(&mut deriv.iter().rev().copied(), x, nn);
        if f_at(r0 % p, p) != 0 {
            return Err(PadicError::NotARoot);
        }
        if d_at(r0 % p, p) == 0 {
            return Err(PadicError::NonSimpleRoot);
        }
        let mut r = r0 % p;
        for _ in 0..self.m.ilog2() + 2 {
            let fr = f_at(r, n);
            let dr = d_at(r, n);
            let dinv = modn_inv(n, dr % n);
            let delta = (u128::from(fr) * u128::from(dinv) % u128::from(n)) as u64;
            r = (r + n - delta) % n;
        }
        debug_assert_eq!(f_at(r, n), 0);
        Ok(self.from_u64(r))
    }

    /// Square root of a unit whose reduction has a simple square root mod p.
    pub fn sqrt_unit(&self, a: &PadicElement) -> Result<PadicElement, PadicError> {
        self.check(a);
        if self.valuation(a) > 0 {
            return Err(PadicError::NonUnit(self.valuation(a)));
        }
        if self.residue_degree != 1 {
            return Err(PadicError::NoRootOfUnity(2));
        }
        let av = self.scalar(a);
        let a0 = av % self.p;
        let mut r0 = None;
        for r in 1..self.p {
            if r * r % self.p == a0 {
                r0 = Some(r);
                break;
            }
        }
        let r0 = r0.ok_or(PadicError::NonSimpleRoot)?;
        let n = self.pm;
        let mut r = r0;
        for _ in 0..self.m.ilog2() + 2 {
            let fr = self.zn.sub(self.zn.mul(r, r), av);
            let dr = self.zn.add(r, r);
            let delta = self.zn.mul(fr, modn_inv(n, dr));
            r = self.zn.sub(r, delta);
        }
        Ok(self.from_u64(r))
    }

    /// p-adic digits a0 + a1 p + ... of a degree-1 element (for reports).
    pub fn digits(&self, a: &PadicElement) -> Vec<u64> {
        let mut v = self.scalar(a);
        let mut out = Vec::with_capacity(a.known_precision as usize);
        for _ in 0..a.known_precision {
            out.push(v % self.p);
            v /= self.p;
        }
        out
    }
}

fn detect_cyclotomic(minpoly: &[i64]) -> Option<u64> {
    (1..=48u64).find(|&n| cyclotomic(n) == minpoly)
}

fn smallest_primitive_root(p: u64) -> u64 {
    let facs = crate::zmod::factor_u64(p - 1);
    let zn = Zn::new(p);
    'g: for g in 2..p {
        for (f, _) in &facs {
            if zn.pow(g, (p - 1) / f) == 1 {
                continue 'g;
            }
        }
        return g;
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_context_and_ring_axioms() {
        let ctx = PadicContext::plain(5, 10).unwrap();
        assert_eq!(ctx.residue_degree, 1);
        let mut state = 7u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ctx.from_u64(state >> 8)
        };
        for _ in 0..50 {
            let (a, b, c) = (rnd(), rnd(), rnd());
            assert_eq!(ctx.mul(&ctx.mul(&a, &b), &c), ctx.mul(&a, &ctx.mul(&b, &c)));
            assert_eq!(
                ctx.mul(&a, &ctx.add(&b, &c)),
                ctx.add(&ctx.mul(&a, &b), &ctx.mul(&a, &c))
            );
        }
    }

    #[test]
    fn context_split_quadratic() {
        // x^2 + 6 over Z/5^10: -6 = 4 = 2^2 mod 5, smallest root 2 is chosen
        let ctx = PadicContext::new(5, 10, &[6, 0, 1]).unwrap();
        assert_eq!(ctx.residue_degree, 1);
        assert_eq!(ctx.factor_count, 2);
        let g = ctx.generator();
        assert_eq!(ctx.scalar(&g) % 5, 2);
        let g2 = ctx.mul(&g, &g);
        assert_eq!(g2, ctx.from_i64(-6));
        // Newton oracle: independently lift 2 against x^2+6
        let r = ctx.hensel_root(&[6, 0, 1], 2).unwrap();
        assert_eq!(ctx.scalar(&r), ctx.scalar(&g));
        // conjugate embedding picks the other root
        let ctx2 = PadicContext::with_embedding(5, 10, &[6, 0, 1], 1).unwrap();
        assert_eq!(ctx2.scalar(&ctx2.generator()) % 5, 3);
    }

    #[test]
    fn context_cyclotomic_12_at_13() {
        let phi12 = vec![1i64, 0, -1, 0, 1];
        assert_eq!(cyclotomic(12), phi12);
        let ctx = PadicContext::new(13, 10, &phi12).unwrap();
        assert_eq!(ctx.residue_degree, 1);
        assert_eq!(ctx.factor_count, 4);
        // exhaustive root search oracle
        let mut roots: Vec<u64> = Vec::new();
        for r in 0..13u64 {
            if (r.pow(4) + 169 - r * r + 1) % 13 == 0 {
                roots.push(r);
            }
        }
        assert_eq!(roots, vec![2, 6, 7, 11]);
        assert_eq!(ctx.scalar(&ctx.generator()) % 13, 2);
        let z12 = ctx.zeta(12).unwrap();
        assert_eq!(ctx.scalar(&z12), ctx.scalar(&ctx.generator()));
        let z6 = ctx.zeta(6).unwrap();
        assert_eq!(ctx.scalar(&z6), ctx.scalar(&ctx.mul(&z12, &z12)));
        assert_eq!(ctx.zeta(2).unwrap(), ctx.from_i64(-1));
    }

    #[test]
    fn hensel_root_weight2_unit_root() {
        // X^2 - X + 5 at p=5 with a_5 = 1: unit root alpha == 1 mod 5
        let ctx = PadicContext::plain(5, 10).unwrap();
        let alpha = ctx.hensel_root(&[5, -1, 1], 1).unwrap();
        assert_eq!(ctx.scalar(&alpha) % 5, 1);
        let v = ctx.add(&ctx.sub(&ctx.mul(&alpha, &alpha), &alpha), &ctx.from_u64(5));
        assert!(ctx.is_zero_to_precision(&v));
        let ctx13 = PadicContext::plain(13, 10).unwrap();
        let r = ctx13.hensel_root(&[-7, 1], 7).unwrap();
        assert_eq!(ctx13.scalar(&r), 7);
        let ctx7 = PadicContext::plain(7, 10).unwrap();
        let r = ctx7.hensel_root(&[-1, 0, 1], 1).unwrap();
        assert_eq!(ctx7.scalar(&r), 1);
        assert!(matches!(ctx.hensel_root(&[1, 2, 1], 4), Err(PadicError::NonSimpleRoot)));
    }

    #[test]
    fn invert_and_precision() {
        let ctx = PadicContext::plain(5, 10).unwrap();
        let two = ctx.from_u64(2);
        let inv2 = ctx.invert(&two).unwrap();
        assert_eq!(ctx.scalar(&inv2) % 5, 3);
        assert_eq!(ctx.scalar(&ctx.mul(&two, &inv2)), 1);
        assert!(matches!(ctx.invert(&ctx.from_u64(5)), Err(PadicError::NonUnit(1))));
        // extended-Euclid style oracle for the inverse of 2 in Z/5^10
        let pm = 5u64.pow(10);
        let mut x = 1i128;
        while (2 * x) % pm as i128 != 1 {
            x += pm as i128 >> 1;
        }
        assert_eq!(ctx.scalar(&inv2), x as u64);
        let alpha = ctx.hensel_root(&[5, -1, 1], 1).unwrap();
        let ainv = ctx.invert(&alpha).unwrap();
        assert_eq!(ctx.scalar(&ctx.mul(&alpha, &ainv)), 1);
        assert_eq!(ctx.scalar(&ainv) % 5, 1);
        let x = ctx.from_u64(50);
        let y = ctx.divide_p_power(&x, 2).unwrap();
        assert_eq!(ctx.scalar(&y), 2);
        assert_eq!(y.known_precision, 8);
    }

    #[test]
    fn extension_field_arithmetic() {
        // x^2 + x + 1 irreducible mod 5: degree-2 unramified extension
        let ctx = PadicContext::new(5, 8, &[1, 1, 1]).unwrap();
        assert_eq!(ctx.residue_degree, 2);
        let g = ctx.generator();
        assert_eq!(ctx.pow_u64(&g, 3), ctx.one());
        let a = ctx.add(&g, &ctx.from_u64(3));
        let ainv = ctx.invert(&a).unwrap();
        assert_eq!(ctx.mul(&a, &ainv), ctx.one());
        let z3 = ctx.zeta(3).unwrap();
        assert_eq!(ctx.pow_u64(&z3, 3), ctx.one());
        assert_ne!(z3, ctx.one());
        let z8 = ctx.zeta(8).unwrap();
        assert_eq!(ctx.pow_u64(&z8, 8), ctx.one());
        assert_ne!(ctx.pow_u64(&z8, 4), ctx.one());
    }

    #[test]
    fn teichmuller_and_zeta_plain() {
        let ctx = PadicContext::plain(13, 10).unwrap();
        let t = ctx.teichmuller(&ctx.from_u64(2));
        assert_eq!(ctx.pow_u64(&t, 12), ctx.one());
        assert_eq!(ctx.scalar(&t) % 13, 2);
        let z4 = ctx.zeta(4).unwrap();
        assert_eq!(ctx.mul(&z4, &z4), ctx.from_i64(-1));
        assert!(ctx.zeta(5).is_err());
    }

    #[test]
    fn composite_p_and_non_squarefree_rejected() {
        assert!(matches!(PadicContext::plain(6, 3), Err(PadicError::CompositePrime(6))));
        assert!(matches!(PadicContext::new(5, 4, &[1, -2, 1]), Err(PadicError::NotSquarefree)));
    }

    #[test]
    fn hensel_lift_quadratic_factor() {
        // Phi_12 mod 5 factors into two quadratics (12 | 24 = 5^2 - 1)
        let ctx = PadicContext::new(5, 9, &[1, 0, -1, 0, 1]).unwrap();
        assert_eq!(ctx.residue_degree, 2);
        assert_eq!(ctx.factor_count, 2);
        let g = ctx.generator();
        assert_eq!(ctx.pow_u64(&g, 12), ctx.one());
        assert_ne!(ctx.pow_u64(&g, 6), ctx.one());
        let v = ctx.add(&ctx.sub(&ctx.pow_u64(&g, 4), &ctx.pow_u64(&g, 2)), &ctx.one());
        assert!(ctx.is_zero_to_precision(&v));
    }
}
