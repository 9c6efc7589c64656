//! Bases of classical modular-form spaces M_k(N, chi) as q-expansions, and the
//! weight-one space completed by Eisenstein-quotient intersection with Hecke
//! stability. Everything is precision-aware linear algebra over Z/p^m.

use crate::arith::chars::{enumerate_characters, DirichletCharacter, UnitGroup};
use crate::arith::eisenstein::{eis_level1_normalized, eis_series, make_spec, orbit_size, EisError, EisSpec};
use crate::matrix::{echelonize, Echelon, InsertOutcome, Mat, Staircase};
use crate::padic::PadicContext;
use crate::qseries::dense;
use crate::zmod::{factor_u64, Zn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("rank failed to stabilize for weight {0}, level {1} within the candidate budget")]
    RankUnstable(u32, u64),
    #[error("rank {0} below the configured floor {1}")]
    BelowFloor(usize, usize),
    #[error("file basis is rank-deficient: {0} rows span rank {1}")]
    RankDeficientFile(usize, usize),
    #[error("explicit row stores {0} coefficients, {1} requested")]
    ExplicitTooShort(usize, usize),
    #[error("weight-one completion: Eisenstein series not contained in the computed space")]
    UnderSpanned,
    #[error("weight-one completion: Hecke operator does not stabilize the space")]
    StabilityDiverged,
    #[error(transparent)]
    Eis(#[from] EisError),
    #[error(transparent)]
    Padic(#[from] crate::padic::PadicError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One multiplicative building block of a candidate row.
#[derive(Clone, Debug)]
pub enum Factor {
    /// (possibly trace-averaged) Eisenstein series
    Eis(EisSpec),
    /// E_2(q) - d E_2(q^d), trivial character, level d
    E2d(u64),
    /// level-1 normalized E_k (constant term 1), k even >= 4
    L1(u32),
    /// the level-1 weight-12 cusp form (eta^24, a_1 = 1)
    Delta,
    /// an explicit stored series (weight-one rows used as generators)
    Explicit { label: String, coeffs: Arc<Vec<u64>> },
}

impl Factor {
    fn level(&self) -> u64 {
        match self {
            Factor::Eis(s) => s.level(),
            Factor::E2d(d) => *d,
            Factor::L1(_) => 1,
            Factor::Delta => 1,
            Factor::Explicit { .. } => 1,
        }
    }

    fn key(&self) -> String {
        match self {
            Factor::Eis(s) => s.key(),
            Factor::E2d(d) => format!("E2d{}", d),
            Factor::L1(k) => format!("L1_{}", k),
            Factor::Delta => "Delta".to_string(),
            Factor::Explicit { label, .. } => format!("X[{}]", label),
        }
    }

    pub fn series(&self, ctx: &PadicContext, len: usize) -> Result<Vec<u64>, SpaceError> {
        match self {
            Factor::Eis(s) => Ok(eis_series(ctx, s, len)?),
            Factor::E2d(d) => {
                let triv = DirichletCharacter::trivial(1);
                let spec = make_spec(ctx, 2, &triv, &triv, 0)?;
                let e2 = eis_series(ctx, &spec, len)?;
                let zn = ctx.zn();
                let mut out = e2.clone();
                let dm = zn.to_mont(*d % zn.n);
                for n in 0..out.len() {
                    if n % (*d as usize) == 0 {
                        let s = zn.mul_mont_plain(dm, e2[n / *d as usize]);
                        out[n] = zn.sub(out[n], s);
                    }
                }
                Ok(out)
            }
            Factor::L1(k) => Ok(eis_level1_normalized(ctx, *k, len)?),
            Factor::Delta => Ok(delta_series(ctx, len)),
            Factor::Explicit { label, coeffs } => {
                if coeffs.len() < len {
                    return Err(SpaceError::ExplicitTooShort(coeffs.len(), len));
                }
                let _ = label;
                Ok(coeffs[..len].to_vec())
            }
        }
    }
}

/// Delta = q prod (1-q^n)^24 by pentagonal-number expansion and powering.
pub fn delta_series(ctx: &PadicContext, len: usize) -> Vec<u64> {
    let zn = ctx.zn();
    let mut eta = vec![0u64; len];
    eta[0] = 1;
    let mut k = 1i64;
    loop {
        let g1 = k * (3 * k - 1) / 2;
        let g2 = k * (3 * k + 1) / 2;
        if g1 as usize >= len {
            break;
        }
        let sign_neg = k % 2 == 1;
        for g in [g1, g2] {
            if (g as usize) < len {
                let idx = g as usize;
                eta[idx] = if sign_neg { zn.sub(eta[idx], 1) } else { zn.add(eta[idx], 1) };
            }
        }
        k += 1;
    }
    // eta^24 = ((eta^2)^2)^2 * (eta^2)^2 * eta^2 ... use square-and-multiply on exponent 24
    let e2 = dense::mul_trunc(zn, &eta, &eta, len);
    let e4 = dense::mul_trunc(zn, &e2, &e2, len);
    let e8 = dense::mul_trunc(zn, &e4, &e4, len);
    let e16 = dense::mul_trunc(zn, &e8, &e8, len);
    let e24 = dense::mul_trunc(zn, &e16, &e8, len);
    // shift by q
    let mut out = vec![0u64; len];
    for n in 1..len {
        out[n] = e24[n - 1];
    }
    out
}

/// A candidate basis row: a product of V_d-shifted factors, or an explicit row.
#[derive(Clone, Debug)]
pub enum CandRecipe {
    Product(Vec<(Factor, u64)>),
    /// joint Galois trace of a product with non-embeddable character values
    Joint(crate::gr::JointSpec),
    Explicit { label: String, coeffs: Arc<Vec<u64>> },
}

impl CandRecipe {
    pub fn key(&self) -> String {
        match self {
            CandRecipe::Product(fs) => {
                let mut parts: Vec<String> = fs.iter().map(|(f, d)| format!("V{}({})", d, f.key())).collect();
                parts.sort();
                parts.join("*")
            }
            CandRecipe::Joint(j) => j.key(),
            CandRecipe::Explicit { label, .. } => format!("explicit:{}", label),
        }
    }

    pub fn series(&self, ctx: &PadicContext, len: usize) -> Result<Vec<u64>, SpaceError> {
        match self {
            CandRecipe::Product(fs) => {
                let zn = ctx.zn();
                let mut acc: Option<Vec<u64>> = None;
                for (f, d) in fs {
                    let flen = len.div_ceil(*d as usize);
                    let s = f.series(ctx, flen)?;
                    let shifted = if *d == 1 {
                        let mut v = s;
                        v.resize(len, 0);
                        v
                    } else {
                        dense::v_op(&s, *d, len)
                    };
                    acc = Some(match acc {
                        None => shifted,
                        Some(a) => dense::mul_trunc(zn, &a, &shifted, len),
                    });
                }
                Ok(acc.unwrap_or_else(|| vec![0; len]))
            }
            CandRecipe::Joint(j) => Ok(j.series(ctx, len)?),
            CandRecipe::Explicit { coeffs, .. } => {
                if coeffs.len() < len {
                    return Err(SpaceError::ExplicitTooShort(coeffs.len(), len));
                }
                Ok(coeffs[..len].to_vec())
            }
        }
    }

    /// Retry with constant-clearing p-power scalings when the exact constant
    /// term has a p in its denominator.
    pub fn series_scaled(&self, ctx: &PadicContext, len: usize) -> Result<Option<(CandRecipe, Vec<u64>)>, SpaceError> {
        match self {
            CandRecipe::Product(fs) => {
                for scale in 0..=2u32 {
                    let scaled: Vec<(Factor, u64)> = fs
                        .iter()
                        .map(|(f, d)| match f {
                            Factor::Eis(s) => (Factor::Eis(EisSpec { scale_pow: scale, ..s.clone() }), *d),
                            other => (other.clone(), *d),
                        })
                        .collect();
                    let cand = CandRecipe::Product(scaled);
                    match cand.series(ctx, len) {
                        Ok(s) => return Ok(Some((cand, s))),
                        Err(SpaceError::Eis(EisError::ConstantTooDeep)) => continue,
                        Err(SpaceError::Eis(EisError::NoTraceOrder(_))) => return Ok(None),
                        Err(e) => return Err(e),
                    }
                }
                Ok(None)
            }
            CandRecipe::Joint(j) => {
                for scale in 0..=2u32 {
                    let mut j2 = j.clone();
                    j2.scale_pow = scale;
                    match j2.series(ctx, len) {
                        Ok(srs) => return Ok(Some((CandRecipe::Joint(j2), srs))),
                        Err(crate::padic::PadicError::NonUnitDenominator) => continue,
                        Err(e) => return Err(SpaceError::Padic(e)),
                    }
                }
                Ok(None)
            }
            CandRecipe::Explicit { .. } => Ok(Some((self.clone(), self.series(ctx, len)?))),
        }
    }
}

/// Primitive characters of every conductor dividing `level`, deterministic
/// order, cached per level.
pub fn primitive_characters_dividing(level: u64) -> Vec<DirichletCharacter> {
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<std::collections::BTreeMap<u64, Vec<DirichletCharacter>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(std::collections::BTreeMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&level) {
        return v.clone();
    }
    let mut out = Vec::new();
    for f in 1..=level {
        if level % f != 0 {
            continue;
        }
        let ug = UnitGroup::new(f);
        for chi in enumerate_characters(&ug) {
            if chi.conductor() == f {
                out.push(chi);
            }
        }
    }
    cache.lock().unwrap().insert(level, out.clone());
    out
}

/// All multiplicative units of the given weight with level dividing `level`,
/// paired with the induced product character. Trivial-character units use
/// normalized integral series (L1, E2d, Delta-monomials) so that lattice
/// saturation stays trivial; character pairs contribute one spec per
/// Galois-trace shift.
fn unit_is_averaged(fs: &[(Factor, u64)]) -> bool {
    fs.iter().any(|(f, _)| match f {
        Factor::Eis(s) => s.t < s.n,
        _ => false,
    })
}

fn eis_units(
    ctx: &PadicContext,
    weight: u32,
    level: u64,
    prims: &[DirichletCharacter],
) -> Vec<(Vec<(Factor, u64)>, DirichletCharacter)> {
    use std::sync::{Mutex, OnceLock};
    type UnitList = Vec<(Vec<(Factor, u64)>, DirichletCharacter)>;
    static CACHE: OnceLock<Mutex<std::collections::BTreeMap<(u32, u64, u64, usize), UnitList>>> =
        OnceLock::new();
    let key = (weight, level, ctx.p, ctx.deg());
    let cache = CACHE.get_or_init(|| Mutex::new(std::collections::BTreeMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return v.clone();
    }
    let mut out: Vec<(Vec<(Factor, u64)>, DirichletCharacter)> = Vec::new();
    let triv_n = DirichletCharacter::trivial(level);
    let mut push_shifts = |fs: Vec<Factor>, out: &mut Vec<(Vec<(Factor, u64)>, DirichletCharacter)>| {
        for d in 1..=level {
            if level % d == 0 {
                out.push((fs.iter().map(|f| (f.clone(), d)).collect(), triv_n.clone()));
            }
        }
    };
    if weight >= 4 && weight % 2 == 0 {
        push_shifts(vec![Factor::L1(weight)], &mut out);
    }
    // Delta^j monomials (integral cusp generators)
    let mut j = 1u32;
    while 12 * j <= weight {
        let rem = weight - 12 * j;
        if rem == 0 {
            let fs: Vec<Factor> = (0..j).map(|_| Factor::Delta).collect();
            push_shifts(fs, &mut out);
        } else if rem >= 4 && rem % 2 == 0 {
            let mut fs: Vec<Factor> = (0..j).map(|_| Factor::Delta).collect();
            fs.push(Factor::L1(rem));
            push_shifts(fs, &mut out);
        }
        j += 1;
    }
    if weight == 2 {
        for d in 2..=level.max(2) {
            if level % d != 0 {
                continue;
            }
            let mut e = 1;
            while d * e <= level {
                if level % (d * e) == 0 {
                    out.push((vec![(Factor::E2d(d), e)], triv_n.clone()));
                }
                e += 1;
            }
        }
    }
    let mut seen = BTreeSet::new();
    for (i, psi1) in prims.iter().enumerate() {
        for psi2 in prims.iter().skip(if weight == 1 { i } else { 0 }) {
            let lv = psi1.modulus.max(1) * psi2.modulus.max(1);
            if level % lv != 0 {
                continue;
            }
            if psi1.modulus <= 1 && psi2.modulus <= 1 {
                continue; // trivial pairs are covered by the normalized units
            }
            let Ok(spec0) = make_spec(ctx, weight, psi1, psi2, 0) else { continue };
            let orbits = orbit_size(&spec0);
            let prod = psi1.induce(level).unwrap().mul(&psi2.induce(level).unwrap()).unwrap();
            for shift in 0..orbits {
                let spec = EisSpec { shift, ..spec0.clone() };
                let mut dedup_key = spec.key();
                if weight == 1 {
                    let swapped = EisSpec { chi1: spec.chi2.clone(), chi2: spec.chi1.clone(), ..spec.clone() };
                    let k2 = swapped.key();
                    if k2 < dedup_key {
                        dedup_key = k2;
                    }
                }
                if !seen.insert(dedup_key) {
                    continue;
                }
                let mut d = 1;
                while d * lv <= level {
                    if level % (d * lv) == 0 {
                        out.push((vec![(Factor::Eis(spec.clone()), d)], prod.clone()));
                    }
                    d += 1;
                }
            }
        }
    }
    cache.lock().unwrap().insert(key, out.clone());
    out
}

/// Candidate recipes for M_k(level, chi), one enrichment round at a time.
pub fn candidate_recipes(
    ctx: &PadicContext,
    k: u32,
    level: u64,
    chi: &DirichletCharacter,
    round: u32,
) -> Vec<CandRecipe> {
    let prims = primitive_characters_dividing(level);
    let chi_n = chi.induce(level).expect("chi modulus must divide level").canonicalize();
    let mut out = Vec::new();
    match round {
        0 => {
            for (fs, prod) in eis_units(ctx, k, level, &prims) {
                if prod.canonicalize() == chi_n {
                    out.push(CandRecipe::Product(fs));
                }
            }
        }
        1 => {
            if k >= 2 {
                out.extend(product_candidates(ctx, 1, k - 1, level, &chi_n, &prims));
                if std::env::var("LP3_NO_JOINT").is_err() { out.extend(joint_candidates(ctx, 1, k - 1, level, &chi_n, &prims)); }
            }
        }
        2 => {
            for a in [2u32, 4] {
                if k > a {
                    out.extend(product_candidates(ctx, a, k - a, level, &chi_n, &prims));
                    if std::env::var("LP3_NO_JOINT").is_err() { out.extend(joint_candidates(ctx, a, k - a, level, &chi_n, &prims)); }
                }
            }
        }
        3 => {
            for a in [6u32, 8, 12] {
                if k > a {
                    out.extend(product_candidates(ctx, a, k - a, level, &chi_n, &prims));
                }
            }
            if k >= 3 {
                // bounded triple products E_1 E_1 E_{k-2}
                let units1 = eis_units(ctx, 1, level, &prims);
                let units_rest = eis_units(ctx, k - 2, level, &prims);
                let mut count = 0usize;
                for (f1, p1) in units1.iter().take(24) {
                    if unit_is_averaged(f1) {
                        continue;
                    }
                    for (f2, p2) in units1.iter().take(24) {
                        if unit_is_averaged(f2) {
                            continue;
                        }
                        let p12 = p1.mul(p2).unwrap();
                        for (f3, p3) in units_rest.iter() {
                            if count > 4000 {
                                break;
                            }
                            if unit_is_averaged(f3) {
                                continue;
                            }
                            if p12.mul(p3).unwrap().canonicalize() != chi_n {
                                continue;
                            }
                            let mut fs = f1.clone();
                            fs.extend(f2.iter().cloned());
                            fs.extend(f3.iter().cloned());
                            let lv = fs.iter().map(|(f, d)| f.level() * d).fold(1u64, num_integer::lcm);
                            if level % lv != 0 {
                                continue;
                            }
                            out.push(CandRecipe::Product(fs));
                            count += 1;
                        }
                    }
                }
            }
        }
        _ => {}
    }
    out
}

/// Raw odd/even Eisenstein pair list for a weight: (chi1, chi2, d, product char),
/// without any embeddability constraint.
fn raw_pairs(
    weight: u32,
    level: u64,
    prims: &[DirichletCharacter],
) -> Vec<(DirichletCharacter, DirichletCharacter, u64, DirichletCharacter)> {
    let want = if weight % 2 == 0 { 1i8 } else { -1 };
    let mut out = Vec::new();
    for (i, psi1) in prims.iter().enumerate() {
        for psi2 in prims.iter().skip(if weight == 1 { i } else { 0 }) {
            if psi1.parity() * psi2.parity() != want {
                continue;
            }
            if psi1.modulus <= 1 && psi2.modulus <= 1 {
                continue;
            }
            let lv = psi1.modulus.max(1) * psi2.modulus.max(1);
            if level % lv != 0 {
                continue;
            }
            let prod = psi1.induce(level).unwrap().mul(&psi2.induce(level).unwrap()).unwrap();
            let mut d = 1;
            while d * lv <= level {
                if level % (d * lv) == 0 {
                    out.push((psi1.clone(), psi2.clone(), d, prod.clone()));
                }
                d += 1;
            }
        }
    }
    out
}

/// Joint-trace candidates for weight splits whose character values do not embed.
fn joint_candidates(
    ctx: &PadicContext,
    ka: u32,
    kb: u32,
    level: u64,
    chi_n: &DirichletCharacter,
    prims: &[DirichletCharacter],
) -> Vec<CandRecipe> {
    use crate::gr::{joint_orbit_size, GrFactor, JointSpec};
    let pairs_a = raw_pairs(ka, level, prims);
    let pairs_b = raw_pairs(kb, level, prims);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (a1, a2, da, pa) in pairs_a.iter() {
        for (b1, b2, db, pb) in pairs_b.iter() {
            let total = pa.mul(pb).unwrap();
            if total.canonicalize() != *chi_n {
                continue;
            }
            let n = [a1, a2, b1, b2]
                .iter()
                .map(|c| c.value_order().max(1))
                .fold(1u64, num_integer::lcm);
            // fully embeddable pairs are covered by plain products
            if ctx.zeta(n).is_ok() {
                continue;
            }
            let tot_ord = total.value_order().max(1);
            let Some(t) = crate::arith::eisenstein::max_trace_order(ctx, n, tot_ord) else {
                continue;
            };
            // canonical representative of the twist orbit
            let factor_keys = |j: u64| -> String {
                let mut ks: Vec<String> = vec![
                    format!("{}*{}", a1.pow(j).canonicalize().key(), a2.pow(j).canonicalize().key()),
                    format!("{}*{}", b1.pow(j).canonicalize().key(), b2.pow(j).canonicalize().key()),
                ];
                ks.sort();
                format!("{}|{}|{}", ks.join("+"), da, db)
            };
            let me = factor_keys(1);
            let mut canonical = me.clone();
            for j in 0..n {
                if crate::zmod::gcd_u64(j, n) == 1 && j % t == 1 % t {
                    let k = factor_keys(j);
                    if k < canonical {
                        canonical = k;
                    }
                }
            }
            if me != canonical || !seen.insert(me) {
                continue;
            }
            let orbit = joint_orbit_size(n, t);
            for shift in 0..orbit.min(n) {
                out.push(CandRecipe::Joint(JointSpec {
                    factors: vec![
                        GrFactor { k: ka, chi1: a1.clone(), chi2: a2.clone(), v_shift: *da },
                        GrFactor { k: kb, chi1: b1.clone(), chi2: b2.clone(), v_shift: *db },
                    ],
                    n,
                    t,
                    shift,
                    scale_pow: 0,
                }));
            }
        }
    }
    out
}

fn product_candidates(
    ctx: &PadicContext,
    ka: u32,
    kb: u32,
    level: u64,
    chi_n: &DirichletCharacter,
    prims: &[DirichletCharacter],
) -> Vec<CandRecipe> {
    let units_a = eis_units(ctx, ka, level, prims);
    let units_b = eis_units(ctx, kb, level, prims);
    let mut out = Vec::new();
    for (fa, pa) in units_a.iter() {
        if unit_is_averaged(fa) {
            continue; // Galois traces are isotypic only as stand-alone rows
        }
        let needed = chi_n.mul(&pa.conjugate()).unwrap().canonicalize();
        for (fb, pb) in units_b.iter() {
            if unit_is_averaged(fb) {
                continue;
            }
            if pb.canonicalize() != needed {
                continue;
            }
            let mut fs = fa.clone();
            fs.extend(fb.iter().cloned());
            let lv = fs.iter().map(|(f, d)| f.level() * d).fold(1u64, num_integer::lcm);
            if level % lv != 0 {
                continue;
            }
            out.push(CandRecipe::Product(fs));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provider {
    EisensteinProducts,
    File,
}

pub struct SpaceBasis {
    pub weight: u32,
    pub level: u64,
    pub chi: DirichletCharacter,
    pub q_prec: usize,
    pub recipes: Vec<CandRecipe>,
    pub prefixes: Vec<Vec<u64>>,
    pub pivots: Vec<usize>,
    pub provider: Provider,
}

impl SpaceBasis {
    pub fn dim(&self) -> usize {
        self.recipes.len()
    }
}

/// Spanning set of M_k(N, chi) to q-precision `q_prec` from Eisenstein products,
/// selected by rank stabilization across enrichment rounds.
pub fn classical_basis(
    ctx: &PadicContext,
    k: u32,
    level: u64,
    chi: &DirichletCharacter,
    q_prec: usize,
    floor: usize,
) -> Result<SpaceBasis, SpaceError> {
    let zn = ctx.zn();
    let budget = (ctx.m / 2).clamp(3, 8);
    let mut st = Staircase::new(q_prec, false).with_budget(budget);
    let mut recipes = Vec::new();
    let mut prefixes = Vec::new();
    let mut pivots = Vec::new();
    let mut seen = BTreeSet::new();
    let mut last_rank = usize::MAX;
    let mut stable_rounds = 0;
    // rounds 4 and 5 generate nothing: they are confirmation rounds, letting a
    // pool that finished growing at round 3 still certify two stable rounds
    for round in 0..=5u32 {
        let mut batch_series = Vec::new();
        let mut batch_recipes = Vec::new();
        for cand in candidate_recipes(ctx, k, level, chi, round) {
            if !seen.insert(cand.key()) {
                continue;
            }
            let Some((recipe, s)) = cand.series_scaled(ctx, q_prec)? else { continue };
            batch_series.push(s);
            batch_recipes.push(recipe);
        }
        let ids: Vec<usize> = (0..batch_series.len()).collect();
        let adopted = st.insert_batch(zn, ctx.p, ctx.m, &batch_series, &ids, ctx.m);
        for (i, ok) in adopted.into_iter().enumerate() {
            if ok {
                recipes.push(batch_recipes[i].clone());
                prefixes.push(batch_series[i].clone());
                pivots.push(0);
            }
        }
        if st.rank() == last_rank {
            stable_rounds += 1;
            if stable_rounds >= 2 && st.rank() >= floor {
                break;
            }
        } else {
            stable_rounds = 0;
            last_rank = st.rank();
        }
    }
    if st.rank() < floor {
        return Err(SpaceError::BelowFloor(st.rank(), floor));
    }
    if stable_rounds < 1 {
        return Err(SpaceError::RankUnstable(k, level));
    }
    Ok(SpaceBasis {
        weight: k,
        level,
        chi: chi.clone(),
        q_prec,
        recipes,
        prefixes,
        pivots,
        provider: Provider::EisensteinProducts,
    })
}

/// Basis file format: rows of explicit coefficients (shares the weight-one JSON
/// shape, plus a weight field).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisFile {
    pub weight: u32,
    pub level: u64,
    pub character: crate::arith::weight1::CharacterSpec,
    pub q_prec: usize,
    /// rows as integer coefficient vectors, a_0 first
    pub rows: Vec<Vec<i64>>,
}

pub fn classical_basis_from_file(
    ctx: &PadicContext,
    path: &std::path::Path,
    q_prec: usize,
) -> Result<SpaceBasis, SpaceError> {
    let text = std::fs::read_to_string(path)?;
    let file: BasisFile = serde_json::from_str(&text)?;
    let ug = UnitGroup::new(file.character.modulus);
    let chi = enumerate_characters(&ug)
        .into_iter()
        .find(|c| {
            file.character.generator_values.iter().all(|&(r, ord, e)| match c.exp_at(r) {
                None => false,
                Some(ce) => {
                    let l = num_integer::lcm(c.order, ord);
                    u64::from(ce) * (l / c.order) % l == u64::from(e) * (l / ord) % l
                }
            })
        })
        .unwrap_or_else(|| DirichletCharacter::trivial(file.level));
    let zn = ctx.zn();
    let mut st = Staircase::new(q_prec, false);
    let mut recipes = Vec::new();
    let mut prefixes = Vec::new();
    let mut pivots = Vec::new();
    for (i, row) in file.rows.iter().enumerate() {
        if row.len() < q_prec {
            return Err(SpaceError::ExplicitTooShort(row.len(), q_prec));
        }
        let s: Vec<u64> = row.iter().take(q_prec).map(|&c| zn.from_i64(c)).collect();
        let full: Arc<Vec<u64>> = Arc::new(row.iter().map(|&c| zn.from_i64(c)).collect());
        match st.insert(zn, ctx.p, ctx.m, &s, ctx.m) {
            InsertOutcome::Added(piv) => {
                recipes.push(CandRecipe::Explicit { label: format!("{}#{}", path.display(), i), coeffs: full });
                prefixes.push(s);
                pivots.push(piv);
            }
            InsertOutcome::Dependent => {
                return Err(SpaceError::RankDeficientFile(file.rows.len(), st.rank()));
            }
        }
    }
    Ok(SpaceBasis {
        weight: file.weight,
        level: file.level,
        chi,
        q_prec,
        recipes,
        prefixes,
        pivots,
        provider: Provider::File,
    })
}

/// Rough dimension estimate used only for sizing prefixes (never as a floor).
pub fn dim_estimate(k: u32, level: u64) -> usize {
    let mut index = level;
    for (p, _) in factor_u64(level) {
        index = index / p * (p + 1);
    }
    (u64::from(k) * index / 12 + index / 3 + 8) as usize
}

// ---------------- weight-one completion ----------------

/// Hecke operator on a q-expansion: a_n -> a_{nl} + (chi(l) l^{k-1}) a_{n/l};
/// pass 0 for the twist to get U_l.
pub fn hecke_tl(zn: &Zn, series: &[u64], l: u64, twist: u64, out_len: usize) -> Vec<u64> {
    let mut out = vec![0u64; out_len];
    let cm = zn.to_mont(twist);
    for (n, o) in out.iter_mut().enumerate() {
        let idx = n * l as usize;
        if idx < series.len() {
            *o = series[idx];
        }
        if twist != 0 && n % l as usize == 0 {
            *o = zn.add(*o, zn.mul_mont_plain(cm, series[n / l as usize]));
        }
    }
    out
}

/// The full weight-one space M_1(level, chi) as combination data over an
/// auxiliary weight-2 basis: row_j(q) = (combo[j] . M2A rows)(q) / E_A(q).
pub struct WeightOneSpace {
    pub level: u64,
    pub chi: DirichletCharacter,
    pub p: u64,
    m2a: SpaceBasis,
    ea_factor: Factor,
    /// dim x dim(M2A) combination matrix
    combos: Vec<Vec<u64>>,
    /// matrix of T_p (p coprime to level) or U_p (p | level) on the rows
    pub tp: Mat,
    /// true when p | level (tp is then the U_p matrix)
    pub p_divides: bool,
    /// chi(p) in the ring (0 when p | modulus)
    pub chi_p: u64,
    pub stab_prefix: usize,
}

impl WeightOneSpace {
    pub fn dim(&self) -> usize {
        self.combos.len()
    }

    /// Regenerate all rows at the requested length.
    pub fn rows(&self, ctx: &PadicContext, len: usize) -> Result<Vec<Vec<u64>>, SpaceError> {
        let zn = ctx.zn();
        let m2_rows: Vec<Vec<u64>> = self
            .m2a
            .recipes
            .iter()
            .map(|r| r.series(ctx, len))
            .collect::<Result<_, _>>()?;
        let ea = self.ea_factor.series(ctx, len)?;
        let ea_inv = dense::inverse(zn, &ea, len);
        let mut out = Vec::with_capacity(self.combos.len());
        for combo in &self.combos {
            let mut acc = vec![0u64; len];
            for (c, row) in combo.iter().zip(m2_rows.iter()) {
                if *c != 0 {
                    let cm = zn.to_mont(*c);
                    for (dst, &src) in acc.iter_mut().zip(row.iter()) {
                        *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
                    }
                }
            }
            out.push(dense::mul_trunc(zn, &acc, &ea_inv, len));
        }
        Ok(out)
    }

    /// U_p images of all rows at length `len`, given the rows at length `len`:
    /// p | N: U_p(row_j) = sum_i U[i][j] row_i;
    /// p coprime: U_p(row_j) = sum_i T[i][j] row_i - chi(p) V_p(row_j).
    pub fn up_images(&self, ctx: &PadicContext, rows: &[Vec<u64>], len: usize) -> Vec<Vec<u64>> {
        let zn = ctx.zn();
        let d = self.combos.len();
        let mut out = vec![vec![0u64; len]; d];
        for (j, o) in out.iter_mut().enumerate() {
            for i in 0..d {
                let c = self.tp.at(i, j);
                if c != 0 {
                    let cm = zn.to_mont(c);
                    for (dst, &src) in o.iter_mut().zip(rows[i].iter()) {
                        *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
                    }
                }
            }
            if !self.p_divides && self.chi_p != 0 {
                let cm = zn.to_mont(self.chi_p);
                for (n, dst) in o.iter_mut().enumerate() {
                    if n % self.p as usize == 0 {
                        let src = rows[j][n / self.p as usize];
                        *dst = zn.sub(*dst, zn.mul_mont_plain(cm, src));
                    }
                }
            }
        }
        out
    }
}

fn combine(zn: &Zn, width: usize, transform: &[Vec<u64>], base: &[Vec<u64>]) -> Vec<Vec<u64>> {
    transform
        .iter()
        .map(|t| {
            let mut out = vec![0u64; width];
            for (k, &c) in t.iter().enumerate() {
                if c != 0 {
                    let cm = zn.to_mont(c);
                    for (dst, &src) in out.iter_mut().zip(base[k].iter()) {
                        *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
                    }
                }
            }
            out
        })
        .collect()
}

fn residual_small(p: u64, m: u32, r: &[u64], threshold: u32) -> bool {
    r.iter().all(|&x| {
        if x == 0 {
            return true;
        }
        let mut v = 0u32;
        let mut c = x;
        while c % p == 0 {
            c /= p;
            v += 1;
            if v >= threshold.min(m) {
                return true;
            }
        }
        false
    })
}

/// Build M_1(level, chi) by intersecting E_A- and E_B-quotients of weight-2
/// spaces and pruning to the Hecke-stable core.
pub fn weight_one_space(
    ctx: &PadicContext,
    level: u64,
    chi: &DirichletCharacter,
    p: u64,
) -> Result<WeightOneSpace, SpaceError> {
    assert!(chi.is_odd(), "weight-one nebentype must be odd");
    let zn = ctx.zn();
    // auxiliary weight-2 multipliers with unit constant terms: products of two
    // Eisenstein series reliably span only in weight >= 3, so the quotients are
    // taken from weight-3 spaces of the same character
    let na = num_integer::lcm(level, 2);
    let nb = num_integer::lcm(level, 3);
    let qst = 2 * dim_estimate(3, na.max(nb)) + 128;
    let chi_na = chi.induce(na).unwrap();
    let chi_nb = chi.induce(nb).unwrap();
    let m2a = classical_basis(ctx, 3, na, &chi_na, qst, 0)?;
    let m2b = classical_basis(ctx, 3, nb, &chi_nb, qst, 0)?;
    let ea_factor = Factor::E2d(2);
    let eb_factor = Factor::E2d(3);
    let ea_inv = dense::inverse(zn, &ea_factor.series(ctx, qst)?, qst);
    let eb_inv = dense::inverse(zn, &eb_factor.series(ctx, qst)?, qst);
    let va: Vec<Vec<u64>> = m2a.prefixes.iter().map(|r| dense::mul_trunc(zn, r, &ea_inv, qst)).collect();
    let vb: Vec<Vec<u64>> = m2b.prefixes.iter().map(|r| dense::mul_trunc(zn, r, &eb_inv, qst)).collect();
    // intersection: kernels of the stacked matrix give u_B . VB + u_A . VA = 0
    let mut stacked = vb.clone();
    stacked.extend(va.iter().cloned());
    let ech = echelonize(zn, ctx.p, ctx.m, &stacked);
    let zero_threshold = ctx.m.saturating_sub(ech.loss + 1);
    let mut combos: Vec<Vec<u64>> = Vec::new();
    for (comb, v) in &ech.kernel {
        if *v < zero_threshold {
            continue;
        }
        let ua = comb[vb.len()..].to_vec();
        if ua.iter().any(|&c| c != 0) {
            combos.push(ua);
        }
    }
    if combos.is_empty() {
        return Err(SpaceError::UnderSpanned);
    }
    let rows_at = |combos: &[Vec<u64>], len: usize| -> Vec<Vec<u64>> {
        combos
            .iter()
            .map(|combo| {
                let mut acc = vec![0u64; len];
                for (c, row) in combo.iter().zip(m2a.prefixes.iter()) {
                    if *c != 0 {
                        let cm = zn.to_mont(*c);
                        for (dst, &src) in acc.iter_mut().zip(row.iter()) {
                            *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
                        }
                    }
                }
                dense::mul_trunc(zn, &acc, &ea_inv, len)
            })
            .collect()
    };
    // Hecke stability pruning under T_2 and T_3 until the dimension stabilizes
    let mut guard = 0;
    let final_ech: Echelon = loop {
        guard += 1;
        if guard > 16 {
            return Err(SpaceError::StabilityDiverged);
        }
        let raw_rows = rows_at(&combos, qst);
        let ech = echelonize(zn, ctx.p, ctx.m, &raw_rows);
        let combos_red = combine(zn, m2a.dim(), &ech.transform, &combos);
        let rows = ech.rows.clone();
        let mut shrunk = false;
        let mut next = combos_red.clone();
        for l in [2u64, 3] {
            let twist = if level % l == 0 { 0 } else { ctx.scalar(&chi.value_in(ctx, l)?) };
            let d = next.len();
            if d == 0 {
                return Err(SpaceError::UnderSpanned);
            }
            let residuals: Vec<Vec<u64>> = (0..d)
                .map(|j| {
                    let img = hecke_tl(zn, &rows[j], l, twist, qst / l as usize);
                    let (_, r) = ech.reduce(zn, ctx.p, &img);
                    r
                })
                .collect();
            if residuals
                .iter()
                .all(|r| residual_small(ctx.p, ctx.m, r, zero_threshold))
            {
                continue;
            }
            let ech_res = echelonize(zn, ctx.p, ctx.m, &residuals);
            let mut kept = Vec::new();
            for (comb, v) in &ech_res.kernel {
                if *v < zero_threshold {
                    continue;
                }
                let mut padded = comb.clone();
                padded.resize(next.len(), 0);
                kept.push(combine(zn, m2a.dim(), &[padded], &next).remove(0));
            }
            shrunk = true;
            next = kept;
        }
        combos = next;
        if combos.is_empty() {
            return Err(SpaceError::UnderSpanned);
        }
        if !shrunk {
            break ech;
        }
    };
    // final reduced rows and combos in staircase order
    let combos = combine(zn, m2a.dim(), &final_ech.transform, &combos);
    let rows = final_ech.rows.clone();
    let zero_threshold2 = ctx.m.saturating_sub(final_ech.loss + 1);
    // containment: every weight-1 Eisenstein single with character chi lies in the space
    let prims = primitive_characters_dividing(level);
    let chi_n = chi.induce(level).unwrap().canonicalize();
    for (fs, prod) in eis_units(ctx, 1, level, &prims) {
        if prod.canonicalize() != chi_n {
            continue;
        }
        let cand = CandRecipe::Product(fs);
        if let Some((_, s)) = cand.series_scaled(ctx, qst)? {
            let (_, r) = final_ech.reduce(zn, ctx.p, &s);
            if !residual_small(ctx.p, ctx.m, &r, zero_threshold2) {
                return Err(SpaceError::UnderSpanned);
            }
        }
    }
    // T_p (p coprime) or U_p (p | level) matrix on the rows
    let p_divides = level % p == 0;
    let chi_p = if chi.exp_at(p % chi.modulus.max(1)).is_none() {
        0
    } else {
        ctx.scalar(&chi.value_in(ctx, p)?)
    };
    let d = combos.len();
    let mut tp = Mat::zero(d, d);
    for j in 0..d {
        let img = if p_divides {
            hecke_tl(zn, &rows[j], p, 0, qst / p as usize)
        } else {
            hecke_tl(zn, &rows[j], p, chi_p, qst / p as usize)
        };
        let (coeffs, r) = final_ech.reduce(zn, ctx.p, &img);
        if !residual_small(ctx.p, ctx.m, &r, zero_threshold2) {
            return Err(SpaceError::StabilityDiverged);
        }
        for i in 0..d {
            tp.set(i, j, coeffs[i]);
        }
    }
    Ok(WeightOneSpace {
        level,
        chi: chi.clone(),
        p,
        m2a,
        ea_factor,
        combos,
        tp,
        p_divides,
        chi_p,
        stab_prefix: qst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_one_dimensions() {
        let ctx = PadicContext::plain(5, 8).unwrap();
        let triv = DirichletCharacter::trivial(1);
        let b4 = classical_basis(&ctx, 4, 1, &triv, 40, 0).unwrap();
        assert_eq!(b4.dim(), 1);
        // dim M_12 = 2: E_12 and Delta (recovered from E_4^3, E_6^2 monomials)
        let b12 = classical_basis(&ctx, 12, 1, &triv, 60, 0).unwrap();
        assert_eq!(b12.dim(), 2);
    }

    #[test]
    fn weight2_level11_contains_newform() {
        let ctx = PadicContext::plain(5, 8).unwrap();
        let triv = DirichletCharacter::trivial(11);
        let b = classical_basis(&ctx, 2, 11, &triv, 60, 0).unwrap();
        assert_eq!(b.dim(), 2);
        let e = crate::arith::curves::EllipticCurveQ::new("11a", [0, -1, 1, -10, -20], 11).unwrap();
        let a = e.coefficients(59, 10000).unwrap();
        let zn = ctx.zn();
        let mut f = vec![0u64; 60];
        for (n, &c) in a.iter().enumerate() {
            f[n + 1] = zn.from_i64(c);
        }
        let st = echelonize(zn, 5, 8, &b.prefixes);
        let (_, r) = st.reduce(zn, 5, &f);
        assert!(r.iter().all(|&x| x == 0), "11a not in Eisenstein-product span");
    }

    #[test]
    fn weight_one_space_level_11_eisenstein_only() {
        let ctx = PadicContext::plain(5, 8).unwrap();
        let chi = DirichletCharacter::kronecker_of(-11);
        let w = weight_one_space(&ctx, 11, &chi, 5).unwrap();
        assert_eq!(w.dim(), 1);
        // the single row is proportional to theta(1_K): check coefficient ratios
        let rows = w.rows(&ctx, 40).unwrap();
        let k = crate::arith::theta::ImagQuadField::new(-11).unwrap();
        let th = k.theta_trivial_coeffs(39);
        let zn = ctx.zn();
        // row = c * theta with c = row[1] (theta has a_1 = 1)
        let c = rows[0][1];
        for n in 1..40usize {
            let expect = zn.mul(c, zn.from_i64(th[n - 1]));
            assert_eq!(rows[0][n], expect, "n = {}", n);
        }
    }

    #[test]
    fn weight_one_space_level_23_has_cusp_form() {
        // dim M_1(23, chi_{-23}) = 2: Eisenstein + the first dihedral cusp form
        let ctx = PadicContext::plain(5, 8).unwrap();
        let chi = DirichletCharacter::kronecker_of(-23);
        let w = weight_one_space(&ctx, 23, &chi, 5).unwrap();
        assert_eq!(w.dim(), 2);
        // U_p images stay computable
        let rows = w.rows(&ctx, 60).unwrap();
        let ups = w.up_images(&ctx, &rows, 12);
        assert_eq!(ups.len(), 2);
    }

    #[test]
    fn rank_deficient_file_rejected() {
        let ctx = PadicContext::plain(5, 6).unwrap();
        let dir = std::env::temp_dir().join("lp3_test_basis");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dup.json");
        let file = BasisFile {
            weight: 4,
            level: 1,
            character: crate::arith::weight1::CharacterSpec { modulus: 1, generator_values: vec![] },
            q_prec: 10,
            rows: vec![vec![1, 240, 2160, 6720, 17520, 30240, 60480, 82560, 140400, 181680]; 2],
        };
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(
            classical_basis_from_file(&ctx, &path, 10),
            Err(SpaceError::RankDeficientFile(2, 1))
        ));
    }
}
