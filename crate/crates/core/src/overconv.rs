//! Katz bases of overconvergent modular forms, the U_p matrix, the ordinary
//! projector, eigenspace deflation, and the p-adic iterated integral.
//!
//! The weight-one space of tame data (level, chi) is truncated as
//!   sum_{i < n} E_{p-1}^{-i} W_i
//! with W_0 = M_1(level, chi) (from the stability completion) and W_i the
//! complement of E_{p-1} M_{k-(p-1)} inside M_{1+i(p-1)} selected from
//! Eisenstein products. Basis rows are the saturated staircase rows; U_p images
//! of raw generators use U_p(w E^{-i}) = E^{-i} U_p(w (VE)^i E^{-i}), one
//! full-length product per generator.

use crate::arith::chars::DirichletCharacter;
use crate::arith::eisenstein::eis_level1_normalized;
use crate::matrix::{echelonize, InsertOutcome, Mat, Staircase};
use crate::padic::PadicContext;
use crate::qseries::dense;
use crate::spaces::{candidate_recipes, weight_one_space, CandRecipe, SpaceError, WeightOneSpace};
use crate::zmod::Zn;
use rayon::prelude::*;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OverconvError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Padic(#[from] crate::padic::PadicError),
    #[error(transparent)]
    Eis(#[from] crate::arith::eisenstein::EisError),
    #[error("U_p solve residual is nonzero beyond tolerance at generator {0} (q-precision too small?)")]
    InconsistentSolve(usize),
    #[error("ordinary projector did not stabilize (precision exhausted)")]
    ProjectorUnstable,
    #[error("projector idempotency check failed at certified precision")]
    ProjectorNotIdempotent,
    #[error("eigenspace separation factor is not a unit at operator {0}")]
    NonUnitSeparation(u64),
    #[error("q-expansion prefix exhausted while building Hecke images")]
    PrefixExhausted,
    #[error("the projection engine requires a residue-degree-1 context")]
    NeedsScalarContext,
    #[error("katz row budget {0} exceeded (estimate too small)")]
    RowBudget(usize),
    #[error("saturation denominator fails to divide a U_p column exactly")]
    SaturationMismatch,
}

/// A raw generator whose image under U_p is computable from bounded data.
pub enum RawSource {
    /// row j of the weight-one completion
    W0(usize),
    /// block i >= 1 with its product recipe
    Higher { block: u32, recipe: CandRecipe },
    /// placeholder for a rejected insertion (keeps transform indices aligned)
    Unused,
}

pub struct KatzBasis {
    pub p: u64,
    pub m: u32,
    pub level: u64,
    pub chi: DirichletCharacter,
    pub n_blocks: u32,
    /// raw generator sources, indexed by staircase insertion order
    pub raw_sources: Vec<RawSource>,
    /// saturated staircase: its rows ARE the basis
    pub staircase: Staircase,
    pub q_solve: usize,
    pub q_full: usize,
    pub w0: WeightOneSpace,
    e_series: Vec<u64>,
    e_inv_solve: Vec<u64>,
}

impl KatzBasis {
    pub fn dim(&self) -> usize {
        self.staircase.rank()
    }

    /// q-expansion prefix of the i-th basis row.
    pub fn row_series(&self, i: usize) -> &[u64] {
        &self.staircase.rows[i]
    }

    /// q-expansion prefix of a coordinate vector.
    pub fn coords_to_series(&self, zn: &Zn, coords: &[u64], len: usize) -> Vec<u64> {
        let mut out = vec![0u64; len];
        for (i, &c) in coords.iter().enumerate() {
            if c != 0 {
                let cm = zn.to_mont(c);
                for (dst, &src) in out.iter_mut().zip(self.staircase.rows[i].iter()) {
                    *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
                }
            }
        }
        out
    }

    pub fn loss(&self) -> u32 {
        self.staircase.max_loss()
    }
}

/// Number of Katz blocks needed for m digits: ceil(m (p+1)/(p-1)) plus margin.
/// (The poorly-overconvergent integrand d^{-1} f^{[p]} h is never expanded
/// directly: one U_p application restores full overconvergence first.)
pub fn block_count(p: u64, m: u32) -> u32 {
    ((u64::from(m) * (p + 1)).div_ceil(p - 1) + 3) as u32
}

/// Build the weight-one Katz basis for tame data (level, chi) at p, m digits.
pub fn katz_basis(
    ctx: &PadicContext,
    level: u64,
    chi: &DirichletCharacter,
) -> Result<KatzBasis, OverconvError> {
    if ctx.deg() != 1 {
        return Err(OverconvError::NeedsScalarContext);
    }
    let p = ctx.p;
    let n_blocks = block_count(p, ctx.m);
    let k_top = 1 + (n_blocks - 1) * (p as u32 - 1);
    let mut r_est = crate::spaces::dim_estimate(k_top, level) + 64;
    loop {
        let q_solve = r_est + 48;
        let q_full = q_solve * p as usize + 16;
        match try_build(ctx, level, chi, n_blocks, q_solve, q_full) {
            Err(OverconvError::RowBudget(_)) => {
                r_est = r_est * 3 / 2;
                if r_est > 2_000_000 {
                    return Err(OverconvError::RowBudget(r_est));
                }
            }
            other => return other,
        }
    }
}

fn try_build(
    ctx: &PadicContext,
    level: u64,
    chi: &DirichletCharacter,
    n_blocks: u32,
    q_solve: usize,
    q_full: usize,
) -> Result<KatzBasis, OverconvError> {
    let p = ctx.p;
    let zn = ctx.zn().clone();
    let w0 = weight_one_space(ctx, level, chi, p)?;
    let e_series = eis_level1_normalized(ctx, p as u32 - 1, q_full)?;
    let e_solve = &e_series[..q_solve];
    let e_inv_solve = dense::inverse(&zn, e_solve, q_solve);

    // permissive selection: candidates that are not numerically dependent are
    // all collected; the final batch echelon decides the honest basis
    let mut selection = Staircase::new(q_solve, false).with_budget(ctx.m);
    let mut raw_sources: Vec<RawSource> = Vec::new();
    let mut flat_rows: Vec<Vec<u64>> = Vec::new();

    // block 0: the weight-one space itself; full-length copies also serve as
    // cuspidal generators for the higher-block pools
    let w0_rows = w0.rows(ctx, q_solve)?;
    let w0_full = w0.rows(ctx, q_full)?;
    let w0_factors: Vec<crate::spaces::Factor> = w0_full
        .iter()
        .enumerate()
        .map(|(j, r)| crate::spaces::Factor::Explicit {
            label: format!("w0.{}", j),
            coeffs: std::sync::Arc::new(r.clone()),
        })
        .collect();
    for (j, r) in w0_rows.iter().enumerate() {
        let _ = selection.insert(&zn, p, ctx.m, r, ctx.m);
        raw_sources.push(RawSource::W0(j));
        flat_rows.push(r.clone());
    }

    let mut e_inv_pow = vec![0u64; q_solve];
    e_inv_pow[0] = 1;
    let mut seen = BTreeSet::new();
    for block in 1..n_blocks {
        // the previous classical space, multiplied by E_{p-1}, seeds this block
        let snapshot: Vec<Vec<u64>> = selection.rows.clone();
        let mut next_sel = Staircase::new(q_solve, false).with_budget(ctx.m);
        for r in snapshot {
            let er = dense::mul_trunc(&zn, &r, e_solve, q_solve);
            let _ = next_sel.insert(&zn, p, ctx.m, &er, ctx.m);
        }
        selection = next_sel;
        e_inv_pow = dense::mul_trunc(&zn, &e_inv_pow, &e_inv_solve, q_solve);
        let k_i = 1 + block * (p as u32 - 1);
        let mut stable = 0;
        let mut last_rank = selection.rank();
        for round in 0..=5u32 {
            let mut cands = candidate_recipes(ctx, k_i, level, chi, round);
            if round == 1 {
                // weight-one rows times trivial-character units of weight k-1,
                // and row multisets times character-adjusted units: these reach
                // the CM-isotypic cusp directions
                cands.extend(w0_product_candidates(ctx, &w0_factors, chi, k_i, level));
            }
            let mut batch_series = Vec::new();
            let mut batch_recipes = Vec::new();
            for cand in cands {
                if !seen.insert(format!("b{}|{}", block, cand.key())) {
                    continue;
                }
                let Some((recipe, s)) = cand.series_scaled(ctx, q_solve)? else { continue };
                batch_series.push(s);
                batch_recipes.push(recipe);
            }
            let ids: Vec<usize> = (0..batch_series.len()).collect();
            let adopted = selection.insert_batch(&zn, p, ctx.m, &batch_series, &ids, ctx.m);
            for (i, ok) in adopted.into_iter().enumerate() {
                if !ok {
                    continue;
                }
                let katz_row = dense::mul_trunc(&zn, &batch_series[i], &e_inv_pow, q_solve);
                raw_sources.push(RawSource::Higher { block, recipe: batch_recipes[i].clone() });
                flat_rows.push(katz_row);
            }
            if flat_rows.len() + 48 > q_solve {
                return Err(OverconvError::RowBudget(flat_rows.len()));
            }
            if selection.rank() == last_rank {
                stable += 1;
                if stable >= 2 {
                    break;
                }
            } else {
                stable = 0;
                last_rank = selection.rank();
            }
        }
    }
    // the honest basis: one exact batch echelon with per-row content division.
    // Rows deeper than the saturation allowance are dropped as numerically
    // ambiguous; a genuinely missing direction then fails the U_p solve loudly.
    let sat_allow = 8u32.min(ctx.m.saturating_sub(4)).max(1);
    let flat = crate::matrix::saturated_echelon(&zn, p, ctx.m, &flat_rows, sat_allow + 1);
    Ok(KatzBasis {
        p,
        m: ctx.m,
        level,
        chi: chi.clone(),
        n_blocks,
        raw_sources,
        staircase: flat,
        q_solve,
        q_full,
        w0,
        e_series,
        e_inv_solve,
    })
}

/// Products of j weight-one rows with trivial-or-matching units: these reach
/// the CM-isotypic cusp directions that Eisenstein data alone misses.
fn w0_product_candidates(
    ctx: &PadicContext,
    w0_factors: &[crate::spaces::Factor],
    chi: &DirichletCharacter,
    k: u32,
    level: u64,
) -> Vec<CandRecipe> {
    let mut out = Vec::new();
    let chi_n = chi.induce(level).unwrap().canonicalize();
    let mut power = DirichletCharacter::trivial(level);
    for j in 1..=9u32.min(k) {
        power = power.mul(&chi_n).unwrap();
        let needed = chi_n.mul(&power.conjugate()).unwrap().canonicalize();
        let rem = k - j;
        let dim = w0_factors.len();
        let mut combos: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..j {
            let mut next = Vec::new();
            for c in &combos {
                let start = c.last().copied().unwrap_or(0);
                for i in start..dim {
                    let mut c2 = c.clone();
                    c2.push(i);
                    next.push(c2);
                }
            }
            combos = next;
            if combos.len() > 256 {
                combos.truncate(256);
            }
        }
        if rem == 0 {
            if needed.is_trivial() {
                for c in &combos {
                    let v: Vec<(crate::spaces::Factor, u64)> =
                        c.iter().map(|&i| (w0_factors[i].clone(), 1u64)).collect();
                    out.push(CandRecipe::Product(v));
                }
            }
            continue;
        }
        for cand in candidate_recipes(ctx, rem, level, &needed, 0) {
            if let CandRecipe::Product(fs) = cand {
                for c in &combos {
                    let mut v: Vec<(crate::spaces::Factor, u64)> =
                        c.iter().map(|&i| (w0_factors[i].clone(), 1u64)).collect();
                    v.extend(fs.iter().cloned());
                    out.push(CandRecipe::Product(v));
                }
            }
        }
    }
    out
}

pub struct UpMatrix {
    pub a: Mat,
    pub certified_digits: u32,
}

fn residual_ok(p: u64, m: u32, r: &[u64], digits: u32) -> bool {
    r.iter().all(|&x| {
        if x == 0 {
            return true;
        }
        let mut v = 0;
        let mut c = x;
        while c % p == 0 {
            c /= p;
            v += 1;
            if v >= digits.min(m) {
                return true;
            }
        }
        v >= digits.min(m)
    })
}

/// Coordinates of a q-expansion prefix in the (staircase) Katz basis.
pub fn solve_in_basis(
    ctx: &PadicContext,
    basis: &KatzBasis,
    series: &[u64],
    tolerance_digits: u32,
) -> Result<Vec<u64>, OverconvError> {
    let zn = ctx.zn();
    let (coeffs, residual) = basis.staircase.reduce(zn, series);
    if !residual_ok(ctx.p, ctx.m, &residual, tolerance_digits) {
        return Err(OverconvError::InconsistentSolve(usize::MAX));
    }
    Ok(coeffs)
}

/// The matrix of U_p on the Katz basis: column j = coordinates of U_p(row_j).
pub fn up_matrix(ctx: &PadicContext, basis: &KatzBasis) -> Result<UpMatrix, OverconvError> {
    let p = basis.p;
    let zn = ctx.zn().clone();
    let dim = basis.dim();
    let nraw = basis.raw_sources.len();
    // F_i = V(E)^i E^{-i} at full precision, built incrementally per block
    let e_inv_full = dense::inverse(&zn, &basis.e_series, basis.q_full);
    let ve = dense::v_op(&basis.e_series, p, basis.q_full);
    let f1 = dense::mul_trunc(&zn, &ve, &e_inv_full, basis.q_full);
    let max_block = basis
        .raw_sources
        .iter()
        .map(|s| match s {
            RawSource::Higher { block, .. } => *block,
            _ => 0,
        })
        .max()
        .unwrap_or(0);
    let mut f_pows: Vec<Vec<u64>> = Vec::with_capacity(max_block as usize + 1);
    f_pows.push(Vec::new());
    let mut cur = f1.clone();
    for i in 1..=max_block {
        f_pows.push(cur.clone());
        if i < max_block {
            cur = dense::mul_trunc(&zn, &cur, &f1, basis.q_full);
        }
    }
    drop(cur);
    // U_p images of every raw generator
    let w0_rows_long = basis.w0.rows(ctx, basis.q_solve)?;
    let w0_ups = basis.w0.up_images(ctx, &w0_rows_long, basis.q_solve);
    let images: Vec<Result<Vec<u64>, OverconvError>> = basis
        .raw_sources
        .par_iter()
        .map(|kind| -> Result<Vec<u64>, OverconvError> {
            match kind {
                RawSource::W0(j) => Ok(w0_ups[*j].clone()),
                RawSource::Higher { block, recipe } => {
                    let w = recipe.series(ctx, basis.q_full)?;
                    let t = dense::mul_trunc(&zn, &w, &f_pows[*block as usize], basis.q_full);
                    let u = dense::u_op(&t, p);
                    let mut acc = u;
                    acc.resize(basis.q_solve, 0);
                    for _ in 0..*block {
                        acc = dense::mul_trunc(&zn, &acc, &basis.e_inv_solve, basis.q_solve);
                    }
                    Ok(acc)
                }
                RawSource::Unused => Ok(Vec::new()),
            }
        })
        .collect();
    // B[i][k] = staircase coefficient i of U_p(raw_k)
    let loss = basis.loss();
    let tolerance = ctx.m.saturating_sub(loss + 2);
    let mut b = Mat::zero(dim, nraw);
    for (k, img) in images.into_iter().enumerate() {
        let img = img?;
        if img.is_empty() {
            continue;
        }
        let (coeffs, residual) = basis.staircase.reduce(&zn, &img);
        if !residual_ok(p, ctx.m, &residual, tolerance) {
            if std::env::var("LP3_DEBUG_PROJ").is_ok() {
                let prof: Vec<(usize, u32)> = residual
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0)
                    .map(|(i, &x)| {
                        let mut v = 0;
                        let mut c = x;
                        while c % p == 0 && v < ctx.m {
                            c /= p;
                            v += 1;
                        }
                        (i, v)
                    })
                    .filter(|&(_, v)| v < tolerance)
                    .take(10)
                    .collect();
                eprintln!("[up] generator {} residual below tolerance {}: {:?}", k, tolerance, prof);
            }
            return Err(OverconvError::InconsistentSolve(k));
        }
        for i in 0..dim {
            b.set(i, k, coeffs[i]);
        }
    }
    // A[.][j] = (sum_k transform[j][k] B[.][k]) / p^{tr_pow_j}
    let transform = basis.staircase.transform.as_ref().expect("tracked staircase");
    let mut tmat = Mat::zero(dim, nraw);
    for (j, t) in transform.iter().enumerate() {
        for (k, &c) in t.iter().enumerate() {
            tmat.set(j, k, c);
        }
    }
    let bt = b.mul(&zn, &tmat.transpose());
    let mut a = Mat::zero(dim, dim);
    for j in 0..dim {
        let pw = basis.staircase.tr_pows[j];
        let pv = p.pow(pw);
        for i in 0..dim {
            let x = bt.at(i, j);
            if pw == 0 {
                a.set(i, j, x);
            } else {
                if x % pv != 0 {
                    // entry is known only mod p^m; divisibility can fail in the
                    // lost digits, which stay within the certified tolerance
                    let v = {
                        let mut v = 0;
                        let mut c = x;
                        while c % p == 0 && v < pw {
                            c /= p;
                            v += 1;
                        }
                        v
                    };
                    if v < pw && !residual_ok(p, ctx.m, &[x], ctx.m.saturating_sub(loss)) {
                        return Err(OverconvError::SaturationMismatch);
                    }
                    a.set(i, j, x / pv);
                } else {
                    a.set(i, j, x / pv);
                }
            }
        }
    }
    Ok(UpMatrix { a, certified_digits: ctx.m.saturating_sub(loss) })
}

/// Ordinary projector in compressed form: e = T^t M0 S with M0 = e_r C^{-2^kpow},
/// T spanning the ordinary subspace, C = U_p restricted to it, and
/// S = T-coordinates of U_p^{2^kpow}.
pub struct OrdinaryProjector {
    pub t_rows: Mat,
    pub c: Mat,
    pub m0: Mat,
    pub s: Mat,
    pub rank: usize,
    pub exponent_s: u32,
    pub certified_digits: u32,
}

impl OrdinaryProjector {
    pub fn apply(&self, zn: &Zn, v: &[u64]) -> Vec<u64> {
        let sv = self.s.mul_vec(zn, v);
        let msv = self.m0.mul_vec(zn, &sv);
        let mut out = vec![0u64; self.t_rows.cols];
        for (i, &c) in msv.iter().enumerate() {
            if c != 0 {
                let cm = zn.to_mont(c);
                let row = self.t_rows.row(i);
                for (o, &t) in out.iter_mut().zip(row.iter()) {
                    *o = zn.add(*o, zn.mul_mont_plain(cm, t));
                }
            }
        }
        out
    }

    /// T-coordinates of e * v.
    pub fn apply_t(&self, zn: &Zn, v: &[u64]) -> Vec<u64> {
        let sv = self.s.mul_vec(zn, v);
        self.m0.mul_vec(zn, &sv)
    }

    /// Expand T-coordinates back to Katz coordinates.
    pub fn t_to_coords(&self, zn: &Zn, wt: &[u64]) -> Vec<u64> {
        let mut out = vec![0u64; self.t_rows.cols];
        for (i, &c) in wt.iter().enumerate() {
            if c != 0 {
                let cm = zn.to_mont(c);
                let row = self.t_rows.row(i);
                for (o, &t) in out.iter_mut().zip(row.iter()) {
                    *o = zn.add(*o, zn.mul_mont_plain(cm, t));
                }
            }
        }
        out
    }

    pub fn full_matrix(&self, zn: &Zn) -> Mat {
        let ms = self.m0.mul(zn, &self.s);
        self.t_rows.transpose().mul(zn, &ms)
    }
}

/// Compute the ordinary projector from the U_p matrix.
pub fn ordinary_projector(
    ctx: &PadicContext,
    up: &UpMatrix,
) -> Result<OrdinaryProjector, OverconvError> {
    let zn = ctx.zn().clone();
    let p = ctx.p;
    let m = ctx.m;
    let dim = up.a.rows;
    let digits = up.certified_digits;
    // non-ordinary slopes are >= 1/(p+1) per U_p application
    let needed = u64::from(m) * (p + 1) + 16;
    let mut kpow = 1u32;
    while (1u64 << kpow) < needed {
        kpow += 1;
    }
    let mut b = up.a.clone();
    for _ in 0..kpow {
        b = b.mul(&zn, &b);
    }
    loop {
        let bt = b.transpose();
        let bt_rows: Vec<Vec<u64>> = (0..bt.rows).map(|i| bt.row(i).to_vec()).collect();
        let ech = echelonize(&zn, p, m, &bt_rows);
        let mut r = 0usize;
        let mut clean = true;
        for &pv in ech.pivot_vals.iter() {
            if pv == 0 {
                r += 1;
            } else if pv < digits.saturating_sub(2) {
                clean = false;
                break;
            }
        }
        if !clean {
            b = b.mul(&zn, &b);
            kpow += 1;
            if kpow > 64 {
                return Err(OverconvError::ProjectorUnstable);
            }
            continue;
        }
        let mut t_rows = Mat::zero(r, dim);
        let mut ri = 0;
        for (i, row) in ech.rows.iter().enumerate() {
            if ech.pivot_vals[i] == 0 {
                for (j, &x) in row.iter().enumerate() {
                    t_rows.data[ri * dim + j] = x;
                }
                ri += 1;
            }
        }
        let t_ech_rows: Vec<Vec<u64>> = (0..r).map(|i| t_rows.row(i).to_vec()).collect();
        let t_ech = echelonize(&zn, p, m, &t_ech_rows);
        let solve_t = |v: &[u64]| -> Option<Vec<u64>> {
            let (c, res) = t_ech.reduce(&zn, p, v);
            if !residual_ok(p, m, &res, digits.saturating_sub(2)) {
                return None;
            }
            let mut out = vec![0u64; r];
            for (i, &cc) in c.iter().enumerate() {
                if cc != 0 {
                    let cm = zn.to_mont(cc);
                    for (k, &t) in t_ech.transform[i].iter().enumerate() {
                        if t != 0 {
                            out[k] = zn.add(out[k], zn.mul_mont_plain(cm, t));
                        }
                    }
                }
            }
            Some(out)
        };
        let mut c_mat = Mat::zero(r, r);
        let mut ok = true;
        for i in 0..r {
            let img = up.a.mul_vec(&zn, t_rows.row(i));
            match solve_t(&img) {
                Some(col) => {
                    for k in 0..r {
                        c_mat.set(k, i, col[k]);
                    }
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            b = b.mul(&zn, &b);
            kpow += 1;
            if kpow > 64 {
                return Err(OverconvError::ProjectorUnstable);
            }
            continue;
        }
        let Some(c_inv) = c_mat.inverse(&zn, p) else {
            b = b.mul(&zn, &b);
            kpow += 1;
            if kpow > 64 {
                return Err(OverconvError::ProjectorUnstable);
            }
            continue;
        };
        // e_r = lim C^{(p^d - 1) p^s}, escalating d over residue degrees; accept
        // only a stabilized AND idempotent limit (the power map can have
        // non-idempotent Teichmüller fixed points when eigenvalues live in a
        // larger residue field than p^d)
        let mut er = None;
        let mut exponent_s = 0;
        'outer: for d in [1u32, 2, 3, 4, 6, 12] {
            let q1 = pow_u64_sat(p, d).saturating_sub(1);
            let mut curm = c_mat.pow(&zn, q1);
            for s in 0..(m + 6) {
                let next = curm.pow(&zn, p);
                if next == curm {
                    let sq = curm.mul(&zn, &curm);
                    if mats_close(&zn, p, m, &sq, &curm, digits.saturating_sub(1)) {
                        er = Some(curm);
                        exponent_s = s;
                        break 'outer;
                    }
                    break; // stabilized but not idempotent: escalate d
                }
                curm = next;
            }
        }
        let Some(er) = er else {
            return Err(OverconvError::ProjectorUnstable);
        };
        let mut c_inv_pow = c_inv.clone();
        for _ in 0..kpow {
            c_inv_pow = c_inv_pow.mul(&zn, &c_inv_pow);
        }
        let m0 = er.mul(&zn, &c_inv_pow);
        let mut s_mat = Mat::zero(r, dim);
        let mut sok = true;
        for j in 0..dim {
            let col: Vec<u64> = (0..dim).map(|i| b.at(i, j)).collect();
            match solve_t(&col) {
                Some(sc) => {
                    for i in 0..r {
                        s_mat.set(i, j, sc[i]);
                    }
                }
                None => {
                    sok = false;
                    break;
                }
            }
        }
        if !sok {
            b = b.mul(&zn, &b);
            kpow += 1;
            if kpow > 64 {
                return Err(OverconvError::ProjectorUnstable);
            }
            continue;
        }
        let proj = OrdinaryProjector {
            t_rows,
            c: c_mat,
            m0,
            s: s_mat,
            rank: r,
            exponent_s,
            certified_digits: digits,
        };
        // idempotency certificate: M0 (S T^t) M0 = M0 and e U_p = U_p e
        let st = proj.s.mul(&zn, &proj.t_rows.transpose());
        let lhs = proj.m0.mul(&zn, &st).mul(&zn, &proj.m0);
        if std::env::var("LP3_DEBUG_PROJ").is_ok() {
            let depth = lhs
                .data
                .iter()
                .zip(proj.m0.data.iter())
                .map(|(&a, &b)| {
                    let d = zn.sub(a, b);
                    if d == 0 {
                        m
                    } else {
                        let mut v = 0;
                        let mut c = d;
                        while c % p == 0 && v < m {
                            c /= p;
                            v += 1;
                        }
                        v
                    }
                })
                .min()
                .unwrap_or(m);
            eprintln!(
                "[proj] rank {} kpow {} exp_s {} digits {} idem depth {}",
                r, kpow, exponent_s, digits, depth
            );
        }
        if !mats_close(&zn, p, m, &lhs, &proj.m0, digits.saturating_sub(2)) {
            return Err(OverconvError::ProjectorNotIdempotent);
        }
        let e_full = proj.full_matrix(&zn);
        let ea = e_full.mul(&zn, &up.a);
        let ae = up.a.mul(&zn, &e_full);
        if !mats_close(&zn, p, m, &ea, &ae, digits.saturating_sub(2)) {
            return Err(OverconvError::ProjectorNotIdempotent);
        }
        return Ok(proj);
    }
}

fn pow_u64_sat(p: u64, d: u32) -> u64 {
    let mut acc = 1u64;
    for _ in 0..d {
        acc = acc.saturating_mul(p);
        if acc > 1 << 62 {
            return 1 << 62;
        }
    }
    acc
}

pub fn mats_close(zn: &Zn, p: u64, m: u32, a: &Mat, b: &Mat, digits: u32) -> bool {
    a.data.iter().zip(b.data.iter()).all(|(&x, &y)| {
        let d = zn.sub(x, y);
        residual_ok(p, m, &[d], digits)
    })
}

/// The matrix of T_l (or U_l for l | level) on the ordinary image, acting on
/// T-coordinates.
pub fn hecke_on_ordinary(
    ctx: &PadicContext,
    basis: &KatzBasis,
    proj: &OrdinaryProjector,
    l: u64,
) -> Result<Mat, OverconvError> {
    let zn = ctx.zn().clone();
    let p = ctx.p;
    let m = ctx.m;
    let r = proj.rank;
    let prefix = basis.q_solve;
    let series: Vec<Vec<u64>> = (0..r)
        .map(|i| basis.coords_to_series(&zn, proj.t_rows.row(i), prefix))
        .collect();
    let ech = echelonize(&zn, p, m, &series);
    // pivots must sit low enough that T_l images at prefix/l still reach them
    let max_pivot = ech.pivot_cols.iter().copied().max().unwrap_or(0);
    if (max_pivot + 1) * l as usize >= prefix {
        return Err(OverconvError::PrefixExhausted);
    }
    let twist = if basis.level % l == 0 {
        0
    } else {
        ctx.scalar(&basis.chi.value_in(ctx, l)?)
    };
    let out_len = prefix / l as usize;
    let mut mat = Mat::zero(r, r);
    for j in 0..r {
        let img = crate::spaces::hecke_tl(&zn, &series[j], l, twist, out_len);
        let (c, res) = ech.reduce(&zn, p, &img);
        if !residual_ok(p, m, &res, proj.certified_digits.saturating_sub(2)) {
            return Err(OverconvError::InconsistentSolve(j));
        }
        for (i, &cc) in c.iter().enumerate() {
            if cc != 0 {
                let cm = zn.to_mont(cc);
                for (k, &t) in ech.transform[i].iter().enumerate() {
                    if t != 0 {
                        let v = zn.mul_mont_plain(cm, t);
                        mat.set(k, j, zn.add(mat.at(k, j), v));
                    }
                }
            }
        }
    }
    Ok(mat)
}

/// Minimal polynomial of `op` on the cyclic subspace generated by v.
fn cyclic_min_poly(zn: &Zn, p: u64, m: u32, op: &Mat, v: &[u64]) -> Vec<u64> {
    let r = v.len();
    let mut krylov: Vec<Vec<u64>> = vec![v.to_vec()];
    let mut st = Staircase::new(r, false);
    let _ = st.insert(zn, p, m, v, m.saturating_sub(2));
    loop {
        let last = krylov.last().unwrap();
        let next = op.mul_vec(zn, last);
        match st.insert(zn, p, m, &next, m.saturating_sub(2)) {
            InsertOutcome::Added(_) if krylov.len() < r => {
                krylov.push(next);
            }
            _ => {
                let ech = echelonize(zn, p, m, &krylov);
                let (c, _res) = ech.reduce(zn, p, &next);
                let mut coeffs = vec![0u64; krylov.len() + 1];
                for (i, &cc) in c.iter().enumerate() {
                    if cc != 0 {
                        let cm = zn.to_mont(cc);
                        for (k, &t) in ech.transform[i].iter().enumerate() {
                            coeffs[k] = zn.add(coeffs[k], zn.mul_mont_plain(cm, t));
                        }
                    }
                }
                let k = krylov.len();
                let mut poly = vec![0u64; k + 1];
                poly[k] = 1;
                for i in 0..k {
                    poly[i] = zn.neg(coeffs[i]);
                }
                return poly;
            }
        }
    }
}

/// Synthetic division of poly by (x - a): (quotient, remainder).
fn divide_linear(zn: &Zn, poly: &[u64], a: u64) -> (Vec<u64>, u64) {
    let n = poly.len();
    debug_assert!(n >= 2);
    let am = zn.to_mont(a);
    let mut q = vec![0u64; n - 1];
    let mut carry = 0u64;
    for i in (1..n).rev() {
        carry = zn.add(poly[i], zn.mul_mont_plain(am, carry));
        q[i - 1] = carry;
    }
    let rem = zn.add(poly[0], zn.mul_mont_plain(am, carry));
    (q, rem)
}

/// Divide out (x - a)^mult from poly; returns (quotient, multiplicity found).
/// The multiplicity may reach the full degree (a generalized eigenspace can
/// fill the whole ordinary space in the degenerate split-CM situation).
fn deflate_poly(zn: &Zn, p: u64, m: u32, poly: &[u64], a: u64, digits: u32) -> (Vec<u64>, u32) {
    let mut cur = poly.to_vec();
    let mut mult = 0u32;
    while cur.len() >= 2 {
        let (q, rem) = divide_linear(zn, &cur, a);
        if !residual_ok(p, m, &[rem], digits) {
            break;
        }
        cur = q;
        mult += 1;
    }
    (cur, mult)
}

/// Projection of w (T-coordinates) onto the generalized eigenspace of the
/// target eigenvalue for one operator, by min-poly deflation. With
/// `allow_loss`, a separation factor of positive valuation v is divided out
/// anyway at the cost of v digits (the Table-1 degenerate fallback); the loss
/// is returned.
pub fn project_operator(
    ctx: &PadicContext,
    op: &Mat,
    w: &[u64],
    target: u64,
    op_label: u64,
    digits: u32,
    allow_loss: bool,
) -> Result<(Vec<u64>, u32, u32), OverconvError> {
    let zn = ctx.zn().clone();
    let p = ctx.p;
    let m = ctx.m;
    if w.iter().all(|&x| x == 0) {
        return Ok((w.to_vec(), 0, 0));
    }
    let mu = cyclic_min_poly(&zn, p, m, op, w);
    let (quot, mult) = deflate_poly(&zn, p, m, &mu, target, digits);
    if mult == 0 {
        return Ok((vec![0u64; w.len()], 0, 0));
    }
    // P(op) w / P(target)
    let mut acc = vec![0u64; w.len()];
    let mut curv = w.to_vec();
    let mut p_at = 0u64;
    let mut tpow = 1u64;
    for (i, &c) in quot.iter().enumerate() {
        if c != 0 {
            let cm = zn.to_mont(c);
            for (dst, &src) in acc.iter_mut().zip(curv.iter()) {
                *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
            }
            p_at = zn.add(p_at, zn.mul(c, tpow));
        }
        if i + 1 < quot.len() {
            curv = op.mul_vec(&zn, &curv);
            tpow = zn.mul(tpow, target);
        }
    }
    let mut loss = 0u32;
    if p_at % p == 0 {
        if !allow_loss {
            return Err(OverconvError::NonUnitSeparation(op_label));
        }
        while p_at % p == 0 && loss < m {
            p_at /= p;
            loss += 1;
        }
        if p_at == 0 || loss >= digits {
            return Err(OverconvError::NonUnitSeparation(op_label));
        }
        // divide the vector by p^loss exactly where possible; entries that are
        // not divisible live entirely in the lost digits
        let pv = p.pow(loss);
        for x in acc.iter_mut() {
            *x /= pv;
        }
    }
    let inv = crate::qseries::modn_inv_pub(zn.n, p_at);
    let im = zn.to_mont(inv);
    for x in acc.iter_mut() {
        *x = zn.mul_mont_plain(im, *x);
    }
    Ok((acc, mult, loss))
}

/// Project onto the joint generalized eigenspace of an eigensystem, given as
/// (label, operator on T-coordinates, target eigenvalue). Operators that fail
/// to separate at unit strength are skipped (another operator separates), and
/// the result is certified by (X - a)^2 annihilation for every operator.
pub struct ProjectionOutcome {
    pub vector: Vec<u64>,
    pub multiplicities: Vec<(u64, u32)>,
    pub lossy_ops: Vec<(u64, u32)>,
    pub total_loss: u32,
    pub degenerate: bool,
}

pub fn project_eigenspace(
    ctx: &PadicContext,
    ops: &[(u64, Mat, u64)],
    w: &[u64],
    digits: u32,
) -> Result<ProjectionOutcome, OverconvError> {
    let zn = ctx.zn().clone();
    let mut cur = w.to_vec();
    let mut mults = Vec::new();
    let mut lossy = Vec::new();
    let mut total_loss = 0u32;
    let mut degenerate = false;
    for (label, op, target) in ops {
        match project_operator(ctx, op, &cur, *target, *label, digits.saturating_sub(total_loss), true) {
            Ok((next, mult, loss)) => {
                cur = next;
                mults.push((*label, mult));
                if mult > 1 {
                    degenerate = true;
                }
                if loss > 0 {
                    lossy.push((*label, loss));
                    total_loss += loss;
                }
            }
            Err(OverconvError::NonUnitSeparation(l)) => {
                lossy.push((l, u32::MAX));
                degenerate = true;
            }
            Err(e) => return Err(e),
        }
    }
    let digits = digits.saturating_sub(total_loss);
    // certificate: every operator annihilates with (X - a)^dim (the degenerate
    // split-CM ladder can fill the whole space)
    for (label, op, target) in ops {
        let mut v = cur.clone();
        for _ in 0..op.rows.min(8) {
            let mut next = op.mul_vec(&zn, &v);
            for (x, &c) in next.iter_mut().zip(v.iter()) {
                *x = zn.sub(*x, zn.mul(*target, c));
            }
            v = next;
        }
        let ok = v.iter().all(|&x| {
            let mut c = x;
            let mut val = 0;
            while c != 0 && c % ctx.p == 0 && val < digits {
                c /= ctx.p;
                val += 1;
            }
            x == 0 || val >= digits.min(ctx.m)
        });
        if !ok {
            return Err(OverconvError::NonUnitSeparation(*label));
        }
    }
    Ok(ProjectionOutcome { vector: cur, multiplicities: mults, lossy_ops: lossy, total_loss, degenerate })
}

/// Inputs for the p-adic iterated integral on a prepared Katz space.
/// The f coefficients and h series must extend to p * q_solve: the integrand
/// d^{-1} f^{[p]} h_alpha is only 1/(p+1)-overconvergent, so one U_p is applied
/// on q-expansions before solving, and the projection is rescaled by the U_p
/// eigenvalue of g*_alpha.
pub struct IntegralInputs {
    /// a_1.. coefficients of the weight-2 form f (exact integers)
    pub f_coeffs: Vec<i64>,
    /// full series of h (a_0 included) at p * q_solve length, already
    /// stabilized when p does not divide its level
    pub h_alpha: Vec<u64>,
    /// the g*-eigensystem: (ell, T_ell-or-U_ell eigenvalue) for separating primes
    pub g_star_system: Vec<(u64, u64)>,
    /// U_p eigenvalue of g*_alpha
    pub g_star_up: u64,
}

pub struct IntegralResult {
    /// a_1 coefficient of the projected ordinary form
    pub value: u64,
    pub certified_digits: u32,
    pub ordinary_rank: usize,
    pub degenerate: bool,
    pub projection_loss: u32,
    pub multiplicities: Vec<(u64, u32)>,
    pub lossy_ops: Vec<(u64, u32)>,
}

/// Phi = e_ord(d^{-1} f^{[p]} . h_alpha), projected to the g*_alpha generalized
/// eigenspace; returns a_1 of the projection (γ-normalized by a_1(g*_alpha)=1).
pub fn iterated_integral(
    ctx: &PadicContext,
    basis: &KatzBasis,
    up: &UpMatrix,
    proj: &OrdinaryProjector,
    inputs: &IntegralInputs,
) -> Result<IntegralResult, OverconvError> {
    let zn = ctx.zn().clone();
    let p = ctx.p;
    let len = basis.q_solve;
    let big = len * p as usize;
    if inputs.h_alpha.len() < big {
        return Err(OverconvError::PrefixExhausted);
    }
    // d^{-1} f^{[p]}: strip p-divisible indices and divide by n
    let mut df = vec![0u64; big];
    for (n0, &c) in inputs.f_coeffs.iter().enumerate() {
        let n = n0 + 1;
        if n >= big {
            break;
        }
        if n as u64 % p == 0 {
            continue;
        }
        let cinv = crate::qseries::modn_inv_pub(zn.n, n as u64 % zn.n);
        df[n] = zn.mul(zn.from_i64(c), cinv);
    }
    let phi_big = dense::mul_trunc(&zn, &df, &inputs.h_alpha[..big], big);
    // one U_p restores p/(p+1)-overconvergence; undone later through the
    // U_p eigenvalue of the target eigensystem
    let phi = dense::u_op(&phi_big, p);
    let tolerance = up.certified_digits.saturating_sub(2);
    let coords = solve_in_basis(ctx, basis, &phi, tolerance)?;
    let w_t = proj.apply_t(&zn, &coords);
    // operator list: U_p first, then the separating Hecke operators
    let mut ops: Vec<(u64, Mat, u64)> = vec![(p, proj.c.clone(), inputs.g_star_up)];
    for &(l, a) in &inputs.g_star_system {
        if l == p {
            continue;
        }
        let t = hecke_on_ordinary(ctx, basis, proj, l)?;
        ops.push((l, t, a));
    }
    let digits = proj.certified_digits.saturating_sub(1);
    let outcome = project_eigenspace(ctx, &ops, &w_t, digits)?;
    // back to Katz coordinates, then to a short q-expansion prefix
    let coords_fin = proj.t_to_coords(&zn, &outcome.vector);
    let series = basis.coords_to_series(&zn, &coords_fin, 4.min(len));
    // undo the initial U_p through the eigenvalue on the target eigenspace
    let alpha_inv = crate::qseries::modn_inv_pub(zn.n, inputs.g_star_up);
    let value = zn.mul(series[1], alpha_inv);
    let certified = proj
        .certified_digits
        .saturating_sub(outcome.total_loss)
        .saturating_sub(1);
    Ok(IntegralResult {
        value,
        certified_digits: certified,
        ordinary_rank: proj.rank,
        degenerate: outcome.degenerate,
        projection_loss: outcome.total_loss,
        multiplicities: outcome.multiplicities,
        lossy_ops: outcome.lossy_ops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::theta::ImagQuadField;

    /// The (11, chi_{-11}, p=5) weight-one Katz space: small enough for tests.
    fn small_basis() -> (PadicContext, KatzBasis) {
        let ctx = PadicContext::plain(5, 8).unwrap();
        let chi = DirichletCharacter::kronecker_of(-11);
        let basis = katz_basis(&ctx, 11, &chi).unwrap();
        (ctx, basis)
    }

    fn theta_stab_coords(ctx: &PadicContext, basis: &KatzBasis) -> Vec<u64> {
        let zn = ctx.zn();
        let k = ImagQuadField::new(-11).unwrap();
        let len = basis.q_solve;
        let th = k.theta_trivial_coeffs(len - 1);
        let half = ctx.invert(&ctx.from_u64(2)).unwrap();
        let mut g = vec![0u64; len];
        g[0] = ctx.scalar(&half);
        for (n, &c) in th.iter().enumerate() {
            g[n + 1] = zn.from_i64(c);
        }
        let ga = crate::arith::stabilize::stabilized_series(ctx, &g, &ctx.one(), 5);
        solve_in_basis(ctx, basis, &ga, 4).unwrap()
    }

    #[test]
    fn katz_block_rule() {
        assert_eq!(block_count(5, 10), 16);
        assert_eq!(block_count(13, 10), 13);
    }

    #[test]
    fn up_eigen_on_stabilized_theta() {
        let (ctx, basis) = small_basis();
        let zn = ctx.zn();
        let up = up_matrix(&ctx, &basis).unwrap();
        let coords = theta_stab_coords(&ctx, &basis);
        let img = up.a.mul_vec(zn, &coords);
        // U_5 g_alpha = 1 * g_alpha (double root alpha = beta = 1 at p = 5 split)
        for (x, y) in img.iter().zip(coords.iter()) {
            let d = zn.sub(*x, *y);
            assert!(residual_ok(5, 8, &[d], 4), "U_p eigen relation fails: {} vs {}", x, y);
        }
        let zero = vec![0u64; basis.dim()];
        assert!(up.a.mul_vec(zn, &zero).iter().all(|&x| x == 0));
    }

    #[test]
    fn projector_laws_and_fixed_eigenform() {
        let (ctx, basis) = small_basis();
        let zn = ctx.zn();
        let up = up_matrix(&ctx, &basis).unwrap();
        let proj = ordinary_projector(&ctx, &up).unwrap();
        assert!(proj.rank >= 1);
        let coords = theta_stab_coords(&ctx, &basis);
        let projected = proj.apply(zn, &coords);
        for (x, y) in projected.iter().zip(coords.iter()) {
            let d = zn.sub(*x, *y);
            assert!(residual_ok(5, 8, &[d], 3), "projection must fix the eigenform");
        }
    }

    #[test]
    fn diagonal_projector_oracle() {
        let ctx = PadicContext::plain(5, 8).unwrap();
        let mut a = Mat::zero(2, 2);
        a.set(0, 0, 2);
        a.set(1, 1, 5);
        let up = UpMatrix { a, certified_digits: 8 };
        let proj = ordinary_projector(&ctx, &up).unwrap();
        assert_eq!(proj.rank, 1);
        let e = proj.full_matrix(ctx.zn());
        assert_eq!(e.at(0, 0), 1);
        assert_eq!(e.at(0, 1), 0);
        assert_eq!(e.at(1, 0), 0);
        assert_eq!(e.at(1, 1), 0);
    }

    #[test]
    fn hecke_commute_and_eigenvalue() {
        let (ctx, basis) = small_basis();
        let zn = ctx.zn();
        let up = up_matrix(&ctx, &basis).unwrap();
        let proj = ordinary_projector(&ctx, &up).unwrap();
        let t3 = hecke_on_ordinary(&ctx, &basis, &proj, 3).unwrap();
        let t2 = hecke_on_ordinary(&ctx, &basis, &proj, 2).unwrap();
        let ab = t2.mul(zn, &t3);
        let ba = t3.mul(zn, &t2);
        assert!(mats_close(zn, 5, 6, &ab, &ba, 3), "Hecke operators must commute");
        let coords = theta_stab_coords(&ctx, &basis);
        let wt = proj.apply_t(zn, &coords);
        let img = t3.mul_vec(zn, &wt);
        for (x, y) in img.iter().zip(wt.iter()) {
            let d = zn.sub(*x, zn.mul(2, *y));
            assert!(residual_ok(5, 8, &[d], 3), "T_3 eigenvalue 2 expected");
        }
    }

    #[test]
    fn deflation_idempotent() {
        // inert case (11, chi_{-11}, p = 7): theta roots are +1/-1, separation
        // is clean and the projection is an honest idempotent
        let ctx = PadicContext::plain(7, 8).unwrap();
        let chi = DirichletCharacter::kronecker_of(-11);
        let basis = katz_basis(&ctx, 11, &chi).unwrap();
        let zn = ctx.zn();
        let up = up_matrix(&ctx, &basis).unwrap();
        let proj = ordinary_projector(&ctx, &up).unwrap();
        let t2 = hecke_on_ordinary(&ctx, &basis, &proj, 2).unwrap();
        let t3 = hecke_on_ordinary(&ctx, &basis, &proj, 3).unwrap();
        let t5 = hecke_on_ordinary(&ctx, &basis, &proj, 5).unwrap();
        let u11 = hecke_on_ordinary(&ctx, &basis, &proj, 11).unwrap();
        let t13 = hecke_on_ordinary(&ctx, &basis, &proj, 13).unwrap();
        // theta eigensystem at p=7: U_7 -> alpha = 1 (chosen root of X^2 - 1)
        let ops = vec![
            (7u64, proj.c.clone(), 1u64),
            (2, t2, 0),
            (3, t3, 2),
            (5, t5, 2),
            (11, u11, 1),
            (13, t13, 0),
        ];
        let mut v = vec![0u64; basis.dim()];
        for (i, x) in v.iter_mut().enumerate() {
            *x = (i as u64 * 2654435761 + 17) % zn.n;
        }
        let wt = proj.apply_t(zn, &v);
        let out1 = project_eigenspace(&ctx, &ops, &wt, 5).unwrap();
        let p1 = out1.vector.clone();
        let out2 = project_eigenspace(&ctx, &ops, &p1, 5).unwrap();
        let p2 = out2.vector.clone();
        let good = 5u32.saturating_sub(out1.total_loss + out2.total_loss).max(2);
        for (x, y) in p1.iter().zip(p2.iter()) {
            let d = zn.sub(*x, *y);
            assert!(residual_ok(7, 8, &[d], good), "projection must be idempotent");
        }
        // the projection lands on the stabilized theta line
        let k = ImagQuadField::new(-11).unwrap();
        let len = basis.q_solve;
        let th = k.theta_trivial_coeffs(len - 1);
        let half = ctx.invert(&ctx.from_u64(2)).unwrap();
        let mut g = vec![0u64; len];
        g[0] = ctx.scalar(&half);
        for (n, &c) in th.iter().enumerate() {
            g[n + 1] = zn.from_i64(c);
        }
        // alpha = 1, beta = -1: g_alpha = g + V g... beta = -1 so subtracting
        // beta V g adds V g
        let ga = crate::arith::stabilize::stabilized_series(&ctx, &g, &ctx.from_i64(-1), 7);
        let coords = solve_in_basis(&ctx, &basis, &ga, 4).unwrap();
        let theta_t = proj.apply_t(zn, &coords);
        let kpos = theta_t.iter().position(|&x| x % 7 != 0).unwrap();
        let c = zn.mul(p1[kpos], crate::qseries::modn_inv_pub(zn.n, theta_t[kpos]));
        for (x, y) in p1.iter().zip(theta_t.iter()) {
            let d = zn.sub(*x, zn.mul(c, *y));
            assert!(residual_ok(7, 8, &[d], good), "projection lands on the theta line");
        }
        // a vector in a different eigenspace projects to ~0: deflate away theta
        let (q, _) = deflate_poly(zn, 7, 8, &[zn.neg(2), 1], 2, 4);
        assert_eq!(q, vec![1]);
    }
}
