//! Dense matrices over Z/p^m on raw u64 residues: blocked Montgomery products,
//! valuation-pivoted echelon forms with transformation tracking, and staircase
//! solves. This is the engine under the U_p matrix and the ordinary projector.

use crate::zmod::Zn;
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u64>,
}

impl Mat {
    pub fn zero(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zero(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: u64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zero(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.at(i, j);
            }
        }
        t
    }

    /// C = self * other, parallel over row stripes, Montgomery on the left factor.
    pub fn mul(&self, zn: &Zn, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        // sums of Montgomery products must not overflow u64
        assert!(64 - zn.n.leading_zeros() as usize + 64 - other.rows.leading_zeros() as usize <= 63);
        let bt = other.transpose();
        let n = self.cols;
        let mut out = Mat::zero(self.rows, other.cols);
        let a_mont: Vec<u64> = self.data.iter().map(|&x| zn.to_mont(x)).collect();
        out.data
            .par_chunks_mut(other.cols)
            .enumerate()
            .for_each(|(i, orow)| {
                let arow = &a_mont[i * n..(i + 1) * n];
                for (j, o) in orow.iter_mut().enumerate() {
                    let brow = &bt.data[j * n..(j + 1) * n];
                    let mut acc0 = 0u64;
                    let mut acc1 = 0u64;
                    let mut k = 0;
                    while k + 1 < n {
                        acc0 += zn.mul_mont_plain(arow[k], brow[k]);
                        acc1 += zn.mul_mont_plain(arow[k + 1], brow[k + 1]);
                        k += 2;
                    }
                    if k < n {
                        acc0 += zn.mul_mont_plain(arow[k], brow[k]);
                    }
                    *o = (acc0 + acc1) % zn.n;
                }
            });
        out
    }

    pub fn mul_vec(&self, zn: &Zn, v: &[u64]) -> Vec<u64> {
        assert_eq!(self.cols, v.len());
        let vm: Vec<u64> = v.iter().map(|&x| zn.to_mont(x)).collect();
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut acc = 0u64;
                for k in 0..self.cols {
                    acc = (acc + zn.mul_mont_plain(vm[k], row[k])) % zn.n;
                }
                acc
            })
            .collect()
    }

    /// self^e by binary powering (square matrices).
    pub fn pow(&self, zn: &Zn, mut e: u64) -> Mat {
        assert_eq!(self.rows, self.cols);
        let mut acc = Mat::identity(self.rows);
        let mut base = self.clone();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(zn, &base);
            }
            base = base.mul(zn, &base);
            e >>= 1;
        }
        acc
    }

    pub fn max_valuation_deficit(&self, p: u64, m: u32) -> u32 {
        // smallest valuation among entries (m if all zero)
        let mut min_v = m;
        for &x in &self.data {
            if x == 0 {
                continue;
            }
            let mut v = 0u32;
            let mut c = x;
            while c % p == 0 {
                c /= p;
                v += 1;
            }
            min_v = min_v.min(v);
            if min_v == 0 {
                break;
            }
        }
        min_v
    }

    /// Inverse of a matrix that is invertible mod p (unit pivots exist).
    pub fn inverse(&self, zn: &Zn, p: u64) -> Option<Mat> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Mat::identity(n);
        for col in 0..n {
            // find unit pivot
            let mut piv = None;
            for r in col..n {
                if a.at(r, col) % p != 0 {
                    piv = Some(r);
                    break;
                }
            }
            let piv = piv?;
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                    inv.data.swap(col * n + j, piv * n + j);
                }
            }
            let pinv = crate::qseries::modn_inv_pub(zn.n, a.at(col, col));
            let pm = zn.to_mont(pinv);
            for j in 0..n {
                a.set(col, j, zn.mul_mont_plain(pm, a.at(col, j)));
                inv.set(col, j, zn.mul_mont_plain(pm, inv.at(col, j)));
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.at(r, col);
                if f == 0 {
                    continue;
                }
                let fm = zn.to_mont(f);
                for j in 0..n {
                    let s = zn.mul_mont_plain(fm, a.at(col, j));
                    a.set(r, j, zn.sub(a.at(r, j), s));
                    let s2 = zn.mul_mont_plain(fm, inv.at(col, j));
                    inv.set(r, j, zn.sub(inv.at(r, j), s2));
                }
            }
        }
        Some(inv)
    }
}

fn val_p(p: u64, m: u32, x: u64) -> u32 {
    if x == 0 {
        return m;
    }
    let mut v = 0;
    let mut c = x;
    while c % p == 0 {
        c /= p;
        v += 1;
    }
    v
}

/// Row echelon form with pivoting on minimum p-adic valuation (then lowest
/// column, then lowest row). All eliminations are exact because the global
/// minimum valuation is chosen at each step.
pub struct Echelon {
    /// reduced rows, pivot entry normalized to p^v (unit part 1)
    pub rows: Vec<Vec<u64>>,
    pub pivot_cols: Vec<usize>,
    pub pivot_vals: Vec<u32>,
    /// transform[i] = combination of original rows giving rows[i]
    pub transform: Vec<Vec<u64>>,
    /// rows that reduced to (approximate) zero: (original combination, max valuation reached)
    pub kernel: Vec<(Vec<u64>, u32)>,
    pub loss: u32,
}

pub fn echelonize(zn: &Zn, p: u64, m: u32, input: &[Vec<u64>]) -> Echelon {
    let nrows = input.len();
    let ncols = input.first().map(|r| r.len()).unwrap_or(0);
    let mut work: Vec<Vec<u64>> = input.to_vec();
    let mut trans: Vec<Vec<u64>> = (0..nrows)
        .map(|i| {
            let mut t = vec![0u64; nrows];
            t[i] = 1;
            t
        })
        .collect();
    let mut alive: Vec<usize> = (0..nrows).collect();
    let mut rows = Vec::new();
    let mut pivot_cols = Vec::new();
    let mut pivot_vals = Vec::new();
    let mut transform = Vec::new();
    let mut kernel = Vec::new();
    let mut loss = 0u32;
    loop {
        // global minimum valuation among remaining rows
        let mut best: Option<(u32, usize, usize)> = None; // (val, col, alive-index)
        for (ai, &r) in alive.iter().enumerate() {
            for c in 0..ncols {
                let x = work[r][c];
                if x == 0 {
                    continue;
                }
                let v = val_p(p, m, x);
                match best {
                    None => best = Some((v, c, ai)),
                    Some((bv, bc, _)) => {
                        if v < bv || (v == bv && c < bc) {
                            best = Some((v, c, ai));
                        }
                    }
                }
                if v == 0 {
                    break; // cannot beat valuation 0 in this row at an earlier col? keep scanning cols left of c is done already (c ascending), so break
                }
            }
            if let Some((0, 0, _)) = best {
                break;
            }
        }
        let Some((v, c, ai)) = best else { break };
        let r = alive.swap_remove(ai);
        // normalize unit part of the pivot to 1
        let unit = work[r][c] / p.pow(v);
        let ui = crate::qseries::modn_inv_pub(zn.n, unit);
        let um = zn.to_mont(ui);
        for x in work[r].iter_mut() {
            *x = zn.mul_mont_plain(um, *x);
        }
        for x in trans[r].iter_mut() {
            *x = zn.mul_mont_plain(um, *x);
        }
        // eliminate column c from all other alive rows (exact: v is global min)
        let pivot_row = work[r].clone();
        let pivot_tr = trans[r].clone();
        let pv = p.pow(v);
        for &s in alive.iter() {
            let x = work[s][c];
            if x == 0 {
                continue;
            }
            // digits are lost only when a positive-valuation pivot divides a row
            loss = loss.max(v);
            debug_assert_eq!(x % pv, 0);
            let coeff = x / pv;
            let cm = zn.to_mont(coeff);
            for (dst, &src) in work[s].iter_mut().zip(pivot_row.iter()) {
                *dst = zn.sub(*dst, zn.mul_mont_plain(cm, src));
            }
            let (tdst, tsrc) = (&mut trans[s], &pivot_tr);
            for (dst, &src) in tdst.iter_mut().zip(tsrc.iter()) {
                *dst = zn.sub(*dst, zn.mul_mont_plain(cm, src));
            }
        }
        rows.push(work[r].clone());
        pivot_cols.push(c);
        pivot_vals.push(v);
        transform.push(trans[r].clone());
        if alive.is_empty() {
            break;
        }
    }
    // remaining alive rows are (numerically) zero rows: kernel elements
    for &r in &alive {
        let maxv = work[r]
            .iter()
            .map(|&x| val_p(p, m, x))
            .min()
            .unwrap_or(m);
        kernel.push((trans[r].clone(), maxv));
    }
    // sort echelon rows by pivot column for staircase solving
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| pivot_cols[i]);
    let rows: Vec<Vec<u64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let pivot_cols2: Vec<usize> = order.iter().map(|&i| pivot_cols[i]).collect();
    let pivot_vals: Vec<u32> = order.iter().map(|&i| pivot_vals[i]).collect();
    let transform: Vec<Vec<u64>> = order.iter().map(|&i| transform[i].clone()).collect();
    Echelon { rows, pivot_cols: pivot_cols2, pivot_vals, transform, kernel, loss }
}

impl Echelon {
    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Express v in the echelon row span: returns (coefficients over echelon rows,
    /// residual). Pivots of positive valuation divide exactly or contribute to the
    /// residual. Multi-pass to absorb reintroductions at earlier pivot columns.
    pub fn reduce(&self, zn: &Zn, p: u64, v: &[u64]) -> (Vec<u64>, Vec<u64>) {
        let mut r = v.to_vec();
        let mut coeffs = vec![0u64; self.rows.len()];
        for _pass in 0..8 {
            let mut touched = false;
            for (i, row) in self.rows.iter().enumerate() {
                let c = self.pivot_cols[i];
                if c >= r.len() {
                    continue;
                }
                let x = r[c];
                if x == 0 {
                    continue;
                }
                let pv = p.pow(self.pivot_vals[i]);
                if x % pv != 0 {
                    continue; // pivot cannot clear this entry exactly
                }
                let coeff = x / pv;
                touched = true;
                coeffs[i] = zn.add(coeffs[i], coeff);
                let cm = zn.to_mont(coeff);
                let lim = r.len().min(row.len());
                for k in 0..lim {
                    r[k] = zn.sub(r[k], zn.mul_mont_plain(cm, row[k]));
                }
            }
            if !touched {
                break;
            }
        }
        (coeffs, r)
    }

    /// Coefficients over the ORIGINAL rows: coeffs_over_rows * transform.
    pub fn to_original(&self, zn: &Zn, coeffs: &[u64]) -> Vec<u64> {
        let n = self.transform.first().map(|t| t.len()).unwrap_or(0);
        let mut out = vec![0u64; n];
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let cm = zn.to_mont(c);
            for (o, &t) in out.iter_mut().zip(self.transform[i].iter()) {
                *o = zn.add(*o, zn.mul_mont_plain(cm, t));
            }
        }
        out
    }
}

/// Exact batch echelon with per-row content division, iterated until every
/// retained row has a unit pivot. Eliminations are exact (global-min-valuation
/// pivoting), so each row's loss is exactly the total p-power content it shed.
/// Rows whose content exceeds `noise` are dropped as numerically ambiguous.
pub fn saturated_echelon(zn: &Zn, p: u64, m: u32, input: &[Vec<u64>], noise: u32) -> Staircase {
    let ncols = input.first().map(|r| r.len()).unwrap_or(0);
    // working rows carry (series, transform-over-raws, denominator pow, loss)
    let mut work: Vec<(Vec<u64>, Vec<u64>, u32, u32)> = input
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut t = vec![0u64; input.len()];
            t[i] = 1;
            (r.clone(), t, 0u32, 0u32)
        })
        .collect();
    for _pass in 0..4 {
        let rows: Vec<Vec<u64>> = work.iter().map(|w| w.0.clone()).collect();
        let ech = echelonize(zn, p, m, &rows);
        let mut next: Vec<(Vec<u64>, Vec<u64>, u32, u32)> = Vec::new();
        let mut all_unit = true;
        for (i, row) in ech.rows.iter().enumerate() {
            let content = row
                .iter()
                .filter(|&&x| x != 0)
                .map(|&x| val_p(p, m, x))
                .min()
                .unwrap_or(m);
            // compose the transform over the original raws; the denominator pow
            // aligns fractions, while accuracy loss weighs each contribution by
            // the valuation of its coefficient
            let mut pow = 0u32;
            let mut loss = 0u32;
            let mut t = vec![0u64; input.len()];
            for (k, &c) in ech.transform[i].iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let (_, tk, pk, lk) = &work[k];
                loss = loss.max(lk.saturating_sub(val_p(p, m, c)));
                let target = pow.max(*pk);
                if target > pow {
                    let s = zn.to_mont(p.pow(target - pow));
                    for v in t.iter_mut() {
                        *v = zn.mul_mont_plain(s, *v);
                    }
                    pow = target;
                }
                let cm = zn.to_mont(zn.mul(c, p.pow(target - *pk)));
                for (dst, &src) in t.iter_mut().zip(tk.iter()) {
                    *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
                }
            }
            if content + loss >= noise {
                continue; // numerically-zero or ambiguous row
            }
            let mut r = row.clone();
            if content > 0 {
                all_unit = false;
                let pv = p.pow(content);
                for x in r.iter_mut() {
                    *x /= pv;
                }
            }
            next.push((r, t, pow + content, loss + content));
        }
        work = next;
        if all_unit {
            break;
        }
    }
    // assemble the solving staircase: normalize pivots to 1, sort by pivot
    let mut out = Staircase::new(ncols, true);
    for (r, t, pow, loss) in work {
        let Some(c) = r.iter().position(|&x| x != 0 && x % p != 0) else { continue };
        let ui = crate::qseries::modn_inv_pub(zn.n, r[c]);
        let um = zn.to_mont(ui);
        let mut r2 = r;
        for x in r2.iter_mut() {
            *x = zn.mul_mont_plain(um, *x);
        }
        let mut t2 = t;
        for x in t2.iter_mut() {
            *x = zn.mul_mont_plain(um, *x);
        }
        let pos = out.pivots.partition_point(|&pc| pc < c);
        out.rows.insert(pos, r2);
        out.pivots.insert(pos, c);
        out.losses.insert(pos, loss);
        out.transform.as_mut().unwrap().insert(pos, t2);
        out.tr_pows.insert(pos, pow);
        out.n_inserted += 1;
    }
    out
}

/// Incremental staircase with unit pivots and p-saturation: a reduced row whose
/// entries all carry a common power of p is divided by it (the generators span
/// only a finite-index sublattice of the saturated space), at the cost of that
/// many digits of certainty for the row. Losses are tracked per row.
pub struct Staircase {
    pub ncols: usize,
    pub rows: Vec<Vec<u64>>,
    pub pivots: Vec<usize>,
    /// digits of precision lost to saturation divisions for each row
    pub losses: Vec<u32>,
    /// transform over inserted original rows: row_i = (sum transform[i][k] raw_k) / p^{tr_pow[i]}
    pub transform: Option<Vec<Vec<u64>>>,
    pub tr_pows: Vec<u32>,
    pub n_inserted: usize,
    /// maximum total digits a row may lose before it counts as dependent
    pub loss_budget: u32,
}

pub enum InsertOutcome {
    /// new pivot at the column; row kept after reduction (and possible saturation)
    Added(usize),
    /// row reduced to numerically-zero (valuation >= threshold)
    Dependent,
}

impl Staircase {
    pub fn new(ncols: usize, track: bool) -> Staircase {
        Staircase {
            ncols,
            rows: Vec::new(),
            pivots: Vec::new(),
            losses: Vec::new(),
            transform: if track { Some(Vec::new()) } else { None },
            tr_pows: Vec::new(),
            n_inserted: 0,
            loss_budget: 4,
        }
    }

    pub fn with_budget(mut self, budget: u32) -> Staircase {
        self.loss_budget = budget;
        self
    }

    pub fn max_loss(&self) -> u32 {
        self.losses.iter().copied().max().unwrap_or(0)
    }

    /// Reduce `row` against the staircase, saturate, and adopt it when a pivot
    /// survives above the zero threshold. `raw_id` names the row in the
    /// transform bookkeeping (callers without tracking may pass anything).
    pub fn insert_with_id(
        &mut self,
        zn: &Zn,
        p: u64,
        m: u32,
        raw_id: usize,
        row: &[u64],
        zero_threshold: u32,
    ) -> InsertOutcome {
        debug_assert_eq!(row.len(), self.ncols);
        let mut r = row.to_vec();
        let my_index = raw_id;
        self.n_inserted += 1;
        let mut tr = self.transform.as_ref().map(|_| {
            let mut t = vec![0u64; my_index + 1];
            t[my_index] = 1;
            t
        });
        let mut tr_pow = 0u32;
        let mut inherited_loss = 0u32;
        let mut total_div = 0u32;
        let _ = zero_threshold;
        // reduce; if only a p-divisible residue remains, strip the p-power and
        // reduce again (the saturated vector may be a finer-lattice combination
        // of existing rows). Beyond the cap the residue is indistinguishable
        // from noise in the lost digits and the row counts as dependent.
        loop {
            for i in 0..self.rows.len() {
                let c = self.pivots[i];
                let x = r[c];
                if x == 0 {
                    continue;
                }
                // a lossy row touched with a p-divisible coefficient transfers
                // correspondingly less uncertainty
                inherited_loss = inherited_loss.max(self.losses[i].saturating_sub(val_p(p, m, x)));
                let cm = zn.to_mont(x);
                for (dst, &src) in r.iter_mut().zip(self.rows[i].iter()) {
                    *dst = zn.sub(*dst, zn.mul_mont_plain(cm, src));
                }
                if let (Some(t), Some(ts)) = (tr.as_mut(), self.transform.as_ref()) {
                    // align denominators: t/p^tr_pow - x * ts[i]/p^{tr_pows[i]}
                    let pi = self.tr_pows[i];
                    let target = tr_pow.max(pi);
                    if target > tr_pow {
                        let scale = zn.to_mont(p.pow(target - tr_pow));
                        for v in t.iter_mut() {
                            *v = zn.mul_mont_plain(scale, *v);
                        }
                        tr_pow = target;
                    }
                    let scale_i = p.pow(target - pi);
                    let cm2 = zn.to_mont(zn.mul(x, scale_i));
                    let st = &ts[i];
                    if t.len() < st.len() {
                        t.resize(st.len(), 0);
                    }
                    for (dst, &src) in t.iter_mut().zip(st.iter()) {
                        *dst = zn.sub(*dst, zn.mul_mont_plain(cm2, src));
                    }
                }
            }
            let min_val = r
                .iter()
                .filter(|&&x| x != 0)
                .map(|&x| val_p(p, m, x))
                .min()
                .unwrap_or(m);
            if min_val == 0 {
                break;
            }
            let sat_cap = self
                .loss_budget
                .saturating_sub(inherited_loss + total_div)
                .min(m.saturating_sub(inherited_loss + total_div + 3));
            if min_val > sat_cap {
                return InsertOutcome::Dependent;
            }
            let pv = p.pow(min_val);
            for x in r.iter_mut() {
                *x /= pv;
            }
            tr_pow += min_val;
            total_div += min_val;
        }
        let loss = inherited_loss + total_div;
        if loss > self.loss_budget {
            return InsertOutcome::Dependent;
        }
        let c = r
            .iter()
            .position(|&x| x != 0 && x % p != 0)
            .expect("a unit entry exists after saturation");
        let ui = crate::qseries::modn_inv_pub(zn.n, r[c]);
        let um = zn.to_mont(ui);
        for x in r.iter_mut() {
            *x = zn.mul_mont_plain(um, *x);
        }
        if let Some(t) = tr.as_mut() {
            for x in t.iter_mut() {
                *x = zn.mul_mont_plain(um, *x);
            }
        }
        // clear this pivot column from every stored row (RREF invariant:
        // single-pass solves must never reintroduce cleared columns)
        for i in 0..self.rows.len() {
            let x = self.rows[i][c];
            if x == 0 {
                continue;
            }
            self.losses[i] = self.losses[i].max(loss.saturating_sub(val_p(p, m, x)));
            let cm = zn.to_mont(x);
            let srow = &mut self.rows[i];
            for (dst, &src) in srow.iter_mut().zip(r.iter()) {
                *dst = zn.sub(*dst, zn.mul_mont_plain(cm, src));
            }
            if let (Some(ts), Some(t)) = (self.transform.as_mut(), tr.as_ref()) {
                // align: ts[i]/p^{pi} - x t/p^{tr_pow}
                let pi = self.tr_pows[i];
                let target = pi.max(tr_pow);
                if target > pi {
                    let scale = zn.to_mont(p.pow(target - pi));
                    for v in ts[i].iter_mut() {
                        *v = zn.mul_mont_plain(scale, *v);
                    }
                    self.tr_pows[i] = target;
                }
                let cm2 = zn.to_mont(zn.mul(x, p.pow(target - tr_pow)));
                let tsr = &mut ts[i];
                if tsr.len() < t.len() {
                    tsr.resize(t.len(), 0);
                }
                for (dst, &src) in tsr.iter_mut().zip(t.iter()) {
                    *dst = zn.sub(*dst, zn.mul_mont_plain(cm2, src));
                }
            }
        }
        // keep staircase sorted by pivot
        let pos = self.pivots.partition_point(|&pc| pc < c);
        self.rows.insert(pos, r);
        self.pivots.insert(pos, c);
        self.losses.insert(pos, loss);
        if let (Some(t), Some(ts)) = (tr, self.transform.as_mut()) {
            ts.insert(pos, t);
        }
        self.tr_pows.insert(pos, tr_pow);
        InsertOutcome::Added(c)
    }

    pub fn insert(&mut self, zn: &Zn, p: u64, m: u32, row: &[u64], zero_threshold: u32) -> InsertOutcome {
        let id = self.n_inserted;
        self.insert_with_id(zn, p, m, id, row, zero_threshold)
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Two-phase batch insertion: rows that reduce to a unit pivot are adopted
    /// first (iterating until no progress), then the remaining rows are
    /// saturated smallest-valuation-first. This keeps the outcome independent
    /// of candidate ordering, which matters because saturated rows cost digits.
    /// Returns, per input row, whether it was adopted.
    pub fn insert_batch(
        &mut self,
        zn: &Zn,
        p: u64,
        m: u32,
        rows: &[Vec<u64>],
        ids: &[usize],
        threshold: u32,
    ) -> Vec<bool> {
        let mut adopted = vec![false; rows.len()];
        let mut pending: Vec<usize> = (0..rows.len()).collect();
        // phase 1: unit-pivot adoptions until stable
        loop {
            let mut progress = false;
            let mut still = Vec::new();
            for &i in &pending {
                // probe: reduce a copy and check for a unit entry
                let (_, r) = self.reduce(zn, &rows[i]);
                let has_unit = r.iter().any(|&x| x != 0 && x % p != 0);
                if has_unit {
                    match self.insert_with_id(zn, p, m, ids[i], &rows[i], threshold) {
                        InsertOutcome::Added(_) => {
                            adopted[i] = true;
                            progress = true;
                        }
                        InsertOutcome::Dependent => {}
                    }
                } else {
                    still.push(i);
                }
            }
            pending = still;
            if !progress || pending.is_empty() {
                break;
            }
        }
        // phase 2: saturate what remains, shallowest first
        loop {
            let mut best: Option<(u32, usize, usize)> = None;
            for (slot, &i) in pending.iter().enumerate() {
                let (_, r) = self.reduce(zn, &rows[i]);
                let v = r
                    .iter()
                    .filter(|&&x| x != 0)
                    .map(|&x| val_p(p, m, x))
                    .min()
                    .unwrap_or(m);
                if v >= m {
                    continue;
                }
                match best {
                    None => best = Some((v, i, slot)),
                    Some((bv, _, _)) if v < bv => best = Some((v, i, slot)),
                    _ => {}
                }
            }
            let Some((_, i, slot)) = best else { break };
            match self.insert_with_id(zn, p, m, ids[i], &rows[i], threshold) {
                InsertOutcome::Added(_) => {
                    adopted[i] = true;
                }
                InsertOutcome::Dependent => {}
            }
            pending.swap_remove(slot);
            if pending.is_empty() {
                break;
            }
        }
        adopted
    }

    /// Solve v against the staircase: (coeffs per staircase row, residual).
    /// Multi-pass: rows may reintroduce entries at earlier pivot columns, but
    /// that reintroduction operator is nilpotent in column order.
    pub fn reduce(&self, zn: &Zn, v: &[u64]) -> (Vec<u64>, Vec<u64>) {
        let mut r = v.to_vec();
        let mut coeffs = vec![0u64; self.rows.len()];
        for _pass in 0..8 {
            let mut touched = false;
            for (i, srow) in self.rows.iter().enumerate() {
                let c = self.pivots[i];
                if c >= r.len() {
                    break;
                }
                let x = r[c];
                if x == 0 {
                    continue;
                }
                touched = true;
                coeffs[i] = zn.add(coeffs[i], x);
                let cm = zn.to_mont(x);
                let lim = r.len().min(srow.len());
                for k in 0..lim {
                    r[k] = zn.sub(r[k], zn.mul_mont_plain(cm, srow[k]));
                }
            }
            if !touched {
                break;
            }
        }
        (coeffs, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zn5() -> (Zn, u64, u32) {
        (Zn::new(5u64.pow(10)), 5, 10)
    }

    #[test]
    fn echelon_identity_and_valuation_pivot() {
        let (zn, p, m) = zn5();
        let id = vec![vec![1, 0], vec![0, 1]];
        let e = echelonize(&zn, p, m, &id);
        assert_eq!(e.rank(), 2);
        assert_eq!(e.loss, 0);
        // [[5,1],[0,1]]: the first pivot is chosen at the valuation-0 entry
        // (column 2), so the elimination step loses no digits even though the
        // leftover column-1 pivot has valuation 1 (det = 5)
        let a = vec![vec![5, 1], vec![0, 1]];
        let e = echelonize(&zn, p, m, &a);
        assert_eq!(e.rank(), 2);
        assert_eq!(e.loss, 0);
        assert_eq!(e.pivot_vals, vec![1, 0]);
        assert_eq!(e.pivot_cols, vec![0, 1]);
    }

    #[test]
    fn echelon_transform_consistency() {
        let (zn, p, m) = zn5();
        let mut state = 41u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 10) % zn.n
        };
        let rows: Vec<Vec<u64>> = (0..6).map(|_| (0..6).map(|_| rnd()).collect()).collect();
        let e = echelonize(&zn, p, m, &rows);
        // transform * input = echelon rows
        for (i, erow) in e.rows.iter().enumerate() {
            let t = &e.transform[i];
            let mut acc = vec![0u64; 6];
            for (k, &c) in t.iter().enumerate() {
                let cm = zn.to_mont(c);
                for (dst, &src) in acc.iter_mut().zip(rows[k].iter()) {
                    *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
                }
            }
            assert_eq!(&acc, erow);
        }
    }

    #[test]
    fn echelon_rank_against_rational_oracle() {
        // integer matrix with known rank 2 over Q (third row = sum of first two)
        let (zn, p, m) = zn5();
        let rows = vec![
            vec![1u64, 2, 3, 4],
            vec![4, 3, 2, 1],
            vec![5, 5, 5, 5],
        ];
        let e = echelonize(&zn, p, m, &rows);
        assert_eq!(e.rank(), 2);
        assert_eq!(e.kernel.len(), 1);
        // kernel combination annihilates the input
        let (comb, v) = &e.kernel[0];
        assert!(*v >= m);
        let mut acc = vec![0u64; 4];
        for (k, &c) in comb.iter().enumerate() {
            let cm = zn.to_mont(c);
            for (dst, &src) in acc.iter_mut().zip(rows[k].iter()) {
                *dst = zn.add(*dst, zn.mul_mont_plain(cm, src));
            }
        }
        assert!(acc.iter().all(|&x| x == 0));
    }

    #[test]
    fn matmul_and_pow() {
        let (zn, _p, _m) = zn5();
        let mut a = Mat::zero(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                a.set(i, j, (i * 3 + j + 1) as u64);
            }
        }
        let i3 = Mat::identity(3);
        assert_eq!(a.mul(&zn, &i3), a);
        let a2 = a.mul(&zn, &a);
        let a4 = a2.mul(&zn, &a2);
        assert_eq!(a.pow(&zn, 4), a4);
        // diag(u, p): projector via high power kills the p-part
        let mut d = Mat::zero(2, 2);
        d.set(0, 0, 2);
        d.set(1, 1, 5);
        let dp = d.pow(&zn, 4 * 5u64.pow(9));
        assert_eq!(dp.at(1, 1), 0);
        assert_ne!(dp.at(0, 0), 0);
    }

    #[test]
    fn staircase_insert_and_reduce() {
        let (zn, p, m) = zn5();
        let mut st = Staircase::new(4, true);
        assert!(matches!(st.insert(&zn, p, m, &[0, 1, 2, 3], m), InsertOutcome::Added(1)));
        assert!(matches!(st.insert(&zn, p, m, &[1, 1, 1, 1], m), InsertOutcome::Added(0)));
        // dependent row
        let dep = vec![1u64, 2, 3, 4];
        assert!(matches!(st.insert(&zn, p, m, &dep, m), InsertOutcome::Dependent));
        // 5 * (new direction): saturated to a unit-pivot row with loss 1
        assert!(matches!(st.insert(&zn, p, m, &[0, 0, 5, 0], m), InsertOutcome::Added(2)));
        assert_eq!(st.max_loss(), 1);
        let (_c, r) = st.reduce(&zn, &[2, 3, 4, 5]);
        assert!(r.iter().take(2).all(|&x| x == 0));
    }
}
