//! Integer convolution by multi-prime NTT with CRT reconstruction.
//!
//! This is the subquadratic multiplication seam behind q-expansion products:
//! coefficients are residues mod p^m (< 2^49), so an exact integer convolution
//! fits in the product of two 61-bit NTT primes for lengths up to 2^20 and then
//! reduces mod p^m.

use crate::zmod::{is_prime_u64, Zn};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

// 29*2^57 + 1 and 27*2^56 + 1, both prime with a large power-of-two subgroup.
const P1: u64 = 4_179_340_454_199_820_289;
const G1: u64 = 3;
const P2: u64 = 1_945_555_039_024_054_273;
const G2: u64 = 5;

struct NttTables {
    /// w^i in Montgomery form, i < n/2, w a primitive n-th root of unity
    fwd: Vec<u64>,
    /// w^{-i} in Montgomery form
    inv: Vec<u64>,
    /// n^{-1} in Montgomery form
    ninv: u64,
}

fn build_tables(ring: &Zn, g: u64, n: usize) -> NttTables {
    let w = ring.pow(g, (ring.n - 1) / n as u64);
    let winv = ring.pow(w, ring.n - 2);
    let half = (n / 2).max(1);
    let mut fwd = vec![0u64; half];
    let mut inv = vec![0u64; half];
    let mut x = 1u64;
    let mut y = 1u64;
    for i in 0..half {
        fwd[i] = ring.to_mont(x);
        inv[i] = ring.to_mont(y);
        x = ring.mul(x, w);
        y = ring.mul(y, winv);
    }
    let ninv = ring.to_mont(ring.pow(n as u64 % ring.n, ring.n - 2));
    NttTables { fwd, inv, ninv }
}

/// Decimation-in-frequency forward transform; output in bit-reversed order.
fn ntt_fwd(ring: &Zn, a: &mut [u64], t: &NttTables) {
    let n = a.len();
    let mut half = n / 2;
    while half >= 1 {
        let stride = n / (2 * half);
        let mut base = 0;
        while base < n {
            for i in 0..half {
                let u = a[base + i];
                let v = a[base + half + i];
                a[base + i] = ring.add(u, v);
                a[base + half + i] = ring.mul_mont_plain(t.fwd[i * stride], ring.sub(u, v));
            }
            base += 2 * half;
        }
        half /= 2;
    }
}

/// Inverse transform on bit-reversed input; natural-order output.
fn ntt_inv(ring: &Zn, a: &mut [u64], t: &NttTables) {
    let n = a.len();
    let mut half = 1;
    while half < n {
        let stride = n / (2 * half);
        let mut base = 0;
        while base < n {
            for i in 0..half {
                let u = a[base + i];
                let v = ring.mul_mont_plain(t.inv[i * stride], a[base + half + i]);
                a[base + i] = ring.add(u, v);
                a[base + half + i] = ring.sub(u, v);
            }
            base += 2 * half;
        }
        half *= 2;
    }
    for x in a.iter_mut() {
        *x = ring.mul_mont_plain(t.ninv, *x);
    }
}

pub struct Convolver {
    ring1: Zn,
    ring2: Zn,
    cache1: RwLock<HashMap<usize, Arc<NttTables>>>,
    cache2: RwLock<HashMap<usize, Arc<NttTables>>>,
}

impl Default for Convolver {
    fn default() -> Self {
        Self::new()
    }
}

impl Convolver {
    pub fn new() -> Self {
        debug_assert!(is_prime_u64(P1) && is_prime_u64(P2));
        Convolver {
            ring1: Zn::new(P1),
            ring2: Zn::new(P2),
            cache1: RwLock::new(HashMap::new()),
            cache2: RwLock::new(HashMap::new()),
        }
    }

    fn tables(&self, which: usize, n: usize) -> Arc<NttTables> {
        let (cache, ring, g) = if which == 1 {
            (&self.cache1, &self.ring1, G1)
        } else {
            (&self.cache2, &self.ring2, G2)
        };
        if let Some(t) = cache.read().unwrap().get(&n) {
            return t.clone();
        }
        let t = Arc::new(build_tables(ring, g, n));
        cache.write().unwrap().insert(n, t.clone());
        t
    }

    fn conv_prime(&self, which: usize, a: &[u64], b: &[u64], n: usize) -> Vec<u64> {
        let ring = if which == 1 { &self.ring1 } else { &self.ring2 };
        let t = self.tables(which, n);
        let mut fa = vec![0u64; n];
        let mut fb = vec![0u64; n];
        for (d, s) in fa.iter_mut().zip(a.iter()) {
            *d = *s % ring.n;
        }
        for (d, s) in fb.iter_mut().zip(b.iter()) {
            *d = *s % ring.n;
        }
        ntt_fwd(ring, &mut fa, &t);
        ntt_fwd(ring, &mut fb, &t);
        for i in 0..n {
            fa[i] = ring.mul(fa[i], fb[i]);
        }
        ntt_inv(ring, &mut fa, &t);
        fa
    }

    /// Exact convolution of nonnegative sequences (entries < 2^49), truncated to
    /// `out_len` coefficients and reduced mod `target.n`.
    pub fn conv_mod(&self, target: &Zn, a: &[u64], b: &[u64], out_len: usize) -> Vec<u64> {
        if a.is_empty() || b.is_empty() || out_len == 0 {
            return vec![0; out_len];
        }
        // schoolbook cutoff
        if a.len().min(b.len()) < 48 {
            let mut out = vec![0u64; out_len];
            let (small, big) = if a.len() <= b.len() { (a, b) } else { (b, a) };
            for (i, &x) in small.iter().enumerate() {
                if i >= out_len || x == 0 {
                    continue;
                }
                let xm = target.to_mont(x);
                let jmax = (out_len - i).min(big.len());
                for j in 0..jmax {
                    let t = target.mul_mont_plain(xm, big[j]);
                    out[i + j] = target.add(out[i + j], t);
                }
            }
            return out;
        }
        // truncate inputs to what can influence [0, out_len)
        let a = &a[..a.len().min(out_len)];
        let b = &b[..b.len().min(out_len)];
        let n = (a.len() + b.len() - 1).next_power_of_two();
        assert!(n <= 1 << 20, "NTT size too large");
        let r1 = self.conv_prime(1, a, b, n);
        let r2 = self.conv_prime(2, a, b, n);
        // CRT: x = x1 + P1 * ((x2 - x1) * P1^{-1} mod P2), then reduce mod target
        let ring2 = &self.ring2;
        let p1_inv_p2 = ring2.pow(P1 % P2, P2 - 2);
        let p1m = ring2.to_mont(p1_inv_p2);
        let mut out = vec![0u64; out_len];
        for i in 0..out_len.min(n) {
            let x1 = r1[i];
            let x2 = r2[i];
            let d = ring2.sub(x2 % P2, x1 % P2);
            let k = ring2.mul_mont_plain(p1m, d);
            let x = u128::from(x1) + u128::from(P1) * u128::from(k);
            out[i] = (x % u128::from(target.n)) as u64;
        }
        out
    }
}

/// Frequency-domain image of a sequence under both NTT primes.
pub struct FreqVec {
    pub n: usize,
    f1: Vec<u64>,
    f2: Vec<u64>,
}

impl Convolver {
    /// Forward transform of `a` padded to size `n` (a power of two).
    pub fn forward(&self, a: &[u64], n: usize) -> FreqVec {
        debug_assert!(n.is_power_of_two());
        let t1 = self.tables(1, n);
        let t2 = self.tables(2, n);
        let mut f1 = vec![0u64; n];
        let mut f2 = vec![0u64; n];
        for (d, s) in f1.iter_mut().zip(a.iter()) {
            *d = *s % self.ring1.n;
        }
        for (d, s) in f2.iter_mut().zip(a.iter()) {
            *d = *s % self.ring2.n;
        }
        ntt_fwd(&self.ring1, &mut f1, &t1);
        ntt_fwd(&self.ring2, &mut f2, &t2);
        FreqVec { n, f1, f2 }
    }

    /// acc += fa * fb * scalar, pointwise in frequency space.
    pub fn mac(&self, acc: &mut FreqVec, fa: &FreqVec, fb: &FreqVec, scalar: u64) {
        let s1 = self.ring1.to_mont(scalar % self.ring1.n);
        let s2 = self.ring2.to_mont(scalar % self.ring2.n);
        for i in 0..acc.n {
            let px = self.ring1.mul(fa.f1[i], fb.f1[i]);
            acc.f1[i] = self.ring1.add(acc.f1[i], self.ring1.mul_mont_plain(s1, px));
            let py = self.ring2.mul(fa.f2[i], fb.f2[i]);
            acc.f2[i] = self.ring2.add(acc.f2[i], self.ring2.mul_mont_plain(s2, py));
        }
    }

    pub fn zero_freq(&self, n: usize) -> FreqVec {
        FreqVec { n, f1: vec![0; n], f2: vec![0; n] }
    }

    /// Inverse transform with CRT reconstruction mod target, truncated to out_len.
    /// Valid when the true integer coefficients stay below P1*P2.
    pub fn inverse(&self, target: &Zn, f: &FreqVec, out_len: usize) -> Vec<u64> {
        let t1 = self.tables(1, f.n);
        let t2 = self.tables(2, f.n);
        let mut a1 = f.f1.clone();
        let mut a2 = f.f2.clone();
        ntt_inv(&self.ring1, &mut a1, &t1);
        ntt_inv(&self.ring2, &mut a2, &t2);
        let ring2 = &self.ring2;
        let p1_inv_p2 = ring2.pow(P1 % P2, P2 - 2);
        let p1m = ring2.to_mont(p1_inv_p2);
        let mut out = vec![0u64; out_len];
        for i in 0..out_len.min(f.n) {
            let d = ring2.sub(a2[i] % P2, a1[i] % P2);
            let k = ring2.mul_mont_plain(p1m, d);
            let x = u128::from(a1[i]) + u128::from(P1) * u128::from(k);
            out[i] = (x % u128::from(target.n)) as u64;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(target: &Zn, a: &[u64], b: &[u64], out_len: usize) -> Vec<u64> {
        let mut out = vec![0u64; out_len];
        for i in 0..a.len() {
            for j in 0..b.len() {
                if i + j < out_len {
                    out[i + j] = target.add(out[i + j], target.mul(a[i], b[j]));
                }
            }
        }
        out
    }

    #[test]
    fn ntt_matches_schoolbook() {
        let pm = 13u64.pow(10);
        let target = Zn::new(pm);
        let cv = Convolver::new();
        let mut state = 0x1234_5678_9abc_def0u64;
        let mut rnd = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state % pm
        };
        for (la, lb) in [(1usize, 1usize), (5, 9), (130, 257), (600, 600)] {
            let a: Vec<u64> = (0..la).map(|_| rnd()).collect();
            let b: Vec<u64> = (0..lb).map(|_| rnd()).collect();
            let out_len = la + lb + 3;
            assert_eq!(cv.conv_mod(&target, &a, &b, out_len), naive(&target, &a, &b, out_len));
        }
    }

    #[test]
    fn ntt_truncation_matches() {
        let pm = 5u64.pow(12);
        let target = Zn::new(pm);
        let cv = Convolver::new();
        let a: Vec<u64> = (0..900u64).map(|i| (i * i + 7) % pm).collect();
        let b: Vec<u64> = (0..500u64).map(|i| (3 * i + 11) % pm).collect();
        assert_eq!(cv.conv_mod(&target, &a, &b, 200), naive(&target, &a[..200], &b[..200], 200));
    }
}
