//! Montgomery arithmetic for the scalar coefficient rings Z/p^m (p odd, p^m < 2^62).
//!
//! Everything downstream of the q-expansion layer runs on raw `u64` residues
//! through one of these ring handles; elements are kept in plain (non-Montgomery)
//! representation except inside hot kernels, which convert one operand.

/// The ring Z/n with n odd, n < 2^62. Montgomery constants are precomputed.
#[derive(Clone, Debug)]
pub struct Zn {
    pub n: u64,
    /// -n^{-1} mod 2^64
    ninv: u64,
    /// 2^128 mod n, for conversion into Montgomery form
    r2: u64,
    /// 2^64 mod n (= Montgomery form of 1)
    r1: u64,
}

impl Zn {
    pub fn new(n: u64) -> Self {
        assert!(n % 2 == 1 && n > 1 && n < (1 << 62), "modulus must be odd, 1 < n < 2^62");
        // Newton iteration for the 2-adic inverse of n.
        let mut inv: u64 = n; // correct mod 2^3 for odd n... start with n, refine
        for _ in 0..6 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(n.wrapping_mul(inv)));
        }
        debug_assert_eq!(n.wrapping_mul(inv), 1);
        let ninv = inv.wrapping_neg();
        let r1 = (u128::from(u64::MAX) % u128::from(n)) as u64 + 1; // 2^64 mod n
        let r1 = if r1 == n { 0 } else { r1 };
        // 2^128 mod n by squaring 2^64 mod n with schoolbook u128 reduction
        let r2 = ((u128::from(r1) * u128::from(r1)) % u128::from(n)) as u64;
        Zn { n, ninv, r2, r1 }
    }

    #[inline(always)]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        (x % u128::from(self.n)) as u64
    }

    /// Montgomery reduction of a 128-bit product: returns t/2^64 mod n.
    #[inline(always)]
    fn redc(&self, t: u128) -> u64 {
        let m = (t as u64).wrapping_mul(self.ninv);
        let t2 = (t + u128::from(m) * u128::from(self.n)) >> 64;
        let t2 = t2 as u64;
        if t2 >= self.n { t2 - self.n } else { t2 }
    }

    /// Convert into Montgomery form: a * 2^64 mod n.
    #[inline(always)]
    pub fn to_mont(&self, a: u64) -> u64 {
        self.redc(u128::from(a) * u128::from(self.r2))
    }

    /// Multiply a Montgomery-form operand by a plain operand; result is plain.
    #[inline(always)]
    pub fn mul_mont_plain(&self, a_mont: u64, b_plain: u64) -> u64 {
        self.redc(u128::from(a_mont) * u128::from(b_plain))
    }

    #[inline(always)]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(u128::from(a) * u128::from(b))
    }

    #[inline(always)]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b; // n < 2^62 so no overflow
        if s >= self.n { s - self.n } else { s }
    }

    #[inline(always)]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b { a - b } else { a + self.n - b }
    }

    #[inline(always)]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 { 0 } else { self.n - a }
    }

    pub fn pow(&self, mut a: u64, mut e: u64) -> u64 {
        let mut acc = 1u64;
        a %= self.n;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, a);
            }
            a = self.mul(a, a);
            e >>= 1;
        }
        acc
    }

    /// Map a signed integer into the ring.
    pub fn from_i64(&self, a: i64) -> u64 {
        let r = a.rem_euclid(self.n as i64);
        r as u64
    }

    pub fn from_i128(&self, a: i128) -> u64 {
        a.rem_euclid(self.n as i128) as u64
    }
}

/// Deterministic Miller–Rabin, valid for all u64.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for &p in &[2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let d = n - 1;
    let s = d.trailing_zeros();
    let d = d >> s;
    let mulmod = |a: u64, b: u64| ((u128::from(a) * u128::from(b)) % u128::from(n)) as u64;
    let powmod = |mut a: u64, mut e: u64| {
        let mut acc = 1u64;
        a %= n;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, a);
            }
            a = mulmod(a, a);
            e >>= 1;
        }
        acc
    };
    'witness: for &a in &[2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if a % n == 0 {
            continue;
        }
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime factor table up to `n` (inclusive), index 0 and 1 unused.
pub fn spf_table(n: usize) -> Vec<u32> {
    let mut spf = vec![0u32; n + 1];
    for i in 2..=n {
        if spf[i] == 0 {
            let mut j = i;
            while j <= n {
                if spf[j] == 0 {
                    spf[j] = i as u32;
                }
                j += i;
            }
        }
    }
    spf
}

/// Factorization of a u64 by trial division (adequate for levels and indices here).
pub fn factor_u64(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            let mut e = 0;
            while n % d == 0 {
                n /= d;
                e += 1;
            }
            out.push((d, e));
        }
        d += if d == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Kronecker symbol (a|n), defined for all integers.
pub fn kronecker(mut a: i64, mut n: i64) -> i64 {
    if n == 0 {
        return if a.abs() == 1 { 1 } else { 0 };
    }
    let mut k = 1i64;
    if n < 0 {
        n = -n;
        if a < 0 {
            k = -k;
        }
    }
    // strip twos from n: (a|2)^v is 0 for even a, else signed by a mod 8
    let mut v = 0;
    while n % 2 == 0 {
        n /= 2;
        v += 1;
    }
    if v >= 1 && a % 2 == 0 {
        return 0;
    }
    if v % 2 == 1 {
        let am8 = a.rem_euclid(8);
        if am8 == 3 || am8 == 5 {
            k = -k;
        }
    }
    a = a.rem_euclid(n);
    while a != 0 {
        let mut v = 0;
        while a % 2 == 0 {
            a /= 2;
            v += 1;
        }
        if v % 2 == 1 {
            let nm8 = n % 8;
            if nm8 == 3 || nm8 == 5 {
                k = -k;
            }
        }
        // quadratic reciprocity (both odd now)
        if a % 4 == 3 && n % 4 == 3 {
            k = -k;
        }
        let t = n % a;
        n = a;
        a = t;
    }
    if n == 1 { k } else { 0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn montgomery_roundtrip() {
        let pm = 5u64.pow(10);
        let r = Zn::new(pm);
        for a in [0u64, 1, 2, pm - 1, 123456, 9765624] {
            for b in [1u64, 3, pm - 2, 999983] {
                let am = r.to_mont(a % pm);
                assert_eq!(r.mul_mont_plain(am, b % pm), r.mul(a % pm, b % pm));
            }
        }
    }

    #[test]
    fn prime_test_small() {
        assert!(is_prime_u64(2));
        assert!(is_prime_u64(5));
        assert!(is_prime_u64(13));
        assert!(is_prime_u64(2_147_483_647));
        assert!(!is_prime_u64(1));
        assert!(!is_prime_u64(561));
        assert!(!is_prime_u64(25));
    }

    #[test]
    fn kronecker_values() {
        // (-11|p) distinguishes split/inert primes of Q(sqrt(-11))
        assert_eq!(kronecker(-11, 5), 1);
        assert_eq!(kronecker(-11, 7), -1);
        assert_eq!(kronecker(-24, 31), 1);
        assert_eq!(kronecker(-15, 5), 0);
        // (D|2) via Kronecker's extension
        assert_eq!(kronecker(-7, 2), 1);
        assert_eq!(kronecker(-11, 2), -1);
    }
}
