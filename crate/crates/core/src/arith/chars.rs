//! Dirichlet characters with exact root-of-unity values, evaluated into a
//! p-adic context on demand.

use crate::padic::{PadicContext, PadicElement, PadicError};
use crate::zmod::{factor_u64, gcd_u64, kronecker};
use num_integer::lcm;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CharError {
    #[error("value {0} is not coprime to the modulus")]
    NotAUnit(u64),
    #[error("generators do not span (Z/{0})^x")]
    BadGenerators(u64),
    #[error("value order {0} does not divide the generator order {1}")]
    OrderMismatch(u64, u64),
    #[error("moduli differ: {0} and {1}")]
    ModulusMismatch(u64, u64),
    #[error("modulus {0} does not divide {1}")]
    NotADivisor(u64, u64),
}

/// Structure of (Z/N)^x: independent generators with their orders, plus a
/// discrete-log table for every coprime residue.
#[derive(Clone, Debug)]
pub struct UnitGroup {
    pub modulus: u64,
    /// (generator residue mod N, order)
    pub gens: Vec<(u64, u64)>,
    /// dlog[r] = exponent vector of r over gens (None when gcd(r, N) > 1)
    dlog: Vec<Option<Vec<u32>>>,
}

fn primitive_root_mod_pk(p: u64, pk: u64) -> u64 {
    // smallest primitive root mod p^k for odd p
    let phi = pk / p * (p - 1);
    let facs = factor_u64(phi);
    let powmod = |mut a: u64, mut e: u64| {
        let mut acc = 1u64;
        a %= pk;
        while e > 0 {
            if e & 1 == 1 {
                acc = (u128::from(acc) * u128::from(a) % u128::from(pk)) as u64;
            }
            a = (u128::from(a) * u128::from(a) % u128::from(pk)) as u64;
            e >>= 1;
        }
        acc
    };
    'g: for g in 2..pk {
        if g % p == 0 {
            continue;
        }
        for (f, _) in &facs {
            if powmod(g, phi / f) == 1 {
                continue 'g;
            }
        }
        return g;
    }
    1
}

impl UnitGroup {
    pub fn new(modulus: u64) -> Self {
        assert!(modulus >= 1);
        let mut local: Vec<(u64, Vec<(u64, u64)>)> = Vec::new(); // (prime power, local gens)
        for (p, e) in factor_u64(modulus) {
            let pe = p.pow(e);
            let gens = if p == 2 {
                match e {
                    1 => vec![],
                    2 => vec![(3 % pe, 2)],
                    _ => vec![(pe - 1, 2), (5, pe / 4)],
                }
            } else {
                vec![(primitive_root_mod_pk(p, pe), pe / p * (p - 1))]
            };
            local.push((pe, gens));
        }
        // CRT-lift each local generator to a global residue ≡ 1 mod other components
        let mut gens: Vec<(u64, u64)> = Vec::new();
        for (pe, lg) in &local {
            for &(g, ord) in lg {
                let other = modulus / pe;
                let x;
                let mut r = 1u64;
                loop {
                    if r % pe == g % pe && (other == 1 || r % other == 1) {
                        x = r;
                        break;
                    }
                    r += 1;
                    assert!(r <= modulus, "CRT lift failed");
                }
                gens.push((x, ord));
            }
        }
        // discrete logs by enumeration of the generator lattice
        if modulus == 1 {
            return UnitGroup { modulus, gens, dlog: vec![Some(vec![])] };
        }
        let mut dlog: Vec<Option<Vec<u32>>> = vec![None; modulus as usize];
        let k = gens.len();
        let mut exps = vec![0u32; k];
        let mut cur = 1u64 % modulus;
        'outer: loop {
            if dlog[cur as usize].is_none() {
                dlog[cur as usize] = Some(exps.clone());
            }
            // increment multi-index
            for i in 0..k {
                exps[i] += 1;
                cur = (u128::from(cur) * u128::from(gens[i].0) % u128::from(modulus)) as u64;
                if u64::from(exps[i]) < gens[i].1 {
                    continue 'outer;
                }
                // wrap this digit: cur already cycled back for this generator
                exps[i] = 0;
            }
            break;
        }
        dlog[1 % modulus as usize] = Some(vec![0u32; k]);
        let ug = UnitGroup { modulus, gens, dlog };
        debug_assert!(ug.spans());
        ug
    }

    fn spans(&self) -> bool {
        let phi: u64 = factor_u64(self.modulus).iter().map(|&(p, e)| p.pow(e) / p * (p - 1)).product();
        let covered = self.dlog.iter().filter(|d| d.is_some()).count() as u64;
        covered == phi.max(1)
    }

    pub fn dlog(&self, r: u64) -> Option<&Vec<u32>> {
        self.dlog[(r % self.modulus.max(1)) as usize].as_ref()
    }
}

/// A Dirichlet character mod N. Values are exact roots of unity stored as
/// exponents of a fixed primitive `order`-th root; 0 on non-units.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirichletCharacter {
    pub modulus: u64,
    /// order of the stored root of unity (a multiple of the character's order)
    pub order: u64,
    /// exps[r] = e with chi(r) = zeta_order^e, None when gcd(r, N) > 1
    exps: Vec<Option<u32>>,
}

impl PartialEq for DirichletCharacter {
    fn eq(&self, other: &Self) -> bool {
        if self.modulus != other.modulus {
            return false;
        }
        let o = lcm(self.order, other.order);
        (0..self.modulus.max(1)).all(|r| {
            match (self.exps[r as usize], other.exps[r as usize]) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    u64::from(a) * (o / self.order) % o == u64::from(b) * (o / other.order) % o
                }
                _ => false,
            }
        })
    }
}
impl Eq for DirichletCharacter {}

impl DirichletCharacter {
    /// The trivial character of the given modulus.
    pub fn trivial(modulus: u64) -> Self {
        let exps = (0..modulus.max(1))
            .map(|r| if gcd_u64(r, modulus) == 1 || modulus == 1 { Some(0u32) } else { None })
            .collect();
        DirichletCharacter { modulus, order: 1, exps }
    }

    /// Build from values on the unit-group generators: value on gens[i] is
    /// zeta_{orders[i]}^{exponents[i]}.
    pub fn from_generator_values(
        ug: &UnitGroup,
        gen_values: &[(u64 /*gen order n*/, u32 /*exponent*/)],
    ) -> Result<Self, CharError> {
        assert_eq!(gen_values.len(), ug.gens.len());
        // common order
        let mut order = 1u64;
        for (i, &(n, _)) in gen_values.iter().enumerate() {
            if ug.gens[i].1 % n != 0 {
                return Err(CharError::OrderMismatch(n, ug.gens[i].1));
            }
            order = lcm(order, n);
        }
        let n_mod = ug.modulus.max(1);
        let mut exps = vec![None; n_mod as usize];
        for r in 0..n_mod {
            if let Some(dl) = ug.dlog(r) {
                let mut e = 0u64;
                for (i, &(n, x)) in gen_values.iter().enumerate() {
                    // chi(gen_i) = zeta_n^x = zeta_order^(x * order/n)
                    e = (e + u64::from(dl[i]) * (u64::from(x) * (order / n) % order)) % order;
                }
                exps[r as usize] = Some(e as u32);
            }
        }
        Ok(DirichletCharacter { modulus: ug.modulus, order, exps })
    }

    /// Quadratic character attached to a fundamental discriminant, to modulus |D|.
    pub fn kronecker_of(disc: i64) -> Self {
        let modulus = disc.unsigned_abs();
        let n_mod = modulus.max(1);
        let mut exps = vec![None; n_mod as usize];
        for r in 0..n_mod {
            let k = kronecker(disc, r as i64);
            exps[r as usize] = match k {
                0 => None,
                1 => Some(0),
                _ => Some(1),
            };
        }
        DirichletCharacter { modulus, order: 2, exps }
    }

    pub fn exp_at(&self, r: u64) -> Option<u32> {
        self.exps[(r % self.modulus.max(1)) as usize]
    }

    /// chi(r) as an integer when the character is quadratic-or-trivial valued
    /// at r: returns -1, 0, or 1; panics on higher-order values.
    pub fn value_i8(&self, r: u64) -> i8 {
        match self.exp_at(r) {
            None => 0,
            Some(e) => {
                let e = u64::from(e) % self.order;
                if e == 0 {
                    1
                } else if 2 * e == self.order {
                    -1
                } else {
                    panic!("character value at {} is not real", r)
                }
            }
        }
    }

    pub fn is_trivial(&self) -> bool {
        (0..self.modulus.max(1)).all(|r| match self.exps[r as usize] {
            None => true,
            Some(e) => u64::from(e) % self.order == 0,
        })
    }

    /// chi(-1): +1 (even) or -1 (odd).
    pub fn parity(&self) -> i8 {
        if self.modulus <= 2 {
            return 1;
        }
        match self.exp_at(self.modulus - 1) {
            Some(e) => {
                if u64::from(e) % self.order == 0 {
                    1
                } else {
                    -1
                }
            }
            None => unreachable!("-1 is a unit"),
        }
    }

    pub fn is_odd(&self) -> bool {
        self.parity() == -1
    }

    /// Smallest order of a root of unity generating all values.
    pub fn value_order(&self) -> u64 {
        let mut g = self.order;
        for e in self.exps.iter().flatten() {
            g = gcd_u64(g, u64::from(*e));
        }
        // order of zeta^e is order/gcd(order, e); overall order = order / gcd of all e with order
        self.order / gcd_u64(self.order, g)
    }

    /// Normalize the stored root order to the character's actual order.
    pub fn canonicalize(&self) -> Self {
        let vo = self.value_order().max(1);
        let scale = self.order / vo;
        let exps = self
            .exps
            .iter()
            .map(|e| e.map(|x| ((u64::from(x) / scale) % vo.max(1)) as u32))
            .collect();
        DirichletCharacter { modulus: self.modulus, order: vo, exps }
    }

    pub fn mul(&self, other: &Self) -> Result<Self, CharError> {
        if self.modulus != other.modulus {
            return Err(CharError::ModulusMismatch(self.modulus, other.modulus));
        }
        let order = lcm(self.order, other.order);
        let exps = (0..self.modulus.max(1))
            .map(|r| match (self.exps[r as usize], other.exps[r as usize]) {
                (Some(a), Some(b)) => Some(
                    ((u64::from(a) * (order / self.order) + u64::from(b) * (order / other.order))
                        % order) as u32,
                ),
                _ => None,
            })
            .collect();
        Ok(DirichletCharacter { modulus: self.modulus, order, exps }.canonicalize())
    }

    /// The j-th power (componentwise exponent scaling).
    pub fn pow(&self, j: u64) -> Self {
        let exps = self
            .exps
            .iter()
            .map(|e| e.map(|x| ((u64::from(x) * (j % self.order)) % self.order) as u32))
            .collect();
        DirichletCharacter { modulus: self.modulus, order: self.order, exps }
    }

    /// Complex conjugate (= inverse).
    pub fn conjugate(&self) -> Self {
        let exps = self
            .exps
            .iter()
            .map(|e| e.map(|x| ((self.order - u64::from(x) % self.order) % self.order) as u32))
            .collect();
        DirichletCharacter { modulus: self.modulus, order: self.order, exps }
    }

    /// Lift to a larger modulus M (N | M): zero outside units mod M.
    pub fn induce(&self, m: u64) -> Result<Self, CharError> {
        if m % self.modulus != 0 {
            return Err(CharError::NotADivisor(self.modulus, m));
        }
        let exps = (0..m.max(1))
            .map(|r| {
                if gcd_u64(r, m) != 1 && m != 1 {
                    None
                } else {
                    self.exp_at(r % self.modulus.max(1))
                }
            })
            .collect();
        Ok(DirichletCharacter { modulus: m, order: self.order, exps })
    }

    /// Conductor: the smallest modulus through which the character factors.
    /// chi factors through d iff chi is trivial on units ≡ 1 mod d.
    pub fn conductor(&self) -> u64 {
        let n = self.modulus.max(1);
        let mut divisors: Vec<u64> = (1..=n).filter(|d| n % d == 0).collect();
        divisors.sort_unstable();
        'd: for &d in &divisors {
            let mut u = 1 + d;
            while u < n + 1 {
                let r = u % n;
                if let Some(e) = self.exps[r as usize] {
                    if u64::from(e) % self.order != 0 {
                        continue 'd;
                    }
                }
                u += d;
            }
            return d;
        }
        n
    }

    /// Primitive character of modulus = conductor inducing this one.
    pub fn primitive_part(&self) -> Self {
        let f = self.conductor();
        if f == self.modulus {
            return self.canonicalize();
        }
        if f == 1 {
            return DirichletCharacter::trivial(1);
        }
        let n = self.modulus.max(1);
        let mut exps: Vec<Option<u32>> = vec![None; f as usize];
        for r0 in 1..f {
            if gcd_u64(r0, f) != 1 {
                continue;
            }
            // find a lift of r0 mod f coprime to n
            let mut r = r0;
            while gcd_u64(r, n) != 1 {
                r += f;
                debug_assert!(r < n + f);
            }
            exps[r0 as usize] = self.exp_at(r % n);
        }
        DirichletCharacter { modulus: f, order: self.order, exps }.canonicalize()
    }

    /// Evaluate into a context: table of residues indexed by r mod N (0 on non-units).
    pub fn values_in(&self, ctx: &PadicContext) -> Result<Vec<u64>, PadicError> {
        let vo = self.value_order().max(1);
        let zeta = ctx.zeta(vo)?;
        let scale = self.order / vo;
        let mut pow_table = vec![ctx.one(); vo as usize];
        for i in 1..vo as usize {
            pow_table[i] = ctx.mul(&pow_table[i - 1], &zeta);
        }
        Ok(self
            .exps
            .iter()
            .map(|e| match e {
                None => 0u64,
                Some(x) => ctx.scalar(&pow_table[((u64::from(*x) / scale) % vo) as usize]),
            })
            .collect())
    }

    /// Evaluate a single value into the context.
    pub fn value_in(&self, ctx: &PadicContext, r: u64) -> Result<PadicElement, PadicError> {
        match self.exp_at(r) {
            None => Ok(ctx.zero()),
            Some(e) => {
                let vo = self.value_order().max(1);
                let scale = self.order / vo;
                let zeta = ctx.zeta(vo)?;
                Ok(ctx.pow_u64(&zeta, u64::from(e) / scale % vo))
            }
        }
    }

    /// Deterministic identity key for cache/dedup purposes.
    pub fn key(&self) -> String {
        let c = self.canonicalize();
        let mut s = format!("chi{}o{}:", c.modulus, c.order);
        for e in c.exps.iter() {
            match e {
                None => s.push('.'),
                Some(x) => s.push_str(&format!("{:x},", x)),
            }
        }
        s
    }
}

/// All characters of the given modulus (canonicalized), deterministic order.
pub fn enumerate_characters(ug: &UnitGroup) -> Vec<DirichletCharacter> {
    let mut out = Vec::new();
    let k = ug.gens.len();
    let mut idx = vec![0u64; k];
    loop {
        let gv: Vec<(u64, u32)> = (0..k).map(|i| (ug.gens[i].1, idx[i] as u32)).collect();
        out.push(DirichletCharacter::from_generator_values(ug, &gv).unwrap().canonicalize());
        let mut i = 0;
        loop {
            if i == k {
                return out;
            }
            idx[i] += 1;
            if idx[i] < ug.gens[i].1 {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_group_structure() {
        let ug = UnitGroup::new(120);
        // phi(120) = 32
        let total: u64 = ug.gens.iter().map(|&(_, o)| o).product();
        assert_eq!(total, 32);
        let ug175 = UnitGroup::new(175);
        let total: u64 = ug175.gens.iter().map(|&(_, o)| o).product();
        assert_eq!(total, 120);
    }

    #[test]
    fn kronecker_character_matches_symbol() {
        let chi = DirichletCharacter::kronecker_of(-11);
        assert_eq!(chi.modulus, 11);
        assert!(chi.is_odd());
        for l in [2i64, 3, 5, 7, 13, 23] {
            assert_eq!(i64::from(chi.value_i8(l as u64)), kronecker(-11, l));
        }
        assert_eq!(chi.conductor(), 11);
        // chi_{-15} = chi_{-3} * chi_5
        let a = DirichletCharacter::kronecker_of(-3).induce(15).unwrap();
        let b = DirichletCharacter::kronecker_of(5).induce(15).unwrap();
        let prod = a.mul(&b).unwrap();
        assert_eq!(prod, DirichletCharacter::kronecker_of(-15));
    }

    #[test]
    fn paper_character_mod_120() {
        // epsilon(97) = -1, epsilon(31) = 1, epsilon(41) = -1, epsilon(61) = -1
        // determines the quadratic character chi_8 * chi_{-3} * chi_5 of modulus 120
        let expected = DirichletCharacter::kronecker_of(8)
            .induce(120)
            .unwrap()
            .mul(&DirichletCharacter::kronecker_of(-3).induce(120).unwrap())
            .unwrap()
            .mul(&DirichletCharacter::kronecker_of(5).induce(120).unwrap())
            .unwrap();
        assert_eq!(expected.value_i8(97), -1);
        assert_eq!(expected.value_i8(31), 1);
        assert_eq!(expected.value_i8(41), -1);
        assert_eq!(expected.value_i8(61), -1);
        assert!(expected.is_odd());
        assert_eq!(expected.conductor(), 120);
    }

    #[test]
    fn conductor_and_primitive_part() {
        let chi = DirichletCharacter::kronecker_of(-7).induce(175).unwrap();
        assert_eq!(chi.conductor(), 7);
        let prim = chi.primitive_part();
        assert_eq!(prim.modulus, 7);
        assert_eq!(prim, DirichletCharacter::kronecker_of(-7));
        assert_eq!(DirichletCharacter::trivial(12).conductor(), 1);
    }

    #[test]
    fn values_in_context() {
        // quartic character mod 13 evaluated 13-adically: chi(g)^4 = 1
        let ug = UnitGroup::new(13);
        assert_eq!(ug.gens.len(), 1);
        let chi = DirichletCharacter::from_generator_values(&ug, &[(4, 1)]).unwrap();
        assert_eq!(chi.value_order(), 4);
        let ctx = PadicContext::plain(13, 8).unwrap();
        let vals = chi.values_in(&ctx).unwrap();
        let g = ug.gens[0].0;
        let zn = ctx.zn();
        // chi(g^2) = chi(g)^2 = -1
        assert_eq!(vals[(g * g % 13) as usize], zn.sub(0, 1));
        // multiplicativity on the table
        for a in 1..13u64 {
            for b in 1..13u64 {
                assert_eq!(vals[(a * b % 13) as usize], zn.mul(vals[a as usize], vals[b as usize]));
            }
        }
    }

    #[test]
    fn enumerate_counts() {
        let ug = UnitGroup::new(25);
        assert_eq!(enumerate_characters(&ug).len(), 20);
        let odd = enumerate_characters(&ug).iter().filter(|c| c.is_odd()).count();
        assert_eq!(odd, 10);
    }
}
