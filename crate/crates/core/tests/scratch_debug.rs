use lp3_core::arith::chars::DirichletCharacter;
use lp3_core::overconv::*;
use lp3_core::padic::PadicContext;

#[test]
fn debug_katz2() {
    let ctx = PadicContext::plain(5, 12).unwrap();
    let zn = ctx.zn();
    let chi = DirichletCharacter::kronecker_of(-11);
    let basis = katz_basis(&ctx, 11, &chi).unwrap();
    println!("dim {} q_solve {} blocks {} loss {}", basis.dim(), basis.q_solve, basis.n_blocks, basis.loss());
    let mut cnt = std::collections::BTreeMap::new();
    for s in &basis.raw_sources {
        let b = match s { RawSource::W0(_) => 0u32, RawSource::Higher{block,..} => *block, RawSource::Unused => 999 };
        *cnt.entry(b).or_insert(0usize) += 1;
    }
    println!("raw sources per block: {:?}", cnt);
    println!("losses: {:?}", basis.staircase.losses.iter().filter(|&&l| l > 0).collect::<Vec<_>>());
    println!("tr_pows: {:?}", basis.staircase.tr_pows.iter().filter(|&&l| l > 0).collect::<Vec<_>>());
    // theta g_alpha solve residuals
    let k = lp3_core::arith::theta::ImagQuadField::new(-11).unwrap();
    let len = basis.q_solve;
    let th = k.theta_trivial_coeffs(len - 1);
    let half = ctx.invert(&ctx.from_u64(2)).unwrap();
    let mut g = vec![0u64; len];
    g[0] = ctx.scalar(&half);
    for (n, &c) in th.iter().enumerate() { g[n + 1] = zn.from_i64(c); }
    let ga = lp3_core::arith::stabilize::stabilized_series(&ctx, &g, &ctx.one(), 5);
    let (_c, r) = basis.staircase.reduce(zn, &ga);
    let prof: Vec<(usize, u32)> = r.iter().enumerate().filter(|(_, &x)| x != 0).map(|(i, &x)| {
        let mut v = 0; let mut c = x; while c % 5 == 0 && v < 12 { c /= 5; v += 1; }
        (i, v)
    }).take(12).collect();
    println!("g_alpha residual profile: {:?}", prof);
    // also unstabilized g
    let (_c2, r2) = basis.staircase.reduce(zn, &g);
    let prof2: Vec<(usize, u32)> = r2.iter().enumerate().filter(|(_, &x)| x != 0).map(|(i, &x)| {
        let mut v = 0; let mut c = x; while c % 5 == 0 && v < 12 { c /= 5; v += 1; }
        (i, v)
    }).take(12).collect();
    println!("g residual profile: {:?}", prof2);
}

#[test]
fn debug_classical_dims() {
    let ctx = PadicContext::plain(5, 12).unwrap();
    let chi = DirichletCharacter::kronecker_of(-11);
    for k in [1u32, 5, 9, 13, 17, 21] {
        match lp3_core::spaces::classical_basis(&ctx, k, 11, &chi.induce(11).unwrap(), 260, 0) {
            Ok(b) => println!("dim M_{}(11, chi) = {}", k, b.dim()),
            Err(e) => println!("M_{} failed: {}", k, e),
        }
    }
}

#[test]
fn debug_dims_highprec() {
    let ctx = PadicContext::plain(5, 16).unwrap();
    let chi = DirichletCharacter::kronecker_of(-11);
    for k in [13u32, 17, 21, 25] {
        match lp3_core::spaces::classical_basis(&ctx, k, 11, &chi.induce(11).unwrap(), 300, 0) {
            Ok(b) => println!("m16 dim M_{}(11, chi) = {}", k, b.dim()),
            Err(e) => println!("m16 M_{} failed: {}", k, e),
        }
    }
    let triv = DirichletCharacter::trivial(11);
    for k in [4u32, 8, 12, 16] {
        match lp3_core::spaces::classical_basis(&ctx, k, 11, &triv, 300, 0) {
            Ok(b) => println!("m16 dim M_{}(11, triv) = {}", k, b.dim()),
            Err(e) => println!("m16 M_{} triv failed: {}", k, e),
        }
    }
}
