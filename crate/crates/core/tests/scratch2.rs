use lp3_core::arith::chars::DirichletCharacter;
use lp3_core::padic::PadicContext;
use lp3_core::spaces::*;

#[test]
fn debug_w1_120() {
    let ctx = PadicContext::plain(5, 10).unwrap();
    let eps = DirichletCharacter::kronecker_of(8).induce(120).unwrap()
        .mul(&DirichletCharacter::kronecker_of(-3).induce(120).unwrap()).unwrap()
        .mul(&DirichletCharacter::kronecker_of(5).induce(120).unwrap()).unwrap();
    println!("eps odd {} cond {}", eps.is_odd(), eps.conductor());
    let qst = 2 * dim_estimate(3, 360) + 128;
    println!("qst {}", qst);
    let m3a = classical_basis(&ctx, 3, 120, &eps.induce(120).unwrap(), qst, 0).unwrap();
    println!("dim M3(120, eps) = {}", m3a.dim());
    let m3b = classical_basis(&ctx, 3, 360, &eps.induce(360).unwrap(), qst, 0).unwrap();
    println!("dim M3(360, eps) = {}", m3b.dim());
    match weight_one_space(&ctx, 120, &eps, 5) {
        Ok(w) => println!("w1 dim {}", w.dim()),
        Err(e) => println!("W1 ERR {}", e),
    }
}
