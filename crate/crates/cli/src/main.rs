fn main() {
    println!("lp3 placeholder");
}
