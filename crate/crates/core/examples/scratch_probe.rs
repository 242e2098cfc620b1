use nalgebra::DMatrix;
use rand::RngExt;
use rand_distr::StandardNormal;
use sepcov::seeding::derive_rng;
use std::time::Instant;

fn main() {
    // GOE timing at n=1000
    let n = 1000;
    let mut rng = derive_rng(1, "goe", 0);
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let h = (&a + a.transpose()) / (2.0 * n as f64).sqrt();
    let t0 = Instant::now();
    let ev = h.clone().symmetric_eigenvalues();
    println!("symmetric_eigenvalues({n}) took {:?}, max = {:.4}", t0.elapsed(), ev.max());
    let t0 = Instant::now();
    let sv = h.singular_values();
    println!("singular_values({n}) took {:?}, max = {:.4}", t0.elapsed(), sv.max());
}
