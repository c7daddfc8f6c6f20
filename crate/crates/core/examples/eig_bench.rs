use rand::Rng;
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
    for &n in &[400usize, 800, 1200] {
        let m = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.random::<f64>());
        let g = &m * m.transpose();

        let t0 = Instant::now();
        let e = g.clone().symmetric_eigen();
        let dt_na = t0.elapsed().as_secs_f64();

        // faer route: copy into a faer Mat, self-adjoint eigendecomposition
        let t0 = Instant::now();
        let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| g[(i, j)]);
        let evd = fm.self_adjoint_eigen(faer::Side::Lower).unwrap();
        let dt_faer = t0.elapsed().as_secs_f64();
        let lmax_faer = (0..n).map(|i| evd.S()[i]).fold(f64::MIN, f64::max);
        println!(
            "{n}x{n}: nalgebra {dt_na:.2}s  faer {dt_faer:.2}s  (lmax {:.3e} vs {:.3e})",
            e.eigenvalues.max(),
            lmax_faer
        );
    }
}
