use dkgp::kernels::{cov_matrix, dual_relu, dual_relu_prime, self_cov};
use dkgp::{KernelSpec, PointSet};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn specs(dim: usize) -> Vec<KernelSpec> {
    vec![
        KernelSpec::rbf(0.8).unwrap(),
        KernelSpec::ck(1.3, 0.2, 3, dim).unwrap(),
        KernelSpec::ntk(1.3, 0.2, 3, dim).unwrap(),
        KernelSpec::ntk(0.9, 0.0, 5, dim).unwrap(),
    ]
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> PointSet {
    let data = (0..n * dim)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    PointSet::new(dim, data).unwrap()
}

/// Sample mean and standard error of `f(u, v)` over `n` draws from
/// `N(0, [[a, b], [b, c]])`, via the Cholesky factor of the 2x2 covariance.
fn mc_estimate(
    rng: &mut ChaCha8Rng,
    (a, b, c): (f64, f64, f64),
    n: usize,
    f: impl Fn(f64, f64) -> f64,
) -> (f64, f64) {
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (c - l21 * l21).max(0.0).sqrt();
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let v = f(l11 * z1, l21 * z1 + l22 * z2);
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

#[test]
fn dual_activations_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let m: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        let (a, b, c) = (
            m[0] * m[0] + m[1] * m[1],
            m[0] * m[2] + m[1] * m[3],
            m[2] * m[2] + m[3] * m[3],
        );
        let relu = |t: f64| t.max(0.0);
        let (mean, se) = mc_estimate(&mut rng, (a, b, c), 200_000, |u, v| relu(u) * relu(v));
        let exact = dual_relu(a, b, c).unwrap();
        assert!(
            (exact - mean).abs() <= 3.0 * se,
            "V: {exact} vs {mean} +- {se}"
        );

        let step = |t: f64| if t > 0.0 { 1.0 } else { 0.0 };
        let (mean, se) = mc_estimate(&mut rng, (a, b, c), 200_000, |u, v| step(u) * step(v));
        let exact = dual_relu_prime(a, b, c).unwrap();
        assert!(
            (exact - mean).abs() <= 3.0 * se,
            "V': {exact} vs {mean} +- {se}"
        );
    }
}

#[test]
fn self_covariance_is_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let n = rng.random_range(1..=50);
        let dim = rng.random_range(1..=4);
        let x = random_points(&mut rng, n, dim, 2.0);
        for spec in specs(dim) {
            let k = self_cov(&spec, &x).unwrap().into_inner();
            let trace = k.trace();
            let min = SymmetricEigen::new(k).eigenvalues.min();
            assert!(min >= -1e-8 * trace, "trial {trial} {spec:?}: {min}");
        }
    }
}

#[test]
fn cov_matrix_matches_scalar_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_points(&mut rng, 3, 2, 1.0);
    let b = random_points(&mut rng, 4, 2, 1.0);
    for spec in specs(2) {
        let k = cov_matrix(&spec, &a, &b).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(k.get(i, j), spec.eval(a.row(i), b.row(j)).unwrap());
            }
        }
    }
}

#[test]
fn dual_kernels_are_nonstationary() {
    // Equal spacing, different location.
    let (x, y, z) = ([0.0, 0.0], [1.0, 0.0], [2.0, 0.0]);
    let ck = KernelSpec::ck(1.0, 0.1, 3, 2).unwrap();
    let ntk = KernelSpec::ntk(1.0, 0.1, 3, 2).unwrap();
    let d = |s: &KernelSpec| (s.eval(&x, &y).unwrap(), s.eval(&y, &z).unwrap());
    let (a, b) = d(&ck);
    assert!((a - b).abs() > 1e-3, "ck {a} {b}");
    let (a, b) = d(&ntk);
    assert!((a - b).abs() > 1e-3, "ntk {a} {b}");
    // RBF does depend on the displacement only.
    let rbf = KernelSpec::rbf(1.0).unwrap();
    assert_eq!(rbf.eval(&x, &y).unwrap(), rbf.eval(&y, &z).unwrap());
}

#[test]
fn unit_sphere_ck_depends_on_angle_only() {
    let spec = KernelSpec::ck(1.4, 0.0, 4, 3).unwrap();
    let ntk = KernelSpec::ntk(1.4, 0.0, 4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = [1.0, 0.0, 0.0];
    let v = [0.6, 0.8, 0.0];
    let base = (spec.eval(&u, &v).unwrap(), ntk.eval(&u, &v).unwrap());
    for _ in 0..20 {
        // Random rotation from the QR factor of a Gaussian matrix.
        let g = nalgebra::Matrix3::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let ru = q * nalgebra::Vector3::from(u);
        let rv = q * nalgebra::Vector3::from(v);
        let (ru, rv) = (ru.as_slice(), rv.as_slice());
        assert!((spec.eval(ru, rv).unwrap() - base.0).abs() < 1e-12);
        assert!((ntk.eval(ru, rv).unwrap() - base.1).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn kernels_are_symmetric(
        x in prop::collection::vec(-3.0f64..3.0, 3),
        y in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        for spec in specs(3) {
            prop_assert_eq!(spec.eval(&x, &y).unwrap(), spec.eval(&y, &x).unwrap());
        }
    }

    #[test]
    fn dual_on_diagonal(k in 1e-6f64..1e3) {
        let v = dual_relu(k, k, k).unwrap();
        prop_assert!((v - k / 2.0).abs() <= 1e-12 * k);
        prop_assert_eq!(dual_relu_prime(k, k, k).unwrap(), 0.5);
    }

    #[test]
    fn ntk_dominates_ck_on_diagonal(
        x in prop::collection::vec(-3.0f64..3.0, 2),
        sw in 0.1f64..2.0,
        sb in 0.0f64..1.0,
        depth in 1usize..6,
    ) {
        let c = KernelSpec::ck(sw, sb, depth, 2).unwrap().eval(&x, &x).unwrap();
        let n = KernelSpec::ntk(sw, sb, depth, 2).unwrap().eval(&x, &x).unwrap();
        prop_assert!(n >= c);
    }

    #[test]
    fn dual_prime_is_bounded(a in 0.0f64..5.0, c in 0.0f64..5.0, r in -1.0f64..1.0) {
        let b = r * (a * c).sqrt();
        let v = dual_relu_prime(a, b, c).unwrap();
        prop_assert!((0.0..=0.5).contains(&v));
        prop_assert!(dual_relu(a, b, c).unwrap() >= -1e-15);
    }
}
