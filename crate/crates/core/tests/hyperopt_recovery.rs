use dkgp::hyperopt::{
    grid_search, log_target, mcmc_fit, product_grid, KernelFamily, McmcConfig, ParamName, PriorSet,
};
use dkgp::kernels::self_cov;
use dkgp::{Execution, KernelSpec, KernelVariant, PointSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Draws `n` inputs on `[0, 6]` and one sample path of an RBF GP with the
/// given lengthscale plus small noise.
fn simulate(n: usize, lengthscale: f64, seed: u64) -> (PointSet, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..6.0)).collect();
    let x = PointSet::from_scalars(&xs);
    let k = self_cov(&KernelSpec::rbf(lengthscale).unwrap(), &x)
        .unwrap()
        .into_inner()
        + DMatrix::identity(n, n) * 1e-4;
    let l = k.cholesky().unwrap().l();
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let y = (l * z).as_slice().to_vec();
    (x, y)
}

fn rbf_family() -> KernelFamily {
    KernelFamily::new(KernelVariant::Rbf, 1)
}

#[test]
fn grid_search_recovers_generating_decade() {
    let (x, y) = simulate(20, 1.0, 17);
    let decades = vec![0.01, 0.1, 1.0, 10.0, 100.0];
    let grid = product_grid(KernelVariant::Rbf, &[decades, vec![1e-4]]).unwrap();
    let (best, _) = grid_search(&x, &y, rbf_family(), &grid).unwrap();
    assert_eq!(best.get(ParamName::Lengthscale), Some(1.0));

    // Order and duplicates do not matter when the maximiser is unique.
    let mut shuffled = grid.clone();
    shuffled.reverse();
    shuffled.extend(grid.iter().cloned());
    let (again, _) = grid_search(&x, &y, rbf_family(), &shuffled).unwrap();
    assert_eq!(again, best);
}

#[test]
fn mcmc_recovers_lengthscale() {
    let (x, y) = simulate(32, 1.0, 23);
    let priors = PriorSet::default_for(KernelVariant::Rbf);
    let cfg = McmcConfig {
        steps: 2000,
        seed: 5,
        ..Default::default()
    };
    let res = mcmc_fit(&x, &y, rbf_family(), &priors, &cfg).unwrap();
    let l = res.best.get(ParamName::Lengthscale).unwrap();
    assert!((0.3..=3.0).contains(&l), "lengthscale {l}");
    assert!(
        res.acceptance_rate > 0.05 && res.acceptance_rate < 0.95,
        "acceptance {}",
        res.acceptance_rate
    );
    assert!(res.best_log_target >= res.initial_log_target);
    let (recomputed, mse) = log_target(
        &res.best,
        rbf_family(),
        &x,
        &y,
        &priors,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(recomputed, res.best_log_target);
    assert_eq!(mse, res.best_mse);
}

#[test]
fn mcmc_is_deterministic_per_seed() {
    let (x, y) = simulate(16, 0.5, 1);
    let family = KernelFamily::new(KernelVariant::Ntk, 2);
    let priors = PriorSet::default_for(KernelVariant::Ntk);
    let cfg = McmcConfig {
        steps: 150,
        seed: 9,
        ..Default::default()
    };
    let a = mcmc_fit(&x, &y, family, &priors, &cfg).unwrap();
    let b = mcmc_fit(&x, &y, family, &priors, &cfg).unwrap();
    assert_eq!(a, b);
    let c = mcmc_fit(&x, &y, family, &priors, &McmcConfig { seed: 10, ..cfg }).unwrap();
    assert!(c.best_log_target >= c.initial_log_target);
}
