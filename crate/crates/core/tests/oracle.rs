use dig_core::model::{ComponentSpec, GaussianPrior, MixtureModel, Prior, SensingOp};
use dig_core::oracle::{gaussian_posterior_exact, relaxed_posterior_exact, split_posterior_exact};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn random_vec(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
}

/// A 5-dimensional model: identity block of size 2 and a dense 2×3 block.
fn random_instance(seed: u64) -> (MixtureModel, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.5..1.5));
    let gauss = |d: usize, rng: &mut ChaCha8Rng| {
        Prior::Gaussian(GaussianPrior::new(random_vec(d, rng), random_spd(d, rng)).unwrap())
    };
    let model = MixtureModel::new(
        vec![
            ComponentSpec::identity(2, gauss(2, &mut rng)),
            ComponentSpec::new(3, SensingOp::dense(h), gauss(3, &mut rng), 0.1),
        ],
        rng.random_range(0.2..1.5),
        2,
    )
    .unwrap();
    let y = random_vec(2, &mut rng);
    (model, y)
}

/// Conditions the explicitly assembled joint law of `(s, y)`.
fn brute_force(model: &MixtureModel, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (mut mean, mut cov) = (Vec::new(), Vec::new());
    for c in &model.components {
        let Prior::Gaussian(p) = &c.prior else { unreachable!() };
        mean.extend(p.mean.iter().copied());
        cov.push(p.cov.clone());
    }
    let n = mean.len();
    let m = model.obs_dim;
    let mut p = DMatrix::zeros(n, n);
    let mut o = 0;
    for c in &cov {
        p.view_mut((o, o), c.shape()).copy_from(c);
        o += c.nrows();
    }
    let h = DMatrix::from_columns(
        &model
            .components
            .iter()
            .flat_map(|c| {
                let d = c.sensing.to_dense();
                (0..d.ncols()).map(move |j| d.column(j).into_owned())
            })
            .collect::<Vec<_>>(),
    );
    let mut joint = DMatrix::zeros(n + m, n + m);
    joint.view_mut((0, 0), (n, n)).copy_from(&p);
    joint.view_mut((0, n), (n, m)).copy_from(&(&p * h.transpose()));
    joint.view_mut((n, 0), (m, n)).copy_from(&(&h * &p));
    joint
        .view_mut((n, n), (m, m))
        .copy_from(&(&h * &p * h.transpose() + DMatrix::identity(m, m) * model.sigma_v.powi(2)));
    let ms = DVector::from_vec(mean);
    let my = &h * &ms;
    let syy_inv = joint.view((n, n), (m, m)).into_owned().try_inverse().unwrap();
    let ksy = joint.view((0, n), (n, m)) * syy_inv;
    let post_mean = &ms + &ksy * (y - my);
    let post_cov = joint.view((0, 0), (n, n)) - &ksy * joint.view((n, 0), (m, n));
    (post_mean, post_cov)
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn exact_posterior_agrees_with_brute_force_and_relaxed_limit() {
    for seed in 0..100 {
        let (model, y) = random_instance(seed);
        let exact = gaussian_posterior_exact(&model, &y).unwrap();
        let (bm, bc) = brute_force(&model, &y);
        assert!((&exact.mean - &bm).amax() <= 1e-10, "seed {seed}");
        assert!(max_abs(&(&exact.cov - &bc)) <= 1e-10, "seed {seed}");

        // The relaxed s-marginal is even in η with an O(η²) offset;
        // Richardson extrapolation from (η, 2η) removes it.
        let eta = 1e-3;
        let a = relaxed_posterior_exact(&model, &y, &[0.0, eta]).unwrap().leading_marginal(2);
        let b = relaxed_posterior_exact(&model, &y, &[0.0, 2.0 * eta]).unwrap().leading_marginal(2);
        let mean = (&a.mean * 4.0 - &b.mean) / 3.0;
        let cov = (&a.cov * 4.0 - &b.cov) / 3.0;
        assert!((&exact.mean - mean).amax() <= 1e-10, "seed {seed}");
        assert!(max_abs(&(&exact.cov - cov)) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn relaxed_and_split_oracles_approach_the_posterior_as_eta_shrinks() {
    for seed in 0..10 {
        let (model, y) = random_instance(100 + seed);
        let exact = gaussian_posterior_exact(&model, &y).unwrap();
        let mut last = (f64::INFINITY, f64::INFINITY);
        for eta in [0.5, 0.1, 0.02] {
            let relaxed = relaxed_posterior_exact(&model, &y, &[0.0, eta]).unwrap().leading_marginal(2);
            let split = split_posterior_exact(&model, &y, eta).unwrap();
            let d = (
                (&relaxed.mean - &exact.mean).norm(),
                (&split.mean - &exact.mean).norm(),
            );
            assert!(d.0 < last.0 && d.1 < last.1, "seed {seed} eta {eta}: {d:?} after {last:?}");
            last = d;
        }
    }
}
