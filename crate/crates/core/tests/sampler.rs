use dig_core::denoise::GaussianDenoiser;
use dig_core::model::{ComponentSpec, GaussianPrior, MixtureModel, Prior, SensingOp};
use dig_core::oracle::{gaussian_posterior_exact, sample_moments, split_posterior_exact, GaussianPosterior};
use dig_core::rng::stream_rng;
use dig_core::sampler::{
    initial_components, moment_hints, u_conditional, update_s, ChainState, DigConfig, DigSampler, ProximalSplit,
};
use dig_core::schedule::NoiseSchedule;
use dig_core::diffusion::SdeSolverConfig;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn random_vec(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
}

fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Prior {
    Prior::Gaussian(GaussianPrior::new(mean, cov).unwrap())
}

/// Conditional of block `[a0, a0+da)` given the complement fixed at `rest`
/// under `N(m, C)`.
fn block_conditional(p: &GaussianPosterior, a0: usize, da: usize, rest: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = p.dim();
    let other: Vec<usize> = (0..n).filter(|i| *i < a0 || *i >= a0 + da).collect();
    let caa = p.cov.view((a0, a0), (da, da)).into_owned();
    let cab = DMatrix::from_fn(da, other.len(), |i, j| p.cov[(a0 + i, other[j])]);
    let cbb = DMatrix::from_fn(other.len(), other.len(), |i, j| p.cov[(other[i], other[j])]);
    let mb = DVector::from_fn(other.len(), |i, _| p.mean[other[i]]);
    let k = &cab * cbb.try_inverse().unwrap();
    let mean = p.mean.rows(a0, da) + &k * (rest - mb);
    let cov = caa - &k * cab.transpose();
    (mean, cov)
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn two_identity_model(seed: u64, d: usize, sigma_v: f64) -> (MixtureModel, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = (0..2)
        .map(|_| ComponentSpec::identity(d, gaussian(random_vec(d, &mut rng), random_spd(d, &mut rng))))
        .collect();
    let model = MixtureModel::new(comps, sigma_v, d).unwrap();
    let y = random_vec(d, &mut rng);
    (model, y)
}

#[test]
fn gibbs_block_conditionals_match_joint_posterior_conditioning() {
    let (model, y) = two_identity_model(1, 2, 0.7);
    let post = gaussian_posterior_exact(&model, &y).unwrap();
    let s2 = DVector::from_row_slice(&[0.4, -1.3]);
    let (m_hand, c_hand) = block_conditional(&post, 0, 2, &s2);
    let Prior::Gaussian(p1) = &model.components[0].prior else { unreachable!() };
    let lemma = GaussianDenoiser::new(p1.clone())
        .unwrap()
        .conditional(&(&y - &s2), model.sigma_v)
        .unwrap();
    assert!((lemma.mean - m_hand).amax() <= 1e-10);
    assert!(max_abs(&(lemma.cov - c_hand)) <= 1e-10);
}

#[test]
fn one_sweep_kernel_matches_hand_assembled_gibbs_kernel() {
    let (model, y) = two_identity_model(2, 2, 0.8);
    let post = gaussian_posterior_exact(&model, &y).unwrap();
    // s1' | s2⁰ ~ N(a + A s2⁰, C1); s2' | s1' ~ N(b + B s1', C2).
    let s2_0 = DVector::from_row_slice(&[1.0, -0.5]);
    let (m1, c1) = block_conditional(&post, 0, 2, &s2_0);
    let (b0, c2) = block_conditional(&post, 2, 2, &DVector::zeros(2));
    let bmat = {
        let e: Vec<DVector<f64>> = (0..2)
            .map(|j| {
                let mut x = DVector::zeros(2);
                x[j] = 1.0;
                block_conditional(&post, 2, 2, &x).0 - &b0
            })
            .collect();
        DMatrix::from_columns(&e)
    };
    let mean2 = &b0 + &bmat * &m1;
    let cov2 = &c2 + &bmat * &c1 * bmat.transpose();

    let cfg = DigConfig::new(&model, 1);
    let sampler = DigSampler::with_prior_denoisers(&model, &y, &cfg).unwrap();
    let n = 20_000;
    let draws: Vec<DVector<f64>> = (0..n)
        .map(|c| {
            let mut st = ChainState::new(&model, vec![DVector::zeros(2), s2_0.clone()], stream_rng(3, c as u64)).unwrap();
            sampler.sweep(&mut st).unwrap();
            st.s[1].clone()
        })
        .collect();
    let (m, c) = sample_moments(&draws).unwrap();
    for i in 0..2 {
        let se = (cov2[(i, i)] / n as f64).sqrt();
        assert!((m[i] - mean2[i]).abs() < 4.0 * se, "mean {i}: {} vs {}", m[i], mean2[i]);
        assert!((c[(i, i)] / cov2[(i, i)] - 1.0).abs() < 0.05);
    }
}

#[test]
fn dense_u_conditional_matches_joint_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (d, m) = (3, 4);
    let h = DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
    let (sigma, eta) = (0.6, 0.3);
    let model = MixtureModel::new(
        vec![
            ComponentSpec::new(d, SensingOp::dense(h.clone()), gaussian(DVector::zeros(d), DMatrix::identity(d, d)), eta),
            ComponentSpec::identity(m, gaussian(DVector::zeros(m), DMatrix::identity(m, m))),
        ],
        sigma,
        m,
    )
    .unwrap();
    let (r, s) = (random_vec(m, &mut rng), random_vec(d, &mut rng));
    let got = u_conditional(&model, 0, &r, &s, sigma, eta).unwrap();
    // (u, r) jointly Gaussian given s: u ~ N(s, η²I), r = H u + v.
    let e2 = eta * eta;
    let syy = &h * h.transpose() * e2 + DMatrix::identity(m, m) * (sigma * sigma);
    let k = &h.transpose() * e2 * syy.clone().try_inverse().unwrap();
    let mean = &s + &k * (&r - &h * &s);
    let cov = DMatrix::identity(d, d) * e2 - &k * &h * e2;
    assert!((got.mean - mean).amax() <= 1e-10);
    assert!(max_abs(&(got.cov - cov)) <= 1e-10);
}

#[test]
fn wiener_initialization_is_the_oracle_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
    let model = MixtureModel::new(
        vec![
            ComponentSpec::identity(4, gaussian(random_vec(4, &mut rng), random_spd(4, &mut rng))),
            ComponentSpec::new(3, SensingOp::dense(h), gaussian(random_vec(3, &mut rng), random_spd(3, &mut rng)), 0.1),
        ],
        0.5,
        4,
    )
    .unwrap();
    let y = random_vec(4, &mut rng);
    let init = initial_components(&model, &y, &moment_hints(&model, &[])).unwrap();
    let post = gaussian_posterior_exact(&model, &y).unwrap();
    for (k, s) in init.iter().enumerate() {
        assert!((s - post.block_mean(k)).amax() <= 1e-10);
    }
}

#[test]
fn update_s_examples() {
    let model = MixtureModel::new(
        vec![
            ComponentSpec::identity(2, gaussian(DVector::zeros(2), DMatrix::identity(2, 2))),
            ComponentSpec::new(
                2,
                SensingOp::scaled(2.0, 2),
                gaussian(DVector::from_element(2, 3.0), DMatrix::identity(2, 2)),
                1.0,
            ),
        ],
        1.0,
        2,
    )
    .unwrap();
    // Residual for k = 0 is y − H₂ u₂ = (2, 2).
    let y = DVector::from_row_slice(&[4.0, 4.0]);
    let u = DVector::from_element(2, 1.0);
    let solver = SdeSolverConfig::default();
    let sched = NoiseSchedule::default();
    let den0 = GaussianDenoiser::new(GaussianPrior::isotropic(2, 1.0).unwrap()).unwrap();
    let Prior::Gaussian(p1) = &model.components[1].prior else { unreachable!() };
    let den1 = GaussianDenoiser::new(p1.clone()).unwrap();
    let n = 20_000;
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for c in 0..n as u64 {
        let mut st = ChainState::with_aux(
            &model,
            vec![DVector::zeros(2), u.clone()],
            vec![None, Some(u.clone())],
            stream_rng(6, c),
        )
        .unwrap();
        a.push(update_s(&model, &y, &mut st, 0, 1.0, 1.0, &den0, &sched, &solver).unwrap());
        b.push(update_s(&model, &y, &mut st, 1, 1.0, 1e4, &den1, &sched, &solver).unwrap());
    }
    let (ma, ca) = sample_moments(&a).unwrap();
    assert!((ma - DVector::from_element(2, 1.0)).amax() < 0.02);
    assert!(max_abs(&(ca - DMatrix::identity(2, 2) * 0.5)) < 0.02);
    // An uninformative auxiliary observation leaves the prior N(3, I).
    let (mb, cb) = sample_moments(&b).unwrap();
    assert!((mb - DVector::from_element(2, 3.0)).amax() < 0.03);
    assert!(max_abs(&(cb - DMatrix::identity(2, 2))) < 0.04);
}

#[test]
fn single_block_gibbs_is_exact_after_one_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = MixtureModel::new(
        vec![ComponentSpec::identity(3, gaussian(random_vec(3, &mut rng), random_spd(3, &mut rng)))],
        0.9,
        3,
    )
    .unwrap();
    let y = random_vec(3, &mut rng);
    let post = gaussian_posterior_exact(&model, &y).unwrap();
    let cfg = DigConfig::new(&model, 1).with_seed(8);
    let sampler = DigSampler::with_prior_denoisers(&model, &y, &cfg).unwrap();
    let n = 20_000;
    let out: Vec<DVector<f64>> = sampler
        .run_chains(n, &[DVector::from_element(3, 50.0)])
        .unwrap()
        .into_iter()
        .map(|s| s.s[0].clone())
        .collect();
    let (m, c) = sample_moments(&out).unwrap();
    for i in 0..3 {
        let se = (post.cov[(i, i)] / n as f64).sqrt();
        assert!((m[i] - post.mean[i]).abs() < 4.0 * se);
    }
    assert!(max_abs(&(&c - &post.cov)) / max_abs(&post.cov) < 0.05);
}

#[test]
fn annealed_parameters_are_nominal_at_the_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(2, 2) * 2.0;
    let model = MixtureModel::new(
        vec![
            ComponentSpec::identity(2, gaussian(DVector::zeros(2), DMatrix::identity(2, 2))),
            ComponentSpec::new(2, SensingOp::dense(h), gaussian(DVector::zeros(2), DMatrix::identity(2, 2)), 0.05),
        ],
        0.3,
        2,
    )
    .unwrap();
    for plateau in [0, 4] {
        let cfg = DigConfig::new(&model, 20)
            .with_sigma_annealing(3.0)
            .unwrap()
            .with_eta_annealing(1, 1.0)
            .unwrap()
            .with_plateau(plateau);
        cfg.validate(&model).unwrap();
        assert!(cfg.sigma_at(1) > cfg.sigma_at(10));
        for i in (20 - plateau)..=25 {
            assert_eq!(cfg.sigma_at(i), 0.3);
            assert_eq!(cfg.eta_at(1, i), 0.05);
        }
        assert_eq!(cfg.eta_at(0, 3), 0.0);
    }
}

#[test]
fn relabelled_model_targets_the_same_posterior() {
    let (model, y) = two_identity_model(10, 1, 0.5);
    let swapped = MixtureModel::new(
        vec![model.components[1].clone(), model.components[0].clone()],
        model.sigma_v,
        1,
    )
    .unwrap();
    let n = 4000;
    let run = |m: &MixtureModel| -> Vec<DVector<f64>> {
        let cfg = DigConfig::new(m, 15).with_seed(11);
        let s = DigSampler::with_prior_denoisers(m, &y, &cfg).unwrap();
        s.run_chains(n, &[DVector::zeros(1), DVector::zeros(1)])
            .unwrap()
            .into_iter()
            .map(|st| st.stacked())
            .collect()
    };
    let a = run(&model);
    let b: Vec<DVector<f64>> = run(&swapped)
        .into_iter()
        .map(|v| DVector::from_row_slice(&[v[1], v[0]]))
        .collect();
    let (ma, ca) = sample_moments(&a).unwrap();
    let (mb, cb) = sample_moments(&b).unwrap();
    for i in 0..2 {
        let se = (2.0 * ca[(i, i)] / n as f64).sqrt();
        assert!((ma[i] - mb[i]).abs() < 4.0 * se);
        assert!((ca[(i, i)] / cb[(i, i)] - 1.0).abs() < 0.1);
    }
}

#[test]
fn proximal_split_targets_the_perturbed_posterior() {
    let (model, y) = two_identity_model(12, 2, 0.6);
    let eta = 0.4;
    let target = split_posterior_exact(&model, &y, eta).unwrap();
    let cfg = DigConfig::new(&model, 40).with_seed(13);
    let split = ProximalSplit::with_prior_denoisers(&model, &y, &cfg, eta).unwrap();
    let n = 4000;
    let out: Vec<DVector<f64>> = split
        .run_chains(n, &DVector::zeros(4))
        .unwrap()
        .into_iter()
        .map(|parts| dig_core::linalg::concat(&parts))
        .collect();
    let (m, c) = sample_moments(&out).unwrap();
    let rel_mean = (&m - &target.mean).norm() / target.mean.norm();
    let rel_cov = (&c - &target.cov).norm() / target.cov.norm();
    assert!(rel_mean < 0.03, "mean error {rel_mean}");
    assert!(rel_cov < 0.1, "covariance error {rel_cov}");
}
