use ogan::data::{mixture_centers, sample_mixture, DatasetSpec};
use ogan::eval::{
    coverage_of_points, density_ratio_check, interpolate, latent_stats, mode_coverage, reconstruction,
    scalar_fn, train_oracle_discriminator, uniform_grid, Gaussian1, OracleConfig,
};
use ogan::ndnum::{Rng, Tensor};
use ogan::nets::{Activation, Layer, MlpParams, NetSpec};

fn linear(rows: usize, cols: usize, w: &[f32], bias: Vec<f32>) -> MlpParams {
    MlpParams::from_layers(vec![Layer {
        weight: Tensor::new(vec![rows, cols], w.to_vec()).unwrap(),
        bias: Tensor::vector(bias),
        activation: Activation::Linear,
    }])
    .unwrap()
}

const RADIUS: f32 = 0.7;

/// `E(x) = [x₁, x₂, −x₁, −x₂]` has zero row mean and row std `‖x‖/√2`, so
/// `𝒩(E(x))` is `√2·[x, −x]/‖x‖`. On the circle `‖x‖ = RADIUS` the decoder
/// `G(c) = RADIUS/√2 · c[..2]` inverts it.
fn circle_pair(shift: f32) -> (MlpParams, MlpParams) {
    let e = linear(2, 4, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0], vec![shift; 4]);
    let k = RADIUS / 2f32.sqrt();
    let g = linear(4, 2, &[k, 0.0, 0.0, k, 0.0, 0.0, 0.0, 0.0], vec![0.0; 2]);
    (e, g)
}

fn circle_points(n: usize) -> Tensor {
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            let a = i as f32 * 0.37;
            vec![RADIUS * a.cos(), RADIUS * a.sin()]
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn random_nets(seed: u64) -> (MlpParams, MlpParams) {
    let mut rng = Rng::new(seed);
    let g = NetSpec::generator(8, 2, &[32, 32]).build(&mut rng).unwrap();
    let e = NetSpec::encoder(2, 8, &[32, 32]).build(&mut rng).unwrap();
    (e, g)
}

#[test]
fn constructed_inverse_reconstructs_exactly() {
    let (e, g) = circle_pair(0.0);
    let x = circle_points(50);
    let x_hat = reconstruction(&e, &g, &x).unwrap();
    assert!(max_abs_diff(&x, &x_hat) <= 1e-5, "{}", max_abs_diff(&x, &x_hat));
}

#[test]
fn reconstruction_ignores_a_shift_of_the_code_mean() {
    let x = circle_points(50);
    let (e, g) = circle_pair(0.0);
    let base = reconstruction(&e, &g, &x).unwrap();
    for c in [-3.0, 0.5, 10.0] {
        let (e_shifted, _) = circle_pair(c);
        let raw = e_shifted.forward(&x).unwrap();
        let mean: f32 = raw.data().iter().sum::<f32>() / raw.len() as f32;
        assert!((mean - c).abs() < 1e-5);
        let shifted = reconstruction(&e_shifted, &g, &x).unwrap();
        assert!(max_abs_diff(&base, &shifted) <= 1e-5, "c = {c}");
    }
}

#[test]
fn random_nets_reconstruct_inside_the_open_box() {
    for seed in 0..5 {
        let (e, g) = random_nets(seed);
        let mut rng = Rng::new(100 + seed);
        let x = sample_mixture(8, 0.05, &mut rng, 256).x;
        let x_hat = reconstruction(&e, &g, &x).unwrap();
        assert!(x_hat.all_finite());
        assert!(x_hat.data().iter().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn constant_code_rows_decode_to_finite_output() {
    let e = linear(2, 4, &[0.0; 8], vec![0.4; 4]);
    let (_, g) = circle_pair(0.0);
    let x_hat = reconstruction(&e, &g, &circle_points(4)).unwrap();
    assert!(x_hat.all_finite());
    assert_eq!(x_hat.data(), &[0.0; 8]);
}

#[test]
fn identity_encoder_on_whitened_inputs_has_unit_statistics() {
    let n = 64;
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
    }
    let e = linear(n, n, &w, vec![0.0; n]);
    let mut rng = Rng::new(5);
    let x = Tensor::new(vec![2000, n], rng.normal_vec(2000 * n)).unwrap();
    let (avg, std) = latent_stats(&e, &x).unwrap();
    assert!(avg.abs() < 0.01, "{avg}");
    assert!((std - 1.0).abs() < 0.03, "{std}");
}

#[test]
fn ground_truth_sampler_covers_every_mode() {
    let (std, m) = (0.05, 10_000);
    // 2-D normal mass within 3σ
    let inside = 1.0 - (-4.5f64).exp();
    for k in 1..=16 {
        let mut rng = Rng::new(k as u64);
        let points = sample_mixture(k, std, &mut rng, m).x;
        let cov = coverage_of_points(&points, &mixture_centers(k), std, 0.01, 3.0).unwrap();
        assert_eq!(cov.covered, k, "K = {k}: {:?}", cov.fractions);
        for f in &cov.fractions {
            assert!((f - inside / k as f64).abs() < 0.02, "K = {k}: {f}");
        }
    }
}

#[test]
fn collapsed_generator_covers_one_mode() {
    let center = mixture_centers(8)[3];
    let g = linear(4, 2, &[0.0; 8], vec![center[0] as f32, center[1] as f32]);
    let spec = DatasetSpec::GaussianMixture { modes: 8, std: 0.05 };
    let cov = mode_coverage(&g, &spec, &mut Rng::new(1), 10_000, 0.01, 3.0).unwrap();
    assert_eq!(cov.covered, 1);
    assert_eq!(cov.fractions[3], 1.0);
    assert!(mode_coverage(&g, &spec, &mut Rng::new(1), 999, 0.01, 3.0).is_err());
    let ring = DatasetSpec::Ring { std: 0.05 };
    assert!(mode_coverage(&g, &ring, &mut Rng::new(1), 10_000, 0.01, 3.0).is_err());
}

#[test]
fn interpolation_endpoints_are_the_reconstructions() {
    let (e, g) = random_nets(3);
    let (a, b) = ([0.3f32, -0.2], [-0.6f32, 0.5]);
    for steps in [2, 3, 11] {
        let path = interpolate(&e, &g, &a, &b, steps).unwrap();
        assert_eq!(path.rows(), steps);
        let ra = reconstruction(&e, &g, &Tensor::from_rows(&[a.to_vec()]).unwrap()).unwrap();
        let rb = reconstruction(&e, &g, &Tensor::from_rows(&[b.to_vec()]).unwrap()).unwrap();
        assert_eq!(path.row(0), ra.row(0));
        assert_eq!(path.row(steps - 1), rb.row(0));
    }
}

#[test]
fn interpolating_a_point_with_itself_is_constant() {
    let (e, g) = random_nets(4);
    let a = [0.1f32, 0.45];
    let path = interpolate(&e, &g, &a, &a, 9).unwrap();
    for r in 1..path.rows() {
        for (u, v) in path.row(0).iter().zip(path.row(r)) {
            assert!((u - v).abs() <= 1e-6);
        }
    }
}

#[test]
fn analytic_log_ratio_correlates_exactly() {
    let p = Gaussian1 { mean: 0.0, std: 1.0 };
    let q = Gaussian1 { mean: 0.5, std: 1.0 };
    let grid = uniform_grid(-3.0, 3.0, 121);
    let check = density_ratio_check(|x| p.log_pdf(x) - q.log_pdf(x), p, q, &grid);
    assert!((check.correlation - 1.0).abs() <= 1e-6);
    let flat = density_ratio_check(|_| -1.0, p, q, &grid);
    assert!(flat.degenerate && flat.correlation == 0.0);
}

#[test]
fn trained_discriminator_recovers_the_log_ratio() {
    let cfg = OracleConfig::default();
    let d = train_oracle_discriminator(&cfg).unwrap();
    let check = density_ratio_check(scalar_fn(&d), cfg.p, cfg.q, &uniform_grid(-3.0, 3.0, 121));
    assert!(!check.degenerate);
    assert!(check.correlation >= 0.95, "{}", check.correlation);
}
