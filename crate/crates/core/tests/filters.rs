use laenkf_core::filters::*;
use laenkf_core::lae::{Autoencoder, LatentModel, NormalizationStats, Propagator};
use laenkf_core::nn::{Activation, Dense, LinearOperator, Network};
use laenkf_core::rng::{normal_vec, substream, StreamRng};
use laenkf_core::systems::{
    AdrParams, AdrSolver, Dynamics, Lorenz96Params, ObservationOperator, System, SystemSpec, Testbed,
};
use laenkf_core::Matrix;
use nalgebra::{DMatrix, DVector};

fn gaussian_ensemble(n: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = substream(seed, "test-ensemble", 0);
    Matrix::from_vec(n, dim, normal_vec(&mut rng, n * dim)).unwrap()
}

fn relative_shifts(analysis: &Matrix, forecast: &Matrix) -> Vec<f64> {
    (0..forecast.rows())
        .map(|j| {
            let shift: f64 = analysis
                .row(j)
                .iter()
                .zip(forecast.row(j))
                .map(|(a, f)| (a - f) * (a - f))
                .sum::<f64>()
                .sqrt();
            shift / forecast.row(j).iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .collect()
}

#[test]
fn zero_gain_limit_leaves_forecast_in_place() {
    let bed = Testbed::build(&SystemSpec::Lorenz96(Lorenz96Params::default()), 1).unwrap();
    let forecast = make_initial_ensemble(&bed.system, 40, 1.0, 12).unwrap();
    let h = &bed.observation;
    let predicted = h.apply_rows(&forecast).unwrap();
    let y = h.apply(forecast.row(0)).unwrap();
    let mut gamma = h.noise_covariance();
    gamma.scale(1e6);
    let factor = perturbation_factor(&gamma).unwrap();
    let eta = draw_perturbations(factor.as_ref(), h.obs_dim(), 40, 7, 1);
    let analysis = enkf_analysis(&forecast, &predicted, &y, &gamma, &eta, None).unwrap();
    for (j, r) in relative_shifts(&analysis, &forecast).into_iter().enumerate() {
        assert!(r < 1e-3, "member {j}: {r}");
    }
    // Without perturbations only the O(1/Γ) gain remains.
    let zero = Matrix::zeros(40, h.obs_dim());
    let analysis = enkf_analysis(&forecast, &predicted, &y, &gamma, &zero, None).unwrap();
    for r in relative_shifts(&analysis, &forecast) {
        assert!(r < 1e-5);
    }
}

#[test]
fn collapsed_ensemble_has_zero_covariance_and_no_update() {
    let member = [1.0, -2.0, 0.5, 3.0];
    let forecast = Matrix::from_rows(&vec![member; 10]).unwrap();
    let h = ObservationOperator::subsample(vec![1, 3], 0.3);
    let predicted = h.apply_rows(&forecast).unwrap();
    let stats = sample_stats(&forecast, &predicted).unwrap();
    assert!(stats.pxy.as_slice().iter().all(|v| *v == 0.0));
    assert!(stats.pyy.as_slice().iter().all(|v| *v == 0.0));
    let gamma = h.noise_covariance();
    let eta = draw_perturbations(perturbation_factor(&gamma).unwrap().as_ref(), 2, 10, 3, 1);
    let analysis = enkf_analysis(&forecast, &predicted, &[9.0, 9.0], &gamma, &eta, None).unwrap();
    assert_eq!(analysis, forecast);
}

#[test]
fn analysis_members_move_along_gain_columns() {
    let forecast = gaussian_ensemble(25, 8, 2);
    let h = ObservationOperator::subsample(vec![1, 5, 6], 0.4);
    let predicted = h.apply_rows(&forecast).unwrap();
    let gamma = h.noise_covariance();
    let eta = draw_perturbations(perturbation_factor(&gamma).unwrap().as_ref(), 3, 25, 11, 2);
    let analysis = enkf_analysis(&forecast, &predicted, &[1.0, 0.0, -1.0], &gamma, &eta, None).unwrap();
    let stats = sample_stats(&forecast, &predicted).unwrap();
    let k = kalman_gain(&stats.pxy, &stats.pyy, &gamma).unwrap();
    let kk = DMatrix::from_row_slice(k.rows(), k.cols(), k.as_slice());
    let svd = kk.clone().svd(true, true);
    for j in 0..25 {
        let shift: Vec<f64> = analysis.row(j).iter().zip(forecast.row(j)).map(|(a, f)| a - f).collect();
        let s = DVector::from_vec(shift);
        let coef = svd.solve(&s, 1e-14).unwrap();
        let resid = (&kk * coef - &s).norm();
        assert!(resid < 1e-10 * s.norm().max(1.0), "member {j}: residual {resid}");
    }
}

#[test]
fn localized_covariances_vanish_beyond_twice_the_radius() {
    let d = 40;
    let idx: Vec<usize> = (0..d).step_by(2).collect();
    let radius = 4.0;
    let taper = periodic_taper(d, &idx, radius).unwrap();
    let forecast = gaussian_ensemble(30, d, 3);
    let h = ObservationOperator::subsample(idx.clone(), 1.0);
    let mut stats = sample_stats(&forecast, &h.apply_rows(&forecast).unwrap()).unwrap();
    stats.pxy.hadamard_assign(&taper.xy).unwrap();
    for i in 0..d {
        for (j, &o) in idx.iter().enumerate() {
            if periodic_distance(i, o, d) as f64 >= 2.0 * radius {
                assert_eq!(stats.pxy[(i, j)], 0.0);
            }
        }
    }
    let gc = gaspari_cohn(radius, radius).unwrap();
    assert!((gc - 5.0 / 24.0).abs() < 1e-15);
}

#[test]
fn sample_covariance_matches_known_gaussian() {
    // y = L ξ with L L^T = C.
    let c: [[f64; 2]; 2] = [[2.0, 0.6], [0.6, 0.5]];
    let l00 = c[0][0].sqrt();
    let l10 = c[1][0] / l00;
    let l11 = (c[1][1] - l10 * l10).sqrt();
    let n = 100_000;
    let xi = gaussian_ensemble(n, 2, 4);
    let mut y = Matrix::zeros(n, 2);
    for j in 0..n {
        let (a, b) = (xi[(j, 0)], xi[(j, 1)]);
        y[(j, 0)] = l00 * a;
        y[(j, 1)] = l10 * a + l11 * b;
    }
    let s = sample_stats(&y, &y).unwrap();
    for i in 0..2 {
        assert!((s.pyy[(i, i)] - c[i][i]).abs() / c[i][i] < 0.02);
    }
    assert!((s.pyy[(0, 1)] - c[0][1]).abs() < 0.02 * (c[0][0] * c[1][1]).sqrt());
}

struct LinearModel {
    m: [[f64; 2]; 2],
    q_std: f64,
}

impl Dynamics for LinearModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn advance(&self, x: &[f64], rng: &mut StreamRng) -> laenkf_core::Result<Vec<f64>> {
        let w = normal_vec(rng, 2);
        Ok((0..2)
            .map(|i| self.m[i][0] * x[0] + self.m[i][1] * x[1] + self.q_std * w[i])
            .collect())
    }
}

/// Exact Kalman filter means for the same observations.
fn kalman_means(model: &LinearModel, h: [f64; 2], r: f64, m0: [f64; 2], p0: f64, ys: &[f64]) -> Vec<[f64; 2]> {
    let mut m = m0;
    let mut p = [[p0, 0.0], [0.0, p0]];
    let q = model.q_std * model.q_std;
    let a = model.m;
    let mut out = Vec::new();
    for &y in ys {
        let mf = [a[0][0] * m[0] + a[0][1] * m[1], a[1][0] * m[0] + a[1][1] * m[1]];
        let mut ap = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                ap[i][j] = a[i][0] * p[0][j] + a[i][1] * p[1][j];
            }
        }
        let mut pf = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                pf[i][j] = ap[i][0] * a[j][0] + ap[i][1] * a[j][1] + if i == j { q } else { 0.0 };
            }
        }
        let ph = [pf[0][0] * h[0] + pf[0][1] * h[1], pf[1][0] * h[0] + pf[1][1] * h[1]];
        let s = h[0] * ph[0] + h[1] * ph[1] + r;
        let k = [ph[0] / s, ph[1] / s];
        let innov = y - (h[0] * mf[0] + h[1] * mf[1]);
        m = [mf[0] + k[0] * innov, mf[1] + k[1] * innov];
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] = pf[i][j] - k[i] * ph[j];
            }
        }
        out.push(m);
    }
    out
}

fn oracle_error(n_e: usize, seed: u64) -> f64 {
    let theta: f64 = 0.3;
    let model = LinearModel {
        m: [[0.95 * theta.cos(), -0.95 * theta.sin()], [0.95 * theta.sin(), 0.95 * theta.cos()]],
        q_std: 0.3,
    };
    let h = [1.0, 0.5];
    let sigma = 0.5;
    let m0 = [3.0, -2.0];
    let mut rng = substream(seed, "truth", 0);
    let mut x = vec![m0[0] + normal_vec(&mut rng, 1)[0], m0[1] + normal_vec(&mut rng, 1)[0]];
    let mut ys = Vec::new();
    for _ in 0..20 {
        x = model.advance(&x, &mut rng).unwrap();
        ys.push(h[0] * x[0] + h[1] * x[1] + sigma * normal_vec(&mut rng, 1)[0]);
    }
    let exact = kalman_means(&model, h, sigma * sigma, m0, 1.0, &ys);
    let mut init = gaussian_ensemble(n_e, 2, seed + 1000);
    init.add_row_vector(&m0).unwrap();
    let op = ObservationOperator::linear(Matrix::from_rows(&[h]).unwrap(), sigma);
    let y = Matrix::from_vec(20, 1, ys).unwrap();
    let cfg = FilterConfig {
        kind: FilterKind::Enkf,
        ensemble_size: n_e,
        seed,
        ..Default::default()
    };
    let res = run_enkf(&model, &op, &init, &y, &cfg).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, m) in exact.iter().enumerate() {
        for i in 0..2 {
            num += (res.estimates[(k, i)] - m[i]).powi(2);
            den += m[i] * m[i];
        }
    }
    (num / den).sqrt()
}

#[test]
fn enkf_approaches_the_kalman_filter_as_the_ensemble_grows() {
    let median = |n_e: usize| {
        let mut v: Vec<f64> = (0..10).map(|s| oracle_error(n_e, s)).collect();
        v.sort_by(f64::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    let small = median(100);
    let large = median(2000);
    assert!(large < small, "N_e=100: {small}, N_e=2000: {large}");
    assert!(large < 0.03, "N_e=2000 error {large}");
}

fn lorenz_setup(seed: u64) -> (Testbed, Matrix, Matrix) {
    let spec = SystemSpec::Lorenz96(Lorenz96Params::default());
    let bed = Testbed::build(&spec, seed).unwrap();
    let mut rng = substream(seed, "truth", 0);
    let x0 = bed.system.sample_initial_state(&mut rng).unwrap();
    let (_, obs) = bed.simulate(x0, 8, &mut rng).unwrap();
    let y = Matrix::from_rows(&(1..=8).map(|k| obs.row(k).to_vec()).collect::<Vec<_>>()).unwrap();
    let init = make_initial_ensemble(&bed.system, 20, 1.0, seed).unwrap();
    (bed, init, y)
}

#[test]
fn identity_projector_reproduces_the_enkf_exactly() {
    let (bed, init, y) = lorenz_setup(5);
    let cfg = FilterConfig {
        kind: FilterKind::Enkf,
        ensemble_size: 20,
        seed: 9,
        ..Default::default()
    };
    let a = run_enkf(&bed.system, &bed.observation, &init, &y, &cfg).unwrap();
    let b = run_ae_enkf(&bed.system, &bed.observation, &IdentityProjector, &init, &y, &cfg).unwrap();
    assert_eq!(a.estimates, b.estimates);
    let again = run_enkf(&bed.system, &bed.observation, &init, &y, &cfg).unwrap();
    assert_eq!(a, again);
}

#[test]
fn forecast_examples() {
    let init = gaussian_ensemble(5, 2, 6);
    let identity = LinearModel {
        m: [[1.0, 0.0], [0.0, 1.0]],
        q_std: 0.0,
    };
    assert_eq!(enkf_forecast(&init, &identity, 1, 1).unwrap(), init);
    let shear = LinearModel {
        m: [[1.0, 2.0], [0.0, 3.0]],
        q_std: 0.0,
    };
    let out = enkf_forecast(&init, &shear, 1, 1).unwrap();
    for j in 0..5 {
        let x = init.row(j);
        assert_eq!(out.row(j), &[x[0] + 2.0 * x[1], 3.0 * x[1]]);
    }
}

/// `(I; −I)` then `(A, −A)/(1 + slope)` reproduces `z ↦ A z` through a
/// LeakyReLU hidden layer.
fn linear_as_network(a: &Matrix, slope: f64) -> Network {
    let n = a.rows();
    let mut w1 = Matrix::zeros(2 * n, n);
    for i in 0..n {
        w1[(i, i)] = 1.0;
        w1[(n + i, i)] = -1.0;
    }
    let mut w2 = Matrix::zeros(n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            w2[(i, j)] = a[(i, j)] / (1.0 + slope);
            w2[(i, n + j)] = -a[(i, j)] / (1.0 + slope);
        }
    }
    Network::new(vec![
        Dense {
            weight: w1,
            bias: vec![0.0; 2 * n],
            activation: Activation::LeakyRelu(slope),
        },
        Dense {
            weight: w2,
            bias: vec![0.0; n],
            activation: Activation::Identity,
        },
    ])
    .unwrap()
}

fn small_latent_model(d: usize, dy: usize, n: usize, propagator: Propagator) -> LatentModel {
    let act = Activation::LeakyRelu(0.1);
    let mut rng = substream(21, "nets", 0);
    let encoder = Network::init(&[d, 16, n], act, &mut rng).unwrap();
    let decoder = Network::init(&[n, 16, d], act, &mut rng).unwrap();
    let obs_encoder = Network::init(&[dy, 8, n], act, &mut rng).unwrap();
    LatentModel {
        autoencoder: Autoencoder::new(encoder, decoder, propagator).unwrap(),
        obs_encoder,
        h: Matrix::identity(n),
        gamma_tilde: Matrix::from_diag(&vec![0.05; n]),
        state_stats: NormalizationStats::identity(d),
        obs_stats: NormalizationStats::identity(dy),
        delay: 1,
    }
}

#[test]
fn all_runners_share_the_schedule_and_equivalent_propagators_agree() {
    let (bed, init, y) = lorenz_setup(8);
    let cfg = FilterConfig {
        kind: FilterKind::LaeEnkf,
        ensemble_size: 20,
        seed: 4,
        ..Default::default()
    };
    let n = 3;
    let mut a = Matrix::zeros(n, n);
    for (i, v) in [0.9, -0.2, 0.1, 0.3, 0.8, 0.0, -0.1, 0.2, 0.7].iter().enumerate() {
        a.as_mut_slice()[i] = *v;
    }
    let lae = small_latent_model(40, 20, n, Propagator::Linear(LinearOperator::new(a.clone()).unwrap()));
    let mut dae = lae.clone();
    dae.autoencoder.propagator = Propagator::Nonlinear(linear_as_network(&a, 0.1));

    let r_lae = run_lae_enkf(&lae, &init, &y, &cfg).unwrap();
    let r_dae = run_dae_enkf(&dae, &init, &y, &cfg).unwrap();
    assert_eq!(r_lae.kind, FilterKind::LaeEnkf);
    assert_eq!(r_dae.kind, FilterKind::DaeEnkf);
    for (p, q) in r_lae.estimates.row(0).iter().zip(r_dae.estimates.row(0)) {
        assert!((p - q).abs() <= 1e-10 * p.abs().max(1.0));
    }
    assert!(run_lae_enkf(&dae, &init, &y, &cfg).is_err());
    assert!(run_dae_enkf(&lae, &init, &y, &cfg).is_err());

    let r_enkf = run_enkf(&bed.system, &bed.observation, &init, &y, &cfg).unwrap();
    let r_loc = run_enkf(
        &bed.system,
        &bed.observation,
        &init,
        &y,
        &FilterConfig {
            kind: FilterKind::EnkfLocalized,
            ..cfg.clone()
        },
    )
    .unwrap();
    let r_ae = run_ae_enkf(&bed.system, &bed.observation, &IdentityProjector, &init, &y, &cfg).unwrap();
    for r in [&r_lae, &r_dae, &r_enkf, &r_loc, &r_ae] {
        assert_eq!(r.cycles(), 8);
        assert_eq!(r.estimates.cols(), 40);
    }
    assert_eq!(r_lae, run_lae_enkf(&lae, &init, &y, &cfg).unwrap());
}

#[test]
fn huge_latent_noise_gives_the_decoded_free_run() {
    let (_, init, y) = lorenz_setup(3);
    let n = 2;
    let a = Matrix::from_rows(&[[0.98, -0.1], [0.1, 0.98]]).unwrap();
    let mut model = small_latent_model(40, 20, n, Propagator::Linear(LinearOperator::new(a).unwrap()));
    model.gamma_tilde = Matrix::from_diag(&[1e12, 1e12]);
    let cfg = FilterConfig {
        ensemble_size: 20,
        seed: 2,
        ..Default::default()
    };
    let res = run_lae_enkf(&model, &init, &y, &cfg).unwrap();
    let mut z = model.encode_states(&init).unwrap();
    for k in 0..y.rows() {
        z = model.autoencoder.propagator.apply_batch(&z).unwrap();
        let free = model.decode(&z.column_means()).unwrap();
        for (p, q) in res.estimates.row(k).iter().zip(&free) {
            assert!((p - q).abs() < 1e-4 * q.abs().max(1.0), "cycle {k}: {p} vs {q}");
        }
    }
}

#[test]
fn initial_ensembles_are_reproducible() {
    let spec = SystemSpec::Toy(Default::default());
    let bed = Testbed::build(&spec, 3).unwrap();
    let a = make_initial_ensemble(&bed.system, 30, 1.0, 17).unwrap();
    assert_eq!(a, make_initial_ensemble(&bed.system, 30, 1.0, 17).unwrap());
    // Toy members lie in span(W): projecting onto the plane changes nothing.
    let System::Toy(toy) = &bed.system else { unreachable!() };
    for j in 0..30 {
        let c = toy.plane_coords(a.row(j)).unwrap();
        let back = toy.embedding.matvec(&c).unwrap();
        for (p, q) in back.iter().zip(a.row(j)) {
            assert!((p - q).abs() < 1e-10);
        }
    }
}

#[test]
fn adr_prior_autocorrelation_width() {
    let params = AdrParams::default();
    let n = params.grid_n;
    let system = System::Adr(AdrSolver::new(params).unwrap());
    let members = make_initial_ensemble(&system, 100, 1.0, 5).unwrap();
    // Empirical autocorrelation along x1, averaged over members and rows.
    let mut acf = vec![0.0; n / 2];
    for j in 0..members.rows() {
        let u = members.row(j);
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let var = u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        for (lag, slot) in acf.iter_mut().enumerate() {
            let mut c = 0.0;
            for row in 0..n {
                for i in 0..n {
                    c += (u[row * n + i] - mean) * (u[row * n + (i + lag) % n] - mean);
                }
            }
            *slot += c / var;
        }
    }
    let r0 = acf[0];
    let lag = acf.iter().position(|v| *v / r0 < 0.5).unwrap();
    let (a, b) = (acf[lag - 1] / r0, acf[lag] / r0);
    let half = (lag - 1) as f64 + (a - 0.5) / (a - b);
    let width = 2.0 * half;
    // Smoothing white noise with a std-3 Gaussian gives an autocorrelation
    // of std 3·√2, whose full width at half height is 2.355·3·√2.
    let expected = 2.0 * (2.0 * 2f64.ln()).sqrt() * 3.0 * 2f64.sqrt();
    assert!((width - expected).abs() < 0.2 * expected, "width {width}, expected {expected}");
}
