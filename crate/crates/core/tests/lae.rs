use laenkf_core::lae::{
    delay_embed, estimate_gamma_tilde, gamma_from_residuals, stage1_loss_with, stage2_loss, train_autoencoder,
    train_latent_model, Autoencoder, LatentTrainConfig, LossWeights, NormalizationStats, PowerIteration, Propagator,
    PropagatorKind, Stage1Config, Stage2Config, StageOneData, TrainConfig,
};
use laenkf_core::linalg::cholesky;
use laenkf_core::nn::{Activation, Dense, Network};
use laenkf_core::rng::{normal_vec, substream};
use laenkf_core::systems::{generate_dataset, Dataset, SystemSpec, ToyParams};
use laenkf_core::Matrix;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

const PRECISE: PowerIteration = PowerIteration {
    tol: 1e-15,
    max_iter: 100_000,
};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::from_vec(rows, cols, normal_vec(&mut substream(seed, "test", 0), rows * cols)).unwrap()
}

/// Plain forward pass written from the layer definitions.
fn forward(net: &Network, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in net.layers() {
        let w = &layer.weight;
        h = (0..w.rows())
            .map(|i| {
                let z: f64 = layer.bias[i] + (0..w.cols()).map(|j| w[(i, j)] * h[j]).sum::<f64>();
                match layer.activation {
                    Activation::LeakyRelu(s) if z <= 0.0 => s * z,
                    _ => z,
                }
            })
            .collect();
    }
    h
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn oracle_stage1(ae: &Autoencoder, x: &Matrix, xn: &Matrix, w: &LossWeights) -> f64 {
    let prop = |z: &[f64]| match &ae.propagator {
        Propagator::Linear(op) => {
            let a = &op.a;
            (0..a.rows()).map(|i| (0..a.cols()).map(|j| a[(i, j)] * z[j]).sum()).collect::<Vec<f64>>()
        }
        Propagator::Nonlinear(net) => forward(net, z),
    };
    let b = x.rows() as f64;
    let (mut rec, mut pred, mut lat) = (0.0, 0.0, 0.0);
    for k in 0..x.rows() {
        let z = forward(&ae.encoder, x.row(k));
        let zp = prop(&z);
        rec += sq(&forward(&ae.decoder, &z), x.row(k));
        pred += sq(&forward(&ae.decoder, &zp), xn.row(k));
        lat += sq(&zp, &forward(&ae.encoder, xn.row(k)));
    }
    let reg = match ae.propagator.linear_operator() {
        Some(a) => {
            let s = DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice()).singular_values().max();
            (s - 1.0).max(0.0).powi(2)
        }
        None => 0.0,
    };
    w.rec * rec / b + w.pred * pred / b + w.latent * lat / b + w.reg * reg
}

/// Freshly initialized autoencoder whose linear `A` is replaced by a Gaussian draw.
fn random_autoencoder(dim: usize, n: usize, hidden: &[usize], kind: PropagatorKind, seed: u64) -> Autoencoder {
    let cfg = Stage1Config {
        latent_dim: n,
        hidden: hidden.to_vec(),
        propagator: kind,
        ..Stage1Config::default()
    };
    let mut ae = cfg.init_autoencoder(dim, seed).unwrap();
    if let Propagator::Linear(op) = &mut ae.propagator {
        op.a = random_matrix(n, n, seed + 100);
    }
    ae
}

#[test]
fn stage1_loss_matches_scripted_reevaluation() {
    let ae = random_autoencoder(4, 2, &[6, 5], PropagatorKind::Linear, 11);
    let x = random_matrix(3, 4, 1);
    let xn = random_matrix(3, 4, 2);
    let w = LossWeights {
        rec: 0.7,
        pred: 1.3,
        latent: 0.4,
        reg: 10.0,
    };
    let got = stage1_loss_with(&ae, &x, &xn, &w, &PRECISE, None).unwrap().terms.total;
    let want = oracle_stage1(&ae, &x, &xn, &w);
    assert!(oracle_stage1(&ae, &x, &xn, &LossWeights { rec: 0.0, pred: 0.0, latent: 0.0, reg: 1.0 }) > 0.0);
    assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
}

/// Relative l2 distance between the analytic gradient and central
/// differences of the composite loss over every parameter.
fn fd_relative_error(ae: &Autoencoder, x: &Matrix, xn: &Matrix, w: &LossWeights) -> f64 {
    let analytic = stage1_loss_with(ae, x, xn, w, &PRECISE, None).unwrap().grads.into_tensors();
    let h = 1e-6;
    let (mut num, mut den) = (0.0, 0.0);
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let eval = |delta: f64| {
                let mut p = ae.clone();
                p.params_mut()[t][i] += delta;
                stage1_loss_with(&p, x, xn, w, &PRECISE, None).unwrap().terms.total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            num += (analytic[t][i] - fd).powi(2);
            den += analytic[t][i].powi(2);
        }
    }
    (num / den).sqrt()
}

#[test]
fn stage1_gradients_match_finite_differences() {
    let nets = [
        (5, 2, vec![7], PropagatorKind::Linear),
        (6, 3, vec![8, 5], PropagatorKind::Linear),
        (4, 2, vec![6, 6], PropagatorKind::Linear),
        (8, 4, vec![5], PropagatorKind::Linear),
        (5, 2, vec![6], PropagatorKind::Nonlinear { hidden: 4 }),
    ];
    for (s, (dim, n, hidden, kind)) in nets.into_iter().enumerate() {
        let ae = random_autoencoder(dim, n, &hidden, kind, 20 + s as u64);
        if let Some(a) = ae.propagator.linear_operator() {
            let sigma = DMatrix::from_row_slice(n, n, a.as_slice()).singular_values().max();
            assert!(sigma > 1.0, "penalty must be active");
        }
        let x = random_matrix(6, dim, 40 + s as u64);
        let xn = random_matrix(6, dim, 60 + s as u64);
        let err = fd_relative_error(&ae, &x, &xn, &LossWeights::default());
        assert!(err < 1e-5, "net {s}: relative error {err}");
    }
}

#[test]
fn stage2_loss_examples_and_oracle() {
    let scalar = |w: f64| {
        Network::new(vec![Dense {
            weight: Matrix::from_diag(&[w]),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    };
    let one = Matrix::from_diag(&[1.0]);
    // E_obs(y) = 2, H E(x) = 5.
    let (l, _) = stage2_loss(&scalar(2.0), &scalar(5.0), &one, &one, &one).unwrap();
    assert_eq!(l, 9.0);
    let (l, g) = stage2_loss(&scalar(5.0), &scalar(5.0), &one, &one, &one).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.is_zero());

    let mut rng = substream(3, "test", 1);
    let obs_enc = Network::init(&[6, 5, 3], Activation::LeakyRelu(0.1), &mut rng).unwrap();
    let enc = Network::init(&[4, 7, 2], Activation::LeakyRelu(0.1), &mut rng).unwrap();
    let h = random_matrix(3, 2, 9);
    let y = random_matrix(5, 6, 10);
    let x = random_matrix(5, 4, 11);
    let (got, _) = stage2_loss(&obs_enc, &enc, &h, &y, &x).unwrap();
    let mut want = 0.0;
    for k in 0..5 {
        let z = forward(&enc, x.row(k));
        let hz: Vec<f64> = (0..3).map(|i| (0..2).map(|j| h[(i, j)] * z[j]).sum()).collect();
        want += sq(&forward(&obs_enc, y.row(k)), &hz);
    }
    want /= 5.0;
    assert!((got - want).abs() <= 1e-12 * want.max(1.0));
}

fn small_toy(n_traj: usize, k: usize, seed: u64) -> Dataset {
    generate_dataset(&SystemSpec::Toy(ToyParams::default()), n_traj, k, seed, 0.8).unwrap()
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

fn small_stage1(epochs: usize) -> Stage1Config {
    Stage1Config {
        latent_dim: 2,
        hidden: vec![16],
        train: quick_train(epochs),
        ..Stage1Config::default()
    }
}

#[test]
fn normalized_training_split_has_unit_moments() {
    let ds = small_toy(10, 30, 4);
    let stats = NormalizationStats::fit(ds.split.train.iter().flat_map(|&i| ds.trajectories[i].states.row_iter())).unwrap();
    let data = StageOneData::from_dataset(&ds, &stats).unwrap();
    assert!(data.x.rows() > 0);
    let rows: Vec<Vec<f64>> = ds
        .split
        .train
        .iter()
        .flat_map(|&i| ds.trajectories[i].states.row_iter().map(|r| stats.normalize(r)))
        .collect();
    let n = rows.len() as f64;
    for j in 0..ds.state_dim() {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10, "component {j} mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-10, "component {j} std {}", var.sqrt());
    }
    let x = &rows[3];
    let back = stats.normalize(&stats.denormalize(x));
    for (a, b) in back.iter().zip(x) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(stats.normalize(&stats.mean).iter().all(|v| *v == 0.0));
}

#[test]
fn gamma_tilde_monte_carlo_and_floor() {
    let mut rng = substream(8, "test", 2);
    let n = 10_000;
    let data: Vec<f64> = (0..n * 3).map(|_| 0.2 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let g = gamma_from_residuals(&Matrix::from_vec(n, 3, data).unwrap());
    for j in 0..3 {
        assert!((g[(j, j)] / 0.04 - 1.0).abs() < 0.1, "diagonal {}", g[(j, j)]);
    }
    assert!(cholesky(&g).is_ok());
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(g[(i, j)], g[(j, i)]);
        }
    }

    // An observation encoder that reproduces H E(x) exactly leaves only the jitter.
    let id = Network::new(vec![Dense {
        weight: Matrix::identity(2),
        bias: vec![0.0; 2],
        activation: Activation::Identity,
    }])
    .unwrap();
    let x = random_matrix(20, 2, 5);
    let g = estimate_gamma_tilde(&id, &id, &Matrix::identity(2), &x, &x).unwrap();
    assert_eq!(g, Matrix::identity(2).scaled(1e-6));
}

/// Toy trajectories frozen at their initial state.
fn identity_dataset() -> Dataset {
    let mut ds = small_toy(40, 8, 6);
    for t in &mut ds.trajectories {
        let x0 = t.state(0).to_vec();
        for k in 1..t.len() {
            t.states.row_mut(k).copy_from_slice(&x0);
        }
    }
    ds
}

#[test]
fn identity_dynamics_learn_identity_operator() {
    let ds = identity_dataset();
    let (ae, stats, report) = train_autoencoder(&ds, &small_stage1(60), 2).unwrap();
    let a = ae.propagator.linear_operator().unwrap();
    let sigma = DMatrix::from_row_slice(2, 2, a.as_slice()).singular_values().max();
    assert!((sigma - 1.0).max(0.0).powi(2) < 5e-3, "sigma {sigma}");
    assert!(sigma <= 1.02);
    assert!(report.best_val_loss.is_finite());

    let mut ratios = Vec::new();
    for &i in &ds.split.test {
        let z = ae.encoder.forward(&stats.normalize(ds.trajectories[i].state(0))).unwrap();
        let az = ae.propagator.apply(&z).unwrap();
        ratios.push(sq(&az, &z).sqrt() / sq(&z, &[0.0, 0.0]).sqrt());
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 0.05, "max ||Az - z|| / ||z|| = {worst}");
}

#[test]
fn spectral_penalty_holds_after_stage1_on_rotation() {
    let ds = small_toy(30, 40, 7);
    let (ae, _, _) = train_autoencoder(&ds, &small_stage1(30), 5).unwrap();
    let a = ae.propagator.linear_operator().unwrap();
    let sigma = DMatrix::from_row_slice(2, 2, a.as_slice()).singular_values().max();
    assert!((sigma - 1.0).max(0.0).powi(2) < 5e-3, "sigma {sigma}");
}

#[test]
fn seeded_training_is_bit_reproducible_and_stage2_keeps_stage1() {
    let ds = small_toy(12, 20, 9);
    let cfg = LatentTrainConfig {
        stage1: small_stage1(5),
        stage2: Stage2Config {
            hidden: vec![8],
            delay: 2,
            train: quick_train(5),
        },
        h: None,
    };
    let (m1, r1) = train_latent_model(&ds, &cfg, 17).unwrap();
    let (m2, r2) = train_latent_model(&ds, &cfg, 17).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);
    let (m3, _) = train_latent_model(&ds, &cfg, 18).unwrap();
    assert_ne!(m1.autoencoder, m3.autoencoder);

    let (ae, stats, _) = train_autoencoder(&ds, &cfg.stage1, 17).unwrap();
    assert_eq!(m1.autoencoder, ae);
    assert_eq!(m1.state_stats, stats);
    assert_eq!(m1.obs_encoder.input_dim(), 2 * ds.obs_dim());
    assert!(cholesky(&m1.gamma_tilde).is_ok());
}

#[test]
fn training_rejects_zero_delay_and_restarts() {
    let ds = small_toy(4, 5, 1);
    let mut cfg = LatentTrainConfig::default();
    cfg.stage2.delay = 0;
    assert!(train_latent_model(&ds, &cfg, 0).is_err());
    let s1 = Stage1Config {
        restarts: 0,
        ..small_stage1(1)
    };
    assert!(train_autoencoder(&ds, &s1, 0).is_err());
}

proptest! {
    #[test]
    fn delay_embedding_has_fixed_length(rows in 1usize..12, cols in 1usize..4, delay in 1usize..6, k in 0usize..12) {
        prop_assume!(k < rows);
        let y = Matrix::from_vec(rows, cols, (0..rows * cols).map(|v| v as f64).collect()).unwrap();
        let e = delay_embed(&y, k, delay).unwrap();
        prop_assert_eq!(e.len(), delay * cols);
        prop_assert_eq!(&e[(delay - 1) * cols..], y.row(k));
        if delay == 1 {
            prop_assert_eq!(&e[..], y.row(k));
        }
    }
}
