use nocnn::numerics::DenseArray;
use nocnn::training::{
    adamw_step, loss, loss_gradient, lr_at, train, AdamWConfig, LossConfig, OptimizerState, PairDataset,
    ScheduleConfig, TrainConfig,
};
use nocnn::{build_cascade, gaussian_sample, Cascade, Error, Initializer, SeededRng, StageSpec};
use proptest::prelude::*;

fn toy_data(seed: u64, count: usize) -> PairDataset<f64> {
    let mut rng = SeededRng::new(seed);
    let inputs: Vec<Vec<f64>> = (0..count).map(|_| (0..4).map(|_| rng.next_unit()).collect()).collect();
    let targets = inputs
        .iter()
        .map(|x| vec![0.5 * (x[0] + x[1]), x[2] * x[3]])
        .collect();
    PairDataset::new(inputs, targets).unwrap()
}

fn toy_net(seed: u64) -> Cascade {
    let specs = [StageSpec::new(2, 6).unwrap(), StageSpec::new(2, 8).unwrap()];
    build_cascade(4, &specs, 2, Initializer::Glorot, &mut SeededRng::new(seed)).unwrap()
}

fn config(epochs: usize, batch_size: usize, alpha: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        seed: 17,
        loss: LossConfig::new(alpha).unwrap(),
        optimizer: AdamWConfig { learning_rate: 0.01, ..AdamWConfig::default() },
        schedule: ScheduleConfig::default(),
    }
}

#[test]
fn training_lowers_the_loss() {
    let data = toy_data(1, 200);
    let mut net = toy_net(2);
    let history = train(&mut net, &data, &config(60, 20, 0.05), None).unwrap();
    let first = history.records[0].train_loss;
    let last = history.records.last().unwrap().train_loss;
    assert!(last < 0.2 * first, "{first} -> {last}");
    assert!(history.records.iter().all(|r| r.val_rre.is_none()));
}

#[test]
fn training_is_reproducible() {
    let data = toy_data(1, 90);
    let cfg = config(5, 16, 0.15);
    let mut a = toy_net(3);
    let mut b = toy_net(3);
    let ha = train(&mut a, &data, &cfg, None).unwrap();
    let hb = train(&mut b, &data, &cfg, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha.to_csv_deterministic(), hb.to_csv_deterministic());
    let mut c = toy_net(3);
    train(&mut c, &data, &TrainConfig { seed: 18, ..cfg }, None).unwrap();
    assert_ne!(a, c);
}

#[test]
fn history_columns() {
    let data = toy_data(1, 20);
    let mut net = toy_net(3);
    let validator = |_: &Cascade| -> nocnn::Result<f64> { Ok(0.25) };
    let h = train(&mut net, &data, &config(3, 10, 0.0), Some(&validator)).unwrap();
    let csv = h.to_csv();
    assert!(csv.starts_with("epoch,lr,train_loss,val_rre,wall_seconds\n"));
    assert_eq!(csv.lines().count(), 4);
    let det = h.to_csv_deterministic();
    assert!(det.starts_with("epoch,lr,train_loss,val_rre\n"));
    assert!(det.lines().nth(1).unwrap().starts_with("0,0.01,"));
    assert!(det.lines().nth(1).unwrap().ends_with(",0.25"));
}

#[test]
fn one_full_batch_epoch_is_one_adamw_step_on_the_loss_gradient() {
    let data = toy_data(4, 12);
    let mut trained = toy_net(5);
    let mut manual = trained.clone();
    let cfg = config(1, 12, 0.3);
    train(&mut trained, &data, &cfg, None).unwrap();

    let rows_x: Vec<Vec<f64>> = (0..12).map(|i| data_row(&data, i).0).collect();
    let rows_y: Vec<Vec<f64>> = (0..12).map(|i| data_row(&data, i).1).collect();
    let preds: Vec<Vec<f64>> = rows_x.iter().map(|x| manual.forward(x).unwrap()).collect();
    let g = loss_gradient(
        &DenseArray::from_rows(&preds).unwrap(),
        &DenseArray::from_rows(&rows_y).unwrap(),
        0.3,
    )
    .unwrap();
    let mut total = nocnn::Gradients::zeros_like(&manual);
    for (i, x) in rows_x.iter().enumerate() {
        let (_, trace) = manual.forward_traced(x).unwrap();
        total.accumulate(&manual.backward(&trace, g.row(i)).unwrap());
    }
    let mut state = OptimizerState::for_net(cfg.optimizer, &manual);
    let grads = total.slices();
    adamw_step(&mut manual.params_mut(), &grads, &mut state, 0.01).unwrap();
    for (a, b) in trained.params().iter().zip(manual.params()) {
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() < 1e-14, "{u} vs {v}");
        }
    }
}

fn data_row(data: &PairDataset<f64>, i: usize) -> (Vec<f64>, Vec<f64>) {
    use nocnn::training::TrainingData;
    let (mut x, mut y) = (vec![0.0; 4], vec![0.0; 2]);
    data.fill(i, &mut SeededRng::new(0), &mut x, &mut y);
    (x, y)
}

#[test]
fn non_finite_data_aborts_with_numeric_error() {
    let inputs = vec![vec![0.1, f64::NAN, 0.2, 0.3]; 4];
    let targets = vec![vec![0.0, 0.0]; 4];
    let data = PairDataset::new(inputs, targets).unwrap();
    let mut net = toy_net(1);
    let before = net.clone();
    assert!(matches!(train(&mut net, &data, &config(2, 4, 0.0), None), Err(Error::Numeric(_))));
    assert_eq!(net, before);
}

#[test]
fn invalid_configs_are_rejected() {
    let data = toy_data(1, 10);
    let mut net = toy_net(1);
    assert!(train(&mut net, &data, &config(0, 5, 0.0), None).is_err());
    assert!(train(&mut net, &data, &config(1, 0, 0.0), None).is_err());
    assert!(train(&mut net, &data, &config(1, 11, 0.0), None).is_err());
    assert!(LossConfig::new(1.5).is_err());
    let wrong = PairDataset::new(vec![vec![0.0; 3]], vec![vec![0.0; 2]]).unwrap();
    assert!(matches!(train(&mut net, &wrong, &config(1, 1, 0.0), None), Err(Error::Shape(_))));
}

#[test]
fn paper_schedule() {
    let s = ScheduleConfig::default();
    assert_eq!(lr_at(0, &s, 1e-3), 1e-3);
    assert_eq!(lr_at(69, &s, 1e-3), 1e-3);
    assert!((lr_at(70, &s, 1e-3) - 7e-4).abs() < 1e-18);
    assert!((lr_at(349, &s, 1e-3) - 1e-3 * 0.7f64.powi(4)).abs() < 1e-18);
}

proptest! {
    #[test]
    fn loss_endpoints_are_mse_and_l1(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let p = gaussian_sample(&mut rng, &[rows, cols], 0.0, 0.4).unwrap();
        let t = gaussian_sample(&mut rng, &[rows, cols], 0.0, 0.4).unwrap();
        let per_row = |f: fn(f64) -> f64| {
            p.data()
                .chunks(cols)
                .zip(t.data().chunks(cols))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(x - y)).sum::<f64>() / cols as f64)
                .sum::<f64>()
                / rows as f64
        };
        prop_assert_eq!(loss(&p, &t, 0.0).unwrap(), per_row(|d| d * d));
        prop_assert_eq!(loss(&p, &t, 1.0).unwrap(), per_row(f64::abs));
    }

    #[test]
    fn loss_is_affine_in_alpha(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let mut rng = SeededRng::new(seed);
        let p = gaussian_sample(&mut rng, &[3, 4], 0.0, 0.4).unwrap();
        let t = gaussian_sample(&mut rng, &[3, 4], 0.0, 0.4).unwrap();
        let l = loss(&p, &t, alpha).unwrap();
        let mix = (1.0 - alpha) * loss(&p, &t, 0.0).unwrap() + alpha * loss(&p, &t, 1.0).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - mix).abs() <= 1e-15);
    }

    #[test]
    fn loss_gradient_matches_differences(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let mut rng = SeededRng::new(seed);
        let p = gaussian_sample(&mut rng, &[2, 3], 0.0, 1.0).unwrap();
        let t = gaussian_sample(&mut rng, &[2, 3], 0.0, 1.0).unwrap();
        let g = loss_gradient(&p, &t, alpha).unwrap();
        let h = 1e-7;
        for i in 0..p.len() {
            // The L1 term is not differentiable at zero residual.
            prop_assume!((p.data()[i] - t.data()[i]).abs() > 1e-4);
            let mut up = p.clone();
            up.data_mut()[i] += h;
            let mut down = p.clone();
            down.data_mut()[i] -= h;
            let fd = (loss(&up, &t, alpha).unwrap() - loss(&down, &t, alpha).unwrap()) / (2.0 * h);
            prop_assert!((fd - g.data()[i]).abs() < 1e-7);
        }
    }
}
