use nocnn::layers::{activated_forward, stage_forward, BetaVector, ConvKernelBank};
use nocnn::network::{overlap_identity, stage_lengths, CascadeNet, OverlapSpec};
use nocnn::numerics::{dot, DenseArray};
use nocnn::{
    blockwise_lift, build_cascade, validate_nonoverlap, validate_overlap, Cascade, Error, Initializer,
    SeededRng, StageSpec,
};
use proptest::prelude::*;

fn kernel_lengths() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 1..4)
}

fn random_net(seed: u64, ks: &[usize], cs: &[usize], m: usize) -> Cascade {
    let specs: Vec<StageSpec> = ks.iter().zip(cs).map(|(&k, &c)| StageSpec::new(k, c).unwrap()).collect();
    let n = ks.iter().product();
    let mut rng = SeededRng::new(seed);
    let mut net = build_cascade(n, &specs, m, Initializer::Glorot, &mut rng).unwrap();
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += 0.2 * rng.standard_normal();
        }
    }
    net
}

fn inputs(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = SeededRng::new(seed ^ 0x5eed);
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

proptest! {
    #[test]
    fn product_is_accepted(ks in kernel_lengths()) {
        let n: usize = ks.iter().product();
        prop_assert!(validate_nonoverlap(n, &ks).is_ok());
        let lengths = stage_lengths(n, &ks).unwrap();
        prop_assert_eq!(lengths.len(), ks.len() + 1);
        prop_assert_eq!(lengths[0], n);
        prop_assert_eq!(*lengths.last().unwrap(), 1);
        for (w, k) in lengths.windows(2).zip(&ks) {
            prop_assert_eq!(w[1] * k, w[0]);
        }
    }

    #[test]
    fn non_product_is_rejected(ks in kernel_lengths(), n in 1usize..500) {
        let product: usize = ks.iter().product();
        prop_assume!(n != product);
        let v = validate_nonoverlap(n, &ks).unwrap_err();
        prop_assert_eq!(v.n, n);
        prop_assert_eq!(v.derived, product as i128);
        prop_assert!(v.to_string().contains(&n.to_string()));
    }

    #[test]
    fn stride_equal_to_length_telescopes(ks in kernel_lengths()) {
        // With s_i = k_i the identity reduces to n = ∏ k_i.
        let n: usize = ks.iter().product();
        let layers: Vec<(usize, usize)> = ks.iter().map(|&k| (k, k)).collect();
        let (lhs, rhs) = overlap_identity(n, &layers);
        prop_assert_eq!(lhs, rhs);
        let (lhs, rhs) = overlap_identity(n + 1, &layers);
        prop_assert_ne!(lhs, rhs);
    }

    #[test]
    fn output_slices_reassemble_the_output(
        seed in any::<u64>(),
        ks in prop::collection::vec(1usize..4, 1..4),
        m in 1usize..5,
    ) {
        let cs: Vec<usize> = ks.iter().enumerate().map(|(i, _)| 2 + (seed as usize + i) % 5).collect();
        let net = random_net(seed, &ks, &cs, m);
        let x = inputs(seed, net.n());
        let full = net.forward(&x).unwrap();
        for (row, &v) in full.iter().enumerate() {
            let single = net.output_slice(row).unwrap().forward(&x).unwrap();
            prop_assert_eq!(single.len(), 1);
            prop_assert_eq!(single[0], v);
        }
    }

    #[test]
    fn permuting_kernels_leaves_output_unchanged(
        seed in any::<u64>(),
        ks in prop::collection::vec(1usize..4, 1..4),
    ) {
        let cs: Vec<usize> = ks.iter().map(|_| 3).collect();
        let net = random_net(seed, &ks, &cs, 2);
        let x = inputs(seed, net.n());
        let perm = [2usize, 0, 1];
        let mut banks = Vec::new();
        let mut betas = Vec::new();
        for (i, bank) in net.banks().iter().enumerate() {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&p| bank.kernel(p).to_vec()).collect();
            let biases: Vec<f64> = perm.iter().map(|&p| bank.biases()[p]).collect();
            banks.push(ConvKernelBank::new(DenseArray::from_rows(&rows).unwrap(), biases).unwrap());
            if let Some(beta) = net.betas().get(i) {
                betas.push(BetaVector::new(perm.iter().map(|&p| beta.values()[p]).collect()).unwrap());
            }
        }
        let head_rows: Vec<Vec<f64>> = (0..net.m())
            .map(|r| perm.iter().map(|&p| net.head().row(r)[p]).collect())
            .collect();
        let permuted =
            CascadeNet::from_parts(net.n(), banks, betas, DenseArray::from_rows(&head_rows).unwrap()).unwrap();
        let a = net.forward(&x).unwrap();
        let b = permuted.forward(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn analytic_gradients_match_central_differences(
        seed in any::<u64>(),
        ks in prop::collection::vec(1usize..4, 1..4),
        m in 1usize..3,
    ) {
        let cs: Vec<usize> = ks.iter().enumerate().map(|(i, _)| 1 + (seed as usize >> i) % 4).collect();
        let mut net = random_net(seed, &ks, &cs, m);
        let x = inputs(seed, net.n());
        let r: Vec<f64> = (0..m).map(|i| 1.0 - 0.7 * i as f64).collect();
        let (_, trace) = net.forward_traced(&x).unwrap();
        let grads = net.backward(&trace, &r).unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let h = 1e-5;
        for g in 0..analytic.len() {
            for i in 0..analytic[g].len() {
                let orig = net.params()[g][i];
                net.params_mut()[g][i] = orig + h;
                let up = dot(&net.forward(&x).unwrap(), &r);
                net.params_mut()[g][i] = orig - h;
                let down = dot(&net.forward(&x).unwrap(), &r);
                net.params_mut()[g][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[g][i];
                prop_assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-4),
                    "group {} entry {}: analytic {} vs fd {}", g, i, a, fd);
            }
        }
    }
}

#[test]
fn forward_is_the_stage_composition() {
    let net = random_net(11, &[2, 3, 2], &[3, 4, 5], 3);
    let x = inputs(11, 12);
    let mut h = x.clone();
    for (bank, beta) in net.banks().iter().zip(net.betas()) {
        h = stage_forward(&h, bank, beta).unwrap().0;
    }
    let last = activated_forward(&h, net.banks().last().unwrap()).unwrap();
    assert_eq!(last.post.rows(), 1);
    let expected = net.head().matvec(last.post.row(0)).unwrap();
    assert_eq!(net.forward(&x).unwrap(), expected);
}

#[test]
fn single_stage_is_a_blockwise_lift() {
    // One stage with a one-row head equals a single-hidden-layer network of
    // the whole input.
    let net = random_net(3, &[6], &[4], 1);
    let x = inputs(3, 6);
    let bank = &net.banks()[0];
    let head = net.head().row(0).to_vec();
    let g = |block: &[f64]| -> f64 {
        (0..bank.q())
            .map(|i| head[i] / (1.0 + (-(dot(bank.kernel(i), block) + bank.biases()[i])).exp()))
            .sum()
    };
    let lifted = blockwise_lift(g, &x, 6).unwrap();
    assert!((lifted[0] - net.forward(&x).unwrap()[0]).abs() < 1e-14);
}

#[test]
fn blockwise_lift_rejects_ragged_blocks() {
    assert!(matches!(blockwise_lift(|b: &[f64]| b[0], &[1.0; 5], 2), Err(Error::Structure(_))));
}

#[test]
fn paper_architectures() {
    assert_eq!(stage_lengths(400, &[2, 200]).unwrap(), vec![400, 200, 1]);
    assert_eq!(stage_lengths(500, &[1, 500]).unwrap(), vec![500, 500, 1]);
    let v = validate_nonoverlap(12, &[2, 5]).unwrap_err();
    assert_eq!(v.derived, 10);
}

#[test]
fn overlap_examples() {
    assert!(validate_overlap(&OverlapSpec { n: 7, layers: vec![(3, 2), (3, 2)] }).is_ok());
    assert!(validate_overlap(&OverlapSpec { n: 7, layers: vec![(3, 2), (3, 1)] }).is_ok());
    assert!(matches!(
        validate_overlap(&OverlapSpec { n: 5, layers: vec![(3, 2)] }),
        Err(Error::Violation(_))
    ));
    assert!(matches!(
        validate_overlap(&OverlapSpec { n: 6, layers: vec![(3, 3)] }),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn build_rejects_bad_structure_and_sizes() {
    let mut rng = SeededRng::new(0);
    let specs = [StageSpec::new(2, 3).unwrap(), StageSpec::new(5, 3).unwrap()];
    assert!(matches!(
        build_cascade::<f64>(12, &specs, 2, Initializer::Glorot, &mut rng),
        Err(Error::Violation(_))
    ));
    assert!(matches!(StageSpec::new(0, 3), Err(Error::Parameter(_))));
    assert!(matches!(StageSpec::new(2, 0), Err(Error::Parameter(_))));
    assert!(build_cascade::<f64>(10, &specs, 0, Initializer::Glorot, &mut rng).is_err());
}

#[test]
fn same_seed_same_network() {
    let specs = [StageSpec::new(2, 4).unwrap(), StageSpec::new(4, 6).unwrap()];
    let a: Cascade = build_cascade(8, &specs, 3, Initializer::Glorot, &mut SeededRng::new(9)).unwrap();
    let b: Cascade = build_cascade(8, &specs, 3, Initializer::Glorot, &mut SeededRng::new(9)).unwrap();
    let c: Cascade = build_cascade(8, &specs, 3, Initializer::Glorot, &mut SeededRng::new(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.parameter_count(), (4 * 2 + 4) + 4 + (6 * 4 + 6) + 3 * 6);
}

#[test]
fn glorot_init_respects_bounds_and_zero_biases() {
    let specs = [StageSpec::new(4, 16).unwrap(), StageSpec::new(5, 32).unwrap()];
    let net: Cascade = build_cascade(20, &specs, 7, Initializer::Glorot, &mut SeededRng::new(1)).unwrap();
    let bound = |fi: f64, fo: f64| (6.0 / (fi + fo)).sqrt();
    assert!(net.banks()[0].weights().data().iter().all(|w| w.abs() <= bound(4.0, 64.0)));
    assert!(net.banks()[1].weights().data().iter().all(|w| w.abs() <= bound(5.0, 160.0)));
    assert!(net.betas()[0].values().iter().all(|w| w.abs() <= bound(16.0, 1.0)));
    assert!(net.head().data().iter().all(|w| w.abs() <= bound(32.0, 1.0)));
    assert!(net.banks().iter().all(|b| b.biases().iter().all(|&v| v == 0.0)));
}

#[test]
fn zero_network_outputs_zero() {
    let specs = [StageSpec::new(3, 2).unwrap(), StageSpec::new(3, 2).unwrap()];
    let net: Cascade = build_cascade(9, &specs, 4, Initializer::Zeros, &mut SeededRng::new(0)).unwrap();
    assert_eq!(net.forward(&[0.3; 9]).unwrap(), vec![0.0; 4]);
}

#[test]
fn wrong_input_length_is_a_shape_error() {
    let net = random_net(1, &[2, 2], &[2, 2], 1);
    assert!(matches!(net.forward(&[0.0; 3]), Err(Error::Shape(_))));
    let (_, trace) = net.forward_traced(&[0.0; 4]).unwrap();
    assert!(matches!(net.backward(&trace, &[1.0, 2.0]), Err(Error::Shape(_))));
}

fn to_f32(a: &DenseArray<f64>) -> DenseArray<f32> {
    DenseArray::new(a.shape().to_vec(), a.data().iter().map(|&v| v as f32).collect()).unwrap()
}

#[test]
fn f32_cascade_tracks_f64() {
    let net = random_net(21, &[2, 4], &[5, 6], 3);
    let x = inputs(21, 8);
    let banks32: Vec<ConvKernelBank<f32>> = net
        .banks()
        .iter()
        .map(|b| {
            ConvKernelBank::new(to_f32(b.weights()), b.biases().iter().map(|&v| v as f32).collect()).unwrap()
        })
        .collect();
    let betas32 = net
        .betas()
        .iter()
        .map(|b| BetaVector::new(b.values().iter().map(|&v| v as f32).collect()).unwrap())
        .collect();
    let net32 = CascadeNet::from_parts(8, banks32, betas32, to_f32(net.head())).unwrap();
    let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    for (a, b) in net.forward(&x).unwrap().iter().zip(net32.forward(&x32).unwrap()) {
        assert!((a - b as f64).abs() < 1e-5);
    }
}
