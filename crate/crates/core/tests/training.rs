use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tclif::bptt::bptt_gradients;
use tclif::data::{InMemorySequences, SequenceBatch};
use tclif::eprop::{EpropOptions, OnlineSession};
use tclif::gradcheck::random_network;
use tclif::neurons::NeuronTag;
use tclif::tensor::{max_rel_err, Matrix};
use tclif::train::{
    build_network, evaluate, fit, load_checkpoint, load_datasets, save_checkpoint, OptimizerKind, Schedule,
    TrainConfig, Trainer, TrainerKind,
};
use tclif::Error;

fn random_data(rng: &mut ChaCha8Rng, n: usize, t_len: usize, dim: usize, classes: usize) -> InMemorySequences {
    let samples = (0..n)
        .map(|i| ((0..t_len * dim).map(|_| rng.random_range(-0.5..1.5)).collect(), i % classes))
        .collect();
    InMemorySequences::new(samples, t_len, dim, classes).unwrap()
}

fn small_config(trainer: TrainerKind) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.arch = vec![3, 6, 3];
    c.neuron = NeuronTag::TclifModified;
    c.trainer = trainer;
    c.optimizer = OptimizerKind::Sgd;
    c.schedule = Schedule::Constant;
    c.lr0 = 0.05;
    c.epochs = 1;
    c.batch_size = 4;
    c.clip_norm = None;
    c.train_couplings = false;
    c
}

#[test]
fn online_and_reverse_trainers_take_the_same_step_on_a_feedforward_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = random_data(&mut rng, 4, 15, 3, 3);
    for tag in [NeuronTag::Lif, NeuronTag::TclifModified, NeuronTag::TclifAdaptive] {
        let mut after = Vec::new();
        for trainer in [TrainerKind::Eprop, TrainerKind::Bptt] {
            let mut cfg = small_config(trainer);
            cfg.neuron = tag;
            cfg.reset = false;
            let mut t = Trainer::new(cfg).unwrap();
            t.train_epoch(&data, 0).unwrap();
            after.push(t.net.to_vector());
        }
        let start = build_network(&{
            let mut c = small_config(TrainerKind::Eprop);
            c.neuron = tag;
            c.reset = false;
            c
        })
        .unwrap()
        .to_vector();
        let delta = |v: &[f64]| -> Vec<f64> { v.iter().zip(&start).map(|(a, b)| a - b).collect() };
        let err = max_rel_err(&delta(&after[0]), &delta(&after[1]));
        assert!(err < 1e-8, "{tag:?}: parameter deltas differ by {err:e}");
    }
}

#[test]
fn single_step_sequences_give_identical_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for tag in [NeuronTag::Lif, NeuronTag::TclifVanilla, NeuronTag::TclifModified, NeuronTag::TclifAdaptive] {
        let net = random_network(&mut rng, vec![4, 7, 3], tag, true).unwrap();
        let x: Vec<f64> = (0..2 * 4).map(|_| rng.random_range(-1.0..2.0)).collect();
        let batch = SequenceBatch::new(x, vec![0, 2], 1, 4).unwrap();
        let mut s = OnlineSession::new(&net, &batch.labels, 1, 5, 9, EpropOptions::default());
        s.run(&net, &batch.x, 1).unwrap();
        let (reference, loss, _) = bptt_gradients(&net, &batch, 5, 9).unwrap();
        assert_eq!(s.loss(), loss);
        // The online learner leaves coupling gradients at zero.
        let keep = net.trainable_mask(false);
        let pick = |v: Vec<f64>| -> Vec<f64> { v.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(g, _)| g).collect() };
        let err = max_rel_err(&pick(s.grads().to_vector()), &pick(reference.to_vector()));
        assert!(err < 1e-12, "{tag:?}: {err:e}");
    }
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = random_data(&mut rng, 12, 10, 3, 3);
    let run = || {
        let mut cfg = small_config(TrainerKind::Eprop);
        cfg.neuron = NeuronTag::TclifAdaptive;
        cfg.epochs = 2;
        cfg.record_wallclock = false;
        let mut t = Trainer::new(cfg).unwrap();
        let rows = fit(&mut t, &data, &data, &mut |_| {}).unwrap();
        (rows, t.net)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn checkpoint_reloads_to_the_same_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_data(&mut rng, 16, 8, 3, 3);
    let cfg = small_config(TrainerKind::Eprop);
    let mut t = Trainer::new(cfg).unwrap();
    fit(&mut t, &data, &data, &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tclf");
    save_checkpoint(&path, &t.cfg, &t.net).unwrap();
    let (cfg2, net2) = load_checkpoint(&path).unwrap();
    assert_eq!(cfg2, t.cfg);
    assert_eq!(
        evaluate(&net2, &data, 4, cfg2.seed).unwrap(),
        evaluate(&t.net, &data, 4, t.cfg.seed).unwrap()
    );
}

#[test]
fn evaluation_of_a_hand_built_perfect_network() {
    let mut cfg = small_config(TrainerKind::Eprop);
    cfg.arch = vec![2, 2, 2];
    cfg.neuron = NeuronTag::Lif;
    let mut net = build_network(&cfg).unwrap();
    net.layers[0].w_in = Matrix::from_fn(2, 2, |i, j| if i == j { 5.0 } else { 0.0 });
    net.w_out = Matrix::from_fn(2, 2, |i, j| if i == j { 5.0 } else { 0.0 });
    let samples = (0..10)
        .map(|i| {
            let c = i % 2;
            ((0..6).map(|k| if k % 2 == c { 1.0 } else { 0.0 }).collect(), c)
        })
        .collect();
    let data = InMemorySequences::new(samples, 3, 2, 2).unwrap();
    assert_eq!(evaluate(&net, &data, 3, 0).unwrap(), 1.0);
}

#[test]
fn untrained_network_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = random_data(&mut rng, 500, 6, 5, 10);
    let mut cfg = small_config(TrainerKind::Eprop);
    cfg.arch = vec![5, 16, 10];
    let acc = evaluate(&build_network(&cfg).unwrap(), &data, 50, 0).unwrap();
    let sigma = (0.1f64 * 0.9 / 500.0).sqrt();
    assert!((acc - 0.1).abs() <= 3.0 * sigma, "accuracy {acc}");
}

#[test]
fn non_finite_loss_is_reported_as_divergence() {
    let data = random_data(&mut ChaCha8Rng::seed_from_u64(7), 4, 5, 3, 3);
    let mut cfg = small_config(TrainerKind::Eprop);
    for trainer in [TrainerKind::Eprop, TrainerKind::Bptt] {
        cfg.trainer = trainer;
        let mut net = build_network(&cfg).unwrap();
        net.w_out.fill(f64::INFINITY);
        let mut t = Trainer::with_network(cfg.clone(), net);
        let err = t.train_epoch(&data, 0).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, batch: 0, .. }), "{err}");
    }
}

#[test]
fn mismatched_architecture_is_a_config_error() {
    let data = random_data(&mut ChaCha8Rng::seed_from_u64(8), 4, 5, 2, 3);
    let mut t = Trainer::new(small_config(TrainerKind::Eprop)).unwrap();
    assert!(matches!(fit(&mut t, &data, &data, &mut |_| {}), Err(Error::Config(_))));
}

#[test]
fn mnist_splits_have_the_standard_sizes() {
    let root = std::env::var_os("TCLIF_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let mut cfg = TrainConfig::default();
    cfg.frame_size = 1;
    let Ok(data) = load_datasets(&cfg, Some(&root)) else {
        eprintln!("MNIST not found under {}; size check not run", root.display());
        return;
    };
    assert_eq!(data.train.len(), 60_000);
    assert_eq!(data.test.len(), 10_000);
    assert_eq!(data.train.t_len(), 784);
    assert_eq!(data.train.num_classes(), 10);
    cfg.frame_size = 28;
    cfg.test_limit = Some(3);
    let data = load_datasets(&cfg, Some(&root)).unwrap();
    assert_eq!((data.test.t_len(), data.test.input_dim(), data.test.len()), (28, 28, 3));
}
