//! Trainer behavior on small networks and small patches.

use dpn_core::data::{pairs_for_scale, PatchPair, PatchSource};
use dpn_core::experiments::ToySetup;
use dpn_core::imaging::LumaImage;
use dpn_core::model::{CellSpec, Checkpoint, Network, NetworkSpec};
use dpn_core::synth::{textured, Family};
use dpn_core::trainer::{train, windowed_means, Schedule, TrainConfig, Trainer};
use dpn_core::Error;

fn small_spec() -> NetworkSpec {
    NetworkSpec {
        extraction: vec![4],
        cells: vec![CellSpec::new(4, 1), CellSpec::new(6, 1)],
        reconstruction: vec![4, 1],
        ..NetworkSpec::toy()
    }
}

fn pairs(n: usize, seed: u64) -> Vec<PatchPair> {
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < n {
        let img = textured(Family::ALL[i % Family::ALL.len()], 48, 48, seed + i as u64);
        out.extend(pairs_for_scale(&img, 2, 17, 10, PatchSource::External).unwrap());
        i += 1;
    }
    out.truncate(n);
    out
}

fn fixed(epochs: usize, batch: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        lr0: lr,
        schedule: Schedule::Fixed,
        ..TrainConfig::default()
    }
}

fn bytes(ck: &Checkpoint) -> Vec<u8> {
    Checkpoint::new(ck.network.clone()).to_bytes()
}

#[test]
fn overfits_a_small_set() {
    let data = pairs(50, 1);
    let net = Network::build(small_spec(), 3).unwrap();
    // Full batches, so the first and last losses are over the same patches.
    // A looser clip than the default, which caps every step at 1e-3.
    let mut cfg = fixed(200, 50, 0.1);
    cfg.sgd.clip_theta = 0.002;
    let (_, log) = train(net, &data, &cfg).unwrap();
    assert_eq!(log.len(), 200);
    let (first, last) = (log[0].loss, log[199].loss);
    assert!(last < 0.2 * first, "loss {first:e} -> {last:e}");
}

#[test]
fn first_epoch_loss_on_toy_set_is_non_increasing() {
    let setup = ToySetup::default();
    let data = setup.pairs().unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..setup.train.clone()
    };
    let net = Network::build(setup.spec.clone(), setup.net_seed).unwrap();
    let (_, log) = train(net, &data, &cfg).unwrap();
    let smooth = windowed_means(&log.iter().map(|r| r.loss).collect::<Vec<_>>(), 20);
    assert!(smooth.len() >= 3, "{} steps", log.len());
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0], "{smooth:?}");
    }
}

#[test]
fn constant_images_keep_a_near_zero_residual() {
    let flat: Vec<PatchPair> = [0.2, 0.5, 0.8]
        .iter()
        .flat_map(|&v| pairs_for_scale(&LumaImage::filled(40, 40, v), 2, 17, 11, PatchSource::External).unwrap())
        .collect();
    assert!(flat.iter().all(|p| p.target.iter().all(|&t| t == 0.0)));
    let net = Network::build(small_spec(), 5).unwrap();
    let (_, log) = train(net, &flat, &fixed(20, 4, 0.1)).unwrap();
    for r in &log {
        assert!(r.loss.is_finite());
    }
    let last = log.last().unwrap().loss;
    assert!(last < 1e-4, "final loss {last:e}");
    assert!(last <= log[0].loss.max(1e-6));
}

#[test]
fn training_is_deterministic() {
    let data = pairs(40, 3);
    let cfg = fixed(2, 8, 0.1);
    let a = train(Network::build(small_spec(), 6).unwrap(), &data, &cfg).unwrap();
    let b = train(Network::build(small_spec(), 6).unwrap(), &data, &cfg).unwrap();
    assert_eq!(a.0.to_bytes(), b.0.to_bytes());
    assert_eq!(a.1, b.1);
}

#[test]
fn resume_is_bitwise_identical() {
    let data = pairs(36, 4);
    let cfg = TrainConfig {
        decay_epochs: 2.0,
        schedule: Schedule::Smooth,
        ..fixed(4, 8, 0.1)
    };
    let (straight, _) = train(Network::build(small_spec(), 7).unwrap(), &data, &cfg).unwrap();

    let mut first = Trainer::new(Network::build(small_spec(), 7).unwrap(), cfg.clone()).unwrap();
    first.set_epochs(2);
    first.run(&data, &mut |_| Ok(())).unwrap();
    let saved = Checkpoint::from_bytes(&first.checkpoint(data.len()).to_bytes()).unwrap();
    let mut second = Trainer::resume(&saved, cfg).unwrap();
    assert_eq!(second.step(), first.step());
    second.run(&data, &mut |_| Ok(())).unwrap();
    assert_eq!(bytes(&second.checkpoint(data.len())), bytes(&straight));
}

#[test]
fn periodic_checkpoints_reach_the_sink() {
    let data = pairs(24, 5);
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..fixed(2, 4, 0.1)
    };
    let mut t = Trainer::new(Network::build(small_spec(), 8).unwrap(), cfg).unwrap();
    let mut steps = Vec::new();
    t.run(&data, &mut |ck| {
        steps.push(ck.meta("train.step").unwrap().to_string());
        Ok(())
    })
    .unwrap();
    assert_eq!(steps, ["2", "4", "6", "8", "10", "12"]);
}

#[test]
fn non_finite_input_aborts_without_update() {
    let mut data = pairs(8, 6);
    data[3].input[5] = f32::NAN;
    let net = Network::build(small_spec(), 9).unwrap();
    let before = Checkpoint::new(net.clone()).to_bytes();
    let mut t = Trainer::new(net, fixed(1, 8, 0.1)).unwrap();
    let err = t.run(&data, &mut |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    assert_eq!(t.step(), 0);
    assert_eq!(Checkpoint::new(t.network().clone()).to_bytes(), before);
}

#[test]
fn empty_set_is_rejected() {
    let mut t = Trainer::new(Network::build(small_spec(), 1).unwrap(), fixed(1, 8, 0.1)).unwrap();
    assert!(matches!(t.run(&[], &mut |_| Ok(())), Err(Error::EmptySet(_))));
}
