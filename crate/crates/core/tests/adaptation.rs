//! Finetuning, the model pool and selection on tiny networks.

use dpn_core::adaptation::{
    finetune, finetune_augmented, probe_pair, render_selected, select_model, FinetuneConfig, ModelPool, PoolEntry,
    META_ADAPT_MODE,
};
use dpn_core::data::{extract_internal_examples, PyramidSpec};
use dpn_core::experiments::{epoch_sweep, lr_of};
use dpn_core::imaging::{evaluate, LumaImage};
use dpn_core::model::{CellSpec, Checkpoint, Network, NetworkSpec};
use dpn_core::pipeline::{render, SrOptions};
use dpn_core::synth::periodic;

fn tiny(seed: u64) -> Checkpoint {
    let spec = NetworkSpec {
        extraction: vec![4],
        cells: vec![CellSpec::new(4, 1)],
        reconstruction: vec![4, 1],
        ..NetworkSpec::toy()
    };
    Checkpoint::new(Network::build(spec, seed).unwrap())
}

fn config(epochs: usize) -> FinetuneConfig {
    let mut cfg = FinetuneConfig::new(
        PyramidSpec {
            stride: 12,
            ..PyramidSpec::single_level(12)
        },
        epochs,
    );
    cfg.pyramid.augment = true;
    cfg.train.batch_size = 8;
    cfg.train.lr0 = 0.01;
    cfg
}

fn bytes(ck: &Checkpoint) -> Vec<u8> {
    Checkpoint::new(ck.network.clone()).to_bytes()
}

#[test]
fn internal_examples_of_a_512_level() {
    let img = periodic(512, 512, 16, 1);
    let pairs = extract_internal_examples(&img, &PyramidSpec::single_level(20), 2).unwrap();
    assert_eq!(pairs.len(), 576);
}

#[test]
fn finetuning_moves_the_weights_and_records_provenance() {
    let base = tiny(1);
    let lr = periodic(72, 72, 12, 2);
    let out = finetune(&base, &lr, 2, &config(2), "img0").unwrap();
    assert!(out.warning.is_none());
    assert!(out.pairs > 0);
    assert_ne!(bytes(&out.checkpoint), bytes(&base));
    assert_eq!(out.checkpoint.meta(META_ADAPT_MODE), Some("finetune"));
    // The base checkpoint is left alone.
    assert_eq!(bytes(&base), bytes(&tiny(1)));
}

#[test]
fn empty_external_list_is_plain_finetuning() {
    let base = tiny(2);
    let lr = periodic(72, 72, 12, 3);
    let plain = finetune(&base, &lr, 2, &config(1), "x").unwrap();
    let aug = finetune_augmented(&base, &lr, 2, &config(1), &[], "x").unwrap();
    assert_eq!(plain.checkpoint.to_bytes(), aug.checkpoint.to_bytes());

    let ext = finetune_augmented(&base, &lr, 2, &config(1), &[periodic(60, 60, 10, 4)], "x").unwrap();
    assert!(ext.pairs > plain.pairs);
    assert_eq!(ext.checkpoint.meta(META_ADAPT_MODE), Some("finetune-aug"));
}

#[test]
fn zero_epochs_return_the_base_model() {
    let base = tiny(3);
    let out = finetune(&base, &periodic(72, 72, 12, 3), 2, &config(0), "x").unwrap();
    assert_eq!(out.checkpoint.to_bytes(), base.to_bytes());
    assert_eq!(out.pairs, 0);
}

#[test]
fn epoch_sweep_states_match_separate_finetunes() {
    let base = tiny(4);
    let gt = periodic(96, 96, 12, 5);
    let opts = SrOptions::new(2);
    let rows = epoch_sweep(&base, &gt, &config(3), &opts).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), [0, 1, 2, 3]);
    let (gt, lr) = lr_of(&gt, 2).unwrap();
    for row in &rows {
        let ck = finetune(&base, &lr, 2, &config(row.epoch), "x").unwrap().checkpoint;
        let psnr = evaluate(&render(&ck.network, &lr, &opts).unwrap(), &gt, 2, 2).unwrap().psnr.db();
        assert_eq!(row.psnr.to_bits(), psnr.to_bits(), "epoch {}", row.epoch);
    }
    assert_eq!(rows[0].gain, 0.0);
}

fn pool(seeds: &[u64]) -> ModelPool {
    ModelPool::new(
        seeds
            .iter()
            .map(|&s| PoolEntry {
                id: format!("m{s}"),
                checkpoint: tiny(s),
                provenance: format!("seed {s}"),
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn pool_of_one_is_chosen() {
    let lr = periodic(48, 48, 12, 1);
    let report = select_model(&pool(&[9]), &lr, &SrOptions::new(2), 1).unwrap();
    assert_eq!(report.chosen, ["m9"]);
    assert_eq!(report.ranking.len(), 1);
}

#[test]
fn ranking_is_by_probe_psnr() {
    let lr = periodic(48, 48, 12, 1);
    let opts = SrOptions::new(2);
    let p = pool(&[1, 2, 3, 4]);
    let report = select_model(&p, &lr, &opts, 2).unwrap();
    let (probe, gt) = probe_pair(&lr, 2).unwrap();
    let mut want: Vec<(f64, String)> = p
        .entries()
        .iter()
        .map(|e| {
            let out = render(&e.checkpoint.network, &probe, &opts).unwrap();
            (evaluate(&out, &gt, 2, 2).unwrap().psnr.db(), e.id.clone())
        })
        .collect();
    want.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let got: Vec<String> = report.ranking.iter().map(|s| s.model_id.clone()).collect();
    assert_eq!(got, want.iter().map(|w| w.1.clone()).collect::<Vec<_>>());
    assert_eq!(report.chosen, got[..2]);
}

#[test]
fn top_k_outputs_are_averaged() {
    let lr = periodic(40, 40, 10, 6);
    let opts = SrOptions::new(2);
    let p = pool(&[5, 6, 7]);
    let report = select_model(&p, &lr, &opts, 3).unwrap();
    let got = render_selected(&p, &report, &lr, &opts).unwrap();
    let outs: Vec<LumaImage> = p.entries().iter().map(|e| render(&e.checkpoint.network, &lr, &opts).unwrap()).collect();
    for (i, v) in got.pixels().iter().enumerate() {
        let mean = outs.iter().map(|o| o.pixels()[i]).sum::<f64>() / 3.0;
        assert!((v - mean).abs() < 1e-12);
    }
}

#[test]
fn pool_manifest_round_trip() {
    let p = pool(&[1, 2]);
    let dir = tempfile::tempdir().unwrap();
    let manifest = p.save(dir.path().join("pool")).unwrap();
    let back = ModelPool::load_manifest(&manifest).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in p.entries().iter().zip(back.entries()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.provenance, b.provenance);
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    }
}

#[test]
fn selection_errors() {
    let lr = periodic(48, 48, 12, 1);
    let opts = SrOptions::new(2);
    assert!(select_model(&ModelPool::default(), &lr, &opts, 1).is_err());
    assert!(select_model(&pool(&[1]), &lr, &opts, 0).is_err());
    assert!(select_model(&pool(&[1]), &periodic(12, 12, 4, 1), &opts, 1).is_err());
}
