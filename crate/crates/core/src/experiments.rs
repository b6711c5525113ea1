//! Toy-scale studies: external training on a synthetic corpus, finetuning
//! epoch and image-size sweeps, the skip/activation ablation and the model
//! selection study. Each returns plain rows that serialize to CSV.

use std::io::{self, Write};

use log::info;

use crate::adaptation::{finetune, finetune_pairs, select_model, FinetuneConfig, ModelPool, PoolEntry};
use crate::data::{build_external_set, ExternalSetConfig, PatchPair, PyramidSpec};
use crate::error::{config_err, Error, Result};
use crate::imaging::{bicubic_resize, evaluate, modcrop, EvalReport, LumaImage};
use crate::model::{Checkpoint, Network, NetworkSpec, VariantKind};
use crate::pipeline::{back_project_traced, bicubic_baseline, cascade, render, superresolve, SrOptions, DEFAULT_BP_ITERS};
use crate::kv::KvMap;
use crate::synth::{periodic, textured, Family};
use crate::trainer::{windowed_means, LossRecord, TrainConfig, Trainer};

pub trait CsvRow {
    const HEADER: &'static str;
    fn csv(&self) -> String;
}

pub fn write_csv<R: CsvRow>(rows: &[R], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{}", R::HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv())?;
    }
    Ok(())
}

/// `n` textured images cycling through the families, seeds `seed0 + i`.
pub fn corpus(n: usize, size: usize, seed0: u64) -> Vec<LumaImage> {
    (0..n)
        .map(|i| textured(Family::ALL[i % Family::ALL.len()], size, size, seed0 + i as u64))
        .collect()
}

pub const TOY_TRAIN_SEED: u64 = 100;
pub const TOY_TEST_SEED: u64 = 900;

/// External training of the reduced network on the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySetup {
    pub spec: NetworkSpec,
    pub train_images: usize,
    pub test_images: usize,
    pub image_size: usize,
    pub stride: usize,
    pub scale: usize,
    pub train: TrainConfig,
    pub net_seed: u64,
    pub data_seed: u64,
}

impl Default for ToySetup {
    fn default() -> Self {
        Self {
            spec: NetworkSpec::toy(),
            train_images: 30,
            test_images: 10,
            image_size: 96,
            stride: 14,
            scale: 2,
            // A short run needs a short decay horizon to settle.
            train: TrainConfig {
                epochs: 12,
                decay_epochs: 6.0,
                ..TrainConfig::default()
            },
            net_seed: 7,
            data_seed: 1,
        }
    }
}

impl ToySetup {
    pub fn train_set(&self) -> Vec<LumaImage> {
        corpus(self.train_images, self.image_size, TOY_TRAIN_SEED)
    }

    pub fn test_set(&self) -> Vec<LumaImage> {
        corpus(self.test_images, self.image_size, TOY_TEST_SEED)
    }

    pub fn pairs(&self) -> Result<Vec<PatchPair>> {
        let cfg = ExternalSetConfig {
            scales: vec![self.scale],
            stride: self.stride,
            augment: true,
            seed: self.data_seed,
            ..Default::default()
        };
        build_external_set(&self.train_set(), &cfg)
    }
}

pub fn train_toy(setup: &ToySetup) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let pairs = setup.pairs()?;
    let net = Network::build(setup.spec.clone(), setup.net_seed)?;
    info!("toy training: {} pairs, {} epochs", pairs.len(), setup.train.epochs);
    let mut t = Trainer::new(net, setup.train.clone())?;
    t.run(&pairs, &mut |_| Ok(()))?;
    Ok((t.checkpoint(pairs.len()), t.log().to_vec()))
}

/// LR input for a ground-truth image: modcrop, then bicubic `1/scale`.
pub fn lr_of(gt: &LumaImage, scale: usize) -> Result<(LumaImage, LumaImage)> {
    let gt = modcrop(gt, scale);
    let lr = bicubic_resize(&gt, 1.0 / scale as f64)?;
    Ok((gt, lr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    pub index: usize,
    pub model: EvalReport,
    pub bicubic: EvalReport,
}

impl ImageScore {
    pub fn gain(&self) -> f64 {
        self.model.psnr.db() - self.bicubic.psnr.db()
    }
}

impl CsvRow for ImageScore {
    const HEADER: &'static str = "image,psnr_db,ssim,bicubic_psnr_db,bicubic_ssim,gain_db";
    fn csv(&self) -> String {
        format!(
            "{},{},{:.6},{},{:.6},{:.4}",
            self.index,
            self.model.psnr,
            self.model.ssim,
            self.bicubic.psnr,
            self.bicubic.ssim,
            self.gain()
        )
    }
}

/// Scores `net` and plain bicubic on each ground-truth image, shave = scale.
pub fn score_against_bicubic(net: &Network<f32>, gts: &[LumaImage], opts: &SrOptions) -> Result<Vec<ImageScore>> {
    gts.iter()
        .enumerate()
        .map(|(index, gt)| {
            let (gt, lr) = lr_of(gt, opts.scale)?;
            let out = render(net, &lr, opts)?;
            let bic = bicubic_baseline(&lr, opts.scale)?;
            Ok(ImageScore {
                index,
                model: evaluate(&out, &gt, opts.scale, opts.scale)?,
                bicubic: evaluate(&bic, &gt, opts.scale, opts.scale)?,
            })
        })
        .collect()
}

pub fn mean_gain(scores: &[ImageScore]) -> f64 {
    scores.iter().map(ImageScore::gain).sum::<f64>() / scores.len().max(1) as f64
}

/// One test image under the inference options: plain, with back-projection,
/// with enhanced prediction, and x4 directly versus as a x2 cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementRow {
    pub index: usize,
    pub plain: f64,
    pub back_projected: f64,
    pub enhanced: f64,
    pub direct_x4: f64,
    pub cascade_x4: f64,
    /// Consistency residual before the first and after the last iteration.
    pub bp_residual: (f64, f64),
}

impl CsvRow for EnhancementRow {
    const HEADER: &'static str =
        "image,plain_db,bp_db,enhanced_db,direct_x4_db,cascade_x4_db,bp_residual_start,bp_residual_end";
    fn csv(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6e},{:.6e}",
            self.index,
            self.plain,
            self.back_projected,
            self.enhanced,
            self.direct_x4,
            self.cascade_x4,
            self.bp_residual.0,
            self.bp_residual.1
        )
    }
}

/// Scores every inference option of `net` at x`scale` (and x`scale²` for the
/// cascade comparison) on each ground-truth image.
pub fn enhancement_report(net: &Network<f32>, gts: &[LumaImage], scale: usize) -> Result<Vec<EnhancementRow>> {
    let big = scale * scale;
    gts.iter()
        .enumerate()
        .map(|(index, gt)| {
            let (gt, lr) = lr_of(gt, scale)?;
            let opts = SrOptions::new(scale);
            let plain_out = render(net, &lr, &opts)?;
            let (bp_out, trace) = back_project_traced(&plain_out, &lr, scale, DEFAULT_BP_ITERS)?;
            let enhanced = SrOptions {
                enhanced: true,
                ..opts.clone()
            };
            let score = |out: &LumaImage, gt: &LumaImage, s: usize| -> Result<f64> { Ok(evaluate(out, gt, s, s)?.psnr.db()) };
            let (gt4, lr4) = lr_of(&gt, big)?;
            Ok(EnhancementRow {
                index,
                plain: score(&plain_out, &gt, scale)?,
                back_projected: score(&bp_out, &gt, scale)?,
                enhanced: psnr_of(net, &lr, &gt, &enhanced)?,
                direct_x4: score(&superresolve(net, &lr4, big, opts.tile_pixels)?, &gt4, big)?,
                cascade_x4: score(&cascade(net, &lr4, big, scale, false, opts.tile_pixels)?, &gt4, big)?,
                bp_residual: (trace[0], *trace.last().expect("trace starts at iteration 0")),
            })
        })
        .collect()
}

fn psnr_of(net: &Network<f32>, lr: &LumaImage, gt: &LumaImage, opts: &SrOptions) -> Result<f64> {
    let out = render(net, lr, opts)?;
    Ok(evaluate(&out, gt, opts.scale, opts.scale)?.psnr.db())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epoch: usize,
    pub pairs: usize,
    pub psnr: f64,
    /// Over the base model.
    pub gain: f64,
}

impl CsvRow for SweepRow {
    const HEADER: &'static str = "epoch,pairs,psnr_db,gain_db";
    fn csv(&self) -> String {
        format!("{},{},{:.4},{:.4}", self.epoch, self.pairs, self.psnr, self.gain)
    }
}

/// PSNR on `gt` after 0..=`cfg.epochs` finetuning epochs on its LR image.
/// The state after epoch `e` is the one `finetune` returns for `e` epochs.
pub fn epoch_sweep(base: &Checkpoint, gt: &LumaImage, cfg: &FinetuneConfig, opts: &SrOptions) -> Result<Vec<SweepRow>> {
    let (gt, lr) = lr_of(gt, opts.scale)?;
    let pairs = finetune_pairs(&lr, opts.scale, cfg, &[])?;
    let p0 = psnr_of(&base.network, &lr, &gt, opts)?;
    let mut rows = vec![SweepRow {
        epoch: 0,
        pairs: pairs.len(),
        psnr: p0,
        gain: 0.0,
    }];
    if pairs.is_empty() {
        return Ok(rows);
    }
    let mut t = Trainer::new(base.network.clone(), cfg.train_config())?;
    for epoch in 1..=cfg.epochs {
        t.set_epochs(epoch);
        t.run(&pairs, &mut |_| Ok(()))?;
        let psnr = psnr_of(t.network(), &lr, &gt, opts)?;
        info!("epoch sweep: epoch {epoch} psnr {psnr:.4}");
        rows.push(SweepRow {
            epoch,
            pairs: pairs.len(),
            psnr,
            gain: psnr - p0,
        });
    }
    Ok(rows)
}

/// Gain after one epoch as a fraction of the best gain in the sweep; `None`
/// when no epoch improves on the base.
pub fn first_epoch_fraction(rows: &[SweepRow]) -> Option<f64> {
    let best = rows.iter().filter(|r| r.epoch >= 1).map(|r| r.gain).fold(f64::NEG_INFINITY, f64::max);
    let first = rows.iter().find(|r| r.epoch == 1)?.gain;
    (best > 0.0).then(|| first / best)
}

pub const LADDER_STEPS: usize = 11;
pub const LADDER_FACTOR: f64 = 1.25;

/// `gt` and its successive `1/factor` bicubic downsizings, `steps` in all.
pub fn size_ladder(gt: &LumaImage, steps: usize, factor: f64) -> Result<Vec<LumaImage>> {
    if !(factor > 1.0) {
        return Err(config_err!("ladder factor must exceed 1, got {factor}"));
    }
    (0..steps)
        .map(|k| {
            if k == 0 {
                Ok(gt.clone())
            } else {
                bicubic_resize(gt, factor.powi(-(k as i32)))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeRow {
    pub index: usize,
    pub height: usize,
    pub width: usize,
    pub pairs: usize,
    pub base_psnr: f64,
    pub adapted_psnr: f64,
}

impl SizeRow {
    pub fn gain(&self) -> f64 {
        self.adapted_psnr - self.base_psnr
    }
}

impl CsvRow for SizeRow {
    const HEADER: &'static str = "index,height,width,pairs,base_psnr_db,adapted_psnr_db,gain_db";
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{:.4},{:.4}",
            self.index,
            self.height,
            self.width,
            self.pairs,
            self.base_psnr,
            self.adapted_psnr,
            self.gain()
        )
    }
}

/// Finetuning gain on each rung of the size ladder of `gt`. Rungs too small
/// for a single internal example keep the base model (gain 0).
pub fn size_sweep(base: &Checkpoint, gt: &LumaImage, cfg: &FinetuneConfig, opts: &SrOptions) -> Result<Vec<SizeRow>> {
    let ladder = size_ladder(gt, LADDER_STEPS, LADDER_FACTOR)?;
    ladder
        .iter()
        .enumerate()
        .map(|(index, rung)| {
            let (rung, lr) = lr_of(rung, opts.scale)?;
            let out = finetune(base, &lr, opts.scale, cfg, &format!("rung{index}"))?;
            let row = SizeRow {
                index,
                height: rung.height(),
                width: rung.width(),
                pairs: out.pairs,
                base_psnr: psnr_of(&base.network, &lr, &rung, opts)?,
                adapted_psnr: psnr_of(&out.checkpoint.network, &lr, &rung, opts)?,
            };
            info!("size sweep: {}x{} gain {:.4}", row.height, row.width, row.gain());
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: VariantKind,
    pub params: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub diverged: bool,
    pub psnr: f64,
    pub gain: f64,
}

impl CsvRow for AblationRow {
    const HEADER: &'static str = "variant,params,first_loss,final_loss,diverged,psnr_db,gain_db";
    fn csv(&self) -> String {
        format!(
            "{},{},{:.6e},{:.6e},{},{:.4},{:.4}",
            self.variant.name(),
            self.params,
            self.first_loss,
            self.final_loss,
            self.diverged as u8,
            self.psnr,
            self.gain
        )
    }
}

/// Whether all four variants built from `spec` and `seed` start with
/// bitwise-equal `F`-branch weights.
pub fn branches_shared(spec: &NetworkSpec, seed: u64) -> Result<bool> {
    let nets = VariantKind::ALL
        .iter()
        .map(|&k| Network::<f32>::build_variant(k, spec, seed))
        .collect::<Result<Vec<_>>>()?;
    let first = nets[0].branch_params();
    Ok(nets[1..].iter().all(|n| n.branch_params() == first))
}

const LOSS_WINDOW: usize = 20;

/// Window for comparing early and late loss: 20 steps, shrunk so a short
/// run still has at least five windows.
fn loss_window(steps: usize) -> usize {
    (steps / 5).clamp(1, LOSS_WINDOW)
}

/// Trains the four variants with one seed and one pair stream and scores
/// them on the test set. A variant whose loss turns non-finite, or whose
/// final windowed loss exceeds its first, is marked as diverged.
pub fn ablation(setup: &ToySetup) -> Result<Vec<AblationRow>> {
    let pairs = setup.pairs()?;
    let test = setup.test_set();
    let opts = SrOptions::new(setup.scale);
    VariantKind::ALL
        .iter()
        .map(|&variant| {
            let net = Network::build_variant(variant, &setup.spec, setup.net_seed)?;
            let params = net.param_count();
            let mut t = Trainer::new(net, setup.train.clone())?;
            let outcome = t.run(&pairs, &mut |_| Ok(()));
            let losses: Vec<f64> = t.log().iter().map(|r| r.loss).collect();
            let smooth = windowed_means(&losses, loss_window(losses.len()));
            let first_loss = smooth.first().copied().unwrap_or(f64::NAN);
            let final_loss = smooth.last().copied().unwrap_or(f64::NAN);
            let diverged = match outcome {
                Err(Error::Numerical(_)) => true,
                Err(e) => return Err(e),
                Ok(()) => !(final_loss.is_finite() && final_loss <= first_loss),
            };
            let scores = score_against_bicubic(t.network(), &test, &opts)?;
            let psnr = scores.iter().map(|s| s.model.psnr.db()).sum::<f64>() / scores.len() as f64;
            info!("ablation: {} final loss {final_loss:.4e}", variant.name());
            Ok(AblationRow {
                variant,
                params,
                first_loss,
                final_loss,
                diverged,
                psnr,
                gain: mean_gain(&scores),
            })
        })
        .collect()
}

/// Pool of models finetuned from `base`, one per ground-truth image (on its
/// LR version), with ids `m00`, `m01`, ...
pub fn build_pool(base: &Checkpoint, gts: &[LumaImage], scale: usize, cfg: &FinetuneConfig) -> Result<ModelPool> {
    let entries = gts
        .iter()
        .enumerate()
        .map(|(i, gt)| {
            let (_, lr) = lr_of(gt, scale)?;
            let id = format!("m{i:02}");
            let out = finetune(base, &lr, scale, cfg, &id)?;
            info!("pool: {id} finetuned on {} pairs", out.pairs);
            Ok(PoolEntry {
                id,
                checkpoint: out.checkpoint,
                provenance: format!("pool image {i}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelPool::new(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub image: usize,
    pub model_id: String,
    pub probe_psnr: f64,
    pub true_psnr: f64,
    pub chosen: bool,
}

impl CsvRow for StudyRow {
    const HEADER: &'static str = "image,model_id,probe_psnr_db,true_psnr_db,chosen";
    fn csv(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{}",
            self.image, self.model_id, self.probe_psnr, self.true_psnr, self.chosen as u8
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudySummary {
    /// Over all (image, model) pairs.
    pub spearman_pooled: f64,
    /// Mean of the per-image rank correlations across models.
    pub spearman_per_image: f64,
    /// Expected true PSNR of a uniformly random pool model.
    pub random_mean: f64,
    pub selection_mean: f64,
    pub oracle_mean: f64,
}

impl StudySummary {
    pub fn csv(&self) -> String {
        format!(
            "spearman_pooled,spearman_per_image,random_mean_db,selection_mean_db,oracle_mean_db\n{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            self.spearman_pooled, self.spearman_per_image, self.random_mean, self.selection_mean, self.oracle_mean
        )
    }
}

/// For every suite image: probe PSNR and true PSNR of every pool model, and
/// the top-1 choice of [`select_model`].
pub fn selection_study(pool: &ModelPool, suite: &[LumaImage], opts: &SrOptions) -> Result<(Vec<StudyRow>, StudySummary)> {
    if suite.is_empty() {
        return Err(Error::EmptySet("selection suite is empty".into()));
    }
    let mut rows = Vec::new();
    let (mut random, mut selected, mut oracle, mut per_image) = (0.0, 0.0, 0.0, 0.0);
    for (image, gt) in suite.iter().enumerate() {
        let (gt, lr) = lr_of(gt, opts.scale)?;
        let report = select_model(pool, &lr, opts, 1)?;
        let mut mine = Vec::new();
        for entry in pool.entries() {
            let probe = report
                .ranking
                .iter()
                .find(|s| s.model_id == entry.id)
                .map(|s| s.psnr.db())
                .expect("every pool model is ranked");
            mine.push(StudyRow {
                image,
                model_id: entry.id.clone(),
                probe_psnr: probe,
                true_psnr: psnr_of(&entry.checkpoint.network, &lr, &gt, opts)?,
                chosen: report.chosen.contains(&entry.id),
            });
        }
        let truth: Vec<f64> = mine.iter().map(|r| r.true_psnr).collect();
        random += truth.iter().sum::<f64>() / truth.len() as f64;
        oracle += truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        selected += mine.iter().find(|r| r.chosen).expect("one model chosen").true_psnr;
        let probes: Vec<f64> = mine.iter().map(|r| r.probe_psnr).collect();
        per_image += spearman(&probes, &truth);
        rows.extend(mine);
    }
    let n = suite.len() as f64;
    let probes: Vec<f64> = rows.iter().map(|r| r.probe_psnr).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.true_psnr).collect();
    let summary = StudySummary {
        spearman_pooled: spearman(&probes, &truth),
        spearman_per_image: per_image / n,
        random_mean: random / n,
        selection_mean: selected / n,
        oracle_mean: oracle / n,
    };
    Ok((rows, summary))
}

pub const POOL_SEED: u64 = 500;
pub const SUITE_SEED: u64 = 700;

/// Knobs of the adaptation studies, readable from `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyParams {
    pub scale: usize,
    /// Ground-truth side of the periodic image used by the sweeps.
    pub image_size: usize,
    pub motif: usize,
    pub image_seed: u64,
    pub sweep_epochs: usize,
    pub finetune_epochs: usize,
    /// Internal-example budget for the sweeps and pool models.
    pub target_examples: usize,
    pub pool_size: usize,
    pub suite_size: usize,
    pub suite_image_size: usize,
    pub ablation_epochs: usize,
    pub seed: u64,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            scale: 2,
            image_size: 512,
            motif: 16,
            image_seed: 5,
            sweep_epochs: 4,
            finetune_epochs: 1,
            target_examples: 2000,
            pool_size: 10,
            suite_size: 20,
            suite_image_size: 128,
            ablation_epochs: 4,
            seed: 0,
        }
    }
}

const STUDY_KEYS: &[&str] = &[
    "scale",
    "image_size",
    "motif",
    "image_seed",
    "sweep_epochs",
    "finetune_epochs",
    "target_examples",
    "pool_size",
    "suite_size",
    "suite_image_size",
    "ablation_epochs",
    "seed",
];

impl StudyParams {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_keys(STUDY_KEYS)?;
        let mut p = Self::default();
        kv.read_into("scale", &mut p.scale)?;
        kv.read_into("image_size", &mut p.image_size)?;
        kv.read_into("motif", &mut p.motif)?;
        kv.read_into("image_seed", &mut p.image_seed)?;
        kv.read_into("sweep_epochs", &mut p.sweep_epochs)?;
        kv.read_into("finetune_epochs", &mut p.finetune_epochs)?;
        kv.read_into("target_examples", &mut p.target_examples)?;
        kv.read_into("pool_size", &mut p.pool_size)?;
        kv.read_into("suite_size", &mut p.suite_size)?;
        kv.read_into("suite_image_size", &mut p.suite_image_size)?;
        kv.read_into("ablation_epochs", &mut p.ablation_epochs)?;
        kv.read_into("seed", &mut p.seed)?;
        if p.scale < 2 || p.motif == 0 || p.image_size == 0 {
            return Err(config_err!("bad study parameters {p:?}"));
        }
        Ok(p)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("scale", self.scale);
        kv.set("image_size", self.image_size);
        kv.set("motif", self.motif);
        kv.set("image_seed", self.image_seed);
        kv.set("sweep_epochs", self.sweep_epochs);
        kv.set("finetune_epochs", self.finetune_epochs);
        kv.set("target_examples", self.target_examples);
        kv.set("pool_size", self.pool_size);
        kv.set("suite_size", self.suite_size);
        kv.set("suite_image_size", self.suite_image_size);
        kv.set("ablation_epochs", self.ablation_epochs);
        kv.set("seed", self.seed);
        kv
    }

    pub fn periodic_image(&self) -> LumaImage {
        periodic(self.image_size, self.image_size, self.motif, self.image_seed)
    }

    /// Default pyramid with the example budget replaced by `target_examples`.
    pub fn finetune_config(&self, epochs: usize) -> FinetuneConfig {
        let pyramid = PyramidSpec {
            target_examples: Some(self.target_examples),
            seed: self.seed,
            ..PyramidSpec::default()
        };
        let mut cfg = FinetuneConfig::new(pyramid, epochs);
        cfg.train.seed = self.seed;
        cfg
    }

    pub fn pool_images(&self) -> Vec<LumaImage> {
        corpus(self.pool_size, self.suite_image_size, POOL_SEED)
    }

    pub fn suite_images(&self) -> Vec<LumaImage> {
        corpus(self.suite_size, self.suite_image_size, SUITE_SEED)
    }
}

/// 1-based ranks, ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_values() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &[10.0, 20.0, 30.0, 40.0, 50.0]), 1.0);
        assert_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]), -1.0);
        // d = (-1, 1, -1, 1, 0): 1 - 6·4 / (5·24)
        assert!((spearman(&x, &[2.0, 1.0, 4.0, 3.0, 5.0]) - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 5]), 0.0);
    }

    #[test]
    fn tied_ranks_share_the_mean() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn ladder_sizes() {
        let gt = LumaImage::filled(512, 512, 0.5);
        let sizes: Vec<usize> = size_ladder(&gt, LADDER_STEPS, LADDER_FACTOR)
            .unwrap()
            .iter()
            .map(|l| l.height())
            .collect();
        assert_eq!(sizes, vec![512, 410, 328, 262, 210, 168, 134, 107, 86, 69, 55]);
    }

    #[test]
    fn first_epoch_fraction_uses_best_epoch() {
        let row = |epoch, gain| SweepRow { epoch, pairs: 1, psnr: 30.0 + gain, gain };
        let rows = [row(0, 0.0), row(1, 0.3), row(2, 0.4), row(3, 0.35)];
        assert!((first_epoch_fraction(&rows).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(first_epoch_fraction(&[row(0, 0.0), row(1, -0.1)]), None);
    }
}
