//! Per-image model adaptation: finetuning on internal examples (optionally
//! mixed with external images) and model selection from a pool by how well
//! each model restores the input from a further-downscaled copy.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::dihedral::TRANSFORMS;
use crate::data::{extract_internal_examples, pairs_for_scale, shuffled, PatchPair, PatchSource, PyramidSpec};
use crate::error::{config_err, Error, Result};
use crate::imaging::metrics::SSIM_WINDOW;
use crate::imaging::{bicubic_resize, evaluate, modcrop, LumaImage, Psnr};
use crate::model::Checkpoint;
use crate::pipeline::{render, SrOptions};
use crate::trainer::{LossRecord, TrainConfig, Trainer};

pub const META_ADAPT_MODE: &str = "adapt.mode";
pub const META_ADAPT_SOURCE: &str = "adapt.source";
pub const META_ADAPT_EPOCHS: &str = "adapt.epochs";
pub const META_ADAPT_PAIRS: &str = "adapt.pairs";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptMode {
    None,
    Finetune,
    Select,
    FinetuneAugment,
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptMode::None => "none",
            AdaptMode::Finetune => "finetune",
            AdaptMode::Select => "select",
            AdaptMode::FinetuneAugment => "finetune-aug",
        })
    }
}

impl FromStr for AdaptMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AdaptMode::None),
            "finetune" => Ok(AdaptMode::Finetune),
            "select" => Ok(AdaptMode::Select),
            "finetune-aug" => Ok(AdaptMode::FinetuneAugment),
            _ => Err(config_err!("unknown adaptation mode {s:?}")),
        }
    }
}

/// Settings shared by both finetuning flavours.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub pyramid: PyramidSpec,
    pub epochs: usize,
    /// Optimizer settings; the schedule is forced to a fixed rate.
    pub train: TrainConfig,
}

impl FinetuneConfig {
    pub fn new(pyramid: PyramidSpec, epochs: usize) -> Self {
        Self {
            pyramid,
            epochs,
            train: TrainConfig::finetune(epochs),
        }
    }

    /// The trainer settings finetuning runs with.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            schedule: crate::trainer::Schedule::Fixed,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    /// Set when no examples were found and the base model was returned.
    pub warning: Option<String>,
    pub pairs: usize,
    pub log: Vec<LossRecord>,
}

/// Finetunes `base` on internal examples of `lr_image`.
pub fn finetune(base: &Checkpoint, lr_image: &LumaImage, scale: usize, cfg: &FinetuneConfig, source_id: &str) -> Result<FinetuneOutcome> {
    finetune_augmented(base, lr_image, scale, cfg, &[], source_id)
}

fn unchanged(base: &Checkpoint, warning: Option<String>) -> FinetuneOutcome {
    if let Some(w) = &warning {
        warn!("{w}");
    }
    FinetuneOutcome {
        checkpoint: base.clone(),
        warning,
        pairs: 0,
        log: Vec::new(),
    }
}

/// Internal examples plus pairs cut from `external` images, shuffled into one
/// seeded stream and trained at the fixed finetuning rate. `base` is never
/// modified; zero epochs return it unchanged.
pub fn finetune_augmented(
    base: &Checkpoint,
    lr_image: &LumaImage,
    scale: usize,
    cfg: &FinetuneConfig,
    external: &[LumaImage],
    source_id: &str,
) -> Result<FinetuneOutcome> {
    if cfg.epochs == 0 {
        return Ok(unchanged(base, None));
    }
    let pairs = finetune_pairs(lr_image, scale, cfg, external)?;
    if pairs.is_empty() {
        return Ok(unchanged(
            base,
            Some(format!("no training examples for {source_id}; keeping the base model")),
        ));
    }
    let mut trainer = Trainer::new(base.network.clone(), cfg.train_config())?;
    trainer.run(&pairs, &mut |_| Ok(()))?;
    let mode = if external.is_empty() {
        AdaptMode::Finetune
    } else {
        AdaptMode::FinetuneAugment
    };
    let mut ck = Checkpoint::new(trainer.network().clone());
    ck.metadata = base.metadata.clone();
    let ck = ck
        .with_meta(META_ADAPT_MODE, mode)
        .with_meta(META_ADAPT_SOURCE, source_id)
        .with_meta(META_ADAPT_EPOCHS, cfg.epochs)
        .with_meta(META_ADAPT_PAIRS, pairs.len());
    Ok(FinetuneOutcome {
        checkpoint: ck,
        warning: None,
        pairs: pairs.len(),
        log: trainer.log().to_vec(),
    })
}

/// The shuffled stream finetuning trains on; empty when neither source
/// yields a patch.
pub fn finetune_pairs(lr_image: &LumaImage, scale: usize, cfg: &FinetuneConfig, external: &[LumaImage]) -> Result<Vec<PatchPair>> {
    let mut pairs = match extract_internal_examples(lr_image, &cfg.pyramid, scale) {
        Ok(p) => p,
        Err(Error::EmptySet(msg)) => {
            warn!("{msg}");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    for img in external {
        pairs.extend(external_pairs(img, scale, &cfg.pyramid)?);
    }
    Ok(shuffled(pairs, cfg.train.seed))
}

fn external_pairs(img: &LumaImage, scale: usize, pyramid: &PyramidSpec) -> Result<Vec<PatchPair>> {
    let mut pairs = pairs_for_scale(img, scale, pyramid.patch_size, pyramid.stride, PatchSource::External)?;
    if pyramid.augment {
        // Same dihedral draw as internal examples, on a separate stream.
        let mut rng = ChaCha8Rng::seed_from_u64(pyramid.seed);
        rng.set_stream(1);
        for p in &mut pairs {
            *p = p.transformed(rng.random_range(0..TRANSFORMS));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub id: String,
    pub checkpoint: Checkpoint,
    /// Free text, e.g. the image the model was adapted to.
    pub provenance: String,
}

#[derive(Debug, Clone, Default)]
pub struct ModelPool {
    entries: Vec<PoolEntry>,
}

impl ModelPool {
    pub fn new(entries: Vec<PoolEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(config_err!("duplicate model id {:?} in pool", e.id));
            }
        }
        let scales: HashSet<Option<&str>> = entries.iter().map(|e| e.checkpoint.meta("scales")).collect();
        if scales.len() > 1 {
            return Err(config_err!("pool models declare different scale sets: {scales:?}"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Reads a manifest of `id <TAB> checkpoint path <TAB> provenance` lines;
    /// relative paths resolve against the manifest's directory.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.splitn(3, '\t');
            let (id, ck) = match (cols.next(), cols.next()) {
                (Some(i), Some(c)) if !i.is_empty() && !c.is_empty() => (i, c),
                _ => return Err(config_err!("{}:{}: expected id<TAB>path[<TAB>provenance]", path.display(), n + 1)),
            };
            let ck_path = {
                let p = PathBuf::from(ck);
                if p.is_absolute() {
                    p
                } else {
                    dir.join(p)
                }
            };
            entries.push(PoolEntry {
                id: id.to_string(),
                checkpoint: Checkpoint::load(&ck_path)?,
                provenance: cols.next().unwrap_or("").to_string(),
            });
        }
        Self::new(entries)
    }

    /// Writes `<id>.ckpt` files and a manifest into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = String::from("# id\tcheckpoint\tprovenance\n");
        for e in &self.entries {
            let file = format!("{}.ckpt", e.id);
            e.checkpoint.save(dir.join(&file))?;
            manifest.push_str(&format!("{}\t{}\t{}\n", e.id, file, e.provenance));
        }
        let path = dir.join("pool.tsv");
        fs::write(&path, manifest)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScore {
    pub model_id: String,
    pub psnr: Psnr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    /// Best first; ties broken by ascending model id.
    pub ranking: Vec<ProbeScore>,
    pub chosen: Vec<String>,
}

pub const SELECTION_CSV_HEADER: &str = "rank,model_id,probe_psnr_db,chosen";

impl SelectionReport {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{SELECTION_CSV_HEADER}")?;
        for (i, s) in self.ranking.iter().enumerate() {
            let chosen = self.chosen.contains(&s.model_id) as u8;
            writeln!(out, "{},{},{},{}", i + 1, s.model_id, s.psnr, chosen)?;
        }
        Ok(())
    }
}

/// Probe task: the LR image (modcropped) is the ground truth, its `1/scale`
/// bicubic downscale is the input.
pub fn probe_pair(lr_image: &LumaImage, scale: usize) -> Result<(LumaImage, LumaImage)> {
    let gt = modcrop(lr_image, scale);
    let min = 2 * scale + SSIM_WINDOW;
    if gt.height() < min || gt.width() < min {
        let (h, w) = lr_image.dims();
        return Err(config_err!(
            "{h}x{w} image is too small to probe at x{scale} (needs {min}x{min}); finetune instead"
        ));
    }
    let probe = bicubic_resize(&gt, 1.0 / scale as f64)?;
    Ok((probe, gt))
}

/// Probe PSNR of one model, through the same evaluation path as final scores.
pub fn probe_score(ck: &Checkpoint, probe: &LumaImage, gt: &LumaImage, opts: &SrOptions) -> Result<Psnr> {
    let sr = render(&ck.network, probe, opts)?;
    Ok(evaluate(&sr, gt, opts.scale, opts.scale)?.psnr)
}

fn rank(mut scores: Vec<ProbeScore>) -> Vec<ProbeScore> {
    scores.sort_by(|a, b| {
        b.psnr
            .db()
            .partial_cmp(&a.psnr.db())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    scores
}

/// Ranks every pool model by probe PSNR and picks the best `top_k`.
pub fn select_model(pool: &ModelPool, lr_image: &LumaImage, opts: &SrOptions, top_k: usize) -> Result<SelectionReport> {
    if pool.is_empty() {
        return Err(Error::EmptySet("model pool is empty".into()));
    }
    if top_k == 0 {
        return Err(config_err!("top_k must be at least 1"));
    }
    let (probe, gt) = probe_pair(lr_image, opts.scale)?;
    let scores = pool
        .entries()
        .par_iter()
        .map(|e| {
            Ok(ProbeScore {
                model_id: e.id.clone(),
                psnr: probe_score(&e.checkpoint, &probe, &gt, opts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ranking = rank(scores);
    let chosen = ranking.iter().take(top_k).map(|s| s.model_id.clone()).collect();
    Ok(SelectionReport { ranking, chosen })
}

/// Pixelwise mean of the chosen models' outputs, in ranking order.
pub fn render_selected(pool: &ModelPool, report: &SelectionReport, lr: &LumaImage, opts: &SrOptions) -> Result<LumaImage> {
    let mut acc: Option<LumaImage> = None;
    for id in &report.chosen {
        let e = pool.get(id).ok_or_else(|| config_err!("model {id:?} not in pool"))?;
        let out = render(&e.checkpoint.network, lr, opts)?;
        acc = Some(match acc {
            None => out,
            Some(a) => a.zip_map(&out, |x, y| x + y)?,
        });
    }
    let n = report.chosen.len() as f64;
    let sum = acc.ok_or_else(|| Error::EmptySet("no model chosen".into()))?;
    Ok(if n == 1.0 { sum } else { sum.map(|v| v / n) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Network, NetworkSpec};

    fn tiny_ck(seed: u64) -> Checkpoint {
        let spec = NetworkSpec {
            extraction: vec![4],
            cells: vec![crate::model::CellSpec::new(4, 1)],
            reconstruction: vec![1],
            ..NetworkSpec::toy()
        };
        Checkpoint::new(Network::build(spec, seed).unwrap())
    }

    #[test]
    fn zero_epochs_returns_base() {
        let base = tiny_ck(1);
        let img = crate::synth::periodic(60, 60, 16, 1);
        let cfg = FinetuneConfig::new(PyramidSpec::single_level(10), 0);
        let out = finetune(&base, &img, 2, &cfg, "x").unwrap();
        assert_eq!(out.checkpoint.to_bytes(), base.to_bytes());
    }

    #[test]
    fn tiny_image_keeps_base_with_warning() {
        let base = tiny_ck(1);
        let img = LumaImage::filled(20, 20, 0.5);
        let cfg = FinetuneConfig::new(PyramidSpec::single_level(10), 2);
        let out = finetune(&base, &img, 2, &cfg, "tiny").unwrap();
        assert!(out.warning.is_some());
        assert_eq!(out.checkpoint, base);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = PoolEntry {
            id: "a".into(),
            checkpoint: tiny_ck(1),
            provenance: String::new(),
        };
        assert!(ModelPool::new(vec![e.clone(), e]).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let s = |id: &str, v| ProbeScore {
            model_id: id.into(),
            psnr: Psnr::Db(v),
        };
        let r = rank(vec![s("b", 30.0), s("c", 31.0), s("a", 30.0), s("d", 29.0)]);
        let ids: Vec<&str> = r.iter().map(|x| x.model_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b", "d"]);
    }

    #[test]
    fn probe_needs_room() {
        assert!(probe_pair(&LumaImage::filled(14, 40, 0.5), 2).is_err());
        let (p, g) = probe_pair(&LumaImage::filled(31, 40, 0.5), 2).unwrap();
        assert_eq!(g.dims(), (30, 40));
        assert_eq!(p.dims(), (15, 20));
    }

    #[test]
    fn mode_names() {
        for m in [AdaptMode::None, AdaptMode::Finetune, AdaptMode::Select, AdaptMode::FinetuneAugment] {
            assert_eq!(m.to_string().parse::<AdaptMode>().unwrap(), m);
        }
        assert!("auto".parse::<AdaptMode>().is_err());
    }
}
