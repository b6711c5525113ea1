use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};

use dpn_core::adaptation::{finetune_augmented, render_selected, select_model, AdaptMode, ModelPool};
use dpn_core::data::build_external_set;
use dpn_core::experiments::{
    self, ablation, branches_shared, build_pool, enhancement_report, epoch_sweep, first_epoch_fraction, mean_gain, score_against_bicubic,
    selection_study, size_sweep, train_toy, write_csv, CsvRow, StudyParams, ToySetup,
};
use dpn_core::imaging::{
    bicubic_resize, evaluate, load_image, modcrop, save_luma, save_rgb, ycbcr_to_rgb, rgb_to_ycbcr, Loaded, LumaImage, YCbCr,
};
use dpn_core::kv::KvMap;
use dpn_core::model::{Checkpoint, Network};
use dpn_core::pipeline::{bicubic_baseline, render, SrOptions};
use dpn_core::synth::periodic;
use dpn_core::trainer::{write_loss_csv, Trainer};

use crate::config::{self, TrainSettings};
use crate::{ConfigArgs, ExperimentKind};

fn load_luma(path: &Path) -> Result<LumaImage> {
    Ok(load_image(path).with_context(|| format!("loading {}", path.display()))?.luma())
}

fn load_ground_truth(path: &Path) -> Result<LumaImage> {
    Ok(load_image(path).with_context(|| format!("loading {}", path.display()))?.luma8())
}

fn load_lumas(list: &Path) -> Result<Vec<LumaImage>> {
    config::image_list(list)?.iter().map(|p| load_luma(p)).collect()
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn save_csv<R: CsvRow>(rows: &[R], path: &Path) -> Result<()> {
    let mut f = create(path)?;
    write_csv(rows, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn prep(out: &Path, train: usize, test: usize, size: usize) -> Result<()> {
    let study = StudyParams::default();
    let sets = [
        ("train", experiments::corpus(train, size, experiments::TOY_TRAIN_SEED)),
        ("test", experiments::corpus(test, size, experiments::TOY_TEST_SEED)),
    ];
    for (name, images) in &sets {
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        let mut list = String::new();
        for (i, img) in images.iter().enumerate() {
            let file = format!("{name}/{i:03}.png");
            save_luma(img, out.join(&file))?;
            list.push_str(&file);
            list.push('\n');
        }
        fs::write(out.join(format!("{name}.txt")), list)?;
    }
    let p = periodic(study.image_size, study.image_size, study.motif, study.image_seed);
    save_luma(&p, out.join("periodic.png"))?;
    info!("wrote {train} training and {test} test images to {}", out.display());
    Ok(())
}

pub fn train(images: &Path, out: &Path, resume: Option<&Path>, args: &ConfigArgs) -> Result<()> {
    let settings = TrainSettings::from_kv(&config::load(args)?)?;
    // Everything is read before the output directory is touched.
    let hr = load_lumas(images)?;
    let resumed = resume.map(load_model).transpose()?;
    let pairs = build_external_set(&hr, &settings.data)?;
    info!("{} training pairs from {} images", pairs.len(), hr.len());

    let mut trainer = match &resumed {
        Some(ck) => {
            if ck.spec() != &settings.spec {
                warn!("resuming with the checkpoint's network, not {:?}", settings.spec_name);
            }
            Trainer::resume(ck, settings.train.clone())?
        }
        None => Trainer::new(Network::build(settings.spec.clone(), settings.net_seed)?, settings.train.clone())?,
    };
    fs::create_dir_all(out)?;
    let mut resolved = settings.to_kv();
    resolved.set("images", images.display());
    if let Some(r) = resume {
        resolved.set("resume", r.display());
    }
    config::write_resolved(&out.join("config.txt"), &resolved)?;

    let snapshot = out.join("checkpoint.ckpt");
    let result = trainer.run(&pairs, &mut |ck| ck.save(&snapshot));
    let mut f = create(&out.join("loss.csv"))?;
    write_loss_csv(trainer.log(), &mut f)?;
    f.flush()?;
    result?;
    trainer.checkpoint(pairs.len()).save(out.join("model.ckpt"))?;
    info!("trained to step {}", trainer.step());
    Ok(())
}

pub fn finetune(model: &Path, input: &Path, scale: usize, out: &Path, external: Option<&Path>, args: &ConfigArgs) -> Result<()> {
    let cfg = config::finetune_config(&config::load(args)?)?;
    let base = load_model(model)?;
    let lr = load_luma(input)?;
    let ext = external.map(load_lumas).transpose()?.unwrap_or_default();
    let id = input.display().to_string();
    let outcome = finetune_augmented(&base, &lr, scale, &cfg, &ext, &id)?;
    if let Some(w) = &outcome.warning {
        warn!("{w}");
    }
    outcome.checkpoint.save(out)?;
    let mut kv = config::finetune_kv(&cfg);
    kv.set("model", model.display());
    kv.set("input", input.display());
    kv.set("scale", scale);
    if let Some(e) = external {
        kv.set("external", e.display());
    }
    config::write_resolved(&config::beside(out), &kv)?;
    info!("finetuned on {} pairs", outcome.pairs);
    Ok(())
}

pub fn select(pool: &Path, input: &Path, scale: usize, top_k: usize, out: Option<&Path>) -> Result<()> {
    let pool = ModelPool::load_manifest(pool).with_context(|| format!("loading pool {}", pool.display()))?;
    let lr = load_luma(input)?;
    let report = select_model(&pool, &lr, &SrOptions::new(scale), top_k)?;
    let stdout = std::io::stdout();
    report.write_csv(&mut stdout.lock())?;
    if let Some(p) = out {
        let mut f = create(p)?;
        report.write_csv(&mut f)?;
        f.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, clap::Args)]
pub struct SrArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    scale: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "none")]
    adapt: AdaptMode,
    /// Pool manifest for `--adapt select`.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Image list for `--adapt finetune-aug`.
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    top_k: usize,
    /// Back-projection iterations.
    #[arg(long, default_value_t = 0)]
    bp: usize,
    #[arg(long)]
    enhance: bool,
    /// Reach the scale by repeated x2 passes.
    #[arg(long)]
    cascade: bool,
    /// Pixel budget per network call; 0 disables tiling.
    #[arg(long)]
    tile_pixels: Option<usize>,
    /// Ground truth; PSNR/SSIM are printed when given.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn upscale_chroma(ycc: &YCbCr, y: LumaImage, scale: usize) -> Result<YCbCr> {
    Ok(YCbCr {
        y,
        cb: bicubic_resize(&ycc.cb, scale as f64)?.clamped(),
        cr: bicubic_resize(&ycc.cr, scale as f64)?.clamped(),
    })
}

pub fn sr(a: &SrArgs) -> Result<()> {
    let kv = config::load(&a.cfg)?;
    let loaded = load_image(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let lr = loaded.luma();
    let mut opts = SrOptions::new(a.scale);
    opts.cascade = a.cascade;
    opts.back_projection_iters = a.bp;
    opts.enhanced = a.enhance;
    if let Some(t) = a.tile_pixels {
        opts.tile_pixels = (t > 0).then_some(t);
    }
    opts.validate()?;
    let gt = a.gt.as_deref().map(load_ground_truth).transpose()?.map(|g| modcrop(&g, a.scale));
    if let Some(g) = &gt {
        let want = (lr.height() * a.scale, lr.width() * a.scale);
        if g.dims() != want {
            bail!("ground truth is {:?}, expected {want:?} for x{} of the input", g.dims(), a.scale);
        }
    }

    let mut resolved = KvMap::new();
    let need_model = || -> Result<Checkpoint> {
        match &a.model {
            Some(m) => load_model(m),
            None => bail!("--adapt {} needs --model", a.adapt),
        }
    };
    let y = match a.adapt {
        AdaptMode::None => render(&need_model()?.network, &lr, &opts)?,
        AdaptMode::Finetune | AdaptMode::FinetuneAugment => {
            let cfg = config::finetune_config(&kv)?;
            let ext = match (a.adapt, &a.external) {
                (AdaptMode::FinetuneAugment, Some(e)) => load_lumas(e)?,
                (AdaptMode::FinetuneAugment, None) => bail!("--adapt finetune-aug needs --external"),
                _ => Vec::new(),
            };
            let base = need_model()?;
            let outcome = finetune_augmented(&base, &lr, a.scale, &cfg, &ext, &a.input.display().to_string())?;
            if let Some(w) = &outcome.warning {
                warn!("{w}");
            }
            resolved.merge(&config::finetune_kv(&cfg));
            render(&outcome.checkpoint.network, &lr, &opts)?
        }
        AdaptMode::Select => {
            let Some(pool_path) = &a.pool else {
                bail!("--adapt select needs --pool");
            };
            let pool = ModelPool::load_manifest(pool_path)?;
            let report = select_model(&pool, &lr, &opts, a.top_k)?;
            info!("selected {}", report.chosen.join(", "));
            resolved.set("chosen", report.chosen.join(","));
            render_selected(&pool, &report, &lr, &opts)?
        }
    };

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match &loaded {
        Loaded::Gray(_) => save_luma(&y, &a.out)?,
        Loaded::Rgb(rgb) => {
            let ycc = upscale_chroma(&rgb_to_ycbcr(rgb), y.clone(), a.scale)?;
            save_rgb(&ycbcr_to_rgb(&ycc)?, &a.out)?;
        }
    }
    if let Some(gt) = gt {
        let r = evaluate(&y, &gt, a.scale, a.scale)?;
        println!("psnr {} ssim {:.4}", r.psnr, r.ssim);
    }

    if let Some(m) = &a.model {
        resolved.set("model", m.display());
    }
    if let Some(p) = &a.pool {
        resolved.set("pool", p.display());
    }
    resolved.set("input", a.input.display());
    resolved.set("scale", a.scale);
    resolved.set("adapt", a.adapt);
    resolved.set("top_k", a.top_k);
    resolved.set("bp", a.bp);
    resolved.set("enhance", a.enhance);
    resolved.set("cascade", a.cascade);
    resolved.set("tile_pixels", opts.tile_pixels.unwrap_or(0));
    config::write_resolved(&config::beside(&a.out), &resolved)?;
    Ok(())
}

struct EvalRow {
    name: String,
    psnr: f64,
    ssim: f64,
}

impl CsvRow for EvalRow {
    const HEADER: &'static str = "image,psnr_db,ssim";
    fn csv(&self) -> String {
        format!("{},{:.4},{:.6}", self.name, self.psnr, self.ssim)
    }
}

pub fn eval(model: &str, set: &Path, scale: usize, shave: usize, enhance: bool, bp: usize, out: Option<&Path>) -> Result<()> {
    let net = match model {
        "bicubic" => None,
        path => Some(load_model(Path::new(path))?),
    };
    let paths = config::image_list(set)?;
    let mut opts = SrOptions::new(scale);
    opts.enhanced = enhance;
    opts.back_projection_iters = bp;
    opts.validate()?;
    let mut rows = Vec::new();
    for p in &paths {
        let (gt, lr) = experiments::lr_of(&load_ground_truth(p)?, scale)?;
        let sr = match &net {
            Some(ck) => render(&ck.network, &lr, &opts)?,
            None => bicubic_baseline(&lr, scale)?,
        };
        let r = evaluate(&sr, &gt, scale, shave)?;
        rows.push(EvalRow {
            name: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            psnr: r.psnr.db(),
            ssim: r.ssim,
        });
    }
    let n = rows.len() as f64;
    let mean = EvalRow {
        name: "mean".into(),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    };
    rows.push(mean);
    let stdout = std::io::stdout();
    write_csv(&rows, &mut stdout.lock())?;
    if let Some(p) = out {
        save_csv(&rows, p)?;
        let mut kv = KvMap::new();
        kv.set("model", model);
        kv.set("set", set.display());
        kv.set("scale", scale);
        kv.set("shave", shave);
        kv.set("enhance", enhance);
        kv.set("bp", bp);
        config::write_resolved(&config::beside(p), &kv)?;
    }
    Ok(())
}

fn base_model(model: Option<&Path>, out: &Path) -> Result<Checkpoint> {
    if let Some(m) = model {
        return load_model(m);
    }
    info!("no --model given; training the toy model");
    let setup = ToySetup::default();
    let (ck, log) = train_toy(&setup)?;
    ck.save(out.join("toy.ckpt"))?;
    let mut f = create(&out.join("toy_loss.csv"))?;
    write_loss_csv(&log, &mut f)?;
    f.flush()?;
    Ok(ck)
}

pub fn experiment(kind: ExperimentKind, out: &Path, model: Option<&Path>, args: &ConfigArgs) -> Result<()> {
    let kv = config::load(args)?;
    let params = StudyParams::from_kv(&kv)?;
    fs::create_dir_all(out)?;
    let mut resolved = params.to_kv();
    resolved.set("kind", format!("{kind:?}"));
    if let Some(m) = model {
        resolved.set("model", m.display());
    }
    config::write_resolved(&out.join("config.txt"), &resolved)?;
    let opts = SrOptions::new(params.scale);
    match kind {
        ExperimentKind::Toy => {
            let setup = ToySetup::default();
            let base = base_model(model, out)?;
            let scores = score_against_bicubic(&base.network, &setup.test_set(), &opts)?;
            save_csv(&scores, &out.join("toy_scores.csv"))?;
            println!("mean gain over bicubic: {:.4} dB", mean_gain(&scores));
            let rows = enhancement_report(&base.network, &setup.test_set(), params.scale)?;
            save_csv(&rows, &out.join("toy_enhancements.csv"))?;
            write_csv(&rows, &mut std::io::stdout().lock())?;
        }
        ExperimentKind::EpochSweep => {
            let base = base_model(model, out)?;
            let cfg = params.finetune_config(params.sweep_epochs);
            let rows = epoch_sweep(&base, &params.periodic_image(), &cfg, &opts)?;
            save_csv(&rows, &out.join("epoch_sweep.csv"))?;
            write_csv(&rows, &mut std::io::stdout().lock())?;
            match first_epoch_fraction(&rows) {
                Some(f) => println!("first-epoch share of best gain: {f:.3}"),
                None => println!("no epoch improved on the base model"),
            }
        }
        ExperimentKind::SizeSweep => {
            let base = base_model(model, out)?;
            let cfg = params.finetune_config(params.finetune_epochs);
            let rows = size_sweep(&base, &params.periodic_image(), &cfg, &opts)?;
            save_csv(&rows, &out.join("size_sweep.csv"))?;
            write_csv(&rows, &mut std::io::stdout().lock())?;
        }
        ExperimentKind::Ablation => {
            let mut setup = ToySetup::default();
            setup.train.epochs = params.ablation_epochs;
            setup.scale = params.scale;
            if !branches_shared(&setup.spec, setup.net_seed)? {
                bail!("variants do not share F-branch weights");
            }
            let rows = ablation(&setup)?;
            save_csv(&rows, &out.join("ablation.csv"))?;
            write_csv(&rows, &mut std::io::stdout().lock())?;
        }
        ExperimentKind::SelectionStudy => {
            let base = base_model(model, out)?;
            let cfg = params.finetune_config(params.finetune_epochs);
            let pool = build_pool(&base, &params.pool_images(), params.scale, &cfg)?;
            pool.save(out.join("pool"))?;
            let (rows, summary) = selection_study(&pool, &params.suite_images(), &opts)?;
            save_csv(&rows, &out.join("selection_study.csv"))?;
            fs::write(out.join("selection_summary.csv"), summary.csv())?;
            print!("{}", summary.csv());
        }
    }
    Ok(())
}
