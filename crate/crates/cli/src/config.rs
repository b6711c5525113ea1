//! Config files, `--set` overrides and the resolved-config files written
//! next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpn_core::adaptation::FinetuneConfig;
use dpn_core::data::{ExternalSetConfig, PyramidSpec};
use dpn_core::kv::{format_list, parse_list, KvMap};
use dpn_core::model::NetworkSpec;
use dpn_core::trainer::{TrainConfig, CONFIG_KEYS};

use crate::ConfigArgs;

/// File entries, then `--set` overrides.
pub fn load(args: &ConfigArgs) -> Result<KvMap> {
    let mut kv = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            KvMap::parse(&text)?
        }
        None => KvMap::new(),
    };
    let mut over = KvMap::new();
    for s in &args.overrides {
        let Some((k, v)) = s.split_once('=') else {
            bail!("--set expects key=value, got {s:?}");
        };
        over.set(k.trim(), v.trim());
    }
    kv.merge(&over);
    Ok(kv)
}

/// Entries of `kv` whose keys are in `keys`.
pub fn subset(kv: &KvMap, keys: &[&str]) -> KvMap {
    let mut out = KvMap::new();
    for (k, v) in kv.iter() {
        if keys.contains(&k) {
            out.set(k, v);
        }
    }
    out
}

pub fn write_resolved(path: &Path, kv: &KvMap) -> Result<()> {
    fs::write(path, kv.to_text()).with_context(|| format!("writing {}", path.display()))
}

/// `<out>.config.txt` beside a single-file output.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".config.txt");
    out.with_file_name(name)
}

/// `toy`, `dpn`, `vdsr`, or a path to a spec file.
pub fn network_spec(name: &str) -> Result<NetworkSpec> {
    Ok(match name {
        "toy" => NetworkSpec::toy(),
        "dpn" => NetworkSpec::dpn(),
        "vdsr" => NetworkSpec::vdsr(),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading network spec {path}"))?;
            NetworkSpec::parse(&text)?
        }
    })
}

const DATA_KEYS: &[&str] = &["spec", "scales", "stride", "augment", "data_seed", "net_seed"];

pub struct TrainSettings {
    pub spec_name: String,
    pub spec: NetworkSpec,
    pub data: ExternalSetConfig,
    pub net_seed: u64,
    pub train: TrainConfig,
}

impl TrainSettings {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let allowed: Vec<&str> = CONFIG_KEYS.iter().chain(DATA_KEYS).copied().collect();
        kv.check_keys(&allowed)?;
        let spec_name = kv.get_str("spec").unwrap_or("dpn").to_string();
        let mut data = ExternalSetConfig::default();
        if let Some(s) = kv.get_str("scales") {
            data.scales = parse_list(s)?;
        }
        kv.read_into("stride", &mut data.stride)?;
        kv.read_into("augment", &mut data.augment)?;
        kv.read_into("data_seed", &mut data.seed)?;
        let mut net_seed = 0;
        kv.read_into("net_seed", &mut net_seed)?;
        Ok(Self {
            spec: network_spec(&spec_name)?,
            spec_name,
            data,
            net_seed,
            train: TrainConfig::from_kv(&subset(kv, CONFIG_KEYS))?,
        })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.train.to_kv();
        kv.set("spec", &self.spec_name);
        kv.set("scales", format_list(&self.data.scales));
        kv.set("stride", self.data.stride);
        kv.set("augment", self.data.augment);
        kv.set("data_seed", self.data.seed);
        kv.set("net_seed", self.net_seed);
        kv
    }
}

const FINETUNE_KEYS: &[&str] = &[
    "epochs",
    "lr",
    "batch_size",
    "clip_theta",
    "seed",
    "pyramid_scales",
    "stride",
    "scale_augmentation",
    "target_examples",
    "augment",
];

/// Finetuning settings; `target_examples = none` keeps the stride fixed.
pub fn finetune_config(kv: &KvMap) -> Result<FinetuneConfig> {
    kv.check_keys(FINETUNE_KEYS)?;
    let mut pyramid = PyramidSpec::default();
    if let Some(s) = kv.get_str("pyramid_scales") {
        pyramid.scales = parse_list(s)?;
    }
    kv.read_into("stride", &mut pyramid.stride)?;
    kv.read_into("scale_augmentation", &mut pyramid.scale_augmentation)?;
    kv.read_into("augment", &mut pyramid.augment)?;
    match kv.get_str("target_examples") {
        Some("none") => pyramid.target_examples = None,
        Some(_) => pyramid.target_examples = kv.get("target_examples")?,
        None => {}
    }
    let mut epochs = 1;
    kv.read_into("epochs", &mut epochs)?;
    let mut cfg = FinetuneConfig::new(pyramid, epochs);
    kv.read_into("lr", &mut cfg.train.lr0)?;
    kv.read_into("batch_size", &mut cfg.train.batch_size)?;
    kv.read_into("clip_theta", &mut cfg.train.sgd.clip_theta)?;
    kv.read_into("seed", &mut cfg.train.seed)?;
    cfg.pyramid.seed = cfg.train.seed;
    cfg.pyramid.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn finetune_kv(cfg: &FinetuneConfig) -> KvMap {
    let mut kv = KvMap::new();
    kv.set("epochs", cfg.epochs);
    kv.set("lr", cfg.train.lr0);
    kv.set("batch_size", cfg.train.batch_size);
    kv.set("clip_theta", cfg.train.sgd.clip_theta);
    kv.set("seed", cfg.train.seed);
    kv.set("pyramid_scales", format_list(&cfg.pyramid.scales));
    kv.set("stride", cfg.pyramid.stride);
    kv.set("scale_augmentation", cfg.pyramid.scale_augmentation);
    match cfg.pyramid.target_examples {
        Some(t) => kv.set("target_examples", t),
        None => kv.set("target_examples", "none"),
    }
    kv.set("augment", cfg.pyramid.augment);
    kv
}

/// Paths from a list file (one per line, `#` comments, relative to the
/// file) or the PNG files of a directory in name order.
pub fn image_list(path: &Path) -> Result<Vec<PathBuf>> {
    let list = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        v.sort();
        v
    } else {
        let text = fs::read_to_string(path).with_context(|| format!("reading image list {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        text.lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                let p = PathBuf::from(l);
                if p.is_absolute() {
                    p
                } else {
                    dir.join(p)
                }
            })
            .collect()
    };
    if list.is_empty() {
        bail!("{} lists no images", path.display());
    }
    Ok(list)
}
