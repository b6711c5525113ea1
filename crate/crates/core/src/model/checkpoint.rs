//! Versioned binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes   "DPNCKPT\0"
//! format version   u32       1
//! spec length      u32       L
//! spec text        L bytes   UTF-8, NetworkSpec::to_canonical_string
//! blob count       u32       B = 2 × number of convs
//! B blobs                    per conv in declared order: weights, then biases
//!   element count  u32
//!   values         f32 × count
//! optimizer flag   u8        0 = absent, 1 = present
//! if present:
//!   momentum       f64
//!   weight decay   f64
//!   clip theta     f64       +inf encodes "no clipping"
//!   steps          u64
//!   B blobs                  momentum buffers, same layout as the parameters
//! metadata count   u32       M
//! M entries, sorted by key:
//!   key length     u32, key bytes (UTF-8)
//!   value length   u32, value bytes (UTF-8)
//! ```
//!
//! Nothing may follow the metadata; trailing bytes are a format error.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::conv::ConvParams;
use crate::error::{Error, Result};
use crate::model::network::Network;
use crate::model::spec::NetworkSpec;
use crate::optim::{OptimizerState, SgdConfig};
use crate::tensor::{Dims, Tensor4};

pub const MAGIC: &[u8; 8] = b"DPNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub metadata: BTreeMap<String, String>,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("checkpoint field exceeds u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f32]) {
        self.u32(v.len());
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn params(&mut self, params: &[ConvParams<f32>]) {
        self.u32(params.len() * 2);
        for p in params {
            self.floats(p.weights.data());
            self.floats(&p.bias);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }
    fn floats(&mut self, expect: usize) -> Result<Vec<f32>> {
        let n = self.u32()?;
        if n != expect {
            return Err(Error::Format(format!("blob has {n} values, expected {expect}")));
        }
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn params(&mut self, spec: &NetworkSpec) -> Result<Vec<ConvParams<f32>>> {
        let layers = spec.layers();
        let blobs = self.u32()?;
        if blobs != layers.len() * 2 {
            return Err(Error::Format(format!(
                "{blobs} blobs for {} convs",
                layers.len()
            )));
        }
        layers
            .iter()
            .map(|l| {
                let dims = Dims::new(l.out_ch, l.in_ch, 3, 3);
                let w = Tensor4::from_vec(dims, self.floats(dims.len())?)?;
                let b = self.floats(l.out_ch)?;
                ConvParams::new(w, b)
            })
            .collect()
    }
}

impl Checkpoint {
    pub fn new(network: Network<f32>) -> Self {
        Self {
            network,
            optimizer: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.network.spec()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION as usize);
        w.bytes(self.network.spec().to_canonical_string().as_bytes());
        w.params(self.network.params());
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.f64(opt.config.momentum);
                w.f64(opt.config.weight_decay);
                w.f64(opt.config.clip_theta);
                w.u64(opt.steps);
                w.params(&opt.velocity);
            }
        }
        w.u32(self.metadata.len());
        for (k, v) in &self.metadata {
            w.bytes(k.as_bytes());
            w.bytes(v.as_bytes());
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let spec = NetworkSpec::parse(&r.string()?)?;
        let params = r.params(&spec)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = SgdConfig {
                    momentum: r.f64()?,
                    weight_decay: r.f64()?,
                    clip_theta: r.f64()?,
                };
                let steps = r.u64()?;
                let velocity = r.params(&spec)?;
                Some(OptimizerState {
                    config,
                    velocity,
                    steps,
                })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                buf.len() - r.pos
            )));
        }
        Ok(Self {
            network: Network::from_parts(spec, params)?,
            optimizer,
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
