//! Declarative network architecture.
//!
//! A network is an extraction stack (conv + ReLU), an inference stack of
//! cells of projection units, and a reconstruction stack of plain convs. Each
//! projection unit computes `G(x) + F(x)` where `F` is two convs with ReLUs
//! and `G` is either a 3×3 conv or the identity.

use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};

/// Convs in the `F` branch of every projection unit.
pub const UNIT_DEPTH: usize = 2;

/// Input and output are single-channel luminance.
pub const IMAGE_CHANNELS: usize = 1;

const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipKind {
    Conv,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationOrder {
    /// `conv → ReLU → conv → ReLU`
    AfterAct,
    /// `ReLU → conv → ReLU → conv`
    PreAct,
}

/// How skip branches are chosen across the inference stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipPolicy {
    Conv,
    /// Identity everywhere; a width change anywhere is a spec error.
    Identity,
    /// Identity where the unit keeps its width, conv where it changes width.
    IdentityWhereWidthKept,
    /// Skip branches replaced by stacked plain layers. Accepted by the parser
    /// so specs can name it, rejected when building.
    PlainStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellSpec {
    pub units: usize,
    pub filters: usize,
}

impl CellSpec {
    pub fn new(filters: usize, units: usize) -> Self {
        Self { units, filters }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionUnitSpec {
    pub channels_in: usize,
    pub channels_out: usize,
    pub skip: SkipKind,
    pub activation: ActivationOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// Output widths of the conv + ReLU layers feeding the inference part.
    pub extraction: Vec<usize>,
    pub cells: Vec<CellSpec>,
    /// Output widths of the activation-free reconstruction convs; the last is
    /// the output channel count.
    pub reconstruction: Vec<usize>,
    /// Adds the network input to its output, so the stack predicts a residual.
    pub global_residual: bool,
    pub skip: SkipPolicy,
    pub activation: ActivationOrder,
}

/// The four skip/activation combinations compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantKind {
    ConvAfter,
    ConvPre,
    IdentityAfter,
    IdentityPre,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::ConvAfter,
        VariantKind::ConvPre,
        VariantKind::IdentityAfter,
        VariantKind::IdentityPre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::ConvAfter => "conv_after",
            VariantKind::ConvPre => "conv_pre",
            VariantKind::IdentityAfter => "identity_after",
            VariantKind::IdentityPre => "identity_pre",
        }
    }

    pub fn skip_policy(self) -> SkipPolicy {
        match self {
            VariantKind::ConvAfter | VariantKind::ConvPre => SkipPolicy::Conv,
            VariantKind::IdentityAfter | VariantKind::IdentityPre => {
                SkipPolicy::IdentityWhereWidthKept
            }
        }
    }

    pub fn activation(self) -> ActivationOrder {
        match self {
            VariantKind::ConvAfter | VariantKind::IdentityAfter => ActivationOrder::AfterAct,
            VariantKind::ConvPre | VariantKind::IdentityPre => ActivationOrder::PreAct,
        }
    }

    /// `spec` rewritten to this variant's skip and activation placement.
    pub fn apply(self, spec: &NetworkSpec) -> NetworkSpec {
        NetworkSpec {
            skip: self.skip_policy(),
            activation: self.activation(),
            ..spec.clone()
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err!("unknown variant kind {s:?}"))
    }
}

/// Role of one conv layer within the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    Extraction,
    /// First or second conv of a unit's `F` branch.
    Branch { unit: usize, index: usize },
    Skip { unit: usize },
    Reconstruction,
}

impl LayerRole {
    pub fn is_main_path(self) -> bool {
        !matches!(self, LayerRole::Skip { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub role: LayerRole,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * 9 + self.out_ch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCount {
    /// Extraction, `F` branches and reconstruction.
    pub main_path: usize,
    /// Projection skip convs.
    pub skip: usize,
}

impl ParameterCount {
    pub fn total(&self) -> usize {
        self.main_path + self.skip
    }
}

impl NetworkSpec {
    /// The published configuration: six cells of three units with widths
    /// 16, 16, 32, 32, 64, 64 and 16-wide extraction/reconstruction.
    pub fn dpn() -> Self {
        Self {
            extraction: vec![16, 16],
            cells: [16, 16, 32, 32, 64, 64]
                .into_iter()
                .map(|f| CellSpec::new(f, 3))
                .collect(),
            reconstruction: vec![16, IMAGE_CHANNELS],
            global_residual: true,
            skip: SkipPolicy::Conv,
            activation: ActivationOrder::AfterAct,
        }
    }

    /// Reduced network for desk-scale experiments: cells `(8³, 8³, 16³)`,
    /// extraction and reconstruction width 8.
    pub fn toy() -> Self {
        Self {
            extraction: vec![8, 8],
            cells: vec![CellSpec::new(8, 3), CellSpec::new(8, 3), CellSpec::new(16, 3)],
            reconstruction: vec![8, IMAGE_CHANNELS],
            ..Self::dpn()
        }
    }

    /// A plain 20-layer, 64-wide stack for parameter comparisons.
    pub fn vdsr() -> Self {
        Self {
            extraction: vec![64; 19],
            cells: Vec::new(),
            reconstruction: vec![IMAGE_CHANNELS],
            global_residual: true,
            skip: SkipPolicy::Conv,
            activation: ActivationOrder::AfterAct,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec_err = |m: String| Err(Error::Spec(m));
        if self.extraction.iter().any(|&w| w == 0) {
            return spec_err("extraction widths must be positive".into());
        }
        if let Some(c) = self.cells.iter().find(|c| c.units == 0 || c.filters == 0) {
            return spec_err(format!("cell {}x{} must be non-empty", c.filters, c.units));
        }
        match self.reconstruction.last() {
            None => return spec_err("reconstruction needs at least one conv".into()),
            Some(&last) if last != IMAGE_CHANNELS => {
                return spec_err(format!(
                    "reconstruction must end with {IMAGE_CHANNELS} channel(s), ends with {last}"
                ))
            }
            _ => {}
        }
        if self.reconstruction.iter().any(|&w| w == 0) {
            return spec_err("reconstruction widths must be positive".into());
        }
        if self.skip == SkipPolicy::PlainStack {
            return spec_err("plain-stack skip branches are not supported".into());
        }
        for (i, u) in self.units().iter().enumerate() {
            if u.skip == SkipKind::Identity && u.channels_in != u.channels_out {
                return spec_err(format!(
                    "unit {i}: identity skip cannot change width {} -> {}",
                    u.channels_in, u.channels_out
                ));
            }
        }
        Ok(())
    }

    /// Width entering the inference part.
    fn inference_input_width(&self) -> usize {
        self.extraction.last().copied().unwrap_or(IMAGE_CHANNELS)
    }

    /// Projection units in order; the first unit of a cell carries any width
    /// change.
    pub fn units(&self) -> Vec<ProjectionUnitSpec> {
        let mut width = self.inference_input_width();
        let mut out = Vec::new();
        for cell in &self.cells {
            for _ in 0..cell.units {
                let skip = match self.skip {
                    SkipPolicy::Conv | SkipPolicy::PlainStack => SkipKind::Conv,
                    SkipPolicy::Identity => SkipKind::Identity,
                    SkipPolicy::IdentityWhereWidthKept if width == cell.filters => {
                        SkipKind::Identity
                    }
                    SkipPolicy::IdentityWhereWidthKept => SkipKind::Conv,
                };
                out.push(ProjectionUnitSpec {
                    channels_in: width,
                    channels_out: cell.filters,
                    skip,
                    activation: self.activation,
                });
                width = cell.filters;
            }
        }
        out
    }

    /// Every conv in parameter order: extraction, then per unit the two
    /// branch convs followed by its skip conv if any, then reconstruction.
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut layers = Vec::new();
        let mut width = IMAGE_CHANNELS;
        for &w in &self.extraction {
            layers.push(LayerShape {
                role: LayerRole::Extraction,
                in_ch: width,
                out_ch: w,
            });
            width = w;
        }
        for (i, u) in self.units().iter().enumerate() {
            layers.push(LayerShape {
                role: LayerRole::Branch { unit: i, index: 0 },
                in_ch: u.channels_in,
                out_ch: u.channels_out,
            });
            layers.push(LayerShape {
                role: LayerRole::Branch { unit: i, index: 1 },
                in_ch: u.channels_out,
                out_ch: u.channels_out,
            });
            if u.skip == SkipKind::Conv {
                layers.push(LayerShape {
                    role: LayerRole::Skip { unit: i },
                    in_ch: u.channels_in,
                    out_ch: u.channels_out,
                });
            }
            width = u.channels_out;
        }
        for &w in &self.reconstruction {
            layers.push(LayerShape {
                role: LayerRole::Reconstruction,
                in_ch: width,
                out_ch: w,
            });
            width = w;
        }
        layers
    }

    /// Convs along the longest input-to-output path.
    pub fn main_path_depth(&self) -> usize {
        self.extraction.len()
            + self.cells.iter().map(|c| c.units).sum::<usize>() * UNIT_DEPTH
            + self.reconstruction.len()
    }

    /// Pixels of context an output pixel depends on, per side.
    pub fn receptive_radius(&self) -> usize {
        self.main_path_depth() * (crate::conv::KERNEL / 2)
    }

    pub fn parameter_count(&self) -> ParameterCount {
        let mut count = ParameterCount {
            main_path: 0,
            skip: 0,
        };
        for l in self.layers() {
            if l.role.is_main_path() {
                count.main_path += l.param_count();
            } else {
                count.skip += l.param_count();
            }
        }
        count
    }

    /// Canonical text form: one `key=value` line per field in fixed order.
    pub fn to_canonical_string(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let cells = self
            .cells
            .iter()
            .map(|c| format!("{}x{}", c.filters, c.units))
            .collect::<Vec<_>>()
            .join(",");
        let skip = match self.skip {
            SkipPolicy::Conv => "conv",
            SkipPolicy::Identity => "identity",
            SkipPolicy::IdentityWhereWidthKept => "identity-or-conv",
            SkipPolicy::PlainStack => "plain-stack",
        };
        let act = match self.activation {
            ActivationOrder::AfterAct => "after",
            ActivationOrder::PreAct => "pre",
        };
        format!(
            "spec_version={SPEC_VERSION}\nextraction={}\ncells={cells}\nreconstruction={}\nglobal_residual={}\nskip={skip}\nactivation={act}\n",
            join(&self.extraction),
            join(&self.reconstruction),
            self.global_residual,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = NetworkSpec {
            extraction: Vec::new(),
            cells: Vec::new(),
            reconstruction: Vec::new(),
            global_residual: true,
            skip: SkipPolicy::Conv,
            activation: ActivationOrder::AfterAct,
        };
        let list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Spec(format!("bad width {s:?}")))
                })
                .collect()
        };
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("expected key=value, got {line:?}")))?;
            let value = value.trim();
            match key.trim() {
                "spec_version" => {
                    if value != SPEC_VERSION.to_string() {
                        return Err(Error::Spec(format!("unsupported spec version {value}")));
                    }
                }
                "extraction" => spec.extraction = list(value)?,
                "reconstruction" => spec.reconstruction = list(value)?,
                "cells" => {
                    spec.cells = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|c| {
                            let (f, k) = c
                                .split_once('x')
                                .ok_or_else(|| Error::Spec(format!("bad cell {c:?}")))?;
                            let f = f.parse().map_err(|_| Error::Spec(format!("bad cell {c:?}")))?;
                            let k = k.parse().map_err(|_| Error::Spec(format!("bad cell {c:?}")))?;
                            Ok(CellSpec::new(f, k))
                        })
                        .collect::<Result<_>>()?
                }
                "global_residual" => {
                    spec.global_residual = value
                        .parse()
                        .map_err(|_| Error::Spec(format!("bad boolean {value:?}")))?
                }
                "skip" => {
                    spec.skip = match value {
                        "conv" => SkipPolicy::Conv,
                        "identity" => SkipPolicy::Identity,
                        "identity-or-conv" => SkipPolicy::IdentityWhereWidthKept,
                        "plain-stack" => SkipPolicy::PlainStack,
                        _ => return Err(Error::Spec(format!("unknown skip {value:?}"))),
                    }
                }
                "activation" => {
                    spec.activation = match value {
                        "after" => ActivationOrder::AfterAct,
                        "pre" => ActivationOrder::PreAct,
                        _ => return Err(Error::Spec(format!("unknown activation {value:?}"))),
                    }
                }
                other => return Err(Error::Spec(format!("unknown spec key {other:?}"))),
            }
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dpn_has_forty_main_path_convs() {
        let spec = NetworkSpec::dpn();
        spec.validate().unwrap();
        assert_eq!(spec.main_path_depth(), 40);
        let main = spec.layers().iter().filter(|l| l.role.is_main_path()).count();
        assert_eq!(main, 40);
        assert_eq!(spec.layers().len(), 40 + 18);
    }

    #[test]
    fn width_changes_at_first_unit_of_cells_three_and_five() {
        let units = NetworkSpec::dpn().units();
        assert_eq!(units.len(), 18);
        let changes: Vec<_> = units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.channels_in != u.channels_out)
            .map(|(i, u)| (i, u.channels_in, u.channels_out))
            .collect();
        assert_eq!(changes, vec![(6, 16, 32), (12, 32, 64)]);
    }

    #[test]
    fn two_layer_parameter_count() {
        let spec = NetworkSpec {
            extraction: vec![16],
            cells: vec![],
            reconstruction: vec![1],
            ..NetworkSpec::dpn()
        };
        assert_eq!(spec.parameter_count().total(), 305);
    }

    #[test]
    fn identity_with_width_change_is_rejected() {
        let spec = NetworkSpec {
            skip: SkipPolicy::Identity,
            ..NetworkSpec::dpn()
        };
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
        let variant = VariantKind::IdentityAfter.apply(&NetworkSpec::dpn());
        variant.validate().unwrap();
        let convs = variant
            .units()
            .iter()
            .filter(|u| u.skip == SkipKind::Conv)
            .count();
        assert_eq!(convs, 2);
    }

    #[test]
    fn plain_stack_parses_but_does_not_validate() {
        let mut spec = NetworkSpec::toy();
        spec.skip = SkipPolicy::PlainStack;
        let parsed = NetworkSpec::parse(&spec.to_canonical_string()).unwrap();
        assert_eq!(parsed, spec);
        assert!(parsed.validate().is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        for spec in [
            NetworkSpec::dpn(),
            NetworkSpec::toy(),
            NetworkSpec::vdsr(),
            VariantKind::IdentityPre.apply(&NetworkSpec::toy()),
        ] {
            let text = spec.to_canonical_string();
            assert_eq!(NetworkSpec::parse(&text).unwrap(), spec);
        }
    }

    #[test]
    fn variant_names_parse() {
        for k in VariantKind::ALL {
            assert_eq!(k.name().parse::<VariantKind>().unwrap(), k);
        }
        assert!(matches!(
            "inception".parse::<VariantKind>(),
            Err(Error::Config(_))
        ));
    }
}
