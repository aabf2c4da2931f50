//! Feature bridges that inject side-branch (edge) features into the main
//! branch at matching levels. Fusion is one-way: the side branch keeps its
//! own feature untouched.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cgm::P_MAP_EPS;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv, Ctx};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FbmVariant {
    /// Concatenate then project (`base_a`).
    BaseConcat,
    /// Elementwise sum (`base_b`).
    BaseAdd,
    /// Main feature gated by `P(side)`, concatenated with itself and
    /// projected (`c`).
    MaskBridge,
    /// Decoder-only: main feature enriched with the encoder skip, gated by
    /// `Q(side)` (`d`).
    DeepMaskBridge,
}

impl FbmVariant {
    pub const ENCODER: [FbmVariant; 3] = [
        FbmVariant::BaseConcat,
        FbmVariant::BaseAdd,
        FbmVariant::MaskBridge,
    ];
    pub const DECODER: [FbmVariant; 4] = [
        FbmVariant::BaseConcat,
        FbmVariant::BaseAdd,
        FbmVariant::MaskBridge,
        FbmVariant::DeepMaskBridge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FbmVariant::BaseConcat => "base_a",
            FbmVariant::BaseAdd => "base_b",
            FbmVariant::MaskBridge => "c",
            FbmVariant::DeepMaskBridge => "d",
        }
    }

    pub fn is_decoder_only(self) -> bool {
        self == FbmVariant::DeepMaskBridge
    }
}

impl fmt::Display for FbmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FbmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base_a" => Ok(FbmVariant::BaseConcat),
            "base_b" => Ok(FbmVariant::BaseAdd),
            "c" => Ok(FbmVariant::MaskBridge),
            "d" => Ok(FbmVariant::DeepMaskBridge),
            other => Err(Error::Config(format!(
                "unknown FBM variant `{other}` (expected base_a, base_b, c or d)"
            ))),
        }
    }
}

impl TryFrom<String> for FbmVariant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FbmVariant> for String {
    fn from(v: FbmVariant) -> String {
        v.as_str().to_string()
    }
}

/// Sparse attention map of one feature batch, evaluated outside any
/// training graph.
pub fn q_map(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = g.q_map(v, 1.0);
    g.value(out).clone()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BridgeSite {
    Encoder,
    Decoder,
}

/// One bridge between a main-branch and side-branch feature.
#[derive(Clone, Debug)]
pub struct Fbm {
    variant: FbmVariant,
    channels: usize,
    enrich: Option<Conv>,
    fuse: Option<Conv>,
    rescale_q: bool,
}

impl Fbm {
    /// `skip_channels` is the encoder width at this resolution; only the
    /// deep bridge reads it.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        variant: FbmVariant,
        site: BridgeSite,
        channels: usize,
        skip_channels: usize,
        rescale_q: bool,
    ) -> Result<Self> {
        if variant.is_decoder_only() && site == BridgeSite::Encoder {
            return Err(Error::Config(
                "the deep mask bridge is only legal at decoder fusion points".into(),
            ));
        }
        let fuse = match variant {
            FbmVariant::BaseAdd => None,
            _ => Some(Conv::new(store, &format!("{prefix}.fuse"), 2 * channels, channels, 1, 1)),
        };
        let enrich = (variant == FbmVariant::DeepMaskBridge).then(|| {
            Conv::new(
                store,
                &format!("{prefix}.enrich"),
                channels + skip_channels,
                channels,
                1,
                1,
            )
        });
        Ok(Self {
            variant,
            channels,
            enrich,
            fuse,
            rescale_q,
        })
    }

    pub fn variant(&self) -> FbmVariant {
        self.variant
    }

    fn check(&self, ctx: &Ctx<'_>, main: Var, side: Var) -> Result<()> {
        let (ms, ss) = (ctx.value(main).shape(), ctx.value(side).shape());
        if ms != ss {
            return Err(Error::Config(format!(
                "main feature {ms:?} and side feature {ss:?} must match"
            )));
        }
        if ms[1] != self.channels {
            return Err(Error::Config(format!(
                "bridge built for {} channels, got {}",
                self.channels, ms[1]
            )));
        }
        Ok(())
    }

    /// Shallow bridge (`base_a`, `base_b`, `c`).
    pub fn shallow(&self, ctx: &mut Ctx<'_>, main: Var, side: Var) -> Result<Var> {
        self.check(ctx, main, side)?;
        match self.variant {
            FbmVariant::BaseAdd => ctx.graph.add(main, side),
            FbmVariant::BaseConcat => {
                let both = ctx.graph.concat(&[main, side])?;
                self.fuse_conv().forward(ctx, both)
            }
            FbmVariant::MaskBridge => {
                let mask = ctx.graph.p_map(side, P_MAP_EPS);
                let enhanced = ctx.graph.mul_mask(main, mask)?;
                let both = ctx.graph.concat(&[enhanced, main])?;
                self.fuse_conv().forward(ctx, both)
            }
            FbmVariant::DeepMaskBridge => Err(Error::Config(
                "the deep mask bridge needs an encoder skip feature".into(),
            )),
        }
    }

    /// Deep bridge (`d`).
    pub fn deep(&self, ctx: &mut Ctx<'_>, d_main: Var, d_side: Var, e_skip: Var) -> Result<Var> {
        self.check(ctx, d_main, d_side)?;
        let (ms, ks) = (ctx.value(d_main).shape(), ctx.value(e_skip).shape());
        if ms[0] != ks[0] || ms[2..] != ks[2..] {
            return Err(Error::Config(format!(
                "encoder skip {ks:?} does not match decoder feature {ms:?} spatially"
            )));
        }
        let enrich = self
            .enrich
            .as_ref()
            .ok_or_else(|| Error::Config(format!("bridge {} has no deep weights", self.variant)))?;
        let joined = ctx.graph.concat(&[d_main, e_skip])?;
        let tmp = enrich.forward(ctx, joined)?;
        let rescale = if self.rescale_q {
            (ms[2] * ms[3]) as f64
        } else {
            1.0
        };
        let mask = ctx.graph.q_map(d_side, rescale);
        let enhanced = ctx.graph.mul_mask(tmp, mask)?;
        let both = ctx.graph.concat(&[enhanced, d_main])?;
        self.fuse_conv().forward(ctx, both)
    }

    /// Dispatches on variant; `e_skip` is required for the deep bridge only.
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        main: Var,
        side: Var,
        e_skip: Option<Var>,
    ) -> Result<Var> {
        match (self.variant, e_skip) {
            (FbmVariant::DeepMaskBridge, Some(skip)) => self.deep(ctx, main, side, skip),
            _ => self.shallow(ctx, main, side),
        }
    }

    fn fuse_conv(&self) -> &Conv {
        self.fuse.as_ref().expect("non-additive bridges own a fuse conv")
    }
}
