//! Cross-layer graph fusion between same-resolution encoder and decoder
//! features.
//!
//! The decoder feature `D` gains spatial detail from `E` (strategy A: learned
//! convolutions over both; strategy B: `E` gated by the non-salient region
//! map `1 - P(D)`), the encoder feature `E` gains semantics from `D`
//! (strategy C: `E ⊙ D`; strategy D: `E ⊙ P(D)`), and the two enhanced
//! streams are concatenated and projected back to `C` channels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv, Ctx};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Relative stabilizer of the salience map: the peak maps to `1 / (1 + ε)`.
pub const P_MAP_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderStrategy {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderStrategy {
    C,
    D,
}

/// The five fusion structures: the plain baseline and the four strategy
/// pairings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CgmVariant {
    Base,
    /// (A, C)
    AC,
    /// (A, D)
    AD,
    /// (B, C)
    BC,
    /// (B, D)
    BD,
}

impl CgmVariant {
    pub const ALL: [CgmVariant; 5] = [
        CgmVariant::Base,
        CgmVariant::AC,
        CgmVariant::AD,
        CgmVariant::BC,
        CgmVariant::BD,
    ];

    pub fn from_strategies(
        decoder: Option<DecoderStrategy>,
        encoder: Option<EncoderStrategy>,
    ) -> Result<Self> {
        use DecoderStrategy::*;
        use EncoderStrategy::*;
        match (decoder, encoder) {
            (None, None) => Ok(CgmVariant::Base),
            (Some(A), Some(C)) => Ok(CgmVariant::AC),
            (Some(A), Some(D)) => Ok(CgmVariant::AD),
            (Some(B), Some(C)) => Ok(CgmVariant::BC),
            (Some(B), Some(D)) => Ok(CgmVariant::BD),
            (d, e) => Err(Error::Config(format!(
                "illegal fusion strategy pair ({d:?}, {e:?})"
            ))),
        }
    }

    pub fn strategies(self) -> Option<(DecoderStrategy, EncoderStrategy)> {
        use DecoderStrategy::*;
        use EncoderStrategy::*;
        match self {
            CgmVariant::Base => None,
            CgmVariant::AC => Some((A, C)),
            CgmVariant::AD => Some((A, D)),
            CgmVariant::BC => Some((B, C)),
            CgmVariant::BD => Some((B, D)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CgmVariant::Base => "base",
            CgmVariant::AC => "a",
            CgmVariant::AD => "b",
            CgmVariant::BC => "c",
            CgmVariant::BD => "d",
        }
    }
}

impl fmt::Display for CgmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CgmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(CgmVariant::Base),
            "a" => Ok(CgmVariant::AC),
            "b" => Ok(CgmVariant::AD),
            "c" => Ok(CgmVariant::BC),
            "d" => Ok(CgmVariant::BD),
            other => Err(Error::Config(format!(
                "unknown CGM variant `{other}` (expected base, a, b, c or d)"
            ))),
        }
    }
}

impl TryFrom<String> for CgmVariant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CgmVariant> for String {
    fn from(v: CgmVariant) -> String {
        v.as_str().to_string()
    }
}

/// Salience map of one feature batch, evaluated outside any training graph.
pub fn p_map(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = g.p_map(v, P_MAP_EPS);
    g.value(out).clone()
}

fn check_pair(ctx: &Ctx<'_>, e: Var, d: Var) -> Result<[usize; 4]> {
    let (es, ds) = (ctx.value(e).shape(), ctx.value(d).shape());
    if es != ds {
        return Err(Error::Config(format!(
            "encoder feature {es:?} and decoder feature {ds:?} must match"
        )));
    }
    Ok(es)
}

/// Learned part of strategy A.
#[derive(Clone, Debug)]
struct SpatialConvs {
    first: Conv,
    second: Conv,
}

/// One fusion point.
#[derive(Clone, Debug)]
pub struct Cgm {
    name: String,
    variant: CgmVariant,
    channels: usize,
    spatial: Option<SpatialConvs>,
    fuse: Conv,
}

impl Cgm {
    pub fn new(store: &mut ParamStore, prefix: &str, variant: CgmVariant, channels: usize) -> Self {
        let spatial = match variant.strategies() {
            Some((DecoderStrategy::A, _)) => Some(SpatialConvs {
                first: Conv::new(store, &format!("{prefix}.spatial1"), 2 * channels, channels, 3, 1),
                second: Conv::new(store, &format!("{prefix}.spatial2"), channels, channels, 3, 1),
            }),
            _ => None,
        };
        let fuse = Conv::new(store, &format!("{prefix}.fuse"), 2 * channels, channels, 1, 1);
        Self {
            name: prefix.to_string(),
            variant,
            channels,
            spatial,
            fuse,
        }
    }

    pub fn variant(&self) -> CgmVariant {
        self.variant
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Spatial enrichment of the decoder feature.
    pub fn enhance_decoder(
        &self,
        ctx: &mut Ctx<'_>,
        e: Var,
        d: Var,
        strategy: DecoderStrategy,
    ) -> Result<Var> {
        check_pair(ctx, e, d)?;
        let s = match strategy {
            DecoderStrategy::A => {
                let convs = self.spatial.as_ref().ok_or_else(|| {
                    Error::Config(format!("variant {} has no strategy A weights", self.variant))
                })?;
                let both = ctx.graph.concat(&[e, d])?;
                let h = convs.first.forward(ctx, both)?;
                let h = ctx.graph.relu(h);
                convs.second.forward(ctx, h)?
            }
            DecoderStrategy::B => non_salient_gate(ctx, e, d)?,
        };
        ctx.graph.add(d, s)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, e: Var, d: Var) -> Result<Var> {
        let [_, c, _, _] = check_pair(ctx, e, d)?;
        if c != self.channels {
            return Err(Error::Config(format!(
                "fusion point built for {} channels, got {c}",
                self.channels
            )));
        }
        ctx.tap(format!("{}.d", self.name), d);
        ctx.tap(format!("{}.e", self.name), e);
        let both = match self.variant.strategies() {
            None => ctx.graph.concat(&[d, e])?,
            Some((dec, enc)) => {
                let d_enh = self.enhance_decoder(ctx, e, d, dec)?;
                let e_enh = enhance_encoder(ctx, e, d, enc)?;
                ctx.tap(format!("{}.d_enh", self.name), d_enh);
                ctx.tap(format!("{}.e_enh", self.name), e_enh);
                ctx.graph.concat(&[d_enh, e_enh])?
            }
        };
        let out = self.fuse.forward(ctx, both)?;
        ctx.tap(format!("{}.out", self.name), out);
        Ok(out)
    }
}

/// Strategy B's spatial term `E ⊙ (1 - P(D))`.
fn non_salient_gate(ctx: &mut Ctx<'_>, e: Var, d: Var) -> Result<Var> {
    let p = ctx.graph.p_map(d, P_MAP_EPS);
    let mask = ctx.graph.one_minus(p);
    ctx.graph.mul_mask(e, mask)
}

/// Semantic reinforcement of the encoder feature (parameter-free).
pub fn enhance_encoder(ctx: &mut Ctx<'_>, e: Var, d: Var, strategy: EncoderStrategy) -> Result<Var> {
    check_pair(ctx, e, d)?;
    match strategy {
        EncoderStrategy::C => ctx.graph.mul(e, d),
        EncoderStrategy::D => {
            let p = ctx.graph.p_map(d, P_MAP_EPS);
            ctx.graph.mul_mask(e, p)
        }
    }
}
