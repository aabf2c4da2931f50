//! Residual building blocks shared by both branches.

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{maybe_norm, Conv, Ctx, Norm};
use crate::params::ParamStore;

/// Channel contract of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Per-channel normalization after each convolution. Disabled for
    /// finite-difference checks.
    pub normalization: bool,
}

impl BlockSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            normalization: true,
        }
    }

    pub fn without_norm(mut self) -> Self {
        self.normalization = false;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("block spec {self:?} has zero channels")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Resolution-preserving.
    Plain,
    /// Stride-2 first convolution and shortcut.
    Down,
    /// 2x bilinear upsample ahead of both paths.
    Up,
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    kind: BlockKind,
    spec: BlockSpec,
    conv1: Conv,
    norm1: Option<Norm>,
    conv2: Conv,
    norm2: Option<Norm>,
    shortcut: Option<(Conv, Option<Norm>)>,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, kind: BlockKind, spec: BlockSpec) -> Result<Self> {
        spec.validate()?;
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        let stride = if kind == BlockKind::Down { 2 } else { 1 };
        let norm = |store: &mut ParamStore, name: &str| {
            spec.normalization
                .then(|| Norm::new(store, &format!("{prefix}.{name}"), cout))
        };
        let conv1 = Conv::new(store, &format!("{prefix}.conv1"), cin, cout, 3, stride);
        let norm1 = norm(store, "norm1");
        let conv2 = Conv::new(store, &format!("{prefix}.conv2"), cout, cout, 3, 1);
        let norm2 = norm(store, "norm2");
        let shortcut = if kind == BlockKind::Plain && cin == cout {
            None
        } else {
            let conv = Conv::new(store, &format!("{prefix}.shortcut"), cin, cout, 1, stride);
            Some((conv, norm(store, "shortcut_norm")))
        };
        Ok(Self {
            kind,
            spec,
            conv1,
            norm1,
            conv2,
            norm2,
            shortcut,
        })
    }

    pub fn plain(store: &mut ParamStore, prefix: &str, spec: BlockSpec) -> Result<Self> {
        Self::new(store, prefix, BlockKind::Plain, spec)
    }

    pub fn down(store: &mut ParamStore, prefix: &str, spec: BlockSpec) -> Result<Self> {
        Self::new(store, prefix, BlockKind::Down, spec)
    }

    pub fn up(store: &mut ParamStore, prefix: &str, spec: BlockSpec) -> Result<Self> {
        Self::new(store, prefix, BlockKind::Up, spec)
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn spec(&self) -> BlockSpec {
        self.spec
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let [_, c, h, w] = ctx.value(x).shape();
        if c != self.spec.in_channels {
            return Err(Error::Config(format!(
                "block expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        if self.kind == BlockKind::Down && (h < 2 || w < 2) {
            return Err(Error::Degenerate(format!(
                "cannot down-sample a {h}x{w} feature map"
            )));
        }
        let input = match self.kind {
            BlockKind::Up => ctx.graph.upsample2x(x),
            _ => x,
        };
        let mut main = self.conv1.forward(ctx, input)?;
        main = maybe_norm(&self.norm1, ctx, main)?;
        main = ctx.graph.relu(main);
        main = self.conv2.forward(ctx, main)?;
        main = maybe_norm(&self.norm2, ctx, main)?;
        let skip = match &self.shortcut {
            None => input,
            Some((conv, norm)) => {
                let s = conv.forward(ctx, input)?;
                maybe_norm(norm, ctx, s)?
            }
        };
        let sum = ctx.graph.add(main, skip)?;
        Ok(ctx.graph.relu(sum))
    }
}
