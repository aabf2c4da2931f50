//! Full dual-task network: a main area-segmentation branch with cross-layer
//! fusion at every decoder level, and an optional edge-detection side branch
//! bridged into it.
//!
//! Layout for an `H × W` input and base width `C0`:
//!
//! ```text
//! main    stem(3→C0) ─ down(C0→2C0) ─ down(→4C0) ─ down(→8C0) ─ down(→16C0)
//!                 e0          e1           e2           e3           e4
//! decoder e4 ─ [up → CGM(e3) → res] ─ [up → CGM(e2) → res] ─ ... ─ head
//! side    stem ─ down ×4 ─ up ×4 ─ head            (no skips)
//! ```
//!
//! Bridges run side → main after encoder stages 1..4 and/or after decoder
//! levels 1..4 (deepest first), as selected by [`Placement`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blocks::{BlockSpec, ResidualBlock};
use crate::cgm::{Cgm, CgmVariant};
use crate::error::{Error, Result};
use crate::fbm::{BridgeSite, Fbm, FbmVariant};
use crate::graph::Var;
use crate::nn::{Conv, Ctx, Mode};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Number of stride-2 encoder stages.
pub const DEPTH: usize = 4;
/// Input height and width must be multiples of this.
pub const SIZE_MULTIPLE: usize = 1 << DEPTH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Placement {
    /// Encoder and decoder levels.
    I,
    /// Encoder levels only.
    II,
    /// Decoder levels only.
    III,
    /// Deepest encoder stage and deepest decoder level.
    IV,
    None,
}

impl Placement {
    pub const ALL: [Placement; 5] = [
        Placement::None,
        Placement::I,
        Placement::II,
        Placement::III,
        Placement::IV,
    ];

    /// Whether encoder stage `stage` (1 = first stride-2 stage) is bridged.
    pub fn encoder_site(self, stage: usize) -> bool {
        match self {
            Placement::I | Placement::II => true,
            Placement::IV => stage == DEPTH,
            Placement::III | Placement::None => false,
        }
    }

    /// Whether decoder level `level` (1 = deepest) is bridged.
    pub fn decoder_site(self, level: usize) -> bool {
        match self {
            Placement::I | Placement::III => true,
            Placement::IV => level == 1,
            Placement::II | Placement::None => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::I => "I",
            Placement::II => "II",
            Placement::III => "III",
            Placement::IV => "IV",
            Placement::None => "none",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(Placement::I),
            "II" => Ok(Placement::II),
            "III" => Ok(Placement::III),
            "IV" => Ok(Placement::IV),
            "none" | "None" => Ok(Placement::None),
            other => Err(Error::Config(format!(
                "unknown placement `{other}` (expected I, II, III, IV or none)"
            ))),
        }
    }
}

impl TryFrom<String> for Placement {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Placement> for String {
    fn from(p: Placement) -> String {
        p.as_str().to_string()
    }
}

/// Complete architectural choice record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_width: usize,
    pub cgm_variant: CgmVariant,
    /// Which decoder fusion points (deepest first) use `cgm_variant`; the
    /// rest use the baseline fusion.
    pub cgm_levels: [bool; DEPTH],
    pub fbm_encoder_variant: FbmVariant,
    pub fbm_decoder_variant: FbmVariant,
    pub placement: Placement,
    pub side_branch: bool,
    pub normalization: bool,
    /// Multiply the deep bridge's attention map by `H·W`.
    pub q_map_rescale: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    /// The full dual-task configuration: CGM (a), encoder bridge (c),
    /// decoder bridge (d), bridged at every level.
    fn default() -> Self {
        Self {
            base_width: 32,
            cgm_variant: CgmVariant::AC,
            cgm_levels: [true; DEPTH],
            fbm_encoder_variant: FbmVariant::MaskBridge,
            fbm_decoder_variant: FbmVariant::DeepMaskBridge,
            placement: Placement::I,
            side_branch: true,
            normalization: true,
            q_map_rescale: false,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Single-task encoder + decoder with baseline cross-layer fusion.
    pub fn baseline() -> Self {
        Self {
            cgm_variant: CgmVariant::Base,
            side_branch: false,
            placement: Placement::None,
            ..Self::default()
        }
    }

    pub fn dtnet() -> Self {
        Self::default()
    }

    pub fn with_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be at least 1".into()));
        }
        if self.fbm_encoder_variant.is_decoder_only() {
            return Err(Error::Config(
                "the deep mask bridge (d) cannot be used at encoder positions".into(),
            ));
        }
        Ok(())
    }

    /// Channel width after encoder stage `stage` (0 = stem).
    pub fn width_at(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Whether any bridges are active.
    pub fn bridges(&self) -> bool {
        self.side_branch && self.placement != Placement::None
    }

    /// Canonical form: bridge settings are reset when there is nothing to
    /// bridge, so two configs building the same network compare equal.
    pub fn effective(&self) -> NetworkConfig {
        let mut c = self.clone();
        if !c.side_branch {
            let d = NetworkConfig::default();
            c.placement = Placement::None;
            c.fbm_encoder_variant = d.fbm_encoder_variant;
            c.fbm_decoder_variant = d.fbm_decoder_variant;
            c.q_map_rescale = d.q_map_rescale;
        }
        if c.cgm_variant == CgmVariant::Base {
            c.cgm_levels = [true; DEPTH];
        }
        c
    }

    pub fn equivalent(&self, other: &NetworkConfig) -> bool {
        self.effective() == other.effective()
    }

    pub fn cgm_variant_at(&self, level: usize) -> CgmVariant {
        if self.cgm_levels[level - 1] {
            self.cgm_variant
        } else {
            CgmVariant::Base
        }
    }
}

/// Adds an edge-detection side branch with the given bridges.
pub fn attach_side_branch(
    base: &NetworkConfig,
    encoder: FbmVariant,
    decoder: FbmVariant,
    placement: Placement,
) -> NetworkConfig {
    NetworkConfig {
        side_branch: true,
        fbm_encoder_variant: encoder,
        fbm_decoder_variant: decoder,
        placement,
        ..base.clone()
    }
}

/// Drops the side branch and every bridge.
pub fn detach_side_branch(config: &NetworkConfig) -> NetworkConfig {
    NetworkConfig {
        side_branch: false,
        placement: Placement::None,
        ..config.clone()
    }
}

/// Per-pixel sigmoid outputs, each `N × 1 × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub road: Tensor,
    pub edge: Option<Tensor>,
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    pub road: Var,
    pub edge: Option<Var>,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: ResidualBlock,
    cgm: Cgm,
    refine: ResidualBlock,
}

#[derive(Clone, Debug)]
struct SideBranch {
    stem: ResidualBlock,
    down: Vec<ResidualBlock>,
    up: Vec<ResidualBlock>,
    head: Conv,
}

#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    params: ParamStore,
    stem: ResidualBlock,
    down: Vec<ResidualBlock>,
    decoder: Vec<DecoderLevel>,
    head: Conv,
    side: Option<SideBranch>,
    encoder_bridges: Vec<Option<Fbm>>,
    decoder_bridges: Vec<Option<Fbm>>,
}

fn encoder_blocks(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &NetworkConfig,
    spec: impl Fn(usize, usize) -> BlockSpec,
) -> Result<(ResidualBlock, Vec<ResidualBlock>)> {
    let stem = ResidualBlock::plain(store, &format!("{prefix}.stem"), spec(3, cfg.width_at(0)))?;
    let down = (1..=DEPTH)
        .map(|i| {
            ResidualBlock::down(
                store,
                &format!("{prefix}.down{i}"),
                spec(cfg.width_at(i - 1), cfg.width_at(i)),
            )
        })
        .collect::<Result<_>>()?;
    Ok((stem, down))
}

impl Network {
    pub fn build(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut store = ParamStore::new(cfg.seed);
        let norm = cfg.normalization;
        let spec = move |i, o| {
            let s = BlockSpec::new(i, o);
            if norm {
                s
            } else {
                s.without_norm()
            }
        };

        let (stem, down) = encoder_blocks(&mut store, "enc", &cfg, spec)?;
        let mut decoder = Vec::with_capacity(DEPTH);
        for level in 1..=DEPTH {
            let res = DEPTH - level;
            let (cin, cout) = (cfg.width_at(res + 1), cfg.width_at(res));
            decoder.push(DecoderLevel {
                up: ResidualBlock::up(&mut store, &format!("dec{level}.up"), spec(cin, cout))?,
                cgm: Cgm::new(&mut store, &format!("cgm{level}"), cfg.cgm_variant_at(level), cout),
                refine: ResidualBlock::plain(&mut store, &format!("dec{level}.res"), spec(cout, cout))?,
            });
        }
        let head = Conv::new(&mut store, "head", cfg.width_at(0), 1, 1, 1);

        let mut side = None;
        let mut encoder_bridges = vec![None; DEPTH];
        let mut decoder_bridges = vec![None; DEPTH];
        if cfg.side_branch {
            let (s_stem, s_down) = encoder_blocks(&mut store, "side.enc", &cfg, spec)?;
            let up = (1..=DEPTH)
                .map(|level| {
                    let res = DEPTH - level;
                    ResidualBlock::up(
                        &mut store,
                        &format!("side.dec{level}.up"),
                        spec(cfg.width_at(res + 1), cfg.width_at(res)),
                    )
                })
                .collect::<Result<_>>()?;
            let s_head = Conv::new(&mut store, "side.head", cfg.width_at(0), 1, 1, 1);
            side = Some(SideBranch {
                stem: s_stem,
                down: s_down,
                up,
                head: s_head,
            });
            for stage in 1..=DEPTH {
                if cfg.placement.encoder_site(stage) {
                    let w = cfg.width_at(stage);
                    encoder_bridges[stage - 1] = Some(Fbm::new(
                        &mut store,
                        &format!("fbm.enc{stage}"),
                        cfg.fbm_encoder_variant,
                        BridgeSite::Encoder,
                        w,
                        w,
                        cfg.q_map_rescale,
                    )?);
                }
            }
            for level in 1..=DEPTH {
                if cfg.placement.decoder_site(level) {
                    let w = cfg.width_at(DEPTH - level);
                    decoder_bridges[level - 1] = Some(Fbm::new(
                        &mut store,
                        &format!("fbm.dec{level}"),
                        cfg.fbm_decoder_variant,
                        BridgeSite::Decoder,
                        w,
                        w,
                        cfg.q_map_rescale,
                    )?);
                }
            }
        }
        Ok(Self {
            config: cfg,
            params: store,
            stem,
            down,
            decoder,
            head,
            side,
            encoder_bridges,
            decoder_bridges,
        })
    }

    /// Rebuilds the architecture for `config` and installs `params`, which
    /// must agree with it name-for-name and shape-for-shape.
    pub fn with_params(config: &NetworkConfig, params: ParamStore) -> Result<Self> {
        let mut net = Self::build(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "config expects {} parameter arrays, checkpoint has {}",
                net.params.len(),
                params.len()
            )));
        }
        for (mine, theirs) in net.params.entries().iter().zip(params.entries()) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match config's `{}` {:?}",
                    theirs.name,
                    theirs.value.shape(),
                    mine.name,
                    mine.value.shape()
                )));
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn is_dual_task(&self) -> bool {
        self.side.is_some()
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != 3 {
            return Err(Error::Shape(format!("expected a 3-channel image, got {c} channels")));
        }
        if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(Error::Shape(format!(
                "image size {h}x{w} must be a positive multiple of {SIZE_MULTIPLE}"
            )));
        }
        Ok(())
    }

    /// Records the forward pass onto `ctx`.
    pub fn forward_ctx(&self, ctx: &mut Ctx<'_>, image: Var) -> Result<Outputs> {
        self.check_input(ctx.value(image).shape())?;
        let mut enc = Vec::with_capacity(DEPTH + 1);
        let mut e = self.stem.forward(ctx, image)?;
        ctx.tap("enc0", e);
        enc.push(e);
        let mut s = match &self.side {
            Some(side) => Some(side.stem.forward(ctx, image)?),
            None => None,
        };
        for stage in 1..=DEPTH {
            e = self.down[stage - 1].forward(ctx, e)?;
            if let (Some(side), Some(sv)) = (&self.side, s) {
                let sv = side.down[stage - 1].forward(ctx, sv)?;
                ctx.tap(format!("side.enc{stage}"), sv);
                s = Some(sv);
                if let Some(bridge) = &self.encoder_bridges[stage - 1] {
                    e = bridge.forward(ctx, e, sv, None)?;
                }
            }
            ctx.tap(format!("enc{stage}"), e);
            enc.push(e);
        }

        let mut d = e;
        for (idx, level) in self.decoder.iter().enumerate() {
            let lv = idx + 1;
            let skip = enc[DEPTH - lv];
            d = level.up.forward(ctx, d)?;
            d = level.cgm.forward(ctx, skip, d)?;
            d = level.refine.forward(ctx, d)?;
            if let (Some(side), Some(sv)) = (&self.side, s) {
                let sv = side.up[idx].forward(ctx, sv)?;
                ctx.tap(format!("side.dec{lv}"), sv);
                s = Some(sv);
                if let Some(bridge) = &self.decoder_bridges[idx] {
                    d = bridge.forward(ctx, d, sv, Some(skip))?;
                }
            }
            ctx.tap(format!("dec{lv}"), d);
        }
        let logits = self.head.forward(ctx, d)?;
        let road = ctx.graph.sigmoid(logits);
        let edge = match (&self.side, s) {
            (Some(side), Some(sv)) => {
                let l = side.head.forward(ctx, sv)?;
                Some(ctx.graph.sigmoid(l))
            }
            _ => None,
        };
        Ok(Outputs { road, edge })
    }

    /// Deterministic inference on an `N × 3 × H × W` batch.
    pub fn forward(&self, image: &Tensor) -> Result<Prediction> {
        let mut ctx = Ctx::new(&self.params, Mode::Eval);
        let x = ctx.input(image.clone());
        let out = self.forward_ctx(&mut ctx, x)?;
        Ok(Prediction {
            road: ctx.value(out.road).clone(),
            edge: out.edge.map(|e| ctx.value(e).clone()),
        })
    }

    /// Runs inference with intermediate features recorded; returns the
    /// requested layers in order.
    pub fn features(&self, image: &Tensor, layers: &[&str]) -> Result<Vec<Tensor>> {
        let mut ctx = Ctx::new(&self.params, Mode::Eval).with_taps();
        let x = ctx.input(image.clone());
        self.forward_ctx(&mut ctx, x)?;
        layers.iter().map(|l| ctx.tapped(l).cloned()).collect()
    }

    /// Names of every recordable intermediate feature.
    pub fn layer_names(&self) -> Vec<String> {
        let mut ctx = Ctx::new(&self.params, Mode::Eval).with_taps();
        let x = ctx.input(Tensor::zeros([1, 3, SIZE_MULTIPLE, SIZE_MULTIPLE]));
        match self.forward_ctx(&mut ctx, x) {
            Ok(_) => ctx.tap_names(),
            Err(_) => Vec::new(),
        }
    }
}
