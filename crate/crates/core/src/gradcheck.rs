//! Central finite-difference checks of the analytic gradients.
//!
//! The numeric side only ever calls forward evaluation, so it shares no code
//! with the backward sweep it validates. Every check projects the output
//! onto a fixed random tensor to obtain a scalar, then compares the analytic
//! and numeric gradients of that scalar element by element.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockKind, BlockSpec, ResidualBlock};
use crate::cgm::{Cgm, CgmVariant};
use crate::error::{Error, Result};
use crate::fbm::{BridgeSite, Fbm, FbmVariant};
use crate::graph::Var;
use crate::losses;
use crate::network::{Network, NetworkConfig};
use crate::nn::{Ctx, Mode, Norm};
use crate::objective::{batch_loss_grad, batch_loss_with, Batch};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Settings {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor in the relative error, so vanishing gradients are
    /// compared absolutely.
    pub floor: f64,
    /// Rectifier inputs and spatial-max gaps must stay this far from their
    /// kinks; otherwise the point is resampled.
    pub min_margin: f64,
    /// Elements checked per tensor (randomly subsampled beyond this).
    pub max_per_tensor: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            min_margin: 1e-3,
            max_per_tensor: 48,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance && self.checked > 0
    }
}

#[derive(Default)]
struct ErrAcc {
    rel: f64,
    abs: f64,
    n: usize,
}

impl ErrAcc {
    fn push(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let abs = (analytic - numeric).abs();
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        self.rel = self.rel.max(abs / denom);
        self.abs = self.abs.max(abs);
        self.n += 1;
    }

    fn report(self, name: &str, tolerance: f64) -> Report {
        Report {
            name: name.to_string(),
            max_rel_err: self.rel,
            max_abs_err: self.abs,
            checked: self.n,
            tolerance,
        }
    }
}

fn indices(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

pub fn random_tensor(shape: [usize; 4], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// A differentiable function of some input tensors and the parameters in a
/// store.
pub trait Probe {
    fn eval(&self, ctx: &mut Ctx<'_>, inputs: &[Var]) -> Result<Var>;
}

impl<F> Probe for F
where
    F: Fn(&mut Ctx<'_>, &[Var]) -> Result<Var>,
{
    fn eval(&self, ctx: &mut Ctx<'_>, inputs: &[Var]) -> Result<Var> {
        self(ctx, inputs)
    }
}

struct Projected {
    value: f64,
    margin: f64,
}

fn project(
    probe: &dyn Probe,
    store: &ParamStore,
    inputs: &[Tensor],
    weights: Option<&Tensor>,
    mode: Mode,
) -> Result<(Projected, Tensor)> {
    let mut ctx = Ctx::new(store, mode);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.input(t.clone())).collect();
    let out = probe.eval(&mut ctx, &vars)?;
    let y = ctx.value(out).clone();
    let value = weights.map(|w| y.dot(w)).unwrap_or(0.0);
    Ok((
        Projected {
            value,
            margin: ctx.graph.kink_margin(),
        },
        y,
    ))
}

/// Checks input and trainable-parameter gradients of `probe` at one point.
/// Returns `None` when the point lies too close to a kink.
pub fn check_at(
    name: &str,
    probe: &dyn Probe,
    store: &ParamStore,
    inputs: &[Tensor],
    settings: &Settings,
    seed: u64,
) -> Result<Option<Report>> {
    check_at_mode(name, probe, store, inputs, settings, seed, Mode::Eval)
}

fn check_at_mode(
    name: &str,
    probe: &dyn Probe,
    store: &ParamStore,
    inputs: &[Tensor],
    settings: &Settings,
    seed: u64,
    mode: Mode,
) -> Result<Option<Report>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let (base, y) = project(probe, store, inputs, None, mode)?;
    if base.margin < settings.min_margin {
        return Ok(None);
    }
    let weights = random_tensor(y.shape(), -1.0, 1.0, &mut rng);

    // analytic
    let mut ctx = Ctx::new(store, mode);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.input(t.clone())).collect();
    let out = probe.eval(&mut ctx, &vars)?;
    let root = ctx.graph.weighted_sum(out, &weights)?;
    let grads = ctx.graph.backward(root);
    let zeros = |v: Var| Tensor::zeros(ctx.value(v).shape());
    let input_grads: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().unwrap_or_else(|| zeros(v)))
        .collect();
    let param_grads: Vec<(String, Tensor)> = ctx
        .param_vars()
        .iter()
        .filter(|(n, _)| {
            store
                .entries()
                .iter()
                .any(|e| &e.name == n && e.kind == ParamKind::Trainable)
        })
        .map(|(n, v)| (n.clone(), grads.get(*v).cloned().unwrap_or_else(|| zeros(*v))))
        .collect();

    let h = settings.step;
    let mut acc = ErrAcc::default();
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        Ok(project(probe, store, inputs, Some(&weights), mode)?.0.value)
    };
    for (k, analytic) in input_grads.iter().enumerate() {
        for i in indices(analytic.len(), settings.max_per_tensor, &mut rng) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(store, &plus)? - eval(store, &minus)?) / (2.0 * h);
            acc.push(analytic.data()[i], numeric, settings.floor);
        }
    }
    for (pname, analytic) in &param_grads {
        for i in indices(analytic.len(), settings.max_per_tensor, &mut rng) {
            let mut plus = store.clone();
            plus.get_mut(pname)?.data_mut()[i] += h;
            let mut minus = store.clone();
            minus.get_mut(pname)?.data_mut()[i] -= h;
            let numeric = (eval(&plus, inputs)? - eval(&minus, inputs)?) / (2.0 * h);
            acc.push(analytic.data()[i], numeric, settings.floor);
        }
    }
    Ok(Some(acc.report(name, settings.tolerance)))
}

const MAX_ATTEMPTS: u64 = 64;

/// Draws fresh random points from `setup` until one clears the kink margin.
pub fn check_random(
    name: &str,
    settings: &Settings,
    seed: u64,
    setup: impl Fn(&mut ChaCha8Rng) -> (ParamStore, Vec<Tensor>),
    probe: &dyn Probe,
) -> Result<Report> {
    check_random_mode(name, settings, seed, setup, probe, Mode::Eval)
}

fn check_random_mode(
    name: &str,
    settings: &Settings,
    seed: u64,
    setup: impl Fn(&mut ChaCha8Rng) -> (ParamStore, Vec<Tensor>),
    probe: &dyn Probe,
    mode: Mode,
) -> Result<Report> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt * 7919));
        let (store, inputs) = setup(&mut rng);
        if let Some(r) = check_at_mode(name, probe, &store, &inputs, settings, seed + attempt, mode)? {
            return Ok(r);
        }
    }
    Err(Error::Degenerate(format!(
        "{name}: no sample point cleared the kink margin in {MAX_ATTEMPTS} attempts"
    )))
}

/// Checks a scalar map `f: R^n → R` against its claimed gradient.
pub fn check_scalar(
    name: &str,
    x: &[f64],
    f: impl Fn(&[f64]) -> f64,
    grad: &[f64],
    settings: &Settings,
) -> Report {
    let mut acc = ErrAcc::default();
    let h = settings.step;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        acc.push(grad[i], (f(&plus) - f(&minus)) / (2.0 * h), settings.floor);
    }
    acc.report(name, settings.tolerance)
}

fn block_check(name: &str, kind: BlockKind, cin: usize, cout: usize, hw: usize, s: &Settings, seed: u64) -> Result<Report> {
    let setup = move |rng: &mut ChaCha8Rng| {
        let mut store = ParamStore::new(rng.random());
        ResidualBlock::new(&mut store, "blk", kind, BlockSpec::new(cin, cout).without_norm()).unwrap();
        (store, vec![random_tensor([1, cin, hw, hw], -1.0, 1.0, rng)])
    };
    let probe = move |ctx: &mut Ctx<'_>, x: &[Var]| {
        let mut store = ParamStore::new(0);
        let block = ResidualBlock::new(&mut store, "blk", kind, BlockSpec::new(cin, cout).without_norm())?;
        block.forward(ctx, x[0])
    };
    check_random(name, s, seed, setup, &probe)
}

fn cgm_check(variant: CgmVariant, s: &Settings, seed: u64) -> Result<Report> {
    let c = 2;
    let setup = move |rng: &mut ChaCha8Rng| {
        let mut store = ParamStore::new(rng.random());
        Cgm::new(&mut store, "cgm", variant, c);
        let e = random_tensor([1, c, 4, 4], -1.0, 1.0, rng);
        let d = random_tensor([1, c, 4, 4], 0.0, 1.0, rng);
        (store, vec![e, d])
    };
    let probe = move |ctx: &mut Ctx<'_>, x: &[Var]| {
        let cgm = Cgm::new(&mut ParamStore::new(0), "cgm", variant, c);
        cgm.forward(ctx, x[0], x[1])
    };
    check_random(&format!("cgm({variant})"), s, seed, setup, &probe)
}

fn fbm_check(variant: FbmVariant, s: &Settings, seed: u64) -> Result<Report> {
    let c = 2;
    let site = if variant.is_decoder_only() {
        BridgeSite::Decoder
    } else {
        BridgeSite::Encoder
    };
    let setup = move |rng: &mut ChaCha8Rng| {
        let mut store = ParamStore::new(rng.random());
        Fbm::new(&mut store, "fbm", variant, site, c, c, false).unwrap();
        let mut inputs = vec![
            random_tensor([1, c, 4, 4], -1.0, 1.0, rng),
            random_tensor([1, c, 4, 4], 0.0, 1.0, rng),
        ];
        if variant.is_decoder_only() {
            inputs.push(random_tensor([1, c, 4, 4], -1.0, 1.0, rng));
        }
        (store, inputs)
    };
    let probe = move |ctx: &mut Ctx<'_>, x: &[Var]| {
        let fbm = Fbm::new(&mut ParamStore::new(0), "fbm", variant, site, c, c, false)?;
        fbm.forward(ctx, x[0], x[1], x.get(2).copied())
    };
    check_random(&format!("fbm({variant})"), s, seed, setup, &probe)
}

fn loss_checks(s: &Settings, seed: u64) -> Vec<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 24;
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
    let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
    let c = 1e-6;
    vec![
        check_scalar(
            "loss(bce)",
            &p,
            |p| losses::bce_loss(p, &t).unwrap(),
            &losses::bce_grad(&p, &t).unwrap(),
            s,
        ),
        check_scalar(
            "loss(iou)",
            &p,
            |p| losses::iou_loss(p, &t, c).unwrap(),
            &losses::iou_grad(&p, &t, c).unwrap(),
            s,
        ),
        check_scalar(
            "loss(iou, -ln J)",
            &p,
            |p| losses::iou_log_loss(p, &t, c).unwrap(),
            &losses::iou_log_grad(&p, &t, c).unwrap(),
            s,
        ),
        check_scalar(
            "loss(focal)",
            &p,
            |p| losses::focal_loss(p, &t, 0.75, 2.0).unwrap(),
            &losses::focal_grad(&p, &t, 0.75, 2.0).unwrap(),
            s,
        ),
    ]
}

fn norm_check(s: &Settings, seed: u64) -> Result<Report> {
    let setup = |rng: &mut ChaCha8Rng| {
        let mut store = ParamStore::new(rng.random());
        Norm::new(&mut store, "bn", 3);
        for e in store.entries_mut() {
            if e.kind == ParamKind::Trainable {
                for v in e.value.data_mut() {
                    *v += rng.random_range(-0.5..0.5);
                }
            }
        }
        (store, vec![random_tensor([2, 3, 3, 2], -1.0, 1.0, rng)])
    };
    let probe = |ctx: &mut Ctx<'_>, x: &[Var]| {
        let norm = Norm::new(&mut ParamStore::new(0), "bn", 3);
        norm.forward(ctx, x[0])
    };
    check_random_mode("norm(batch statistics)", s, seed, setup, &probe, Mode::Train)
}

/// Gradient of the full hybrid objective with respect to a probe subset of
/// parameters, on an un-normalized network.
pub fn network_check(config: &NetworkConfig, size: usize, probes: usize, tolerance: f64, seed: u64) -> Result<Report> {
    let mut cfg = config.clone();
    cfg.normalization = false;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::build(&cfg)?;
    let images = random_tensor([1, 3, size, size], 0.0, 1.0, &mut rng);
    let mask = |rng: &mut ChaCha8Rng| {
        let data = (0..size * size).map(|_| f64::from(rng.random_bool(0.3) as u8)).collect();
        Tensor::from_vec([1, 1, size, size], data).unwrap()
    };
    let batch = Batch {
        images,
        area: mask(&mut rng),
        edge: mask(&mut rng),
    };
    let loss = losses::LossParams::default();
    let lg = batch_loss_grad(&net, &batch, &loss, Mode::Eval)?;
    let trainable: Vec<&(String, Tensor)> = lg.grads.iter().collect();
    let mut acc = ErrAcc::default();
    let h = 1e-5;
    for _ in 0..probes {
        let (name, g) = trainable[rng.random_range(0..trainable.len())];
        let i = rng.random_range(0..g.len());
        let mut plus = net.params().clone();
        plus.get_mut(name)?.data_mut()[i] += h;
        let mut minus = net.params().clone();
        minus.get_mut(name)?.data_mut()[i] -= h;
        let numeric = (batch_loss_with(&net, &plus, &batch, &loss, Mode::Eval)?
            - batch_loss_with(&net, &minus, &batch, &loss, Mode::Eval)?)
            / (2.0 * h);
        acc.push(g.data()[i], numeric, 1e-6);
    }
    Ok(acc.report(&format!("network({} params probed)", probes), tolerance))
}

/// Every component check: blocks, fusion variants, bridges, losses, and the
/// batch normalization op.
pub fn component_suite(settings: &Settings, seed: u64) -> Result<Vec<Report>> {
    let mut out = vec![
        block_check("residual_block(3->3)", BlockKind::Plain, 3, 3, 4, settings, seed)?,
        block_check("residual_block(3->4)", BlockKind::Plain, 3, 4, 4, settings, seed + 1)?,
        block_check("down_block(2->4)", BlockKind::Down, 2, 4, 6, settings, seed + 2)?,
        block_check("up_block(2->3)", BlockKind::Up, 2, 3, 3, settings, seed + 3)?,
    ];
    for (i, v) in CgmVariant::ALL.into_iter().enumerate() {
        out.push(cgm_check(v, settings, seed + 10 + i as u64)?);
    }
    for (i, v) in FbmVariant::DECODER.into_iter().enumerate() {
        out.push(fbm_check(v, settings, seed + 20 + i as u64)?);
    }
    out.extend(loss_checks(settings, seed + 30));
    out.push(norm_check(settings, seed + 40)?);
    Ok(out)
}

/// Component suite plus the end-to-end network probe.
pub fn full_suite(settings: &Settings, seed: u64) -> Result<Vec<Report>> {
    let mut out = component_suite(settings, seed)?;
    out.push(network_check(
        &NetworkConfig::dtnet().with_width(2).with_seed(seed),
        16,
        16,
        1e-3,
        seed,
    )?);
    Ok(out)
}
