//! Hybrid loss wired onto the network graph.

use crate::error::{Error, Result};
use crate::graph::BatchStats;
use crate::losses::{hybrid_loss_grad, ImageTerms, LossParams};
use crate::network::Network;
use crate::nn::{Ctx, Mode};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Stacked images with their area and edge labels.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `N × 3 × H × W`, values in `[0, 1]`.
    pub images: Tensor,
    /// `N × 1 × H × W`, binary.
    pub area: Tensor,
    /// `N × 1 × H × W`, binary.
    pub edge: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        let [n, _, h, w] = self.images.shape();
        if n == 0 {
            return Err(Error::Empty("empty batch".into()));
        }
        if self.area.shape() != [n, 1, h, w] || self.edge.shape() != [n, 1, h, w] {
            return Err(Error::Shape(format!(
                "labels {:?}/{:?} do not match images {:?}",
                self.area.shape(),
                self.edge.shape(),
                self.images.shape()
            )));
        }
        Ok(())
    }
}

/// Result of one differentiated pass.
pub struct LossGrad {
    pub loss: f64,
    /// Gradient per trainable parameter, keyed by name.
    pub grads: Vec<(String, Tensor)>,
    /// Normalization statistics (train mode only).
    pub stats: Vec<(String, BatchStats)>,
}

fn terms<'a>(road: &'a Tensor, edge: Option<&'a Tensor>, batch: &'a Batch) -> Vec<ImageTerms<'a>> {
    (0..batch.len())
        .map(|n| ImageTerms {
            road: road.item(n),
            area: batch.area.item(n),
            edge: edge.map(|e| (e.item(n), batch.edge.item(n))),
        })
        .collect()
}

/// Forward-only evaluation of the hybrid loss with an explicit parameter set.
pub fn batch_loss_with(
    net: &Network,
    params: &ParamStore,
    batch: &Batch,
    loss: &LossParams,
    mode: Mode,
) -> Result<f64> {
    batch.check()?;
    let mut ctx = Ctx::new(params, mode);
    let x = ctx.input(batch.images.clone());
    let out = net.forward_ctx(&mut ctx, x)?;
    let road = ctx.value(out.road);
    let edge = out.edge.map(|e| ctx.value(e));
    crate::losses::hybrid_loss(&terms(road, edge, batch), loss)
}

pub fn batch_loss(net: &Network, batch: &Batch, loss: &LossParams, mode: Mode) -> Result<f64> {
    batch_loss_with(net, net.params(), batch, loss, mode)
}

/// Loss and gradients with respect to every trainable parameter.
pub fn batch_loss_grad(
    net: &Network,
    batch: &Batch,
    loss: &LossParams,
    mode: Mode,
) -> Result<LossGrad> {
    batch.check()?;
    let mut ctx = Ctx::new(net.params(), mode);
    let x = ctx.input(batch.images.clone());
    let out = net.forward_ctx(&mut ctx, x)?;
    let hg = {
        let road = ctx.value(out.road);
        let edge = out.edge.map(|e| ctx.value(e));
        hybrid_loss_grad(&terms(road, edge, batch), loss)?
    };
    let shape = ctx.value(out.road).shape();
    let road_grad = Tensor::from_vec(shape, hg.road.concat())?;
    let mut inputs = vec![(out.road, road_grad)];
    if let Some(e) = out.edge {
        let flat: Vec<f64> = hg.edge.into_iter().flatten().flatten().collect();
        inputs.push((e, Tensor::from_vec(shape, flat)?));
    }
    let root = ctx.graph.scalar(hg.value, inputs)?;
    let mut grads = ctx.graph.backward(root);
    let mut named = Vec::with_capacity(ctx.param_vars().len());
    for (name, var) in ctx.param_vars() {
        let g = grads
            .take(*var)
            .unwrap_or_else(|| Tensor::zeros(ctx.value(*var).shape()));
        named.push((name.clone(), g));
    }
    Ok(LossGrad {
        loss: hg.value,
        grads: named,
        stats: ctx.take_batch_stats(),
    })
}
