//! Forward-pass context and the two parameterised primitives every block is
//! built from: convolution and per-channel normalization.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{BatchStats, Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalization uses batch statistics and reports them for running
    /// averages.
    Train,
    /// Normalization uses stored running statistics; deterministic.
    Eval,
}

/// State threaded through one forward pass.
pub struct Ctx<'a> {
    pub graph: Graph,
    params: &'a ParamStore,
    mode: Mode,
    vars: HashMap<String, Var>,
    order: Vec<(String, Var)>,
    stats: Vec<(String, BatchStats)>,
    taps: Option<HashMap<String, Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &'a ParamStore, mode: Mode) -> Self {
        Self {
            graph: Graph::new(),
            params,
            mode,
            vars: HashMap::new(),
            order: Vec::new(),
            stats: Vec::new(),
            taps: None,
        }
    }

    /// Enables recording of named intermediate features.
    pub fn with_taps(mut self) -> Self {
        self.taps = Some(HashMap::new());
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    /// Leaf for a named parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let v = self.graph.leaf(self.params.get(name)?.clone());
        self.vars.insert(name.to_string(), v);
        self.order.push((name.to_string(), v));
        Ok(v)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// Parameters touched by this pass, in first-use order.
    pub fn param_vars(&self) -> &[(String, Var)] {
        &self.order
    }

    pub fn batch_stats(&self) -> &[(String, BatchStats)] {
        &self.stats
    }

    pub fn take_batch_stats(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.stats)
    }

    pub fn tap(&mut self, name: impl Into<String>, v: Var) {
        if let Some(taps) = &mut self.taps {
            taps.insert(name.into(), v);
        }
    }

    pub fn tapped(&self, name: &str) -> Result<&Tensor> {
        self.taps
            .as_ref()
            .and_then(|t| t.get(name))
            .map(|&v| self.graph.value(v))
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn tap_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .taps
            .as_ref()
            .map(|t| t.keys().cloned().collect())
            .unwrap_or_default();
        names.sort();
        names
    }
}

/// 2-D convolution with bias and "same"-style zero padding.
#[derive(Clone, Debug)]
pub struct Conv {
    weight: String,
    bias: String,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let weight = store.conv_weight(format!("{prefix}.w"), out_channels, in_channels, kernel);
        let bias = store.constant(format!("{prefix}.b"), out_channels, 0.0);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn bias_name(&self) -> &str {
        &self.bias
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight)?;
        let b = ctx.param(&self.bias)?;
        ctx.graph
            .conv2d(x, w, Some(b), self.stride, self.kernel / 2)
    }
}

/// Per-channel batch-style normalization with a learned affine.
#[derive(Clone, Debug)]
pub struct Norm {
    prefix: String,
    gamma: String,
    beta: String,
    mean: String,
    var: String,
}

impl Norm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            gamma: store.constant(format!("{prefix}.gamma"), channels, 1.0),
            beta: store.constant(format!("{prefix}.beta"), channels, 0.0),
            mean: store.running(format!("{prefix}.running_mean"), channels, 0.0),
            var: store.running(format!("{prefix}.running_var"), channels, 1.0),
        }
    }

    pub fn running_names(&self) -> (&str, &str) {
        (&self.mean, &self.var)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let gamma = ctx.param(&self.gamma)?;
        let beta = ctx.param(&self.beta)?;
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.graph.batch_norm(x, gamma, beta)?;
                ctx.stats.push((self.prefix.clone(), stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.params.get(&self.mean)?.data().to_vec();
                let var = ctx.params.get(&self.var)?.data().to_vec();
                ctx.graph.affine_norm(x, gamma, beta, &mean, &var)
            }
        }
    }
}

/// Applies `norm` when present, else passes `x` through.
pub(crate) fn maybe_norm(norm: &Option<Norm>, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
    match norm {
        Some(n) => n.forward(ctx, x),
        None => Ok(x),
    }
}

/// Folds one batch's statistics into the running averages with the given
/// momentum.
pub fn update_running_stats(
    store: &mut ParamStore,
    stats: &[(String, BatchStats)],
    momentum: f64,
) -> Result<()> {
    for (prefix, s) in stats {
        let unbias = if s.count > 1 {
            s.count as f64 / (s.count - 1) as f64
        } else {
            1.0
        };
        let mean = store.get_mut(&format!("{prefix}.running_mean"))?;
        for (m, &b) in mean.data_mut().iter_mut().zip(&s.mean) {
            *m = (1.0 - momentum) * *m + momentum * b;
        }
        let var = store.get_mut(&format!("{prefix}.running_var"))?;
        for (v, &b) in var.data_mut().iter_mut().zip(&s.var) {
            *v = (1.0 - momentum) * *v + momentum * b * unbias;
        }
    }
    Ok(())
}
