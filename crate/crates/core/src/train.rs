//! Run configuration, the training loop and evaluation.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{synth_sample, to_batch, DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::losses::LossParams;
use crate::metrics::{confusion_counts, report_from_counts, AveragingMode, MetricReport, DEFAULT_THRESHOLD};
use crate::network::{Network, NetworkConfig, SIZE_MULTIPLE};
use crate::nn::{update_running_stats, Mode};
use crate::objective::batch_loss_grad;
use crate::optim::{Optimizer, OptimizerConfig};

/// Where training and test samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated on the fly; test samples continue the train index range.
    Synthetic {
        #[serde(default = "default_synth_train")]
        train: usize,
        #[serde(default = "default_synth_test")]
        test: usize,
        #[serde(default = "default_synth_size")]
        size: usize,
        #[serde(default)]
        seed: u64,
    },
    /// A prepared dataset on disk.
    Manifest { path: PathBuf },
}

fn default_synth_train() -> usize {
    200
}

fn default_synth_test() -> usize {
    50
}

fn default_synth_size() -> usize {
    64
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            train: default_synth_train(),
            test: default_synth_test(),
            size: default_synth_size(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn load(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        match self {
            DatasetConfig::Synthetic {
                train,
                test,
                size,
                seed,
            } => {
                if *size < SIZE_MULTIPLE || size % SIZE_MULTIPLE != 0 {
                    return Err(Error::Config(format!(
                        "synthetic size {size} must be a positive multiple of {SIZE_MULTIPLE}"
                    )));
                }
                let gen = |range: std::ops::Range<usize>| {
                    range.map(|i| synth_sample(*size, *seed, i as u64)).collect::<Vec<_>>()
                };
                Ok((gen(0..*train), gen(*train..train + test)))
            }
            DatasetConfig::Manifest { path } => {
                let m = DatasetManifest::load(path)?;
                Ok((m.load_samples(Split::Train)?, m.load_samples(Split::Test)?))
            }
        }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub loss: LossParams,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    /// Stop as soon as a step's loss drops below this value.
    pub target_loss: Option<f64>,
    pub dataset: DatasetConfig,
    pub threshold: f64,
    pub metric_mode: AveragingMode,
    /// Evaluate on the test split every this many epochs; 0 means only at the end.
    pub eval_every: usize,
    /// Momentum of the normalization running averages.
    pub norm_momentum: f64,
    pub out_dir: PathBuf,
    /// Drives parameter initialization and batch order.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            loss: LossParams::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 8,
            epochs: 50,
            max_steps: None,
            target_loss: None,
            dataset: DatasetConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            metric_mode: AveragingMode::Macro,
            eval_every: 1,
            norm_momentum: 0.1,
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.norm_momentum) {
            return Err(Error::Config("norm momentum must lie in [0, 1]".into()));
        }
        self.network.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()
    }

    /// Network configuration with the run seed applied.
    pub fn network_config(&self) -> NetworkConfig {
        self.network.clone().with_seed(self.seed)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: usize,
    pub lr: f64,
    /// Mean step loss over the epoch.
    pub train_loss: f64,
    pub test: Option<MetricReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
}

impl History {
    pub fn final_report(&self) -> Option<MetricReport> {
        self.epochs.iter().rev().find_map(|e| e.test)
    }

    /// Lowest step loss and the one-based step at which it occurred.
    pub fn best_step_loss(&self) -> Option<(usize, f64)> {
        self.step_losses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, &l)| (i + 1, l))
    }

    /// Per-epoch series: `epoch,steps,lr,train_loss,iou,f1,recall,precision`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,steps,lr,train_loss,iou,f1,recall,precision\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{:e},{:.6}", e.epoch, e.steps, e.lr, e.train_loss));
            match e.test {
                Some(r) => {
                    for (_, v) in r.columns() {
                        out.push_str(&format!(",{v:.4}"));
                    }
                }
                None => out.push_str(",,,,"),
            }
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutcome {
    pub network: Network,
    pub history: History,
}

/// Road probability maps for `samples`, evaluated in batches.
pub fn predict(net: &Network, samples: &[Sample], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = to_batch(chunk)?;
        let pred = net.forward(&batch.images)?;
        out.extend((0..chunk.len()).map(|n| pred.road.item(n).to_vec()));
    }
    Ok(out)
}

/// Thresholded road-area metrics of `net` on `samples`.
pub fn evaluate(
    net: &Network,
    samples: &[Sample],
    threshold: f64,
    mode: AveragingMode,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let mut counts = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(8) {
        let batch = to_batch(chunk)?;
        let pred = net.forward(&batch.images)?;
        for n in 0..chunk.len() {
            counts.push(confusion_counts(pred.road.item(n), batch.area.item(n), threshold)?);
        }
    }
    report_from_counts(&counts, mode)
}

/// Trains a fresh network on in-memory data. `observer` sees each epoch
/// record as it is produced.
pub fn train_on(
    cfg: &RunConfig,
    train: &[Sample],
    test: &[Sample],
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split is empty".into()));
    }
    let mut net = Network::build(&cfg.network_config())?;
    let mut opt = Optimizer::new(cfg.optimizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let mut done = false;
    for epoch in 0..cfg.epochs {
        let lr = cfg.optimizer.lr_at(epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for idx in order.chunks(cfg.batch_size) {
            let batch = to_batch(idx.iter().map(|&i| &train[i]))?;
            let lg = batch_loss_grad(&net, &batch, &cfg.loss, Mode::Train)?;
            let step = history.step_losses.len() + 1;
            if !lg.loss.is_finite() || lg.grads.iter().any(|(_, g)| !g.all_finite()) {
                return Err(Error::Diverged { step, loss: lg.loss });
            }
            opt.step(net.params_mut(), &lg.grads, lr)?;
            update_running_stats(net.params_mut(), &lg.stats, cfg.norm_momentum)?;
            history.step_losses.push(lg.loss);
            losses.push(lg.loss);
            if step >= max_steps || cfg.target_loss.is_some_and(|t| lg.loss < t) {
                done = true;
                break;
            }
        }
        let last = done || epoch + 1 == cfg.epochs;
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let test_report = if !test.is_empty() && (due || last) {
            Some(evaluate(&net, test, cfg.threshold, cfg.metric_mode)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            steps: history.step_losses.len(),
            lr,
            train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            test: test_report,
        };
        observer(&record);
        history.epochs.push(record);
        if done {
            break;
        }
    }
    Ok(TrainOutcome { network: net, history })
}

/// Loads the configured dataset and trains on it.
pub fn train(cfg: &RunConfig, observer: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (tr, te) = cfg.dataset.load()?;
    train_on(cfg, &tr, &te, observer)
}
