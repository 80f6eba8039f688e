//! Minibatch InfoNCE training with validation-driven schedule and early stopping.

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::engine::optim::{AdamConfig, AdamState, EarlyStopping, LrSchedule, RiemannianAdam, StepOutcome, StopDecision};
use crate::engine::backend::Backend;
use crate::engine::params::ParamStore;
use crate::engine::tape::Tape;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, ranking_from_scores, MetricReport, DEFAULT_KS};
use crate::network::{Context, Network, Scorer};
use crate::taxonomy::{build_training_groups, Taxonomy};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub n_neg: usize,
    pub burn_in: usize,
    pub lr_burnin: f64,
    pub lr_main: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            n_neg: 31,
            burn_in: 20,
            lr_burnin: 1e-5,
            lr_main: 1e-3,
            plateau_patience: 10,
            early_stop_patience: 30,
            clip_norm: Some(5.0),
        }
    }
}

/// A held-out concept with its raw feature and true parents.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub id: String,
    pub feature: Vec<f64>,
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub val_mrr_x10: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_val_mrr_x10: f64,
    pub best_epoch: usize,
    pub best_params: ParamStore,
    pub optimizer: AdamState,
    pub skipped_steps: u64,
}

/// Ranks `queries` against every node of `t` and summarizes.
pub fn evaluate_queries(net: &Network, t: &Taxonomy, features: &[Vec<f64>], queries: &[LabeledQuery]) -> Result<MetricReport> {
    let scorer = Scorer::new(net, t, features)?;
    let results = queries
        .iter()
        .map(|q| {
            let s = scorer.score(&q.feature)?;
            ranking_from_scores(t, &q.id, &s, &q.parents)
        })
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(&results, &DEFAULT_KS)
}

/// Trains `net` on the seed taxonomy `t` and leaves the best-validation
/// parameters in `net.store`.
///
/// Without validation queries the negative training loss drives the schedule.
pub fn train<R: Rng>(
    net: &mut Network,
    t: &Taxonomy,
    features: &[Vec<f64>],
    val: &[LabeledQuery],
    opts: &TrainOptions,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if features.len() != t.len() {
        return Err(Error::contract("one feature per taxonomy node required"));
    }
    if t.n_edges() == 0 {
        return Err(Error::Validation("seed taxonomy has no edges to train on".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Validation("batch_size must be positive".into()));
    }
    let adam = AdamConfig {
        clip_norm: opts.clip_norm,
        ..AdamConfig::default()
    };
    let mut optim = RiemannianAdam::new(&net.store, adam);
    let mut schedule = LrSchedule::new(opts.burn_in, opts.lr_burnin, opts.lr_main, opts.plateau_patience);
    let mut stopper = EarlyStopping::new(opts.early_stop_patience);
    let mut records = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, net.store.clone(), optim.state.clone());

    for epoch in 0..opts.epochs {
        let lr = schedule.lr(epoch);
        let mut groups = build_training_groups(t, opts.n_neg, rng)?;
        groups.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for batch in groups.chunks(opts.batch_size) {
            let mut tape = Tape::new(&net.store);
            let mut ctx = Context::new(&mut tape, net, features);
            let loss = ctx.loss(&mut tape, t, batch);
            let value = tape.value(&loss)[0];
            let grads = match tape.backward(loss) {
                Ok(g) => g,
                Err(e) => {
                    warn!("epoch {}: batch skipped: {e}", epoch + 1);
                    optim.state.skipped += 1;
                    continue;
                }
            };
            if optim.step(&mut net.store, &grads, lr) == StepOutcome::Applied {
                loss_sum += value * batch.len() as f64;
                loss_n += batch.len();
            }
        }
        if loss_n == 0 {
            return Err(Error::numeric(format!("epoch {}: every optimizer step was skipped", epoch + 1)));
        }
        let loss = loss_sum / loss_n as f64;
        let (val_mrr, metric) = if val.is_empty() {
            (f64::NAN, -loss)
        } else {
            let m = evaluate_queries(net, t, features, val)?.mrr_x10;
            (m, m)
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            loss,
            val_mrr_x10: val_mrr,
            lr,
        };
        info!("epoch {} loss {:.5} val_mrr_x10 {:.4} lr {:.2e}", rec.epoch, loss, val_mrr, lr);
        debug!("epoch {} curvatures {:?}", rec.epoch, net.curvatures());
        on_epoch(&rec);
        records.push(rec);
        schedule.step(epoch, metric);
        let decision = stopper.update(metric);
        if stopper.improved() || epoch == 0 {
            best = (metric, epoch + 1, net.store.clone(), optim.state.clone());
        }
        if decision == StopDecision::Stop {
            info!("early stop after epoch {}", epoch + 1);
            break;
        }
    }
    let (metric, best_epoch, params, state) = best;
    net.store = params.clone();
    let best_val_mrr_x10 = if val.is_empty() || records.is_empty() { f64::NAN } else { metric };
    Ok(TrainOutcome {
        records,
        best_val_mrr_x10,
        best_epoch,
        best_params: params,
        skipped_steps: optim.state.skipped,
        optimizer: state,
    })
}
