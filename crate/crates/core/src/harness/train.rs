use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::align::{total_loss, AlignBatch};
use crate::error::{Error, Result};
use crate::numkit::{AdamWState, Checkpoint, ParamStore, SeededRng, Tape};

use super::config::RunConfig;
use super::data::Prepared;
use super::model::{Model, NodeCache};

pub const TRACE_HEADER: &str = "epoch,train_loss,val_loss,contrastive,translation,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Training-set means of the two loss terms.
    pub contrastive: f64,
    pub translation: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    pub rows: Vec<EpochRow>,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{TRACE_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.contrastive, r.translation, r.seconds
            ));
        }
        s
    }

    pub fn from_csv(text: &str, file: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(Error::parse(file, 1, "bad trace header"));
        }
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::parse(file, i + 2, format!("bad trace row {l:?}"));
            if f.len() != 6 {
                return Err(bad());
            }
            let v = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
            rows.push(EpochRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: v(1)?,
                val_loss: v(2)?,
                contrastive: v(3)?,
                translation: v(4)?,
                seconds: v(5)?,
            });
        }
        let t = Self { rows };
        t.validate()?;
        Ok(t)
    }

    /// Epochs run 1, 2, ... and every loss is finite.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.epoch != i + 1 {
                return Err(Error::contract(format!("trace epoch {} at row {}", r.epoch, i + 1)));
            }
            if ![r.train_loss, r.val_loss, r.contrastive, r.translation].iter().all(|v| v.is_finite()) {
                return Err(Error::contract(format!("non-finite loss in epoch {}", r.epoch)));
            }
        }
        Ok(())
    }

    /// Trailing `window`-epoch means of the training loss.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let v: Vec<f64> = self.rows.iter().map(|r| r.train_loss).collect();
        v.windows(window.max(1)).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial_val_loss: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: TrainingTrace,
    pub summary: TrainSummary,
    /// Parameters at the best validation epoch.
    pub checkpoint: Checkpoint,
}

impl TrainOutcome {
    /// Best-epoch train and validation losses.
    pub fn best_row(&self) -> &EpochRow {
        &self.trace.rows[self.summary.best_epoch - 1]
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let write = |name: &str, text: String| {
            let p = out.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write("trace.csv", self.trace.to_csv())?;
        write("train_summary.json", serde_json::to_string_pretty(&self.summary).expect("plain data") + "\n")?;
        self.checkpoint.save(&out.join("checkpoint.txt"))
    }
}

/// Config values recorded in a checkpoint. Paths are left out so the
/// bytes depend only on what was trained.
pub fn checkpoint_hparams(cfg: &RunConfig, prep: &Prepared) -> BTreeMap<String, String> {
    let mut h: BTreeMap<String, String> = super::config::CONFIG_KEYS
        .iter()
        .filter(|(k, _)| !matches!(*k, "data_dir" | "out_dir"))
        .map(|(k, _)| (k.to_string(), cfg.get(k).expect("listed key")))
        .collect();
    h.insert("vocab_size".into(), prep.vocab_size().to_string());
    h
}

/// Splits `items` into chunks of `size`; a final singleton joins the
/// previous chunk so every batch has in-batch negatives.
pub fn batches(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = items.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().map(Vec::len) == Some(1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
struct LossSums {
    total: f64,
    contrastive: f64,
    translation: f64,
    n: usize,
}

impl LossSums {
    fn add(&mut self, parts: (f64, f64, f64), n: usize) {
        self.total += parts.0 * n as f64;
        self.contrastive += parts.1 * n as f64;
        self.translation += parts.2 * n as f64;
        self.n += n;
    }

    fn mean(&self) -> (f64, f64, f64) {
        let n = self.n.max(1) as f64;
        (self.total / n, self.contrastive / n, self.translation / n)
    }
}

/// Forward pass of one batch; returns the tape, the total node and the
/// three loss values.
fn forward(
    model: &Model,
    cfg: &RunConfig,
    store: &ParamStore,
    cache: Option<&NodeCache>,
    batch: &[usize],
) -> Result<(Tape, crate::numkit::Var, (f64, f64, f64))> {
    let mut tape = Tape::new();
    let b = model.batch(&mut tape, store, cache, batch)?;
    let parts = total_loss(&mut tape, &AlignBatch { zq: b.zq, za: b.za, zref: Some(b.zref) }, &cfg.loss)?;
    let total = tape.value(parts.total).item();
    if !total.is_finite() {
        let at = tape.first_non_finite().unwrap_or_else(|| "loss".into());
        return Err(Error::Numeric(format!("non-finite loss {total}; first non-finite tensor: {at}")));
    }
    let tr = parts.translation.map(|t| tape.value(t).item()).unwrap_or(0.0);
    let vals = (total, tape.value(parts.contrastive).item(), tr);
    Ok((tape, parts.total, vals))
}

/// Mean loss over fixed batches, without gradients.
pub fn evaluate_loss(
    model: &Model,
    cfg: &RunConfig,
    store: &ParamStore,
    cache: Option<&NodeCache>,
    batches: &[Vec<usize>],
) -> Result<(f64, f64, f64)> {
    let mut sums = LossSums::default();
    for b in batches {
        let (_, _, vals) = forward(model, cfg, store, cache, b)?;
        sums.add(vals, b.len());
    }
    Ok(sums.mean())
}

/// One gradient step on `batch`; returns its loss values.
pub fn train_step(
    model: &Model,
    cfg: &RunConfig,
    store: &mut ParamStore,
    opt: &mut AdamWState,
    cache: Option<&NodeCache>,
    batch: &[usize],
) -> Result<(f64, f64, f64)> {
    let (mut tape, total, vals) = forward(model, cfg, store, cache, batch)?;
    store.zero_grad();
    tape.backward(total, store)?;
    if let Some((name, _)) = store.iter().find(|(_, t)| t.grad.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite()))) {
        return Err(Error::Numeric(format!("non-finite gradient in parameter {name}")));
    }
    opt.step(store)?;
    Ok(vals)
}

/// Validation batches over every validation occurrence, in a fixed seeded
/// order.
pub fn validation_batches(prep: &Prepared, cfg: &RunConfig) -> Vec<Vec<usize>> {
    let mut val = prep.split.val.clone();
    SeededRng::fork(cfg.seed, "harness.val").shuffle(&mut val);
    batches(&val, cfg.batch_size)
}

/// Training batches of epoch `epoch`: every training occurrence, shuffled.
pub fn epoch_batches(prep: &Prepared, cfg: &RunConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = SeededRng::fork(cfg.seed, &format!("harness.epoch{epoch}"));
    let mut picks = prep.split.train.clone();
    rng.shuffle(&mut picks);
    batches(&picks, cfg.batch_size)
}

/// Trains with early stopping on validation total loss and returns the
/// best-validation parameters.
pub fn train(cfg: &RunConfig, prep: &Prepared) -> Result<TrainOutcome> {
    cfg.validate()?;
    if prep.split.train.len() < 2 || prep.split.val.is_empty() {
        return Err(Error::config("need at least 2 training and 1 validation occurrence"));
    }
    let model = Model::new(cfg, prep);
    let mut store = model.init_params(cfg.seed)?;
    let mut opt = AdamWState::new(cfg.optim.clone());
    let val_batches = validation_batches(prep, cfg);

    let mut cache = model.node_cache(&store)?;
    let initial_val = evaluate_loss(&model, cfg, &store, cache.as_ref(), &val_batches)?.0;
    log::info!("{} initial validation loss {initial_val:.5}", cfg.arm);

    let mut trace = TrainingTrace::default();
    let mut best = (f64::INFINITY, 0usize, store.without_grads());
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut sums = LossSums::default();
        for b in epoch_batches(prep, cfg, epoch) {
            let vals = train_step(&model, cfg, &mut store, &mut opt, cache.as_ref(), &b)?;
            sums.add(vals, b.len());
        }
        cache = model.node_cache(&store)?;
        let val = evaluate_loss(&model, cfg, &store, cache.as_ref(), &val_batches)?.0;
        let (train_loss, contrastive, translation) = sums.mean();
        let seconds = if cfg.wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
        log::info!("{} epoch {epoch}: train {train_loss:.5} val {val:.5} ({seconds:.1}s)", cfg.arm);
        trace.rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss: val,
            contrastive,
            translation,
            seconds,
        });
        if val < best.0 {
            best = (val, epoch, store.without_grads());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let epochs_run = trace.rows.len();
    Ok(TrainOutcome {
        summary: TrainSummary {
            initial_val_loss: initial_val,
            best_epoch: best.1,
            best_val_loss: best.0,
            epochs_run,
            stopped_early: epochs_run < cfg.epochs,
            steps: opt.steps(),
        },
        trace,
        checkpoint: Checkpoint {
            seed: cfg.seed,
            hparams: checkpoint_hparams(cfg, prep),
            params: best.2,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_never_leave_a_singleton() {
        let items: Vec<usize> = (0..9).collect();
        let b = batches(&items, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(&items[..8], 4).len(), 2);
    }

    #[test]
    fn trace_csv_round_trip() {
        let t = TrainingTrace {
            rows: vec![
                EpochRow { epoch: 1, train_loss: 3.5, val_loss: 3.25, contrastive: 3.0, translation: 0.5, seconds: 0.0 },
                EpochRow { epoch: 2, train_loss: 2.5, val_loss: 2.75, contrastive: 2.0, translation: 0.5, seconds: 1.5 },
            ],
        };
        assert_eq!(TrainingTrace::from_csv(&t.to_csv(), "t").unwrap(), t);
        let mut bad = t.clone();
        bad.rows[1].epoch = 3;
        assert!(bad.validate().is_err());
        assert_eq!(t.moving_average(2), vec![3.0]);
    }
}
