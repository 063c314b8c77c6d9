//! Loss-curve invariants of a full default run (a few minutes).

mod common;

use adgt::harness::{train, Prepared, RunConfig};
use common::default_dataset;

#[test]
fn default_run_loss_curve() {
    let cfg = RunConfig { wall_time: false, ..RunConfig::default() };
    let prep = Prepared::new(default_dataset(42), &cfg).unwrap();
    let out = train(&cfg, &prep).unwrap();
    out.trace.validate().unwrap();
    assert!(out.trace.rows.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));

    let ma = out.trace.moving_average(5);
    assert!(ma.windows(2).all(|w| w[1] <= w[0]), "5-epoch average rises: {ma:?}");
    assert!(out.summary.best_val_loss <= 0.7 * out.summary.initial_val_loss);

    let row = out.best_row();
    let gap = row.val_loss - row.train_loss;
    assert!(gap > 0.0, "validation below train at the best epoch: {gap}");
    assert!(
        gap < 0.5 * row.train_loss,
        "generalization gap {gap:.4} is {:.0}% of train loss {:.4}",
        100.0 * gap / row.train_loss,
        row.train_loss
    );
}
