use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::Metrics;

pub const REPORT_HEADER: &str = "epoch,src_reg_loss,dom_loss,dom_acc,val_rmse";

/// Training statistics of one epoch. Domain columns are absent for models
/// without a domain classifier, `val_rmse` for runs without a validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub src_reg_loss: f64,
    pub dom_loss: Option<f64>,
    pub dom_acc: Option<f64>,
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// Epoch whose weights the returned model carries.
    pub best_epoch: Option<usize>,
    pub stop_epoch: Option<usize>,
    pub wall_clock_secs: f64,
    pub target_metrics: Option<Metrics>,
}

fn cell(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        write!(out, "{v}").expect("writing to a String");
    }
}

impl TrainReport {
    /// Per-epoch rows as CSV. Numbers use shortest round-trip formatting;
    /// wall-clock time is left out so that identical runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},", r.epoch, r.src_reg_loss).expect("writing to a String");
            cell(&mut out, r.dom_loss);
            out.push(',');
            cell(&mut out, r.dom_acc);
            out.push(',');
            cell(&mut out, r.val_rmse);
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }
}
