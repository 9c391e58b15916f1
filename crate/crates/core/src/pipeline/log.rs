//! Training log rows and CSV serialization.

use serde::{Deserialize, Serialize};

/// One optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: u32,
    pub step: u64,
    pub loss_total: f64,
    pub loss_kp: f64,
    pub loss_fm: f64,
    pub loss_lg: f64,
    pub loss_ri: f64,
    pub loss_fi: f64,
    pub gamma: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl LogRow {
    pub fn csv_header() -> &'static str {
        "epoch,step,loss_total,loss_kp,loss_fm,loss_lg,loss_ri,loss_fi,gamma,lr,grad_norm"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.epoch,
            self.step,
            self.loss_total,
            self.loss_kp,
            self.loss_fm,
            self.loss_lg,
            self.loss_ri,
            self.loss_fi,
            self.gamma,
            self.lr,
            self.grad_norm
        )
    }
}

/// Per-epoch validation entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRow {
    pub epoch: u32,
    pub val_nme: f64,
    pub improved: bool,
}

/// Complete log of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub val: Vec<ValRow>,
}

impl TrainLog {
    pub fn train_csv(&self) -> String {
        let mut out = String::from(LogRow::csv_header());
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn val_csv(&self) -> String {
        let mut out = String::from("epoch,val_nme,improved\n");
        for r in &self.val {
            out.push_str(&format!("{},{:.17e},{}\n", r.epoch, r.val_nme, r.improved));
        }
        out
    }

    pub fn grad_norm_csv(&self) -> String {
        let mut out = String::from("step,grad_norm\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.17e}\n", r.step, r.grad_norm));
        }
        out
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.grad_norm).collect()
    }

    /// Mean of one column over an epoch's rows.
    pub fn epoch_mean(&self, epoch: u32, field: impl Fn(&LogRow) -> f64) -> Option<f64> {
        let vals: Vec<f64> =
            self.rows.iter().filter(|r| r.epoch == epoch).map(|r| field(r)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}
