//! Per-epoch training log in CSV form.

/// Column header of the training log.
pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_psnr,val_ssim,seconds";

/// One row of the training log. `epoch` counts from 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `NaN` when no validation set was given.
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// Shortest round-trip decimal for every float.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, self.val_psnr, self.val_ssim, self.seconds
        )
    }
}

/// Header plus one `\n`-terminated row per epoch.
pub fn format_log(history: &[EpochRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_roundtrip_exactly() {
        let r = EpochRecord {
            epoch: 3,
            lr: 1e-3 * 0.95,
            train_loss: 0.1 + 0.2,
            val_psnr: f64::INFINITY,
            val_ssim: 0.987654321,
            seconds: 0.0,
        };
        let row = r.csv_row();
        assert_eq!(row, "3,0.00095,0.30000000000000004,inf,0.987654321,0");
        let parsed: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(parsed[2], r.train_loss);
        assert_eq!(parsed[3], f64::INFINITY);
    }

    #[test]
    fn log_has_header_and_newlines() {
        let text = format_log(&[]);
        assert_eq!(text, format!("{LOG_HEADER}\n"));
    }
}
