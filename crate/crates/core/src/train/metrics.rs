use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Result;

pub const METRICS_HEADER: &str = "step,lr,loss,loss_T,loss_R,grad_norm,wall_ms";

/// One optimizer step. `loss == loss_t + loss_r`; in atom mode `loss_t` holds the atom loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub loss_t: f64,
    pub loss_r: f64,
    pub grad_norm: f64,
    pub clipped: bool,
    pub wall_ms: f64,
}

impl StepMetrics {
    /// Shortest round-trip float text, so equal runs give equal lines.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.step, self.lr, self.loss, self.loss_t, self.loss_r, self.grad_norm, self.wall_ms
        )
    }

    /// Every field except wall time, for replay comparisons.
    pub fn deterministic_part(&self) -> (u64, u64, u64, u64, u64, u64) {
        (self.step, self.lr.to_bits(), self.loss.to_bits(), self.loss_t.to_bits(), self.loss_r.to_bits(), self.grad_norm.to_bits())
    }
}

/// Append-only metrics CSV; the header is written only to an empty file.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let empty = file.metadata()?.len() == 0;
        let mut out = BufWriter::new(file);
        if empty {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(Self { out })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        writeln!(self.out, "{}", m.csv_line())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_once_then_rows_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = StepMetrics { step: 1, lr: 1e-3, loss: 2.5, loss_t: 2.0, loss_r: 0.5, grad_norm: 3.0, clipped: false, wall_ms: 1.25 };
        for _ in 0..2 {
            let mut w = MetricsWriter::open(&path).unwrap();
            w.write(&m).unwrap();
            w.flush().unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec![METRICS_HEADER, "1,0.001,2.5,2,0.5,3,1.250", "1,0.001,2.5,2,0.5,3,1.250"]);
    }
}
