use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::Result;

/// Windowed training metrics written as `step,loss_total,<components>,lr,wall_ms`.
#[derive(Clone, Debug)]
pub struct MetricLog {
    pub components: Vec<String>,
    pub rows: Vec<MetricRow>,
    /// Total loss at every step, for curve checks.
    pub history: Vec<f64>,
    every: usize,
    wall_time: bool,
    start: Instant,
    window: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub values: Vec<f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

impl MetricLog {
    pub fn new(components: &[&str], every: usize, wall_time: bool) -> Self {
        Self {
            components: components.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            history: Vec::new(),
            every: every.max(1),
            wall_time,
            start: Instant::now(),
            window: Vec::new(),
        }
    }

    /// Records step `step` (0-based); `values[0]` is the total loss. A row
    /// with the window mean is emitted every `every` steps and at `last`.
    pub fn record(&mut self, step: usize, values: &[f64], lr: f64, last: bool) {
        self.history.push(values[0]);
        self.window.push(values.to_vec());
        if (step + 1).is_multiple_of(self.every) || last {
            let n = self.window.len() as f64;
            let mean = (0..values.len()).map(|k| self.window.iter().map(|w| w[k]).sum::<f64>() / n).collect();
            let wall_ms = if self.wall_time { self.start.elapsed().as_millis() as u64 } else { 0 };
            self.rows.push(MetricRow { step: step + 1, values: mean, lr, wall_ms });
            self.window.clear();
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step");
        for c in &self.components {
            write!(s, ",{c}").unwrap();
        }
        s.push_str(",lr,wall_ms\n");
        for r in &self.rows {
            write!(s, "{}", r.step).unwrap();
            for v in &r.values {
                write!(s, ",{v:.6e}").unwrap();
            }
            writeln!(s, ",{:.6e},{}", r.lr, r.wall_ms).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Mean total loss over steps `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.history[range];
        s.iter().sum::<f64>() / s.len() as f64
    }
}
