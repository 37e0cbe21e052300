use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Per-epoch averages of named loss terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossTrace {
    pub stage: String,
    pub columns: Vec<String>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl LossTrace {
    pub fn new(stage: &str, columns: &[&str]) -> Self {
        Self {
            stage: stage.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[k]).collect())
    }

    pub fn to_csv(&self, fingerprint: &str, seed: u64) -> String {
        let mut out = format!("# stage={} fingerprint={fingerprint} seed={seed}\nepoch", self.stage);
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (epoch, vals) in &self.rows {
            out.push_str(&epoch.to_string());
            for v in vals {
                out.push_str(&format!(",{v:.9e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Accumulates batch values into one epoch row.
pub(crate) struct EpochMeter {
    sums: Vec<f64>,
    batches: usize,
}

impl EpochMeter {
    pub fn new(n: usize) -> Self {
        Self {
            sums: vec![0.0; n],
            batches: 0,
        }
    }

    pub fn add(&mut self, stage: &'static str, epoch: usize, vals: &[f64]) -> Result<()> {
        if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage,
                epoch,
                batch: self.batches,
                detail: format!("term #{k} = {}", vals[k]),
            });
        }
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += v;
        }
        self.batches += 1;
        Ok(())
    }

    pub fn finish(self, trace: &mut LossTrace, epoch: usize) {
        let n = self.batches.max(1) as f64;
        trace.rows.push((epoch, self.sums.iter().map(|s| s / n).collect()));
    }
}

/// Shuffled mini-batches covering `0..n` once.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let perm = rng.permutation(n);
    perm.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
