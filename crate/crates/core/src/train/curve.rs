//! Per-epoch loss records and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,train_mse,dev_mse,lr,seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    /// Empty on epochs without a dev pass.
    pub dev_mse: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub records: Vec<EpochRecord>,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("loss curve: {other:?}")),
    }
}

impl LossCurve {
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::Contract(format!("epoch {} after {}", record.epoch, last.epoch)));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Epoch and value of the lowest dev loss (earliest on ties).
    pub fn best_dev(&self) -> Option<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.dev_mse.map(|d| (r.epoch, d)))
            .fold(None, |best, (e, d)| match best {
                Some((_, b)) if b <= d => best,
                _ => Some((e, d)),
            })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(csv_err)?;
        }
        if self.records.is_empty() {
            return Ok(format!("{CSV_HEADER}\n"));
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<LossCurve> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
        if header != CSV_HEADER {
            return Err(Error::Format(format!("unexpected loss curve header `{header}`")));
        }
        let mut curve = LossCurve::default();
        for rec in r.deserialize() {
            curve.push(rec.map_err(csv_err)?)?;
        }
        Ok(curve)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<LossCurve> {
        LossCurve::from_csv(&std::fs::read_to_string(path)?)
    }
}
