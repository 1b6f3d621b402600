use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    /// Mean training loss; `None` if no batch of the epoch was supervised.
    pub loss: Option<f64>,
    /// Validation DSC per structure, `None` where not evaluated.
    pub dsc: Vec<Option<f64>>,
}

/// Per-epoch training loss and validation DSC.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub structures: Vec<String>,
    pub rows: Vec<CurveRow>,
    /// Epoch after which the last structure joined, for incremental runs.
    pub epoch_added: Option<usize>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::InvalidInput(format!("bad {what} value {field:?}")))
}

impl LearningCurve {
    pub fn new(structures: Vec<String>) -> Self {
        LearningCurve {
            structures,
            rows: Vec::new(),
            epoch_added: None,
        }
    }

    pub fn last_epoch(&self) -> usize {
        self.rows.last().map_or(0, |r| r.epoch)
    }

    /// Latest evaluated DSC per structure.
    pub fn final_dsc(&self) -> Vec<Option<f64>> {
        (0..self.structures.len())
            .map(|k| self.rows.iter().rev().find_map(|r| r.dsc[k]))
            .collect()
    }

    pub fn column(&self, structure: &str) -> Option<Vec<(usize, f64)>> {
        let k = self.structures.iter().position(|s| s == structure)?;
        Some(self.rows.iter().filter_map(|r| r.dsc[k].map(|d| (r.epoch, d))).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["epoch".to_string(), "loss".to_string()];
        header.extend(self.structures.iter().map(|s| format!("dsc_{s}")));
        header.push("epoch_added".into());
        w.write_record(&header)?;
        let added = self.epoch_added.map(|e| e.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![r.epoch.to_string(), opt(r.loss)];
            rec.extend(r.dsc.iter().map(|&d| opt(d)));
            rec.push(added.clone());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let n = header.len();
        ensure!(
            n >= 3 && &header[0] == "epoch" && &header[1] == "loss" && &header[n - 1] == "epoch_added",
            InvalidInput,
            "not a learning-curve CSV"
        );
        let mut structures = Vec::new();
        for h in header.iter().take(n - 1).skip(2) {
            let name = h
                .strip_prefix("dsc_")
                .ok_or_else(|| Error::InvalidInput(format!("unexpected column {h:?}")))?;
            structures.push(name.to_string());
        }
        let mut curve = LearningCurve::new(structures);
        for rec in r.records() {
            let rec = rec?;
            let epoch = rec[0]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad epoch {:?}", &rec[0])))?;
            ensure!(epoch > curve.last_epoch(), InvalidInput, "epochs are not increasing at {epoch}");
            let dsc = (2..n - 1).map(|i| parse_opt(&rec[i], "dsc")).collect::<Result<_>>()?;
            curve.rows.push(CurveRow {
                epoch,
                loss: parse_opt(&rec[1], "loss")?,
                dsc,
            });
            if !rec[n - 1].is_empty() {
                curve.epoch_added = Some(
                    rec[n - 1]
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad epoch_added {:?}", &rec[n - 1])))?,
                );
            }
        }
        Ok(curve)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}
