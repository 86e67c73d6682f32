use std::path::Path;

use crate::error::{Error, Result};

use super::FeatureBank;

/// Writes `sample_id,label,f0,...,f{D-1}` with one row per sample. Values
/// use the shortest decimal form that parses back to the same `f32`;
/// unlabeled samples have an empty label field.
pub fn export_embeddings(bank: &FeatureBank, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Eval(format!("cannot write {}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Eval(format!("writing {}: {e}", path.display()));
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((0..bank.dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(err)?;
    for i in 0..bank.len() {
        let mut rec = vec![
            bank.ids[i].to_string(),
            bank.labels[i].map(|l| l.to_string()).unwrap_or_default(),
        ];
        rec.extend(bank.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<FeatureBank> {
    let bad = |m: String| Error::Eval(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 2 || &header[0] != "sample_id" || &header[1] != "label" {
        return Err(bad("missing sample_id,label header".into()));
    }
    let dim = header.len() - 2;
    let mut bank = FeatureBank {
        ids: Vec::new(),
        labels: Vec::new(),
        dim,
        features: Vec::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |m: &str| bad(format!("row {}: bad {m}", line + 1));
        bank.ids.push(rec[0].parse().map_err(|_| field("sample_id"))?);
        bank.labels.push(if rec[1].is_empty() {
            None
        } else {
            Some(rec[1].parse().map_err(|_| field("label"))?)
        });
        for v in rec.iter().skip(2) {
            bank.features.push(v.parse().map_err(|_| field("feature"))?);
        }
    }
    Ok(bank)
}
