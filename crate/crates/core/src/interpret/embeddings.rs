use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Micap, Variant};
use crate::synth::{DatasetArchive, Split};

/// One line of the dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub video_id: String,
    pub c_v: Vec<f64>,
    pub c_a: Vec<f64>,
    pub split: Split,
}

/// Mean cosine of matched pairs versus mismatched pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub samples: usize,
    pub positive: f64,
    /// Absent with fewer than two samples.
    pub negative: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub records: Vec<EmbeddingRecord>,
    pub summary: AlignmentSummary,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na * nb;
    if denom > 0.0 {
        dot / denom
    } else {
        0.0
    }
}

pub fn alignment_summary(records: &[EmbeddingRecord]) -> Result<AlignmentSummary> {
    let n = records.len();
    if n == 0 {
        return Err(Error::Contract("no embeddings to summarize".into()));
    }
    let positive = records.iter().map(|r| cosine(&r.c_v, &r.c_a)).sum::<f64>() / n as f64;
    let negative = (n >= 2).then(|| {
        let mut sum = 0.0;
        for (i, a) in records.iter().enumerate() {
            for (j, b) in records.iter().enumerate() {
                if i != j {
                    sum += cosine(&a.c_v, &b.c_a);
                }
            }
        }
        sum / (n * (n - 1)) as f64
    });
    Ok(AlignmentSummary {
        samples: n,
        positive,
        negative,
        gap: negative.map(|neg| positive - neg),
    })
}

/// Pooled `(c_v, c_a)` for every sample in `indices`.
pub fn export_pair_embeddings(
    model: &Micap,
    data: &DatasetArchive,
    indices: &[usize],
    variant: Variant,
) -> Result<EmbeddingDump> {
    if indices.is_empty() {
        return Err(Error::Contract("no samples to export".into()));
    }
    if !(variant.uses_video() && variant.uses_audio()) {
        return Err(Error::Config(format!(
            "variant {variant} does not pool both modalities"
        )));
    }
    let mut records = Vec::with_capacity(indices.len());
    for &i in indices {
        let out = model.fusion_output(&data.input(i)?, variant)?;
        let s = data.sample(i);
        records.push(EmbeddingRecord {
            video_id: s.id.clone(),
            c_v: out.c_v.expect("both modalities pooled").into_data(),
            c_a: out.c_a.expect("both modalities pooled").into_data(),
            split: s.split,
        });
    }
    let summary = alignment_summary(&records)?;
    Ok(EmbeddingDump { records, summary })
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::json("embedding record", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::json(format!("embedding line {}", i + 1), e))?,
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, c_v: Vec<f64>, c_a: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            video_id: id.into(),
            c_v,
            c_a,
            split: Split::Train,
        }
    }

    #[test]
    fn orthogonal_pairs_have_unit_gap() {
        let r = vec![
            rec("a", vec![1.0, 0.0], vec![2.0, 0.0]),
            rec("b", vec![0.0, 1.0], vec![0.0, 3.0]),
        ];
        let s = alignment_summary(&r).unwrap();
        assert!((s.positive - 1.0).abs() < 1e-12);
        assert!(s.negative.unwrap().abs() < 1e-12);
        assert!((s.gap.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_record_has_no_negatives() {
        let s = alignment_summary(&[rec("a", vec![1.0], vec![-1.0])]).unwrap();
        assert_eq!(s.negative, None);
        assert!((s.positive + 1.0).abs() < 1e-12);
    }
}
