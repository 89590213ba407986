//! On-disk formats: covariance datasets as CSV with a JSON config sidecar,
//! fitted alignment parameters and classifiers as JSON.
//!
//! Matrices are stored as their raw upper triangle (row-major, unscaled) so
//! a write/read cycle reproduces every entry bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentParams, Bias, DomainAlignment};
use crate::error::{Error, Result};
use crate::generative::{DomainDataset, DomainId, GenerativeConfig};
use crate::learner::SoftmaxClassifier;
use crate::spd::{tri_len, triangular_root, upper_index_pairs, SpdMatrix};

fn raw_upper(m: &DMatrix<f64>) -> Vec<f64> {
    upper_index_pairs(m.nrows())
        .map(|(a, b)| m[(a, b)])
        .collect()
}

fn from_raw_upper(values: &[f64]) -> Result<SpdMatrix> {
    let dim = triangular_root(values.len()).ok_or_else(|| {
        Error::Shape(format!(
            "{} entries is not a triangular number",
            values.len()
        ))
    })?;
    let mut m = DMatrix::zeros(dim, dim);
    for ((a, b), &v) in upper_index_pairs(dim).zip(values) {
        m[(a, b)] = v;
        m[(b, a)] = v;
    }
    SpdMatrix::new(m)
}

/// Writes `domain_id,label,u0,...` rows; unlabeled rows leave `label` empty.
pub fn write_dataset_csv<W: Write>(datasets: &[DomainDataset], out: W) -> Result<()> {
    let dim = datasets
        .iter()
        .find_map(|d| d.dim())
        .ok_or_else(|| Error::Argument("no covariances to write".into()))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["domain_id".to_string(), "label".to_string()];
    header.extend((0..tri_len(dim)).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for ds in datasets {
        for (i, c) in ds.covariances.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::Shape(format!(
                    "mixed dimensions {dim} and {}",
                    c.dim()
                )));
            }
            let mut rec = vec![
                ds.domain_id.to_string(),
                ds.labels
                    .as_ref()
                    .map(|l| l[i].to_string())
                    .unwrap_or_default(),
            ];
            rec.extend(raw_upper(c.as_matrix()).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads datasets back, one per distinct `domain_id` in order of first
/// appearance. A domain is labeled only if every one of its rows is.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Vec<DomainDataset>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "domain_id" || &header[1] != "label" {
        return Err(Error::Config(
            "dataset CSV must start with domain_id,label,u0".into(),
        ));
    }
    let mut order: Vec<DomainId> = Vec::new();
    let mut rows: std::collections::BTreeMap<DomainId, (Vec<SpdMatrix>, Vec<Option<usize>>)> =
        Default::default();
    for rec in rdr.records() {
        let rec = rec?;
        let domain: DomainId = rec[0]
            .parse()
            .map_err(|e| Error::Config(format!("bad domain_id {:?}: {e}", &rec[0])))?;
        let label = if rec[1].is_empty() {
            None
        } else {
            Some(
                rec[1]
                    .parse()
                    .map_err(|e| Error::Config(format!("bad label {:?}: {e}", &rec[1])))?,
            )
        };
        let values = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad entry {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let entry = rows.entry(domain).or_insert_with(|| {
            order.push(domain);
            Default::default()
        });
        entry.0.push(from_raw_upper(&values)?);
        entry.1.push(label);
    }
    order
        .into_iter()
        .map(|d| {
            let (covs, labels) = rows.remove(&d).expect("domain recorded on first sight");
            let labels = labels.into_iter().collect::<Option<Vec<_>>>();
            DomainDataset::new(d, covs, labels)
        })
        .collect()
}

/// `path` with its extension replaced by `json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the CSV at `path` and the generating config next to it.
pub fn save_dataset(path: &Path, datasets: &[DomainDataset], cfg: &GenerativeConfig) -> Result<()> {
    write_dataset_csv(datasets, BufWriter::new(File::create(path)?))?;
    let mut side = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut side, cfg)?;
    side.write_all(b"\n")?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<DomainDataset>> {
    read_dataset_csv(BufReader::new(File::open(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BiasRecord {
    None,
    Spd { upper: Vec<f64> },
    GeodesicStep { step: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainRecord {
    domain_id: DomainId,
    dim: usize,
    mean_upper: Vec<f64>,
    bias: BiasRecord,
    low_sample_warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRecord {
    domains: Vec<DomainRecord>,
}

pub fn alignment_params_to_json(params: &AlignmentParams) -> Result<String> {
    let domains = params
        .domains
        .iter()
        .map(|(&domain_id, a)| DomainRecord {
            domain_id,
            dim: a.mean.dim(),
            mean_upper: raw_upper(a.mean.as_matrix()),
            bias: match &a.bias {
                Bias::None => BiasRecord::None,
                Bias::Spd(phi) => BiasRecord::Spd {
                    upper: raw_upper(phi.as_matrix()),
                },
                Bias::GeodesicStep(step) => BiasRecord::GeodesicStep { step: *step },
            },
            low_sample_warning: a.low_sample_warning,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&ParamsRecord { domains })?)
}

pub fn alignment_params_from_json(text: &str) -> Result<AlignmentParams> {
    let rec: ParamsRecord = serde_json::from_str(text)?;
    let mut params = AlignmentParams::default();
    for d in rec.domains {
        let mean = from_raw_upper(&d.mean_upper)?;
        if mean.dim() != d.dim {
            return Err(Error::Shape(format!(
                "domain {} declares dim {} but stores {}",
                d.domain_id,
                d.dim,
                mean.dim()
            )));
        }
        let bias = match d.bias {
            BiasRecord::None => Bias::None,
            BiasRecord::Spd { upper } => Bias::Spd(from_raw_upper(&upper)?),
            BiasRecord::GeodesicStep { step } => Bias::GeodesicStep(step),
        };
        params.domains.insert(
            d.domain_id,
            DomainAlignment {
                mean,
                bias,
                low_sample_warning: d.low_sample_warning,
            },
        );
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierRecord {
    n_classes: usize,
    feature_dim: usize,
    /// Row `k` holds the weights of class `k`.
    weights: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
}

pub fn classifier_to_json(clf: &SoftmaxClassifier) -> Result<String> {
    let rec = ClassifierRecord {
        n_classes: clf.n_classes(),
        feature_dim: clf.feature_dim(),
        weights: (0..clf.n_classes())
            .map(|k| clf.weights.row(k).iter().copied().collect())
            .collect(),
        intercepts: clf.intercepts.iter().copied().collect(),
    };
    Ok(serde_json::to_string_pretty(&rec)?)
}

pub fn classifier_from_json(text: &str) -> Result<SoftmaxClassifier> {
    let rec: ClassifierRecord = serde_json::from_str(text)?;
    if rec.weights.len() != rec.n_classes || rec.weights.iter().any(|r| r.len() != rec.feature_dim)
    {
        return Err(Error::Shape(format!(
            "classifier weights do not match {} × {}",
            rec.n_classes, rec.feature_dim
        )));
    }
    let flat: Vec<f64> = rec.weights.into_iter().flatten().collect();
    SoftmaxClassifier::from_parts(
        DMatrix::from_row_slice(rec.n_classes, rec.feature_dim, &flat),
        DVector::from_vec(rec.intercepts),
    )
}
