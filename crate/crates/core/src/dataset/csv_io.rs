use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, Dataset, ResponseKind, Sample, TrueCurves};
use crate::tensor::DenseMatrix;

/// Which rows of the public Hillstrom e-mail file to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HillstromSubset {
    /// Control plus both e-mail treatments, `K = 2`.
    All,
    /// `No E-Mail` vs `Mens E-Mail`, `K = 1`.
    Men,
    /// `No E-Mail` vs `Womens E-Mail`, `K = 1`.
    Women,
}

/// Column layout of an input file.
#[derive(Clone, Debug, PartialEq)]
pub enum CsvSchema {
    /// `f0..f{d-1},treatment,cost,response`, integer treatment levels.
    Generic {
        cost_kind: ResponseKind,
        revenue_kind: ResponseKind,
    },
    /// The raw Hillstrom file: `segment` is the treatment, `visit` the cost
    /// and `spend` the response.
    Hillstrom(HillstromSubset),
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self::Generic {
            cost_kind: ResponseKind::Continuous,
            revenue_kind: ResponseKind::Continuous,
        }
    }
}

impl std::str::FromStr for CsvSchema {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generic" => Ok(Self::default()),
            "hillstrom" => Ok(Self::Hillstrom(HillstromSubset::All)),
            "hillstrom-men" => Ok(Self::Hillstrom(HillstromSubset::Men)),
            "hillstrom-women" => Ok(Self::Hillstrom(HillstromSubset::Women)),
            other => Err(format!(
                "unknown schema `{other}` (expected generic, hillstrom, hillstrom-men, hillstrom-women)"
            )),
        }
    }
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<File, DataError> {
    File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DataError> {
    read_csv(open(path.as_ref())?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    match schema {
        CsvSchema::Generic {
            cost_kind,
            revenue_kind,
        } => read_generic(&mut rdr, &headers, *cost_kind, *revenue_kind),
        CsvSchema::Hillstrom(subset) => read_hillstrom(&mut rdr, &headers, *subset),
    }
}

fn column(headers: &[String], name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn number(record: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<f64, DataError> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::Parse {
            row,
            column: name.to_string(),
            value: raw.to_string(),
        })
}

fn read_generic<R: Read>(
    rdr: &mut csv::Reader<R>,
    headers: &[String],
    cost_kind: ResponseKind,
    revenue_kind: ResponseKind,
) -> Result<Dataset, DataError> {
    let mut feature_cols = Vec::new();
    for d in 0.. {
        match headers.iter().position(|h| *h == format!("f{d}")) {
            Some(i) => feature_cols.push(i),
            None => break,
        }
    }
    let t_col = column(headers, "treatment")?;
    let c_col = column(headers, "cost")?;
    let r_col = column(headers, "response")?;
    let d = feature_cols.len();

    let mut raw = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let features = feature_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| number(&rec, c, &format!("f{j}"), row))
            .collect::<Result<Vec<_>, _>>()?;
        let t_raw = rec.get(t_col).unwrap_or("").trim();
        let treatment: i64 = t_raw.parse().map_err(|_| DataError::UnknownTreatment {
            row,
            label: t_raw.to_string(),
        })?;
        if treatment < 0 {
            return Err(DataError::UnknownTreatment {
                row,
                label: t_raw.to_string(),
            });
        }
        let cost = number(&rec, c_col, "cost", row)?;
        let revenue = number(&rec, r_col, "response", row)?;
        raw.push((features, treatment, cost, revenue));
    }
    if raw.is_empty() {
        return Err(DataError::NoSamples);
    }
    let mut levels: Vec<i64> = raw.iter().map(|r| r.1).collect();
    levels.sort_unstable();
    levels.dedup();
    let samples = raw
        .into_iter()
        .map(|(features, t, cost, revenue)| Sample {
            features,
            treatment: levels.binary_search(&t).expect("level present"),
            cost,
            revenue,
        })
        .collect();
    let mut ds = Dataset::new(samples, levels.len() - 1, d)?;
    ds.cost_kind = cost_kind;
    ds.revenue_kind = revenue_kind;
    Ok(ds)
}

const HISTORY_SEGMENTS: [&str; 7] = [
    "1) $0 - $100",
    "2) $100 - $200",
    "3) $200 - $350",
    "4) $350 - $500",
    "5) $500 - $750",
    "6) $750 - $1,000",
    "7) $1,000 +",
];
const ZIP_CODES: [&str; 3] = ["Urban", "Surburban", "Rural"];
const CHANNELS: [&str; 3] = ["Phone", "Web", "Multichannel"];

fn one_hot(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
    vocab: &[&str],
    row: usize,
    out: &mut Vec<f64>,
) -> Result<(), DataError> {
    let mut value = rec.get(idx).unwrap_or("").trim();
    if name == "zip_code" && value == "Suburban" {
        value = "Surburban";
    }
    let pos = vocab
        .iter()
        .position(|v| *v == value)
        .ok_or_else(|| DataError::UnknownCategory {
            row,
            column: name.to_string(),
            value: value.to_string(),
        })?;
    out.extend((0..vocab.len()).map(|i| if i == pos { 1.0 } else { 0.0 }));
    Ok(())
}

fn read_hillstrom<R: Read>(
    rdr: &mut csv::Reader<R>,
    headers: &[String],
    subset: HillstromSubset,
) -> Result<Dataset, DataError> {
    let numeric = ["recency", "history"];
    let indicators = ["mens", "womens", "newbie"];
    let cols_numeric = numeric.iter().map(|n| column(headers, n)).collect::<Result<Vec<_>, _>>()?;
    let cols_ind = indicators.iter().map(|n| column(headers, n)).collect::<Result<Vec<_>, _>>()?;
    let c_hist = column(headers, "history_segment")?;
    let c_zip = column(headers, "zip_code")?;
    let c_chan = column(headers, "channel")?;
    let c_seg = column(headers, "segment")?;
    let c_visit = column(headers, "visit")?;
    let c_spend = column(headers, "spend")?;

    let mut names: Vec<String> = numeric.iter().chain(&indicators).map(|s| s.to_string()).collect();
    let mut numeric_mask = vec![true, true, false, false, false];
    for (prefix, vocab) in [
        ("history_segment", &HISTORY_SEGMENTS[..]),
        ("zip_code", &ZIP_CODES[..]),
        ("channel", &CHANNELS[..]),
    ] {
        for v in vocab {
            names.push(format!("{prefix}={v}"));
            numeric_mask.push(false);
        }
    }

    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let label = rec.get(c_seg).unwrap_or("").trim();
        let treatment = match (label, subset) {
            ("No E-Mail", _) => 0,
            ("Mens E-Mail", HillstromSubset::All | HillstromSubset::Men) => 1,
            ("Womens E-Mail", HillstromSubset::All) => 2,
            ("Womens E-Mail", HillstromSubset::Women) => 1,
            ("Mens E-Mail", HillstromSubset::Women) | ("Womens E-Mail", HillstromSubset::Men) => continue,
            _ => {
                return Err(DataError::UnknownTreatment {
                    row,
                    label: label.to_string(),
                })
            }
        };
        let mut features = Vec::with_capacity(names.len());
        for (&c, n) in cols_numeric.iter().zip(&numeric) {
            features.push(number(&rec, c, n, row)?);
        }
        for (&c, n) in cols_ind.iter().zip(&indicators) {
            features.push(number(&rec, c, n, row)?);
        }
        one_hot(&rec, c_hist, "history_segment", &HISTORY_SEGMENTS, row, &mut features)?;
        one_hot(&rec, c_zip, "zip_code", &ZIP_CODES, row, &mut features)?;
        one_hot(&rec, c_chan, "channel", &CHANNELS, row, &mut features)?;
        let cost = number(&rec, c_visit, "visit", row)?;
        let revenue = number(&rec, c_spend, "spend", row)?;
        samples.push(Sample {
            features,
            treatment,
            cost,
            revenue,
        });
    }
    if samples.is_empty() {
        return Err(DataError::NoSamples);
    }
    let k = if subset == HillstromSubset::All { 2 } else { 1 };
    let mut ds = Dataset::new(samples, k, names.len())?;
    if let Some(missing) = ds.treatment_counts().iter().position(|&c| c == 0) {
        return Err(DataError::MissingTreatmentLevel(missing));
    }
    ds.cost_kind = ResponseKind::Binary;
    ds.revenue_kind = ResponseKind::Continuous;
    ds.feature_names = names;
    ds.numeric_features = numeric_mask;
    Ok(ds)
}

/// Writes the generic schema. Values use the shortest representation that
/// parses back to the same `f64`, so re-reading is exact.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(create(path.as_ref())?);
    let mut header: Vec<String> = (0..dataset.feature_dim).map(|i| format!("f{i}")).collect();
    header.extend(["treatment", "cost", "response"].map(String::from));
    wtr.write_record(&header)?;
    for s in &dataset.samples {
        let mut rec: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        rec.push(s.treatment.to_string());
        rec.push(s.cost.to_string());
        rec.push(s.revenue.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| DataError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    Ok(())
}

/// `revenue_0..revenue_K,cost_0..cost_K`, one row per sample.
pub fn write_truth_csv(truth: &TrueCurves, path: impl AsRef<Path>) -> Result<(), DataError> {
    let levels = truth.revenue.cols();
    let mut wtr = csv::Writer::from_writer(create(path.as_ref())?);
    let mut header: Vec<String> = (0..levels).map(|k| format!("revenue_{k}")).collect();
    header.extend((0..levels).map(|k| format!("cost_{k}")));
    wtr.write_record(&header)?;
    for r in 0..truth.revenue.rows() {
        let rec: Vec<String> = truth
            .revenue
            .row(r)
            .iter()
            .chain(truth.cost.row(r))
            .map(|v| v.to_string())
            .collect();
        wtr.write_record(&rec)?;
    }
    let mut inner = wtr.into_inner().map_err(|e| DataError::Io {
        path: path.as_ref().display().to_string(),
        source: e.into_error(),
    })?;
    inner.flush().map_err(|source| DataError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })
}

pub fn load_truth_csv(path: impl AsRef<Path>) -> Result<TrueCurves, DataError> {
    let mut rdr = csv::Reader::from_reader(open(path.as_ref())?);
    let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let levels = headers.iter().filter(|h| h.starts_with("revenue_")).count();
    let rev_cols = (0..levels)
        .map(|k| column(&headers, &format!("revenue_{k}")))
        .collect::<Result<Vec<_>, _>>()?;
    let cost_cols = (0..levels)
        .map(|k| column(&headers, &format!("cost_{k}")))
        .collect::<Result<Vec<_>, _>>()?;
    let (mut rev, mut cost) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (k, &c) in rev_cols.iter().enumerate() {
            rev.push(number(&rec, c, &format!("revenue_{k}"), i + 2)?);
        }
        for (k, &c) in cost_cols.iter().enumerate() {
            cost.push(number(&rec, c, &format!("cost_{k}"), i + 2)?);
        }
    }
    let n = rev.len() / levels.max(1);
    let to_matrix = |v: Vec<f64>| {
        DenseMatrix::from_vec(n, levels, v).map_err(|e| DataError::InvalidArgument(e.to_string()))
    };
    Ok(TrueCurves {
        revenue: to_matrix(rev)?,
        cost: to_matrix(cost)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic(text: &str) -> Result<Dataset, DataError> {
        read_csv(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn header_only_is_no_samples() {
        assert!(matches!(generic("f0,treatment,cost,response\n"), Err(DataError::NoSamples)));
    }

    #[test]
    fn reindexes_treatment_levels() {
        let ds = generic("f0,f1,treatment,cost,response\n1,2,5,0.5,1\n3,4,2,0,2\n0,0,7,1,1\n").unwrap();
        assert_eq!(ds.num_treatments, 2);
        assert_eq!(ds.feature_dim, 2);
        assert_eq!(ds.treatments(), vec![1, 0, 2]);
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let err = generic("f0,treatment,cost,response\n1,0,0,1\nx,1,0,1\n").unwrap_err();
        match err {
            DataError::Parse { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "f0", "x"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_reported() {
        let err = generic("f0,treatment,response\n1,0,1\n").unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "cost"));
    }

    const HILLSTROM: &str = "recency,history_segment,history,mens,womens,zip_code,newbie,channel,segment,visit,conversion,spend
10,\"2) $100 - $200\",142.44,1,0,Surburban,0,Phone,Womens E-Mail,0,0,0
6,\"3) $200 - $350\",329.08,1,1,Rural,1,Web,No E-Mail,0,0,0
7,\"2) $100 - $200\",180.65,0,1,Surburban,1,Web,Womens E-Mail,0,0,0
9,\"5) $500 - $750\",675.83,1,0,Rural,1,Web,Mens E-Mail,1,0,0
2,\"1) $0 - $100\",45.34,1,0,Urban,0,Web,Womens E-Mail,0,0,0
6,\"2) $100 - $200\",134.83,0,1,Surburban,0,Phone,Womens E-Mail,1,0,0
9,\"1) $0 - $100\",32.97,1,0,Urban,1,Multichannel,Mens E-Mail,1,1,29.99
";

    #[test]
    fn hillstrom_all_and_subsets() {
        let all = read_csv(HILLSTROM.as_bytes(), &CsvSchema::Hillstrom(HillstromSubset::All)).unwrap();
        assert_eq!(all.len(), 7);
        assert_eq!(all.num_treatments, 2);
        assert_eq!(all.feature_dim, 5 + 7 + 3 + 3);
        assert_eq!(all.cost_kind, ResponseKind::Binary);
        assert_eq!(all.samples[6].revenue, 29.99);

        let men = read_csv(HILLSTROM.as_bytes(), &CsvSchema::Hillstrom(HillstromSubset::Men)).unwrap();
        assert_eq!(men.num_treatments, 1);
        assert_eq!(men.len(), 3);
        let women = read_csv(HILLSTROM.as_bytes(), &CsvSchema::Hillstrom(HillstromSubset::Women)).unwrap();
        assert_eq!(women.len(), 5);
    }

    #[test]
    fn hillstrom_unknown_label() {
        let bad = HILLSTROM.replace("Mens E-Mail,1,0,0", "Kids E-Mail,1,0,0");
        let err = read_csv(bad.as_bytes(), &CsvSchema::Hillstrom(HillstromSubset::All)).unwrap_err();
        assert!(matches!(err, DataError::UnknownTreatment { row: 5, .. }), "{err:?}");
    }
}
