//! Sampling campaigns on the cell model, CSV persistence, and ingestion of
//! externally produced datasets.
//!
//! The canonical file has the header
//! `t_fur_C,q_air_sccm,q_st_sccm,v_cell_V,t_max_C,t_min_C,i_up_A,i_mid_A,i_down_A`,
//! one row per sample, `.` as decimal separator and LF line endings. Values
//! are written in Rust's shortest round-trip notation, so a save/load cycle
//! is exact.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::physics::{simulate_cell, CellParameters, PhysicsError};
use crate::types::{CellResponse, InputRanges, OperatingPoint, Range};

pub const CANONICAL_HEADER: [&str; 9] = [
    "t_fur_C",
    "q_air_sccm",
    "q_st_sccm",
    "v_cell_V",
    "t_max_C",
    "t_min_C",
    "i_up_A",
    "i_mid_A",
    "i_down_A",
];

/// Short field names accepted by [`ColumnMap::parse`], same order as
/// [`CANONICAL_HEADER`].
pub const SHORT_NAMES: [&str; 9] = [
    "t_fur", "q_air", "q_st", "v_cell", "t_max", "t_min", "i_up", "i_mid", "i_down",
];

/// Largest fraction of campaign points that may be re-drawn after failed
/// simulations before the campaign is aborted.
pub const MAX_REDRAW_FRACTION: f64 = 0.2;

/// Margin (fraction of each range width) around the input box within which
/// external rows are accepted.
pub const EXTERNAL_RANGE_MARGIN: f64 = 0.1;

// Keeps the split permutation independent of the sampling sequence.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: file is empty (no header)")]
    Empty { origin: String },
    #[error("{origin}: missing column `{column}` (mapped to {field})")]
    MissingColumn {
        origin: String,
        column: String,
        field: &'static str,
    },
    #[error("{origin}: line {line}, column `{column}`: `{value}` is not a finite number")]
    NonNumeric {
        origin: String,
        line: u64,
        column: String,
        value: String,
    },
    #[error("{origin}: line {line}: {message}")]
    Malformed {
        origin: String,
        line: u64,
        message: String,
    },
    #[error("{origin}: {} row(s) out of range: {}", rows.len(), join(rows))]
    OutOfRange {
        origin: String,
        rows: Vec<RangeViolation>,
    },
    #[error("{origin}: line {line}: outputs violate t_max >= t_min or non-negative currents")]
    InvalidResponse { origin: String, line: u64 },
    #[error("invalid column map: {0}")]
    ColumnMap(String),
    #[error("sampling ranges must be finite with lo < hi")]
    InvalidRanges,
    #[error("campaign size must be at least 1")]
    EmptyCampaign,
    #[error("campaign aborted: {redraws} re-draws for {n} points exceeds the {limit_pct}% limit; last failure: {last}")]
    CampaignAborted {
        n: usize,
        redraws: usize,
        limit_pct: f64,
        last: PhysicsError,
    },
    #[error("train count {train} exceeds dataset size {n}")]
    SplitSize { train: usize, n: usize },
}

fn join(rows: &[RangeViolation]) -> String {
    const SHOWN: usize = 10;
    let mut s = rows
        .iter()
        .take(SHOWN)
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    if rows.len() > SHOWN {
        s.push_str(&format!("; ... {} more", rows.len() - SHOWN));
    }
    s
}

/// One input value of an external row outside the accepted box.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeViolation {
    /// 1-based line in the file (the header is line 1).
    pub line: u64,
    pub column: &'static str,
    pub value: f64,
    pub accepted: Range,
}

impl fmt::Display for RangeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: {} = {} out of range [{}, {}]",
            self.line, self.column, self.value, self.accepted.lo, self.accepted.hi
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    ReducedModel,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub inputs: OperatingPoint,
    pub outputs: CellResponse,
    pub source: Source,
}

/// Disjoint train/test index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded random partition of `0..n` with `train_count` training indices.
    /// A pure function of its arguments.
    pub fn new(seed: u64, n: usize, train_count: usize) -> Result<Split, DatasetError> {
        if train_count > n {
            return Err(DatasetError::SplitSize { train: train_count, n });
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM);
        idx.shuffle(&mut rng);
        let mut train = idx[..train_count].to_vec();
        let mut test = idx[train_count..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(Split { train, test })
    }
}

/// Training-set size used when none is given: 1500 of every 1764 points,
/// rounded half up. Gives 1500 for 1764 points and keeps a lone point for
/// training.
pub fn default_train_count(n: usize) -> usize {
    ((n as u128 * 1500 + 882) / 1764) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<SamplePoint>,
    pub seed: u64,
    pub split: Split,
}

impl Dataset {
    /// Dataset with the default split drawn from `seed`.
    pub fn new(points: Vec<SamplePoint>, seed: u64) -> Dataset {
        let n = points.len();
        let split = Split::new(seed, n, default_train_count(n)).expect("default split fits");
        Dataset { points, seed, split }
    }

    pub fn with_split(
        points: Vec<SamplePoint>,
        seed: u64,
        train_count: usize,
    ) -> Result<Dataset, DatasetError> {
        let split = Split::new(seed, points.len(), train_count)?;
        Ok(Dataset { points, seed, split })
    }

    pub fn resplit(&mut self, seed: u64, train_count: usize) -> Result<(), DatasetError> {
        self.split = Split::new(seed, self.points.len(), train_count)?;
        self.seed = seed;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn train(&self) -> impl Iterator<Item = &SamplePoint> + '_ {
        self.split.train.iter().map(move |&i| &self.points[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &SamplePoint> + '_ {
        self.split.test.iter().map(move |&i| &self.points[i])
    }
}

fn draw(rng: &mut ChaCha8Rng, ranges: &InputRanges) -> OperatingPoint {
    let t_fur = ranges.t_fur.lerp(rng.gen());
    let q_air = ranges.q_air.lerp(rng.gen());
    let q_st = ranges.q_st.lerp(rng.gen());
    let v_cell = ranges.v_cell.lerp(rng.gen());
    OperatingPoint::new(t_fur, q_air, q_st, v_cell)
}

/// Draws `n` operating points uniformly from `ranges` and simulates each.
///
/// Points whose simulation fails are replaced by fresh draws, in index
/// order, so the result depends only on `(n, ranges, seed, params)`.
pub fn sample_campaign(
    n: usize,
    ranges: &InputRanges,
    seed: u64,
    params: &CellParameters,
) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::EmptyCampaign);
    }
    if !ranges.is_valid() {
        return Err(DatasetError::InvalidRanges);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs: Vec<OperatingPoint> = (0..n).map(|_| draw(&mut rng, ranges)).collect();
    let mut outputs: Vec<Option<CellResponse>> = vec![None; n];
    let mut pending: Vec<usize> = (0..n).collect();
    let mut redraws = 0usize;
    loop {
        let results = par::map(&pending, |&k| {
            simulate_cell(&inputs[k], params).and_then(|r| {
                if r.is_consistent() {
                    Ok(r)
                } else {
                    Err(PhysicsError::OperatingPoint(format!("inconsistent response {r:?}")))
                }
            })
        });
        let mut failed = Vec::new();
        let mut last = None;
        for (&k, r) in pending.iter().zip(results) {
            match r {
                Ok(r) => outputs[k] = Some(r),
                Err(e) => {
                    log::debug!("campaign point {k} failed at {:?}: {e}", inputs[k]);
                    failed.push(k);
                    last = Some(e);
                }
            }
        }
        if failed.is_empty() {
            break;
        }
        redraws += failed.len();
        if redraws as f64 > MAX_REDRAW_FRACTION * n as f64 {
            return Err(DatasetError::CampaignAborted {
                n,
                redraws,
                limit_pct: 100.0 * MAX_REDRAW_FRACTION,
                last: last.expect("at least one failure"),
            });
        }
        for &k in &failed {
            inputs[k] = draw(&mut rng, ranges);
        }
        pending = failed;
    }
    log::info!("campaign of {n} points: {redraws} re-draws");
    let points = inputs
        .into_iter()
        .zip(outputs)
        .map(|(inputs, outputs)| SamplePoint {
            inputs,
            outputs: outputs.expect("every point simulated"),
            source: Source::ReducedModel,
        })
        .collect();
    Ok(Dataset::new(points, seed))
}

/// File column name for each canonical field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    columns: [String; 9],
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::identity()
    }
}

impl ColumnMap {
    pub fn identity() -> ColumnMap {
        ColumnMap {
            columns: CANONICAL_HEADER.map(str::to_owned),
        }
    }

    /// Parses `field=column,...`. Fields may be given by canonical header
    /// name (`t_fur_C`) or short name (`t_fur`); unmapped fields keep their
    /// canonical column name.
    pub fn parse(spec: &str) -> Result<ColumnMap, DatasetError> {
        let mut map = ColumnMap::identity();
        let mut seen = [false; 9];
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (field, column) = item
                .split_once('=')
                .ok_or_else(|| DatasetError::ColumnMap(format!("`{item}` is not field=column")))?;
            let (field, column) = (field.trim(), column.trim());
            let k = CANONICAL_HEADER
                .iter()
                .position(|&c| c == field)
                .or_else(|| SHORT_NAMES.iter().position(|&c| c == field))
                .ok_or_else(|| DatasetError::ColumnMap(format!("unknown field `{field}`")))?;
            if column.is_empty() {
                return Err(DatasetError::ColumnMap(format!("empty column name for `{field}`")));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(DatasetError::ColumnMap(format!("field `{field}` mapped twice")));
            }
            map.columns[k] = column.to_owned();
        }
        Ok(map)
    }

    pub fn column(&self, field: usize) -> &str {
        &self.columns[field]
    }
}

/// Loads an external CSV file. See [`read_external`].
pub fn load_external(path: &Path, map: &ColumnMap) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_external(file, &path.display().to_string(), map)
}

/// Reads a CSV dataset whose columns are located through `map`.
///
/// Rows whose inputs fall more than [`EXTERNAL_RANGE_MARGIN`] outside the
/// training box are rejected; all offending rows are reported together.
/// The result carries the default split with seed 0.
pub fn read_external<R: Read>(
    reader: R,
    origin: &str,
    map: &ColumnMap,
) -> Result<Dataset, DatasetError> {
    let origin = origin.to_owned();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let malformed = |e: csv::Error, origin: &str| DatasetError::Malformed {
        origin: origin.to_owned(),
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let header = match records.next() {
        None => return Err(DatasetError::Empty { origin }),
        Some(r) => r.map_err(|e| malformed(e, &origin))?,
    };
    if header.iter().all(|h| h.trim().is_empty()) {
        return Err(DatasetError::Empty { origin });
    }
    let mut index = [0usize; 9];
    for (k, slot) in index.iter_mut().enumerate() {
        let col = map.column(k);
        *slot = header
            .iter()
            .position(|h| h.trim() == col)
            .ok_or_else(|| DatasetError::MissingColumn {
                origin: origin.clone(),
                column: col.to_owned(),
                field: CANONICAL_HEADER[k],
            })?;
    }
    let accepted = InputRanges::DOMAIN.widened(EXTERNAL_RANGE_MARGIN).to_array();
    let mut points = Vec::new();
    let mut violations = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| malformed(e, &origin))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let mut v = [0.0f64; 9];
        for k in 0..9 {
            let cell = rec.get(index[k]).unwrap_or("").trim();
            v[k] = cell
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| DatasetError::NonNumeric {
                    origin: origin.clone(),
                    line,
                    column: map.column(k).to_owned(),
                    value: cell.to_owned(),
                })?;
        }
        for k in 0..4 {
            if !accepted[k].contains(v[k]) {
                violations.push(RangeViolation {
                    line,
                    column: CANONICAL_HEADER[k],
                    value: v[k],
                    accepted: accepted[k],
                });
            }
        }
        let outputs = CellResponse::from_array([v[4], v[5], v[6], v[7], v[8]]);
        if !outputs.is_consistent() {
            return Err(DatasetError::InvalidResponse { origin, line });
        }
        points.push(SamplePoint {
            inputs: OperatingPoint::new(v[0], v[1], v[2], v[3]),
            outputs,
            source: Source::External,
        });
    }
    if !violations.is_empty() {
        return Err(DatasetError::OutOfRange {
            origin,
            rows: violations,
        });
    }
    Ok(Dataset::new(points, 0))
}

/// Writes `ds` in the canonical schema.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(CANONICAL_HEADER)?;
    for p in &ds.points {
        let row = p
            .inputs
            .to_array()
            .into_iter()
            .chain(p.outputs.to_array())
            .map(|x| x.to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source: std::io::Error| DatasetError::Io {
        path: path.to_owned(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_csv(ds, std::io::BufWriter::new(file)).map_err(|e| io_err(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(t: f64) -> SamplePoint {
        SamplePoint {
            inputs: OperatingPoint::new(t, 170.0, 85.0, 1.35),
            outputs: CellResponse::from_array([t + 1.0, t, 1.0, 0.9, 0.8]),
            source: Source::ReducedModel,
        }
    }

    #[test]
    fn default_split_sizes() {
        assert_eq!(default_train_count(1764), 1500);
        assert_eq!(default_train_count(1), 1);
        assert_eq!(default_train_count(0), 0);
        let ds = Dataset::new(vec![point(675.0)], 3);
        assert_eq!(ds.split.train, vec![0]);
        assert!(ds.split.test.is_empty());
    }

    #[test]
    fn split_is_a_pure_partition() {
        let a = Split::new(7, 1764, 1500).unwrap();
        assert_eq!(a, Split::new(7, 1764, 1500).unwrap());
        assert_ne!(a, Split::new(8, 1764, 1500).unwrap());
        assert_eq!((a.train.len(), a.test.len()), (1500, 264));
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1764).collect::<Vec<_>>());
        assert!(matches!(Split::new(0, 3, 4), Err(DatasetError::SplitSize { .. })));
    }

    #[test]
    fn column_map_parsing() {
        let m = ColumnMap::parse("t_fur=T_fur, i_down_A = I3").unwrap();
        assert_eq!(m.column(0), "T_fur");
        assert_eq!(m.column(8), "I3");
        assert_eq!(m.column(1), "q_air_sccm");
        assert!(ColumnMap::parse("t_fur=a,t_fur_C=b").is_err());
        assert!(ColumnMap::parse("pressure=p").is_err());
        assert!(ColumnMap::parse("t_fur").is_err());
        assert_eq!(ColumnMap::parse("").unwrap(), ColumnMap::identity());
    }

    #[test]
    fn reader_errors_are_distinct_and_located() {
        let m = ColumnMap::identity();
        let hdr = CANONICAL_HEADER.join(",");
        let e = read_external("".as_bytes(), "mem", &m).unwrap_err();
        assert!(matches!(e, DatasetError::Empty { .. }));

        let e = read_external("t_fur_C,q_air_sccm\n1,2\n".as_bytes(), "mem", &m).unwrap_err();
        assert!(matches!(&e, DatasetError::MissingColumn { column, .. } if column == "q_st_sccm"), "{e}");

        let text = format!("{hdr}\n675,170,85,1.35,676,675,1,1,1\n675,170,abc,1.35,676,675,1,1,1\n");
        match read_external(text.as_bytes(), "mem", &m).unwrap_err() {
            DatasetError::NonNumeric { line, column, value, .. } => {
                assert_eq!((line, column.as_str(), value.as_str()), (3, "q_st_sccm", "abc"));
            }
            other => panic!("{other}"),
        }

        let text = format!("{hdr}\n1000,170,85,1.35,676,675,1,1,1\n675,170,85,1.35,676,675,1,1,1\n");
        let e = read_external(text.as_bytes(), "mem", &m).unwrap_err();
        assert!(e.to_string().contains("out of range"), "{e}");
        match e {
            DatasetError::OutOfRange { rows, .. } => {
                assert_eq!(rows.len(), 1);
                assert_eq!((rows[0].line, rows[0].column), (2, "t_fur_C"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn margin_accepts_slightly_outside_rows() {
        let hdr = CANONICAL_HEADER.join(",");
        // 760 °C is within 10 % of the 150 K width above 750 °C.
        let text = format!("{hdr}\n760,170,85,1.35,761,760,1,1,1\n");
        let ds = read_external(text.as_bytes(), "mem", &ColumnMap::identity()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.points[0].source, Source::External);
    }

    #[test]
    fn header_only_round_trip() {
        let ds = Dataset::new(vec![], 0);
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), CANONICAL_HEADER.join(",") + "\n");
        let back = read_external(buf.as_slice(), "mem", &ColumnMap::identity()).unwrap();
        assert!(back.is_empty());
    }
}
