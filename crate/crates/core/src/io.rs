//! CSV ingestion and export, and JSON model persistence.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{FaError, Result};
use crate::model::{DataMatrix, FaConfig, FaModel, IterationTrace};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub delimiter: u8,
    /// Scale columns to unit sample variance after centering.
    pub standardize: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: true,
            delimiter: b',',
            standardize: false,
        }
    }
}

/// Reads a numeric table (rows are observations) and returns it centered,
/// and standardized if requested.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FaError::io(path, e))?;
    read_csv(BufReader::new(file), options, &path.display().to_string())
}

/// As [`load_csv`], from any reader. `context` names the source in errors.
pub fn read_csv<R: Read>(reader: R, options: &CsvOptions, context: &str) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .delimiter(options.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |message: String| FaError::Parse {
        context: context.to_string(),
        message,
    };

    let names = if options.has_header {
        let header = rdr.headers().map_err(|e| parse_err(e.to_string()))?;
        Some(header.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };

    let mut width = names.as_ref().map(Vec::len);
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(parse_err(format!(
                "row {} (line {line}) has {} fields, expected {expected}",
                rows + 1,
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(format!(
                    "row {} (line {line}), column {}: '{cell}' is not a number",
                    rows + 1,
                    j + 1
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let p = width.unwrap_or(0);
    if rows == 0 || p == 0 {
        return Err(parse_err("no data rows".to_string()));
    }
    let data = DataMatrix::new(DMatrix::from_row_slice(rows, p, &values), names)?.center();
    if options.standardize {
        data.standardize()
    } else {
        Ok(data)
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| FaError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> FaError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => FaError::io(path, source),
        other => FaError::Parse {
            context: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

/// Writes a matrix as CSV with the given header, values at 17 significant
/// digits.
pub fn write_matrix_csv(path: impl AsRef<Path>, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    if header.len() != m.ncols() {
        return Err(FaError::invalid(format!(
            "{} header names for {} columns",
            header.len(),
            m.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| fmt17(v)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| FaError::io(path, e))
}

/// Writes the data values with their column names as header.
pub fn write_data_csv(path: impl AsRef<Path>, x: &DataMatrix) -> Result<()> {
    write_matrix_csv(path, x.column_names(), x.values())
}

pub const TRACE_COLUMNS: [&str; 5] = ["iter", "tail_sum_over_nminus1", "min_psi2", "max_psi2", "psi2_rel_change"];

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &IterationTrace) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(TRACE_COLUMNS).map_err(|e| csv_error(path, e))?;
    for r in trace.records() {
        w.write_record([
            r.iter.to_string(),
            fmt17(r.tail_sum),
            fmt17(r.min_psi2),
            fmt17(r.max_psi2),
            fmt17(r.psi2_rel_change),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| FaError::io(path, e))
}

/// Configuration as echoed in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub config: FaConfig,
    pub standardize: bool,
}

/// On-disk form of an [`FaModel`]. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub k: usize,
    pub n: usize,
    pub p: usize,
    /// Row-major `p × k`.
    pub lambda: Vec<f64>,
    pub psi2: Vec<f64>,
    pub omega: Vec<f64>,
    pub column_names: Vec<String>,
    pub column_scales: Vec<f64>,
    pub config: ConfigEcho,
    pub trace: IterationTrace,
    pub converged: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl From<&FaModel> for ModelFile {
    fn from(m: &FaModel) -> Self {
        ModelFile {
            schema_version: SCHEMA_VERSION,
            k: m.k(),
            n: m.n_used,
            p: m.p(),
            lambda: m.lambda.transpose().as_slice().to_vec(),
            psi2: m.psi2.as_slice().to_vec(),
            omega: m.omega.as_slice().to_vec(),
            column_names: m.column_names.clone(),
            column_scales: m.column_scales.as_slice().to_vec(),
            config: ConfigEcho {
                config: m.config.clone(),
                standardize: m.standardized,
            },
            trace: m.trace.clone(),
            converged: m.converged,
            warnings: m.warnings.clone(),
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<FaModel> {
        let (p, k) = (self.p, self.k);
        let check = |what: &str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(FaError::Parse {
                    context: "model file".into(),
                    message: format!("{what} has {len} entries, expected {want}"),
                })
            }
        };
        check("lambda", self.lambda.len(), p * k)?;
        check("psi2", self.psi2.len(), p)?;
        check("omega", self.omega.len(), k)?;
        check("column_names", self.column_names.len(), p)?;
        check("column_scales", self.column_scales.len(), p)?;
        Ok(FaModel {
            lambda: DMatrix::from_row_slice(p, k, &self.lambda),
            psi2: DVector::from_vec(self.psi2),
            omega: DVector::from_vec(self.omega),
            n_used: self.n,
            converged: self.converged,
            trace: self.trace,
            column_names: self.column_names,
            column_scales: DVector::from_vec(self.column_scales),
            standardized: self.config.standardize,
            config: self.config.config,
            warnings: self.warnings,
        })
    }
}

/// Pretty JSON with every float written as `d.dddddddddddddddde±x`.
struct Fixed17(PrettyFormatter<'static>);

impl Formatter for Fixed17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes any value as pretty JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| FaError::Numerical(format!("JSON serialization failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn save_model(model: &FaModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_json_string(&ModelFile::from(model))?;
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| FaError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FaModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FaError::io(path, e))?;
    model_from_json(&text, &path.display().to_string())
}

/// Parses a model file's contents. `context` names the source in errors.
pub fn model_from_json(text: &str, context: &str) -> Result<FaModel> {
    let parse_err = |e: serde_json::Error| FaError::Parse {
        context: context.to_string(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| FaError::Parse {
            context: context.to_string(),
            message: "missing integer schema_version".into(),
        })?;
    if found != SCHEMA_VERSION as u64 {
        return Err(FaError::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: SCHEMA_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(parse_err)?;
    file.into_model()
}
