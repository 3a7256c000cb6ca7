//! File formats: data CSV, TOML configuration, parameter JSON, draw output
//! (long CSV and binary archive) and golden reference tables.
//!
//! Binary archive layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `MFSD` |
//! | 4 | `u32` format version (1) |
//! | 8 | `u64` T |
//! | 8 | `u64` n |
//! | 8 | `u64` n_q |
//! | 8 | `u64` draw count |
//! | 8 each | `f64` values, draw by draw, row by row (`t` outer, variable inner) |

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::BenchConfig;
use crate::error::{Error, Result};
use crate::kalman::InitMode;
use crate::model::aggregation::{build_aggregation, Aggregation, AggregationScheme};
use crate::model::params::VarParams;
use crate::model::pattern::{Calendar, MixedFreqData};
use crate::simsmooth::LatentDraw;
use crate::synth::MissingRecipe;

pub const ARCHIVE_MAGIC: [u8; 4] = *b"MFSD";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationChoice {
    #[default]
    Average,
    SkipSampling,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitChoice {
    #[default]
    Stationary,
    Diffuse,
}

/// `[model]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_m: usize,
    pub n_q: usize,
    pub p: usize,
    #[serde(default)]
    pub aggregation: AggregationChoice,
    /// Weights for `aggregation = "custom"`, most recent month first.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub calendar_offset: usize,
    #[serde(default)]
    pub init: InitChoice,
    #[serde(default)]
    pub kappa: Option<f64>,
}

impl ModelConfig {
    pub fn scheme(&self) -> Result<AggregationScheme> {
        match (self.aggregation, &self.weights) {
            (AggregationChoice::Average, None) => Ok(AggregationScheme::average()),
            (AggregationChoice::SkipSampling, None) => Ok(AggregationScheme::skip_sampling()),
            (AggregationChoice::Custom, Some(w)) => AggregationScheme::custom(w.clone()),
            (AggregationChoice::Custom, None) => Err(Error::Config(
                "model.weights is required for custom aggregation".into(),
            )),
            (_, Some(_)) => Err(Error::Config(
                "model.weights is only allowed with aggregation = \"custom\"".into(),
            )),
        }
    }

    pub fn aggregation(&self) -> Result<Aggregation> {
        build_aggregation(&self.scheme()?, self.n_m, self.n_q, self.p)
    }

    pub fn calendar(&self) -> Calendar {
        Calendar {
            offset: self.calendar_offset,
        }
    }

    pub fn init_mode(&self) -> Result<InitMode> {
        match (self.init, self.kappa) {
            (InitChoice::Stationary, None) => Ok(InitMode::Stationary),
            (InitChoice::Stationary, Some(_)) => Err(Error::Config(
                "model.kappa only applies to init = \"diffuse\"".into(),
            )),
            (InitChoice::Diffuse, k) => {
                let kappa = k.unwrap_or(InitMode::DEFAULT_KAPPA);
                if !(kappa > 0.0 && kappa.is_finite()) {
                    return Err(Error::Config(format!(
                        "model.kappa = {kappa} must be positive"
                    )));
                }
                Ok(InitMode::DiffuseProxy { kappa })
            }
        }
    }

    /// Checks that parameters loaded from elsewhere fit this model.
    pub fn check_params(&self, params: &VarParams) -> Result<()> {
        if (params.n_m(), params.n_q(), params.p()) != (self.n_m, self.n_q, self.p) {
            return Err(Error::Config(format!(
                "parameters have (n_m, n_q, p) = ({}, {}, {}), model config says ({}, {}, {})",
                params.n_m(),
                params.n_q(),
                params.p(),
                self.n_m,
                self.n_q,
                self.p
            )));
        }
        Ok(())
    }
}

fn default_t() -> usize {
    500
}
fn default_radius() -> f64 {
    0.95
}
fn default_burn_in() -> usize {
    100
}

/// `[simulate]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub radius_bound: f64,
    #[serde(default)]
    pub recipe: MissingRecipe,
    /// Trailing missing periods per monthly variable; the two-period recipe
    /// is used when absent.
    #[serde(default)]
    pub edge: Option<Vec<usize>>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            t: default_t(),
            seed: 0,
            radius_bound: default_radius(),
            recipe: MissingRecipe::default(),
            edge: None,
            burn_in: default_burn_in(),
        }
    }
}

/// A configuration file. Every table is optional; each command checks for
/// the ones it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Option<ModelConfig>,
    pub simulate: Option<SimulateConfig>,
    pub bench: Option<BenchConfig>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("missing [model] table".into()))
    }
}

fn parse_cell(s: &str, row: usize, col: &str) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|_| {
        Error::Format(format!(
            "row {row}, column '{col}': cannot parse '{s}' as a number"
        ))
    })
}

/// Reads a data CSV: a header of variable names, one row per month, empty
/// cells (or NaN) for missing values, the last `n_q` columns quarterly.
pub fn read_data_csv<R: Read>(r: R, n_q: usize, calendar: Calendar) -> Result<MixedFreqData> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let names: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    let mut cells = vec![];
    let mut t_len = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != names.len() {
            return Err(Error::Format(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                rec.len(),
                names.len()
            )));
        }
        for (j, f) in rec.iter().enumerate() {
            cells.push(parse_cell(f, i + 1, &names[j])?);
        }
        t_len += 1;
    }
    let values = DMatrix::from_row_slice(t_len, names.len(), &cells);
    MixedFreqData::with_names(names, values, n_q, calendar)
}

pub fn read_data_file(path: &Path, n_q: usize, calendar: Calendar) -> Result<MixedFreqData> {
    let f = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_data_csv(std::io::BufReader::new(f), n_q, calendar)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Writes a panel in the data CSV format; NaN becomes an empty cell. Values
/// use the shortest representation that reads back exactly.
pub fn write_data_csv<W: Write>(w: W, names: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(names).map_err(csv_err)?;
    for t in 0..values.nrows() {
        let row: Vec<String> = values
            .row(t)
            .iter()
            .map(|v| {
                if v.is_nan() {
                    String::new()
                } else {
                    format!("{v}")
                }
            })
            .collect();
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_params_json<W: Write>(w: W, params: &VarParams) -> Result<()> {
    serde_json::to_writer_pretty(w, params).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_params_json<R: Read>(r: R) -> Result<VarParams> {
    serde_json::from_reader(r).map_err(|e| Error::Format(format!("parameters: {e}")))
}

/// Long-format draws: one line per (draw, t, variable).
pub fn write_draws_csv<W: Write>(mut w: W, names: &[String], draws: &[LatentDraw]) -> Result<()> {
    if let Some(d) = draws.first() {
        writeln!(
            w,
            "# backend={} seed={} param_hash={}",
            d.backend, d.seed, d.param_hash
        )?;
    }
    writeln!(w, "draw,t,variable,value")?;
    for d in draws {
        for t in 0..d.x.nrows() {
            for (j, name) in names.iter().enumerate() {
                writeln!(w, "{},{t},{name},{}", d.stream, d.x[(t, j)])?;
            }
        }
    }
    Ok(())
}

/// Draws stored in a binary archive.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub n_q: usize,
    pub draws: Vec<DMatrix<f64>>,
}

impl Archive {
    /// `(T, n)` of every draw, or `None` for an empty archive.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.draws.first().map(|d| d.shape())
    }
}

pub fn write_archive<W: Write>(
    mut w: W,
    t_len: usize,
    n: usize,
    n_q: usize,
    draws: &[DMatrix<f64>],
) -> Result<()> {
    w.write_all(&ARCHIVE_MAGIC)?;
    w.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
    for v in [t_len, n, n_q, draws.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for d in draws {
        if d.shape() != (t_len, n) {
            return Err(Error::Dimension(format!(
                "draw is {}x{}, archive holds {t_len}x{n}",
                d.nrows(),
                d.ncols()
            )));
        }
        for t in 0..t_len {
            for j in 0..n {
                w.write_all(&d[(t, j)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive<R: Read>(mut r: R) -> Result<Archive> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("archive too short for header".into()))?;
    if magic != ARCHIVE_MAGIC {
        return Err(Error::Format("not a draw archive (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != ARCHIVE_VERSION {
        return Err(Error::Format(format!(
            "unsupported archive version {version}"
        )));
    }
    let mut dims = [0usize; 4];
    let mut b8 = [0u8; 8];
    for d in dims.iter_mut() {
        r.read_exact(&mut b8)
            .map_err(|_| Error::Format("archive too short for header".into()))?;
        *d = usize::try_from(u64::from_le_bytes(b8))
            .map_err(|_| Error::Format("archive dimension overflows usize".into()))?;
    }
    let [t_len, n, n_q, count] = dims;
    if n_q > n {
        return Err(Error::Format(format!(
            "archive header has n_q = {n_q} > n = {n}"
        )));
    }
    let mut draws = Vec::with_capacity(count.min(1 << 16));
    let mut buf = vec![0u8; t_len * n * 8];
    for k in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("archive truncated in draw {k}")))?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        draws.push(DMatrix::from_row_slice(t_len, n, &vals));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after the last draw".into()));
    }
    Ok(Archive { n_q, draws })
}

/// SHA-256 of a matrix's shape and value bits.
pub fn matrix_hash(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for t in 0..m.nrows() {
        for j in 0..m.ncols() {
            h.update(m[(t, j)].to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A reference table: `key=value` header comments, column names, values.
#[derive(Debug, Clone, PartialEq)]
pub struct Golden {
    pub meta: BTreeMap<String, String>,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Writes values with 17 significant digits, preceded by one
/// `# key=value` comment line per metadata entry.
pub fn write_golden<W: Write>(mut w: W, g: &Golden) -> Result<()> {
    for (k, v) in &g.meta {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{}", g.names.join(","))?;
    for t in 0..g.values.nrows() {
        let row: Vec<String> = g
            .values
            .row(t)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_golden<R: BufRead>(r: R) -> Result<Golden> {
    let mut meta = BTreeMap::new();
    let mut names: Option<Vec<String>> = None;
    let mut cells = vec![];
    let mut rows = 0;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let (k, v) = c.trim().split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: comment is not key=value", i + 1))
            })?;
            meta.insert(k.trim().to_owned(), v.trim().to_owned());
        } else if let Some(names) = &names {
            let row: Vec<f64> = line
                .split(',')
                .map(|s| parse_cell(s, i + 1, "golden"))
                .collect::<Result<_>>()?;
            if row.len() != names.len() {
                return Err(Error::Format(format!(
                    "line {}: {} values for {} columns",
                    i + 1,
                    row.len(),
                    names.len()
                )));
            }
            cells.extend(row);
            rows += 1;
        } else {
            names = Some(line.split(',').map(|s| s.trim().to_owned()).collect());
        }
    }
    let names = names.ok_or_else(|| Error::Format("golden file has no header".into()))?;
    let values = DMatrix::from_row_slice(rows, names.len(), &cells);
    Ok(Golden {
        meta,
        names,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    use crate::model::params::CovFactors;

    #[test]
    fn data_round_trip_keeps_missing_cells() {
        let v =
            DMatrix::from_row_slice(3, 2, &[1.5, f64::NAN, -2.0, f64::NAN, f64::NAN, 0.1 + 0.2]);
        let names = vec!["a".to_string(), "gdp".to_string()];
        let mut buf = vec![];
        write_data_csv(&mut buf, &names, &v).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1.5,");
        let d = read_data_csv(&buf[..], 1, Calendar::default()).unwrap();
        assert_eq!(d.names(), &names[..]);
        assert_eq!(d.values()[(2, 1)], 0.1 + 0.2);
        assert!(!d.is_observed(2, 0));
        assert!(!d.is_observed(0, 1));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let text = "a,b\n1,2\n3\n";
        assert!(read_data_csv(text.as_bytes(), 1, Calendar::default()).is_err());
        let text = "a,b\n1,x\n";
        let e = read_data_csv(text.as_bytes(), 1, Calendar::default()).unwrap_err();
        assert!(e.to_string().contains("'x'"));
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = Config::parse("[model]\nn_m = 3\nn_q = 1\np = 3\nlags = 2\n").unwrap_err();
        assert!(e.to_string().contains("lags"), "{e}");
        let e = Config::parse("[model]\nn_m = 3\nn_q = 1\n").unwrap_err();
        assert!(e.to_string().contains("p"), "{e}");
        let e = Config::parse("[model]\nn_m = 3\nn_q = 1\np = \"x\"\n").unwrap_err();
        assert!(e.to_string().contains("line 4"), "{e}");
    }

    #[test]
    fn model_config_builds_aggregation_and_init() {
        let c = Config::parse(
            "[model]\nn_m = 2\nn_q = 1\np = 4\naggregation = \"custom\"\nweights = [0.5, 0.5]\ninit = \"diffuse\"\n",
        )
        .unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.aggregation().unwrap().p_q(), 2);
        assert_eq!(m.init_mode().unwrap(), InitMode::diffuse());
        let bad = Config::parse("[model]\nn_m = 2\nn_q = 1\np = 4\nweights = [1.0]\n").unwrap();
        assert!(bad.model().unwrap().scheme().is_err());
    }

    #[test]
    fn params_json_validates() {
        let p = VarParams::new(
            1,
            1,
            DVector::from_vec(vec![0.1, 0.2]),
            vec![DMatrix::identity(2, 2) * 0.5],
            CovFactors::Constant(DMatrix::identity(2, 2)),
        )
        .unwrap();
        let mut buf = vec![];
        write_params_json(&mut buf, &p).unwrap();
        assert_eq!(read_params_json(&buf[..]).unwrap(), p);
        let text = String::from_utf8(buf).unwrap().replacen("1.0", "-1.0", 1);
        assert!(read_params_json(text.as_bytes()).is_err());
    }

    #[test]
    fn archive_round_trip_and_corruption() {
        let draws = vec![
            DMatrix::from_fn(4, 3, |i, j| i as f64 - 0.25 * j as f64),
            DMatrix::from_element(4, 3, f64::MIN_POSITIVE),
        ];
        let mut buf = vec![];
        write_archive(&mut buf, 4, 3, 1, &draws).unwrap();
        assert_eq!(buf.len(), 40 + 2 * 12 * 8);
        assert_eq!(&buf[..4], b"MFSD");
        let a = read_archive(&buf[..]).unwrap();
        assert_eq!(a.draws, draws);
        assert_eq!(a.n_q, 1);
        assert!(read_archive(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_archive(&extra[..]).is_err());
        buf[0] = b'X';
        assert!(read_archive(&buf[..]).is_err());
    }

    #[test]
    fn empty_archive_is_valid() {
        let mut buf = vec![];
        write_archive(&mut buf, 10, 2, 1, &[]).unwrap();
        let a = read_archive(&buf[..]).unwrap();
        assert!(a.draws.is_empty());
        assert_eq!(a.shape(), None);
    }

    #[test]
    fn golden_round_trip_is_exact() {
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), "7".into());
        let g = Golden {
            meta,
            names: vec!["x".into(), "y".into()],
            values: DMatrix::from_row_slice(
                2,
                2,
                &[1.0 / 3.0, -1e-300, std::f64::consts::PI, 12345.678901234567],
            ),
        };
        let mut buf = vec![];
        write_golden(&mut buf, &g).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("# seed=7\nx,y\n"));
        assert_eq!(read_golden(&buf[..]).unwrap(), g);
    }
}
