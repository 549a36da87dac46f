//! File-based scenario ingestion and persistence.
//!
//! A scenario directory holds three UTF-8 CSV files with header rows and
//! `.` decimal separators: `regions.csv`, `agents.csv`, `substations.csv`.
//! Gzip-compressed variants (`*.csv.gz`) are accepted transparently on
//! read. Floats are written in shortest round-trip form, so save → load is
//! an identity for `f64` scenarios.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::model::{
    Agent, AgentId, Region, RegionId, Scenario, Substation, SubstationId, LANDUSE_CLASSES,
};
use crate::scalar::Scalar;

pub const REGIONS_FILE: &str = "regions.csv";
pub const AGENTS_FILE: &str = "agents.csv";
pub const SUBSTATIONS_FILE: &str = "substations.csv";
pub const TRUTH_FILE: &str = "truth.csv";

const REGION_COLUMNS: [&str; 8] = [
    "id",
    "demand_total",
    "share_res",
    "share_com",
    "share_ind",
    "share_agr",
    "share_oth",
    "area",
];
const AGENT_COLUMNS: [&str; 10] = [
    "id", "x_km", "y_km", "p_res", "p_com", "p_ind", "p_agr", "p_oth", "ntl", "region_id",
];
const SUBSTATION_COLUMNS: [&str; 5] = ["id", "x_km", "y_km", "demand_actual", "region_id"];

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Opens `dir/name` or `dir/name.gz`, decompressing by extension.
fn open_table(dir: &Path, name: &str) -> Result<(String, Box<dyn Read>)> {
    let plain = dir.join(name);
    if plain.exists() {
        let file = File::open(&plain).map_err(|e| io_err(&plain, e))?;
        return Ok((name.to_string(), Box::new(file)));
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        let file = File::open(&gz).map_err(|e| io_err(&gz, e))?;
        return Ok((format!("{name}.gz"), Box::new(GzDecoder::new(file))));
    }
    Err(io_err(
        &plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
    ))
}

struct Table {
    file: String,
    header: BTreeMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(dir: &Path, name: &str, required: &[&str]) -> Result<Self> {
        let (file, reader) = open_table(dir, name)?;
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: BTreeMap<String, usize> = csv_reader
            .headers()
            .map_err(|e| Error::Schema {
                file: file.clone(),
                row: 0,
                column: String::new(),
                message: format!("cannot read header: {e}"),
            })?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        for column in required {
            if !header.contains_key(*column) {
                return Err(Error::Schema {
                    file,
                    row: 0,
                    column: (*column).to_string(),
                    message: "missing required column".into(),
                });
            }
        }
        let mut rows = Vec::new();
        for (idx, record) in csv_reader.records().enumerate() {
            rows.push(record.map_err(|e| Error::Schema {
                file: file.clone(),
                row: idx + 1,
                column: String::new(),
                message: format!("malformed record: {e}"),
            })?);
        }
        Ok(Self { file, header, rows })
    }

    fn field<'a>(&'a self, row: usize, column: &str) -> Result<&'a str> {
        let idx = self.header[column];
        self.rows[row].get(idx).ok_or_else(|| Error::Schema {
            file: self.file.clone(),
            row: row + 1,
            column: column.to_string(),
            message: "missing value".into(),
        })
    }

    fn parse_u64(&self, row: usize, column: &str) -> Result<u64> {
        let raw = self.field(row, column)?;
        raw.parse().map_err(|_| Error::Schema {
            file: self.file.clone(),
            row: row + 1,
            column: column.to_string(),
            message: format!("expected an integer, got `{raw}`"),
        })
    }

    fn parse_number<F: Scalar>(&self, row: usize, column: &str) -> Result<F> {
        let raw = self.field(row, column)?;
        let value: f64 = raw.parse().map_err(|_| Error::Schema {
            file: self.file.clone(),
            row: row + 1,
            column: column.to_string(),
            message: format!("expected a number, got `{raw}`"),
        })?;
        if !value.is_finite() {
            return Err(Error::Schema {
                file: self.file.clone(),
                row: row + 1,
                column: column.to_string(),
                message: "value must be finite".into(),
            });
        }
        Ok(F::from_f64_lossy(value))
    }

    fn parse_nonnegative<F: Scalar>(&self, row: usize, column: &str) -> Result<F> {
        let value: F = self.parse_number(row, column)?;
        if value < F::zero() {
            return Err(Error::Schema {
                file: self.file.clone(),
                row: row + 1,
                column: column.to_string(),
                message: "value must be >= 0".into(),
            });
        }
        Ok(value)
    }

    fn parse_positive<F: Scalar>(&self, row: usize, column: &str) -> Result<F> {
        let value: F = self.parse_number(row, column)?;
        if value <= F::zero() {
            return Err(Error::Schema {
                file: self.file.clone(),
                row: row + 1,
                column: column.to_string(),
                message: "value must be > 0".into(),
            });
        }
        Ok(value)
    }
}

/// Loads a scenario from a directory and validates it.
pub fn load_scenario<F: Scalar>(dir: &Path) -> Result<Scenario<F>> {
    let table = Table::read(dir, REGIONS_FILE, &REGION_COLUMNS)?;
    let mut regions = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        regions.push(Region {
            id: RegionId(table.parse_u64(row, "id")?),
            demand_total: table.parse_positive(row, "demand_total")?,
            consumption_shares: [
                table.parse_nonnegative(row, "share_res")?,
                table.parse_nonnegative(row, "share_com")?,
                table.parse_nonnegative(row, "share_ind")?,
                table.parse_nonnegative(row, "share_agr")?,
                table.parse_nonnegative(row, "share_oth")?,
            ],
            area: table.parse_positive(row, "area")?,
        });
    }

    let table = Table::read(dir, AGENTS_FILE, &AGENT_COLUMNS)?;
    let mut agents = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        agents.push(Agent {
            id: AgentId(table.parse_u64(row, "id")?),
            x: table.parse_number(row, "x_km")?,
            y: table.parse_number(row, "y_km")?,
            landuse: [
                table.parse_nonnegative(row, "p_res")?,
                table.parse_nonnegative(row, "p_com")?,
                table.parse_nonnegative(row, "p_ind")?,
                table.parse_nonnegative(row, "p_agr")?,
                table.parse_nonnegative(row, "p_oth")?,
            ],
            ntl: table.parse_nonnegative(row, "ntl")?,
            region_id: RegionId(table.parse_u64(row, "region_id")?),
        });
    }

    let table = Table::read(dir, SUBSTATIONS_FILE, &SUBSTATION_COLUMNS)?;
    let mut substations = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        substations.push(Substation {
            id: SubstationId(table.parse_u64(row, "id")?),
            x: table.parse_number(row, "x_km")?,
            y: table.parse_number(row, "y_km")?,
            demand_actual: table.parse_nonnegative(row, "demand_actual")?,
            region_id: RegionId(table.parse_u64(row, "region_id")?),
        });
    }

    let scenario = Scenario {
        regions,
        agents,
        substations,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn create_sink(dir: &Path, name: &str, gzip: bool) -> Result<(PathBuf, Box<dyn Write>)> {
    if gzip {
        let path = dir.join(format!("{name}.gz"));
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        Ok((
            path,
            Box::new(GzEncoder::new(file, Compression::default())),
        ))
    } else {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        Ok((path, Box::new(file)))
    }
}

fn fmt<F: Scalar>(value: F) -> String {
    format!("{}", value.to_f64_lossy())
}

/// Writes a scenario to a directory, optionally gzip-compressed.
pub fn save_scenario<F: Scalar>(scenario: &Scenario<F>, dir: &Path, gzip: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let (path, sink) = create_sink(dir, REGIONS_FILE, gzip)?;
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(REGION_COLUMNS)
        .and_then(|_| {
            for region in &scenario.regions {
                writer.write_record([
                    region.id.to_string(),
                    fmt(region.demand_total),
                    fmt(region.consumption_shares[0]),
                    fmt(region.consumption_shares[1]),
                    fmt(region.consumption_shares[2]),
                    fmt(region.consumption_shares[3]),
                    fmt(region.consumption_shares[4]),
                    fmt(region.area),
                ])?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| io_err(&path, std::io::Error::other(e)))?;

    let (path, sink) = create_sink(dir, AGENTS_FILE, gzip)?;
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(AGENT_COLUMNS)
        .and_then(|_| {
            for agent in &scenario.agents {
                let mut record = vec![agent.id.to_string(), fmt(agent.x), fmt(agent.y)];
                for k in 0..LANDUSE_CLASSES {
                    record.push(fmt(agent.landuse[k]));
                }
                record.push(fmt(agent.ntl));
                record.push(agent.region_id.to_string());
                writer.write_record(&record)?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| io_err(&path, std::io::Error::other(e)))?;

    let (path, sink) = create_sink(dir, SUBSTATIONS_FILE, gzip)?;
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(SUBSTATION_COLUMNS)
        .and_then(|_| {
            for substation in &scenario.substations {
                writer.write_record([
                    substation.id.to_string(),
                    fmt(substation.x),
                    fmt(substation.y),
                    fmt(substation.demand_actual),
                    substation.region_id.to_string(),
                ])?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| io_err(&path, std::io::Error::other(e)))?;

    Ok(())
}

/// Writes a per-agent true demand field next to the scenario files.
pub fn save_truth<F: Scalar>(truth: &BTreeMap<AgentId, F>, dir: &Path, gzip: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let (path, sink) = create_sink(dir, TRUTH_FILE, gzip)?;
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(["agent_id", "demand_true"])
        .and_then(|_| {
            for (id, demand) in truth {
                writer.write_record([id.to_string(), fmt(*demand)])?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| io_err(&path, std::io::Error::other(e)))?;
    Ok(())
}

/// Reads a truth file written by [`save_truth`].
pub fn load_truth<F: Scalar>(dir: &Path) -> Result<BTreeMap<AgentId, F>> {
    let table = Table::read(dir, TRUTH_FILE, &["agent_id", "demand_true"])?;
    let mut truth = BTreeMap::new();
    for row in 0..table.rows.len() {
        truth.insert(
            AgentId(table.parse_u64(row, "agent_id")?),
            table.parse_nonnegative(row, "demand_true")?,
        );
    }
    Ok(truth)
}
