//! Cycle-level measurement data: ingest, labels and train/test manifests.
//!
//! Measurements come from delimited text with a header row. A [`Schema`]
//! maps the five required roles to column names, so exports from any tool can
//! be read without rewriting them. Within each cycle the samples are sorted by
//! time at ingest; everything downstream assumes that order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measurement point inside a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub voltage: f64,
    pub capacity: f64,
}

/// Ground-truth class of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Inlier,
    Outlier,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Inlier => 0,
            Label::Outlier => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cell_id: String,
    pub cycle_index: u32,
    pub samples: Vec<Sample>,
    pub label: Option<Label>,
}

impl CycleRecord {
    pub fn voltages(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.voltage).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.capacity).collect()
    }

    pub fn max_capacity(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.capacity)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Column names for the five measurement roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub cell_id: String,
    pub cycle_index: String,
    pub time: String,
    pub voltage: String,
    pub capacity: String,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            cell_id: "cell_id".into(),
            cycle_index: "cycle_index".into(),
            time: "time_s".into(),
            voltage: "voltage_v".into(),
            capacity: "capacity_ah".into(),
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub source: PathBuf,
    pub schema: Schema,
}

/// Immutable collection of cycles, grouped by cell and ordered by cycle
/// index. `(cell_id, cycle_index)` is unique by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleStore {
    cells: BTreeMap<String, Vec<CycleRecord>>,
    pub provenance: Option<Provenance>,
}

impl CycleStore {
    /// Builds a store from loose records. Records are grouped by cell and
    /// sorted by cycle; samples are sorted by time.
    pub fn from_records(records: impl IntoIterator<Item = CycleRecord>) -> Result<Self> {
        let mut cells: BTreeMap<String, BTreeMap<u32, CycleRecord>> = BTreeMap::new();
        for mut rec in records {
            if rec.samples.is_empty() {
                return Err(Error::EmptyInput(format!(
                    "cycle {} of cell `{}` has no samples",
                    rec.cycle_index, rec.cell_id
                )));
            }
            rec.samples.sort_by(|a, b| a.time.total_cmp(&b.time));
            let cell = cells.entry(rec.cell_id.clone()).or_default();
            if cell.contains_key(&rec.cycle_index) {
                return Err(Error::Manifest(format!(
                    "duplicate cycle {} in cell `{}`",
                    rec.cycle_index, rec.cell_id
                )));
            }
            cell.insert(rec.cycle_index, rec);
        }
        Ok(CycleStore {
            cells: cells
                .into_iter()
                .map(|(k, v)| (k, v.into_values().collect()))
                .collect(),
            provenance: None,
        })
    }

    pub fn cell_ids(&self) -> impl Iterator<Item = &str> {
        self.cells.keys().map(String::as_str)
    }

    pub fn cell(&self, id: &str) -> Option<&[CycleRecord]> {
        self.cells.get(id).map(Vec::as_slice)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&str, &[CycleRecord])> {
        self.cells.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn records(&self) -> impl Iterator<Item = &CycleRecord> {
        self.cells.values().flatten()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_records(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Per-cycle labels of a cell as 0/1, or `None` when the cell is
    /// unlabeled.
    pub fn labels_of(&self, id: &str) -> Option<Vec<u8>> {
        let cell = self.cells.get(id)?;
        cell.iter()
            .map(|r| r.label.map(Label::as_u8))
            .collect::<Option<Vec<_>>>()
    }
}

fn column_index(headers: &csv::StringRecord, role: &'static str, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn {
            role,
            column: name.to_string(),
        })
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    row: usize,
    column: &str,
) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("");
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a measurement file. Row numbers in parse errors count data rows
/// from 1 (the header is not counted).
pub fn ingest_cycles(path: impl AsRef<Path>, schema: &Schema) -> Result<CycleStore> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut store = ingest_reader(file, schema, path)?;
    store.provenance = Some(Provenance {
        source: path.to_path_buf(),
        schema: schema.clone(),
    });
    Ok(store)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &Schema, origin: &Path) -> Result<CycleStore> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(origin))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyInput(origin.display().to_string()));
    }
    let i_cell = column_index(&headers, "cell_id", &schema.cell_id)?;
    let i_cycle = column_index(&headers, "cycle_index", &schema.cycle_index)?;
    let i_time = column_index(&headers, "time", &schema.time)?;
    let i_v = column_index(&headers, "voltage", &schema.voltage)?;
    let i_q = column_index(&headers, "capacity", &schema.capacity)?;

    let mut groups: BTreeMap<(String, u32), Vec<Sample>> = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(origin))?;
        let row = n + 1;
        let cell = rec.get(i_cell).unwrap_or("").trim().to_string();
        if cell.is_empty() {
            return Err(Error::Parse {
                row,
                column: schema.cell_id.clone(),
                value: String::new(),
            });
        }
        let cycle: u32 = parse_field(&rec, i_cycle, row, &schema.cycle_index)?;
        let time: f64 = parse_field(&rec, i_time, row, &schema.time)?;
        let voltage: f64 = parse_field(&rec, i_v, row, &schema.voltage)?;
        let capacity: f64 = parse_field(&rec, i_q, row, &schema.capacity)?;
        groups.entry((cell, cycle)).or_default().push(Sample {
            time,
            voltage,
            capacity,
        });
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput(origin.display().to_string()));
    }
    CycleStore::from_records(groups.into_iter().map(|((cell_id, cycle_index), samples)| {
        CycleRecord {
            cell_id,
            cycle_index,
            samples,
            label: None,
        }
    }))
}

/// Writes the store in the measurement format read by [`ingest_cycles`].
pub fn write_measurements<W: Write>(store: &CycleStore, schema: &Schema, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(schema.delimiter)
        .from_writer(out);
    let path = Path::new("<measurements>");
    w.write_record([
        &schema.cell_id,
        &schema.cycle_index,
        &schema.time,
        &schema.voltage,
        &schema.capacity,
    ])
    .map_err(csv_err(path))?;
    for rec in store.records() {
        for s in &rec.samples {
            w.write_record([
                rec.cell_id.clone(),
                rec.cycle_index.to_string(),
                s.time.to_string(),
                s.voltage.to_string(),
                s.capacity.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Outlier cycles per cell.
pub type LabelMap = BTreeMap<String, BTreeSet<u32>>;

/// Reads a `cell_id,cycle_index` file listing outlier cycles.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels_from(file, path)
}

pub fn read_labels_from<R: Read>(reader: R, origin: &Path) -> Result<LabelMap> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(origin))?.clone();
    let i_cell = column_index(&headers, "cell_id", "cell_id")?;
    let i_cycle = column_index(&headers, "cycle_index", "cycle_index")?;
    let mut map = LabelMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(origin))?;
        let cell = rec.get(i_cell).unwrap_or("").trim().to_string();
        let cycle: u32 = parse_field(&rec, i_cycle, n + 1, "cycle_index")?;
        map.entry(cell).or_default().insert(cycle);
    }
    Ok(map)
}

pub fn write_labels<W: Write>(labels: &LabelMap, out: W) -> Result<()> {
    let path = Path::new("<labels>");
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "cycle_index"])
        .map_err(csv_err(path))?;
    for (cell, cycles) in labels {
        for c in cycles {
            w.write_record([cell.clone(), c.to_string()])
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Marks listed cycles as outliers and every other cycle of a labeled cell as
/// inlier. Cells absent from `labels` are left untouched.
pub fn attach_labels(store: &CycleStore, labels: &LabelMap) -> Result<CycleStore> {
    for (cell, cycles) in labels {
        let records = store
            .cells
            .get(cell)
            .ok_or_else(|| Error::UnknownCycle {
                cell: cell.clone(),
                cycle: cycles.iter().next().copied().unwrap_or(0),
            })?;
        for &c in cycles {
            if records.binary_search_by_key(&c, |r| r.cycle_index).is_err() {
                return Err(Error::UnknownCycle {
                    cell: cell.clone(),
                    cycle: c,
                });
            }
        }
    }
    let mut out = store.clone();
    for (cell, records) in out.cells.iter_mut() {
        if let Some(outliers) = labels.get(cell) {
            for r in records {
                r.label = Some(if outliers.contains(&r.cycle_index) {
                    Label::Outlier
                } else {
                    Label::Inlier
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_cells: BTreeSet<String>,
    pub test_cells: BTreeSet<String>,
}

impl SplitManifest {
    pub fn new<S: Into<String>>(
        train: impl IntoIterator<Item = S>,
        test: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let m = SplitManifest {
            train_cells: train.into_iter().map(Into::into).collect(),
            test_cells: test.into_iter().map(Into::into).collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(dup) = self.train_cells.intersection(&self.test_cells).next() {
            return Err(Error::Manifest(format!(
                "cell `{dup}` is listed in both train and test"
            )));
        }
        Ok(())
    }

    /// Train cells 1, 2, 5, 6 and test cells 7, 8, 9, 10 of the solid-state
    /// benchmark, named `Cell-<n>`.
    pub fn tohoku() -> Self {
        let name = |i: u32| format!("Cell-{i}");
        SplitManifest {
            train_cells: [1, 2, 5, 6].into_iter().map(name).collect(),
            test_cells: [7, 8, 9, 10].into_iter().map(name).collect(),
        }
    }
}

/// Reads a `cell_id,role` manifest with roles `train` or `test`.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<SplitManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest_from(file, path)
}

pub fn read_manifest_from<R: Read>(reader: R, origin: &Path) -> Result<SplitManifest> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(origin))?.clone();
    let i_cell = column_index(&headers, "cell_id", "cell_id")?;
    let i_role = column_index(&headers, "role", "role")?;
    let mut m = SplitManifest::default();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(origin))?;
        let cell = rec.get(i_cell).unwrap_or("").trim().to_string();
        match rec.get(i_role).unwrap_or("").trim() {
            "train" => m.train_cells.insert(cell),
            "test" => m.test_cells.insert(cell),
            other => {
                return Err(Error::Parse {
                    row: n + 1,
                    column: "role".into(),
                    value: other.to_string(),
                })
            }
        };
    }
    m.validate()?;
    Ok(m)
}

/// Partitions the store by cell into `(train, test)`.
pub fn split_train_test(
    store: &CycleStore,
    manifest: &SplitManifest,
) -> Result<(CycleStore, CycleStore)> {
    manifest.validate()?;
    for cell in manifest.train_cells.iter().chain(&manifest.test_cells) {
        if !store.cells.contains_key(cell) {
            return Err(Error::UnknownCell(cell.clone()));
        }
    }
    let pick = |set: &BTreeSet<String>| CycleStore {
        cells: store
            .cells
            .iter()
            .filter(|(k, _)| set.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        provenance: store.provenance.clone(),
    };
    Ok((pick(&manifest.train_cells), pick(&manifest.test_cells)))
}
