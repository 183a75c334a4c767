//! On-disk formats.
//!
//! Binary container: the magic `NLWF`, a little-endian `u32` header length, a
//! JSON header (`shape`, `dtype`, free metadata), then the data as
//! little-endian `f64`. CSV files begin with a `# nlwave-csv v1 <schema>`
//! comment line followed by a column header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::wave_solver::{BoundaryLayout, BoundaryTrace, FieldSolution};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NLWF";
pub const CSV_VERSION: &str = "# nlwave-csv v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub kind: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(default)]
    pub meta: Value,
}

pub fn write_container(path: &Path, header: &ContainerHeader, data: &[f64]) -> Result<()> {
    let expected: usize = header.shape.iter().product();
    if expected != data.len() {
        return Err(Error::Format(format!("shape {:?} does not hold {} values", header.shape, data.len())));
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(ContainerHeader, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{} is not an nlwave container", path.display())));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: ContainerHeader = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    if header.dtype != "f64-le" {
        return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
    }
    let count: usize = header.shape.iter().product();
    let mut bytes = Vec::with_capacity(count * 8);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!("expected {} data bytes, found {}", count * 8, bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, data))
}

pub fn save_field(path: &Path, u: &FieldSolution) -> Result<()> {
    let g = &u.grid;
    let mut shape = vec![g.levels()];
    shape.extend(std::iter::repeat(g.nodes_per_axis()).take(g.space_dim));
    let header = ContainerHeader {
        kind: "field".into(),
        shape,
        dtype: "f64-le".into(),
        meta: serde_json::json!({ "grid": g, "layout": "level-major, axis 0 fastest" }),
    };
    write_container(path, &header, &u.u)
}

pub fn load_field(path: &Path) -> Result<FieldSolution> {
    let (h, data) = read_container(path)?;
    if h.kind != "field" {
        return Err(Error::Format(format!("expected a field container, found {}", h.kind)));
    }
    let grid = serde_json::from_value(h.meta["grid"].clone()).map_err(|e| Error::Format(e.to_string()))?;
    let mut u = FieldSolution::zeros(&grid);
    if u.u.len() != data.len() {
        return Err(Error::Format("field data does not match its grid".into()));
    }
    u.u = data;
    let layout = BoundaryLayout::new(&grid);
    let nodes = grid.num_nodes();
    for k in 0..grid.levels() {
        for (s, &i) in layout.node.iter().enumerate() {
            u.trace.level_mut(k)[s] = u.u[k * nodes + i];
        }
    }
    Ok(u)
}

pub fn save_trace(path: &Path, t: &BoundaryTrace) -> Result<()> {
    let header = ContainerHeader {
        kind: "trace".into(),
        shape: vec![t.grid.levels(), t.slots()],
        dtype: "f64-le".into(),
        meta: serde_json::json!({ "grid": t.grid, "layout": "level-major, faces 2a+s" }),
    };
    write_container(path, &header, &t.values)
}

pub fn load_trace(path: &Path) -> Result<BoundaryTrace> {
    let (h, values) = read_container(path)?;
    if h.kind != "trace" {
        return Err(Error::Format(format!("expected a trace container, found {}", h.kind)));
    }
    let grid = serde_json::from_value(h.meta["grid"].clone()).map_err(|e| Error::Format(e.to_string()))?;
    let t = BoundaryTrace { grid, values };
    if t.values.len() != BoundaryTrace::zeros(&t.grid).values.len() {
        return Err(Error::Format("trace data does not match its grid".into()));
    }
    Ok(t)
}

/// A versioned CSV table.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(schema: &str, columns: &[&str]) -> Self {
        CsvTable { schema: schema.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: vec![] }
    }

    pub fn push<T: ToString>(&mut self, row: &[T]) {
        self.rows.push(row.iter().map(|v| v.to_string()).collect());
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let j =
            self.columns.iter().position(|c| c == name).ok_or_else(|| Error::Format(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| r[j].parse::<f64>().map_err(|e| Error::Format(format!("column {name}: {e}"))))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "{CSV_VERSION} {}", self.schema)?;
        let mut w = csv::Writer::from_writer(f);
        let map = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(&self.columns).map_err(map)?;
        for r in &self.rows {
            w.write_record(r).map_err(map)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut first = String::new();
        r.read_line(&mut first)?;
        let schema = first
            .trim_end()
            .strip_prefix(CSV_VERSION)
            .ok_or_else(|| Error::Format(format!("{} lacks the nlwave-csv header", path.display())))?
            .trim()
            .to_string();
        let mut rd = csv::Reader::from_reader(r);
        let map = |e: csv::Error| Error::Format(e.to_string());
        let columns = rd.headers().map_err(map)?.iter().map(String::from).collect();
        let rows = rd
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(map))
            .collect::<Result<_>>()?;
        Ok(CsvTable { schema, columns, rows })
    }
}

/// Boundary trace as a long CSV table: one row per level and slot.
pub fn trace_table(t: &BoundaryTrace) -> CsvTable {
    let layout = BoundaryLayout::new(&t.grid);
    let n = t.grid.space_dim;
    let mut cols = vec!["t", "face"];
    let names = ["x1", "x2", "x3"];
    cols.extend(&names[..n]);
    cols.push("value");
    let mut table = CsvTable::new("boundary-trace", &cols);
    for k in 0..t.grid.levels() {
        for (s, v) in t.level(k).iter().enumerate() {
            let p = t.grid.point(k, layout.node[s]);
            let mut row = vec![p[0].to_string(), layout.face[s].to_string()];
            row.extend(p[1..=n].iter().map(|x| x.to_string()));
            row.push(v.to_string());
            table.rows.push(row);
        }
    }
    table
}
