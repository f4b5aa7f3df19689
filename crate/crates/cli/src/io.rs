//! Flat-file outputs. CSV tables carry a `# config_hash=` first line and
//! write reals with 17 significant digits; JSON reports are wrapped in an
//! [`Envelope`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use fractal_forms::fields::FiberMetric;
use fractal_forms::topology::{Cell, Edge, Vertex};
use fractal_forms::{CellAddress, CellMeasure, DiscreteFunction, FractalSpec, LevelGraph};

use crate::error::{CliError, CliResult};

pub const HASH_PREFIX: &str = "# config_hash=";

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str) -> CliResult<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Output(format!("bad real `{s}`")))
}

fn parse_int(s: &str) -> CliResult<usize> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Output(format!("bad integer `{s}`")))
}

/// A CSV table as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub config_hash: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Output(format!("missing column `{name}`")))
    }

    pub fn reals(&self, name: &str) -> CliResult<Vec<f64>> {
        let c = self.column(name)?;
        self.rows.iter().map(|r| parse_real(&r[c])).collect()
    }

    pub fn ints(&self, name: &str) -> CliResult<Vec<usize>> {
        let c = self.column(name)?;
        self.rows.iter().map(|r| parse_int(&r[c])).collect()
    }

    pub fn strings(&self, name: &str) -> CliResult<Vec<String>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[c].clone()).collect())
    }
}

pub fn write_table<I>(path: &Path, config_hash: &str, columns: &[&str], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HASH_PREFIX}{config_hash}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(CliError::Output(format!(
                "row has {} fields, table has {} columns",
                row.len(),
                columns.len()
            )));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let config_hash = first
        .trim_end()
        .strip_prefix(HASH_PREFIX)
        .ok_or_else(|| CliError::Output(format!("{}: missing config hash header", path.display())))?
        .to_string();
    let mut r = csv::Reader::from_reader(reader);
    let columns = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(Table {
        config_hash,
        columns,
        rows,
    })
}

/// JSON report wrapper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub command: String,
    pub data: T,
}

pub fn write_json<T: Serialize>(path: &Path, config_hash: &str, command: &str, data: &T) -> CliResult<()> {
    let env = Envelope {
        config_hash: config_hash.to_string(),
        command: command.to_string(),
        data,
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &env)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Envelope<T>> {
    let f = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexName {
    pub cell: String,
    pub corner: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexDump {
    pub index: usize,
    pub addresses: Vec<VertexName>,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDump {
    pub address: String,
    pub corners: Vec<usize>,
}

/// Level graph in plot-ready form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub spec: FractalSpec,
    pub level: usize,
    pub conductance: f64,
    pub boundary: Vec<usize>,
    pub vertices: Vec<VertexDump>,
    /// `[u, v, cell]`.
    pub edges: Vec<[usize; 3]>,
    pub cells: Vec<CellDump>,
}

impl GraphDump {
    pub fn from_graph(g: &LevelGraph) -> Self {
        Self {
            spec: g.spec.clone(),
            level: g.level,
            conductance: g.conductance,
            boundary: g.boundary.clone(),
            vertices: g
                .vertices
                .iter()
                .enumerate()
                .map(|(index, v)| VertexDump {
                    index,
                    addresses: v
                        .addresses
                        .iter()
                        .map(|(w, c)| VertexName {
                            cell: w.to_string(),
                            corner: *c,
                        })
                        .collect(),
                    x: v.coords[0],
                    y: v.coords[1],
                })
                .collect(),
            edges: g.edges.iter().map(|e| [e.u, e.v, e.cell]).collect(),
            cells: g
                .cells
                .iter()
                .map(|c| CellDump {
                    address: c.address.to_string(),
                    corners: c.corners.clone(),
                })
                .collect(),
        }
    }

    pub fn to_graph(&self) -> CliResult<LevelGraph> {
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let addresses = v
                    .addresses
                    .iter()
                    .map(|n| Ok((parse_address(&n.cell)?, n.corner)))
                    .collect::<CliResult<Vec<_>>>()?;
                Ok(Vertex {
                    addresses,
                    coords: [v.x, v.y],
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let cells = self
            .cells
            .iter()
            .map(|c| {
                Ok(Cell {
                    address: parse_address(&c.address)?,
                    corners: c.corners.clone(),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(LevelGraph {
            spec: self.spec.clone(),
            level: self.level,
            vertices,
            cells,
            edges: self
                .edges
                .iter()
                .map(|&[u, v, cell]| Edge { u, v, cell })
                .collect(),
            boundary: self.boundary.clone(),
            conductance: self.conductance,
        })
    }
}

fn parse_address(s: &str) -> CliResult<CellAddress> {
    if s == "-" {
        return Ok(CellAddress::root());
    }
    s.parse().map_err(|e: fractal_forms::Error| CliError::Output(e.to_string()))
}

pub fn write_function_csv(path: &Path, hash: &str, g: &LevelGraph, f: &DiscreteFunction) -> CliResult<()> {
    if f.len() != g.n_vertices() {
        return Err(CliError::Output("function length does not match the graph".into()));
    }
    let rows = g.vertices.iter().enumerate().map(|(i, v)| {
        let (w, c) = v.canonical();
        vec![
            i.to_string(),
            format!("{w}:{c}"),
            fmt_real(v.coords[0]),
            fmt_real(v.coords[1]),
            fmt_real(f.values[i]),
        ]
    });
    write_table(path, hash, &["vertex", "address", "x", "y", "value"], rows)
}

pub fn read_function_csv(path: &Path, level: usize) -> CliResult<(String, DiscreteFunction)> {
    let t = read_table(path)?;
    let idx = t.ints("vertex")?;
    if idx.iter().enumerate().any(|(i, &v)| i != v) {
        return Err(CliError::Output("vertex column is not 0..n".into()));
    }
    let values = t.reals("value")?;
    Ok((t.config_hash, DiscreteFunction::new(level, values)))
}

pub fn write_measure_csv(path: &Path, hash: &str, g: &LevelGraph, m: &CellMeasure) -> CliResult<()> {
    if m.n_cells() != g.n_cells() {
        return Err(CliError::Output("measure does not match the graph".into()));
    }
    let rows = g
        .cells
        .iter()
        .zip(&m.masses)
        .enumerate()
        .map(|(i, (c, x))| vec![i.to_string(), c.address.to_string(), fmt_real(*x)]);
    write_table(path, hash, &["cell", "address", "mass"], rows)
}

pub fn read_measure_csv(path: &Path, level: usize) -> CliResult<(String, Vec<CellAddress>, CellMeasure)> {
    let t = read_table(path)?;
    let addresses = t
        .strings("address")?
        .iter()
        .map(|s| parse_address(s))
        .collect::<CliResult<Vec<_>>>()?;
    let masses = t.reals("mass")?;
    let nonnegative = masses.iter().all(|&x| x >= 0.0);
    let m = CellMeasure::new(level, masses, nonnegative)?;
    Ok((t.config_hash, addresses, m))
}

fn matrix_columns(dim: usize) -> Vec<String> {
    let mut c = Vec::new();
    for i in 0..dim {
        for j in 0..dim {
            c.push(format!("z{}{}", i + 1, j + 1));
        }
    }
    for i in 0..dim {
        c.push(format!("eig{}", i + 1));
    }
    c
}

pub fn write_fiber_metric_csv(path: &Path, hash: &str, g: &LevelGraph, z: &FiberMetric) -> CliResult<()> {
    let mut columns: Vec<String> = vec!["cell".into(), "address".into(), "mass".into()];
    columns.extend(matrix_columns(z.dim));
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let rows = (0..z.n_cells()).map(|w| {
        let mut r = vec![w.to_string(), g.cells[w].address.to_string(), fmt_real(z.masses[w])];
        r.extend(z.matrices[w].iter().map(|x| fmt_real(*x)));
        r.extend(z.eigenvalues[w].iter().map(|x| fmt_real(*x)));
        r
    });
    write_table(path, hash, &cols, rows)
}

pub fn read_fiber_metric_csv(path: &Path, level: usize) -> CliResult<(String, FiberMetric)> {
    let t = read_table(path)?;
    let dim = (1..=8)
        .find(|&d| t.columns.len() == 3 + d * d + d)
        .ok_or_else(|| CliError::Output("cannot infer fiber dimension".into()))?;
    let masses = t.reals("mass")?;
    let cols = matrix_columns(dim);
    let mut matrices = vec![Vec::with_capacity(dim * dim); masses.len()];
    let mut eigenvalues = vec![Vec::with_capacity(dim); masses.len()];
    for (k, name) in cols.iter().enumerate() {
        let values = t.reals(name)?;
        for (w, x) in values.into_iter().enumerate() {
            if k < dim * dim {
                matrices[w].push(x);
            } else {
                eigenvalues[w].push(x);
            }
        }
    }
    Ok((
        t.config_hash,
        FiberMetric {
            level,
            dim,
            masses,
            matrices,
            eigenvalues,
        },
    ))
}
