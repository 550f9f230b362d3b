use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use csv::{ByteRecord, ReaderBuilder};

use super::{Dataset, Label, MAX_TIMESTEP, MIN_TIMESTEP, NUM_FEATURES};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const FEATURES_FILE: &str = "elliptic_txs_features.csv";
pub const CLASSES_FILE: &str = "elliptic_txs_classes.csv";
pub const EDGES_FILE: &str = "elliptic_txs_edgelist.csv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPaths {
    pub features: PathBuf,
    pub classes: PathBuf,
    pub edges: PathBuf,
}

impl DataPaths {
    /// Locates the three files under `root`, also looking one level down in
    /// `elliptic_bitcoin_dataset/` where the public archive unpacks them.
    pub fn from_root(root: &Path) -> Result<Self> {
        for dir in [root.to_path_buf(), root.join("elliptic_bitcoin_dataset")] {
            let p = Self {
                features: dir.join(FEATURES_FILE),
                classes: dir.join(CLASSES_FILE),
                edges: dir.join(EDGES_FILE),
            };
            if p.features.is_file() && p.classes.is_file() && p.edges.is_file() {
                return Ok(p);
            }
        }
        Err(Error::Config(format!(
            "{} does not contain {FEATURES_FILE}, {CLASSES_FILE} and {EDGES_FILE}",
            root.display()
        )))
    }
}

fn io(p: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(p, e)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field<'a>(rec: &'a ByteRecord, i: usize, path: &Path, line: u64) -> Result<&'a str> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column {i}")))?;
    std::str::from_utf8(raw)
        .map(str::trim)
        .map_err(|_| parse_err(path, line, format!("column {i} is not UTF-8")))
}

fn parse_id(s: &str, path: &Path, line: u64) -> Result<i64> {
    s.parse::<i64>().map_err(|_| {
        parse_err(
            path,
            line,
            format!("transaction id `{s}` is not an integer"),
        )
    })
}

fn records(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .from_reader(f))
}

fn check_header(rdr: &mut csv::Reader<File>, path: &Path, expected: [&str; 2]) -> Result<()> {
    let h = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = h.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("header is {got:?}, expected {:?}", expected),
        ));
    }
    Ok(())
}

/// Reads the three Elliptic CSV files into a densely indexed dataset.
///
/// Node order follows the features file. Edges are deduplicated as
/// unordered pairs.
pub fn load_dataset(
    features_path: &Path,
    classes_path: &Path,
    edges_path: &Path,
) -> Result<Dataset> {
    let width = NUM_FEATURES + 2;

    let mut ids = Vec::new();
    let mut timesteps = Vec::new();
    let mut values = Vec::new();
    let mut rdr = records(features_path, false)?;
    let mut rec = ByteRecord::new();
    loop {
        let more = rdr.read_byte_record(&mut rec).map_err(|e| {
            parse_err(
                features_path,
                e.position().map_or(0, |p| p.line()),
                e.to_string(),
            )
        })?;
        if !more {
            break;
        }
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(
                features_path,
                line,
                format!("expected {width} columns, found {}", rec.len()),
            ));
        }
        ids.push(parse_id(
            field(&rec, 0, features_path, line)?,
            features_path,
            line,
        )?);
        let ts = field(&rec, 1, features_path, line)?;
        let t = ts
            .parse::<f64>()
            .ok()
            .filter(|t| t.fract() == 0.0 && *t >= MIN_TIMESTEP as f64 && *t <= MAX_TIMESTEP as f64)
            .ok_or_else(|| {
                parse_err(
                    features_path,
                    line,
                    format!("timestep `{ts}` is not an integer in 1..=49"),
                )
            })?;
        timesteps.push(t as u8);
        for j in 2..width {
            let s = field(&rec, j, features_path, line)?;
            let x = s
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    parse_err(
                        features_path,
                        line,
                        format!("column {j}: `{s}` is not a finite number"),
                    )
                })?;
            values.push(x);
        }
    }
    let n = ids.len();
    let features = Matrix::new(n, NUM_FEATURES, values)?;

    let mut index_of = std::collections::HashMap::with_capacity(n);
    for (i, &id) in ids.iter().enumerate() {
        if index_of.insert(id, i).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate transaction id {id} in {}",
                features_path.display()
            )));
        }
    }

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut rdr = records(classes_path, true)?;
    check_header(&mut rdr, classes_path, ["txId", "class"])?;
    while rdr.read_byte_record(&mut rec).map_err(|e| {
        parse_err(
            classes_path,
            e.position().map_or(0, |p| p.line()),
            e.to_string(),
        )
    })? {
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(parse_err(
                classes_path,
                line,
                format!("expected 2 columns, found {}", rec.len()),
            ));
        }
        let id = parse_id(field(&rec, 0, classes_path, line)?, classes_path, line)?;
        let label = match field(&rec, 1, classes_path, line)? {
            "1" => Label::Illicit,
            "2" => Label::Licit,
            "unknown" => Label::Unknown,
            other => {
                return Err(parse_err(
                    classes_path,
                    line,
                    format!("unknown class `{other}`"),
                ))
            }
        };
        let i = *index_of.get(&id).ok_or_else(|| {
            Error::Integrity(format!("class row for unknown transaction id {id}"))
        })?;
        if labels[i].replace(label).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate class row for transaction id {id}"
            )));
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| Error::Integrity(format!("transaction id {} has no class row", ids[i])))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut edges = Vec::new();
    let mut rdr = records(edges_path, true)?;
    check_header(&mut rdr, edges_path, ["txId1", "txId2"])?;
    while rdr.read_byte_record(&mut rec).map_err(|e| {
        parse_err(
            edges_path,
            e.position().map_or(0, |p| p.line()),
            e.to_string(),
        )
    })? {
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(parse_err(
                edges_path,
                line,
                format!("expected 2 columns, found {}", rec.len()),
            ));
        }
        let mut end = [0u32; 2];
        for (k, e) in end.iter_mut().enumerate() {
            let id = parse_id(field(&rec, k, edges_path, line)?, edges_path, line)?;
            *e = *index_of.get(&id).ok_or_else(|| {
                Error::Integrity(format!(
                    "edge on line {line} references unknown transaction id {id}"
                ))
            })? as u32;
        }
        edges.push((end[0], end[1]));
    }

    Dataset::new(ids, timesteps, features, labels, edges)
}

/// Writes the dataset back out in the same three-file layout.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DataPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DataPaths {
        features: dir.join(FEATURES_FILE),
        classes: dir.join(CLASSES_FILE),
        edges: dir.join(EDGES_FILE),
    };
    let open = |p: &Path| {
        File::create(p)
            .map(BufWriter::new)
            .map_err(|e| Error::io(p, e))
    };

    let mut w = open(&paths.features)?;
    for i in 0..dataset.num_nodes() {
        write!(w, "{},{}", dataset.external_ids()[i], dataset.timestep(i))
            .map_err(io(&paths.features))?;
        for x in dataset.features().row(i) {
            // Debug formatting is the shortest representation that parses
            // back to the same bits.
            write!(w, ",{x:?}").map_err(io(&paths.features))?;
        }
        writeln!(w).map_err(io(&paths.features))?;
    }
    w.flush().map_err(io(&paths.features))?;

    let mut w = open(&paths.classes)?;
    writeln!(w, "txId,class").map_err(io(&paths.classes))?;
    for i in 0..dataset.num_nodes() {
        let c = match dataset.label(i) {
            Label::Illicit => "1",
            Label::Licit => "2",
            Label::Unknown => "unknown",
        };
        writeln!(w, "{},{c}", dataset.external_ids()[i]).map_err(io(&paths.classes))?;
    }
    w.flush().map_err(io(&paths.classes))?;

    let mut w = open(&paths.edges)?;
    writeln!(w, "txId1,txId2").map_err(io(&paths.edges))?;
    let ids = dataset.external_ids();
    for &(u, v) in dataset.edges() {
        writeln!(w, "{},{}", ids[u as usize], ids[v as usize]).map_err(io(&paths.edges))?;
    }
    w.flush().map_err(io(&paths.edges))?;
    Ok(paths)
}
