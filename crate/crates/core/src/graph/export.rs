use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, GraphVariant};
use crate::error::{Error, Result};
use crate::store::write_atomic;

/// Provenance written next to an exported edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeListMeta {
    pub variant: GraphVariant,
    pub num_nodes: usize,
    pub undirected_edges: usize,
    pub multigraph: bool,
    pub parent_hash: String,
    pub content_hash: String,
    pub builder: serde_json::Value,
    pub seed: Option<u64>,
}

pub fn meta_path(edge_list: &Path) -> PathBuf {
    let mut s = edge_list.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes `u v` per undirected edge (dense indices, `u < v`) and a JSON
/// sidecar at `<path>.meta.json`.
pub fn export_edge_list(
    graph: &Graph,
    path: &Path,
    builder: serde_json::Value,
    seed: Option<u64>,
) -> Result<EdgeListMeta> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (u, v) in graph.undirected_edges() {
        writeln!(w, "{u} {v}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = EdgeListMeta {
        variant: graph.variant(),
        num_nodes: graph.num_nodes(),
        undirected_edges: graph.undirected_edge_count(),
        multigraph: graph.is_multigraph(),
        parent_hash: graph.parent_hash().to_string(),
        content_hash: graph.content_hash(),
        builder,
        seed,
    };
    write_atomic(&meta_path(path), &serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

/// Reads an exported edge list back using its sidecar.
pub fn import_edge_list(path: &Path) -> Result<(Graph, EdgeListMeta)> {
    let mp = meta_path(path);
    let meta: EdgeListMeta =
        serde_json::from_slice(&std::fs::read(&mp).map_err(|e| Error::io(&mp, e))?)?;
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::with_capacity(meta.undirected_edges);
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: format!("expected `u v`, got `{line}`"),
        };
        let mut it = line.split_whitespace();
        let u = it
            .next()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(bad)?;
        let v = it
            .next()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(bad)?;
        if it.next().is_some() {
            return Err(bad());
        }
        edges.push((u, v));
    }
    let g = if meta.multigraph {
        Graph::multigraph_from_edges(
            meta.num_nodes,
            &edges,
            meta.variant,
            meta.parent_hash.clone(),
        )?
    } else {
        Graph::from_edges(
            meta.num_nodes,
            &edges,
            meta.variant,
            meta.parent_hash.clone(),
        )?
    };
    if g.content_hash() != meta.content_hash {
        return Err(Error::Integrity(format!(
            "{} does not match its recorded content hash",
            path.display()
        )));
    }
    Ok((g, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_import_round_trip() {
        let g = Graph::multigraph_from_edges(
            4,
            &[(0, 1), (1, 0), (2, 3)],
            GraphVariant::Shuffled,
            "abc",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.edges");
        let meta =
            export_edge_list(&g, &p, serde_json::json!({"kind": "shuffled"}), Some(3)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "0 1\n0 1\n2 3\n");
        let (back, m2) = import_edge_list(&p).unwrap();
        assert_eq!(back, g);
        assert_eq!(m2, meta);
    }

    #[test]
    fn tampered_file_is_rejected() {
        let g = Graph::from_edges(3, &[(0, 1)], GraphVariant::Original, "").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.edges");
        export_edge_list(&g, &p, serde_json::Value::Null, None).unwrap();
        std::fs::write(&p, "1 2\n").unwrap();
        assert!(matches!(import_edge_list(&p), Err(Error::Integrity(_))));
        std::fs::write(&p, "1 x\n").unwrap();
        assert!(matches!(
            import_edge_list(&p),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
