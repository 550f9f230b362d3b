use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use super::{load_dataset, standardize, DataPaths, Dataset, FitScope, Label, ScalerStats};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::store::{ArrayData, ArrayStore};

/// Hash of the three input files' bytes plus the fit scope.
pub fn input_digest(paths: &DataPaths, fit_scope: FitScope) -> Result<String> {
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    for p in [&paths.features, &paths.classes, &paths.edges] {
        let mut f = File::open(p).map_err(|e| Error::io(p, e))?;
        loop {
            let k = f.read(&mut buf).map_err(|e| Error::io(p, e))?;
            if k == 0 {
                break;
            }
            h.update(&buf[..k]);
        }
        // Separator so content cannot shift between files unnoticed.
        h.update([0xff, 0x00]);
    }
    h.update(fit_scope.as_str().as_bytes());
    Ok(hex::encode(h.finalize()))
}

pub fn write_cache(
    path: &Path,
    dataset: &Dataset,
    stats: &ScalerStats,
    digest: &str,
) -> Result<()> {
    let n = dataset.num_nodes();
    let d = dataset.num_features();
    let mut s = ArrayStore::new(json!({
        "kind": "dataset_cache",
        "input_digest": digest,
        "fit_scope": stats.fit_scope,
        "fit_rows": stats.fit_rows,
    }));
    s.insert(
        "external_ids",
        vec![n],
        ArrayData::I64(dataset.external_ids().to_vec()),
    )?;
    s.insert(
        "timesteps",
        vec![n],
        ArrayData::U8(dataset.timesteps().to_vec()),
    )?;
    s.insert(
        "labels",
        vec![n],
        ArrayData::U8(
            dataset
                .labels()
                .iter()
                .map(|l| l.class_index() as u8)
                .collect(),
        ),
    )?;
    s.insert(
        "features",
        vec![n, d],
        ArrayData::F64(dataset.features().data().to_vec()),
    )?;
    let edges: Vec<u32> = dataset.edges().iter().flat_map(|&(u, v)| [u, v]).collect();
    s.insert(
        "edges",
        vec![dataset.edges().len(), 2],
        ArrayData::U32(edges),
    )?;
    s.insert("scaler_mean", vec![d], ArrayData::F64(stats.mean.clone()))?;
    s.insert("scaler_std", vec![d], ArrayData::F64(stats.std.clone()))?;
    s.write(path)
}

pub fn read_cache(path: &Path) -> Result<(Dataset, ScalerStats, String)> {
    let s = ArrayStore::read(path)?;
    if s.meta.get("kind").and_then(|k| k.as_str()) != Some("dataset_cache") {
        return Err(Error::Format(format!(
            "{} is not a dataset cache",
            path.display()
        )));
    }
    let digest = s.meta["input_digest"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    let fit_scope: FitScope = serde_json::from_value(s.meta["fit_scope"].clone())?;
    let fit_rows = s.meta["fit_rows"].as_u64().unwrap_or(0) as usize;
    let shape = &s.get("features")?.shape;
    let (n, d) = match shape.as_slice() {
        [n, d] => (*n, *d),
        _ => return Err(Error::Format(format!("features shape {shape:?}"))),
    };
    let labels = s
        .u8("labels")?
        .iter()
        .map(|&c| {
            Label::from_class_index(c as usize)
                .ok_or_else(|| Error::Format(format!("label code {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let edges = s
        .u32("edges")?
        .chunks_exact(2)
        .map(|c| (c[0], c[1]))
        .collect();
    let ds = Dataset::new(
        s.i64("external_ids")?.to_vec(),
        s.u8("timesteps")?.to_vec(),
        Matrix::new(n, d, s.f64("features")?.to_vec())?,
        labels,
        edges,
    )?;
    let stats = ScalerStats {
        mean: s.f64("scaler_mean")?.to_vec(),
        std: s.f64("scaler_std")?.to_vec(),
        fit_scope,
        fit_rows,
    };
    Ok((ds, stats, digest))
}

/// Loads the standardised dataset from `cache_dir` when a cache for the
/// same inputs and scope exists, otherwise parses, standardises and writes
/// one. Returns the cache file path alongside.
pub fn load_or_build_cache(
    paths: &DataPaths,
    fit_scope: FitScope,
    cache_dir: &Path,
) -> Result<(Dataset, ScalerStats, PathBuf)> {
    let digest = input_digest(paths, fit_scope)?;
    let path = cache_dir.join(format!("elliptic-{}.ibc", &digest[..16]));
    if path.is_file() {
        let (ds, stats, stored) = read_cache(&path)?;
        if stored == digest {
            return Ok((ds, stats, path));
        }
        log::warn!("stale dataset cache {}; rebuilding", path.display());
    }
    let raw = load_dataset(&paths.features, &paths.classes, &paths.edges)?;
    let (ds, stats) = standardize(&raw, fit_scope)?;
    write_cache(&path, &ds, &stats, &digest)?;
    Ok((ds, stats, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::write_dataset;

    #[test]
    fn cache_round_trip_and_scope_keying() {
        let d = Dataset::new(
            vec![7, 8, 9],
            vec![1, 30, 40],
            Matrix::from_fn(3, 165, |i, j| (i * 165 + j) as f64 * 0.5 - 3.0),
            vec![Label::Illicit, Label::Licit, Label::Unknown],
            vec![(0, 1), (2, 1)],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_dataset(&d, &dir.path().join("raw")).unwrap();
        let cache = dir.path().join("cache");
        let (a, sa, pa) = load_or_build_cache(&paths, FitScope::FullPopulation, &cache).unwrap();
        let (b, sb, pb) = load_or_build_cache(&paths, FitScope::FullPopulation, &cache).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let (_, sc, pc) = load_or_build_cache(&paths, FitScope::TrainOnly, &cache).unwrap();
        assert_ne!(pa, pc);
        assert_eq!(sc.fit_rows, 2);
    }
}
