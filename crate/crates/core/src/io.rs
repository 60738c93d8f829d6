//! On-disk graph bundles.
//!
//! A graph bundle is a directory holding
//!
//! * `meta`: `key=value` lines with `num_nodes`, `num_features`, `num_classes`, `directed`
//! * `edges.txt`: `u v [w]` per line, 0-based; undirected edges listed once
//! * `features.bin`: little-endian `u32 N`, `u32 d`, then `N·d` `f32` row-major
//! * `labels.txt`: one class id per line, `-1` for unlabeled
//! * `splits.txt`: `train <id>`, `val <id>`, `test <id>` lines
//!
//! A batch directory holds inductive nodes attached to an existing graph:
//!
//! * `meta`: `num_nodes`, `base_nodes`, `num_features`
//! * `links.coo`: `i j [w]`, inductive node `i` links to original node `j`
//! * `features.bin`: as above
//! * `tilde.coo` (optional): links among the inductive nodes, both directions
//! * `labels.txt` (optional): as above

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{GraphBundle, IncrementalBatch, SparseGraph, Splits};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {}: expected key=value", lineno + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn meta_get<V: std::str::FromStr>(path: &Path, meta: &BTreeMap<String, String>, key: &str) -> Result<V> {
    let raw = meta.get(key).ok_or_else(|| Error::format(path, format!("missing key '{key}'")))?;
    raw.parse().map_err(|_| Error::format(path, format!("bad value for '{key}': {raw}")))
}

fn parse_num<V: std::str::FromStr>(path: &Path, lineno: usize, tok: Option<&str>) -> Result<V> {
    let tok = tok.ok_or_else(|| Error::format(path, format!("line {lineno}: missing field")))?;
    tok.parse().map_err(|_| Error::format(path, format!("line {lineno}: cannot parse '{tok}'")))
}

/// Reads `i j [v]` lines; `v` defaults to 1.
pub(crate) fn read_coo(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let i = parse_num(path, k + 1, it.next())?;
        let j = parse_num(path, k + 1, it.next())?;
        let v = match it.next() {
            Some(tok) => parse_num(path, k + 1, Some(tok))?,
            None => 1.0,
        };
        out.push((i, j, v));
    }
    Ok(out)
}

/// Writes `i j v` lines using the shortest round-tripping decimal form.
pub(crate) fn write_coo<T: Scalar>(path: &Path, m: &CsrMatrix<T>) -> Result<()> {
    let mut s = String::with_capacity(m.nnz() * 24);
    for (i, j, v) in m.iter() {
        s.push_str(&format!("{i} {j} {}\n", v.as_f64()));
    }
    write_file(path, s.as_bytes())
}

pub(crate) fn read_f32_matrix(path: &Path) -> Result<DenseMatrix<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::format(path, format!("expected {} bytes of f32 data, found {}", rows * cols * 4, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    DenseMatrix::from_vec(rows, cols, data)
}

pub(crate) fn write_f32_matrix<T: Scalar>(path: &Path, m: &DenseMatrix<T>) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + m.as_slice().len() * 4);
    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    write_file(path, &bytes)
}

pub(crate) fn encode_f64_matrix<T: Scalar>(out: &mut Vec<u8>, m: &DenseMatrix<T>) {
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

/// Decodes one `u32 rows, u32 cols, f64...` record starting at `*pos`.
pub(crate) fn decode_f64_matrix<T: Scalar>(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<DenseMatrix<T>> {
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes.get(*pos..*pos + n).ok_or_else(|| Error::format(path, "truncated file"))?;
        *pos += n;
        Ok(s)
    };
    let rows = u32::from_le_bytes(take(pos, 4)?.try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(take(pos, 4)?.try_into().expect("4 bytes")) as usize;
    let body = take(pos, rows * cols * 8)?;
    let data = body.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn load_graph_bundle<T: Scalar>(dir: &Path) -> Result<GraphBundle<T>> {
    let meta_path = dir.join("meta");
    let meta = parse_key_values(&meta_path, &read_text(&meta_path)?)?;
    let n: usize = meta_get(&meta_path, &meta, "num_nodes")?;
    let d: usize = meta_get(&meta_path, &meta, "num_features")?;
    let c: usize = meta_get(&meta_path, &meta, "num_classes")?;
    let directed: u8 = meta_get(&meta_path, &meta, "directed")?;

    let edges_path = dir.join("edges.txt");
    let edges: Vec<(usize, usize, T)> =
        read_coo(&edges_path)?.into_iter().map(|(u, v, w)| (u, v, T::of(w))).collect();
    if let Some(&(u, v, _)) = edges.iter().find(|&&(u, v, _)| u >= n || v >= n) {
        return Err(Error::format(&edges_path, format!("edge ({u}, {v}) out of range for {n} nodes")));
    }
    let adjacency = if directed == 1 {
        CsrMatrix::from_triplets(n, n, &edges)?
    } else {
        crate::graph::undirected_adjacency(n, &edges)?
    };

    let feat_path = dir.join("features.bin");
    let raw = read_f32_matrix(&feat_path)?;
    if raw.shape() != (n, d) {
        return Err(Error::format(
            &feat_path,
            format!("header says {}x{}, meta says {n}x{d}", raw.rows(), raw.cols()),
        ));
    }
    let features = raw.cast::<T>();

    let labels = read_labels(&dir.join("labels.txt"), n, Some(c))?;

    let splits_path = dir.join("splits.txt");
    let mut splits = Splits::default();
    for (k, line) in read_text(&splits_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap_or_default();
        let id: usize = parse_num(&splits_path, k + 1, it.next())?;
        match tag {
            "train" => splits.train.push(id),
            "val" => splits.val.push(id),
            "test" => splits.test.push(id),
            other => return Err(Error::format(&splits_path, format!("line {}: unknown split '{other}'", k + 1))),
        }
    }
    splits.validate(n).map_err(|e| Error::format(&splits_path, e.to_string()))?;

    let graph = SparseGraph::new(adjacency, features, labels, c, directed == 1)?;
    Ok(GraphBundle { graph, splits })
}

pub fn save_graph_bundle<T: Scalar>(dir: &Path, bundle: &GraphBundle<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &bundle.graph;
    let meta = format!(
        "num_nodes={}\nnum_features={}\nnum_classes={}\ndirected={}\n",
        g.num_nodes(),
        g.num_features(),
        g.num_classes(),
        u8::from(g.is_directed())
    );
    write_file(&dir.join("meta"), meta.as_bytes())?;

    let mut edges = String::new();
    for (i, j, w) in g.adjacency().iter() {
        if !g.is_directed() && j < i {
            continue;
        }
        if w == T::one() {
            edges.push_str(&format!("{i} {j}\n"));
        } else {
            edges.push_str(&format!("{i} {j} {}\n", w.as_f64()));
        }
    }
    write_file(&dir.join("edges.txt"), edges.as_bytes())?;
    write_f32_matrix(&dir.join("features.bin"), g.features())?;

    let labels = labels_text(g.labels());
    write_file(&dir.join("labels.txt"), labels.as_bytes())?;

    let mut splits = String::new();
    for (tag, ids) in [("train", &bundle.splits.train), ("val", &bundle.splits.val), ("test", &bundle.splits.test)] {
        for id in ids {
            splits.push_str(&format!("{tag} {id}\n"));
        }
    }
    write_file(&dir.join("splits.txt"), splits.as_bytes())
}

fn read_labels(path: &Path, n: usize, num_classes: Option<usize>) -> Result<Vec<Option<usize>>> {
    let mut labels = Vec::with_capacity(n);
    for (k, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let l: i64 = parse_num(path, k + 1, Some(line))?;
        match l {
            -1 => labels.push(None),
            l if l < 0 || num_classes.is_some_and(|c| l as usize >= c) => {
                return Err(Error::LabelOutOfRange { node: labels.len(), label: l, num_classes: num_classes.unwrap_or(0) });
            }
            l => labels.push(Some(l as usize)),
        }
    }
    if labels.len() != n {
        return Err(Error::format(path, format!("{} labels for {n} nodes", labels.len())));
    }
    Ok(labels)
}

fn labels_text(labels: &[Option<usize>]) -> String {
    labels
        .iter()
        .map(|l| match l {
            Some(c) => format!("{c}\n"),
            None => "-1\n".to_string(),
        })
        .collect()
}

pub fn save_batch<T: Scalar>(dir: &Path, batch: &IncrementalBatch<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = format!("num_nodes={}\nbase_nodes={}\nnum_features={}\n", batch.len(), batch.a.cols(), batch.x.cols());
    write_file(&dir.join("meta"), meta.as_bytes())?;
    write_coo(&dir.join("links.coo"), &batch.a)?;
    write_f32_matrix(&dir.join("features.bin"), &batch.x)?;
    if let Some(t) = &batch.a_tilde {
        write_coo(&dir.join("tilde.coo"), t)?;
    }
    if let Some(l) = &batch.labels {
        write_file(&dir.join("labels.txt"), labels_text(l).as_bytes())?;
    }
    Ok(())
}

pub fn load_batch<T: Scalar>(dir: &Path) -> Result<IncrementalBatch<T>> {
    let meta_path = dir.join("meta");
    let meta = parse_key_values(&meta_path, &read_text(&meta_path)?)?;
    let n: usize = meta_get(&meta_path, &meta, "num_nodes")?;
    let base: usize = meta_get(&meta_path, &meta, "base_nodes")?;
    let d: usize = meta_get(&meta_path, &meta, "num_features")?;
    let coo = |name: &str, cols: usize| -> Result<CsrMatrix<T>> {
        let path = dir.join(name);
        let trip: Vec<_> = read_coo(&path)?.into_iter().map(|(i, j, v)| (i, j, T::of(v))).collect();
        CsrMatrix::from_triplets(n, cols, &trip).map_err(|e| Error::format(&path, e.to_string()))
    };
    let a = coo("links.coo", base)?;
    let feat_path = dir.join("features.bin");
    let x = read_f32_matrix(&feat_path)?;
    if x.shape() != (n, d) {
        return Err(Error::format(&feat_path, format!("header says {}x{}, meta says {n}x{d}", x.rows(), x.cols())));
    }
    let a_tilde = if dir.join("tilde.coo").exists() { Some(coo("tilde.coo", n)?) } else { None };
    let labels_path = dir.join("labels.txt");
    let labels = if labels_path.exists() { Some(read_labels(&labels_path, n, None)?) } else { None };
    IncrementalBatch::new(a, x.cast(), a_tilde, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> GraphBundle<f64> {
        let feats = DenseMatrix::from_rows(&[[0.5, -1.0], [2.0, 0.25], [0.0, 1.0], [3.0, 3.0]]);
        let graph = SparseGraph::from_edges(
            4,
            &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 2.5)],
            feats,
            vec![Some(0), Some(1), None, Some(1)],
            2,
        )
        .unwrap();
        GraphBundle { graph, splits: Splits { train: vec![0, 1], val: vec![2], test: vec![3] } }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = toy();
        save_graph_bundle(dir.path(), &b).unwrap();
        let back: GraphBundle<f64> = load_graph_bundle(dir.path()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.graph.num_edges(), 3);
    }

    #[test]
    fn batch_round_trip() {
        let b = toy();
        let batch = b.graph.incremental_batch(&b.splits.train, &[2, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_batch(dir.path(), &batch).unwrap();
        let back: IncrementalBatch<f64> = load_batch(dir.path()).unwrap();
        assert_eq!(back, batch);
        let mut bare = batch.clone();
        bare.a_tilde = None;
        bare.labels = None;
        let dir = tempfile::tempdir().unwrap();
        save_batch(dir.path(), &bare).unwrap();
        assert_eq!(load_batch::<f64>(dir.path()).unwrap(), bare);
    }

    #[test]
    fn label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        save_graph_bundle(dir.path(), &toy()).unwrap();
        fs::write(dir.path().join("labels.txt"), "0\n1\n2\n1\n").unwrap();
        let err = load_graph_bundle::<f64>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("label out of range"), "{err}");
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_graph_bundle(dir.path(), &toy()).unwrap();
        fs::remove_file(dir.path().join("splits.txt")).unwrap();
        let err = load_graph_bundle::<f64>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("splits.txt"), "{err}");
    }

    #[test]
    fn header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_graph_bundle(dir.path(), &toy()).unwrap();
        fs::write(dir.path().join("meta"), "num_nodes=4\nnum_features=3\nnum_classes=2\ndirected=0\n").unwrap();
        assert!(load_graph_bundle::<f64>(dir.path()).is_err());
    }

    #[test]
    fn key_values_reject_garbage() {
        assert!(parse_key_values(Path::new("x"), "a=1\nbogus\n").is_err());
        let kv = parse_key_values(Path::new("x"), "# c\n a = 1 \n\nb=2").unwrap();
        assert_eq!(kv["a"], "1");
    }
}
