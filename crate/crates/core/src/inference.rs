//! Deployment: the condensed bundle, inductive inference over it, the same
//! inference over the original graph, and cost accounting.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{BatchMode, IncrementalBatch, SparseGraph};
use crate::io::{decode_f64_matrix, encode_f64_matrix, meta_get, parse_key_values, read_coo, read_text, write_coo, write_file};
use crate::mapping::SparseMapping;
use crate::relay::{forward, head_forward, train_relay, Architecture, RelayConfig, RelayTraining, RelayWeights};
use crate::scalar::Scalar;
use crate::sparse::{propagate_hops, CsrMatrix};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Provenance recorded alongside a bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleMeta {
    pub mu: f64,
    pub delta: f64,
    pub lambda: f64,
    pub beta: f64,
    pub seed: u64,
    /// SHA-256 of the training graph the bundle was condensed from.
    pub fingerprint: String,
}

/// A condensed graph ready for deployment.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedBundle<T> {
    pub a_prime: CsrMatrix<T>,
    pub x_prime: DenseMatrix<T>,
    pub y_prime: Vec<usize>,
    pub mapping: SparseMapping<T>,
    pub relay: RelayWeights<T>,
    pub relay_config: RelayConfig,
    pub meta: BundleMeta,
}

impl<T: Scalar> CondensedBundle<T> {
    pub fn new(
        a_prime: CsrMatrix<T>,
        x_prime: DenseMatrix<T>,
        y_prime: Vec<usize>,
        mapping: SparseMapping<T>,
        relay: RelayWeights<T>,
        relay_config: RelayConfig,
        meta: BundleMeta,
    ) -> Result<Self> {
        let n = x_prime.rows();
        if a_prime.rows() != n || a_prime.cols() != n {
            return Err(Error::shape("CondensedBundle", format!("A′ is {}x{} for {n} synthetic nodes", a_prime.rows(), a_prime.cols())));
        }
        if y_prime.len() != n || mapping.cols() != n {
            return Err(Error::shape(
                "CondensedBundle",
                format!("{} labels and {} mapping columns for {n} synthetic nodes", y_prime.len(), mapping.cols()),
            ));
        }
        if relay.input_dim() != x_prime.cols() {
            return Err(Error::shape("CondensedBundle", format!("relay expects {} features, X′ has {}", relay.input_dim(), x_prime.cols())));
        }
        if relay.head_dims() != relay_config.head_dims {
            return Err(Error::InvalidArgument("relay weights disagree with the relay config".into()));
        }
        relay_config.validate(relay.output_dim())?;
        let c = relay.output_dim();
        if let Some((node, &label)) = y_prime.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::LabelOutOfRange { node, label: label as i64, num_classes: c });
        }
        Ok(Self { a_prime, x_prime, y_prime, mapping, relay, relay_config, meta })
    }

    pub fn num_synthetic(&self) -> usize {
        self.x_prime.rows()
    }

    pub fn num_original(&self) -> usize {
        self.mapping.rows()
    }

    pub fn num_features(&self) -> usize {
        self.x_prime.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.relay.output_dim()
    }

    /// Writes the bundle directory (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut meta = String::new();
        let cfg = &self.relay_config;
        let dims: Vec<String> = cfg.head_dims.iter().map(ToString::to_string).collect();
        let m = &self.meta;
        let _ = writeln!(meta, "format_version={BUNDLE_FORMAT_VERSION}");
        let _ = writeln!(meta, "num_original={}", self.num_original());
        let _ = writeln!(meta, "num_synthetic={}", self.num_synthetic());
        let _ = writeln!(meta, "num_features={}", self.num_features());
        let _ = writeln!(meta, "num_classes={}", self.num_classes());
        let _ = writeln!(meta, "architecture={}", cfg.architecture);
        let _ = writeln!(meta, "depth={}", cfg.depth);
        let _ = writeln!(meta, "head_dims={}", dims.join(","));
        let _ = writeln!(meta, "weight_init_seed={}", cfg.weight_init_seed);
        let _ = writeln!(meta, "mu={}", m.mu);
        let _ = writeln!(meta, "delta={}", m.delta);
        let _ = writeln!(meta, "lambda={}", m.lambda);
        let _ = writeln!(meta, "beta={}", m.beta);
        let _ = writeln!(meta, "seed={}", m.seed);
        let _ = writeln!(meta, "fingerprint={}", m.fingerprint);
        write_file(&dir.join("meta"), meta.as_bytes())?;
        write_coo(&dir.join("a_prime.coo"), &self.a_prime)?;
        write_coo(&dir.join("mapping.coo"), self.mapping.matrix())?;
        let mut x = Vec::new();
        encode_f64_matrix(&mut x, &self.x_prime);
        write_file(&dir.join("x_prime.bin"), &x)?;
        let labels: String = self.y_prime.iter().map(|c| format!("{c}\n")).collect();
        write_file(&dir.join("y_prime.txt"), labels.as_bytes())?;
        let mut relay = Vec::new();
        relay.extend_from_slice(&(self.relay.layers().len() as u32).to_le_bytes());
        for w in self.relay.layers() {
            encode_f64_matrix(&mut relay, w);
        }
        write_file(&dir.join("relay.bin"), &relay)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        let meta = parse_key_values(&meta_path, &read_text(&meta_path)?)?;
        let version = meta.get("format_version").cloned().unwrap_or_default();
        if version != BUNDLE_FORMAT_VERSION.to_string() {
            return Err(Error::Version { expected: BUNDLE_FORMAT_VERSION, found: version });
        }
        let get_usize = |k| meta_get::<usize>(&meta_path, &meta, k);
        let (n_orig, n_syn, d, c) = (get_usize("num_original")?, get_usize("num_synthetic")?, get_usize("num_features")?, get_usize("num_classes")?);
        let head_dims = meta_get::<String>(&meta_path, &meta, "head_dims")?
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| Error::format(&meta_path, format!("bad head dim '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        let relay_config = RelayConfig {
            depth: get_usize("depth")?,
            head_dims,
            architecture: meta_get(&meta_path, &meta, "architecture")?,
            weight_init_seed: meta_get(&meta_path, &meta, "weight_init_seed")?,
        };
        if relay_config.num_classes() != c {
            return Err(Error::format(&meta_path, format!("relay head ends in {} outputs, bundle has {c} classes", relay_config.num_classes())));
        }
        let bundle_meta = BundleMeta {
            mu: meta_get(&meta_path, &meta, "mu")?,
            delta: meta_get(&meta_path, &meta, "delta")?,
            lambda: meta_get(&meta_path, &meta, "lambda")?,
            beta: meta_get(&meta_path, &meta, "beta")?,
            seed: meta_get(&meta_path, &meta, "seed")?,
            fingerprint: meta_get(&meta_path, &meta, "fingerprint")?,
        };
        let coo = |name: &str, rows, cols| -> Result<CsrMatrix<T>> {
            let path = dir.join(name);
            let trip: Vec<_> = read_coo(&path)?.into_iter().map(|(i, j, v)| (i, j, T::of(v))).collect();
            CsrMatrix::from_triplets(rows, cols, &trip).map_err(|e| Error::format(&path, e.to_string()))
        };
        let a_prime = coo("a_prime.coo", n_syn, n_syn)?;
        let mapping = SparseMapping::from_matrix(coo("mapping.coo", n_orig, n_syn)?)?;
        let x_path = dir.join("x_prime.bin");
        let x_bytes = std::fs::read(&x_path).map_err(|e| Error::io(&x_path, e))?;
        let mut pos = 0;
        let x_prime: DenseMatrix<T> = decode_f64_matrix(&x_path, &x_bytes, &mut pos)?;
        if pos != x_bytes.len() || x_prime.shape() != (n_syn, d) {
            return Err(Error::format(&x_path, format!("expected a {n_syn}x{d} matrix and nothing else")));
        }
        let y_path = dir.join("y_prime.txt");
        let y_prime = read_text(&y_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<usize>().map_err(|_| Error::format(&y_path, format!("bad label '{l}'"))))
            .collect::<Result<Vec<_>>>()?;
        let r_path = dir.join("relay.bin");
        let r_bytes = std::fs::read(&r_path).map_err(|e| Error::io(&r_path, e))?;
        let count = r_bytes.get(0..4).ok_or_else(|| Error::format(&r_path, "truncated file"))?;
        let count = u32::from_le_bytes(count.try_into().expect("4 bytes")) as usize;
        let mut pos = 4;
        let layers = (0..count).map(|_| decode_f64_matrix(&r_path, &r_bytes, &mut pos)).collect::<Result<Vec<_>>>()?;
        if pos != r_bytes.len() {
            return Err(Error::format(&r_path, "trailing bytes after the last layer"));
        }
        let relay = RelayWeights::from_layers(layers)?;
        Self::new(a_prime, x_prime, y_prime, mapping, relay, relay_config, bundle_meta)
    }
}

/// SHA-256 over a graph's structure, weights, features and labels.
pub fn graph_fingerprint<T: Scalar>(g: &SparseGraph<T>) -> String {
    let mut h = Sha256::new();
    h.update((g.num_nodes() as u64).to_le_bytes());
    h.update((g.num_features() as u64).to_le_bytes());
    h.update((g.num_classes() as u64).to_le_bytes());
    for (i, j, v) in g.adjacency().iter() {
        h.update((i as u64).to_le_bytes());
        h.update((j as u64).to_le_bytes());
        h.update(v.as_f64().to_le_bytes());
    }
    for &v in g.features().as_slice() {
        h.update(v.as_f64().to_le_bytes());
    }
    for l in g.labels() {
        h.update(l.map_or(-1i64, |c| c as i64).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Which graph the deployed relay is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeploySource {
    Original,
    Synthetic,
}

impl std::str::FromStr for DeploySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::InvalidArgument(format!("unknown deploy relay source '{other}'"))),
        }
    }
}

impl std::fmt::Display for DeploySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Original => "original",
            Self::Synthetic => "synthetic",
        })
    }
}

/// Trains a relay on a full labeled graph given as raw adjacency.
pub fn train_on_graph<T: Scalar>(
    adj: &CsrMatrix<T>,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    cfg: &RelayConfig,
    training: &RelayTraining,
) -> Result<RelayWeights<T>> {
    train_relay(&adj.normalize_with_self_loops()?, x, labels, cfg, training)
}

/// Predictions and costs of one inference call.
#[derive(Clone, Debug)]
pub struct InferenceReport<T> {
    pub predictions: Vec<usize>,
    /// `n × C` logits of the inductive rows.
    pub logits: DenseMatrix<T>,
    /// Seconds, assembly plus forward.
    pub wall_time: f64,
    pub assembly_time: f64,
    pub forward_time: f64,
    pub flops: u64,
    /// Analytic size of the propagation operands.
    pub peak_bytes: u64,
    /// Stored entries of the normalized assembled adjacency.
    pub nnz: usize,
    /// Rows of the assembled graph.
    pub rows: usize,
}

impl<T: Scalar> InferenceReport<T> {
    /// Fraction of labeled rows predicted correctly, if any row is labeled.
    pub fn accuracy(&self, labels: &[Option<usize>]) -> Option<f64> {
        let mut seen = 0usize;
        let mut hit = 0usize;
        for (p, l) in self.predictions.iter().zip(labels) {
            if let Some(c) = l {
                seen += 1;
                hit += usize::from(p == c);
            }
        }
        (seen > 0).then(|| hit as f64 / seen as f64)
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes={}", self.predictions.len());
        let _ = writeln!(s, "wall_time={:.9}", self.wall_time);
        let _ = writeln!(s, "assembly_time={:.9}", self.assembly_time);
        let _ = writeln!(s, "forward_time={:.9}", self.forward_time);
        let _ = writeln!(s, "flops={}", self.flops);
        let _ = writeln!(s, "peak_bytes={}", self.peak_bytes);
        let _ = writeln!(s, "nnz={}", self.nnz);
        let _ = writeln!(s, "rows={}", self.rows);
        s
    }
}

/// `L · 2 · nnz · d`.
pub fn propagation_flops(nnz: usize, dim: usize, depth: usize) -> u64 {
    depth as u64 * 2 * nnz as u64 * dim as u64
}

/// Multiply-adds of a dense layer chain applied to `rows` rows, counted as 2 each.
pub fn head_flops(rows: usize, input_dim: usize, head_dims: &[usize]) -> u64 {
    let mut fan_in = input_dim as u64;
    let mut total = 0u64;
    for &out in head_dims {
        total += 2 * rows as u64 * fan_in * out as u64;
        fan_in = out as u64;
    }
    total
}

/// FLOPs of one relay forward over an assembled graph with `nnz` stored
/// entries and `rows` rows, of which `output_rows` need logits.
pub fn flop_count(nnz: usize, rows: usize, output_rows: usize, input_dim: usize, cfg: &RelayConfig) -> u64 {
    match cfg.architecture {
        Architecture::Sgc => propagation_flops(nnz, input_dim, cfg.depth) + head_flops(output_rows, input_dim, &cfg.head_dims),
        Architecture::Gcn => {
            let mut fan_in = input_dim;
            let mut total = 0;
            for &out in &cfg.head_dims {
                total += propagation_flops(nnz, fan_in, 1) + head_flops(rows, fan_in, &[out]);
                fan_in = out;
            }
            total
        }
    }
}

/// `nnz·(index + value bytes) + rows·d·value bytes`.
pub fn memory_estimate<T>(nnz: usize, rows: usize, dim: usize) -> u64 {
    let value = std::mem::size_of::<T>() as u64;
    nnz as u64 * (std::mem::size_of::<usize>() as u64 + value) + rows as u64 * dim as u64 * value
}

/// Normalizes `assembled`, runs the relay, and keeps the last `n` rows.
fn run_assembled<T: Scalar>(
    assembled: CsrMatrix<T>,
    feats: DenseMatrix<T>,
    n: usize,
    relay: &RelayWeights<T>,
    cfg: &RelayConfig,
    start: Instant,
) -> Result<InferenceReport<T>> {
    let norm = assembled.normalize_with_self_loops()?;
    let assembled_at = Instant::now();
    let rows = norm.rows();
    let first = rows - n;
    let logits = match cfg.architecture {
        Architecture::Sgc => {
            let p = propagate_hops(&norm, &feats, cfg.depth)?;
            head_forward(&p.slice_rows(first, rows), relay)?.logits
        }
        Architecture::Gcn => forward(&norm, &feats, relay, cfg)?.logits.slice_rows(first, rows),
    };
    let done = Instant::now();
    let predictions = logits.argmax_rows();
    Ok(InferenceReport {
        predictions,
        flops: flop_count(norm.nnz(), rows, n, feats.cols(), cfg),
        peak_bytes: memory_estimate::<T>(norm.nnz(), rows, feats.cols()),
        nnz: norm.nnz(),
        rows,
        logits,
        assembly_time: (assembled_at - start).as_secs_f64(),
        forward_time: (done - assembled_at).as_secs_f64(),
        wall_time: (done - start).as_secs_f64(),
    })
}

fn check_batch<T: Scalar>(batch: &IncrementalBatch<T>, base_nodes: usize, dim: usize) -> Result<()> {
    if batch.a.cols() != base_nodes {
        return Err(Error::IndexOutOfRange(format!(
            "batch links refer to {} original nodes, the graph has {base_nodes}",
            batch.a.cols()
        )));
    }
    if batch.x.cols() != dim {
        return Err(Error::shape("inference", format!("batch features are {} wide, expected {dim}", batch.x.cols())));
    }
    Ok(())
}

/// The unnormalized `[[A′, (aM̂)ᵀ], [aM̂, ã]]` and stacked features `[X′; x]`.
pub fn synthetic_assembly<T: Scalar>(
    bundle: &CondensedBundle<T>,
    batch: &IncrementalBatch<T>,
    mode: BatchMode,
) -> Result<(CsrMatrix<T>, DenseMatrix<T>)> {
    check_batch(batch, bundle.num_original(), bundle.num_features())?;
    let cross = batch.a.spgemm(bundle.mapping.matrix())?;
    let assembled = bundle.a_prime.assemble_block(&cross, batch.tilde_for(mode)?)?;
    Ok((assembled, bundle.x_prime.vstack(&batch.x)?))
}

/// The unnormalized `[[A, aᵀ], [a, ã]]` and stacked features `[X; x]`.
pub fn original_assembly<T: Scalar>(
    adj: &CsrMatrix<T>,
    x: &DenseMatrix<T>,
    batch: &IncrementalBatch<T>,
    mode: BatchMode,
) -> Result<(CsrMatrix<T>, DenseMatrix<T>)> {
    check_batch(batch, adj.rows(), x.cols())?;
    Ok((adj.assemble_block(&batch.a, batch.tilde_for(mode)?)?, x.vstack(&batch.x)?))
}

/// Classifies `batch` by attaching it to the synthetic graph through the mapping.
pub fn infer<T: Scalar>(bundle: &CondensedBundle<T>, batch: &IncrementalBatch<T>, mode: BatchMode) -> Result<InferenceReport<T>> {
    let start = Instant::now();
    let (assembled, feats) = synthetic_assembly(bundle, batch, mode)?;
    run_assembled(assembled, feats, batch.len(), &bundle.relay, &bundle.relay_config, start)
}

/// Classifies `batch` by attaching it to the original graph.
pub fn infer_on_original<T: Scalar>(
    adj: &CsrMatrix<T>,
    x: &DenseMatrix<T>,
    relay: &RelayWeights<T>,
    cfg: &RelayConfig,
    batch: &IncrementalBatch<T>,
    mode: BatchMode,
) -> Result<InferenceReport<T>> {
    let start = Instant::now();
    let (assembled, feats) = original_assembly(adj, x, batch, mode)?;
    run_assembled(assembled, feats, batch.len(), relay, cfg, start)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flop_arithmetic() {
        assert_eq!(propagation_flops(0, 16, 0), 0);
        assert_eq!(propagation_flops(10, 32, 2), 2 * propagation_flops(10, 16, 2));
        assert_eq!(head_flops(3, 4, &[5, 2]), 2 * 3 * 4 * 5 + 2 * 3 * 5 * 2);
        let cfg = RelayConfig::sgc(2, 3);
        assert_eq!(flop_count(100, 20, 5, 16, &cfg), 2 * 2 * 100 * 16 + 2 * 5 * 16 * 3);
    }

    #[test]
    fn memory_arithmetic() {
        let expected = 7 * (std::mem::size_of::<usize>() as u64 + 8) + 5 * 3 * 8;
        assert_eq!(memory_estimate::<f64>(7, 5, 3), expected);
    }

    #[test]
    fn isolated_node_keeps_its_features() {
        let cfg = RelayConfig::sgc(2, 2);
        let relay = RelayWeights::from_layers(vec![DenseMatrix::identity(2)]).unwrap();
        let adj = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let batch = IncrementalBatch::new(CsrMatrix::empty(1, 2), DenseMatrix::from_rows(&[[0.25, -3.0]]), None, None).unwrap();
        let r = infer_on_original(&adj, &x, &relay, &cfg, &batch, BatchMode::Node).unwrap();
        assert_eq!(r.logits, DenseMatrix::from_rows(&[[0.25, -3.0]]));
        assert_eq!(r.predictions, vec![0]);
    }

    #[test]
    fn accuracy_counts_labeled_rows() {
        let r = InferenceReport::<f64> {
            predictions: vec![0, 1, 1],
            logits: DenseMatrix::zeros(3, 2),
            wall_time: 0.0,
            assembly_time: 0.0,
            forward_time: 0.0,
            flops: 0,
            peak_bytes: 0,
            nnz: 0,
            rows: 3,
        };
        assert_eq!(r.accuracy(&[Some(0), Some(0), None]), Some(0.5));
        assert_eq!(r.accuracy(&[None, None, None]), None);
    }
}
