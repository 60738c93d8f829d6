use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use graphcond::baselines::{class_counts, coreset, CoresetMethod};
use graphcond::calibration::{evaluate_calibration, lp_time_on_original, PropagationConfig};
use graphcond::condense::{predefine_labels, synthetic_count};
use graphcond::evaluate::{condense, delta_csv, delta_sweep, evaluate_batches, parse_sweep, ratio_csv, ratio_sweep, DeployConfig, EvalSummary};
use graphcond::graph::sbm_generate;
use graphcond::inference::{infer, infer_on_original, train_on_graph, CondensedBundle, DeploySource};
use graphcond::io::{load_batch, load_graph_bundle, save_batch, save_graph_bundle};
use graphcond::relay::{head_forward, RelayTraining};
use graphcond::rng::{derive_seed, streams};
use graphcond::sparse::propagate_hops;
use graphcond::trainer::{write_run_log, MappingInit, TrainConfig};
use graphcond::{BatchMode, GraphBundle, IncrementalBatch, InductiveSetup, OptimizerKind, RelayConfig, SbmParams, Scalar, Splits};
use log::info;

use crate::settings::Settings;

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_setup<T: Scalar>(s: &Settings) -> Result<InductiveSetup<T>> {
    let dir = s.path("graph")?;
    let bundle: GraphBundle<T> = load_graph_bundle(&dir)?;
    Ok(bundle.inductive_setup()?)
}

/// Runs `$body` with `$t` bound to the requested floating-point type.
macro_rules! with_precision {
    ($s:expr, $t:ident => $body:expr) => {
        match $s.get::<String>("precision")?.as_str() {
            "f64" => {
                type $t = f64;
                $body
            }
            "f32" => {
                type $t = f32;
                $body
            }
            other => bail!("bad value for 'precision': '{other}' (expected f32 or f64)"),
        }
    };
}

pub fn generate(s: &Settings) -> Result<()> {
    let out = s.path("out")?;
    let seed: u64 = s.get("seed")?;
    let params = SbmParams {
        sizes: s.list("sizes")?,
        p_in: s.get("p_in")?,
        p_out: s.get("p_out")?,
        num_features: s.get("features")?,
        mean_separation: s.get("separation")?,
        seed: derive_seed(seed, streams::GRAPH),
    };
    let graph = sbm_generate::<f64>(&params)?;
    let n = graph.num_nodes();
    let (support, test): (usize, usize) = (s.get("support")?, s.get("test")?);
    if support + test >= n {
        bail!("{n} nodes cannot hold {support} support and {test} test nodes");
    }
    let splits = Splits::random(n, n - support - test, support, test, derive_seed(seed, streams::SPLITS))?;
    let bundle = GraphBundle { graph, splits };
    save_graph_bundle(&out, &bundle)?;
    let setup = bundle.inductive_setup()?;
    save_batch(&out.join("batches").join("test"), &setup.test)?;
    save_batch(&out.join("batches").join("support"), &setup.support)?;
    s.write_effective(&out.join("batches"))?;
    println!("wrote {} nodes, {} edges to {}", n, bundle.graph.num_edges(), out.display());
    Ok(())
}

fn train_config(s: &Settings, num_classes: usize) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(num_classes);
    cfg.reduction = s.get("r")?;
    cfg.outer_epochs = s.get("epochs")?;
    cfg.inner_steps = s.get("inner_steps")?;
    cfg.lr_features = s.get("lr_features")?;
    cfg.lr_mlp = s.get("lr_mlp")?;
    cfg.lr_mapping = s.get("lr_mapping")?;
    cfg.lambda = s.get("lambda")?;
    cfg.beta = s.get("beta")?;
    cfg.mu = s.get("mu")?;
    cfg.delta = s.get("delta")?;
    cfg.relay = RelayConfig::sgc(s.get("depth")?, num_classes);
    cfg.mlp_hidden = s.list("mlp_hidden")?;
    cfg.edge_batch_positives = s.get("edge_positives")?;
    cfg.structure_loss_positives_only = s.get("positives_only")?;
    cfg.support_mode = s.get::<BatchMode>("support_mode")?;
    cfg.support_batch_size = s.get("support_batch")?;
    cfg.mapping_init = s.get::<MappingInit>("init")?;
    cfg.relay_optimizer = s.get::<OptimizerKind>("relay_optimizer")?;
    cfg.relay_lr = s.get("relay_lr")?;
    cfg.seed = s.get("seed")?;
    cfg.validate(num_classes)?;
    Ok(cfg)
}

fn deploy_config(s: &Settings, depth: usize, num_classes: usize) -> Result<DeployConfig> {
    let mut deploy = DeployConfig::new(RelayConfig::sgc(depth, num_classes).with_seed(derive_seed(s.get("seed")?, streams::DEPLOY_RELAY)));
    if s.raw("deploy").is_some() {
        deploy.source = s.get::<DeploySource>("deploy")?;
    }
    deploy.training = RelayTraining { epochs: s.get("deploy_epochs")?, lr: s.get("deploy_lr")?, ..RelayTraining::default() };
    Ok(deploy)
}

pub fn condense_cmd(s: &Settings) -> Result<()> {
    with_precision!(s, T => condense_typed::<T>(s))
}

fn condense_typed<T: Scalar>(s: &Settings) -> Result<()> {
    let out_dir = s.path("out")?;
    let setup = load_setup::<T>(s)?;
    let c = setup.train_graph.num_classes();
    let cfg = train_config(s, c)?;
    let deploy = deploy_config(s, cfg.relay.depth, c)?;
    let start = std::time::Instant::now();
    let (bundle, out) = condense(&setup, &cfg, &deploy)?;
    info!("condensed in {:.2}s", start.elapsed().as_secs_f64());
    bundle.save(&out_dir)?;
    write_run_log(&out_dir.join("run.log"), &out.history)?;
    s.write_effective(&out_dir)?;
    println!(
        "condensed {} training nodes into {} synthetic nodes (nnz(A')={}, mapping sparsity {:.4}) -> {}",
        setup.train_graph.num_nodes(),
        bundle.num_synthetic(),
        bundle.a_prime.nnz(),
        bundle.mapping.sparsity(),
        out_dir.display()
    );
    Ok(())
}

fn summary_lines(prefix: &str, e: &EvalSummary) -> String {
    let mut s = String::new();
    if let Some(a) = e.accuracy {
        let _ = writeln!(s, "{prefix}accuracy={a:.6}");
    }
    let _ = writeln!(s, "{prefix}mean_time={:.9}", e.mean_time);
    let _ = writeln!(s, "{prefix}mean_flops={:.1}", e.mean_flops);
    let _ = writeln!(s, "{prefix}mean_bytes={:.1}", e.mean_bytes);
    let _ = writeln!(s, "{prefix}total_flops={}", e.total_flops);
    s
}

pub fn infer_cmd(s: &Settings) -> Result<()> {
    with_precision!(s, T => infer_typed::<T>(s))
}

fn infer_typed<T: Scalar>(s: &Settings) -> Result<()> {
    let bundle = CondensedBundle::<T>::load(&s.path("bundle")?)?;
    let mode: BatchMode = s.get("mode")?;
    let batch_size: usize = s.get("batch_size")?;
    let original = s.get::<bool>("baseline_original")?;
    let setup = if s.raw("graph").is_some() { Some(load_setup::<T>(s)?) } else { None };
    let batch: IncrementalBatch<T> = match (s.raw("batch"), &setup) {
        (Some(_), _) => load_batch(&s.path("batch")?)?,
        (None, Some(setup)) => setup.test.clone(),
        (None, None) => bail!("`infer` needs `batch` or `graph`"),
    };
    if mode == BatchMode::Graph && batch.a_tilde.is_none() {
        bail!("graph mode needs links among the inductive nodes (tilde.coo in the batch directory)");
    }
    let (syn, predictions, _) = evaluate_batches(&batch, batch_size, |b| infer(&bundle, b, mode))?;
    let mut report = format!("mode={mode}\nnodes={}\nbatches={}\n", syn.nodes, syn.batches);
    report.push_str(&summary_lines("", &syn));
    if original {
        let Some(setup) = &setup else { bail!("`baseline_original` needs `graph`") };
        let g = &setup.train_graph;
        let (orig, _, _) = evaluate_batches(&batch, batch_size, |b| {
            infer_on_original(g.adjacency(), g.features(), &bundle.relay, &bundle.relay_config, b, mode)
        })?;
        report.push_str(&summary_lines("original_", &orig));
        let _ = writeln!(report, "speedup={:.4}", orig.mean_time / syn.mean_time.max(f64::MIN_POSITIVE));
        let _ = writeln!(report, "flop_ratio={:.4}", orig.mean_flops / syn.mean_flops.max(1.0));
        let _ = writeln!(report, "memory_ratio={:.4}", orig.mean_bytes / syn.mean_bytes.max(1.0));
    }
    match s.raw("out") {
        Some(_) => {
            let dir = s.path("out")?;
            std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let preds: String = predictions.iter().map(|p| format!("{p}\n")).collect();
            write(&dir.join("predictions.txt"), &preds)?;
            write(&dir.join("report.txt"), &report)?;
            s.write_effective(&dir)?;
        }
        None => print!("{report}"),
    }
    Ok(())
}

pub fn calibrate_cmd(s: &Settings) -> Result<()> {
    with_precision!(s, T => calibrate_typed::<T>(s))
}

fn calibrate_typed<T: Scalar>(s: &Settings) -> Result<()> {
    let bundle = CondensedBundle::<T>::load(&s.path("bundle")?)?;
    let setup = load_setup::<T>(s)?;
    let mode: BatchMode = s.get("mode")?;
    let batch_size: usize = s.get("batch_size")?;
    let cfg = PropagationConfig { iterations: s.get("iterations")?, alpha: s.get("alpha")?, clamp: s.get("clamp")?, scale: s.get("scale")? };
    cfg.validate()?;
    let summary = evaluate_calibration(&bundle, &setup.test, mode, batch_size, &cfg)?;
    let g = &setup.train_graph;
    let labels = g.dense_labels()?;
    let size = if batch_size == 0 { setup.test.len().max(1) } else { batch_size };
    let chunks = setup.test.chunks(size)?;
    let mut original_time = 0.0;
    for chunk in &chunks {
        original_time += lp_time_on_original(g.adjacency(), g.features(), &labels, g.num_classes(), chunk, mode, &cfg)?;
    }
    original_time /= chunks.len().max(1) as f64;
    let mut table = String::from("method,accuracy,propagation_ms\n");
    let _ = writeln!(table, "vanilla,{:.6},", summary.vanilla_accuracy);
    let _ = writeln!(table, "lp,{:.6},{:.6}", summary.lp_accuracy, summary.lp_time * 1e3);
    let _ = writeln!(table, "ep,{:.6},{:.6}", summary.ep_accuracy, summary.ep_time * 1e3);
    let _ = writeln!(table, "lp_original,,{:.6}", original_time * 1e3);
    print!("{table}");
    if s.raw("out").is_some() {
        let dir = s.path("out")?;
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write(&dir.join("calibration.csv"), &table)?;
        s.write_effective(&dir)?;
    }
    Ok(())
}

pub fn baseline_cmd(s: &Settings) -> Result<()> {
    with_precision!(s, T => baseline_typed::<T>(s))
}

fn baseline_typed<T: Scalar>(s: &Settings) -> Result<()> {
    let setup = load_setup::<T>(s)?;
    let g = &setup.train_graph;
    let c = g.num_classes();
    let method: CoresetMethod = s.get("method")?;
    let mode: BatchMode = s.get("mode")?;
    let seed: u64 = s.get("seed")?;
    let depth: usize = s.get("depth")?;
    let n_prime = synthetic_count(g.num_nodes(), s.get("r")?);
    let counts = class_counts(&predefine_labels(&g.dense_labels()?, c, n_prime)?, c);
    let deploy = deploy_config(s, depth, c)?;
    let relay = train_on_graph(g.adjacency(), g.features(), g.labels(), &deploy.relay, &deploy.training)?;
    let embeddings = if method.needs_embeddings() {
        let p = propagate_hops(&g.adjacency().normalize_with_self_loops()?, g.features(), depth)?;
        Some(head_forward(&p, &relay)?.embeddings)
    } else {
        None
    };
    let result = coreset(g, method, &counts, embeddings.as_ref(), derive_seed(seed, streams::BASELINE))?;
    let test = result.restrict_batch(&setup.test)?;
    let (summary, _, _) = evaluate_batches(&test, s.get("batch_size")?, |b| {
        infer_on_original(result.graph.adjacency(), result.graph.features(), &relay, &deploy.relay, b, mode)
    })?;

    let out = s.path("out")?;
    let kept = result.selected.len();
    let bundle = GraphBundle { graph: result.graph.clone(), splits: Splits { train: (0..kept).collect(), val: vec![], test: vec![] } };
    save_graph_bundle(&out, &bundle)?;
    let ids: String = result.selected.iter().map(|i| format!("{i}\n")).collect();
    write(&out.join("selected.txt"), &ids)?;
    let mut report = format!("method={method}\nmode={mode}\nselected={kept}\n");
    report.push_str(&summary_lines("", &summary));
    write(&out.join("report.txt"), &report)?;
    s.write_effective(&out)?;
    print!("{report}");
    Ok(())
}

pub fn bench_cmd(s: &Settings) -> Result<()> {
    with_precision!(s, T => bench_typed::<T>(s))
}

fn bench_typed<T: Scalar>(s: &Settings) -> Result<()> {
    let sweep = s.get::<String>("sweep")?;
    let (kind, values) = sweep.split_once(' ').with_context(|| format!("bad value for 'sweep': '{sweep}' (expected `delta <values>` or `r <values>`)"))?;
    let values = parse_sweep(values.trim())?;
    let setup = load_setup::<T>(s)?;
    let c = setup.train_graph.num_classes();
    let cfg = train_config(s, c)?;
    let deploy = deploy_config(s, cfg.relay.depth, c)?;
    let mode: BatchMode = s.get("mode")?;
    let batch_size: usize = s.get("batch_size")?;
    let csv = match kind {
        "delta" => {
            let (bundle, out) = condense(&setup, &cfg, &deploy)?;
            delta_csv(&delta_sweep(&setup, &out, &cfg, &bundle, &values, mode, batch_size)?)
        }
        "r" => ratio_csv(&ratio_sweep(&setup, &cfg, &deploy, &values, mode, batch_size)?),
        other => bail!("cannot sweep '{other}' (expected delta or r)"),
    };
    let out = s.path("out")?;
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    write(&out.join(format!("sweep_{kind}.csv")), &csv)?;
    s.write_effective(&out)?;
    print!("{csv}");
    Ok(())
}
