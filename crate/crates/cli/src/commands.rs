//! The subcommands. Each one writes its outputs under the `out` directory.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use liegconv::analysis::{
    bench_csv, benchmark, counts_match, equivariance_sweep, kernel_pca_ratios, layer_kh_variance, model_layerwise_error,
    BenchConfig, LayerRedundancy, RedundancyReport, SweepKind,
};
use liegconv::data::{load_dataset, split_indices, synth_oriented_bars, Dataset, TransformKind};
use liegconv::gconv::CostConfig;
use liegconv::kernelnet::Factorization;
use liegconv::model::{build_model, evaluate, read_container, save_store, load_store, train, Model};
use liegconv::selftest;

use crate::config::{DatasetKind, ExperimentConfig};
use crate::CliError;

const LAYER_NAMES: [&str; 4] = ["block1.conv1", "block1.conv2", "block2.conv1", "block2.conv2"];

fn write_output(cfg: &ExperimentConfig, command: &str, name: &str, body: &str) -> Result<(), CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    let path = dir.join(name);
    fs::write(&path, format!("{}{body}", cfg.header(command)))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Train and test sets as configured.
pub fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), CliError> {
    let n_train = cfg.usize("n_train")?;
    let n_test = cfg.usize("n_test")?;
    let split_seed = cfg.u64("split_seed")?;
    if cfg.dataset_kind()? == DatasetKind::Bars {
        return Ok((
            synth_oriented_bars(n_train, split_seed),
            synth_oriented_bars(n_test, split_seed + 1),
        ));
    }
    let all = load_dataset(cfg.get("images"), cfg.get("labels"))?;
    let idx = split_indices(all.len(), &[n_train, n_test], split_seed)?;
    let (tr, te) = (all.subset(&idx[0], "train"), all.subset(&idx[1], "test"));
    let seed = cfg.u64("transform_seed")?;
    let apply = |ds: Dataset, seed: u64| -> Result<Dataset, CliError> {
        Ok(match cfg.transform()? {
            TransformKind::Identity => ds,
            TransformKind::Rotated => ds.make_rotated(seed)?,
            TransformKind::Scaled => ds.make_scaled(seed)?,
            TransformKind::RotScaled => ds.make_rot_scaled(seed)?,
            TransformKind::Bars => return Err(crate::config_error("transform", "use dataset=bars instead")),
        })
    };
    Ok((apply(tr, seed)?, apply(te, seed + 1)?))
}

/// Settings resolved for a command that reads a checkpoint: the stored
/// training settings first, then whatever the command line overrides.
pub fn with_checkpoint(cli: &ExperimentConfig, overrides: &[(String, String)]) -> Result<(ExperimentConfig, Model), CliError> {
    let container = read_container(cli.checkpoint_path())?;
    let mut cfg = ExperimentConfig::default();
    for (k, v) in &container.config {
        cfg.set(k, v)?;
    }
    cfg.apply(overrides)?;
    cfg.validate()?;
    let mut model = build_model(&cfg.model()?)?;
    load_store(&mut model.store, &container)?;
    Ok((cfg, model))
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (tr, te) = datasets(cfg)?;
    let mut model = build_model(&cfg.model()?)?;
    println!("parameters {}", model.num_parameters());
    let history = train(&mut model, &cfg.train()?, &tr, Some(&te), |m| {
        let eval = m.eval_accuracy.map_or(String::from("-"), |a| format!("{a:.4}"));
        println!(
            "epoch {} loss {:.4} train_acc {:.4} test_acc {eval} ({:.1}s)",
            m.epoch, m.train_loss, m.train_accuracy, m.seconds
        );
    })?;
    let mut csv = String::from("epoch,train_loss,train_accuracy,test_accuracy\n");
    for m in &history {
        let eval = m.eval_accuracy.map_or(String::new(), |a| a.to_string());
        let _ = writeln!(csv, "{},{},{},{eval}", m.epoch, m.train_loss, m.train_accuracy);
    }
    write_output(cfg, "train", "metrics.csv", &csv)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_store(&ckpt, &model.store, cfg.values())?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

pub fn eval_cmd(cfg: &ExperimentConfig, model: &Model) -> Result<(), CliError> {
    let (_, te) = datasets(cfg)?;
    let acc = evaluate(model, &te)?;
    println!("test accuracy {acc:.4} on {} images", te.len());
    write_output(cfg, "eval", "eval.csv", &format!("n_test,accuracy,error\n{},{acc},{}\n", te.len(), 1.0 - acc))
}

pub fn equivariance_cmd(cfg: &ExperimentConfig, model: &Model) -> Result<(), CliError> {
    let (_, te) = datasets(cfg)?;
    let kind = match cfg.get("sweep") {
        "scale" => SweepKind::Scale { min: 0.3, max: 1.0 },
        _ => SweepKind::Rotation,
    };
    let curve = equivariance_sweep(model, &te, kind, cfg.usize("n_steps")?)?;
    for p in &curve.points {
        println!("{} {:.4} error {:.4}", kind.name(), p.value, p.test_error);
    }
    write_output(cfg, "equivariance", "equivariance.csv", &curve.to_csv())?;

    let n = cfg.usize("layerwise_images")?.min(te.len());
    let (images, _) = te.batch(&(0..n).collect::<Vec<_>>());
    let mut csv = String::from("theta,lifted,block1,block2\n");
    for theta in [PI / 2.0, PI / 4.0, PI / 8.0] {
        let e = model_layerwise_error(model, &images, theta)?;
        println!("layerwise theta {theta:.4}: {:.3e} {:.3e} {:.3e}", e[0], e[1], e[2]);
        let _ = writeln!(csv, "{theta},{},{},{}", e[0], e[1], e[2]);
    }
    write_output(cfg, "equivariance", "layerwise.csv", &csv)
}

pub fn redundancy_cmd(cfg: &ExperimentConfig, trained: &Model) -> Result<(), CliError> {
    let initial = build_model(&cfg.model()?)?;
    let grid = &initial.uniform_grids()?.0[0];
    let mut report = RedundancyReport::default();
    let mut kh = String::from("layer,before,after\n");
    for (i, name) in LAYER_NAMES.iter().enumerate() {
        let before = kernel_pca_ratios(initial.group_kernels()[i], &initial.store, grid)?;
        let after = kernel_pca_ratios(trained.group_kernels()[i], &trained.store, grid)?;
        report.layers.push(LayerRedundancy {
            layer: name.to_string(),
            before,
            after,
        });
        let var_before = layer_kh_variance(initial.group_kernels()[i], &initial.store, grid);
        let var_after = layer_kh_variance(trained.group_kernels()[i], &trained.store, grid);
        if let (Ok(b), Ok(a)) = (var_before, var_after) {
            let _ = writeln!(kh, "{name},{b},{a}");
        }
    }
    let bins = cfg.usize("pca_bins")?;
    for (l, (hb, ha)) in report.layers.iter().zip(report.histograms(bins)) {
        println!("{}: mean ratio {:.4} -> {:.4}", l.layer, l.mean_before(), l.mean_after());
        println!("  before {}", sparkline(&hb.bins));
        println!("  after  {}", sparkline(&ha.bins));
    }
    println!("layers with increased redundancy: {}/{}", report.layers_increased(), report.layers.len());
    write_output(cfg, "redundancy", "redundancy.csv", &report.to_csv())?;
    write_output(cfg, "redundancy", "kh_variance.csv", &kh)
}

fn sparkline(bins: &[f64]) -> String {
    const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];
    let max = bins.iter().cloned().fold(0.0, f64::max);
    bins.iter()
        .map(|&b| if max > 0.0 { BARS[((b / max) * 7.0).round() as usize] } else { BARS[0] })
        .collect()
}

pub fn bench_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let channels = cfg.usize("bench_channels")?;
    let size = cfg.usize("bench_size")?;
    let mut configs = Vec::new();
    for f in cfg.factorizations("bench_factorizations")? {
        for n_h in cfg.usize_list("n_h")? {
            let mut cost = CostConfig::per_position(Some(f), n_h, cfg.usize("k")?);
            cost.c_in = channels;
            cost.c_out = channels;
            cost.height = size;
            cost.width = size;
            cost.batch = cfg.usize("bench_batch")?;
            if f == Factorization::HSeparable {
                if n_h % 2 != 0 {
                    return Err(crate::config_error("n_h", "h-separable benchmarks need even grid sizes"));
                }
                cost.s_in = 2;
                cost.s_out = 2;
            }
            configs.push(BenchConfig {
                cost,
                warmup: cfg.usize("warmup")?,
                repeats: cfg.usize("repeats")?,
                seed: cfg.u64("seed")?,
            });
        }
    }
    let reports = benchmark(&configs)?;
    for r in &reports {
        println!("{r}");
    }
    println!("measured MACs match closed form: {}", counts_match(&reports));
    write_output(cfg, "bench", "bench.csv", &bench_csv(&reports))
}

/// Prints one line per check; returns whether all passed.
pub fn selftest_cmd(seed: u64) -> Result<bool, CliError> {
    let results = selftest::run_all(seed)?;
    for r in &results {
        println!("{r}");
    }
    Ok(results.iter().all(|r| r.passed()))
}

pub fn ensure_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(crate::config_error("checkpoint", format!("{} does not exist", path.display())))
    }
}
