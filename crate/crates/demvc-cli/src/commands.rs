//! Command implementations.

use crate::config::resolve;
use crate::{runtime, usage, AblateArgs, CliError, DumpArgs, EvalArgs, SynthKind, TrainArgs};
use demvc::autoencoder::load_checkpoint;
use demvc::data::{
    make_gaussian_multiview, make_noisy_view, make_paired_views, make_rotated_view,
    write_embeddings, MultiViewDataset,
};
use demvc::tensor::Tensor;
use demvc::train::{fit, write_run_artifacts, AssignmentReport, MetricTriple, Mode, TrainConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn load_dataset(path: &Path) -> Result<MultiViewDataset, CliError> {
    if !path.exists() {
        return Err(usage(format!(
            "input path {} does not exist",
            path.display()
        )));
    }
    MultiViewDataset::load(path).map_err(usage)
}

fn print_summary(path: &Path, ds: &MultiViewDataset) {
    let dims: Vec<usize> = (0..ds.n_views()).map(|v| ds.view(v).cols()).collect();
    let mut line = format!(
        "wrote {}: V={} views, N={} samples, dims {:?}",
        path.display(),
        ds.n_views(),
        ds.n_samples(),
        dims
    );
    if let Some(labels) = ds.labels() {
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in labels {
            *hist.entry(l).or_default() += 1;
        }
        write!(line, ", labels {hist:?}").unwrap();
    }
    println!("{line}");
}

fn replace_view(
    ds: &MultiViewDataset,
    view_1based: usize,
    replacement: Tensor,
) -> Result<MultiViewDataset, CliError> {
    if view_1based == 0 || view_1based > ds.n_views() {
        return Err(usage(format!(
            "view {view_1based} outside 1..={}",
            ds.n_views()
        )));
    }
    let mut views: Vec<Tensor> = ds.views().to_vec();
    views[view_1based - 1] = replacement;
    MultiViewDataset::new(
        views,
        ds.labels().map(<[usize]>::to_vec),
        ds.shape_hints().to_vec(),
    )
    .map_err(usage)
}

pub fn synth(kind: SynthKind) -> Result<(), CliError> {
    let (ds, out) = match kind {
        SynthKind::Gaussian {
            classes,
            per_class,
            views,
            latent_dim,
            mut view_dims,
            seed,
            out,
        } => {
            if views == 0 {
                return Err(usage("--views must be at least 1"));
            }
            let last = *view_dims
                .last()
                .ok_or_else(|| usage("--view-dims is empty"))?;
            view_dims.resize(views, last);
            view_dims.truncate(views);
            let ds = make_gaussian_multiview(per_class, classes, latent_dim, &view_dims, seed)
                .map_err(usage)?;
            (ds, out)
        }
        SynthKind::Paired {
            input,
            views,
            seed,
            out,
        } => {
            let base = load_dataset(&input)?;
            let ds = make_paired_views(&base, views, seed).map_err(usage)?;
            (ds, out)
        }
        SynthKind::Noisy {
            input,
            view,
            seed,
            out,
        } => {
            let base = load_dataset(&input)?;
            if view == 0 || view > base.n_views() {
                return Err(usage(format!("view {view} outside 1..={}", base.n_views())));
            }
            let noisy = make_noisy_view(base.view(view - 1), base.shape_hint(view - 1), seed)
                .map_err(usage)?;
            (replace_view(&base, view, noisy)?, out)
        }
        SynthKind::Rotated {
            input,
            view,
            seed,
            out,
        } => {
            let base = load_dataset(&input)?;
            if view == 0 || view > base.n_views() {
                return Err(usage(format!("view {view} outside 1..={}", base.n_views())));
            }
            let rotated = make_rotated_view(base.view(view - 1), base.shape_hint(view - 1), seed)
                .map_err(usage)?;
            (replace_view(&base, view, rotated)?, out)
        }
    };
    ds.save(&out).map_err(runtime)?;
    print_summary(&out, &ds);
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let cfg = resolve(&args.preset, args.config.as_deref(), &args.overrides)?;
    cfg.validate(dataset.n_views(), dataset.n_samples())
        .map_err(usage)?;

    let (state, report) = fit(&dataset, &cfg).map_err(runtime)?;
    write_run_artifacts(&args.out, &state, &dataset, &report, args.dump_embeddings)
        .map_err(runtime)?;

    println!(
        "run complete: {} iterations, consensus {:.4}, artifacts in {}",
        state.iter_count,
        report.consensus_rate,
        args.out.display()
    );
    if let Some(metrics) = &report.metrics {
        println!(
            "fused: acc {:.2} nmi {:.2} ari {:.2}",
            metrics.fused.acc * 100.0,
            metrics.fused.nmi * 100.0,
            metrics.fused.ari * 100.0
        );
    }
    Ok(())
}

fn metric_json(t: &MetricTriple) -> String {
    format!(
        "{{\"acc\": {:.2}, \"nmi\": {:.2}, \"ari\": {:.2}}}",
        t.acc * 100.0,
        t.nmi * 100.0,
        t.ari * 100.0
    )
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let report_path = args.run.join("report.json");
    let text = std::fs::read_to_string(&report_path)
        .map_err(|e| usage(format!("cannot read {}: {e}", report_path.display())))?;
    let report = AssignmentReport::from_json(&text).map_err(usage)?;

    let metrics = match (&report.metrics, &args.labels) {
        (Some(m), _) => m.clone(),
        (None, Some(source)) => {
            let labels_ds = load_dataset(source)?;
            let truth = labels_ds
                .labels()
                .ok_or_else(|| usage(format!("{} carries no labels", source.display())))?;
            if truth.len() != report.n_samples {
                return Err(usage(format!(
                    "label source has {} samples, run has {}",
                    truth.len(),
                    report.n_samples
                )));
            }
            let per_view = report
                .per_view_hard
                .iter()
                .map(|pred| MetricTriple::compute(truth, pred))
                .collect::<demvc::Result<Vec<_>>>()
                .map_err(runtime)?;
            let fused = MetricTriple::compute(truth, &report.fused_hard).map_err(runtime)?;
            demvc::train::ReportMetrics { per_view, fused }
        }
        (None, None) => {
            return Err(usage(
                "run has no stored metrics and no --labels source was given",
            ))
        }
    };

    let views: Vec<String> = metrics.per_view.iter().map(metric_json).collect();
    println!(
        "{{\n  \"fused\": {},\n  \"views\": [{}],\n  \"consensus_rate\": {:.4}\n}}",
        metric_json(&metrics.fused),
        views.join(", "),
        report.consensus_rate
    );
    Ok(())
}

struct RunCell {
    mode: Mode,
    seed: u64,
    outcome: Result<(MetricTriple, f64), String>,
}

pub fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    if dataset.labels().is_none() {
        return Err(usage(
            "ablation needs a labeled dataset to aggregate metrics",
        ));
    }
    if args.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let base_cfg = resolve(&args.preset, args.config.as_deref(), &args.overrides)?;
    base_cfg
        .validate(dataset.n_views(), dataset.n_samples())
        .map_err(usage)?;
    std::fs::create_dir_all(&args.out).map_err(runtime)?;

    let mut cells = Vec::new();
    for &mode in &Mode::ALL {
        for seed in args.seed_base..args.seed_base + args.seeds {
            let cfg = TrainConfig {
                mode,
                seed,
                ..base_cfg.clone()
            };
            let outcome = match fit(&dataset, &cfg) {
                Ok((_, report)) => {
                    let m = report.metrics.as_ref().expect("labeled dataset");
                    println!(
                        "mode {mode} seed {seed}: fused acc {:.4}, consensus {:.4}",
                        m.fused.acc, report.consensus_rate
                    );
                    Ok((m.fused, report.consensus_rate))
                }
                Err(e) => {
                    println!("mode {mode} seed {seed}: FAILED ({e})");
                    Err(e.to_string())
                }
            };
            cells.push(RunCell {
                mode,
                seed,
                outcome,
            });
        }
    }

    let mut csv = String::from(
        "mode,runs,failed,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std,consensus_mean\n",
    );
    let mut aggregates = Vec::new();
    for &mode in &Mode::ALL {
        let ok: Vec<&(MetricTriple, f64)> = cells
            .iter()
            .filter(|c| c.mode == mode)
            .filter_map(|c| c.outcome.as_ref().ok())
            .collect();
        let failed = cells
            .iter()
            .filter(|c| c.mode == mode && c.outcome.is_err())
            .count();
        let stats = |f: &dyn Fn(&(MetricTriple, f64)) -> f64| -> (f64, f64) {
            if ok.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            let n = ok.len() as f64;
            let mean = ok.iter().map(|c| f(c)).sum::<f64>() / n;
            let var = ok.iter().map(|c| (f(c) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (acc_mean, acc_std) = stats(&|c| c.0.acc);
        let (nmi_mean, nmi_std) = stats(&|c| c.0.nmi);
        let (ari_mean, ari_std) = stats(&|c| c.0.ari);
        let (consensus_mean, _) = stats(&|c| c.1);
        writeln!(
            csv,
            "{mode},{},{failed},{acc_mean},{acc_std},{nmi_mean},{nmi_std},{ari_mean},{ari_std},{consensus_mean}",
            ok.len()
        )
        .unwrap();
        aggregates.push(serde_json::json!({
            "mode": mode.to_string(),
            "runs": ok.len(),
            "failed": failed,
            "acc_mean": acc_mean,
            "acc_std": acc_std,
            "nmi_mean": nmi_mean,
            "nmi_std": nmi_std,
            "ari_mean": ari_mean,
            "ari_std": ari_std,
            "consensus_mean": consensus_mean,
        }));
    }
    std::fs::write(args.out.join("ablate.csv"), &csv).map_err(runtime)?;

    let runs: Vec<serde_json::Value> = cells
        .iter()
        .map(|c| match &c.outcome {
            Ok((m, consensus)) => serde_json::json!({
                "mode": c.mode.to_string(),
                "seed": c.seed,
                "status": "ok",
                "acc": m.acc,
                "nmi": m.nmi,
                "ari": m.ari,
                "consensus_rate": consensus,
            }),
            Err(e) => serde_json::json!({
                "mode": c.mode.to_string(),
                "seed": c.seed,
                "status": format!("error: {e}"),
            }),
        })
        .collect();
    let doc = serde_json::json!({ "runs": runs, "aggregates": aggregates });
    std::fs::write(
        args.out.join("ablate.json"),
        serde_json::to_string_pretty(&doc).expect("json"),
    )
    .map_err(runtime)?;

    print!("{csv}");
    Ok(())
}

pub fn dump_embeddings(args: DumpArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    for v in 1..=dataset.n_views() {
        let path = args.run.join(format!("view{v}.aecp"));
        if !path.exists() {
            return Err(usage(format!(
                "checkpoint {} is missing (run directory incomplete?)",
                path.display()
            )));
        }
        checkpoints.push(path);
    }
    let mut embeddings = Vec::with_capacity(checkpoints.len());
    for (v, path) in checkpoints.iter().enumerate() {
        let (ae, _) = load_checkpoint(path).map_err(usage)?;
        let z = ae.encode(dataset.view(v)).map_err(runtime)?;
        embeddings.push(z);
    }
    write_embeddings(&embeddings, &args.out).map_err(runtime)?;
    println!(
        "wrote {}: {} views embedded at dim {}",
        args.out.display(),
        embeddings.len(),
        embeddings[0].cols()
    );
    Ok(())
}
