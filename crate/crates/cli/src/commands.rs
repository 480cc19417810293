use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use infiniteboost::data::{read_csv, read_libsvm, write_all_atomic, Dataset};
use infiniteboost::diagnostics::{convergence_trace, write_trace_csv};
use infiniteboost::ensemble::{train, BoostConfig, Ensemble};
use infiniteboost::loss::LossKind;
use infiniteboost::metrics::Metric;

use crate::args::{CurveCmd, DataOpts, DiagnoseCmd, EvaluateCmd, Format, PredictCmd, TrainCmd};
use crate::error::CliError;
use crate::manifest::{Fingerprint, RunManifest};

pub struct Loaded {
    pub dataset: Dataset,
    pub fingerprint: Fingerprint,
    pub sparse: bool,
}

pub fn load(role: &str, path: &Path, opts: &DataOpts, labeled: bool) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let format = opts.format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Libsvm,
    });
    let dataset = match format {
        Format::Csv if opts.ranking => {
            return Err(CliError::Usage("--ranking needs LibSVM input with qid fields".into()));
        }
        Format::Csv => read_csv(&bytes[..], labeled.then_some(opts.target.as_str()), !opts.no_header),
        Format::Libsvm => read_libsvm(&bytes[..], opts.ranking),
    }
    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let fingerprint = Fingerprint::new(role, path, &bytes, &dataset);
    log::info!("{role}: {} rows, {} features from {}", dataset.n_samples(), dataset.n_features(), path.display());
    Ok(Loaded { dataset, fingerprint, sparse: format == Format::Libsvm })
}

/// LibSVM files only reveal features up to the largest index present; pads
/// missing trailing columns with zeros. Dense input is left to the model's
/// dimension check.
fn widen(loaded: Loaded, n_features: usize) -> Result<Dataset, CliError> {
    let dataset = loaded.dataset;
    let d = dataset.n_features();
    if !loaded.sparse || d >= n_features {
        return Ok(dataset);
    }
    let mut features = Vec::with_capacity(dataset.n_samples() * n_features);
    for i in 0..dataset.n_samples() {
        features.extend_from_slice(dataset.row(i));
        features.extend(std::iter::repeat_n(0.0, n_features - d));
    }
    let widened = Dataset::new(features, n_features, dataset.targets().to_vec())?;
    Ok(match dataset.query_groups() {
        Some(groups) => widened.with_query_groups(groups.to_vec())?,
        None => widened,
    })
}

/// Logistic loss trains on {-1, +1}; 0/1 files are mapped.
fn targets_for(loss: LossKind, dataset: Dataset) -> Result<Dataset, CliError> {
    match loss {
        LossKind::Logistic => Ok(dataset.to_signed_labels()?),
        _ => Ok(dataset),
    }
}

fn check_metric(metric: Metric, dataset: &Dataset) -> Result<(), CliError> {
    match metric {
        Metric::Ndcg(_) if dataset.query_groups().is_none() => {
            Err(CliError::Usage(format!("{metric} needs query groups: pass --ranking with qid data")))
        }
        Metric::Auc if dataset.targets().iter().any(|&y| ![0.0, 1.0, -1.0].contains(&y)) => {
            Err(CliError::Usage("auc needs binary 0/1 or -1/+1 targets".into()))
        }
        _ => Ok(()),
    }
}

fn parse_metric(s: &str) -> Result<Metric, CliError> {
    s.parse::<Metric>().map_err(|e| CliError::Usage(e.to_string()))
}

fn load_model(path: &Path) -> Result<Ensemble, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ensemble::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn fit(manifest: &mut RunManifest, dataset: &Dataset, config: &BoostConfig) -> Result<Ensemble, CliError> {
    let model = manifest.timed("train", || train(dataset, config))?;
    log::info!("trained {} trees in {} mode", model.n_trees(), model.mode());
    Ok(model)
}

fn write_model(model: &Ensemble, path: &Path) -> Result<(), CliError> {
    let mut json = model.to_json()?;
    json.push('\n');
    write_all_atomic(path, json.as_bytes())?;
    Ok(())
}

pub fn train_cmd(cmd: TrainCmd) -> Result<(), CliError> {
    let config = cmd.model_opts.resolve()?;
    let mut manifest = RunManifest::new("train", Some(&config));
    let loaded = manifest.timed("load", || load("train", &cmd.data, &cmd.data_opts, true))?;
    let dataset = targets_for(config.loss, loaded.dataset)?;
    manifest.inputs.push(loaded.fingerprint);
    manifest.param("ranking", cmd.data_opts.ranking);
    let model = fit(&mut manifest, &dataset, &config)?;
    write_model(&model, &cmd.model)?;
    manifest.outputs.push(cmd.model.clone());
    if let Some(c) = model.current_capacity().filter(|_| config.mode.is_infinite()) {
        manifest.param("final_capacity", c);
    }
    let m = manifest.write_beside(&cmd.model)?;
    eprintln!("wrote {} and {}", cmd.model.display(), m.display());
    Ok(())
}

pub fn predict_cmd(cmd: PredictCmd) -> Result<(), CliError> {
    let model = load_model(&cmd.model)?;
    let mut manifest = RunManifest::new("predict", None);
    let loaded = load("data", &cmd.data, &cmd.data_opts, !cmd.unlabeled)?;
    manifest.inputs.push(loaded.fingerprint.clone());
    let dataset = widen(loaded, model.n_features())?;
    let predictions = if cmd.proba { model.predict_proba(&dataset)? } else { model.predict(&dataset)? };

    let mut text = String::with_capacity(predictions.len() * 20);
    for p in &predictions {
        let _ = writeln!(text, "{p}");
    }
    match &cmd.out {
        Some(path) => {
            write_all_atomic(path, text.as_bytes())?;
            manifest.param("model", &cmd.model);
            manifest.param("proba", cmd.proba);
            manifest.outputs.push(path.clone());
            manifest.write_beside(path)?;
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn evaluate_cmd(cmd: EvaluateCmd) -> Result<(), CliError> {
    let metric = parse_metric(&cmd.metric)?;
    let model = load_model(&cmd.model)?;
    let loaded = load("data", &cmd.data, &cmd.data_opts, true)?;
    let dataset = widen(loaded, model.n_features())?;
    check_metric(metric, &dataset)?;
    let result = metric.evaluate(&dataset, &model.predict(&dataset)?)?;
    println!("{}", serde_json::to_string(&result).map_err(|e| CliError::Data(e.to_string()))?);
    Ok(())
}

pub fn curve_cmd(cmd: CurveCmd) -> Result<(), CliError> {
    let metric = parse_metric(&cmd.metric)?;
    if cmd.step == 0 {
        return Err(CliError::Usage("--step must be at least 1".into()));
    }
    let config = cmd.model_opts.resolve()?;
    let mut manifest = RunManifest::new("curve", Some(&config));
    manifest.param("metric", metric.to_string());
    manifest.param("step", cmd.step);

    let train_set = load("train", &cmd.train, &cmd.data_opts, true)?;
    let test_set = load("test", &cmd.test, &cmd.data_opts, true)?;
    let d = train_set.dataset.n_features().max(test_set.dataset.n_features());
    manifest.inputs.push(train_set.fingerprint.clone());
    manifest.inputs.push(test_set.fingerprint.clone());
    let train_data = targets_for(config.loss, widen(train_set, d)?)?;
    let test_data = targets_for(config.loss, widen(test_set, d)?)?;
    check_metric(metric, &train_data)?;
    check_metric(metric, &test_data)?;

    let model = fit(&mut manifest, &train_data, &config)?;
    let (train_curve, test_curve) = manifest.timed("evaluate", || -> Result<_, CliError> {
        Ok((staged_metric(&model, &train_data, cmd.step, metric)?, staged_metric(&model, &test_data, cmd.step, metric)?))
    })?;

    let mut text = String::from("iteration,train_metric,test_metric\n");
    for ((k, a), (_, b)) in train_curve.iter().zip(&test_curve) {
        let _ = writeln!(text, "{k},{a},{b}");
    }
    write_all_atomic(&cmd.out, text.as_bytes())?;
    manifest.outputs.push(cmd.out.clone());
    if let Some(path) = &cmd.model {
        write_model(&model, path)?;
        manifest.outputs.push(path.clone());
    }
    let m = manifest.write_beside(&cmd.out)?;
    eprintln!("wrote {} ({} rows) and {}", cmd.out.display(), test_curve.len(), m.display());
    Ok(())
}

fn staged_metric(model: &Ensemble, dataset: &Dataset, step: usize, metric: Metric) -> Result<Vec<(usize, f64)>, CliError> {
    let mut rows = Vec::new();
    let mut failure = None;
    model.staged_predict_with(dataset, step, |k, p| match metric.evaluate(dataset, p) {
        Ok(r) => rows.push((k, r.value)),
        Err(e) => {
            failure.get_or_insert(e);
        }
    })?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(rows),
    }
}

pub fn diagnose_cmd(cmd: DiagnoseCmd) -> Result<(), CliError> {
    let config = cmd.model_opts.resolve()?;
    if !config.mode.is_infinite() {
        return Err(CliError::Usage(format!("diagnose needs --mode infinite or infinite-adaptive, not {}", config.mode)));
    }
    if cmd.probe_every == 0 || cmd.probe_trees == 0 {
        return Err(CliError::Usage("--probe-every and --probe-trees must be at least 1".into()));
    }
    let mut manifest = RunManifest::new("diagnose", Some(&config));
    manifest.param("probe_every", cmd.probe_every);
    manifest.param("probe_trees", cmd.probe_trees);
    let loaded = load("train", &cmd.data, &cmd.data_opts, true)?;
    let dataset = targets_for(config.loss, loaded.dataset)?;
    manifest.inputs.push(loaded.fingerprint);

    let rows = manifest.timed("train", || convergence_trace(&config, &dataset, cmd.probe_every, cmd.probe_trees))?;
    let mut out = Vec::new();
    write_trace_csv(&rows, &mut out)?;
    write_all_atomic(&cmd.out, &out)?;
    manifest.outputs.push(cmd.out.clone());
    let m = manifest.write_beside(&cmd.out)?;
    eprintln!("wrote {} ({} rows) and {}", cmd.out.display(), rows.len(), m.display());
    Ok(())
}
