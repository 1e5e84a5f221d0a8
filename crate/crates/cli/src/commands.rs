use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use sparge_core::data_io::{
    self, generate_synthetic, impute, load_model, normalize_observed, parse_table, save_model, write_csv, Dataset,
    EncodingMap, ImputePolicy, LoadOptions, NearbyWeights, StringTable, SyntheticSpec, DEFAULT_MISSING,
};
use sparge_core::similarity::{
    embed, embed_all, encode, evaluate, knn_classify_columns, knn_query, logreg_predict, logreg_train,
    similar_by_weight, EmbeddedPatient,
};
use sparge_core::trainer::{grid_search, gradcheck, GridPoint};
use sparge_core::{fit, ObservedMatrix, Result, SimilarityResult, SpargeError, SpargeModel};

use crate::args::{
    Baseline, Command, EmbedArgs, EvaluateArgs, FitArgs, GradcheckArgs, GridArgs, ImputeArg, PrepArgs, QueryArgs,
    SynthArgs, WeightsArg,
};

/// Relative-error bounds reported by `gradcheck`.
const GRAD_U_BOUND: f64 = 1e-5;
const GRAD_D_BOUND: f64 = 1e-3;

pub fn dispatch(command: Command, config: &[(String, String)]) -> Result<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Fit(a) => fit_cmd(&a, config),
        Command::Embed(a) => embed_cmd(&a, config),
        Command::Query(a) => query(&a, config),
        Command::Evaluate(a) => evaluate_cmd(&a, config),
        Command::Gradcheck(a) => gradcheck_cmd(&a, config),
        Command::Gridsearch(a) => gridsearch(&a, config),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SpargeError + '_ {
    move |source| SpargeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write to the file, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(io_err(p)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// A loaded and preprocessed CSV.
struct Prepared {
    x: ObservedMatrix,
    labels: Option<Vec<usize>>,
    ids: Vec<String>,
}

fn parse_labels(raw: &[String]) -> Result<Vec<usize>> {
    raw.iter()
        .enumerate()
        .map(|(row, s)| {
            s.trim().parse::<usize>().map_err(|_| SpargeError::Csv {
                row: row + 1,
                column: 0,
                message: format!("label {s:?} is not a non-negative integer class id"),
            })
        })
        .collect()
}

fn prepare(path: &Path, prep: &PrepArgs, config: &[(String, String)]) -> Result<Prepared> {
    let mut table = StringTable::read(path)?;
    let mut map = if prep.questionnaire {
        EncodingMap::questionnaire()
    } else {
        EncodingMap::new(&DEFAULT_MISSING)
    };
    map.extend(EncodingMap::from_pairs(config, &DEFAULT_MISSING)?)?;
    if !map.is_empty() {
        table = data_io::encode_integer(&table, &map)?;
    }
    let present = |name: &str| table.column_index(name).is_some().then(|| name.to_string());
    let opts = LoadOptions {
        label_column: present(&prep.label_column),
        id_column: present(&prep.id_column),
        ..LoadOptions::default()
    };
    let Dataset {
        x,
        feature_names,
        labels,
        ids,
    } = parse_table(&table, &opts)?;
    let policy = match prep.impute {
        ImputeArg::None => ImputePolicy::None,
        ImputeArg::Mean => ImputePolicy::Mean,
        ImputeArg::Nearby => ImputePolicy::WeightedNearby {
            window: prep.impute_window,
            weights: match prep.impute_weights {
                WeightsArg::InverseRank => NearbyWeights::InverseRank,
                WeightsArg::Uniform => NearbyWeights::Uniform,
            },
        },
        ImputeArg::Normal => {
            let ImputePolicy::NormalValues(mut table) = ImputePolicy::clinical_normal_values() else {
                unreachable!("preset is a value table")
            };
            for (k, v) in config {
                if let Some(name) = k.strip_prefix("impute.") {
                    let value = v
                        .parse()
                        .map_err(|_| SpargeError::Config(format!("impute value {v:?} for {name:?} is not a number")))?;
                    table.insert(name.to_string(), value);
                }
            }
            ImputePolicy::NormalValues(table)
        }
    };
    let mut x = impute(&x, &feature_names, &policy)?;
    if prep.normalize {
        x = normalize_observed(&x)?.0;
    }
    let ids = ids.unwrap_or_else(|| (0..x.ncols()).map(|j| j.to_string()).collect());
    Ok(Prepared {
        labels: labels.as_deref().map(parse_labels).transpose()?,
        x,
        ids,
    })
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        subspace_count: a.classes,
        ambient_dim: a.ambient_dim,
        subspace_dim: a.subspace_dim,
        per_class_count: a.per_class,
        noise_sigma: a.noise,
        missing_rate: a.missing,
        seed: a.seed,
    };
    let s = generate_synthetic(&spec)?;
    let n = s.labels.len();
    let feature_names: Vec<String> = (0..spec.ambient_dim).map(|i| format!("x{i}")).collect();
    let ids: Vec<String> = (0..n).map(|j| format!("p{j}")).collect();
    let labels: Vec<String> = s.labels.iter().map(usize::to_string).collect();
    let observed = Dataset {
        x: s.observed,
        feature_names: feature_names.clone(),
        labels: Some(labels.clone()),
        ids: Some(ids.clone()),
    };
    write_csv(&a.output, &observed, "label", "id")?;
    let truth_path = a.truth.clone().unwrap_or_else(|| with_suffix(&a.output, ".truth.csv"));
    let truth = Dataset {
        x: ObservedMatrix::fully_observed(s.clean)?,
        feature_names,
        labels: Some(labels),
        ids: Some(ids),
    };
    write_csv(&truth_path, &truth, "label", "id")?;
    log::info!("wrote {n} samples to {} and {}", a.output.display(), truth_path.display());
    Ok(())
}

fn fit_cmd(a: &FitArgs, config: &[(String, String)]) -> Result<()> {
    let hp = a.hp.to_hyperparams();
    hp.validate()?;
    let data = prepare(&a.input, &a.prep, config)?;
    if hp.is_supervised() && data.labels.is_none() {
        return Err(SpargeError::Config(format!(
            "supervised mode needs a {:?} column in {}",
            a.prep.label_column,
            a.input.display()
        )));
    }
    let labels = if hp.is_supervised() { data.labels.as_deref() } else { None };
    let (model, report) = fit(&data.x, labels, &hp)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    save_model(&model, &a.output)?;
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.output, ".report.csv"));
    emit(Some(&report_path), &report.to_csv(a.timing))?;
    let last = report
        .objective_trace
        .last()
        .copied()
        .or(report.initial_objective)
        .map_or(String::new(), |j| format!("{j:e}"));
    println!(
        "iterations,{}\nconverged,{}\nobjective,{last}",
        report.iterations_run, report.converged
    );
    Ok(())
}

fn embeddings_csv(points: &[EmbeddedPatient]) -> String {
    let l = points.first().map_or(0, |p| p.y.len());
    let mut out = String::from("id");
    for i in 0..l {
        out.push_str(&format!(",y{i}"));
    }
    out.push('\n');
    for p in points {
        out.push_str(&p.id);
        for v in p.y.iter() {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

fn embed_cmd(a: &EmbedArgs, config: &[(String, String)]) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = prepare(&a.input, &a.prep, config)?;
    let points = embed_all(&model, &data.x, Some(&data.ids))?;
    emit(a.output.as_deref(), &embeddings_csv(&points))
}

fn training_population(model: &SpargeModel) -> Result<Vec<EmbeddedPatient>> {
    let y = model.embedded_training();
    y.column_iter()
        .enumerate()
        .map(|(j, c)| EmbeddedPatient::new(j.to_string(), c.into_owned()))
        .collect()
}

fn query(a: &QueryArgs, config: &[(String, String)]) -> Result<()> {
    let model = load_model(&a.model)?;
    let sample = prepare(&a.sample, &a.prep, config)?;
    if a.row >= sample.x.ncols() {
        return Err(SpargeError::InvalidParameter(format!(
            "row {} is out of range for {} samples",
            a.row,
            sample.x.ncols()
        )));
    }
    let x = sample.x.column(a.row);
    let text = if a.by_weight {
        let SimilarityResult { sparse_weights, .. } = similar_by_weight(&model, &x)?;
        let mut out = String::from("rank,atom,weight\n");
        for (r, (atom, w)) in sparse_weights.unwrap_or_default().iter().enumerate() {
            out.push_str(&format!("{},{atom},{w:?}\n", r + 1));
        }
        out
    } else {
        let population = match &a.population {
            Some(p) => {
                let d = prepare(p, &a.prep, config)?;
                embed_all(&model, &d.x, Some(&d.ids))?
            }
            None => training_population(&model)?,
        };
        let q = embed(&model, sample.ids[a.row].clone(), &x)?;
        let res = knn_query(&population, &q.y, a.neighbors)?;
        let mut out = String::from("rank,id,distance\n");
        for (r, (id, d)) in res.neighbor_ids.iter().zip(&res.distances).enumerate() {
            out.push_str(&format!("{},{id},{d:?}\n", r + 1));
        }
        out
    };
    emit(a.output.as_deref(), &text)
}

/// Raw feature matrix: observed values with zeros in unobserved cells.
fn raw_features(x: &ObservedMatrix) -> DMatrix<f64> {
    x.values().clone()
}

fn evaluate_cmd(a: &EvaluateArgs, config: &[(String, String)]) -> Result<()> {
    let model = load_model(&a.model)?;
    let test = prepare(&a.input, &a.prep, config)?;
    let truth = test
        .labels
        .clone()
        .ok_or_else(|| SpargeError::Config(format!("{} has no {:?} column", a.input.display(), a.prep.label_column)))?;
    let model_labels = || {
        model
            .labels
            .clone()
            .ok_or_else(|| SpargeError::Config("the model was fitted without labels".into()))
    };
    let raw_train = || -> Result<(DMatrix<f64>, Vec<usize>)> {
        let path = a
            .train
            .as_ref()
            .ok_or_else(|| SpargeError::Config("raw-space baselines need --train".into()))?;
        let d = prepare(path, &a.prep, config)?;
        let labels = d
            .labels
            .ok_or_else(|| SpargeError::Config(format!("{} has no label column", path.display())))?;
        Ok((raw_features(&d.x), labels))
    };
    let n = test.x.ncols();
    let mut predictions = Vec::with_capacity(n);
    let mut timings = Vec::with_capacity(n);
    match a.baseline {
        Baseline::Sparge | Baseline::Knn | Baseline::Lr => {
            let labels = model_labels()?;
            let points = match a.baseline {
                Baseline::Knn => model.codes.codes().clone(),
                _ => model.embedded_training(),
            };
            let lr = if a.baseline == Baseline::Lr {
                Some(logreg_train(&points, &labels, a.l2, 100)?)
            } else {
                None
            };
            for j in 0..n {
                let start = Instant::now();
                let x = test.x.column(j);
                let feature = match a.baseline {
                    Baseline::Knn => encode(&model, &x)?.phi,
                    _ => embed(&model, "", &x)?.y,
                };
                let p = match &lr {
                    Some(m) => logreg_predict(m, feature.as_slice())?,
                    None => knn_classify_columns(&points, &labels, feature.as_slice(), a.neighbors)?,
                };
                timings.push(start.elapsed().as_secs_f64());
                predictions.push(p);
            }
        }
        Baseline::RawKnn | Baseline::RawLr => {
            let (points, labels) = raw_train()?;
            let queries = raw_features(&test.x);
            if points.nrows() != queries.nrows() {
                return Err(SpargeError::DimensionMismatch {
                    context: "train vs test features",
                    expected: points.nrows().to_string(),
                    found: queries.nrows().to_string(),
                });
            }
            let lr = if a.baseline == Baseline::RawLr {
                Some(logreg_train(&points, &labels, a.l2, 100)?)
            } else {
                None
            };
            for q in queries.column_iter() {
                let start = Instant::now();
                let q: Vec<f64> = q.iter().copied().collect();
                let p = match &lr {
                    Some(m) => logreg_predict(m, &q)?,
                    None => knn_classify_columns(&points, &labels, &q, a.neighbors)?,
                };
                timings.push(start.elapsed().as_secs_f64());
                predictions.push(p);
            }
        }
    }
    let metrics = evaluate(&predictions, &truth, &timings)?;
    emit(a.output.as_deref(), &metrics.to_csv(None, a.timing))
}

fn gradcheck_cmd(a: &GradcheckArgs, config: &[(String, String)]) -> Result<()> {
    let hp = a.hp.to_hyperparams();
    hp.validate()?;
    let (x, labels) = match &a.input {
        Some(path) => {
            let d = prepare(path, &a.prep, config)?;
            (d.x, d.labels)
        }
        None => {
            let toy = generate_synthetic(&SyntheticSpec {
                subspace_count: 3,
                ambient_dim: 20,
                subspace_dim: 3,
                per_class_count: 15,
                noise_sigma: 0.01,
                missing_rate: 0.1,
                seed: hp.seed,
            })?;
            (toy.observed, Some(toy.labels))
        }
    };
    let labels = if hp.is_supervised() { labels } else { None };
    let r = gradcheck(&x, labels.as_deref(), &hp, a.h)?;
    let status = |e: f64, bound: f64| if e < bound { "ok" } else { "above bound" };
    let mut out = String::from("quantity,relative_error,bound,status\n");
    out.push_str(&format!(
        "grad_u,{:e},{GRAD_U_BOUND:e},{}\n",
        r.grad_u_rel_error,
        status(r.grad_u_rel_error, GRAD_U_BOUND)
    ));
    out.push_str(&format!(
        "grad_d,{:e},{GRAD_D_BOUND:e},{}\n",
        r.grad_d_rel_error,
        status(r.grad_d_rel_error, GRAD_D_BOUND)
    ));
    out.push_str(&format!("# h={:e} boundary={} excluded={}\n", r.h, r.boundary, r.excluded));
    emit(a.output.as_deref(), &out)
}

fn gridsearch(a: &GridArgs, config: &[(String, String)]) -> Result<()> {
    let base = a.hp.to_hyperparams();
    base.validate()?;
    let data = prepare(&a.input, &a.prep, config)?;
    let labels = data
        .labels
        .ok_or_else(|| SpargeError::Config(format!("{} has no label column", a.input.display())))?;
    let or_base = |v: &Vec<f64>, b: f64| if v.is_empty() { vec![b] } else { v.clone() };
    let mut grid = Vec::new();
    for &lambda1 in &or_base(&a.grid_lambda1, base.lambda1) {
        for &lambda2 in &or_base(&a.grid_lambda2, base.lambda2) {
            for &r1 in &or_base(&a.grid_r1, base.r1) {
                for &r2 in &or_base(&a.grid_r2, base.r2) {
                    grid.push(GridPoint { lambda1, lambda2, r1, r2 });
                }
            }
        }
    }
    let result = grid_search(&data.x, &labels, &base, &grid, a.folds, base.seed)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let best: BTreeMap<&str, f64> = [
        ("lambda1", result.best.lambda1),
        ("lambda2", result.best.lambda2),
        ("r1", result.best.r1),
        ("r2", result.best.r2),
    ]
    .into_iter()
    .collect();
    log::info!("best grid point {}: {best:?}", result.best_index);
    emit(a.output.as_deref(), &result.to_csv())
}
