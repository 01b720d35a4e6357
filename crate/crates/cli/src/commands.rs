use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use noma_beam::channel::{generate_dataset, load_channels, load_dataset, order_users, save_dataset, user_order};
use noma_beam::cnn::{train as train_model, TrainConfig};
use noma_beam::evalbench::{bench_time, emit_csv, learning_curves, power_curve, Method, ModelMatch, ModelSet, GAMMA_GRID_DB};
use noma_beam::precoding::power_allocation;
use noma_beam::socp::SocpLabeler;
use noma_beam::{ChannelSet, CnnModel, DatasetParams, Encoding, SinrSpec, SolverOptions, SolverStatus};
use serde_json::json;

use crate::config::FileConfig;
use crate::exit::CliError;
use crate::{BenchArgs, EvalArgs, GenDataArgs, PredictArgs, SolverArgs, TrainArgs};

const DEFAULT_N: usize = 4;
const DEFAULT_K: usize = 3;
const DEFAULT_SIGMA2: f64 = 0.1;
const DEFAULT_GAMMA_DB: f64 = 5.0;
const DEFAULT_COUNT: usize = 20_000;
const DEFAULT_INSTANCES: usize = 50;
/// Share of numerical failures above which a generated dataset is rejected.
const MAX_FAILURE_RATE: f64 = 0.1;

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` is not a readable file", path.display())))
    }
}

fn require_writable(path: &Path) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("directory of `{}` does not exist", path.display())));
    }
    if path.is_dir() {
        return Err(CliError::Usage(format!("output `{}` is a directory", path.display())));
    }
    Ok(())
}

fn solver_options(a: &SolverArgs, file: &FileConfig) -> SolverOptions {
    let d = SolverOptions::default();
    SolverOptions {
        tol_gap: a.tol_gap.or(file.tol_gap).unwrap_or(d.tol_gap),
        tol_feas: a.tol_feas.or(file.tol_feas).unwrap_or(d.tol_feas),
        max_iter: a.max_iter.or(file.max_iter).unwrap_or(d.max_iter),
        verbose: false,
    }
}

fn print_summary(v: serde_json::Value) {
    println!("{v}");
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<CnnModel>, CliError> {
    paths
        .iter()
        .map(|p| CnnModel::load(p).map_err(CliError::from))
        .collect()
}

fn ordered_channels(path: &Path) -> Result<Vec<ChannelSet>, CliError> {
    Ok(load_channels(path)?.iter().map(order_users).collect())
}

pub fn gen_data(a: GenDataArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = a
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::Usage("--seed is required".into()))?;
    let params = DatasetParams {
        count: a.count.or(file.count).unwrap_or(DEFAULT_COUNT),
        n: a.n.or(file.n).unwrap_or(DEFAULT_N),
        k: a.k.or(file.k).unwrap_or(DEFAULT_K),
        sigma2: a.sigma2.or(file.sigma2).unwrap_or(DEFAULT_SIGMA2),
        gamma_db: a.gamma_db.or(file.gamma_db).unwrap_or(DEFAULT_GAMMA_DB),
        seed,
    };
    if params.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    require_writable(&a.out)?;
    let labeler = SocpLabeler {
        opts: solver_options(&a.solver, file),
    };

    let start = Instant::now();
    let samples = generate_dataset(&params, &labeler)?;
    save_dataset(&samples, &a.out)?;

    let optimal: Vec<_> = samples.iter().filter(|s| s.is_optimal()).collect();
    let failures = samples.iter().filter(|s| s.status == SolverStatus::NumericalFailure).count();
    let infeasible = samples.iter().filter(|s| s.status == SolverStatus::Infeasible).count();
    let mean_power = if optimal.is_empty() {
        None
    } else {
        Some(optimal.iter().map(|s| s.total_power).sum::<f64>() / optimal.len() as f64)
    };
    let count = samples.len();
    print_summary(json!({
        "command": "gen-data",
        "out": a.out,
        "count": count,
        "n": params.n,
        "k": params.k,
        "sigma2": params.sigma2,
        "gamma_db": params.gamma_db,
        "seed": seed,
        "optimal": optimal.len(),
        "infeasible": infeasible,
        "numerical_failure": failures,
        "feasibility_rate": optimal.len() as f64 / count as f64,
        "mean_label_power": mean_power,
        "seconds": start.elapsed().as_secs_f64(),
    }));
    if failures as f64 > MAX_FAILURE_RATE * count as f64 {
        return Err(CliError::Solver(format!(
            "{failures} of {count} samples ended in numerical failure"
        )));
    }
    Ok(())
}

pub fn train(a: TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    require_file(&a.data, "dataset")?;
    require_writable(&a.out)?;
    let curve = a.curve.clone().unwrap_or_else(|| a.out.with_extension("curve.csv"));
    require_writable(&curve)?;
    let seed = a
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::Usage("--seed is required".into()))?;
    let encoding: Encoding = match a.encoding.as_ref().or(file.encoding.as_ref()) {
        Some(s) => s.parse().map_err(|e: noma_beam::Error| CliError::Usage(e.to_string()))?,
        None => Encoding::Fcnn,
    };
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: a.batch.or(file.batch).unwrap_or(d.batch_size),
        lr0: a.lr.or(file.lr).unwrap_or(d.lr0),
        lr_drop_epoch: a.lr_drop_epoch.or(file.lr_drop_epoch).unwrap_or(d.lr_drop_epoch),
        lr_factor: a.lr_factor.or(file.lr_factor).unwrap_or(d.lr_factor),
        val_fraction: a.val_fraction.or(file.val_fraction).unwrap_or(d.val_fraction),
        weight_decay: a.weight_decay.or(file.weight_decay).unwrap_or(d.weight_decay),
        shuffle_seed: seed,
        init_seed: seed,
        ..d
    };
    cfg.validate()?;

    let data = load_dataset(&a.data)?;
    info!("loaded {} samples from {}", data.len(), a.data.display());
    let start = Instant::now();
    let (model, report) = train_model::<f64>(&data, encoding, &cfg)?;
    model.save(&a.out)?;
    emit_csv(&learning_curves(std::slice::from_ref(&report))?, &curve)?;

    print_summary(json!({
        "command": "train",
        "encoding": encoding.as_str(),
        "model": a.out,
        "curve": curve,
        "epochs": cfg.epochs,
        "train_samples": report.train_samples,
        "val_samples": report.val_samples,
        "final_train_rmse": report.train_rmse.last(),
        "final_val_rmse": report.val_rmse.last(),
        "checksum": report.checksum,
        "seconds": start.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, CliError> {
    names
        .iter()
        .map(|s| s.trim().parse::<Method>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn eval(a: EvalArgs, file: &FileConfig) -> Result<(), CliError> {
    require_file(&a.test, "test set")?;
    for m in &a.models {
        require_file(m, "model")?;
    }
    require_writable(&a.out)?;
    let gammas = a.gammas.clone().or(file.gammas.clone()).unwrap_or(GAMMA_GRID_DB.to_vec());
    if gammas.is_empty() {
        return Err(CliError::Usage("--gammas is empty".into()));
    }
    let policy: ModelMatch = match a.model_match.as_ref().or(file.model_match.as_ref()) {
        Some(s) => s.parse().map_err(|e: noma_beam::Error| CliError::Usage(e.to_string()))?,
        None => ModelMatch::Nearest,
    };
    let models = load_models(&a.models)?;
    let methods = match a.methods.as_ref().or(file.methods.as_ref()) {
        Some(names) => parse_methods(names)?,
        None => {
            let present: BTreeSet<Method> = models.iter().map(|m| Method::from(m.encoding)).collect();
            let mut all = vec![Method::Label, Method::Mrc, Method::Zf];
            all.extend(present);
            all
        }
    };
    if policy == ModelMatch::Nearest {
        for &g in &gammas {
            for m in methods.iter().filter_map(|m| m.encoding()) {
                if let Ok(model) = ModelSet::new(&models, policy).find(m, g) {
                    if model.gamma_db != g {
                        warn!("{m} at {g} dB served by the model trained at {} dB", model.gamma_db);
                    }
                }
            }
        }
    }
    let opts = solver_options(&a.solver, file);
    let test = ordered_channels(&a.test)?;

    let start = Instant::now();
    let rows = power_curve(&test, &methods, ModelSet::new(&models, policy), &gammas, &opts)?;
    emit_csv(&rows, &a.out)?;
    print_summary(json!({
        "command": "eval",
        "out": a.out,
        "rows": rows.len(),
        "samples": test.len(),
        "gammas": gammas,
        "methods": methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "seconds": start.elapsed().as_secs_f64(),
    }));
    Ok(())
}

pub fn bench(a: BenchArgs, file: &FileConfig) -> Result<(), CliError> {
    require_file(&a.test, "test set")?;
    for m in &a.models {
        require_file(m, "model")?;
    }
    require_writable(&a.out)?;
    let instances = a.instances.or(file.instances).unwrap_or(DEFAULT_INSTANCES);
    let gamma_db = a.gamma_db.or(file.gamma_db).unwrap_or(DEFAULT_GAMMA_DB);
    let opts = solver_options(&a.solver, file);
    let models = load_models(&a.models)?;
    let test = ordered_channels(&a.test)?;

    let refs: Vec<&CnnModel> = models.iter().collect();
    let rows = bench_time(&test, &refs, gamma_db, instances, &opts)?;
    emit_csv(&rows, &a.out)?;
    let timings: Vec<_> = rows
        .iter()
        .map(|r| json!({"method": r.method.as_str(), "median_s": r.median_s, "p95_s": r.p95_s}))
        .collect();
    print_summary(json!({
        "command": "bench",
        "out": a.out,
        "instances": instances,
        "gamma_db": gamma_db,
        "timings": timings,
    }));
    Ok(())
}

fn report_line(index: usize, original: &ChannelSet, model: &CnnModel, gamma: &SinrSpec) -> serde_json::Value {
    let order = user_order(original);
    let c = order_users(original);
    let result = model
        .predict_directions(&c)
        .and_then(|u| power_allocation(&c, &u, gamma).map(|r| (u, r)));
    match result {
        Ok((u, r)) => {
            let m = u.matrix();
            let (n, k) = (m.rows(), m.cols());
            let re: Vec<Vec<f64>> = (0..n).map(|i| (0..k).map(|j| m[(i, j)].re).collect()).collect();
            let im: Vec<Vec<f64>> = (0..n).map(|i| (0..k).map(|j| m[(i, j)].im).collect()).collect();
            json!({
                "index": index,
                "user_order": order,
                "u_re": re,
                "u_im": im,
                "p": r.p,
                "total_power": r.total,
                "achieved_sinr": r.achieved_sinr,
                "feasible": r.feasible,
                "sic_order_ok": r.sic_order_ok,
            })
        }
        Err(e) => json!({
            "index": index,
            "user_order": order,
            "feasible": false,
            "error": e.to_string(),
        }),
    }
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    require_file(&a.model, "model")?;
    require_file(&a.channel, "channel file")?;
    if let Some(out) = &a.out {
        require_writable(out)?;
    }
    let model = CnnModel::load(&a.model)?;
    let channels = load_channels(&a.channel)?;
    if let Some(c) = channels.iter().find(|c| (c.n(), c.k()) != (model.n, model.k)) {
        return Err(CliError::Mismatch(format!(
            "model expects n={}, k={} but a channel has n={}, k={}",
            model.n,
            model.k,
            c.n(),
            c.k()
        )));
    }
    let gamma_db = a.gamma_db.unwrap_or(model.gamma_db);
    let gamma = SinrSpec::uniform_db(model.k, gamma_db)?;

    let lines: Vec<_> = channels
        .iter()
        .enumerate()
        .map(|(i, c)| report_line(i, c, &model, &gamma))
        .collect();
    let feasible = lines.iter().filter(|l| l["feasible"] == true).count();

    match &a.out {
        Some(path) => {
            let f = File::create(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            write_lines(BufWriter::new(f), &lines).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            print_summary(json!({
                "command": "predict",
                "out": path,
                "count": lines.len(),
                "feasible": feasible,
                "gamma_db": gamma_db,
            }));
        }
        None => write_lines(io::stdout().lock(), &lines).map_err(|e| CliError::Internal(e.to_string()))?,
    }
    Ok(())
}

fn write_lines(mut w: impl Write, lines: &[serde_json::Value]) -> io::Result<()> {
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()
}
