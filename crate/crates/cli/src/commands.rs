use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use qcbm_core::concentration::{
    kld_concentration_sweep, mmd_variance_sweep, p_sigma, weight_profile, weight_profile_mixture,
    write_kld_csv, write_variance_csv, Bandwidth, SweepSpec,
};
use qcbm_core::distributions::{ingest_image_dataset, make_dataset, marginal, DatasetKind};
use qcbm_core::losses::{
    mmd_exact, mmd_truncated, ExplicitLossKind, ExplicitLossSpec, KernelSpec, LossSpec, Shots,
    CONCENTRATION_EPSILON, TRAINING_EPSILON,
};
use qcbm_core::rng::path_seed;
use qcbm_core::simulator::AnsatzKind;
use qcbm_core::training::{
    train as run_training, AdamSpec, EsSpec, Init, OptimizerSpec, TrainConfig,
};
use qcbm_core::{BitString, Distribution, SubsetMask};

use crate::config::Settings;
use crate::CliError;

/// Shot setting as written in configs: `exact` or a count.
#[derive(Clone, Copy, Debug)]
struct ShotsArg(Shots);

impl FromStr for ShotsArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "exact" => Ok(ShotsArg(Shots::Exact)),
            t => match t.parse::<usize>() {
                Ok(0) | Err(_) => Err(format!(
                    "expected `exact` or a positive shot count, got '{s}'"
                )),
                Ok(k) => Ok(ShotsArg(Shots::Finite(k))),
            },
        }
    }
}

pub struct Context {
    command: &'static str,
    settings: Settings,
    start: Instant,
}

impl Context {
    pub fn new(command: &'static str, settings: Settings) -> Self {
        Context {
            command,
            settings,
            start: Instant::now(),
        }
    }

    fn seed(&self) -> Result<u64, CliError> {
        self.settings.get_or("seed", 0u64)
    }

    /// The output directory, created if needed; `None` when neither a flag nor
    /// the config names one and the command has no default.
    fn out_dir(&self, default: Option<&str>) -> Result<Option<PathBuf>, CliError> {
        let dir = match (self.settings.opt::<String>("out")?, default) {
            (Some(d), _) => PathBuf::from(d),
            (None, Some(d)) => PathBuf::from(d),
            (None, None) => return Ok(None),
        };
        std::fs::create_dir_all(&dir).map_err(|e| {
            CliError::Config(format!(
                "output directory {} is not writable: {e}",
                dir.display()
            ))
        })?;
        Ok(Some(dir))
    }

    fn finish(
        &self,
        dir: &Path,
        seed: u64,
        outputs: &[&str],
        results: Value,
    ) -> Result<(), CliError> {
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "wall_clock_secs": self.start.elapsed().as_secs_f64(),
            "config": self.settings.echo(),
            "outputs": outputs,
            "results": results,
        });
        let mut w = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn bandwidths(s: &Settings, default: &[&str]) -> Result<Vec<Bandwidth>, CliError> {
    s.list_or("sigma", default.iter().map(|d| d.to_string()).collect())?
        .iter()
        .map(|b| {
            b.parse::<Bandwidth>()
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

fn parse_config<T: FromStr<Err = qcbm_core::Error>>(raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|e: qcbm_core::Error| CliError::Config(e.to_string()))
}

/// Target distribution from `dataset` (a kind) or `dataset_file` (a CSV).
fn load_target(s: &Settings, n: usize, seed: u64) -> Result<Distribution, CliError> {
    let file: Option<String> = s.opt("dataset_file")?;
    let kind: String = s.get_or("dataset", "ghz".to_string())?;
    let d = match file {
        Some(path) => {
            let f = File::open(&path)
                .map_err(|e| CliError::Config(format!("cannot open {path}: {e}")))?;
            Distribution::read_csv(f)?
        }
        None => make_dataset(
            parse_config(&kind)?,
            n,
            path_seed(seed, &[0xda7a, n as u64]),
        )?,
    };
    if d.n_bits() != n {
        return Err(CliError::Config(format!(
            "dataset has {} bits but n = {n}",
            d.n_bits()
        )));
    }
    Ok(d)
}

pub fn dataset_gen(ctx: Context) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = ctx.seed()?;
    let kind: String = s.require("kind")?;
    let out = ctx.out_dir(None)?;
    let dist = if kind.eq_ignore_ascii_case("image") {
        let input: String = s.require("input")?;
        let factor = s.get_or("threshold_factor", 0.1)?;
        s.finish()?;
        ingest_image_dataset(Path::new(&input), factor)?
    } else {
        let kind: DatasetKind = parse_config(&kind)?;
        let n: usize = s.require("n")?;
        s.finish()?;
        make_dataset(kind, n, seed)?
    };
    match out {
        None => dist.write_csv(std::io::stdout().lock())?,
        Some(dir) => {
            dist.write_csv(create(&dir, "dataset.csv")?)?;
            let results = json!({ "n_bits": dist.n_bits(), "support_size": dist.support_size() });
            ctx.finish(&dir, seed, &["dataset.csv"], results)?;
        }
    }
    Ok(())
}

pub fn kld_concentration(ctx: Context) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = ctx.seed()?;
    let ns: Vec<usize> = s.require_list("n")?;
    let shots: Vec<usize> = s.list_or("shots", vec![1000])?;
    let epsilon = s.get_or("epsilon", CONCENTRATION_EPSILON)?;
    let draws = s.get_or("draws", 200usize)?;
    let dir = ctx.out_dir(Some("results"))?.expect("default directory");
    s.finish()?;
    let rows = kld_concentration_sweep(&ns, &shots, epsilon, draws, seed)?;
    write_kld_csv(&rows, create(&dir, "kld_concentration.csv")?)?;
    println!(
        "{:>4} {:>9} {:>12} {:>12}",
        "n", "shots", "mean", "variance"
    );
    for r in &rows {
        println!(
            "{:>4} {:>9} {:>12.5} {:>12.4e}",
            r.n, r.shots, r.mean, r.variance
        );
    }
    let results = json!({ "fixed_point": (1.0 / epsilon).ln(), "rows": rows.len() });
    ctx.finish(&dir, seed, &["kld_concentration.csv"], results)
}

#[derive(Serialize)]
struct ProfileRow {
    n: usize,
    sigma: String,
    l: usize,
    bodyness: usize,
    weight: f64,
}

pub fn mmd_profile(ctx: Context) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = ctx.seed()?;
    let ns: Vec<usize> = s.require_list("n")?;
    let bws = bandwidths(s, &["1", "n/4"])?;
    let mixture = s.get_or("mixture", false)?;
    let dir = ctx.out_dir(Some("results"))?.expect("default directory");
    s.finish()?;

    let mut csv = csv::Writer::from_writer(create(&dir, "weight_profile.csv")?);
    let mut summary = Vec::new();
    println!(
        "{:>5} {:>12} {:>10} {:>14} {:>6} {:>12}",
        "n", "sigma", "p_sigma", "mean bodyness", "mode", "(n+1)p"
    );
    for &n in &ns {
        let resolved: Vec<f64> = bws.iter().map(|b| b.resolve(n)).collect();
        let profiles = if mixture {
            let label = resolved
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("+");
            vec![(label, None, weight_profile_mixture(n, &resolved)?)]
        } else {
            resolved
                .iter()
                .map(|&v| Ok((v.to_string(), Some(p_sigma(v)?), weight_profile(n, v)?)))
                .collect::<Result<Vec<_>, qcbm_core::Error>>()?
        };
        for (label, p, profile) in profiles {
            for (l, &w) in profile.weights.iter().enumerate() {
                csv.serialize(ProfileRow {
                    n,
                    sigma: label.clone(),
                    l,
                    bodyness: 2 * l,
                    weight: w,
                })?;
            }
            let predicted = p.map(|p| (n + 1) as f64 * p);
            println!(
                "{n:>5} {label:>12} {:>10} {:>14.4} {:>6} {:>12}",
                p.map_or("-".into(), |p| format!("{p:.6}")),
                profile.mean_bodyness(),
                profile.mode(),
                predicted.map_or("-".into(), |v| format!("{v:.3}")),
            );
            summary.push(json!({
                "n": n,
                "sigma": label,
                "p_sigma": p,
                "mean_bodyness": profile.mean_bodyness(),
                "bodyness_variance": profile.bodyness_variance(),
                "mode": profile.mode(),
            }));
        }
    }
    csv.flush()?;
    ctx.finish(&dir, seed, &["weight_profile.csv"], Value::Array(summary))
}

pub fn variance_sweep(ctx: Context) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = ctx.seed()?;
    let ns: Vec<usize> = s.require_list("n")?;
    let bws = bandwidths(s, &["n/4"])?;
    let depths: Vec<usize> = s.list_or("depth", vec![1])?;
    let ansatz: AnsatzKind = parse_config(&s.get_or("ansatz", "PRODUCT_HAAR".to_string())?)?;
    let shots = s
        .get_or("shots", "exact".to_string())?
        .parse::<ShotsArg>()
        .map_err(CliError::Config)?
        .0;
    let draws = s.get_or("draws", 500usize)?;
    let kind: DatasetKind = parse_config(&s.get_or("dataset", "point_zero".to_string())?)?;
    let dir = ctx.out_dir(Some("results"))?.expect("default directory");
    s.finish()?;

    let spec = SweepSpec {
        ns,
        bandwidths: bws,
        depths,
        ansatz,
        shots,
        draws,
        seed,
    };
    let points = mmd_variance_sweep(&spec, |n| {
        make_dataset(kind, n, path_seed(seed, &[0xda7a, n as u64]))
    })?;
    let rows: Vec<_> = points.iter().map(|p| p.row.clone()).collect();
    write_variance_csv(&rows, create(&dir, "variance.csv")?)?;

    let mut mass = serde_json::Map::new();
    for p in &points {
        mass.insert(p.row.n.to_string(), json!(p.parity_mass_k2));
    }
    for (n, m) in &mass {
        eprintln!("n={n}: low-order parity mass (orders 1-2) of the data = {m}");
    }
    println!(
        "{:>4} {:>8} {:>6} {:>14} {:>14} {:>12}",
        "n", "sigma", "depth", "theory", "empirical", "stderr"
    );
    for r in &rows {
        println!(
            "{:>4} {:>8.3} {:>6} {:>14} {:>14.5e} {:>12.3e}",
            r.n,
            r.sigma,
            r.depth,
            r.theory_total.map_or("-".into(), |t| format!("{t:.5e}")),
            r.empirical_var,
            r.empirical_stderr
        );
    }
    ctx.finish(
        &dir,
        seed,
        &["variance.csv"],
        json!({ "parity_mass_k2": mass, "rows": rows.len() }),
    )
}

#[derive(Serialize)]
struct TruncationRow {
    k: usize,
    sigma: f64,
    mmd_truncated: f64,
    mmd_exact: f64,
}

pub fn truncation_demo(ctx: Context) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = ctx.seed()?;
    let n = 3;
    let sigma = bandwidths(s, &["1"])?;
    let [sigma] = sigma.as_slice() else {
        return Err(CliError::Config(
            "truncation-demo takes a single bandwidth".into(),
        ));
    };
    let sigma = sigma.resolve(n);
    let k = s.get_or("k", 2usize)?;
    let dir = ctx.out_dir(Some("results"))?.expect("default directory");
    s.finish()?;
    if k > n {
        return Err(CliError::Config(format!(
            "k = {k} exceeds the {n}-bit register"
        )));
    }

    let parity3 = make_dataset(DatasetKind::Parity3, n, seed)?;
    let uniform =
        Distribution::uniform_over(n, (0..1u64 << n).map(|i| BitString::from_index(i, n)))?;
    let kernel = KernelSpec::gaussian(sigma)?;
    let exact = mmd_exact(&parity3, &uniform, &kernel)?;
    let mut csv = csv::Writer::from_writer(create(&dir, "truncation.csv")?);
    let mut at_k = 0.0;
    for order in 0..=n {
        let t = mmd_truncated(&parity3, &uniform, &kernel, order)?;
        if order == k {
            at_k = t;
        }
        csv.serialize(TruncationRow {
            k: order,
            sigma,
            mmd_truncated: t,
            mmd_exact: exact,
        })?;
    }
    csv.flush()?;

    let mut marginals_agree = true;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let subset = SubsetMask::new((0..n).filter(|i| mask >> i & 1 == 1).collect(), n)?;
        let (a, b) = (marginal(&parity3, &subset)?, marginal(&uniform, &subset)?);
        marginals_agree &= a.iter().all(|(x, p)| (p - b.probability(x)).abs() < 1e-12)
            && a.support_size() == b.support_size();
    }
    println!("PARITY3 vs uniform on {n} bits, sigma = {sigma}");
    println!("  all marginals on <= {k} bits agree: {marginals_agree}");
    println!("  truncated MMD (k = {k}): {at_k:.6e}");
    println!("  exact MMD:              {exact:.6e}");
    let results = json!({ "k": k, "mmd_truncated": at_k, "mmd_exact": exact, "marginals_agree": marginals_agree });
    ctx.finish(&dir, seed, &["truncation.csv"], results)
}

fn loss_spec(s: &Settings, n: usize) -> Result<LossSpec, CliError> {
    let name: String = s.require("loss")?;
    Ok(match name.to_ascii_lowercase().as_str() {
        "mmd" => {
            let resolved: Vec<f64> = bandwidths(s, &["n/4"])?
                .iter()
                .map(|b| b.resolve(n))
                .collect();
            LossSpec::Mmd(KernelSpec::mixture(resolved)?)
        }
        "global_fidelity" | "gqf" => LossSpec::GlobalFidelity,
        "local_fidelity" | "lqf" => LossSpec::LocalFidelity,
        other => {
            let kind: ExplicitLossKind = parse_config(other)?;
            let epsilon = s.get_or("epsilon", TRAINING_EPSILON)?;
            LossSpec::Explicit(
                ExplicitLossSpec::new(kind, epsilon)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            )
        }
    })
}

fn optimizer(s: &Settings) -> Result<OptimizerSpec, CliError> {
    let name = s.get_or("optimizer", "adam".to_string())?;
    match name.to_ascii_lowercase().as_str() {
        "adam" => {
            let d = AdamSpec::default();
            Ok(OptimizerSpec::Adam(AdamSpec {
                lr0: s.get_or("lr", d.lr0)?,
                decay: s.get_or("decay", d.decay)?,
                lr_min: s.get_or("lr_min", d.lr_min)?,
                ..d
            }))
        }
        "es" => {
            let spec = EsSpec {
                lambda: s.opt("lambda")?,
                mu: s.opt("mu")?,
                step_size: s.get_or("step_size", EsSpec::default().step_size)?,
                elitist: s.get_or("elitist", false)?,
            };
            Ok(OptimizerSpec::Es(spec))
        }
        other => Err(CliError::Config(format!(
            "unknown optimizer '{other}' (adam or es)"
        ))),
    }
}

pub fn train(ctx: Context) -> Result<(), CliError> {
    let s = &ctx.settings;
    let seed = ctx.seed()?;
    let n: usize = s.require("n")?;
    let ansatz: AnsatzKind = parse_config(&s.get_or("ansatz", "HEA_LINE".to_string())?)?;
    let depth = if ansatz.is_product() {
        0
    } else {
        s.get_or("depth", 2usize)?
    };
    let target = load_target(s, n, seed)?;
    let loss = loss_spec(s, n)?;
    let shots = s
        .get_or("shots", "exact".to_string())?
        .parse::<ShotsArg>()
        .map_err(CliError::Config)?
        .0;
    let init = match s.get_or("init", "uniform".to_string())?.as_str() {
        "uniform" => Init::Uniform,
        "near_identity" => Init::NearIdentity {
            scale: s.get_or("init_scale", 0.1)?,
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown init '{other}' (uniform or near_identity)"
            )))
        }
    };
    let config = TrainConfig {
        ansatz,
        n_qubits: n,
        depth,
        loss,
        target,
        shots,
        k_batch: s.get_or("k_batch", 1usize)?,
        clip: s.opt("clip")?,
        max_iterations: s.get_or("iterations", 500usize)?,
        seed,
        init,
        optimizer: optimizer(s)?,
    };
    let dir = ctx.out_dir(Some("results"))?.expect("default directory");
    s.finish()?;

    let record = run_training(&config)?;
    record.write_csv(create(&dir, "train.csv")?)?;
    let last = record.rows.last().expect("initial row is always logged");
    println!(
        "{} iterations: final loss {:.6e}, final TVD {}, best TVD {}",
        last.iter,
        last.loss_estimate,
        last.tvd_exact.map_or("-".into(), |t| format!("{t:.4}")),
        record.min_tvd().map_or("-".into(), |t| format!("{t:.4}")),
    );
    let results = json!({
        "iterations": last.iter,
        "final_loss_estimate": last.loss_estimate,
        "best_loss_estimate": record.best_so_far.last(),
        "final_tvd": last.tvd_exact,
        "min_tvd": record.min_tvd(),
        "training_secs": record.wall_clock_secs,
        "final_params": record.final_params,
    });
    ctx.finish(&dir, seed, &["train.csv"], results)
}
