//! The subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use febm::data::{load_long_csv, write_long_csv, Dataset, Preprocessing, Raster};
use febm::eval::{
    infer_function, model_predictive_mse, pca_embed, test_power, write_embedding_csv,
    write_eval_csv, write_test_csv, Bandwidth, EvalRow, PowerConfig, SplitSpec, SplitStrategy,
};
use febm::model::{logistic, FebmModel, Likelihood};
use febm::rng::{derive, rng_for, Rng};
use febm::sampler::{sample_latent_prior, LangevinConfig};
use febm::spectral::{default_anchors, EigenSystem, Kernel, KernelFamily};
use febm::trainer::{train_with, write_history_csv, TrainConfig, TrainStatus};
use febm::{FunctionSample, Mesh};
use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::config::RunConfig;
use crate::domain::{
    load_checkpoint, load_dataset, normalize, parse_mesh, save_checkpoint, Checkpoint, Domain,
};
use crate::svg::{plot, Series};
use crate::{NumericFailure, Usage};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create directory {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn output(cfg: &RunConfig, out: Option<&Path>, default: &str) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir().join(default))
}

/// Resolved configuration of one command, next to its outputs.
fn snapshot(cfg: &RunConfig, command: &str) -> Result<()> {
    let path = cfg.out_dir().join(format!("{command}.config.txt"));
    let mut w = create(&path)?;
    w.write_all(cfg.to_text().as_bytes())?;
    finish(w)
}

fn write_svg(cfg: &RunConfig, path: &Path, content: String) -> Result<()> {
    if cfg.get::<bool>("plot.svg")? {
        let mut w = create(&path.with_extension("svg"))?;
        w.write_all(content.as_bytes())?;
        finish(w)?;
    }
    Ok(())
}

fn langevin(cfg: &RunConfig) -> Result<LangevinConfig> {
    Ok(LangevinConfig {
        step_size: cfg.get("langevin.step_size")?,
        n_steps: cfg.get("langevin.n_steps")?,
        noise_seed: cfg.get("seed")?,
    })
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    Ok(TrainConfig {
        batch_size: cfg.get("train.batch_size")?,
        epochs: cfg.get("train.epochs")?,
        lr_mu: cfg.get("train.lr_mu")?,
        lr_pi: cfg.get("train.lr_pi")?,
        plateau_factor: cfg.get("train.plateau_factor")?,
        min_lr: cfg.get("train.min_lr")?,
        patience: cfg.get("train.patience")?,
        early_stop_patience: cfg.get("train.early_stop_patience")?,
        buffer_capacity: cfg.get("train.buffer_capacity")?,
        reuse_prob: cfg.get("train.reuse_prob")?,
        seed: cfg.get("seed")?,
    })
}

fn build_eigsys(cfg: &RunConfig, train: &Dataset) -> Result<EigenSystem> {
    let anchors = default_anchors(&train.samples, cfg.get("eigsys.max_anchors")?)?;
    let kernel = Kernel::new(
        cfg.get::<KernelFamily>("kernel.family")?,
        cfg.get("kernel.variance")?,
        cfg.get("kernel.lengthscale")?,
    )?;
    let d_xi = match cfg.auto::<usize>("eigsys.d_xi")? {
        Some(d) => d,
        None => train
            .samples
            .iter()
            .map(FunctionSample::len)
            .max()
            .unwrap_or(1)
            .min(anchors.len()),
    };
    let es = match cfg.auto::<f64>("eigsys.ridge")? {
        Some(ridge) => EigenSystem::nystrom(kernel, anchors, d_xi, ridge)?,
        None => EigenSystem::nystrom_default(kernel, anchors, d_xi)?,
    };
    Ok(es)
}

fn build_model(cfg: &RunConfig, train: &Dataset, domain: &Domain) -> Result<FebmModel> {
    let likelihood = match cfg.raw("model.likelihood") {
        "auto" if domain.is_image() => Likelihood::ContinuousBernoulli,
        "auto" | "gaussian" => Likelihood::gaussian(cfg.get("model.sigma")?)?,
        "continuous_bernoulli" => Likelihood::ContinuousBernoulli,
        other => bail!(Usage(format!(
            "config key `model.likelihood`: expected auto, gaussian or continuous_bernoulli, found `{other}`"
        ))),
    };
    Ok(FebmModel::init(
        build_eigsys(cfg, train)?,
        cfg.get("model.d_z")?,
        cfg.get("model.width")?,
        cfg.get("model.hidden")?,
        likelihood,
        cfg.get("seed")?,
    )?)
}

/// Decoded values on the observation scale: intensities for bounded
/// likelihoods, un-normalized values for globally standardized data.
fn observed(ck: &Checkpoint, values: Vec<f64>, (mean, std): (f64, f64)) -> Vec<f64> {
    if ck.model.likelihood.is_bounded() {
        values.into_iter().map(logistic).collect()
    } else {
        values.into_iter().map(|v| v * std + mean).collect()
    }
}

fn global_stats(pre: &Preprocessing) -> (f64, f64) {
    match pre {
        Preprocessing::GlobalZScore { mean, std } => (*mean, *std),
        _ => (0.0, 1.0),
    }
}

fn lines_1d(mesh: &Mesh, curves: &[Vec<f64>], color: usize, width: f64) -> Vec<Series> {
    curves
        .iter()
        .map(|ys| Series {
            points: mesh
                .coords()
                .iter()
                .copied()
                .zip(ys.iter().copied())
                .collect(),
            color,
            line: true,
            width,
        })
        .collect()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let loaded = load_dataset(cfg)?;
    let train_set = loaded.train_part(cfg)?;
    let model = build_model(cfg, &train_set, &loaded.domain)?;
    let tcfg = train_config(cfg)?;
    eprintln!(
        "training on {} functions: d_xi={} over {} anchors, d_z={}",
        train_set.len(),
        model.d_xi(),
        model.eigsys.anchors().len(),
        model.d_z()
    );
    let outcome = train_with(&model, &train_set.samples, &tcfg, &langevin(cfg)?, |r| {
        eprintln!(
            "epoch {:>4}  loss {:+.5e}  pos {:+.4e}  neg {:+.4e}  lr {:.1e}/{:.1e}",
            r.epoch, r.surrogate_loss, r.mean_pos_energy, r.mean_neg_energy, r.lr_mu, r.lr_pi
        )
    })?;
    let ckpt = cfg.checkpoint();
    save_checkpoint(&ckpt, &outcome.model, &loaded.domain, &loaded.dataset, cfg)?;
    let hist = cfg.out_dir().join("history.csv");
    let mut w = create(&hist)?;
    write_history_csv(&mut w, &outcome.history)?;
    finish(w)?;
    snapshot(cfg, "train")?;
    let losses: Vec<(f64, f64)> = outcome
        .history
        .iter()
        .map(|r| (r.epoch as f64, r.surrogate_loss))
        .collect();
    let curve = Series {
        points: losses,
        color: 0,
        line: true,
        width: 1.5,
    };
    write_svg(cfg, &hist, plot("surrogate loss by epoch", &[curve], &[]))?;
    match outcome.status {
        TrainStatus::Completed => eprintln!("done; checkpoint in {}", ckpt.display()),
        TrainStatus::EarlyStopped { epoch } => eprintln!(
            "stopped early after epoch {epoch}; checkpoint in {}",
            ckpt.display()
        ),
        TrainStatus::Aborted { epoch, reason } => bail!(NumericFailure(format!(
            "training diverged in epoch {epoch} ({reason}); last finite parameters saved to {}",
            ckpt.display()
        ))),
    }
    Ok(())
}

pub fn sample(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(&cfg.checkpoint())?;
    let q = parse_mesh(cfg.raw("sample.mesh"), &ck.domain, &ck.model.eigsys)?;
    let n: usize = cfg.get("sample.n")?;
    let zs = sample_latent_prior(&ck.model, &langevin(cfg)?, n)?;
    let stats = global_stats(&ck.preprocessing);
    let mut samples = Vec::with_capacity(n);
    for (k, z) in zs.iter().enumerate() {
        let logits = ck.model.decode(z, &q.model_mesh)?;
        if let Some(frame) = &q.frame {
            let img = frame.render_logits(&logits)?;
            let path = cfg
                .out_dir()
                .join("samples")
                .join(format!("sample_{k:03}.pgm"));
            let mut w = create(&path)?;
            w.write_all(img.to_pgm().as_bytes())?;
            finish(w)?;
        }
        samples.push(FunctionSample::new(
            q.coords.clone(),
            observed(&ck, logits, stats),
        )?);
    }
    let path = output(cfg, out, "samples.csv");
    let mut w = create(&path)?;
    write_long_csv(&mut w, &samples, 0, q.coords.dim())?;
    finish(w)?;
    snapshot(cfg, "sample")?;
    if q.coords.dim() == 1 {
        let curves: Vec<Vec<f64>> = samples.iter().map(|s| s.values.clone()).collect();
        let series = lines_1d(&q.coords, &curves, 0, 1.0);
        write_svg(
            cfg,
            &path,
            plot(&format!("{n} prior samples"), &series, &[]),
        )?;
    }
    eprintln!(
        "wrote {n} functions on {} points to {}",
        q.coords.len(),
        path.display()
    );
    Ok(())
}

pub fn infer(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(&cfg.checkpoint())?;
    let ctx_path = cfg.path("infer.context")?;
    let contexts = load_long_csv(&ctx_path)
        .with_context(|| format!("loading infer.context={}", ctx_path.display()))?;
    let q = parse_mesh(cfg.raw("infer.mesh"), &ck.domain, &ck.model.eigsys)?;
    let n: usize = cfg.get("infer.n")?;
    if n == 0 {
        bail!(Usage("config key `infer.n` must be positive".into()));
    }
    let lcfg = langevin(cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let mean_path = output(cfg, out, "infer_mean.csv");
    let stem = mean_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "infer".into());
    let draws_path = mean_path.with_file_name(format!("{stem}_draws.csv"));
    let mut draws_out = create(&draws_path)?;
    let dim = q.coords.dim();
    let xs = if dim == 1 {
        "x".to_string()
    } else {
        (0..dim)
            .map(|k| format!("x{k}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(draws_out, "context_id,draw,{xs},y")?;
    let mut means = Vec::with_capacity(contexts.len());
    let mut first_draws = Vec::new();
    for (k, raw) in contexts.samples.iter().enumerate() {
        let ctx = FunctionSample::new(ck.domain.to_model_mesh(&raw.mesh)?, raw.values.clone())?;
        let (ctx, stats) = normalize(&ck.preprocessing, &ctx)?;
        let draws = infer_function(
            &ck.model,
            &ctx,
            n,
            &lcfg.with_seed(derive(seed, &[0x1f, k as u64])),
        )?;
        let mut mean = vec![0.0; q.coords.len()];
        for (d, f) in draws.iter().enumerate() {
            let vals = observed(&ck, f.eval(&q.model_mesh)?, stats);
            for ((p, v), m) in q.coords.points().zip(&vals).zip(mean.iter_mut()) {
                let coords: Vec<String> = p.iter().map(f64::to_string).collect();
                writeln!(draws_out, "{k},{d},{},{v}", coords.join(","))?;
                *m += v / n as f64;
            }
            if k == 0 && d < 20 {
                first_draws.push(vals);
            }
        }
        if let Some(frame) = &q.frame {
            let img = Raster::new(frame.width, frame.height, mean.clone())?;
            let path = cfg.out_dir().join(format!("{stem}_{k:03}.pgm"));
            let mut w = create(&path)?;
            w.write_all(img.to_pgm().as_bytes())?;
            finish(w)?;
        }
        means.push(FunctionSample::new(q.coords.clone(), mean)?);
    }
    finish(draws_out)?;
    let mut w = create(&mean_path)?;
    write_long_csv(&mut w, &means, 0, dim)?;
    finish(w)?;
    snapshot(cfg, "infer")?;
    if dim == 1 {
        let mut series = lines_1d(&q.coords, &first_draws, 0, 0.6);
        series.extend(lines_1d(&q.coords, &[means[0].values.clone()], 1, 2.0));
        let first = &contexts.samples[0];
        series.push(Series {
            points: first
                .mesh
                .coords()
                .iter()
                .copied()
                .zip(first.values.iter().copied())
                .collect(),
            color: 2,
            line: false,
            width: 3.0,
        });
        let legend = [
            (0, "posterior draws"),
            (1, "posterior mean"),
            (2, "context"),
        ];
        write_svg(
            cfg,
            &mean_path,
            plot("conditional inference, context 0", &series, &legend),
        )?;
    }
    eprintln!(
        "inferred {} context functions ({n} draws each); means in {}",
        means.len(),
        mean_path.display()
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(&cfg.checkpoint())?;
    let loaded = load_dataset(cfg)?;
    let held = loaded.held_out_part(cfg)?;
    let strategies: Vec<SplitStrategy> = cfg.list("split.strategy")?;
    let ps: Vec<f64> = cfg.list("split.p")?;
    let n_samples: usize = cfg.get("eval.n_samples")?;
    let lcfg = langevin(cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let mut rows = Vec::new();
    for &strategy in &strategies {
        for &p in &ps {
            let spec = SplitSpec { strategy, p, seed };
            let mse = model_predictive_mse(&ck.model, &held.samples, &spec, n_samples, &lcfg)?;
            eprintln!("{strategy} p={p}: mse {mse:.5}");
            rows.push(EvalRow {
                dataset: held.name.clone(),
                strategy,
                p,
                mse,
            });
        }
    }
    let path = output(cfg, out, "eval.csv");
    let mut w = create(&path)?;
    write_eval_csv(&mut w, &rows)?;
    finish(w)?;
    snapshot(cfg, "evaluate")
}

pub fn test(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(&cfg.checkpoint())?;
    let bandwidth = match cfg.raw("test.bandwidth") {
        "median" => Bandwidth::Median,
        _ => Bandwidth::Fixed(cfg.get("test.bandwidth")?),
    };
    let seed: u64 = cfg.get("seed")?;
    let pcfg = PowerConfig {
        n_trials: cfg.get("test.trials")?,
        n_each: cfg.get("test.n_each")?,
        alpha: cfg.get("test.alpha")?,
        n_perm: cfg.get("test.n_perm")?,
        bandwidth,
        seed,
    };
    let lcfg = langevin(cfg)?;
    let against_data = match cfg.raw("test.against") {
        "data" => true,
        "model" => false,
        other => bail!(Usage(format!(
            "config key `test.against`: expected data or model, found `{other}`"
        ))),
    };
    let held = if against_data {
        let held = load_dataset(cfg)?.held_out_part(cfg)?.samples;
        if held.iter().any(|s| s.mesh != held[0].mesh) {
            bail!(Usage(
                "the two-sample test needs held-out functions on one common mesh".into()
            ));
        }
        if held.len() < pcfg.n_each {
            bail!(Usage(format!(
                "test.n_each={} exceeds the {} held-out functions",
                pcfg.n_each,
                held.len()
            )));
        }
        held
    } else {
        Vec::new()
    };
    let mesh = match held.first() {
        Some(s) => s.mesh.clone(),
        None => parse_mesh(cfg.raw("sample.mesh"), &ck.domain, &ck.model.eigsys)?.model_mesh,
    };
    let model = &ck.model;
    let draw_model = |rng: &mut Rng, n: usize| -> febm::Result<Vec<FunctionSample>> {
        let zs = sample_latent_prior(model, &lcfg.with_seed(rng.random()), n)?;
        zs.iter()
            .map(|z| {
                let f = model.decode(z, &mesh)?;
                FunctionSample::new(mesh.clone(), observed(&ck, f, (0.0, 1.0)))
            })
            .collect()
    };
    let power = if against_data {
        test_power(
            draw_model,
            |rng: &mut Rng, n| Ok(held.choose_multiple(rng, n).cloned().collect()),
            &pcfg,
        )?
    } else {
        test_power(draw_model, draw_model, &pcfg)?
    };
    let path = output(cfg, out, "test.csv");
    let mut w = create(&path)?;
    write_test_csv(&mut w, &power.trials)?;
    finish(w)?;
    println!(
        "power {:.3} +/- {:.3} over {} trials (alpha {})",
        power.power, power.stderr, pcfg.n_trials, pcfg.alpha
    );

    let (a_label, b_label) = if against_data {
        ("model", "data")
    } else {
        ("model_a", "model_b")
    };
    let n_embed = if against_data { held.len() } else { 100 };
    let a = draw_model(&mut rng_for(seed, &[0xe3, 0]), n_embed)?;
    let b = if against_data {
        held
    } else {
        draw_model(&mut rng_for(seed, &[0xe3, 1]), n_embed)?
    };
    let pooled: Vec<FunctionSample> = a.iter().chain(&b).cloned().collect();
    let emb = pca_embed(&pooled, 2)?;
    let rows: Vec<(usize, &str, [f64; 2])> = emb
        .coords
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let label = if i < a.len() { a_label } else { b_label };
            (i, label, [c[0], c[1]])
        })
        .collect();
    let emb_path = cfg.out_dir().join("embedding.csv");
    let mut w = create(&emb_path)?;
    write_embedding_csv(&mut w, &rows)?;
    finish(w)?;
    let scatter = |label: &str, color: usize| Series {
        points: rows
            .iter()
            .filter(|r| r.1 == label)
            .map(|r| (r.2[0], r.2[1]))
            .collect(),
        color,
        line: false,
        width: 2.5,
    };
    write_svg(
        cfg,
        &emb_path,
        plot(
            "principal-component embedding",
            &[scatter(a_label, 0), scatter(b_label, 1)],
            &[(0, a_label), (1, b_label)],
        ),
    )?;
    snapshot(cfg, "test")
}

pub fn eigsys(cfg: &RunConfig, from_checkpoint: bool, out: Option<&Path>) -> Result<()> {
    let (es, domain) = if from_checkpoint {
        let ck = load_checkpoint(&cfg.checkpoint())?;
        (ck.model.eigsys, ck.domain)
    } else {
        let loaded = load_dataset(cfg)?;
        (build_eigsys(cfg, &loaded.train_part(cfg)?)?, loaded.domain)
    };
    let path = output(cfg, out, "eigsys.txt");
    let mut w = create(&path)?;
    es.write_to(&mut w)?;
    finish(w)?;
    let mut w = create(&cfg.out_dir().join("eigenvalues.csv"))?;
    writeln!(w, "index,eigenvalue")?;
    for (i, l) in es.eigenvalues().iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    finish(w)?;
    let q = parse_mesh(cfg.raw("sample.mesh"), &domain, &es)?;
    let phi = es.eigenfunctions_on(&q.model_mesh)?;
    let funcs: Vec<FunctionSample> = (0..es.truncation())
        .map(|i| FunctionSample::new(q.coords.clone(), phi.column(i).iter().copied().collect()))
        .collect::<febm::Result<_>>()?;
    let ef_path = cfg.out_dir().join("eigenfunctions.csv");
    let mut w = create(&ef_path)?;
    write_long_csv(&mut w, &funcs, 0, q.coords.dim())?;
    finish(w)?;
    if q.coords.dim() == 1 {
        let curves: Vec<Vec<f64>> = funcs.iter().take(5).map(|f| f.values.clone()).collect();
        let series: Vec<Series> = curves
            .iter()
            .enumerate()
            .flat_map(|(i, c)| lines_1d(&q.coords, std::slice::from_ref(c), i, 1.5))
            .collect();
        write_svg(cfg, &ef_path, plot("leading eigenfunctions", &series, &[]))?;
    }
    snapshot(cfg, "eigsys")?;
    eprintln!(
        "{} eigenpairs over {} anchors; leading eigenvalue {:.4e}",
        es.truncation(),
        es.anchors().len(),
        es.eigenvalues().first().copied().unwrap_or(0.0)
    );
    Ok(())
}
