use std::path::{Path, PathBuf};
use std::process::ExitCode;

use genad_core::data::{load_csv, NormalizationStats, SeriesFrame, SyntheticSpec};
use genad_core::detect::{
    calibrate, default_eta_grid, detect_two_level, evaluate, f1_score, score, scores_csv, DetectionReport,
};
use genad_core::model::{gradcheck_model, GenAdModel, ModelConfig};
use genad_core::numerics::gradcheck::GradCheckOptions;
use genad_core::numerics::primitive_checks;
use genad_core::train::{entity_trainer, fleet_trainer, load_checkpoint, Checkpoint, LossRecord};
use serde_json::json;

use crate::args::{Cli, Command, DetectArgs, EvalArgs, FinetuneArgs, GradcheckArgs, PretrainArgs, SynthArgs};
use crate::config::{RunConfig, FINETUNE_STEPS, PRETRAIN_STEPS};
use crate::failure::{Failure, Outcome};
use crate::manifest::RunManifest;

/// Anomaly rate used when neither `--a-r` nor the config file gives one.
pub const DEFAULT_A_R: f64 = 0.01;
/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Metric count of the model checked by `gradcheck`.
pub const GRADCHECK_METRICS: usize = 18;
pub const CHECKPOINT_FILE: &str = "checkpoint.genad";

pub fn run(cli: &Cli) -> Outcome<ExitCode> {
    let config = RunConfig::load(cli.global.config.as_deref())?;
    let out = &cli.global.out;
    if !matches!(cli.command, Command::Gradcheck(_)) {
        std::fs::create_dir_all(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    }
    let seed = cli.global.seed;
    match &cli.command {
        Command::Synth(a) => synth(a, seed, out),
        Command::Pretrain(a) => pretrain(a, &config, seed, out),
        Command::Finetune(a) => finetune(a, &config, seed, out),
        Command::Detect(a) => detect(a, &config, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => return gradcheck(a, seed.unwrap_or(0)),
    }
    .map(|()| ExitCode::SUCCESS)
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn to_json(value: &impl serde::Serialize) -> Outcome<String> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))
}

fn expand(pattern: &str) -> Outcome<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| Failure::Usage(format!("bad glob {pattern:?}: {e}")))?;
    let mut files = paths.collect::<Result<Vec<_>, _>>().map_err(|e| Failure::Data(e.to_string()))?;
    files.sort();
    if files.is_empty() {
        return Err(Failure::Data(format!("no files match {pattern:?}")));
    }
    Ok(files)
}

fn load(path: &Path) -> Outcome<SeriesFrame> {
    load_csv(path).map_err(|e| match Failure::from(e) {
        Failure::Usage(m) => Failure::Data(m),
        f => f,
    })
}

fn synth(a: &SynthArgs, seed: Option<u64>, out: &Path) -> Outcome<()> {
    let mut m = RunManifest::start("synth");
    let mut spec = match &a.spec {
        Some(p) => {
            m.input(p);
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            SyntheticSpec::from_json(&text)?
        }
        None => SyntheticSpec::genad_default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let fleet = genad_core::data::gen_fleet(&spec)?;
    let mut recipes = Vec::with_capacity(fleet.len());
    for (k, frame) in fleet.iter().enumerate() {
        let name = format!("entity_{k:03}");
        let path = out.join(format!("{name}.csv"));
        genad_core::data::save_csv(frame, &path)?;
        for p in [path.clone(), genad_core::data::label_path(&path)] {
            let bytes = std::fs::read(&p).map_err(|e| data_err(&p, e))?;
            m.write(&p, &bytes)?;
        }
        recipes.push(json!({ "entity": name, "recipes": frame.meta.recipes, "anomalies": frame.meta.anomalies }));
    }
    m.write(&out.join("recipes.json"), to_json(&recipes)?.as_bytes())?;
    m.config(serde_json::to_value(&spec).map_err(|e| Failure::Data(e.to_string()))?, Some(spec.seed));
    m.finish(out)?;
    eprintln!("wrote {} entities to {}", fleet.len(), out.display());
    Ok(())
}

fn loss_csv(losses: &[LossRecord]) -> Vec<u8> {
    let mut s = String::from("step,running_loss\n");
    for r in losses {
        s.push_str(&format!("{},{}\n", r.step, r.loss));
    }
    s.into_bytes()
}

fn write_run(m: &mut RunManifest, out: &Path, ckpt: &Checkpoint, losses: &[LossRecord]) -> Outcome<()> {
    m.write(&out.join(CHECKPOINT_FILE), &ckpt.to_bytes()?)?;
    m.write(&out.join("loss.csv"), &loss_csv(losses))
}

fn train_loop(trainer: &mut genad_core::train::Trainer, total: usize) -> Outcome<()> {
    let mut logged = 0;
    while (trainer.steps_done() as usize) < total {
        trainer.step()?;
        if let Some(r) = trainer.losses().get(logged) {
            eprintln!("step {} loss {:.6}", r.step, r.loss);
            logged += 1;
        }
    }
    Ok(())
}

fn pretrain(a: &PretrainArgs, config: &RunConfig, seed: Option<u64>, out: &Path) -> Outcome<()> {
    let mut m = RunManifest::start("pretrain");
    // Label siblings match most data globs; they are read with their data file.
    let files: Vec<PathBuf> =
        expand(&a.data)?.into_iter().filter(|p| !p.to_string_lossy().ends_with(".labels.csv")).collect();
    if files.is_empty() {
        return Err(Failure::Data(format!("no data files match {:?}", a.data)));
    }
    let mut fleet = Vec::with_capacity(files.len());
    for p in &files {
        m.input(p);
        fleet.push(load(p)?);
    }
    let names = fleet[0].metric_names();
    if let Some((p, _)) = files.iter().zip(&fleet).find(|(_, f)| f.metric_names() != names) {
        return Err(data_err(p, format!("metric columns differ from {}", files[0].display())));
    }
    let model_config = config.model_config(fleet[0].n_metrics(), seed)?;
    let train = config.train_config(a.steps, PRETRAIN_STEPS, seed)?;
    m.config(json!({ "model": model_config, "train": train }), seed);
    let mut trainer = fleet_trainer(&fleet, &train, &model_config)?;
    train_loop(&mut trainer, train.steps)?;
    let run = trainer.into_run();
    write_run(&mut m, out, &run.checkpoint, &run.losses)?;
    m.finish(out)?;
    Ok(())
}

fn finetune(a: &FinetuneArgs, config: &RunConfig, seed: Option<u64>, out: &Path) -> Outcome<()> {
    let mut m = RunManifest::start("finetune");
    m.input(&a.data);
    let full = load(&a.data)?;
    let frame = match a.train_points {
        Some(k) if k < full.len() => full.slice(0..k)?,
        Some(k) if k > full.len() => {
            return Err(data_err(&a.data, format!("--train-points {k} exceeds {} points", full.len())))
        }
        _ => full,
    };
    let train = config.train_config(a.steps, FINETUNE_STEPS, seed)?;
    let (model, base_step) = if a.scratch {
        (GenAdModel::new(config.model_config(frame.n_metrics(), seed)?)?, 0)
    } else {
        let base = a.base.as_ref().ok_or_else(|| Failure::Usage("finetune needs --base or --scratch".into()))?;
        m.input(base);
        let ckpt = load_checkpoint(base)?;
        if ckpt.model.config().n_metrics != frame.n_metrics() {
            return Err(data_err(
                &a.data,
                format!("{} metrics, checkpoint expects {}", frame.n_metrics(), ckpt.model.config().n_metrics),
            ));
        }
        (ckpt.model, ckpt.step)
    };
    m.config(json!({ "model": model.config(), "train": train, "scratch": a.scratch }), seed);
    let mut trainer = entity_trainer(model, &frame, &train)?;
    trainer.set_base_step(base_step);
    train_loop(&mut trainer, train.steps)?;
    let run = trainer.into_run();
    write_run(&mut m, out, &run.checkpoint, &run.losses)?;
    m.finish(out)?;
    Ok(())
}

/// Normalization and the train/test boundary for detection.
fn detection_setup(
    ckpt: &Checkpoint,
    frame: &SeriesFrame,
    train_points: Option<usize>,
) -> Outcome<(NormalizationStats, usize)> {
    let boundary = train_points.or(ckpt.train_len).unwrap_or(0).min(frame.len());
    let stats = match (&ckpt.stats, train_points) {
        (Some(s), None) => s.clone(),
        _ if boundary > 0 => NormalizationStats::fit(frame, 0..boundary)?,
        _ => NormalizationStats::fit(frame, 0..frame.len())?,
    };
    Ok((stats, boundary))
}

fn detect(a: &DetectArgs, config: &RunConfig, out: &Path) -> Outcome<()> {
    let a_r = a.a_r.or(config.detect.a_r).unwrap_or(DEFAULT_A_R);
    if !(a_r > 0.0 && a_r < 1.0) {
        return Err(Failure::Usage(format!("--a-r {a_r} outside (0, 1)")));
    }
    let mut m = RunManifest::start("detect");
    m.input(&a.ckpt);
    m.input(&a.data);
    let ckpt = load_checkpoint(&a.ckpt)?;
    let frame = load(&a.data)?;
    if frame.n_metrics() != ckpt.model.config().n_metrics {
        return Err(data_err(
            &a.data,
            format!("{} metrics, checkpoint expects {}", frame.n_metrics(), ckpt.model.config().n_metrics),
        ));
    }
    let train_points = a.train_points.or(config.detect.train_points);
    let (stats, boundary) = detection_setup(&ckpt, &frame, train_points)?;
    let errors = score(&stats.apply(&frame)?, &ckpt.model)?;

    let val_start = boundary - (boundary as f64 * validation_fraction(config)?).floor() as usize;
    let (_, rest) = errors.split_at_source(val_start)?;
    let (mut val, mut test) = rest.split_at_source(boundary)?;
    if val.is_empty() {
        val = errors.clone();
    }
    if test.is_empty() {
        test = errors.clone();
    }
    let labels_of =
        |s: &genad_core::detect::ErrorSeries| frame.labels().map(|l| l[s.offset..s.offset + s.len()].to_vec());
    let th = calibrate(&val, labels_of(&val).as_deref(), a_r, &default_eta_grid())?;
    let result = detect_two_level(&test, &th)?;
    let report = match labels_of(&test) {
        Some(l) => Some(evaluate(&result.entity, &l)?),
        None => None,
    };
    m.config(json!({ "a_r": a_r, "train_points": boundary, "validation_start": val_start }), None);
    m.write(&out.join("scores.csv"), &scores_csv(&test, frame.metric_names(), &result)?)?;
    let report = DetectionReport::new(&th, &result, report);
    m.write(&out.join("report.json"), report.to_json()?.as_bytes())?;
    m.finish(out)?;
    if let Some(e) = &report.eval {
        eprintln!("precision {:.3} recall {:.3} f1 {:.3}", e.precision, e.recall, e.f1);
    }
    Ok(())
}

fn validation_fraction(config: &RunConfig) -> Outcome<f64> {
    Ok(config.train_config(Some(1), 1, None)?.validation_fraction)
}

fn eval(a: &EvalArgs, out: &Path) -> Outcome<()> {
    let mut m = RunManifest::start("eval");
    let files = expand(&a.reports)?;
    let mut table = String::from("entity,Pre,Rec,F1\n");
    let (mut sp, mut sr) = (0.0, 0.0);
    for p in &files {
        m.input(p);
        let text = std::fs::read_to_string(p).map_err(|e| data_err(p, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| data_err(p, e))?;
        let field =
            |k: &str| v.get(k).and_then(serde_json::Value::as_f64).ok_or_else(|| data_err(p, format!("no {k}")));
        let (pr, re, f1) = (field("precision")?, field("recall")?, field("f1")?);
        sp += pr;
        sr += re;
        table.push_str(&format!("{},{pr:.3},{re:.3},{f1:.3}\n", entity_name(p)));
    }
    let n = files.len() as f64;
    let (mp, mr) = (sp / n, sr / n);
    table.push_str(&format!("Total,{mp:.3},{mr:.3},{:.3}\n", f1_score(mp, mr)));
    m.write(&out.join("eval.csv"), table.as_bytes())?;
    m.finish(out)?;
    print!("{table}");
    Ok(())
}

/// `runs/entity_003/report.json` → `entity_003`; a bare `x.json` → `x`.
fn entity_name(p: &Path) -> String {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "report" {
        if let Some(dir) = p.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

fn gradcheck(a: &GradcheckArgs, seed: u64) -> Outcome<ExitCode> {
    let mut worst = 0.0f64;
    for (name, r) in primitive_checks(seed, a.corrupt)? {
        println!("{name:<18} max_rel_error {:.3e} ({} elements)", r.max_rel_error, r.checked);
        worst = worst.max(r.max_rel_error);
    }
    let config = ModelConfig { dropout: 0.1, ..ModelConfig::new(GRADCHECK_METRICS) };
    let opts = GradCheckOptions { seed, ..GradCheckOptions::default() };
    let r = gradcheck_model(&config, seed, a.corrupt, opts)?;
    println!("{:<18} max_rel_error {:.3e} ({} elements)", "model", r.max_rel_error, r.checked);
    worst = worst.max(r.max_rel_error);
    let pass = worst < GRADCHECK_TOLERANCE;
    println!("max relative error {worst:.3e}: {}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
