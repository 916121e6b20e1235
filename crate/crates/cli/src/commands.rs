//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use contactloc::audio_io::{load_manifest, read_clip, EventRecord, ManifestEntry};
use contactloc::features::MelAnalyzer;
use contactloc::localize::{
    evaluate, extract, load_checkpoint, save_checkpoint, train as fit, EvalReport, EventFeatures, Localizer, MissingPolicy, Modalities, Pipeline,
    RegressorModel, TdoaLocalizer,
};
use contactloc::mapping::{default_threshold, events_csv, execute_mapping, plan_strikes, report_text, score_map, sorted, Rig, SURFACE_SPACING};
use contactloc::preprocess::build_noise_profile;
use contactloc::proprio::ProprioTrace;
use contactloc::simulate::{child_seed, synth_dataset, Split};

use crate::config::RunConfig;
use crate::CliError;

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io(path, e))
}

/// Creates `dir`; its parent must already exist.
fn output_dir(dir: &Path) -> Result<(), CliError> {
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(io(parent, "directory does not exist"));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn manifest_path(data: &Path, split: Split) -> PathBuf {
    data.join(split.name()).join("manifest.jsonl")
}

fn entries(manifest: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    if !manifest.is_file() {
        return Err(io(manifest, "manifest not found"));
    }
    let e = load_manifest(manifest)?;
    if e.is_empty() {
        return Err(CliError::Usage(format!("{}: manifest has no events", manifest.display())));
    }
    Ok(e)
}

fn features(entries: &[ManifestEntry], pipeline: &Pipeline) -> Result<Vec<EventFeatures>, CliError> {
    let analyzer = MelAnalyzer::default();
    entries.iter().map(|e| Ok(extract(&e.resolve()?, pipeline, &analyzer)?)).collect()
}

fn pipeline_for(cfg: &RunConfig, data: &Path) -> Result<Pipeline, CliError> {
    let gate = if cfg.pipeline.background_subtraction {
        let reference = read_clip(&data.join("reference_noise.wav"))?;
        Some(build_noise_profile(&reference, &cfg.gate).map_err(|e| CliError::Usage(e.to_string()))?)
    } else {
        None
    };
    Ok(Pipeline { gate, window_s: cfg.pipeline.window_s, gcc_on_raw: cfg.pipeline.gcc_on_raw })
}

fn model(path: &Path) -> Result<RegressorModel, CliError> {
    if !path.is_file() {
        return Err(io(path, "checkpoint not found"));
    }
    Ok(load_checkpoint(path)?)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    output_dir(out)?;
    let summary = synth_dataset(&cfg.dataset, &cfg.layout, &cfg.cylinder, &cfg.sim, cfg.seed, out)?;
    cfg.echo(out)?;
    println!("events = {}", summary.events);
    for (split, path) in &summary.manifests {
        println!("{split} = \"{}\"", path.display());
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let train_entries = entries(&manifest_path(data, Split::Train))?;
    let pipeline = pipeline_for(cfg, data)?;
    eprintln!("extracting features for {} events", train_entries.len());
    let feats = features(&train_entries, &pipeline)?;
    output_dir(out)?;
    let outcome = fit(&feats, None, &cfg.train, pipeline, cfg.layout.clone(), cfg.cylinder, |e| {
        eprintln!("epoch {:>4}  train {:.6}  val {:.6}", e.epoch, e.train_loss, e.val_loss)
    })?;
    save_checkpoint(&outcome.model, &out.join("model.ckpt"))?;
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for e in &outcome.log {
        let _ = writeln!(csv, "{},{:.9},{:.9}", e.epoch, e.train_loss, e.val_loss);
    }
    write(&out.join("loss.csv"), &csv)?;
    cfg.echo(out)?;
    println!("epochs = {}", outcome.log.len());
    println!("best_epoch = {}", outcome.best_epoch);
    println!("modalities = \"{}\"", cfg.train.modalities);
    Ok(())
}

fn report_section(name: &str, r: &EvalReport) -> String {
    let mut s = format!("[{name}]\n");
    let _ = writeln!(s, "n = {}", r.n);
    for (k, v) in [
        ("med_cm", r.med),
        ("median_cm", r.median),
        ("q1_cm", r.q1),
        ("q3_cm", r.q3),
        ("max_cm", r.max),
        ("mean_height_error_cm", r.mean_height_error),
    ] {
        let _ = writeln!(s, "{k} = {:.4}", v * 100.0);
    }
    let _ = writeln!(s, "mean_angle_error_deg = {:.4}", r.mean_angle_error_deg);
    let missing: Vec<String> = r.missing_modalities.iter().map(|m| format!("\"{m}\"")).collect();
    let _ = writeln!(s, "missing_modalities = [{}]", missing.join(", "));
    s
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, flags: Option<Modalities>, out: Option<&Path>) -> Result<(), CliError> {
    let m = model(checkpoint)?;
    let sets: Vec<(String, PathBuf)> = if data.is_dir() {
        let found: Vec<(String, PathBuf)> = [Split::Test1, Split::Test2, Split::Test3, Split::Test4]
            .iter()
            .map(|&s| (s.name().to_string(), manifest_path(data, s)))
            .filter(|(_, p)| p.is_file())
            .collect();
        if found.is_empty() {
            return Err(io(data, "no test split manifests found"));
        }
        found
    } else {
        vec![("manifest".to_string(), data.to_path_buf())]
    };
    let mut report = format!("checkpoint_modalities = \"{}\"\n", m.modalities);
    let _ = writeln!(report, "eval_modalities = \"{}\"\n", m.effective(flags));
    let mut csv = String::from("set,index,true_z_cm,true_theta_deg,pred_z_cm,pred_theta_deg,error_cm,height_error_cm,angle_error_deg\n");
    for (name, path) in &sets {
        let feats = features(&entries(path)?, &m.pipeline)?;
        let r = evaluate(&m, &feats, flags)?;
        if !r.missing_modalities.is_empty() {
            eprintln!("note: {name} lacks {}; those inputs were zeroed", r.missing_modalities.join(", "));
        }
        report.push_str(&report_section(name, &r));
        report.push('\n');
        for (i, e) in r.per_event.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{name},{i},{:.4},{:.3},{:.4},{:.3},{:.4},{:.4},{:.3}",
                e.true_z * 100.0,
                e.true_theta.to_degrees(),
                e.pred_z * 100.0,
                e.pred_theta.to_degrees(),
                e.distance * 100.0,
                e.height_error * 100.0,
                e.angle_error.to_degrees()
            );
        }
    }
    print!("{report}");
    if let Some(dir) = out {
        output_dir(dir)?;
        write(&dir.join("report.txt"), &report)?;
        write(&dir.join("per_event.csv"), &csv)?;
        cfg.echo(dir)?;
    }
    Ok(())
}

fn baseline_localizer(cfg: &RunConfig) -> TdoaLocalizer {
    TdoaLocalizer::new(&cfg.layout, &cfg.cylinder, &cfg.sim, Pipeline { gate: None, window_s: cfg.pipeline.window_s, gcc_on_raw: false })
}

pub fn locate(cfg: &RunConfig, checkpoint: Option<&Path>, wav: &Path, proprio: Option<&Path>, baseline: bool) -> Result<(), CliError> {
    let clip = read_clip(wav)?;
    let proprio = match proprio {
        Some(p) => Some(ProprioTrace::read(p).map_err(contactloc::audio_io::AudioError::from)?),
        None => None,
    };
    let event = EventRecord { clip, proprio, label: None, metadata: Default::default() };
    let (point, note) = match (baseline, checkpoint) {
        (true, _) => (baseline_localizer(cfg).locate(&event)?, None),
        (false, Some(ckpt)) => {
            let m = model(ckpt)?;
            let f = m.features(&event)?;
            let missing = m.modalities.proprio && f.proprio.is_none();
            let p = m.predict_features(std::slice::from_ref(&f), None, MissingPolicy::Zero)?[0];
            (p, missing.then_some("note: no proprioception given; estimate uses audio only and is less certain"))
        }
        (false, None) => return Err(CliError::Usage("--checkpoint is required unless --baseline is given".into())),
    };
    println!("{:.3} {:.2}", point.z() * 100.0, point.theta().to_degrees());
    if let Some(n) = note {
        println!("{n}");
    }
    Ok(())
}

pub fn map(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path, baseline: bool) -> Result<(), CliError> {
    let scene = &cfg.mapping.scene;
    let (localizer, rig): (Box<dyn Localizer>, Rig) = match (baseline, checkpoint) {
        (true, _) => (Box::new(baseline_localizer(cfg)), Rig { layout: cfg.layout.clone(), cylinder: cfg.cylinder, sim: cfg.sim.clone() }),
        (false, Some(ckpt)) => {
            let m = model(ckpt)?;
            let rig = Rig { layout: m.layout.clone(), cylinder: m.cylinder, sim: cfg.sim.clone() };
            (Box::new(m), rig)
        }
        (false, None) => return Err(CliError::Usage("--checkpoint is required unless --baseline is given".into())),
    };
    let mut plan = plan_strikes(scene, &rig.cylinder, cfg.mapping.positions, cfg.seed)?;
    if cfg.mapping.max_strikes > 0 {
        plan.poses.truncate(cfg.mapping.max_strikes);
    }
    let threshold = match cfg.mapping.threshold {
        Some(t) => t,
        None => default_threshold(&rig, child_seed(cfg.seed, 40, 0))?,
    };
    let outcome = execute_mapping(&plan, scene, localizer.as_ref(), &rig, threshold, cfg.seed)?;
    let score = if outcome.events.is_empty() {
        None
    } else {
        Some(score_map(&outcome.predicted(), &scene.surface_samples(SURFACE_SPACING), &outcome.truth())?)
    };
    output_dir(out)?;
    write(&out.join("predicted.xyz"), &sorted(&outcome.predicted()).to_xyz())?;
    write(&out.join("truth.xyz"), &sorted(&outcome.truth()).to_xyz())?;
    write(&out.join("events.csv"), &events_csv(&outcome))?;
    let report = report_text(&outcome, score.as_ref());
    write(&out.join("report.txt"), &report)?;
    cfg.echo(out)?;
    print!("{report}");
    if outcome.events.is_empty() {
        eprintln!("note: no strike produced an accepted event; the map is empty");
    }
    Ok(())
}
