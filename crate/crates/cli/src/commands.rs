use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use speechvqa_core::data::{
    generate_dataset, load_image, normalize_text, read_dataset, synth_audio_features_with, validate_sample,
    write_dataset, DatasetConfig, DEFAULT_AUDIO_SEED, DEFAULT_FRAMES_PER_CHAR, IMAGES_DIR, MANIFEST_FILE,
    SAMPLES_FILE,
};
use speechvqa_core::eval::{
    all_cells, evaluate, evaluate_with_config, EchoOracle, EmptyResponder, EvalOptions, EvalReport, Modality,
};
use speechvqa_core::language::Vocabulary;
use speechvqa_core::metrics::{iou, parse_bbox};
use speechvqa_core::model::Prompt;
use speechvqa_core::training::{
    checkpoint_hash, load_checkpoint, save_checkpoint, train, Stage, StepLog, TrainConfig, TrainReport,
    CHECKPOINT_VERSION,
};
use speechvqa_core::{AdapterKind, BBox, InstructionType, ModelBundle, ModelConfig};

use crate::args::{EvalArgs, GenDataArgs, PredictArgs, ResponderKind, TrainArgs};
use crate::error::Failure;
use crate::manifest::{default_manifest_path, write_atomic, RunManifest};

fn load_bundle(path: &Path) -> Result<ModelBundle, Failure> {
    load_checkpoint(path).map_err(|e| {
        Failure::data(format!(
            "cannot load checkpoint {}: {e} (this build reads checkpoint format version {CHECKPOINT_VERSION})",
            path.display()
        ))
    })
}

fn read_data(path: &Path) -> Result<speechvqa_core::Dataset, Failure> {
    read_dataset(path).map_err(|e| Failure::from(e).context(format!("dataset {}", path.display())))
}

pub fn gen_data_manifest_path(a: &GenDataArgs) -> PathBuf {
    a.manifest.clone().unwrap_or_else(|| default_manifest_path(&a.out))
}

/// Refuses to touch a non-empty directory unless forced, and then only if
/// it holds a dataset.
fn prepare_output_dir(out: &Path, force: bool) -> Result<(), Failure> {
    let non_empty = out.is_dir() && fs::read_dir(out)?.next().is_some();
    if out.exists() && !out.is_dir() {
        return Err(Failure::usage(format!("{} exists and is not a directory", out.display())));
    }
    if !non_empty {
        return Ok(());
    }
    if !force {
        return Err(Failure::usage(format!(
            "output directory {} is not empty (pass --force to overwrite)",
            out.display()
        )));
    }
    if !out.join(MANIFEST_FILE).is_file() {
        return Err(Failure::usage(format!(
            "refusing to overwrite {}: it does not look like a dataset directory",
            out.display()
        )));
    }
    for f in [MANIFEST_FILE, SAMPLES_FILE] {
        let p = out.join(f);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    let images = out.join(IMAGES_DIR);
    if images.is_dir() {
        fs::remove_dir_all(images)?;
    }
    Ok(())
}

pub fn gen_data(a: &GenDataArgs, m: &mut RunManifest) -> Result<(), Failure> {
    if a.n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    let d_audio = ModelConfig::for_profile(a.profile, AdapterKind::Linear).audio_encoder.d_audio;
    let mut cfg = DatasetConfig::new(a.n, a.seed, d_audio);
    cfg.shapes_min = a.shapes_min;
    cfg.shapes_max = a.shapes_max;
    if !a.types.is_empty() {
        cfg.types = a.types.clone();
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    m.config = json!({ "dataset": cfg, "profile": a.profile });
    m.seeds.insert("dataset".into(), cfg.seed);
    m.seeds.insert("audio".into(), cfg.audio.seed);

    prepare_output_dir(&a.out, a.force)?;
    let ds = generate_dataset(&cfg)?;
    let hash = write_dataset(&ds, &a.out)?;
    if a.validate {
        let back = read_data(&a.out)?;
        for s in &back.samples {
            validate_sample(s, &back.manifest.audio)?;
        }
        println!("validated {} samples", back.samples.len());
    }
    m.artifact(&a.out)?;
    println!("wrote {} samples to {} (content hash {hash})", ds.samples.len(), a.out.display());
    Ok(())
}

pub fn train_manifest_path(a: &TrainArgs) -> PathBuf {
    a.manifest.clone().unwrap_or_else(|| default_manifest_path(&a.out))
}

fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

fn resolve_train_config(a: &TrainArgs, m: &mut RunManifest) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            m.input(p)?;
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $field:ident) => {
            if let Some(v) = $flag {
                cfg.$field = v;
            }
        };
    }
    set!(a.lr, init_lr);
    set!(a.min_lr, min_lr);
    set!(a.warmup_lr, warmup_lr);
    set!(a.warmup_steps, warmup_steps);
    set!(a.weight_decay, weight_decay);
    set!(a.epochs, epochs);
    set!(a.batch_size, batch_size);
    set!(a.seed, seed);
    set!(a.modality, modality);
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    if let Some(c) = a.grad_clip {
        cfg.grad_clip = (c > 0.0).then_some(c);
    }
    for name in &a.freeze {
        let f = &mut cfg.freeze;
        match name.as_str() {
            "audio_encoder" => f.audio_encoder = true,
            "visual_encoder" => f.visual_encoder = true,
            "audio_adapter" => f.audio_adapter = true,
            "visual_adapter" => f.visual_adapter = true,
            "lm" => f.lm = true,
            other => return Err(Failure::usage(format!("unknown component `{other}` in --freeze"))),
        }
    }
    cfg.stage = a.stage;
    cfg.allow_missing_stage1 |= a.allow_missing_stage1;
    Ok(cfg)
}

pub fn train_cmd(a: &TrainArgs, m: &mut RunManifest) -> Result<(), Failure> {
    m.input(&a.dataset)?;
    let mut ds = read_data(&a.dataset)?;
    if !a.types.is_empty() {
        ds = ds.filter_types(&a.types)?;
    }
    let mut cfg = resolve_train_config(a, m)?;

    let mut bundle = match &a.init_from {
        Some(p) => {
            m.input(p)?;
            load_bundle(p)?
        }
        None => {
            if cfg.stage == Stage::Stage2 && !cfg.allow_missing_stage1 {
                return Err(Failure::usage(
                    "stage 2 needs a stage-1 checkpoint: pass --init-from <stage-1 checkpoint> \
                     (or --allow-missing-stage1 to train stage 2 from scratch)",
                ));
            }
            let kind = a.adapter.unwrap_or(AdapterKind::Linear);
            ModelBundle::new(ModelConfig::for_profile(a.profile, kind), a.init_seed.unwrap_or(cfg.seed))?
        }
    };
    let kind = bundle.config.audio_adapter.kind;
    if let Some(k) = a.adapter {
        if k != kind {
            return Err(Failure::usage(format!(
                "--adapter {k} does not match the {kind} adapter of the --init-from checkpoint"
            )));
        }
    }
    cfg.adapter = kind;
    let (d_data, d_model) = (ds.manifest.audio.d_audio, bundle.config.audio_encoder.d_audio);
    if d_data != d_model {
        return Err(Failure::data(format!(
            "dataset audio width {d_data} does not match the model's {d_model}; generate the data with the same --profile"
        )));
    }
    cfg.validate()?;

    eprintln!("resolved training config:\n{}", cfg.to_toml_string());
    m.config = json!({
        "train": cfg,
        "model": bundle.config,
        "profile": a.profile,
        "types": a.types,
        "init_from": a.init_from,
    });
    m.seeds.insert("train".into(), cfg.seed);
    m.seeds.insert("init".into(), bundle.init_seed);

    let mut log: Vec<StepLog> = Vec::new();
    let every = a.log_every;
    let result = train(&ds, &mut bundle, &cfg, &mut |l| {
        if every > 0 && l.step % every == 0 {
            eprintln!("step {:>6}  lr {:.3e}  loss {:.6}", l.step, l.lr, l.loss);
        }
        log.push(*l);
    });
    let total_steps = bundle.train_state.as_ref().map_or(0, |s| s.total_steps);
    let csv = TrainReport {
        log: log.clone(),
        total_steps,
        finished: false,
    }
    .to_csv();
    let csv_path = log_path(&a.out);
    write_atomic(&csv_path, csv.as_bytes())?;
    m.artifact(&csv_path)?;
    let report = result?;

    save_checkpoint(&bundle, &a.out)?;
    m.artifact(&a.out)?;
    match report.final_loss() {
        Some(l) => println!("final loss {l:.17e}"),
        None => println!("no steps run"),
    }
    let done = bundle.train_state.as_ref().map_or(0, |s| s.step);
    println!(
        "{} steps of {} done ({}); checkpoint {}",
        done,
        report.total_steps,
        if report.finished { "finished" } else { "resumable" },
        a.out.display()
    );
    Ok(())
}

pub fn parse_cells(s: &str) -> Result<Vec<(InstructionType, Modality)>, Failure> {
    if s.trim() == "all" {
        return Ok(all_cells());
    }
    s.split(',')
        .map(|part| {
            let (t, mo) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Failure::usage(format!("cell `{part}` is not of the form type:modality")))?;
            Ok((
                t.parse::<InstructionType>().map_err(Failure::usage)?,
                mo.parse::<Modality>().map_err(Failure::usage)?,
            ))
        })
        .collect()
}

pub fn eval_stem(hash: &str) -> String {
    format!("eval-{}", &hash[..hash.len().min(12)])
}

pub fn eval_cmd(a: &EvalArgs, timestamp: &str, m: &mut RunManifest) -> Result<PathBuf, Failure> {
    if !(0.0..=1.0).contains(&a.iou_threshold) {
        return Err(Failure::usage("--iou-threshold must lie in [0, 1]"));
    }
    let opts = EvalOptions {
        cells: parse_cells(&a.cells)?,
        iou_threshold: a.iou_threshold,
        max_new: a.max_new,
        timestamp: timestamp.to_string(),
    };
    m.config = json!({ "eval": opts, "responder": a.responder, "checkpoint": a.checkpoint });
    m.input(&a.dataset)?;
    let ds = read_data(&a.dataset)?;
    let report: EvalReport = match a.responder {
        ResponderKind::Model => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| Failure::usage("--checkpoint is required with --responder model"))?;
            m.input(path)?;
            let bundle = load_bundle(path)?;
            let mut r = evaluate_with_config(&bundle, &ds, &opts, Some(&bundle.config))?;
            r.metadata.checkpoint_hash = checkpoint_hash(path)?;
            r
        }
        ResponderKind::Echo => evaluate(&EchoOracle, &ds, &opts)?,
        ResponderKind::Empty => evaluate(&EmptyResponder, &ds, &opts)?,
    };
    let stem = eval_stem(&report.metadata.checkpoint_hash);
    fs::create_dir_all(&a.out_dir)?;
    for (ext, body) in [
        ("csv", report.to_csv()),
        ("txt", report.to_table()),
        ("json", report.to_json()),
    ] {
        let p = a.out_dir.join(format!("{stem}.{ext}"));
        write_atomic(&p, body.as_bytes())?;
        m.artifact(&p)?;
    }
    print!("{}", report.to_table());
    Ok(a.out_dir.join(format!("{stem}.run.json")))
}

fn parse_gt(s: &str) -> Result<BBox, Failure> {
    let braced = if s.trim_start().starts_with('{') {
        s.to_string()
    } else {
        format!("{{{s}}}")
    };
    parse_bbox(&braced).ok_or_else(|| Failure::usage(format!("--gt-bbox `{s}` is not a valid x1,y1,x2,y2 box")))
}

pub fn predict(a: &PredictArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let gt = a.gt_bbox.as_deref().map(parse_gt).transpose()?;
    m.input(&a.checkpoint)?;
    m.input(&a.image)?;
    m.config = json!({ "predict": a });
    let bundle = load_bundle(&a.checkpoint)?;
    let img = load_image(&a.image)?;
    let patches = bundle.patches(&img)?;
    let (raw, speech) = match (&a.text, &a.speech_from_text) {
        (Some(t), None) => (t, false),
        (None, Some(t)) => (t, true),
        _ => return Err(Failure::usage("pass exactly one of --text and --speech-from-text")),
    };
    let norm = normalize_text(raw);
    if norm.dropped > 0 {
        eprintln!("note: dropped {} unsupported symbols from the instruction", norm.dropped);
    }
    if norm.text.is_empty() {
        return Err(Failure::usage("the instruction is empty after normalisation"));
    }
    let response = if speech {
        let audio_seed = bundle.audio_seed.unwrap_or(DEFAULT_AUDIO_SEED);
        m.seeds.insert("audio".into(), audio_seed);
        let audio = synth_audio_features_with(
            &norm.text,
            bundle.config.audio_encoder.d_audio,
            audio_seed,
            bundle.frames_per_char.unwrap_or(DEFAULT_FRAMES_PER_CHAR),
        )?;
        bundle.generate(
            &Prompt {
                patches: Some(&patches),
                audio: Some(&audio),
                text_ids: None,
            },
            a.max_new,
        )?
    } else {
        let ids = Vocabulary::new().encode(&norm.text)?;
        bundle.generate(
            &Prompt {
                patches: Some(&patches),
                audio: None,
                text_ids: Some(&ids),
            },
            a.max_new,
        )?
    };
    println!("{response}");
    match parse_bbox(&response) {
        Some(b) => {
            println!("bbox {b}");
            if let Some(g) = gt {
                println!("iou {:?}", iou(&b, &g));
            }
        }
        None => println!("bbox none"),
    }
    Ok(())
}
