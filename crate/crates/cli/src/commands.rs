use std::path::Path;

use minseg::baseline::{build_lut, load_lut, lut_segment, sample_pixels, save_lut, train_pixel_svm, SvmOptions};
use minseg::bench::{bench_grid, time_forward, BenchGrid, BenchOptions};
use minseg::data::pnm::save_gray_pgm;
use minseg::data::{load_image_ppm, save_mask_pgm, synth_generate, write_dataset, SynthParams};
use minseg::eval::{evaluate, evaluate_with_sweep, format_table, threshold_mask, EvalReport, TableRow};
use minseg::net::config::{enumerate_configs, validate_config, ConfigGrid};
use minseg::net::io::{decode_header, decode_model};
use minseg::net::{save_folded, save_model};
use minseg::train::{append_jsonl, train_with, Hyperparams};
use minseg::{fold_batchnorm, Error, Model, NetworkConfig, Precision, Result, Segmenter, SegmenterRegistry, Shape};

use crate::data::{samples, stem, unnamed};
use crate::run::RunManifest;
use crate::{BaselineSegmentArgs, BaselineTrainArgs, BenchArgs, EvalArgs, FoldArgs, GridArgs, SegmentArgs, SynthArgs, TrainArgs};

fn grid_configs(g: &GridArgs) -> Result<Vec<NetworkConfig>> {
    let grid = ConfigGrid {
        layers: g.layers.clone(),
        filters: g.filters.clone(),
        multipliers: g.multipliers.clone(),
        strides: g.strides.clone(),
    };
    // a bad grid value is a usage mistake, not a model validation failure
    grid.check().map_err(|v| Error::Argument(v.to_string()))?;
    if g.classes < 2 {
        return Err(Error::Argument("--classes must be at least 2".into()));
    }
    Ok(enumerate_configs(&grid, g.classes))
}

pub fn enumerate(g: &GridArgs) -> Result<()> {
    for cfg in grid_configs(g)? {
        println!("{cfg}");
    }
    Ok(())
}

/// Parses and checks a config; the class count comes from `classes` and must
/// agree with an explicit `C` suffix.
fn parse_config(s: &str, classes: usize) -> Result<NetworkConfig> {
    let cfg: NetworkConfig = s.parse()?;
    let explicit = s.to_ascii_uppercase().contains('C');
    if explicit && cfg.classes != classes {
        return Err(Error::Argument(format!("{s} has {} classes but --classes is {classes}", cfg.classes)));
    }
    let cfg = cfg.with_classes(classes);
    cfg.check()?;
    Ok(cfg)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.classes < 2 {
        return Err(Error::Argument("--classes must be at least 2".into()));
    }
    let mut m = RunManifest::new("synth").seed("data", a.seed);
    m.hyperparams = serde_json::json!({
        "count": a.count,
        "size": format!("{}x{}", a.size.1, a.size.0),
        "classes": a.classes,
    });
    let dir = m.start(a.out.run_dir.as_deref())?;
    let set = synth_generate(&SynthParams::new(a.count, a.size.0, a.size.1, a.seed, a.classes));
    let manifest = write_dataset(&set, a.classes, dir.join("dataset"))?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = parse_config(&a.config, a.data.classes)?;
    let h = Hyperparams {
        lr0: a.lr,
        decay: a.decay,
        momentum: a.momentum,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
    };
    h.check()?;
    if a.data.synth.is_some() {
        validate_config(&cfg, a.data.size.0, a.data.size.1)?;
    }
    let split = unnamed(a.data.load()?);
    if let Some(s) = split.train.first() {
        validate_config(&cfg, s.height(), s.width())?;
    }

    let mut m = RunManifest::new("train")
        .seed("init_and_shuffle", a.seed)
        .seed("data", a.data.data_seed)
        .seed("split", a.data.split_seed)
        .inputs(a.data.input_paths());
    m.config = Some(cfg.to_string());
    m.hyperparams = serde_json::json!({ "train": h, "data": a.data.to_json() });
    let dir = m.start(a.out.run_dir.as_deref())?;
    let ckpt = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt)?;
    let history = dir.join("history.jsonl");

    let model = Model::<f32>::build(&cfg, a.seed)?;
    let mut observer = |m: &Model<f32>, rec: &minseg::train::EpochRecord| -> Result<()> {
        save_model(m, ckpt.join(format!("epoch_{:03}.smkr", rec.epoch)))?;
        append_jsonl(&history, rec)?;
        eprintln!(
            "epoch {:>3}  lr {:.5}  train {:.4}  val {:.4}  ball IoU {}  {:.1}s",
            rec.epoch,
            rec.lr,
            rec.train_loss,
            rec.val_loss.unwrap_or(f64::NAN),
            rec.val_iou.map_or("-".into(), |v| format!("{v:.3}")),
            rec.seconds
        );
        Ok(())
    };
    let (model, _) = train_with(model, &split, &h, &mut observer)?;
    let out = dir.join("model.smkr");
    save_model(&model, &out)?;
    println!("{}", out.display());
    Ok(())
}

fn load_segmenter(path: &Path, kind: Option<&str>) -> Result<Box<dyn Segmenter>> {
    let reg = SegmenterRegistry::builtin();
    match kind {
        Some(k) => reg.load(k, path),
        None => reg.load_auto(path),
    }
}

fn table_text(report: &EvalReport, cfg: Option<NetworkConfig>) -> String {
    let mut out = String::new();
    if let (Some(config), Some(ball)) = (cfg, report.class(1)) {
        out.push_str(&format_table(
            &[],
            &[TableRow {
                config,
                theta_star: Some(ball.theta_star),
                iou: Some(ball.iou),
                times_ms: Vec::new(),
            }],
        ));
    }
    for c in &report.classes {
        out.push_str(&format!(
            "class {}: theta* {:.2}  IoU {:.4}  (tp {}, fp {}, fn {})\n",
            c.id, c.theta_star, c.iou, c.tp, c.fp, c.fn_
        ));
    }
    out
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let seg = load_segmenter(&a.model, a.kind.as_deref())?;
    if seg.classes() != a.data.classes {
        return Err(Error::Argument(format!(
            "{} predicts {} classes but --classes is {}",
            a.model.display(),
            seg.classes(),
            a.data.classes
        )));
    }
    let split = a.data.load()?;
    let mut m = RunManifest::new("eval")
        .seed("data", a.data.data_seed)
        .seed("split", a.data.split_seed)
        .inputs([a.model.clone()])
        .inputs(a.data.input_paths());
    m.config = Some(seg.config_id());
    m.hyperparams = serde_json::json!({
        "kind": seg.kind(),
        "sweep_on_test": a.sweep_on_test,
        "data": a.data.to_json(),
    });
    let dir = m.start(a.out.run_dir.as_deref())?;

    let names: Vec<String> = split.test.iter().map(|n| n.name.clone()).collect();
    let test = samples(split.test);
    let report = if a.sweep_on_test {
        evaluate(seg.as_ref(), &test)?
    } else {
        evaluate_with_sweep(seg.as_ref(), &samples(split.validation), &test)?
    };
    std::fs::write(dir.join("eval.json"), report.to_json() + "\n")?;
    let text = table_text(&report, seg.config());
    std::fs::write(dir.join("table.txt"), &text)?;
    print!("{text}");

    if a.save_masks {
        let masks = dir.join("masks");
        std::fs::create_dir_all(&masks)?;
        for (name, s) in names.iter().zip(&test) {
            let probs = seg.predict(&s.image)?;
            for c in &report.classes {
                let mask = threshold_mask(&probs, 0, c.id as usize, c.theta_star)?;
                save_mask_pgm(&mask, 2, masks.join(format!("{name}_class{}.pgm", c.id)))?;
            }
        }
    }
    Ok(())
}

pub fn segment(a: &SegmentArgs) -> Result<()> {
    let seg = load_segmenter(&a.model, a.kind.as_deref())?;
    let thetas: Vec<f64> = match &a.report {
        Some(p) => {
            let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            (1..seg.classes())
                .map(|c| {
                    report
                        .class(c as u8)
                        .map(|s| s.theta_star)
                        .ok_or_else(|| Error::Argument(format!("{} has no threshold for class {c}", p.display())))
                })
                .collect::<Result<_>>()?
        }
        None => {
            if !(0.0..=1.0).contains(&a.theta) {
                return Err(Error::Argument(format!("--theta {} is outside [0, 1]", a.theta)));
            }
            vec![a.theta; seg.classes() - 1]
        }
    };
    let mut m = RunManifest::new("segment")
        .inputs([a.model.clone()])
        .inputs(a.images.iter().cloned())
        .inputs(a.report.clone());
    m.config = Some(seg.config_id());
    m.hyperparams = serde_json::json!({ "kind": seg.kind(), "thetas": thetas });
    let dir = m.start(a.out.run_dir.as_deref())?;

    for path in &a.images {
        let image = load_image_ppm(path)?;
        let probs = seg.predict(&image)?;
        let name = stem(path);
        let (h, w) = (probs.height(), probs.width());
        for c in 0..seg.classes() {
            save_gray_pgm(probs.class_plane(0, c), h, w, dir.join(format!("{name}_prob_class{c}.pgm")))?;
        }
        for (i, &theta) in thetas.iter().enumerate() {
            let mask = threshold_mask(&probs, 0, i + 1, theta)?;
            save_mask_pgm(&mask, 2, dir.join(format!("{name}_class{}.pgm", i + 1)))?;
        }
        println!("{name}: {} classes written", seg.classes());
    }
    Ok(())
}

pub fn fold(a: &FoldArgs) -> Result<()> {
    let bytes = std::fs::read(&a.model)?;
    let header = decode_header(&bytes)?;
    if header.folded {
        return Err(Error::Argument(format!("{} is already folded", a.model.display())));
    }
    let mut m = RunManifest::new("fold").inputs([a.model.clone()]);
    m.config = Some(header.config.to_string());
    let dir = m.start(a.out.run_dir.as_deref())?;
    let out = dir.join("model.folded.smkr");
    match header.precision {
        Precision::Single => save_folded(&fold_batchnorm(&decode_model::<f32>(&bytes)?)?, &out)?,
        Precision::Double => save_folded(&fold_batchnorm(&decode_model::<f64>(&bytes)?)?, &out)?,
    }
    println!("{}", out.display());
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let configs = match (&a.model, a.configs.is_empty()) {
        (Some(_), _) => Vec::new(),
        (None, false) => a
            .configs
            .iter()
            .map(|s| parse_config(s, a.grid.classes))
            .collect::<Result<Vec<_>>>()?,
        (None, true) => grid_configs(&a.grid)?,
    };
    let model = match &a.model {
        Some(p) => {
            let bytes = std::fs::read(p)?;
            let kind = match SegmenterRegistry::sniff(&bytes)? {
                "cnn" if !a.unfolded => "cnn-folded",
                "cnn-folded" if a.unfolded => {
                    return Err(Error::Argument("--unfolded needs an unfolded model file".into()));
                }
                k => k,
            };
            Some(SegmenterRegistry::builtin().decode(kind, &bytes)?)
        }
        None => None,
    };
    if let Some(seg) = &model {
        for &(h, w) in &a.res {
            seg.check_input(Shape::new(1, 3, h, w)?)?;
        }
    }
    let mut m = RunManifest::new("bench").seed("init", a.seed).inputs(a.model.clone());
    m.config = model.as_ref().map(|s| s.config_id());
    m.hyperparams = serde_json::json!({
        "configs": configs.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        "resolutions": a.res.iter().map(|(h, w)| format!("{w}x{h}")).collect::<Vec<_>>(),
        "iterations": a.iterations,
        "warmup": a.warmup,
        "folded": !a.unfolded,
    });
    let dir = m.start(a.out.run_dir.as_deref())?;

    let grid = match &model {
        Some(seg) => BenchGrid {
            reports: a
                .res
                .iter()
                .map(|&r| time_forward(seg.as_ref(), r, a.iterations, a.warmup))
                .collect::<Result<_>>()?,
            skipped: Vec::new(),
        },
        None => bench_grid(
            &configs,
            &a.res,
            BenchOptions {
                iterations: a.iterations,
                warmup: a.warmup,
                folded: !a.unfolded,
                seed: a.seed,
            },
        )?,
    };
    std::fs::write(dir.join("bench.json"), grid.to_json() + "\n")?;
    std::fs::write(dir.join("table.txt"), grid.table(&a.res))?;
    for r in &grid.reports {
        println!(
            "{} {} {}x{}: mean {:.3} ms  std {:.3}  min {:.3}  {:.1} fps",
            r.config, r.segmenter, r.width, r.height, r.mean_ms, r.std_ms, r.min_ms, r.fps
        );
    }
    for s in &grid.skipped {
        println!("skipped: {s}");
    }
    Ok(())
}

pub fn baseline_train(a: &BaselineTrainArgs) -> Result<()> {
    if !(1..=8).contains(&a.bits) {
        return Err(Error::Argument(format!("--bits {} is outside 1..=8", a.bits)));
    }
    let split = a.data.load()?;
    let mut m = RunManifest::new("baseline-train")
        .seed("svm", a.seed)
        .seed("data", a.data.data_seed)
        .seed("split", a.data.split_seed)
        .inputs(a.data.input_paths());
    m.hyperparams = serde_json::json!({
        "bits": a.bits,
        "per_image": a.per_image,
        "c_grid": a.c_grid,
        "svm_epochs": a.svm_epochs,
        "data": a.data.to_json(),
    });
    let dir = m.start(a.out.run_dir.as_deref())?;

    let split = unnamed(split);
    let train_px = sample_pixels(&split.train, a.per_image, a.seed);
    let val_px = sample_pixels(&split.validation, a.per_image, a.seed.wrapping_add(1));
    let opts = SvmOptions {
        epochs: a.svm_epochs,
        seed: a.seed,
    };
    let svm = train_pixel_svm(&train_px, &val_px, a.data.classes, &a.c_grid, opts)?;
    std::fs::write(dir.join("svm.json"), serde_json::to_string_pretty(&svm)? + "\n")?;
    let lut = build_lut(&svm, a.bits)?;
    save_lut(&lut, dir.join("lut.slut"))?;
    let report = evaluate(&lut, &split.test)?;
    std::fs::write(dir.join("eval.json"), report.to_json() + "\n")?;
    let text = table_text(&report, None);
    std::fs::write(dir.join("table.txt"), &text)?;
    println!("C = {}", svm.c_reg);
    print!("{text}");
    Ok(())
}

pub fn baseline_segment(a: &BaselineSegmentArgs) -> Result<()> {
    let lut = load_lut(&a.lut)?;
    let m = RunManifest::new("baseline-segment")
        .inputs([a.lut.clone()])
        .inputs(a.images.iter().cloned());
    let dir = m.start(a.out.run_dir.as_deref())?;
    for path in &a.images {
        let mask = lut_segment(&load_image_ppm(path)?, &lut)?;
        let name = stem(path);
        save_mask_pgm(&mask, lut.classes as usize, dir.join(format!("{name}_labels.pgm")))?;
        println!("{name}: {} ball pixels", mask.count(1));
    }
    Ok(())
}

