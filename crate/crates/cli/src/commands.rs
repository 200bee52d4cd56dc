use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use leaflite::analysis;
use leaflite::augment::{AugmentConfig, AugmentDraw};
use leaflite::dataset::{self, Split};
use leaflite::imageproc::{self, ClaheParams, Image};
use leaflite::model::{self, Bundle, BundleManifest, HeadParams, Model};
use leaflite::pipeline;
use leaflite::random::stream;
use leaflite::train::{self, TrainConfig};
use leaflite::weights::WeightStore;

use crate::rundir::RunDir;
use crate::settings::{PathArg, Resolver, Switch};
use crate::{ClaheArgs, Cli, CliError, Command};

struct Ctx<'a> {
    m: &'a ArgMatches,
    r: Resolver,
}

impl Ctx<'_> {
    fn path(&mut self, id: &str, cli: Option<PathArg>) -> Result<PathBuf, CliError> {
        Ok(self.r.get(self.m, id, cli, None)?.0)
    }
}

pub fn run(cli: Cli, matches: &ArgMatches) -> Result<(), CliError> {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let mut r = Resolver::new(cli.config.as_deref())?;
    let runs_root = r.get(matches, "runs_root", cli.runs_root, Some(PathArg("runs".into())))?.0;
    let run_dir = r.opt(matches, "run_dir", cli.run_dir)?.map(|p| p.0);
    let mut ctx = Ctx { m: sub, r };
    let make_run = |ctx: &Ctx| -> Result<RunDir, CliError> {
        let mut run = RunDir::create(&runs_root, run_dir.as_deref(), name)?;
        run.write("config.txt", ctx.r.to_text(name))?;
        run.log(format!("run directory: {}", run.path().display()));
        Ok(run)
    };
    match cli.command {
        Command::Enhance(a) => {
            let input = ctx.path("input", a.input)?;
            let output = ctx.path("output", a.output)?;
            let params = clahe_params(&mut ctx, a.clahe)?;
            let run = make_run(&ctx)?;
            enhance(run, &input, &output, &params)
        }
        Command::Split(a) => {
            let input = ctx.path("input", a.input)?;
            let seed = ctx.r.get(ctx.m, "seed", a.seed, Some(0))?;
            let output = ctx.r.opt(ctx.m, "output", a.output)?.map(|p| p.0);
            let run = make_run(&ctx)?;
            split(run, &input, seed, output.as_deref())
        }
        Command::Train(a) => {
            let manifest = ctx.path("manifest", a.data.manifest)?;
            let data_root = ctx.path("data_root", a.data.data_root)?;
            let weights = ctx.path("weights", a.weights)?;
            let d = TrainConfig::default();
            let cfg = TrainConfig {
                batch_size: ctx.r.get(ctx.m, "batch_size", a.batch_size, Some(d.batch_size))?,
                max_epochs: ctx.r.get(ctx.m, "max_epochs", a.max_epochs, Some(d.max_epochs))?,
                initial_lr: ctx.r.get(ctx.m, "lr", a.lr, Some(d.initial_lr))?,
                min_delta: ctx.r.get(ctx.m, "min_delta", a.min_delta, Some(d.min_delta))?,
                early_stop_patience: ctx.r.get(ctx.m, "patience", a.patience, Some(d.early_stop_patience))?,
                lr_patience: ctx.r.get(ctx.m, "lr_patience", a.lr_patience, Some(d.lr_patience))?,
                lr_factor: ctx.r.get(ctx.m, "lr_factor", a.lr_factor, Some(d.lr_factor))?,
                dropout_rate: ctx.r.get(ctx.m, "dropout", a.dropout, Some(d.dropout_rate))?,
                seed: ctx.r.get(ctx.m, "seed", a.seed, Some(d.seed))?,
            };
            cfg.validate()?;
            let use_clahe = ctx.r.get(ctx.m, "clahe", a.clahe, Some(Switch(true)))?.0;
            let clahe = if use_clahe {
                Some(clahe_params(&mut ctx, a.clahe_params)?)
            } else {
                None
            };
            let aug = augment_config(&mut ctx, a.augment.augment, a.augment.augment_prob)?;
            let run = make_run(&ctx)?;
            train(run, &manifest, &data_root, &weights, cfg, clahe, aug)
        }
        Command::Eval(a) => {
            let bundle = ctx.path("bundle", a.bundle)?;
            let manifest = ctx.path("manifest", a.data.manifest)?;
            let data_root = ctx.path("data_root", a.data.data_root)?;
            let runs = ctx.r.get(ctx.m, "runs", a.runs, Some(100))?;
            let seed = ctx.r.get(ctx.m, "seed", a.seed, Some(0))?;
            let split = ctx.r.get(ctx.m, "split", a.split, Some(Split::Test))?;
            let aug = augment_config(&mut ctx, a.augment.augment, a.augment.augment_prob)?;
            let run = make_run(&ctx)?;
            eval(run, &bundle, &manifest, &data_root, runs, seed, split, aug)
        }
        Command::Infer(a) => {
            let bundle = ctx.path("bundle", a.bundle)?;
            let image = ctx.path("image", a.image)?;
            let run = make_run(&ctx)?;
            infer(run, &bundle, &image)
        }
        Command::Analyze(a) => {
            let bundle = ctx.path("bundle", a.bundle)?;
            let run = make_run(&ctx)?;
            analyze(run, &bundle)
        }
        Command::Gradcam(a) => {
            let bundle = ctx.path("bundle", a.bundle)?;
            let image = ctx.path("image", a.image)?;
            let class = ctx.r.opt(ctx.m, "class", a.class)?;
            let alpha = ctx.r.get(ctx.m, "alpha", a.alpha, Some(0.4))?;
            if !(0.0..=1.0).contains(&alpha) {
                return Err(CliError::Usage(format!("alpha {alpha} outside [0, 1]")));
            }
            let run = make_run(&ctx)?;
            gradcam(run, &bundle, &image, class, alpha)
        }
        Command::AugmentPreview(a) => {
            let image = ctx.path("image", a.image)?;
            let count = ctx.r.get(ctx.m, "count", a.count, Some(8))?;
            let seed = ctx.r.get(ctx.m, "seed", a.seed, Some(0))?;
            let aug = augment_params(&mut ctx, a.augment_prob)?;
            let run = make_run(&ctx)?;
            augment_preview(run, &image, count, seed, &aug)
        }
        Command::InitWeights(a) => {
            let output = ctx.path("output", a.output)?;
            let seed = ctx.r.get(ctx.m, "seed", a.seed, Some(0))?;
            let mut run = make_run(&ctx)?;
            let graph = model::build_mobilenet_v2();
            let store = model::init_backbone_weights(&graph, seed);
            store.save(&output)?;
            run.log(format!(
                "wrote {} tensors ({} scalars) to {}",
                store.len(),
                store.scalar_count(),
                output.display()
            ));
            Ok(())
        }
        Command::CheckParity(a) => {
            let weights = ctx.path("weights", a.weights)?;
            let golden = ctx.path("golden", a.golden)?;
            let max_abs = ctx.r.get(ctx.m, "max_abs", a.max_abs, Some(1e-3))?;
            let mean_abs = ctx.r.get(ctx.m, "mean_abs", a.mean_abs, Some(1e-4))?;
            let run = make_run(&ctx)?;
            check_parity(run, &weights, &golden, max_abs, mean_abs)
        }
    }
}

fn clahe_params(ctx: &mut Ctx, a: ClaheArgs) -> Result<ClaheParams, CliError> {
    let d = ClaheParams::default();
    let tiles = ctx.r.get(ctx.m, "clahe_tiles", a.clahe_tiles, Some(d.tiles_x))?;
    let p = ClaheParams {
        tiles_x: tiles,
        tiles_y: tiles,
        clip_beta: ctx.r.get(ctx.m, "clahe_clip", a.clahe_clip, Some(d.clip_beta))?,
        bins: ctx.r.get(ctx.m, "clahe_bins", a.clahe_bins, Some(d.bins))?,
    };
    p.validate()?;
    Ok(p)
}

fn augment_config(ctx: &mut Ctx, on: Option<Switch>, prob: Option<f64>) -> Result<AugmentConfig, CliError> {
    let on = ctx.r.get(ctx.m, "augment", on, Some(Switch(true)))?.0;
    if !on {
        return Ok(AugmentConfig::disabled());
    }
    augment_params(ctx, prob)
}

fn augment_params(ctx: &mut Ctx, prob: Option<f64>) -> Result<AugmentConfig, CliError> {
    let cfg = AugmentConfig {
        probability: ctx.r.get(ctx.m, "augment_prob", prob, Some(0.5))?,
        ..AugmentConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn enhance(mut run: RunDir, input: &Path, output: &Path, params: &ClaheParams) -> Result<(), CliError> {
    if fs::canonicalize(input).ok() == fs::canonicalize(output).ok() {
        return Err(CliError::Usage("output must differ from input".into()));
    }
    let report = dataset::scan_dataset(input)?;
    let index = &report.index;
    let mut failures: Vec<(PathBuf, String)> =
        report.warnings.iter().map(|w| (w.path.clone(), w.reason.clone())).collect();
    let mut written = 0;
    for entry in index.entries() {
        let src = index.absolute(entry);
        let dst = output.join(&entry.path).with_extension("png");
        let result = (|| -> leaflite::Result<()> {
            let img = imageproc::clahe(&Image::load(&src)?, params)?;
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| leaflite::Error::Io {
                    path: parent.to_path_buf(),
                    source: e,
                })?;
            }
            img.save_png(&dst)
        })();
        match result {
            Ok(()) => written += 1,
            Err(e) => failures.push((src, e.to_string())),
        }
    }
    let mut summary = format!("images={}\nwritten={written}\nfailures={}\n", index.len(), failures.len());
    for (p, why) in &failures {
        let _ = writeln!(summary, "failed\t{}\t{why}", p.display());
    }
    run.write("summary.txt", &summary)?;
    run.log(format!("enhanced {written} of {} images into {}", index.len(), output.display()));
    if failures.is_empty() {
        Ok(())
    } else {
        Err(leaflite::Error::Dataset(format!("{} images failed; see summary.txt", failures.len())).into())
    }
}

fn split(mut run: RunDir, input: &Path, seed: u64, output: Option<&Path>) -> Result<(), CliError> {
    let report = dataset::scan_dataset(input)?;
    for w in &report.warnings {
        run.log(format!("skipped {}: {}", w.path.display(), w.reason));
    }
    let index = &report.index;
    let assignment = dataset::split(index, seed)?;
    let text = dataset::manifest_text(index, &assignment)?;
    let path = run.write("manifest.tsv", &text)?;
    if let Some(out) = output {
        fs::write(out, &text).map_err(|e| leaflite::Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?;
    }
    let mut table = String::from("class\ttotal\tTRAIN\tVAL\tTEST\n");
    for (c, name) in index.class_names().iter().enumerate() {
        let count = |s: Split| {
            assignment
                .members(index, s)
                .iter()
                .filter(|e| e.class_id == c)
                .count()
        };
        let _ = writeln!(
            table,
            "{name}\t{}\t{}\t{}\t{}",
            index.class_counts()[c],
            count(Split::Train),
            count(Split::Val),
            count(Split::Test)
        );
    }
    run.write("distribution.tsv", &table)?;
    print!("{table}");
    run.log(format!("{} images in {} classes; manifest {}", index.len(), index.class_names().len(), path.display()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    mut run: RunDir,
    manifest: &Path,
    data_root: &Path,
    weights: &Path,
    cfg: TrainConfig,
    clahe: Option<ClaheParams>,
    aug: AugmentConfig,
) -> Result<(), CliError> {
    let (index, assignment) = dataset::read_manifest(manifest, data_root)?;
    let backbone = WeightStore::load(weights)?;
    let bundle_manifest = BundleManifest {
        class_names: index.class_names().to_vec(),
        input_side: model::INPUT_SIDE,
        clahe,
        dropout_rate: cfg.dropout_rate,
    };
    let graph = model::build_mobilenet_v2_with(model::INPUT_SIDE, index.class_names().len());
    let head = HeadParams::init(&graph.head, cfg.dropout_rate, cfg.seed)?;
    let model = Model::new(bundle_manifest.clone(), &backbone, head.clone())?;
    let mut source = pipeline::ImageFeatures::new(&model, &index, &assignment, aug, cfg.seed);
    let outcome = train::train_head_with(head, &mut source, &cfg, &mut |r| {
        run.log(format!(
            "epoch {:>4}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.1e}{}{}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.val_loss,
            r.val_acc,
            r.lr,
            if r.patient { "  patient" } else { "" },
            if r.checkpoint { "  checkpoint" } else { "" }
        ))
    })?;
    outcome.history.write_csv(&run.join("history.csv"))?;
    let bundle_dir = run.join("bundle");
    Bundle {
        manifest: bundle_manifest,
        backbone,
        head: outcome.best,
    }
    .save(&bundle_dir)?;
    run.log(format!(
        "best epoch {} of {}; bundle {}",
        outcome.best_epoch,
        outcome.history.records.len(),
        bundle_dir.display()
    ));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    mut run: RunDir,
    bundle: &Path,
    manifest: &Path,
    data_root: &Path,
    runs: usize,
    seed: u64,
    split: Split,
    aug: AugmentConfig,
) -> Result<(), CliError> {
    let model = Model::load(bundle)?;
    let (index, assignment) = dataset::read_manifest(manifest, data_root)?;
    if index.class_names() != model.manifest.class_names.as_slice() {
        return Err(leaflite::Error::Dataset(format!(
            "manifest classes {:?} differ from bundle classes {:?}",
            index.class_names(),
            model.manifest.class_names
        ))
        .into());
    }
    let report = pipeline::evaluate_split(&model, &index, &assignment, split, &aug, runs, seed)?;
    run.write("report.txt", report.to_text())?;
    run.write("roc.csv", report.roc_csv())?;
    let mut runs_csv = String::from("run,accuracy\n");
    for (i, a) in report.runs.accuracies.iter().enumerate() {
        let _ = writeln!(runs_csv, "{i},{a:.6}");
    }
    run.write("runs.csv", runs_csv)?;
    print!("{}", report.to_text());
    run.log(format!(
        "{runs} runs on {split}: mean {:.4}% std {:.5} macro F1 {:.4}",
        report.runs.mean, report.runs.std, report.macro_f1
    ));
    Ok(())
}

fn infer(mut run: RunDir, bundle: &Path, image: &Path) -> Result<(), CliError> {
    let model = Model::load(bundle)?;
    let p = model::predict(image, &model)?;
    let mut text = format!("class_id={}\nclass_name={}\n", p.class_id, p.class_name);
    for (i, (name, prob)) in model.manifest.class_names.iter().zip(&p.probabilities).enumerate() {
        let _ = writeln!(text, "p.{i}={prob:.6}\t{name}");
    }
    run.write("prediction.txt", &text)?;
    println!("{} ({})", dataset::display_name(&p.class_name), p.class_id);
    for (name, prob) in model.manifest.class_names.iter().zip(&p.probabilities) {
        println!("{prob:.6}\t{name}");
    }
    run.log(format!("{} -> {}", image.display(), p.class_name));
    Ok(())
}

fn analyze(mut run: RunDir, bundle: &Path) -> Result<(), CliError> {
    let model = Model::load(bundle)?;
    let mut report = analysis::parameter_count(model.graph(), &model.head.spec());
    report.size_bytes = Some(analysis::model_size(bundle)?);
    run.write("cost.txt", report.to_text())?;
    run.write("cost.csv", report.to_csv())?;
    print!("{}", report.to_text());
    run.log(format!(
        "size {:.2} MB, {:.2} MFLOPs (2 x params), {:.1} M MACs",
        report.size_mb().unwrap_or(0.0),
        report.mflops_paper(),
        report.total_macs() as f64 / 1e6
    ));
    Ok(())
}

fn gradcam(mut run: RunDir, bundle: &Path, image: &Path, class: Option<usize>, alpha: f32) -> Result<(), CliError> {
    let model = Model::load(bundle)?;
    let img = model.enhance(&Image::load(image)?)?;
    let class_id = match class {
        Some(c) => c,
        None => model::predict(image, &model)?.class_id,
    };
    let heat = analysis::gradcam(&model, &img, class_id)?;
    analysis::heatmap_image(&heat).save_png(&run.join("heatmap.png"))?;
    analysis::overlay(&img, &heat, alpha).save_png(&run.join("overlay.png"))?;
    let mut coarse = String::new();
    for row in heat.coarse.chunks(heat.map_side) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(coarse, "{}", cells.join(","));
    }
    run.write("cam.csv", coarse)?;
    run.log(format!(
        "GradCAM for class {class_id} ({}) written to {}",
        model.manifest.class_names[class_id],
        run.path().display()
    ));
    Ok(())
}

fn augment_preview(mut run: RunDir, image: &Path, count: usize, seed: u64, aug: &AugmentConfig) -> Result<(), CliError> {
    let img = Image::load(image)?;
    let mut draws = String::from("index,width_shift,height_shift,rotation,shear,hflip\n");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for i in 0..count {
        let draw = AugmentDraw::sample(aug, &mut stream(seed, &[i as u64]));
        draw.apply(&img).save_png(&run.join(&format!("augmented_{i:03}.png")))?;
        let _ = writeln!(
            draws,
            "{i},{},{},{},{},{}",
            fmt(draw.width_shift),
            fmt(draw.height_shift),
            fmt(draw.rotation_degrees),
            fmt(draw.shear),
            draw.hflip
        );
    }
    run.write("draws.csv", draws)?;
    run.log(format!("wrote {count} variants"));
    Ok(())
}

fn check_parity(mut run: RunDir, weights: &Path, golden: &Path, max_abs: f64, mean_abs: f64) -> Result<(), CliError> {
    let graph = model::build_mobilenet_v2();
    let backbone = model::Backbone::new(&graph, &WeightStore::load(weights)?)?;
    let report = model::check_parity(&backbone, &WeightStore::load(golden)?)?;
    let mut text = String::from("fixture,max_abs,mean_abs\n");
    for f in &report.fixtures {
        let _ = writeln!(text, "{},{:.3e},{:.3e}", f.index, f.max_abs, f.mean_abs);
    }
    run.write("parity.csv", &text)?;
    print!("{text}");
    let ok = report.passes(max_abs, mean_abs);
    run.log(format!(
        "{} fixtures: max {:.3e}, mean {:.3e} -> {}",
        report.fixtures.len(),
        report.max_abs(),
        report.mean_abs(),
        if ok { "PASS" } else { "FAIL" }
    ));
    if ok {
        Ok(())
    } else {
        Err(leaflite::Error::Numeric("golden parity outside tolerance".into()).into())
    }
}
