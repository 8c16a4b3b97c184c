//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use foilgen::aero::{classify, AeroLabel, ClassGrid, PerformanceClass};
use foilgen::autoencoder::AutoEncoder;
use foilgen::diffusion::DiffusionModel;
use foilgen::geometry::io::read_profile_csv;
use foilgen::geometry::{Point2, Profile};
use foilgen::pipeline::{
    accuracy_csv, ae_samples, augment, build_dataset, compare_inits, embed, generate, init_registry, load_rvq,
    plot_svg, read_dataset, read_manifest, reconstruction_report, run_conditional_eval, save_rvq, scatter_csv,
    train_autoencoder, train_diffusion, train_rvq, validate_dataset, write_dataset, Dataset, DatasetRecord, Figure,
    InitContext, InitStrategy, InitSummary, PipelineConfig, ScatterPoint, Series, Split,
};
use foilgen::rng::{stream, Rng};
use foilgen::{Error, Result};

use crate::layout::Layout;
use crate::{AugmentArgs, Cli, Command, DataArgs, EvalArgs, OptimizeArgs, PlotArgs, PlotInput, SampleArgs};

/// Independent random stream of each stage under the run seed.
mod stage {
    pub const AUGMENT: u64 = 1;
    pub const RVQ: u64 = 2;
    pub const AE: u64 = 3;
    pub const DIFFUSION: u64 = 4;
    pub const GENERATE: u64 = 5;
    pub const EVALUATE: u64 = 6;
    pub const OPTIMIZE: u64 = 7;
}

/// Diffusion losses are averaged over windows of this many iterations.
const LOSS_WINDOW: usize = 100;
/// Profiles drawn in the sample overview figure.
const PLOTTED_SAMPLES: usize = 8;

struct Ctx {
    cfg: PipelineConfig,
    layout: Layout,
}

impl Ctx {
    fn rng(&self, stage: u64) -> Rng {
        stream(self.cfg.seed, stage)
    }

    fn dataset(&self, args: &DataArgs) -> Result<Dataset> {
        read_dataset(&self.layout.dataset(args.dataset.as_deref()))
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        write_file(&self.layout.file(name), text)
    }

    fn load_ae(&self) -> Result<AutoEncoder> {
        let (c, s) = self.layout.model("ae");
        AutoEncoder::load(&c, &s)
    }

    fn load_diffusion(&self) -> Result<DiffusionModel> {
        let (c, s) = self.layout.model("diffusion");
        DiffusionModel::load(&c, &s)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Explicit `--config`, else the config saved by `build-dataset`, else the
/// desk preset.
fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let saved = cli.out_dir.join("config.toml");
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None if saved.exists() => PipelineConfig::load(&saved)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.check()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ckpt = match &cli.command {
        Command::Generate(a) => a.checkpoint.as_deref(),
        Command::Evaluate(a) => a.checkpoint.as_deref(),
        Command::Optimize(a) => a.checkpoint.as_deref(),
        _ => None,
    };
    let ctx = Ctx {
        layout: Layout::new(&cli.out_dir, ckpt),
        cfg,
    };
    fs::create_dir_all(&ctx.layout.out).map_err(|e| Error::io(&ctx.layout.out, e))?;
    match &cli.command {
        Command::BuildDataset => cmd_build(&ctx),
        Command::Augment(a) => cmd_augment(&ctx, a),
        Command::TrainRvq(a) => cmd_train_rvq(&ctx, a),
        Command::TrainAe(a) => cmd_train_ae(&ctx, a),
        Command::TrainDiffusion(a) => cmd_train_diffusion(&ctx, a),
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Optimize(a) => cmd_optimize(&ctx, a),
        Command::Plot(a) => cmd_plot(a),
        Command::Validate(a) => cmd_validate(&ctx, a),
    }
}

fn summarize(ds: &Dataset) -> String {
    let c = &ds.manifest.counts;
    let mut s = format!("{} records", c.total);
    for (k, v) in &c.by_split {
        let _ = write!(s, ", {k:?} {v}");
    }
    let _ = write!(s, "; {} classes populated", c.by_class.len());
    for (k, v) in &ds.manifest.discarded {
        let _ = write!(s, "; discarded {v} ({k})");
    }
    s
}

fn cmd_build(ctx: &Ctx) -> Result<()> {
    let ds = build_dataset(&ctx.cfg.dataset, ctx.cfg.seed)?;
    let dir = ctx.layout.dataset(None);
    write_dataset(&dir, &ds)?;
    ctx.write("config.toml", &ctx.cfg.to_toml())?;
    println!("dataset: {} -> {}", summarize(&ds), dir.display());
    Ok(())
}

fn cmd_augment(ctx: &Ctx, a: &AugmentArgs) -> Result<()> {
    let base = ctx.dataset(&a.data)?;
    let mut cfg = ctx.cfg.augment.clone();
    if let Some(f) = a.factor {
        cfg.factor = f;
    }
    let ds = augment(&base, &cfg, &mut ctx.rng(stage::AUGMENT))?;
    let dir = a.output.clone().unwrap_or_else(|| ctx.layout.file("dataset-augmented"));
    write_dataset(&dir, &ds)?;
    println!("augmented: {} -> {}", summarize(&ds), dir.display());
    Ok(())
}

fn split_refs(ds: &Dataset, s: Split) -> Vec<&DatasetRecord> {
    ds.split(s).collect()
}

fn cmd_train_rvq(ctx: &Ctx, a: &DataArgs) -> Result<()> {
    let ds = ctx.dataset(a)?;
    let train = split_refs(&ds, Split::Train);
    let mut csv = String::from("epoch,recon,codebook,total\n");
    let model = train_rvq(&ctx.cfg.rvq, &train, &mut ctx.rng(stage::RVQ), |e, l| {
        let _ = writeln!(csv, "{},{:.9e},{:.9e},{:.9e}", e + 1, l.recon, l.codebook, l.total);
        eprintln!(
            "rvq epoch {:>3}: recon {:.4e} codebook {:.4e}",
            e + 1,
            l.recon,
            l.codebook
        );
    })?;
    let (c, s) = ctx.layout.saved_model("rvq");
    save_rvq(&model, &c, &s)?;
    ctx.write("rvq_loss.csv", &csv)?;
    println!("rvq: saved {}", c.display());
    Ok(())
}

fn cmd_train_ae(ctx: &Ctx, a: &DataArgs) -> Result<()> {
    let ds = ctx.dataset(a)?;
    let (rc, rs) = ctx.layout.model("rvq");
    let rvq = load_rvq(&rc, &rs)?;
    let train = ae_samples(&rvq, &split_refs(&ds, Split::Train))?;
    let val = ae_samples(&rvq, &split_refs(&ds, Split::Val))?;
    let m = &ds.manifest;
    let mut csv = String::from("epoch,train_ce,train_mse,train_total,val_ce,val_mse,val_total\n");
    let ae = train_autoencoder(
        &ctx.cfg.ae,
        &train,
        &val,
        rvq.config.d_code,
        m.profile_len,
        m.delta_x,
        &mut ctx.rng(stage::AE),
        |log| {
            let v = log.val.unwrap_or_default();
            let t = log.train;
            let _ = writeln!(
                csv,
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                log.epoch, t.ce, t.mse, t.total, v.ce, v.mse, v.total
            );
            eprintln!("ae epoch {:>3}: train {:.4e} val {:.4e}", log.epoch, t.total, v.total);
        },
    )?;
    let (c, s) = ctx.layout.saved_model("ae");
    ae.save(&c, &s)?;
    ctx.write("ae_loss.csv", &csv)?;
    println!("ae: saved {}", c.display());
    Ok(())
}

fn cmd_train_diffusion(ctx: &Ctx, a: &DataArgs) -> Result<()> {
    let ds = ctx.dataset(a)?;
    let classes = ds.manifest.grid.num_classes();
    if ctx.cfg.diffusion.denoiser.classes != classes {
        return Err(Error::Config(format!(
            "denoiser has {} classes but the dataset grid has {classes}",
            ctx.cfg.diffusion.denoiser.classes
        )));
    }
    let (rc, rs) = ctx.layout.model("rvq");
    let rvq = load_rvq(&rc, &rs)?;
    let ae = ctx.load_ae()?;
    let train = split_refs(&ds, Split::Train);
    let z = embed(&ae, &ae_samples(&rvq, &train)?)?;
    let labels: Vec<PerformanceClass> = train.iter().map(|r| PerformanceClass::Id(r.class_id)).collect();
    let mut csv = String::from("iteration,loss\n");
    let total = ctx.cfg.diffusion.train.iterations;
    let (mut acc, mut n) = (0.0, 0);
    let dm = train_diffusion(
        &ctx.cfg.diffusion,
        &z,
        &labels,
        &mut ctx.rng(stage::DIFFUSION),
        |it, loss| {
            acc += loss;
            n += 1;
            if (it + 1) % LOSS_WINDOW == 0 || it + 1 == total {
                let mean = acc / n as f64;
                let _ = writeln!(csv, "{},{mean:.9e}", it + 1);
                if (it + 1) % (10 * LOSS_WINDOW) == 0 {
                    eprintln!("diffusion iteration {:>6}: loss {mean:.4e}", it + 1);
                }
                (acc, n) = (0.0, 0);
            }
        },
    )?;
    let (c, s) = ctx.layout.saved_model("diffusion");
    dm.save(&c, &s)?;
    ctx.write("diffusion_loss.csv", &csv)?;
    println!("diffusion: saved {}", c.display());
    Ok(())
}

fn parse_classes(spec: &str, grid: &ClassGrid) -> Result<Vec<PerformanceClass>> {
    match spec.trim() {
        "all" => Ok((0..grid.num_classes()).map(PerformanceClass::Id).collect()),
        s => s
            .split(',')
            .map(|c| match c.trim() {
                "null" => Ok(PerformanceClass::Null),
                c => match c.parse::<usize>() {
                    Ok(k) if k < grid.num_classes() => Ok(PerformanceClass::Id(k)),
                    _ => Err(Error::Config(format!(
                        "class `{c}` is not `null` or an id below {}",
                        grid.num_classes()
                    ))),
                },
            })
            .collect(),
    }
}

fn cmd_generate(ctx: &Ctx, a: &SampleArgs) -> Result<()> {
    let ae = ctx.load_ae()?;
    let dm = ctx.load_diffusion()?;
    let grid = read_manifest(&ctx.layout.dataset(a.data.dataset.as_deref()))?.grid;
    let classes = parse_classes(&a.classes, &grid)?;
    let omega = a.omega.unwrap_or(ctx.cfg.eval.omega);
    let mut rng = ctx.rng(stage::GENERATE);
    let mut lines = String::new();
    let mut plotted: Vec<(String, Profile)> = Vec::new();
    for class in classes {
        let gen = generate(&ae, &dm, class, omega, a.count, &mut rng)?;
        let hits = gen.iter().filter(|g| classify(g.label, &grid) == class).count();
        let name = class.class_id().map_or("null".to_string(), |k| k.to_string());
        println!("class {name}: {} samples, {hits} in class", gen.len());
        for (i, g) in gen.iter().enumerate() {
            lines.push_str(&serde_json::to_string(g)?);
            lines.push('\n');
            if i == 0 && plotted.len() < PLOTTED_SAMPLES {
                plotted.push((format!("class {name}"), g.profile()?));
            }
        }
    }
    ctx.write("samples/samples.jsonl", &lines)?;
    if !plotted.is_empty() {
        let fig = Figure::profiles("generated samples", plotted.iter().map(|(n, p)| (n.clone(), p)));
        plot_svg(&fig, &ctx.layout.file("samples/profiles.svg"))?;
    }
    println!("generate: wrote {}", ctx.layout.file("samples").display());
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let ds = ctx.dataset(&a.data)?;
    let (rc, rs) = ctx.layout.model("rvq");
    let rvq = load_rvq(&rc, &rs)?;
    let ae = ctx.load_ae()?;
    let dm = ctx.load_diffusion()?;
    let eval = &ctx.cfg.eval;

    let mut test = split_refs(&ds, Split::Test);
    if eval.reconstruct > 0 {
        test.truncate(eval.reconstruct);
    }
    if !test.is_empty() {
        let recon = reconstruction_report(&ae, &ae_samples(&rvq, &test)?, &test)?;
        ctx.write("eval/reconstruction.json", &serde_json::to_string_pretty(&recon)?)?;
        println!(
            "reconstruction: {} test records, mean ChD {:.3e}, median {:.3e}, max {:.3e}, mean HD {:.3e}",
            recon.count, recon.mean_chamfer, recon.median_chamfer, recon.max_chamfer, recon.mean_hausdorff
        );
    }

    let per_class = a.count.unwrap_or(eval.per_class);
    let omega = a.omega.unwrap_or(eval.omega);
    let mut rng = ctx.rng(stage::EVALUATE);
    let mut reports = Vec::new();
    for w in [eval.baseline_omega, omega] {
        let r = run_conditional_eval(&ae, &dm, &ds.manifest.grid, per_class, w, &mut rng)?;
        println!(
            "conditional omega {w}: mean accuracy {:.2}%, worst {:.2}%",
            100.0 * r.mean,
            100.0 * r.worst
        );
        ctx.write(&format!("eval/scatter_omega{w}.csv"), &scatter_csv(&r))?;
        plot_svg(
            &Figure::conditional(&r, &ds.manifest.grid),
            &ctx.layout.file(&format!("eval/scatter_omega{w}.svg")),
        )?;
        reports.push(r);
    }
    ctx.write("eval/accuracy.csv", &accuracy_csv(&reports.iter().collect::<Vec<_>>()))?;
    ctx.write("eval/conditional.json", &serde_json::to_string_pretty(&reports)?)?;
    println!("evaluate: wrote {}", ctx.layout.file("eval").display());
    Ok(())
}

/// `n` test labels spread evenly over the test split.
fn pick_targets(ds: &Dataset, n: usize) -> Result<Vec<AeroLabel>> {
    let test = split_refs(ds, Split::Test);
    if test.is_empty() || n == 0 {
        return Err(Error::domain("no test records to take targets from"));
    }
    Ok((0..n).map(|i| test[i * test.len() / n % test.len()].label).collect())
}

fn cmd_optimize(ctx: &Ctx, a: &OptimizeArgs) -> Result<()> {
    let ds = ctx.dataset(&a.data)?;
    let cfg = &ctx.cfg.optimize;
    let needs_models = a.init.iter().any(|s| s == "generated");
    let ae = needs_models.then(|| ctx.load_ae()).transpose()?;
    let dm = needs_models.then(|| ctx.load_diffusion()).transpose()?;
    let init_ctx = InitContext {
        ae: ae.as_ref(),
        diffusion: dm.as_ref(),
        grid: &ds.manifest.grid,
        omega: cfg.omega,
        delta_x: ds.manifest.delta_x,
        th: ds.thresholds(),
    };
    let registry = init_registry();
    let strategies: Vec<Box<dyn InitStrategy + '_>> = a
        .init
        .iter()
        .map(|n| (registry.get(n)?)(&init_ctx))
        .collect::<Result<_>>()?;
    let refs: Vec<&dyn InitStrategy> = strategies.iter().map(|s| s.as_ref()).collect();
    let targets = pick_targets(&ds, a.targets.unwrap_or(cfg.targets))?;
    let results = compare_inits(
        &targets,
        &refs,
        cfg,
        ds.manifest.delta_x,
        &init_ctx.th,
        ctx.cfg.seed ^ stage::OPTIMIZE,
    )?;
    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    let summaries: Vec<InitSummary> = a.init.iter().map(|n| InitSummary::of(n, &results)).collect();
    for s in &summaries {
        println!(
            "init {}: success {:.1}% over {} targets, median iterations {}",
            s.init,
            100.0 * s.success_rate,
            s.runs,
            s.median_iterations
        );
    }
    ctx.write("optimize/results.jsonl", &lines)?;
    ctx.write("optimize/summary.json", &serde_json::to_string_pretty(&summaries)?)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_scatter(text: &str) -> Result<Vec<ScatterPoint>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("bad scatter row `{l}`"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(ScatterPoint {
                target: f[0].parse().map_err(|_| bad())?,
                cl: f[1].parse().map_err(|_| bad())?,
                cd: f[2].parse().map_err(|_| bad())?,
                hit: f[3] == "1",
            })
        })
        .collect()
}

/// First column is x; every other numeric column becomes a series.
fn parse_curves(text: &str) -> Result<Vec<Series>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let mut series: Vec<Series> = header.iter().skip(1).map(|h| Series::new(*h, Vec::new())).collect();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        let x: f64 = f[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad curve row `{l}`")))?;
        for (s, v) in series.iter_mut().zip(f.iter().skip(1)) {
            if let Ok(y) = v.parse::<f64>() {
                s.points.push(Point2::new(x, y));
            }
        }
    }
    series.retain(|s| !s.points.is_empty());
    Ok(series)
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let out = a.output.clone().unwrap_or_else(|| a.input.with_extension("svg"));
    let title = a
        .input
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let fig = match a.kind {
        PlotInput::Profile => {
            let p = read_profile_csv(&a.input)?;
            Figure::profiles(&title, [(title.clone(), &p)])
        }
        PlotInput::Scatter => Figure::class_scatter(&title, &parse_scatter(&read_text(&a.input)?)?, None),
        PlotInput::Curves => {
            let series = parse_curves(&read_text(&a.input)?)?;
            let log_y = series.iter().flat_map(|s| &s.points).all(|p| p.y > 0.0);
            Figure::curves(&title, "step", "value", series, log_y)
        }
    };
    plot_svg(&fig, &out)?;
    println!("plot: wrote {}", out.display());
    Ok(())
}

fn cmd_validate(ctx: &Ctx, a: &DataArgs) -> Result<()> {
    let ds = ctx.dataset(a)?;
    let report = validate_dataset(&ds);
    for (id, why) in report.failures.iter().take(20) {
        eprintln!("{id}: {why}");
    }
    if report.is_ok() {
        println!("validate: {} records ok", report.checked);
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{} of {} records failed",
            report.failures.len(),
            report.checked
        )))
    }
}
