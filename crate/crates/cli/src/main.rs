//! Operator entry points for the scattered point cloud pipeline.
//!
//! Exit codes: 0 success, 2 usage or invalid configuration, 3 I/O failure,
//! 4 numeric failure during training or evaluation.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scatterhsd::corpus::{
    gen_shape, gen_split, load_cloud, save_ply, save_xyz, write_manifest, Format, ManifestEntry,
    ShapeSpec,
};
use scatterhsd::scatter::{multi_view, ScatterConfig};
use scatterhsd::trainer::{
    ablate, evaluate, logs, prepare_objects, train, AblationConfig, Model,
};
use scatterhsd::{Error, PointCloud};

use settings::Settings;

#[derive(Parser)]
#[command(name = "scatterhsd", version, about = "Scattered point cloud completion and understanding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of key=value lines (optionally under [sections]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. --set train.gamma=1.0 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> scatterhsd::Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.load_file(path)?;
        }
        s.apply_overrides(&self.overrides)?;
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural corpus: cloud files plus a manifest CSV.
    GenCorpus {
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Points per generated cloud.
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scatter a dense cloud file into sparse views.
    Scatter {
        /// Input cloud (xyz, ply, or off by extension).
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        seeds: usize,
        #[arg(long)]
        neighbors: usize,
        #[arg(long, default_value_t = 1)]
        views: usize,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the joint completion + understanding model.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory for logs and the checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Convenience override for train.gamma.
        #[arg(long)]
        gamma: Option<f64>,
        /// Convenience override for train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Convenience override for train.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Export the first few reconstructions (xyz + ply) here.
        #[arg(long)]
        dump_recon: Option<PathBuf>,
    },
    /// Run the regularization ablation suite over several seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of seeds (0, 1, ...) per configuration.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a training epochs CSV into the three information-plane panels.
    InfoPlane {
        /// epochs.csv produced by `train`.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::Shape(_) => 2,
        Error::Io(_) => 3,
        Error::Numerics(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn run(cli: Cli) -> scatterhsd::Result<()> {
    match cli.command {
        Command::GenCorpus {
            classes,
            per_class,
            seed,
            points,
            out,
        } => gen_corpus(classes, per_class, seed, points, &out),
        Command::Scatter {
            input,
            seeds,
            neighbors,
            views,
            rng_seed,
            out,
        } => scatter_cmd(&input, seeds, neighbors, views, rng_seed, &out),
        Command::Train {
            config,
            out,
            gamma,
            epochs,
            seed,
        } => {
            let mut s = config.build()?;
            if let Some(g) = gamma {
                s.apply("train.gamma", &g.to_string())?;
            }
            if let Some(e) = epochs {
                s.apply("train.epochs", &e.to_string())?;
            }
            if let Some(v) = seed {
                s.apply("train.seed", &v.to_string())?;
            }
            train_cmd(&s, &out)
        }
        Command::Eval {
            config,
            checkpoint,
            dump_recon,
        } => {
            let s = config.build()?;
            eval_cmd(&s, &checkpoint, dump_recon.as_deref())
        }
        Command::Ablate { config, seeds, out } => {
            let s = config.build()?;
            ablate_cmd(&s, seeds, &out)
        }
        Command::InfoPlane { log, out_dir } => {
            let traces = logs::read_epochs_csv(&log)?;
            logs::write_infoplane_panels(&traces, &out_dir)?;
            println!(
                "wrote info_plane.csv, kl_gaps.csv, cross_entropy.csv to {}",
                out_dir.display()
            );
            Ok(())
        }
    }
}

fn gen_corpus(classes: usize, per_class: usize, seed: u64, points: usize, out: &Path) -> scatterhsd::Result<()> {
    let split = gen_split(classes, per_class, seed)?;
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    let mut write_specs = |specs: &[ShapeSpec], split_name: &str| -> scatterhsd::Result<()> {
        for spec in specs {
            let cloud = gen_shape(spec, points)?;
            let file = format!("{}_{:016x}.xyz", spec.class.name(), spec.rng_seed);
            save_xyz(&cloud, &out.join(&file))?;
            entries.push(ManifestEntry {
                class_id: spec.class.class_id(),
                class_name: spec.class.name().to_string(),
                rng_seed: spec.rng_seed,
                split: split_name.to_string(),
                path: file,
            });
        }
        Ok(())
    };
    write_specs(&split.train, "train")?;
    write_specs(&split.test, "test")?;
    write_manifest(&entries, &out.join("manifest.csv"))?;
    println!(
        "wrote {} clouds ({} train, {} test) and manifest.csv to {}",
        entries.len(),
        split.train.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

fn scatter_cmd(
    input: &Path,
    seeds: usize,
    neighbors: usize,
    views: usize,
    rng_seed: u64,
    out: &Path,
) -> scatterhsd::Result<()> {
    let format = Format::from_path(input)?;
    let dense = load_cloud(input, format)?;
    let cfg = ScatterConfig::new(seeds, neighbors, dense.len(), rng_seed)?;
    let clouds = multi_view(&dense, &cfg, views)?;
    std::fs::create_dir_all(out)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cloud");
    for (v, cloud) in clouds.iter().enumerate() {
        save_xyz(cloud, &out.join(format!("{stem}_{seeds}x{neighbors}_view{v}.xyz")))?;
    }
    println!(
        "wrote {views} views of {} points each to {}",
        seeds * neighbors,
        out.display()
    );
    Ok(())
}

fn train_cmd(s: &Settings, out: &Path) -> scatterhsd::Result<()> {
    print!("{}", s.dump());
    let cfg = s.train_config()?;
    let scatter = s.scatter_config()?;
    let split = s.split()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("effective_config.txt"), s.dump())?;
    let objects = prepare_objects(&split.train, &scatter, cfg.views, cfg.upstream.target_points)?;
    let mut model = Model::build(&cfg)?;
    let outcome = train(&mut model, &objects, &cfg, Some(out))?;
    println!("trained {} steps; checkpoint sha256 {}", outcome.steps.len(), outcome.checkpoint_hash);
    let report = evaluate(&model, &split.test, &scatter, &cfg)?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &scatterhsd::trainer::EvalReport) {
    if let (Some(oa), Some(macc)) = (report.oa, report.macc) {
        println!("OA {:.2}%  mAcc {:.2}%  CD(x1000) {:.3}", oa * 100.0, macc * 100.0, report.cd_x1000);
        for (l, (loa, lmacc)) in report
            .per_level_oa
            .iter()
            .zip(&report.per_level_macc)
            .enumerate()
        {
            println!("  level {}: OA {:.2}%  mAcc {:.2}%", l + 1, loa * 100.0, lmacc * 100.0);
        }
    }
    if let (Some(miou), Some(ciou)) = (report.miou, report.ciou) {
        println!(
            "mIOU {:.2}%  cIOU {:.2}%  CD(x1000) {:.3}",
            miou * 100.0,
            ciou * 100.0,
            report.cd_x1000
        );
    }
}

fn eval_cmd(s: &Settings, checkpoint: &Path, dump_recon: Option<&Path>) -> scatterhsd::Result<()> {
    print!("{}", s.dump());
    let cfg = s.train_config()?;
    let scatter = s.scatter_config()?;
    let split = s.split()?;
    let mut model = Model::build(&cfg)?;
    model.replace_store(scatterhsd::autodiff::ParamStore::load(checkpoint)?)?;
    let report = evaluate(&model, &split.test, &scatter, &cfg)?;
    print_report(&report);
    if let Some(dir) = dump_recon {
        std::fs::create_dir_all(dir)?;
        let params = model.store.constants()?;
        let objects = prepare_objects(&split.test, &scatter, 1, cfg.upstream.target_points)?;
        for obj in objects.iter().take(4) {
            let view = &obj.views[0];
            let x = scatterhsd::autodiff::Tensor::constant(view.flat(), &[view.len(), 3])?;
            let pred = model.upstream.forward(&params, &x)?;
            let cloud = PointCloud::new(pred.rows3()?)?;
            save_xyz(&cloud, &dir.join(format!("recon_{:03}.xyz", obj.id)))?;
            save_ply(&cloud, &dir.join(format!("recon_{:03}.ply", obj.id)))?;
            save_xyz(view, &dir.join(format!("input_{:03}.xyz", obj.id)))?;
        }
        println!("wrote sample reconstructions to {}", dir.display());
    }
    Ok(())
}

fn ablate_cmd(s: &Settings, seeds: usize, out: &Path) -> scatterhsd::Result<()> {
    if seeds == 0 {
        return Err(Error::InvalidInput("need at least one seed".into()));
    }
    print!("{}", s.dump());
    let base = s.train_config()?;
    let scatter = s.scatter_config()?;
    let split = s.split()?;
    let seed_list: Vec<u64> = (0..seeds as u64).collect();
    let table = ablate(&AblationConfig::ALL, &seed_list, &split, &scatter, &base)?;
    std::fs::create_dir_all(out)?;
    logs::write_ablation_csv(&table.rows, base.hfe.levels, &out.join("ablation.csv"))?;
    for config in AblationConfig::ALL {
        if let (Some(oa), Some(cd)) = (table.median_oa(config), table.median_cd(config)) {
            println!("{:<9} median OA {:.2}%  median CD(x1000) {:.3}", config.name(), oa * 100.0, cd);
        }
    }
    println!("wrote ablation.csv to {}", out.display());
    Ok(())
}
