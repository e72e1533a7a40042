use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use care::annotations::{load_annotations, write_annotations};
use care::backbone::{load_checkpoint, save_checkpoint};
use care::bbox::{boxes_from_dir, BoxGenParams, Connectivity, Keep, MapSource};
use care::eval::{evaluate, load_images, render_report, viz};
use care::pipeline::{
    finetune_from_checkpoint, generate_synthetic, pretrain, sweep, write_sweep_csv, Dataset, Stage, SweepData,
    SweepParameter, SyntheticSpec, TrainConfig,
};
use care::{CareError, Result};

#[derive(Parser)]
#[command(name = "care", version, about = "Attention-supervised classifier training for imbalanced image data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KeepArg {
    Largest,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Saliency,
    Segmentation,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic imbalanced dataset with lesion boxes.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// JSON synthetic dataset description; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train with classification loss only.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Directory of `<class_name>/*.png`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines metrics log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Finetune a pretrained checkpoint with the attention loss.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `init_checkpoint` from the config.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Finetune once per value of one hyperparameter and tabulate test metrics.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Boxes of test images, for the activation-area column.
        #[arg(long)]
        test_annotations: Option<PathBuf>,
        /// alpha, tau, lambda_out or box_scale.
        #[arg(long)]
        parameter: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output directory for sweep.csv, sweep.png and sweep.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn probability maps (8-bit PNG) into a lesion box CSV.
    GenBbox {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long = "min-area", default_value_t = 0.01)]
        min_area: f64,
        #[arg(long, value_enum, default_value = "largest")]
        keep: KeepArg,
        #[arg(long, default_value_t = 8)]
        connectivity: u8,
        /// Class label written for every record.
        #[arg(long = "class-label", default_value_t = 0)]
        class_label: usize,
        #[arg(long, value_enum, default_value = "saliency")]
        source: SourceArg,
    },
    /// Evaluate a checkpoint and write report.json, per_class.csv and recall_bar.png.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Class whose recall is reported as minority recall; the smallest
        /// class by default.
        #[arg(long)]
        minority: Option<String>,
    },
    /// Write activation-map overlays for a directory of images.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn open_log(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::sink()),
    })
}

fn load_data(dir: &Path, like: Option<&care::backbone::BackboneConfig>) -> Result<Dataset> {
    let ds = Dataset::load_dir(dir, like.map(|c| c.input_channels), like.map(|c| c.input_size))?;
    info!("{}: {} images, class counts {:?}", dir.display(), ds.len(), ds.class_counts());
    Ok(ds)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData { out, config, seed } => {
            let mut spec = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let data = generate_synthetic(&spec)?;
            data.train.save_dir(&out.join("train"))?;
            data.test.save_dir(&out.join("test"))?;
            write_annotations(&out.join("train_boxes.csv"), &data.train_boxes)?;
            write_annotations(&out.join("test_boxes.csv"), &data.test_boxes)?;
            std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
            println!("wrote {} train and {} test images to {}", data.train.len(), data.test.len(), out.display());
        }
        Command::Pretrain { config, data, out, log } => {
            let cfg = TrainConfig::load(&config)?;
            if cfg.stage != Stage::Pretrain {
                return Err(CareError::Config("pretrain needs a config with stage \"pretrain\"".into()));
            }
            let ds = load_data(&data, cfg.backbone.as_ref())?;
            let outcome = pretrain(&cfg, &ds, &mut open_log(log.as_deref())?)?;
            save_checkpoint(&out, &outcome.backbone, &ds.class_names)?;
            println!("pretrained {} epochs, checkpoint {}", outcome.epochs_run, out.display());
        }
        Command::Finetune {
            config,
            data,
            annotations,
            out,
            init,
            log,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if cfg.stage != Stage::Finetune {
                return Err(CareError::Config("finetune needs a config with stage \"finetune\"".into()));
            }
            if init.is_some() {
                cfg.init_checkpoint = init;
            }
            let ds = load_data(&data, None)?;
            let ann = load_annotations(&annotations, None)?;
            let outcome = finetune_from_checkpoint(&cfg, &ds, &ann, &out, &mut open_log(log.as_deref())?)?;
            println!(
                "finetuned {} epochs, kept epoch {} (val MCA {:?}), checkpoint {}",
                outcome.epochs_run,
                outcome.selected_epoch,
                outcome.best_val_mca,
                out.display()
            );
        }
        Command::Sweep {
            config,
            data,
            annotations,
            test,
            test_annotations,
            parameter,
            values,
            init,
            out,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if init.is_some() {
                cfg.init_checkpoint = init;
            }
            let parameter: SweepParameter = parameter.parse()?;
            let Some(init_path) = cfg.init_checkpoint.clone() else {
                return Err(CareError::Config("sweep needs init_checkpoint or --init".into()));
            };
            let (backbone, _) = load_checkpoint(&init_path)?;
            let train = load_data(&data, Some(backbone.config()))?;
            let test = load_data(&test, Some(backbone.config()))?;
            let ann = load_annotations(&annotations, None)?;
            let test_ann = match test_annotations {
                Some(p) => load_annotations(&p, None)?,
                None => Vec::new(),
            };
            std::fs::create_dir_all(&out)?;
            let mut log = open_log(Some(&out.join("sweep.jsonl")))?;
            let data = SweepData {
                train: &train,
                annotations: &ann,
                test: &test,
                test_annotations: &test_ann,
            };
            let rows = sweep(&cfg, &data, &backbone, parameter, &values, &mut log)?;
            write_sweep_csv(&out.join("sweep.csv"), &rows)?;
            let mca: Vec<f64> = rows.iter().map(|r| r.mca).collect();
            let minority: Vec<f64> = rows.iter().map(|r| r.minority_recall).collect();
            care::eval::plot::line_plot(&values, &[(&mca, care::eval::plot::BLUE), (&minority, care::eval::plot::RED)])
                .save(out.join("sweep.png"))?;
            for r in &rows {
                println!("{} = {}: MCA {:.4}, minority recall {:.4}", parameter.name(), r.value, r.mca, r.minority_recall);
            }
        }
        Command::GenBbox {
            maps,
            out,
            threshold,
            min_area,
            keep,
            connectivity,
            class_label,
            source,
        } => {
            let params = BoxGenParams {
                threshold,
                min_area_fraction: min_area,
                keep: match keep {
                    KeepArg::Largest => Keep::Largest,
                    KeepArg::All => Keep::All,
                },
                connectivity: Connectivity::from_neighbours(connectivity)?,
            };
            params.validate()?;
            let source = match source {
                SourceArg::Saliency => MapSource::Saliency,
                SourceArg::Segmentation => MapSource::Segmentation,
            };
            let records = boxes_from_dir(&maps, &params, class_label, source)?;
            write_annotations(&out, &records)?;
            println!("wrote boxes for {} maps to {}", records.len(), out.display());
        }
        Command::Eval {
            checkpoint,
            data,
            report,
            minority,
        } => {
            let (backbone, names) = load_checkpoint(&checkpoint)?;
            let ds = load_data(&data, Some(backbone.config()))?;
            if names != ds.class_names {
                return Err(CareError::Checkpoint(format!(
                    "checkpoint classes {names:?} differ from dataset classes {:?}",
                    ds.class_names
                )));
            }
            let minority = match minority {
                Some(name) => Some(
                    ds.class_names
                        .iter()
                        .position(|n| *n == name)
                        .ok_or_else(|| CareError::Argument(format!("unknown class {name:?}")))?,
                ),
                None => None,
            };
            let r = evaluate(&backbone, &ds, minority)?;
            render_report(&r, &report)?;
            println!(
                "MCA {:.4}, mean AUC {:.4}, minority ({}) recall {:.4}; report in {}",
                r.mca,
                r.mean_auc,
                r.class_names[r.minority_class],
                r.minority_recall,
                report.display()
            );
        }
        Command::Viz {
            checkpoint,
            images,
            boxes,
            out,
        } => {
            let (backbone, _) = load_checkpoint(&checkpoint)?;
            let imgs = load_images(&images)?;
            let mut by_id = HashMap::new();
            if let Some(p) = boxes {
                for r in load_annotations(&p, None)? {
                    by_id.entry(r.image_id).or_insert_with(Vec::new).extend(r.boxes);
                }
            }
            let written = viz(&backbone, &imgs, &by_id, &out)?;
            println!("wrote {} overlays to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
