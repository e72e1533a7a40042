//! Pretrain once, finetune with and without the attention loss, compare.
//!
//! Settings come from environment variables (see `var`).

use std::time::Instant;

use care::backbone::{Backbone, BackboneConfig};
use care::eval::{evaluate, localization_scores};
use care::pipeline::{finetune_care_observed, generate_synthetic, pretrain_observed, Dataset, LogRecord, Stage, SyntheticSpec, TrainConfig};

fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        f64::NAN
    } else {
        v[v.len() / 2]
    }
}

fn epoch_means(history: &[LogRecord]) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    let mut acc = (0.0, 0.0, 0.0, 0usize, 0usize);
    for r in history {
        match r {
            LogRecord::Step { loss, .. } => {
                acc.0 += loss.cross_entropy;
                acc.3 += 1;
                if loss.n_attended > 0 {
                    acc.1 += loss.inner;
                    acc.2 += loss.outer;
                    acc.4 += 1;
                }
            }
            LogRecord::Epoch { .. } => {
                let na = acc.4.max(1) as f64;
                out.push((acc.0 / acc.3.max(1) as f64, acc.1 / na, acc.2 / na));
                acc = (0.0, 0.0, 0.0, 0, 0);
            }
        }
    }
    out
}

fn main() -> care::Result<()> {
    env_logger::init();
    let seed: u64 = var("SEED", 0);
    let defaults = SyntheticSpec::default();
    let mut spec = SyntheticSpec {
        seed,
        patch_contrast: var("CONTRAST", defaults.patch_contrast),
        texture_amplitude: var("TEXTURE", defaults.texture_amplitude),
        ..defaults
    };
    spec.classes[2].train_count = var("MINORITY", 60);
    let data = generate_synthetic(&spec)?;

    let widths: Vec<usize> = var("WIDTHS", "8,16,32".to_string()).split(',').map(|s| s.parse().unwrap()).collect();
    let mut bcfg = BackboneConfig::reference(1, 64, 3);
    bcfg.widths = widths;
    let base = TrainConfig {
        epochs: var("PRE_EPOCHS", 30),
        learning_rate: var("LR", 1e-3),
        batch_size: var("BATCH", 32),
        early_stop_patience: var("PATIENCE", 20),
        seed,
        inverse_frequency_weights: var("CSL", false),
        backbone: Some(bcfg),
        ..TrainConfig::default()
    };
    let test = &data.test;
    let every: usize = var("EVERY", 5);
    let show = |tag: &str, e: usize, net: &Backbone| {
        if e % every == 0 {
            let r = evaluate(net, test, None).unwrap();
            let loc = median(localization_scores(net, test, &data.test_boxes).unwrap());
            println!("  {tag} {e:3}: recalls {:.3?} mca {:.3} loc {loc:.3}", r.per_class_recall, r.mca);
        }
    };
    let t = Instant::now();
    let pre = pretrain_observed(&base, &data.train, &mut std::io::sink(), Some(&mut |e, n: &Backbone| show("pre", e, n)))?;
    println!("pretrain {} epochs in {:.1}s", pre.epochs_run, t.elapsed().as_secs_f64());
    report("pretrain", &pre.backbone, &data.test, &data.test_boxes)?;

    for alpha in var("ALPHAS", "0,0.5".to_string()).split(',').filter_map(|s| s.parse::<f64>().ok()) {
        let mut cfg = base.clone();
        cfg.stage = Stage::Finetune;
        cfg.epochs = var("FT_EPOCHS", 10);
        cfg.learning_rate = var("FT_LR", 1e-3);
        cfg.loss.alpha = alpha;
        cfg.loss.tau = var("TAU", 0.5);
        cfg.loss.lambda_out = var("LAMBDA", 1.0);
        cfg.loss.detach_sigma = var("DETACH", false);
        cfg.loss.rectify_cam = var("RECTIFY", true);
        let t = Instant::now();
        let tag = format!("a={alpha}");
        let ft = finetune_care_observed(
            &cfg,
            &data.train,
            &data.train_boxes,
            &pre.backbone,
            &mut std::io::sink(),
            Some(&mut |e, n: &Backbone| show(&tag, e, n)),
        )?;
        for (e, (ce, inn, out)) in epoch_means(&ft.history).iter().enumerate() {
            if (e + 1) % every == 0 {
                println!("    epoch {}: ce {ce:.4} inner {inn:.4} outer {out:.4}", e + 1);
            }
        }
        println!("alpha {alpha}: kept epoch {} ({:.1}s)", ft.selected_epoch, t.elapsed().as_secs_f64());
        report(&tag, &ft.backbone, &data.test, &data.test_boxes)?;
    }
    Ok(())
}

fn report(tag: &str, net: &Backbone, test: &Dataset, boxes: &[care::annotations::AnnotationRecord]) -> care::Result<()> {
    let r = evaluate(net, test, None)?;
    let loc = median(localization_scores(net, test, boxes)?);
    println!("{tag}: recalls {:.3?} mca {:.3} auc {:.3?} loc {loc:.3}", r.per_class_recall, r.mca, r.auc_per_class);
    Ok(())
}
