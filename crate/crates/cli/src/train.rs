use std::fs::{self, File};
use std::io::Write;

use simcgnn::data::read_bundle;
use simcgnn::model::{save_checkpoint, Checkpoint, Model};
use simcgnn::training::{train_observed, EpochRecord};
use simcgnn::Error;

use crate::config::{resolve, Overrides};
use crate::error::{write, CliResult};
use crate::manifest::{layout, DatasetRef, RunManifest};
use crate::TrainArgs;

fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn run(a: TrainArgs) -> CliResult<()> {
    let (config, data_path, expected) = match &a.manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            m.config.validate()?;
            (m.config, m.dataset.path, Some(m.dataset.fingerprint))
        }
        None => {
            let overrides = Overrides {
                sets: a.set.clone(),
                seed: a.seed,
                epochs: a.epochs,
                ablations: a.ablation.clone(),
            };
            let config = resolve(a.config.as_deref(), &overrides)?;
            (config, a.data.clone().expect("clap requires --data"), None)
        }
    };

    let bundle = read_bundle(&data_path)?;
    let fingerprint = bundle.fingerprint();
    if let Some(expected) = expected {
        if expected != fingerprint {
            return Err(Error::Compatibility(format!(
                "{} has fingerprint {fingerprint}, manifest recorded {expected}",
                data_path.display()
            ))
            .into());
        }
    }
    let vocabulary = bundle.dataset.vocabulary.fingerprint();

    fs::create_dir_all(&a.run_dir).map_err(io(&a.run_dir))?;
    let manifest = RunManifest::new(
        config.clone(),
        DatasetRef {
            path: data_path.clone(),
            fingerprint,
            vocabulary: vocabulary.clone(),
        },
        &a.run_dir,
    );
    manifest.save(&a.run_dir.join(layout::MANIFEST))?;

    let report_path = a.run_dir.join(layout::REPORT);
    let mut report_file = File::create(&report_path).map_err(io(&report_path))?;
    let mut write_error = None;
    let quiet = a.quiet;
    let mut observe = |r: &EpochRecord| {
        if let Err(e) = report_file.write_all(r.to_json_line().as_bytes()) {
            write_error.get_or_insert(e);
        }
        if !quiet {
            eprintln!(
                "epoch {:>3}  lr {:.0e}  loss {:.5} (pred {:.5}, con {:.5})  valid recall {}",
                r.epoch,
                r.lr,
                r.loss_total,
                r.loss_pred,
                r.loss_con,
                r.valid_recall.map_or("-".to_string(), |v| format!("{v:.4}")),
            );
        }
    };

    let data = &bundle.dataset;
    let outcome = train_observed(&data.train, data.num_items(), &config, &mut observe);
    drop(report_file);
    if let Some(e) = write_error {
        return Err(io(&report_path)(e).into());
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(Error::Diverged {
            epoch,
            step,
            last_finite,
        }) => {
            let model = Model::from_params(config.model.clone(), data.num_items(), *last_finite.clone())?;
            let path = a.run_dir.join(layout::DIVERGED_CHECKPOINT);
            save_checkpoint(&path, &Checkpoint { model, vocabulary })?;
            eprintln!("last finite parameters saved to {}", path.display());
            return Err(Error::Diverged {
                epoch,
                step,
                last_finite,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };

    save_checkpoint(
        &manifest.artifacts.checkpoint,
        &Checkpoint {
            model: outcome.model,
            vocabulary,
        },
    )?;
    write(&report_path, outcome.report.to_jsonl())?;
    println!(
        "{}",
        serde_json::json!({
            "run_dir": a.run_dir,
            "checkpoint": manifest.artifacts.checkpoint,
            "summary": outcome.report.summary,
        })
    );
    Ok(())
}
