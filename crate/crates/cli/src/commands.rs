use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use hypergen_episode::{
    count_classes, dataset_from_uri, sample_episode, DatasetIndex, Episode, Split, SplitConfig,
};
use hypergen_model::{
    export_attention_maps, write_checkpoint, write_npy, Generator, WeightSource,
};
use hypergen_oracles::run_suites;
use hypergen_tensor::{Tape, Tensor};
use hypergen_train::{
    derive_seed, episode_tensors, evaluate, train, EpisodeShape, TrainConfig,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

/// Seed stream for weight-embedding export episodes.
const SALT_EMBED: u64 = 0x454d_4244;

/// Prints one line to stdout, treating a closed pipe as a normal early exit
/// so `hypergen ... | head` does not fail.
fn write_line(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{}", text) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError::io(e.to_string())),
    }
}

fn emit(value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::from)?;
    write_line(&text)
}

fn load_generator(path: &Path) -> Result<(Generator<f32>, serde_json::Value), CliError> {
    let (generator, extra) = Generator::<f32>::load(path)?;
    Ok((generator, extra))
}

/// Training config recorded in a checkpoint, when one is present.
fn stored_train_config(extra: &serde_json::Value) -> Option<TrainConfig> {
    extra
        .get("train_config")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

/// The whole dataset behind a URI as a single class pool. Commands that take
/// a bare dataset (eval, generate, inspect, export) leave split carving to
/// the operator: point them at held-out data.
fn whole_dataset(uri: &str, min_samples: usize) -> Result<DatasetIndex, CliError> {
    let mut cfg = SplitConfig::all_train(count_classes(uri)?);
    cfg.min_samples = min_samples;
    Ok(dataset_from_uri(uri, &cfg)?)
}

fn class_names(index: &DatasetIndex, class_map: &[usize]) -> Vec<String> {
    class_map
        .iter()
        .map(|&c| index.classes[c].name.clone())
        .collect()
}

pub fn cmd_train(config_path: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let run = RunConfig::load(config_path)?;
    run.train.validate().map_err(CliError::from)?;
    let train_index = dataset_from_uri(&run.dataset, &run.split_config(Split::Train))?;
    let eval_index = dataset_from_uri(&run.dataset, &run.split_config(run.eval_split()?))?;
    let (mut generator, start_step) = match resume {
        Some(ckpt) => {
            let (generator, extra) = load_generator(ckpt)?;
            if generator.config != run.generator_config()
                || generator.spec != run.cnn_spec(&train_index)
            {
                return Err(CliError::config(format!(
                    "architecture in {} does not match {}",
                    ckpt.display(),
                    config_path.display()
                )));
            }
            let step = extra.get("step").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
            (generator, step)
        }
        None => (
            Generator::new(
                run.generator_config(),
                run.cnn_spec(&train_index),
                run.train.seed,
            )?,
            0,
        ),
    };
    let outcome = train(
        &mut generator,
        &run.train,
        &train_index,
        &eval_index,
        &run.out_dir,
        start_step,
    )?;
    let summary = json!({
        "final_step": outcome.final_step,
        "checkpoint": outcome.checkpoint,
        "test_acc": outcome.last_eval.as_ref().map(|r| r.mean_accuracy),
        "ci95": outcome.last_eval.as_ref().map(|r| r.ci95),
    });
    emit(&summary)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &str,
    episodes: usize,
    seed: u64,
    k_shot: Option<usize>,
    q_query: usize,
    u_unlabeled: usize,
) -> Result<(), CliError> {
    let (generator, extra) = load_generator(checkpoint)?;
    let stored = stored_train_config(&extra);
    let shape = EpisodeShape {
        n_way: generator.config.n_way,
        k_shot: k_shot.or(stored.map(|c| c.k_shot)).unwrap_or(1),
        q_query,
        u_unlabeled,
    };
    let index = whole_dataset(dataset, shape.k_shot + shape.q_query + shape.u_unlabeled)?;
    let report = evaluate(&generator, &index, shape, episodes, seed)?;
    emit(&report)?;
    Ok(())
}

/// Support set for the artifact commands: a sampled episode (no queries).
fn support_episode(
    generator: &Generator<f32>,
    index: &DatasetIndex,
    k_shot: usize,
    u_unlabeled: usize,
    seed: u64,
) -> Result<Episode, CliError> {
    Ok(sample_episode(
        index,
        generator.config.n_way,
        k_shot,
        0,
        u_unlabeled,
        seed,
    )?)
}

pub fn cmd_generate(
    checkpoint: &Path,
    dataset: Option<&str>,
    episode_seed: u64,
    support_dir: Option<&Path>,
    k_shot: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let (generator, extra) = load_generator(checkpoint)?;
    let (index, k) = match (support_dir, dataset) {
        (Some(dir), _) => {
            // A directory of class subdirectories is its own pool; every
            // class contributes its smallest common sample count.
            let index = whole_dataset(&dir.display().to_string(), 1)?;
            let k = (0..index.num_classes())
                .map(|c| index.samples_in_class(c))
                .min()
                .unwrap_or(0);
            (index, k)
        }
        (None, Some(uri)) => {
            let k = k_shot
                .or(stored_train_config(&extra).map(|c| c.k_shot))
                .unwrap_or(1);
            (whole_dataset(uri, k)?, k)
        }
        (None, None) => {
            return Err(CliError::config(
                "generate needs --dataset or --support-dir",
            ))
        }
    };
    let episode = support_episode(&generator, &index, k, 0, episode_seed)?;
    let (support_images, support_labels, _, _) = episode_tensors::<f32>(&episode);

    let mut tape: Tape<f32> = Tape::new();
    let bound = generator.bind_frozen(&mut tape);
    let generation = generator.generate(&mut tape, &bound, &support_images, &support_labels, false)?;

    let mut tensors: Vec<(String, Tensor<f32>)> = Vec::new();
    let mut sources = Vec::new();
    for (i, layer) in generation.weights.layers.iter().enumerate() {
        tensors.push((format!("layer{i}.kernel"), tape.value(layer.kernel).clone()));
        tensors.push((format!("layer{i}.bias"), tape.value(layer.bias).clone()));
        sources.push(match layer.source {
            WeightSource::Generated => "generated",
            WeightSource::Learned => "learned",
        });
    }
    for (i, bn) in generation.weights.bn.iter().enumerate() {
        if let Some(b) = bn {
            tensors.push((format!("layer{i}.bn_gamma"), tape.value(b.gamma).clone()));
            tensors.push((format!("layer{i}.bn_beta"), tape.value(b.beta).clone()));
        }
    }
    // Support-batch statistics make the export runnable standalone.
    for (i, stats) in generation.bn_stats.iter().enumerate() {
        if let Some((mean, var)) = stats {
            tensors.push((format!("layer{i}.bn_mean"), tape.value(*mean).clone()));
            tensors.push((format!("layer{i}.bn_var"), tape.value(*var).clone()));
        }
    }
    let header = json!({
        "kind": "generated-cnn",
        "spec": generator.spec,
        "sources": sources,
        "class_map": episode.class_map,
        "classes": class_names(&index, &episode.class_map),
        "episode_seed": episode.seed,
        "bn": "support-statistics",
    });
    let file = File::create(out).map_err(|e| CliError::io(format!("{}: {}", out.display(), e)))?;
    write_checkpoint(
        &mut BufWriter::new(file),
        &header,
        tensors.iter().map(|(n, t)| (n.as_str(), t)),
    )?;
    let summary = json!({
        "out": out,
        "tensors": tensors.len(),
        "classes": class_names(&index, &episode.class_map),
        "k_shot": k,
    });
    emit(&summary)?;
    Ok(())
}

pub fn cmd_inspect_attention(
    checkpoint: &Path,
    dataset: &str,
    episode_seed: u64,
    k_shot: Option<usize>,
    u_unlabeled: usize,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (generator, extra) = load_generator(checkpoint)?;
    let k = k_shot
        .or(stored_train_config(&extra).map(|c| c.k_shot))
        .unwrap_or(1);
    let index = whole_dataset(dataset, k + u_unlabeled)?;
    let episode = support_episode(&generator, &index, k, u_unlabeled, episode_seed)?;
    let (support_images, support_labels, _, _) = episode_tensors::<f32>(&episode);

    let mut tape: Tape<f32> = Tape::new();
    let bound = generator.bind_frozen(&mut tape);
    let generation = generator.generate(&mut tape, &bound, &support_images, &support_labels, true)?;
    let files = export_attention_maps(&generation.attention, out_dir)?;

    let summary = json!({
        "out_dir": out_dir,
        "files": files,
        "episode_seed": episode.seed,
        "class_map": episode.class_map,
        "classes": class_names(&index, &episode.class_map),
    });
    emit(&summary)?;
    Ok(())
}

pub fn cmd_oracle_check(suite: &str) -> Result<(), CliError> {
    let reports = run_suites(suite)?;
    let passed = reports.iter().all(|r| r.passed);
    emit(&json!({"passed": passed, "suites": reports}))?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = reports
            .iter()
            .flat_map(|r| r.properties.iter())
            .filter(|p| !p.passed)
            .map(|p| p.name.as_str())
            .collect();
        Err(CliError::Numeric(format!(
            "failed oracle properties: {}",
            failed.join(", ")
        )))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_export_weight_embeddings(
    checkpoint: &Path,
    dataset: &str,
    episodes: usize,
    seed: u64,
    k_shot: Option<usize>,
    layers: &str,
    out_dir: &Path,
) -> Result<(), CliError> {
    if episodes == 0 {
        return Err(CliError::config("need at least one episode"));
    }
    let (generator, extra) = load_generator(checkpoint)?;
    let generated: Vec<usize> = generator
        .spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.source == WeightSource::Generated)
        .map(|(i, _)| i)
        .collect();
    if generated.is_empty() {
        return Err(CliError::config("no layer of this model is generated"));
    }
    let selected: Vec<usize> = if layers == "all" {
        generated.clone()
    } else {
        let i: usize = layers.parse().map_err(|_| {
            CliError::config(format!("--layers takes 'all' or a layer index, got {layers:?}"))
        })?;
        if !generated.contains(&i) {
            return Err(CliError::config(format!(
                "layer {} is not generated; generated layers are {:?}",
                i, generated
            )));
        }
        vec![i]
    };
    let k = k_shot
        .or(stored_train_config(&extra).map(|c| c.k_shot))
        .unwrap_or(1);
    let index = whole_dataset(dataset, k)?;

    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(episodes);
    let mut sidecar = Vec::with_capacity(episodes);
    for j in 0..episodes {
        let ep_seed = derive_seed([seed, SALT_EMBED, j as u64, 0]);
        let episode = support_episode(&generator, &index, k, 0, ep_seed)?;
        let (support_images, support_labels, _, _) = episode_tensors::<f32>(&episode);
        let mut tape: Tape<f32> = Tape::new();
        let bound = generator.bind_frozen(&mut tape);
        let generation =
            generator.generate(&mut tape, &bound, &support_images, &support_labels, false)?;
        let mut row = Vec::new();
        for &i in &selected {
            let layer = &generation.weights.layers[i];
            row.extend_from_slice(tape.value(layer.kernel).data());
            row.extend_from_slice(tape.value(layer.bias).data());
        }
        rows.push(row);
        sidecar.push(json!({
            "episode": j,
            "seed": ep_seed,
            "class_map": episode.class_map,
            "classes": class_names(&index, &episode.class_map),
        }));
    }

    let cols = rows[0].len();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    let matrix = Tensor::new(vec![episodes, cols], flat)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(format!("{}: {}", out_dir.display(), e)))?;
    let stem = if layers == "all" {
        "weights_all".to_string()
    } else {
        format!("weights_layer{}", selected[0])
    };
    let matrix_path = out_dir.join(format!("{stem}.npy"));
    let file = File::create(&matrix_path)
        .map_err(|e| CliError::io(format!("{}: {}", matrix_path.display(), e)))?;
    write_npy(&mut BufWriter::new(file), &matrix)?;
    let sidecar_path = out_dir.join("class_map.json");
    std::fs::write(
        &sidecar_path,
        serde_json::to_vec_pretty(&sidecar)?,
    )
    .map_err(|e| CliError::io(format!("{}: {}", sidecar_path.display(), e)))?;

    let summary = json!({
        "matrix": matrix_path,
        "rows": episodes,
        "cols": cols,
        "class_map": sidecar_path,
        "layers": selected,
    });
    emit(&summary)?;
    Ok(())
}

/// Round-trips a run config and prints the canonical form; a cheap way to
/// validate a file and see the defaults it expands to.
pub fn cmd_check_config(config_path: &Path) -> Result<(), CliError> {
    let run = RunConfig::load(config_path)?;
    run.train.validate().map_err(CliError::from)?;
    write_line(run.to_toml()?.trim_end())?;
    Ok(())
}
