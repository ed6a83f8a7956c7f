//! End-to-end orchestration: layer-by-layer training, feature extraction,
//! classifier training, bundle persistence, evaluation and the throughput
//! benchmark.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, OnlineTrainer, TrainingConfig, TrainingReport};
use crate::classifier::{
    evaluate, mlp_train, vectorize, ConfusionMatrix, Mlp, MlpTrainConfig, MlpTrainingReport,
};
use crate::component_seed;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::event::{refractory_filter, EventStream, Geometry, TimestampMap};
use crate::hierarchy::{collect_layer_inputs, layer_input_dim, Hierarchy, LayerConfig};
use crate::io::manifest::{load_dataset, load_manifest, Dataset};
use crate::io::synth::random_stream;
use crate::persist;
use crate::seeds;

/// Everything produced by a training run.
pub struct TrainedBundle {
    /// Snapshot of the configuration the bundle was trained with.
    pub config: PipelineConfig,
    pub layers: Vec<LayerConfig>,
    pub encoders: Vec<Autoencoder>,
    pub mlp: Mlp,
    pub geometry: Geometry,
    pub classes: Vec<String>,
    pub autoencoder_reports: Vec<TrainingReport>,
    pub classifier_report: MlpTrainingReport,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    geometry: Geometry,
    classes: Vec<String>,
    layers: Vec<LayerConfig>,
    autoencoder_reports: Vec<TrainingReport>,
    classifier_report: MlpTrainingReport,
    warnings: Vec<String>,
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn preprocessed(stream: &EventStream, refractory_us: i64) -> EventStream {
    if refractory_us <= 0 {
        return stream.clone();
    }
    EventStream {
        geometry: stream.geometry,
        events: refractory_filter(&stream.events, stream.geometry, refractory_us),
        label: stream.label,
    }
}

/// Round-robin across classes so early training surfaces are not dominated
/// by the first class directory.
fn interleaved_order(dataset: &Dataset) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes.len()];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label.expect("labeled")].push(i);
    }
    let mut order = Vec::with_capacity(dataset.samples.len());
    let longest = by_class.iter().map(|v| v.len()).max().unwrap_or(0);
    for round in 0..longest {
        for class in &by_class {
            if let Some(&i) = class.get(round) {
                order.push(i);
            }
        }
    }
    order
}

/// Trains every layer's autoencoder in order, then the classifier, on the
/// dataset named by the config. Overrides for seed/subsample/workers are
/// expected to already be applied to `config`.
pub fn train(config: &PipelineConfig) -> Result<TrainedBundle> {
    config.validate()?;
    let manifest = load_manifest(&config.dataset.manifest)?;
    let subsample = (config.run.subsample > 0).then_some(config.run.subsample);
    let dataset = load_dataset(&manifest, subsample)?;
    if dataset.samples.is_empty() {
        return Err(Error::Dataset(format!(
            "no samples under {}",
            manifest.root.display()
        )));
    }
    let mut warnings = dataset.warnings.clone();
    let layers = config.resolve_layers()?;
    let seed = config.run.seed;
    let refractory = config.dataset.refractory_us;
    let order = interleaved_order(&dataset);

    // layer-by-layer: each autoencoder trains online on the inputs produced
    // by the already-trained layers below it
    let mut encoders: Vec<Autoencoder> = Vec::with_capacity(layers.len());
    let mut autoencoder_reports = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let mut ae = Autoencoder::new(
            layer_input_dim(&layers, l),
            layer.code_dim,
            config.autoencoder.enc_activation,
            config.autoencoder.dec_activation,
            component_seed(seed, seeds::autoencoder_layer(l)),
        )?;
        let training = TrainingConfig {
            threshold: config.autoencoder.epsilon,
            max_surfaces: config.autoencoder.max_surfaces,
            learning_rate: config.autoencoder.learning_rate,
            window: config.autoencoder.window,
            trajectory_stride: config.autoencoder.window,
        };
        let mut trainer = OnlineTrainer::new(&mut ae, training)?;
        'samples: for &i in &order {
            let stream = preprocessed(&dataset.samples[i], refractory);
            let keep_going = collect_layer_inputs(&stream, &layers, &encoders, l, &mut |input| {
                trainer.push(input)
            })?;
            if !keep_going {
                break 'samples;
            }
        }
        let report = trainer.finish();
        if !report.converged {
            warnings.push(format!(
                "layer {} autoencoder did not converge: mean error {:.6} after {} surfaces",
                l + 1,
                report.final_error,
                report.surfaces_seen
            ));
        }
        autoencoder_reports.push(report);
        encoders.push(ae);
    }

    // materialize the final feature volume of every sample, in parallel
    let pool = worker_pool(config.run.workers)?;
    let hierarchy = Hierarchy::new(&layers, &encoders)?;
    let features: Vec<Vec<f64>> = pool.install(|| {
        dataset
            .samples
            .par_iter()
            .map(|s| {
                let stream = preprocessed(s, refractory);
                let run = hierarchy.process(&stream)?;
                Ok(vectorize(run.volumes.last().expect("at least one layer")))
            })
            .collect::<Result<_>>()
    })?;
    let labels = dataset.labels();

    let mut mlp = Mlp::with_options(
        dataset.geometry.pixel_count() * layers.last().expect("non-empty").code_dim,
        config.classifier.hidden_dim,
        dataset.classes.len(),
        crate::autoencoder::Activation::Sigmoid,
        config.classifier.loss,
        component_seed(seed, seeds::MLP_INIT),
    )?;
    if config.classifier.standardize {
        mlp.fit_standardization(&features)?;
    }
    let classifier_report = mlp_train(
        &mut mlp,
        &features,
        &labels,
        &MlpTrainConfig {
            epochs: config.classifier.epochs,
            learning_rate: config.classifier.learning_rate,
            seed: component_seed(seed, seeds::MLP_SHUFFLE),
        },
    )?;

    Ok(TrainedBundle {
        config: config.clone(),
        layers,
        encoders,
        mlp,
        geometry: dataset.geometry,
        classes: dataset.classes,
        autoencoder_reports,
        classifier_report,
        warnings,
    })
}

/// Writes the bundle directory: config snapshot, metadata with training
/// reports, one blob per layer autoencoder, and the classifier blob.
pub fn save_bundle(bundle: &TrainedBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_text = toml::to_string(&bundle.config)
        .map_err(|e| Error::Config(format!("config snapshot: {e}")))?;
    std::fs::write(dir.join("config.toml"), config_text)
        .map_err(|e| Error::io(dir.join("config.toml"), e))?;
    let meta = BundleMeta {
        geometry: bundle.geometry,
        classes: bundle.classes.clone(),
        layers: bundle.layers.clone(),
        autoencoder_reports: bundle.autoencoder_reports.clone(),
        classifier_report: bundle.classifier_report.clone(),
        warnings: bundle.warnings.clone(),
    };
    let meta_text =
        toml::to_string(&meta).map_err(|e| Error::Config(format!("bundle metadata: {e}")))?;
    std::fs::write(dir.join("bundle.toml"), meta_text)
        .map_err(|e| Error::io(dir.join("bundle.toml"), e))?;
    for (i, ae) in bundle.encoders.iter().enumerate() {
        let path = dir.join(format!("ae_layer_{}.bin", i + 1));
        std::fs::write(&path, persist::save_autoencoder(ae)).map_err(|e| Error::io(&path, e))?;
    }
    std::fs::write(dir.join("mlp.bin"), persist::save_mlp(&bundle.mlp))
        .map_err(|e| Error::io(dir.join("mlp.bin"), e))?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<TrainedBundle> {
    let config_path = dir.join("config.toml");
    let config_text =
        std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: PipelineConfig = toml::from_str(&config_text)
        .map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    let meta_path = dir.join("bundle.toml");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: BundleMeta = toml::from_str(&meta_text)
        .map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?;
    let mut encoders = Vec::with_capacity(meta.layers.len());
    for i in 0..meta.layers.len() {
        let path = dir.join(format!("ae_layer_{}.bin", i + 1));
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        encoders.push(persist::load_autoencoder(&bytes)?);
    }
    let mlp_path = dir.join("mlp.bin");
    let mlp_bytes = std::fs::read(&mlp_path).map_err(|e| Error::io(&mlp_path, e))?;
    let mlp = persist::load_mlp(&mlp_bytes)?;
    Ok(TrainedBundle {
        config,
        layers: meta.layers,
        encoders,
        mlp,
        geometry: meta.geometry,
        classes: meta.classes,
        autoencoder_reports: meta.autoencoder_reports,
        classifier_report: meta.classifier_report,
        warnings: meta.warnings,
    })
}

/// Result of evaluating a bundle against a labeled dataset.
#[derive(Debug)]
pub struct EvalOutcome {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub classes: Vec<String>,
    pub samples: usize,
    pub warnings: Vec<String>,
}

pub fn evaluate_bundle(
    bundle: &TrainedBundle,
    manifest_path: &Path,
    subsample: Option<usize>,
    workers: usize,
) -> Result<EvalOutcome> {
    let manifest = load_manifest(manifest_path)?;
    let dataset = load_dataset(&manifest, subsample)?;
    if dataset.geometry != bundle.geometry {
        return Err(Error::Compat(format!(
            "dataset geometry {} does not match bundle geometry {}",
            dataset.geometry, bundle.geometry
        )));
    }
    if dataset.classes != bundle.classes {
        return Err(Error::Compat(format!(
            "dataset classes {:?} do not match bundle classes {:?}",
            dataset.classes, bundle.classes
        )));
    }
    let hierarchy = Hierarchy::new(&bundle.layers, &bundle.encoders)?;
    let refractory = bundle.config.dataset.refractory_us;
    let pool = worker_pool(workers)?;
    let (features, labels) = pool.install(|| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let features: Vec<Vec<f64>> = dataset
            .samples
            .par_iter()
            .map(|s| {
                let stream = preprocessed(s, refractory);
                let run = hierarchy.process(&stream)?;
                Ok(vectorize(run.volumes.last().expect("at least one layer")))
            })
            .collect::<Result<_>>()?;
        Ok((features, dataset.labels()))
    })?;
    let confusion = pool.install(|| evaluate(&bundle.mlp, &features, &labels))?;
    Ok(EvalOutcome {
        accuracy: confusion.overall_rate(),
        confusion,
        classes: dataset.classes,
        samples: labels.len(),
        warnings: dataset.warnings,
    })
}

/// Writes `confusion.txt`, `confusion.csv` and `summary.txt` under `out_dir`.
pub fn write_eval_reports(outcome: &EvalOutcome, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(
        out_dir.join("confusion.txt"),
        outcome.confusion.to_text_table(&outcome.classes),
    )
    .map_err(|e| Error::io(out_dir.join("confusion.txt"), e))?;
    std::fs::write(
        out_dir.join("confusion.csv"),
        outcome.confusion.to_csv(&outcome.classes),
    )
    .map_err(|e| Error::io(out_dir.join("confusion.csv"), e))?;
    let mut summary = format!(
        "samples: {}\noverall recognition rate: {:.6}\n",
        outcome.samples, outcome.accuracy
    );
    for (class, rate) in outcome.classes.iter().zip(outcome.confusion.per_class_rates()) {
        summary.push_str(&format!("class {class}: {rate:.6}\n"));
    }
    for w in &outcome.warnings {
        summary.push_str(&format!("warning: {w}\n"));
    }
    std::fs::write(out_dir.join("summary.txt"), summary)
        .map_err(|e| Error::io(out_dir.join("summary.txt"), e))?;
    Ok(())
}

/// Shape of a synthetic throughput measurement.
#[derive(Debug, Clone)]
pub struct BenchParams {
    pub geometry: Geometry,
    pub events: usize,
    pub radius: u16,
    pub tau_us: f64,
    pub code_dim: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            geometry: Geometry::new(34, 34),
            events: 1_000_000,
            radius: 2,
            tau_us: 30_000.0,
            code_dim: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub events: usize,
    pub elapsed_seconds: f64,
    pub events_per_second: f64,
    pub mean_latency_us: f64,
    pub p99_latency_us: f64,
}

/// Measures events/second through layer-1 surface construction plus
/// encoding on a synthetic stream.
pub fn bench(params: &BenchParams) -> Result<BenchReport> {
    let input_dim = crate::event::TimeSurface::input_dim(params.radius);
    if params.code_dim >= input_dim {
        return Err(Error::Config(format!(
            "bench code_dim ({}) must be smaller than the surface dimension ({input_dim})",
            params.code_dim
        )));
    }
    let stream = random_stream(
        params.geometry,
        params.events,
        (params.events as i64).max(1),
        params.seed,
    );
    let ae = Autoencoder::new(
        input_dim,
        params.code_dim,
        crate::autoencoder::Activation::Sigmoid,
        crate::autoencoder::Activation::Sigmoid,
        component_seed(params.seed, seeds::BENCH_STREAM),
    )?;
    let mut map = TimestampMap::new(params.geometry);
    let mut surface = vec![0.0; input_dim];
    let mut code = vec![0.0; params.code_dim];
    let mut latencies_ns: Vec<u64> = Vec::with_capacity(stream.events.len());
    let started = Instant::now();
    for e in &stream.events {
        let t0 = Instant::now();
        map.update(e)?;
        let ctx = map.time_context(e, params.radius);
        crate::event::time_surface_into(&ctx, e.t, params.tau_us, &mut surface);
        ae.encode_into(&surface, &mut code)?;
        latencies_ns.push(t0.elapsed().as_nanos() as u64);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let n = latencies_ns.len();
    let (mean_latency_us, p99_latency_us) = if n == 0 {
        (0.0, 0.0)
    } else {
        let mean = latencies_ns.iter().sum::<u64>() as f64 / n as f64 / 1000.0;
        latencies_ns.sort_unstable();
        let idx = (((n as f64) * 0.99).ceil() as usize).clamp(1, n) - 1;
        (mean, latencies_ns[idx] as f64 / 1000.0)
    };
    Ok(BenchReport {
        events: n,
        elapsed_seconds: elapsed,
        events_per_second: if elapsed > 0.0 { n as f64 / elapsed } else { 0.0 },
        mean_latency_us,
        p99_latency_us,
    })
}

/// Renders one learned feature (a decoder column reshaped to the surface
/// grid) as an ASCII heat map, one block per polarity plane.
pub fn render_feature_grid(ae: &Autoencoder, channel: usize, radius: u16) -> String {
    const SHADES: &[u8] = b" .:-=+*#%@";
    let side = 2 * radius as usize + 1;
    let column = ae.decoder_column(channel);
    let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    for (p, name) in [(0, "OFF"), (1, "ON")] {
        out.push_str(&format!("  channel {channel} {name}:\n"));
        for v in 0..side {
            out.push_str("    ");
            for u in 0..side {
                let value = column[(v * side + u) * 2 + p];
                let shade = (((value - lo) / span) * (SHADES.len() - 1) as f64).round() as usize;
                out.push(SHADES[shade.min(SHADES.len() - 1)] as char);
            }
            out.push('\n');
        }
    }
    out
}

/// CSV rows (channel, polarity, dy, dx, weight) for every decoder feature.
pub fn feature_grid_csv(ae: &Autoencoder, radius: u16) -> String {
    let side = 2 * radius as usize + 1;
    let r = radius as i32;
    let mut out = String::from("channel,polarity,dy,dx,weight\n");
    for channel in 0..ae.code_dim() {
        let column = ae.decoder_column(channel);
        for v in 0..side {
            for u in 0..side {
                for (p, name) in [(0, "off"), (1, "on")] {
                    out.push_str(&format!(
                        "{channel},{name},{},{},{}\n",
                        v as i32 - r,
                        u as i32 - r,
                        column[(v * side + u) * 2 + p]
                    ));
                }
            }
        }
    }
    out
}

/// The files of a bundle directory, for byte-level comparisons.
pub fn bundle_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ClassifierSection, DatasetSection, LayerSection, RunSection};
    use crate::io::synth::{digit_glyphs, write_glyph_dataset, SynthSpec};

    fn tiny_config(manifest: PathBuf) -> PipelineConfig {
        PipelineConfig {
            dataset: DatasetSection {
                manifest,
                refractory_us: 0,
            },
            layers: vec![LayerSection {
                radius: 1,
                tau_us: 10_000.0,
                code_dim: 4,
                strategy: "raw_pool".into(),
                pool_mode: crate::hierarchy::PoolMode::Max,
                pool_window: 1,
                alpha_us: 0.0,
                theta: 0.5,
            }],
            scaling: None,
            autoencoder: crate::config::AutoencoderSection {
                max_surfaces: 3000,
                ..Default::default()
            },
            classifier: ClassifierSection {
                hidden_dim: 16,
                epochs: 8,
                learning_rate: 0.05,
                loss: crate::classifier::MlpLoss::CrossEntropy,
                standardize: false,
            },
            run: RunSection {
                seed: 7,
                workers: 2,
                subsample: 0,
                output_dir: PathBuf::from("out"),
            },
        }
    }

    fn tiny_dataset(dir: &Path, per_class: usize, seed: u64, split: &str) -> PathBuf {
        let glyphs: Vec<_> = digit_glyphs().into_iter().take(3).collect();
        let spec = SynthSpec {
            per_class,
            seed,
            steps: 30,
            step_us: 2000,
            noise_per_step: 1,
            split: split.into(),
            ..SynthSpec::default()
        };
        write_glyph_dataset(dir, &glyphs, &spec).unwrap()
    }

    #[test]
    fn train_save_load_eval_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let train_manifest = tiny_dataset(&tmp.path().join("train"), 4, 11, "train");
        let test_manifest = tiny_dataset(&tmp.path().join("test"), 2, 22, "test");
        let config = tiny_config(train_manifest);
        let bundle = train(&config).unwrap();
        assert_eq!(bundle.encoders.len(), 1);
        assert_eq!(bundle.classes.len(), 3);
        assert_eq!(bundle.autoencoder_reports.len(), 1);

        let bundle_dir = tmp.path().join("bundle");
        save_bundle(&bundle, &bundle_dir).unwrap();
        let loaded = load_bundle(&bundle_dir).unwrap();
        assert_eq!(loaded.encoders[0], bundle.encoders[0]);
        assert_eq!(loaded.mlp, bundle.mlp);

        let direct = evaluate_bundle(&bundle, &test_manifest, None, 2).unwrap();
        let reloaded = evaluate_bundle(&loaded, &test_manifest, None, 1).unwrap();
        assert_eq!(direct.confusion, reloaded.confusion);
        assert_eq!(direct.samples, 6);

        let out = tmp.path().join("reports");
        write_eval_reports(&direct, &out).unwrap();
        assert!(out.join("confusion.txt").exists());
        assert!(out.join("confusion.csv").exists());
        assert!(out.join("summary.txt").exists());
    }

    #[test]
    fn training_is_deterministic_across_runs_and_workers() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(&tmp.path().join("d"), 3, 5, "train");
        let mut config = tiny_config(manifest);
        let a = train(&config).unwrap();
        config.run.workers = 4;
        let b = train(&config).unwrap();
        assert_eq!(a.encoders[0], b.encoders[0]);
        assert_eq!(a.mlp, b.mlp);
        assert_eq!(a.classifier_report, b.classifier_report);
    }

    #[test]
    fn geometry_mismatch_is_a_compat_error() {
        let tmp = tempfile::tempdir().unwrap();
        let train_manifest = tiny_dataset(&tmp.path().join("train"), 2, 1, "train");
        let config = tiny_config(train_manifest);
        let bundle = train(&config).unwrap();

        let other = tmp.path().join("other");
        let spec = SynthSpec {
            geometry: Geometry::new(20, 20),
            per_class: 1,
            steps: 20,
            step_us: 2000,
            split: "test".into(),
            ..SynthSpec::default()
        };
        let glyphs: Vec<_> = digit_glyphs().into_iter().take(3).collect();
        let manifest = write_glyph_dataset(&other, &glyphs, &spec).unwrap();
        let err = evaluate_bundle(&bundle, &manifest, None, 1).unwrap_err();
        assert!(matches!(err, Error::Compat(_)));
    }

    #[test]
    fn bench_reports_positive_throughput() {
        let report = bench(&BenchParams {
            events: 20_000,
            ..BenchParams::default()
        })
        .unwrap();
        assert_eq!(report.events, 20_000);
        assert!(report.events_per_second > 0.0);
        assert!(report.p99_latency_us >= report.mean_latency_us * 0.1);
    }

    #[test]
    fn bench_with_zero_events_does_not_divide_by_zero() {
        let report = bench(&BenchParams {
            events: 0,
            ..BenchParams::default()
        })
        .unwrap();
        assert_eq!(report.events, 0);
        assert_eq!(report.mean_latency_us, 0.0);
        assert_eq!(report.p99_latency_us, 0.0);
    }

    #[test]
    fn feature_grids_render_for_every_channel() {
        let ae = Autoencoder::new(50, 10, crate::autoencoder::Activation::Sigmoid,
            crate::autoencoder::Activation::Sigmoid, 3).unwrap();
        for channel in 0..10 {
            let grid = render_feature_grid(&ae, channel, 2);
            assert!(grid.contains("OFF"));
            assert!(grid.contains("ON"));
            // 2 planes x 5 rows
            assert_eq!(grid.lines().filter(|l| l.starts_with("    ")).count(), 10);
        }
        let csv = feature_grid_csv(&ae, 2);
        assert_eq!(csv.lines().count(), 1 + 10 * 5 * 5 * 2);
    }
}
