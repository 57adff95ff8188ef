//! The five subcommands. Each returns the lines it reports on stdout.
//!
//! Work is spread over (seed, network) cells with rayon; results are
//! gathered in cell order before anything is written, so parallel and
//! serial runs emit identical files.

use std::fs;
use std::path::{Path, PathBuf};

use binsight::analysis::{
    amplification_profile, noise_sweep, optimal_noise, pearson_values, randomization_sanity, spearman_values,
    total_variation, total_variation_values,
};
use binsight::data::read_idx_images;
use binsight::rng::SplitMix64;
use binsight::saliency::saliency_map;
use binsight::{Network32, SaliencyMap32, Tensor32};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, MethodName, NetKind};
use crate::error::CliError;
use crate::experiment::{
    check_input, create_dir, load_pair, model_path, predict_one, read_model_file, write_model_file, Experiment,
};
use crate::netpbm::{gray_from_unit, overlay, Image};
use crate::results::{write_csv, ResultRow};

/// Files written by a command, removed again if the command fails.
#[derive(Default)]
struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn bytes(&mut self, path: PathBuf, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(&path, bytes).map_err(|e| CliError::from_io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn csv(&mut self, path: PathBuf, rows: &[ResultRow]) -> Result<(), CliError> {
        write_csv(&path, rows)?;
        self.written.push(path);
        Ok(())
    }

    fn model(&mut self, path: PathBuf, net: &Network32) -> Result<(), CliError> {
        write_model_file(&path, net)?;
        self.written.push(path);
        Ok(())
    }

    fn image(&mut self, path: PathBuf, img: &Image) -> Result<(), CliError> {
        self.bytes(path, &img.encode())
    }

    fn discard(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn write_all<F>(f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Outputs) -> Result<(), CliError>,
{
    let mut out = Outputs::default();
    let res = f(&mut out);
    if res.is_err() {
        out.discard();
    }
    res
}

fn cells(seeds: &[u64]) -> Vec<(u64, NetKind)> {
    seeds
        .iter()
        .flat_map(|&s| NetKind::BOTH.map(|k| (s, k)))
        .collect()
}

fn join_params(parts: &[String]) -> String {
    parts.iter().filter(|p| !p.is_empty()).cloned().collect::<Vec<_>>().join(";")
}

/// Seed for the re-initialized weights of the randomization check, kept
/// apart from the initialization stream of `seed`.
pub fn reinit_seed(seed: u64) -> u64 {
    SplitMix64::substream(seed, 1 << 32).next_u64()
}

pub fn models_dir(cfg: &ExperimentConfig, models: Option<&Path>) -> PathBuf {
    models.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("models"))
}

fn map_image(map: &SaliencyMap32) -> Image {
    gray_from_unit(map.width(), map.height(), &map.to_f64())
}

pub fn cmd_train(cfg: ExperimentConfig) -> Result<Vec<String>, CliError> {
    let exp = Experiment::load(cfg)?;
    let trained = cells(&exp.cfg.seeds)
        .par_iter()
        .map(|&(seed, kind)| exp.train_one(kind, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut report = Vec::new();
    for t in &trained {
        let name = t.kind.name();
        for (e, (&acc, &loss)) in t.history.accuracy.iter().zip(&t.history.loss).enumerate() {
            let params = format!("epoch={}", e + 1);
            rows.push(ResultRow::new(t.seed, name, "train", params.clone(), "train_accuracy", acc));
            rows.push(ResultRow::new(t.seed, name, "train", params, "train_loss", loss));
        }
        rows.push(ResultRow::new(t.seed, name, "train", "split=test", "test_accuracy", t.test_accuracy));
        report.push(format!("seed {} {name}: test accuracy {:.4}", t.seed, t.test_accuracy));
    }

    let out_dir = exp.cfg.out_dir.clone();
    let dir = out_dir.join("models");
    create_dir(&dir)?;
    write_all(|out| {
        for t in &trained {
            out.model(model_path(&dir, t.seed, t.kind), &t.net)?;
        }
        out.csv(out_dir.join("train.csv"), &rows)
    })?;
    Ok(report)
}

pub struct SaliencyArgs {
    pub model: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub image: Option<usize>,
    pub image_file: Option<PathBuf>,
    pub method: Option<MethodName>,
}

pub fn cmd_saliency(mut cfg: ExperimentConfig, args: SaliencyArgs) -> Result<Vec<String>, CliError> {
    if let Some(i) = args.image {
        cfg.saliency.image = i;
    }
    let method_name = args.method.unwrap_or(cfg.saliency.method);
    let exp = Experiment::load(cfg)?;
    let cfg = &exp.cfg;

    let (image, label, image_tag) = match &args.image_file {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::MissingInput(path.clone()));
            }
            (first_idx_image(path)?, None, "file".to_string())
        }
        None => {
            let (img, label) = exp.test_image(cfg.saliency.image)?;
            (img, Some(label), cfg.saliency.image.to_string())
        }
    };
    let [channels, height, width] = match *image.shape() {
        [c, h, w] => [c, h, w],
        ref s => return Err(CliError::Shape(format!("image has shape {s:?}"))),
    };
    let image_shape = [channels, height, width];

    let targets: Vec<(u64, NetKind, Network32)> = match &args.model {
        Some(path) => {
            let net = read_model_file(path)?;
            check_input(&net, image_shape, path)?;
            vec![(net.seed(), NetKind::of_def(net.def()), net)]
        }
        None => load_all_pairs(cfg, args.models.as_deref(), image_shape)?,
    };

    let maps = targets
        .par_iter()
        .map(|(seed, _, net)| {
            let class = predict_one(net, &image)?;
            let method = cfg.saliency.map_method(method_name, *seed);
            Ok((class, saliency_map(net, &image, class, &method)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let dir = cfg.out_dir.join("saliency");
    create_dir(&dir)?;
    let mut rows = Vec::new();
    let mut report = Vec::new();
    let pixels = image.cast::<f64>().into_data();
    write_all(|out| {
        for ((seed, kind, _), (class, map)) in targets.iter().zip(&maps) {
            let stem = format!("{}-seed{seed}-{}-img{image_tag}", kind.name(), map.method.name());
            out.image(dir.join(format!("{stem}.pgm")), &map_image(map))?;
            if cfg.saliency.overlay && (channels == 1 || channels == 3) {
                let img = overlay(width, height, &pixels, channels, &map.to_f64());
                out.image(dir.join(format!("{stem}.ppm")), &img)?;
            }
            let params = join_params(&[
                map.method.params_string(),
                format!("image={image_tag}"),
                format!("class={class}"),
            ]);
            let m = map.method.name();
            let name = kind.name();
            rows.push(ResultRow::new(*seed, name, m, params.clone(), "predicted_class", *class as f64));
            if let Some(label) = label {
                let correct = usize::from(*class == label);
                rows.push(ResultRow::new(*seed, name, m, params.clone(), "correct", correct as f64));
            }
            rows.push(ResultRow::new(*seed, name, m, params.clone(), "blank", f64::from(u8::from(map.all_zero))));
            rows.push(ResultRow::new(*seed, name, m, params, "total_variation", total_variation(map)));
            report.push(format!(
                "seed {seed} {name} {m}: class {class}{}{} -> {stem}.pgm",
                match label {
                    Some(l) if l == *class => " (correct)",
                    Some(_) => " (incorrect)",
                    None => "",
                },
                if map.all_zero { " [blank]" } else { "" },
            ));
        }
        out.csv(cfg.out_dir.join("saliency.csv"), &rows)
    })?;
    Ok(report)
}

fn load_all_pairs(
    cfg: &ExperimentConfig,
    models: Option<&Path>,
    shape: [usize; 3],
) -> Result<Vec<(u64, NetKind, Network32)>, CliError> {
    let dir = models_dir(cfg, models);
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        for (kind, net) in load_pair(&dir, seed, shape)? {
            all.push((seed, kind, net));
        }
    }
    Ok(all)
}

pub fn cmd_sweep(cfg: ExperimentConfig, models: Option<&Path>) -> Result<Vec<String>, CliError> {
    let exp = Experiment::load(cfg)?;
    let cfg = &exp.cfg;
    let nets = load_all_pairs(cfg, models, exp.train.image_shape())?;
    let (image, _) = exp.test_image(cfg.saliency.image)?;
    let levels = &cfg.saliency.noise_levels;
    let n = cfg.saliency.n_samples;

    let sweeps = nets
        .par_iter()
        .map(|(seed, _, net)| {
            let class = predict_one(net, &image)?;
            let sweep = noise_sweep(net, &image, class, levels, n, *seed)?;
            let best = optimal_noise(&sweep)?;
            Ok((class, sweep, best))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let dir = cfg.out_dir.join("sweep");
    create_dir(&dir)?;
    let mut rows = Vec::new();
    let mut report = Vec::new();
    write_all(|out| {
        for ((seed, kind, _), (class, sweep, best)) in nets.iter().zip(&sweeps) {
            let name = kind.name();
            let tail = format!("image={};class={class}", cfg.saliency.image);
            for row in &sweep.rows {
                let params = join_params(&[row.map.method.params_string(), tail.clone()]);
                rows.push(ResultRow::new(*seed, name, "smoothgrad", params.clone(), "total_variation", row.total_variation));
                for (metric, c) in [("pearson", row.pearson), ("spearman", row.spearman)] {
                    let p = if c.degenerate { format!("{params};degenerate=1") } else { params.clone() };
                    rows.push(ResultRow::new(*seed, name, "smoothgrad", p, metric, c.value));
                }
                let file = dir.join(format!("{name}-seed{seed}-noise{}.pgm", row.level));
                out.image(file, &map_image(&row.map))?;
            }
            let params = format!("n={n};seed={seed};criterion=min_total_variation;{tail}");
            rows.push(ResultRow::new(*seed, name, "smoothgrad", params, "optimal_noise", *best));
            report.push(format!("seed {seed} {name}: optimal noise {best}"));
        }
        out.csv(cfg.out_dir.join("sweep.csv"), &rows)
    })?;
    Ok(report)
}

pub fn cmd_probe(cfg: ExperimentConfig, models: Option<&Path>) -> Result<Vec<String>, CliError> {
    let exp = Experiment::load(cfg)?;
    let cfg = &exp.cfg;
    let nets = load_all_pairs(cfg, models, exp.train.image_shape())?;
    let (image, _) = exp.test_image(cfg.saliency.image)?;
    let delta = cfg.probe.delta_scale;

    let results = nets
        .par_iter()
        .map(|(seed, _, net)| {
            let profile = amplification_profile(net, &image, delta, *seed)?;
            let class = predict_one(net, &image)?;
            let sanity = MethodName::ALL
                .iter()
                .map(|&m| {
                    let method = cfg.saliency.map_method(m, *seed);
                    Ok((method, randomization_sanity(net, &image, class, &method, reinit_seed(*seed))?))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok((class, profile, sanity))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut amp_rows = Vec::new();
    let mut sanity_rows = Vec::new();
    let mut report = Vec::new();
    for ((seed, kind, net), (class, profile, sanity)) in nets.iter().zip(&results) {
        let name = kind.name();
        for (i, ratio) in profile.ratios.iter().enumerate() {
            let params = format!("layer={i};kind={};delta={delta}", net.def().layers[i].kind_name());
            amp_rows.push(ResultRow::new(*seed, name, "amplification", params, "ratio", *ratio));
        }
        report.push(format!(
            "seed {seed} {name}: final-layer amplification {:.4}",
            profile.ratios.last().copied().unwrap_or(0.0)
        ));
        for (method, stages) in sanity {
            for st in stages {
                let layer = st.layer.map_or("none".to_string(), |l| l.to_string());
                let params = join_params(&[
                    format!("randomized={};layer={layer}", st.randomized),
                    method.params_string(),
                    format!("image={};class={class}", cfg.saliency.image),
                ]);
                sanity_rows.push(ResultRow::new(*seed, name, method.name(), params, "spearman", st.spearman.value));
            }
            if let Some(last) = stages.last() {
                report.push(format!(
                    "seed {seed} {name} {}: spearman after full randomization {:.4}",
                    method.name(),
                    last.spearman.value
                ));
            }
        }
    }
    create_dir(&cfg.out_dir)?;
    write_all(|out| {
        out.csv(cfg.out_dir.join("amplification.csv"), &amp_rows)?;
        out.csv(cfg.out_dir.join("sanity.csv"), &sanity_rows)
    })?;
    Ok(report)
}

/// Similarity of two gray maps.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub pearson: f64,
    pub pearson_degenerate: bool,
    pub spearman: f64,
    pub tv_a: f64,
    pub tv_b: f64,
    pub diff: Image,
}

fn read_gray(path: &Path) -> Result<Image, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingInput(path.to_path_buf()));
    }
    let img = Image::read(path).map_err(|source| CliError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if img.channels != 1 {
        return Err(CliError::Config(format!("{} is not a gray (P5) map", path.display())));
    }
    Ok(img)
}

pub fn compare_maps(a: &Image, b: &Image) -> Result<CompareReport, CliError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(CliError::Shape(format!(
            "maps are {}×{} and {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (va, vb) = (a.unit_values(), b.unit_values());
    let p = pearson_values(&va, &vb)?;
    let s = spearman_values(&va, &vb)?;
    let diff = a.data.iter().zip(&b.data).map(|(x, y)| x.abs_diff(*y)).collect();
    Ok(CompareReport {
        pearson: p.value,
        pearson_degenerate: p.degenerate,
        spearman: s.value,
        tv_a: total_variation_values(&va, a.height, a.width),
        tv_b: total_variation_values(&vb, b.height, b.width),
        diff: Image::gray(a.width, a.height, diff),
    })
}

pub fn cmd_compare(a: &Path, b: &Path, out_dir: &Path) -> Result<Vec<String>, CliError> {
    let report = compare_maps(&read_gray(a)?, &read_gray(b)?)?;
    create_dir(out_dir)?;
    let diff_path = out_dir.join("diff.pgm");
    write_all(|out| out.image(diff_path.clone(), &report.diff))?;
    Ok(vec![
        format!(
            "pearson {}{}",
            report.pearson,
            if report.pearson_degenerate { " (degenerate)" } else { "" }
        ),
        format!("spearman {}", report.spearman),
        format!("tv_a {}", report.tv_a),
        format!("tv_b {}", report.tv_b),
        format!("diff {}", diff_path.display()),
    ])
}

/// First image of an IDX image file, as C×H×W.
fn first_idx_image(path: &Path) -> Result<Tensor32, CliError> {
    let images = read_idx_images::<f32>(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(images.outer(0)?)
}
