//! Experiment orchestration: phantom corpora, dataset synthesis, the
//! four-variant training matrix, held-out evaluation, topology analysis,
//! and the end-to-end reproduction report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homology::{
    betti_curve, complexity_verdict, image_point_cloud, normalized_distances, rips_persistence,
    unit_grid, Barcode, ComplexityReport, DEFAULT_POINT_CAP,
};
use crate::image::{rasterize, Ellipse, EllipsePhantom, Image};
use crate::io::{
    csv_float, load_checkpoint, load_image, save_checkpoint, save_image, save_sinogram,
    sidecar_path, write_atomic, write_csv,
};
use crate::metrics::psnr;
use crate::nn::{build_network, train, History, LearnMode, NetSpec, Sample, TrainConfig};
use crate::tomo::{fbp, project, residual, subsample_views, Geometry};
use crate::tv::{reconstruct_tv, tune_lambda, TvConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Square image size n.
    pub image_size: usize,
    /// Dense reference view count; every ladder entry must divide it.
    pub full_views: usize,
    /// Sparse view counts, ascending.
    pub ladder: Vec<usize>,
    /// Ladder counts whose (input, label) pairs feed training.
    pub train_views: Vec<usize>,
    pub train_phantoms: usize,
    pub test_phantoms: usize,
    /// Size of each point cloud in the topology experiment.
    pub homology_phantoms: usize,
    pub seed: u64,
    pub net: NetSpec,
    pub train: TrainConfig,
    pub tv: TvConfig,
    /// Candidate TV weights for the grid search on a training phantom.
    pub tv_lambda_grid: Vec<f64>,
    /// Epsilon samples for Betti curves.
    pub betti_grid_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            image_size: 128,
            full_views: 1152,
            ladder: vec![24, 32, 48, 96],
            train_views: vec![24, 32],
            train_phantoms: 8,
            test_phantoms: 3,
            homology_phantoms: 32,
            seed: 20240913,
            net: NetSpec {
                stages: 3,
                base_channels: 8,
                multi_scale: true,
                mode: LearnMode::Residual,
            },
            train: TrainConfig::default(),
            tv: TvConfig::default(),
            tv_lambda_grid: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            betti_grid_samples: 65,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() || !self.ladder.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "ladder must be non-empty and ascending".into(),
            ));
        }
        for &m in &self.ladder {
            if m == 0 || self.full_views % m != 0 {
                return Err(Error::InvalidConfig(format!(
                    "ladder count {m} does not divide {} full views",
                    self.full_views
                )));
            }
        }
        if self.train_views.is_empty()
            || !self.train_views.iter().all(|v| self.ladder.contains(v))
        {
            return Err(Error::InvalidConfig(
                "train_views must be a non-empty subset of the ladder".into(),
            ));
        }
        if self.train_phantoms == 0 || self.test_phantoms == 0 {
            return Err(Error::InvalidConfig("need train and test phantoms".into()));
        }
        if self.homology_phantoms < 8 {
            return Err(Error::InvalidConfig(
                "topology experiment needs at least 8 images per cloud".into(),
            ));
        }
        let stride = 1usize << (self.net.stages.max(1) - 1);
        if self.net.multi_scale && self.image_size % stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "image size {} not divisible by 2^(stages-1) = {stride}",
                self.image_size
            )));
        }
        if self.train.patch_size > self.image_size {
            return Err(Error::InvalidConfig("patch larger than image".into()));
        }
        if self.tv_lambda_grid.is_empty() {
            return Err(Error::InvalidConfig("empty TV lambda grid".into()));
        }
        if self.betti_grid_samples < 2 {
            return Err(Error::InvalidConfig("Betti grid needs >= 2 samples".into()));
        }
        self.net.validate()?;
        self.train.validate()?;
        self.tv.validate()
    }

    pub fn sparsest(&self) -> usize {
        self.ladder[0]
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A head-like phantom: a body ellipse shared by the whole corpus (the
/// anatomy every scan has in common), a few large smooth blobs at random
/// positions, and three small sharp features at fixed positions whose
/// common contrast scale varies per phantom.
///
/// The two feature populations play different roles. The large soft blobs
/// dominate image-space variation but project to weak streaks, so they
/// spread the reference images in many directions. The small sharp
/// features are the streak generators; keeping their geometry shared and
/// drawing one log-uniform contrast scale per phantom means each residual
/// is approximately a scaled copy of one shared streak pattern. Because
/// sparse-view streaking is linear in the phantom, the residuals then lie
/// near a one-parameter ray while the images spread out — the corpus-level
/// asymmetry the topology experiment measures.
pub fn random_phantom(rng: &mut ChaCha8Rng) -> EllipsePhantom {
    let mut ellipses = vec![Ellipse {
        center_x: 0.0,
        center_y: 0.0,
        semi_a: 0.85,
        semi_b: 0.75,
        rotation: 0.0,
        value: 1.0,
    }];
    for _ in 0..rng.gen_range(2..=3) {
        ellipses.push(Ellipse {
            center_x: rng.gen_range(-0.35..0.35),
            center_y: rng.gen_range(-0.35..0.35),
            semi_a: rng.gen_range(0.2..0.42),
            semi_b: rng.gen_range(0.2..0.42),
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            value: rng.gen_range(-0.22..0.22),
        });
    }
    let scale = 10f64.powf(rng.gen_range(-0.4..0.35));
    let sharp = [
        (-0.3, 0.2, 0.05, 0.035, 0.4, 1.0),
        (0.25, 0.3, 0.04, 0.06, 1.2, 1.0),
        (0.1, -0.35, 0.06, 0.04, 2.1, -1.0),
    ];
    for &(cx, cy, sa, sb, rot, sign) in &sharp {
        ellipses.push(Ellipse {
            center_x: cx,
            center_y: cy,
            semi_a: sa,
            semi_b: sb,
            rotation: rot,
            value: sign * scale * rng.gen_range(0.95..1.05),
        });
    }
    EllipsePhantom::new(ellipses)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    pub views: usize,
    /// Sparse-view reconstruction (the network input X).
    pub sparse: String,
    /// Streak label Y = sparse minus full reference.
    pub residual: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomEntry {
    pub index: usize,
    pub phantom: EllipsePhantom,
    /// Full-view reference reconstruction.
    pub full: String,
    /// Dense sinogram, kept for reconstruction baselines (test group only).
    pub sinogram: Option<String>,
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: ExperimentConfig,
    /// PSNR peak: maximum reference value across the ground-truth set.
    pub peak: f64,
    pub train: Vec<PhantomEntry>,
    pub test: Vec<PhantomEntry>,
    pub homology: Vec<PhantomEntry>,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("dataset").join("manifest.json")
}

pub fn load_manifest(out: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(out);
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

struct GroupSpec<'a> {
    name: &'a str,
    count: usize,
    view_counts: &'a [usize],
    keep_sinogram: bool,
}

/// Synthesize the full dataset: per phantom a dense reference plus
/// (sparse input, residual label) pairs at the requested view counts.
pub fn build_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let n = cfg.image_size;
    let geom = Geometry::standard(n, cfg.full_views);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let groups = [
        GroupSpec {
            name: "train",
            count: cfg.train_phantoms,
            view_counts: &cfg.ladder,
            keep_sinogram: false,
        },
        GroupSpec {
            name: "test",
            count: cfg.test_phantoms,
            view_counts: &cfg.ladder,
            keep_sinogram: true,
        },
        GroupSpec {
            name: "homology",
            count: cfg.homology_phantoms,
            view_counts: &cfg.ladder[..1],
            keep_sinogram: false,
        },
    ];

    let mut peak = f64::NEG_INFINITY;
    let mut seen = std::collections::BTreeSet::new();
    let mut built: Vec<Vec<PhantomEntry>> = Vec::new();
    let mut index = 0usize;
    for group in &groups {
        let mut entries = Vec::new();
        for _ in 0..group.count {
            let phantom = random_phantom(&mut rng);
            // phantom-level disjointness across every group
            let key = serde_json::to_string(&phantom)?;
            if !seen.insert(key) {
                return Err(Error::InvalidConfig(
                    "duplicate phantom generated; change the seed".into(),
                ));
            }
            let dir = out.join("dataset").join(group.name).join(format!("ph{index:03}"));
            let img = rasterize(&phantom, n)?;
            let sino = project(&img, &geom)?;
            let full = fbp(&sino, n)?;
            peak = peak.max(full.data().iter().cloned().fold(f64::MIN, f64::max));
            let full_rel = rel(&dir.join("full.bin"), out)?;
            save_image(&dir.join("full.bin"), &full)?;
            let sinogram = if group.keep_sinogram {
                save_sinogram(&dir.join("full_sino.bin"), &sino)?;
                Some(rel(&dir.join("full_sino.bin"), out)?)
            } else {
                None
            };
            let mut pairs = Vec::new();
            for &m in group.view_counts {
                let sub = subsample_views(&sino, m)?;
                let sparse = fbp(&sub, n)?;
                let label = residual(&sparse, &full)?;
                let sdir = dir.join(format!("v{m:04}"));
                save_image(&sdir.join("sparse.bin"), &sparse)?;
                save_image(&sdir.join("residual.bin"), &label)?;
                pairs.push(PairEntry {
                    views: m,
                    sparse: rel(&sdir.join("sparse.bin"), out)?,
                    residual: rel(&sdir.join("residual.bin"), out)?,
                });
            }
            entries.push(PhantomEntry {
                index,
                phantom,
                full: full_rel,
                sinogram,
                pairs,
            });
            index += 1;
        }
        built.push(entries);
    }
    let mut it = built.into_iter();
    let manifest = DatasetManifest {
        config: cfg.clone(),
        peak,
        train: it.next().unwrap(),
        test: it.next().unwrap(),
        homology: it.next().unwrap(),
    };
    write_json(&manifest_path(out), &manifest)?;
    Ok(manifest)
}

fn rel(path: &Path, out: &Path) -> Result<String> {
    path.strip_prefix(out)
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .map_err(|_| Error::InvalidConfig("artifact escapes the output directory".into()))
}

fn load_rel(out: &Path, rel: &str) -> Result<Image> {
    load_image(&out.join(rel))
}

/// Training samples: (sparse input, dense reference) for every train
/// phantom at each requested view count.
pub fn load_training_samples(
    manifest: &DatasetManifest,
    out: &Path,
    view_counts: &[usize],
) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for entry in &manifest.train {
        let reference = load_rel(out, &entry.full)?;
        for pair in &entry.pairs {
            if view_counts.contains(&pair.views) {
                samples.push(Sample {
                    input: load_rel(out, &pair.sparse)?,
                    reference: reference.clone(),
                });
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::MissingArtifact("no training pairs matched".into()));
    }
    Ok(samples)
}

fn held_out_samples(manifest: &DatasetManifest, out: &Path, views: usize) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for entry in &manifest.test {
        let reference = load_rel(out, &entry.full)?;
        let pair = entry
            .pairs
            .iter()
            .find(|p| p.views == views)
            .ok_or_else(|| Error::MissingArtifact(format!("test pair at {views} views")))?;
        samples.push(Sample {
            input: load_rel(out, &pair.sparse)?,
            reference,
        });
    }
    Ok(samples)
}

/// The four ablation variants: (mode, multi-scale) in a fixed order.
pub const VARIANTS: [(LearnMode, bool, &str); 4] = [
    (LearnMode::Residual, true, "residual_multi"),
    (LearnMode::Image, true, "image_multi"),
    (LearnMode::Residual, false, "residual_single"),
    (LearnMode::Image, false, "image_single"),
];

pub fn variant_name(mode: LearnMode, multi: bool) -> &'static str {
    VARIANTS
        .iter()
        .find(|(m, s, _)| *m == mode && *s == multi)
        .map(|(_, _, n)| *n)
        .expect("variant table covers all combinations")
}

pub fn checkpoint_path(out: &Path, name: &str) -> PathBuf {
    out.join("models").join(format!("{name}.ckpt"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub name: String,
    pub checkpoint: String,
    pub history_csv: String,
    pub final_val_psnr: Option<f64>,
}

/// Train one (mode, scale) variant against the on-disk dataset.
pub fn train_variant(
    cfg: &ExperimentConfig,
    out: &Path,
    mode: LearnMode,
    multi: bool,
) -> Result<TrainOutcome> {
    let manifest = load_manifest(out)?;
    let samples = load_training_samples(&manifest, out, &cfg.train_views)?;
    let val = held_out_samples(&manifest, out, cfg.sparsest())?;
    let spec = NetSpec {
        multi_scale: multi,
        mode,
        ..cfg.net
    };
    let name = variant_name(mode, multi);
    let mut net = build_network(&spec, cfg.seed)?;
    let train_cfg = TrainConfig {
        val_peak: manifest.peak,
        ..cfg.train
    };
    let history = train(&mut net, &samples, &val, &train_cfg)?;
    let ckpt = checkpoint_path(out, name);
    save_checkpoint(&ckpt, &mut net)?;
    let csv = out.join("models").join(format!("{name}_history.csv"));
    write_history_csv(&csv, &history)?;
    Ok(TrainOutcome {
        name: name.to_string(),
        checkpoint: rel(&ckpt, out)?,
        history_csv: rel(&csv, out)?,
        final_val_psnr: history.final_val_psnr(),
    })
}

fn write_history_csv(path: &Path, history: &History) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                csv_float(e.lr),
                csv_float(e.train_loss),
                e.val_psnr.map(csv_float).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(path, &["epoch", "lr", "train_loss", "val_psnr"], &rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub views: usize,
    pub phantom: usize,
    pub psnr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub peak: f64,
    pub tv_lambda: f64,
    pub rows: Vec<EvalRow>,
    /// (method, views) -> mean PSNR over test phantoms.
    pub averages: Vec<(String, usize, f64)>,
}

impl MetricReport {
    pub fn average(&self, method: &str, views: usize) -> Option<f64> {
        self.averages
            .iter()
            .find(|(m, v, _)| m == method && *v == views)
            .map(|(_, _, p)| *p)
    }
}

/// Evaluate FBP, TV, and every trained variant on the held-out phantoms at
/// every ladder view count. Timing columns are only emitted when
/// `record_timing` is set, keeping deterministic runs byte-stable.
pub fn evaluate(cfg: &ExperimentConfig, out: &Path, record_timing: bool) -> Result<MetricReport> {
    let manifest = load_manifest(out)?;
    let n = cfg.image_size;
    let peak = manifest.peak;

    // TV weight tuned once, on a training phantom at the sparsest count
    let tune_entry = manifest
        .train
        .first()
        .ok_or_else(|| Error::MissingArtifact("train group".into()))?;
    let tune_ref = load_rel(out, &tune_entry.full)?;
    let tune_img = rasterize(&tune_entry.phantom, n)?;
    let tune_sino = subsample_views(
        &project(&tune_img, &Geometry::standard(n, cfg.full_views))?,
        cfg.sparsest(),
    )?;
    let (tv_lambda, _) = tune_lambda(
        &tune_sino,
        n,
        &tune_ref,
        peak,
        &cfg.tv_lambda_grid,
        &cfg.tv,
    )?;
    let tv_cfg = TvConfig {
        lambda_tv: tv_lambda,
        ..cfg.tv.clone()
    };

    let mut nets = Vec::new();
    for (_, _, name) in &VARIANTS {
        let path = checkpoint_path(out, name);
        if path.exists() {
            nets.push((name.to_string(), load_checkpoint(&path)?));
        }
    }

    let mut rows = Vec::new();
    for entry in &manifest.test {
        let reference = load_rel(out, &entry.full)?;
        let img = rasterize(&entry.phantom, n)?;
        let sino = project(&img, &Geometry::standard(n, cfg.full_views))?;
        for &m in &cfg.ladder {
            let sub = subsample_views(&sino, m)?;
            let t0 = Instant::now();
            let sparse = fbp(&sub, n)?;
            let fbp_secs = t0.elapsed().as_secs_f64();
            rows.push(EvalRow {
                method: "fbp".into(),
                views: m,
                phantom: entry.index,
                psnr: psnr(&sparse, &reference, peak)?,
                seconds: fbp_secs,
            });

            let t0 = Instant::now();
            let (tv_img, _) = reconstruct_tv(&sub, n, &tv_cfg)?;
            rows.push(EvalRow {
                method: "tv".into(),
                views: m,
                phantom: entry.index,
                psnr: psnr(&tv_img, &reference, peak)?,
                seconds: t0.elapsed().as_secs_f64(),
            });

            for (name, net) in nets.iter_mut() {
                let t0 = Instant::now();
                let restored = net.infer(&sparse)?;
                rows.push(EvalRow {
                    method: name.clone(),
                    views: m,
                    phantom: entry.index,
                    psnr: psnr(&restored, &reference, peak)?,
                    seconds: t0.elapsed().as_secs_f64(),
                });
            }
        }
    }

    let mut sums: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = sums.entry((r.method.clone(), r.views)).or_insert((0.0, 0));
        e.0 += r.psnr;
        e.1 += 1;
    }
    let averages: Vec<(String, usize, f64)> = sums
        .into_iter()
        .map(|((m, v), (s, c))| (m, v, s / c as f64))
        .collect();

    let report = MetricReport {
        peak,
        tv_lambda,
        rows,
        averages,
    };
    write_eval_outputs(&report, out, record_timing)?;
    Ok(report)
}

fn write_eval_outputs(report: &MetricReport, out: &Path, record_timing: bool) -> Result<()> {
    let dir = out.join("eval");
    let metric_rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.views.to_string(),
                r.phantom.to_string(),
                csv_float(r.psnr),
            ]
        })
        .collect();
    write_csv(
        &dir.join("metrics.csv"),
        &["method", "views", "phantom", "psnr_db"],
        &metric_rows,
    )?;
    let avg_rows: Vec<Vec<String>> = report
        .averages
        .iter()
        .map(|(m, v, p)| vec![m.clone(), v.to_string(), csv_float(*p)])
        .collect();
    write_csv(
        &dir.join("averages.csv"),
        &["method", "views", "mean_psnr_db"],
        &avg_rows,
    )?;
    if record_timing {
        let timing_rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.views.to_string(),
                    r.phantom.to_string(),
                    csv_float(r.seconds),
                ]
            })
            .collect();
        write_csv(
            &dir.join("timings.csv"),
            &["method", "views", "phantom", "seconds"],
            &timing_rows,
        )?;
    }
    write_atomic(dir.join("table.md").as_path(), eval_table_md(report).as_bytes())
}

/// Markdown grid of mean PSNR: one row per method, one column per view count.
pub fn eval_table_md(report: &MetricReport) -> String {
    let mut views: Vec<usize> = report.averages.iter().map(|(_, v, _)| *v).collect();
    views.sort_unstable();
    views.dedup();
    let mut methods: Vec<String> = report.averages.iter().map(|(m, _, _)| m.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut md = String::from("| method |");
    for v in &views {
        md.push_str(&format!(" {v} views |"));
    }
    md.push('\n');
    md.push_str("|---|");
    md.push_str(&"---|".repeat(views.len()));
    md.push('\n');
    for m in &methods {
        md.push_str(&format!("| {m} |"));
        for v in &views {
            match report.average(m, *v) {
                Some(p) => md.push_str(&format!(" {p:.3} |")),
                None => md.push_str(" - |"),
            }
        }
        md.push('\n');
    }
    md
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomologyOutcome {
    pub report: ComplexityReport,
    /// true when the residual cloud is the topologically simpler one
    pub residual_simpler: bool,
    pub h1_total_persistence_full: f64,
    pub h1_total_persistence_residual: f64,
}

/// The paper-analog topology experiment: compare the manifold of dense
/// reference images against the manifold of residual (streak) labels.
pub fn homology_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<HomologyOutcome> {
    let manifest = load_manifest(out)?;
    if manifest.homology.len() < 8 {
        return Err(Error::InvalidSize(format!(
            "topology experiment needs >= 8 images per cloud, got {}",
            manifest.homology.len()
        )));
    }
    let mut fulls = Vec::new();
    let mut residuals = Vec::new();
    for entry in &manifest.homology {
        fulls.push(load_rel(out, &entry.full)?);
        let pair = entry
            .pairs
            .first()
            .ok_or_else(|| Error::MissingArtifact("homology residual pair".into()))?;
        residuals.push(load_rel(out, &pair.residual)?);
    }
    let grid = unit_grid(cfg.betti_grid_samples);
    let (full_bars, full_curves) = cloud_barcodes(&fulls, &grid)?;
    let (res_bars, res_curves) = cloud_barcodes(&residuals, &grid)?;
    let h1_full = full_bars[1].total_persistence();
    let h1_res = res_bars[1].total_persistence();
    let report = complexity_verdict(&full_curves, &res_curves, h1_full, h1_res)?;
    let residual_simpler = matches!(report.verdict, crate::homology::Verdict::SecondSimpler);

    let dir = out.join("homology");
    write_barcode_csv(&dir.join("barcodes_full.csv"), &full_bars)?;
    write_barcode_csv(&dir.join("barcodes_residual.csv"), &res_bars)?;
    let betti_rows: Vec<Vec<String>> = grid
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            vec![
                csv_float(eps),
                full_curves[0].values[i].to_string(),
                full_curves[1].values[i].to_string(),
                res_curves[0].values[i].to_string(),
                res_curves[1].values[i].to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("betti.csv"),
        &[
            "epsilon",
            "beta0_full",
            "beta1_full",
            "beta0_residual",
            "beta1_residual",
        ],
        &betti_rows,
    )?;
    let outcome = HomologyOutcome {
        report,
        residual_simpler,
        h1_total_persistence_full: h1_full,
        h1_total_persistence_residual: h1_res,
    };
    write_json(&dir.join("verdict.json"), &outcome)?;
    Ok(outcome)
}

fn cloud_barcodes(
    images: &[Image],
    grid: &[f64],
) -> Result<(Vec<Barcode>, Vec<crate::homology::BettiCurve>)> {
    let cloud = image_point_cloud(images)?;
    let dm = normalized_distances(&cloud)?;
    let bars = rips_persistence(&dm, DEFAULT_POINT_CAP)?;
    let curves = betti_curve(&bars, grid);
    Ok((bars, curves))
}

fn write_barcode_csv(path: &Path, bars: &[Barcode]) -> Result<()> {
    let mut rows = Vec::new();
    for bc in bars {
        for &(birth, death) in &bc.intervals {
            rows.push(vec![
                bc.dimension.to_string(),
                csv_float(birth),
                csv_float(death),
            ]);
        }
    }
    write_csv(path, &["dimension", "birth", "death"], &rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproduceOutcome {
    pub report_md: String,
    pub trainings: Vec<TrainOutcome>,
    pub homology: HomologyOutcome,
    pub metrics: MetricReport,
    pub artifacts: Vec<String>,
}

/// End-to-end run: dataset, topology experiment, the 4-variant training
/// matrix, evaluation, and a single Markdown report tying them together.
pub fn reproduce(cfg: &ExperimentConfig, out: &Path, record_timing: bool) -> Result<ReproduceOutcome> {
    let t0 = Instant::now();
    let manifest = build_dataset(cfg, out)?;
    let homology = homology_experiment(cfg, out)?;
    let mut trainings = Vec::new();
    for (mode, multi, _) in &VARIANTS {
        trainings.push(train_variant(cfg, out, *mode, *multi)?);
    }
    let metrics = evaluate(cfg, out, record_timing)?;

    let mut artifacts = vec![rel(&manifest_path(out), out)?];
    for group in [&manifest.train, &manifest.test, &manifest.homology] {
        for entry in group {
            artifacts.push(entry.full.clone());
            if let Some(s) = &entry.sinogram {
                artifacts.push(s.clone());
            }
            for p in &entry.pairs {
                artifacts.push(p.sparse.clone());
                artifacts.push(p.residual.clone());
            }
        }
    }
    for t in &trainings {
        artifacts.push(t.checkpoint.clone());
        artifacts.push(t.history_csv.clone());
    }
    for name in [
        "homology/barcodes_full.csv",
        "homology/barcodes_residual.csv",
        "homology/betti.csv",
        "homology/verdict.json",
        "eval/metrics.csv",
        "eval/averages.csv",
        "eval/table.md",
    ] {
        artifacts.push(name.to_string());
    }
    if record_timing {
        artifacts.push("eval/timings.csv".to_string());
    }

    let mut md = String::new();
    md.push_str("# Sparse-view reconstruction report\n\n");
    md.push_str(&format!(
        "Image size {}, full views {}, ladder {:?}, train/test/homology phantoms {}/{}/{}.\n\n",
        cfg.image_size,
        cfg.full_views,
        cfg.ladder,
        cfg.train_phantoms,
        cfg.test_phantoms,
        cfg.homology_phantoms
    ));
    md.push_str("## Topology of the two manifolds\n\n");
    md.push_str(&format!(
        "Verdict: {}. beta_0 area full vs residual: {:.4} / {:.4}; H1 total persistence: {:.4} / {:.4}.\n\n",
        if homology.residual_simpler {
            "residual simpler"
        } else {
            "not conclusive"
        },
        homology.report.beta0_area[0],
        homology.report.beta0_area[1],
        homology.h1_total_persistence_full,
        homology.h1_total_persistence_residual,
    ));
    md.push_str("## Training\n\n| variant | final val PSNR (dB) |\n|---|---|\n");
    for t in &trainings {
        md.push_str(&format!(
            "| {} | {} |\n",
            t.name,
            t.final_val_psnr
                .map(|p| format!("{p:.3}"))
                .unwrap_or_else(|| "-".into())
        ));
    }
    md.push_str("\n## Held-out PSNR by method and view count\n\n");
    md.push_str(&eval_table_md(&metrics));
    md.push_str(&format!("\nTV weight (grid-tuned): {:.6}\n", metrics.tv_lambda));
    if record_timing {
        md.push_str(&format!(
            "\nTotal wall-clock: {:.1} s (see eval/timings.csv for per-reconstruction times).\n",
            t0.elapsed().as_secs_f64()
        ));
    }
    let report_path = out.join("report.md");
    write_atomic(&report_path, md.as_bytes())?;
    artifacts.push(rel(&report_path, out)?);
    // sidecars accompany every binary artifact
    let mut all = artifacts.clone();
    for a in &artifacts {
        if a.ends_with(".bin") || a.ends_with(".ckpt") {
            all.push(rel(&sidecar_path(&out.join(a)), out)?);
        }
    }
    all.sort();
    all.dedup();
    write_json(&out.join("manifest.json"), &all)?;
    Ok(ReproduceOutcome {
        report_md: rel(&report_path, out)?,
        trainings,
        homology,
        metrics,
        artifacts: all,
    })
}
