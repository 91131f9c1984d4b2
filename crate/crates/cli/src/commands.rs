//! The four subcommands. Each resolves its settings, runs the pipeline
//! stages with timing, and writes its outputs.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use masc::detections::{format_labels, format_labels_in, Detection, DEFAULT_CONF_THRESH, DEFAULT_IOU_THRESH};
use masc::evaluation::{join_and_eval, read_counts_csv, EvalError, EvalResult};
use masc::geometry::BBox;
use masc::layout::{FieldMode, LayoutConfig};
use masc::mosaic::{
    patchify, run_mosaic_mode, ClassicalProvider, DetectionProvider, LabelDirProvider, MergeConfig, MosaicConfig,
    MosaicRun, DEFAULT_OVERLAP, DEFAULT_PATCH_SIZE, MIN_PATCH_SIZE,
};
use masc::orientation::AngleEstimate;
use masc::pipeline::{count_stage, CountingConfig, CountingResult, OrientationSource};
use masc::raster::io::{read_rgb, write_gray, write_rgb};
use masc::raster::{classical_detect_staged, exg, ClassicalConfig, RgbImage};
use masc::rawframe::{
    canvas_for, consensus, cumulative_chain, load_frame_dir, load_frame_image, project_all, render_mosaic,
    FrameDirOptions, DEFAULT_PIXEL_BUDGET,
};
use masc::synth::{generate_field, generate_flight, patch_labels, write_dataset, FieldSpec, FlightSpec};

use crate::config::{unit_interval, ConfigFile, CountRange, Dims};
use crate::overlay::render_overlay;
use crate::{CliError, CountArgs, EvalArgs, MosaicArgs, RawArgs, SynthArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Classical,
    LabelsDir,
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classical" => Ok(ProviderKind::Classical),
            "labels-dir" | "labels_dir" => Ok(ProviderKind::LabelsDir),
            other => Err(format!("unknown provider {other:?} (expected classical or labels-dir)")),
        }
    }
}

/// Result of a `mosaic` or `raw` run.
#[derive(Debug, Clone)]
pub struct CountOutcome {
    pub out_dir: PathBuf,
    /// Merged detections in global coordinates.
    pub detections: Vec<Detection>,
    /// Global frame the counting stage ran in.
    pub extent: BBox,
    pub counting: CountingResult,
    /// Wall-clock seconds per stage, in run order.
    pub timings: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub out_dir: PathBuf,
    pub result: EvalResult,
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub out_dir: PathBuf,
    pub plants: u64,
    pub rows: usize,
    pub frames: usize,
}

#[derive(Default)]
struct Timer {
    stages: Vec<(&'static str, f64)>,
}

impl Timer {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        log::info!("stage {stage}: {:.1} ms", secs * 1e3);
        self.stages.push((stage, secs));
        out
    }
}

/// Settings shared by the counting commands after merging flags and file.
struct CountSettings {
    out_dir: PathBuf,
    iou: f64,
    conf: f64,
    counting: CountingConfig,
    theta: Option<f64>,
    threads: usize,
    overlay: bool,
    dump_stages: bool,
}

fn resolve_count(args: &CountArgs, file: &ConfigFile) -> Result<CountSettings, CliError> {
    let iou = unit_interval("iou", file.get(args.iou, "iou", DEFAULT_IOU_THRESH)?)?;
    let conf = unit_interval("conf", file.get(args.conf, "conf", DEFAULT_CONF_THRESH)?)?;
    let defaults = LayoutConfig::default();
    let layout = LayoutConfig {
        bin: file.get(args.bin, "bin", defaults.bin)?,
        window: file.get(args.window, "window", defaults.window)?,
        prominence: unit_interval(
            "prominence",
            file.get(args.prominence, "prominence", defaults.prominence)?,
        )?,
        valley_ratio: unit_interval(
            "valley-ratio",
            file.get(args.valley_ratio, "valley_ratio", defaults.valley_ratio)?,
        )?,
    };
    if !(layout.bin > 0.0 && layout.bin.is_finite()) {
        return Err(CliError::Config(format!("--bin must be > 0, got {}", layout.bin)));
    }
    if layout.window.is_multiple_of(2) {
        return Err(CliError::Config(format!("--window must be odd, got {}", layout.window)));
    }
    let theta = file.opt(args.theta, "theta")?;
    if let Some(t) = theta {
        if !t.is_finite() {
            return Err(CliError::Config(format!("--theta must be finite, got {t}")));
        }
    }
    Ok(CountSettings {
        out_dir: file.out_dir(args.out.clone())?,
        iou,
        conf,
        counting: CountingConfig {
            layout,
            field_mode: file.get(args.field_mode, "field_mode", FieldMode::Nursery)?,
            ..CountingConfig::default()
        },
        theta,
        threads: file.get(args.threads, "threads", 0)?,
        overlay: file.switch(args.overlay, "overlay")?,
        dump_stages: file.switch(args.dump_stages, "dump_stages")?,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn output_err(path: &Path) -> impl FnOnce(masc::raster::RasterError) -> CliError + '_ {
    move |e| CliError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Runs `f` on a dedicated pool when `threads > 0`, else on the global one.
fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    if threads == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("--threads {threads}: {e}")))?
        .install(f)
}

fn write_count_outputs(
    dir: &Path,
    counting: &CountingResult,
    labels: &str,
    background: Option<&RgbImage>,
    overlay: bool,
) -> Result<(), CliError> {
    write_text(&dir.join("global.txt"), labels)?;
    write_text(&dir.join("layout.json"), &counting.layout.to_json())?;
    write_text(&dir.join("counts.csv"), &counting.report.to_csv())?;
    if let Some(est) = &counting.estimate {
        write_orientation(dir, est)?;
    }
    if overlay {
        let blank;
        let bg = match background {
            Some(b) => b,
            None => {
                blank = RgbImage::new(counting.source_dims.0, counting.source_dims.1, 3);
                &blank
            }
        };
        let path = dir.join("overlay.png");
        write_rgb(&render_overlay(bg, &counting.oriented, &counting.layout), &path).map_err(output_err(&path))?;
    }
    Ok(())
}

fn write_orientation(dir: &Path, est: &AngleEstimate) -> Result<(), CliError> {
    write_text(&dir.join("orientation.csv"), &est.profile_csv())
}

fn counting(
    timer: &mut Timer,
    dets: &[Detection],
    extent: &BBox,
    source: OrientationSource<'_>,
    cfg: &CountingConfig,
) -> Result<CountingResult, CliError> {
    timer
        .time("layout", || count_stage(dets, extent, source, cfg))
        .map_err(|e| CliError::stage(e.stage(), e))
}

/// Patchify, detect, merge and count an orthomosaic.
pub fn run_mosaic(args: &MosaicArgs) -> Result<CountOutcome, CliError> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let settings = resolve_count(&args.common, &file)?;
    let input = file.existing_path(args.input.clone(), "input")?;
    let labels_dir = file.opt(args.labels_dir.clone(), "labels_dir")?;
    let kind = file.opt(args.provider, "provider")?.unwrap_or(if labels_dir.is_some() {
        ProviderKind::LabelsDir
    } else {
        ProviderKind::Classical
    });
    let patch_size = file.get(args.patch_size, "patch_size", DEFAULT_PATCH_SIZE)?;
    if patch_size < MIN_PATCH_SIZE {
        return Err(CliError::Config(format!(
            "--patch-size must be >= {MIN_PATCH_SIZE}, got {patch_size}"
        )));
    }
    let overlap = file.get(args.overlap, "overlap", DEFAULT_OVERLAP)?;
    if !(0.0..1.0).contains(&overlap) {
        return Err(CliError::Config(format!("--overlap must be in [0, 1), got {overlap}")));
    }
    let cfg = MosaicConfig {
        patch_size,
        overlap_frac: overlap,
        merge: MergeConfig {
            iou_thresh: settings.iou,
            conf_thresh: settings.conf,
            drop_edge_truncated: !file.switch(args.keep_edge_boxes, "keep_edge_boxes")?,
            ..MergeConfig::default()
        },
        parallelism: 0,
    };
    let out_dir = settings.out_dir.clone();
    create_dir(&out_dir)?;

    with_threads(settings.threads, || {
        let mut timer = Timer::default();
        let mosaic = timer
            .time("read", || read_rgb(&input))
            .map_err(|e| CliError::stage("read", format!("{}: {e}", input.display())))?;
        let run = match kind {
            ProviderKind::Classical => detect(&mut timer, &mosaic, &ClassicalProvider::default(), &cfg)?,
            ProviderKind::LabelsDir => {
                let dir = labels_dir
                    .clone()
                    .ok_or_else(|| CliError::Config("--labels-dir is required with --provider labels-dir".into()))?;
                if !dir.is_dir() {
                    return Err(CliError::Config(format!(
                        "--labels-dir: {} is not a directory",
                        dir.display()
                    )));
                }
                detect(&mut timer, &mosaic, &LabelDirProvider::new(dir), &cfg)?
            }
        };
        write_text(&out_dir.join("patches.csv"), &run.grid.manifest_csv())?;

        let extent = BBox::new(0.0, 0.0, mosaic.width() as f64, mosaic.height() as f64);
        let exg_map;
        let source = match settings.theta {
            Some(t) => OrientationSource::Fixed(t),
            None => {
                exg_map = timer
                    .time("exg", || exg(&mosaic))
                    .map_err(|e| CliError::stage("orientation", e))?;
                OrientationSource::Exg(&exg_map)
            }
        };
        let result = counting(&mut timer, &run.detections, &extent, source, &settings.counting)?;
        let labels = format_labels(&run.detections, extent.w, extent.h);
        write_count_outputs(&out_dir, &result, &labels, Some(&mosaic), settings.overlay)?;
        if settings.dump_stages {
            dump_patch_stages(&out_dir, &mosaic, &run)?;
        }
        Ok(CountOutcome {
            out_dir: out_dir.clone(),
            detections: run.detections,
            extent,
            counting: result,
            timings: timer.stages,
        })
    })
}

fn detect<P: DetectionProvider>(
    timer: &mut Timer,
    mosaic: &RgbImage,
    provider: &P,
    cfg: &MosaicConfig,
) -> Result<MosaicRun, CliError> {
    // Grid errors are caught as config errors above; anything left is the provider's.
    patchify((mosaic.width(), mosaic.height()), cfg.patch_size, cfg.overlap_frac)
        .map_err(|e| CliError::stage("patchify", e))?;
    let run = timer
        .time("detection", || run_mosaic_mode(mosaic, provider, cfg))
        .map_err(|e| CliError::stage("detection", e))?;
    let raw: usize = run.per_patch.iter().map(Vec::len).sum();
    log::info!(
        "{} patches, {raw} patch detections, {} after merge",
        run.grid.patches.len(),
        run.detections.len()
    );
    Ok(run)
}

fn dump_patch_stages(out_dir: &Path, mosaic: &RgbImage, run: &MosaicRun) -> Result<(), CliError> {
    let dir = out_dir.join("stages");
    create_dir(&dir)?;
    let cfg = ClassicalConfig::default();
    for p in &run.grid.patches {
        let crop = mosaic.crop(p.x0, p.y0, p.width, p.height);
        let (_, stages) = classical_detect_staged(&crop, &cfg).map_err(|e| CliError::stage("dump-stages", e))?;
        let Some(stages) = stages else { continue };
        let stem = format!("patch_{}_{}", p.row, p.col);
        for (name, map) in [
            ("exg", stages.exg),
            ("mask", stages.mask.to_scalar()),
            ("eroded", stages.eroded.to_scalar()),
            ("distance", stages.distance),
        ] {
            let path = dir.join(format!("{stem}_{name}.png"));
            write_gray(&map, &path).map_err(output_err(&path))?;
        }
    }
    Ok(())
}

/// Chain homographies, project, merge and count raw frames.
pub fn run_raw(args: &RawArgs) -> Result<CountOutcome, CliError> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let settings = resolve_count(&args.common, &file)?;
    let frames_dir = file.existing_path(args.frames.clone(), "frames")?;
    if !frames_dir.is_dir() {
        return Err(CliError::Config(format!(
            "--frames: {} is not a directory",
            frames_dir.display()
        )));
    }
    let opts = FrameDirOptions {
        invert_pairwise: file.switch(args.invert_pairwise, "invert_pairwise")?,
        default_dims: file
            .opt::<Dims>(args.frame_size, "frame_size")?
            .map(|Dims(w, h)| (w, h)),
    };
    let budget = file.get(args.pixel_budget, "pixel_budget", DEFAULT_PIXEL_BUDGET)?;
    let render = file.switch(args.render, "render")?;
    let out_dir = settings.out_dir.clone();
    create_dir(&out_dir)?;

    with_threads(settings.threads, || {
        let mut timer = Timer::default();
        let frames = timer
            .time("load", || load_frame_dir(&frames_dir, &opts))
            .map_err(|e| CliError::stage("load", e))?;
        let chain = timer
            .time("homography", || cumulative_chain(&frames))
            .map_err(|e| CliError::stage("homography", e))?;
        let scene = timer
            .time("projection", || project_all(&frames, &chain, budget))
            .map_err(|e| CliError::stage("projection", e))?;
        let merged = timer.time("nms", || consensus(&scene, settings.iou, settings.conf));
        log::info!(
            "{} frames, {} projected detections, {} after merge",
            frames.len(),
            scene.detections.len(),
            merged.len()
        );
        let (x0, y0, cw, ch) = canvas_for(&scene.extent);
        let extent = BBox::new(x0 as f64, y0 as f64, cw as f64, ch as f64);

        let mosaic = if render {
            let img = timer
                .time("render", || {
                    render_mosaic(&frames, &chain, &scene.extent, load_frame_image)
                })
                .map_err(|e| CliError::stage("render", e))?;
            let path = out_dir.join("mosaic.png");
            write_rgb(&img, &path).map_err(output_err(&path))?;
            Some(img)
        } else {
            None
        };
        let exg_map;
        let source = match (settings.theta, &mosaic) {
            (Some(t), _) => OrientationSource::Fixed(t),
            (None, Some(img)) => {
                exg_map = exg(img).map_err(|e| CliError::stage("orientation", e))?;
                OrientationSource::Exg(&exg_map)
            }
            (None, None) => OrientationSource::Detections,
        };
        let result = counting(&mut timer, &merged, &extent, source, &settings.counting)?;
        let labels = format_labels_in(&merged, &extent);
        write_text(
            &out_dir.join("extent.txt"),
            &format!("{} {} {} {}\n", extent.x, extent.y, extent.w, extent.h),
        )?;
        write_count_outputs(&out_dir, &result, &labels, mosaic.as_ref(), settings.overlay)?;
        if settings.dump_stages {
            if let Some(img) = &mosaic {
                let dir = out_dir.join("stages");
                create_dir(&dir)?;
                let path = dir.join("exg.png");
                let map = exg(img).map_err(|e| CliError::stage("dump-stages", e))?;
                write_gray(&map, &path).map_err(output_err(&path))?;
            }
        }
        Ok(CountOutcome {
            out_dir: out_dir.clone(),
            detections: merged,
            extent,
            counting: result,
            timings: timer.stages,
        })
    })
}

/// Generates a synthetic field, its flight and patch labels.
pub fn run_synth(args: &SynthArgs) -> Result<SynthOutcome, CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let out_dir = file.out_dir(args.out.clone())?;
    let d = FieldSpec::default();
    let CountRange(pmin, pmax) = file.get(
        args.plants,
        "plants",
        CountRange(d.plants_per_row.0, d.plants_per_row.1),
    )?;
    let seed = file.get(args.seed, "seed", d.seed)?;
    let spec = FieldSpec {
        ranges: file.get(args.ranges, "ranges", d.ranges)?,
        rows_per_range: file.get(args.rows, "rows", d.rows_per_range)?,
        plants_per_row: (pmin, pmax),
        row_pitch: file.get(args.row_pitch, "row_pitch", d.row_pitch)?,
        alley_gap: file.get(args.alley_gap, "alley_gap", d.alley_gap)?,
        plant_spacing: file.get(args.spacing, "spacing", d.plant_spacing)?,
        position_jitter: file.get(args.jitter, "jitter", d.position_jitter)?,
        double_rate: file.get(args.double_rate, "double_rate", d.double_rate)?,
        triple_rate: file.get(args.triple_rate, "triple_rate", d.triple_rate)?,
        weed_density: file.get(args.weed_density, "weed_density", d.weed_density)?,
        margin: file.get(args.margin, "margin", d.margin)?,
        seed,
        ..d
    };
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let fd = FlightSpec::default();
    let Dims(fw, fh) = file.get(args.frame_size, "frame_size", Dims(fd.frame_size.0, fd.frame_size.1))?;
    let Dims(sx, sy) = file.get(args.stride, "stride", Dims(fd.stride.0, fd.stride.1))?;
    let flight_spec = FlightSpec {
        frame_size: (fw, fh),
        stride: (sx, sy),
        hom_noise_sigma: file.get(args.hom_noise, "hom_noise", fd.hom_noise_sigma)?,
        seed,
        ..fd
    };
    let no_flight = file.switch(args.no_flight, "no_flight")?;
    let patch_size = file.get(args.patch_size, "patch_size", DEFAULT_PATCH_SIZE)?;
    let overlap = file.get(args.overlap, "overlap", DEFAULT_OVERLAP)?;

    let field = generate_field(&spec).map_err(|e| CliError::stage("synth", e))?;
    let flight = if no_flight {
        None
    } else {
        Some(
            generate_flight(&field.image, &field.detections, &flight_spec)
                .map_err(|e| CliError::Config(e.to_string()))?,
        )
    };
    let grid = patchify((field.image.width(), field.image.height()), patch_size, overlap)
        .map_err(|e| CliError::Config(format!("--patch-size/--overlap: {e}")))?;
    write_dataset(&out_dir, &field, flight.as_ref()).map_err(|e| CliError::Output {
        path: out_dir.clone(),
        message: e.to_string(),
    })?;
    let labels_dir = out_dir.join("patch_labels");
    create_dir(&labels_dir)?;
    for (name, text) in patch_labels(&grid, &field.detections) {
        write_text(&labels_dir.join(name), &text)?;
    }
    Ok(SynthOutcome {
        out_dir,
        plants: field.truth.total(),
        rows: field.truth.rows.len(),
        frames: flight.as_ref().map_or(0, |f| f.frames.len()),
    })
}

/// Joins predicted and manual counts and reports R^2.
pub fn run_eval(args: &EvalArgs) -> Result<EvalOutcome, CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let counts_path = file.existing_path(args.counts.clone(), "counts")?;
    let truth_path = file.existing_path(args.truth.clone(), "truth")?;
    let out_dir = file.out_dir(args.out.clone())?;
    let read = |path: &Path, flag: &str| {
        let f = std::fs::File::open(path).map_err(|e| CliError::Config(format!("--{flag} {}: {e}", path.display())))?;
        read_counts_csv(f).map_err(|e| CliError::Config(format!("--{flag} {}: {e}", path.display())))
    };
    let predicted = read(&counts_path, "counts")?;
    let truth = read(&truth_path, "truth")?;
    let report = masc::layout::CountReport::from_records(&predicted);
    let result = join_and_eval(&report, &truth).map_err(|e| match e {
        EvalError::InsufficientOverlap { .. } => CliError::InsufficientOverlap(e.to_string()),
        other => CliError::stage("evaluation", other),
    })?;
    create_dir(&out_dir)?;
    write_text(&out_dir.join("eval.csv"), &result.to_csv())?;
    write_text(&out_dir.join("eval_summary.txt"), &result.summary())?;
    Ok(EvalOutcome { out_dir, result })
}
