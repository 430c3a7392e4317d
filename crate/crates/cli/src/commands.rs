use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use vos_core::fusion::{fuse_pixel, fuse_video, GlobalScore, ScoreLog, VideoScore};
use vos_core::metrics::{jf_score, score_frame, FrameObjectScore};
use vos_core::{PipelineConfig, Scale, SegmentationResult, Segmenter, VideoTask};

use crate::config::RunConfig;
use crate::dataset::{self, files_with_ext, stem, subdirs, VideoEntry};
use crate::masks::{read_label_png, read_sidecar, write_label_png, write_sidecar, LabelMap, Sidecar};
use crate::{EvaluateArgs, FuseArgs, SegmentArgs, Toggle, EXIT_OK, EXIT_PARTIAL};

pub const SIDECAR_EXT: &str = "probs";

/// Bad flags or unreadable configuration; maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Per-video failures collected while the other videos carry on.
#[derive(Debug, Default)]
pub struct Report {
    pub failures: Vec<(String, String)>,
    pub processed: usize,
}

impl Report {
    pub fn fail(&mut self, video: &str, err: impl fmt::Display) {
        self.failures.push((video.to_owned(), err.to_string()));
    }

    /// Prints failures to stderr and returns the exit status.
    pub fn finish(mut self) -> u8 {
        self.failures.sort();
        for (video, msg) in &self.failures {
            eprintln!("error: video {video}: {msg}");
        }
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| usage(format!("invalid {what} `{s}`: {e}")))
        })
        .collect()
}

/// Resolves the file configuration and command-line overrides.
pub fn resolve_config(args: &SegmentArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if args.max_mem_frames.is_some() {
        cfg.max_mem_frames = args.max_mem_frames;
    }
    if args.min_mem_frames.is_some() {
        cfg.min_mem_frames = args.min_mem_frames;
    }
    if args.top_k.is_some() {
        cfg.top_k = args.top_k;
    }
    if let Some(s) = &args.scales {
        cfg.scales = parse_list::<Scale>(s, "scale")?;
    }
    if let Some(f) = args.flip {
        cfg.flip = f == Toggle::On;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.encoder {
        cfg.encoder = mode;
    }
    if let Some(w) = &args.weights {
        cfg.weights = Some(parse_list::<f32>(w, "weight")?);
    }
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    Ok(cfg)
}

/// Runs `f` over `items` on `jobs` threads (in order without rayon).
fn for_each_video<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> R + Send + Sync,
) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .context("starting worker pool")?;
        Ok(pool.install(|| items.par_iter().map(f).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        Ok(items.iter().map(f).collect())
    }
}

fn write_frame(dir: &Path, stem: &str, r: &SegmentationResult, probs: bool) -> Result<()> {
    let map = LabelMap {
        height: r.height,
        width: r.width,
        labels: r.labels.clone(),
    };
    write_label_png(&dir.join(format!("{stem}.png")), &map)?;
    if probs {
        let sidecar = Sidecar {
            height: r.height,
            width: r.width,
            planes: r.probabilities.clone(),
        };
        write_sidecar(&dir.join(format!("{stem}.{SIDECAR_EXT}")), &sidecar)?;
    }
    Ok(())
}

fn segment_one(entry: &VideoEntry, cfg: &RunConfig, out: &Path, probs: bool) -> Result<()> {
    let (frames, annotation) = dataset::load_video(entry)?;
    let task = VideoTask {
        video_id: entry.id.clone(),
        frames,
        annotation: annotation.labels,
    };
    let pipeline = PipelineConfig {
        model: cfg.model.clone(),
        encoder: cfg.encoder,
        seed: cfg.seed,
        memory: cfg.memory_for(task.frames.len())?,
    };
    let segmenter = Segmenter::new(pipeline)?;
    let results =
        segmenter.run_video_with_tta(&task, &cfg.scales, cfg.flip, cfg.weights.as_deref())?;
    let dir = out.join(&entry.id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (r, stem) in results.iter().zip(entry.stems()) {
        write_frame(&dir, &stem, r, probs)?;
    }
    Ok(())
}

pub fn segment(args: &SegmentArgs) -> Result<Report> {
    let cfg = resolve_config(args)?;
    ensure!(args.jobs >= 1, usage("--jobs must be at least 1"));
    let (videos, problems) =
        dataset::scan(&args.dataset).map_err(|e| usage(format!("{e:#}")))?;
    fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let mut report = Report::default();
    for (video, msg) in problems {
        report.fail(&video, msg);
    }
    let outcomes = for_each_video(&videos, args.jobs, |v| {
        segment_one(v, &cfg, &args.output, args.probs)
    })?;
    for (v, outcome) in videos.iter().zip(outcomes) {
        match outcome {
            Ok(()) => report.processed += 1,
            Err(e) => report.fail(&v.id, format!("{e:#}")),
        }
    }
    Ok(report)
}

/// Ground truth may be given as a dataset root or as its Annotations/ dir.
fn annotation_root(path: &Path) -> PathBuf {
    let nested = path.join("Annotations");
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn score_video(pred_dir: &Path, gt_dir: &Path, video: &str) -> Result<VideoScore> {
    let gt_files = files_with_ext(gt_dir, &["png"])?;
    let pred_files = files_with_ext(pred_dir, &["png"])?;
    let gt_stems: Vec<String> = gt_files.iter().map(|p| stem(p)).collect();
    let pred_stems: Vec<String> = pred_files.iter().map(|p| stem(p)).collect();
    ensure!(
        gt_stems == pred_stems,
        "frame mismatch for video {video}: {} predicted, {} in ground truth",
        pred_stems.len(),
        gt_stems.len()
    );
    ensure!(!gt_files.is_empty(), "video {video} has no ground-truth frames");
    let gts = gt_files
        .iter()
        .map(|p| read_label_png(p))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<u8> = gts
        .iter()
        .flat_map(|m| m.labels.iter().copied())
        .filter(|&l| l != 0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut table = Vec::new();
    for (t, (gt, pred_path)) in gts.iter().zip(&pred_files).enumerate() {
        let pred = read_label_png(pred_path)?;
        ensure!(
            (pred.height, pred.width) == (gt.height, gt.width),
            "video {video}, frame {}: prediction is {}x{}, ground truth {}x{}",
            gt_stems[t],
            pred.height,
            pred.width,
            gt.height,
            gt.width
        );
        for (id, j, f) in score_frame(gt.height, gt.width, &pred.labels, &gt.labels, &ids)? {
            table.push(FrameObjectScore {
                frame_index: t,
                object_id: id,
                j,
                f,
            });
        }
    }
    // a video whose ground truth is all background scores perfectly iff the
    // prediction is too
    if table.is_empty() {
        let all_empty = pred_files
            .iter()
            .map(|p| read_label_png(p).map(|m| m.labels.iter().all(|&l| l == 0)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .all(|e| e);
        let v = if all_empty { 100.0 } else { 0.0 };
        return Ok(VideoScore {
            video_id: video.to_owned(),
            j: v,
            f: v,
            jf: v,
        });
    }
    let s = jf_score(&table)?;
    Ok(VideoScore {
        video_id: video.to_owned(),
        j: s.j,
        f: s.f,
        jf: s.jf,
    })
}

/// Scores every ground-truth video; returns the log and per-video failures.
pub fn build_score_log(pred: &Path, gt: &Path, run_id: &str) -> Result<(ScoreLog, Report)> {
    let gt_root = annotation_root(gt);
    ensure!(pred.is_dir(), usage(format!("{} is not a directory", pred.display())));
    ensure!(gt_root.is_dir(), usage(format!("{} is not a directory", gt.display())));
    let gt_videos = subdirs(&gt_root)?;
    let pred_videos = subdirs(pred)?;
    if pred_videos.is_empty() {
        bail!("no predicted videos in {}", pred.display());
    }
    let mut report = Report::default();
    let mut videos = Vec::new();
    for video in &gt_videos {
        let pred_dir = pred.join(video);
        if !pred_dir.is_dir() {
            report.fail(video, "no predictions for this video");
            continue;
        }
        match score_video(&pred_dir, &gt_root.join(video), video) {
            Ok(s) => {
                videos.push(s);
                report.processed += 1;
            }
            Err(e) => report.fail(video, format!("{e:#}")),
        }
    }
    for video in pred_videos.iter().filter(|v| !gt_videos.contains(v)) {
        report.fail(video, "prediction has no ground truth");
    }
    let global = (!videos.is_empty()).then(|| {
        let n = videos.len() as f64;
        let j = videos.iter().map(|v| v.j).sum::<f64>() / n;
        let f = videos.iter().map(|v| v.f).sum::<f64>() / n;
        GlobalScore { j, f, jf: (j + f) / 2.0 }
    });
    let log = ScoreLog {
        run_id: run_id.to_owned(),
        videos,
        global,
    };
    Ok((log, report))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<Report> {
    let run_id = args.run_id.clone().unwrap_or_else(|| {
        args.predictions
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_owned())
    });
    let (log, report) = build_score_log(&args.predictions, &args.ground_truth, &run_id)?;
    let json = serde_json::to_string_pretty(&log)?;
    match &args.output {
        Some(path) => fs::write(path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(report)
}

/// Frame stems of a run's video directory (from its label maps).
fn frame_stems(dir: &Path) -> Result<Vec<String>> {
    Ok(files_with_ext(dir, &["png"])?.iter().map(|p| stem(p)).collect())
}

fn load_result(dir: &Path, stem: &str) -> Result<SegmentationResult> {
    let path = dir.join(format!("{stem}.{SIDECAR_EXT}"));
    let s = read_sidecar(&path)?;
    let ids = (1..=s.planes.len())
        .map(|k| u8::try_from(k).context("too many objects"))
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentationResult::from_probabilities(s.height, s.width, ids, s.planes)?)
}

fn fuse_video_pixels(runs: &[PathBuf], weights: &[f32], video: &str, out: &Path) -> Result<()> {
    let stems = frame_stems(&runs[0].join(video))?;
    for run in &runs[1..] {
        ensure!(
            frame_stems(&run.join(video))? == stems,
            "frame sets differ between {} and {}",
            runs[0].display(),
            run.display()
        );
    }
    let dir = out.join(video);
    fs::create_dir_all(&dir)?;
    for s in &stems {
        let results = runs
            .iter()
            .map(|r| load_result(&r.join(video), s))
            .collect::<Result<Vec<_>>>()?;
        let fused = fuse_pixel(&results, weights).with_context(|| format!("frame {s}"))?;
        write_frame(&dir, s, &fused, true)?;
    }
    Ok(())
}

fn copy_dir_files(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to)?;
    let mut names: Vec<_> = fs::read_dir(from)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    for name in names {
        fs::copy(from.join(&name), to.join(&name))
            .with_context(|| format!("copying {}", from.join(&name).display()))?;
    }
    Ok(())
}

pub fn fuse(args: &FuseArgs) -> Result<Report> {
    for r in &args.runs {
        ensure!(r.is_dir(), usage(format!("run {} is not a directory", r.display())));
    }
    let videos = subdirs(&args.runs[0])?;
    let mut report = Report::default();
    fs::create_dir_all(&args.output)?;

    if args.video_level {
        ensure!(
            args.logs.len() == args.runs.len(),
            usage(format!(
                "{} logs for {} runs; give one log per run",
                args.logs.len(),
                args.runs.len()
            ))
        );
        let logs = args
            .logs
            .iter()
            .map(|p| -> Result<ScoreLog> {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| usage(format!("{e:#}")))?;
        let selection = fuse_video(&logs)?;
        for (video, run_id) in &selection {
            let run = logs
                .iter()
                .position(|l| &l.run_id == run_id)
                .map(|i| &args.runs[i])
                .expect("selected run comes from the logs");
            match copy_dir_files(&run.join(video), &args.output.join(video)) {
                Ok(()) => report.processed += 1,
                Err(e) => report.fail(video, format!("{e:#}")),
            }
        }
        println!("{}", serde_json::to_string_pretty(&selection)?);
        return Ok(report);
    }

    let weights = match &args.weights {
        Some(w) => parse_list::<f32>(w, "weight")?,
        None => vec![1.0; args.runs.len()],
    };
    ensure!(
        weights.len() == args.runs.len(),
        usage(format!("{} weights for {} runs", weights.len(), args.runs.len()))
    );
    ensure!(
        weights.iter().all(|w| w.is_finite() && *w >= 0.0) && weights.iter().any(|w| *w > 0.0),
        usage("weights must be non-negative and not all zero")
    );
    for video in &videos {
        if let Some(missing) = args.runs.iter().find(|r| !r.join(video).is_dir()) {
            report.fail(video, format!("missing from run {}", missing.display()));
            continue;
        }
        match fuse_video_pixels(&args.runs, &weights, video, &args.output) {
            Ok(()) => report.processed += 1,
            Err(e) => report.fail(video, format!("{e:#}")),
        }
    }
    Ok(report)
}
