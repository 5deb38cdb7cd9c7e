use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pitchcal::camera::{CameraParams, Homography};
use pitchcal::detect_io::{
    homography_to_row_major, parse_calibration, parse_detection_frame, parse_gt_annotations, write_calibration,
    write_detection_frame, write_gt_annotations, CalibrationRecord, CameraBlock, DetectionFrame, GtPolylines,
    ResidualSummary,
};
use pitchcal::estimation::{homography_from_projection, CalibrationStatus};
use pitchcal::field_model::FieldModel;
use pitchcal::metrics::{aggregate, evaluate_frame, EvalReport, FrameEvaluation};
use pitchcal::pipeline::{process_batch, refine_record, PipelineConfig};
use pitchcal::synth::{sample_camera, synthesize_frame};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

const SUMMARY_FILE: &str = "summary.json";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// `*.json` files of a directory, sorted by name, skipping run summaries.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut out = vec![];
    for entry in rd {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if path.is_file() && name.ends_with(".json") && name != SUMMARY_FILE {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("report serializes");
    b.push(b'\n');
    b
}

fn safe_id(id: &str) -> Result<&str, CliError> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(CliError::Io(format!("frame id `{id}` cannot be used as a file name")));
    }
    Ok(id)
}

/// Uses `dir/frames` when the directory is a synth output.
fn frames_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("frames");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

/// Frames that parsed, plus per-file errors.
fn read_frames(dir: &Path) -> Result<(Vec<DetectionFrame>, Vec<String>), CliError> {
    let mut frames = vec![];
    let mut errors = vec![];
    for path in json_files(dir)? {
        match std::fs::read(&path).map_err(|e| e.to_string()).and_then(|b| parse_detection_frame(&b).map_err(|e| e.to_string()))
        {
            Ok(f) => frames.push(f),
            Err(e) => errors.push(format!("{}: {e}", path.display())),
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for f in &frames {
        if !seen.insert(f.frame_id.clone()) {
            return Err(CliError::Io(format!("duplicate frame id `{}` in {}", f.frame_id, dir.display())));
        }
    }
    Ok((frames, errors))
}

fn read_records(dir: &Path) -> Result<BTreeMap<String, CalibrationRecord>, CliError> {
    let mut out = BTreeMap::new();
    for path in json_files(dir)? {
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let rec = parse_calibration(&bytes).map_err(|e| io_err(&path, e))?;
        if out.insert(rec.frame_id.clone(), rec).is_some() {
            return Err(io_err(&path, "duplicate frame id"));
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct Failure {
    frame_id: String,
    reason: String,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    frames: usize,
    calibrated: usize,
    homography_only: usize,
    failed: usize,
    refined: usize,
    completeness: f64,
    failures: Vec<Failure>,
    unreadable: Vec<String>,
}

impl RunSummary {
    fn of(records: &[CalibrationRecord], unreadable: Vec<String>) -> Self {
        let count = |s| records.iter().filter(|r| r.status == s).count();
        let calibrated = count(CalibrationStatus::Calibrated);
        let failures = records
            .iter()
            .filter(|r| r.status == CalibrationStatus::Failed)
            .map(|r| Failure { frame_id: r.frame_id.clone(), reason: r.residuals.notes.join("; ") })
            .collect();
        Self {
            frames: records.len(),
            calibrated,
            homography_only: count(CalibrationStatus::HomographyOnly),
            failed: count(CalibrationStatus::Failed),
            refined: records.iter().filter(|r| r.refined).count(),
            completeness: if records.is_empty() { 0.0 } else { calibrated as f64 / records.len() as f64 },
            failures,
            unreadable,
        }
    }

    fn print(&self) {
        eprintln!(
            "{} frames: {} calibrated, {} homography only, {} failed, {} refined (CR {:.2}%)",
            self.frames,
            self.calibrated,
            self.homography_only,
            self.failed,
            self.refined,
            100.0 * self.completeness
        );
        for f in &self.failures {
            eprintln!("  failed {}: {}", f.frame_id, f.reason);
        }
        for u in &self.unreadable {
            eprintln!("  unreadable {u}");
        }
    }
}

fn write_records(out: &Path, records: &[CalibrationRecord], unreadable: Vec<String>) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for r in records {
        let bytes = write_calibration(r).map_err(|e| CliError::Io(format!("{}: {e}", r.frame_id)))?;
        write(&out.join(format!("{}.json", safe_id(&r.frame_id)?)), &bytes)?;
    }
    let summary = RunSummary::of(records, unreadable);
    summary.print();
    write(&out.join(SUMMARY_FILE), &to_json(&summary))?;
    if summary.unreadable.is_empty() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{} input files could not be read", summary.unreadable.len())))
    }
}

pub fn run_calibrate(cfg: &RunConfig) -> Result<(), CliError> {
    let model = cfg.model()?;
    let (input, output) = (frames_dir(cfg.require_input()?), cfg.require_output()?);
    let (frames, unreadable) = read_frames(&input)?;
    let records: Vec<CalibrationRecord> =
        process_batch(&frames, &model, &cfg.pipeline, cfg.jobs).into_iter().map(|r| r.record).collect();
    write_records(output, &records, unreadable)
}

pub fn run_refine(cfg: &RunConfig) -> Result<(), CliError> {
    let model = cfg.model()?;
    let input = frames_dir(cfg.require_input()?);
    let output = cfg.require_output()?;
    let rec_dir = cfg.records.as_deref().ok_or_else(|| CliError::Config("--records is required".into()))?;
    let records = read_records(rec_dir)?;
    let (frames, unreadable) = read_frames(&input)?;
    let frames: BTreeMap<&str, &DetectionFrame> = frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let mut out = Vec::with_capacity(records.len());
    for (id, rec) in &records {
        let frame = frames.get(id.as_str()).ok_or_else(|| CliError::Io(format!("no detection frame for record `{id}`")))?;
        out.push(refine_record(rec, frame, &model, &cfg.pipeline));
    }
    write_records(output, &out, unreadable)
}

struct GroundTruth {
    polylines: GtPolylines,
    homography: Option<Homography>,
}

fn read_gt(dir: &Path, id: &str, width: f64, height: f64) -> Result<Option<GroundTruth>, CliError> {
    let path = dir.join(format!("{id}.json"));
    if !path.is_file() {
        return Ok(None);
    }
    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    let (_, polylines) = parse_gt_annotations(&bytes, id, width, height).map_err(|e| io_err(&path, e))?;
    let calib = dir.join(format!("{id}.calib.json"));
    let homography = if calib.is_file() {
        let bytes = std::fs::read(&calib).map_err(|e| io_err(&calib, e))?;
        parse_calibration(&bytes).map_err(|e| io_err(&calib, e))?.homography()
    } else {
        None
    };
    Ok(Some(GroundTruth { polylines, homography }))
}

fn gt_ids(dir: &Path) -> Result<Vec<String>, CliError> {
    Ok(json_files(dir)?
        .iter()
        .filter_map(|p| p.file_name()?.to_str().map(str::to_string))
        .filter(|n| !n.ends_with(".calib.json"))
        .map(|n| n.trim_end_matches(".json").to_string())
        .collect())
}

#[derive(Debug, Serialize)]
struct EvaluationFile<'a> {
    report: &'a EvalReport,
    frames: &'a [FrameEvaluation],
}

fn evaluate_all(
    records: &BTreeMap<String, CalibrationRecord>,
    gt: &BTreeMap<String, GroundTruth>,
    model: &FieldModel,
    gammas: &[f64],
) -> Result<(EvalReport, Vec<FrameEvaluation>), CliError> {
    let frames: Vec<FrameEvaluation> = records
        .iter()
        .map(|(id, r)| {
            let g = &gt[id];
            evaluate_frame(r, &g.polylines, g.homography.as_ref(), model, gammas)
        })
        .collect();
    let report = aggregate(&frames, gammas).map_err(|e| CliError::Io(e.to_string()))?;
    Ok((report, frames))
}

pub fn run_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let model = cfg.model()?;
    let records = read_records(cfg.require_input()?)?;
    let gt_dir = cfg.gt.as_deref().ok_or_else(|| CliError::Config("--gt is required".into()))?;
    let mut gt = BTreeMap::new();
    for (id, r) in &records {
        let g = read_gt(gt_dir, id, r.image_width, r.image_height)?
            .ok_or_else(|| CliError::Io(format!("frame `{id}`: no ground truth in {}", gt_dir.display())))?;
        gt.insert(id.clone(), g);
    }
    if let Some(id) = gt_ids(gt_dir)?.into_iter().find(|id| !records.contains_key(id)) {
        return Err(CliError::Io(format!("frame `{id}`: ground truth without a calibration record")));
    }
    let (report, frames) = evaluate_all(&records, &gt, &model, &cfg.gammas)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(out) = &cfg.output {
        write(&out.join("report.json"), &to_json(&EvaluationFile { report: &report, frames: &frames }))?;
        write(&out.join("report.txt"), table.as_bytes())?;
    }
    Ok(())
}

fn gt_record(id: &str, params: &CameraParams, width: f64, height: f64) -> CalibrationRecord {
    CalibrationRecord {
        frame_id: id.to_string(),
        status: CalibrationStatus::Calibrated,
        image_width: width,
        image_height: height,
        camera: Some(CameraBlock::from_params(params)),
        homography: homography_from_projection(params).ok().map(|h| homography_to_row_major(&h)),
        refined: false,
        residuals: ResidualSummary::default(),
    }
}

struct SynthBatch {
    frames: Vec<DetectionFrame>,
    gt: BTreeMap<String, GroundTruth>,
    cameras: Vec<CameraParams>,
}

fn synthesize_batch(cfg: &RunConfig, model: &FieldModel) -> Result<SynthBatch, CliError> {
    let sampler = cfg.synth.sampler();
    let mut batch = SynthBatch { frames: vec![], gt: BTreeMap::new(), cameras: vec![] };
    let width = cfg.synth.count.max(1).to_string().len().max(4);
    for i in 0..cfg.synth.count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let cam = sample_camera(&sampler, model, seed).map_err(|e| CliError::Config(format!("camera {i}: {e}")))?;
        let deg = pitchcal::synth::DegradationConfig { seed, ..cfg.synth.degradation };
        let id = format!("{i:0width$}");
        let s = synthesize_frame(&cam, model, &deg, sampler.width, sampler.height, &id)
            .map_err(|e| CliError::Config(format!("frame {id}: {e}")))?;
        let homography = homography_from_projection(&cam).ok();
        batch.gt.insert(id, GroundTruth { polylines: s.gt, homography });
        batch.frames.push(s.frame);
        batch.cameras.push(cam);
    }
    Ok(batch)
}

pub fn run_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let model = cfg.model()?;
    let out = cfg.require_output()?;
    let batch = synthesize_batch(cfg, &model)?;
    for (frame, cam) in batch.frames.iter().zip(&batch.cameras) {
        let id = safe_id(&frame.frame_id)?;
        let (w, h) = (frame.width, frame.height);
        write(&out.join("frames").join(format!("{id}.json")), &write_detection_frame(frame))?;
        write(&out.join("gt").join(format!("{id}.json")), &write_gt_annotations(&batch.gt[id].polylines, w, h))?;
        let calib = write_calibration(&gt_record(id, cam, w, h)).map_err(|e| CliError::Io(e.to_string()))?;
        write(&out.join("gt").join(format!("{id}.calib.json")), &calib)?;
    }
    eprintln!("wrote {} synthetic frames to {}", batch.frames.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    /// `None` for the run without refinement.
    alpha: Option<f64>,
    report: EvalReport,
}

fn sweep_table(rows: &[SweepRow], gammas: &[f64]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = write!(s, "{:>8}", "alpha");
    for g in gammas {
        let _ = write!(s, " {:>9}", format!("JaC@{g}"));
    }
    let _ = writeln!(s, " {:>9} {:>9} {:>9}", "CR", "FS", "IoU_part");
    for r in rows {
        let a = r.alpha.map_or("no-pnl".to_string(), |a| format!("{a:.2}"));
        let _ = write!(s, "{a:>8}");
        for j in &r.report.jac {
            let _ = write!(s, " {:>9.2}", 100.0 * j);
        }
        let iou = r.report.iou_part.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v.mean));
        let _ = writeln!(s, " {:>9.2} {:>9.2} {:>9}", 100.0 * r.report.completeness, 100.0 * r.report.final_score, iou);
    }
    s
}

pub fn run_sweep_alpha(cfg: &RunConfig) -> Result<(), CliError> {
    let model = cfg.model()?;
    let (frames, gt) = match &cfg.input {
        Some(dir) => {
            let (frames, unreadable) = read_frames(&frames_dir(dir))?;
            if let Some(u) = unreadable.first() {
                return Err(CliError::Io(u.clone()));
            }
            let gt_dir = cfg.gt.clone().unwrap_or_else(|| dir.join("gt"));
            let mut gt = BTreeMap::new();
            for f in &frames {
                let g = read_gt(&gt_dir, &f.frame_id, f.width, f.height)?
                    .ok_or_else(|| CliError::Io(format!("frame `{}`: no ground truth", f.frame_id)))?;
                gt.insert(f.frame_id.clone(), g);
            }
            (frames, gt)
        }
        None => {
            let b = synthesize_batch(cfg, &model)?;
            (b.frames, b.gt)
        }
    };
    let run = |pipeline: &PipelineConfig| -> Result<EvalReport, CliError> {
        let records: BTreeMap<String, CalibrationRecord> = process_batch(&frames, &model, pipeline, cfg.jobs)
            .into_iter()
            .map(|r| (r.record.frame_id.clone(), r.record))
            .collect();
        Ok(evaluate_all(&records, &gt, &model, &cfg.gammas)?.0)
    };
    let mut rows = vec![SweepRow { alpha: None, report: run(&PipelineConfig { pnl: false, ..cfg.pipeline.clone() })? }];
    for &alpha in &cfg.alphas {
        let mut p = PipelineConfig { pnl: true, ..cfg.pipeline.clone() };
        p.refinement.alpha = alpha;
        rows.push(SweepRow { alpha: Some(alpha), report: run(&p)? });
    }
    let table = sweep_table(&rows, &cfg.gammas);
    print!("{table}");
    if let Some(out) = &cfg.output {
        write(&out.join("sweep.json"), &to_json(&rows))?;
        write(&out.join("sweep.txt"), table.as_bytes())?;
    }
    Ok(())
}
