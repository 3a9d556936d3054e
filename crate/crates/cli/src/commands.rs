use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use assoc4d::detections::{load_frames, save_frames, save_frames_binary, DetectionFrame, SkeletonTopology};
use assoc4d::eval::{brute_force_solve, MatchReport, ObjectiveRow};
use assoc4d::geometry::CameraSet;
use assoc4d::graph::{build_graph, PriorSkeletons};
use assoc4d::pipeline::{FrameResult, SkeletonFile, Tracker};
use assoc4d::solver::{solve_frame, Mode};
use assoc4d::synth::{synthesize, GroundTruth};
use assoc4d::Error;

use crate::config::RunConfig;
use crate::error::{input_error, runtime_error, CliError, CliResult};

fn required<'a>(flag: &'a Option<PathBuf>, config: &'a Option<PathBuf>, name: &str) -> CliResult<&'a Path> {
    flag.as_deref()
        .or(config.as_deref())
        .ok_or_else(|| CliError::config(anyhow::anyhow!("no {name} path given (flag or paths.{name})")))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(e).context(format!("writing {}", path.display())))
}

fn load_inputs(calibration: &Path, detections: &Path, topo: &SkeletonTopology) -> CliResult<(CameraSet, Vec<DetectionFrame>)> {
    let cams = CameraSet::load(calibration).map_err(|e| input_error(e).context(format!("calibration {}", calibration.display())))?;
    let frames = load_frames(detections, topo).map_err(|e| input_error(e).context(format!("detections {}", detections.display())))?;
    Ok((cams, frames))
}

pub struct SolveArgs {
    pub calibration: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
}

/// One `key=value` diagnostics line per frame.
pub fn diagnostics_line(r: &FrameResult) -> String {
    let s = &r.stats;
    format!(
        "frame={} persons={} edges={} bundles={} graph_ms={:.3} parse_ms={:.3} assemble_ms={:.3} association_ms={:.3} fit_ms={:.3} objective={:.6} warnings={}",
        r.frame,
        r.skeletons.len(),
        s.edges,
        s.solve.bundles,
        1e3 * s.graph_seconds,
        1e3 * s.solve.parse_seconds,
        1e3 * s.solve.assemble_seconds,
        1e3 * s.association_seconds(),
        1e3 * s.fit_seconds,
        s.solve.objective,
        s.warnings.len()
    )
}

pub fn solve(cfg: &RunConfig, args: &SolveArgs) -> CliResult<()> {
    let topo = cfg.topology()?;
    let calibration = required(&args.calibration, &cfg.paths.calibration, "calibration")?;
    let detections = required(&args.detections, &cfg.paths.detections, "detections")?;
    let output = required(&args.output, &cfg.paths.output, "output")?;
    let (cams, frames) = load_inputs(calibration, detections, &topo)?;
    let mut tracker = Tracker::new(&topo, &cams, cfg.pipeline()).map_err(CliError::config)?;
    let mut results = Vec::with_capacity(frames.len());
    let mut diag = String::new();
    for f in &frames {
        let r = tracker.process(f).map_err(|e| runtime_error(e).context(format!("frame {}", f.index)))?;
        log::info!("frame {}: association {:.3} ms", r.frame, 1e3 * r.stats.association_seconds());
        for w in &r.stats.warnings {
            log::warn!("frame {}: {w}", r.frame);
        }
        diag.push_str(&diagnostics_line(&r));
        diag.push('\n');
        results.push(r);
    }
    write_file(output, &SkeletonFile::from_results(&topo, &results).to_json())?;
    if let Some(path) = &args.diagnostics {
        write_file(path, &diag)?;
    }
    Ok(())
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub binary: bool,
}

/// Writes `calibration.json`, `detections.json` (or `detections.bin`) and
/// `ground_truth.json` into `out`.
pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> CliResult<()> {
    let topo = cfg.topology()?;
    let (scene, frames, gt) = synthesize(&cfg.scene, &cfg.noise, &topo, cfg.seed).map_err(runtime_error)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::runtime(e).context(format!("creating {}", args.out.display())))?;
    let io = |e: Error| CliError::runtime(e).context(format!("writing into {}", args.out.display()));
    scene.cameras.save(&args.out.join("calibration.json")).map_err(io)?;
    if args.binary {
        save_frames_binary(&args.out.join("detections.bin"), &topo, &frames).map_err(io)?;
    } else {
        save_frames(&args.out.join("detections.json"), &topo, &frames).map_err(io)?;
    }
    gt.save(&args.out.join("ground_truth.json")).map_err(io)?;
    Ok(())
}

pub struct EvalArgs {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

pub fn evaluate(cfg: &RunConfig, args: &EvalArgs) -> CliResult<MatchReport> {
    let topo = cfg.topology()?;
    let pred_path = required(&args.pred, &cfg.paths.output, "output")?;
    let gt_path = required(&args.gt, &cfg.paths.ground_truth, "ground_truth")?;
    let text = std::fs::read_to_string(pred_path).map_err(|e| CliError::config(e).context(format!("reading {}", pred_path.display())))?;
    let pred = SkeletonFile::from_json(&text, &topo).map_err(|e| input_error(e).context(pred_path.display().to_string()))?;
    let gt = GroundTruth::load(gt_path, &topo).map_err(|e| input_error(e).context(gt_path.display().to_string()))?;
    let pred_frames = pred.skeletons();
    if pred.frames.len() != gt.frames.len() || pred.frames.iter().zip(&gt.frames).any(|(p, g)| p.frame != g.frame) {
        return Err(CliError::parse(anyhow::anyhow!(
            "predictions ({} frames) are not aligned with ground truth ({} frames)",
            pred.frames.len(),
            gt.frames.len()
        )));
    }
    let gt_persons: Vec<_> = gt.frames.iter().map(|f| f.persons.clone()).collect();
    let report = MatchReport::compute(&pred_frames, &gt_persons, &topo, &cfg.eval).map_err(input_error)?;
    print!("{}", report.to_table());
    if let Some(path) = &args.json {
        let mut text = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
        text.push('\n');
        write_file(path, &text)?;
    }
    Ok(report)
}

pub struct OracleArgs {
    pub calibration: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn objective_table(rows: &[ObjectiveRow]) -> String {
    let mut s = String::from("frame greedy optimal ratio\n");
    for r in rows {
        match r.optimal {
            Some(opt) => {
                let ratio = if opt > 0.0 { r.greedy / opt } else { 1.0 };
                let _ = writeln!(s, "{} {:.9} {:.9} {:.6}", r.frame, r.greedy, opt, ratio);
            }
            None => {
                let _ = writeln!(s, "{} {:.9} skipped -", r.frame, r.greedy);
            }
        }
    }
    s
}

/// Greedy against exhaustive objective per frame. Frames whose search
/// exceeds the state cap get no optimum.
pub fn oracle(cfg: &RunConfig, args: &OracleArgs) -> CliResult<Vec<ObjectiveRow>> {
    let topo = cfg.topology()?;
    let calibration = required(&args.calibration, &cfg.paths.calibration, "calibration")?;
    let detections = required(&args.detections, &cfg.paths.detections, "detections")?;
    let (cams, frames) = load_inputs(calibration, detections, &topo)?;
    let mut tracker = Tracker::new(&topo, &cams, cfg.pipeline()).map_err(CliError::config)?;
    let mut rows = Vec::new();
    for f in &frames {
        let prior = if cfg.mode == Mode::FullFourD {
            tracker.prior().clone()
        } else {
            PriorSkeletons::empty()
        };
        let graph = build_graph(f, &prior, &cams, &cfg.solver.graph, &topo).map_err(runtime_error)?;
        let greedy = solve_frame(&graph, prior.next_id, &cfg.solver, cfg.mode).map_err(runtime_error)?.stats.raw_objective;
        let optimal = match brute_force_solve(&graph, &cfg.solver.graph, cfg.oracle.cap, Some(greedy)) {
            Ok(opt) => Some(opt.objective),
            Err(Error::InstanceTooLarge { cap }) => {
                eprintln!("frame {}: skipped, more than {cap} search states", f.index);
                None
            }
            Err(e) => return Err(runtime_error(e).context(format!("frame {}", f.index))),
        };
        rows.push(ObjectiveRow {
            frame: f.index,
            greedy,
            optimal,
        });
        tracker.process(f).map_err(runtime_error)?;
    }
    let table = objective_table(&rows);
    match &args.output {
        Some(path) => write_file(path, &table)?,
        None => print!("{table}"),
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p90_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub graph_ms: f64,
    pub parse_ms: f64,
    pub assemble_ms: f64,
    pub threads: usize,
}

impl BenchReport {
    pub fn to_lines(&self) -> String {
        format!(
            "frames={}\nthreads={}\nassociation_median_ms={:.3}\nassociation_mean_ms={:.3}\nassociation_p90_ms={:.3}\nassociation_min_ms={:.3}\nassociation_max_ms={:.3}\ngraph_median_ms={:.3}\nparse_median_ms={:.3}\nassemble_median_ms={:.3}\n",
            self.frames,
            self.threads,
            self.median_ms,
            self.mean_ms,
            self.p90_ms,
            self.min_ms,
            self.max_ms,
            self.graph_ms,
            self.parse_ms,
            self.assemble_ms
        )
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Times the association step (graph construction, limb parsing and
/// assembly) on a synthetic sequence, skipping `bench.warmup` frames.
pub fn bench(cfg: &RunConfig) -> CliResult<BenchReport> {
    let topo = cfg.topology()?;
    let (scene, frames, _) = synthesize(&cfg.scene, &cfg.noise, &topo, cfg.seed).map_err(runtime_error)?;
    let mut tracker = Tracker::new(&topo, &scene.cameras, cfg.pipeline()).map_err(CliError::config)?;
    let (mut total, mut graph, mut parse, mut assemble) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, f) in frames.iter().enumerate() {
        let r = tracker.process(f).map_err(runtime_error)?;
        if i >= cfg.bench.warmup {
            total.push(1e3 * r.stats.association_seconds());
            graph.push(1e3 * r.stats.graph_seconds);
            parse.push(1e3 * r.stats.solve.parse_seconds);
            assemble.push(1e3 * r.stats.solve.assemble_seconds);
        }
    }
    if total.is_empty() {
        return Err(CliError::config(anyhow::anyhow!(
            "bench needs more than bench.warmup = {} frames",
            cfg.bench.warmup
        )));
    }
    let mean = total.iter().sum::<f64>() / total.len() as f64;
    let med = median(&mut total);
    let p90 = total[((total.len() as f64 * 0.9).ceil() as usize).clamp(1, total.len()) - 1];
    Ok(BenchReport {
        frames: total.len(),
        median_ms: med,
        mean_ms: mean,
        p90_ms: p90,
        min_ms: total[0],
        max_ms: total[total.len() - 1],
        graph_ms: median(&mut graph),
        parse_ms: median(&mut parse),
        assemble_ms: median(&mut assemble),
        threads: rayon::current_num_threads(),
    })
}
