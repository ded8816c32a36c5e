use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use lrd::data::persist::{
    hstack, load_result, montage as grid, save_png8, save_result, TextDoc, TileScale,
};
use lrd::data::{
    landmark_error, load_batch, load_image, load_truth, synthesize, AlignmentReport, BaseImage,
    Generator, GroundTruth, ImageBatch, Landmark, Occlusion, SynthSpec, TRUTH_DOC,
};
use lrd::geometry::{warp_normalize_batch, TransformStack};
use lrd::solver::{align_and_decompose, DecompositionResult, Method};
use lrd::{DenseMatrix, Execution};

use crate::config::{RunSettings, SolverArgs};
use crate::report::{metrics_table, report_doc, RunManifest, TraceLog, TRACE_FILE};
use crate::CliError;

pub const EVAL_DOC: &str = "eval.txt";
pub const COMPARE_DOC: &str = "compare.txt";
pub const MONTAGE_FILE: &str = "montage.png";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator (face, blobs, checkerboard) or a path to a base image.
    #[arg(long, default_value = "face")]
    pub base: String,
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    #[arg(long, default_value_t = 48)]
    pub width: usize,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Maximum rotation in degrees.
    #[arg(long, default_value_t = 0.0)]
    pub rotate: f64,
    /// Maximum shift per axis in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
    /// Occlusion patches per image.
    #[arg(long, default_value_t = 0)]
    pub occlusions: usize,
    #[arg(long = "patch-size", default_value_t = 6)]
    pub patch_size: usize,
    #[arg(long = "occlusion-intensity", default_value_t = 1.0)]
    pub occlusion_intensity: f64,
    #[arg(long = "gain-min", default_value_t = 1.0)]
    pub gain_min: f64,
    #[arg(long = "gain-max", default_value_t = 1.0)]
    pub gain_max: f64,
    /// Additive Gaussian noise sigma.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Keep raw draws instead of centering the truth on the identity.
    #[arg(long = "no-center")]
    pub no_center: bool,
    /// Landmark `x,y` (pixels) of a base image given by path; repeatable.
    #[arg(long = "landmark", value_parser = parse_point)]
    pub landmarks: Vec<Landmark>,
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_point(s: &str) -> Result<Landmark, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    Ok((
        x.trim().parse().map_err(|_| format!("bad x in '{s}'"))?,
        y.trim().parse().map_err(|_| format!("bad y in '{s}'"))?,
    ))
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Directory of input images.
    #[arg(long)]
    pub input: PathBuf,
    /// rasl or meadmm [default: rasl]
    #[arg(long)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Ground-truth file or directory [default: INPUT/truth.txt if present]
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result directory written by `decompose`.
    #[arg(long)]
    pub result: PathBuf,
    /// Ground-truth file or directory.
    #[arg(long)]
    pub truth: PathBuf,
    /// Where to write the report [default: RESULT/eval.txt]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MontageArgs {
    #[arg(long)]
    pub result: PathBuf,
    /// Input directory, adds the input panel.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output PNG [default: RESULT/montage.png]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Run(format!("data: cannot create {}: {e}", dir.display())))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let seed = a
        .seed
        .ok_or_else(|| CliError::Usage("--seed is required".into()))?;
    let base = match a.base.parse::<Generator>() {
        Ok(kind) => BaseImage::Generator {
            kind,
            height: a.height,
            width: a.width,
        },
        Err(_) => {
            let path = Path::new(&a.base);
            if !path.is_file() {
                return Err(CliError::Usage(format!(
                    "--base '{}' is neither a generator nor a file",
                    a.base
                )));
            }
            BaseImage::Image {
                image: load_image(path)?,
                landmarks: a.landmarks.clone(),
            }
        }
    };
    let spec = SynthSpec {
        base,
        count: a.count,
        rotation_range: a.rotate,
        shift_range: a.shift,
        occlusion: Occlusion {
            patch_count: a.occlusions,
            patch_size: a.patch_size,
            intensity: a.occlusion_intensity,
        },
        illumination: (a.gain_min, a.gain_max),
        noise_sigma: a.noise,
        seed,
        center: !a.no_center,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = synthesize(&spec)?;
    out.save(&a.out)?;

    let mut m = RunManifest::new("synth", seed);
    m.input("base", &a.base);
    for (k, v) in [
        ("height", spec.shape().0.to_string()),
        ("width", spec.shape().1.to_string()),
        ("count", a.count.to_string()),
        ("rotate", a.rotate.to_string()),
        ("shift", a.shift.to_string()),
        ("occlusions", a.occlusions.to_string()),
        ("patch_size", a.patch_size.to_string()),
        ("occlusion_intensity", a.occlusion_intensity.to_string()),
        ("gain_min", a.gain_min.to_string()),
        ("gain_max", a.gain_max.to_string()),
        ("noise", a.noise.to_string()),
        ("center", (!a.no_center).to_string()),
    ] {
        m.setting(k, v);
    }
    m.outputs = out
        .batch
        .source_ids
        .iter()
        .map(|id| a.out.join(id))
        .chain([a.out.join(TRUTH_DOC)])
        .collect();
    m.write(&a.out)?;
    println!("wrote {} images and {} to {}", a.count, TRUTH_DOC, a.out.display());
    Ok(())
}

fn find_truth(input: &Path, explicit: Option<&PathBuf>) -> Result<Option<GroundTruth>, CliError> {
    match explicit {
        Some(p) => Ok(Some(load_truth(p)?)),
        None if input.join(TRUTH_DOC).is_file() => Ok(Some(load_truth(input)?)),
        None => Ok(None),
    }
}

fn score(taus: &TransformStack, truth: &GroundTruth, shape: (usize, usize)) -> Result<AlignmentReport, CliError> {
    if truth.shape != shape {
        return Err(CliError::Run(format!(
            "data: truth is for {:?} images, batch is {shape:?}",
            truth.shape
        )));
    }
    Ok(landmark_error(taus, &truth.landmarks, &truth.base_landmarks, shape)?)
}

fn input_panel(batch: &ImageBatch, run: &RunSettings) -> Result<DenseMatrix, CliError> {
    let ident = TransformStack::identity(run.group, batch.len());
    Ok(warp_normalize_batch(
        &batch.images,
        &ident,
        batch.shape(),
        run.solver.interpolation,
        Execution::Sequential,
    )?)
}

/// One method run: result files, trace, montage.
struct MethodRun {
    result: DecompositionResult,
    seconds: f64,
    report: Option<AlignmentReport>,
}

fn run_method(
    batch: &ImageBatch,
    run: &RunSettings,
    method: Method,
    truth: Option<&GroundTruth>,
    out: &Path,
) -> Result<MethodRun, CliError> {
    create_dir(out)?;
    let mut config = run.solver.clone();
    config.method = method;
    let init = TransformStack::identity(run.group, batch.len());
    let mut trace = TraceLog::create(&out.join(TRACE_FILE), method.to_string().as_str())?;
    let start = Instant::now();
    let result = align_and_decompose(&batch.images, &init, &config, &mut trace)?;
    let seconds = start.elapsed().as_secs_f64();
    trace.finish()?;
    save_result(&result, out)?;

    let shape = batch.shape();
    let panels = [
        grid(&input_panel(batch, run)?, shape, TileScale::MinMax)?,
        grid(&result.aligned, shape, TileScale::MinMax)?,
        grid(&result.vr, shape, TileScale::MinMax)?,
        grid(&result.e, shape, TileScale::Magnitude)?,
    ];
    save_png8(&panels[0], out.join("input.png"))?;
    save_png8(&hstack(&panels), out.join(MONTAGE_FILE))?;

    let report = match truth {
        Some(t) => {
            let r = score(&result.taus, t, shape)?;
            report_doc(&[(method.to_string(), r.clone())]).write(out.join(EVAL_DOC))?;
            Some(r)
        }
        None => None,
    };
    log::info!("{method}: finished in {seconds:.3}s");
    Ok(MethodRun {
        result,
        seconds,
        report,
    })
}

fn initial_report(truth: &GroundTruth, run: &RunSettings, shape: (usize, usize)) -> Result<AlignmentReport, CliError> {
    score(&TransformStack::identity(run.group, truth.landmarks.len()), truth, shape)
}

pub fn decompose(a: &DecomposeArgs) -> Result<(), CliError> {
    let run = a.solver.resolve(a.method)?;
    let batch = load_batch(&a.input, run.resize)?;
    let truth = find_truth(&a.input, a.truth.as_ref())?;
    let method = run.solver.method;
    let mr = run_method(&batch, &run, method, truth.as_ref(), &a.out)?;

    let mut m = RunManifest::new("decompose", run.solver.seed);
    m.input("input", a.input.display());
    m.solver(&run);
    m.outputs = vec![a.out.clone()];
    m.write(&a.out)?;

    let obj = mr.result.objective_trace.last().copied().unwrap_or(f64::NAN);
    println!("method: {method}");
    println!("final objective: {obj:.6}");
    println!(
        "converged: {} after {} outer iterations ({:.3} s)",
        mr.result.converged,
        mr.result.objective_trace.len(),
        mr.seconds
    );
    if let (Some(r), Some(t)) = (mr.report, truth.as_ref()) {
        let init = initial_report(t, &run, batch.shape())?;
        print!("{}", metrics_table(&[("initial".into(), init), (method.to_string(), r)]));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let result = load_result(&a.result)?;
    let truth = load_truth(&a.truth)?;
    let shape = result.image_shape.ok_or_else(|| {
        CliError::Run("data: result has no image shape (not an alignment run)".into())
    })?;
    let group = result
        .taus
        .group()
        .ok_or_else(|| CliError::Run("data: result has no transforms".into()))?;
    let init = landmark_error(
        &TransformStack::identity(group, result.taus.len()),
        &truth.landmarks,
        &truth.base_landmarks,
        shape,
    )?;
    let r = score(&result.taus, &truth, shape)?;
    let rows = vec![("initial".to_string(), init), (result.method.to_string(), r)];
    let out = a.out.clone().unwrap_or_else(|| a.result.join(EVAL_DOC));
    report_doc(&rows).write(&out)?;
    print!("{}", metrics_table(&rows));
    Ok(())
}

pub fn compare(a: &CompareArgs) -> Result<(), CliError> {
    let run = a.solver.resolve(None)?;
    let batch = load_batch(&a.input, run.resize)?;
    let truth = find_truth(&a.input, a.truth.as_ref())?;
    create_dir(&a.out)?;

    let mut runs = Vec::new();
    for method in [Method::Rasl, Method::Meadmm] {
        let dir = a.out.join(method.to_string());
        runs.push((method, run_method(&batch, &run, method, truth.as_ref(), &dir)?));
    }

    let shape = batch.shape();
    let mut panels = vec![grid(&input_panel(&batch, &run)?, shape, TileScale::MinMax)?];
    for (_, r) in &runs {
        panels.push(grid(&r.result.aligned, shape, TileScale::MinMax)?);
        panels.push(grid(&r.result.vr, shape, TileScale::MinMax)?);
        panels.push(grid(&r.result.e, shape, TileScale::Magnitude)?);
    }
    save_png8(&hstack(&panels), a.out.join(MONTAGE_FILE))?;

    let mut doc = match &truth {
        Some(t) => {
            let mut rows = vec![("initial".to_string(), initial_report(t, &run, shape)?)];
            for (method, r) in &runs {
                if let Some(rep) = &r.report {
                    rows.push((method.to_string(), rep.clone()));
                }
            }
            print!("{}", metrics_table(&rows));
            report_doc(&rows)
        }
        None => TextDoc::default(),
    };
    for (method, r) in &runs {
        let obj = r.result.objective_trace.last().copied().unwrap_or(f64::NAN);
        doc.set(&format!("{method}_seconds"), format!("{:.6}", r.seconds));
        doc.set(&format!("{method}_final_objective"), obj);
        doc.set(&format!("{method}_converged"), r.result.converged);
        doc.set(&format!("{method}_outer_iterations"), r.result.objective_trace.len());
        println!(
            "{method}: {:.3} s, final objective {obj:.6}, converged {}",
            r.seconds, r.result.converged
        );
    }
    let ratio = runs[1].1.seconds / runs[0].1.seconds.max(1e-12);
    doc.set("time_ratio_meadmm_over_rasl", format!("{ratio:.4}"));
    println!("time ratio meadmm/rasl: {ratio:.2}");
    doc.write(a.out.join(COMPARE_DOC))?;

    let mut m = RunManifest::new("compare", run.solver.seed);
    m.input("input", a.input.display());
    m.solver(&run);
    m.outputs = vec![a.out.join("rasl"), a.out.join("meadmm"), a.out.join(COMPARE_DOC)];
    m.write(&a.out)?;
    Ok(())
}

pub fn montage(a: &MontageArgs) -> Result<(), CliError> {
    let result = load_result(&a.result)?;
    let shape = result
        .image_shape
        .ok_or_else(|| CliError::Run("data: result has no image shape".into()))?;
    let mut panels = Vec::new();
    if let Some(dir) = &a.input {
        let batch = load_batch(dir, Some(shape))?;
        let group = result.taus.group().unwrap_or(lrd::geometry::TransformGroup::Similarity);
        let ident = TransformStack::identity(group, batch.len());
        let vm = warp_normalize_batch(
            &batch.images,
            &ident,
            shape,
            lrd::geometry::Interpolation::default(),
            Execution::Sequential,
        )?;
        panels.push(grid(&vm, shape, TileScale::MinMax)?);
    }
    panels.push(grid(&result.aligned, shape, TileScale::MinMax)?);
    panels.push(grid(&result.vr, shape, TileScale::MinMax)?);
    panels.push(grid(&result.e, shape, TileScale::Magnitude)?);
    let out = a.out.clone().unwrap_or_else(|| a.result.join(MONTAGE_FILE));
    save_png8(&hstack(&panels), &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
