//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lrd::data::persist::{read_matrix, write_matrix};
use lrd::data::{landmark_error, synthesize, BaseImage, Generator, SynthSpec};
use lrd::geometry::{jacobian, warp, Image, Interpolation, TransformGroup, TransformParams, TransformStack};
use lrd::manifold::{build_knn_graph, geodesic_distances, KnnGraph};
use lrd::ops::{nuclear_norm, soft_threshold_matrix, svt};
use lrd::solver::{align_and_decompose, decompose, relative_error, Method, MuSchedule, NoTrace, SolverConfig};
use lrd::{DenseMatrix, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> Result<String, String> {
    let t = start.elapsed();
    if t <= limit {
        Ok(format!("{:.2}s", t.as_secs_f64()))
    } else {
        Err(format!("{:.2}s exceeds {}s", t.as_secs_f64(), limit.as_secs()))
    }
}

// 1. Prox operators.

fn prox_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_gap = f64::INFINITY;
    for _ in 0..200 {
        let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let a = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let b = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let alpha = rng.random_range(0.0..1.5);

        let nuc = |x: &DenseMatrix| alpha * nuclear_norm(x).unwrap() + 0.5 * (x - &a).norm_squared();
        let l1 = |x: &DenseMatrix| alpha * x.abs().sum() + 0.5 * (x - &a).norm_squared();
        let xs = svt(&a, alpha).map_err(|e| e.to_string())?;
        let xl = soft_threshold_matrix(&a, alpha).map_err(|e| e.to_string())?;
        let (fs, fl) = (nuc(&xs), l1(&xl));
        if fs > nuc(&a) + 1e-6 || fl > l1(&a) + 1e-6 {
            return Err("prox value worse than the input itself".into());
        }
        for _ in 0..1000 {
            let scale = 10f64.powf(rng.random_range(-4.0..0.0));
            let d = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-scale..scale));
            let gs = nuc(&(&xs + &d)) - fs;
            let gl = l1(&(&xl + &d)) - fl;
            worst_gap = worst_gap.min(gs).min(gl);
            if gs < -1e-6 || gl < -1e-6 {
                return Err(format!("perturbation improved the objective by {:e}", -gs.min(gl)));
            }
        }
        let dab = (&a - &b).norm();
        let ds = (svt(&a, alpha).unwrap() - svt(&b, alpha).unwrap()).norm();
        let dl = (soft_threshold_matrix(&a, alpha).unwrap() - soft_threshold_matrix(&b, alpha).unwrap()).norm();
        if ds > dab + 1e-9 || dl > dab + 1e-9 {
            return Err(format!("expansive pair: {ds:e} / {dl:e} > {dab:e}"));
        }
    }
    let t = within(Duration::from_secs(10), start)?;
    Ok(format!("200 matrices x 1000 perturbations, min gap {worst_gap:.1e}, {t}"))
}

// 2. Jacobians.

fn smooth_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let bumps: Vec<[f64; 4]> = (0..5)
        .map(|_| {
            [
                rng.random_range(0.2..0.8) * w as f64,
                rng.random_range(0.2..0.8) * h as f64,
                rng.random_range(2.0..5.0),
                rng.random_range(0.2..1.0),
            ]
        })
        .collect();
    Image::from_fn(h, w, |r, c| {
        0.05 + bumps
            .iter()
            .map(|[x, y, s, a]| a * (-((c as f64 - x).powi(2) + (r as f64 - y).powi(2)) / (2.0 * s * s)).exp())
            .sum::<f64>()
    })
}

fn perturbed(rng: &mut ChaCha8Rng, group: TransformGroup) -> TransformParams {
    let scale: &[f64] = match group {
        TransformGroup::Translation => &[1.0, 1.0],
        TransformGroup::Similarity => &[0.05, 0.1, 1.0, 1.0],
        TransformGroup::Affine => &[0.05, 0.05, 0.05, 0.05, 1.0, 1.0],
        TransformGroup::Projective => &[0.03, 0.03, 1.0, 0.03, 0.03, 1.0, 0.001, 0.001],
    };
    let z = group
        .identity_params()
        .iter()
        .zip(scale)
        .map(|(v, s)| v + rng.random_range(-s..*s))
        .collect();
    TransformParams::new(group, z).unwrap()
}

fn jacobian_fd() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = (24, 26);
    let column = |img: &Image, t: &TransformParams| {
        let v = warp(img, t, shape, Interpolation::Cubic).to_vector();
        let n = v.norm();
        v / n
    };
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let img = smooth_image(&mut rng, shape.0, shape.1);
        for group in TransformGroup::ALL {
            let t = perturbed(&mut rng, group);
            let j = jacobian(&img, &t, shape, Interpolation::Cubic).map_err(|e| e.to_string())?;
            for k in 0..group.param_count() {
                let h = 1e-5;
                let mut zp = t.params().to_vec();
                let mut zm = zp.clone();
                zp[k] += h;
                zm[k] -= h;
                let fp = column(&img, &TransformParams::new(group, zp).unwrap());
                let fm = column(&img, &TransformParams::new(group, zm).unwrap());
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((&fd - j.column(k)).norm() / fd.norm());
            }
        }
    }
    let t = within(Duration::from_secs(30), start)?;
    check(worst < 1e-4, format!("20 images x 4 groups, max relative column error {worst:.2e}, {t}"))
}

// 3. Geodesics.

fn floyd_warshall(g: &KnnGraph) -> DenseMatrix {
    let n = g.node_count();
    let mut d = DenseMatrix::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        d[(i, i)] = 0.0;
        for &(j, w) in g.neighbors(i) {
            d[(i, j)] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[(i, k)] + d[(k, j)] < d[(i, j)] {
                    d[(i, j)] = d[(i, k)] + d[(k, j)];
                }
            }
        }
    }
    d
}

fn geodesic_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(3..=50);
        let k = rng.random_range(1..n.min(8));
        let dim = rng.random_range(2..6);
        let x = DenseMatrix::from_fn(dim, n, |_, _| rng.random_range(-1.0..1.0));
        let g = build_knn_graph(&x, k, Execution::Parallel).map_err(|e| e.to_string())?;
        let fw = floyd_warshall(&g);
        let ours = geodesic_distances(&g, Execution::Parallel);
        for (a, b) in fw.iter().zip(ours.iter()) {
            if a.is_infinite() != b.is_infinite() {
                return Err("reachability differs from Floyd-Warshall".into());
            }
            if a.is_finite() {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let t = within(Duration::from_secs(5), start)?;
    check(worst < 1e-10, format!("50 graphs, max deviation {worst:.1e}, {t}"))
}

// 4. Robust PCA.

fn rpca_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (m, n) = (100, 50);
    let l = DenseMatrix::from_fn(m, 2, |_, _| rng.random_range(-1.0..1.0))
        * DenseMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
    // Random support, random signs.
    let s = DenseMatrix::from_fn(m, n, |_, _| {
        if rng.random_bool(0.05) {
            if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        } else {
            0.0
        }
    });
    let vm = &l + &s;
    let run = |mu_schedule| -> Result<f64, String> {
        let config = SolverConfig { method: Method::Rasl, lambda: Some(0.1), mu_schedule, ..Default::default() };
        let res = decompose(&vm, &config, &mut NoTrace).map_err(|e| e.to_string())?;
        Ok(relative_error(&res.vr, &l))
    };
    let err = run(MuSchedule::Decreasing)?;
    let growing = run(MuSchedule::Increasing)?;
    let t = within(Duration::from_secs(20), start)?;
    check(
        err < 1e-3,
        format!("relative error {err:.2e} (increasing schedule {growing:.2e}), {t}"),
    )
}

// 5. Manifold benefit.

/// Gaussian bump sliding along the pixel axis: a 1-D nonlinear curve.
fn curve_instance(seed: u64) -> (DenseMatrix, DenseMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (100, 40);
    let mut clean = DenseMatrix::zeros(m, n);
    let mut observed = DenseMatrix::zeros(m, n);
    for j in 0..n {
        let center = 25.0 + 50.0 * rng.random_range(0.0..1.0);
        let gain = rng.random_range(0.6..1.4);
        for i in 0..m {
            let v = gain * (0.2 + (-((i as f64 - center) / 8.0).powi(2) / 2.0).exp());
            clean[(i, j)] = v;
            observed[(i, j)] = v + if rng.random_bool(0.05) { rng.random_range(0.5..1.0) } else { 0.0 };
        }
        let norm = observed.column(j).norm();
        observed.column_mut(j).unscale_mut(norm);
        clean.column_mut(j).unscale_mut(norm);
    }
    (clean, observed)
}

fn manifold_benefit() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let (clean, observed) = curve_instance(500 + seed);
        let err = |method| -> Result<f64, String> {
            let config = SolverConfig { method, ..Default::default() };
            let r = decompose(&observed, &config, &mut NoTrace).map_err(|e| e.to_string())?;
            Ok((r.vr - &clean).norm())
        };
        let (r, m) = (err(Method::Rasl)?, err(Method::Meadmm)?);
        if m <= r {
            wins += 1;
        }
        detail.push(format!("{m:.3}/{r:.3}"));
    }
    let t = within(Duration::from_secs(120), start)?;
    check(
        wins >= 8,
        format!("MeADMM <= RASL on {wins}/10 (meadmm/rasl: {}), {t}", detail.join(" ")),
    )
}

// 6 and 7. Alignment and overhead.

struct FaceRun {
    rasl: (f64, f64),
    meadmm: (f64, f64),
    initial: (f64, f64),
    seconds: (f64, f64),
}

fn face_alignment() -> Result<FaceRun, String> {
    let mut spec = SynthSpec::new(
        BaseImage::Generator { kind: Generator::Face, height: 40, width: 40 },
        20,
        1,
    );
    spec.rotation_range = 10.0;
    spec.shift_range = 3.0;
    let out = synthesize(&spec).map_err(|e| e.to_string())?;
    let truth = out.ground_truth();
    let init = TransformStack::identity(TransformGroup::Similarity, 20);
    let score = |taus: &TransformStack| -> Result<(f64, f64), String> {
        let r = landmark_error(taus, &truth.landmarks, &truth.base_landmarks, truth.shape)
            .map_err(|e| e.to_string())?;
        Ok((r.mean_error, r.max_error))
    };
    let run = |method| -> Result<((f64, f64), f64), String> {
        let config = SolverConfig { method, mu_schedule: MuSchedule::Increasing, ..Default::default() };
        let t = Instant::now();
        let res = align_and_decompose(&out.batch.images, &init, &config, &mut NoTrace)
            .map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        Ok((score(&res.taus)?, secs))
    };
    let (rasl, tr) = run(Method::Rasl)?;
    let (meadmm, tm) = run(Method::Meadmm)?;
    Ok(FaceRun { rasl, meadmm, initial: score(&init)?, seconds: (tr, tm) })
}

fn alignment_regression(run: &FaceRun) -> Outcome {
    let (r, m) = (run.rasl, run.meadmm);
    let ok = r.0 < 0.5 && m.0 < 0.5 && r.1 < 1.5 && m.1 < 1.5 && m.0 <= r.0 + 0.05;
    let total = run.seconds.0 + run.seconds.1;
    check(
        ok && total < 180.0,
        format!(
            "initial {:.3}/{:.3}, rasl {:.3}/{:.3}, meadmm {:.3}/{:.3} px (mean/max), {total:.2}s",
            run.initial.0, run.initial.1, r.0, r.1, m.0, m.1
        ),
    )
}

fn overhead(run: &FaceRun) -> Outcome {
    let ratio = run.seconds.1 / run.seconds.0;
    check(
        ratio <= 5.0,
        format!("meadmm {:.2}s / rasl {:.2}s = {ratio:.2}x", run.seconds.1, run.seconds.0),
    )
}

// 8. Determinism through the CLI.

fn lrd(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lrd"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("lrd {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn matrix_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap().flatten() {
        let p = entry.path();
        if p.is_dir() {
            out.extend(matrix_files(&p));
        } else if p.extension().is_some_and(|e| e == "lrdm") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let d = data.to_str().unwrap();
    lrd(&["synth", "--count", "12", "--height", "32", "--width", "32", "--rotate", "6", "--shift", "2", "--seed", "8", "--out", d])?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        lrd(&["compare", "--input", d, "--mu-schedule", "increasing", "--seed", "8", "--out", out.to_str().unwrap()])?;
        runs.push(out);
    }
    let (fa, fb) = (matrix_files(&runs[0]), matrix_files(&runs[1]));
    let rel = |root: &Path, p: &Path| p.strip_prefix(root).unwrap().to_path_buf();
    if fa.is_empty() || fa.iter().map(|p| rel(&runs[0], p)).ne(fb.iter().map(|p| rel(&runs[1], p))) {
        return Err(format!("matrix file sets differ ({} vs {})", fa.len(), fb.len()));
    }
    for (a, b) in fa.iter().zip(&fb) {
        if std::fs::read(a).unwrap() != std::fs::read(b).unwrap() {
            return Err(format!("{} differs between runs", rel(&runs[0], a).display()));
        }
    }
    Ok(format!("{} matrix files bit-identical across two compare runs", fa.len()))
}

// 9. LRDM round trip.

fn format_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut shapes = vec![(1, 1), (1, 17), (17, 1), (1, 0), (0, 1)];
    while shapes.len() < 100 {
        shapes.push((rng.random_range(1..20), rng.random_range(1..20)));
    }
    for (i, &(r, c)) in shapes.iter().enumerate() {
        let m = DenseMatrix::from_fn(r, c, |_, _| f64::from_bits(rng.random::<u64>()));
        let path = tmp.path().join(format!("{i}.lrdm"));
        write_matrix(&path, &m).map_err(|e| e.to_string())?;
        let back = read_matrix(&path).map_err(|e| e.to_string())?;
        let same = back.shape() == m.shape() && back.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        let size = std::fs::metadata(&path).unwrap().len() as usize;
        if !same || size != 16 + 8 * r * c {
            return Err(format!("{r}x{c} matrix did not round-trip"));
        }
    }
    Ok("100 matrices incl. 1x1, 1xN, Nx1, 1x0 bit-identical".into())
}

fn main() {
    let face = catch_unwind(face_alignment).unwrap_or_else(|_| Err("panicked".into()));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("prox-operator oracles", Box::new(prox_oracles)),
        ("jacobian vs finite differences", Box::new(jacobian_fd)),
        ("geodesics vs Floyd-Warshall", Box::new(geodesic_oracle)),
        ("robust PCA recovery", Box::new(rpca_recovery)),
        ("manifold benefit", Box::new(manifold_benefit)),
        ("alignment regression", Box::new(|| face.as_ref().map_err(Clone::clone).and_then(alignment_regression))),
        ("meadmm overhead", Box::new(|| face.as_ref().map_err(Clone::clone).and_then(overhead))),
        ("compare determinism", Box::new(determinism)),
        ("matrix format round trip", Box::new(format_round_trip)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(d) => println!("AC{} PASS {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("AC{} FAIL {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
