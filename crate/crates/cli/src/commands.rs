use std::path::{Path, PathBuf};
use std::time::Instant;

use elastreg_core::synth::{all_traces_monotone, BenchSettings, Case4Sweep};
use elastreg_core::{
    build_interpolant, extract_pose, load_frame, register as run_method, run_benchmark, run_speed_curve, synthesize,
    BenchCase, Method, ScalarImage, SynthKind, SynthSpec,
};

use crate::args::{BenchArgs, Common, KindArg, RegisterArgs, SpeedArgs, SynthArgs};
use crate::config::{parse_list, resolve, Resolved};
use crate::output::{self, f6, Manifest};
use crate::{CliError, CliResult};

const FRAME_EXTENSIONS: [&str; 5] = ["png", "pgm", "ppm", "pbm", "pnm"];

macro_rules! say {
    ($common:expr, $($arg:tt)*) => {
        if !$common.quiet {
            println!($($arg)*);
        }
    };
}

fn setup(common: &Common) -> CliResult<Resolved> {
    let resolved = resolve(common)?;
    if let Some(j) = resolved.jobs {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    output::create_dir(&common.out)?;
    Ok(resolved)
}

/// Image files of `dir` in lexicographic filename order.
fn list_frames(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let ingest = |reason: String| elastreg_core::Error::Ingestion {
        path: dir.to_path_buf(),
        reason,
    };
    let entries = std::fs::read_dir(dir).map_err(|e| ingest(e.to_string()))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| ingest(e.to_string()))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| FRAME_EXTENSIONS.contains(&e.as_str())) {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

fn load_all(paths: &[PathBuf], n: usize) -> CliResult<Vec<ScalarImage>> {
    paths.iter().map(|p| Ok(load_frame(p, n)?)).collect()
}

fn series_name(m: Method) -> &'static str {
    match m {
        Method::Mpir => "mpir",
        Method::Meir | Method::MeirIterated => "meir",
    }
}

pub fn register(a: &RegisterArgs, argv: &[String]) -> CliResult<()> {
    let cfg = setup(&a.common)?;
    let out = &a.common.out;
    let mut manifest = Manifest::start("register", argv);
    manifest.input(&a.reference);
    manifest.input(&a.template);
    let r = load_frame(&a.reference, cfg.frame_size)?;
    let t = load_frame(&a.template, cfg.frame_size)?;
    let grid = cfg.registration.grid(&t);
    let r_on_grid = build_interpolant(&r, 0.0)?.sample(&grid);

    let mut results = Vec::new();
    let mut traces = Vec::new();
    for method in cfg.methods() {
        let res = run_method(&r, &t, method, &cfg.registration)?;
        let pose = extract_pose(&res);
        let name = series_name(method);
        say!(
            a.common,
            "{}: ndm {:.6} scale {:.6} rotation {:.6} deg translation ({:.6}, {:.6}) in {:.2} s",
            method.as_str(),
            res.ndm,
            pose.scale,
            pose.rotation_degrees,
            pose.translation[0],
            pose.translation[1],
            res.wall_time
        );
        for w in &res.warnings {
            log::warn!("{}: {w}", method.as_str());
        }
        manifest.note(&format!("wall_time_{name}"), format!("{:.3}", res.wall_time));
        results.push(vec![
            method.as_str().to_string(),
            f6(res.ndm),
            f6(pose.scale),
            f6(pose.rotation_degrees),
            f6(pose.translation[0]),
            f6(pose.translation[1]),
            res.warnings.len().to_string(),
        ]);
        for rec in &res.per_scale {
            for it in &rec.trace.iterates {
                traces.push(vec![
                    method.as_str().to_string(),
                    rec.pass.to_string(),
                    rec.stage.as_str().to_string(),
                    f6(rec.theta),
                    it.iteration.to_string(),
                    f6(it.objective),
                    f6(it.grad_norm),
                    f6(it.step),
                ]);
            }
        }
        let warped = out.join(format!("warped_{name}.png"));
        res.warped_template.save(&warped)?;
        let diff = out.join(format!("difference_{name}.png"));
        output::difference_image(&r_on_grid, &res.warped_template)?.save(&diff)?;
        let plot = out.join(format!("grid_{name}.svg"));
        output::write_file(&plot, &output::deformed_grid_svg(&res.final_displacement, grid.nx() / 16))?;
        for p in [warped, diff, plot] {
            manifest.output(&p);
        }
    }
    let result_csv = out.join("result.csv");
    output::write_csv(
        &result_csv,
        &["method", "ndm", "scale", "rotation_degrees", "tx", "ty", "warnings"],
        &results,
    )?;
    let trace_csv = out.join("trace.csv");
    output::write_csv(
        &trace_csv,
        &["method", "pass", "stage", "theta", "iteration", "objective", "grad_norm", "step"],
        &traces,
    )?;
    manifest.output(&result_csv);
    manifest.output(&trace_csv);
    manifest.finish(out, &cfg)
}

pub fn speed(a: &SpeedArgs, argv: &[String]) -> CliResult<()> {
    let cfg = setup(&a.common)?;
    let out = &a.common.out;
    let mut manifest = Manifest::start("speed", argv);
    let paths = list_frames(&a.frames)?;
    if paths.len() < 2 {
        return Err(elastreg_core::Error::Ingestion {
            path: a.frames.clone(),
            reason: format!("a speed curve needs at least two frames, found {}", paths.len()),
        }
        .into());
    }
    for p in &paths {
        manifest.input(p);
    }
    let frames = load_all(&paths, cfg.frame_size)?;
    let start = Instant::now();
    let mut series = Vec::new();
    for method in cfg.methods() {
        let curve = run_speed_curve(&frames, method, &cfg.registration)?;
        for p in curve.points.iter().filter(|p| p.flagged) {
            log::warn!("{}: pair {} did not converge cleanly", method.as_str(), p.index);
        }
        series.push((series_name(method), curve.points.iter().map(|p| p.ndm).collect::<Vec<_>>()));
    }
    let elapsed = start.elapsed().as_secs_f64();
    say!(a.common, "{} pairs in {elapsed:.2} s", frames.len() - 1);
    manifest.note("wall_time", format!("{elapsed:.3}"));

    let file_name = |k: usize| paths[k].file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut header = vec!["pair_index".to_string(), "template_frame".into(), "reference_frame".into()];
    header.extend(series.iter().map(|(n, _)| format!("ndm_{n}")));
    let rows: Vec<Vec<String>> = (0..frames.len() - 1)
        .map(|k| {
            let mut row = vec![k.to_string(), file_name(k), file_name(k + 1)];
            row.extend(series.iter().map(|(_, v)| f6(v[k])));
            row
        })
        .collect();
    let csv_path = out.join("speed.csv");
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    output::write_csv(&csv_path, &header, &rows)?;
    let plot = out.join("speed.svg");
    output::write_file(&plot, &output::curve_svg(&series))?;
    manifest.output(&csv_path);
    manifest.output(&plot);
    manifest.finish(out, &cfg)
}

pub fn synth(a: &SynthArgs, argv: &[String]) -> CliResult<()> {
    let cfg = setup(&a.common)?;
    let out = &a.common.out;
    let mut manifest = Manifest::start("synth", argv);
    manifest.input(&a.frame);
    let img = load_frame(&a.frame, cfg.frame_size)?;
    let spec = SynthSpec {
        kind: match a.kind {
            KindArg::Rigid => SynthKind::Rigid,
            KindArg::Elastic => SynthKind::Elastic,
            KindArg::RigidElastic => SynthKind::RigidElastic,
        },
        scale: a.scale,
        rotation_degrees: a.rotation,
        elastic_intensity: a.intensity,
        seed: cfg.seed,
        smoothing_sigma: a.sigma,
        pad_margin: a.pad,
    };
    let pair = synthesize(&img, &spec)?;
    for w in &pair.warnings {
        log::warn!("{w}");
    }
    let reference = out.join("reference.png");
    let template = out.join("template.png");
    pair.reference.save(&reference)?;
    pair.template.save(&template)?;
    let truth = out.join("truth.csv");
    let w = pair.truth;
    output::write_csv(
        &truth,
        &["scale", "rotation_degrees", "tx", "ty", "elastic_intensity", "seed"],
        &[vec![
            f6(w.scale),
            f6(w.rotation_degrees()),
            f6(w.tx),
            f6(w.ty),
            f6(spec.elastic_intensity),
            spec.seed.to_string(),
        ]],
    )?;
    for p in [&reference, &template, &truth] {
        manifest.output(p);
    }
    manifest.finish(out, &cfg)
}

fn steps(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step).round() as usize;
    (0..=n).map(|k| from + step * k as f64).collect()
}

/// Default sweep values for each case.
fn default_sweep(case: BenchCase, case4: Case4Sweep) -> Vec<f64> {
    match (case, case4) {
        (BenchCase::I, _) => vec![0.0],
        (BenchCase::Ii, _) | (BenchCase::Iv, Case4Sweep::Rotations { .. }) => steps(5.0, 30.0, 5.0),
        (BenchCase::Iii, _) => vec![0.4, 0.6, 0.8, 1.2, 1.4],
        (BenchCase::Iv, Case4Sweep::Scales { .. }) => vec![0.4, 0.6, 0.8, 1.2, 1.4, 1.6],
    }
}

pub const BENCH_HEADER: [&str; 10] = [
    "label",
    "value",
    "ndm_meir",
    "ndm_mpir",
    "scale_err_meir",
    "scale_err_mpir",
    "rot_err_meir",
    "rot_err_mpir",
    "count",
    "failures",
];

pub fn bench(a: &BenchArgs, argv: &[String]) -> CliResult<()> {
    let cfg = setup(&a.common)?;
    let out = &a.common.out;
    let mut manifest = Manifest::start("bench", argv);
    let case = BenchCase::parse(&a.case).map_err(|e| CliError::Usage(e.to_string()))?;
    let case4 = match (a.fixed_scale, a.fixed_rotation) {
        (_, Some(r)) => Case4Sweep::Scales {
            fixed_rotation_degrees: r,
        },
        (s, None) => Case4Sweep::Rotations {
            fixed_scale: s.unwrap_or(1.4),
        },
    };
    let sweep = match &a.sweep {
        Some(s) => parse_list(s, "sweep")?,
        None => default_sweep(case, case4),
    };
    let paths = list_frames(&a.frames)?;
    if paths.is_empty() {
        return Err(elastreg_core::Error::Ingestion {
            path: a.frames.clone(),
            reason: "no frames found".into(),
        }
        .into());
    }
    for p in &paths {
        manifest.input(p);
    }
    let frames = load_all(&paths, cfg.frame_size)?;
    let settings = BenchSettings {
        case,
        sweep,
        case4,
        elastic_intensity: a.intensity,
        smoothing_sigma: a.sigma,
        pad_margin: a.pad,
        seed: cfg.seed,
    };
    let start = Instant::now();
    let report = run_benchmark(&frames, &settings, &cfg.registration)?;
    let elapsed = start.elapsed().as_secs_f64();
    let monotone = all_traces_monotone(&report);
    say!(a.common, "case {} over {} frames in {elapsed:.2} s", case.as_str(), frames.len());
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            say!(
                a.common,
                "{:>14}  ndm {:.6}/{:.6}  scale err {:.6}/{:.6}  rot err {:.6}/{:.6}",
                r.label, r.ndm_meir, r.ndm_mpir, r.scale_err_meir, r.scale_err_mpir, r.rot_err_meir, r.rot_err_mpir
            );
            vec![
                r.label.clone(),
                f6(r.value),
                f6(r.ndm_meir),
                f6(r.ndm_mpir),
                f6(r.scale_err_meir),
                f6(r.scale_err_mpir),
                f6(r.rot_err_meir),
                f6(r.rot_err_mpir),
                r.count.to_string(),
                r.failures.to_string(),
            ]
        })
        .collect();
    let csv_path = out.join(format!("bench_{}.csv", case.as_str()));
    output::write_csv(&csv_path, &BENCH_HEADER, &rows)?;
    manifest.output(&csv_path);
    manifest.note("case", case.as_str());
    manifest.note("elastic_intensity", a.intensity);
    manifest.note("smoothing_sigma", a.sigma);
    manifest.note("pad_margin", a.pad);
    manifest.note("traces_monotone", monotone);
    manifest.note("wall_time", format!("{elapsed:.3}"));
    manifest.finish(out, &cfg)
}
