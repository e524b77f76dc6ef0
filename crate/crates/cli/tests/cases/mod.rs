//! Example-driven checks of every subcommand against the shipped sample
//! set. Shared by the CLI integration tests and the acceptance runner.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use uwrestore_core::data::{DepthSource, SyntheticManifest};
use uwrestore_core::imaging::{load_image_native, save_png, ImageRgb};
use uwrestore_core::physics::fit_constant_params;

pub type CaseResult = Result<(), String>;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_uwrestore"))
}

pub fn sample_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn expect_status(out: &Output, code: i32) -> CaseResult {
    match out.status.code() {
        Some(c) if c == code => Ok(()),
        other => Err(format!(
            "expected exit {code}, got {other:?}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stderr)
        )),
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> CaseResult {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn copy_first(src: &Path, dst: &Path, n: usize) -> Vec<String> {
    std::fs::create_dir_all(dst).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(src)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    names.truncate(n);
    for n in &names {
        std::fs::copy(src.join(n), dst.join(n)).unwrap();
    }
    names
}

fn train_config(extra: &str) -> String {
    let s = sample_dir();
    format!(
        "underwater_dir = {:?}\nterrestrial_dir = {:?}\nimage_size = 32\nbatch_size = 4\n\
         sample_every = 0\n{extra}\n[network]\ndepth_width = 8\nresidual_blocks = 1\n\
         encoder_width = 8\nencoder_blocks = 4\ndisc_width = 8\n",
        path_str(&s.join("underwater")),
        path_str(&s.join("terrestrial")),
    )
}

fn checkpoints_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".safetensors"))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

/// A small checkpoint trained for one epoch on the sample set, shared by
/// the restore cases.
pub fn shared_checkpoint() -> PathBuf {
    static CK: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    CK.get_or_init(|| {
        let dir = tempdir();
        let cfg = dir.path().join("cfg.toml");
        std::fs::write(&cfg, train_config("total_epochs = 1\ndecay_start_epoch = 0")).unwrap();
        let out = dir.path().join("run");
        let o = run(&["train", "--config", path_str(&cfg), "--out-dir", path_str(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let ck = out.join("epoch_001.safetensors");
        (dir, ck)
    })
    .1
    .clone()
}

// ---- train ----

pub fn train_valid_config() -> CaseResult {
    let dir = tempdir();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, train_config("total_epochs = 1\ndecay_start_epoch = 0")).unwrap();
    let out = dir.path().join("run");
    let o = run(&["train", "--config", path_str(&cfg), "--out-dir", path_str(&out)]);
    expect_status(&o, 0)?;
    let cks = checkpoints_in(&out);
    check(cks == ["epoch_000.safetensors", "epoch_001.safetensors"], || format!("checkpoints {cks:?}"))?;
    let log = std::fs::read_to_string(out.join("train_log.csv")).map_err(|e| e.to_string())?;
    // 32 images per domain at batch 4: eight steps plus the header
    check(log.lines().count() == 9, || format!("log has {} lines", log.lines().count()))
}

pub fn train_unknown_key() -> CaseResult {
    let dir = tempdir();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, train_config("lr_deep = 0.001")).unwrap();
    let o = run(&["train", "--config", path_str(&cfg), "--out-dir", path_str(&dir.path().join("run"))]);
    expect_status(&o, 2)?;
    let err = String::from_utf8_lossy(&o.stderr);
    check(err.contains("lr_deep"), || format!("key not named: {err}"))
}

pub fn train_missing_data_dir() -> CaseResult {
    let dir = tempdir();
    let cfg = dir.path().join("cfg.toml");
    let text = train_config("").replace(path_str(&sample_dir().join("underwater")), "/nonexistent/uw");
    std::fs::write(&cfg, text).unwrap();
    let o = run(&["train", "--config", path_str(&cfg), "--out-dir", path_str(&dir.path().join("run"))]);
    expect_status(&o, 2)
}

pub fn train_resume_from_epoch_three() -> CaseResult {
    let dir = tempdir();
    let out = dir.path().join("run");
    let cfg3 = dir.path().join("a.toml");
    std::fs::write(&cfg3, train_config("total_epochs = 3\ndecay_start_epoch = 2")).unwrap();
    expect_status(&run(&["train", "--config", path_str(&cfg3), "--out-dir", path_str(&out)]), 0)?;
    let cfg4 = dir.path().join("b.toml");
    std::fs::write(&cfg4, train_config("total_epochs = 4\ndecay_start_epoch = 2")).unwrap();
    let ck = out.join("epoch_003.safetensors");
    let o = run(&[
        "train",
        "--config",
        path_str(&cfg4),
        "--out-dir",
        path_str(&out),
        "--resume",
        path_str(&ck),
    ]);
    expect_status(&o, 0)?;
    let err = String::from_utf8_lossy(&o.stderr);
    check(err.contains("resuming at epoch 3"), || format!("no resume notice: {err}"))?;
    check(out.join("epoch_004.safetensors").is_file(), || "epoch 4 checkpoint missing".into())?;
    let log = std::fs::read_to_string(out.join("train_log.csv")).map_err(|e| e.to_string())?;
    let last = log.lines().last().unwrap_or_default().to_string();
    check(last.starts_with("3,32,"), || format!("last log line {last}"))
}

// ---- restore ----

pub fn restore_counts_outputs() -> CaseResult {
    let ck = shared_checkpoint();
    let dir = tempdir();
    let input = dir.path().join("in");
    copy_first(&sample_dir().join("underwater"), &input, 10);
    let out = dir.path().join("out");
    let o = run(&[
        "restore",
        "--checkpoint",
        path_str(&ck),
        "--input",
        path_str(&input),
        "--output",
        path_str(&out),
        "--emit-depth",
        "--emit-backscatter",
        "--size",
        "64",
    ]);
    expect_status(&o, 0)?;
    let names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let depth = names.iter().filter(|n| n.ends_with("_depth.png")).count();
    let back = names.iter().filter(|n| n.ends_with("_backscatter.png")).count();
    check((names.len(), depth, back) == (30, 10, 10), || format!("outputs {names:?}"))?;
    let err = String::from_utf8_lossy(&o.stderr);
    check(err.contains("FPS"), || format!("no throughput line: {err}"))
}

pub fn restore_skips_non_images() -> CaseResult {
    let ck = shared_checkpoint();
    let dir = tempdir();
    let input = dir.path().join("in");
    copy_first(&sample_dir().join("underwater"), &input, 2);
    std::fs::write(input.join("notes.txt"), "not an image").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "restore",
        "--checkpoint",
        path_str(&ck),
        "--input",
        path_str(&input),
        "--output",
        path_str(&out),
        "--size",
        "32",
    ]);
    expect_status(&o, 0)?;
    let n = std::fs::read_dir(&out).unwrap().count();
    check(n == 2, || format!("{n} outputs"))?;
    let err = String::from_utf8_lossy(&o.stderr);
    check(err.contains("notes.txt"), || format!("no warning: {err}"))
}

pub fn restore_missing_checkpoint() -> CaseResult {
    let dir = tempdir();
    let o = run(&[
        "restore",
        "--checkpoint",
        path_str(&dir.path().join("nope.safetensors")),
        "--input",
        path_str(&sample_dir().join("underwater")),
        "--output",
        path_str(&dir.path().join("out")),
    ]);
    expect_status(&o, 2)
}

// ---- degrade ----

fn degrade_args<'a>(input: &'a Path, output: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["degrade", "--input", path_str(input), "--output", path_str(output)];
    v.extend_from_slice(extra);
    v
}

pub fn degrade_zero_depth_is_identity() -> CaseResult {
    let dir = tempdir();
    let input = dir.path().join("in");
    let names = copy_first(&sample_dir().join("terrestrial"), &input, 3);
    let out = dir.path().join("out");
    expect_status(&run(&degrade_args(&input, &out, &["--sample", "1", "--depth", "constant:0"])), 0)?;
    for n in &names {
        let a = load_image_native(input.join(n)).map_err(|e| e.to_string())?;
        let b = load_image_native(out.join(n)).map_err(|e| e.to_string())?;
        let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        check(worst < 1e-12, || format!("{n} differs by {worst}"))?;
    }
    Ok(())
}

pub fn degrade_sample_seed_is_reproducible() -> CaseResult {
    let dir = tempdir();
    let input = dir.path().join("in");
    let names = copy_first(&sample_dir().join("terrestrial"), &input, 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    expect_status(&run(&degrade_args(&input, &a, &["--sample", "42"])), 0)?;
    expect_status(&run(&degrade_args(&input, &b, &["--sample", "42"])), 0)?;
    for n in &names {
        let stem = n.trim_end_matches(".png");
        for f in [n.clone(), format!("{stem}.toml")] {
            let (x, y) = (std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap());
            check(x == y, || format!("{f} differs between runs"))?;
        }
    }
    Ok(())
}

pub fn degrade_manifest_closes_fit_loop() -> CaseResult {
    let dir = tempdir();
    let input = dir.path().join("in");
    let names = copy_first(&sample_dir().join("terrestrial"), &input, 2);
    let out = dir.path().join("out");
    expect_status(&run(&degrade_args(&input, &out, &["--sample", "7", "--depth", "gradient:0.5:5"])), 0)?;
    for n in &names {
        let stem = n.trim_end_matches(".png");
        let m = SyntheticManifest::load(&out.join(format!("{stem}.toml"))).map_err(|e| e.to_string())?;
        let clean = load_image_native(input.join(&m.image)).map_err(|e| e.to_string())?;
        let degraded = load_image_native(out.join(n)).map_err(|e| e.to_string())?;
        let depth: DepthSource = m.depth.parse().map_err(|e: uwrestore_core::Error| e.to_string())?;
        let z = depth.build(clean.height(), clean.width()).map_err(|e| e.to_string())?;
        let fit = fit_constant_params(&degraded, &clean, &z).map_err(|e| e.to_string())?;
        for (got, want) in [
            (fit.params.t_d, m.params.t_d),
            (fit.params.t_b, m.params.t_b),
            (fit.params.b_inf, m.params.b_inf),
        ] {
            for c in 0..3 {
                let err = (got.get(c) - want.get(c)).abs();
                check(err < 1e-3, || format!("{n}: recovered {got:?}, manifest {want:?}"))?;
            }
        }
    }
    Ok(())
}

pub fn degrade_rejects_out_of_range_params() -> CaseResult {
    let dir = tempdir();
    let params = dir.path().join("p.toml");
    std::fs::write(
        &params,
        "t_d_r = 1.5\nt_d_g = 0.5\nt_d_b = 0.5\nt_b_r = 0.5\nt_b_g = 0.5\nt_b_b = 0.5\n\
         b_inf_r = 0.3\nb_inf_g = 0.8\nb_inf_b = 0.8\n",
    )
    .unwrap();
    let o = run(&degrade_args(
        &sample_dir().join("terrestrial"),
        &dir.path().join("out"),
        &["--params", path_str(&params)],
    ));
    expect_status(&o, 2)?;
    let err = String::from_utf8_lossy(&o.stderr);
    check(err.contains("t_d_r") && err.contains("b_inf_r"), || format!("violations not listed: {err}"))
}

// ---- eval ----

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let header = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok((header, rows))
}

pub fn eval_unpaired_rows_and_footer() -> CaseResult {
    let dir = tempdir();
    let input = dir.path().join("in");
    copy_first(&sample_dir().join("underwater"), &input, 5);
    let report = dir.path().join("report.csv");
    expect_status(&run(&["eval", "--input", path_str(&input), "--report", path_str(&report)]), 0)?;
    let (header, rows) = read_csv(&report)?;
    check(rows.len() == 6, || format!("{} rows", rows.len()))?;
    check(rows[5][0] == "mean", || "footer missing".into())?;
    check(!header.iter().any(|h| h == "ssim"), || format!("unexpected ssim column: {header:?}"))
}

pub fn eval_paired_adds_columns() -> CaseResult {
    let dir = tempdir();
    let input = dir.path().join("in");
    let restored = dir.path().join("restored");
    copy_first(&sample_dir().join("underwater"), &input, 3);
    let names = copy_first(&sample_dir().join("terrestrial"), &restored, 2);
    let report = dir.path().join("report.csv");
    let o = run(&[
        "eval",
        "--input",
        path_str(&input),
        "--restored",
        path_str(&restored),
        "--report",
        path_str(&report),
    ]);
    expect_status(&o, 0)?;
    let (header, rows) = read_csv(&report)?;
    check(header.iter().any(|h| h == "ssim") && header.iter().any(|h| h == "sift_match"), || {
        format!("pair columns missing: {header:?}")
    })?;
    // the third input has no partner and is listed, then skipped
    check(rows.len() == names.len() + 1, || format!("{} rows", rows.len()))?;
    let err = String::from_utf8_lossy(&o.stderr);
    check(err.contains("002.png"), || format!("unpaired file not listed: {err}"))
}

pub fn eval_footer_is_column_mean() -> CaseResult {
    let dir = tempdir();
    let input = dir.path().join("in");
    copy_first(&sample_dir().join("underwater"), &input, 4);
    let report = dir.path().join("report.csv");
    expect_status(&run(&["eval", "--input", path_str(&input), "--report", path_str(&report)]), 0)?;
    let (header, rows) = read_csv(&report)?;
    let (footer, body) = rows.split_last().unwrap();
    for col in 1..header.len() {
        let values: Vec<f64> = body.iter().map(|r| r[col].parse::<f64>().unwrap()).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let got: f64 = footer[col].parse().unwrap();
        check((got - mean).abs() <= 1e-12 * mean.abs().max(1.0), || {
            format!("{}: footer {got}, recomputed {mean}", header[col])
        })?;
    }
    Ok(())
}

// ---- mask ----

fn mask_count(prefix: &Path) -> Result<(usize, Vec<usize>), String> {
    let mut p = prefix.as_os_str().to_owned();
    p.push("_mask.png");
    let img = load_image_native(PathBuf::from(p)).map_err(|e| e.to_string())?;
    let w = img.width();
    let mut set = Vec::new();
    for y in 0..img.height() {
        for x in 0..w {
            if img.pixel(y, x)[0] > 0.5 {
                set.push(y * w + x);
            }
        }
    }
    Ok((set.len(), set))
}

pub fn mask_default_count_on_256() -> CaseResult {
    let dir = tempdir();
    let img = load_image_native(sample_dir().join("underwater/000.png")).map_err(|e| e.to_string())?;
    let input = dir.path().join("big.png");
    save_png(&img.resize(256, 256), &input).map_err(|e| e.to_string())?;
    let prefix = dir.path().join("m");
    expect_status(&run(&["mask", "--input", path_str(&input), "--output-prefix", path_str(&prefix)]), 0)?;
    for suffix in ["_dcp.png", "_mask.png", "_masked.png"] {
        let mut p = prefix.as_os_str().to_owned();
        p.push(suffix);
        check(PathBuf::from(p).is_file(), || format!("{suffix} missing"))?;
    }
    let (n, _) = mask_count(&prefix)?;
    check(n == 656, || format!("{n} pixels set"))
}

pub fn mask_full_fraction_is_capped() -> CaseResult {
    let dir = tempdir();
    let input = sample_dir().join("underwater/001.png");
    let prefix = dir.path().join("m");
    let o = run(&[
        "mask",
        "--input",
        path_str(&input),
        "--output-prefix",
        path_str(&prefix),
        "--fraction",
        "1.0",
    ]);
    expect_status(&o, 0)?;
    let (n, _) = mask_count(&prefix)?;
    check(n == 10_000, || format!("{n} pixels set on a 128x128 image"))
}

pub fn mask_constant_image_takes_prefix() -> CaseResult {
    let dir = tempdir();
    let input = dir.path().join("flat.png");
    save_png(&ImageRgb::filled(40, 30, [0.5, 0.4, 0.6]), &input).map_err(|e| e.to_string())?;
    let prefix = dir.path().join("m");
    expect_status(&run(&["mask", "--input", path_str(&input), "--output-prefix", path_str(&prefix)]), 0)?;
    let (n, set) = mask_count(&prefix)?;
    check(n == 12 && set == (0..12).collect::<Vec<_>>(), || format!("set pixels {set:?}"))
}

// ---- grid ----

pub fn grid_two_rows_three_columns() -> CaseResult {
    let dir = tempdir();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    copy_first(&sample_dir().join("underwater"), &a, 3);
    copy_first(&sample_dir().join("terrestrial"), &b, 3);
    let out = dir.path().join("grid.png");
    expect_status(&run(&["grid", path_str(&a), path_str(&b), "--output", path_str(&out)]), 0)?;
    let g = load_image_native(&out).map_err(|e| e.to_string())?;
    let want = (2 * 256 + 4, 3 * 256 + 2 * 4);
    check((g.height(), g.width()) == want, || format!("grid is {}x{}", g.height(), g.width()))
}

pub fn grid_single_row_strip() -> CaseResult {
    let dir = tempdir();
    let a = dir.path().join("a");
    copy_first(&sample_dir().join("underwater"), &a, 4);
    let out = dir.path().join("strip.png");
    expect_status(&run(&["grid", path_str(&a), "--output", path_str(&out), "--cell", "64"]), 0)?;
    let g = load_image_native(&out).map_err(|e| e.to_string())?;
    check((g.height(), g.width()) == (64, 4 * 64 + 3 * 4), || format!("strip is {}x{}", g.height(), g.width()))
}

pub fn grid_mismatch_reports_diff() -> CaseResult {
    let dir = tempdir();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    copy_first(&sample_dir().join("underwater"), &a, 3);
    copy_first(&sample_dir().join("terrestrial"), &b, 2);
    let o = run(&["grid", path_str(&a), path_str(&b), "--output", path_str(&dir.path().join("g.png"))]);
    expect_status(&o, 2)?;
    let err = String::from_utf8_lossy(&o.stderr);
    check(err.contains("missing in") && err.contains("002.png"), || format!("no diff: {err}"))
}

/// Every case, labelled by subcommand.
pub fn all() -> Vec<(&'static str, fn() -> CaseResult)> {
    vec![
        ("train: valid config", train_valid_config),
        ("train: unknown key", train_unknown_key),
        ("train: missing data dir", train_missing_data_dir),
        ("train: resume at epoch 3", train_resume_from_epoch_three),
        ("restore: output cardinality", restore_counts_outputs),
        ("restore: non-image skipped", restore_skips_non_images),
        ("restore: missing checkpoint", restore_missing_checkpoint),
        ("degrade: zero depth identity", degrade_zero_depth_is_identity),
        ("degrade: seeded reproducibility", degrade_sample_seed_is_reproducible),
        ("degrade: manifest fit loop", degrade_manifest_closes_fit_loop),
        ("degrade: out-of-range params", degrade_rejects_out_of_range_params),
        ("eval: unpaired rows", eval_unpaired_rows_and_footer),
        ("eval: paired columns", eval_paired_adds_columns),
        ("eval: footer means", eval_footer_is_column_mean),
        ("mask: 656 on 256x256", mask_default_count_on_256),
        ("mask: full fraction capped", mask_full_fraction_is_capped),
        ("mask: constant prefix", mask_constant_image_takes_prefix),
        ("grid: 2x3 layout", grid_two_rows_three_columns),
        ("grid: single row", grid_single_row_strip),
        ("grid: mismatch diff", grid_mismatch_reports_diff),
    ]
}
