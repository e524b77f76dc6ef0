use std::collections::BTreeMap;
use std::path::PathBuf;

use log::{info, warn};
use uwrestore_core::imaging::{load_image_native, ImageRgb};
use uwrestore_core::metrics::{evaluate, sift_match_count, ssim};

use super::{image_files, stem};
use crate::error::{CliError, CliResult};
use crate::EvalArgs;

const BASE_COLUMNS: [&str; 13] = [
    "sigma_c",
    "con_l",
    "mu_s",
    "uciqe",
    "d_o",
    "d_a",
    "d_b",
    "a_l",
    "u",
    "contrast",
    "laplacian_var",
    "sift",
    "harris",
];
const PAIR_COLUMNS: [&str; 2] = ["ssim", "sift_match"];

fn metric_row(img: &ImageRgb) -> Vec<f64> {
    let m = evaluate(img);
    vec![
        m.uciqe.sigma_c,
        m.uciqe.con_l,
        m.uciqe.mu_s,
        m.uciqe.uciqe,
        m.u.d_o,
        m.u.d_a,
        m.u.d_b,
        m.u.a_l,
        m.u.u,
        m.contrast,
        m.laplacian_variance,
        m.features.sift as f64,
        m.features.harris as f64,
    ]
}

fn pair_row(img: &ImageRgb, restored: &ImageRgb) -> CliResult<Vec<f64>> {
    let restored = restored.resize(img.height(), img.width());
    Ok(vec![ssim(img, &restored)?, sift_match_count(img, &restored) as f64])
}

/// One row per input image, then a `mean` footer. With a restored
/// directory, inputs are paired with restorations by file stem; unpaired
/// inputs are listed and skipped.
pub fn run(args: &EvalArgs) -> CliResult {
    let inputs = image_files(&args.input)?;
    let restored: Option<BTreeMap<String, PathBuf>> = match &args.restored {
        Some(dir) => Some(image_files(dir)?.into_iter().map(|p| (stem(&p), p)).collect()),
        None => None,
    };
    let mut header: Vec<&str> = vec!["image"];
    header.extend(BASE_COLUMNS);
    if restored.is_some() {
        header.extend(PAIR_COLUMNS);
    }
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut unpaired = Vec::new();
    for path in &inputs {
        let partner = match &restored {
            Some(map) => match map.get(&stem(path)) {
                Some(p) => Some(p),
                None => {
                    unpaired.push(path.display().to_string());
                    continue;
                }
            },
            None => None,
        };
        let img = match load_image_native(path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let mut values = metric_row(&img);
        if let Some(p) = partner {
            values.extend(pair_row(&img, &load_image_native(p)?)?);
        }
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        rows.push((name, values));
    }
    if !unpaired.is_empty() {
        warn!("no restoration for {} input(s), skipped:\n{}", unpaired.len(), unpaired.join("\n"));
    }
    if rows.is_empty() {
        return Err(CliError::usage("no images were evaluated"));
    }

    if let Some(parent) = args.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(&args.report)?;
    w.write_record(&header)?;
    let mut sums = vec![0.0; header.len() - 1];
    for (name, values) in &rows {
        let mut rec = vec![name.clone()];
        for (s, v) in sums.iter_mut().zip(values) {
            *s += v;
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    let mut footer = vec!["mean".to_string()];
    footer.extend(sums.iter().map(|s| (s / rows.len() as f64).to_string()));
    w.write_record(&footer)?;
    w.flush().map_err(|e| CliError::Runtime(e.into()))?;
    info!("{} rows written to {}", rows.len(), args.report.display());
    Ok(())
}
