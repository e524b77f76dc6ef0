use std::path::PathBuf;

use log::info;
use uwrestore_core::dcp::{darkest_mask, dcp_map};
use uwrestore_core::imaging::{load_image_native, save_gray_png, save_png};

use crate::error::{CliError, CliResult};
use crate::MaskArgs;

fn with_suffix(prefix: &std::path::Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(args: &MaskArgs) -> CliResult {
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return Err(CliError::usage(format!("--fraction must be in (0, 1], got {}", args.fraction)));
    }
    if args.cap == 0 {
        return Err(CliError::usage("--cap must be positive"));
    }
    let img = load_image_native(&args.input)?;
    let dcp = dcp_map(&img);
    let mask = darkest_mask(&dcp, args.fraction, args.cap);
    if let Some(parent) = args.output_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_dir(parent)?;
    }
    save_gray_png(&dcp, with_suffix(&args.output_prefix, "_dcp.png"))?;
    save_gray_png(&mask.to_gray(), with_suffix(&args.output_prefix, "_mask.png"))?;
    save_png(&mask.apply(&img), with_suffix(&args.output_prefix, "_masked.png"))?;
    info!("{} of {} pixels selected", mask.count(), img.height() * img.width());
    Ok(())
}
