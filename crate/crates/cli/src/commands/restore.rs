use std::time::Instant;

use log::{info, warn};
use uwrestore_core::imaging::{load_image_native, save_gray_png, save_png};
use uwrestore_core::networks::restore_image;
use uwrestore_core::trainer::load_generators;

use super::{create_dir, image_files, stem};
use crate::error::{CliError, CliResult};
use crate::RestoreArgs;

pub fn run(args: &RestoreArgs) -> CliResult {
    if !args.checkpoint.is_file() {
        return Err(CliError::usage(format!("checkpoint not found: {}", args.checkpoint.display())));
    }
    if args.size < 16 || args.size % 4 != 0 {
        return Err(CliError::usage("--size must be a multiple of 4 and at least 16"));
    }
    let (_, f, _) = load_generators(&args.checkpoint)?;
    let inputs = image_files(&args.input)?;
    create_dir(&args.output)?;
    let started = Instant::now();
    let mut done = 0usize;
    for path in &inputs {
        let img = match load_image_native(path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let r = match restore_image(&f, &img, args.size) {
            Ok(r) => r,
            Err(e) => {
                warn!("cannot restore {}: {e}", path.display());
                continue;
            }
        };
        let name = stem(path);
        save_png(&r.restored, args.output.join(format!("{name}.png")))?;
        if args.emit_depth {
            save_gray_png(&r.depth.to_gray(), args.output.join(format!("{name}_depth.png")))?;
        }
        if args.emit_backscatter {
            save_png(&r.backscatter, args.output.join(format!("{name}_backscatter.png")))?;
        }
        done += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    info!(
        "restored {done} of {} images in {secs:.2}s ({:.2} FPS)",
        inputs.len(),
        done as f64 / secs.max(1e-9)
    );
    Ok(())
}
