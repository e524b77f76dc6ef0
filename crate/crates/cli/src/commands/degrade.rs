use log::{info, warn};
use uwrestore_core::data::{DepthSource, ParamSampler, SyntheticManifest};
use uwrestore_core::imaging::{load_image_native, save_png16};
use uwrestore_core::physics::{degrade, DegradationParams};

use super::{create_dir, image_files, stem};
use crate::error::{CliError, CliResult};
use crate::DegradeArgs;

/// Writes `<name>.png` (16-bit, so manifests can be checked numerically)
/// and `<name>.toml` with the exact parameters used.
pub fn run(args: &DegradeArgs) -> CliResult {
    let depth: DepthSource = args.depth.parse()?;
    let fixed = match &args.params {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!("params file not found: {}", path.display())));
            }
            let p = DegradationParams::load(path)?;
            p.validate()?;
            Some(p)
        }
        None => None,
    };
    let mut sampler = args.sample.map(ParamSampler::new);
    let inputs = image_files(&args.input)?;
    create_dir(&args.output)?;
    let mut written = 0usize;
    for path in &inputs {
        let clean = match load_image_native(path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let params = match (&fixed, sampler.as_mut()) {
            (Some(p), _) => *p,
            (None, Some(s)) => s.sample(),
            (None, None) => unreachable!("clap requires --params or --sample"),
        };
        let z = depth.build(clean.height(), clean.width())?;
        let out = degrade(&clean, &z, &params)?.clamped();
        let name = stem(path);
        save_png16(&out, args.output.join(format!("{name}.png")))?;
        let manifest = SyntheticManifest {
            image: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            depth: depth.to_string(),
            seed: args.sample,
            params,
        };
        let mpath = args.output.join(format!("{name}.toml"));
        std::fs::write(&mpath, manifest.to_toml())
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", mpath.display())))?;
        written += 1;
    }
    info!("wrote {written} degraded images to {}", args.output.display());
    Ok(())
}
