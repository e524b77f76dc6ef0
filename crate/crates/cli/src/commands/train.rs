use log::info;
use uwrestore_core::data::UnpairedDataset;
use uwrestore_core::trainer::{self, TrainConfig, TrainState};

use crate::error::{CliError, CliResult};
use crate::TrainArgs;

pub fn run(args: &TrainArgs) -> CliResult {
    if !args.config.is_file() {
        return Err(CliError::usage(format!("config not found: {}", args.config.display())));
    }
    let mut cfg = TrainConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (Some(uw), Some(terr)) = (&cfg.underwater_dir, &cfg.terrestrial_dir) else {
        return Err(CliError::usage("config must set underwater_dir and terrestrial_dir"));
    };
    let ds = UnpairedDataset::from_dirs(uw, terr, cfg.image_size)?;
    info!(
        "{} underwater and {} terrestrial images, {} batches per epoch",
        ds.underwater_paths.len(),
        ds.terrestrial_paths.len(),
        ds.batches_per_epoch(cfg.batch_size)
    );
    let state = match &args.resume {
        Some(path) => {
            let state = TrainState::load(path, Some(cfg))?;
            info!("resuming at epoch {} (iteration {})", state.epoch, state.iteration);
            state
        }
        None => TrainState::new(cfg)?,
    };
    let last = trainer::run_from(state, &ds, &args.out_dir)?;
    info!("last checkpoint: {}", last.display());
    Ok(())
}
