use std::collections::BTreeSet;

use log::info;
use uwrestore_core::imaging::{compose_grid, load_image_native, save_png, GRID_GAP};

use super::image_files;
use crate::error::{CliError, CliResult};
use crate::GridArgs;

fn file_names(paths: &[std::path::PathBuf]) -> BTreeSet<String> {
    paths
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect()
}

pub fn run(args: &GridArgs) -> CliResult {
    if args.cell == 0 {
        return Err(CliError::usage("--cell must be positive"));
    }
    let listings: Vec<BTreeSet<String>> = args
        .dirs
        .iter()
        .map(|d| image_files(d).map(|p| file_names(&p)))
        .collect::<CliResult<_>>()?;
    let reference = &listings[0];
    let mut diff = Vec::new();
    for (dir, names) in args.dirs.iter().zip(&listings).skip(1) {
        for n in reference.difference(names) {
            diff.push(format!("missing in {}: {n}", dir.display()));
        }
        for n in names.difference(reference) {
            diff.push(format!("extra in {}: {n}", dir.display()));
        }
    }
    if !diff.is_empty() {
        return Err(CliError::usage(format!("file names differ between directories:\n{}", diff.join("\n"))));
    }
    if reference.is_empty() {
        return Err(CliError::usage("no images to compose"));
    }
    let mut rows = Vec::with_capacity(args.dirs.len());
    for dir in &args.dirs {
        let row = reference
            .iter()
            .map(|n| load_image_native(dir.join(n)))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let grid = compose_grid(&rows, args.cell, GRID_GAP)?;
    save_png(&grid, &args.output)?;
    info!(
        "{} x {} grid ({}x{} px) written to {}",
        rows.len(),
        reference.len(),
        grid.width(),
        grid.height(),
        args.output.display()
    );
    Ok(())
}
