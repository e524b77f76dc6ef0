//! Regenerates the procedural sample set shipped under `data/sample`.
//!
//! ```text
//! cargo run -p uwrestore-core --example make_sample_set -- data/sample
//! ```

use std::path::PathBuf;

fn main() -> uwrestore_core::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/sample"));
    uwrestore_core::data::write_procedural_set(&root, 32, 128, 2024)?;
    println!("wrote 32 + 32 images under {}", root.display());
    Ok(())
}
