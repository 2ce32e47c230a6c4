//! Writes a small labeled corner dataset, reloads it and summarizes the
//! score and value labels.
//!
//! cargo run --release --example corner_dataset -- [out_dir] [count]

use std::path::PathBuf;

use graphite::synthgen::{build_dataset, load_dataset, CornerDatasetConfig};

fn main() -> graphite::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("graphite_corners"));
    let count: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let manifest = build_dataset(count, &out, 5, &CornerDatasetConfig::default())?;
    println!("wrote {} instances of kind `{}` to {}", manifest.rows.len(), manifest.kind, out.display());

    let samples = load_dataset(&out)?;
    for s in samples.iter().take(10) {
        let (patch, labels) = &s.views[0];
        let near = labels.values.iter().filter(|&&v| v > 0.5).count();
        println!(
            "instance {:>3}  negative {:>3}  score {:.3}  keypoint node {:>2}  nodes valued > 0.5: {near}/{}",
            s.id,
            s.negative,
            s.score,
            labels.keypoint_index,
            patch.len()
        );
    }
    let mean = samples.iter().map(|s| s.score).sum::<f64>() / samples.len() as f64;
    println!("mean score label {mean:.3}");
    Ok(())
}
