//! Synthetic training data: labeled primitive corners for pretraining and
//! posed cloud pairs of composed scenes for fine-tuning and evaluation.

mod corner;
mod dataset;
mod sampling;
mod scene;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use corner::{score_label, CornerConfig, Face, PrimitiveCorner};
pub use dataset::{
    build_dataset, generate_instance, instance_dir, load_dataset, CornerDatasetConfig, CornerInstance,
    CornerSample, CornerView, CORNER_KIND, CORNER_PATCH_SIZE,
};
pub use sampling::{random_viewpoint, sample_height_field, sample_view, sample_view_from, surface_area, Domain, ViewConfig};
pub use scene::{
    build_pose_pairs, generate_pose_pair, load_pose_pair, load_pose_pairs, normalize_unit_cube,
    random_bounded_pose, save_pose_pair, ComposedScene, PosePair, PosePairConfig, SceneConfig, POSE_PAIR_KIND,
};

/// Independent seed for item `index` of a run seeded with `base` (SplitMix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dataset index: `key value` header lines, a `columns` line, then one
/// tab-separated row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub kind: String,
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# graphite dataset manifest\n");
        let _ = writeln!(s, "kind\t{}", self.kind);
        for (k, v) in &self.header {
            let _ = writeln!(s, "{k}\t{v}");
        }
        let _ = writeln!(s, "columns\t{}", self.columns.join("\t"));
        for row in &self.rows {
            let _ = writeln!(s, "{}", row.join("\t"));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut header = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
            if let Some(cols) = &columns {
                if fields.len() != cols.len() {
                    return Err(Error::parse(
                        no + 1,
                        format!("row has {} fields, expected {}", fields.len(), cols.len()),
                    ));
                }
                rows.push(fields);
                continue;
            }
            match fields[0].as_str() {
                "kind" => kind = fields.get(1).cloned(),
                "columns" => columns = Some(fields[1..].to_vec()),
                _ if fields.len() == 2 => header.push((fields[0].clone(), fields[1].clone())),
                _ => return Err(Error::parse(no + 1, "expected `key<TAB>value`")),
            }
        }
        Ok(Self {
            kind: kind.ok_or_else(|| Error::Dataset("manifest has no `kind`".into()))?,
            header,
            columns: columns.ok_or_else(|| Error::Dataset("manifest has no `columns`".into()))?,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Dataset(format!("manifest has no `{name}` column")))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
