use std::path::{Path, PathBuf};

use super::{load_idx, Dataset, Split};
use crate::error::{config_err, Result};

/// Environment variable naming the root for relative dataset paths.
pub const DATA_DIR_ENV: &str = "ADVDISTILL_DATA_DIR";

/// Plain `key = value` description of an IDX dataset. Blank lines and lines
/// starting with `#` are ignored. Recognised keys: `train_images`,
/// `train_labels`, `test_images`, `test_labels` (required), and `classes`,
/// `train_size`, `test_size` (optional).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub classes: Option<usize>,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
}

impl DatasetManifest {
    /// Parses `text`, resolving relative paths against `root`.
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut paths: [Option<PathBuf>; 4] = Default::default();
        let mut sizes: [Option<usize>; 3] = [None; 3];
        const PATH_KEYS: [&str; 4] = ["train_images", "train_labels", "test_images", "test_labels"];
        const SIZE_KEYS: [&str; 3] = ["classes", "train_size", "test_size"];
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_err(format!("manifest line {}: expected key = value", no + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(i) = PATH_KEYS.iter().position(|k| *k == key) {
                paths[i] = Some(root.join(value));
            } else if let Some(i) = SIZE_KEYS.iter().position(|k| *k == key) {
                let Ok(v) = value.parse() else {
                    return config_err(format!("manifest line {}: {key} must be a non-negative integer", no + 1));
                };
                sizes[i] = Some(v);
            } else {
                return config_err(format!("manifest line {}: unknown key {key}", no + 1));
            }
        }
        let mut take = |i: usize| paths[i].take().map_or_else(|| config_err(format!("manifest is missing {}", PATH_KEYS[i])), Ok);
        Ok(Self {
            train_images: take(0)?,
            train_labels: take(1)?,
            test_images: take(2)?,
            test_labels: take(3)?,
            classes: sizes[0],
            train_size: sizes[1],
            test_size: sizes[2],
        })
    }

    /// Reads a manifest file. Relative paths resolve against
    /// `$ADVDISTILL_DATA_DIR` when set, otherwise the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let root = match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Self::parse(&text, &root)
    }

    /// Train and test splits, truncated to the configured sizes.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let mut train = load_idx(&self.train_images, &self.train_labels, self.classes, Split::Train)?;
        let mut test = load_idx(&self.test_images, &self.test_labels, self.classes, Split::Test)?;
        if let Some(n) = self.train_size {
            train = train.truncate(n)?;
        }
        if let Some(n) = self.test_size {
            test = test.truncate(n)?;
        }
        if self.classes.is_none() && train.classes() != test.classes() {
            let classes = train.classes().max(test.classes());
            let train = Dataset::new(train.inputs().clone(), train.labels().to_vec(), classes, Split::Train)?;
            let test = Dataset::new(test.inputs().clone(), test.labels().to_vec(), classes, Split::Test)?;
            return Ok((train, test));
        }
        Ok((train, test))
    }
}
