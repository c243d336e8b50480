//! Labeled image datasets loaded from class-per-directory trees.

use crate::error::{Error, Result};
use crate::frameselect::{is_image_path, load_image, resize_to_input};
use crate::tensor::Tensor;
use std::path::Path;

/// Height and width of the network's input plane.
pub const NETWORK_INPUT_HW: usize = 224;

#[derive(Debug, Clone)]
pub struct Sample {
    /// `[1, 224, 224]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    /// Where the sample came from (file path or synthetic tag); doubles as
    /// the grouping key prefix for subject-wise fold assignment.
    pub source_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    /// Index in this list == the numeric label.
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_names.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Loads `root/<class>/<image>` into a dataset. Class names are the
/// directory names in lexicographic order; within a class, files are read
/// in path order. Every image is resized to the network input resolution.
pub fn load_class_directory_dataset(root: impl AsRef<Path>) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let mut class_dirs: Vec<_> = std::fs::read_dir(root)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::NoClasses);
    }

    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut samples = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image_path(p))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyClass(name));
        }
        for f in &files {
            let raw = load_image(f)?;
            let (_, h, w) = raw.chw()?;
            let image = if h == NETWORK_INPUT_HW && w == NETWORK_INPUT_HW {
                raw
            } else {
                resize_to_input(&raw)?
            };
            samples.push(Sample {
                image,
                label,
                source_id: f.display().to_string(),
            });
        }
        class_names.push(name);
    }
    Ok(LabeledDataset { samples, class_names })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, value: u8) {
        let img = image::GrayImage::from_pixel(w, h, image::Luma([value]));
        img.save(path).unwrap();
    }

    #[test]
    fn directory_tree_becomes_sorted_classes() {
        let dir = tempfile::tempdir().unwrap();
        for (class, value) in [("happy", 200u8), ("anger", 40), ("disgust", 90)] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            for i in 0..2 {
                write_png(&cdir.join(format!("f{i}.png")), 16, 16, value);
            }
        }
        let ds = load_class_directory_dataset(dir.path()).unwrap();
        assert_eq!(ds.class_names, vec!["anger", "disgust", "happy"]);
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.class_counts(), vec![2, 2, 2]);
        for s in &ds.samples {
            assert_eq!(s.image.shape().dims(), &[1, 224, 224]);
        }
        // Constant 40/255 gray survives grayscale conversion and resize.
        let anger = &ds.samples[0];
        assert_eq!(anger.label, 0);
        let expect = 40.0 / 255.0;
        assert!(anger.image.as_slice().iter().all(|&v| (v - expect).abs() < 1e-5));
    }

    #[test]
    fn empty_class_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("ok")).unwrap();
        write_png(&dir.path().join("ok/a.png"), 8, 8, 10);
        std::fs::create_dir(dir.path().join("vacant")).unwrap();
        assert!(matches!(
            load_class_directory_dataset(dir.path()),
            Err(Error::EmptyClass(name)) if name == "vacant"
        ));
    }

    #[test]
    fn no_class_directories_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("stray.png"), 8, 8, 10);
        assert!(matches!(load_class_directory_dataset(dir.path()), Err(Error::NoClasses)));
    }

    #[test]
    fn luma_weights_match_bt601() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        let img = image::RgbImage::from_pixel(8, 8, image::Rgb([255, 0, 0]));
        img.save(&path).unwrap();
        let t = crate::frameselect::load_image(&path).unwrap();
        assert!(t.as_slice().iter().all(|&v| (v - 0.299).abs() < 1e-6));
    }
}
