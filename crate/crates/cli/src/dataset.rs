//! A dataset directory: PNG images plus `annotations.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ifnet::density::io::{read_annotations, AnnotationRecord};
use ifnet::density::{Image, PointAnnotation};
use ifnet::train::Sample;
use ifnet::{Error, Result};

pub const ANNOTATIONS: &str = "annotations.json";

pub struct Entry {
    pub name: String,
    pub path: PathBuf,
    pub image: Image,
    pub annotation: PointAnnotation,
}

/// Loads every annotated image. A PNG in `dir` without an annotation record,
/// or a missing annotation file, is a data error naming the file.
pub fn load(dir: &Path) -> Result<Vec<Entry>> {
    let ann_path = dir.join(ANNOTATIONS);
    if !ann_path.exists() {
        return Err(Error::MissingAnnotation(ann_path));
    }
    let records: Vec<AnnotationRecord> = read_annotations(&ann_path)?;
    let mut listed = fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.to_owned(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect::<Vec<_>>();
    listed.sort();
    for p in &listed {
        let name = p.file_name().map(PathBuf::from);
        if !records.iter().any(|r| Some(&r.image) == name.as_ref() || dir.join(&r.image) == *p) {
            return Err(Error::MissingAnnotation(p.clone()));
        }
    }
    records
        .into_iter()
        .map(|r| {
            let path = dir.join(&r.image);
            let image = Image::load_png(&path)?;
            let points = r.points.iter().map(|&[x, y]| (x, y)).collect();
            let annotation = PointAnnotation::new(points, image.height(), image.width())
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            Ok(Entry {
                name: r.image.display().to_string(),
                path,
                image,
                annotation,
            })
        })
        .collect()
}

pub fn samples(entries: &[Entry], sigma: f64, tau: f64) -> Result<Vec<Sample>> {
    entries
        .iter()
        .map(|e| Sample::new(&e.image, &e.annotation, sigma, tau))
        .collect()
}

/// The annotation file followed by every image, for hashing.
pub fn input_files(dir: &Path, entries: &[Entry]) -> Vec<PathBuf> {
    std::iter::once(dir.join(ANNOTATIONS))
        .chain(entries.iter().map(|e| e.path.clone()))
        .collect()
}
