//! Labelled image collections, class-balanced splitting and the synthetic
//! three-class generator.

mod synth;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::imaging::{io, ImageU8};
use crate::{Error, Result};

pub use synth::{generate_synthetic, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Gan = 0,
    Graphics = 1,
    Real = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Gan, Class::Graphics, Class::Real];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("class index {i} out of range")))
    }

    /// Directory name and id prefix.
    pub fn name(self) -> &'static str {
        match self {
            Class::Gan => "gan",
            Class::Graphics => "graphics",
            Class::Real => "real",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Class {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown class {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: ImageU8,
    pub label: Class,
    /// `<class>/<name>`, unique within a dataset.
    pub id: String,
}

/// Reads `gan/`, `graphics/` and `real/` PPM files under `root`, class by
/// class, each in lexicographic file-name order.
pub fn load_dataset(root: &Path) -> Result<Vec<LabeledImage>> {
    let mut jobs = Vec::new();
    for class in Class::ALL {
        let dir = root.join(class.name());
        if !dir.is_dir() {
            return Err(Error::format(&dir, "missing class directory"));
        }
        let mut files = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let is_ppm = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
            if is_ppm && path.is_file() {
                files.push(path);
            }
        }
        files.sort();
        for path in files {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            jobs.push((class, format!("{class}/{stem}"), path));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for (_, id, path) in &jobs {
        if !seen.insert(id.as_str()) {
            return Err(Error::format(path, format!("duplicate image id {id}")));
        }
    }
    jobs.into_par_iter()
        .map(|(label, id, path)| {
            Ok(LabeledImage {
                image: io::read_ppm(&path)?,
                label,
                id,
            })
        })
        .collect()
}

/// Writes each image to `<root>/<id>.ppm` plus a `manifest.csv` of
/// `id,class` rows. Returns the manifest path.
pub fn save_dataset(root: &Path, items: &[LabeledImage]) -> Result<std::path::PathBuf> {
    for class in Class::ALL {
        let dir = root.join(class.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    items
        .par_iter()
        .try_for_each(|item| io::write_ppm(&root.join(format!("{}.ppm", item.id)), &item.image))?;
    let mut csv = String::from("id,class\n");
    for item in items {
        csv.push_str(&format!("{},{}\n", item.id, item.label));
    }
    let path = root.join("manifest.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl FromStr for Partition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            _ => Err(Error::Dataset(format!("unknown partition {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

pub const MIN_PER_CLASS: usize = 5;

/// Shuffles each class with a generator seeded from `(seed, class)` and cuts
/// it 60:20:20, rounding the train and validation shares to nearest.
pub fn split_dataset(items: &[LabeledImage], seed: u64) -> Result<DatasetSplit> {
    if items.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for class in Class::ALL {
        let mut ids: Vec<&str> = items
            .iter()
            .filter(|i| i.label == class)
            .map(|i| i.id.as_str())
            .collect();
        if ids.len() < MIN_PER_CLASS {
            return Err(Error::Dataset(format!(
                "class {class} has {} images, at least {MIN_PER_CLASS} are needed",
                ids.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class.index() as u64);
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = (n as f64 * 0.6).round() as usize;
        let n_val = (n as f64 * 0.2).round() as usize;
        split
            .train
            .extend(ids[..n_train].iter().map(|s| s.to_string()));
        split
            .validation
            .extend(ids[n_train..n_train + n_val].iter().map(|s| s.to_string()));
        split
            .test
            .extend(ids[n_train + n_val..].iter().map(|s| s.to_string()));
    }
    Ok(split)
}

impl DatasetSplit {
    pub fn ids(&self, part: Partition) -> &[String] {
        match part {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    /// Looks up the items of one partition, in split order.
    pub fn select<'a>(
        &self,
        items: &'a [LabeledImage],
        part: Partition,
    ) -> Result<Vec<&'a LabeledImage>> {
        let index: HashMap<&str, &LabeledImage> =
            items.iter().map(|i| (i.id.as_str(), i)).collect();
        self.ids(part)
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Dataset(format!("split references unknown image {id}")))
            })
            .collect()
    }

    /// `id,class,partition` rows, train then validation then test.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,class,partition\n");
        for part in [Partition::Train, Partition::Validation, Partition::Test] {
            for id in self.ids(part) {
                let class = id.split('/').next().unwrap_or_default();
                out.push_str(&format!("{id},{class},{}\n", part.name()));
            }
        }
        out
    }

    /// Parses [`DatasetSplit::to_csv`] output. The seed is not stored in
    /// the manifest and is set to `seed`.
    pub fn from_csv(text: &str, seed: u64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("id,class,partition") {
            return Err(Error::Dataset(
                "split manifest header must be id,class,partition".into(),
            ));
        }
        let mut split = DatasetSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            seed,
        };
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            let [id, class, part] = fields[..] else {
                return Err(Error::Dataset(format!(
                    "split manifest line {}: expected 3 fields",
                    n + 2
                )));
            };
            class.parse::<Class>()?;
            let list = match part.parse::<Partition>()? {
                Partition::Train => &mut split.train,
                Partition::Validation => &mut split.validation,
                Partition::Test => &mut split.test,
            };
            list.push(id.to_string());
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(per_class: usize) -> Vec<LabeledImage> {
        let img = ImageU8::filled(8, 8, [1, 2, 3]).unwrap();
        Class::ALL
            .into_iter()
            .flat_map(|c| {
                let img = img.clone();
                (0..per_class).map(move |i| LabeledImage {
                    image: img.clone(),
                    label: c,
                    id: format!("{c}/{i:04}"),
                })
            })
            .collect()
    }

    fn class_counts(ids: &[String]) -> [usize; 3] {
        let mut out = [0; 3];
        for id in ids {
            out[id
                .split('/')
                .next()
                .unwrap()
                .parse::<Class>()
                .unwrap()
                .index()] += 1;
        }
        out
    }

    #[test]
    fn hundred_per_class_splits_evenly() {
        let s = split_dataset(&dummy(100), 1).unwrap();
        assert_eq!(class_counts(&s.train), [60; 3]);
        assert_eq!(class_counts(&s.validation), [20; 3]);
        assert_eq!(class_counts(&s.test), [20; 3]);
    }

    #[test]
    fn paper_sized_classes() {
        let s = split_dataset(&dummy(4000), 3).unwrap();
        assert_eq!(class_counts(&s.train), [2400; 3]);
        assert_eq!(class_counts(&s.validation), [800; 3]);
        assert_eq!(class_counts(&s.test), [800; 3]);
    }

    #[test]
    fn split_is_deterministic_disjoint_and_complete() {
        let items = dummy(37);
        let a = split_dataset(&items, 11).unwrap();
        assert_eq!(a, split_dataset(&items, 11).unwrap());
        assert_ne!(a.train, split_dataset(&items, 12).unwrap().train);
        let mut all: Vec<&String> = a.train.iter().chain(&a.validation).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), items.len());
        for (got, want) in class_counts(&a.train).iter().zip([22.2; 3]) {
            assert!((*got as f64 - want).abs() <= 1.0);
        }
    }

    #[test]
    fn small_class_is_rejected() {
        let mut items = dummy(10);
        items.retain(|i| i.label != Class::Real || i.id < "real/0004".to_string());
        assert!(matches!(split_dataset(&items, 0), Err(Error::Dataset(_))));
        assert!(matches!(split_dataset(&[], 0), Err(Error::Empty(_))));
    }

    #[test]
    fn manifest_round_trip_and_select() {
        let items = dummy(10);
        let s = split_dataset(&items, 5).unwrap();
        let back = DatasetSplit::from_csv(&s.to_csv(), 5).unwrap();
        assert_eq!(back, s);
        let test = s.select(&items, Partition::Test).unwrap();
        assert_eq!(test.len(), 6);
        assert!(test.iter().zip(&s.test).all(|(i, id)| &i.id == id));
    }

    #[test]
    fn load_orders_and_prefixes_ids() {
        let dir = tempfile::tempdir().unwrap();
        for c in Class::ALL {
            std::fs::create_dir(dir.path().join(c.name())).unwrap();
        }
        assert!(load_dataset(dir.path()).unwrap().is_empty());
        let img = ImageU8::filled(8, 8, [9, 9, 9]).unwrap();
        for (c, name) in [
            ("real", "b"),
            ("real", "a"),
            ("gan", "a"),
            ("graphics", "z"),
        ] {
            io::write_ppm(&dir.path().join(c).join(format!("{name}.ppm")), &img).unwrap();
        }
        std::fs::write(dir.path().join("real/notes.txt"), "x").unwrap();
        let ids: Vec<String> = load_dataset(dir.path())
            .unwrap()
            .into_iter()
            .map(|i| i.id)
            .collect();
        assert_eq!(ids, ["gan/a", "graphics/z", "real/a", "real/b"]);
    }

    #[test]
    fn load_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("gan")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("graphics"), "{err}");
        for c in ["graphics", "real"] {
            std::fs::create_dir(dir.path().join(c)).unwrap();
        }
        std::fs::write(dir.path().join("gan/bad.ppm"), "P3\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("bad.ppm"), "{err}");
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let items = dummy(2);
        save_dataset(dir.path(), &items).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), items);
    }
}
