//! Datasets on disk and in memory, plus a synthetic generator.
//!
//! A dataset directory holds a `manifest.json` describing shapes, the
//! feature/attribute matrices in a small binary container, label and split
//! index vectors, and optionally one class name per line in
//! `class_names.txt`. Matrices are stored as `CZSL1` + row/col counts (u32,
//! little endian) + row-major f64 payload; index vectors as `CZSLI` + count
//! + u32 values. Loading re-validates everything the structs promise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l2_normalize_rows, Matrix, Rng, Stream};

const MATRIX_MAGIC: &[u8; 5] = b"CZSL1";
const INDEX_MAGIC: &[u8; 5] = b"CZSLI";

/// An instance-level dataset: visual features, integer labels into the
/// attribute table, per-class attribute vectors, and a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// instances x feature dim
    pub features: Matrix,
    /// one class id per feature row
    pub labels: Vec<usize>,
    /// classes x attribute dim, row index = class id
    pub attributes: Matrix,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub class_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    name: String,
    num_classes: usize,
    num_instances: usize,
    feature_dim: usize,
    attribute_dim: usize,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn num_instances(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn attribute_dim(&self) -> usize {
        self.attributes.cols()
    }

    /// Train-split row ids whose label is `class`.
    pub fn train_rows_of_class(&self, class: usize) -> Vec<usize> {
        self.train_idx.iter().copied().filter(|&i| self.labels[i] == class).collect()
    }

    /// Test-split row ids whose label is `class`.
    pub fn test_rows_of_class(&self, class: usize) -> Vec<usize> {
        self.test_idx.iter().copied().filter(|&i| self.labels[i] == class).collect()
    }

    /// Everything the struct promises, checked. Loaders call this, and
    /// anything that builds a `Dataset` by hand should too.
    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        let c = self.attributes.rows();
        if self.labels.len() != n {
            return Err(Error::validation(
                "labels",
                format!("{} labels for {} feature rows", self.labels.len(), n),
            ));
        }
        if c == 0 || n == 0 {
            return Err(Error::validation("manifest", "empty feature or attribute table"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= c) {
            return Err(Error::validation(
                "labels",
                format!("label {bad} but only {c} attribute rows"),
            ));
        }
        for (field, idx) in [("train_idx", &self.train_idx), ("test_idx", &self.test_idx)] {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::validation(
                    field,
                    format!("row {bad} out of range for {n} instances"),
                ));
            }
            let mut seen = vec![false; n];
            for &i in idx.iter() {
                if seen[i] {
                    return Err(Error::validation(field, format!("row {i} listed twice")));
                }
                seen[i] = true;
            }
        }
        let mut in_train = vec![false; n];
        for &i in &self.train_idx {
            in_train[i] = true;
        }
        if let Some(&bad) = self.test_idx.iter().find(|&&i| in_train[i]) {
            return Err(Error::validation(
                "test_idx",
                format!("row {bad} appears in both splits"),
            ));
        }
        let mut test_cover = vec![false; c];
        for &i in &self.test_idx {
            test_cover[self.labels[i]] = true;
        }
        if let Some(missing) = test_cover.iter().position(|&covered| !covered) {
            return Err(Error::validation(
                "test_idx",
                format!("class {missing} has no test rows"),
            ));
        }
        for a in 0..c {
            for b in (a + 1)..c {
                if self.attributes.row(a) == self.attributes.row(b) {
                    return Err(Error::validation(
                        "attributes",
                        format!("classes {a} and {b} share an attribute vector"),
                    ));
                }
            }
        }
        if let Some(names) = &self.class_names {
            if names.len() != c {
                return Err(Error::validation(
                    "class_names",
                    format!("{} names for {c} classes", names.len()),
                ));
            }
        }
        Ok(())
    }
}

// -- binary containers ---------------------------------------------------------

/// Writes a matrix in the `CZSL1` container.
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(u32::try_from(m.rows()).map_err(|_| too_big("rows"))?).to_le_bytes())?;
    w.write_all(&(u32::try_from(m.cols()).map_err(|_| too_big("cols"))?).to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn too_big(what: &str) -> Error {
    Error::format(format!("{what} exceed u32 range"))
}

/// Reads a `CZSL1` matrix, rejecting bad magic, truncation, trailing bytes,
/// and non-finite entries.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact_or_format(&mut r, &mut magic, path)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::format(format!("{}: not a matrix container", path.display())));
    }
    let rows = read_u32(&mut r, path)? as usize;
    let cols = read_u32(&mut r, path)? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(format!("{}: dimension overflow", path.display())))?;
    let mut data = vec![0.0f64; count];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        read_exact_or_format(&mut r, &mut buf, path)?;
        *v = f64::from_le_bytes(buf);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::format(format!("{}: trailing bytes", path.display())));
    }
    let m = Matrix::from_vec(rows, cols, data)?;
    if !m.is_finite() {
        return Err(Error::format(format!("{}: non-finite entries", path.display())));
    }
    Ok(m)
}

/// Writes an index vector in the `CZSLI` container.
pub fn write_indices(path: &Path, idx: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&(u32::try_from(idx.len()).map_err(|_| too_big("count"))?).to_le_bytes())?;
    for &i in idx {
        w.write_all(&(u32::try_from(i).map_err(|_| too_big("index"))?).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `CZSLI` index vector.
pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact_or_format(&mut r, &mut magic, path)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::format(format!("{}: not an index container", path.display())));
    }
    let count = read_u32(&mut r, path)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(read_u32(&mut r, path)? as usize);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::format(format!("{}: trailing bytes", path.display())));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_or_format(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(format!("{}: truncated", path.display())))
}

// -- dataset directories ---------------------------------------------------------

/// Writes a validated dataset into `dir` (created if missing).
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        name: ds.name.clone(),
        num_classes: ds.num_classes(),
        num_instances: ds.num_instances(),
        feature_dim: ds.feature_dim(),
        attribute_dim: ds.attribute_dim(),
    };
    let mut f = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    write_matrix(&dir.join("features.bin"), &ds.features)?;
    write_matrix(&dir.join("attributes.bin"), &ds.attributes)?;
    write_indices(&dir.join("labels.bin"), &ds.labels)?;
    write_indices(&dir.join("train_idx.bin"), &ds.train_idx)?;
    write_indices(&dir.join("test_idx.bin"), &ds.test_idx)?;
    if let Some(names) = &ds.class_names {
        let mut f = BufWriter::new(File::create(dir.join("class_names.txt"))?);
        for n in names {
            writeln!(f, "{n}")?;
        }
        f.flush()?;
    }
    Ok(())
}

/// Loads and fully validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(&manifest_path)?))?;
    let features = read_matrix(&dir.join("features.bin"))?;
    let attributes = read_matrix(&dir.join("attributes.bin"))?;
    let labels = read_indices(&dir.join("labels.bin"))?;
    let train_idx = read_indices(&dir.join("train_idx.bin"))?;
    let test_idx = read_indices(&dir.join("test_idx.bin"))?;
    let names_path = dir.join("class_names.txt");
    let class_names = if names_path.exists() {
        let mut text = String::new();
        BufReader::new(File::open(&names_path)?).read_to_string(&mut text)?;
        Some(text.lines().map(str::to_owned).collect())
    } else {
        None
    };
    for (field, got, want) in [
        ("num_instances", features.rows(), manifest.num_instances),
        ("feature_dim", features.cols(), manifest.feature_dim),
        ("num_classes", attributes.rows(), manifest.num_classes),
        ("attribute_dim", attributes.cols(), manifest.attribute_dim),
    ] {
        if got != want {
            return Err(Error::validation(
                field,
                format!("manifest says {want}, files hold {got}"),
            ));
        }
    }
    let ds = Dataset {
        name: manifest.name,
        features,
        labels,
        attributes,
        train_idx,
        test_idx,
        class_names,
    };
    ds.validate()?;
    Ok(ds)
}

// -- synthetic data ----------------------------------------------------------------

/// Knobs for the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub rows_per_class: usize,
    pub feature_dim: usize,
    pub attribute_dim: usize,
    /// standard deviation of the additive feature noise
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 20,
            rows_per_class: 40,
            feature_dim: 32,
            attribute_dim: 16,
            noise: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("num_classes", "need at least 2 classes"));
        }
        if self.rows_per_class < 2 {
            return Err(Error::validation(
                "rows_per_class",
                "need at least 2 rows per class for a train/test split",
            ));
        }
        if self.feature_dim == 0 || self.attribute_dim == 0 {
            return Err(Error::validation("feature_dim", "dimensions must be positive"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::validation("noise", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Generates a dataset whose feature geometry mirrors attribute geometry.
///
/// Attribute rows are drawn from a unit Gaussian and scaled onto the unit
/// sphere; a fixed random linear map followed by ReLU turns each attribute
/// into a non-negative class mean, and instances are that mean plus
/// isotropic Gaussian noise, clamped at zero so features stay non-negative
/// like the pretrained-embedding activations they stand in for. Rows come
/// out class-major; the split takes roughly three quarters of each class
/// for training, always leaving at least one test row. All draws come from
/// the `Synth` stream of `seed`.
pub fn synth_dataset(name: &str, cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = Rng::derive(seed, Stream::Synth);
    let c = cfg.num_classes;
    let per = cfg.rows_per_class;
    let n = c * per;

    let attributes = l2_normalize_rows(&rng.normal_matrix(c, cfg.attribute_dim));
    let map = rng.normal_matrix(cfg.attribute_dim, cfg.feature_dim);
    let means = attributes.matmul(&map)?.map(|v| v.max(0.0));

    let mut features = Matrix::zeros(n, cfg.feature_dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..c {
        for k in 0..per {
            let row = class * per + k;
            for d in 0..cfg.feature_dim {
                let v = means.get(class, d) + cfg.noise * rng.normal();
                features.set(row, d, v.max(0.0));
            }
            labels.push(class);
        }
    }

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let n_train = ((3 * per) / 4).clamp(1, per - 1);
    for class in 0..c {
        let mut rows: Vec<usize> = (class * per..(class + 1) * per).collect();
        rng.shuffle(&mut rows);
        train_idx.extend_from_slice(&rows[..n_train]);
        test_idx.extend_from_slice(&rows[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let ds = Dataset {
        name: name.to_owned(),
        features,
        labels,
        attributes,
        train_idx,
        test_idx,
        class_names: None,
    };
    ds.validate()?;
    Ok(ds)
}
