//! The conditional generator / attribute-discriminator pair and the cosine
//! classifier built on top of them.
//!
//! The generator maps noise-plus-attribute rows to visual features (ReLU
//! output, matching nonnegative deep features). The discriminator maps an
//! attribute row to an identifier projection living in visual-feature space;
//! classification is argmax cosine similarity between a feature and the
//! projections of every class encountered so far.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cosine_matrix, Activation, DenseLayer, DenseNet, Matrix, Rng};

pub type ClassId = usize;

/// Architecture hyperparameters. `new` fills the defaults: noise width equals
/// the attribute width, hidden widths are 4x the feature width, and the
/// softmax temperature is 10.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_a: usize,
    pub d_z: usize,
    pub hidden_g: usize,
    pub hidden_d: usize,
    pub temperature: f64,
}

impl ModelConfig {
    pub fn new(d_x: usize, d_a: usize) -> Self {
        ModelConfig {
            d_x,
            d_a,
            d_z: d_a,
            hidden_g: 4 * d_x,
            hidden_d: 4 * d_x,
            temperature: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_x", self.d_x),
            ("d_a", self.d_a),
            ("d_z", self.d_z),
            ("hidden_g", self.hidden_g),
            ("hidden_d", self.hidden_d),
        ] {
            if v == 0 {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::validation("temperature", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CGZSLModel {
    pub config: ModelConfig,
    pub generator: DenseNet,
    pub discriminator: DenseNet,
    encountered: Vec<ClassId>,
    positions: BTreeMap<ClassId, usize>,
    seen: BTreeSet<ClassId>,
    attributes: Matrix,
}

impl CGZSLModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let generator = DenseNet::new(
            &[config.d_z + config.d_a, config.hidden_g, config.d_x],
            &[Activation::LeakyRelu, Activation::Relu],
            rng,
        )?;
        let discriminator = DenseNet::new(
            &[config.d_a, config.hidden_d, config.d_x],
            &[Activation::LeakyRelu, Activation::Linear],
            rng,
        )?;
        Ok(CGZSLModel {
            config,
            generator,
            discriminator,
            encountered: Vec::new(),
            positions: BTreeMap::new(),
            seen: BTreeSet::new(),
            attributes: Matrix::zeros(0, config.d_a),
        })
    }

    /// Classes encountered so far, in encounter order. Projection and score
    /// matrices are row-aligned with this list.
    pub fn encountered(&self) -> &[ClassId] {
        &self.encountered
    }

    /// Row position of a class in the encountered ordering.
    pub fn position(&self, class: ClassId) -> Option<usize> {
        self.positions.get(&class).copied()
    }

    pub fn seen_classes(&self) -> &BTreeSet<ClassId> {
        &self.seen
    }

    pub fn is_seen(&self, class: ClassId) -> bool {
        self.seen.contains(&class)
    }

    /// Attribute rows for every encountered class, in encounter order.
    pub fn attributes_so_far(&self) -> &Matrix {
        &self.attributes
    }

    /// Registers one task boundary. New classes get attribute rows appended;
    /// classes listed as newly seen or converted flip to the seen role.
    /// `all_attributes` is the dataset's full class-attribute matrix.
    pub fn register_task(
        &mut self,
        new_seen: &[ClassId],
        new_unseen: &[ClassId],
        converted: &[ClassId],
        all_attributes: &Matrix,
    ) -> Result<()> {
        if all_attributes.cols() != self.config.d_a {
            return Err(Error::shape(format!(
                "attribute rows are {}-dim, model expects {}",
                all_attributes.cols(),
                self.config.d_a
            )));
        }
        for &c in new_seen.iter().chain(new_unseen) {
            if c >= all_attributes.rows() {
                return Err(Error::index(format!(
                    "class {} with {} attribute rows",
                    c,
                    all_attributes.rows()
                )));
            }
            if !self.positions.contains_key(&c) {
                self.positions.insert(c, self.encountered.len());
                self.encountered.push(c);
                let row = Matrix::from_vec(1, all_attributes.cols(), all_attributes.row(c).to_vec())?;
                self.attributes = if self.attributes.rows() == 0 {
                    row
                } else {
                    self.attributes.vconcat(&row)?
                };
            }
        }
        for &c in converted {
            if !self.positions.contains_key(&c) {
                return Err(Error::contract(format!(
                    "class {} converted before being encountered",
                    c
                )));
            }
            if self.seen.contains(&c) {
                return Err(Error::contract(format!("class {} converted while already seen", c)));
            }
        }
        for &c in new_seen.iter().chain(converted) {
            self.seen.insert(c);
        }
        Ok(())
    }

    /// Attribute rows for the listed classes (must all be encountered).
    pub fn attributes_of(&self, classes: &[ClassId]) -> Result<Matrix> {
        let mut idx = Vec::with_capacity(classes.len());
        for &c in classes {
            let p = self
                .position(c)
                .ok_or_else(|| Error::index(format!("class {} not encountered", c)))?;
            idx.push(p);
        }
        self.attributes.select_rows(&idx)
    }

    /// Standard-normal noise block, n x d_z.
    pub fn sample_noise(&self, n: usize, rng: &mut Rng) -> Matrix {
        rng.normal_matrix(n, self.config.d_z)
    }

    /// Visual features for paired noise and attribute rows.
    pub fn generate(&self, z: &Matrix, attrs: &Matrix) -> Result<Matrix> {
        if z.rows() != attrs.rows() {
            return Err(Error::shape(format!(
                "{} noise rows with {} attribute rows",
                z.rows(),
                attrs.rows()
            )));
        }
        if z.cols() != self.config.d_z {
            return Err(Error::shape(format!(
                "noise is {}-dim, model expects {}",
                z.cols(),
                self.config.d_z
            )));
        }
        self.generator.forward(&z.hconcat(attrs)?)
    }

    /// Identifier projections for attribute rows.
    pub fn project_attributes(&self, attrs: &Matrix) -> Result<Matrix> {
        self.discriminator.forward(attrs)
    }

    /// Projections of every encountered class, row-aligned with `encountered`.
    pub fn projections(&self) -> Result<Matrix> {
        if self.encountered.is_empty() {
            return Err(Error::contract("no classes encountered yet"));
        }
        self.project_attributes(&self.attributes)
    }
}

/// Argmax-cosine classification of feature rows against projection rows.
/// Returns predicted row positions and the full similarity matrix. Ties go to
/// the lowest position.
pub fn classify(features: &Matrix, projections: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    if projections.rows() == 0 {
        return Err(Error::contract("classification against zero projections"));
    }
    let scores = cosine_matrix(features, projections)?;
    let preds = argmax_rows(&scores);
    Ok((preds, scores))
}

/// First index of the row maximum for each row.
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Checkpoints: "CZSM1" magic, u32 LE header length, JSON header with dims and
// layer specs, then raw little-endian f64 parameters per layer, generator
// first, weight before bias.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 5] = b"CZSM1";

#[derive(Serialize, Deserialize)]
struct LayerSpec {
    rows: usize,
    cols: usize,
    activation: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    d_x: usize,
    d_a: usize,
    d_z: usize,
    hidden_g: usize,
    hidden_d: usize,
    temperature: f64,
    generator: Vec<LayerSpec>,
    discriminator: Vec<LayerSpec>,
}

fn layer_specs(net: &DenseNet) -> Vec<LayerSpec> {
    net.layers()
        .iter()
        .map(|l| LayerSpec {
            rows: l.weight.rows(),
            cols: l.weight.cols(),
            activation: l.activation.tag().to_string(),
        })
        .collect()
}

fn write_net_params(w: &mut impl Write, net: &DenseNet) -> Result<()> {
    for p in net.params() {
        for v in p.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_net(r: &mut impl Read, specs: &[LayerSpec]) -> Result<DenseNet> {
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let read_mat = |r: &mut dyn Read, rows: usize, cols: usize| -> Result<Matrix> {
            let mut data = vec![0.0; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::format("checkpoint truncated"))?;
                *v = f64::from_le_bytes(buf);
            }
            Matrix::from_vec(rows, cols, data)
                .map_err(|_| Error::format("checkpoint holds non-finite parameters"))
        };
        let weight = read_mat(r, spec.rows, spec.cols)?;
        let bias = read_mat(r, 1, spec.cols)?;
        layers.push(DenseLayer {
            weight,
            bias,
            activation: Activation::from_tag(&spec.activation)?,
        });
    }
    DenseNet::from_layers(layers)
}

/// Serializes networks and dims. Class bookkeeping (encountered order, seen
/// set, attribute rows) is reconstructed from the dataset and schedule at
/// load time, so it is not stored.
pub fn save_checkpoint(w: &mut impl Write, model: &CGZSLModel) -> Result<()> {
    let header = CheckpointHeader {
        version: 1,
        d_x: model.config.d_x,
        d_a: model.config.d_a,
        d_z: model.config.d_z,
        hidden_g: model.config.hidden_g,
        hidden_d: model.config.hidden_d,
        temperature: model.config.temperature,
        generator: layer_specs(&model.generator),
        discriminator: layer_specs(&model.discriminator),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    write_net_params(w, &model.generator)?;
    write_net_params(w, &model.discriminator)?;
    Ok(())
}

/// Reads a checkpoint back into a model with empty class bookkeeping; replay
/// the schedule's registrations to restore it.
pub fn load_checkpoint(r: &mut impl Read) -> Result<CGZSLModel> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("missing checkpoint magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::format("checkpoint truncated"))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::format("checkpoint truncated"))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::format(format!("bad checkpoint header: {e}")))?;
    if header.version != 1 {
        return Err(Error::format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let config = ModelConfig {
        d_x: header.d_x,
        d_a: header.d_a,
        d_z: header.d_z,
        hidden_g: header.hidden_g,
        hidden_d: header.hidden_d,
        temperature: header.temperature,
    };
    config.validate()?;
    let generator = read_net(r, &header.generator)?;
    let discriminator = read_net(r, &header.discriminator)?;
    if generator.input_dim() != config.d_z + config.d_a
        || generator.output_dim() != config.d_x
        || discriminator.input_dim() != config.d_a
        || discriminator.output_dim() != config.d_x
    {
        return Err(Error::format("checkpoint layer dims disagree with header dims"));
    }
    Ok(CGZSLModel {
        config,
        generator,
        discriminator,
        encountered: Vec::new(),
        positions: BTreeMap::new(),
        seen: BTreeSet::new(),
        attributes: Matrix::zeros(0, config.d_a),
    })
}
