//! Bit-exact on-disk formats: binary datasets and checkpoints with JSON
//! headers, metrics CSV, and validated JSON configs.
//!
//! Both binary formats share the same layout: a 4-byte magic, a version
//! byte, a little-endian u32 header length, a UTF-8 JSON header, and a
//! payload of little-endian f64 values. Writes go to a temporary file in
//! the target directory followed by a rename.

use crate::error::{Error, Result};
use crate::model::{MCNOConfig, MCNOModel, SampleSet};
use crate::spectral::{Dataset, PdeKind, SolverParams};
use crate::tensor::Tensor;
use crate::train::TrainReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: [u8; 4] = *b"MCND";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MCNC";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    pde: PdeKind,
    n_samples: usize,
    resolution: usize,
    dtype: String,
    seed: u64,
    solver: SolverParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: MCNOConfig,
    grid_size: usize,
    sample_indices: Vec<usize>,
    output_scale: f64,
    tensors: Vec<TensorEntry>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode_values(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_values(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
        .collect()
}

fn encode_container(magic: [u8; 4], header_json: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + header_json.len() + payload.len());
    out.extend_from_slice(&magic);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(header_json);
    out.extend_from_slice(payload);
    out
}

fn read_container(path: &Path, magic: [u8; 4]) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 9 {
        return Err(Error::TruncatedPayload { expected: 9, found: bytes.len() });
    }
    let found: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: bytes[4], expected: FORMAT_VERSION });
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 9 + header_len {
        return Err(Error::TruncatedPayload { expected: 9 + header_len, found: bytes.len() });
    }
    let header = bytes[9..9 + header_len].to_vec();
    let payload = bytes[9 + header_len..].to_vec();
    Ok((header, payload))
}

/// Serialize a dataset: JSON header, then `a` and `u` row-major f64 LE.
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let header = DatasetHeader {
        pde: ds.pde,
        n_samples: ds.n_samples,
        resolution: ds.resolution,
        dtype: "f64".to_string(),
        seed: ds.seed,
        solver: ds.solver,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut payload = Vec::new();
    encode_values(&mut payload, &ds.inputs);
    encode_values(&mut payload, &ds.outputs);
    write_atomic(path, &encode_container(DATASET_MAGIC, &header_json, &payload))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (header_bytes, payload) = read_container(path, DATASET_MAGIC)?;
    let header: DatasetHeader = serde_json::from_slice(&header_bytes)?;
    if header.dtype != "f64" {
        return Err(Error::InvalidField {
            field: "dtype".into(),
            reason: format!("expected \"f64\", found {:?}", header.dtype),
        });
    }
    let expected = 2 * header.n_samples * header.resolution * 8;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload { expected, found: payload.len() });
    }
    let values = decode_values(&payload);
    let half = header.n_samples * header.resolution;
    let ds = Dataset {
        pde: header.pde,
        resolution: header.resolution,
        n_samples: header.n_samples,
        inputs: values[..half].to_vec(),
        outputs: values[half..].to_vec(),
        seed: header.seed,
        solver: header.solver,
    };
    if ds.inputs.iter().chain(&ds.outputs).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: format!("dataset {}", path.display()) });
    }
    Ok(ds)
}

/// Serialize a model: JSON header with config, grid size, sample indices,
/// the output scale, and a named tensor table; payload of concatenated
/// tensor values in table order.
pub fn save_checkpoint(path: &Path, model: &MCNOModel) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, t) in model.named_params() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        encode_values(&mut payload, t.data());
    }
    let header = CheckpointHeader {
        config: model.config,
        grid_size: model.grid_size,
        sample_indices: model.samples.indices().to_vec(),
        output_scale: model.output_scale,
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;
    write_atomic(path, &encode_container(CHECKPOINT_MAGIC, &header_json, &payload))
}

pub fn load_checkpoint(path: &Path) -> Result<MCNOModel> {
    let (header_bytes, payload) = read_container(path, CHECKPOINT_MAGIC)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    header.config.validate()?;
    let samples = SampleSet::from_indices(header.sample_indices, header.grid_size)?;
    if samples.len() != header.config.n_samples {
        return Err(Error::InvalidField {
            field: "sample_indices".into(),
            reason: format!(
                "{} indices but config.n_samples = {}",
                samples.len(),
                header.config.n_samples
            ),
        });
    }

    // Reconstruct over a zero-initialized skeleton, then fill each named
    // tensor from its payload span.
    let mut model = MCNOModel::init(header.config, header.grid_size, &crate::rng::Rng::new(0))?;
    model.samples = samples;
    model.output_scale = header.output_scale;
    let mut by_name: std::collections::HashMap<&str, &TensorEntry> =
        header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    for (name, slot) in model.named_params_mut() {
        let entry = by_name.remove(name.as_str()).ok_or_else(|| Error::InvalidField {
            field: "tensors".into(),
            reason: format!("missing tensor `{name}`"),
        })?;
        if entry.shape != slot.shape() {
            return Err(Error::InvalidField {
                field: format!("tensors.{name}.shape"),
                reason: format!("{:?} vs expected {:?}", entry.shape, slot.shape()),
            });
        }
        let count: usize = entry.shape.iter().product();
        let end = entry.offset + count * 8;
        if end > payload.len() {
            return Err(Error::TruncatedPayload { expected: end, found: payload.len() });
        }
        *slot = Tensor::from_values(&entry.shape, decode_values(&payload[entry.offset..end]))?;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::InvalidField {
            field: "tensors".into(),
            reason: format!("unknown tensor `{extra}`"),
        });
    }
    Ok(model)
}

/// `epoch,train_rel_l2,test_rel_l2,lr,seconds` with full round-trip float
/// formatting (Rust's shortest representation preserves all bits).
pub fn export_metrics(path: &Path, report: &TrainReport) -> Result<()> {
    let mut out = String::from("epoch,train_rel_l2,test_rel_l2,lr,seconds\n");
    for row in &report.epochs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.train_rel_l2, row.test_rel_l2, row.lr, row.seconds
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Bound report as JSON.
pub fn export_bound_report(path: &Path, report: &crate::bound::BoundReport) -> Result<()> {
    let json = serde_json::to_vec_pretty(report)?;
    write_atomic(path, &json)
}

/// Bound report per-pair rows as CSV.
pub fn export_bound_csv(path: &Path, report: &crate::bound::BoundReport) -> Result<()> {
    let mut out = String::from(
        "n_grid,n,coverage,sup_error_quantile,deviation_quantile,mean_sup_error,max_sup_error,bound_theorem,bound_appendix\n",
    );
    for p in &report.pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.n_grid,
            p.n,
            p.coverage,
            p.sup_error_quantile,
            p.deviation_quantile,
            p.mean_sup_error,
            p.max_sup_error,
            p.bound_theorem,
            p.bound_appendix
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Sweep rows `(N, final test rel-L2, mean seconds/epoch)` as CSV.
pub fn export_sweep_csv(path: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    let mut out = String::from("n_samples,final_test_rel_l2,mean_seconds_per_epoch\n");
    for (n, err, secs) in rows {
        out.push_str(&format!("{n},{err},{secs}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Anything loadable from a JSON config file with post-parse validation.
pub trait ValidatedConfig: DeserializeOwned {
    fn validate_config(&self) -> Result<()>;
}

impl ValidatedConfig for MCNOConfig {
    fn validate_config(&self) -> Result<()> {
        self.validate()
    }
}

impl ValidatedConfig for crate::bound::TrialConfig {
    fn validate_config(&self) -> Result<()> {
        self.validate()
    }
}

/// Parse a JSON config, rejecting unknown keys (via the types' strict
/// schemas) and out-of-range values (via their validators).
pub fn load_config<T: ValidatedConfig>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let value: T = serde_json::from_slice(&bytes)?;
    value.validate_config()?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::spectral::generate_dataset;
    use tempfile::tempdir;

    fn tiny_dataset() -> Dataset {
        let solver = SolverParams::Burgers { viscosity: 0.1, dt: 1e-3, hi_res: 128 };
        generate_dataset(&solver, 2, &[64], 5, 1).unwrap().remove(0)
    }

    #[test]
    fn dataset_round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.mcnd");
        let ds = tiny_dataset();
        save_dataset(&path, &ds).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.pde, ds.pde);
        assert_eq!(loaded.resolution, ds.resolution);
        assert!(loaded.inputs.iter().zip(&ds.inputs).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(loaded.outputs.iter().zip(&ds.outputs).all(|(a, b)| a.to_bits() == b.to_bits()));

        // Deterministic serialization: same dataset, same bytes.
        let path2 = dir.path().join("d2.mcnd");
        save_dataset(&path2, &ds).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupt_magic_is_a_distinct_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.mcnd");
        save_dataset(&path, &tiny_dataset()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_mismatch_and_truncation_are_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.mcnd");
        save_dataset(&path, &tiny_dataset()).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut versioned = bytes.clone();
        versioned[4] = 9;
        fs::write(&path, &versioned).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::UnsupportedVersion { found: 9, .. })));

        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.mcnc");
        let config = MCNOConfig { d_v: 8, n_samples: 8, ..MCNOConfig::default() };
        let mut model = MCNOModel::init(config, 64, &Rng::new(3)).unwrap();
        model.output_scale = 0.125;
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        assert_eq!(loaded.samples, model.samples);
        assert_eq!(loaded.output_scale, model.output_scale);
        for ((na, a), (nb, b)) in model.named_params().iter().zip(loaded.named_params().iter()) {
            assert_eq!(na, nb);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        let mut rng = Rng::new(17);
        let a = Tensor::from_values(&[2, 64], (0..128).map(|_| rng.uniform() - 0.5).collect()).unwrap();
        let out1 = model.predict(&a).unwrap();
        let out2 = loaded.predict(&a).unwrap();
        assert!(out1.data().iter().zip(out2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

        // Deterministic serialization.
        let path2 = dir.path().join("m2.mcnc");
        save_checkpoint(&path2, &model).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_shape_mismatch_names_the_tensor() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.mcnc");
        let config = MCNOConfig { d_v: 8, n_samples: 8, ..MCNOConfig::default() };
        let model = MCNOModel::init(config, 64, &Rng::new(3)).unwrap();
        save_checkpoint(&path, &model).unwrap();
        // Corrupt the declared shape of one tensor inside the JSON header.
        let bytes = fs::read(&path).unwrap();
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[9..9 + header_len].to_vec()).unwrap();
        let bad_header = header.replace("\"name\":\"lift.weight\",\"shape\":[2,8]", "\"name\":\"lift.weight\",\"shape\":[3,8]");
        assert_ne!(header, bad_header);
        let mut out = bytes[0..5].to_vec();
        out.extend_from_slice(&(bad_header.len() as u32).to_le_bytes());
        out.extend_from_slice(bad_header.as_bytes());
        out.extend_from_slice(&bytes[9 + header_len..]);
        fs::write(&path, &out).unwrap();
        match load_checkpoint(&path) {
            Err(Error::InvalidField { field, .. }) => assert!(field.contains("lift.weight")),
            other => panic!("expected named shape error, got {other:?}"),
        }
    }

    #[test]
    fn metrics_csv_is_parseable_and_monotone() {
        use crate::train::{EpochMetrics, TrainConfig, TrainReport};
        let dir = tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let report = TrainReport {
            epochs: (0..3)
                .map(|e| EpochMetrics {
                    epoch: e,
                    train_rel_l2: 0.1 / (e + 1) as f64,
                    test_rel_l2: 0.2 / (e + 1) as f64,
                    lr: 1e-3,
                    seconds: 0.5,
                })
                .collect(),
            final_test_rel_l2: 0.066,
            config: TrainConfig::default(),
        };
        export_metrics(&path, &report).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_rel_l2,test_rel_l2,lr,seconds");
        let mut prev = -1i64;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            let epoch: i64 = fields[0].parse().unwrap();
            assert!(epoch > prev);
            prev = epoch;
            // Round-trip: parse back to the same bits.
            let v: f64 = fields[1].parse().unwrap();
            assert_eq!(v, 0.1 / (epoch + 1) as f64);
        }
    }

    #[test]
    fn config_loader_rejects_unknown_keys_and_bad_ranges() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");

        fs::write(&path, r#"{"d_v":64,"n_layers":4,"n_samples":100,"kernel_variant":"interp","activation":"relu","include_coordinate":true,"d_proj":128,"layer_bias":true,"bogus":1}"#).unwrap();
        let err = load_config::<MCNOConfig>(&path).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");

        fs::write(&path, r#"{"d_v":0,"n_layers":4,"n_samples":100,"kernel_variant":"interp","activation":"relu","include_coordinate":true,"d_proj":128,"layer_bias":true}"#).unwrap();
        match load_config::<MCNOConfig>(&path) {
            Err(Error::InvalidField { field, .. }) => assert_eq!(field, "d_v"),
            other => panic!("expected invalid d_v, got {other:?}"),
        }

        fs::write(&path, r#"{"d_v":64,"n_layers":4,"n_samples":100,"kernel_variant":"interp","activation":"relu","include_coordinate":true,"d_proj":128,"layer_bias":true}"#).unwrap();
        let config: MCNOConfig = load_config(&path).unwrap();
        assert_eq!(config.d_v, 64);
    }
}
