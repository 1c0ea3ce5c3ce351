//! Checkpoint file: a magic line, a one-line JSON manifest, the parameters
//! as little-endian `f32` in manifest order, then the SHA-256 of that blob.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::qnet::{ArchitectureConfig, HeadKind, QNetwork};

pub const MAGIC: &str = "DQNCKPT 1";
const CHECKSUM_BYTES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub head: HeadKind,
    pub precision: String,
    pub seed: u64,
    pub architecture: ArchitectureConfig,
    pub layers: Vec<ManifestEntry>,
    pub blob_bytes: usize,
    pub checksum: String,
}

fn manifest_for(net: &QNetwork<f32>, seed: u64) -> Manifest {
    let mut layers = Vec::new();
    for l in net.layers() {
        layers.push(ManifestEntry {
            name: format!("{}.weight", l.spec.name),
            shape: l.weights.shape().to_vec(),
        });
        layers.push(ManifestEntry {
            name: format!("{}.bias", l.spec.name),
            shape: l.bias.shape().to_vec(),
        });
    }
    Manifest {
        head: net.head(),
        precision: "f32".into(),
        seed,
        architecture: net.config().clone(),
        layers,
        blob_bytes: net.parameter_count() * 4,
        checksum: "sha256".into(),
    }
}

/// Serialized checkpoint bytes.
pub fn encode_checkpoint(net: &QNetwork<f32>, seed: u64) -> Result<Vec<u8>> {
    let manifest = manifest_for(net, seed);
    let mut blob = Vec::with_capacity(manifest.blob_bytes);
    for l in net.layers() {
        for v in l.weights.values().iter().chain(l.bias.values()) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(blob.len() + 4096);
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    serde_json::to_writer(&mut out, &manifest)?;
    out.push(b'\n');
    let digest = Sha256::digest(&blob);
    out.extend_from_slice(&blob);
    out.extend_from_slice(digest.as_slice());
    Ok(out)
}

pub fn save_checkpoint(net: &QNetwork<f32>, seed: u64, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(net, seed)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidCheckpoint(msg.into())
}

/// Parses and validates checkpoint bytes; nothing is built unless every
/// check passes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(QNetwork<f32>, Manifest)> {
    let (magic, rest) = split_line(bytes).ok_or_else(|| invalid("missing header line"))?;
    if magic != MAGIC.as_bytes() {
        return Err(invalid("not a checkpoint file"));
    }
    let (manifest_line, payload) = split_line(rest).ok_or_else(|| invalid("missing manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(manifest_line).map_err(|e| invalid(format!("bad manifest: {e}")))?;
    if manifest.precision != "f32" {
        return Err(invalid(format!("unsupported precision {}", manifest.precision)));
    }
    if manifest.checksum != "sha256" {
        return Err(invalid(format!("unsupported checksum {}", manifest.checksum)));
    }
    if manifest.head != manifest.architecture.head {
        return Err(invalid("head kind disagrees with architecture"));
    }
    let specs = manifest
        .architecture
        .layer_specs()
        .map_err(|e| invalid(e.to_string()))?;
    let expected: Vec<ManifestEntry> = specs
        .iter()
        .flat_map(|s| {
            [
                ManifestEntry {
                    name: format!("{}.weight", s.name),
                    shape: s.weight_shape.clone(),
                },
                ManifestEntry {
                    name: format!("{}.bias", s.name),
                    shape: s.bias_shape.clone(),
                },
            ]
        })
        .collect();
    if expected != manifest.layers {
        return Err(invalid("layer list does not match the architecture"));
    }
    let n_values: usize = manifest.layers.iter().map(|l| l.shape.iter().product::<usize>()).sum();
    if manifest.blob_bytes != n_values * 4 {
        return Err(invalid(format!(
            "manifest declares {} blob bytes, layers need {}",
            manifest.blob_bytes,
            n_values * 4
        )));
    }
    if payload.len() != manifest.blob_bytes + CHECKSUM_BYTES {
        return Err(Error::Checksum(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            manifest.blob_bytes + CHECKSUM_BYTES
        )));
    }
    let (blob, digest) = payload.split_at(manifest.blob_bytes);
    if Sha256::digest(blob).as_slice() != digest {
        return Err(Error::Checksum("parameter blob does not match its digest".into()));
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut take = |shape: &[usize]| -> Result<Tensor<f32>> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), floats.by_ref().take(n).collect())
    };
    let mut params = Vec::with_capacity(specs.len());
    for s in &specs {
        let w = take(&s.weight_shape)?;
        let b = take(&s.bias_shape)?;
        params.push((w, b));
    }
    let net = QNetwork::from_parameters(&manifest.architecture, params).map_err(|e| invalid(e.to_string()))?;
    Ok((net, manifest))
}

pub fn load_checkpoint(path: &Path) -> Result<(QNetwork<f32>, Manifest)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::ConvSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> QNetwork<f32> {
        let arch = ArchitectureConfig {
            height: 8,
            width: 8,
            channels: 3,
            conv: vec![ConvSpec::new(4, 2)],
            hidden: [6, 5],
            head: HeadKind::QHead,
        };
        QNetwork::build(&arch, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let bytes = encode_checkpoint(&n, 5).unwrap();
        let (back, manifest) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(manifest.seed, 5);
        for (a, b) in n.layers().iter().zip(back.layers()) {
            let bits = |t: &Tensor<f32>| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weights), bits(&b.weights));
            assert_eq!(bits(&a.bias), bits(&b.bias));
        }
        assert_eq!(encode_checkpoint(&back, 5).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let bytes = encode_checkpoint(&net(), 5).unwrap();
        let cut = &bytes[..bytes.len() - 7];
        assert!(matches!(decode_checkpoint(cut), Err(Error::Checksum(_))));
        let mut flipped = bytes.clone();
        let i = flipped.len() - 40;
        flipped[i] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checksum(_))));
    }

    #[test]
    fn edited_shape_is_invalid() {
        let bytes = encode_checkpoint(&net(), 5).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let needle = "\"shape\":[3,3,3,4]";
        assert!(text.contains(needle));
        let edited: Vec<u8> = {
            let (head, _) = bytes.split_at(text.find(needle).unwrap());
            let tail = &bytes[head.len() + needle.len()..];
            [head, b"\"shape\":[3,3,3,5]".as_slice(), tail].concat()
        };
        assert!(matches!(decode_checkpoint(&edited), Err(Error::InvalidCheckpoint(_))));
        assert!(matches!(
            decode_checkpoint(b"garbage"),
            Err(Error::InvalidCheckpoint(_))
        ));
    }
}
