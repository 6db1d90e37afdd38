//! Checkpoint archives.
//!
//! Layout: `AAWMCKPT` magic, format version (u32 LE), manifest length
//! (u64 LE), the JSON manifest, the raw little-endian tensor blob, and a
//! SHA-256 of everything before it. Writes go to a temporary file in the
//! target directory and are renamed into place.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::antialias::binomial_kernel;
use crate::error::{ensure, Error, Result};
use crate::image_array::ImageArray;
use crate::losses::NoiseTarget;
use crate::metrics::WatermarkKind;
use crate::models::{build_network, identity_host, NetworkConfig, NetworkHandle, NetworkKind};
use crate::nn::ParamKind;
use crate::pipeline::config::RunConfig;
use crate::pipeline::train::{EpochRecord, Stage, Watermarks};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AAWMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const TRAILER_LEN: usize = 32;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    kind: ParamKind,
    shape: [usize; 4],
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkEntry {
    role: String,
    kind: NetworkKind,
    config: NetworkConfig,
    digest: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageEntry {
    name: String,
    dims: [usize; 3],
    offset: usize,
}

/// Run-level metadata stored next to the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveMeta {
    pub config: RunConfig,
    pub stage: Stage,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub watermark_kind: Option<WatermarkKind>,
    pub noise_seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    library_version: String,
    dtype: String,
    blur_kernel: Vec<f64>,
    meta: ArchiveMeta,
    networks: Vec<NetworkEntry>,
    images: Vec<ImageEntry>,
    blob_len: usize,
}

/// Named networks and images plus metadata: the unit of persistence.
#[derive(Clone, Debug)]
pub struct Archive<T> {
    pub meta: ArchiveMeta,
    pub networks: Vec<(String, NetworkHandle<T>)>,
    pub images: Vec<(String, ImageArray<T>)>,
}

impl<T: Scalar> Archive<T> {
    pub fn network(&self, role: &str) -> Result<&NetworkHandle<T>> {
        self.networks
            .iter()
            .find(|(r, _)| r == role)
            .map(|(_, n)| n)
            .ok_or_else(|| Error::Value(format!("archive has no network {role:?}")))
    }

    pub fn image(&self, name: &str) -> Result<&ImageArray<T>> {
        self.images
            .iter()
            .find(|(r, _)| r == name)
            .map(|(_, n)| n)
            .ok_or_else(|| Error::Value(format!("archive has no image {name:?}")))
    }
}

struct Blob {
    bytes: Vec<u8>,
    width: usize,
}

impl Blob {
    fn new<T: Scalar>() -> Self {
        Blob {
            bytes: Vec::new(),
            width: std::mem::size_of::<T>(),
        }
    }

    fn push<T: Scalar>(&mut self, values: &[T]) -> usize {
        let offset = self.bytes.len() / self.width;
        for v in values {
            if self.width == 4 {
                self.bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                self.bytes.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        offset
    }
}

fn read_values<T: Scalar>(blob: &[u8], dtype: &str, offset: usize, len: usize) -> Result<Vec<T>> {
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Integrity(format!("unknown dtype {other:?}"))),
    };
    let start = offset * width;
    let end = start + len * width;
    ensure(end <= blob.len(), || Error::Integrity("tensor extends past the blob".into()))?;
    Ok(blob[start..end]
        .chunks_exact(width)
        .map(|c| {
            let v = if width == 4 {
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64
            } else {
                f64::from_le_bytes(c.try_into().unwrap())
            };
            T::lit(v)
        })
        .collect())
}

/// Serializes an archive to bytes.
pub fn encode_archive<T: Scalar>(archive: &Archive<T>) -> Result<Vec<u8>> {
    encode_with_version(archive, CHECKPOINT_VERSION)
}

#[doc(hidden)]
pub fn encode_with_version<T: Scalar>(archive: &Archive<T>, version: u32) -> Result<Vec<u8>> {
    let mut blob = Blob::new::<T>();
    let mut networks = Vec::new();
    for (role, net) in &archive.networks {
        let tensors = net
            .store
            .params()
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                kind: p.kind,
                shape: p.value.shape().dims(),
                offset: blob.push(p.value.data()),
            })
            .collect();
        networks.push(NetworkEntry {
            role: role.clone(),
            kind: net.kind,
            config: net.config.clone(),
            digest: net.store.digest(),
            tensors,
        });
    }
    let images = archive
        .images
        .iter()
        .map(|(name, img)| {
            let (c, h, w) = img.dims();
            ImageEntry {
                name: name.clone(),
                dims: [c, h, w],
                offset: blob.push(img.data()),
            }
        })
        .collect();
    let manifest = Manifest {
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        dtype: T::DTYPE.to_string(),
        blur_kernel: binomial_kernel().weights.iter().flatten().copied().collect(),
        meta: archive.meta.clone(),
        networks,
        images,
        blob_len: blob.bytes.len(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blob.bytes.len() + TRAILER_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob.bytes);
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

/// Parses bytes produced by [`encode_archive`]. Checks, in order: magic,
/// checksum, format version, then per-network parameter digests.
pub fn decode_archive<T: Scalar>(bytes: &[u8]) -> Result<Archive<T>> {
    ensure(bytes.len() >= HEADER_LEN + TRAILER_LEN, || Error::Integrity("file is truncated".into()))?;
    ensure(&bytes[..8] == CHECKPOINT_MAGIC, || Error::Integrity("not a checkpoint archive".into()))?;
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    ensure(Sha256::digest(body).as_slice() == trailer, || Error::Integrity("checksum mismatch".into()))?;
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    ensure(version == CHECKPOINT_VERSION, || Error::Version {
        found: version,
        expected: CHECKPOINT_VERSION,
    })?;
    let json_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    ensure(HEADER_LEN + json_len <= body.len(), || Error::Integrity("manifest length out of range".into()))?;
    let manifest: Manifest = serde_json::from_slice(&body[HEADER_LEN..HEADER_LEN + json_len])
        .map_err(|e| Error::Integrity(format!("manifest: {e}")))?;
    let blob = &body[HEADER_LEN + json_len..];
    ensure(blob.len() == manifest.blob_len, || Error::Integrity("blob length mismatch".into()))?;

    let mut networks = Vec::new();
    for entry in &manifest.networks {
        let mut net: NetworkHandle<T> = if entry.kind == NetworkKind::IdentityHost {
            identity_host(entry.config.image_side)
        } else {
            build_network(entry.kind, &entry.config, 0)?
        };
        ensure(net.store.len() == entry.tensors.len(), || {
            Error::Integrity(format!("{}: expected {} tensors", entry.role, net.store.len()))
        })?;
        for t in &entry.tensors {
            let id = net
                .store
                .find(&t.name)
                .ok_or_else(|| Error::Integrity(format!("{}: unknown tensor {}", entry.role, t.name)))?;
            let shape = Shape::new(t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
            ensure(net.store.get(id).shape() == shape, || {
                Error::Integrity(format!("{}: shape mismatch for {}", entry.role, t.name))
            })?;
            let values = read_values(blob, &manifest.dtype, t.offset, shape.len())?;
            net.store.set(id, Tensor::from_vec(shape, values)?);
        }
        if manifest.dtype == T::DTYPE {
            ensure(net.store.digest() == entry.digest, || {
                Error::Integrity(format!("{}: parameter digest mismatch", entry.role))
            })?;
        }
        networks.push((entry.role.clone(), net));
    }
    let mut images = Vec::new();
    for entry in &manifest.images {
        let [c, h, w] = entry.dims;
        let values = read_values(blob, &manifest.dtype, entry.offset, c * h * w)?;
        images.push((entry.name.clone(), ImageArray::from_planar(c, h, w, values)?));
    }
    Ok(Archive {
        meta: manifest.meta,
        networks,
        images,
    })
}

/// Writes `bytes` next to `path` and renames the file into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_archive<T: Scalar>(path: impl AsRef<Path>, archive: &Archive<T>) -> Result<()> {
    write_atomic(path, &encode_archive(archive)?)
}

pub fn load_archive<T: Scalar>(path: impl AsRef<Path>) -> Result<Archive<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes)
}

/// Trained Phase II state.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: RunConfig,
    pub stage: Stage,
    /// Epoch the weights come from.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub host: NetworkHandle<T>,
    pub embedder: NetworkHandle<T>,
    pub extractor: NetworkHandle<T>,
    pub discriminator: NetworkHandle<T>,
    /// Defender-side `(N1, N2)` after the adversarial stage.
    pub defender_surrogates: Option<(NetworkHandle<T>, NetworkHandle<T>)>,
    pub watermarks: Watermarks<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_archive(&self) -> Archive<T> {
        let mut networks = vec![
            ("host".to_string(), self.host.clone()),
            ("embedder".to_string(), self.embedder.clone()),
            ("extractor".to_string(), self.extractor.clone()),
            ("discriminator".to_string(), self.discriminator.clone()),
        ];
        if let Some((n1, n2)) = &self.defender_surrogates {
            networks.push(("n1".to_string(), n1.clone()));
            networks.push(("n2".to_string(), n2.clone()));
        }
        Archive {
            meta: ArchiveMeta {
                config: self.config.clone(),
                stage: self.stage,
                epoch: self.epoch,
                history: self.history.clone(),
                watermark_kind: Some(self.watermarks.kind),
                noise_seed: Some(self.watermarks.noise.seed),
            },
            networks,
            images: vec![
                ("w".to_string(), self.watermarks.w.clone()),
                ("w_z".to_string(), self.watermarks.noise.w_z.clone()),
            ],
        }
    }

    pub fn from_archive(archive: Archive<T>) -> Result<Self> {
        let meta = &archive.meta;
        let kind = meta
            .watermark_kind
            .ok_or_else(|| Error::Value("archive is not a watermarking checkpoint".into()))?;
        let defender_surrogates = match (archive.network("n1"), archive.network("n2")) {
            (Ok(a), Ok(b)) => Some((a.clone(), b.clone())),
            _ => None,
        };
        Ok(Checkpoint {
            config: meta.config.clone(),
            stage: meta.stage,
            epoch: meta.epoch,
            history: meta.history.clone(),
            host: archive.network("host")?.clone(),
            embedder: archive.network("embedder")?.clone(),
            extractor: archive.network("extractor")?.clone(),
            discriminator: archive.network("discriminator")?.clone(),
            defender_surrogates,
            watermarks: Watermarks {
                kind,
                w: archive.image("w")?.clone(),
                noise: NoiseTarget {
                    w_z: archive.image("w_z")?.clone(),
                    seed: meta.noise_seed.unwrap_or_default(),
                },
            },
        })
    }
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    save_archive(path, &ckpt.to_archive())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    Checkpoint::from_archive(load_archive(path)?)
}

/// Archive holding a single network under `role`.
pub fn single_network_archive<T: Scalar>(
    role: &str,
    net: &NetworkHandle<T>,
    config: &RunConfig,
    stage: Stage,
    history: Vec<EpochRecord>,
) -> Archive<T> {
    Archive {
        meta: ArchiveMeta {
            config: config.clone(),
            stage,
            epoch: history.last().map_or(0, |r| r.epoch),
            history,
            watermark_kind: None,
            noise_seed: None,
        },
        networks: vec![(role.to_string(), net.clone())],
        images: Vec::new(),
    }
}
