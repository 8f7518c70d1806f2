//! Self-describing binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! "PETL1"                  5 bytes
//! header length            u32 LE
//! header                   UTF-8 `key = value` lines
//! SHA-256 of the header    32 bytes
//! payload length           u64 LE
//! payload                  f32 LE, tensors in header order
//! ```
//!
//! The header records the network kind, class vocabulary, input size and
//! normalization, batch-norm settings, provenance and one
//! `tensor = <name> <d0,d1,...>` line per stored tensor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expression::{format_class_list, parse_class_list};
use crate::network::{Network, NetworkKind, NetworkSpec};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 5] = b"PETL1";
pub const FORMAT_VERSION: u32 = 1;
pub const INPUT_NORMALIZATION: &str = "x/127.5-1";
pub const LANDMARK_NORMALIZATION: &str = "crop-unit";
/// Conventional file extension.
pub const EXTENSION: &str = "petl";

/// Parsed checkpoint header.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub spec: NetworkSpec,
    pub has_localization: bool,
    pub provenance: BTreeMap<String, String>,
    pub tensors: Vec<(String, Vec<usize>)>,
}

fn dims(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn header_text<T: Scalar>(net: &Network<T>) -> String {
    let spec = &net.spec;
    let mut h = String::new();
    let mut line = |k: &str, v: &dyn std::fmt::Display| writeln!(h, "{k} = {v}").unwrap();
    line("format", &FORMAT_VERSION);
    line("kind", &spec.kind);
    line("classes", &format_class_list(&spec.classes));
    line("num_classes", &spec.num_classes());
    line("input_size", &spec.input_size);
    line("input_normalization", &INPUT_NORMALIZATION);
    let z = if net.localization.is_some() {
        spec.kind.landmark_outputs().unwrap_or(0)
    } else {
        0
    };
    line("landmark_outputs", &z);
    line("landmark_normalization", &LANDMARK_NORMALIZATION);
    line("bn_momentum", &spec.bn_momentum);
    line("bn_epsilon", &spec.bn_epsilon);
    for (k, v) in &net.provenance {
        line(&format!("provenance.{k}"), v);
    }
    for t in net.tensors() {
        line("tensor", &format!("{} {}", t.name, dims(t.tensor.shape())));
    }
    h
}

/// Serializes a network; parameters are stored as f32.
pub fn encode<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let header = header_text(net);
    let payload: Vec<u8> = net
        .tensors()
        .iter()
        .flat_map(|t| t.tensor.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)))
        .flat_map(f32::to_le_bytes)
        .collect();
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + 32 + 8 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&Sha256::digest(header.as_bytes()));
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

fn parse_header(text: &str) -> Result<CheckpointHeader> {
    let bad = |m: String| Error::CorruptHeader(m);
    let mut fields = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    let mut tensors = Vec::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
        if k == "tensor" {
            let (name, d) = v.rsplit_once(' ').ok_or_else(|| bad(format!("malformed tensor `{v}`")))?;
            let shape = d
                .split(',')
                .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad dims for `{name}`"))))
                .collect::<Result<Vec<_>>>()?;
            tensors.push((name.to_string(), shape));
        } else if let Some(p) = k.strip_prefix("provenance.") {
            provenance.insert(p.to_string(), v.to_string());
        } else if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(bad(format!("duplicate key `{k}`")));
        }
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing key `{k}`")));
    fn num<N: std::str::FromStr>(k: &str, v: &str) -> Result<N> {
        v.parse().map_err(|_| Error::CorruptHeader(format!("bad value for `{k}`: `{v}`")))
    }
    if num::<u32>("format", get("format")?)? != FORMAT_VERSION {
        return Err(bad("unsupported format version".into()));
    }
    let kind: NetworkKind = get("kind")?.parse().map_err(|e: Error| bad(e.to_string()))?;
    let classes = parse_class_list(get("classes")?).map_err(|e| bad(e.to_string()))?;
    if num::<usize>("num_classes", get("num_classes")?)? != classes.len() {
        return Err(bad("num_classes disagrees with classes".into()));
    }
    if get("input_normalization")? != INPUT_NORMALIZATION || get("landmark_normalization")? != LANDMARK_NORMALIZATION {
        return Err(bad("unsupported normalization".into()));
    }
    let spec = NetworkSpec {
        kind,
        classes,
        input_size: num("input_size", get("input_size")?)?,
        bn_momentum: num("bn_momentum", get("bn_momentum")?)?,
        bn_epsilon: num("bn_epsilon", get("bn_epsilon")?)?,
    };
    spec.validate().map_err(|e| bad(e.to_string()))?;
    let z: usize = num("landmark_outputs", get("landmark_outputs")?)?;
    let has_localization = z != 0;
    if has_localization && spec.kind.landmark_outputs() != Some(z) {
        return Err(bad(format!("landmark_outputs {z} does not match kind {}", spec.kind)));
    }
    Ok(CheckpointHeader {
        spec,
        has_localization,
        provenance,
        tensors,
    })
}

/// Splits raw bytes into the verified header and the payload.
fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut pos = MAGIC.len();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| Error::CorruptHeader("truncated file".into()))?;
        *pos += n;
        Ok(s)
    };
    let hlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let header = take(&mut pos, hlen)?;
    let hash = take(&mut pos, 32)?;
    if Sha256::digest(header).as_slice() != hash {
        return Err(Error::HeaderHashMismatch);
    }
    let text = std::str::from_utf8(header).map_err(|_| Error::CorruptHeader("header is not UTF-8".into()))?;
    let parsed = parse_header(text)?;
    let plen = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let payload = &bytes[pos..];
    let declared: usize = parsed.tensors.iter().map(|(_, s)| 4 * s.iter().product::<usize>()).sum();
    if plen != declared {
        return Err(Error::PayloadLength {
            expected: declared,
            actual: plen,
        });
    }
    if payload.len() != plen {
        return Err(Error::PayloadLength {
            expected: plen,
            actual: payload.len(),
        });
    }
    Ok((parsed, payload))
}

/// Reads only the header.
pub fn read_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    split(bytes).map(|(h, _)| h)
}

/// Rebuilds a network from checkpoint bytes. When `expected` is given, the
/// stored tensors must fit a network built for that spec.
pub fn decode<T: Scalar>(bytes: &[u8], expected: Option<&NetworkSpec>) -> Result<Network<T>> {
    let (header, payload) = split(bytes)?;
    let spec = expected.cloned().unwrap_or_else(|| header.spec.clone());
    let mut net = Network::<T>::build(spec, 0)?;
    if !header.has_localization {
        net.localization = None;
    }
    let mut stored: BTreeMap<&str, (&[usize], &[u8])> = BTreeMap::new();
    let mut offset = 0;
    for (name, shape) in &header.tensors {
        let n = 4 * shape.iter().product::<usize>();
        stored.insert(name, (shape, &payload[offset..offset + n]));
        offset += n;
    }
    let wanted = net.tensors_mut();
    if wanted.len() != stored.len() {
        let known: Vec<&str> = wanted.iter().map(|t| t.name.as_str()).collect();
        if let Some(extra) = stored.keys().find(|k| !known.contains(k)) {
            return Err(Error::CorruptHeader(format!("unexpected tensor `{extra}`")));
        }
    }
    for t in wanted {
        let (shape, raw) = stored
            .get(t.name.as_str())
            .ok_or_else(|| Error::MissingTensor(t.name.clone()))?;
        if *shape != t.tensor.shape() {
            return Err(Error::TensorShape {
                name: t.name.clone(),
                expected: t.tensor.shape().to_vec(),
                found: shape.to_vec(),
            });
        }
        for (dst, chunk) in t.tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = T::from_f32(f32::from_le_bytes(chunk.try_into().unwrap())).unwrap();
        }
    }
    net.provenance = header.provenance;
    Ok(net)
}

pub fn save<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode(net))?)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    decode(&read(path)?, None)
}

/// Loads into a network built for `spec`, rejecting incompatible shapes.
pub fn load_for_spec<T: Scalar>(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Network<T>> {
    decode(&read(path)?, Some(spec))
}

fn read(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}
