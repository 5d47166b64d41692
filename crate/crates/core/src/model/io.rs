//! `TDNNKWS1` model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "TDNNKWS1"
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 "key=value" lines
//! weights      f32 blocks, one per layer (phone layers, then word layers),
//!              row-major by input index
//! biases       f32 blocks in the same layer order
//! ```
//!
//! Decimal values in the header use Rust's shortest round-trip formatting so
//! the normalizer statistics reload bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, DenseLayer, PhoneNn, TdnnModel, WordNn};
use crate::error::{Error, FormatError, Result};
use crate::features::{FeatureNormalizer, FrontendConfig};

pub const MAGIC: &[u8; 8] = b"TDNNKWS1";
pub const FORMAT_VERSION: u32 = 1;

pub fn save(model: &TdnnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TdnnModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn to_bytes(model: &TdnnModel) -> Vec<u8> {
    let header = header_text(model);
    let floats: usize = model.layers().map(|l| l.weight_count() + l.out_dim()).sum();
    let mut out = Vec::with_capacity(16 + header.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for l in model.layers() {
        out.extend(l.weights().iter().flat_map(|w| w.to_le_bytes()));
    }
    for l in model.layers() {
        out.extend(l.bias().iter().flat_map(|b| b.to_le_bytes()));
    }
    out
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn layer_spec(layers: &[DenseLayer]) -> String {
    layers
        .iter()
        .map(|l| format!("{}x{}:{}", l.in_dim(), l.out_dim(), l.activation().as_str()))
        .collect::<Vec<_>>()
        .join(",")
}

fn header_text(model: &TdnnModel) -> String {
    let (p, w, fe) = (&model.phone_nn, &model.word_nn, &model.frontend);
    let mut h = String::new();
    let _ = writeln!(h, "phone.context={},{}", p.left_context, p.right_context);
    let _ = writeln!(h, "phone.layers={}", layer_spec(&p.layers));
    let _ = writeln!(h, "word.pool={},{}", w.pool_size, w.pool_stride);
    let _ = writeln!(h, "word.pooled_context={}", w.pooled_context);
    let _ = writeln!(h, "word.layers={}", layer_spec(&w.layers));
    let _ = writeln!(h, "frontend.sample_rate={}", fe.sample_rate);
    let _ = writeln!(h, "frontend.frame_ms={}", fe.frame_ms);
    let _ = writeln!(h, "frontend.hop_ms={}", fe.hop_ms);
    let _ = writeln!(h, "frontend.n_fft={}", fe.n_fft);
    let _ = writeln!(h, "frontend.num_mels={}", fe.num_mels);
    let _ = writeln!(h, "frontend.low_hz={}", fe.low_hz);
    let high = fe
        .high_hz
        .map_or_else(|| "nyquist".to_string(), |v| v.to_string());
    let _ = writeln!(h, "frontend.high_hz={high}");
    let _ = writeln!(h, "frontend.pre_emphasis={}", fe.pre_emphasis);
    let _ = writeln!(h, "frontend.log_floor={}", fe.log_floor);
    let _ = writeln!(h, "normalizer.mean={}", join(model.normalizer.mean()));
    let _ = writeln!(h, "normalizer.inv_std={}", join(model.normalizer.inv_std()));
    let _ = writeln!(h, "classes={}", model.class_names.len());
    for (i, name) in model.class_names.iter().enumerate() {
        let _ = writeln!(h, "class.{i}={name}");
    }
    h
}

struct Header(BTreeMap<String, String>);

impl Header {
    fn parse(text: &str) -> Result<Self, FormatError> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FormatError::Header(format!("line {}: missing '='", n + 1)))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(FormatError::Header(format!("duplicate key {k}")));
            }
        }
        Ok(Self(map))
    }

    fn raw(&self, key: &str) -> Result<&str, FormatError> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| FormatError::Header(format!("missing key {key}")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, FormatError> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| FormatError::Header(format!("{key}: cannot parse {raw:?}")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, FormatError> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| FormatError::Header(format!("{key}: cannot parse {s:?}")))
            })
            .collect()
    }

    fn pair(&self, key: &str) -> Result<(usize, usize), FormatError> {
        match self.list::<usize>(key)?[..] {
            [a, b] => Ok((a, b)),
            _ => Err(FormatError::Header(format!("{key}: expected two values"))),
        }
    }

    fn layers(&self, key: &str) -> Result<Vec<(usize, usize, Activation)>, FormatError> {
        let bad = |s: &str| FormatError::Header(format!("{key}: bad layer spec {s:?}"));
        self.raw(key)?
            .split(',')
            .map(|spec| {
                let (dims, act) = spec.split_once(':').ok_or_else(|| bad(spec))?;
                let (i, o) = dims.split_once('x').ok_or_else(|| bad(spec))?;
                let i: usize = i.parse().map_err(|_| bad(spec))?;
                let o: usize = o.parse().map_err(|_| bad(spec))?;
                let act = Activation::parse(act).ok_or_else(|| bad(spec))?;
                if i == 0 || o == 0 {
                    return Err(bad(spec));
                }
                Ok((i, o, act))
            })
            .collect()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: impl FnOnce() -> String) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                what: what(),
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        let b = self.take(4, || what.to_string())?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize, what: impl FnOnce() -> String) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| FormatError::Dimension("layer size overflows".into()))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<TdnnModel> {
    Ok(decode(bytes)?)
}

fn decode(bytes: &[u8]) -> Result<TdnnModel, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur
        .take(MAGIC.len(), || "magic".into())
        .map_err(|_| FormatError::BadMagic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = cur.u32("header length")? as usize;
    let header_bytes = cur.take(header_len, || "header".into())?;
    let text = std::str::from_utf8(header_bytes)
        .map_err(|e| FormatError::Header(format!("not UTF-8: {e}")))?;
    let h = Header::parse(text)?;

    let (left, right) = h.pair("phone.context")?;
    let phone_specs = h.layers("phone.layers")?;
    let (pool_size, pool_stride) = h.pair("word.pool")?;
    let pooled_context: usize = h.get("word.pooled_context")?;
    let word_specs = h.layers("word.layers")?;
    let high_raw = h.raw("frontend.high_hz")?;
    let frontend = FrontendConfig {
        sample_rate: h.get("frontend.sample_rate")?,
        frame_ms: h.get("frontend.frame_ms")?,
        hop_ms: h.get("frontend.hop_ms")?,
        n_fft: h.get("frontend.n_fft")?,
        num_mels: h.get("frontend.num_mels")?,
        low_hz: h.get("frontend.low_hz")?,
        high_hz: if high_raw == "nyquist" {
            None
        } else {
            Some(h.get("frontend.high_hz")?)
        },
        pre_emphasis: h.get("frontend.pre_emphasis")?,
        log_floor: h.get("frontend.log_floor")?,
    };
    let mean: Vec<f64> = h.list("normalizer.mean")?;
    let inv_std: Vec<f64> = h.list("normalizer.inv_std")?;
    let num_classes: usize = h.get("classes")?;
    let class_names = (0..num_classes)
        .map(|i| h.raw(&format!("class.{i}")).map(str::to_string))
        .collect::<Result<Vec<_>, _>>()?;

    check_dims(
        &phone_specs,
        &word_specs,
        left + 1 + right,
        pooled_context,
        frontend.num_mels,
        mean.len(),
        num_classes,
    )?;

    let specs: Vec<_> = phone_specs.iter().chain(&word_specs).collect();
    let names: Vec<String> = (0..phone_specs.len())
        .map(|i| format!("phone-{}", i + 1))
        .chain((0..word_specs.len()).map(|i| format!("word-{}", i + 1)))
        .collect();
    let mut weights = Vec::with_capacity(specs.len());
    for (name, (i, o, _)) in names.iter().zip(&specs) {
        weights.push(cur.floats(i * o, || format!("{name} weights ({i}x{o})"))?);
    }
    let mut layers = Vec::with_capacity(specs.len());
    for ((name, (i, o, act)), w) in names.iter().zip(&specs).zip(weights) {
        let b = cur.floats(*o, || format!("{name} bias ({o})"))?;
        let layer = DenseLayer::new(name.clone(), *i, *o, w, b, *act)
            .map_err(|e| FormatError::Dimension(e.to_string()))?;
        layers.push(layer);
    }
    let trailing = bytes.len() - cur.pos;
    if trailing != 0 {
        return Err(FormatError::TrailingData(trailing));
    }

    let word_layers = layers.split_off(phone_specs.len());
    let invalid = |e: Error| FormatError::Dimension(e.to_string());
    let phone_nn = PhoneNn::new(layers, left, right).map_err(invalid)?;
    let word_nn =
        WordNn::new(word_layers, pooled_context, pool_size, pool_stride).map_err(invalid)?;
    let normalizer = FeatureNormalizer::new(mean, inv_std).map_err(invalid)?;
    TdnnModel::from_parts(phone_nn, word_nn, frontend, normalizer, class_names).map_err(invalid)
}

fn check_dims(
    phone: &[(usize, usize, Activation)],
    word: &[(usize, usize, Activation)],
    context_len: usize,
    pooled_context: usize,
    num_mels: usize,
    norm_dim: usize,
    num_classes: usize,
) -> Result<(), FormatError> {
    let dim = |msg: String| Err(FormatError::Dimension(msg));
    if phone.is_empty() || word.is_empty() {
        return dim("both networks need at least one layer".into());
    }
    for (stage, specs) in [("phone", phone), ("word", word)] {
        for (k, pair) in specs.windows(2).enumerate() {
            if pair[0].1 != pair[1].0 {
                return dim(format!(
                    "{stage}-{} outputs {} but {stage}-{} expects {}",
                    k + 1,
                    pair[0].1,
                    k + 2,
                    pair[1].0
                ));
            }
        }
    }
    if phone[0].0 != num_mels * context_len {
        return dim(format!(
            "phone-1 input {} != {num_mels} mels x {context_len} frames",
            phone[0].0
        ));
    }
    if norm_dim != num_mels {
        return dim(format!(
            "normalizer has {norm_dim} dims for {num_mels} mels"
        ));
    }
    let phone_out = phone.last().unwrap().1;
    if word[0].0 != phone_out * pooled_context {
        return dim(format!(
            "word-1 input {} != {phone_out} phone outputs x {pooled_context} pooled frames",
            word[0].0
        ));
    }
    if word.last().unwrap().1 != num_classes {
        return dim(format!(
            "word output {} != {num_classes} classes",
            word.last().unwrap().1
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn header_len(bytes: &[u8]) -> usize {
        u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize
    }

    #[test]
    fn default_round_trip_is_bit_exact() {
        let m = TdnnModel::build_default(1, 42).unwrap();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.layers().zip(back.layers()) {
            assert!(a
                .weights()
                .iter()
                .zip(b.weights())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tdnn");
        let mut m = TdnnModel::build_default(2, 1).unwrap();
        m.set_normalizer(FeatureNormalizer::new(vec![0.1; 41], vec![3.3; 41]).unwrap())
            .unwrap();
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = to_bytes(&TdnnModel::build_default(1, 0).unwrap());
        bytes[0] = b'X';
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Format(FormatError::BadMagic))
        ));
        assert!(matches!(
            from_bytes(b"TDN"),
            Err(Error::Format(FormatError::BadMagic))
        ));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = to_bytes(&TdnnModel::build_default(1, 0).unwrap());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Format(FormatError::VersionMismatch {
                found: 2,
                expected: 1
            }))
        ));
    }

    #[test]
    fn truncated_first_layer() {
        let bytes = to_bytes(&TdnnModel::build_default(1, 0).unwrap());
        let payload_start = 16 + header_len(&bytes);
        // keep phone-1 weights 451x128 minus 10 floats
        let cut = payload_start + (451 * 128 - 10) * 4;
        match from_bytes(&bytes[..cut]) {
            Err(Error::Format(FormatError::Truncated {
                what,
                needed,
                available,
            })) => {
                assert!(what.contains("phone-1"), "{what}");
                assert_eq!(needed - available, 40);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes() {
        let mut bytes = to_bytes(&TdnnModel::build_default(1, 0).unwrap());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Format(FormatError::TrailingData(4)))
        ));
    }

    fn rewrite_header(bytes: &[u8], f: impl Fn(&str) -> String) -> Vec<u8> {
        let hl = header_len(bytes);
        let text = std::str::from_utf8(&bytes[16..16 + hl]).unwrap();
        let new = f(text);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&bytes[8..12]);
        out.extend_from_slice(&(new.len() as u32).to_le_bytes());
        out.extend_from_slice(new.as_bytes());
        out.extend_from_slice(&bytes[16 + hl..]);
        out
    }

    #[test]
    fn inconsistent_dimensions() {
        let bytes = to_bytes(&TdnnModel::build_default(1, 0).unwrap());
        let bad = rewrite_header(&bytes, |t| {
            t.replace("word.pooled_context=17", "word.pooled_context=16")
        });
        assert!(matches!(
            from_bytes(&bad),
            Err(Error::Format(FormatError::Dimension(_)))
        ));
        let bad = rewrite_header(&bytes, |t| t.replace("451x128", "450x128"));
        assert!(matches!(
            from_bytes(&bad),
            Err(Error::Format(FormatError::Dimension(_)))
        ));
    }

    #[test]
    fn malformed_header() {
        let bytes = to_bytes(&TdnnModel::build_default(1, 0).unwrap());
        let bad = rewrite_header(&bytes, |t| t.replace("frontend.hop_ms=10\n", ""));
        assert!(matches!(
            from_bytes(&bad),
            Err(Error::Format(FormatError::Header(_)))
        ));
    }

    #[test]
    fn tiny_architecture_round_trip() {
        let arch = Architecture {
            feat_dim: 3,
            left_context: 1,
            right_context: 0,
            phone_hidden: vec![],
            phone_outputs: 2,
            pool_size: 2,
            pool_stride: 1,
            pooled_context: 2,
            word_hidden: vec![],
            num_keywords: 2,
        };
        let m = TdnnModel::random(&arch, 5).unwrap();
        assert_eq!(from_bytes(&to_bytes(&m)).unwrap(), m);
    }
}
