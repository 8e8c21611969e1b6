//! Model file layout. All integers little-endian.
//!
//! ```text
//! "BSHM"                  magic
//! u16                     format version
//! u8 u8 u8                net type, activation, head (0 = bytes, 1 = label)
//! u32 n, u32 * n          layer dims
//! u32                     output_len            (bytes head only)
//! per layer: i32 weights (row-major), i32 biases
//! u32 count, (u32 len, utf-8) * count   labels  (label head only)
//! u32                     CRC-32 of everything above
//! ```

use super::{Activation, Layer, ModelError, ModelParams, NetType, OutputHead, MODEL_FORMAT_VERSION};

pub const MODEL_MAGIC: &[u8; 4] = b"BSHM";

const HEAD_BYTES: u8 = 0;
const HEAD_LABEL: u8 = 1;

pub fn serialize_model(params: &ModelParams) -> Result<Vec<u8>, ModelError> {
    params.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&params.format_version.to_le_bytes());
    out.push(match params.net_type {
        NetType::Feedforward => 0,
    });
    out.push(match params.activation {
        Activation::ClampedRelu => 0,
    });
    out.push(match params.head {
        OutputHead::Bytes { .. } => HEAD_BYTES,
        OutputHead::Label { .. } => HEAD_LABEL,
    });
    put_u32(&mut out, params.layer_dims.len() as u32);
    for &d in &params.layer_dims {
        put_u32(&mut out, d);
    }
    if let OutputHead::Bytes { output_len } = params.head {
        put_u32(&mut out, output_len);
    }
    for layer in &params.layers {
        for &w in layer.weights.iter().chain(&layer.biases) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    if let OutputHead::Label { labels } = &params.head {
        put_u32(&mut out, labels.len() as u32);
        for label in labels {
            put_u32(&mut out, label.len() as u32);
            out.extend_from_slice(label.as_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

pub fn deserialize_model(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    let corrupt = |m: &str| ModelError::CorruptModel(m.to_string());
    if bytes.len() < 6 || &bytes[..4] != MODEL_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    if bytes.len() < 10 {
        return Err(corrupt("truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader { buf: body, pos: 6 };
    let net_type = match r.u8()? {
        0 => NetType::Feedforward,
        t => return Err(ModelError::CorruptModel(format!("unknown net type {t}"))),
    };
    let activation = match r.u8()? {
        0 => Activation::ClampedRelu,
        a => return Err(ModelError::CorruptModel(format!("unknown activation {a}"))),
    };
    let head_tag = r.u8()?;
    let n_dims = r.u32()? as usize;
    if n_dims > r.remaining() / 4 {
        return Err(corrupt("layer table exceeds file"));
    }
    let layer_dims = (0..n_dims).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let output_len = match head_tag {
        HEAD_BYTES => Some(r.u32()?),
        HEAD_LABEL => None,
        h => return Err(ModelError::CorruptModel(format!("unknown head {h}"))),
    };
    let mut layers = Vec::with_capacity(n_dims.saturating_sub(1));
    for w in layer_dims.windows(2) {
        let n_weights = (w[0] as usize)
            .checked_mul(w[1] as usize)
            .ok_or_else(|| corrupt("layer too large"))?;
        if n_weights + w[1] as usize > r.remaining() / 4 {
            return Err(corrupt("weights exceed file"));
        }
        let weights = (0..n_weights).map(|_| r.i32()).collect::<Result<_, _>>()?;
        let biases = (0..w[1]).map(|_| r.i32()).collect::<Result<_, _>>()?;
        layers.push(Layer { weights, biases });
    }
    let head = match output_len {
        Some(output_len) => OutputHead::Bytes { output_len },
        None => {
            let count = r.u32()? as usize;
            if count > r.remaining() / 4 {
                return Err(corrupt("label table exceeds file"));
            }
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.u32()? as usize;
                let raw = r.take(len)?;
                labels.push(
                    String::from_utf8(raw.to_vec()).map_err(|_| corrupt("label is not UTF-8"))?,
                );
            }
            OutputHead::Label { labels }
        }
    };
    if r.remaining() != 0 {
        return Err(corrupt("trailing bytes"));
    }
    let params = ModelParams {
        format_version: version,
        net_type,
        activation,
        layer_dims,
        layers,
        head,
    };
    params
        .validate()
        .map_err(|e| ModelError::CorruptModel(e.to_string()))?;
    Ok(params)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if n > self.remaining() {
            return Err(ModelError::CorruptModel("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, ModelError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FEATURE_LEN;
    use proptest::prelude::*;

    fn arb_params() -> impl Strategy<Value = ModelParams> {
        let hidden = proptest::collection::vec(1u32..6, 0..3);
        let head = prop_oneof![
            (1u32..12).prop_map(|output_len| OutputHead::Bytes { output_len }),
            proptest::collection::vec("[a-z ,é]{0,12}", 1..6)
                .prop_map(|labels| OutputHead::Label { labels }),
        ];
        (hidden, head, any::<u64>()).prop_map(|(hidden, head, seed)| {
            let mut p = ModelParams::zeroed(&hidden, head);
            let mut x = seed | 1;
            for layer in &mut p.layers {
                for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                    // xorshift keeps generation cheap for 320-wide layers
                    x ^= x << 13;
                    x ^= x >> 7;
                    x ^= x << 17;
                    *w = x as i32;
                }
            }
            p
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip(p in arb_params()) {
            let bytes = serialize_model(&p).unwrap();
            prop_assert_eq!(deserialize_model(&bytes).unwrap(), p);
        }
    }

    #[test]
    fn header_layout() {
        let p = ModelParams::zeroed(&[2], OutputHead::Bytes { output_len: 3 });
        let bytes = serialize_model(&p).unwrap();
        assert_eq!(&bytes[..4], b"BSHM");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..9], &[0, 0, 0]);
        assert_eq!(&bytes[9..13], &3u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &(FEATURE_LEN as u32).to_le_bytes());
        let expected_len = 4 + 2 + 3 + 4 + 12 + 4 + 4 * (FEATURE_LEN * 2 + 2 + 2 * 3 + 3) + 4;
        assert_eq!(bytes.len(), expected_len);
    }

    #[test]
    fn truncated_is_corrupt() {
        let p = crate::fixtures::experiment_one_model();
        let bytes = serialize_model(&p).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 7] {
            assert!(matches!(
                deserialize_model(&bytes[..cut]),
                Err(ModelError::CorruptModel(_))
            ));
        }
    }

    #[test]
    fn bumped_version_is_unsupported() {
        let p = crate::fixtures::experiment_one_model();
        let mut bytes = serialize_model(&p).unwrap();
        bytes[4] += 1;
        assert_eq!(deserialize_model(&bytes), Err(ModelError::UnsupportedVersion(2)));
    }

    #[test]
    fn flipped_weight_fails_checksum() {
        let p = ModelParams::zeroed(&[2], OutputHead::Bytes { output_len: 3 });
        let mut bytes = serialize_model(&p).unwrap();
        bytes[100] ^= 1;
        assert_eq!(
            deserialize_model(&bytes),
            Err(ModelError::CorruptModel("checksum mismatch".into()))
        );
    }
}
