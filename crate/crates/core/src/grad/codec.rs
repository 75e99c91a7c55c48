//! Versioned flat binary encoding of MLP parameters.
//!
//! Layout (little-endian): `b"ICPR"`, version `u32`, layer count `u32`, then
//! per layer `rows u32`, `cols u32`, `rows*cols` f64 weights (row-major) and
//! `rows` f64 biases.

use super::{Activation, DenseTensor, Layer, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"ICPR";
pub const VERSION: u32 = 1;

pub fn encode<S: Scalar>(params: &MlpParams<S>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for layer in params.layers() {
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        for &w in layer.weight.data() {
            out.extend_from_slice(&w.to_f64_lossless().to_le_bytes());
        }
        for &b in &layer.bias {
            out.extend_from_slice(&b.to_f64_lossless().to_le_bytes());
        }
    }
}

pub fn to_bytes<S: Scalar>(params: &MlpParams<S>) -> Vec<u8> {
    let mut out = Vec::new();
    encode(params, &mut out);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("truncated parameter blob at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes one blob from the front of `bytes`, returning the network and the
/// number of bytes consumed. `activations` supplies one activation per layer.
pub fn decode<S: Scalar>(bytes: &[u8], activations: &[Activation]) -> Result<(MlpParams<S>, usize)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected ICPR".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    if count != activations.len() {
        return Err(Error::Format(format!(
            "blob has {count} layers but {} activations were supplied",
            activations.len()
        )));
    }
    let mut layers = Vec::with_capacity(count);
    for &act in activations {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let w = (0..rows * cols).map(|_| r.f64().map(S::from_f64_lossy)).collect::<Result<Vec<S>>>()?;
        let b = (0..rows).map(|_| r.f64().map(S::from_f64_lossy)).collect::<Result<Vec<S>>>()?;
        layers.push(Layer::new(DenseTensor::matrix(rows, cols, w)?, b, act)?);
    }
    Ok((MlpParams::from_layers(layers)?, r.pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpParams::<f64>::init(&[2, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..4], b"ICPR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 20 + 8 * (6 + 3));
    }

    #[test]
    fn corrupted_blobs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MlpParams::<f64>::init(&[2, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let bytes = to_bytes(&net);
        assert!(decode::<f64>(&bytes[..bytes.len() - 1], &[Activation::Identity]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad, &[Activation::Identity]).is_err());
        assert!(decode::<f64>(&bytes, &[Activation::Relu, Activation::Identity]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..9, inp in 1usize..6, out in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = MlpParams::<f64>::init(&[inp, hidden, out], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
            let bytes = to_bytes(&net);
            let (back, used) = decode::<f64>(&bytes, &[Activation::Tanh, Activation::Identity]).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(to_bytes(&back), bytes);
            prop_assert_eq!(back, net);
        }
    }
}
