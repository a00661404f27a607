//! Bit-packed storage for inter-filter signed-binary layers.
//!
//! A signed-binary layer with C_t = C needs R*S*C*K bitmap bits plus one
//! sign bit per filter. File layout, little-endian throughout:
//!
//! ```text
//! magic "PLUM" | version u8 | R,S,C,K u32 | delta f32 | P f32 | seed u64
//! | K sign bits (byte padded) | R*S*C*K bitmap bits (byte padded)
//! ```
//!
//! Bits are LSB-first within each byte; bitmap bits follow the RSCK
//! row-major element order. A sign bit of 1 means beta = +1.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quantize::{QuantScheme, QuantVariant, QuantizedLayer, RegionMap};

pub const PACK_MAGIC: &[u8; 4] = b"PLUM";
pub const PACK_VERSION: u8 = 1;
/// magic + version + 4 dims + delta + P + seed
pub const HEADER_BYTES: usize = 4 + 1 + 16 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    pub dims: [usize; 4],
    pub delta: f32,
    pub fraction_pos: f32,
    pub seed: u64,
    /// One bit per filter, 1 = beta +1.
    pub sign_bits: Vec<u8>,
    /// One bit per weight, 1 = nonzero.
    pub bitmap: Vec<u8>,
}

fn set_bit(bytes: &mut [u8], i: usize) {
    bytes[i / 8] |= 1 << (i % 8);
}

fn get_bit(bytes: &[u8], i: usize) -> bool {
    bytes[i / 8] & (1 << (i % 8)) != 0
}

impl PackedModel {
    /// Payload size in information bits: R*S*C*K + K.
    pub fn payload_bits(&self) -> usize {
        self.dims.iter().product::<usize>() + self.dims[3]
    }

    pub fn payload_bytes(&self) -> usize {
        self.sign_bits.len() + self.bitmap.len()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PACK_MAGIC)?;
        w.write_all(&[PACK_VERSION])?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.delta.to_le_bytes())?;
        w.write_all(&self.fraction_pos.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.sign_bits)?;
        w.write_all(&self.bitmap)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PACK_MAGIC {
            return Err(Error::CorruptFile("bad PLUM magic".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != PACK_VERSION {
            return Err(Error::CorruptFile(format!("unknown version {}", version[0])));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let mut f = [0u8; 4];
        r.read_exact(&mut f)?;
        let delta = f32::from_le_bytes(f);
        r.read_exact(&mut f)?;
        let fraction_pos = f32::from_le_bytes(f);
        let mut s = [0u8; 8];
        r.read_exact(&mut s)?;
        let seed = u64::from_le_bytes(s);
        let k = dims[3];
        let total: usize = dims.iter().product();
        let mut sign_bits = vec![0u8; k.div_ceil(8)];
        r.read_exact(&mut sign_bits)?;
        let mut bitmap = vec![0u8; total.div_ceil(8)];
        r.read_exact(&mut bitmap)?;
        Ok(Self { dims, delta, fraction_pos, seed, sign_bits, bitmap })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// Packs an inter-filter signed-binary layer. Binary layers have no
/// bitmap-zero semantics and ternary layers need two bits per weight, so
/// both are rejected.
pub fn pack(layer: &QuantizedLayer) -> Result<PackedModel> {
    if layer.scheme.variant != QuantVariant::SignedBinary {
        return Err(Error::Unpackable(match layer.scheme.variant {
            QuantVariant::Binary => "binary",
            QuantVariant::Ternary => "ternary",
            QuantVariant::SignedBinary => unreachable!(),
        }));
    }
    let map = layer
        .region_map
        .as_ref()
        .ok_or(Error::Unpackable("signed-binary layer without region map"))?;
    if !map.is_per_filter() {
        return Err(Error::Unpackable("intra-filter (C_t < C) signed-binary"));
    }
    let dims = layer.dims();
    let k = dims[3];
    let total: usize = dims.iter().product();
    let mut sign_bits = vec![0u8; k.div_ceil(8)];
    for (ki, &beta) in map.filter_betas().iter().enumerate() {
        if beta > 0 {
            set_bit(&mut sign_bits, ki);
        }
    }
    let mut bitmap = vec![0u8; total.div_ceil(8)];
    for (i, &v) in layer.values().iter().enumerate() {
        if v != 0 {
            set_bit(&mut bitmap, i);
        }
    }
    Ok(PackedModel {
        dims,
        delta: layer.delta,
        fraction_pos: map.fraction_pos,
        seed: map.seed,
        sign_bits,
        bitmap,
    })
}

pub fn unpack(packed: &PackedModel) -> Result<QuantizedLayer> {
    let [r, s, c, k] = packed.dims;
    let total = r * s * c * k;
    let betas: Vec<i8> = (0..k)
        .map(|ki| if get_bit(&packed.sign_bits, ki) { 1 } else { -1 })
        .collect();
    let map = RegionMap::from_filter_betas(c, betas, packed.fraction_pos, packed.seed)?;
    let mut values = vec![0i8; total];
    for (i, v) in values.iter_mut().enumerate() {
        if get_bit(&packed.bitmap, i) {
            let ki = i % k;
            *v = map.filter_betas()[ki];
        }
    }
    QuantizedLayer::from_parts(
        packed.dims,
        values,
        QuantScheme::signed_binary(),
        Some(map),
        packed.delta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{assign_regions, compute_delta, quantize_binary, quantize_signed_binary, quantize_ternary};
    use crate::rng::Xorshift64Star;
    use crate::tensor::Tensor4;

    fn random_sb_layer(dims: [usize; 4], seed: u64) -> QuantizedLayer {
        let [r, s, c, k] = dims;
        let mut rng = Xorshift64Star::new(seed);
        let data: Vec<f32> = (0..r * s * c * k).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let w = Tensor4::from_data(dims, data).unwrap();
        let delta = compute_delta(&w, 0.05).unwrap();
        let map = assign_regions(k, c, c, 0.5, seed ^ 0xABCD).unwrap();
        quantize_signed_binary(&w, &map, delta).unwrap()
    }

    #[test]
    fn payload_size_formula() {
        let layer = random_sb_layer([3, 3, 64, 64], 1);
        let packed = pack(&layer).unwrap();
        assert_eq!(packed.payload_bits(), 36_864 + 64);
        assert_eq!(packed.payload_bytes(), 36_928 / 8);
        let mut buf = Vec::new();
        packed.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_BYTES + packed.payload_bytes());
    }

    #[test]
    fn round_trip() {
        for seed in 0..8 {
            let layer = random_sb_layer([3, 3, 8, 12], seed);
            let packed = pack(&layer).unwrap();
            let mut buf = Vec::new();
            packed.write_to(&mut buf).unwrap();
            let reread = PackedModel::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(reread, packed);
            let back = unpack(&reread).unwrap();
            assert_eq!(back.values(), layer.values());
            assert_eq!(back.delta, layer.delta);
            assert_eq!(
                back.region_map.as_ref().unwrap().filter_betas(),
                layer.region_map.as_ref().unwrap().filter_betas()
            );
        }
    }

    #[test]
    fn rejects_binary_and_ternary() {
        let w = Tensor4::from_data([1, 1, 2, 2], vec![0.5, -0.5, 0.1, -0.1]).unwrap();
        assert!(pack(&quantize_binary(&w).unwrap()).is_err());
        assert!(pack(&quantize_ternary(&w, 0.2).unwrap()).is_err());
    }
}
