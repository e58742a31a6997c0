//! bfloat16 parameter codec: 1 sign bit, 8 exponent bits, 7 mantissa bits —
//! the top half of the IEEE 754 single-precision layout. Encoding rounds to
//! nearest, ties to even; decoding appends sixteen zero bits. Used to halve
//! checkpoint payloads for ensembling; inference always decodes back to f32.

use alloc::string::String;
use core::fmt;

use crate::checkpoint::{Checkpoint, CheckpointEntry, TensorData};

/// A bfloat16 bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bf16(u16);

impl Bf16 {
    pub fn from_bits(bits: u16) -> Bf16 {
        Bf16(bits)
    }

    pub fn to_bits(self) -> u16 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        (self.0 & 0x7FFF) > 0x7F80
    }
}

/// Narrow an f32 to bfloat16 with round-to-nearest-even on the discarded
/// 16 bits. Infinities and signed zeros survive exactly; NaNs map to a
/// quiet NaN (payload not preserved). Finite values beyond the largest
/// representable bfloat16 round up to infinity, as nearest-even demands.
pub fn f32_to_bf16(x: f32) -> Bf16 {
    let bits = x.to_bits();
    if x.is_nan() {
        // Keep sign and exponent, force a quiet nonzero mantissa.
        return Bf16(((bits >> 16) as u16) | 0x0040);
    }
    // Round-half-to-even: add 0x7FFF plus the keep-bit's own LSB, so exact
    // halves round toward the even neighbour.
    let rounding = 0x7FFF + ((bits >> 16) & 1);
    Bf16((bits.wrapping_add(rounding) >> 16) as u16)
}

/// Widen a bfloat16 back to f32 by appending zero bits. Exact for every
/// code point.
pub fn bf16_to_f32(c: Bf16) -> f32 {
    f32::from_bits((c.0 as u32) << 16)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuantizeError {
    /// Entry already carries a bfloat16 payload.
    AlreadyQuantized(String),
    /// Entry is not bfloat16 but dequantization was requested.
    NotQuantized(String),
}

impl fmt::Display for QuantizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AlreadyQuantized(n) => write!(f, "entry {n:?} is already bfloat16"),
            Self::NotQuantized(n) => write!(f, "entry {n:?} is not bfloat16"),
        }
    }
}

impl core::error::Error for QuantizeError {}

/// Re-encode every f32 tensor of a checkpoint as bfloat16, halving the
/// payload. Relative round-trip error per element is at most 2^-8 for
/// normal values.
pub fn quantize_checkpoint(ck: &Checkpoint) -> Result<Checkpoint, QuantizeError> {
    let mut entries = alloc::vec::Vec::with_capacity(ck.entries.len());
    for e in &ck.entries {
        let values = match &e.data {
            TensorData::F32(v) => v,
            TensorData::Bf16(_) => return Err(QuantizeError::AlreadyQuantized(e.name.clone())),
        };
        entries.push(CheckpointEntry {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: TensorData::Bf16(values.iter().map(|&x| f32_to_bf16(x).to_bits()).collect()),
        });
    }
    Ok(Checkpoint {
        version: ck.version,
        step: ck.step,
        entries,
    })
}

/// Inverse of [`quantize_checkpoint`]: widen every bfloat16 tensor to f32.
pub fn dequantize_checkpoint(ck: &Checkpoint) -> Result<Checkpoint, QuantizeError> {
    let mut entries = alloc::vec::Vec::with_capacity(ck.entries.len());
    for e in &ck.entries {
        let codes = match &e.data {
            TensorData::Bf16(v) => v,
            TensorData::F32(_) => return Err(QuantizeError::NotQuantized(e.name.clone())),
        };
        entries.push(CheckpointEntry {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: TensorData::F32(
                codes
                    .iter()
                    .map(|&bits| bf16_to_f32(Bf16::from_bits(bits)))
                    .collect(),
            ),
        });
    }
    Ok(Checkpoint {
        version: ck.version,
        step: ck.step,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    /// Independent round-to-nearest-even reference built from explicit
    /// halfway comparisons over the bit algebra.
    fn rne_reference(x: f32) -> u16 {
        let bits = x.to_bits();
        if x.is_nan() {
            return ((bits >> 16) as u16) | 0x0040;
        }
        let upper = (bits >> 16) as u16;
        let lower = bits & 0xFFFF;
        match lower.cmp(&0x8000) {
            core::cmp::Ordering::Less => upper,
            core::cmp::Ordering::Greater => upper.wrapping_add(1),
            core::cmp::Ordering::Equal => {
                if upper & 1 == 1 {
                    upper.wrapping_add(1)
                } else {
                    upper
                }
            }
        }
    }

    #[test]
    fn exactly_representable_values_pass_through() {
        assert_eq!(f32_to_bf16(1.0).to_bits(), 0x3F80);
        assert_eq!(f32_to_bf16(-2.5).to_bits(), 0xC020);
        assert_eq!(bf16_to_f32(Bf16::from_bits(0x3F80)), 1.0);
    }

    #[test]
    fn tie_cases_round_to_even() {
        // Halfway with even keep-bits stays; odd rounds up.
        assert_eq!(f32_to_bf16(f32::from_bits(0x3F80_8000)).to_bits(), 0x3F80);
        assert_eq!(f32_to_bf16(f32::from_bits(0x3F81_8000)).to_bits(), 0x3F82);
        assert_eq!(rne_reference(f32::from_bits(0x3F80_8000)), 0x3F80);
        assert_eq!(rne_reference(f32::from_bits(0x3F81_8000)), 0x3F82);
    }

    #[test]
    fn signed_zero_and_infinities_survive() {
        assert_eq!(bf16_to_f32(Bf16::from_bits(0x0000)).to_bits(), 0x0000_0000);
        assert_eq!(bf16_to_f32(Bf16::from_bits(0x8000)).to_bits(), 0x8000_0000);
        assert_eq!(f32_to_bf16(f32::INFINITY).to_bits(), 0x7F80);
        assert_eq!(f32_to_bf16(f32::NEG_INFINITY).to_bits(), 0xFF80);
        assert_eq!(bf16_to_f32(Bf16::from_bits(0x7F80)), f32::INFINITY);
    }

    #[test]
    fn nan_maps_to_quiet_nan() {
        let q = f32_to_bf16(f32::NAN);
        assert!(q.is_nan());
        assert_ne!(q.to_bits() & 0x007F, 0, "mantissa must stay nonzero");
    }

    #[test]
    fn round_trip_is_identity_for_all_non_nan_codes() {
        for bits in 0..=u16::MAX {
            let c = Bf16::from_bits(bits);
            if c.is_nan() {
                continue;
            }
            let back = f32_to_bf16(bf16_to_f32(c));
            assert_eq!(back.to_bits(), bits, "code {bits:#06x}");
        }
    }

    #[test]
    fn encoding_matches_rne_reference_exhaustively_on_random_floats() {
        let mut rng = SeededRng::new(80);
        for _ in 0..100_000 {
            let bits = rng.next_u64() as u32;
            let x = f32::from_bits(bits);
            assert_eq!(
                f32_to_bf16(x).to_bits(),
                rne_reference(x),
                "input bits {bits:#010x}"
            );
        }
    }

    #[test]
    fn power_of_two_checkpoints_survive_quantization_bit_for_bit() {
        use crate::checkpoint::{Checkpoint, CheckpointEntry};
        let values: alloc::vec::Vec<f32> = (-8i32..8)
            .flat_map(|e| {
                let p = f32::from_bits(((127 + e) as u32) << 23);
                [p, -p]
            })
            .collect();
        let ck = Checkpoint {
            version: 1,
            step: 0,
            entries: alloc::vec![CheckpointEntry {
                name: "w".into(),
                shape: alloc::vec![values.len()],
                data: TensorData::F32(values.clone()),
            }],
        };
        let back = dequantize_checkpoint(&quantize_checkpoint(&ck).unwrap()).unwrap();
        let TensorData::F32(got) = &back.entries[0].data else {
            panic!("expected f32 payload")
        };
        for (a, b) in values.iter().zip(got) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn quantization_halves_a_thousand_element_payload() {
        use crate::checkpoint::{Checkpoint, CheckpointEntry};
        let ck = Checkpoint {
            version: 1,
            step: 0,
            entries: alloc::vec![CheckpointEntry {
                name: "w".into(),
                shape: alloc::vec![1000],
                data: TensorData::F32(alloc::vec![0.5; 1000]),
            }],
        };
        assert_eq!(ck.payload_bytes(), 4000);
        assert_eq!(quantize_checkpoint(&ck).unwrap().payload_bytes(), 2000);
    }

    #[test]
    fn normal_values_round_trip_within_two_to_the_minus_eight() {
        let mut rng = SeededRng::new(81);
        for _ in 0..10_000 {
            let x = rng.normal_f32();
            let back = bf16_to_f32(f32_to_bf16(x));
            let rel = ((back - x) / x).abs();
            assert!(rel <= 1.0 / 256.0, "x={x}, back={back}, rel={rel}");
        }
    }

    proptest! {
        #[test]
        fn codec_is_monotone_on_positive_floats(a in 1e-30f32..1e30, b in 1e-30f32..1e30) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let dlo = bf16_to_f32(f32_to_bf16(lo));
            let dhi = bf16_to_f32(f32_to_bf16(hi));
            prop_assert!(dlo <= dhi);
        }
    }
}
