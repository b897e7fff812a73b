//! On-disk encoding of a single tensor block, plus content fingerprints.
//!
//! Record layout, all integers little-endian:
//! magic "TBLK" (4) | version u8 (1) | block_row u32 | block_col u32 |
//! rows u16 | cols u16 | payload f32 x rows*cols | crc32 of everything before
//! the trailer (4). A 1x1 block is exactly 25 bytes.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::TensorBlock;

pub const BLOCK_MAGIC: [u8; 4] = *b"TBLK";
pub const BLOCK_VERSION: u8 = 1;

const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 2 + 2;
const TRAILER_LEN: usize = 4;

/// Encoded size of a block without encoding it.
pub fn serialized_len(b: &TensorBlock) -> usize {
    HEADER_LEN + b.data.len() * 4 + TRAILER_LEN
}

pub fn serialize_block(b: &TensorBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_len(b));
    out.extend_from_slice(&BLOCK_MAGIC);
    out.push(BLOCK_VERSION);
    out.extend_from_slice(&(b.block_row as u32).to_le_bytes());
    out.extend_from_slice(&(b.block_col as u32).to_le_bytes());
    out.extend_from_slice(&(b.rows as u16).to_le_bytes());
    out.extend_from_slice(&(b.cols as u16).to_le_bytes());
    for v in &b.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decode one record from the front of `bytes`, returning the block and the
/// number of bytes consumed.
pub fn deserialize_block_prefix(bytes: &[u8]) -> Result<(TensorBlock, usize)> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(Error::Corruption(format!(
            "block record truncated: {} bytes",
            bytes.len()
        )));
    }
    if bytes[0..4] != BLOCK_MAGIC {
        return Err(Error::Corruption("bad block magic".into()));
    }
    if bytes[4] != BLOCK_VERSION {
        return Err(Error::Corruption(format!(
            "unsupported block format version {}",
            bytes[4]
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let block_row = u32_at(5) as usize;
    let block_col = u32_at(9) as usize;
    let rows = u16_at(13) as usize;
    let cols = u16_at(15) as usize;
    let total = HEADER_LEN + rows * cols * 4 + TRAILER_LEN;
    if bytes.len() < total {
        return Err(Error::Corruption(format!(
            "block record truncated: need {total} bytes, have {}",
            bytes.len()
        )));
    }
    let crc_stored = u32_at(total - TRAILER_LEN);
    let crc_actual = crc32fast::hash(&bytes[..total - TRAILER_LEN]);
    if crc_stored != crc_actual {
        return Err(Error::Corruption(format!(
            "block CRC mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let o = HEADER_LEN + i * 4;
        data.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()));
    }
    let block = TensorBlock {
        block_row,
        block_col,
        rows,
        cols,
        data,
    };
    if !block.is_well_formed() {
        return Err(Error::Corruption(format!(
            "decoded block ({block_row}, {block_col}) is malformed"
        )));
    }
    Ok((block, total))
}

/// Decode exactly one record; trailing bytes are corruption.
pub fn deserialize_block(bytes: &[u8]) -> Result<TensorBlock> {
    let (block, used) = deserialize_block_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after block record",
            bytes.len() - used
        )));
    }
    Ok(block)
}

/// Content fingerprint: SHA-256 over (rows, cols, payload bytes), truncated to
/// 64 bits. Grid coordinates are deliberately excluded so identical content at
/// different positions hashes alike; shape is included so equal payloads with
/// different dims stay distinct.
pub fn fingerprint_block(b: &TensorBlock) -> u64 {
    let mut h = Sha256::new();
    h.update((b.rows as u64).to_le_bytes());
    h.update((b.cols as u64).to_le_bytes());
    for v in &b.data {
        h.update(v.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(seed: u64, br: usize, bc: usize, rows: usize, cols: usize) -> TensorBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TensorBlock {
            block_row: br,
            block_col: bc,
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for seed in 0..20 {
            let b = random_block(seed, 3, 9, 1 + seed as usize % 8, 1 + (seed as usize * 3) % 8);
            let bytes = serialize_block(&b);
            assert_eq!(bytes.len(), serialized_len(&b));
            let back = deserialize_block(&bytes).unwrap();
            assert_eq!(b.block_row, back.block_row);
            assert_eq!(b.block_col, back.block_col);
            let bits: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            let back_bits: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, back_bits);
        }
    }

    #[test]
    fn one_by_one_block_is_25_bytes() {
        let b = TensorBlock {
            block_row: 0,
            block_col: 0,
            rows: 1,
            cols: 1,
            data: vec![4.25],
        };
        assert_eq!(serialize_block(&b).len(), 25);
    }

    #[test]
    fn corruption_is_detected() {
        let b = random_block(1, 0, 0, 4, 4);
        let good = serialize_block(&b);

        let mut crc_flip = good.clone();
        let last = crc_flip.len() - 1;
        crc_flip[last] ^= 0x01;
        assert!(matches!(
            deserialize_block(&crc_flip),
            Err(Error::Corruption(_))
        ));

        let mut payload_flip = good.clone();
        payload_flip[HEADER_LEN] ^= 0x80;
        assert!(matches!(
            deserialize_block(&payload_flip),
            Err(Error::Corruption(_))
        ));

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            deserialize_block(&bad_magic),
            Err(Error::Corruption(_))
        ));

        let mut bad_version = good;
        bad_version[4] = 7;
        assert!(matches!(
            deserialize_block(&bad_version),
            Err(Error::Corruption(_))
        ));

        assert!(matches!(
            deserialize_block(&[0u8; 10]),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn fingerprint_ignores_coords_but_not_content() {
        let a = random_block(2, 0, 0, 4, 4);
        let mut moved = a.clone();
        moved.block_row = 9;
        moved.block_col = 3;
        assert_eq!(fingerprint_block(&a), fingerprint_block(&moved));

        let mut ulp = a.clone();
        ulp.data[7] = f32::from_bits(ulp.data[7].to_bits() ^ 1);
        assert_ne!(fingerprint_block(&a), fingerprint_block(&ulp));

        // Same payload, different shape.
        let mut reshaped = a.clone();
        reshaped.rows = 2;
        reshaped.cols = 8;
        assert_ne!(fingerprint_block(&a), fingerprint_block(&reshaped));
    }

    #[test]
    fn fingerprint_sampled_collision_check() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for seed in 0..500 {
            let b = random_block(seed, 0, 0, 3, 3);
            assert!(seen.insert(fingerprint_block(&b)), "collision at seed {seed}");
        }
    }
}
