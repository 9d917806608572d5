//! Bit packing for per-coordinate codes. Fields are laid out
//! coordinate-major; bit `i` of the stream lives in byte `i / 8` at position
//! `i % 8`, and each `b`-bit field stores its least significant bit first.

/// Bytes needed for `count` fields of `bits` bits.
#[inline]
pub fn packed_len(bits: u8, count: usize) -> usize {
    (bits as usize * count).div_ceil(8)
}

pub fn pack(values: &[u8], bits: u8, out: &mut [u8]) {
    debug_assert!((1..=8).contains(&bits));
    debug_assert!(out.len() >= packed_len(bits, values.len()));
    out.iter_mut().for_each(|b| *b = 0);
    let b = bits as usize;
    for (j, &v) in values.iter().enumerate() {
        debug_assert!(bits == 8 || (v as u16) < (1u16 << bits));
        let pos = j * b;
        let (byte, off) = (pos / 8, pos % 8);
        let wide = (v as u16) << off;
        out[byte] |= wide as u8;
        if off + b > 8 {
            out[byte + 1] |= (wide >> 8) as u8;
        }
    }
}

pub fn pack_to_vec(values: &[u8], bits: u8) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(bits, values.len())];
    pack(values, bits, &mut out);
    out
}

#[inline]
pub fn get(packed: &[u8], bits: u8, j: usize) -> u8 {
    let b = bits as usize;
    let pos = j * b;
    let (byte, off) = (pos / 8, pos % 8);
    let mut wide = packed[byte] as u16;
    if off + b > 8 {
        wide |= (packed[byte + 1] as u16) << 8;
    }
    ((wide >> off) & ((1u16 << b) - 1)) as u8
}

pub fn unpack(packed: &[u8], bits: u8, count: usize, out: &mut [u8]) {
    for (j, o) in out.iter_mut().take(count).enumerate() {
        *o = get(packed, bits, j);
    }
}

/// Flips bit `bit` (0 = least significant) of field `j`.
#[inline]
pub fn flip(packed: &mut [u8], bits: u8, j: usize, bit: u8) {
    debug_assert!(bit < bits);
    let pos = j * bits as usize + bit as usize;
    packed[pos / 8] ^= 1 << (pos % 8);
}
