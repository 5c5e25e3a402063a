//! Fixed-length bitstrings packed into 64-bit words.
//!
//! Bit `i` is the `i`-th character of the string form and qubit `i` of a
//! register. It is stored most-significant-first, so the derived ordering of
//! `BitString` is the lexicographic ordering of the string form, and for
//! `n <= 64` the index form reads the string as a binary number.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    len: usize,
    words: Vec<u64>,
}

#[inline]
fn locate(i: usize) -> (usize, u64) {
    (i / 64, 1u64 << (63 - (i % 64)))
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Self::zeros(len);
        for i in 0..len {
            b.set(i, true);
        }
        b
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut b = Self::zeros(bits.len());
        for (i, &v) in bits.iter().enumerate() {
            b.set(i, v);
        }
        b
    }

    /// Bitstring whose binary value is `index`, qubit 0 being the most significant bit.
    pub fn from_index(index: u64, len: usize) -> Self {
        debug_assert!(len <= 64);
        let mut b = Self::zeros(len);
        for i in 0..len {
            b.set(i, (index >> (len - 1 - i)) & 1 == 1);
        }
        b
    }

    /// Inverse of [`BitString::from_index`]; only meaningful for `len <= 64`.
    pub fn to_index(&self) -> u64 {
        debug_assert!(self.len <= 64);
        if self.len == 0 {
            0
        } else {
            self.words[0] >> (64 - self.len)
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        let (w, m) = locate(i);
        self.words[w] & m != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        let (w, m) = locate(i);
        if v {
            self.words[w] |= m;
        } else {
            self.words[w] &= !m;
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    #[inline]
    pub fn hamming(&self, other: &BitString) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Parity of the bits selected by `mask` (true when odd).
    #[inline]
    pub fn masked_parity(&self, mask: &BitString) -> bool {
        let ones: u32 = self
            .words
            .iter()
            .zip(&mask.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        ones % 2 == 1
    }

    /// Keep only the positions in `indices`, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> BitString {
        let mut out = BitString::zeros(indices.len());
        for (j, &i) in indices.iter().enumerate() {
            out.set(j, self.get(i));
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
        f.write_str(&s)
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut b = BitString::zeros(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => b.set(i, true),
                _ => return invalid(format!("'{s}' is not a bitstring")),
            }
        }
        Ok(b)
    }
}

/// Sorted set of bit positions, validated against a register width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetMask {
    indices: Vec<usize>,
    mask: BitString,
}

impl SubsetMask {
    pub fn new(mut indices: Vec<usize>, n_bits: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&i) = indices.last() {
            if i >= n_bits {
                return invalid(format!("subset index {i} out of range for {n_bits} bits"));
            }
        }
        let mut mask = BitString::zeros(n_bits);
        for &i in &indices {
            mask.set(i, true);
        }
        Ok(SubsetMask { indices, mask })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mask(&self) -> &BitString {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn string_round_trip_and_order() {
        let a: BitString = "0110".parse().unwrap();
        assert_eq!(a.to_string(), "0110");
        assert_eq!(a.to_index(), 6);
        assert_eq!(BitString::from_index(6, 4), a);
        let b: BitString = "1000".parse().unwrap();
        assert!(a < b);
        assert!("x01".parse::<BitString>().is_err());
    }

    #[test]
    fn long_strings_span_words() {
        let mut a = BitString::zeros(130);
        a.set(0, true);
        a.set(64, true);
        a.set(129, true);
        assert_eq!(a.count_ones(), 3);
        assert_eq!(a.hamming(&BitString::zeros(130)), 3);
        let s = a.to_string();
        assert_eq!(s.len(), 130);
        assert_eq!(s.parse::<BitString>().unwrap(), a);
    }

    #[test]
    fn subset_mask_validates() {
        assert!(SubsetMask::new(vec![0, 4], 4).is_err());
        let m = SubsetMask::new(vec![2, 0, 2], 4).unwrap();
        assert_eq!(m.indices(), &[0, 2]);
        assert_eq!(m.mask().to_string(), "1010");
    }

    proptest! {
        #[test]
        fn index_order_matches_string_order(a in 0u64..4096, b in 0u64..4096) {
            let x = BitString::from_index(a, 12);
            let y = BitString::from_index(b, 12);
            prop_assert_eq!(a.cmp(&b), x.cmp(&y));
            prop_assert_eq!(x.to_string().cmp(&y.to_string()), x.cmp(&y));
            prop_assert_eq!((a ^ b).count_ones(), x.hamming(&y));
        }
    }
}
