//! Polynomial multiplication over GF(2) on packed `u64` words.
//!
//! Word products use the carry-less multiply instruction when the CPU has it
//! and a shift-and-xor loop otherwise. Long operands go through Karatsuba.

use std::sync::OnceLock;

/// Below this many words per operand, schoolbook beats Karatsuba.
const KARATSUBA_CUTOFF: usize = 24;

/// Carry-less product of two words as (low, high).
#[inline]
pub fn clmul_soft(a: u64, b: u64) -> (u64, u64) {
    let (mut lo, mut hi) = (0u64, 0u64);
    let mut b = b;
    while b != 0 {
        let i = b.trailing_zeros();
        lo ^= a << i;
        if i > 0 {
            hi ^= a >> (64 - i);
        }
        b &= b - 1;
    }
    (lo, hi)
}

#[cfg(target_arch = "x86_64")]
mod hw {
    use std::arch::x86_64::*;

    /// # Safety
    /// The CPU must support `pclmulqdq`.
    #[target_feature(enable = "pclmulqdq,sse2")]
    pub unsafe fn clmul(a: u64, b: u64) -> (u64, u64) {
        let r = _mm_clmulepi64_si128(_mm_set_epi64x(0, a as i64), _mm_set_epi64x(0, b as i64), 0);
        (_mm_cvtsi128_si64(r) as u64, _mm_extract_epi64::<1>(r) as u64)
    }

    /// # Safety
    /// The CPU must support `pclmulqdq`; `out.len() >= a.len() + b.len()`.
    #[target_feature(enable = "pclmulqdq,sse2,sse4.1")]
    pub unsafe fn schoolbook(a: &[u64], b: &[u64], out: &mut [u64]) {
        for (i, &x) in a.iter().enumerate() {
            if x == 0 {
                continue;
            }
            let xv = _mm_set_epi64x(0, x as i64);
            for (j, &y) in b.iter().enumerate() {
                let r = _mm_clmulepi64_si128(xv, _mm_set_epi64x(0, y as i64), 0);
                out[i + j] ^= _mm_cvtsi128_si64(r) as u64;
                out[i + j + 1] ^= _mm_extract_epi64::<1>(r) as u64;
            }
        }
    }
}

fn have_hw() -> bool {
    static HW: OnceLock<bool> = OnceLock::new();
    *HW.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            is_x86_feature_detected!("pclmulqdq") && is_x86_feature_detected!("sse4.1")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

/// Carry-less product, hardware-accelerated when available.
#[inline]
pub fn clmul(a: u64, b: u64) -> (u64, u64) {
    #[cfg(target_arch = "x86_64")]
    if have_hw() {
        // SAFETY: feature presence checked at runtime.
        return unsafe { hw::clmul(a, b) };
    }
    clmul_soft(a, b)
}

fn schoolbook_soft(a: &[u64], b: &[u64], out: &mut [u64]) {
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            let (lo, hi) = clmul_soft(x, y);
            out[i + j] ^= lo;
            out[i + j + 1] ^= hi;
        }
    }
}

/// XORs `a * b` into `out[..a.len() + b.len()]`.
fn schoolbook_into(a: &[u64], b: &[u64], out: &mut [u64], use_hw: bool) {
    #[cfg(target_arch = "x86_64")]
    if use_hw {
        // SAFETY: callers only pass `use_hw = true` after `have_hw()`.
        unsafe { hw::schoolbook(a, b, out) };
        return;
    }
    let _ = use_hw;
    schoolbook_soft(a, b, out);
}

fn xor_into(dst: &mut [u64], src: &[u64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= s);
}

/// XORs `a * b` into `out`, for `a.len() == b.len()`.
fn karatsuba_into(a: &[u64], b: &[u64], out: &mut [u64], use_hw: bool) {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    if n <= KARATSUBA_CUTOFF {
        schoolbook_into(a, b, out, use_hw);
        return;
    }
    let m = n / 2;
    let h = n - m;
    let (a0, a1) = a.split_at(m);
    let (b0, b1) = b.split_at(m);

    let mut z0 = vec![0u64; 2 * m];
    karatsuba_into(a0, b0, &mut z0, use_hw);
    let mut z2 = vec![0u64; 2 * h];
    karatsuba_into(a1, b1, &mut z2, use_hw);

    let mut sa = a1.to_vec();
    xor_into(&mut sa, a0);
    let mut sb = b1.to_vec();
    xor_into(&mut sb, b0);
    let mut z1 = vec![0u64; 2 * h];
    karatsuba_into(&sa, &sb, &mut z1, use_hw);
    xor_into(&mut z1, &z0);
    xor_into(&mut z1, &z2);

    xor_into(&mut out[..2 * m], &z0);
    xor_into(&mut out[m..m + 2 * h], &z1);
    xor_into(&mut out[2 * m..2 * m + 2 * h], &z2);
}

fn mul_into(a: &[u64], b: &[u64], out: &mut [u64], use_hw: bool) {
    let (a, b) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if b.is_empty() {
        return;
    }
    if a.len() == b.len() {
        karatsuba_into(a, b, out, use_hw);
        return;
    }
    // Unbalanced: slice the long operand into pieces the size of the short one.
    for (k, piece) in a.chunks(b.len()).enumerate() {
        let off = k * b.len();
        mul_into(piece, b, &mut out[off..off + piece.len() + b.len()], use_hw);
    }
}

/// `a * b` as `a.len() + b.len()` words (coefficient `i` is bit `i`).
pub fn poly_mul(a: &[u64], b: &[u64]) -> Vec<u64> {
    poly_mul_with(a, b, have_hw())
}

/// [`poly_mul`] with the word-product backend forced.
pub fn poly_mul_with(a: &[u64], b: &[u64], hardware: bool) -> Vec<u64> {
    let mut out = vec![0u64; a.len() + b.len()];
    mul_into(a, b, &mut out, hardware && have_hw());
    out
}

/// Quadratic reference product, one word pair at a time.
pub fn poly_mul_schoolbook(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; a.len() + b.len()];
    schoolbook_soft(a, b, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Bit-by-bit product, independent of the word routines.
    fn bitwise(a: &[u64], b: &[u64]) -> Vec<u64> {
        let mut out = vec![0u64; a.len() + b.len()];
        for i in 0..a.len() * 64 {
            if (a[i / 64] >> (i % 64)) & 1 == 0 {
                continue;
            }
            for j in 0..b.len() * 64 {
                if (b[j / 64] >> (j % 64)) & 1 == 1 {
                    out[(i + j) / 64] ^= 1 << ((i + j) % 64);
                }
            }
        }
        out
    }

    #[test]
    fn word_products() {
        assert_eq!(clmul_soft(0b11, 0b11), (0b101, 0));
        assert_eq!(clmul_soft(1 << 63, 1 << 63), (0, 1 << 62));
        assert_eq!(clmul_soft(u64::MAX, 1), (u64::MAX, 0));
        assert_eq!(clmul_soft(u64::MAX, 2), (u64::MAX - 1, 1));
    }

    #[test]
    fn hardware_matches_software() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let (a, b) = (rng.random(), rng.random());
            assert_eq!(clmul(a, b), clmul_soft(a, b));
        }
    }

    #[test]
    fn karatsuba_matches_schoolbook_on_long_operands() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for (la, lb) in [(100, 100), (257, 130), (33, 900), (1000, 999), (64, 1)] {
            let a: Vec<u64> = (0..la).map(|_| rng.random()).collect();
            let b: Vec<u64> = (0..lb).map(|_| rng.random()).collect();
            let reference = poly_mul_schoolbook(&a, &b);
            assert_eq!(poly_mul_with(&a, &b, true), reference);
            assert_eq!(poly_mul_with(&a, &b, false), reference);
        }
    }

    #[test]
    fn empty_operand() {
        assert_eq!(poly_mul(&[], &[1, 2]), vec![0, 0]);
    }

    proptest! {
        #[test]
        fn short_products_match_bitwise(
            a in proptest::collection::vec(any::<u64>(), 0..6),
            b in proptest::collection::vec(any::<u64>(), 0..6),
        ) {
            prop_assert_eq!(poly_mul(&a, &b), bitwise(&a, &b));
        }
    }
}
