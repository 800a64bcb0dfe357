//! Correctly rounded floating-point summation.
//!
//! Every double sum in the crate goes through [`ExactSum`], a fixed-point
//! superaccumulator wide enough to hold any sum of finite doubles without
//! rounding. The result is rounded once, to nearest with ties to even, so
//! it depends only on the multiset of addends and never on their order:
//! statistics are bit-for-bit invariant under row permutations and
//! identical across thread counts.

const CHUNK_BITS: u32 = 32;
const CHUNK_MASK: u128 = (1 << CHUNK_BITS) - 1;
// biased exponents span 0..=2045, plus 84 bits of shifted mantissa and carry room
const CHUNKS: usize = 68;
const CARRY_EVERY: u32 = 1 << 30;

/// Running exact sum of doubles. Non-finite addends propagate as in
/// ordinary floating-point addition.
#[derive(Debug, Clone)]
pub struct ExactSum {
    chunks: [i64; CHUNKS],
    pending: u32,
    special: f64,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self {
            chunks: [0; CHUNKS],
            pending: 0,
            special: 0.0,
        }
    }

    pub fn clear(&mut self) {
        *self = Self::new();
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let bits = value.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as u32;
        if biased == 0x7ff {
            self.special += value;
            return;
        }
        let frac = bits & ((1u64 << 52) - 1);
        // value = mant * 2^(e - 1074)
        let (mant, e) = if biased == 0 {
            (frac, 0)
        } else {
            (frac | 1 << 52, biased - 1)
        };
        if mant == 0 {
            return;
        }
        let k = (e / CHUNK_BITS) as usize;
        let shifted = (mant as u128) << (e % CHUNK_BITS);
        let pieces = [
            (shifted & CHUNK_MASK) as i64,
            ((shifted >> CHUNK_BITS) & CHUNK_MASK) as i64,
            (shifted >> (2 * CHUNK_BITS)) as i64,
        ];
        let c = &mut self.chunks[k..k + 3];
        if bits >> 63 == 0 {
            c[0] += pieces[0];
            c[1] += pieces[1];
            c[2] += pieces[2];
        } else {
            c[0] -= pieces[0];
            c[1] -= pieces[1];
            c[2] -= pieces[2];
        }
        self.pending += 1;
        if self.pending == CARRY_EVERY {
            carry(&mut self.chunks);
            self.pending = 0;
        }
    }

    /// The exact sum rounded to nearest (ties to even).
    pub fn value(&self) -> f64 {
        if self.special != 0.0 {
            return self.special;
        }
        let mut a = self.chunks;
        carry(&mut a);
        let negative = a[CHUNKS - 1] < 0;
        if negative {
            a = self.chunks.map(|c| -c);
            carry(&mut a);
        }
        let Some(top) = a.iter().rposition(|&c| c != 0) else {
            return 0.0;
        };
        let magnitude = if top <= 1 {
            // below 2^64 units of 2^-1074; a single rounding of the integer
            // lands on the f64 grid, normal or subnormal
            let v = a[0] as u64 | (a[1] as u64) << CHUNK_BITS;
            v as f64 * pow2(-1074)
        } else {
            let mut m = (a[top] as u128) << (2 * CHUNK_BITS)
                | (a[top - 1] as u128) << CHUNK_BITS
                | a[top - 2] as u128;
            if a[..top - 2].iter().any(|&c| c != 0) {
                m |= 1;
            }
            (m as f64) * pow2(CHUNK_BITS as i32 * (top as i32 - 2) - 1074)
        };
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

/// Propagate carries so every chunk but the last lies in `[0, 2^32)`.
fn carry(a: &mut [i64; CHUNKS]) {
    for k in 0..CHUNKS - 1 {
        let c = a[k] >> CHUNK_BITS;
        a[k] -= c << CHUNK_BITS;
        a[k + 1] += c;
    }
}

fn pow2(e: i32) -> f64 {
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (e + 1074))
    }
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

/// Correctly rounded sum of an iterator of finite values.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = ExactSum::new();
    acc.extend(values);
    acc.value()
}
