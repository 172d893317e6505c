//! 32-bit Sobol sequence with Joe–Kuo direction numbers.
//!
//! The first coordinate is the van der Corput sequence in base 2; the
//! remaining ones come from the primitive-polynomial table below
//! (degree `s`, coefficient bits `a`, initial odd numbers `m`).

const BITS: usize = 32;

// (s, a, m_1..m_s), dimensions 2..=21.
const DIRECTIONS: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

/// Largest supported dimension.
pub const MAX_DIM: usize = DIRECTIONS.len() + 1;

#[derive(Debug, Clone)]
pub struct Sobol {
    /// `v[d][b]` is the direction number for bit `b` of dimension `d`.
    v: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(dim: usize) -> Option<Self> {
        if dim == 0 || dim > MAX_DIM {
            return None;
        }
        let mut v = Vec::with_capacity(dim);
        let mut first = [0u32; BITS];
        for (b, x) in first.iter_mut().enumerate() {
            *x = 1 << (BITS - 1 - b);
        }
        v.push(first);
        for &(s, a, m) in DIRECTIONS.iter().take(dim - 1) {
            let s = s as usize;
            let mut dir = [0u32; BITS];
            for i in 0..BITS {
                if i < s {
                    dir[i] = m[i] << (BITS - 1 - i);
                } else {
                    let mut x = dir[i - s] ^ (dir[i - s] >> s);
                    for k in 1..s {
                        if (a >> (s - 1 - k)) & 1 == 1 {
                            x ^= dir[i - k];
                        }
                    }
                    dir[i] = x;
                }
            }
            v.push(dir);
        }
        Some(Sobol { v })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Writes the integer coordinates of point `index` into `out`.
    pub fn point(&self, index: u64, out: &mut [u32]) {
        let gray = index ^ (index >> 1);
        for (d, o) in out.iter_mut().enumerate() {
            let mut x = 0u32;
            let mut g = gray;
            let mut b = 0;
            while g != 0 && b < BITS {
                if g & 1 == 1 {
                    x ^= self.v[d][b];
                }
                g >>= 1;
                b += 1;
            }
            *o = x;
        }
    }

    /// Advances `cur` from point `index` to point `index + 1` (Gray-code
    /// update).
    pub fn advance(&self, index: u64, cur: &mut [u32]) {
        let bit = (index + 1).trailing_zeros() as usize;
        if bit < BITS {
            for (d, c) in cur.iter_mut().enumerate() {
                *c ^= self.v[d][bit];
            }
        }
    }
}
