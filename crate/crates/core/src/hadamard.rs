//! Hadamard matrices used as the per-slot sign schedule of the symmetric scheme.

use crate::error::{Error, Result};

/// Largest order we are willing to materialize.
pub const MAX_ORDER: usize = 1 << 12;

/// A square ±1 matrix with `H Hᵀ = order · I`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HadamardMatrix {
    order: usize,
    entries: Vec<i8>,
}

impl HadamardMatrix {
    /// Validates a candidate given as rows.
    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        if !verify(rows) {
            return Err(Error::Domain("rows do not form a Hadamard matrix".into()));
        }
        Ok(Self {
            order: rows.len(),
            entries: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.order + col]
    }

    /// Column `col` (0-indexed) as floating-point signs.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.order).map(|r| self.get(r, col) as f64).collect()
    }

    pub fn rows(&self) -> Vec<Vec<i8>> {
        self.entries.chunks(self.order).map(<[i8]>::to_vec).collect()
    }

    /// Sylvester doubling `[[H, H], [H, -H]]`.
    fn doubled(&self) -> Result<Self> {
        let n = self.order;
        let order = n.checked_mul(2).filter(|&o| o <= MAX_ORDER).ok_or_else(|| {
            Error::Size(format!("Hadamard order {} exceeds {MAX_ORDER}", n.saturating_mul(2)))
        })?;
        let mut entries = vec![0i8; order * order];
        for r in 0..n {
            for c in 0..n {
                let v = self.get(r, c);
                entries[r * order + c] = v;
                entries[r * order + c + n] = v;
                entries[(r + n) * order + c] = v;
                entries[(r + n) * order + c + n] = -v;
            }
        }
        Ok(Self { order, entries })
    }
}

/// Order-`2^k` Sylvester matrix.
pub fn sylvester(k: u32) -> Result<HadamardMatrix> {
    if k >= usize::BITS || (1usize << k) > MAX_ORDER {
        return Err(Error::Size(format!("Sylvester order 2^{k} exceeds {MAX_ORDER}")));
    }
    let mut h = HadamardMatrix {
        order: 1,
        entries: vec![1],
    };
    for _ in 0..k {
        h = h.doubled()?;
    }
    Ok(h)
}

/// Paley type-I construction of order `p + 1` for a prime `p ≡ 3 (mod 4)`.
pub fn paley(p: usize) -> Result<HadamardMatrix> {
    if !is_prime(p) {
        return Err(Error::Domain(format!("Paley construction needs a prime, got {p}")));
    }
    if p % 4 != 3 {
        return Err(Error::Domain(format!("Paley construction needs p ≡ 3 mod 4, got {p}")));
    }
    let order = p + 1;
    if order > MAX_ORDER {
        return Err(Error::Size(format!("Paley order {order} exceeds {MAX_ORDER}")));
    }
    let mut residue = vec![false; p];
    for x in 1..p {
        residue[x * x % p] = true;
    }
    let chi = |a: usize| -> i8 {
        if a == 0 {
            0
        } else if residue[a] {
            1
        } else {
            -1
        }
    };
    // H = I + S, S = [[0, 1ᵀ], [-1, Q]] with Q the (skew) Jacobsthal matrix.
    let mut entries = vec![0i8; order * order];
    for r in 0..order {
        for c in 0..order {
            let s = match (r, c) {
                (0, 0) => 0,
                (0, _) => 1,
                (_, 0) => -1,
                _ => chi((c + p - r) % p),
            };
            entries[r * order + c] = s + i8::from(r == c);
        }
    }
    Ok(HadamardMatrix { order, entries })
}

/// `true` iff `rows` is square, all ±1, and `H Hᵀ = n I` in integer arithmetic.
pub fn verify(rows: &[Vec<i8>]) -> bool {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return false;
    }
    if rows.iter().flatten().any(|&v| v != 1 && v != -1) {
        return false;
    }
    for i in 0..n {
        for j in i..n {
            let dot: i64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(&a, &b)| i64::from(a) * i64::from(b))
                .sum();
            let expected = if i == j { n as i64 } else { 0 };
            if dot != expected {
                return false;
            }
        }
    }
    true
}

/// Sign vector `α_n` for time index `n ≥ 1`: column `((n - 1) mod M) + 1`,
/// returned as the 0-based column index.
pub fn column_index(order: usize, n: usize) -> usize {
    debug_assert!(n >= 1);
    (n - 1) % order
}

pub fn column_schedule(h: &HadamardMatrix, n: usize) -> Vec<f64> {
    h.column(column_index(h.order(), n))
}

/// Builds a Hadamard matrix of order `m` from Sylvester doubling, Paley, or
/// Sylvester doubling of a Paley matrix. Other orders are rejected.
pub fn for_order(m: usize) -> Result<HadamardMatrix> {
    if m == 0 {
        return Err(Error::Config("number of users must be positive".into()));
    }
    if m.is_power_of_two() {
        return sylvester(m.trailing_zeros());
    }
    let mut base = m;
    let mut doublings = 0;
    while base % 2 == 0 {
        if base % 4 == 0 && is_prime(base - 1) && (base - 1) % 4 == 3 {
            let mut h = paley(base - 1)?;
            for _ in 0..doublings {
                h = h.doubled()?;
            }
            return Ok(h);
        }
        base /= 2;
        doublings += 1;
    }
    Err(Error::Config(format!(
        "no Sylvester or Paley Hadamard matrix of order {m}"
    )))
}

fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}
