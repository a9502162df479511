//! Finite fields GF(q) for prime powers q, backed by full operation tables.
//!
//! Elements are the integers `0..q`. For `q = p^m` an element encodes the
//! coefficients of a polynomial of degree `< m` in base `p`; multiplication
//! reduces modulo a monic irreducible polynomial found by exhaustive search.

use super::TopologyError;

/// Largest field order accepted. Tables are `q^2` entries each.
pub const MAX_ORDER: u32 = 1024;

#[derive(Clone, Debug)]
pub struct GaloisField {
    q: u32,
    add: Vec<u32>,
    mul: Vec<u32>,
    neg: Vec<u32>,
}

/// Returns `(p, m)` with `q = p^m` for prime `p`, or `None`.
pub fn prime_power(q: u32) -> Option<(u32, u32)> {
    if q < 2 {
        return None;
    }
    let p = (2..=q).find(|d| q % d == 0)?;
    let mut rest = q;
    let mut m = 0;
    while rest % p == 0 {
        rest /= p;
        m += 1;
    }
    (rest == 1).then_some((p, m))
}

fn digits(mut x: u32, p: u32, m: u32) -> Vec<u32> {
    (0..m)
        .map(|_| {
            let d = x % p;
            x /= p;
            d
        })
        .collect()
}

fn undigits(ds: &[u32], p: u32) -> u32 {
    ds.iter().rev().fold(0, |acc, &d| acc * p + d)
}

// Remainder of `a` modulo monic `b`, coefficients low-to-high, over GF(p).
fn poly_rem(a: &[u32], b: &[u32], p: u32) -> Vec<u32> {
    let mut r = a.to_vec();
    let db = b.len() - 1;
    while r.len() > db {
        let lead = *r.last().unwrap();
        let shift = r.len() - 1 - db;
        if lead != 0 {
            for (i, &bc) in b.iter().enumerate() {
                r[shift + i] = (r[shift + i] + p - (lead * bc) % p) % p;
            }
        }
        r.pop();
    }
    r
}

fn is_irreducible(f: &[u32], p: u32) -> bool {
    let deg = f.len() - 1;
    for d in 1..=deg / 2 {
        // every monic polynomial of degree d
        for low in 0..p.pow(d as u32) {
            let mut g = digits(low, p, d as u32);
            g.push(1);
            if poly_rem(f, &g, p).iter().all(|&c| c == 0) {
                return false;
            }
        }
    }
    true
}

fn find_irreducible(p: u32, m: u32) -> Vec<u32> {
    (0..p.pow(m))
        .map(|low| {
            let mut f = digits(low, p, m);
            f.push(1);
            f
        })
        .find(|f| is_irreducible(f, p))
        .expect("an irreducible polynomial of every degree exists")
}

impl GaloisField {
    pub fn new(q: u32) -> Result<Self, TopologyError> {
        let (p, m) = prime_power(q).ok_or(TopologyError::InvalidParameter {
            family: "slimfly",
            reason: format!("q = {q} is not a prime power"),
        })?;
        if q > MAX_ORDER {
            return Err(TopologyError::InvalidParameter {
                family: "slimfly",
                reason: format!("q = {q} exceeds the supported field order {MAX_ORDER}"),
            });
        }
        let n = q as usize;
        let mut add = vec![0; n * n];
        let mut mul = vec![0; n * n];
        if m == 1 {
            for a in 0..q {
                for b in 0..q {
                    add[(a * q + b) as usize] = (a + b) % q;
                    mul[(a * q + b) as usize] = (a * b) % q;
                }
            }
        } else {
            let modulus = find_irreducible(p, m);
            for a in 0..q {
                let da = digits(a, p, m);
                for b in 0..q {
                    let db = digits(b, p, m);
                    let sum: Vec<u32> = da.iter().zip(&db).map(|(x, y)| (x + y) % p).collect();
                    add[(a * q + b) as usize] = undigits(&sum, p);
                    let mut prod = vec![0; (2 * m - 1) as usize];
                    for (i, x) in da.iter().enumerate() {
                        for (j, y) in db.iter().enumerate() {
                            prod[i + j] = (prod[i + j] + x * y) % p;
                        }
                    }
                    let r = poly_rem(&prod, &modulus, p);
                    mul[(a * q + b) as usize] = undigits(&r, p);
                }
            }
        }
        let neg = (0..q)
            .map(|a| (0..q).find(|&b| add[(a * q + b) as usize] == 0).unwrap())
            .collect();
        Ok(GaloisField { q, add, mul, neg })
    }

    pub fn order(&self) -> u32 {
        self.q
    }

    pub fn add(&self, a: u32, b: u32) -> u32 {
        self.add[(a * self.q + b) as usize]
    }

    pub fn sub(&self, a: u32, b: u32) -> u32 {
        self.add(a, self.neg[b as usize])
    }

    pub fn mul(&self, a: u32, b: u32) -> u32 {
        self.mul[(a * self.q + b) as usize]
    }

    pub fn pow(&self, a: u32, e: u32) -> u32 {
        (0..e).fold(1, |acc, _| self.mul(acc, a))
    }

    /// Smallest element whose multiplicative order is `q - 1`.
    pub fn primitive_element(&self) -> u32 {
        (2..self.q.max(2))
            .chain(std::iter::once(1))
            .find(|&g| {
                let mut x = g;
                let mut k = 1;
                while x != 1 {
                    x = self.mul(x, g);
                    k += 1;
                }
                k == self.q - 1
            })
            .expect("finite fields have primitive elements")
    }
}
