//! Exact-rational re-statement of the model semantics, used as an
//! independent oracle. Shares no code with the library's float path.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

pub fn from_f64(v: f64) -> Q {
    Q::from_float(v).expect("finite")
}

pub fn to_f64(v: &Q) -> f64 {
    v.to_f64().expect("representable")
}

#[derive(Debug, Clone)]
pub enum ExactModel {
    Coin(Q),
    Window { p: Q, w: usize },
    Markov { k: usize, table: Vec<Q>, fallback: Q },
    Cycle { pattern: Vec<u8>, phase: usize, eps: Q },
}

impl ExactModel {
    /// P(next = 1 | ctx).
    pub fn tails(&self, ctx: &[u8]) -> Q {
        match self {
            ExactModel::Coin(p) => p.clone(),
            ExactModel::Window { p, w } => {
                if ctx.is_empty() {
                    return p.clone();
                }
                let start = ctx.len().saturating_sub(*w);
                let window = &ctx[start..];
                let ones = window.iter().filter(|&&b| b == 1).count() as i64;
                let avg = q(ones, window.len() as i64);
                let raw = p.clone() * q(2, 1) - avg;
                if raw < Q::zero() {
                    Q::zero()
                } else if raw > Q::one() {
                    Q::one()
                } else {
                    raw
                }
            }
            ExactModel::Markov { k, table, fallback } => {
                if ctx.len() < *k {
                    return fallback.clone();
                }
                let mut idx = 0usize;
                for &b in &ctx[ctx.len() - k..] {
                    idx = idx * 2 + b as usize;
                }
                table[idx].clone()
            }
            ExactModel::Cycle { pattern, phase, eps } => {
                if pattern[(phase + ctx.len()) % pattern.len()] == 1 {
                    Q::one() - eps.clone()
                } else {
                    eps.clone()
                }
            }
        }
    }

    pub fn prob_of(&self, ctx: &[u8], bit: u8) -> Q {
        let t = self.tails(ctx);
        if bit == 1 {
            t
        } else {
            Q::one() - t
        }
    }

    pub fn likelihood(&self, x: &[u8]) -> Q {
        (0..x.len()).fold(Q::one(), |acc, t| acc * self.prob_of(&x[..t], x[t]))
    }
}

/// Posterior weights p(h | x), or `None` if the evidence is impossible.
pub fn posterior(space: &[(ExactModel, Q)], x: &[u8]) -> Option<Vec<Q>> {
    let joint: Vec<Q> = space.iter().map(|(m, prior)| prior.clone() * m.likelihood(x)).collect();
    let z = joint.iter().fold(Q::zero(), |a, b| a + b);
    if z.is_zero() {
        return None;
    }
    Some(joint.into_iter().map(|j| j / z.clone()).collect())
}

/// Σ_h p(h | x) p(next = 1 | h, x).
pub fn predictive(space: &[(ExactModel, Q)], x: &[u8]) -> Option<Q> {
    let post = posterior(space, x)?;
    Some(
        post.iter()
            .zip(space)
            .fold(Q::zero(), |acc, (w, (m, _))| acc + w.clone() * m.tails(x)),
    )
}

/// Calls `visit(x, predictive(space, x))` for every `x` of length at most
/// `depth`, extending joint weights one flip at a time.
pub fn predictive_walk(space: &[(ExactModel, Q)], depth: usize, visit: &mut impl FnMut(&[u8], Option<Q>)) {
    fn go(
        space: &[(ExactModel, Q)],
        depth: usize,
        x: &mut Vec<u8>,
        joint: Vec<Q>,
        visit: &mut impl FnMut(&[u8], Option<Q>),
    ) {
        let z = joint.iter().fold(Q::zero(), |a, b| a + b);
        if z.is_zero() {
            visit(x, None);
        } else {
            let num = joint
                .iter()
                .zip(space)
                .fold(Q::zero(), |acc, (j, (m, _))| acc + j.clone() * m.tails(x));
            visit(x, Some(num / z));
        }
        if x.len() == depth {
            return;
        }
        for bit in [0u8, 1] {
            let next: Vec<Q> = joint
                .iter()
                .zip(space)
                .map(|(j, (m, _))| if j.is_zero() { Q::zero() } else { j.clone() * m.prob_of(x, bit) })
                .collect();
            x.push(bit);
            go(space, depth, x, next, visit);
            x.pop();
        }
    }
    let joint = space.iter().map(|(_, prior)| prior.clone()).collect();
    go(space, depth, &mut Vec::new(), joint, visit);
}

/// Probability that the predictive process emits `path` after `x`.
pub fn predictive_path(space: &[(ExactModel, Q)], x: &[u8], path: &[u8]) -> Option<Q> {
    let mut ctx = x.to_vec();
    let mut total = Q::one();
    for &bit in path {
        let p = predictive(space, &ctx)?;
        total *= if bit == 1 { p } else { Q::one() - p };
        ctx.push(bit);
    }
    Some(total)
}

/// All bit strings of length `n`, first bit most significant.
pub fn all_paths(n: usize) -> Vec<Vec<u8>> {
    (0..1u32 << n)
        .map(|code| (0..n).rev().map(|i| ((code >> i) & 1) as u8).collect())
        .collect()
}

/// Rotations of `pattern` unrolled to length `d`.
pub fn cyclic_continuations(pattern: &[u8], d: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = (0..pattern.len())
        .map(|r| (0..d).map(|t| pattern[(r + t) % pattern.len()]).collect())
        .collect();
    out.sort();
    out.dedup();
    out
}
