//! A fixed pool of dyadic-parameter models, each paired with its exact
//! rational twin, and every small hypothesis space drawn from it.

#![allow(dead_code)]

use flipscope_core::bayes::HypothesisSpace;
use flipscope_core::seqcore::BinarySequence;
use flipscope_core::{ModelSpec, SeededRng};

use super::exact::{q, ExactModel, Q};

fn bits(s: &str) -> BinarySequence {
    BinarySequence::from_bit_str(s).unwrap()
}

pub fn model_pool() -> Vec<(ModelSpec, ExactModel)> {
    let cycle = |p: &str, phase: usize, eps: (i64, i64)| {
        (
            ModelSpec::repeater(bits(p), phase, eps.0 as f64 / eps.1 as f64).unwrap(),
            ExactModel::Cycle {
                pattern: p.bytes().map(|b| b - b'0').collect(),
                phase,
                eps: q(eps.0, eps.1),
            },
        )
    };
    vec![
        (ModelSpec::bernoulli(0.5).unwrap(), ExactModel::Coin(q(1, 2))),
        (ModelSpec::bernoulli(0.25).unwrap(), ExactModel::Coin(q(1, 4))),
        (ModelSpec::bernoulli(0.75).unwrap(), ExactModel::Coin(q(3, 4))),
        (
            ModelSpec::window_average(0.5, 5).unwrap(),
            ExactModel::Window { p: q(1, 2), w: 5 },
        ),
        (
            ModelSpec::window_average(0.75, 2).unwrap(),
            ExactModel::Window { p: q(3, 4), w: 2 },
        ),
        (
            ModelSpec::markov_chain(1, vec![0.25, 0.875], 0.5).unwrap(),
            ExactModel::Markov { k: 1, table: vec![q(1, 4), q(7, 8)], fallback: q(1, 2) },
        ),
        (
            ModelSpec::markov_chain(2, vec![0.125, 0.5, 0.75, 1.0], 0.25).unwrap(),
            ExactModel::Markov {
                k: 2,
                table: vec![q(1, 8), q(1, 2), q(3, 4), q(1, 1)],
                fallback: q(1, 4),
            },
        ),
        cycle("011", 0, (0, 1)),
        cycle("01", 1, (1, 8)),
        cycle("0", 0, (0, 1)),
        cycle("0110", 2, (1, 4)),
    ]
}

pub struct SmallSpace {
    pub space: HypothesisSpace,
    pub exact: Vec<(ExactModel, Q)>,
    pub members: Vec<usize>,
}

/// Every subset of the pool with 1..=4 members that contains a coin; the
/// first coin plays the random role. Prior weights cycle through 1..=4.
pub fn small_spaces() -> Vec<SmallSpace> {
    let pool = model_pool();
    let n = pool.len();
    let mut out = Vec::new();
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if members.len() > 4 {
            continue;
        }
        let Some(random_pos) = members.iter().position(|&i| pool[i].0.is_bernoulli()) else {
            continue;
        };
        let weights: Vec<i64> = (0..members.len()).map(|j| (j as i64 + mask as i64) % 4 + 1).collect();
        let total: i64 = weights.iter().sum();
        let space = HypothesisSpace::from_weights(
            members
                .iter()
                .zip(&weights)
                .map(|(&i, &w)| (pool[i].0.clone(), (w as f64).log2()))
                .collect(),
            random_pos,
        )
        .unwrap();
        let exact = members
            .iter()
            .zip(&weights)
            .map(|(&i, &w)| (pool[i].1.clone(), q(w, total)))
            .collect();
        out.push(SmallSpace { space, exact, members });
    }
    out
}

/// Every context up to length 5 plus `extra` seeded contexts of length 6..=12.
pub fn contexts(seed: u64, extra: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = (0..=5).flat_map(super::exact::all_paths).collect();
    let mut rng = SeededRng::new(seed);
    for _ in 0..extra {
        let len = 6 + (rng.uniform() * 7.0) as usize;
        out.push((0..len).map(|_| rng.bernoulli(0.5) as u8).collect());
    }
    // Long structured contexts where repeaters dominate.
    out.push([0, 1, 1].repeat(4));
    out.push([0, 1].repeat(6));
    out.push(vec![0; 12]);
    out.push([0, 1, 1, 0].repeat(3));
    out
}
