//! Post-hoc relabeling of class-indexed draws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::ChainOutput;
use crate::state::ParameterState;

/// Statistic whose ascending order defines the class labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceStatistic {
    /// First fixed effect (the class intercept).
    #[default]
    Intercept,
    Alpha,
}

impl std::str::FromStr for ReferenceStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intercept" => Ok(Self::Intercept),
            "alpha" => Ok(Self::Alpha),
            other => Err(Error::Config(format!("unknown reference statistic '{other}'"))),
        }
    }
}

/// Permutation (`perm[new] = old`) that sorts classes of one draw by the
/// statistic; ties keep the original label order. The flag reports a tie.
pub fn ordering_permutation(state: &ParameterState, stat: ReferenceStatistic) -> (Vec<usize>, bool) {
    let key: Vec<f64> = state
        .classes
        .iter()
        .map(|c| match stat {
            ReferenceStatistic::Intercept => c.beta.first().copied().unwrap_or(0.0),
            ReferenceStatistic::Alpha => c.alpha,
        })
        .collect();
    let mut perm: Vec<usize> = (0..key.len()).collect();
    perm.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    let tied = perm.windows(2).any(|w| key[w[0]] == key[w[1]]);
    (perm, tied)
}

/// Relabeled draws plus the permutation applied to each.
#[derive(Debug, Clone, PartialEq)]
pub struct Relabeled {
    pub output: ChainOutput,
    /// `permutations[k][new] = old` for draw `k`.
    pub permutations: Vec<Vec<usize>>,
    /// Draws whose statistic was tied across classes.
    pub tied_draws: Vec<usize>,
}

/// Reorder the classes of every state in place; returns the permutations
/// and the indices of tied draws.
pub fn relabel_states(draws: &mut [ParameterState], stat: ReferenceStatistic) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut permutations = Vec::with_capacity(draws.len());
    let mut tied_draws = Vec::new();
    for (k, draw) in draws.iter_mut().enumerate() {
        let (perm, tied) = ordering_permutation(draw, stat);
        if tied {
            tied_draws.push(k);
        }
        draw.permute(&perm);
        permutations.push(perm);
    }
    (permutations, tied_draws)
}

/// Reorder the classes of every retained draw by the reference statistic.
pub fn relabel_draws(output: &ChainOutput, stat: ReferenceStatistic) -> Result<Relabeled> {
    if output.draws.is_empty() {
        return Err(Error::Config("no draws to relabel".into()));
    }
    let mut out = output.clone();
    let (permutations, tied_draws) = relabel_states(&mut out.draws, stat);
    Ok(Relabeled { output: out, permutations, tied_draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use crate::state::ClassParams;

    fn draw(intercepts: &[f64]) -> ParameterState {
        let g = intercepts.len();
        ParameterState {
            classes: intercepts
                .iter()
                .map(|&b| ClassParams {
                    beta: vec![b, 1.0],
                    sigma_b: DMatrix::identity(1, 1),
                    gamma: vec![],
                    alpha: b * 2.0,
                    gamma_h0: vec![0.0],
                })
                .collect(),
            sigma_y2: 1.0,
            pi: vec![1.0 / g as f64; g],
            v: vec![],
            b: vec![],
        }
    }

    #[test]
    fn ordered_draws_get_identity() {
        let (perm, tied) = ordering_permutation(&draw(&[1.0, 2.0, 3.0]), ReferenceStatistic::Intercept);
        assert_eq!(perm, vec![0, 1, 2]);
        assert!(!tied);
        let (perm, tied) = ordering_permutation(&draw(&[2.0, 2.0, 1.0]), ReferenceStatistic::Alpha);
        assert_eq!(perm, vec![2, 0, 1]);
        assert!(tied);
    }
}
