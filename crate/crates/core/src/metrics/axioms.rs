//! Executable allocation axioms.
//!
//! On small tabulated games the checks are brute force: null players and
//! interchangeable pairs are found by scanning every coalition, then the
//! attribution under test is held to efficiency (complete allocation), null
//! player (no unrelated allocation) and symmetry.
//!
//! Gradient-family methods are played on a game through its multilinear
//! extension `g(x) = Σ_S v(S) Π_{i∈S} x_i Π_{i∉S} (1 − x_i)`, with the
//! instance at `x = 1` and the baseline at `x = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::SaliencyMap;
use crate::model::BlackBoxModel;
use crate::shapley::{shapley_exact, Game, TabulatedGame};

pub const DEFAULT_AXIOM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxiomStatus {
    Pass,
    Fail,
}

impl AxiomStatus {
    fn from_bool(ok: bool) -> Self {
        if ok {
            AxiomStatus::Pass
        } else {
            AxiomStatus::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == AxiomStatus::Pass
    }
}

/// Outcome of one axiom: status, how many instances were checked, and the
/// largest deviation seen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub status: AxiomStatus,
    pub checked: usize,
    pub worst: f64,
}

impl AxiomCheck {
    fn from_deviations(deviations: impl IntoIterator<Item = f64>, tol: f64) -> Self {
        let (checked, worst) = deviations
            .into_iter()
            .fold((0, 0.0_f64), |(n, w), d| (n + 1, w.max(d)));
        AxiomCheck {
            status: AxiomStatus::from_bool(worst <= tol),
            checked,
            worst,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    /// Complete allocation: `Σφ = v(N) − v(∅)`.
    pub efficiency: AxiomCheck,
    /// No unrelated allocation: null players get zero.
    pub null_player: AxiomCheck,
    pub symmetry: AxiomCheck,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.efficiency.status.passed() && self.null_player.status.passed() && self.symmetry.status.passed()
    }
}

/// Players whose membership never changes the payoff.
pub fn null_players(game: &TabulatedGame, tol: f64) -> Vec<usize> {
    let n = game.num_players();
    (0..n)
        .filter(|&i| {
            let bit = 1 << i;
            (0..1usize << n)
                .filter(|m| m & bit == 0)
                .all(|m| (game.payoff(m | bit) - game.payoff(m)).abs() <= tol)
        })
        .collect()
}

/// Pairs `(i, j)` with `v(S ∪ {i}) = v(S ∪ {j})` for every `S` avoiding both.
pub fn interchangeable_pairs(game: &TabulatedGame, tol: f64) -> Vec<(usize, usize)> {
    let n = game.num_players();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let both = (1 << i) | (1 << j);
            let same = (0..1usize << n)
                .filter(|m| m & both == 0)
                .all(|m| (game.payoff(m | 1 << i) - game.payoff(m | 1 << j)).abs() <= tol);
            if same {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

pub fn axiom_suite(game: &TabulatedGame, attribution: &[f64], tol: f64) -> Result<AxiomReport> {
    let n = game.num_players();
    if attribution.len() != n {
        return Err(Error::shape(format!("{n} attributions"), attribution.len()));
    }
    let full = game.payoff((1 << n) - 1);
    let empty = game.payoff(0);
    let total: f64 = attribution.iter().sum();
    Ok(AxiomReport {
        efficiency: AxiomCheck::from_deviations([(total - (full - empty)).abs()], tol),
        null_player: AxiomCheck::from_deviations(null_players(game, tol).into_iter().map(|i| attribution[i].abs()), tol),
        symmetry: AxiomCheck::from_deviations(
            interchangeable_pairs(game, tol)
                .into_iter()
                .map(|(i, j)| (attribution[i] - attribution[j]).abs()),
            tol,
        ),
    })
}

/// `∂g/∂x_i` of the multilinear extension at `x`.
pub fn multilinear_gradient(game: &TabulatedGame, x: &[f64]) -> Vec<f64> {
    let n = game.num_players();
    (0..n)
        .map(|i| {
            let bit = 1 << i;
            (0..1usize << n)
                .filter(|m| m & bit == 0)
                .map(|m| {
                    let weight: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| if m & (1 << j) != 0 { x[j] } else { 1.0 - x[j] })
                        .product();
                    weight * (game.payoff(m | bit) - game.payoff(m))
                })
                .sum()
        })
        .collect()
}

/// Attribution procedures that can be played directly on a tabulated game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GameMethod {
    ExactShapley,
    /// Gradient times input at the instance (`x = 1`, baseline `0`).
    Gradient,
    IntegratedGradients { steps: usize },
    Zero,
}

pub fn attribute_game(game: &TabulatedGame, method: GameMethod) -> Result<Vec<f64>> {
    let n = game.num_players();
    match method {
        GameMethod::ExactShapley => Ok(shapley_exact(game)?.values),
        GameMethod::Gradient => Ok(multilinear_gradient(game, &vec![1.0; n])),
        GameMethod::IntegratedGradients { steps } => {
            if steps == 0 {
                return Err(Error::Config("integrated gradients needs at least 1 step".into()));
            }
            let mut acc = vec![0.0; n];
            for k in 0..steps {
                let t = (k as f64 + 0.5) / steps as f64;
                for (a, g) in acc.iter_mut().zip(multilinear_gradient(game, &vec![t; n])) {
                    *a += g / steps as f64;
                }
            }
            Ok(acc)
        }
        GameMethod::Zero => Ok(vec![0.0; n]),
    }
}

/// Convex-combination conservation of an unnormalized fused map:
/// `Σ fused = α·Σ M_manifold + (1−α)·Σ M_traditional`.
pub fn fusion_conservation(
    fused_raw: &SaliencyMap,
    alpha: f64,
    manifold_total: f64,
    traditional_total: f64,
    tol: f64,
) -> AxiomCheck {
    let expected = alpha * manifold_total + (1.0 - alpha) * traditional_total;
    AxiomCheck::from_deviations([(fused_raw.total() - expected).abs()], tol)
}

/// Image-level axiom checks for a saliency map of a real model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageAxioms {
    /// `Σψ = f(I)_t − f(baseline)_t` within `tol·max(1, |Δ|)`.
    pub complete_allocation: AxiomCheck,
    /// Pixels the model never reads receive `|ψ| ≤ tol`.
    pub no_unrelated_allocation: AxiomCheck,
}

pub fn image_axioms(model: &BlackBoxModel, map: &SaliencyMap, delta: f64, tol: f64) -> ImageAxioms {
    let scale = delta.abs().max(1.0);
    let complete_allocation = AxiomCheck::from_deviations([(map.total() - delta).abs() / scale], tol);
    let no_unrelated_allocation = AxiomCheck::from_deviations(
        model
            .null_inputs()
            .iter()
            .zip(map.values())
            .filter(|(&null, _)| null)
            .map(|(_, v)| v.abs()),
        tol,
    );
    ImageAxioms {
        complete_allocation,
        no_unrelated_allocation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_game(seed: u64, n: usize) -> TabulatedGame {
        let mut r = rng::substream(seed, "axiom-game", 0);
        TabulatedGame::new(n, (0..1 << n).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn exact_shapley_passes_everything() {
        let g = random_game(1, 6);
        let phi = attribute_game(&g, GameMethod::ExactShapley).unwrap();
        assert!(axiom_suite(&g, &phi, 1e-9).unwrap().all_passed());
    }

    #[test]
    fn gradient_fails_complete_allocation_on_interaction() {
        let g = TabulatedGame::new(2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let grad = attribute_game(&g, GameMethod::Gradient).unwrap();
        assert_eq!(grad, vec![1.0, 1.0]);
        let report = axiom_suite(&g, &grad, 1e-9).unwrap();
        assert_eq!(report.efficiency.status, AxiomStatus::Fail);
        assert_eq!(report.symmetry.status, AxiomStatus::Pass);
    }

    #[test]
    fn zero_attribution_passes_nua_fails_ca() {
        let mut table: Vec<f64> = random_game(2, 3).table().to_vec();
        // Make player 2 null.
        for m in 0..8 {
            if m & 4 != 0 {
                table[m] = table[m & !4];
            }
        }
        let g = TabulatedGame::new(3, table).unwrap();
        assert_eq!(null_players(&g, 1e-12), vec![2]);
        let report = axiom_suite(&g, &attribute_game(&g, GameMethod::Zero).unwrap(), 1e-9).unwrap();
        assert_eq!(report.null_player.status, AxiomStatus::Pass);
        assert_eq!(report.null_player.checked, 1);
        assert_eq!(report.efficiency.status, AxiomStatus::Fail);
    }

    #[test]
    fn multilinear_ig_matches_shapley() {
        // Integrating the multilinear extension along the diagonal gives
        // Shapley values; the midpoint rule gets close.
        let g = random_game(3, 5);
        let phi = attribute_game(&g, GameMethod::ExactShapley).unwrap();
        let ig = attribute_game(&g, GameMethod::IntegratedGradients { steps: 512 }).unwrap();
        for (a, b) in phi.iter().zip(&ig) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn interchangeable_pairs_are_found() {
        let g = TabulatedGame::from_fn(3, |m| (m[0] as u8 + m[1] as u8) as f64 * 0.5 + m[2] as u8 as f64).unwrap();
        assert_eq!(interchangeable_pairs(&g, 1e-12), vec![(0, 1)]);
    }
}
