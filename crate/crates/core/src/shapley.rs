//! Coalition games and Shapley allocation.
//!
//! Two games are played over the same model: one whose players are
//! rectangular pixel groups (the classic feature-independent setting) and
//! one whose players are the coordinates of a manifold code. Both reduce to
//! the [`Game`] trait, which the exact and permutation-sampling estimators
//! consume.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{ManifoldCode, ManifoldCodec};
use crate::error::{Error, Result};
use crate::image::{Image, MapSource, SaliencyMap, Shape};
use crate::model::BlackBoxModel;
use crate::rng;

/// Largest player count [`shapley_exact`] will enumerate.
pub const EXACT_PLAYER_LIMIT: usize = 20;

/// A subset of the players `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coalition {
    members: Vec<bool>,
}

impl Coalition {
    pub fn new(players: usize, indices: &[usize]) -> Result<Self> {
        let mut members = vec![false; players];
        for &i in indices {
            if i >= players {
                return Err(Error::IndexOutOfRange {
                    what: "player",
                    index: i,
                    len: players,
                });
            }
            if members[i] {
                return Err(Error::Config(format!("player {i} listed twice in coalition")));
            }
            members[i] = true;
        }
        Ok(Coalition { members })
    }

    pub fn empty(players: usize) -> Self {
        Coalition {
            members: vec![false; players],
        }
    }

    pub fn full(players: usize) -> Self {
        Coalition {
            members: vec![true; players],
        }
    }

    pub fn players(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, player: usize) -> bool {
        self.members.get(player).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_mask(&self) -> &[bool] {
        &self.members
    }
}

/// A cooperative game: a payoff for every subset of `num_players()` players.
pub trait Game: Sync {
    fn num_players(&self) -> usize;

    /// Payoff of the coalition whose membership flags are `members`.
    fn value(&self, members: &[bool]) -> Result<f64>;
}

/// A game given by its full payoff table, indexed by bitmask (bit `i` set
/// when player `i` is present).
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedGame {
    players: usize,
    table: Vec<f64>,
}

impl TabulatedGame {
    pub fn new(players: usize, table: Vec<f64>) -> Result<Self> {
        if players > EXACT_PLAYER_LIMIT {
            return Err(Error::EnumerationLimit {
                players,
                limit: EXACT_PLAYER_LIMIT,
            });
        }
        if table.len() != 1 << players {
            return Err(Error::shape(format!("{} payoffs", 1usize << players), table.len()));
        }
        Ok(TabulatedGame { players, table })
    }

    pub fn from_fn(players: usize, f: impl Fn(&[bool]) -> f64) -> Result<Self> {
        let table = (0..1usize << players)
            .map(|mask| f(&mask_to_members(mask, players)))
            .collect();
        Self::new(players, table)
    }

    /// Tabulates any game with at most [`EXACT_PLAYER_LIMIT`] players.
    pub fn from_game<G: Game + ?Sized>(game: &G) -> Result<Self> {
        let n = game.num_players();
        if n > EXACT_PLAYER_LIMIT {
            return Err(Error::EnumerationLimit {
                players: n,
                limit: EXACT_PLAYER_LIMIT,
            });
        }
        let table = (0..1usize << n)
            .into_par_iter()
            .map(|mask| game.value(&mask_to_members(mask, n)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, table)
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn payoff(&self, mask: usize) -> f64 {
        self.table[mask]
    }

    /// Pointwise sum of two games over the same players.
    pub fn sum(&self, other: &TabulatedGame) -> Result<TabulatedGame> {
        if self.players != other.players {
            return Err(Error::shape(self.players, other.players));
        }
        let table = self.table.iter().zip(&other.table).map(|(a, b)| a + b).collect();
        Self::new(self.players, table)
    }
}

impl Game for TabulatedGame {
    fn num_players(&self) -> usize {
        self.players
    }

    fn value(&self, members: &[bool]) -> Result<f64> {
        if members.len() != self.players {
            return Err(Error::shape(self.players, members.len()));
        }
        let mask = members
            .iter()
            .enumerate()
            .fold(0usize, |m, (i, &b)| if b { m | (1 << i) } else { m });
        Ok(self.table[mask])
    }
}

fn mask_to_members(mask: usize, players: usize) -> Vec<bool> {
    (0..players).map(|i| mask & (1 << i) != 0).collect()
}

/// One Shapley value per player, with the endpoints of the game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub values: Vec<f64>,
    pub v_empty: f64,
    pub v_full: f64,
}

impl AttributionVector {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `|Σφ − (v(N) − v(∅))|`.
    pub fn efficiency_gap(&self) -> f64 {
        (self.total() - (self.v_full - self.v_empty)).abs()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc as f64
}

/// Exact Shapley values by enumerating every coalition.
///
/// Each coalition is evaluated once; player `i` then receives
/// `Σ_{S ∌ i} |S|!(n−|S|−1)!/n! · (v(S ∪ {i}) − v(S))`.
pub fn shapley_exact<G: Game + ?Sized>(game: &G) -> Result<AttributionVector> {
    let n = game.num_players();
    if n > EXACT_PLAYER_LIMIT {
        return Err(Error::EnumerationLimit {
            players: n,
            limit: EXACT_PLAYER_LIMIT,
        });
    }
    if n == 0 {
        let v = game.value(&[])?;
        return Ok(AttributionVector {
            values: vec![],
            v_empty: v,
            v_full: v,
        });
    }
    let table = TabulatedGame::from_game(game)?;
    // |S|!(n-|S|-1)!/n! = 1 / (n · C(n-1, |S|))
    let weights: Vec<f64> = (0..n).map(|s| 1.0 / (n as f64 * binomial(n - 1, s))).collect();
    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            let bit = 1usize << i;
            let mut acc = 0.0;
            for mask in 0..1usize << n {
                if mask & bit == 0 {
                    let size = mask.count_ones() as usize;
                    acc += weights[size] * (table.payoff(mask | bit) - table.payoff(mask));
                }
            }
            acc
        })
        .collect();
    Ok(AttributionVector {
        values,
        v_empty: table.payoff(0),
        v_full: table.payoff((1 << n) - 1),
    })
}

/// Marginal contributions along one ordering; returns `(marginals, v(∅))`.
fn ordering_marginals<G: Game + ?Sized>(game: &G, order: &[usize]) -> Result<(Vec<f64>, f64)> {
    let n = game.num_players();
    let mut members = vec![false; n];
    let v_empty = game.value(&members)?;
    let mut last = v_empty;
    let mut marginals = vec![0.0; n];
    for &p in order {
        members[p] = true;
        let v = game.value(&members)?;
        marginals[p] = v - last;
        last = v;
    }
    Ok((marginals, v_empty))
}

fn factorial_at_most(n: usize, cap: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for k in 2..=n {
        acc = acc.checked_mul(k)?;
        if acc > cap {
            return None;
        }
    }
    Some(acc)
}

/// The `index`-th permutation of `0..n` in lexicographic order.
fn nth_permutation(n: usize, mut index: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut fact = vec![1usize; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k;
    }
    let mut out = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let pick = index / fact[k];
        index %= fact[k];
        out.push(pool.remove(pick));
    }
    out
}

/// Permutation-sampling Shapley estimate.
///
/// Permutation `k` is shuffled from its own seeded stream, so the estimate is
/// independent of evaluation order. When `num_permutations ≥ n!` every
/// ordering is used exactly once instead, which reproduces the exact values.
pub fn shapley_sampled<G: Game + ?Sized>(
    game: &G,
    num_permutations: usize,
    seed: u64,
) -> Result<AttributionVector> {
    if num_permutations == 0 {
        return Err(Error::Config("num_permutations must be at least 1".into()));
    }
    let n = game.num_players();
    let exhaustive = factorial_at_most(n, num_permutations);
    let count = exhaustive.unwrap_or(num_permutations);
    let runs = (0..count)
        .into_par_iter()
        .map(|k| {
            let order = match exhaustive {
                Some(_) => nth_permutation(n, k),
                None => {
                    let mut order: Vec<usize> = (0..n).collect();
                    let mut r = rng::substream(seed, rng::PERMUTATIONS, k as u64);
                    order.shuffle(&mut r);
                    order
                }
            };
            ordering_marginals(game, &order)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = vec![0.0; n];
    for (marginals, _) in &runs {
        for (acc, m) in values.iter_mut().zip(marginals) {
            *acc += m;
        }
    }
    values.iter_mut().for_each(|v| *v /= count as f64);
    let v_empty = runs[0].1;
    let v_full = game.value(&vec![true; n])?;
    Ok(AttributionVector {
        values,
        v_empty,
        v_full,
    })
}

/// How Shapley values are computed for a game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimator {
    Exact,
    Sampled { num_permutations: usize, seed: u64 },
    /// Exact up to [`EXACT_PLAYER_LIMIT`] players, sampled beyond.
    Auto { num_permutations: usize, seed: u64 },
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Auto {
            num_permutations: 1000,
            seed: 0,
        }
    }
}

impl Estimator {
    pub fn run<G: Game + ?Sized>(&self, game: &G) -> Result<AttributionVector> {
        match *self {
            Estimator::Exact => shapley_exact(game),
            Estimator::Sampled {
                num_permutations,
                seed,
            } => shapley_sampled(game, num_permutations, seed),
            Estimator::Auto {
                num_permutations,
                seed,
            } => {
                if game.num_players() <= EXACT_PLAYER_LIMIT {
                    shapley_exact(game)
                } else {
                    shapley_sampled(game, num_permutations, seed)
                }
            }
        }
    }
}

/// How off-coalition manifold coordinates are filled in.
#[derive(Clone, Debug, PartialEq)]
pub enum Imputation {
    /// Copy from a fixed reference code.
    Baseline(ManifoldCode),
    /// Average over `mc_samples` codes drawn (seeded) from a pool; each draw
    /// supplies every missing coordinate at once.
    Empirical {
        pool: Vec<ManifoldCode>,
        mc_samples: usize,
        seed: u64,
    },
}

/// Rectangular partition of the `W×H` plane into `cols × rows` groups, each
/// spanning all channels. Remainder pixels join the last group along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelGrid {
    pub cols: usize,
    pub rows: usize,
}

impl PixelGrid {
    pub fn new(cols: usize, rows: usize) -> Self {
        PixelGrid { cols, rows }
    }

    pub fn num_groups(&self) -> usize {
        self.cols * self.rows
    }

    /// Flat pixel indices of every group.
    pub fn groups(&self, shape: Shape) -> Result<Vec<Vec<usize>>> {
        if self.cols == 0 || self.rows == 0 || self.cols > shape.width || self.rows > shape.height {
            return Err(Error::Config(format!(
                "grid {}x{} does not fit image {shape}",
                self.cols, self.rows
            )));
        }
        let cw = shape.width / self.cols;
        let rh = shape.height / self.rows;
        let mut groups = vec![Vec::new(); self.num_groups()];
        for c in 0..shape.channels {
            for w in 0..shape.width {
                let gx = (w / cw).min(self.cols - 1);
                for h in 0..shape.height {
                    let gy = (h / rh).min(self.rows - 1);
                    groups[gx * self.rows + gy].push(shape.index(c, w, h));
                }
            }
        }
        Ok(groups)
    }

    /// Spreads each group's value evenly over its pixels.
    pub fn broadcast(&self, shape: Shape, attribution: &AttributionVector) -> Result<SaliencyMap> {
        let groups = self.groups(shape)?;
        if attribution.values.len() != groups.len() {
            return Err(Error::shape(groups.len(), attribution.values.len()));
        }
        let mut values = vec![0.0; shape.len()];
        for (group, &phi) in groups.iter().zip(&attribution.values) {
            let share = phi / group.len() as f64;
            for &i in group {
                values[i] = share;
            }
        }
        SaliencyMap::new(shape, values, MapSource::Traditional)
    }
}

/// Pixel-group game: present groups keep the instance's pixels, absent ones
/// take the baseline image's.
pub struct PixelGroupGame<'a> {
    model: &'a BlackBoxModel,
    class_index: usize,
    instance: &'a Image,
    baseline: &'a Image,
    groups: Vec<Vec<usize>>,
}

impl<'a> PixelGroupGame<'a> {
    pub fn new(
        model: &'a BlackBoxModel,
        class_index: usize,
        instance: &'a Image,
        baseline: &'a Image,
        grid: PixelGrid,
    ) -> Result<Self> {
        instance.ensure_shape(model.input_shape())?;
        baseline.ensure_shape(model.input_shape())?;
        check_class(model, class_index)?;
        Ok(PixelGroupGame {
            model,
            class_index,
            instance,
            baseline,
            groups: grid.groups(instance.shape())?,
        })
    }
}

impl Game for PixelGroupGame<'_> {
    fn num_players(&self) -> usize {
        self.groups.len()
    }

    fn value(&self, members: &[bool]) -> Result<f64> {
        if members.len() != self.groups.len() {
            return Err(Error::shape(self.groups.len(), members.len()));
        }
        let mut mixed = self.baseline.clone();
        let dst = mixed.as_mut_slice();
        let src = self.instance.as_slice();
        for (group, _) in self.groups.iter().zip(members).filter(|(_, &m)| m) {
            for &i in group {
                dst[i] = src[i];
            }
        }
        Ok(self.model.forward(&mixed)?.get(self.class_index))
    }
}

/// Manifold game: present coordinates keep the instance code, absent ones
/// are imputed, then the code is decoded and scored.
pub struct ManifoldGame<'a> {
    model: &'a BlackBoxModel,
    codec: &'a ManifoldCodec,
    class_index: usize,
    instance: ManifoldCode,
    fill: Vec<ManifoldCode>,
}

impl<'a> ManifoldGame<'a> {
    pub fn new(
        model: &'a BlackBoxModel,
        codec: &'a ManifoldCodec,
        class_index: usize,
        instance: ManifoldCode,
        imputation: &Imputation,
    ) -> Result<Self> {
        if codec.shape() != model.input_shape() {
            return Err(Error::shape(model.input_shape(), codec.shape()));
        }
        check_class(model, class_index)?;
        let latent = codec.latent_dim();
        if instance.len() != latent {
            return Err(Error::shape(format!("code of length {latent}"), instance.len()));
        }
        let fill = match imputation {
            Imputation::Baseline(code) => vec![code.clone()],
            Imputation::Empirical {
                pool,
                mc_samples,
                seed,
            } => {
                if pool.is_empty() {
                    return Err(Error::Config("empirical imputation needs a non-empty pool".into()));
                }
                if *mc_samples == 0 {
                    return Err(Error::Config("empirical imputation needs mc_samples >= 1".into()));
                }
                // Fixed draws shared by every coalition.
                let mut r = rng::substream(*seed, rng::IMPUTATION, 0);
                (0..*mc_samples)
                    .map(|_| pool[r.random_range(0..pool.len())].clone())
                    .collect()
            }
        };
        if let Some(bad) = fill.iter().find(|c| c.len() != latent) {
            return Err(Error::shape(format!("imputation code of length {latent}"), bad.len()));
        }
        Ok(ManifoldGame {
            model,
            codec,
            class_index,
            instance,
            fill,
        })
    }

    pub fn instance(&self) -> &ManifoldCode {
        &self.instance
    }
}

impl Game for ManifoldGame<'_> {
    fn num_players(&self) -> usize {
        self.instance.len()
    }

    fn value(&self, members: &[bool]) -> Result<f64> {
        if members.len() != self.instance.len() {
            return Err(Error::shape(self.instance.len(), members.len()));
        }
        let mut total = 0.0;
        for reference in &self.fill {
            let code: Vec<f64> = members
                .iter()
                .zip(self.instance.as_slice().iter().zip(reference.as_slice()))
                .map(|(&m, (&own, &other))| if m { own } else { other })
                .collect();
            let image = self.codec.decode(&ManifoldCode(code))?;
            total += self.model.forward(&image)?.get(self.class_index);
        }
        Ok(total / self.fill.len() as f64)
    }
}

fn check_class(model: &BlackBoxModel, class_index: usize) -> Result<()> {
    if class_index >= model.num_classes() {
        return Err(Error::IndexOutOfRange {
            what: "class",
            index: class_index,
            len: model.num_classes(),
        });
    }
    Ok(())
}

/// Where coalition values are computed.
#[derive(Clone, Debug, PartialEq)]
pub enum Substrate<'a> {
    PixelGroups { grid: PixelGrid, baseline: Image },
    Manifold { codec: &'a ManifoldCodec, imputation: Imputation },
}

/// The explained instance: an image, or (manifold substrate only) a code.
#[derive(Clone, Copy, Debug)]
pub enum Instance<'a> {
    Image(&'a Image),
    Code(&'a ManifoldCode),
}

/// Value function `v(S)` for a model's class `t` on a substrate.
#[derive(Clone, Debug)]
pub struct ValueFunction<'a> {
    pub model: &'a BlackBoxModel,
    pub class_index: usize,
    pub substrate: Substrate<'a>,
}

/// A [`ValueFunction`] fixed to one instance.
pub enum BoundGame<'a> {
    Pixels(PixelGroupGame<'a>),
    Manifold(ManifoldGame<'a>),
}

impl Game for BoundGame<'_> {
    fn num_players(&self) -> usize {
        match self {
            BoundGame::Pixels(g) => g.num_players(),
            BoundGame::Manifold(g) => g.num_players(),
        }
    }

    fn value(&self, members: &[bool]) -> Result<f64> {
        match self {
            BoundGame::Pixels(g) => g.value(members),
            BoundGame::Manifold(g) => g.value(members),
        }
    }
}

impl<'a> ValueFunction<'a> {
    pub fn bind(&'a self, instance: Instance<'a>) -> Result<BoundGame<'a>> {
        match (&self.substrate, instance) {
            (Substrate::PixelGroups { grid, baseline }, Instance::Image(image)) => Ok(BoundGame::Pixels(
                PixelGroupGame::new(self.model, self.class_index, image, baseline, *grid)?,
            )),
            (Substrate::PixelGroups { .. }, Instance::Code(_)) => Err(Error::Config(
                "pixel-group games take an image instance, not a code".into(),
            )),
            (Substrate::Manifold { codec, imputation }, instance) => {
                let code = match instance {
                    Instance::Image(image) => codec.encode(image)?,
                    Instance::Code(code) => code.clone(),
                };
                Ok(BoundGame::Manifold(ManifoldGame::new(
                    self.model,
                    codec,
                    self.class_index,
                    code,
                    imputation,
                )?))
            }
        }
    }

    pub fn value(&self, coalition: &Coalition, instance: Instance<'_>) -> Result<f64> {
        // Rebind with a local lifetime; binding is cheap relative to scoring.
        let vf = ValueFunction {
            model: self.model,
            class_index: self.class_index,
            substrate: self.substrate.clone(),
        };
        let game = vf.bind(instance)?;
        if coalition.players() != game.num_players() {
            return Err(Error::shape(
                format!("coalition over {} players", game.num_players()),
                coalition.players(),
            ));
        }
        game.value(coalition.as_mask())
    }
}

/// Feature-independent Shapley map over rectangular pixel groups.
///
/// Each group's value is divided evenly among its pixels (all channels), so
/// the map sums to `f(I)_t − f(baseline)_t` when computed exactly.
pub fn traditional_shap(
    model: &BlackBoxModel,
    image: &Image,
    class_index: usize,
    grid: PixelGrid,
    baseline: &Image,
    estimator: &Estimator,
) -> Result<(SaliencyMap, AttributionVector)> {
    let game = PixelGroupGame::new(model, class_index, image, baseline, grid)?;
    let attribution = estimator.run(&game)?;
    let map = grid.broadcast(image.shape(), &attribution)?;
    Ok((map, attribution))
}

/// Shapley values of the manifold coordinates of `R(I)`.
///
/// The game is played on the reconstruction `G(R(I))`; whatever the codec
/// cannot represent is not attributed here.
pub fn manifold_shap(
    model: &BlackBoxModel,
    codec: &ManifoldCodec,
    image: &Image,
    class_index: usize,
    imputation: &Imputation,
    estimator: &Estimator,
) -> Result<(ManifoldCode, AttributionVector)> {
    image.ensure_shape(model.input_shape())?;
    let code = codec.encode(image)?;
    let game = ManifoldGame::new(model, codec, class_index, code, imputation)?;
    let attribution = estimator.run(&game)?;
    Ok((game.instance, attribution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::fit_linear_codec;
    use crate::model::{Activation, Layer};
    use itertools::Itertools;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_game(seed: u64, n: usize) -> TabulatedGame {
        let mut r = rng::substream(seed, "game", 0);
        TabulatedGame::new(n, (0..1 << n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    // Average marginal contribution over every ordering.
    fn permutation_oracle(game: &TabulatedGame) -> Vec<f64> {
        let n = game.num_players();
        let mut phi = vec![0.0; n];
        let mut count = 0.0;
        for order in (0..n).permutations(n) {
            let mut mask = 0usize;
            for p in order {
                let before = game.payoff(mask);
                mask |= 1 << p;
                phi[p] += game.payoff(mask) - before;
            }
            count += 1.0;
        }
        phi.iter().map(|v| v / count).collect()
    }

    #[test]
    fn additive_game_returns_weights() {
        let a = [0.3, -1.2, 2.5, 0.0, 0.7];
        let g = TabulatedGame::from_fn(5, |m| m.iter().zip(&a).filter(|(&x, _)| x).map(|(_, v)| v).sum()).unwrap();
        let phi = shapley_exact(&g).unwrap();
        for (p, w) in phi.values.iter().zip(&a) {
            assert!((p - w).abs() < 1e-12);
        }
        let one = shapley_sampled(&g, 1, 42).unwrap();
        for (p, w) in one.values.iter().zip(&a) {
            assert!((p - w).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_interaction_splits_evenly() {
        let g = TabulatedGame::new(2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(shapley_exact(&g).unwrap().values, vec![0.5, 0.5]);
    }

    #[test]
    fn exact_matches_permutation_oracle() {
        let g = random_game(6, 6);
        let phi = shapley_exact(&g).unwrap();
        for (a, b) in phi.values.iter().zip(permutation_oracle(&g)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(phi.efficiency_gap() < 1e-9);
    }

    #[test]
    fn exhaustive_sampling_equals_exact() {
        let g = random_game(4, 4);
        let exact = shapley_exact(&g).unwrap();
        let sampled = shapley_sampled(&g, 24, 0).unwrap();
        for (a, b) in exact.values.iter().zip(&sampled.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // Additive part plus pairwise interactions plus noise: the payoff shape of
    // a smooth model, where permutation sampling has bounded marginal variance.
    fn structured_game(seed: u64, n: usize) -> TabulatedGame {
        let mut r = rng::substream(seed, "structured-game", 0);
        let a: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let b: Vec<f64> = (0..n * n).map(|_| r.random::<f64>() * 0.4 - 0.2).collect();
        let noise: Vec<f64> = (0..1 << n).map(|_| r.random::<f64>() * 0.1 - 0.05).collect();
        TabulatedGame::from_fn(n, |m| {
            let mask = m.iter().enumerate().fold(0usize, |acc, (i, &x)| if x { acc | 1 << i } else { acc });
            let mut v = noise[mask];
            for i in (0..n).filter(|&i| m[i]) {
                v += a[i];
                for j in (i + 1..n).filter(|&j| m[j]) {
                    v += b[i * n + j];
                }
            }
            v
        })
        .unwrap()
    }

    #[test]
    fn sampled_estimate_converges_at_eight_players() {
        let g = structured_game(8, 8);
        let exact = shapley_exact(&g).unwrap();
        let est = shapley_sampled(&g, 2000, 17).unwrap();
        let err = exact
            .values
            .iter()
            .zip(&est.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 0.02 * exact.max_abs(), "err {err}");
        assert!(est.efficiency_gap() < 1e-9);
        assert_eq!(est, shapley_sampled(&g, 2000, 17).unwrap());
    }

    #[test]
    fn enumeration_guard() {
        struct Big;
        impl Game for Big {
            fn num_players(&self) -> usize {
                21
            }
            fn value(&self, _: &[bool]) -> Result<f64> {
                Ok(0.0)
            }
        }
        assert!(matches!(shapley_exact(&Big), Err(Error::EnumerationLimit { players: 21, .. })));
        assert!(shapley_sampled(&Big, 3, 0).is_ok());
        assert!(matches!(shapley_sampled(&Big, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn coalition_validation() {
        assert!(Coalition::new(3, &[0, 2]).is_ok());
        assert!(matches!(Coalition::new(3, &[3]), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(Coalition::new(3, &[1, 1]), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn exact_axioms_hold(seed in 0u64..10_000, n in 2usize..7) {
            let base = random_game(seed, n);
            // Player 0 becomes a null player, players 1 and 2 (when present)
            // become interchangeable.
            let g = TabulatedGame::from_fn(n, |m| {
                let mut mask = 0usize;
                for (i, &b) in m.iter().enumerate() {
                    if b && i != 0 { mask |= 1 << i; }
                }
                if n > 2 && (mask >> 1) & 1 != (mask >> 2) & 1 {
                    mask |= 0b110;
                }
                base.payoff(mask)
            }).unwrap();
            let phi = shapley_exact(&g).unwrap();
            prop_assert!(phi.efficiency_gap() < 1e-9);
            prop_assert!(phi.values[0].abs() < 1e-9);
            if n > 2 {
                prop_assert!((phi.values[1] - phi.values[2]).abs() < 1e-9);
            }
        }

        #[test]
        fn exact_is_linear(seed in 0u64..10_000, n in 1usize..7) {
            let a = random_game(seed, n);
            let b = random_game(seed + 1, n);
            let sum = shapley_exact(&a.sum(&b).unwrap()).unwrap();
            let pa = shapley_exact(&a).unwrap();
            let pb = shapley_exact(&b).unwrap();
            for i in 0..n {
                prop_assert!((sum.values[i] - pa.values[i] - pb.values[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn sampled_is_efficient(seed in 0u64..10_000, n in 2usize..9, perms in 1usize..50) {
            let g = random_game(seed, n);
            let est = shapley_sampled(&g, perms, seed).unwrap();
            prop_assert!(est.efficiency_gap() < 1e-9);
        }
    }

    fn linear_logit_model(shape: Shape, weights: &[f64]) -> BlackBoxModel {
        let w = DMatrix::from_row_slice(1, shape.len(), weights);
        let layer = Layer::new(w, DVector::zeros(1), Activation::Identity).unwrap();
        BlackBoxModel::new(shape, vec![layer]).unwrap()
    }

    fn softmax_model(shape: Shape, seed: u64) -> BlackBoxModel {
        let mut r = rng::substream(seed, "softmax-model", 0);
        let w = DMatrix::from_fn(3, shape.len(), |_, _| r.random::<f64>() * 2.0 - 1.0);
        let layer = Layer::new(w, DVector::zeros(3), Activation::Softmax).unwrap();
        BlackBoxModel::new(shape, vec![layer]).unwrap()
    }

    fn test_image(shape: Shape, seed: u64) -> Image {
        let mut r = rng::substream(seed, "image", 0);
        Image::new(shape, (0..shape.len()).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn single_group_spreads_total_change() {
        let shape = Shape::new(2, 3, 3).unwrap();
        let model = softmax_model(shape, 1);
        let image = test_image(shape, 2);
        let base = Image::filled(shape, 0.5);
        let (map, _) = traditional_shap(&model, &image, 1, PixelGrid::new(1, 1), &base, &Estimator::Exact).unwrap();
        let expected = (model.score(&image, 1).unwrap() - model.score(&base, 1).unwrap()) / 18.0;
        assert!(map.values().iter().all(|v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn blind_model_gets_zero_map() {
        let shape = Shape::new(1, 4, 4).unwrap();
        let model = linear_logit_model(shape, &[0.0; 16]);
        let (map, _) = traditional_shap(
            &model,
            &test_image(shape, 3),
            0,
            PixelGrid::new(2, 2),
            &Image::zeros(shape),
            &Estimator::Exact,
        )
        .unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_model_groups_get_weighted_sums() {
        let shape = Shape::new(1, 4, 4).unwrap();
        let weights: Vec<f64> = (0..16).map(|i| (i as f64 - 7.0) * 0.1).collect();
        let model = linear_logit_model(shape, &weights);
        let image = test_image(shape, 4);
        let grid = PixelGrid::new(2, 2);
        let (_, attr) = traditional_shap(&model, &image, 0, grid, &Image::zeros(shape), &Estimator::Exact).unwrap();
        for (g, group) in grid.groups(shape).unwrap().iter().enumerate() {
            let closed: f64 = group.iter().map(|&i| weights[i] * image.as_slice()[i]).sum();
            assert!((attr.values[g] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn remainder_pixels_join_last_group() {
        let shape = Shape::new(1, 5, 3).unwrap();
        let groups = PixelGrid::new(2, 2).groups(shape).unwrap();
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 4, 3, 6]);
        assert!(matches!(PixelGrid::new(6, 1).groups(shape), Err(Error::Config(_))));
    }

    fn toy_codec(shape: Shape, latent: usize, seed: u64) -> ManifoldCodec {
        let data: Vec<Image> = (0..40).map(|k| test_image(shape, seed * 1000 + k)).collect();
        fit_linear_codec(&data, latent).unwrap()
    }

    #[test]
    fn value_function_endpoints() {
        let shape = Shape::new(1, 3, 3).unwrap();
        let model = softmax_model(shape, 5);
        let codec = toy_codec(shape, 4, 5);
        let image = test_image(shape, 6);
        let baseline = ManifoldCode(vec![0.1, -0.2, 0.0, 0.3]);

        let vf = ValueFunction {
            model: &model,
            class_index: 2,
            substrate: Substrate::Manifold {
                codec: &codec,
                imputation: Imputation::Baseline(baseline.clone()),
            },
        };
        let code = codec.encode(&image).unwrap();
        let full = vf.value(&Coalition::full(4), Instance::Code(&code)).unwrap();
        assert_eq!(full, model.score(&codec.decode(&code).unwrap(), 2).unwrap());
        let empty = vf.value(&Coalition::empty(4), Instance::Image(&image)).unwrap();
        assert_eq!(empty, model.score(&codec.decode(&baseline).unwrap(), 2).unwrap());

        let base_img = Image::filled(shape, 0.25);
        let vf = ValueFunction {
            model: &model,
            class_index: 2,
            substrate: Substrate::PixelGroups {
                grid: PixelGrid::new(3, 3),
                baseline: base_img.clone(),
            },
        };
        let full = vf.value(&Coalition::full(9), Instance::Image(&image)).unwrap();
        assert_eq!(full, model.score(&image, 2).unwrap());
        let empty = vf.value(&Coalition::empty(9), Instance::Image(&image)).unwrap();
        assert_eq!(empty, model.score(&base_img, 2).unwrap());
        assert!(matches!(
            vf.value(&Coalition::full(9), Instance::Code(&code)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_code_pool_equals_baseline_imputation() {
        let shape = Shape::new(1, 3, 3).unwrap();
        let model = softmax_model(shape, 7);
        let codec = toy_codec(shape, 3, 7);
        let code = codec.encode(&test_image(shape, 8)).unwrap();
        let c = ManifoldCode(vec![0.5, -0.5, 0.25]);
        let base = ManifoldGame::new(&model, &codec, 0, code.clone(), &Imputation::Baseline(c.clone())).unwrap();
        let emp = ManifoldGame::new(
            &model,
            &codec,
            0,
            code,
            &Imputation::Empirical {
                pool: vec![c],
                mc_samples: 7,
                seed: 3,
            },
        )
        .unwrap();
        for mask in 0..8usize {
            let m = mask_to_members(mask, 3);
            assert!((base.value(&m).unwrap() - emp.value(&m).unwrap()).abs() < 1e-12);
        }
        let err = ManifoldGame::new(
            &model,
            &codec,
            0,
            ManifoldCode::zeros(3),
            &Imputation::Empirical {
                pool: vec![],
                mc_samples: 4,
                seed: 0,
            },
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn one_coordinate_manifold_game() {
        let shape = Shape::new(1, 2, 3).unwrap();
        let model = softmax_model(shape, 9);
        let codec = toy_codec(shape, 1, 9);
        let image = test_image(shape, 10);
        let zero = Imputation::Baseline(ManifoldCode::zeros(1));
        let (code, attr) = manifold_shap(&model, &codec, &image, 1, &zero, &Estimator::Exact).unwrap();
        let expected = model.score(&codec.decode(&code).unwrap(), 1).unwrap()
            - model.score(&codec.decode(&ManifoldCode::zeros(1)).unwrap(), 1).unwrap();
        assert!((attr.values[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn linear_codec_and_logit_induce_additive_game() {
        let shape = Shape::new(1, 3, 3).unwrap();
        let weights: Vec<f64> = (0..9).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let model = linear_logit_model(shape, &weights);
        let codec = toy_codec(shape, 6, 11);
        let image = test_image(shape, 12);
        let zero = Imputation::Baseline(ManifoldCode::zeros(6));
        let (code, attr) = manifold_shap(&model, &codec, &image, 0, &zero, &Estimator::Exact).unwrap();
        // f(G(u)) = aᵀm + Σ_p (aᵀV_p) u_p, so φ_p = (aᵀV_p) u'_p.
        let basis = codec.basis().unwrap();
        for p in 0..6 {
            let slope: f64 = (0..9).map(|i| weights[i] * basis[(i, p)]).sum();
            assert!((attr.values[p] - slope * code.0[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn blind_model_manifold_attribution_is_zero() {
        let shape = Shape::new(1, 3, 3).unwrap();
        let model = linear_logit_model(shape, &[0.0; 9]);
        let codec = toy_codec(shape, 5, 13);
        let zero = Imputation::Baseline(ManifoldCode::zeros(5));
        let (_, attr) = manifold_shap(&model, &codec, &test_image(shape, 14), 0, &zero, &Estimator::Exact).unwrap();
        assert!(attr.values.iter().all(|&v| v == 0.0));
    }
}
