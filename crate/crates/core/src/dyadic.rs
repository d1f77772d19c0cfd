//! Dyadic intervals, the finite dyadic tree on `[0,1)`, atomic weights and
//! weight-family generators, and the goodness predicate.
//!
//! Atom positions are exact rationals, so interval membership and all
//! parent/child geometry are decided exactly; only kernel sums downstream
//! are floating point.

use num_traits::{Signed, ToPrimitive, Zero};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational scalar used for positions and interval endpoints.
pub type Rat = num_rational::Ratio<i128>;

pub const MAX_DEPTH: u8 = 24;

/// Guard band for the log-domain goodness comparison; ties resolve to good.
const GOODNESS_GUARD: f64 = 1e-12;

/// Half-open dyadic interval `[index 2^-level, (index+1) 2^-level)`.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub level: u8,
    pub index: u32,
}

impl DyadicInterval {
    pub fn new(level: u8, index: u32) -> Self {
        debug_assert!(level <= MAX_DEPTH);
        debug_assert!((index as u64) < (1u64 << level));
        DyadicInterval { level, index }
    }

    pub const ROOT: DyadicInterval = DyadicInterval { level: 0, index: 0 };

    pub fn left(&self) -> Rat {
        Rat::new(self.index as i128, 1i128 << self.level)
    }

    pub fn right(&self) -> Rat {
        Rat::new(self.index as i128 + 1, 1i128 << self.level)
    }

    pub fn midpoint(&self) -> Rat {
        Rat::new(2 * self.index as i128 + 1, 1i128 << (self.level + 1))
    }

    /// Exact length `2^-level`.
    pub fn len(&self) -> Rat {
        Rat::new(1, 1i128 << self.level)
    }

    pub fn len_f64(&self) -> f64 {
        (0.5f64).powi(self.level as i32)
    }

    pub fn left_f64(&self) -> f64 {
        self.index as f64 * self.len_f64()
    }

    pub fn right_f64(&self) -> f64 {
        (self.index as f64 + 1.0) * self.len_f64()
    }

    pub fn parent(&self) -> Option<DyadicInterval> {
        (self.level > 0).then(|| DyadicInterval::new(self.level - 1, self.index / 2))
    }

    pub fn left_child(&self) -> DyadicInterval {
        DyadicInterval::new(self.level + 1, 2 * self.index)
    }

    pub fn right_child(&self) -> DyadicInterval {
        DyadicInterval::new(self.level + 1, 2 * self.index + 1)
    }

    pub fn children(&self) -> [DyadicInterval; 2] {
        [self.left_child(), self.right_child()]
    }

    /// Heap-style index: intervals at level l occupy `[2^l, 2^{l+1})`.
    pub fn id(&self) -> usize {
        (1usize << self.level) + self.index as usize
    }

    pub fn from_id(id: usize) -> DyadicInterval {
        let level = (usize::BITS - 1 - id.leading_zeros()) as u8;
        DyadicInterval::new(level, (id - (1 << level)) as u32)
    }

    /// True iff `other` is contained in `self` (as sets; equality counts).
    pub fn contains(&self, other: &DyadicInterval) -> bool {
        other.level >= self.level && (other.index >> (other.level - self.level)) == self.index
    }

    pub fn contains_point(&self, x: &Rat) -> bool {
        *x >= self.left() && *x < self.right()
    }

    pub fn ancestor_at(&self, level: u8) -> DyadicInterval {
        debug_assert!(level <= self.level);
        DyadicInterval::new(level, self.index >> (self.level - level))
    }

    /// The child of `self` containing `inner`; `inner` must be a proper subset.
    pub fn child_containing(&self, inner: &DyadicInterval) -> DyadicInterval {
        debug_assert!(self.contains(inner) && inner.level > self.level);
        inner.ancestor_at(self.level + 1)
    }

    /// Distance from the closed hull of the interval to a point, exact.
    pub fn dist_to_point(&self, x: &Rat) -> Rat {
        let (a, b) = (self.left(), self.right());
        if *x < a {
            a - x
        } else if *x > b {
            x - &b
        } else {
            Rat::zero()
        }
    }

    /// Distance between the closed hulls of two intervals, exact.
    pub fn dist_to_interval(&self, other: &DyadicInterval) -> Rat {
        if other.left() > self.right() {
            other.left() - self.right()
        } else if self.left() > other.right() {
            self.left() - other.right()
        } else {
            Rat::zero()
        }
    }

    /// Endpoints of the concentric tripling `3I` (not clipped to `[0,1)`).
    pub fn tripled(&self) -> (Rat, Rat) {
        (self.left() - self.len(), self.right() + self.len())
    }
}

/// Finite binary tree of dyadic intervals under the root `[0,1)`.
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct DyadicTree {
    pub depth: u8,
}

impl DyadicTree {
    pub fn root(&self) -> DyadicInterval {
        DyadicInterval::ROOT
    }

    /// Number of intervals, `2^{depth+1} - 1`.
    pub fn interval_count(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    pub fn contains(&self, interval: &DyadicInterval) -> bool {
        interval.level <= self.depth
    }

    pub fn is_leaf(&self, interval: &DyadicInterval) -> bool {
        interval.level == self.depth
    }

    /// All intervals, coarse to fine, left to right within a level.
    pub fn intervals(&self) -> impl Iterator<Item = DyadicInterval> + '_ {
        (0..=self.depth)
            .flat_map(|level| (0..(1u32 << level)).map(move |index| DyadicInterval { level, index }))
    }

    pub fn non_leaves(&self) -> impl Iterator<Item = DyadicInterval> + '_ {
        self.intervals().filter(|i| i.level < self.depth)
    }

    pub fn leaves(&self) -> impl Iterator<Item = DyadicInterval> + '_ {
        let d = self.depth;
        (0..(1u32 << d)).map(move |index| DyadicInterval { level: d, index })
    }
}

pub fn build_tree(depth: u8) -> Result<DyadicTree> {
    if depth < 1 || depth > MAX_DEPTH {
        return Err(Error::Config(format!(
            "tree depth must be in 1..={MAX_DEPTH}, got {depth}"
        )));
    }
    Ok(DyadicTree { depth })
}

/// Point mass: exact position in `[0,1)`, positive mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub pos: Rat,
    pub pos_f: f64,
    pub mass: f64,
}

impl Atom {
    pub fn new(pos: Rat, mass: f64) -> Self {
        let pos_f = rat_to_f64(&pos);
        Atom { pos, pos_f, mass }
    }
}

pub fn rat_to_f64(x: &Rat) -> f64 {
    x.to_f64()
        .unwrap_or_else(|| x.numer().to_f64().unwrap() / x.denom().to_f64().unwrap())
}

/// Finite atomic nonnegative measure on `[0,1)`, atoms sorted by position.
#[derive(Clone, Debug, Default)]
pub struct Weight {
    atoms: Vec<Atom>,
}

impl Weight {
    /// Builds a weight from `(position, mass)` pairs; sorts and validates.
    pub fn new(mut atoms: Vec<Atom>) -> Result<Weight> {
        atoms.sort_by(|a, b| a.pos.cmp(&b.pos));
        for pair in atoms.windows(2) {
            if pair[0].pos == pair[1].pos {
                return Err(Error::Config(format!(
                    "duplicate atom position {}",
                    pair[0].pos
                )));
            }
        }
        for a in &atoms {
            if !(a.mass > 0.0) || !a.mass.is_finite() {
                return Err(Error::Config(format!("atom mass must be positive, got {}", a.mass)));
            }
            if a.pos.is_negative() || a.pos >= Rat::new(1, 1) {
                return Err(Error::Config(format!("atom position {} outside [0,1)", a.pos)));
            }
        }
        Ok(Weight { atoms })
    }

    pub fn empty() -> Weight {
        Weight { atoms: Vec::new() }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Contiguous index range of atoms lying in `I`, decided exactly.
    pub fn range(&self, interval: &DyadicInterval) -> std::ops::Range<usize> {
        let left = interval.left();
        let right = interval.right();
        let lo = self.atoms.partition_point(|a| a.pos < left);
        let hi = self.atoms.partition_point(|a| a.pos < right);
        lo..hi
    }

    pub fn mass(&self, interval: &DyadicInterval) -> f64 {
        self.atoms[self.range(interval)].iter().map(|a| a.mass).sum()
    }

    pub fn atom_count(&self, interval: &DyadicInterval) -> usize {
        self.range(interval).len()
    }

    /// Checks the standing assumption that no atom sits on a grid endpoint
    /// of the tree (levels `0..=depth`).
    pub fn validate_for_tree(&self, tree: &DyadicTree) -> Result<()> {
        let scale = Rat::new(1i128 << tree.depth, 1);
        for a in &self.atoms {
            if (a.pos * scale).is_integer() {
                return Err(Error::Config(format!(
                    "atom at {} coincides with a dyadic endpoint of depth {}",
                    a.pos, tree.depth
                )));
            }
        }
        Ok(())
    }

    /// Translates all atom positions by `shift` modulo 1 (grid-shift emulation).
    pub fn translate(&self, shift: &Rat) -> Result<Weight> {
        let one = Rat::new(1, 1);
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let mut p = a.pos + shift;
                while p >= one {
                    p -= one;
                }
                while p.is_negative() {
                    p += one;
                }
                Atom::new(p, a.mass)
            })
            .collect();
        Weight::new(atoms)
    }

    pub fn scale(&self, factor: f64) -> Weight {
        Weight {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom::new(a.pos, a.mass * factor))
                .collect(),
        }
    }
}

/// A pair of weights with disjoint atom supports.
#[derive(Clone, Debug)]
pub struct WeightPair {
    pub sigma: Weight,
    pub w: Weight,
}

impl WeightPair {
    pub fn new(sigma: Weight, w: Weight) -> Result<WeightPair> {
        let mut i = 0;
        let mut j = 0;
        while i < sigma.atoms.len() && j < w.atoms.len() {
            match sigma.atoms[i].pos.cmp(&w.atoms[j].pos) {
                std::cmp::Ordering::Equal => {
                    return Err(Error::Config(format!(
                        "sigma and w share a point mass at {}",
                        sigma.atoms[i].pos
                    )))
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        Ok(WeightPair { sigma, w })
    }

    /// The same pair with the weight roles exchanged.
    pub fn dual(&self) -> WeightPair {
        WeightPair {
            sigma: self.w.clone(),
            w: self.sigma.clone(),
        }
    }
}

/// Which of the two goodness definitions governs `is_good`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoodnessForm {
    /// Distance to the boundary of either child of every much-longer grid
    /// interval (the form used by the grid-based arguments). Default.
    ChildBoundary,
    /// Distance to the boundary of every much-longer ancestor.
    IntervalBoundary,
}

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct GoodnessParams {
    pub epsilon: f64,
    pub r: u8,
    pub form: GoodnessForm,
}

impl Default for GoodnessParams {
    fn default() -> Self {
        GoodnessParams {
            epsilon: 0.2,
            r: 2,
            form: GoodnessForm::ChildBoundary,
        }
    }
}

impl GoodnessParams {
    pub fn new(epsilon: f64, r: u8) -> Result<GoodnessParams> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
        }
        if r < 2 {
            return Err(Error::Config(format!("r must be at least 2, got {r}")));
        }
        Ok(GoodnessParams {
            epsilon,
            r,
            form: GoodnessForm::ChildBoundary,
        })
    }
}

/// Log-domain comparison `|J|^eps |I|^(1-eps) <= d`, ties resolving to good.
fn good_distance(d: &Rat, j_level: u8, i_level: u8, epsilon: f64) -> bool {
    if d.is_zero() {
        return false;
    }
    let log_d = rat_to_f64(d).log2();
    let required = -(epsilon * j_level as f64) - (1.0 - epsilon) * i_level as f64;
    required <= log_d + GOODNESS_GUARD
}

/// `(epsilon, r)`-goodness of a grid interval `J` inside the tree.
pub fn is_good(j: &DyadicInterval, params: &GoodnessParams, tree: &DyadicTree) -> Result<bool> {
    if !tree.contains(j) {
        return Err(Error::Domain(format!(
            "interval at level {} exceeds tree depth {}",
            j.level, tree.depth
        )));
    }
    match params.form {
        GoodnessForm::ChildBoundary => {
            // For every grid I with |I| >= 2^{r+1} |J| the distance from J to
            // the boundary of either child of I is the distance from J to the
            // nearest grid point one level below I.
            if j.level < params.r + 1 {
                return Ok(true);
            }
            for i_level in 0..=(j.level - params.r - 1) {
                let d = dist_to_grid(j, i_level + 1);
                if !good_distance(&d, j.level, i_level, params.epsilon) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        GoodnessForm::IntervalBoundary => {
            if j.level < params.r {
                return Ok(true);
            }
            for i_level in 0..=(j.level - params.r) {
                let anc = j.ancestor_at(i_level);
                let d = std::cmp::min(j.dist_to_point(&anc.left()), j.dist_to_point(&anc.right()));
                if !good_distance(&d, j.level, i_level, params.epsilon) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

/// Pair form of goodness: `dist(J, boundary of I) >= |I|^(1-eps) |J|^eps`
/// for `J` contained in `I`. Used by the partition-based Dini constant.
pub fn is_pair_good(i: &DyadicInterval, j: &DyadicInterval, epsilon: f64) -> bool {
    debug_assert!(i.contains(j));
    let d = std::cmp::min(j.dist_to_point(&i.left()), j.dist_to_point(&i.right()));
    good_distance(&d, j.level, i.level, epsilon)
}

/// Distance from `J` to the nearest multiple of `2^-grid_level`, exact.
fn dist_to_grid(j: &DyadicInterval, grid_level: u8) -> Rat {
    debug_assert!(grid_level <= j.level);
    let shift = j.level - grid_level;
    let step = 1u32 << shift;
    let lo = (j.index >> shift) << shift;
    let hi = lo + step;
    // Grid points adjacent to J are lo*2^-level and hi*2^-level; J touches
    // one of them iff its index is flush against the block.
    if j.index == lo || j.index + 1 == hi {
        return Rat::zero();
    }
    let scale = 1i128 << j.level;
    let below = Rat::new((j.index - lo) as i128, scale);
    let above = Rat::new((hi - (j.index + 1)) as i128, scale);
    std::cmp::min(below, above)
}

/// Which weight of a pair a generated family feeds; fixes the per-leaf atom
/// offset (1/3 of the leaf for sigma, 2/3 for w) so generated pairs always
/// have disjoint supports.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Sigma,
    W,
}

impl Side {
    fn offset(&self) -> Rat {
        match self {
            Side::Sigma => Rat::new(1, 3),
            Side::W => Rat::new(2, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    /// Equal mass on every leaf.
    Uniform,
    /// Mass of leaf `[a,b)` equal to `b^alpha - a^alpha`; requires `alpha > 0`.
    Power { alpha: f64 },
    /// Middle-half removal carried through `levels` dyadic levels; equal mass
    /// on the surviving cells.
    Cantor { levels: u8 },
    /// I.i.d. uniform `(0,1]` leaf masses, normalized to total mass 1.
    RandomMasses,
    /// Random dyadic martingale: each split gives a child at least
    /// `theta_min` of the parent mass. Doubling with constant `theta_min^2`.
    Doubling { theta_min: f64 },
    /// Atoms given verbatim.
    ExplicitAtoms { atoms: Vec<ExplicitAtom> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitAtom {
    /// Exact position as a fraction string, e.g. `"3/16"`.
    pub pos: String,
    pub mass: f64,
}

/// Serialized form of a weight specification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightSpec {
    #[serde(flatten)]
    pub family: WeightFamily,
    pub depth: u8,
    pub seed: u64,
    pub side: Side,
}

impl WeightSpec {
    pub fn realize(&self) -> Result<Weight> {
        let tree = build_tree(self.depth)?;
        generate_weight(&self.family, &tree, self.seed, self.side)
    }
}

pub fn parse_rat(s: &str) -> Result<Rat> {
    let bad = || Error::Config(format!("cannot parse exact rational from {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: i128 = n.trim().parse().map_err(|_| bad())?;
            let d: i128 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            Ok(Rat::new(n, d))
        }
        None => {
            let n: i128 = s.trim().parse().map_err(|_| bad())?;
            Ok(Rat::new(n, 1))
        }
    }
}

pub fn format_rat(x: &Rat) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

/// Deterministic weight generation; fixed `(family, tree, seed, side)` always
/// yields the same weight.
pub fn generate_weight(
    family: &WeightFamily,
    tree: &DyadicTree,
    seed: u64,
    side: Side,
) -> Result<Weight> {
    let depth = tree.depth;
    let n_leaves = 1usize << depth;
    // atom positions (leaf + offset) * 2^-depth
    let leaf_pos = |leaf: u32| -> Rat {
        (Rat::new(leaf as i128, 1) + side.offset()) * Rat::new(1, 1i128 << depth)
    };
    let masses: Vec<(u32, f64)> = match family {
        WeightFamily::Uniform => {
            let m = 1.0 / n_leaves as f64;
            (0..n_leaves as u32).map(|i| (i, m)).collect()
        }
        WeightFamily::Power { alpha } => {
            if !(*alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::Config(format!(
                    "power family needs alpha > 0 for finite mass, got {alpha}"
                )));
            }
            let h = 1.0 / n_leaves as f64;
            (0..n_leaves as u32)
                .map(|i| {
                    let a = i as f64 * h;
                    let b = (i + 1) as f64 * h;
                    (i, b.powf(*alpha) - a.powf(*alpha))
                })
                .filter(|&(_, m)| m > 0.0)
                .collect()
        }
        WeightFamily::Cantor { levels } => {
            if *levels > depth {
                return Err(Error::Config(format!(
                    "cantor levels {levels} exceed tree depth {depth}"
                )));
            }
            let mut kept: Vec<u32> = Vec::new();
            for cell in 0..(1u32 << levels) {
                // Inspect dyadic digits in pairs from the top; a cell survives
                // middle-half removal iff every pair is 00 or 11.
                let mut ok = true;
                let mut bits = *levels;
                while bits >= 2 {
                    let pair = (cell >> (bits - 2)) & 0b11;
                    if pair == 0b01 || pair == 0b10 {
                        ok = false;
                        break;
                    }
                    bits -= 2;
                }
                if ok {
                    kept.push(cell);
                }
            }
            let m = 1.0 / kept.len() as f64;
            kept.into_iter()
                .map(|cell| (cell << (depth - levels), m))
                .collect()
        }
        WeightFamily::RandomMasses => {
            let mut rng = StdRng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..n_leaves).map(|_| 1.0 - rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter()
                .enumerate()
                .map(|(i, m)| (i as u32, m / total))
                .collect()
        }
        WeightFamily::Doubling { theta_min } => {
            if !(*theta_min > 0.0 && *theta_min <= 0.5) {
                return Err(Error::Config(format!(
                    "doubling theta_min must lie in (0, 1/2], got {theta_min}"
                )));
            }
            let mut rng = StdRng::seed_from_u64(seed);
            let mut masses = vec![1.0f64];
            for _ in 0..depth {
                let mut next = Vec::with_capacity(masses.len() * 2);
                for m in &masses {
                    let theta = theta_min + (1.0 - 2.0 * theta_min) * rng.gen::<f64>();
                    next.push(m * theta);
                    next.push(m * (1.0 - theta));
                }
                masses = next;
            }
            masses
                .into_iter()
                .enumerate()
                .map(|(i, m)| (i as u32, m))
                .collect()
        }
        WeightFamily::ExplicitAtoms { atoms } => {
            let parsed = atoms
                .iter()
                .map(|a| Ok(Atom::new(parse_rat(&a.pos)?, a.mass)))
                .collect::<Result<Vec<_>>>()?;
            let weight = Weight::new(parsed)?;
            weight.validate_for_tree(tree)?;
            return Ok(weight);
        }
    };
    let atoms = masses
        .into_iter()
        .map(|(leaf, mass)| Atom::new(leaf_pos(leaf), mass))
        .collect();
    Weight::new(atoms)
}
