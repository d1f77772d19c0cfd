//! Weighted Haar basis: analysis/synthesis, martingale differences, and the
//! good-interval projection.

use std::collections::BTreeMap;

use crate::dyadic::{is_good, DyadicInterval, DyadicTree, GoodnessParams, Weight};
use crate::error::{Error, Result};

/// A function known at the atoms of a weight, i.e. an element of L²(weight).
#[derive(Clone, Debug)]
pub struct WeightedFunction {
    pub values: Vec<f64>,
}

impl WeightedFunction {
    pub fn new(weight: &Weight, values: Vec<f64>) -> Result<WeightedFunction> {
        if values.len() != weight.len() {
            return Err(Error::Config(format!(
                "function has {} values for a weight with {} atoms",
                values.len(),
                weight.len()
            )));
        }
        Ok(WeightedFunction { values })
    }

    pub fn zero(weight: &Weight) -> WeightedFunction {
        WeightedFunction {
            values: vec![0.0; weight.len()],
        }
    }

    pub fn constant(weight: &Weight, c: f64) -> WeightedFunction {
        WeightedFunction {
            values: vec![c; weight.len()],
        }
    }

    /// Indicator of a dyadic interval, as a function on the atoms.
    pub fn indicator(weight: &Weight, interval: &DyadicInterval) -> WeightedFunction {
        let mut values = vec![0.0; weight.len()];
        for v in &mut values[weight.range(interval)] {
            *v = 1.0;
        }
        WeightedFunction { values }
    }

    pub fn inner(&self, other: &WeightedFunction, weight: &Weight) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(weight.atoms())
            .map(|((a, b), atom)| a * b * atom.mass)
            .sum()
    }

    pub fn norm_sq(&self, weight: &Weight) -> f64 {
        self.values
            .iter()
            .zip(weight.atoms())
            .map(|(v, atom)| v * v * atom.mass)
            .sum()
    }

    pub fn norm(&self, weight: &Weight) -> f64 {
        self.norm_sq(weight).sqrt()
    }

    /// Total integral ∫ f dσ.
    pub fn integral(&self, weight: &Weight) -> f64 {
        self.values
            .iter()
            .zip(weight.atoms())
            .map(|(v, atom)| v * atom.mass)
            .sum()
    }

    /// Weighted average over an interval; `None` when the interval is massless.
    pub fn average(&self, weight: &Weight, interval: &DyadicInterval) -> Option<f64> {
        let range = weight.range(interval);
        let mut num = 0.0;
        let mut den = 0.0;
        for (v, atom) in self.values[range.clone()].iter().zip(&weight.atoms()[range]) {
            num += v * atom.mass;
            den += atom.mass;
        }
        (den > 0.0).then(|| num / den)
    }

    pub fn axpy(&mut self, alpha: f64, other: &WeightedFunction) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }
}

/// The weighted Haar function of an interval: positive on the left child,
/// negative on the right, unit norm, weight-mean zero. Both children must
/// carry mass.
pub fn haar_function(weight: &Weight, interval: &DyadicInterval) -> Result<WeightedFunction> {
    let left = interval.left_child();
    let right = interval.right_child();
    let m_left = weight.mass(&left);
    let m_right = weight.mass(&right);
    if m_left <= 0.0 || m_right <= 0.0 {
        return Err(Error::UndefinedHaar(*interval));
    }
    let total = m_left + m_right;
    let scale = (m_left * m_right / total).sqrt();
    let mut values = vec![0.0; weight.len()];
    for v in &mut values[weight.range(&left)] {
        *v = scale / m_left;
    }
    for v in &mut values[weight.range(&right)] {
        *v = -scale / m_right;
    }
    Ok(WeightedFunction { values })
}

/// Haar expansion of a function: root average plus a sparse coefficient map
/// over the intervals where both children carry mass.
#[derive(Clone, Debug)]
pub struct HaarCoefficients {
    pub root_mean: f64,
    pub coeffs: BTreeMap<DyadicInterval, f64>,
}

impl HaarCoefficients {
    /// Squared norm via Parseval.
    pub fn norm_sq(&self, root_mass: f64) -> f64 {
        self.root_mean * self.root_mean * root_mass
            + self.coeffs.values().map(|c| c * c).sum::<f64>()
    }
}

/// Per-interval subtree sums of mass and of `f·mass`, indexed by heap id.
/// The workhorse behind analysis and averages; O(atoms · depth).
pub(crate) fn subtree_sums(
    weight: &Weight,
    f: &WeightedFunction,
    tree: &DyadicTree,
) -> (Vec<f64>, Vec<f64>) {
    let n = 1usize << (tree.depth + 1);
    let mut mass = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for (atom, v) in weight.atoms().iter().zip(&f.values) {
        // Leaf containing the atom, found by exact position arithmetic.
        let scaled = atom.pos * crate::dyadic::Rat::new(1i128 << tree.depth, 1);
        let leaf = scaled.floor().to_integer() as u32;
        let mut id = DyadicInterval::new(tree.depth, leaf).id();
        while id >= 1 {
            mass[id] += atom.mass;
            sum[id] += atom.mass * v;
            id /= 2;
        }
    }
    (mass, sum)
}

pub fn analyze(weight: &Weight, f: &WeightedFunction, tree: &DyadicTree) -> HaarCoefficients {
    let (mass, sum) = subtree_sums(weight, f, tree);
    let root_mass = mass[1];
    let root_mean = if root_mass > 0.0 { sum[1] / root_mass } else { 0.0 };
    let mut coeffs = BTreeMap::new();
    for i in tree.non_leaves() {
        let id = i.id();
        let (ml, mr) = (mass[2 * id], mass[2 * id + 1]);
        if ml <= 0.0 || mr <= 0.0 {
            continue;
        }
        let scale = (ml * mr / (ml + mr)).sqrt();
        let c = scale * (sum[2 * id] / ml - sum[2 * id + 1] / mr);
        coeffs.insert(i, c);
    }
    HaarCoefficients { root_mean, coeffs }
}

pub fn synthesize(weight: &Weight, c: &HaarCoefficients, tree: &DyadicTree) -> WeightedFunction {
    let mut out = WeightedFunction::constant(weight, c.root_mean);
    for (interval, coeff) in &c.coeffs {
        if *coeff == 0.0 {
            continue;
        }
        let h = haar_function(weight, interval)
            .expect("coefficient stored at an interval with a massless child");
        out.axpy(*coeff, &h);
    }
    let _ = tree;
    out
}

/// Martingale difference at a non-leaf interval: the children averages minus
/// the parent average, as a function on the atoms. Zero outside the interval,
/// and identically zero on any massless child (there is nothing there).
pub fn martingale_difference(
    weight: &Weight,
    f: &WeightedFunction,
    interval: &DyadicInterval,
) -> WeightedFunction {
    let parent_avg = f.average(weight, interval).unwrap_or(0.0);
    let mut out = WeightedFunction::zero(weight);
    for child in interval.children() {
        if let Some(avg) = f.average(weight, &child) {
            for v in &mut out.values[weight.range(&child)] {
                *v = avg - parent_avg;
            }
        }
    }
    out
}

/// Restriction of the expansion to good intervals. Idempotent; only shrinks
/// the Parseval norm.
pub fn project_good(
    c: &HaarCoefficients,
    params: &GoodnessParams,
    tree: &DyadicTree,
) -> Result<HaarCoefficients> {
    let mut coeffs = BTreeMap::new();
    for (interval, coeff) in &c.coeffs {
        if is_good(interval, params, tree)? {
            coeffs.insert(*interval, *coeff);
        }
    }
    Ok(HaarCoefficients {
        root_mean: c.root_mean,
        coeffs,
    })
}
