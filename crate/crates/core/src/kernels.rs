//! Discrete kernel machinery: Poisson averages, interval energy, the
//! Cauchy-kernel transform of an atomic measure, and the monotonicity /
//! Taylor-refinement inequalities those support.

use crate::dyadic::{rat_to_f64, DyadicInterval, GoodnessParams, Weight};
use crate::error::{Error, Result};
use crate::haar::{haar_function, WeightedFunction};

/// A signed atomic measure written as a multiplier against a base weight:
/// masses `m_i * multiplier_i` at the weight's atoms. Covers `f dσ`,
/// `1_A dσ`, and signed measures dominated by the base.
#[derive(Clone, Debug)]
pub struct SignedDensity<'a> {
    pub weight: &'a Weight,
    pub multiplier: Vec<f64>,
}

impl<'a> SignedDensity<'a> {
    pub fn new(weight: &'a Weight, multiplier: Vec<f64>) -> Result<SignedDensity<'a>> {
        if multiplier.len() != weight.len() {
            return Err(Error::Config(format!(
                "multiplier has {} entries for a weight with {} atoms",
                multiplier.len(),
                weight.len()
            )));
        }
        Ok(SignedDensity { weight, multiplier })
    }

    /// The weight itself, multiplier identically one.
    pub fn whole(weight: &'a Weight) -> SignedDensity<'a> {
        SignedDensity {
            weight,
            multiplier: vec![1.0; weight.len()],
        }
    }

    /// The weight restricted to an interval.
    pub fn restricted(weight: &'a Weight, interval: &DyadicInterval) -> SignedDensity<'a> {
        let mut multiplier = vec![0.0; weight.len()];
        for m in &mut multiplier[weight.range(interval)] {
            *m = 1.0;
        }
        SignedDensity { weight, multiplier }
    }

    /// The weight restricted to the complement of an interval.
    pub fn complement(weight: &'a Weight, interval: &DyadicInterval) -> SignedDensity<'a> {
        let mut multiplier = vec![1.0; weight.len()];
        for m in &mut multiplier[weight.range(interval)] {
            *m = 0.0;
        }
        SignedDensity { weight, multiplier }
    }

    /// `f dσ` for a function on the weight's atoms.
    pub fn from_function(weight: &'a Weight, f: &WeightedFunction) -> SignedDensity<'a> {
        SignedDensity {
            weight,
            multiplier: f.values.clone(),
        }
    }

    /// Zeroes the multiplier outside the interval.
    pub fn restrict(mut self, interval: &DyadicInterval) -> SignedDensity<'a> {
        let range = self.weight.range(interval);
        for (i, m) in self.multiplier.iter_mut().enumerate() {
            if !range.contains(&i) {
                *m = 0.0;
            }
        }
        self
    }

    pub fn total(&self) -> f64 {
        self.weight
            .atoms()
            .iter()
            .zip(&self.multiplier)
            .map(|(a, m)| a.mass * m)
            .sum()
    }

    /// True iff the measure vanishes on the closed interval `I` (support
    /// disjointness checked atomwise, exactly in position).
    pub fn vanishes_on(&self, interval: &DyadicInterval) -> bool {
        self.multiplier[self.weight.range(interval)]
            .iter()
            .all(|m| *m == 0.0)
    }
}

/// Distance from a point to an interval, zero inside.
fn dist_point_interval(x: f64, interval: &DyadicInterval) -> f64 {
    let a = interval.left_f64();
    let b = interval.right_f64();
    (a - x).max(x - b).max(0.0)
}

/// Poisson average of a signed atomic measure over an interval:
/// Σ m_i mult_i |I| / (|I| + dist(x_i, I))².
pub fn poisson(density: &SignedDensity, interval: &DyadicInterval) -> f64 {
    let len = interval.len_f64();
    density
        .weight
        .atoms()
        .iter()
        .zip(&density.multiplier)
        .filter(|(_, m)| **m != 0.0)
        .map(|(a, m)| {
            let d = dist_point_interval(a.pos_f, interval);
            a.mass * m * len / ((len + d) * (len + d))
        })
        .sum()
}

/// Normalized energy of a weight over an interval:
/// E(w,I)² = w(I)^{-2} ΣΣ m_i m_j (x_i − x_j)² / |I|², via the variance
/// identity E² = 2 Var_w(x) / |I|². Returns 0 when the interval is massless.
pub fn energy(weight: &Weight, interval: &DyadicInterval) -> f64 {
    let range = weight.range(interval);
    if range.is_empty() {
        return 0.0;
    }
    let atoms = &weight.atoms()[range];
    if atoms.len() == 1 {
        return 0.0;
    }
    let mut mass = 0.0;
    let mut sum_x = 0.0;
    let mut sum_xx = 0.0;
    // Center coordinates at the interval midpoint for numerical stability.
    let c = rat_to_f64(&interval.midpoint());
    for a in atoms {
        let x = a.pos_f - c;
        mass += a.mass;
        sum_x += a.mass * x;
        sum_xx += a.mass * x * x;
    }
    let var = (mass * sum_xx - sum_x * sum_x).max(0.0);
    let len = interval.len_f64();
    (2.0 * var).sqrt() / (mass * len)
}

/// Kernel transform of a signed atomic measure at points off its support:
/// (Hν)(y) = Σ m_i mult_i / (y − x_i). Terms with |y − x_i| < delta are
/// dropped when a truncation is supplied.
pub fn hilbert_apply(density: &SignedDensity, points: &[f64], delta: Option<f64>) -> Result<Vec<f64>> {
    hilbert_apply_signed(density, points, delta, 1.0)
}

/// Same as `hilbert_apply` with an explicit kernel sign; `sign = -1` flips
/// the convention (exposed for fault-injection checks).
pub fn hilbert_apply_signed(
    density: &SignedDensity,
    points: &[f64],
    delta: Option<f64>,
    sign: f64,
) -> Result<Vec<f64>> {
    let delta = delta.unwrap_or(0.0);
    points
        .iter()
        .map(|&y| {
            let mut acc = 0.0;
            for (a, m) in density.weight.atoms().iter().zip(&density.multiplier) {
                if *m == 0.0 {
                    continue;
                }
                let gap = y - a.pos_f;
                if gap == 0.0 {
                    return Err(Error::Singularity(y));
                }
                if gap.abs() < delta {
                    continue;
                }
                acc += a.mass * m / gap;
            }
            Ok(sign * acc)
        })
        .collect()
}

/// Bilinear pairing ⟨Hν, g⟩_w = Σ_j m^w_j g_j (Hν)(y_j).
pub fn pairing(density: &SignedDensity, w: &Weight, g: &WeightedFunction) -> Result<f64> {
    pairing_signed(density, w, g, 1.0)
}

pub fn pairing_signed(
    density: &SignedDensity,
    w: &Weight,
    g: &WeightedFunction,
    sign: f64,
) -> Result<f64> {
    let points: Vec<f64> = w.atoms().iter().map(|a| a.pos_f).collect();
    let transformed = hilbert_apply_signed(density, &points, None, sign)?;
    Ok(transformed
        .iter()
        .zip(&g.values)
        .zip(w.atoms())
        .map(|((t, g), a)| t * g * a.mass)
        .sum())
}

#[derive(Clone, Debug)]
pub struct MonotonicityReport {
    /// |⟨Hν, h^w_J⟩_w|
    pub signed_pairing_abs: f64,
    /// ⟨Hμ, h^w_J⟩_w
    pub dominating_pairing: f64,
    pub holds: bool,
}

/// Positivity/domination of Haar pairings against measures supported off an
/// interval containing `J`: with |ν| ≤ μ outside `I ⊇ J`,
/// |⟨Hν, h^w_J⟩_w| ≤ ⟨Hμ, h^w_J⟩_w and the right side is nonnegative.
pub fn monotonicity_check(
    nu: &SignedDensity,
    mu: &SignedDensity,
    outside: &DyadicInterval,
    j: &DyadicInterval,
    w: &Weight,
) -> Result<MonotonicityReport> {
    monotonicity_check_signed(nu, mu, outside, j, w, 1.0)
}

pub fn monotonicity_check_signed(
    nu: &SignedDensity,
    mu: &SignedDensity,
    outside: &DyadicInterval,
    j: &DyadicInterval,
    w: &Weight,
    sign: f64,
) -> Result<MonotonicityReport> {
    if !outside.contains(j) {
        return Err(Error::Precondition(format!(
            "J (level {}, index {}) not contained in the excluded interval",
            j.level, j.index
        )));
    }
    if !nu.vanishes_on(outside) || !mu.vanishes_on(outside) {
        return Err(Error::Precondition(
            "measures must vanish on the excluded interval".into(),
        ));
    }
    if !std::ptr::eq(nu.weight, mu.weight) && nu.weight.atoms() != mu.weight.atoms() {
        return Err(Error::Precondition(
            "domination check requires a common base weight".into(),
        ));
    }
    for (n, m) in nu.multiplier.iter().zip(&mu.multiplier) {
        if n.abs() > m + 1e-15 {
            return Err(Error::Precondition(format!(
                "multiplier not dominated: |{n}| > {m}"
            )));
        }
    }
    let h = haar_function(w, j)?;
    let signed_pairing_abs = pairing_signed(nu, w, &h, sign)?.abs();
    let dominating_pairing = pairing_signed(mu, w, &h, sign)?;
    let holds =
        dominating_pairing >= -1e-12 && signed_pairing_abs <= dominating_pairing + 1e-12;
    Ok(MonotonicityReport {
        signed_pairing_abs,
        dominating_pairing,
        holds,
    })
}

#[derive(Clone, Debug)]
pub struct TaylorReport {
    /// P(μ, J*) · |⟨x/|J*|, h^w_J⟩_w|
    pub lhs: f64,
    /// ⟨Hμ, h^w_J⟩_w
    pub pairing_term: f64,
    /// (|J|/|I|)^{1−ε} · P(μ, J) · √w(J)
    pub error_term: f64,
    /// lhs / (pairing_term + c · error_term)
    pub ratio: f64,
}

/// Linearization bound: the Poisson-modulated linear pairing over `J*` is
/// controlled by the full kernel pairing plus a goodness-decay error term,
/// for μ ≥ 0 supported off `I` and `J ⊂ J* ⋐ I` with `J` good.
pub fn taylor_refinement(
    mu: &SignedDensity,
    j: &DyadicInterval,
    j_star: &DyadicInterval,
    i: &DyadicInterval,
    w: &Weight,
    params: &GoodnessParams,
    c: f64,
) -> Result<TaylorReport> {
    if !j_star.contains(j) || !i.contains(j_star) || i.level >= j_star.level {
        return Err(Error::Precondition(
            "need J ⊂ J* strictly inside I".into(),
        ));
    }
    if !mu.vanishes_on(i) {
        return Err(Error::Precondition("measure must vanish on I".into()));
    }
    if mu.multiplier.iter().any(|m| *m < 0.0) {
        return Err(Error::Precondition("measure must be nonnegative".into()));
    }
    let h = haar_function(w, j)?;
    // ⟨x/|J*|, h⟩_w over the atoms of J (h vanishes elsewhere).
    let len_star = j_star.len_f64();
    let linear: f64 = w
        .atoms()
        .iter()
        .zip(&h.values)
        .map(|(a, hv)| a.mass * hv * (a.pos_f / len_star))
        .sum();
    let lhs = poisson(mu, j_star) * linear.abs();
    let pairing_term = pairing(mu, w, &h)?;
    let decay = (j.len_f64() / i.len_f64()).powf(1.0 - params.epsilon);
    let error_term = decay * poisson(mu, j) * w.mass(j).sqrt();
    let denom = pairing_term + c * error_term;
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / denom };
    Ok(TaylorReport {
        lhs,
        pairing_term,
        error_term,
        ratio,
    })
}
