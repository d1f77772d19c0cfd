//! Experiment runner for the two-weight Hilbert transform laboratory.
//!
//! Sweeps weight families over seed grids, runs verification suites
//! (identities, lemmas, constants, questions), and writes a JSON report,
//! deterministic CSV tables, and replayable failure instances.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use twoweight_core::dyadic::{
    build_tree, generate_weight, is_pair_good, DyadicInterval, DyadicTree, GoodnessParams, Side,
    Weight, WeightFamily, WeightPair, WeightSpec,
};
use twoweight_core::haar::{analyze, synthesize, WeightedFunction};
use twoweight_core::kernels::{
    hilbert_apply, hilbert_apply_signed, monotonicity_check_signed, SignedDensity,
};
use twoweight_core::{
    bf_reduction_check, cz_corona_split, dini_stopping_tree, f_stopping_tree,
    poisson_decay_check, quasi_orthogonality, schur_sum, split_form, stop_form_split,
    theorem_inequality_suite, weak_boundedness, DiniProfile, Error, GoodnessKind, Result,
    SplitOptions,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Identities,
    Lemmas,
    Constants,
    Questions,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Suite> {
        match s {
            "identities" => Ok(Suite::Identities),
            "lemmas" => Ok(Suite::Lemmas),
            "constants" => Ok(Suite::Constants),
            "questions" => Ok(Suite::Questions),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!(
                "unknown suite {other:?}; expected identities|lemmas|constants|questions|all"
            ))),
        }
    }
}

/// Parses a family name with optional parameter, e.g. `uniform`, `random`,
/// `cantor`, `cantor:3`, `power:0.7`, `doubling:0.3`.
pub fn parse_family(name: &str) -> Result<WeightFamily> {
    let (head, arg) = match name.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (name, None),
    };
    let num = |a: Option<&str>, default: f64| -> Result<f64> {
        match a {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("bad family parameter {s:?}"))),
        }
    };
    match head {
        "uniform" => Ok(WeightFamily::Uniform),
        "random" => Ok(WeightFamily::RandomMasses),
        "power" => Ok(WeightFamily::Power {
            alpha: num(arg, 0.5)?,
        }),
        "cantor" => Ok(WeightFamily::Cantor {
            levels: num(arg, 4.0)? as u8,
        }),
        "doubling" => Ok(WeightFamily::Doubling {
            theta_min: num(arg, 0.3)?,
        }),
        other => Err(Error::Config(format!(
            "unknown weight family {other:?}; expected uniform|random|power|cantor|doubling"
        ))),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub depth: u8,
    pub epsilon: f64,
    pub r: u8,
    pub seeds: Vec<u64>,
    pub sigma_family: String,
    pub w_family: String,
    pub suite: Suite,
    pub out: PathBuf,
    /// Kernel truncation scale for the sensitivity evidence row.
    pub delta: f64,
    /// Iteration budget for the heuristic lower-bound searches.
    pub budget: usize,
    /// Worker cap; `None` reads TWOWEIGHT_THREADS, else rayon's default.
    pub threads: Option<usize>,
    /// Test hook: flips the kernel sign inside the monotonicity suite so
    /// fault injection is observable end to end.
    #[serde(default)]
    pub fault_sign_flip: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1/2), got {}",
                self.epsilon
            )));
        }
        let norm_suites = matches!(self.suite, Suite::Constants | Suite::Questions | Suite::All);
        let cap = if norm_suites { 12 } else { 16 };
        if self.depth == 0 || self.depth > cap {
            return Err(Error::Config(format!(
                "depth {} out of range 1..={cap} for suite {:?}",
                self.depth, self.suite
            )));
        }
        if self.r == 0 {
            return Err(Error::Config("r must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Config(format!(
                "delta must be nonnegative, got {}",
                self.delta
            )));
        }
        parse_family(&self.sigma_family)?;
        parse_family(&self.w_family)?;
        Ok(())
    }

    fn params(&self) -> Result<GoodnessParams> {
        GoodnessParams::new(self.epsilon, self.r)
    }

    fn specs(&self, seed: u64) -> Result<(WeightSpec, WeightSpec)> {
        let sigma = WeightSpec {
            family: parse_family(&self.sigma_family)?,
            depth: self.depth,
            seed,
            side: Side::Sigma,
        };
        let w = WeightSpec {
            family: parse_family(&self.w_family)?,
            depth: self.depth,
            seed,
            side: Side::W,
        };
        Ok((sigma, w))
    }
}

/// One check outcome. `passed == None` marks evidence-only rows: observed
/// magnitudes of inequalities whose source constants are implicit, which
/// never gate the exit code.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckRow {
    pub seed: u64,
    pub suite: String,
    pub check: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub passed: Option<bool>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantsRow {
    pub seed: u64,
    pub depth: u8,
    pub sigma_family: String,
    pub w_family: String,
    pub a2: f64,
    pub h: f64,
    pub h_star: f64,
    pub w_const: f64,
    pub e_energy: f64,
    pub e_energy_star: f64,
    pub psi: f64,
    pub psi_star: f64,
    pub f_func: f64,
    pub f_func_star: f64,
    pub bf: f64,
    pub bf_star: f64,
    pub b_norm: f64,
    pub b_sub_norm: f64,
    pub b_sup_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioCsvRow {
    pub seed: u64,
    pub depth: u8,
    pub sigma_family: String,
    pub w_family: String,
    pub name: String,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FailureInstance {
    pub seed: u64,
    pub suite: String,
    pub check: String,
    pub detail: String,
    pub sigma_spec: WeightSpec,
    pub w_spec: WeightSpec,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub total_checks: usize,
    pub failed_checks: usize,
    pub suite_pass: BTreeMap<String, bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub rows: Vec<CheckRow>,
    pub constants: Vec<ConstantsRow>,
    pub ratios: Vec<RatioCsvRow>,
    pub failures: Vec<FailureInstance>,
    pub summary: RunSummary,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.summary.failed_checks == 0
    }
}

struct SeedOutput {
    rows: Vec<CheckRow>,
    constants: Vec<ConstantsRow>,
    ratios: Vec<RatioCsvRow>,
}

fn random_function(weight: &Weight, seed: u64, nonneg: bool) -> WeightedFunction {
    let mut rng = StdRng::seed_from_u64(seed);
    WeightedFunction {
        values: (0..weight.len())
            .map(|_| {
                if nonneg {
                    rng.gen_range(0.0..1.0)
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect(),
    }
}

struct SuiteCtx<'a> {
    config: &'a ExperimentConfig,
    params: GoodnessParams,
    tree: DyadicTree,
    pair: WeightPair,
    seed: u64,
    rows: Vec<CheckRow>,
}

impl SuiteCtx<'_> {
    fn assert_le(&mut self, suite: &str, check: &str, value: f64, threshold: f64, detail: String) {
        self.rows.push(CheckRow {
            seed: self.seed,
            suite: suite.into(),
            check: check.into(),
            value,
            threshold: Some(threshold),
            passed: Some(value <= threshold),
            detail,
        });
    }

    fn assert_ok(&mut self, suite: &str, check: &str, ok: bool, value: f64, detail: String) {
        self.rows.push(CheckRow {
            seed: self.seed,
            suite: suite.into(),
            check: check.into(),
            value,
            threshold: None,
            passed: Some(ok),
            detail,
        });
    }

    fn evidence(&mut self, suite: &str, check: &str, value: f64, detail: String) {
        self.rows.push(CheckRow {
            seed: self.seed,
            suite: suite.into(),
            check: check.into(),
            value,
            threshold: None,
            passed: None,
            detail,
        });
    }

    fn error_row(&mut self, suite: &str, check: &str, err: &Error) {
        self.rows.push(CheckRow {
            seed: self.seed,
            suite: suite.into(),
            check: check.into(),
            value: f64::NAN,
            threshold: None,
            passed: Some(false),
            detail: format!("error: {err}"),
        });
    }

    fn identities(&mut self) {
        let s = "identities";
        let seed = self.seed;
        let f = random_function(&self.pair.sigma, seed.wrapping_mul(3) + 1, false);
        let phi = random_function(&self.pair.w, seed.wrapping_mul(3) + 2, false);

        // Haar axioms: reconstruction and Parseval on this instance.
        let coeffs = analyze(&self.pair.sigma, &f, &self.tree);
        let rebuilt = synthesize(&self.pair.sigma, &coeffs, &self.tree);
        let recon = rebuilt
            .values
            .iter()
            .zip(&f.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        self.assert_le(s, "haar_reconstruction", recon, 1e-10, String::new());
        let parseval =
            (coeffs.norm_sq(self.pair.sigma.total_mass()) - f.norm_sq(&self.pair.sigma)).abs();
        let scale = f.norm_sq(&self.pair.sigma).abs() + 1.0;
        self.assert_le(s, "haar_parseval", parseval / scale, 1e-10, String::new());

        // Splitting cascade.
        let pair_ref = WeightPair::new(self.pair.sigma.clone(), self.pair.w.clone()).unwrap();
        match split_form(
            &pair_ref,
            &f,
            &phi,
            &self.tree,
            &self.params,
            SplitOptions::default(),
        ) {
            Ok(rep) => {
                let tol = 1e-9 * (rep.b.abs() + 1.0);
                self.assert_le(s, "cascade_first_split", rep.residual_first, tol, String::new());
                self.assert_le(s, "cascade_second_split", rep.residual_second, tol, String::new());
                self.assert_le(s, "cascade_third_split", rep.residual_third, tol, String::new());
            }
            Err(e) => self.error_row(s, "cascade", &e),
        }

        // Calderon-Zygmund corona regrouping.
        let f_pos = random_function(&self.pair.sigma, seed.wrapping_mul(3) + 3, true);
        match f_stopping_tree(&self.pair.sigma, &f_pos, &DyadicInterval::ROOT, &self.tree)
            .and_then(|forest| {
                cz_corona_split(&pair_ref, &f_pos, &phi, &forest, &self.tree, &self.params)
            }) {
            Ok(rep) => {
                let tol = 1e-9 * (rep.b_subset.abs() + 1.0);
                self.assert_le(s, "cz_corona_residual", rep.residual, tol, String::new());
                self.assert_ok(
                    s,
                    "cz_projection_bound",
                    rep.projection_total <= rep.phi_fluct_norm_sq + 1e-9,
                    rep.projection_total,
                    format!("bound {}", rep.phi_fluct_norm_sq),
                );
            }
            Err(e) => self.error_row(s, "cz_corona", &e),
        }

        // Dini stop-form regrouping (relaxed exponent keeps forests live).
        let dini_eps = 0.45f64;
        let dini_params = GoodnessParams::new(dini_eps, self.params.r).unwrap();
        let profile = DiniProfile::new(dini_eps).unwrap();
        let psi = twoweight_core::dini_constant(
            &pair_ref,
            &self.tree,
            &profile,
            &dini_params,
            GoodnessKind::Pair,
        );
        match dini_stopping_tree(
            &pair_ref,
            &DyadicInterval::ROOT,
            &profile,
            psi,
            &dini_params,
            GoodnessKind::Pair,
            &self.tree,
            true,
        )
        .and_then(|forest| {
            stop_form_split(
                &pair_ref,
                &f,
                &phi,
                &DyadicInterval::ROOT,
                &forest,
                &self.tree,
                &dini_params,
            )
        }) {
            Ok(rep) => {
                let tol = 1e-9 * (rep.b_stop.abs() + 1.0);
                self.assert_le(s, "stop_form_residual", rep.residual, tol, String::new());
            }
            Err(e) => self.error_row(s, "stop_form", &e),
        }

        // Support reduction: mean-zero input supported on F.
        if self.config.depth >= 4 {
            let f_int = DyadicInterval::new(1, 0);
            let mut g = random_function(&self.pair.sigma, seed.wrapping_mul(3) + 4, false);
            let range = self.pair.sigma.range(&f_int);
            let mass: f64 = self.pair.sigma.atoms()[range.clone()]
                .iter()
                .map(|a| a.mass)
                .sum();
            if mass > 0.0 {
                let mean: f64 = range
                    .clone()
                    .map(|i| self.pair.sigma.atoms()[i].mass * g.values[i])
                    .sum::<f64>()
                    / mass;
                for i in 0..g.values.len() {
                    g.values[i] = if range.contains(&i) {
                        g.values[i] - mean
                    } else {
                        0.0
                    };
                }
                let mut phi_f = phi.clone();
                let w_range = self.pair.w.range(&f_int);
                for (i, v) in phi_f.values.iter_mut().enumerate() {
                    if !w_range.contains(&i) {
                        *v = 0.0;
                    }
                }
                match bf_reduction_check(&pair_ref, &f_int, &g, &phi_f, &self.tree, &self.params) {
                    Ok(rep) => {
                        let tol = 1e-9 * (rep.b_stop.abs() + 1.0);
                        self.assert_le(
                            s,
                            "reduction_form_match",
                            (rep.b_stop - rep.b_extended).abs(),
                            tol,
                            String::new(),
                        );
                        self.assert_le(
                            s,
                            "reduction_telescoping",
                            rep.telescoping_residual,
                            1e-10,
                            String::new(),
                        );
                    }
                    Err(e) => self.error_row(s, "reduction", &e),
                }
            }
        }
    }

    fn lemmas(&mut self) {
        let s = "lemmas";
        let seed = self.seed;
        let sign = if self.config.fault_sign_flip { -1.0 } else { 1.0 };
        let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(7) + 5);

        // Domination/positivity of off-support pairings.
        let valid: Vec<DyadicInterval> = self
            .tree
            .non_leaves()
            .filter(|j| {
                self.pair.w.mass(&j.left_child()) > 0.0 && self.pair.w.mass(&j.right_child()) > 0.0
            })
            .collect();
        let mut checked = 0usize;
        let mut violations = 0usize;
        let mut first_violation = String::new();
        for _ in 0..40 {
            if valid.is_empty() {
                break;
            }
            let j = valid[rng.gen_range(0..valid.len())];
            let up = rng.gen_range(0..=j.level);
            let outside = j.ancestor_at(j.level - up);
            let mu = SignedDensity::complement(&self.pair.sigma, &outside);
            let nu_mult: Vec<f64> = mu
                .multiplier
                .iter()
                .map(|m| m * rng.gen_range(-1.0..1.0))
                .collect();
            let nu = SignedDensity::new(&self.pair.sigma, nu_mult).unwrap();
            match monotonicity_check_signed(&nu, &mu, &outside, &j, &self.pair.w, sign) {
                Ok(rep) => {
                    checked += 1;
                    if !rep.holds {
                        violations += 1;
                        if first_violation.is_empty() {
                            first_violation = format!(
                                "J level {} index {}, outside level {} index {}: |pairing| {} vs {}",
                                j.level,
                                j.index,
                                outside.level,
                                outside.index,
                                rep.signed_pairing_abs,
                                rep.dominating_pairing
                            );
                        }
                    }
                }
                Err(Error::Singularity(_)) => continue,
                Err(e) => {
                    self.error_row(s, "monotonicity", &e);
                    return;
                }
            }
        }
        self.assert_ok(
            s,
            "monotonicity",
            violations == 0 && checked > 0,
            violations as f64,
            if first_violation.is_empty() {
                format!("{checked} instances")
            } else {
                first_violation
            },
        );

        // Stopping-tree quasi-orthogonality.
        let f = random_function(&self.pair.sigma, seed.wrapping_mul(7) + 6, false);
        match f_stopping_tree(&self.pair.sigma, &f, &DyadicInterval::ROOT, &self.tree)
            .and_then(|forest| quasi_orthogonality(&forest, &self.pair.sigma, &f))
        {
            Ok(ratio) => self.assert_le(s, "quasi_orthogonality", ratio, 64.0, String::new()),
            Err(e) => self.error_row(s, "quasi_orthogonality", &e),
        }

        // Dini stopping-tree packing at the relaxed exponent.
        let dini_params = GoodnessParams::new(0.45, self.params.r).unwrap();
        let profile = DiniProfile::new(0.45).unwrap();
        let pair_ref = WeightPair::new(self.pair.sigma.clone(), self.pair.w.clone()).unwrap();
        let psi = twoweight_core::dini_constant(
            &pair_ref,
            &self.tree,
            &profile,
            &dini_params,
            GoodnessKind::Pair,
        );
        match dini_stopping_tree(
            &pair_ref,
            &DyadicInterval::ROOT,
            &profile,
            psi,
            &dini_params,
            GoodnessKind::Pair,
            &self.tree,
            true,
        ) {
            Ok(forest) => self.assert_ok(
                s,
                "dini_packing",
                true,
                forest.nodes.len() as f64,
                format!("{} nodes", forest.nodes.len()),
            ),
            Err(e) => self.error_row(s, "dini_packing", &e),
        }

        // Poisson decay of distant Haar pairings (needs depth for goodness).
        if self.config.depth >= 8 {
            let mut checked = 0usize;
            let mut violations = 0usize;
            let mut max_ratio_norm = 0.0f64;
            for _ in 0..100 {
                let s_gap = rng.gen_range(6..=8u8.min(self.config.depth - 1));
                let j_level = rng.gen_range(s_gap + 1..=self.config.depth);
                let j = DyadicInterval::new(j_level, rng.gen_range(0..(1u32 << j_level)));
                let i = j.ancestor_at(j_level - s_gap);
                if i.level == 0 || !is_pair_good(&i, &j, self.params.epsilon) {
                    continue;
                }
                let i_prime = i.ancestor_at(i.level - 1);
                match poisson_decay_check(&pair_ref, &j, &i, &i_prime, &self.params) {
                    Ok(rep) => {
                        checked += 1;
                        if !rep.holds {
                            violations += 1;
                        }
                        if rep.bound > 0.0 {
                            max_ratio_norm = max_ratio_norm.max(rep.ratio / rep.bound);
                        }
                    }
                    Err(_) => continue,
                }
            }
            self.assert_ok(
                s,
                "poisson_decay",
                violations == 0,
                max_ratio_norm,
                format!("{checked} instances"),
            );
        }

        // Off-diagonal Schur mass against the A2 characteristic (evidence).
        let a2 = twoweight_core::a2_constant(&pair_ref, &self.tree);
        if a2 > 0.0 && self.config.depth >= 3 {
            let host = DyadicInterval::new(1, 0);
            match schur_sum(&pair_ref, &host, 2.min(self.config.depth - 1), &self.tree, a2) {
                Ok(rep) => self.evidence(
                    s,
                    "schur_vs_a2",
                    rep.ratio_vs_a2_sq,
                    format!("alpha_sum {}", rep.alpha_sum),
                ),
                Err(e) => self.error_row(s, "schur_vs_a2", &e),
            }
        }
        match weak_boundedness(&pair_ref, &self.tree, self.params.r) {
            Ok(v) => self.evidence(s, "weak_boundedness", v, String::new()),
            Err(e) => self.error_row(s, "weak_boundedness", &e),
        }
    }

    fn constants(&mut self, assert_finite: bool) -> (Vec<ConstantsRow>, Vec<RatioCsvRow>) {
        let s = if assert_finite { "constants" } else { "questions" };
        let profile = match DiniProfile::new(self.config.epsilon) {
            Ok(p) => p,
            Err(e) => {
                self.error_row(s, "profile", &e);
                return (Vec::new(), Vec::new());
            }
        };
        let pair_ref = WeightPair::new(self.pair.sigma.clone(), self.pair.w.clone()).unwrap();
        match theorem_inequality_suite(
            &pair_ref,
            &self.tree,
            &self.params,
            &profile,
            GoodnessKind::Pair,
            6,
            self.config.budget,
            self.seed,
        ) {
            Ok((report, ratios)) => {
                let row = ConstantsRow {
                    seed: self.seed,
                    depth: self.config.depth,
                    sigma_family: self.config.sigma_family.clone(),
                    w_family: self.config.w_family.clone(),
                    a2: report.a2,
                    h: report.h,
                    h_star: report.h_star,
                    w_const: report.w_const,
                    e_energy: report.e_energy,
                    e_energy_star: report.e_energy_star,
                    psi: report.psi,
                    psi_star: report.psi_star,
                    f_func: report.f_func,
                    f_func_star: report.f_func_star,
                    bf: report.bf,
                    bf_star: report.bf_star,
                    b_norm: report.b_norm,
                    b_sub_norm: report.b_sub_norm,
                    b_sup_norm: report.b_sup_norm,
                };
                let ratio_rows: Vec<RatioCsvRow> = ratios
                    .iter()
                    .map(|r| RatioCsvRow {
                        seed: self.seed,
                        depth: self.config.depth,
                        sigma_family: self.config.sigma_family.clone(),
                        w_family: self.config.w_family.clone(),
                        name: r.name.clone(),
                        numerator: r.numerator,
                        denominator: r.denominator,
                        ratio: r.ratio,
                    })
                    .collect();
                for r in &ratio_rows {
                    if assert_finite {
                        self.assert_ok(
                            s,
                            "ratio_finite",
                            r.ratio.is_finite(),
                            r.ratio,
                            r.name.clone(),
                        );
                    } else {
                        self.evidence(s, "ratio", r.ratio, r.name.clone());
                    }
                }
                if !assert_finite && self.config.delta > 0.0 {
                    self.truncation_sensitivity(s);
                }
                (vec![row], ratio_rows)
            }
            Err(e) => {
                self.error_row(s, "constants_suite", &e);
                (Vec::new(), Vec::new())
            }
        }
    }

    /// Evidence: how much the delta-truncated kernel shifts the transform of
    /// the full sigma mass at the w atoms.
    fn truncation_sensitivity(&mut self, suite: &str) {
        let density = SignedDensity::whole(&self.pair.sigma);
        let points: Vec<f64> = self.pair.w.atoms().iter().map(|a| a.pos_f).collect();
        let full = hilbert_apply(&density, &points, None);
        let cut = hilbert_apply_signed(&density, &points, Some(self.config.delta), 1.0);
        if let (Ok(full), Ok(cut)) = (full, cut) {
            let shift = full
                .iter()
                .zip(&cut)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            self.evidence(
                suite,
                "truncation_shift",
                shift,
                format!("delta {}", self.config.delta),
            );
        }
    }
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let tree = build_tree(config.depth)?;
    let params = config.params()?;
    let sigma = generate_weight(&parse_family(&config.sigma_family)?, &tree, seed, Side::Sigma)?;
    let w = generate_weight(&parse_family(&config.w_family)?, &tree, seed, Side::W)?;
    let pair = WeightPair::new(sigma, w)?;
    let mut ctx = SuiteCtx {
        config,
        params,
        tree,
        pair,
        seed,
        rows: Vec::new(),
    };
    let mut constants = Vec::new();
    let mut ratios = Vec::new();
    let run_suite = |suite: Suite| config.suite == suite || config.suite == Suite::All;
    if run_suite(Suite::Identities) {
        ctx.identities();
    }
    if run_suite(Suite::Lemmas) {
        ctx.lemmas();
    }
    if run_suite(Suite::Constants) {
        let (c, r) = ctx.constants(true);
        constants.extend(c);
        ratios.extend(r);
    }
    if run_suite(Suite::Questions) {
        let (c, r) = ctx.constants(false);
        constants.extend(c);
        ratios.extend(r);
    }
    Ok(SeedOutput {
        rows: ctx.rows,
        constants,
        ratios,
    })
}

fn thread_count(config: &ExperimentConfig) -> Option<usize> {
    config.threads.or_else(|| {
        std::env::var("TWOWEIGHT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

/// Executes the selected suites over the seed grid and writes report.json,
/// constants.csv, ratios.csv, and failures/ into the output directory.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let seeds = config.seeds.clone();
    let worker = |seed: u64| run_seed(config, seed);
    // Parallel over seeds, merged in seed order for determinism.
    let outputs: Vec<(u64, Result<SeedOutput>)> = match thread_count(config) {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| {
                use rayon::prelude::*;
                seeds.par_iter().map(|&s| (s, worker(s))).collect()
            })
        }
        None => {
            use rayon::prelude::*;
            seeds.par_iter().map(|&s| (s, worker(s))).collect()
        }
    };

    let mut rows = Vec::new();
    let mut constants = Vec::new();
    let mut ratios = Vec::new();
    for (seed, out) in outputs {
        match out {
            Ok(o) => {
                rows.extend(o.rows);
                constants.extend(o.constants);
                ratios.extend(o.ratios);
            }
            Err(e) => rows.push(CheckRow {
                seed,
                suite: "runner".into(),
                check: "instance".into(),
                value: f64::NAN,
                threshold: None,
                passed: Some(false),
                detail: format!("error: {e}"),
            }),
        }
    }

    let mut failures = Vec::new();
    for row in &rows {
        if row.passed == Some(false) {
            let (sigma_spec, w_spec) = config.specs(row.seed)?;
            failures.push(FailureInstance {
                seed: row.seed,
                suite: row.suite.clone(),
                check: row.check.clone(),
                detail: row.detail.clone(),
                sigma_spec,
                w_spec,
                config: config.clone(),
            });
        }
    }

    let mut suite_pass = BTreeMap::new();
    for row in &rows {
        let entry = suite_pass.entry(row.suite.clone()).or_insert(true);
        if row.passed == Some(false) {
            *entry = false;
        }
    }
    let failed_checks = rows.iter().filter(|r| r.passed == Some(false)).count();
    let report = RunReport {
        version: VERSION.into(),
        config: config.clone(),
        summary: RunSummary {
            total_checks: rows.len(),
            failed_checks,
            suite_pass,
        },
        rows,
        constants,
        ratios,
        failures,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    write_outputs(config, &report)?;
    Ok(report)
}

/// Full assertable battery at the configured scale: every suite runs and the
/// exit status reflects every theorem-exact check.
pub fn verify(config: &ExperimentConfig) -> Result<RunReport> {
    let mut config = config.clone();
    config.suite = Suite::All;
    run(&config)
}

fn io_err(e: std::io::Error, what: &Path) -> Error {
    Error::Config(format!("io error at {}: {e}", what.display()))
}

fn write_outputs(config: &ExperimentConfig, report: &RunReport) -> Result<()> {
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| io_err(e, out))?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("serialize report: {e}")))?;
    fs::write(out.join("report.json"), json).map_err(|e| io_err(e, &out.join("report.json")))?;

    let mut cw = csv::Writer::from_path(out.join("constants.csv"))
        .map_err(|e| Error::Config(format!("constants.csv: {e}")))?;
    for row in &report.constants {
        cw.serialize(row)
            .map_err(|e| Error::Config(format!("constants.csv: {e}")))?;
    }
    cw.flush().map_err(|e| io_err(e, &out.join("constants.csv")))?;

    let mut rw = csv::Writer::from_path(out.join("ratios.csv"))
        .map_err(|e| Error::Config(format!("ratios.csv: {e}")))?;
    for row in &report.ratios {
        rw.serialize(row)
            .map_err(|e| Error::Config(format!("ratios.csv: {e}")))?;
    }
    rw.flush().map_err(|e| io_err(e, &out.join("ratios.csv")))?;

    let fail_dir = out.join("failures");
    if fail_dir.exists() {
        fs::remove_dir_all(&fail_dir).map_err(|e| io_err(e, &fail_dir))?;
    }
    fs::create_dir_all(&fail_dir).map_err(|e| io_err(e, &fail_dir))?;
    for (k, f) in report.failures.iter().enumerate() {
        let path = fail_dir.join(format!("seed{}_{}_{}.json", f.seed, f.check, k));
        let body = serde_json::to_string_pretty(f)
            .map_err(|e| Error::Config(format!("failure json: {e}")))?;
        fs::write(&path, body).map_err(|e| io_err(e, &path))?;
    }
    Ok(())
}

/// Re-runs the single seed recorded in a failure instance file and returns
/// the matching rows; the recorded failure must reproduce exactly.
pub fn replay_failure(path: &Path) -> Result<Vec<CheckRow>> {
    let body = fs::read_to_string(path).map_err(|e| io_err(e, path))?;
    let instance: FailureInstance =
        serde_json::from_str(&body).map_err(|e| Error::Config(format!("parse failure: {e}")))?;
    let mut config = instance.config.clone();
    config.seeds = vec![instance.seed];
    // Replay in a scratch directory; the caller inspects the rows.
    let scratch = std::env::temp_dir().join(format!(
        "twoweight-replay-{}-{}",
        std::process::id(),
        instance.seed
    ));
    config.out = scratch.clone();
    let report = run(&config)?;
    let _ = fs::remove_dir_all(&scratch);
    Ok(report
        .rows
        .into_iter()
        .filter(|r| r.check == instance.check && r.seed == instance.seed)
        .collect())
}

/// Parses `a..b` (half-open), `a..=b` (inclusive), or a single number.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed range {spec:?}"));
    if let Some((a, b)) = spec.split_once("..=") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..=b).collect());
    }
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    let single: u64 = spec.trim().parse().map_err(|_| bad())?;
    Ok(vec![single])
}
