//! Dispersal kernels on the integer lattice, scaled by a single parameter
//! `N`: support width grows like `sqrt(N)` and the per-step variance like
//! `sigmaN^2 * N`. Long-range families are blended with a uniform floor on
//! `[-sqrt(N), sqrt(N)]` so that every built kernel satisfies the
//! regularity assumptions the walk-limit theorems require:
//!
//! 1. symmetry: `q(z) = q(-z)`;
//! 2. variance scaling: `sum z^2 q(z) = sigmaN^2 * N`;
//! 3. a mass floor `q(z) >= h / sqrt(N)` on `|z| <= sqrt(N)`;
//! 4. exponential tails `q(z) <= C exp(-c |z| / sqrt(N))`;
//! 5. hard truncation: `q(z) = 0` for `|z| > B sqrt(N) ln N`.
//!
//! The floor constant `h`, the tail pair `(c, C)` and the characteristic
//! function envelope constants are *audit outputs*: they are measured from
//! the realized mass vector, recorded on the kernel, and re-checked by
//! [`DispersalKernel::verify_assumptions`].

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

/// Relative variance shift tolerated when the hard truncation at
/// `B sqrt(N) ln N` renormalizes the family; a larger shift means `B` is
/// too small for this family and the kernel is rejected.
const TRUNCATION_VARIANCE_TOLERANCE: f64 = 0.01;

/// Fixed tail decay rate used when recording the assumption-4 constant
/// `C = max_z q(z) exp(c |z| / sqrt(N))`.
const TAIL_DECAY_C: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DispersalError {
    #[error("N must be >= 1")]
    BadN,
    #[error("mix weight {0} outside [0, 1]")]
    BadMix(f64),
    #[error("B must be positive")]
    BadB,
    #[error(
        "truncation at radius {radius} shifts the variance by {shift:.3}% (> 1%); increase B"
    )]
    TruncationShiftsVariance { radius: i64, shift: f64 },
    #[error("mass vector must have odd length (symmetric support around 0)")]
    BadSupport,
    #[error("mass must be nonnegative and sum to 1 (sum = {0})")]
    NotNormalized(f64),
    #[error("stored sigmaN {stored} disagrees with realized {realized}")]
    SigmaMismatch { stored: f64, realized: f64 },
    #[error("unknown kernel family '{0}'")]
    UnknownFamily(String),
    #[error("malformed kernel document: {0}")]
    BadDocument(String),
}

/// The four built-in kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Uniform on the integers of `[-floor(sqrt(N)), floor(sqrt(N))]`.
    Uniform,
    /// `q(z) proportional to exp(-|z| / sqrt(N))`.
    BilateralExponential,
    /// `q(z) proportional to exp(-z^2 / (2N))`.
    DiscreteNormal,
    /// `+-1` with probability 1/2 each; exempt from assumptions 3-5.
    NearestNeighbor,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::BilateralExponential => "bilateral-exponential",
            Family::DiscreteNormal => "discrete-normal",
            Family::NearestNeighbor => "nearest-neighbor",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DispersalError> {
        match s {
            "uniform" => Ok(Family::Uniform),
            "bilateral-exponential" | "bexp" => Ok(Family::BilateralExponential),
            "discrete-normal" | "dnormal" => Ok(Family::DiscreteNormal),
            "nearest-neighbor" | "nn" => Ok(Family::NearestNeighbor),
            other => Err(DispersalError::UnknownFamily(other.to_string())),
        }
    }
}

/// A probability mass function on `{-support_radius, ..., support_radius}`
/// with a precomputed cumulative table for reproducible sampling (one
/// uniform draw per sample, resolved by binary search).
#[derive(Debug, Clone)]
pub struct DispersalKernel {
    family: Family,
    n: u64,
    mix: f64,
    b: f64,
    /// Mass vector over `z = -support_radius ..= support_radius`.
    mass: Vec<f64>,
    support_radius: i64,
    /// Hard truncation radius `ceil(B sqrt(N) ln N)`; `support_radius` never
    /// exceeds it.
    truncation_radius: i64,
    /// `sqrt(Var / N)` of the realized (truncated, renormalized) kernel.
    sigma_n: f64,
    /// Inclusive-prefix cumulative sums of `mass`, last entry forced to 1.
    cumulative: Vec<f64>,
    /// Audit outputs: mass floor on `|z| <= sqrt(N)` (times `sqrt(N)`),
    /// and the assumption-4 constant for decay rate [`TAIL_DECAY_C`].
    floor_h: f64,
    tail_big_c: f64,
}

/// Builds a kernel with the default truncation coefficient `B = 8`.
pub fn build_kernel(family: Family, n: u64, mix: f64) -> Result<DispersalKernel, DispersalError> {
    build_kernel_with(family, n, mix, 8.0)
}

/// Builds a kernel with an explicit truncation coefficient `B`.
///
/// Non-exempt families are blended as
/// `mix * uniform[-sqrt(N), sqrt(N)] + (1 - mix) * family`, truncated at
/// `ceil(B sqrt(N) ln N)` and renormalized. The build fails if truncation
/// moves the variance by more than 1%.
pub fn build_kernel_with(
    family: Family,
    n: u64,
    mix: f64,
    b: f64,
) -> Result<DispersalKernel, DispersalError> {
    if n == 0 {
        return Err(DispersalError::BadN);
    }
    if !(0.0..=1.0).contains(&mix) || !mix.is_finite() {
        return Err(DispersalError::BadMix(mix));
    }
    if !(b > 0.0) {
        return Err(DispersalError::BadB);
    }

    if family == Family::NearestNeighbor {
        // The voter special case: exempt from the mixture and truncation
        // machinery; `N` only fixes the variance normalization sigmaN^2 = 1/N.
        let mass = vec![0.5, 0.0, 0.5];
        return DispersalKernel::from_mass(family, n, 0.0, b, mass);
    }

    let nf = n as f64;
    let sqrt_n = nf.sqrt();
    let unif_a = sqrt_n.floor() as i64; // uniform component half-width
    let truncation_radius = (b * sqrt_n * nf.ln()).ceil() as i64;

    // Family shape on |z| <= shape_cut, where shape_cut is far enough out
    // that the omitted mass is below f64 resolution; used for the
    // "untruncated" variance reference.
    let shape_cut = match family {
        Family::Uniform => unif_a,
        // exp(-|z|/sqrt(N)) and exp(-z^2/2N) are both < 1e-320 beyond these.
        Family::BilateralExponential => (740.0 * sqrt_n).ceil() as i64,
        Family::DiscreteNormal => (39.0 * sqrt_n).ceil() as i64,
        Family::NearestNeighbor => unreachable!(),
    };
    let shape = |z: i64| -> f64 {
        match family {
            Family::Uniform => {
                if z.abs() <= unif_a {
                    1.0
                } else {
                    0.0
                }
            }
            Family::BilateralExponential => (-(z.abs() as f64) / sqrt_n).exp(),
            Family::DiscreteNormal => (-(z as f64) * (z as f64) / (2.0 * nf)).exp(),
            Family::NearestNeighbor => unreachable!(),
        }
    };

    // Untruncated mixture variance (the reference the truncation check is
    // measured against).
    let mut shape_total = 0.0;
    let mut shape_second = 0.0;
    for z in -shape_cut..=shape_cut {
        let w = shape(z);
        shape_total += w;
        shape_second += w * (z as f64) * (z as f64);
    }
    if shape_total <= 0.0 {
        return Err(DispersalError::BadSupport);
    }
    let unif_mass = 1.0 / (2 * unif_a + 1) as f64;
    let unif_var = (unif_a * (unif_a + 1)) as f64 / 3.0;
    let untruncated_var = mix * unif_var + (1.0 - mix) * shape_second / shape_total;

    // Truncated, renormalized mixture.
    let radius = truncation_radius.min(shape_cut.max(unif_a));
    if radius < 1 {
        return Err(DispersalError::TruncationShiftsVariance {
            radius: truncation_radius,
            shift: 100.0,
        });
    }
    let mut mass: Vec<f64> = Vec::with_capacity((2 * radius + 1) as usize);
    for z in -radius..=radius {
        let u = if z.abs() <= unif_a { unif_mass } else { 0.0 };
        mass.push(mix * u + (1.0 - mix) * shape(z) / shape_total);
    }
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    let realized_var: f64 = mass
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let z = (i as i64 - radius) as f64;
            m * z * z
        })
        .sum();
    let shift = (realized_var - untruncated_var).abs() / untruncated_var;
    if shift > TRUNCATION_VARIANCE_TOLERANCE {
        return Err(DispersalError::TruncationShiftsVariance {
            radius: truncation_radius,
            shift: 100.0 * shift,
        });
    }

    let mut kernel = DispersalKernel::from_mass(family, n, mix, b, mass)?;
    kernel.truncation_radius = truncation_radius;
    Ok(kernel)
}

impl DispersalKernel {
    /// Builds a kernel directly from a mass vector over
    /// `z = -r ..= r` (odd length `2r + 1`). Used by deserialization and by
    /// tests that need hand-made (possibly assumption-violating) kernels.
    pub fn from_mass(
        family: Family,
        n: u64,
        mix: f64,
        b: f64,
        mass: Vec<f64>,
    ) -> Result<Self, DispersalError> {
        if n == 0 {
            return Err(DispersalError::BadN);
        }
        if mass.is_empty() || mass.len() % 2 == 0 {
            return Err(DispersalError::BadSupport);
        }
        let total: f64 = mass.iter().sum();
        if mass.iter().any(|&m| !(m >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(DispersalError::NotNormalized(total));
        }
        // Trim trailing symmetric zeros so support_radius is tight.
        let mut mass = mass;
        while mass.len() > 1 && mass[0] == 0.0 && *mass.last().unwrap() == 0.0 {
            mass.remove(0);
            mass.pop();
        }
        let support_radius = (mass.len() as i64 - 1) / 2;
        let nf = n as f64;
        let variance: f64 = mass
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let z = (i as i64 - support_radius) as f64;
                m * z * z
            })
            .sum();
        let sigma_n = (variance / nf).sqrt();

        let mut cumulative = Vec::with_capacity(mass.len());
        let mut acc = 0.0;
        for &m in &mass {
            acc += m;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;

        let sqrt_n = nf.sqrt();
        let floor_a = sqrt_n.floor() as i64;
        let mut floor_h = f64::INFINITY;
        for z in -floor_a..=floor_a {
            floor_h = floor_h.min(Self::mass_at(&mass, support_radius, z));
        }
        floor_h *= sqrt_n;
        let tail_big_c = mass
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let z = (i as i64 - support_radius).abs() as f64;
                m * (TAIL_DECAY_C * z / sqrt_n).exp()
            })
            .fold(0.0, f64::max);

        Ok(DispersalKernel {
            family,
            n,
            mix,
            b,
            truncation_radius: support_radius.max(
                (b * sqrt_n * nf.ln()).ceil() as i64,
            ),
            support_radius,
            mass,
            sigma_n,
            cumulative,
            floor_h,
            tail_big_c,
        })
    }

    fn mass_at(mass: &[f64], radius: i64, z: i64) -> f64 {
        if z.abs() > radius {
            0.0
        } else {
            mass[(z + radius) as usize]
        }
    }

    // ── Accessors ──────────────────────────────────────────────────────

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mix(&self) -> f64 {
        self.mix
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn support_radius(&self) -> i64 {
        self.support_radius
    }

    pub fn truncation_radius(&self) -> i64 {
        self.truncation_radius
    }

    /// `sigmaN`: realized standard deviation divided by `sqrt(N)`.
    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    /// Realized per-step variance `sigmaN^2 * N`.
    pub fn variance(&self) -> f64 {
        self.sigma_n * self.sigma_n * self.n as f64
    }

    /// `q(z)`.
    pub fn mass(&self, z: i64) -> f64 {
        Self::mass_at(&self.mass, self.support_radius, z)
    }

    pub fn mass_slice(&self) -> &[f64] {
        &self.mass
    }

    /// One displacement draw. Exactly one `f64` uniform is consumed per
    /// call, so draw sequences are reproducible across table layouts.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.gen();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx as i64 - self.support_radius
    }

    /// Characteristic function `phi(theta) = sum_z q(z) cos(z theta)`.
    pub fn char_fn(&self, theta: f64) -> f64 {
        let r = self.support_radius as usize;
        let mut acc = self.mass[r]; // z = 0 term
        for z in 1..=r {
            acc += (self.mass[r + z] + self.mass[r - z]) * ((z as f64) * theta).cos();
        }
        acc
    }

    // ── Assumption audit ───────────────────────────────────────────────

    /// Checks assumptions 1-5 against the realized mass vector and fits the
    /// characteristic-function envelope constants on a 10^4-point theta
    /// grid over `(0, pi]`. Nearest-neighbor kernels are exempt from
    /// assumptions 3-5 but still checked for symmetry and variance.
    pub fn verify_assumptions(&self) -> AssumptionReport {
        let exempt = self.family == Family::NearestNeighbor;
        let nf = self.n as f64;
        let sqrt_n = nf.sqrt();

        // 1: symmetry.
        let mut symmetry = Check::pass();
        for z in 1..=self.support_radius {
            let diff = (self.mass(z) - self.mass(-z)).abs();
            if diff > 1e-15 {
                let neg = -z;
                symmetry = Check::fail(format!("q({z}) - q({neg}) = {diff:e}"));
                break;
            }
        }

        // 2: variance scaling consistent with the recorded sigmaN.
        let realized: f64 = self
            .mass
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let z = (i as i64 - self.support_radius) as f64;
                m * z * z
            })
            .sum();
        let variance = if (realized - self.variance()).abs() <= 1e-9 * realized.max(1.0) {
            Check::pass()
        } else {
            Check::fail(format!(
                "recorded variance {} vs realized {realized}",
                self.variance()
            ))
        };

        // 3: uniform mass floor on |z| <= sqrt(N).
        let floor = if exempt {
            Check::pass()
        } else if self.floor_h > 0.0 {
            Check::pass()
        } else {
            let a = sqrt_n.floor() as i64;
            let witness = (-a..=a).find(|&z| self.mass(z) == 0.0).unwrap_or(0);
            Check::fail(format!("no mass at z = {witness} inside |z| <= sqrt(N)"))
        };

        // 4: exponential tails with the recorded (c, C).
        let tails = if exempt {
            Check::pass()
        } else {
            let mut bad = None;
            for z in -self.support_radius..=self.support_radius {
                let bound =
                    self.tail_big_c * (-TAIL_DECAY_C * z.abs() as f64 / sqrt_n).exp();
                if self.mass(z) > bound * (1.0 + 1e-12) {
                    bad = Some(z);
                    break;
                }
            }
            match bad {
                None => Check::pass(),
                Some(z) => Check::fail(format!("q({z}) exceeds C exp(-c|z|/sqrt(N))")),
            }
        };

        // 5: hard truncation.
        let truncation = if exempt || self.support_radius <= self.truncation_radius {
            Check::pass()
        } else {
            Check::fail(format!(
                "support radius {} exceeds truncation radius {}",
                self.support_radius, self.truncation_radius
            ))
        };

        // Characteristic-function envelope |phi| <= max(1 - b N theta^2, 1 - a):
        // fit b on theta <= 4/(2 sqrt(N) + 1), a beyond it. Also record the
        // largest |phi| outside |theta| <= 0.1/sqrt(N), which must stay
        // bounded away from 1 uniformly in N.
        const GRID: usize = 10_000;
        let split = 4.0 / (2.0 * sqrt_n + 1.0);
        let eps_cut = 0.1 / sqrt_n;
        let mut b_fit = f64::INFINITY;
        let mut a_fit = f64::INFINITY;
        let mut max_abs_beyond_eps: f64 = 0.0;
        let phis = self.char_fn_grid(GRID);
        for (j, &phi) in phis.iter().enumerate() {
            let theta = (j + 1) as f64 * std::f64::consts::PI / GRID as f64;
            let gap = 1.0 - phi.abs();
            if theta <= split {
                b_fit = b_fit.min(gap / (nf * theta * theta));
            } else {
                a_fit = a_fit.min(gap);
            }
            if theta > eps_cut {
                max_abs_beyond_eps = max_abs_beyond_eps.max(phi.abs());
            }
        }

        AssumptionReport {
            exempt,
            symmetry,
            variance,
            floor: floor.with_value(self.floor_h),
            tails: tails.with_value(self.tail_big_c),
            truncation,
            envelope_a: a_fit,
            envelope_b: b_fit,
            max_abs_cf_beyond_eps: max_abs_beyond_eps,
        }
    }

    /// `phi` on the audit grid `theta_j = j pi / grid`, `j = 1..=grid`,
    /// evaluated with an incremental complex rotation per `z` (identical to
    /// [`Self::char_fn`] up to ~1e-12 accumulation, at a fraction of the cost).
    fn char_fn_grid(&self, grid: usize) -> Vec<f64> {
        let r = self.support_radius as usize;
        (1..=grid)
            .map(|j| {
                let theta = j as f64 * std::f64::consts::PI / grid as f64;
                let (s1, c1) = theta.sin_cos();
                let mut cz = 1.0; // cos(z theta), starting at z = 0
                let mut sz = 0.0;
                let mut acc = self.mass[r];
                for z in 1..=r {
                    let c_next = cz * c1 - sz * s1;
                    sz = sz * c1 + cz * s1;
                    cz = c_next;
                    acc += (self.mass[r + z] + self.mass[r - z]) * cz;
                }
                acc
            })
            .collect()
    }

    // ── Serialization ──────────────────────────────────────────────────

    /// JSON document with every float printed to 17 significant digits, so
    /// `from_json(to_json(k))` reproduces the mass vector bit for bit.
    pub fn to_json(&self) -> String {
        let mut out = String::with_capacity(32 * self.mass.len() + 128);
        out.push_str("{\n");
        out.push_str(&format!("  \"family\": \"{}\",\n", self.family.as_str()));
        out.push_str(&format!("  \"N\": {},\n", self.n));
        out.push_str(&format!("  \"mix\": {:.16e},\n", self.mix));
        out.push_str(&format!("  \"B\": {:.16e},\n", self.b));
        out.push_str(&format!("  \"support_radius\": {},\n", self.support_radius));
        out.push_str(&format!("  \"sigmaN\": {:.16e},\n", self.sigma_n));
        out.push_str("  \"mass\": [");
        for (i, m) in self.mass.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&format!("{m:.16e}"));
        }
        out.push_str("]\n}\n");
        out
    }

    pub fn from_json(doc: &str) -> Result<Self, DispersalError> {
        #[derive(Deserialize)]
        struct KernelDoc {
            family: String,
            #[serde(rename = "N")]
            n: u64,
            mix: f64,
            #[serde(rename = "B")]
            b: f64,
            support_radius: i64,
            #[serde(rename = "sigmaN")]
            sigma_n: f64,
            mass: Vec<f64>,
        }
        let doc: KernelDoc =
            serde_json::from_str(doc).map_err(|e| DispersalError::BadDocument(e.to_string()))?;
        if doc.mass.len() as i64 != 2 * doc.support_radius + 1 {
            return Err(DispersalError::BadDocument(format!(
                "mass length {} does not match support_radius {}",
                doc.mass.len(),
                doc.support_radius
            )));
        }
        let family = Family::parse(&doc.family)?;
        let kernel = Self::from_mass(family, doc.n, doc.mix, doc.b, doc.mass)?;
        if (kernel.sigma_n - doc.sigma_n).abs() > 1e-12 * doc.sigma_n.max(1e-300) {
            return Err(DispersalError::SigmaMismatch {
                stored: doc.sigma_n,
                realized: kernel.sigma_n,
            });
        }
        Ok(kernel)
    }
}

/// One audited assumption: pass/fail plus a human-readable witness for
/// failures and the measured constant where one applies.
#[derive(Debug, Clone)]
pub struct Check {
    pub pass: bool,
    pub witness: Option<String>,
    pub value: Option<f64>,
}

impl Check {
    fn pass() -> Self {
        Check { pass: true, witness: None, value: None }
    }

    fn fail(witness: String) -> Self {
        Check { pass: false, witness: Some(witness), value: None }
    }

    fn with_value(mut self, v: f64) -> Self {
        self.value = Some(v);
        self
    }
}

/// Output of [`DispersalKernel::verify_assumptions`].
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub exempt: bool,
    pub symmetry: Check,
    pub variance: Check,
    pub floor: Check,
    pub tails: Check,
    pub truncation: Check,
    /// Fitted envelope constants: `|phi(theta)| <= 1 - envelope_a` for
    /// theta beyond `4/(2 sqrt(N) + 1)`, and
    /// `|phi(theta)| <= 1 - envelope_b * N * theta^2` below it.
    pub envelope_a: f64,
    pub envelope_b: f64,
    /// `max |phi(theta)|` over grid points with `theta > 0.1 / sqrt(N)`.
    pub max_abs_cf_beyond_eps: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.symmetry.pass
            && self.variance.pass
            && self.floor.pass
            && self.tails.pass
            && self.truncation.pass
    }

    /// First failed assumption, as `(name, witness)`.
    pub fn first_failure(&self) -> Option<(&'static str, String)> {
        let checks = [
            ("symmetry", &self.symmetry),
            ("variance", &self.variance),
            ("floor", &self.floor),
            ("tails", &self.tails),
            ("truncation", &self.truncation),
        ];
        checks.iter().find(|(_, c)| !c.pass).map(|(name, c)| {
            (*name, c.witness.clone().unwrap_or_default())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square_test, SeedPlan};
    use proptest::prelude::*;

    /// Direct-summation oracle for the moments of a mass vector.
    fn moment(kernel: &DispersalKernel, p: u32) -> f64 {
        (-kernel.support_radius()..=kernel.support_radius())
            .map(|z| kernel.mass(z) * (z as f64).powi(p as i32))
            .sum()
    }

    #[test]
    fn uniform_25_is_flat_with_variance_10() {
        let k = build_kernel(Family::Uniform, 25, 1.0).unwrap();
        assert_eq!(k.support_radius(), 5);
        for z in -5..=5 {
            assert!((k.mass(z) - 1.0 / 11.0).abs() < 1e-15, "mass({z}) = {}", k.mass(z));
        }
        // Sum of 2*(1+4+9+16+25)/11 = 10; sigmaN^2 = 10/25.
        assert!((moment(&k, 2) - 10.0).abs() < 1e-12);
        assert!((k.sigma_n() * k.sigma_n() - 0.4).abs() < 1e-14);
    }

    #[test]
    fn nearest_neighbor_is_exempt_and_unit_variance() {
        let k = build_kernel(Family::NearestNeighbor, 1, 0.0).unwrap();
        assert_eq!(k.support_radius(), 1);
        assert_eq!(k.mass(1), 0.5);
        assert_eq!(k.mass(0), 0.0);
        assert!((k.variance() - 1.0).abs() < 1e-15);
        let report = k.verify_assumptions();
        assert!(report.exempt);
        assert!(report.passed());
        // phi(pi) = cos(pi) = -1 exactly for the +-1 kernel.
        assert!((k.char_fn(std::f64::consts::PI) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_matches_the_mass_table() {
        let k = build_kernel(Family::Uniform, 25, 1.0).unwrap();
        let mut rng = SeedPlan::new(42).rng_for(0);
        let n_draws = 1_000_000usize;
        let mut counts = vec![0f64; 11];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_draws {
            let z = k.sample(&mut rng);
            counts[(z + 5) as usize] += 1.0;
            sum += z as f64;
            sum_sq += (z * z) as f64;
        }
        let expected: Vec<f64> = (0..11).map(|_| n_draws as f64 / 11.0).collect();
        let (_, p) = chi_square_test(&counts, &expected);
        assert!(p > 1e-6, "chi-square p = {p}");
        // Mean within 4 sigma of 0; variance within 1% of 10.
        let mean = sum / n_draws as f64;
        let mean_tol = 4.0 * k.sigma_n() * (k.n() as f64).sqrt() / (n_draws as f64).sqrt();
        assert!(mean.abs() < mean_tol, "mean {mean} vs tol {mean_tol}");
        let var = sum_sq / n_draws as f64 - mean * mean;
        assert!((var - 10.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn char_fn_small_theta_expansion() {
        let k = build_kernel(Family::Uniform, 25, 1.0).unwrap();
        let theta = 0.01;
        let phi = k.char_fn(theta);
        let quadratic = 1.0 - 0.5 * k.variance() * theta * theta;
        // |phi - (1 - var theta^2 / 2)| <= (sum z^4 q(z)) theta^4 / 24.
        let fourth_bound = moment(&k, 4) * theta.powi(4) / 24.0;
        assert!((phi - quadratic).abs() <= fourth_bound + 1e-15);
        assert!((phi - (1.0 - 5e-4)).abs() < 1e-7);
        assert_eq!(k.char_fn(-theta), phi);
        assert!((k.char_fn(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_evaluation_matches_pointwise_char_fn() {
        let k = build_kernel(Family::DiscreteNormal, 100, 0.1).unwrap();
        let grid = 64;
        let phis = k.char_fn_grid(grid);
        for (j, &phi) in phis.iter().enumerate() {
            let theta = (j + 1) as f64 * std::f64::consts::PI / grid as f64;
            assert!((phi - k.char_fn(theta)).abs() < 1e-11);
        }
    }

    #[test]
    fn built_families_pass_the_audit() {
        for family in [Family::Uniform, Family::BilateralExponential, Family::DiscreteNormal] {
            for n in [25u64, 100] {
                let k = build_kernel(family, n, 0.1).unwrap();
                let report = k.verify_assumptions();
                assert!(
                    report.passed(),
                    "{:?} N={n}: {:?}",
                    family,
                    report.first_failure()
                );
                assert!(report.envelope_a > 0.0);
                assert!(report.envelope_b > 0.0);
                // Mixture guarantees the floor is at least mix/(2 sqrt(N)+1) * sqrt(N).
                let nf = n as f64;
                let min_floor = 0.1 * nf.sqrt() / (2.0 * nf.sqrt() + 1.0) * 0.99;
                assert!(report.floor.value.unwrap() >= min_floor);
            }
        }
    }

    #[test]
    fn expected_variances_per_family() {
        // sigmaN^2: uniform ~ 1/3, bilateral-exponential ~ 0.9*2 + 0.1/3,
        // discrete-normal ~ 0.9 + 0.1/3 (mix = 0.1).
        let u = build_kernel(Family::Uniform, 400, 0.1).unwrap();
        assert!((u.sigma_n().powi(2) - (20.0 * 21.0 / 3.0) / 400.0).abs() < 1e-12);
        let e = build_kernel(Family::BilateralExponential, 400, 0.1).unwrap();
        let ev = e.sigma_n().powi(2);
        assert!((1.7..1.95).contains(&ev), "bexp sigmaN^2 = {ev}");
        let d = build_kernel(Family::DiscreteNormal, 400, 0.1).unwrap();
        let dv = d.sigma_n().powi(2);
        assert!((0.9..1.0).contains(&dv), "dnormal sigmaN^2 = {dv}");
    }

    #[test]
    fn missing_lattice_mass_fails_the_floor_check() {
        // Mass only on +-2: symmetric, normalized, but no mass at 0 or +-1.
        let k = DispersalKernel::from_mass(
            Family::Uniform,
            4,
            0.0,
            8.0,
            vec![0.5, 0.0, 0.0, 0.0, 0.5],
        )
        .unwrap();
        let report = k.verify_assumptions();
        assert!(!report.passed());
        let (name, witness) = report.first_failure().unwrap();
        assert_eq!(name, "floor");
        assert!(witness.contains("no mass"), "witness: {witness}");
    }

    #[test]
    fn truncation_that_guts_the_family_is_rejected() {
        // N = 1: ln N = 0, so the truncation radius is 0 and everything
        // but the origin would be cut. That shifts the variance by ~100%.
        let err = build_kernel(Family::BilateralExponential, 1, 0.1).unwrap_err();
        assert!(matches!(err, DispersalError::TruncationShiftsVariance { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_kernel(Family::Uniform, 0, 0.1).is_err());
        assert!(build_kernel(Family::Uniform, 25, -0.1).is_err());
        assert!(build_kernel(Family::Uniform, 25, 1.1).is_err());
        assert!(build_kernel_with(Family::Uniform, 25, 0.1, 0.0).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        for family in [Family::Uniform, Family::BilateralExponential, Family::NearestNeighbor] {
            let k = build_kernel(family, 25, 0.3).unwrap();
            let doc = k.to_json();
            let k2 = DispersalKernel::from_json(&doc).unwrap();
            assert_eq!(k.mass_slice(), k2.mass_slice(), "{family:?} mass drifted");
            assert_eq!(k.sigma_n().to_bits(), k2.sigma_n().to_bits());
            assert_eq!(k.n(), k2.n());
            assert_eq!(k.family(), k2.family());
            assert_eq!(doc, k2.to_json());
        }
    }

    #[test]
    fn json_document_has_the_documented_fields() {
        let k = build_kernel(Family::Uniform, 25, 1.0).unwrap();
        let doc = k.to_json();
        let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        for key in ["family", "N", "mix", "B", "support_radius", "sigmaN", "mass"] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(v["mass"].as_array().unwrap().len(), 11);
    }

    #[test]
    fn from_json_rejects_inconsistent_documents() {
        let k = build_kernel(Family::Uniform, 25, 1.0).unwrap();
        let doc = k.to_json().replace("\"support_radius\": 5", "\"support_radius\": 6");
        assert!(DispersalKernel::from_json(&doc).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_kernels_round_trip_and_normalize(
            family_idx in 0usize..3,
            n in 9u64..200,
            mix in 0.0f64..1.0,
        ) {
            let family = [Family::Uniform, Family::BilateralExponential, Family::DiscreteNormal][family_idx];
            let k = build_kernel(family, n, mix).unwrap();
            let total: f64 = k.mass_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for z in 1..=k.support_radius() {
                prop_assert!((k.mass(z) - k.mass(-z)).abs() < 1e-15);
            }
            let k2 = DispersalKernel::from_json(&k.to_json()).unwrap();
            prop_assert_eq!(k.mass_slice(), k2.mass_slice());
        }
    }
}
