//! Hermite polynomials, validated coefficient specifications, and the
//! correlation series S, T that drive the macroscopic dynamics.
//!
//! A teacher link `sigma_star` and a student activation `sigma` are both
//! represented by finite vectors of probabilists' Hermite coefficients,
//! 1-based: `c[0]` is the linear coefficient c_1 and the constant term c_0
//! is fixed to zero. The correlation series are
//!
//! ```text
//! S(z) = sum_k k! c*_k c_k z^k          (teacher-student cross moments)
//! T(z) = sum_k k! c_k^2  z^(2k)         (student-student moments at Q = R^2)
//! U(q) = sum_k k! c_k^2  q^k            (same as T but in q = R^2)
//! ```
//!
//! so that `T(R) = U(R^2)`. The k! factors come from the Gaussian product
//! moment E[H_k(z1) H_k(z2)] = k! rho^k for standard Gaussians with
//! correlation rho; a Monte-Carlo test pins this normalization down.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilists' Hermite polynomial H_k(x).
///
/// Three-term recurrence H_{k+1} = x H_k - k H_{k-1}, anchored at
/// H_0 = 1, H_1 = x. Stable for the small degrees used here.
pub fn hermite_eval(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let mut hm = 1.0; // H_0
            let mut h = x; // H_1
            for j in 1..k {
                let next = x * h - (j as f64) * hm;
                hm = h;
                h = next;
            }
            h
        }
    }
}

/// sigma(x) = sum_k c_k H_k(x) for 1-based coefficients `c`.
pub fn activation_eval(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .map(|(i, ck)| ck * hermite_eval(i + 1, x))
        .sum()
}

/// First derivative, using H_k'(x) = k H_{k-1}(x).
pub fn activation_eval_d1(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .map(|(i, ck)| {
            let k = i + 1;
            ck * (k as f64) * hermite_eval(k - 1, x)
        })
        .sum()
}

/// Second derivative, H_k''(x) = k (k-1) H_{k-2}(x).
pub fn activation_eval_d2(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .map(|(i, ck)| {
            let k = i + 1;
            if k < 2 {
                0.0
            } else {
                ck * (k * (k - 1)) as f64 * hermite_eval(k - 2, x)
            }
        })
        .sum()
}

/// Fused evaluation of (sigma(x), sigma'(x)) sharing one Hermite recurrence.
/// Hot path of the finite-width simulator.
#[inline]
pub fn activation_eval_fused(c: &[f64], x: f64) -> (f64, f64) {
    let mut hm = 1.0; // H_0
    let mut h = x; // H_1
    let mut val = 0.0;
    let mut der = 0.0;
    for (i, ck) in c.iter().enumerate() {
        let k = (i + 1) as f64;
        val += ck * h;
        der += ck * k * hm;
        let next = x * h - k * hm;
        hm = h;
        h = next;
    }
    (val, der)
}

/// Validation failures for [`CoefficientSpec`].
#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("empty coefficient vector for {0}")]
    Empty(&'static str),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("c_1 * c*_1 must be positive, got {0}")]
    LinearSignMismatch(f64),
    #[error("no k >= 2 with c*_k c_k != 0")]
    NoSharedNonlinearity,
    #[error("trailing coefficient of {0} is zero; trim the vector")]
    TrailingZero(&'static str),
    #[error("noise_sigma must be nonnegative, got {0}")]
    NegativeNoise(f64),
    #[error("a_init must be positive, got {0}")]
    NonPositiveInit(f64),
}

/// Teacher/student Hermite coefficients plus noise level and the symmetric
/// second-layer initialization. Single source of truth for a configuration;
/// validated at construction so downstream code can assume validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoefficientSpec", into = "RawCoefficientSpec")]
pub struct CoefficientSpec {
    c_student: Vec<f64>,
    c_teacher: Vec<f64>,
    noise_sigma: f64,
    a_init: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoefficientSpec {
    c_student: Vec<f64>,
    c_teacher: Vec<f64>,
    noise_sigma: f64,
    a_init: f64,
}

impl TryFrom<RawCoefficientSpec> for CoefficientSpec {
    type Error = SpecError;
    fn try_from(raw: RawCoefficientSpec) -> Result<Self, SpecError> {
        CoefficientSpec::new(raw.c_student, raw.c_teacher, raw.noise_sigma, raw.a_init)
    }
}

impl From<CoefficientSpec> for RawCoefficientSpec {
    fn from(s: CoefficientSpec) -> Self {
        RawCoefficientSpec {
            c_student: s.c_student,
            c_teacher: s.c_teacher,
            noise_sigma: s.noise_sigma,
            a_init: s.a_init,
        }
    }
}

impl CoefficientSpec {
    pub fn new(
        c_student: Vec<f64>,
        c_teacher: Vec<f64>,
        noise_sigma: f64,
        a_init: f64,
    ) -> Result<Self, SpecError> {
        for (name, v) in [("c_student", &c_student), ("c_teacher", &c_teacher)] {
            if v.is_empty() {
                return Err(SpecError::Empty(name));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(SpecError::NonFinite(name));
            }
            if *v.last().unwrap() == 0.0 {
                return Err(SpecError::TrailingZero(name));
            }
        }
        let lin = c_student[0] * c_teacher[0];
        if !(lin > 0.0) {
            return Err(SpecError::LinearSignMismatch(lin));
        }
        let shared = c_student
            .iter()
            .zip(&c_teacher)
            .skip(1)
            .any(|(a, b)| a * b != 0.0);
        if !shared {
            return Err(SpecError::NoSharedNonlinearity);
        }
        if !(noise_sigma >= 0.0) {
            return Err(SpecError::NegativeNoise(noise_sigma));
        }
        if !(a_init > 0.0) {
            return Err(SpecError::NonPositiveInit(a_init));
        }
        Ok(Self {
            c_student,
            c_teacher,
            noise_sigma,
            a_init,
        })
    }

    pub fn c_student(&self) -> &[f64] {
        &self.c_student
    }
    pub fn c_teacher(&self) -> &[f64] {
        &self.c_teacher
    }
    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }
    pub fn a_init(&self) -> f64 {
        self.a_init
    }
    /// Maximal nonzero student degree.
    pub fn k_bar(&self) -> usize {
        self.c_student.len()
    }
    /// Maximal nonzero teacher degree.
    pub fn k_bar_star(&self) -> usize {
        self.c_teacher.len()
    }

    /// Returns a copy with one teacher coefficient replaced (1-based index).
    /// Used by sweep drivers; the result is re-validated.
    pub fn with_teacher_coeff(&self, k: usize, value: f64) -> Result<Self, SpecError> {
        assert!(k >= 1, "coefficient index is 1-based");
        let mut ct = self.c_teacher.clone();
        if k > ct.len() {
            ct.resize(k, 0.0);
        }
        ct[k - 1] = value;
        while ct.len() > 1 && *ct.last().unwrap() == 0.0 {
            ct.pop();
        }
        Self::new(self.c_student.clone(), ct, self.noise_sigma, self.a_init)
    }

    /// Returns a copy with a different second-layer initialization.
    pub fn with_a_init(&self, a_init: f64) -> Result<Self, SpecError> {
        Self::new(
            self.c_student.clone(),
            self.c_teacher.clone(),
            self.noise_sigma,
            a_init,
        )
    }

    /// S(z) = sum k! c*_k c_k z^k, truncated at min(k_bar, k_bar_star).
    pub fn series_s(&self, z: f64) -> f64 {
        let mut acc = 0.0;
        let mut kfact = 1.0;
        let mut zp = 1.0;
        for (i, (ck, csk)) in self.c_student.iter().zip(&self.c_teacher).enumerate() {
            let k = (i + 1) as f64;
            kfact *= k;
            zp *= z;
            acc += kfact * csk * ck * zp;
        }
        acc
    }

    /// S'(z), termwise. In particular S'(0) = c*_1 c_1.
    pub fn series_s_d1(&self, z: f64) -> f64 {
        let mut acc = 0.0;
        let mut kfact = 1.0;
        let mut zp = 1.0; // z^{k-1}
        for (i, (ck, csk)) in self.c_student.iter().zip(&self.c_teacher).enumerate() {
            let k = (i + 1) as f64;
            kfact *= k;
            acc += kfact * k * csk * ck * zp;
            zp *= z;
        }
        acc
    }

    /// S''(z), termwise.
    pub fn series_s_d2(&self, z: f64) -> f64 {
        let mut acc = 0.0;
        let mut kfact = 1.0;
        let mut zp = 1.0; // z^{k-2}, tracked from k = 2
        for (i, (ck, csk)) in self.c_student.iter().zip(&self.c_teacher).enumerate() {
            let k = (i + 1) as f64;
            kfact *= k;
            if i >= 1 {
                acc += kfact * k * (k - 1.0) * csk * ck * zp;
                zp *= z;
            }
        }
        acc
    }

    /// T(z) = sum k! c_k^2 z^(2k). Even in z.
    pub fn series_t(&self, z: f64) -> f64 {
        self.series_u(z * z)
    }

    /// T'(z) = sum k! 2k c_k^2 z^(2k-1).
    pub fn series_t_d1(&self, z: f64) -> f64 {
        let mut acc = 0.0;
        let mut kfact = 1.0;
        let mut zp = z; // z^{2k-1}
        let z2 = z * z;
        for (i, ck) in self.c_student.iter().enumerate() {
            let k = (i + 1) as f64;
            kfact *= k;
            acc += kfact * 2.0 * k * ck * ck * zp;
            zp *= z2;
        }
        acc
    }

    /// T''(z) = sum k! 2k (2k-1) c_k^2 z^(2k-2).
    pub fn series_t_d2(&self, z: f64) -> f64 {
        let mut acc = 0.0;
        let mut kfact = 1.0;
        let mut zp = 1.0; // z^{2k-2}
        let z2 = z * z;
        for (i, ck) in self.c_student.iter().enumerate() {
            let k = (i + 1) as f64;
            kfact *= k;
            acc += kfact * 2.0 * k * (2.0 * k - 1.0) * ck * ck * zp;
            zp *= z2;
        }
        acc
    }

    /// U(q) = sum k! c_k^2 q^k, so that T(R) = U(R^2). This is the student
    /// self-correlation as a function of the overlap q itself, which is what
    /// the finite-width recursion evolves.
    pub fn series_u(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        let mut kfact = 1.0;
        let mut qp = 1.0;
        for (i, ck) in self.c_student.iter().enumerate() {
            let k = (i + 1) as f64;
            kfact *= k;
            qp *= q;
            acc += kfact * ck * ck * qp;
        }
        acc
    }

    /// U'(q) = sum k k! c_k^2 q^(k-1) = sum b_k c_{k+1}^2 q^k with
    /// b_k = (k+1) (k+1)!.
    pub fn series_u_d1(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        let mut kfact = 1.0;
        let mut qp = 1.0; // q^{k-1}
        for (i, ck) in self.c_student.iter().enumerate() {
            let k = (i + 1) as f64;
            kfact *= k;
            acc += kfact * k * ck * ck * qp;
            qp *= q;
        }
        acc
    }

    /// E[sigma_star(z)^2] = sum k! c*_k^2, the irreducible loss constant.
    pub fn teacher_power(&self) -> f64 {
        let mut acc = 0.0;
        let mut kfact = 1.0;
        for (i, csk) in self.c_teacher.iter().enumerate() {
            kfact *= (i + 1) as f64;
            acc += kfact * csk * csk;
        }
        acc
    }

    /// Minimal shared/student-only nonlinear degrees and the case split they
    /// induce. Validity of the spec guarantees both indices exist.
    pub fn degree_indices(&self) -> DegreeIndices {
        let k0 = self
            .c_student
            .iter()
            .zip(&self.c_teacher)
            .enumerate()
            .skip(1)
            .find(|(_, (a, b))| *a * *b != 0.0)
            .map(|(i, _)| i + 1)
            .expect("validated spec has a shared nonlinear degree");
        let k1 = self
            .c_student
            .iter()
            .enumerate()
            .skip(1)
            .find(|(_, a)| **a != 0.0)
            .map(|(i, _)| i + 1)
            .expect("validated spec has a nonlinear student degree");
        let prod = self.c_student[k0 - 1] * self.c_teacher[k0 - 1];
        let case_tag = if k0 + 1 > 2 * k1 {
            CaseTag::CaseI
        } else if k0 + 1 < 2 * k1 && prod < 0.0 {
            CaseTag::CaseII
        } else {
            CaseTag::Neither
        };
        DegreeIndices { k0, k1, case_tag }
    }
}

/// Which redundancy condition the spec satisfies, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    /// k0 + 1 > 2 k1
    CaseI,
    /// k0 + 1 < 2 k1 and c*_{k0} c_{k0} < 0
    CaseII,
    Neither,
}

/// k0 = min{k >= 2 : c*_k c_k != 0}, k1 = min{k >= 2 : c_k != 0}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeIndices {
    pub k0: usize,
    pub k1: usize,
    pub case_tag: CaseTag,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: &[f64], cs: &[f64], abar: f64) -> CoefficientSpec {
        CoefficientSpec::new(c.to_vec(), cs.to_vec(), 0.0, abar).unwrap()
    }

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite_eval(2, 0.0), -1.0);
        assert_eq!(hermite_eval(0, 7.3), 1.0);
        assert_eq!(hermite_eval(3, 1.0), -2.0); // x^3 - 3x at 1
        assert_eq!(hermite_eval(1, -0.5), -0.5);
        // H_4(x) = x^4 - 6x^2 + 3
        let x = 1.7;
        assert!((hermite_eval(4, x) - (x.powi(4) - 6.0 * x * x + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activation_eval(&[1.0], 2.0), 2.0);
        assert_eq!(activation_eval(&[1.0, 1.0], 1.0), 1.0); // H1(1) + H2(1) = 1 + 0
        assert_eq!(activation_eval(&[1.0, 1.0, 1.0], 0.0), -1.0); // 0 - 1 + 0
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let c = [0.7, -0.3, 0.2, 0.05];
        let h = 1e-5;
        for &x in &[-2.0, -0.4, 0.0, 0.9, 2.5] {
            let d1 = (activation_eval(&c, x + h) - activation_eval(&c, x - h)) / (2.0 * h);
            let d2 = (activation_eval(&c, x + h) - 2.0 * activation_eval(&c, x)
                + activation_eval(&c, x - h))
                / (h * h);
            assert!((activation_eval_d1(&c, x) - d1).abs() < 1e-6 * (1.0 + d1.abs()));
            assert!((activation_eval_d2(&c, x) - d2).abs() < 1e-4 * (1.0 + d2.abs()));
            let (v, d) = activation_eval_fused(&c, x);
            assert!((v - activation_eval(&c, x)).abs() < 1e-14);
            assert!((d - activation_eval_d1(&c, x)).abs() < 1e-14);
        }
    }

    #[test]
    fn series_s_examples() {
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 1.0);
        assert_eq!(s.series_s(0.0), 0.0);
        assert!((s.series_s(0.5) - 1.0).abs() < 1e-15); // 0.5 + 2*0.25
        // S'(0) = c*_1 c_1 for any spec
        let s2 = spec(&[2.0, 0.5, 1.0], &[3.0, -1.0, 2.0], 1.0);
        assert_eq!(s2.series_s_d1(0.0), 6.0);
    }

    #[test]
    fn series_t_examples() {
        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 1.0);
        assert_eq!(s.series_t(0.0), 0.0);
        assert_eq!(s.series_t_d1(0.0), 0.0);
        assert!((s.series_t(0.5) - 0.375).abs() < 1e-15); // 0.25 + 2/16
        for &z in &[0.1, 0.4, 0.77] {
            assert_eq!(s.series_t(z), s.series_t(-z));
        }
        assert!((s.series_t(0.6) - s.series_u(0.36)).abs() < 1e-15);
    }

    #[test]
    fn series_derivatives_match_finite_differences() {
        let s = spec(&[1.0, -0.5, 0.25], &[2.0, 1.0, -0.5], 1.0);
        let h = 1e-5;
        for &z in &[-0.9, -0.3, 0.0, 0.45, 0.9] {
            let sd = (s.series_s(z + h) - s.series_s(z - h)) / (2.0 * h);
            assert!((s.series_s_d1(z) - sd).abs() <= 1e-6 * (1.0 + sd.abs()));
            let sdd = (s.series_s_d1(z + h) - s.series_s_d1(z - h)) / (2.0 * h);
            assert!((s.series_s_d2(z) - sdd).abs() <= 1e-6 * (1.0 + sdd.abs()));
            let td = (s.series_t(z + h) - s.series_t(z - h)) / (2.0 * h);
            assert!((s.series_t_d1(z) - td).abs() <= 1e-6 * (1.0 + td.abs()));
            let tdd = (s.series_t_d1(z + h) - s.series_t_d1(z - h)) / (2.0 * h);
            assert!((s.series_t_d2(z) - tdd).abs() <= 1e-6 * (1.0 + tdd.abs()));
            let ud = (s.series_u(z + h) - s.series_u(z - h)) / (2.0 * h);
            assert!((s.series_u_d1(z) - ud).abs() <= 1e-6 * (1.0 + ud.abs()));
        }
    }

    #[test]
    fn degree_indices_cases() {
        let mut c7s = vec![0.0; 7];
        c7s[0] = 1.0;
        c7s[6] = 0.5;
        let s = spec(&[1.0; 7], &c7s, 10.0);
        let d = s.degree_indices();
        assert_eq!((d.k0, d.k1, d.case_tag), (7, 2, CaseTag::CaseI));

        let s = spec(&[1.0, 1.0, 1.0], &[1.0, -1.0, 1.0], 5.0);
        let d = s.degree_indices();
        assert_eq!((d.k0, d.k1, d.case_tag), (2, 2, CaseTag::CaseII));

        let s = spec(&[1.0, 1.0], &[1.0, 1.0], 1.0);
        let d = s.degree_indices();
        assert_eq!((d.k0, d.k1, d.case_tag), (2, 2, CaseTag::Neither));
    }

    #[test]
    fn spec_validation() {
        assert_eq!(
            CoefficientSpec::new(vec![1.0, 1.0], vec![-1.0, 1.0], 0.0, 1.0).unwrap_err(),
            SpecError::LinearSignMismatch(-1.0)
        );
        assert_eq!(
            CoefficientSpec::new(vec![1.0, 1.0, 0.0], vec![1.0, 1.0], 0.0, 1.0).unwrap_err(),
            SpecError::TrailingZero("c_student")
        );
        assert_eq!(
            CoefficientSpec::new(vec![1.0, 1.0], vec![1.0, 1.0], -0.1, 1.0).unwrap_err(),
            SpecError::NegativeNoise(-0.1)
        );
        assert_eq!(
            CoefficientSpec::new(vec![1.0, 1.0], vec![1.0, 1.0], 0.0, 0.0).unwrap_err(),
            SpecError::NonPositiveInit(0.0)
        );
        // student degree 2 is zero wherever the teacher is nonzero
        assert_eq!(
            CoefficientSpec::new(vec![1.0, 0.0, 1.0], vec![1.0, 1.0], 0.0, 1.0).unwrap_err(),
            SpecError::NoSharedNonlinearity
        );
    }

    #[test]
    fn teacher_power_is_sum_of_weighted_squares() {
        let s = spec(&[1.0, 1.0], &[1.0, -2.0], 1.0);
        assert_eq!(s.teacher_power(), 1.0 + 2.0 * 4.0);
    }

    #[test]
    fn toml_round_trip_preserves_values() {
        let s = spec(&[1.0, 0.1, -0.25], &[0.5, -1.0, 3.0], 4.0);
        let text = toml::to_string(&s).unwrap();
        let back: CoefficientSpec = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
        // invalid configs are rejected at deserialization time
        let bad =
            "c_student = [1.0, 1.0]\nc_teacher = [-1.0, 1.0]\nnoise_sigma = 0.0\na_init = 1.0\n";
        assert!(toml::from_str::<CoefficientSpec>(bad).is_err());
    }
}
