//! Extended Fiala lateral tyre model.
//!
//! The cornering stiffness adapts to the vertical load and to the
//! longitudinal force in use, the lateral capacity follows the friction
//! circle, and the saturated region carries a configurable gradient so the
//! force keeps a usable slope past the peak (falling for `zeta < 1`, rising
//! for `zeta > 1`, flat classic saturation at `zeta = 1`).

pub mod fit;

pub use fit::{fit_tyre_params, read_samples_csv, TyreFitReport, TyreSample};

use serde::{Deserialize, Serialize};

use crate::math::Real;

/// Keep queries strictly inside the friction circle so the stiffness and
/// capacity expressions stay finite.
const FX_CLAMP_FRACTION: f64 = 0.999999;
/// Slip angles beyond this are outside any brush-model validity; the tangent
/// is clamped so spun states do not produce infinities.
const ALPHA_CAP: f64 = 1.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TyreParams {
    /// Cornering stiffness scale [-]
    pub c1: f64,
    /// Vertical load at peak stiffness, as a multiple of `fz0` [-]
    pub c2: f64,
    /// Longitudinal/lateral coupling exponent [-]
    pub c3: f64,
    /// Nominal vertical load [N]
    pub fz0: f64,
    /// Friction coefficient [-]
    pub mu: f64,
    /// Saturation gradient parameter, in [0, 2]
    pub zeta: f64,
}

impl Default for TyreParams {
    fn default() -> Self {
        TyreParams {
            c1: 49.3,
            c2: 3.5,
            c3: 4.1,
            fz0: 4300.0,
            mu: 0.95,
            zeta: 0.9,
        }
    }
}

impl TyreParams {
    pub fn validate(&self) -> Result<(), TyreError> {
        let pos = [self.c1, self.c2, self.c3, self.fz0, self.mu];
        if pos.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(TyreError::InvalidParams(
                "c1, c2, c3, fz0 and mu must be strictly positive".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.zeta) {
            return Err(TyreError::InvalidParams("zeta must lie in [0, 2]".into()));
        }
        Ok(())
    }
}

/// One lateral-force query: slip angle, longitudinal force in use, load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TyreQuery {
    pub alpha: f64,
    pub fx: f64,
    pub fz: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TyreError {
    #[error("longitudinal force saturates the friction circle (|Fx| >= mu Fz)")]
    SaturatedInput,
    #[error("cornering stiffness must be positive")]
    DegenerateStiffness,
    #[error("invalid tyre parameters: {0}")]
    InvalidParams(String),
    #[error("tyre fit is ill-posed: {0}")]
    IllPosedFit(String),
    #[error("tyre sample file: {0}")]
    SampleIo(String),
}

/// Load-dependent cornering stiffness [N/rad].
pub fn cornering_stiffness_fz(fz: f64, p: &TyreParams) -> f64 {
    stiffness_fz_generic(fz, p)
}

pub(crate) fn stiffness_fz_generic<R: Real>(fz: R, p: &TyreParams) -> R {
    let two = R::from_f64(2.0);
    let c1fz0 = R::from_f64(p.c1 * p.fz0);
    let c2fz0 = R::from_f64(p.c2 * p.fz0);
    c1fz0 * (two * (fz / c2fz0).atan2(R::from_f64(1.0))).sin()
}

/// Stiffness reduced by the longitudinal force in use [N/rad].
pub fn cornering_stiffness_fx(fx: f64, fz: f64, p: &TyreParams) -> Result<f64, TyreError> {
    if fx.abs() >= p.mu * fz {
        return Err(TyreError::SaturatedInput);
    }
    Ok(stiffness_fx_generic(fx, fz, p))
}

pub(crate) fn stiffness_fx_generic<R: Real>(fx: R, fz: R, p: &TyreParams) -> R {
    if fz.value() <= 1e-9 {
        return R::from_f64(0.0);
    }
    let half = R::from_f64(0.5);
    let one = R::from_f64(1.0);
    let mu_fz = R::from_f64(p.mu) * fz;
    let fx_abs = fx.abs();
    let cy = stiffness_fz_generic(fz, p);
    let coupling = (one - (fx_abs / mu_fz).powf(p.c3)).powf(p.c3);
    half * (mu_fz - fx_abs) + coupling * (cy - half * mu_fz)
}

/// Lateral capacity left by the friction circle [N].
pub fn fy_max(fx: f64, fz: f64, p: &TyreParams) -> Result<f64, TyreError> {
    if fx.abs() > p.mu * fz {
        return Err(TyreError::SaturatedInput);
    }
    Ok(fy_max_generic(fx, fz, p))
}

pub(crate) fn fy_max_generic<R: Real>(fx: R, fz: R, p: &TyreParams) -> R {
    let mu_fz = R::from_f64(p.mu) * fz;
    let arg = mu_fz * mu_fz - fx * fx;
    arg.max_by_value(R::from_f64(0.0)).sqrt()
}

/// Slip threshold where the lateral force peaks, as a bound on tan(alpha).
pub fn slip_threshold(cym: f64, fymax: f64) -> Result<f64, TyreError> {
    if cym <= 0.0 {
        return Err(TyreError::DegenerateStiffness);
    }
    Ok(3.0 * fymax / cym)
}

/// Sub-threshold cubic branch, as a function of tan(alpha).
pub fn fy_unsaturated(tan_alpha: f64, cym: f64, fymax: f64) -> f64 {
    fy_unsaturated_generic(tan_alpha, cym, fymax)
}

pub(crate) fn fy_unsaturated_generic<R: Real>(t: R, cym: R, fymax: R) -> R {
    let three = R::from_f64(3.0);
    let twenty_seven = R::from_f64(27.0);
    -(cym * t) + cym * cym * t * t.abs() / (three * fymax)
        - cym * cym * cym * t * t * t / (twenty_seven * fymax * fymax)
}

/// Saturated branch with gradient parameter `zeta`.
pub fn fy_saturated(tan_alpha: f64, cym: f64, fymax: f64, zeta: f64) -> f64 {
    fy_saturated_generic(tan_alpha, cym, fymax, zeta)
}

pub(crate) fn fy_saturated_generic<R: Real>(t: R, cym: R, fymax: R, zeta: f64) -> R {
    let zm1 = R::from_f64(zeta - 1.0);
    let z = R::from_f64(zeta);
    let two_thirds = R::from_f64(2.0 / 3.0);
    let nine = R::from_f64(9.0);
    two_thirds * cym * zm1 * t - cym * cym * zm1 * t * t.abs() / (nine * fymax)
        - fymax * z * t.signum_const()
}

/// Lateral tyre force [N]. Clamps the query inside the friction circle and
/// returns zero for an unloaded tyre.
pub fn lateral_force(q: TyreQuery, p: &TyreParams) -> f64 {
    lateral_force_generic(q.alpha, q.fx, q.fz, p)
}

pub(crate) fn lateral_force_generic<R: Real>(alpha: R, fx: R, fz: R, p: &TyreParams) -> R {
    let zero = R::from_f64(0.0);
    if fz.value() <= 1e-9 {
        return zero;
    }
    let mu_fz = R::from_f64(p.mu) * fz;
    let clamp = mu_fz * R::from_f64(FX_CLAMP_FRACTION);
    let fx_c = fx.clamp_by_value(-clamp, clamp);
    let cym = stiffness_fx_generic(fx_c, fz, p);
    let fymax = fy_max_generic(fx_c, fz, p);
    let cap = R::from_f64(ALPHA_CAP);
    let t = alpha.clamp_by_value(-cap, cap).tan();
    // Branch on |tan a| * Cym <= 3 Fymax, which avoids dividing by Cym.
    if (t.abs() * cym).value() <= (R::from_f64(3.0) * fymax).value() {
        fy_unsaturated_generic(t, cym, fymax)
    } else {
        fy_saturated_generic(t, cym, fymax, p.zeta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn p() -> TyreParams {
        TyreParams::default()
    }

    #[test]
    fn stiffness_vanishes_without_load() {
        assert_eq!(cornering_stiffness_fz(0.0, &p()), 0.0);
    }

    #[test]
    fn stiffness_peaks_at_c2_fz0() {
        // sin(2 atan(1)) = 1, so the peak value is exactly c1 * fz0.
        let tp = p();
        let peak = cornering_stiffness_fz(tp.c2 * tp.fz0, &tp);
        assert_relative_eq!(peak, tp.c1 * tp.fz0, max_relative = 1e-12);
        assert_relative_eq!(peak, 211_990.0, max_relative = 1e-12);
    }

    #[test]
    fn stiffness_at_nominal_load_matches_identity() {
        // sin(2 atan(x)) = 2x / (1 + x^2) gives an independent route.
        let tp = p();
        let x = 1.0 / tp.c2;
        let expect = tp.c1 * tp.fz0 * 2.0 * x / (1.0 + x * x);
        assert_relative_eq!(
            cornering_stiffness_fz(tp.fz0, &tp),
            expect,
            max_relative = 1e-12
        );
        assert_relative_eq!(expect, 111_994.7, max_relative = 1e-5);
    }

    #[test]
    fn coupled_stiffness_reduces_to_load_only_at_zero_fx() {
        let tp = p();
        for fz in [2000.0, 4300.0, 8000.0] {
            assert_relative_eq!(
                cornering_stiffness_fx(0.0, fz, &tp).unwrap(),
                cornering_stiffness_fz(fz, &tp),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn coupled_stiffness_decays_to_zero_at_circle() {
        let tp = p();
        let fz = 4300.0;
        let near = tp.mu * fz * (1.0 - 1e-3);
        let cym = cornering_stiffness_fx(near, fz, &tp).unwrap();
        assert!(cym > 0.0);
        assert!(cym < 1e-3 * cornering_stiffness_fz(fz, &tp));
        assert!(cornering_stiffness_fx(tp.mu * fz, fz, &tp).is_err());
    }

    #[test]
    fn coupled_stiffness_monotone_in_fx_magnitude() {
        let tp = p();
        let fz = 5000.0;
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let fx = tp.mu * fz * (i as f64 / 200.0) * 0.999;
            let c = cornering_stiffness_fx(fx, fz, &tp).unwrap();
            assert!(c <= prev + 1e-9, "stiffness rose at fx={fx}");
            assert_relative_eq!(
                c,
                cornering_stiffness_fx(-fx, fz, &tp).unwrap(),
                max_relative = 1e-14
            );
            prev = c;
        }
    }

    #[test]
    fn capacity_follows_friction_circle() {
        let tp = p();
        let fz = 4300.0;
        let mu_fz = tp.mu * fz;
        assert_relative_eq!(fy_max(0.0, fz, &tp).unwrap(), mu_fz, max_relative = 1e-14);
        assert_abs_diff_eq!(fy_max(mu_fz, fz, &tp).unwrap(), 0.0, epsilon = 1e-9);
        // 3-4-5 triangle
        assert_relative_eq!(
            fy_max(0.6 * mu_fz, fz, &tp).unwrap(),
            0.8 * mu_fz,
            max_relative = 1e-12
        );
        assert!(fy_max(1.01 * mu_fz, fz, &tp).is_err());
    }

    #[test]
    fn slip_threshold_examples() {
        let thr = slip_threshold(122_550.0, 4085.0).unwrap();
        assert_relative_eq!(thr, 0.1, max_relative = 1e-12);
        // Homogeneous of degree zero.
        assert_relative_eq!(
            slip_threshold(2.0 * 122_550.0, 2.0 * 4085.0).unwrap(),
            thr,
            max_relative = 1e-14
        );
        assert!(slip_threshold(0.0, 4085.0).is_err());
    }

    #[test]
    fn zero_slip_zero_force_and_odd_symmetry() {
        let tp = p();
        assert_eq!(
            lateral_force(TyreQuery { alpha: 0.0, fx: 500.0, fz: 4300.0 }, &tp),
            0.0
        );
        for alpha in [0.01, 0.05, 0.12, 0.3] {
            for fx in [0.0, 1200.0, -2500.0] {
                let fp = lateral_force(TyreQuery { alpha, fx, fz: 5000.0 }, &tp);
                let fm = lateral_force(TyreQuery { alpha: -alpha, fx, fz: 5000.0 }, &tp);
                assert_relative_eq!(fp, -fm, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn unloaded_tyre_produces_no_force() {
        assert_eq!(
            lateral_force(TyreQuery { alpha: 0.2, fx: 0.0, fz: 0.0 }, &p()),
            0.0
        );
    }

    #[test]
    fn both_branches_meet_at_minus_fymax() {
        // Substituting tan a = 3 Fymax / Cym into either branch gives -Fymax.
        let tp = p();
        let (fz, fx) = (4300.0, 1000.0);
        let cym = cornering_stiffness_fx(fx, fz, &tp).unwrap();
        let fymax = fy_max(fx, fz, &tp).unwrap();
        let t = slip_threshold(cym, fymax).unwrap();
        assert_relative_eq!(fy_unsaturated(t, cym, fymax), -fymax, max_relative = 1e-12);
        assert_relative_eq!(
            fy_saturated(t, cym, fymax, tp.zeta),
            -fymax,
            max_relative = 1e-12
        );
    }

    #[test]
    fn classic_saturation_is_flat_at_zeta_one() {
        let tp = TyreParams { zeta: 1.0, ..p() };
        let (fz, fx) = (4300.0, 0.0);
        let cym = cornering_stiffness_fx(fx, fz, &tp).unwrap();
        let fymax = fy_max(fx, fz, &tp).unwrap();
        let thr = slip_threshold(cym, fymax).unwrap().atan();
        for k in [1.2, 1.5, 2.0] {
            let fy = lateral_force(TyreQuery { alpha: k * thr, fx, fz }, &tp);
            assert_relative_eq!(fy, -fymax, max_relative = 1e-12);
        }
    }

    #[test]
    fn saturated_branch_matches_closed_form() {
        // Algebra on the saturated branch gives |Fy| = F (1 + (z-1)(tau-1)^2)
        // with tau = tan(a)/tan(a_thr); use it as an independent oracle.
        for zeta in [0.5, 0.9, 1.2] {
            let tp = TyreParams { zeta, ..p() };
            let (fz, fx) = (5200.0, -800.0);
            let cym = cornering_stiffness_fx(fx, fz, &tp).unwrap();
            let fymax = fy_max(fx, fz, &tp).unwrap();
            let t_thr = slip_threshold(cym, fymax).unwrap();
            for tau in [1.1, 1.5, 2.0, 2.5] {
                let alpha = (tau * t_thr).atan();
                let fy = lateral_force(TyreQuery { alpha, fx, fz }, &tp);
                let oracle = -fymax * (1.0 + (zeta - 1.0) * (tau - 1.0) * (tau - 1.0));
                assert_relative_eq!(fy, oracle, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn value_and_slope_continuous_at_threshold() {
        let tp = p();
        for &fz in &[2000.0, 4000.0, 6000.0, 8000.0] {
            for frac in [-0.8, -0.4, 0.0, 0.4, 0.8] {
                for zeta in [0.5, 1.0, 1.5] {
                    let tpz = TyreParams { zeta, ..tp };
                    let fx = frac * tp.mu * fz;
                    let cym = cornering_stiffness_fx(fx, fz, &tpz).unwrap();
                    let fymax = fy_max(fx, fz, &tpz).unwrap();
                    let a_thr = slip_threshold(cym, fymax).unwrap().atan();
                    let eps = 1e-9;
                    let lo = lateral_force(TyreQuery { alpha: a_thr - eps, fx, fz }, &tpz);
                    let hi = lateral_force(TyreQuery { alpha: a_thr + eps, fx, fz }, &tpz);
                    assert!(
                        (lo - hi).abs() / fymax < 1e-6,
                        "value jump at fz={fz} frac={frac} zeta={zeta}"
                    );
                    // Slopes vanish at the peak from both sides.
                    let h = 1e-5;
                    let dlo = (lateral_force(TyreQuery { alpha: a_thr - h, fx, fz }, &tpz)
                        - lateral_force(TyreQuery { alpha: a_thr - 2.0 * h, fx, fz }, &tpz))
                        / h;
                    let dhi = (lateral_force(TyreQuery { alpha: a_thr + 2.0 * h, fx, fz }, &tpz)
                        - lateral_force(TyreQuery { alpha: a_thr + h, fx, fz }, &tpz))
                        / h;
                    let scale = cym.max(1.0);
                    assert!(dlo.abs() / scale < 1e-4, "pre-peak slope {dlo}");
                    assert!(dhi.abs() / scale < 1e-4, "post-peak slope {dhi}");
                }
            }
        }
    }

    #[test]
    fn saturation_gradient_sign_follows_zeta() {
        let fz = 4300.0;
        let fx = 0.0;
        for (zeta, rising) in [(0.8, false), (1.2, true)] {
            let tp = TyreParams { zeta, ..p() };
            let cym = cornering_stiffness_fx(fx, fz, &tp).unwrap();
            let fymax = fy_max(fx, fz, &tp).unwrap();
            let a_thr = slip_threshold(cym, fymax).unwrap().atan();
            let mut prev = fymax;
            for i in 1..=40 {
                let alpha = a_thr + i as f64 * (0.26 - a_thr) / 40.0;
                let mag = lateral_force(TyreQuery { alpha, fx, fz }, &tp).abs();
                if rising {
                    assert!(mag >= prev - 1e-9, "fell at alpha={alpha} (zeta 1.2)");
                } else {
                    assert!(mag <= prev + 1e-9, "rose at alpha={alpha} (zeta 0.8)");
                }
                prev = mag;
            }
        }
    }

    #[test]
    fn linear_slope_matches_stiffness() {
        let tp = p();
        for (fx, fz) in [(0.0, 4300.0), (1500.0, 6000.0), (-2000.0, 5000.0)] {
            let cym = cornering_stiffness_fx(fx, fz, &tp).unwrap();
            let h = 1e-7;
            let d = (lateral_force(TyreQuery { alpha: h, fx, fz }, &tp)
                - lateral_force(TyreQuery { alpha: -h, fx, fz }, &tp))
                / (2.0 * h);
            assert_relative_eq!(d, -cym, max_relative = 1e-3);
        }
    }

    #[test]
    fn combined_force_stays_in_friction_circle_on_domain() {
        // Valid envelope: |alpha| <= 15 deg, default zeta.
        let tp = p();
        for &fz in &[2000.0, 4300.0, 7000.0] {
            for i in -8..=8 {
                let fx = 0.1 * i as f64 * tp.mu * fz;
                for j in 0..=30 {
                    let alpha = 0.26 * j as f64 / 30.0;
                    let fy = lateral_force(TyreQuery { alpha, fx, fz }, &tp);
                    let total = (fx * fx + fy * fy).sqrt();
                    assert!(
                        total <= tp.mu * fz * (1.0 + 1e-9),
                        "violated at fz={fz} fx={fx} alpha={alpha}"
                    );
                }
            }
        }
    }
}
