//! Least-squares identification of tyre parameters from force samples.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{lateral_force, TyreError, TyreParams, TyreQuery};

/// One measured operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TyreSample {
    pub alpha: f64,
    pub fx: f64,
    pub fz: f64,
    pub fy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TyreFitReport {
    pub params: TyreParams,
    pub rms_residual_n: f64,
    pub n_samples: usize,
}

/// Search boxes for (c1, c2, c3, mu, zeta).
const BOX_LO: [f64; 5] = [15.0, 1.2, 1.5, 0.55, 0.15];
const BOX_HI: [f64; 5] = [95.0, 6.5, 8.0, 1.35, 1.85];
const N_STARTS: usize = 8;
const FIT_SEED: u64 = 0x7a11;

/// Samples must cover the saturated region for the gradient parameters to be
/// observable; below this peak slip magnitude the fit is refused.
const MIN_ALPHA_COVERAGE: f64 = 0.06;
const MIN_SAMPLES: usize = 50;

fn params_from_vec(v: &[f64; 5], fz0: f64) -> TyreParams {
    TyreParams {
        c1: v[0],
        c2: v[1],
        c3: v[2],
        fz0,
        mu: v[3],
        zeta: v[4],
    }
}

fn residuals(v: &[f64; 5], fz0: f64, samples: &[TyreSample], out: &mut DVector<f64>) {
    let p = params_from_vec(v, fz0);
    for (i, s) in samples.iter().enumerate() {
        out[i] = lateral_force(TyreQuery { alpha: s.alpha, fx: s.fx, fz: s.fz }, &p) - s.fy;
    }
}

fn cost(v: &[f64; 5], fz0: f64, samples: &[TyreSample], scratch: &mut DVector<f64>) -> f64 {
    residuals(v, fz0, samples, scratch);
    scratch.norm_squared()
}

/// One Levenberg-Marquardt descent from `start`, projected onto the boxes.
/// Marquardt scaling (damping on diag(J'J)) keeps the iteration invariant to
/// uniform sample duplication.
fn lm_from(start: [f64; 5], fz0: f64, samples: &[TyreSample]) -> ([f64; 5], f64) {
    let n = samples.len();
    let mut v = start;
    let mut r = DVector::zeros(n);
    let mut rp = DVector::zeros(n);
    let mut rm = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, 5);
    let mut lambda = 1e-3;
    let mut c = cost(&v, fz0, samples, &mut r);

    for _ in 0..120 {
        residuals(&v, fz0, samples, &mut r);
        for k in 0..5 {
            let h = 1e-6 * (1.0 + v[k].abs());
            let mut vp = v;
            vp[k] += h;
            let mut vm = v;
            vm[k] -= h;
            residuals(&vp, fz0, samples, &mut rp);
            residuals(&vm, fz0, samples, &mut rm);
            for i in 0..n {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&r);
        let mut improved = false;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for k in 0..5 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial = v;
            for k in 0..5 {
                trial[k] = (v[k] + step[k]).clamp(BOX_LO[k], BOX_HI[k]);
            }
            let ct = cost(&trial, fz0, samples, &mut rp);
            if ct < c {
                v = trial;
                c = ct;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved || c < 1e-18 * n as f64 {
            break;
        }
    }
    (v, c)
}

/// Fit (c1, c2, c3, mu, zeta) with fz0 held fixed.
///
/// Runs a fixed Latin-hypercube set of local least-squares descents and keeps
/// the best; the start set is seeded, so the result is deterministic.
pub fn fit_tyre_params(samples: &[TyreSample], fz0: f64) -> Result<TyreFitReport, TyreError> {
    if samples.len() < MIN_SAMPLES {
        return Err(TyreError::IllPosedFit(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let max_alpha = samples.iter().map(|s| s.alpha.abs()).fold(0.0, f64::max);
    if max_alpha < MIN_ALPHA_COVERAGE {
        return Err(TyreError::IllPosedFit(format!(
            "slip angles reach only {max_alpha:.4} rad; saturated region not covered \
             (need |alpha| up to {MIN_ALPHA_COVERAGE} rad)"
        )));
    }
    if samples.iter().any(|s| {
        !(s.alpha.is_finite() && s.fx.is_finite() && s.fz.is_finite() && s.fy.is_finite())
            || s.fz < 0.0
    }) {
        return Err(TyreError::IllPosedFit(
            "samples contain non-finite values or negative loads".into(),
        ));
    }

    // Latin hypercube over the parameter boxes: one stratum per start and
    // dimension, shuffled per dimension.
    let mut rng = ChaCha8Rng::seed_from_u64(FIT_SEED);
    let mut strata = [[0usize; N_STARTS]; 5];
    for dim in strata.iter_mut() {
        let mut order: Vec<usize> = (0..N_STARTS).collect();
        order.shuffle(&mut rng);
        dim.copy_from_slice(&order);
    }
    let mut starts = [[0.0f64; 5]; N_STARTS];
    for s in 0..N_STARTS {
        for k in 0..5 {
            let cell = strata[k][s] as f64;
            let frac = (cell + rng.gen_range(0.05..0.95)) / N_STARTS as f64;
            starts[s][k] = BOX_LO[k] + frac * (BOX_HI[k] - BOX_LO[k]);
        }
    }

    let mut best: Option<([f64; 5], f64)> = None;
    for start in starts {
        let (v, c) = lm_from(start, fz0, samples);
        if best.as_ref().map_or(true, |(_, bc)| c < *bc) {
            best = Some((v, c));
        }
    }
    let (v, c) = best.unwrap();
    Ok(TyreFitReport {
        params: params_from_vec(&v, fz0),
        rms_residual_n: (c / samples.len() as f64).sqrt(),
        n_samples: samples.len(),
    })
}

/// Read samples from CSV with header `alpha_rad,fx_n,fz_n,fy_n`.
pub fn read_samples_csv(path: &Path) -> Result<Vec<TyreSample>, TyreError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| TyreError::SampleIo(format!("{}: {e}", path.display())))?;
    let expected = ["alpha_rad", "fx_n", "fz_n", "fy_n"];
    {
        let headers = rdr
            .headers()
            .map_err(|e| TyreError::SampleIo(e.to_string()))?;
        for (i, want) in expected.iter().enumerate() {
            match headers.get(i) {
                Some(got) if got.trim() == *want => {}
                got => {
                    return Err(TyreError::SampleIo(format!(
                        "column {} must be `{want}`, found `{}`",
                        i + 1,
                        got.unwrap_or("<missing>")
                    )))
                }
            }
        }
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TyreError::SampleIo(e.to_string()))?;
        let field = |i: usize| -> Result<f64, TyreError> {
            rec.get(i)
                .ok_or_else(|| {
                    TyreError::SampleIo(format!("row {}: missing `{}`", line + 2, expected[i]))
                })?
                .trim()
                .parse::<f64>()
                .map_err(|_| {
                    TyreError::SampleIo(format!("row {}: bad value in `{}`", line + 2, expected[i]))
                })
        };
        out.push(TyreSample {
            alpha: field(0)?,
            fx: field(1)?,
            fz: field(2)?,
            fy: field(3)?,
        });
    }
    if out.is_empty() {
        return Err(TyreError::SampleIo(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense sweep through linear and saturated regions at several loads and
    /// in-use longitudinal forces.
    pub(crate) fn reference_samples(p: &TyreParams) -> Vec<TyreSample> {
        let mut out = Vec::new();
        for &fz in &[2200.0, 4300.0, 6100.0, 7900.0] {
            for &frac in &[-0.6, -0.25, 0.0, 0.25, 0.6] {
                let fx = frac * p.mu * fz;
                for i in 0..25 {
                    let alpha = -0.26 + 0.52 * i as f64 / 24.0;
                    let fy = lateral_force(TyreQuery { alpha, fx, fz }, p);
                    out.push(TyreSample { alpha, fx, fz, fy });
                }
            }
        }
        out
    }

    #[test]
    fn round_trip_identification() {
        let truth = TyreParams::default();
        let samples = reference_samples(&truth);
        let fit = fit_tyre_params(&samples, truth.fz0).unwrap();
        for (got, want) in [
            (fit.params.c1, truth.c1),
            (fit.params.c2, truth.c2),
            (fit.params.c3, truth.c3),
            (fit.params.mu, truth.mu),
            (fit.params.zeta, truth.zeta),
        ] {
            assert!(
                (got - want).abs() / want.abs() < 0.01,
                "recovered {got} vs {want}"
            );
        }
        assert!(fit.rms_residual_n < 1e-6 * truth.mu * truth.fz0);
    }

    #[test]
    fn flat_saturation_oracle_recovers_zeta_one() {
        let truth = TyreParams { zeta: 1.0, ..TyreParams::default() };
        let samples = reference_samples(&truth);
        let fit = fit_tyre_params(&samples, truth.fz0).unwrap();
        assert!(
            (fit.params.zeta - 1.0).abs() < 0.02,
            "zeta {}",
            fit.params.zeta
        );
    }

    #[test]
    fn duplication_invariance() {
        let truth = TyreParams::default();
        let samples = reference_samples(&truth);
        let doubled: Vec<TyreSample> = samples
            .iter()
            .chain(samples.iter())
            .copied()
            .collect();
        let a = fit_tyre_params(&samples, truth.fz0).unwrap();
        let b = fit_tyre_params(&doubled, truth.fz0).unwrap();
        assert!((a.params.c1 - b.params.c1).abs() < 1e-9);
        assert!((a.params.c2 - b.params.c2).abs() < 1e-9);
        assert!((a.params.c3 - b.params.c3).abs() < 1e-9);
        assert!((a.params.mu - b.params.mu).abs() < 1e-9);
        assert!((a.params.zeta - b.params.zeta).abs() < 1e-9);
    }

    #[test]
    fn rejects_narrow_slip_coverage() {
        let truth = TyreParams::default();
        let samples: Vec<TyreSample> = (0..120)
            .map(|i| {
                let alpha = -0.017 + 0.034 * i as f64 / 119.0; // within +-1 deg
                let fy = lateral_force(TyreQuery { alpha, fx: 0.0, fz: 4300.0 }, &truth);
                TyreSample { alpha, fx: 0.0, fz: 4300.0, fy }
            })
            .collect();
        assert!(matches!(
            fit_tyre_params(&samples, truth.fz0),
            Err(TyreError::IllPosedFit(_))
        ));
    }

    #[test]
    fn rejects_too_few_samples() {
        let truth = TyreParams::default();
        let samples = vec![TyreSample { alpha: 0.1, fx: 0.0, fz: 4300.0, fy: -3000.0 }; 10];
        assert!(matches!(
            fit_tyre_params(&samples, truth.fz0),
            Err(TyreError::IllPosedFit(_))
        ));
    }
}
