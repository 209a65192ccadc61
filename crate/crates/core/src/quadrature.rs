//! Adaptive Gauss–Kronrod (7, 15) quadrature.

// Node and weight tables are quoted at full published precision.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_488_98,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integral of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut stack = vec![(a, b, tol)];
    let mut total = 0.0;
    let mut evals = 0usize;
    while let Some((lo, hi, t)) = stack.pop() {
        let (v, err) = gk15(&f, lo, hi);
        evals += 1;
        if !v.is_finite() {
            return Err(Error::Diagnostic("integrand is not finite".into()));
        }
        if err <= t || (hi - lo) < 1e-14 * (1.0 + lo.abs()) {
            total += v;
        } else if evals > 200_000 {
            return Err(Error::Diagnostic("quadrature did not converge".into()));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * t));
            stack.push((mid, hi, 0.5 * t));
        }
    }
    Ok(total)
}

/// Integral of `f` over `[0, ∞)` via `t = x / (1 − x)`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> Result<f64> {
    integrate(
        |x| {
            if x >= 1.0 {
                return 0.0;
            }
            let one_m = 1.0 - x;
            let v = f(x / one_m);
            if v == 0.0 {
                0.0
            } else {
                v / (one_m * one_m)
            }
        },
        0.0,
        1.0,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomials_and_exponentials() {
        assert_relative_eq!(
            integrate(|x| x * x, 0.0, 3.0, 1e-12).unwrap(),
            9.0,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            integrate_half_line(|t| (-t).exp(), 1e-13).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            integrate_half_line(|t| (-2.5 * t).exp(), 1e-13).unwrap(),
            0.4,
            max_relative = 1e-12
        );
    }

    #[test]
    fn kink_and_peak() {
        assert_relative_eq!(
            integrate(|x: f64| x.abs(), -1.0, 2.0, 1e-12).unwrap(),
            2.5,
            max_relative = 1e-11
        );
        let v = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10).unwrap();
        assert_relative_eq!(v, 2.0 * 100.0 * (100f64).atan(), max_relative = 1e-10);
    }
}
