//! Benchmark simulators, Latin hypercube designs and prediction metrics.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::PredictiveDist;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    Borehole,
    RobotArm,
    Piston,
    Ridge2d,
    /// Two-direction function embedded in `dim >= 4` inputs.
    LinearEmbed { dim: usize },
}

pub const DEFAULT_EMBED_DIM: usize = 6;

const BOREHOLE_DOMAIN: [(f64, f64); 8] = [
    (0.05, 0.15),       // rw
    (100.0, 50_000.0),  // r
    (63_070.0, 115_600.0), // Tu
    (990.0, 1110.0),    // Hu
    (63.1, 116.0),      // Tl
    (700.0, 820.0),     // Hl
    (1120.0, 1680.0),   // L
    (9855.0, 12_045.0), // Kw
];

const PISTON_DOMAIN: [(f64, f64); 7] = [
    (30.0, 60.0),          // M
    (0.005, 0.020),        // S
    (0.002, 0.010),        // V0
    (1000.0, 5000.0),      // k
    (90_000.0, 110_000.0), // P0
    (290.0, 296.0),        // Ta
    (340.0, 360.0),        // T0
];

impl TestFunction {
    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Borehole | TestFunction::RobotArm => 8,
            TestFunction::Piston => 7,
            TestFunction::Ridge2d => 2,
            TestFunction::LinearEmbed { dim } => *dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Borehole => "borehole",
            TestFunction::RobotArm => "robot-arm",
            TestFunction::Piston => "piston",
            TestFunction::Ridge2d => "ridge2d",
            TestFunction::LinearEmbed { .. } => "linear-embed",
        }
    }

    /// Native bounds of each coordinate.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        match self {
            TestFunction::Borehole => BOREHOLE_DOMAIN.to_vec(),
            TestFunction::RobotArm => {
                let mut d = vec![(0.0, 2.0 * PI); 4];
                d.extend([(0.0, 1.0); 4]);
                d
            }
            TestFunction::Piston => PISTON_DOMAIN.to_vec(),
            TestFunction::Ridge2d => vec![(-2.0 * PI, 2.0 * PI); 2],
            TestFunction::LinearEmbed { dim } => vec![(-1.0, 1.0); *dim],
        }
    }

    /// Evaluate at a point in native coordinates.
    pub fn eval_native(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Borehole => borehole(x),
            TestFunction::RobotArm => robot_arm(x),
            TestFunction::Piston => piston(x),
            TestFunction::Ridge2d => ridge2d(x[0], x[1]),
            TestFunction::LinearEmbed { .. } => linear_embed(x),
        }
    }

    pub fn to_native(&self, unit: &[f64]) -> Vec<f64> {
        self.domain().iter().zip(unit).map(|((lo, hi), u)| lo + u * (hi - lo)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let TestFunction::LinearEmbed { dim } = self {
            if *dim < 4 {
                return Err(Error::contract(format!("linear-embed needs at least 4 inputs, got {dim}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "borehole" => Ok(TestFunction::Borehole),
            "robot-arm" | "robotarm" | "robot_arm" => Ok(TestFunction::RobotArm),
            "piston" => Ok(TestFunction::Piston),
            "ridge2d" | "ridge" => Ok(TestFunction::Ridge2d),
            "linear-embed" | "linear_embed" => Ok(TestFunction::LinearEmbed { dim: DEFAULT_EMBED_DIM }),
            other => Err(Error::Data(format!(
                "unknown test function '{other}' (expected borehole, robot-arm, piston, ridge2d, linear-embed)"
            ))),
        }
    }
}

/// Water flow through a borehole between two aquifers.
fn borehole(x: &[f64]) -> f64 {
    let [rw, r, tu, hu, tl, hl, l, kw] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]];
    let log_ratio = (r / rw).ln();
    let num = 2.0 * PI * tu * (hu - hl);
    let den = log_ratio * (1.0 + 2.0 * l * tu / (log_ratio * rw * rw * kw) + tu / tl);
    num / den
}

/// Distance of a four-segment planar arm's end from the origin.
fn robot_arm(x: &[f64]) -> f64 {
    let (mut u, mut v, mut angle) = (0.0, 0.0, 0.0);
    for i in 0..4 {
        angle += x[i];
        u += x[4 + i] * angle.cos();
        v += x[4 + i] * angle.sin();
    }
    (u * u + v * v).sqrt()
}

/// Cycle time of a piston within a cylinder.
fn piston(x: &[f64]) -> f64 {
    let [m, s, v0, k, p0, ta, t0] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6]];
    let a = p0 * s + 19.62 * m - k * v0 / s;
    let v = s / (2.0 * k) * ((a * a + 4.0 * k * p0 * v0 * ta / t0).sqrt() - a);
    2.0 * PI * (m / (k + s * s * p0 * v0 * ta / (t0 * v * v))).sqrt()
}

pub fn ridge2d(x: f64, y: f64) -> f64 {
    let z = x + y;
    z.sin() * z.cos() * (-z / 10.0).exp()
}

/// `sin(u) cos(v) exp(-(u + v)/10)` with `u`, `v` two orthogonal directions
/// through the first four coordinates; every later coordinate is inert.
fn linear_embed(x: &[f64]) -> f64 {
    let s = 2.0 / 3f64.sqrt();
    let u = s * (x[0] + x[1] + x[2]);
    let v = s * (x[0] - x[1] + x[3]);
    u.sin() * v.cos() * (-(u + v) / 10.0).exp()
}

/// Unit directions spanned by the linear-embed function, for tests.
pub fn linear_embed_directions(dim: usize) -> (Vec<f64>, Vec<f64>) {
    let c = 1.0 / 3f64.sqrt();
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    a[..3].copy_from_slice(&[c, c, c]);
    b[..4].copy_from_slice(&[c, -c, 0.0, c]);
    (a, b)
}

/// Random Latin hypercube of `n` points in `[0, 1]^p`.
pub fn lhs_sample(n: usize, p: usize, seed: u64) -> Mat<f64> {
    let mut rng = seed::rng(seed);
    let mut out = Mat::zeros(n, p);
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..p {
        perm.shuffle(&mut rng);
        for (i, &cell) in perm.iter().enumerate() {
            out[(i, k)] = (cell as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    out
}

/// Evaluate `f` on unit-cube rows.
pub fn eval_function(f: &TestFunction, x_unit: MatRef<'_, f64>) -> Result<Vec<f64>> {
    f.validate()?;
    if x_unit.ncols() != f.dim() {
        return Err(Error::dim(format!("{} expects {} inputs, design has {}", f, f.dim(), x_unit.ncols())));
    }
    Ok((0..x_unit.nrows())
        .map(|i| {
            let row = crate::linalg::row(x_unit, i);
            f.eval_native(&f.to_native(&row))
        })
        .collect())
}

pub fn mse(y_hat: &[f64], y_true: &[f64]) -> Result<f64> {
    if y_hat.len() != y_true.len() {
        return Err(Error::dim(format!("{} predictions for {} responses", y_hat.len(), y_true.len())));
    }
    if y_hat.is_empty() {
        return Err(Error::contract("mse of an empty set"));
    }
    Ok(y_hat.iter().zip(y_true).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y_hat.len() as f64)
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Negative mean Gaussian log predictive density; smaller is better.
pub fn neg_log_score(pred: &PredictiveDist, y_true: &[f64]) -> Result<f64> {
    if pred.mean.len() != y_true.len() || pred.variance.len() != y_true.len() {
        return Err(Error::dim(format!(
            "predictive distribution has {} points, {} responses given",
            pred.mean.len(),
            y_true.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::contract("score of an empty set"));
    }
    let mut total = 0.0;
    for ((mu, s2), y) in pred.mean.iter().zip(&pred.variance).zip(y_true) {
        if !(*s2 >= 0.0) {
            return Err(Error::Numerical(format!("invalid predictive variance {s2}")));
        }
        let s2 = s2.max(VARIANCE_FLOOR);
        total += -0.5 * (2.0 * PI * s2).ln() - (y - mu) * (y - mu) / (2.0 * s2);
    }
    Ok(-total / y_true.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn lhs_single_point() {
        let x = lhs_sample(1, 3, 9);
        assert_eq!(x.shape(), (1, 3));
        for k in 0..3 {
            assert!((0.0..1.0).contains(&x[(0, k)]));
        }
    }

    #[test]
    fn lhs_determinism() {
        let a = lhs_sample(50, 4, 1);
        let b = lhs_sample(50, 4, 1);
        let c = lhs_sample(50, 4, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn lhs_one_point_per_stratum(n in 1usize..200, p in 1usize..6, seed in 0u64..1000) {
            let x = lhs_sample(n, p, seed);
            for k in 0..p {
                let mut cells: Vec<usize> = (0..n).map(|i| (x[(i, k)] * n as f64).floor() as usize).collect();
                cells.sort_unstable();
                prop_assert_eq!(cells, (0..n).collect::<Vec<_>>());
            }
        }

        #[test]
        fn metrics_permutation_invariant(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.01f64..3.0), 1..40)) {
            let yh: Vec<f64> = v.iter().map(|t| t.0).collect();
            let yt: Vec<f64> = v.iter().map(|t| t.1).collect();
            let s2: Vec<f64> = v.iter().map(|t| t.2).collect();
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.reverse();
            let pick = |src: &[f64]| idx.iter().map(|&i| src[i]).collect::<Vec<_>>();
            let a = mse(&yh, &yt).unwrap();
            let b = mse(&pick(&yh), &pick(&yt)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            let pa = PredictiveDist { mean: yh.clone(), variance: s2.clone() };
            let pb = PredictiveDist { mean: pick(&yh), variance: pick(&s2) };
            let sa = neg_log_score(&pa, &yt).unwrap();
            let sb = neg_log_score(&pb, &pick(&yt)).unwrap();
            prop_assert!((sa - sb).abs() <= 1e-12 * sa.abs().max(1.0));
        }
    }

    #[test]
    fn ridge_values() {
        assert_eq!(ridge2d(0.0, 0.0), 0.0);
        for &(x, y) in &[(0.3, 1.1), (-2.0, 3.4), (5.0, -3.6)] {
            let z = x + y;
            assert!((ridge2d(x, y) - ridge2d(z - 1.7, 1.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_unit_cube_maps_to_native_square() {
        let f = TestFunction::Ridge2d;
        let x = Mat::from_fn(1, 2, |_, _| 0.5);
        assert_eq!(eval_function(&f, x.as_ref()).unwrap(), vec![0.0]);
    }

    // Midpoint values from an independent transcription of the published
    // formulas (computed outside this crate).
    #[test]
    fn benchmark_midpoints_pinned() {
        let mid = |f: TestFunction| {
            let x = Mat::from_fn(1, f.dim(), |_, _| 0.5);
            eval_function(&f, x.as_ref()).unwrap()[0]
        };
        assert_relative_eq!(mid(TestFunction::Borehole), BOREHOLE_MID, max_relative = 1e-12);
        // the arm folds back to the origin at the midpoint, so pin an asymmetric point
        let arm = Mat::from_fn(1, 8, |_, k| [0.1, 0.3, 0.7, 0.2, 0.9, 0.4, 0.6, 0.2][k]);
        let arm_value = eval_function(&TestFunction::RobotArm, arm.as_ref()).unwrap()[0];
        assert_relative_eq!(arm_value, ROBOT_ARM_AT_POINT, max_relative = 1e-12);
        assert!(mid(TestFunction::RobotArm).abs() < 1e-12);
        assert_relative_eq!(mid(TestFunction::Piston), PISTON_MID, max_relative = 1e-12);
    }

    const BOREHOLE_MID: f64 = 70.872_912_636_818_97;
    const ROBOT_ARM_AT_POINT: f64 = 1.547_266_144_680_682_8;
    const PISTON_MID: f64 = 0.464_397_022_471_802_5;

    #[test]
    fn functions_deterministic() {
        let x = lhs_sample(20, 8, 3);
        for f in [TestFunction::Borehole, TestFunction::RobotArm] {
            assert_eq!(eval_function(&f, x.as_ref()).unwrap(), eval_function(&f, x.as_ref()).unwrap());
        }
    }

    #[test]
    fn linear_embed_depends_on_two_directions() {
        let f = TestFunction::LinearEmbed { dim: 6 };
        let (a, b) = linear_embed_directions(6);
        // a perturbation orthogonal to both directions leaves f unchanged
        let w = [0.0, 0.0, 0.0, 0.0, 1.0, -1.0];
        assert!(a.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>().abs() < 1e-15);
        assert!(b.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>().abs() < 1e-15);
        let x0 = [0.1, -0.3, 0.5, 0.2, -0.7, 0.4];
        let x1: Vec<f64> = x0.iter().zip(&w).map(|(x, d)| x + 0.2 * d).collect();
        assert!((f.eval_native(&x0) - f.eval_native(&x1)).abs() < 1e-15);
        let w2 = [1.0, -1.0, 0.0, 0.0, 0.0, 0.0];
        let x2: Vec<f64> = x0.iter().zip(&w2).map(|(x, d)| x + 0.2 * d).collect();
        assert!((f.eval_native(&x0) - f.eval_native(&x2)).abs() > 1e-3);
        assert!(TestFunction::LinearEmbed { dim: 3 }.validate().is_err());
    }

    #[test]
    fn eval_dimension_mismatch() {
        let x = lhs_sample(3, 2, 0);
        assert!(matches!(eval_function(&TestFunction::Piston, x.as_ref()), Err(Error::Dimension(_))));
    }

    #[test]
    fn mse_examples() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
        assert_eq!(mse(&shifted, &y).unwrap(), 1.0);
        let mut rng = seed::rng(4);
        let a: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for i in 0..30 {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert_relative_eq!(mse(&a, &b).unwrap(), acc / 30.0, epsilon = 1e-15);
        assert!(mse(&a, &b[..3]).is_err());
    }

    #[test]
    fn score_examples() {
        let y = vec![0.3, -1.2];
        let unit_density = PredictiveDist { mean: y.clone(), variance: vec![1.0 / (2.0 * PI); 2] };
        assert!(neg_log_score(&unit_density, &y).unwrap().abs() < 1e-14);
        let unit_var = PredictiveDist { mean: y.clone(), variance: vec![1.0; 2] };
        assert_relative_eq!(neg_log_score(&unit_var, &y).unwrap(), 0.918_938_533_204_672_8, epsilon = 1e-14);

        let mut rng = seed::rng(8);
        let m: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s2: Vec<f64> = (0..25).map(|_| rng.random_range(0.1..2.0)).collect();
        let yt: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
        let oracle: f64 = (0..25)
            .map(|i| {
                let sd = s2[i].sqrt();
                let z = (yt[i] - m[i]) / sd;
                -((-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())).ln()
            })
            .sum::<f64>()
            / 25.0;
        let pred = PredictiveDist { mean: m, variance: s2 };
        assert_relative_eq!(neg_log_score(&pred, &yt).unwrap(), oracle, epsilon = 1e-12);

        let bad = PredictiveDist { mean: vec![0.0], variance: vec![-1.0] };
        assert!(neg_log_score(&bad, &[0.0]).is_err());
    }
}
