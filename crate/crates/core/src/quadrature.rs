//! Globally adaptive Gauss–Kronrod quadrature (G7/K15 or G10/K21).
//!
//! The interval with the largest error estimate is bisected until the summed
//! estimate meets `max(abs, rel·|I|)`. Error estimates use the QUADPACK
//! rescaling of `|K − G|`.
//!
//! Integrands may themselves be integrals. [`integrate_nested`] takes an
//! integrand returning `(value, error)` and carries the inner errors through
//! the same Kronrod weights, so the reported error covers both levels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

const XGK15: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK15: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights at XGK15[1], XGK15[3], XGK15[5].
const WG7: [f64; 3] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
];
const WG7_CENTRE: f64 = 0.417_959_183_673_469_387_755_102_040_816_327;

const XGK21: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK21: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Gauss weights at the odd entries of XGK21; the 10-point rule has no centre.
const WG10: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Gauss–Kronrod pair used on each panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// 7-point Gauss, 15-point Kronrod.
    Gk15,
    /// 10-point Gauss, 21-point Kronrod.
    Gk21,
}

impl Rule {
    /// Kronrod nodes (centre last), Kronrod weights, Gauss weights at odd
    /// nodes, Gauss centre weight.
    fn tables(self) -> (&'static [f64], &'static [f64], &'static [f64], f64) {
        match self {
            Rule::Gk15 => (&XGK15, &WGK15, &WG7, WG7_CENTRE),
            Rule::Gk21 => (&XGK21, &WGK21, &WG10, 0.0),
        }
    }

    pub fn points(self) -> usize {
        2 * self.tables().0.len() - 1
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error(
        "no convergence after {subdivisions} subdivisions on [{lower}, {upper}]: \
         estimate {value:e} ± {abs_error:e}"
    )]
    NonConvergence {
        lower: f64,
        upper: f64,
        value: f64,
        abs_error: f64,
        subdivisions: usize,
    },
    #[error("integrand is not finite at {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_subdivisions: usize,
    pub rule: Rule,
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Self {
            rel,
            abs: 0.0,
            max_subdivisions: 200,
            rule: Rule::Gk15,
        }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub abs_error: f64,
    /// Bisections performed at this level.
    pub subdivisions: usize,
}

struct Panel {
    lower: f64,
    upper: f64,
    value: f64,
    /// Rule error, drives refinement.
    error: f64,
    /// Error carried in from nested integrands.
    inherited: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lower.total_cmp(&self.lower))
    }
}

fn kronrod<F, E>(rule: Rule, f: &mut F, lower: f64, upper: f64) -> Result<Panel, E>
where
    F: FnMut(f64) -> Result<(f64, f64), E>,
    E: From<QuadratureError>,
{
    let (xgk, wgk, wg, wg_centre) = rule.tables();
    let n = xgk.len() - 1;
    let centre = 0.5 * (lower + upper);
    let half = 0.5 * (upper - lower);
    let mut eval = |x: f64| -> Result<(f64, f64), E> {
        let (v, e) = f(x)?;
        if !v.is_finite() {
            return Err(QuadratureError::NonFinite(x).into());
        }
        Ok((v, e))
    };

    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    let (fc, ec) = eval(centre)?;
    let mut res_g = fc * wg_centre;
    let mut res_k = fc * wgk[n];
    let mut res_abs = res_k.abs();
    let mut inherited = ec * wgk[n];

    for j in 0..n {
        let dx = half * xgk[j];
        let (f1, e1) = eval(centre - dx)?;
        let (f2, e2) = eval(centre + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += wgk[j] * (f1 + f2);
        res_abs += wgk[j] * (f1.abs() + f2.abs());
        inherited += wgk[j] * (e1 + e2);
        if j % 2 == 1 {
            res_g += wg[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * res_k;
    let mut res_asc = wgk[n] * (fc - mean).abs();
    for j in 0..n {
        res_asc += wgk[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Panel {
        lower,
        upper,
        value,
        error,
        inherited: (inherited * half).abs(),
    })
}

/// Adaptive integration of `f` over `[lower, upper]`.
pub fn integrate<F>(mut f: F, lower: f64, upper: f64, tol: &Tolerance) -> Result<Estimate, QuadratureError>
where
    F: FnMut(f64) -> f64,
{
    integrate_nested(|x| Ok::<_, QuadratureError>((f(x), 0.0)), lower, upper, tol)
}

/// Adaptive integration of an integrand that reports its own error.
pub fn integrate_nested<F, E>(mut f: F, lower: f64, upper: f64, tol: &Tolerance) -> Result<Estimate, E>
where
    F: FnMut(f64) -> Result<(f64, f64), E>,
    E: From<QuadratureError>,
{
    if lower == upper {
        return Ok(Estimate {
            value: 0.0,
            abs_error: 0.0,
            subdivisions: 0,
        });
    }
    let first = kronrod(tol.rule, &mut f, lower, upper)?;
    if first.error <= tol.target(first.value) {
        return Ok(Estimate {
            value: first.value,
            abs_error: first.error + first.inherited,
            subdivisions: 0,
        });
    }

    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::with_capacity(64);
    heap.push(first);
    let mut subdivisions = 0;

    while total_err > tol.target(total) {
        if subdivisions >= tol.max_subdivisions {
            let (value, abs_error) = sums(&heap);
            return Err(QuadratureError::NonConvergence {
                lower,
                upper,
                value,
                abs_error,
                subdivisions,
            }
            .into());
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lower + worst.upper);
        if !(mid > worst.lower && mid < worst.upper) {
            heap.push(worst);
            let (value, abs_error) = sums(&heap);
            return Err(QuadratureError::NonConvergence {
                lower,
                upper,
                value,
                abs_error,
                subdivisions,
            }
            .into());
        }
        let left = kronrod(tol.rule, &mut f, worst.lower, mid)?;
        let right = kronrod(tol.rule, &mut f, mid, worst.upper)?;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        subdivisions += 1;
    }

    let (value, abs_error) = sums(&heap);
    Ok(Estimate {
        value,
        abs_error,
        subdivisions,
    })
}

/// A single Kronrod panel, no refinement.
pub fn single_panel<F, E>(rule: Rule, mut f: F, lower: f64, upper: f64) -> Result<Estimate, E>
where
    F: FnMut(f64) -> Result<(f64, f64), E>,
    E: From<QuadratureError>,
{
    let p = kronrod(rule, &mut f, lower, upper)?;
    Ok(Estimate {
        value: p.value,
        abs_error: p.error + p.inherited,
        subdivisions: 0,
    })
}

/// Left-to-right sums so the result does not depend on heap layout.
fn sums(heap: &BinaryHeap<Panel>) -> (f64, f64) {
    let mut panels: Vec<&Panel> = heap.iter().collect();
    panels.sort_by(|a, b| a.lower.total_cmp(&b.lower));
    panels.iter().fold((0.0, 0.0), |(v, e), p| {
        (v + p.value, e + p.error + p.inherited)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_tables_integrate_monomials() {
        // K15 is exact to degree 22, K21 to degree 31; Gauss halves to 13 and 19.
        for (rule, kdeg, gdeg) in [(Rule::Gk15, 22, 13), (Rule::Gk21, 30, 19)] {
            let (xgk, wgk, wg, wc) = rule.tables();
            let n = xgk.len() - 1;
            for k in (0..=kdeg).step_by(2) {
                let mut kr = if k == 0 { wgk[n] } else { 0.0 };
                for j in 0..n {
                    kr += 2.0 * wgk[j] * xgk[j].powi(k);
                }
                assert!((kr - 2.0 / (k as f64 + 1.0)).abs() < 1e-14, "{rule:?} K degree {k}");
                if k <= gdeg {
                    let mut g = if k == 0 { wc } else { 0.0 };
                    for j in (1..n).step_by(2) {
                        g += 2.0 * wg[j / 2] * xgk[j].powi(k);
                    }
                    assert!((g - 2.0 / (k as f64 + 1.0)).abs() < 1e-14, "{rule:?} G degree {k}");
                }
            }
        }
    }

    #[test]
    fn polynomials_exact_in_one_panel() {
        let est = integrate(|x| 3.0 * x * x - 2.0 * x + 1.0, 0.0, 2.0, &Tolerance::relative(1e-10)).unwrap();
        assert!((est.value - 6.0).abs() < 1e-13);
        assert_eq!(est.subdivisions, 0);
    }

    #[test]
    fn peaked_gaussian() {
        let s = 0.01_f64;
        let f = |x: f64| (-(x - 0.3) * (x - 0.3) / (2.0 * s * s)).exp();
        let est = integrate(f, 0.0, 1.0, &Tolerance::relative(1e-8)).unwrap();
        let exact = s * (2.0 * std::f64::consts::PI).sqrt();
        assert!((est.value - exact).abs() / exact < 1e-8);
        assert!(est.abs_error < 1e-8 * exact);
        assert!(est.subdivisions > 0);
    }

    #[test]
    fn endpoint_singularity_converges() {
        let est = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, &Tolerance::relative(1e-6)).unwrap();
        assert!((est.value - 2.0).abs() < 1e-5);
    }

    #[test]
    fn reports_non_convergence() {
        let tol = Tolerance {
            rel: 1e-14,
            max_subdivisions: 3,
            ..Tolerance::relative(0.0)
        };
        let err = integrate(|x: f64| (1.0 / x).sin(), 1e-3, 1.0, &tol).unwrap_err();
        assert!(matches!(err, QuadratureError::NonConvergence { subdivisions: 3, .. }));
    }

    #[test]
    fn nested_two_dimensional() {
        // ∫0^1 ∫0^x (x + y) dy dx = 1/2
        let tol = Tolerance::relative(1e-10);
        let est = integrate_nested(
            |x| {
                let inner = integrate(|y| x + y, 0.0, x, &tol)?;
                Ok::<_, QuadratureError>((inner.value, inner.abs_error))
            },
            0.0,
            1.0,
            &tol,
        )
        .unwrap();
        assert!((est.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_an_error() {
        let err = integrate(|x| if x > 0.5 { f64::NAN } else { 1.0 }, 0.0, 1.0, &Tolerance::relative(1e-6));
        assert!(matches!(err, Err(QuadratureError::NonFinite(_))));
    }
}
