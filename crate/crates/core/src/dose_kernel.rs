//! Plume-shine dose rate by point-kernel integration over a Gaussian plume.
//!
//! For a receptor at `(x1, y1, z1)` each gamma line contributes
//!
//! ```text
//! Ḋ = ∭ α · E · Y · (μa/ρ) · B(μr) · exp(−μr) / (4πr²) · χ(x, y, z) dV
//! ```
//!
//! and the nuclide dose is the sum over lines. With E in MeV, μa/ρ in m²/kg and
//! χ in Bq/m³ the integral is in MeV/(kg·s); the default α converts that to
//! μSv/hr with a unit tissue-to-air factor.
//!
//! The volume is truncated per line. Along x it spans `mfp_multiple` mean
//! free paths `1/μ(E)` either side of the receptor, floored at
//! `near_field_epsilon`. Across the plume it spans `sigma_multiple` σ either
//! side of the axis, laterally about `y = 0` and vertically about `z = H`
//! (clipped at the ground). The integral is nested adaptive Gauss–Kronrod
//! with z innermost, then y, then x.
//!
//! The kernel peaks at the receptor. With `d` the horizontal source-receptor
//! distance, the inner variables are changed to `z = z1 + d·sinh u` and
//! `y = y1 + |x − x1|·sinh s`, which cancel the `1/r²` and the resulting
//! `1/d` factors. What remains is a logarithmic peak of the x integrand at
//! `x1`, which is flattened by an exponential map on each side.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::dispersion::{sigma_y_unchecked, sigma_z_unchecked, DispersionError, PlumeSlice, ReleaseSpec, StabilityClass};
use crate::nuclide_db::{berger, DbError, GammaLine, NuclideDb, NuclideRecord};
use crate::quadrature::{integrate_nested, single_panel, QuadratureError, Rule, Tolerance};

/// J/MeV × (μSv/hr per Gy/s).
pub const ALPHA_USV_PER_HR: f64 = 1.602_176_634e-13 * 3.6e9;

/// Receptor distances covered by the generated tables, m.
pub const DISTANCE_RANGE_M: (f64, f64) = (25.0, 2000.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel config: {0}")]
    Config(String),
    #[error("invalid receptor: {0}")]
    Receptor(String),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error("quadrature failed for the {energy} MeV line: {source}")]
    Quadrature { energy: f64, source: QuadratureError },
    #[error(transparent)]
    Inner(#[from] QuadratureError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receptor {
    pub x1: f64,
    pub y1: f64,
    pub z1: f64,
}

impl Receptor {
    /// Reference height of a ground-level receptor, m.
    pub const GROUND_HEIGHT: f64 = 1.0;

    /// Ground-level receptor on the plume centreline.
    pub fn centerline(x1: f64) -> Self {
        Self {
            x1,
            y1: 0.0,
            z1: Self::GROUND_HEIGHT,
        }
    }

    fn validate(&self) -> Result<(), KernelError> {
        if !(self.x1.is_finite() && self.y1.is_finite() && self.z1.is_finite()) {
            return Err(KernelError::Receptor(format!("non-finite coordinate in {self:?}")));
        }
        if self.z1 < 0.0 {
            return Err(KernelError::Receptor(format!("z1 must be non-negative, got {}", self.z1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    /// Half-width of the x range in photon mean free paths.
    pub mfp_multiple: f64,
    /// Half-width of the y and z ranges in plume σ.
    pub sigma_multiple: f64,
    pub rel_tol: f64,
    /// Smallest source-receptor distance used in the kernel, m.
    pub near_field_epsilon: f64,
    pub alpha: f64,
    /// Bisection cap for each nested 1-D integral.
    pub max_subdivisions: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            mfp_multiple: 5.0,
            sigma_multiple: 4.0,
            rel_tol: 1e-4,
            near_field_epsilon: 0.5,
            alpha: ALPHA_USV_PER_HR,
            max_subdivisions: 200,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |m: String| Err(KernelError::Config(m));
        if !(self.mfp_multiple >= 2.0 && self.mfp_multiple.is_finite()) {
            return bad(format!("mfp_multiple must be >= 2, got {}", self.mfp_multiple));
        }
        if !(self.sigma_multiple >= 3.0 && self.sigma_multiple.is_finite()) {
            return bad(format!("sigma_multiple must be >= 3, got {}", self.sigma_multiple));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return bad(format!("rel_tol must be in (0, 1e-2], got {}", self.rel_tol));
        }
        if !(self.near_field_epsilon > 0.0 && self.near_field_epsilon.is_finite()) {
            return bad(format!("near_field_epsilon must be positive, got {}", self.near_field_epsilon));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.max_subdivisions == 0 {
            return bad("max_subdivisions must be positive".into());
        }
        Ok(())
    }

    /// Stable text form, used for hashing and sidecar files.
    pub fn canonical(&self) -> String {
        format!(
            "mfp_multiple={:?};sigma_multiple={:?};rel_tol={:?};near_field_epsilon={:?};alpha={:?};max_subdivisions={}",
            self.mfp_multiple, self.sigma_multiple, self.rel_tol, self.near_field_epsilon, self.alpha, self.max_subdivisions
        )
    }
}

/// Per-line constants of the point kernel.
#[derive(Debug, Clone, Copy)]
pub struct LineKernel {
    /// α · E · Y · μa/ρ / 4π.
    scale: f64,
    pub mu: f64,
    a: f64,
    b: f64,
    eps: f64,
}

impl LineKernel {
    pub fn new(db: &NuclideDb, line: &GammaLine, cfg: &KernelConfig) -> Result<Self, KernelError> {
        let (mu, mua) = db.attenuation(line.energy)?;
        let (a, b) = db.photon.berger(line.energy);
        Ok(Self {
            scale: cfg.alpha * line.energy * line.yield_per_decay * mua / (4.0 * PI),
            mu,
            a,
            b,
            eps: cfg.near_field_epsilon,
        })
    }

    /// Kernel value at squared distance `r2`, r clamped at ε.
    #[inline]
    pub fn at_r2(&self, r2: f64) -> f64 {
        let r2 = r2.max(self.eps * self.eps);
        let mu_r = self.mu * r2.sqrt();
        self.scale * berger(self.a, self.b, mu_r) * (-mu_r).exp() / r2
    }

    pub fn mean_free_path(&self) -> f64 {
        1.0 / self.mu
    }
}

/// Truncated integration volume for one line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_lower: f64,
    pub x_upper: f64,
    pub sigma_multiple: f64,
    pub stability: StabilityClass,
    pub h: f64,
}

impl Domain {
    pub fn new(kernel: &LineKernel, release: &ReleaseSpec, receptor: &Receptor, cfg: &KernelConfig) -> Self {
        let reach = cfg.mfp_multiple * kernel.mean_free_path();
        Self {
            x_lower: (receptor.x1 - reach).max(cfg.near_field_epsilon),
            x_upper: (receptor.x1 + reach).max(cfg.near_field_epsilon),
            sigma_multiple: cfg.sigma_multiple,
            stability: release.stability,
            h: release.h,
        }
    }

    pub fn y_range(&self, x: f64) -> (f64, f64) {
        let w = self.sigma_multiple * sigma_y_unchecked(self.stability, x);
        (-w, w)
    }

    pub fn z_range(&self, x: f64) -> (f64, f64) {
        let w = self.sigma_multiple * sigma_z_unchecked(self.stability, x);
        ((self.h - w).max(0.0), self.h + w)
    }
}

/// Dose-rate density at one source point for one line, μSv/hr per m³.
pub fn integrand(
    db: &NuclideDb,
    release: &ReleaseSpec,
    receptor: &Receptor,
    line: &GammaLine,
    cfg: &KernelConfig,
    x: f64,
    y: f64,
    z: f64,
) -> Result<f64, KernelError> {
    let chi = crate::dispersion::concentration(release, x, y, z)?;
    let kernel = LineKernel::new(db, line, cfg)?;
    let (dx, dy, dz) = (x - receptor.x1, y - receptor.y1, z - receptor.z1);
    Ok(kernel.at_r2(dx * dx + dy * dy + dz * dz) * chi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoseResult {
    /// μSv/hr.
    pub dose: f64,
    /// Summed quadrature error estimate, μSv/hr.
    pub abs_error: f64,
    /// Contribution of each line, in line order.
    pub per_line: Vec<f64>,
    /// Receptor distance lies outside the tabulated range.
    pub out_of_range: bool,
}

/// Integral for one line over its truncated domain.
pub fn line_dose(
    db: &NuclideDb,
    line: &GammaLine,
    release: &ReleaseSpec,
    receptor: &Receptor,
    cfg: &KernelConfig,
) -> Result<(f64, f64), KernelError> {
    let kernel = LineKernel::new(db, line, cfg)?;
    let domain = Domain::new(&kernel, release, receptor, cfg);
    let li = LineIntegral {
        kernel,
        domain,
        release,
        receptor,
    };
    let wrap = |e: KernelError| match e {
        KernelError::Inner(source) => KernelError::Quadrature {
            energy: line.energy,
            source,
        },
        other => other,
    };
    let (pilot, _) = li.run(None).map_err(wrap)?;
    let outer = Tolerance {
        rel: cfg.rel_tol,
        abs: 0.0,
        max_subdivisions: cfg.max_subdivisions,
        rule: Rule::Gk15,
    };
    let plan = Plan {
        outer,
        inner_rel: cfg.rel_tol / 10.0,
        abs_y: INNER_SHARE * cfg.rel_tol * pilot.abs() / (domain.x_upper - domain.x_lower),
    };
    li.run(Some(&plan)).map_err(wrap)
}

/// Fraction of the requested error granted to the inner integrals.
const INNER_SHARE: f64 = 0.1;

struct Plan {
    outer: Tolerance,
    inner_rel: f64,
    /// Absolute tolerance of each y integral.
    abs_y: f64,
}

struct LineIntegral<'a> {
    kernel: LineKernel,
    domain: Domain,
    release: &'a ReleaseSpec,
    receptor: &'a Receptor,
}

impl LineIntegral<'_> {
    /// Adaptive when a plan is given, one Kronrod panel per level otherwise.
    ///
    /// The adaptive pass gives each y integral an absolute floor scaled from
    /// the one-panel estimate and hands each z integral its share of that
    /// floor, so tails that cannot move the total are not refined.
    fn run(&self, plan: Option<&Plan>) -> Result<(f64, f64), KernelError> {
        let Receptor { x1, y1, z1 } = *self.receptor;
        let (domain, kernel, release) = (&self.domain, &self.kernel, self.release);
        let outer = plan.map(|p| p.outer);
        split_at(x1, domain.x_lower, domain.x_upper, kernel.eps, outer.as_ref(), |x| -> Result<(f64, f64), KernelError> {
            let sy = sigma_y_unchecked(release.stability, x);
            let sz = sigma_z_unchecked(release.stability, x);
            let slice = PlumeSlice::new(release, sy, sz);
            // Guards the measure-zero plane x = x1, which GK nodes never hit.
            let adx = (x - x1).abs().max(1e-9);
            let dx2 = adx * adx;
            let (ylo, yhi) = domain.y_range(x);
            let (zlo, zhi) = domain.z_range(x);
            // y = y1 + |dx|·sinh s absorbs the 1/d peak left by the z integral.
            let slo = ((ylo - y1) / adx).asinh();
            let shi = ((yhi - y1) / adx).asinh();
            let y_tol = plan.map(|p| Tolerance {
                rel: p.inner_rel,
                abs: p.abs_y,
                ..p.outer
            });
            level_kinked(
                kink(kernel.eps, adx),
                |s| -> Result<(f64, f64), KernelError> {
                    let dy = adx * s.sinh();
                    let lateral = slice.lateral(y1 + dy);
                    if lateral == 0.0 {
                        return Ok((0.0, 0.0));
                    }
                    let d2 = dx2 + dy * dy;
                    let d = d2.sqrt();
                    // dy/ds = |dx|·cosh s = d
                    let weight = lateral * d;
                    // z = z1 + d·sinh u absorbs the 1/r² peak: dz = r du.
                    let ulo = ((zlo - z1) / d).asinh();
                    let uhi = ((zhi - z1) / d).asinh();
                    let z_tol = y_tol.map(|t| Tolerance {
                        abs: t.abs / ((shi - slo) * weight),
                        ..t
                    });
                    let (v, e) = level_kinked(
                        kink(kernel.eps, d),
                        |u| {
                            let sh = u.sinh();
                            let r2 = d2 * (1.0 + sh * sh);
                            let z = z1 + d * sh;
                            Ok::<_, KernelError>((kernel.at_r2(r2) * slice.vertical(z) * r2.sqrt(), 0.0))
                        },
                        ulo,
                        uhi,
                        z_tol.as_ref(),
                    )?;
                    Ok((weight * v, weight * e))
                },
                slo,
                shi,
                y_tol.as_ref(),
            )
        })
    }
}

fn level<F>(f: F, lower: f64, upper: f64, tol: Option<&Tolerance>) -> Result<(f64, f64), KernelError>
where
    F: FnMut(f64) -> Result<(f64, f64), KernelError>,
{
    let e = match tol {
        Some(tol) => integrate_nested(f, lower, upper, tol)?,
        None => single_panel(Rule::Gk15, f, lower, upper)?,
    };
    Ok((e.value, e.abs_error))
}

/// Parameter `w` at which `base·cosh w` reaches the clamp radius, if any.
#[inline]
fn kink(eps: f64, base: f64) -> Option<f64> {
    (base < eps).then(|| (eps / base).acosh())
}

/// As [`level`], with breakpoints at `±kink` where the clamped kernel has a
/// slope discontinuity.
fn level_kinked<F>(kink: Option<f64>, mut f: F, lower: f64, upper: f64, tol: Option<&Tolerance>) -> Result<(f64, f64), KernelError>
where
    F: FnMut(f64) -> Result<(f64, f64), KernelError>,
{
    let Some(k) = kink else {
        return level(f, lower, upper, tol);
    };
    let mut edges = [lower, -k, k, upper];
    for e in &mut edges[1..3] {
        *e = e.clamp(lower, upper);
    }
    let mut total = (0.0, 0.0);
    for w in edges.windows(2) {
        if w[1] > w[0] {
            let (v, e) = level(&mut f, w[0], w[1], tol)?;
            total.0 += v;
            total.1 += e;
        }
    }
    Ok(total)
}

/// Integral over `[lower, upper]` split at the receptor coordinate `at` when
/// it falls inside.
///
/// Each side is mapped by `x = at ± L·exp(−w)`, so the logarithmic peak at
/// `at` becomes an exponentially decaying integrand in `w`. The map stops at
/// `core` from `at`, where the clamped kernel is flat, and that last stretch
/// is integrated directly.
fn split_at<F>(
    at: f64,
    lower: f64,
    upper: f64,
    core: f64,
    tol: Option<&Tolerance>,
    mut f: F,
) -> Result<(f64, f64), KernelError>
where
    F: FnMut(f64) -> Result<(f64, f64), KernelError>,
{
    if !(at > lower && at < upper) {
        return level(f, lower, upper, tol);
    }
    let mut side = |len: f64| -> Result<(f64, f64), KernelError> {
        let span = len.abs();
        if span <= core {
            return level(&mut f, at.min(at + len), at.max(at + len), tol);
        }
        let dir = len.signum();
        let inner = level(&mut f, at.min(at + dir * core), at.max(at + dir * core), tol)?;
        let outer = level(
            |w| {
                let dx = span * (-w).exp();
                let (val, err) = f(at + dir * dx)?;
                Ok((val * dx, err * dx))
            },
            0.0,
            (span / core).ln(),
            tol,
        )?;
        Ok((inner.0 + outer.0, inner.1 + outer.1))
    };
    let a = side(lower - at)?;
    let b = side(upper - at)?;
    Ok((a.0 + b.0, a.1 + b.1))
}

/// Dose rate at `receptor`, μSv/hr, summed over the nuclide's lines.
pub fn dose_rate(
    db: &NuclideDb,
    nuclide: &NuclideRecord,
    release: &ReleaseSpec,
    receptor: &Receptor,
    cfg: &KernelConfig,
) -> Result<DoseResult, KernelError> {
    cfg.validate()?;
    release.validate()?;
    receptor.validate()?;
    let mut dose = 0.0;
    let mut abs_error = 0.0;
    let mut per_line = Vec::with_capacity(nuclide.lines.len());
    for line in &nuclide.lines {
        let (v, e) = line_dose(db, line, release, receptor, cfg)?;
        dose += v;
        abs_error += e;
        per_line.push(v);
    }
    Ok(DoseResult {
        dose,
        abs_error,
        per_line,
        out_of_range: receptor.x1 < DISTANCE_RANGE_M.0 || receptor.x1 > DISTANCE_RANGE_M.1,
    })
}

/// Ground-level centreline doses for a unit release at each distance.
pub fn dose_profile(
    db: &NuclideDb,
    nuclide: &NuclideRecord,
    stability: StabilityClass,
    h: f64,
    distances: &[f64],
    cfg: &KernelConfig,
) -> Result<Vec<(f64, f64)>, KernelError> {
    if distances.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(KernelError::Receptor("distances must be strictly ascending".into()));
    }
    let release = ReleaseSpec::unit(stability, h);
    distances
        .par_iter()
        .map(|&x| dose_rate(db, nuclide, &release, &Receptor::centerline(x), cfg).map(|d| (x, d.dose)))
        .collect()
}
