//! Gaussian building blocks: univariate and bivariate normal cdfs, the
//! interval probability `Δ_s(a, b)`, lower-orthant probabilities of possibly
//! singular Gaussian vectors, and the density of `σ̂/σ`.

use libm::erfc;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x / SQRT_2)
    }
}

pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / TWO_PI.sqrt()
}

pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        // One Halley step against the accurate cdf polishes the initial guess.
        let x = -SQRT_2 * erfc_inv(2.0 * p);
        let e = norm_cdf(x) - p;
        let u = e / norm_pdf(x);
        if u.is_finite() {
            x - u / (1.0 + 0.5 * x * u)
        } else {
            x
        }
    }
}

/// `Δ_s(a, b) = P(|N(0, s²) − a| < b)`.
///
/// With `s = 0` this is the indicator of `|a| < b`; infinite `a` gives 0.
pub fn delta(s: f64, a: f64, b: f64) -> f64 {
    if b <= 0.0 || a.is_infinite() {
        return 0.0;
    }
    let a = a.abs();
    if s <= 0.0 {
        return if a < b { 1.0 } else { 0.0 };
    }
    (norm_cdf((b - a) / s) - norm_cdf((-b - a) / s)).max(0.0)
}

/// `1 − Δ_s(a, b)` evaluated without cancellation in the far tails.
pub fn delta_complement(s: f64, a: f64, b: f64) -> f64 {
    if b <= 0.0 || a.is_infinite() {
        return 1.0;
    }
    let a = a.abs();
    if s <= 0.0 {
        return if a < b { 0.0 } else { 1.0 };
    }
    (norm_sf((b - a) / s) + norm_cdf((-b - a) / s)).min(1.0)
}

const GL6_W: [f64; 3] = [0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4];
const GL6_X: [f64; 3] = [0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197];
const GL12_W: [f64; 6] = [
    0.047_175_336_386_511_77,
    0.106_939_325_995_318_3,
    0.160_078_328_543_346_4,
    0.203_167_426_723_065_9,
    0.233_492_536_538_354_7,
    0.249_147_045_813_402_9,
];
const GL12_X: [f64; 6] = [
    0.981_560_634_246_719_1,
    0.904_117_256_370_475,
    0.769_902_674_194_305,
    0.587_317_954_286_617_1,
    0.367_831_498_998_180_2,
    0.125_233_408_511_469_2,
];
const GL20_W: [f64; 10] = [
    0.017_614_007_139_152_12,
    0.040_601_429_800_386_94,
    0.062_672_048_334_109_06,
    0.083_276_741_576_704_75,
    0.101_930_119_817_240_4,
    0.118_194_531_961_518_4,
    0.131_688_638_449_176_6,
    0.142_096_109_318_382_1,
    0.149_172_986_472_603_7,
    0.152_753_387_130_725_9,
];
const GL20_X: [f64; 10] = [
    0.993_128_599_185_094_9,
    0.963_971_927_277_913_8,
    0.912_234_428_251_326,
    0.839_116_971_822_218_8,
    0.746_331_906_460_150_8,
    0.636_053_680_726_515,
    0.510_867_001_950_827_1,
    0.373_706_088_715_419_6,
    0.227_785_851_141_645_1,
    0.076_526_521_133_497_33,
];

/// Upper bivariate normal probability `P(X > h, Y > k)` for standard
/// margins with correlation `r` (Drezner–Wesolowsky / Genz).
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let r = r.clamp(-1.0, 1.0);
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { norm_cdf(-k) };
    }
    if k == f64::NEG_INFINITY {
        return norm_cdf(-h);
    }
    if r == 0.0 {
        return norm_cdf(-h) * norm_cdf(-k);
    }
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&GL6_W, &GL6_X)
    } else if r.abs() < 0.75 {
        (&GL12_W, &GL12_X)
    } else {
        (&GL20_W, &GL20_X)
    };
    let hh = h;
    let mut kk = k;
    let mut hk = hh * kk;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (hh * hh + kk * kk) / 2.0;
        let asr = r.asin() / 2.0;
        for (wi, xi) in w.iter().zip(x) {
            for node in [1.0 - xi, 1.0 + xi] {
                let sn = (asr * node).sin();
                bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / TWO_PI + norm_cdf(-hh) * norm_cdf(-kk);
    } else {
        if r < 0.0 {
            kk = -kk;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = 1.0 - r * r;
            let mut a = as_.sqrt();
            let bs = (hh - kk) * (hh - kk);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -(bs / as_ + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = TWO_PI.sqrt() * norm_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            let mut acc = 0.0;
            for (wi, xi) in w.iter().zip(x) {
                for node in [1.0 - xi, 1.0 + xi] {
                    let xs = (a * node) * (a * node);
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                        acc += wi * asr.exp() * (sp - ep);
                    }
                }
            }
            bvn = (a * acc - bvn) / TWO_PI;
        }
        if r > 0.0 {
            bvn += norm_cdf(-hh.max(kk));
        } else if hh >= kk {
            bvn = -bvn;
        } else {
            let l = if hh < 0.0 { norm_cdf(kk) - norm_cdf(hh) } else { norm_cdf(-hh) - norm_cdf(-kk) };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Lower bivariate normal probability `P(X ≤ h, Y ≤ k)`.
pub fn bvn_lower(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

/// A probability together with its numerical uncertainty (quadrature error
/// bound or Monte Carlo standard error, depending on the producer).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }
}

/// Monte Carlo settings for orthant probabilities in three or more
/// non-degenerate dimensions.
#[derive(Debug, Clone, Copy)]
pub struct SamplingSpec {
    pub samples: usize,
    pub seed: u64,
    pub stream: u64,
}

/// Coordinates whose variance is negligible relative to the largest one.
pub(crate) fn degenerate_mask(cov: &DMatrix<f64>, scale: f64) -> Vec<bool> {
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    (0..cov.nrows()).map(|i| cov[(i, i)] <= tol).collect()
}

/// `P(X ≤ upper)` for `X ~ N(mean, cov)`, `cov` positive semi-definite.
///
/// Degenerate coordinates become indicators, one or two remaining
/// coordinates are evaluated in closed form, three or more by Genz's
/// sequential conditioning with seeded uniforms (requires `sampling`).
pub fn orthant(mean: &DVector<f64>, cov: &DMatrix<f64>, upper: &DVector<f64>, sampling: Option<SamplingSpec>) -> Result<Estimate> {
    let k = mean.len();
    if cov.nrows() != k || cov.ncols() != k || upper.len() != k {
        return Err(Error::Dimension(format!("orthant: mean {k}, cov {}x{}, upper {}", cov.nrows(), cov.ncols(), upper.len())));
    }
    let scale = (0..k).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    let degenerate = degenerate_mask(cov, scale);
    let mut active = Vec::new();
    for i in 0..k {
        if upper[i] == f64::INFINITY {
            continue;
        }
        if upper[i] == f64::NEG_INFINITY {
            return Ok(Estimate::exact(0.0));
        }
        if degenerate[i] {
            if mean[i] > upper[i] {
                return Ok(Estimate::exact(0.0));
            }
        } else {
            active.push(i);
        }
    }
    match active.len() {
        0 => Ok(Estimate::exact(1.0)),
        1 => {
            let i = active[0];
            Ok(Estimate::exact(norm_cdf((upper[i] - mean[i]) / cov[(i, i)].sqrt())))
        }
        2 => {
            let (i, j) = (active[0], active[1]);
            let si = cov[(i, i)].sqrt();
            let sj = cov[(j, j)].sqrt();
            let rho = cov[(i, j)] / (si * sj);
            Ok(Estimate::exact(bvn_lower((upper[i] - mean[i]) / si, (upper[j] - mean[j]) / sj, rho)))
        }
        _ => {
            let spec = sampling
                .ok_or_else(|| Error::InvalidArgument("orthant probability in three or more dimensions needs a sampling budget".into()))?;
            let m = active.len();
            let sub_cov = DMatrix::from_fn(m, m, |a, b| cov[(active[a], active[b])]);
            let shifted = DVector::from_fn(m, |a, _| upper[active[a]] - mean[active[a]]);
            Ok(genz_orthant(&sub_cov, &shifted, spec))
        }
    }
}

/// Cholesky factor that tolerates semi-definite input: a pivot at or below
/// the tolerance zeroes its column, marking that coordinate as an exact
/// linear function of the preceding ones.
pub(crate) fn semidefinite_cholesky(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let k = cov.nrows();
    let scale = (0..k).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut d = cov[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if d <= tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..k {
            let mut s = cov[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    l
}

fn genz_orthant(cov: &DMatrix<f64>, upper: &DVector<f64>, spec: SamplingSpec) -> Estimate {
    let k = cov.nrows();
    let l = semidefinite_cholesky(cov);
    let mut rng: ChaCha8Rng = stream_rng(spec.seed, spec.stream);
    let n = spec.samples.max(2);
    let mut y = vec![0.0; k];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let mut f = 1.0;
        for i in 0..k {
            let s: f64 = (0..i).map(|j| l[(i, j)] * y[j]).sum();
            let lii = l[(i, i)];
            if lii > 0.0 {
                let e = norm_cdf((upper[i] - s) / lii);
                if e <= 0.0 {
                    f = 0.0;
                    break;
                }
                f *= e;
                let u: f64 = rng.random::<f64>();
                y[i] = norm_quantile((u * e).max(f64::MIN_POSITIVE));
            } else {
                if s > upper[i] {
                    f = 0.0;
                    break;
                }
                y[i] = 0.0;
            }
        }
        sum += f;
        sum_sq += f * f;
    }
    let mean = sum / n as f64;
    let var = ((sum_sq / n as f64) - mean * mean).max(0.0);
    Estimate { value: mean, error: (var / (n as f64 - 1.0)).sqrt() }
}

/// Density of `N(0, cov)` at `x` for positive definite `cov`.
pub fn gaussian_density(cov: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    let k = x.len();
    let chol =
        cov.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("Gaussian density requires a nonsingular covariance".into()))?;
    let solved = chol.l().solve_lower_triangular(x).expect("triangular factor is nonsingular");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let quad = solved.norm_squared();
    Ok((-0.5 * (quad + log_det + k as f64 * TWO_PI.ln())).exp())
}

/// Density of `(χ²_dof / dof)^{1/2}` at `s`, i.e. of `σ̂/σ` with `dof = n − P`.
pub fn sigma_ratio_pdf(dof: usize, s: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument("sigma-ratio density needs dof >= 1".into()));
    }
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma-ratio density evaluated at s = {s}")));
    }
    Ok(sigma_ratio_pdf_unchecked(dof as f64, s))
}

pub(crate) fn sigma_ratio_pdf_unchecked(dof: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * dof;
    let log_pdf = std::f64::consts::LN_2 + half * half.ln() - ln_gamma(half) + (dof - 1.0) * s.ln() - half * s * s;
    log_pdf.exp()
}

/// Interval `[lo, hi]` outside of which `σ̂/σ` has at most `tail` mass on
/// each side (Laurent–Massart chi-square deviation bounds).
pub fn sigma_ratio_support(dof: usize, tail: f64) -> (f64, f64) {
    let d = dof as f64;
    let x = (1.0 / tail).ln();
    let hi = (1.0 + 2.0 * (x / d).sqrt() + 2.0 * x / d).sqrt();
    let lo2 = 1.0 - 2.0 * (x / d).sqrt();
    let lo = if lo2 > 0.0 { lo2.sqrt() } else { 0.0 };
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadSettings};

    // Independent erf via its Maclaurin series, adequate for |x| < 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn cdf_matches_series_erf() {
        for &x in &[-2.5, -1.0, -0.1, 0.0, 0.7, 1.96, 2.9] {
            let oracle = 0.5 * (1.0 + erf_series(x / SQRT_2));
            assert!((norm_cdf(x) - oracle).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.025, 0.3, 0.5, 0.8, 0.975, 1.0 - 1e-9] {
            let x = norm_quantile(p);
            assert!((norm_cdf(x) - p).abs() <= 1e-14 * p.max(1e-3), "p = {p}");
        }
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-13);
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(1.0, f64::INFINITY, 1.0), 0.0);
        assert_eq!(delta(1.0, f64::NEG_INFINITY, 1.0), 0.0);
        assert_eq!(delta(0.0, 0.5, 1.0), 1.0);
        assert_eq!(delta(0.0, 1.0, 1.0), 0.0);
        let oracle = erf_series(1.96 / SQRT_2);
        assert!((oracle - 0.950_004_2).abs() < 1e-7);
        assert!((delta(1.0, 0.0, 1.96) - oracle).abs() < 1e-14);
    }

    #[test]
    fn delta_is_symmetric_and_complement_adds_up() {
        for &(s, a, b) in &[(1.0, 0.3, 2.0), (0.5, -4.0, 1.0), (2.0, 30.0, 1.0), (0.0, 0.2, 0.1)] {
            assert_eq!(delta(s, a, b), delta(s, -a, b));
            assert!((delta(s, a, b) + delta_complement(s, a, b) - 1.0).abs() < 1e-15);
        }
    }

    fn bvn_oracle(h: f64, k: f64, r: f64) -> f64 {
        // P(X ≤ h, Y ≤ k) = ∫_{-∞}^{h} φ(x) Φ((k − r x)/√(1−r²)) dx
        let sd = (1.0 - r * r).sqrt();
        integrate(|x| norm_pdf(x) * norm_cdf((k - r * x) / sd), -40.0, h, QuadSettings { abs_tol: 1e-14, max_subdivisions: 2000 }).value
    }

    #[test]
    fn bvn_matches_quadrature_oracle() {
        for &r in &[-0.99, -0.95, -0.8, -0.5, -0.1, 0.2, 0.5, 0.9, 0.93, 0.999] {
            for &(h, k) in &[(0.0, 0.0), (1.0, -0.5), (-2.0, 1.5), (2.5, 2.5), (-1.0, -1.0)] {
                let got = bvn_lower(h, k, r);
                let want = bvn_oracle(h, k, r);
                assert!((got - want).abs() < 1e-12, "h={h} k={k} r={r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn bvn_perfect_correlation() {
        assert!((bvn_lower(0.5, 1.0, 1.0) - norm_cdf(0.5)).abs() < 1e-15);
        assert!((bvn_lower(0.5, 1.0, -1.0) - (norm_cdf(0.5) - norm_cdf(-1.0))).abs() < 1e-15);
        assert_eq!(bvn_lower(-1.0, -1.0, -1.0), 0.0);
    }

    #[test]
    fn orthant_handles_degenerate_coordinates() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]);
        let mean = DVector::from_vec(vec![0.0, 0.0]);
        let p = orthant(&mean, &cov, &DVector::from_vec(vec![2.0, 0.0]), None).unwrap();
        assert!((p.value - norm_cdf(1.0)).abs() < 1e-15);
        let p = orthant(&mean, &cov, &DVector::from_vec(vec![2.0, -0.1]), None).unwrap();
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn genz_trivariate_independent() {
        let cov = DMatrix::<f64>::identity(3, 3);
        let mean = DVector::zeros(3);
        let upper = DVector::from_vec(vec![0.0, 1.0, -0.5]);
        let spec = SamplingSpec { samples: 20_000, seed: 7, stream: 1 };
        let p = orthant(&mean, &cov, &upper, Some(spec)).unwrap();
        let exact = 0.5 * norm_cdf(1.0) * norm_cdf(-0.5);
        // Independent coordinates make the sequential estimator exact.
        assert!((p.value - exact).abs() < 1e-12);
    }

    #[test]
    fn genz_trivariate_correlated_within_se() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.3, 0.5, 1.0, 0.4, 0.3, 0.4, 1.0]);
        let mean = DVector::zeros(3);
        let upper = DVector::from_vec(vec![0.5, 0.0, 1.0]);
        let spec = SamplingSpec { samples: 50_000, seed: 11, stream: 3 };
        let p = orthant(&mean, &cov, &upper, Some(spec)).unwrap();
        // Oracle: integrate the exact bivariate conditional over the first coordinate.
        let oracle = integrate(
            |x| {
                let m2 = 0.5 * x;
                let m3 = 0.3 * x;
                let c22: f64 = 0.75;
                let c33: f64 = 1.0 - 0.09;
                let c23 = 0.4 - 0.15;
                norm_pdf(x) * bvn_lower((0.0 - m2) / c22.sqrt(), (1.0 - m3) / c33.sqrt(), c23 / (c22 * c33).sqrt())
            },
            -40.0,
            0.5,
            QuadSettings { abs_tol: 1e-13, max_subdivisions: 2000 },
        )
        .value;
        assert!((p.value - oracle).abs() < 4.0 * p.error + 1e-9, "{} vs {oracle} (se {})", p.value, p.error);
    }

    #[test]
    fn sigma_ratio_density_normalizes() {
        for dof in [1usize, 2, 5, 18, 200, 4999] {
            let (_, hi) = sigma_ratio_support(dof, 1e-14);
            let r = crate::quadrature::integrate_partitioned(
                |s| sigma_ratio_pdf_unchecked(dof as f64, s),
                0.0,
                hi,
                32,
                QuadSettings { abs_tol: 1e-12, max_subdivisions: 2000 },
            );
            assert!((r.value - 1.0).abs() < 1e-8, "dof {dof}: {}", r.value);
        }
    }

    #[test]
    fn sigma_ratio_mode() {
        for dof in [2usize, 5, 18, 100] {
            let d = dof as f64;
            let mode = ((d - 1.0) / d).sqrt();
            let h = 1e-5;
            let left = sigma_ratio_pdf(dof, mode - h).unwrap();
            let right = sigma_ratio_pdf(dof, mode + h).unwrap();
            let centre = sigma_ratio_pdf(dof, mode).unwrap();
            assert!(centre > left && centre > right);
            assert!((right - left).abs() / centre < 1e-8);
        }
    }

    #[test]
    fn sigma_ratio_rejects_nonpositive() {
        assert!(sigma_ratio_pdf(5, 0.0).is_err());
        assert!(sigma_ratio_pdf(0, 1.0).is_err());
    }
}
