//! Reconstruction quality: relative restoration error, PSNR and SSIM.

use crate::error::{Error, Result};
use crate::numerics::norm2;
use crate::scalar::Scalar;

/// Side length of the square SSIM window.
pub const SSIM_WINDOW: usize = 8;

/// A recovered image and its ground truth, both flattened row-major.
#[derive(Debug, Clone, Copy)]
pub struct ImagePair<'a, T> {
    pub recovered: &'a [T],
    pub truth: &'a [T],
    pub width: usize,
    pub height: usize,
    pub peak: T,
}

impl<'a, T: Scalar> ImagePair<'a, T> {
    /// Pixels in `[0, 1]`, so the peak is 1.
    pub fn new(recovered: &'a [T], truth: &'a [T], width: usize, height: usize) -> Result<Self> {
        Self::with_peak(recovered, truth, width, height, T::one())
    }

    pub fn with_peak(
        recovered: &'a [T],
        truth: &'a [T],
        width: usize,
        height: usize,
        peak: T,
    ) -> Result<Self> {
        if recovered.len() != truth.len() || width * height != truth.len() {
            return Err(Error::shape(format!(
                "recovered {} / truth {} pixels for a {width}x{height} image",
                recovered.len(),
                truth.len()
            )));
        }
        if !(peak > T::zero()) {
            return Err(Error::param(format!("peak must be positive, got {peak}")));
        }
        Ok(Self {
            recovered,
            truth,
            width,
            height,
            peak,
        })
    }

    fn diff(&self) -> impl Iterator<Item = T> + '_ {
        self.recovered.iter().zip(self.truth).map(|(&r, &t)| r - t)
    }
}

/// `‖recovered − truth‖ / ‖truth‖`.
pub fn rre<T: Scalar>(pair: &ImagePair<'_, T>) -> Result<T> {
    let denom = norm2(pair.truth);
    if denom == T::zero() {
        return Err(Error::param("relative error undefined for an all-zero truth"));
    }
    let num = pair.diff().map(|d| d * d).sum::<T>().sqrt();
    Ok(num / denom)
}

/// `20·log10(peak / RMSE)`; `+∞` for identical images.
pub fn psnr<T: Scalar>(pair: &ImagePair<'_, T>) -> T {
    let m = T::of_usize(pair.truth.len());
    let mse = pair.diff().map(|d| d * d).sum::<T>() / m;
    if mse == T::zero() {
        return T::infinity();
    }
    T::lit(20.0) * (pair.peak / mse.sqrt()).log10()
}

/// Mean SSIM over all 8×8 windows at stride 1 with uniform weights,
/// population (biased) moments, `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`.
pub fn ssim<T: Scalar>(pair: &ImagePair<'_, T>) -> Result<T> {
    ssim_windowed(pair, SSIM_WINDOW, SSIM_WINDOW)
}

/// [`ssim`] with a `win_w × win_h` window.
pub fn ssim_windowed<T: Scalar>(pair: &ImagePair<'_, T>, win_w: usize, win_h: usize) -> Result<T> {
    let (w, h) = (pair.width, pair.height);
    if win_w == 0 || win_h == 0 || w < win_w || h < win_h {
        return Err(Error::param(format!(
            "{w}x{h} image is smaller than the {win_w}x{win_h} SSIM window"
        )));
    }
    let c1 = (T::lit(0.01) * pair.peak).powi(2);
    let c2 = (T::lit(0.03) * pair.peak).powi(2);
    let count = T::of_usize(win_w * win_h);
    let (a, b) = (pair.recovered, pair.truth);
    let mut total = T::zero();
    let mut windows = 0usize;
    for top in 0..=h - win_h {
        for left in 0..=w - win_w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) =
                (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            for r in top..top + win_h {
                for c in left..left + win_w {
                    let (x, y) = (a[r * w + c], b[r * w + c]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (mu_a, mu_b) = (sa / count, sb / count);
            let var_a = saa / count - mu_a * mu_a;
            let var_b = sbb / count - mu_b * mu_b;
            let cov = sab / count - mu_a * mu_b;
            let two = T::lit(2.0);
            let num = (two * mu_a * mu_b + c1) * (two * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / T::of_usize(windows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn random_image(rng: &mut SeededRng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.next_unit()).collect()
    }

    #[test]
    fn rre_cases() {
        let truth = [3.0f64, 4.0];
        assert_eq!(rre(&ImagePair::new(&truth, &truth, 2, 1).unwrap()).unwrap(), 0.0);
        let rec = [3.0, 0.0];
        let v = rre(&ImagePair::new(&rec, &truth, 2, 1).unwrap()).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
        let zero = [0.0, 0.0];
        assert!(rre(&ImagePair::new(&rec, &zero, 2, 1).unwrap()).is_err());
    }

    #[test]
    fn rre_longhand() {
        let mut rng = SeededRng::new(1);
        let a = random_image(&mut rng, 30);
        let b = random_image(&mut rng, 30);
        let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        let v = rre(&ImagePair::new(&a, &b, 30, 1).unwrap()).unwrap();
        assert!((v - num / den).abs() < 1e-14);
    }

    #[test]
    fn psnr_uniform_error() {
        let truth = vec![0.5; 64];
        let rec: Vec<f64> = truth.iter().map(|v| v + 0.1).collect();
        let p = psnr(&ImagePair::new(&rec, &truth, 8, 8).unwrap());
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert!(psnr(&ImagePair::new(&truth, &truth, 8, 8).unwrap()).is_infinite());
    }

    #[test]
    fn psnr_error_doubling() {
        let mut rng = SeededRng::new(2);
        let truth = random_image(&mut rng, 64);
        let err: Vec<f64> = (0..64).map(|_| 0.05 * rng.standard_normal()).collect();
        let r1: Vec<f64> = truth.iter().zip(&err).map(|(t, e)| t + e).collect();
        let r2: Vec<f64> = truth.iter().zip(&err).map(|(t, e)| t + 2.0 * e).collect();
        let p1 = psnr(&ImagePair::new(&r1, &truth, 8, 8).unwrap());
        let p2 = psnr(&ImagePair::new(&r2, &truth, 8, 8).unwrap());
        assert!((p1 - p2 - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_small_image() {
        let mut rng = SeededRng::new(3);
        let a = random_image(&mut rng, 100);
        let v = ssim(&ImagePair::new(&a, &a, 10, 10).unwrap()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let small = random_image(&mut rng, 49);
        assert!(ssim(&ImagePair::new(&small, &small, 7, 7).unwrap()).is_err());
    }

    #[test]
    fn ssim_symmetry() {
        let mut rng = SeededRng::new(4);
        let a = random_image(&mut rng, 144);
        let b = random_image(&mut rng, 144);
        let ab = ssim(&ImagePair::new(&a, &b, 12, 12).unwrap()).unwrap();
        let ba = ssim(&ImagePair::new(&b, &a, 12, 12).unwrap()).unwrap();
        assert_eq!(ab, ba);
    }
}
