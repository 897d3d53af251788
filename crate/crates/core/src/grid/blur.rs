use super::Grid;

/// Below this pixel standard deviation the blur is the identity.
pub const MIN_SIGMA_PX: f64 = 0.05;

/// Truncated, renormalized 1D Gaussian with taps `-radius..=radius`.
///
/// The Gaussian is lowered by its value at `3 sigma` before normalization, so
/// taps fade in at zero weight as the radius grows and the blur stays
/// continuous (and piecewise smooth) in `sigma`.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    pub sigma: f64,
    pub radius: usize,
    pub weights: Vec<f64>,
    /// Derivative of each normalized weight with respect to `sigma`.
    pub dweights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive, got {sigma}");
        let radius = (3.0 * sigma).ceil() as usize;
        // kernel value at the truncation point 3 sigma
        let floor = (-4.5f64).exp();
        let taps = || -(radius as isize)..=radius as isize;
        let gauss: Vec<f64> = taps().map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp()).collect();
        let raw: Vec<f64> = gauss.iter().map(|g| (g - floor).max(0.0)).collect();
        let s3 = sigma * sigma * sigma;
        let draw: Vec<f64> = taps()
            .zip(gauss.iter().zip(&raw))
            .map(|(t, (g, r))| if *r > 0.0 { g * (t * t) as f64 / s3 } else { 0.0 })
            .collect();
        let z: f64 = raw.iter().sum();
        let dz: f64 = draw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|e| e / z).collect();
        let dweights = weights.iter().zip(&draw).map(|(w, d)| (d - w * dz) / z).collect();
        GaussianKernel {
            sigma,
            radius,
            weights,
            dweights,
        }
    }
}

/// Half-sample symmetric extension: `.. x1 x0 | x0 x1 .. xn-1 | xn-1 xn-2 ..`.
#[inline]
fn reflect(j: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = j.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn convolve_rows(src: &[f64], h: usize, w: usize, taps: &[f64], radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in taps.iter().enumerate() {
                let j = c as isize + k as isize - radius as isize;
                acc += wt * row[reflect(j, w)];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f64], h: usize, w: usize, taps: &[f64], radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for (k, &wt) in taps.iter().enumerate() {
            let j = reflect(r as isize + k as isize - radius as isize, h);
            let src_row = &src[j * w..(j + 1) * w];
            let dst = &mut out[r * w..(r + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += wt * s;
            }
        }
    }
    out
}

/// Separable Gaussian blur with standard deviation `sigma_px` in pixels.
///
/// The kernel is truncated at `3 sigma`, tapered and renormalized; borders
/// use half-sample symmetric reflection, which keeps both the total mass and
/// constant fields exactly invariant.
pub fn gaussian_blur(g: &Grid, sigma_px: f64) -> Grid {
    if sigma_px < MIN_SIGMA_PX {
        return g.clone();
    }
    let k = GaussianKernel::new(sigma_px);
    blur_with(g, &k)
}

pub(crate) fn blur_with(g: &Grid, k: &GaussianKernel) -> Grid {
    let (h, w) = g.shape();
    let tmp = convolve_rows(g.values(), h, w, &k.weights, k.radius);
    let out = convolve_cols(&tmp, h, w, &k.weights, k.radius);
    Grid::new(h, w, g.kind(), out).expect("same shape")
}

/// Blur whose width is given in degrees of visual angle.
pub fn gaussian_blur_dva(g: &Grid, sigma_dva: f64, px_per_dva: f64) -> Grid {
    gaussian_blur(g, sigma_dva * px_per_dva)
}

/// Transpose of [`gaussian_blur`] with respect to its input.
pub fn gaussian_blur_adjoint(upstream: &Grid, sigma_px: f64) -> Grid {
    if sigma_px < MIN_SIGMA_PX {
        return upstream.clone();
    }
    let k = GaussianKernel::new(sigma_px);
    let (h, w) = upstream.shape();
    let r = k.radius as isize;
    let g = upstream.values();
    // scatter along columns, then rows (reverse order of the forward pass)
    let mut tmp = vec![0.0; h * w];
    for ro in 0..h {
        for (t, &wt) in k.weights.iter().enumerate() {
            let ri = reflect(ro as isize + t as isize - r, h);
            for c in 0..w {
                tmp[ri * w + c] += wt * g[ro * w + c];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        for co in 0..w {
            let v = tmp[row * w + co];
            for (t, &wt) in k.weights.iter().enumerate() {
                let ci = reflect(co as isize + t as isize - r, w);
                out[row * w + ci] += wt * v;
            }
        }
    }
    Grid::new(h, w, upstream.kind(), out).expect("same shape")
}

/// Derivative of `sum(upstream * gaussian_blur(input, sigma))` with respect to
/// `sigma` (pixels).
pub fn blur_sigma_adjoint(input: &Grid, upstream: &Grid, sigma_px: f64) -> f64 {
    if sigma_px < MIN_SIGMA_PX {
        return 0.0;
    }
    let k = GaussianKernel::new(sigma_px);
    let (h, w) = input.shape();
    let rows = convolve_rows(input.values(), h, w, &k.weights, k.radius);
    let drows = convolve_rows(input.values(), h, w, &k.dweights, k.radius);
    let a = convolve_cols(&rows, h, w, &k.dweights, k.radius);
    let b = convolve_cols(&drows, h, w, &k.weights, k.radius);
    upstream
        .values()
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(g, (x, y))| g * (x + y))
        .sum()
}
