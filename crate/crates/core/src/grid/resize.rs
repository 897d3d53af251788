use super::Grid;

/// Source taps for one output coordinate: `(i0, i1, w1)` with weight `1 - w1`
/// on `i0` and `w1` on `i1`.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, w1)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers (align-corners false).
///
/// Returns an exact copy when the shape is unchanged.
pub fn bilinear_resize(g: &Grid, out_h: usize, out_w: usize) -> Grid {
    assert!(out_h >= 1 && out_w >= 1, "output dims must be >= 1");
    if g.shape() == (out_h, out_w) {
        return g.clone();
    }
    let rows = axis_taps(g.height(), out_h);
    let cols = axis_taps(g.width(), out_w);
    let src = g.values();
    let w = g.width();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, wr) in &rows {
        for &(c0, c1, wc) in &cols {
            let top = src[r0 * w + c0] * (1.0 - wc) + src[r0 * w + c1] * wc;
            let bot = src[r1 * w + c0] * (1.0 - wc) + src[r1 * w + c1] * wc;
            out.push(top * (1.0 - wr) + bot * wr);
        }
    }
    Grid::new(out_h, out_w, g.kind(), out).expect("shape computed above")
}

/// Transpose of [`bilinear_resize`]: maps a gradient on the output grid back
/// onto an `in_h x in_w` input grid.
pub fn bilinear_resize_adjoint(upstream: &Grid, in_h: usize, in_w: usize) -> Grid {
    let (out_h, out_w) = upstream.shape();
    if (out_h, out_w) == (in_h, in_w) {
        return upstream.clone();
    }
    let rows = axis_taps(in_h, out_h);
    let cols = axis_taps(in_w, out_w);
    let mut acc = vec![0.0; in_h * in_w];
    let g = upstream.values();
    for (ro, &(r0, r1, wr)) in rows.iter().enumerate() {
        for (co, &(c0, c1, wc)) in cols.iter().enumerate() {
            let v = g[ro * out_w + co];
            acc[r0 * in_w + c0] += v * (1.0 - wr) * (1.0 - wc);
            acc[r0 * in_w + c1] += v * (1.0 - wr) * wc;
            acc[r1 * in_w + c0] += v * wr * (1.0 - wc);
            acc[r1 * in_w + c1] += v * wr * wc;
        }
    }
    Grid::new(in_h, in_w, upstream.kind(), acc).expect("shape computed above")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridKind;

    #[test]
    fn constant_is_preserved() {
        let g = Grid::filled(4, 4, GridKind::Feature, 3.0);
        for &(h, w) in &[(1, 1), (3, 7), (9, 2), (16, 16)] {
            let r = bilinear_resize(&g, h, w);
            assert!(r.values().iter().all(|&v| (v - 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn same_shape_is_identity() {
        let g = Grid::from_fn(3, 5, GridKind::Feature, |r, c| (r * 7 + c * 3) as f64 * 0.1);
        assert_eq!(bilinear_resize(&g, 3, 5), g);
    }

    #[test]
    fn horizontal_ramp_closed_form() {
        // out x -> src = (x + 0.5) / 2 - 0.5, clamped to [0, 1]
        let g = Grid::new(2, 2, GridKind::Feature, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = bilinear_resize(&g, 2, 4);
        let expected = [0.0, 0.25, 0.75, 1.0];
        for row in 0..2 {
            for (c, e) in expected.iter().enumerate() {
                assert!((r.get(row, c) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adjoint_is_transpose() {
        let x = Grid::from_fn(5, 3, GridKind::Feature, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
        let y = Grid::from_fn(8, 7, GridKind::Feature, |r, c| ((r * 7 + c) as f64 * 0.53).cos());
        let ax = bilinear_resize(&x, 8, 7);
        let aty = bilinear_resize_adjoint(&y, 5, 3);
        let lhs: f64 = ax.values().iter().zip(y.values()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.values().iter().zip(aty.values()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
