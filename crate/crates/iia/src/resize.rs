//! Bilinear 2D resizing for attribution maps.

use ndarray::Array2;

/// Resize `src` to (dst_h, dst_w) by bilinear interpolation with
/// half-pixel-centered sampling (align-corners off) and edge clamping.
pub fn bilinear_resize(src: &Array2<f64>, dst_h: usize, dst_w: usize) -> Array2<f64> {
    let (sh, sw) = src.dim();
    assert!(sh > 0 && sw > 0, "cannot resize an empty map");
    if (sh, sw) == (dst_h, dst_w) {
        return src.clone();
    }
    let scale_y = sh as f64 / dst_h as f64;
    let scale_x = sw as f64 / dst_w as f64;
    let mut dst = Array2::<f64>::zeros((dst_h, dst_w));
    for y in 0..dst_h {
        let fy = (y as f64 + 0.5) * scale_y - 0.5;
        let y0 = fy.floor();
        let ty = fy - y0;
        let y0c = (y0 as isize).clamp(0, sh as isize - 1) as usize;
        let y1c = (y0 as isize + 1).clamp(0, sh as isize - 1) as usize;
        for x in 0..dst_w {
            let fx = (x as f64 + 0.5) * scale_x - 0.5;
            let x0 = fx.floor();
            let tx = fx - x0;
            let x0c = (x0 as isize).clamp(0, sw as isize - 1) as usize;
            let x1c = (x0 as isize + 1).clamp(0, sw as isize - 1) as usize;
            let top = src[(y0c, x0c)] * (1.0 - tx) + src[(y0c, x1c)] * tx;
            let bot = src[(y1c, x0c)] * (1.0 - tx) + src[(y1c, x1c)] * tx;
            dst[(y, x)] = top * (1.0 - ty) + bot * ty;
        }
    }
    dst
}
