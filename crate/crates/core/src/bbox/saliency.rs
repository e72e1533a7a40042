use super::{MapSource, ProbabilityMap};
use crate::grid::Grid;

/// Mean over the `(2r+1)^2` window, truncated at the borders.
pub fn box_blur(img: &Grid<f64>, radius: usize) -> Grid<f64> {
    let (h, w) = img.shape();
    // summed-area table with a zero row/column in front
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += img.at(y, x);
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    Grid::from_fn(h, w, |y, x| {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
        let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
        let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
        s / ((y1 - y0) * (x1 - x0)) as f64
    })
}

/// Local-contrast saliency: standard deviation over a square window of
/// radius `max(1, min(H, W) / 16)`, min-max normalized. Constant images give
/// an all-zero map.
pub fn stub_saliency(image: &Grid<f64>) -> ProbabilityMap {
    let (h, w) = image.shape();
    let r = (h.min(w) / 16).max(1);
    let global = image.iter().sum::<f64>() / image.len() as f64;
    let centred = image.map(|v| v - global);
    let mean = box_blur(&centred, r);
    let mean_sq = box_blur(&centred.map(|v| v * v), r);
    let dev: Vec<f64> = mean.iter().zip(mean_sq.iter()).map(|(m, q)| (q - m * m).max(0.0).sqrt()).collect();
    let (lo, hi) = dev.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    let values = if hi - lo < 1e-12 {
        vec![0.0; dev.len()]
    } else {
        dev.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };
    ProbabilityMap {
        values: Grid::from_vec(h, w, values).expect("saliency size"),
        source: MapSource::Stub,
    }
}
