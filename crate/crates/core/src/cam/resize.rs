use crate::grid::Grid;

/// Source taps `(i0, i1, frac)` for each output index along one axis, using
/// half-pixel centres with edge clamping.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Separable bilinear resampling operator and its adjoint.
#[derive(Clone, Debug)]
pub(crate) struct Resampler {
    src: (usize, usize),
    rows: Vec<(usize, usize, f64)>,
    cols: Vec<(usize, usize, f64)>,
}

impl Resampler {
    pub fn new(src: (usize, usize), dst: (usize, usize)) -> Self {
        Self {
            src,
            rows: axis_taps(src.0, dst.0),
            cols: axis_taps(src.1, dst.1),
        }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let sw = self.src.1;
        let mut out = Vec::with_capacity(self.rows.len() * self.cols.len());
        for &(y0, y1, fy) in &self.rows {
            for &(x0, x1, fx) in &self.cols {
                let top = input[y0 * sw + x0] * (1.0 - fx) + input[y0 * sw + x1] * fx;
                let bottom = input[y1 * sw + x0] * (1.0 - fx) + input[y1 * sw + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        out
    }

    pub fn apply_adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let sw = self.src.1;
        let mut out = vec![0.0; self.src.0 * sw];
        let mut it = grad.iter();
        for &(y0, y1, fy) in &self.rows {
            for &(x0, x1, fx) in &self.cols {
                let g = *it.next().expect("gradient matches output size");
                out[y0 * sw + x0] += g * (1.0 - fy) * (1.0 - fx);
                out[y0 * sw + x1] += g * (1.0 - fy) * fx;
                out[y1 * sw + x0] += g * fy * (1.0 - fx);
                out[y1 * sw + x1] += g * fy * fx;
            }
        }
        out
    }
}

/// Bilinear resampling to `(rows, cols)` with half-pixel centres.
pub fn bilinear_resize(input: &Grid<f64>, target: (usize, usize)) -> Grid<f64> {
    let r = Resampler::new(input.shape(), target);
    Grid::from_vec(target.0, target.1, r.apply(input.as_slice())).expect("resampler output size")
}
