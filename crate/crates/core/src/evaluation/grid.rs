use crate::error::{Error, Result};

/// Rectangular midpoint grid over a box in one or more dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

impl QuadratureGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != cells.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch("grid bounds and cell counts must agree".into()));
        }
        for i in 0..lower.len() {
            if !(upper[i] > lower[i]) || cells[i] == 0 {
                return Err(Error::InvalidParameter(format!("empty grid range in dimension {i}")));
            }
        }
        Ok(Self { lower, upper, cells })
    }

    pub fn uniform_1d(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![cells])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.upper[i] - self.lower[i]) / self.cells[i] as f64)
            .product()
    }

    /// Midpoint of cell `k` in row-major order (last coordinate fastest).
    pub fn point(&self, mut k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for i in (0..self.dim()).rev() {
            let j = k % self.cells[i];
            k /= self.cells[i];
            let h = (self.upper[i] - self.lower[i]) / self.cells[i] as f64;
            out[i] = self.lower[i] + h * (j as f64 + 0.5);
        }
        out
    }

    /// Evaluates `f` at every midpoint.
    pub fn tabulate<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|k| f(&self.point(k))).collect()
    }
}

const MIN_MASS: f64 = 1.0 - 1e-3;

fn normalised(table: &[f64], volume: f64, which: &str) -> Result<Vec<f64>> {
    if table.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite(format!("density {which} has negative or non-finite values")));
    }
    let mass: f64 = table.iter().sum::<f64>() * volume;
    if mass < MIN_MASS {
        return Err(Error::GridTooCoarse(format!(
            "density {which} has grid mass {mass:.6}, need at least {MIN_MASS}"
        )));
    }
    Ok(table.iter().map(|v| v / mass).collect())
}

/// `KL(a || b)` by a midpoint Riemann sum after normalising both densities
/// on the grid. `density_a` is evaluated at the cell midpoints; `table_b`
/// holds density values at the same midpoints.
pub fn grid_kl<F: Fn(&[f64]) -> f64>(density_a: F, table_b: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    if table_b.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "table has {} cells, grid has {}",
            table_b.len(),
            grid.len()
        )));
    }
    let vol = grid.cell_volume();
    let a = normalised(&grid.tabulate(density_a), vol, "a")?;
    let b = normalised(table_b, vol, "b")?;
    let mut kl = 0.0;
    for (pa, pb) in a.iter().zip(&b) {
        if *pa > 0.0 {
            if *pb <= 0.0 {
                return Err(Error::NonFinite("KL is infinite: b vanishes where a has mass".into()));
            }
            kl += pa * (pa / pb).ln();
        }
    }
    Ok(kl * vol)
}

/// Closed-form `KL(N(m1, v1) || N(m2, v2))` in one dimension.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0)
}

/// Marginal (mean, variance) of `z' = coef * z + noise_sd * xi` for
/// `steps` steps from `N(mean0, var0)`, including the start.
pub fn ar1_marginals(coef: f64, noise_sd: f64, mean0: f64, var0: f64, steps: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(steps + 1);
    let (mut m, mut v) = (mean0, var0);
    out.push((m, v));
    for _ in 0..steps {
        m *= coef;
        v = coef * coef * v + noise_sd * noise_sd;
        out.push((m, v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::LN_2PI;

    fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
        (-0.5 * (LN_2PI + v.ln() + (x - m).powi(2) / v)).exp()
    }

    #[test]
    fn identical_densities_have_zero_kl() {
        let grid = QuadratureGrid::uniform_1d(-12.0, 12.0, 4000).unwrap();
        let b = grid.tabulate(|x| normal_pdf(x[0], 0.0, 1.0));
        let kl = grid_kl(|x| normal_pdf(x[0], 0.0, 1.0), &b, &grid).unwrap();
        assert!(kl.abs() < 1e-6);
    }

    #[test]
    fn unit_shift_gives_half() {
        let grid = QuadratureGrid::uniform_1d(-12.0, 13.0, 5000).unwrap();
        let b = grid.tabulate(|x| normal_pdf(x[0], 1.0, 1.0));
        let kl = grid_kl(|x| normal_pdf(x[0], 0.0, 1.0), &b, &grid).unwrap();
        assert!((kl - 0.5).abs() < 1e-3, "{kl}");
    }

    #[test]
    fn two_dimensional_grid_matches_closed_form() {
        let grid = QuadratureGrid::new(vec![-9.0, -9.0], vec![9.0, 9.0], vec![300, 300]).unwrap();
        let b = grid.tabulate(|x| normal_pdf(x[0], 0.0, 1.0) * normal_pdf(x[1], 0.0, 1.0));
        let kl = grid_kl(|x| normal_pdf(x[0], 0.5, 2.0) * normal_pdf(x[1], -1.0, 0.5), &b, &grid).unwrap();
        let expect = gaussian_kl(0.5, 2.0, 0.0, 1.0) + gaussian_kl(-1.0, 0.5, 0.0, 1.0);
        assert!((kl - expect).abs() < 1e-6, "{kl} vs {expect}");
    }

    #[test]
    fn insufficient_mass_is_rejected() {
        let grid = QuadratureGrid::uniform_1d(-1.0, 1.0, 100).unwrap();
        let b = grid.tabulate(|x| normal_pdf(x[0], 0.0, 1.0));
        assert!(matches!(
            grid_kl(|x| normal_pdf(x[0], 0.0, 1.0), &b, &grid),
            Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn ar1_converges_to_stationary() {
        let m = ar1_marginals(0.9, (1.0f64 - 0.81).sqrt(), 5.0, 1.0, 200);
        let (mean, var) = m[200];
        assert!(mean.abs() < 1e-8 && (var - 1.0).abs() < 1e-12);
        assert_eq!(m.len(), 201);
    }

    #[test]
    fn grid_point_ordering() {
        let grid = QuadratureGrid::new(vec![0.0, 0.0], vec![2.0, 4.0], vec![2, 4]).unwrap();
        assert_eq!(grid.point(0), vec![0.5, 0.5]);
        assert_eq!(grid.point(1), vec![0.5, 1.5]);
        assert_eq!(grid.point(4), vec![1.5, 0.5]);
        assert_eq!(grid.cell_volume(), 1.0);
    }
}
