use nalgebra::DMatrix;

use crate::error::Error;

/// Scientific notation with 17 significant digits, enough to round-trip an f64.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
    Error::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

/// Minimum-norm solution of `gram x = rhs` for a symmetric positive
/// semi-definite `gram`, through its eigendecomposition. Eigenvalues at or
/// below `rtol` times the largest are treated as zero. Also returns the
/// numerical rank.
pub(crate) fn solve_psd(gram: DMatrix<f64>, rhs: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let cutoff = rtol * top;
    let mut coeffs = eig.eigenvectors.transpose() * rhs;
    let mut rank = 0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            rank += 1;
            coeffs.row_mut(i).unscale_mut(l);
        } else {
            coeffs.row_mut(i).fill(0.0);
        }
    }
    (eig.eigenvectors * coeffs, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_solve_with_repeated_eigenvalues() {
        let d = [1684.58, 1684.58, 522.8, 522.8, 3343.9, 3343.9];
        let mut g = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&d));
        g[(0, 2)] = 1e-13;
        g[(2, 0)] = 1e-13;
        let b = DMatrix::from_column_slice(6, 1, &[1.0, -2.0, 3.0, 0.5, -1.0, 7.0]);
        let (x, rank) = solve_psd(g, &b, 1e-12);
        assert_eq!(rank, 6);
        for i in 0..6 {
            assert!((x[i] * d[i] - b[i]).abs() < 1e-12 * b[i].abs().max(1.0));
        }
    }

    #[test]
    fn psd_solve_minimum_norm() {
        // [[1, 2], [2, 4]] x = [1, 2]: solutions x1 + 2 x2 = 1, shortest is (1, 2) / 5
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let (x, rank) = solve_psd(g, &b, 1e-12);
        assert_eq!(rank, 1);
        assert!((x[0] - 0.2).abs() < 1e-14 && (x[1] - 0.4).abs() < 1e-14);
    }
}
