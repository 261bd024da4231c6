use super::Matrix;

/// Fixed sinusoidal position table, `len x dim`.
pub fn sinusoidal_table(len: usize, dim: usize) -> Matrix {
    Matrix::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_alternates_zero_one() {
        let t = sinusoidal_table(3, 6);
        assert_eq!(t.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((t[[1, 0]] - 1f64.sin()).abs() < 1e-15);
    }
}
