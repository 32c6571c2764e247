//! Small dense matrix helpers on fixed-size arrays.
//!
//! Everything here works on `[[f64; D]; D]` row-major matrices; the
//! models in this crate never exceed 6 states so heap allocation and an
//! external linear-algebra crate buy nothing.

pub type Mat<const D: usize> = [[f64; D]; D];

pub fn identity<const D: usize>() -> Mat<D> {
    let mut m = [[0.0; D]; D];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn mat_mul<const D: usize>(a: &Mat<D>, b: &Mat<D>) -> Mat<D> {
    let mut out = [[0.0; D]; D];
    for i in 0..D {
        for k in 0..D {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..D {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn mat_vec<const D: usize>(a: &Mat<D>, v: &[f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for (o, row) in out.iter_mut().zip(a.iter()) {
        *o = row.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
    }
    out
}

fn inf_norm<const D: usize>(a: &Mat<D>) -> f64 {
    a.iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by Taylor series with scaling and squaring.
///
/// The argument is scaled by `2^-s` until its infinity norm is at most 0.5,
/// the series is summed until the next term drops below `1e-16` relative to
/// the partial sum, and the result is squared `s` times.
pub fn expm<const D: usize>(a: &Mat<D>) -> Mat<D> {
    let norm = inf_norm(a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scale = 0.5f64.powi(squarings as i32);
    let mut scaled = *a;
    for row in scaled.iter_mut() {
        for x in row.iter_mut() {
            *x *= scale;
        }
    }

    let mut sum = identity::<D>();
    let mut term = identity::<D>();
    for k in 1..=30 {
        term = mat_mul(&term, &scaled);
        let inv_k = 1.0 / k as f64;
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x *= inv_k;
            }
        }
        for (srow, trow) in sum.iter_mut().zip(term.iter()) {
            for (s, t) in srow.iter_mut().zip(trow.iter()) {
                *s += t;
            }
        }
        if inf_norm(&term) <= 1e-16 * inf_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = mat_mul(&sum, &sum);
    }
    sum
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `1e-300` in magnitude.
pub fn solve<const D: usize>(a: &Mat<D>, b: &[f64; D]) -> Option<[f64; D]> {
    let mut m = *a;
    let mut rhs = *b;
    for col in 0..D {
        let pivot = (col..D)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..D {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..D {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; D];
    for row in (0..D).rev() {
        let tail: f64 = (row + 1..D).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}
