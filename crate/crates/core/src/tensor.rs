//! Fixed-size tensor helpers for chart dimensions n <= 3.
//!
//! All arrays are padded to dimension 3; loops must run over `0..n` with the
//! owning model's dimension so the padding stays zero and inert.

pub const MAX_DIM: usize = 3;

pub type V3 = [f64; MAX_DIM];
pub type M3 = [[f64; MAX_DIM]; MAX_DIM];
pub type R3 = [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM];
pub type R4 = [[[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];

pub fn v3(mut f: impl FnMut(usize) -> f64) -> V3 {
    std::array::from_fn(|i| f(i))
}

pub fn m3(mut f: impl FnMut(usize, usize) -> f64) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| f(i, j)))
}

pub fn r3(mut f: impl FnMut(usize, usize, usize) -> f64) -> R3 {
    std::array::from_fn(|i| std::array::from_fn(|j| std::array::from_fn(|k| f(i, j, k))))
}

pub fn r4(mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> R4 {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| std::array::from_fn(|k| std::array::from_fn(|l| f(i, j, k, l))))
    })
}

/// Sum `f(p)` over the first `n` index values.
pub fn sum1(n: usize, mut f: impl FnMut(usize) -> f64) -> f64 {
    (0..n).map(|p| f(p)).sum()
}

/// Sum `f(p, q)` over the first `n` values of both indices.
pub fn sum2(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for p in 0..n {
        for q in 0..n {
            acc += f(p, q);
        }
    }
    acc
}

pub fn dot(n: usize, a: &V3, b: &V3) -> f64 {
    sum1(n, |i| a[i] * b[i])
}

pub fn scale(a: &V3, c: f64) -> V3 {
    v3(|i| a[i] * c)
}

pub fn add(a: &V3, b: &V3) -> V3 {
    v3(|i| a[i] + b[i])
}

pub fn sub(a: &V3, b: &V3) -> V3 {
    v3(|i| a[i] - b[i])
}

pub fn norm(n: usize, a: &V3) -> f64 {
    dot(n, a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_fill_by_index() {
        let m = m3(|i, j| (i * 10 + j) as f64);
        assert_eq!(m[2][1], 21.0);
        let t = r3(|i, j, k| (i + j + k) as f64);
        assert_eq!(t[1][1][1], 3.0);
    }

    #[test]
    fn sums_respect_dimension() {
        let a = [1.0, 2.0, 7.0];
        let b = [3.0, 4.0, 11.0];
        // Third components must be ignored at n = 2.
        assert_eq!(dot(2, &a, &b), 11.0);
        assert_eq!(sum2(2, |i, j| a[i] * b[j]), (1.0 + 2.0) * (3.0 + 4.0));
    }
}
