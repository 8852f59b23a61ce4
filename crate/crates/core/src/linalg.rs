//! Small dense kernels. Storage is `f32`, every reduction accumulates in `f64`.

pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub(crate) fn dot_mixed(query: &[f64], row: &[f32]) -> f64 {
    debug_assert_eq!(query.len(), row.len());
    query.iter().zip(row).map(|(&q, &r)| q * f64::from(r)).sum()
}

pub(crate) fn norm_f64(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}
