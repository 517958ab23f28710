/// `⌊n·ratio⌋`, tolerant of the representation error in products such as
/// `0.29 * 100`.
pub(crate) fn floor_count(n: usize, ratio: f64) -> usize {
    let x = n as f64 * ratio;
    let k = (x + 1e-9).floor();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

#[cfg(test)]
mod tests {
    use super::floor_count;

    #[test]
    fn floor_count_absorbs_fp_error() {
        assert_eq!(floor_count(100, 0.29), 29);
        assert_eq!(floor_count(10, 0.4), 4);
        assert_eq!(floor_count(9, 0.5), 4);
        assert_eq!(floor_count(0, 0.5), 0);
        assert_eq!(floor_count(7, 0.0), 0);
    }
}
