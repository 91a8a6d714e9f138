//! Natural ordering for designators and pin names ("U2" < "U10", "A3" < "A12").

use std::cmp::Ordering;

/// Compares two strings treating runs of ASCII digits as numbers.
///
/// Falls back to a plain byte comparison when the natural comparison ties,
/// so the ordering is total and agrees with `Eq` on `str`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let mut ai = a.as_bytes();
    let mut bi = b.as_bytes();
    loop {
        match (ai.first(), bi.first()) {
            (None, None) => break,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let (na, ra) = split_digits(ai);
                let (nb, rb) = split_digits(bi);
                let ta = trim_zeros(na);
                let tb = trim_zeros(nb);
                let ord = ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb));
                if ord != Ordering::Equal {
                    return ord;
                }
                ai = ra;
                bi = rb;
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                ai = &ai[1..];
                bi = &bi[1..];
            }
        }
    }
    a.cmp(b)
}

fn split_digits(s: &[u8]) -> (&[u8], &[u8]) {
    let n = s.iter().take_while(|c| c.is_ascii_digit()).count();
    s.split_at(n)
}

fn trim_zeros(s: &[u8]) -> &[u8] {
    let n = s.iter().take_while(|c| **c == b'0').count();
    &s[n..]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_compare_by_value() {
        assert_eq!(natural_cmp("U2", "U10"), Ordering::Less);
        assert_eq!(natural_cmp("A12", "A3"), Ordering::Greater);
        assert_eq!(natural_cmp("R1", "R1"), Ordering::Equal);
        assert_eq!(natural_cmp("C1", "U1"), Ordering::Less);
    }

    #[test]
    fn leading_zeros_still_total() {
        assert_ne!(natural_cmp("01", "1"), Ordering::Equal);
        assert_eq!(natural_cmp("01", "1"), natural_cmp("01", "1"));
    }

    #[test]
    fn prefix_sorts_first() {
        assert_eq!(natural_cmp("U", "U1"), Ordering::Less);
        assert_eq!(natural_cmp("", "a"), Ordering::Less);
    }
}
