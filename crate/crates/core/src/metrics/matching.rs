/// Pairs each generated noun phrase with the first not-yet-used ground-truth
/// phrase having exactly the same tokens.
///
/// Returns `(generated index, ground-truth index)` pairs in generated order.
pub fn match_generated<S: AsRef<str>>(generated: &[&[S]], ground_truth: &[&[S]]) -> Vec<(usize, usize)> {
    let mut used = vec![false; ground_truth.len()];
    let mut out = Vec::new();
    for (gi, gen) in generated.iter().enumerate() {
        let hit = ground_truth.iter().enumerate().position(|(ti, gt)| {
            !used[ti] && gt.len() == gen.len() && gt.iter().zip(gen.iter()).all(|(a, b)| a.as_ref() == b.as_ref())
        });
        if let Some(ti) = hit {
            used[ti] = true;
            out.push((gi, ti));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hurdle_example() {
        let gen: [&[&str]; 2] = [&["a", "dog"], &["a", "hurdle"]];
        let gt: [&[&str]; 2] = [&["a", "cat"], &["a", "hurdle"]];
        assert_eq!(match_generated(&gen, &gt), vec![(1, 1)]);
    }

    #[test]
    fn identical_and_disjoint() {
        let a: [&[&str]; 2] = [&["a", "red", "box"], &["the", "park"]];
        assert_eq!(match_generated(&a, &a), vec![(0, 0), (1, 1)]);
        let b: [&[&str]; 1] = [&["a", "circle"]];
        assert!(match_generated(&a, &b).is_empty());
    }

    #[test]
    fn duplicates_use_distinct_occurrences() {
        let gen: [&[&str]; 3] = [&["a", "box"], &["a", "box"], &["a", "box"]];
        let gt: [&[&str]; 3] = [&["a", "box"], &["a", "circle"], &["a", "box"]];
        assert_eq!(match_generated(&gen, &gt), vec![(0, 0), (1, 2)]);
    }
}
