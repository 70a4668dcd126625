use crate::vector::{cosine, mean};

/// Greedy maximal-marginal-relevance picks.
///
/// The first pick is the member closest to the componentwise mean; each
/// further pick maximises `alpha·sim(r, mean) − (1−alpha)·max_{s∈picked} sim(r, s)`.
/// Members are visited in ascending id order and only a strictly better score
/// replaces the incumbent, so ties resolve to the smaller id regardless of
/// input order.
pub fn mmr_select(members: &[(&str, &[f64])], alpha: f64, num_reps: usize) -> Vec<String> {
    if members.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<(&str, &[f64])> = members.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let dim = sorted[0].1.len();
    let avg = mean(sorted.iter().map(|m| m.1), dim);
    let relevance: Vec<f64> = sorted.iter().map(|m| cosine(m.1, &avg)).collect();

    let mut picked: Vec<usize> = Vec::new();
    // max similarity of each member to anything picked so far
    let mut redundancy = vec![f64::NEG_INFINITY; sorted.len()];
    while picked.len() < num_reps.min(sorted.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (i, rel) in relevance.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            let score = if picked.is_empty() {
                *rel
            } else {
                alpha * rel - (1.0 - alpha) * redundancy[i]
            };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let (chosen, _) = best.expect("an unpicked member remains");
        picked.push(chosen);
        for (i, r) in redundancy.iter_mut().enumerate() {
            *r = r.max(cosine(sorted[i].1, sorted[chosen].1));
        }
    }
    picked.into_iter().map(|i| sorted[i].0.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn members(v: &[(&'static str, Vec<f64>)]) -> Vec<(&'static str, Vec<f64>)> {
        v.to_vec()
    }

    #[test]
    fn relevance_only_limit() {
        let m = members(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.9, 0.1]),
            ("c", vec![0.0, 1.0]),
            ("d", vec![0.95, 0.05]),
        ]);
        let refs: Vec<(&str, &[f64])> = m.iter().map(|(i, v)| (*i, v.as_slice())).collect();
        let avg = mean(refs.iter().map(|r| r.1), 2);
        let mut by_rel: Vec<(&str, f64)> = refs.iter().map(|(i, v)| (*i, cosine(v, &avg))).collect();
        by_rel.sort_by(|a, b| b.1.total_cmp(&a.1));
        let got = mmr_select(&refs, 1.0, 2);
        assert_eq!(got, [by_rel[0].0, by_rel[1].0]);
    }

    #[test]
    fn diversity_only_limit() {
        let m = members(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.8, 0.6]),
            ("c", vec![0.6, 0.8]),
            ("d", vec![-0.6, 0.8]),
        ]);
        let refs: Vec<(&str, &[f64])> = m.iter().map(|(i, v)| (*i, v.as_slice())).collect();
        let got = mmr_select(&refs, 0.0, 2);
        let first = refs.iter().find(|r| r.0 == got[0]).unwrap().1;
        let most_dissimilar = refs
            .iter()
            .filter(|r| r.0 != got[0])
            .min_by(|x, y| cosine(x.1, first).total_cmp(&cosine(y.1, first)))
            .unwrap()
            .0;
        assert_eq!(got[1], most_dissimilar);
    }

    #[test]
    fn input_order_does_not_matter() {
        let m = members(&[
            ("x", vec![1.0, 0.0]),
            ("y", vec![1.0, 0.0]),
            ("z", vec![0.0, 1.0]),
        ]);
        let mut refs: Vec<(&str, &[f64])> = m.iter().map(|(i, v)| (*i, v.as_slice())).collect();
        let a = mmr_select(&refs, 0.2, 2);
        refs.reverse();
        assert_eq!(a, mmr_select(&refs, 0.2, 2));
        assert_eq!(a[0], "x");
    }
}
