use crate::error::{Error, Result};
use crate::synthgen::HenryClass;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Majority vote among the `k` Euclidean-nearest training vectors. Class ties
/// go to the tied class of the nearest neighbour. Equal distances are ordered
/// by label and then by vector, so the result never depends on training order.
pub fn knn_classify(train: &[(Vec<f64>, HenryClass)], query: &[f64], k: usize) -> Result<HenryClass> {
    if train.is_empty() {
        return Err(Error::invalid("k-NN needs a non-empty training set"));
    }
    if k == 0 || k > train.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", train.len())));
    }
    if let Some((v, _)) = train.iter().find(|(v, _)| v.len() != query.len()) {
        return Err(Error::invalid(format!(
            "feature length {} differs from query length {}",
            v.len(),
            query.len()
        )));
    }
    let mut ranked: Vec<(f64, &(Vec<f64>, HenryClass))> =
        train.iter().map(|t| (squared_distance(&t.0, query), t)).collect();
    ranked.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1 .1.index().cmp(&b.1 .1.index()))
            .then_with(|| lex_cmp(&a.1 .0, &b.1 .0))
    });
    let nearest = &ranked[..k];
    let mut votes = [0usize; 5];
    for (_, (_, c)) in nearest {
        votes[c.index()] += 1;
    }
    let top = *votes.iter().max().expect("five classes");
    let (_, (_, winner)) = nearest
        .iter()
        .find(|(_, (_, c))| votes[c.index()] == top)
        .expect("some class has the top vote");
    Ok(*winner)
}
