//! SARI: mean of add, keep and delete n-gram scores for n in 1..=4.
//!
//! Counts follow the reference formulation: source and candidate n-gram counts
//! are multiplied by the number of references and compared against counts
//! pooled over all references. Delete is scored by precision only. Any
//! precision or recall whose denominator set is empty is defined as 1.

use std::collections::{HashMap, HashSet};

use super::{tokenize, MetricError, MetricScore};

const MAX_ORDER: usize = 4;

type Counts = HashMap<String, usize>;

fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.join(" ")).collect()
}

fn count(grams: &[String], scale: usize) -> Counts {
    let mut c = Counts::new();
    for g in grams {
        *c.entry(g.clone()).or_insert(0) += scale;
    }
    c
}

fn get(c: &Counts, g: &str) -> usize {
    c.get(g).copied().unwrap_or(0)
}

fn ratio_or_one(num: f64, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p > 0.0 || r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// `(keep F1, delete precision, add F1)` for one n-gram order.
fn order_scores(source: &[String], candidate: &[String], references: &[Vec<String>]) -> (f64, f64, f64) {
    let num_refs = references.len();
    let s_rep = count(source, num_refs);
    let c_rep = count(candidate, num_refs);
    let mut r_all = Counts::new();
    for r in references {
        for g in r {
            *r_all.entry(g.clone()).or_insert(0) += 1;
        }
    }

    // keep: n-grams retained from the source
    let mut keep_p_sum = 0.0;
    let mut keep_r_sum = 0.0;
    let mut keep_n = 0;
    for (g, &s) in &s_rep {
        let kept = s.min(get(&c_rep, g));
        if kept == 0 {
            continue;
        }
        keep_n += 1;
        let good = kept.min(get(&r_all, g));
        let all = s.min(get(&r_all, g));
        keep_p_sum += good as f64 / kept as f64;
        if all > 0 {
            keep_r_sum += good as f64 / all as f64;
        }
    }
    let keep_all_n = s_rep.keys().filter(|g| get(&r_all, g) > 0).count();
    let keep = f1(ratio_or_one(keep_p_sum, keep_n), ratio_or_one(keep_r_sum, keep_all_n));

    // delete: n-grams dropped from the source
    let mut del_sum = 0.0;
    let mut del_n = 0;
    for (g, &s) in &s_rep {
        let deleted = s.saturating_sub(get(&c_rep, g));
        if deleted == 0 {
            continue;
        }
        del_n += 1;
        let good = deleted.saturating_sub(get(&r_all, g));
        del_sum += good as f64 / deleted as f64;
    }
    let delete = ratio_or_one(del_sum, del_n);

    // add: n-grams introduced by the candidate
    let s_set: HashSet<&str> = source.iter().map(String::as_str).collect();
    let c_set: HashSet<&str> = candidate.iter().map(String::as_str).collect();
    let r_set: HashSet<&str> = r_all.keys().map(String::as_str).collect();
    let added: Vec<&str> = c_set.difference(&s_set).copied().collect();
    let add_good = added.iter().filter(|g| r_set.contains(*g)).count();
    let add_all = r_set.difference(&s_set).count();
    let add = f1(
        ratio_or_one(add_good as f64, added.len()),
        ratio_or_one(add_good as f64, add_all),
    );

    (keep, delete, add)
}

/// SARI on the percent scale.
pub fn sari<R: AsRef<str>>(source: &str, candidate: &str, references: &[R]) -> Result<MetricScore, MetricError> {
    if references.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let src = tokenize(source);
    let cand = tokenize(candidate);
    let refs: Vec<_> = references.iter().map(|r| tokenize(r.as_ref())).collect();

    let (mut keep, mut delete, mut add) = (0.0, 0.0, 0.0);
    for n in 1..=MAX_ORDER {
        let ref_grams: Vec<Vec<String>> = refs.iter().map(|r| ngrams(r.tokens(), n)).collect();
        let (k, d, a) = order_scores(&ngrams(src.tokens(), n), &ngrams(cand.tokens(), n), &ref_grams);
        keep += k;
        delete += d;
        add += a;
    }
    let orders = MAX_ORDER as f64;
    let score = (keep / orders + delete / orders + add / orders) / 3.0;
    Ok(MetricScore::percent(100.0 * score))
}
