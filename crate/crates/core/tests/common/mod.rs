//! Helpers shared by the integration tests: fixture loading and brute-force
//! metric oracles written without the library's code paths.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

pub fn read_jsonl<T: DeserializeOwned>(name: &str) -> Vec<T> {
    let text = std::fs::read_to_string(data_dir().join(name)).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Copies every fixture into a fresh directory so runs can write outputs.
pub fn fixture_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(data_dir()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
    }
    dir
}

pub mod oracle {
    use std::collections::HashMap;

    const EXTRA: &[char] = &['‘', '’', '“', '”', '–', '—', '…', '¿', '¡'];

    pub fn tokens(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for raw in text.to_lowercase().split_whitespace() {
            let mut chars: Vec<char> = raw.chars().collect();
            while chars.first().is_some_and(|c| c.is_ascii_punctuation() || EXTRA.contains(c)) {
                chars.remove(0);
            }
            while chars.last().is_some_and(|c| c.is_ascii_punctuation() || EXTRA.contains(c)) {
                chars.pop();
            }
            if !chars.is_empty() {
                out.push(chars.into_iter().collect());
            }
        }
        out
    }

    pub fn grams(toks: &[String], n: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut i = 0;
        while i + n <= toks.len() {
            out.push(toks[i..i + n].join(" "));
            i += 1;
        }
        out
    }

    fn occurrences(list: &[String], g: &str) -> usize {
        list.iter().filter(|x| x.as_str() == g).count()
    }

    fn distinct(list: &[String]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in list {
            if !out.contains(g) {
                out.push(g.clone());
            }
        }
        out
    }

    fn f1(p: f64, r: f64) -> f64 {
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn rouge_n(cand: &str, reference: &str, n: usize) -> f64 {
        let c = grams(&tokens(cand), n);
        let r = grams(&tokens(reference), n);
        if c.is_empty() || r.is_empty() {
            return 0.0;
        }
        let hit: usize = distinct(&c)
            .iter()
            .map(|g| occurrences(&c, g).min(occurrences(&r, g)))
            .sum();
        f1(hit as f64 / c.len() as f64, hit as f64 / r.len() as f64)
    }

    fn lcs(a: &[String], b: &[String], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        let key = (a.len(), b.len());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let v = if a[0] == b[0] {
            1 + lcs(&a[1..], &b[1..], memo)
        } else {
            lcs(&a[1..], b, memo).max(lcs(a, &b[1..], memo))
        };
        memo.insert(key, v);
        v
    }

    pub fn rouge_l(cand: &str, reference: &str) -> f64 {
        let c = tokens(cand);
        let r = tokens(reference);
        if c.is_empty() || r.is_empty() {
            return 0.0;
        }
        let l = lcs(&c, &r, &mut HashMap::new()) as f64;
        f1(l / c.len() as f64, l / r.len() as f64)
    }

    fn sari_order(s: &[String], c: &[String], refs: &[Vec<String>]) -> (f64, f64, f64) {
        let k = refs.len();
        let pooled: Vec<String> = refs.iter().flatten().cloned().collect();
        let s_n = |g: &str| occurrences(s, g) * k;
        let c_n = |g: &str| occurrences(c, g) * k;
        let r_n = |g: &str| occurrences(&pooled, g);

        let source_grams = distinct(s);
        let kept: Vec<&String> = source_grams.iter().filter(|g| s_n(g).min(c_n(g)) > 0).collect();
        let mut p = 0.0;
        let mut r = 0.0;
        for g in &kept {
            let kept_n = s_n(g).min(c_n(g));
            let good = kept_n.min(r_n(g));
            let all = s_n(g).min(r_n(g));
            p += good as f64 / kept_n as f64;
            if all > 0 {
                r += good as f64 / all as f64;
            }
        }
        let all_n = source_grams.iter().filter(|g| s_n(g).min(r_n(g)) > 0).count();
        let keep_p = if kept.is_empty() { 1.0 } else { p / kept.len() as f64 };
        let keep_r = if all_n == 0 { 1.0 } else { r / all_n as f64 };

        let deleted: Vec<&String> = source_grams.iter().filter(|g| s_n(g) > c_n(g)).collect();
        let mut d = 0.0;
        for g in &deleted {
            let del = s_n(g) - c_n(g);
            d += del.saturating_sub(r_n(g)) as f64 / del as f64;
        }
        let del_p = if deleted.is_empty() { 1.0 } else { d / deleted.len() as f64 };

        let added: Vec<String> = distinct(c).into_iter().filter(|g| !s.contains(g)).collect();
        let add_good = added.iter().filter(|g| pooled.contains(g)).count();
        let add_all = distinct(&pooled).iter().filter(|g| !s.contains(g)).count();
        let add_p = if added.is_empty() { 1.0 } else { add_good as f64 / added.len() as f64 };
        let add_r = if add_all == 0 { 1.0 } else { add_good as f64 / add_all as f64 };

        (f1(keep_p, keep_r), del_p, f1(add_p, add_r))
    }

    /// Percent scale.
    pub fn sari(source: &str, cand: &str, refs: &[String]) -> f64 {
        let (s, c) = (tokens(source), tokens(cand));
        let r: Vec<Vec<String>> = refs.iter().map(|x| tokens(x)).collect();
        let mut total = 0.0;
        for n in 1..=4 {
            let rg: Vec<Vec<String>> = r.iter().map(|x| grams(x, n)).collect();
            let (k, d, a) = sari_order(&grams(&s, n), &grams(&c, n), &rg);
            total += (k + d + a) / 4.0;
        }
        total / 3.0 * 100.0
    }
}
