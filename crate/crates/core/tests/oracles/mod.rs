//! Slow, obviously-correct reference implementations of the metrics.

const PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

/// Word-level rewrite of the normalization: lowercase, drop punctuation,
/// split on whitespace, drop article words.
pub fn normalize(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !PUNCT.contains(*c))
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// Multiset overlap by sorting both sides and walking them together.
fn common(a: &[String], b: &[String]) -> usize {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    n
}

pub fn f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (normalize(pred), normalize(gold));
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let c = common(&p, &g) as f64;
    if c == 0.0 {
        return 0.0;
    }
    let (pr, rc) = (c / p.len() as f64, c / g.len() as f64);
    2.0 * pr * rc / (pr + rc)
}

pub fn squad(pred: &str, golds: &[String]) -> (f64, f64) {
    let em = golds.iter().any(|g| normalize(g) == normalize(pred));
    let best = golds.iter().map(|g| f1(pred, g)).fold(0.0, f64::max);
    (if em { 1.0 } else { 0.0 }, best)
}

/// Best total credit over every one-to-one partial matching.
fn best_matching(credit: &[Vec<f64>], i: usize, used: &mut Vec<bool>) -> f64 {
    if i == credit.len() {
        return 0.0;
    }
    let mut best = best_matching(credit, i + 1, used);
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            best = best.max(credit[i][j] + best_matching(credit, i + 1, used));
            used[j] = false;
        }
    }
    best
}

fn micro(credit: f64, predicted: usize, gold: usize) -> f64 {
    if predicted == 0 && gold == 0 {
        return 100.0;
    }
    if predicted == 0 || gold == 0 || credit == 0.0 {
        return 0.0;
    }
    let (p, r) = (credit / predicted as f64, credit / gold as f64);
    100.0 * 2.0 * p * r / (p + r)
}

/// Pooled set F1 over `(predicted spans, gold spans)` pairs, crediting each
/// matched pair with `score`.
pub fn set_f1(corpus: &[(Vec<String>, Vec<String>)], score: impl Fn(&str, &str) -> f64) -> f64 {
    let (mut credit, mut np, mut ng) = (0.0, 0, 0);
    for (preds, golds) in corpus {
        let m: Vec<Vec<f64>> = preds.iter().map(|p| golds.iter().map(|g| score(p, g)).collect()).collect();
        credit += best_matching(&m, 0, &mut vec![false; golds.len()]);
        np += preds.len();
        ng += golds.len();
    }
    micro(credit, np, ng)
}

pub fn exact(p: &str, g: &str) -> f64 {
    if normalize(p) == normalize(g) {
        1.0
    } else {
        0.0
    }
}
