//! Brute-force caption metrics written straight from their definitions.
//! They work on word strings and share no code with the library.

use std::collections::HashMap;

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn grams<'a>(w: &[&'a str], n: usize) -> Vec<Vec<&'a str>> {
    if w.len() < n {
        return Vec::new();
    }
    (0..=w.len() - n).map(|i| w[i..i + n].to_vec()).collect()
}

fn occurrences(list: &[Vec<&str>], g: &[&str]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct<'a>(list: &[Vec<&'a str>]) -> Vec<Vec<&'a str>> {
    let mut out: Vec<Vec<&str>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// Clipped matches and candidate n-gram totals for orders 1..=n, the
/// candidate length and the closest reference length.
pub fn bleu_counts(cand: &str, refs: &[&str], n: usize) -> (Vec<usize>, Vec<usize>, usize, usize) {
    let c = words(cand);
    let rs: Vec<Vec<&str>> = refs.iter().map(|r| words(r)).collect();
    let mut matches = Vec::new();
    let mut totals = Vec::new();
    for k in 1..=n {
        let cg = grams(&c, k);
        let mut m = 0;
        for g in distinct(&cg) {
            let mine = occurrences(&cg, &g);
            let best = rs.iter().map(|r| occurrences(&grams(r, k), &g)).max().unwrap_or(0);
            m += mine.min(best);
        }
        matches.push(m);
        totals.push(cg.len());
    }
    let mut r_len = rs[0].len();
    for r in &rs {
        let (d_new, d_old) = (r.len().abs_diff(c.len()), r_len.abs_diff(c.len()));
        if d_new < d_old || (d_new == d_old && r.len() < r_len) {
            r_len = r.len();
        }
    }
    (matches, totals, c.len(), r_len)
}

fn bleu_from_counts(m: &[usize], t: &[usize], c: usize, r: usize, smooth: bool) -> f64 {
    if c == 0 {
        return 0.0;
    }
    let n = m.len();
    let mut product = 1.0;
    for k in 0..n {
        let p = if m[k] > 0 {
            m[k] as f64 / t[k] as f64
        } else if smooth && k > 0 {
            (m[k] as f64 + 1.0) / (t[k] as f64 + 1.0)
        } else {
            0.0
        };
        product *= p;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * product.powf(1.0 / n as f64)
}

/// Sentence BLEU-n with add-one smoothing on zero-match higher orders.
pub fn sentence_bleu(cand: &str, refs: &[&str], n: usize) -> f64 {
    let (m, t, c, r) = bleu_counts(cand, refs, n);
    bleu_from_counts(&m, &t, c, r, true)
}

/// Corpus BLEU-n: pooled counts, no smoothing.
pub fn corpus_bleu(pairs: &[(&str, Vec<&str>)], n: usize) -> f64 {
    let mut m = vec![0; n];
    let mut t = vec![0; n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in pairs {
        let (pm, pt, pc, pr) = bleu_counts(cand, refs, n);
        for k in 0..n {
            m[k] += pm[k];
            t[k] += pt[k];
        }
        c += pc;
        r += pr;
    }
    bleu_from_counts(&m, &t, c, r, false)
}

fn is_subsequence(sub: &[&str], of: &[&str]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|w| it.any(|x| x == w))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn lcs_by_enumeration(a: &[&str], b: &[&str]) -> usize {
    assert!(a.len() <= 20, "enumeration oracle is for short sentences");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<&str> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        if is_subsequence(&sub, b) {
            best = len;
        }
    }
    best
}

pub fn rouge_l(cand: &str, refs: &[&str]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let c = words(cand);
    let mut best = 0.0f64;
    for r in refs {
        let r = words(r);
        let lcs = lcs_by_enumeration(&c, &r) as f64;
        if lcs == 0.0 {
            continue;
        }
        let p = lcs / c.len() as f64;
        let rec = lcs / r.len() as f64;
        best = best.max((1.0 + beta2) * p * rec / (rec + beta2 * p));
    }
    best
}

/// Per-image reference sets used for document frequencies.
pub struct Corpus<'a> {
    pub images: Vec<Vec<&'a str>>,
}

impl Corpus<'_> {
    /// Number of images with at least one reference containing `g`.
    pub fn df(&self, g: &[&str]) -> usize {
        self.images
            .iter()
            .filter(|refs| refs.iter().any(|r| occurrences(&grams(&words(r), g.len()), g) > 0))
            .count()
    }

    pub fn idf(&self, g: &[&str]) -> f64 {
        (self.images.len() as f64).ln() - (self.df(g).max(1) as f64).ln()
    }

    fn vector<'s>(&self, sentence: &'s str, n: usize) -> Vec<(Vec<&'s str>, f64)> {
        let g = grams(&words(sentence), n);
        distinct(&g).into_iter().map(|x| {
            let w = occurrences(&g, &x) as f64 * self.idf(&x);
            (x, w)
        }).collect()
    }

    /// CIDEr (`clipped = false`) or CIDEr-D (`clipped = true`, with the
    /// Gaussian length penalty, sigma 6).
    pub fn cider(&self, cand: &str, refs: &[&str], clipped: bool) -> f64 {
        let mut total = 0.0;
        for n in 1..=4 {
            let cv = self.vector(cand, n);
            let mut per_ref = 0.0;
            for r in refs {
                let rv = self.vector(r, n);
                let lookup: HashMap<&Vec<&str>, f64> = rv.iter().map(|(g, w)| (g, *w)).collect();
                let mut dot = 0.0;
                for (g, h) in &cv {
                    if let Some(&rw) = lookup.get(g) {
                        dot += if clipped { h.min(rw) * rw } else { h * rw };
                    }
                }
                let nc: f64 = cv.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                let nr: f64 = rv.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                let mut sim = if nc * nr > 0.0 { dot / (nc * nr) } else { 0.0 };
                if clipped {
                    let delta = words(cand).len() as f64 - words(r).len() as f64;
                    sim *= (-delta * delta / 72.0).exp();
                }
                per_ref += sim;
            }
            total += per_ref / refs.len() as f64;
        }
        total / 4.0 * 10.0
    }
}

/// Hand-picked candidates against a small reference corpus.
pub struct Crafted {
    pub images: Vec<Vec<&'static str>>,
    /// `(candidate, image index)`.
    pub cases: Vec<(&'static str, usize)>,
    /// Cases whose candidate equals the sole reference of its image.
    pub identity: Vec<usize>,
    /// Cases sharing no word with their references.
    pub disjoint: Vec<usize>,
}

pub fn crafted() -> Crafted {
    let images = vec![
        vec!["a cat sitting on the red mat", "the cat is on a mat", "a small cat on a red mat"],
        vec!["a dog running in the park", "the brown dog runs through the park"],
        vec!["two men playing football on a field", "men playing soccer on green grass", "a group of men play football"],
        vec!["a plate of food with rice and beans"],
        vec!["a man riding a horse on a beach", "a person rides a horse along the shore"],
        vec!["the cat sat on the mat"],
        vec!["a red bus driving down a city street", "a red double decker bus on the street"],
        vec!["an airplane flying over the ocean at sunset"],
        vec!["children play in the snow near trees", "kids playing in snow"],
        vec!["a bowl of fruit on a wooden table", "apples and oranges in a bowl on the table"],
        vec!["zebra and giraffe standing together"],
        vec!["x y z w v"],
    ];
    let cases = vec![
        ("a plate of food with rice and beans", 3),
        ("an airplane flying over the ocean at sunset", 7),
        ("purple elephants dancing", 0),
        ("the the the the the the", 5),
        ("a cat on the mat", 0),
        ("a dog in the park", 1),
        ("men playing football on grass", 2),
        ("a horse on the beach", 4),
        ("a red bus on a street", 6),
        ("kids play in the snow", 8),
        ("a wooden bowl of apples", 9),
        ("a cat sitting on the red mat near a cat sitting on the mat", 0),
        ("cat", 0),
        ("giraffe and zebra together standing", 10),
        ("v w x y z", 11),
        ("mat the on sat cat the", 5),
    ];
    Crafted { images, cases, identity: vec![0, 1], disjoint: vec![2] }
}

/// Assigns token ids (from 4 upward) to words on first sight.
#[derive(Default)]
pub struct Lexicon {
    ids: HashMap<String, usize>,
}

impl Lexicon {
    pub fn encode(&mut self, s: &str) -> Vec<usize> {
        s.split_whitespace()
            .map(|w| {
                let next = self.ids.len() + 4;
                *self.ids.entry(w.to_string()).or_insert(next)
            })
            .collect()
    }
}
