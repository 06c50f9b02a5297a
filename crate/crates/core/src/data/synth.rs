//! Templated reading-comprehension corpus with known gold spans.

use super::{AnswerStyle, RawExample};
use crate::rng::Prng;
use crate::spans::SpanSet;

const NAMES: [&str; 16] = [
    "Ada", "Bruno", "Chloe", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Keiko", "Liam", "Mara",
    "Nils", "Olga", "Pavel",
];

const CITIES: [&str; 16] = [
    "Paris", "Lima", "Oslo", "Cairo", "Perth", "Quito", "Dakar", "Hanoi", "Riga", "Tunis", "Accra", "Baku", "Minsk",
    "Sofia", "Kyoto", "Porto",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    /// Probability that an example is drawn from a multi-span template.
    pub multi_span_fraction: f64,
    pub first_year: u32,
    pub num_years: u32,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            multi_span_fraction: 0.25,
            first_year: 1900,
            num_years: 100,
        }
    }
}

/// Builds a context while recording where marked fragments land.
#[derive(Default)]
struct ContextBuilder {
    text: String,
    len: usize,
    marks: Vec<((usize, usize), String)>,
}

impl ContextBuilder {
    fn push(&mut self, s: &str) -> &mut Self {
        self.text.push_str(s);
        self.len += s.chars().count();
        self
    }

    fn mark(&mut self, s: &str) -> &mut Self {
        let start = self.len;
        self.push(s);
        self.marks.push(((start, self.len), s.to_string()));
        self
    }
}

fn distinct<'a>(rng: &mut Prng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    rng.shuffle(&mut idx);
    idx[..n].iter().map(|&i| pool[i]).collect()
}

/// `n` examples, deterministic in `seed`.
pub fn synth_corpus(n: usize, seed: u64, opts: &SynthOptions) -> Vec<RawExample> {
    let mut rng = Prng::derived(seed, 0x5e17);
    (0..n).map(|i| one(&mut rng, seed, i, opts)).collect()
}

fn one(rng: &mut Prng, seed: u64, index: usize, opts: &SynthOptions) -> RawExample {
    let names = distinct(rng, &NAMES, 3);
    let cities = distinct(rng, &CITIES, 3);
    let mut years = Vec::new();
    while years.len() < 2 {
        let y = (opts.first_year + rng.below(opts.num_years as usize) as u32).to_string();
        if !years.contains(&y) {
            years.push(y);
        }
    }
    let multi = rng.next_f64() < opts.multi_span_fraction;
    let variant = rng.below(2);
    let target_first = rng.below(2) == 0;
    let mut b = ContextBuilder::default();

    let question = match (multi, variant) {
        (false, v) => {
            // two people; the question picks one of them
            let fact = |b: &mut ContextBuilder, name: &str, city: &str, year: &str, target: bool| {
                b.push(name).push(" was born in ");
                if target && v == 0 {
                    b.mark(city);
                } else {
                    b.push(city);
                }
                b.push(" in ");
                if target && v == 1 {
                    b.mark(year);
                } else {
                    b.push(year);
                }
                b.push(".");
            };
            let (t, o) = ((names[0], cities[0], &years[0]), (names[1], cities[1], &years[1]));
            if target_first {
                fact(&mut b, t.0, t.1, t.2, true);
                b.push(" ");
                fact(&mut b, o.0, o.1, o.2, false);
            } else {
                fact(&mut b, o.0, o.1, o.2, false);
                b.push(" ");
                fact(&mut b, t.0, t.1, t.2, true);
            }
            if v == 0 {
                format!("Where was {} born?", names[0])
            } else {
                format!("When was {} born?", names[0])
            }
        }
        (true, 0) => {
            let pair = |b: &mut ContextBuilder| {
                b.mark(names[0]).push(" and ").mark(names[1]).push(" were born in ").push(cities[0]).push(".");
            };
            let single = |b: &mut ContextBuilder| {
                b.push(names[2]).push(" was born in ").push(cities[1]).push(".");
            };
            if target_first {
                pair(&mut b);
                b.push(" ");
                single(&mut b);
            } else {
                single(&mut b);
                b.push(" ");
                pair(&mut b);
            }
            format!("Who was born in {}?", cities[0])
        }
        (true, _) => {
            let pair = |b: &mut ContextBuilder| {
                b.push(names[0]).push(" visited ").mark(cities[0]).push(" and ").mark(cities[1]).push(" in ");
                b.push(&years[0]).push(".");
            };
            let single = |b: &mut ContextBuilder| {
                b.push(names[1]).push(" visited ").push(cities[2]).push(".");
            };
            if target_first {
                pair(&mut b);
                b.push(" ");
                single(&mut b);
            } else {
                single(&mut b);
                b.push(" ");
                pair(&mut b);
            }
            format!("Which cities did {} visit?", names[0])
        }
    };

    let ranges: Vec<(usize, usize)> = b.marks.iter().map(|(r, _)| *r).collect();
    let answers = b.marks.iter().map(|(_, s)| s.clone()).collect();
    RawExample {
        id: format!("synth-{seed}-{index}"),
        gold_spans: SpanSet::from_ranges(&b.text, &ranges).expect("marks lie inside the context"),
        context: b.text,
        question,
        answers,
        style: AnswerStyle::SpanList,
    }
}
