//! Acceptance checks. Runs as a plain binary so that every check reports a
//! line even when an earlier one fails.

mod oracles;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use qase_core::data::{
    assemble_prompt, synth_corpus, tokenize, AnswerStyle, PromptOrder, PromptTemplate, RawExample, Segment,
    SynthOptions, Vocab,
};
use qase_core::harness::checkpoint;
use qase_core::harness::gradcheck::{self, GradcheckSpec};
use qase_core::harness::{evaluate, train, TrainConfig, TrainState};
use qase_core::metrics::{multispan_em_f1, multispan_overlap_f1, squad_score, Answers};
use qase_core::model::forward_with;
use qase_core::numcore::gradcheck::analytic_grads;
use qase_core::numcore::{Graph, Tensor};
use qase_core::qase::{HeadConfig, HeadKind, QaseHead};
use qase_core::rng::Prng;
use qase_core::spans::{align, tags_to_spans, IoTag, SpanSet};
use qase_core::DatasetKind;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_gradient_fidelity() -> Result<String, String> {
    let start = Instant::now();
    let report = gradcheck::run(&GradcheckSpec::default(), 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.passed(), || format!("max relative error {:.3e}", report.max_rel_err))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} tensors, max relative error {:.2e}, {:.2?}",
        report.checks.len(),
        report.max_rel_err,
        elapsed
    ))
}

fn c2_loss_algebra() -> Result<String, String> {
    let (model, ex) = gradcheck::fixture(&GradcheckSpec::default(), 3).map_err(|e| e.to_string())?;
    let total = |beta: f64| {
        let mut g = Graph::new();
        let f = forward_with(&model.plm, model.head.as_ref(), &mut g, &model.store, &ex, beta).unwrap();
        (g.scalar(f.total), g.scalar(f.qase.unwrap()))
    };
    let (l0, lq) = total(0.0);
    let mut worst: f64 = 0.0;
    for beta in [0.0, 1.0, 2.0] {
        let (l, _) = total(beta);
        worst = worst.max(((l - l0) - beta * lq).abs());
    }
    ensure(worst <= 1e-12, || format!("L(beta) - L(0) off by {worst:e}"))?;
    let grads = analytic_grads(&model.store, &model.head_param_ids(), &|g: &mut Graph, s| {
        Ok(forward_with(&model.plm, model.head.as_ref(), g, s, &ex, 0.0)?.total)
    })
    .map_err(|e| e.to_string())?;
    let nonzero = grads.iter().flatten().filter(|&&x| x != 0.0).count();
    ensure(nonzero == 0, || format!("{nonzero} head gradient entries non-zero at beta=0"))?;
    Ok(format!("max deviation {worst:.1e}, head grads exactly 0 at beta=0"))
}

fn corpus_loss(state: &TrainState, corpus: &[RawExample]) -> f64 {
    let examples = state.prepare(corpus).unwrap();
    let sum: f64 = examples
        .iter()
        .map(|ex| {
            let mut g = Graph::new();
            let f = state.model.forward(&mut g, ex, state.config.beta).unwrap();
            g.scalar(f.total)
        })
        .sum();
    sum / examples.len() as f64
}

fn c3_overfit() -> Result<String, String> {
    let start = Instant::now();
    let corpus = synth_corpus(16, 7, &SynthOptions::default());
    let cfg = TrainConfig {
        epochs: 1000,
        max_steps: 500,
        ..TrainConfig::default()
    };
    let (state, summary) = train(&cfg, &corpus).map_err(|e| e.to_string())?;
    let loss = corpus_loss(&state, &corpus);
    let report = evaluate::evaluate(&state, &corpus, DatasetKind::Synth).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let em = report.em.unwrap_or(0.0);
    let span_f1 = report.tagger_diagnostics.as_ref().map_or(0.0, |d| d.span_f1);
    let detail = format!(
        "{} steps, corpus loss {loss:.4}, EM {em:.1}, tagger span-F1 {span_f1:.1}, {elapsed:.1?}",
        summary.steps()
    );
    ensure(loss < 0.05 && em == 100.0 && span_f1 == 100.0, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(120), || detail.clone())?;
    Ok(detail)
}

fn c4_directional() -> Result<String, String> {
    let corpus = synth_corpus(200, 2024, &SynthOptions::default());
    let (train_set, held_out) = corpus.split_at(150);
    let mut means = Vec::new();
    for head in [HeadKind::Qase, HeadKind::None] {
        let mut total = 0.0;
        for seed in 0..5 {
            let cfg = TrainConfig {
                head,
                seed,
                ..TrainConfig::default()
            };
            let (state, _) = train(&cfg, train_set).map_err(|e| e.to_string())?;
            let r = evaluate::evaluate(&state, held_out, DatasetKind::Synth).map_err(|e| e.to_string())?;
            total += r.em.unwrap_or(0.0);
        }
        means.push(total / 5.0);
    }
    let (qase, none) = (means[0], means[1]);
    let trend = if qase > none { "strict improvement" } else { "no strict improvement" };
    let detail = format!("held-out mean EM qase {qase:.2} vs none {none:.2} ({trend})");
    ensure(qase >= none, || detail.clone())?;
    Ok(detail)
}

fn random_context(rng: &mut Prng) -> String {
    const WORDS: [&str; 10] = ["alpha", "b", "Çesme", "42", "x-ray", "the", "naïve", "Zo", "q", "日本"];
    const GLUE: [&str; 5] = [" ", " ", ", ", ". ", " ("];
    let n = 3 + rng.below(13);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(rng.choose(&GLUE));
        }
        s.push_str(rng.choose(&WORDS));
    }
    s
}

fn c5_io_schema() -> Result<String, String> {
    let mut rng = Prng::new(55);
    for case in 0..1000 {
        let context = random_context(&mut rng);
        let offsets: Vec<(usize, usize)> = tokenize(&context).iter().map(|t| (t.start, t.end)).collect();
        let mut ranges = Vec::new();
        let mut i = rng.below(2);
        while i < offsets.len() {
            if rng.below(3) == 0 {
                let len = 1 + rng.below(3);
                let end = (i + len).min(offsets.len());
                ranges.push((offsets[i].0, offsets[end - 1].1));
                i = end + 1;
            } else {
                i += 1;
            }
        }
        let spans = SpanSet::from_ranges(&context, &ranges).map_err(|e| e.to_string())?;
        let tags = align(&context, &spans, &offsets).map_err(|e| e.to_string())?;
        let back = tags_to_spans(&context, &tags, &offsets).map_err(|e| e.to_string())?;
        ensure(back == spans, || format!("case {case}: {context:?} {ranges:?} -> {:?}", back.ranges()))?;
    }
    // two spans on adjacent tokens collapse into one
    let context = "aa bb cc dd ee";
    let offsets: Vec<(usize, usize)> = tokenize(context).iter().map(|t| (t.start, t.end)).collect();
    let spans = SpanSet::from_ranges(context, &[(3, 5), (6, 8)]).map_err(|e| e.to_string())?;
    let tags = align(context, &spans, &offsets).map_err(|e| e.to_string())?;
    ensure(tags == [IoTag::O, IoTag::I, IoTag::I, IoTag::O, IoTag::O], || format!("{tags:?}"))?;
    let merged = tags_to_spans(context, &tags, &offsets).map_err(|e| e.to_string())?;
    ensure(merged.ranges() == [(3, 8)], || format!("{:?}", merged.ranges()))?;
    Ok("1000 round trips exact; adjacent spans merge to one".into())
}

fn random_span(rng: &mut Prng) -> String {
    const WORDS: [&str; 14] = [
        "a", "an", "The", "the.", "Paris", "paris,", "new", "York", "city", "1867", "rock-and-roll", "theatre",
        "b", "C",
    ];
    (0..1 + rng.below(6)).map(|_| *rng.choose(&WORDS)).collect::<Vec<_>>().join(" ")
}

fn c6_metric_oracles() -> Result<String, String> {
    let mut rng = Prng::new(66);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let pred = random_span(&mut rng);
        let golds: Vec<String> = (0..1 + rng.below(4)).map(|_| random_span(&mut rng)).collect();
        let s = squad_score(&pred, &golds).map_err(|e| e.to_string())?;
        let (em, f1) = oracles::squad(&pred, &golds);
        worst = worst.max((s.em - em).abs()).max((s.f1 - f1).abs());

        let n_examples = 1 + rng.below(3);
        let mut preds = Vec::new();
        let mut gold_sets = Vec::new();
        let mut pairs = Vec::new();
        for k in 0..n_examples {
            let p: Vec<String> = (0..rng.below(5)).map(|_| random_span(&mut rng)).collect();
            let g: Vec<String> = (0..1 + rng.below(4)).map(|_| random_span(&mut rng)).collect();
            preds.push(Answers::new(format!("{case}-{k}"), p.clone()));
            gold_sets.push(Answers::new(format!("{case}-{k}"), g.clone()));
            pairs.push((p, g));
        }
        let em_f1 = multispan_em_f1(&preds, &gold_sets).map_err(|e| e.to_string())?;
        let overlap = multispan_overlap_f1(&preds, &gold_sets).map_err(|e| e.to_string())?;
        worst = worst
            .max((em_f1 - oracles::set_f1(&pairs, oracles::exact)).abs())
            .max((overlap - oracles::set_f1(&pairs, oracles::f1)).abs());
        ensure(overlap >= em_f1 - 1e-12, || format!("case {case}: overlap {overlap} < exact {em_f1}"))?;
        ensure(worst <= 1e-9, || format!("case {case}: deviation {worst:e}"))?;
    }
    Ok(format!("200 instances, max deviation {worst:.1e}, overlap >= exact throughout"))
}

fn c7_attention_orientation() -> Result<String, String> {
    let raw = &synth_corpus(1, 4, &SynthOptions::default())[0];
    let dim = 6;
    let mut store = qase_core::numcore::ParamStore::new();
    let mut rng = Prng::new(77);
    let cfg = HeadConfig {
        kind: HeadKind::Qase,
        proj_dim: dim,
        num_heads: 1,
    };
    let head = QaseHead::register(cfg, dim, &mut store, &mut rng).map_err(|e| e.to_string())?.unwrap();
    let vocab = Vocab::from_tokens(tokenize(&format!("{} {}", raw.context, raw.question)).into_iter().map(|t| t.text));
    let ex = assemble_prompt(raw, &PromptTemplate::default(), &vocab).map_err(|e| e.to_string())?;
    let z_rows: Vec<Vec<f64>> = (0..ex.len()).map(|_| (0..dim).map(|_| rng.uniform(0.0, 1.0)).collect()).collect();
    let refs: Vec<&[f64]> = z_rows.iter().map(Vec::as_slice).collect();
    let mut g = Graph::new();
    let z = g.input(&Tensor::from_rows(&refs).map_err(|e| e.to_string())?);
    let out = head.question_attend(&mut g, &store, z, &ex.segment_labels).map_err(|e| e.to_string())?;

    let ctx = ex.positions(Segment::Context);
    let qst = ex.positions(Segment::Question);
    ensure(g.dims(out.output) == (ctx.len(), dim), || format!("output {:?}", g.shape(out.output)))?;
    let attn = head.attn.unwrap();
    let w = |id| store.get(id).values().to_vec();
    let (wq, wk, wv, wo) = (w(attn.wq), w(attn.wk), w(attn.wv), w(attn.wo));
    let proj = |x: &[f64], m: &[f64]| -> Vec<f64> {
        (0..dim).map(|j| (0..dim).map(|i| x[i] * m[i * dim + j]).sum()).collect()
    };
    let mut worst: f64 = 0.0;
    for (r, &i) in ctx.iter().enumerate() {
        let q = proj(&z_rows[i], &wq);
        let scores: Vec<f64> = qst
            .iter()
            .map(|&j| {
                let k = proj(&z_rows[j], &wk);
                q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (dim as f64).sqrt()
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z_sum: f64 = e.iter().sum();
        let mut mix = vec![0.0; dim];
        for (p, &j) in e.iter().zip(&qst) {
            let v = proj(&z_rows[j], &wv);
            for c in 0..dim {
                mix[c] += p / z_sum * v[c];
            }
        }
        let want = proj(&mix, &wo);
        for (got, w) in g.value(out.output)[r * dim..(r + 1) * dim].iter().zip(&want) {
            worst = worst.max((got - w).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("deviation {worst:e}"))?;
    Ok(format!(
        "{} context rows attend over {} question rows, deviation {worst:.1e}",
        ctx.len(),
        qst.len()
    ))
}

fn c8_determinism() -> Result<String, String> {
    let corpus = synth_corpus(6, 8, &SynthOptions::default());
    let cfg = TrainConfig {
        hidden_dim: 16,
        ff_dim: 32,
        max_steps: 6,
        seed: 123,
        ..TrainConfig::default()
    };
    let a = checkpoint::to_bytes(&train(&cfg, &corpus).map_err(|e| e.to_string())?.0);
    let b = checkpoint::to_bytes(&train(&cfg, &corpus).map_err(|e| e.to_string())?.0);
    ensure(a == b, || "same-seed checkpoints differ".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    std::fs::write(&path, &a).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let again = dir.path().join("again.ckpt");
    checkpoint::save(&loaded, &again).map_err(|e| e.to_string())?;
    let c = std::fs::read(&again).map_err(|e| e.to_string())?;
    ensure(a == c, || "save -> load -> save changed bytes".into())?;
    Ok(format!("{} byte checkpoints identical across runs and reloads", a.len()))
}

fn c9_prompt_templates() -> Result<String, String> {
    let context = "Marie Curie was born in Warsaw in 1867. Pierre Curie was born in Paris.";
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let cases = [
        (PromptOrder::ContextFirst, false, "Where was Marie Curie born?", "context_first.txt"),
        (PromptOrder::QuestionFirst, false, "Where was Marie Curie born?", "question_first.txt"),
        (PromptOrder::ContextFirst, true, "Which cities are mentioned?", "context_first_multi_span.txt"),
    ];
    for (order, clause, question, file) in cases {
        let template = PromptTemplate {
            order,
            multi_span_format_clause: clause,
        };
        let expected = std::fs::read(golden.join(file)).map_err(|e| format!("{file}: {e}"))?;
        let rendered = template.render(context, question).text;
        ensure(rendered.as_bytes() == expected.as_slice(), || format!("{file} differs:\n{rendered}"))?;
    }
    let raw = RawExample {
        id: "fixture".into(),
        context: context.into(),
        question: "Where was Marie Curie born?".into(),
        answers: vec!["Warsaw".into()],
        gold_spans: SpanSet::from_ranges(context, &[(24, 30)]).map_err(|e| e.to_string())?,
        style: AnswerStyle::Alternatives,
    };
    let vocab = Vocab::from_tokens(Vec::<String>::new());
    let ex = assemble_prompt(&raw, &PromptTemplate::new(PromptOrder::QuestionFirst), &vocab).map_err(|e| e.to_string())?;
    let firsts: Vec<Segment> = ex.segment_labels.iter().fold(Vec::new(), |mut acc, s| {
        if acc.last() != Some(s) {
            acc.push(*s);
        }
        acc
    });
    ensure(
        firsts
            == [
                Segment::Instruction,
                Segment::Question,
                Segment::Separator,
                Segment::Instruction,
                Segment::Context,
                Segment::Instruction,
            ],
        || format!("segment order {firsts:?}"),
    )?;
    Ok("3 rendered prompts match their golden files byte for byte".into())
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("gradient fidelity", c1_gradient_fidelity),
        ("loss algebra", c2_loss_algebra),
        ("overfit convergence", c3_overfit),
        ("directional effect", c4_directional),
        ("IO schema", c5_io_schema),
        ("metric oracles", c6_metric_oracles),
        ("attention orientation", c7_attention_orientation),
        ("determinism and persistence", c8_determinism),
        ("prompt templates", c9_prompt_templates),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        let id = n + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {id} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
