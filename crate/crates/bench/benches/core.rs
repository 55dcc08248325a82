use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use crs_bench::{goal_corpus, synthetic_kb};
use crs_core::eval::{bleu_n, dist_n, mrr_at_k, ndcg_at_k, token_f1};
use crs_core::prompts::render_prompt;
use crs_core::text::tokenize;
use crs_core::{
    train_goal_baseline, EntityId, GenerationMode, GoalTrainingConfig, PromptSpec,
    RelationId, TaskKind,
};

fn metrics(c: &mut Criterion) {
    let cand = tokenize("since you like him so much i wanna recommend the movie to miss with love");
    let refr = tokenize("i recommend to miss with love which is starred by him since you like him");
    c.bench_function("bleu2", |b| b.iter(|| bleu_n(black_box(&cand), black_box(&refr), 2)));
    c.bench_function("token_f1", |b| b.iter(|| token_f1(black_box(&cand), black_box(&refr))));
    let pool: Vec<Vec<String>> = (0..200).map(|i| tokenize(&format!("reply {i} about film {}", i % 7))).collect();
    c.bench_function("dist2/200", |b| b.iter(|| dist_n(black_box(&pool), 2)));

    let ranked: Vec<String> = (0..50).map(|i| format!("Film {i}")).collect();
    let gold = vec!["Film 37".to_string(), "Film 3".to_string()];
    c.bench_function("ndcg@50", |b| b.iter(|| ndcg_at_k(black_box(&ranked), black_box(&gold), 50)));
    c.bench_function("mrr@50", |b| b.iter(|| mrr_at_k(black_box(&ranked), black_box(&gold), 50)));
}

fn kb(c: &mut Criterion) {
    let mut g = c.benchmark_group("kb");
    for n in [100usize, 2000] {
        let kb = synthetic_kb(n, 5);
        let text = format!("Do you know Star {:04} and Star {:04}? I love their films.", n / 3, n / 2);
        g.bench_with_input(BenchmarkId::new("extract_entities", n), &text, |b, t| {
            b.iter(|| kb.extract_entities(black_box(t)))
        });
    }
    let kb = synthetic_kb(10, 400);
    let e = EntityId::new("Star 0003").unwrap();
    let r = RelationId::new("stars in").unwrap();
    g.bench_function("fetch_triples/cap50of400", |b| {
        b.iter(|| kb.fetch_triples(black_box(&e), black_box(&r), 50, 7))
    });
    g.finish();
}

fn prompts(c: &mut Criterion) {
    let corpus = goal_corpus(40, 6);
    let mut shots = Vec::new();
    for (d, j, h) in corpus.system_targets().take(3) {
        shots.push(crs_core::FewShotExample {
            dialogue_id: d.id.clone(),
            turn_index: j,
            context: h.turns.clone(),
            gold: h.gold_next.clone().unwrap(),
        });
    }
    let (_, _, history) = corpus.system_targets().nth(20).unwrap();
    for mode in [GenerationMode::Dg, GenerationMode::OracleBoth] {
        let mut spec = PromptSpec::new(mode, TaskKind::ResponseGeneration, history.clone()).with_gold_from_history();
        spec.shots = shots.clone();
        c.bench_function(&format!("render/{mode}/3-shot"), |b| b.iter(|| render_prompt(black_box(&spec))));
    }
}

fn goal_training(c: &mut Criterion) {
    let corpus = goal_corpus(60, 5);
    let cfg = GoalTrainingConfig {
        max_epochs: 50,
        ..Default::default()
    };
    let mut g = c.benchmark_group("goal");
    g.sample_size(10);
    g.bench_function("train/300-turns/50-epochs", |b| b.iter(|| train_goal_baseline(black_box(&corpus), &cfg)));
    g.finish();
}

criterion_group!(benches, metrics, kb, prompts, goal_training);
criterion_main!(benches);
