//! Acceptance checks for the advisory service. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Output, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use advisor_cli::commands::ingest::{ingest, IngestArgs};
use advisor_cli::config::ServiceConfig;
use advisor_core::channels::parse_outbound;
use advisor_core::eval::{bucket_scores, jaccard, score_numeric, ScoringMode, BUCKET_COUNT, DEFAULT_TOLERANCE};
use advisor_core::index::{cosine_similarity, EmbeddingVector, HashEmbedder, IndexEntry, VectorIndex};
use advisor_core::queue::{
    Channel, Handler, JobQueue, JobStatus, NewJob, QueueOptions, WorkerPool, WorkerPoolConfig, QUEUE_LOG,
};
use advisor_core::rag::{refusal_text, Answer, RagPipeline};
use advisor_core::text::words;
use advisor_core::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if let false = $cond {
            return Err(format!($($msg)+));
        }
    };
}

const PSEUDONYM_KEY: &str = "acceptance-pseudonym-key-01";
const SEEDS: u64 = 20;

const TABLE1: [(&str, &str); 3] = [
    (
        "What is the normal household eui for building id 5?",
        "30.00 kWh/m²",
    ),
    (
        "What is the deduction in household heat electricity for building id 11?",
        "41755.50",
    ),
    (
        "What is the total electricity use in laundry room for building id 5 for the month of August for every year? Give a detailed breakdown.",
        "I'm sorry, but the context provided does not contain information about the total electricity use in the laundry room for building id 5 for the month of August for every year.",
    ),
];

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn advisor(data: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_advisor"));
    cmd.arg("--data-dir").arg(data);
    for var in ["ADVISOR_CONFIG", "ADVISOR_DATA_DIR", "ADVISOR_WORKERS", "ADVISOR_PSEUDONYM_KEY"] {
        cmd.env_remove(var);
    }
    cmd
}

fn output(cmd: &mut Command) -> Result<Output, String> {
    cmd.output().map_err(|e| format!("cannot run advisor: {e}"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config_for(data: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: data.to_path_buf(),
        ..ServiceConfig::default()
    }
}

/// A data directory with the shipped corpus and building data.
fn ingested_dir() -> Result<tempfile::TempDir, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ingest(
        &config_for(dir.path()),
        &IngestArgs {
            corpus: Some(fixtures().join("corpus.jsonl")),
            buildings: Some(fixtures().join("buildings")),
        },
    )
    .map_err(|e| format!("ingest failed: {e:#}"))?;
    Ok(dir)
}

fn fixture_pipeline(dir: &Path) -> Result<Arc<RagPipeline>, String> {
    advisor_cli::runtime::pipeline(&config_for(dir)).map_err(|e| format!("{e:#}"))
}

// ---------------------------------------------------------------------------

fn table1_reproduction() -> Check {
    let dir = ingested_dir()?;
    let started = Instant::now();
    let mut answers = Vec::new();
    for (question, _) in TABLE1 {
        let o = output(advisor(dir.path()).args(["--json", "ask", question]))?;
        ensure!(o.status.success(), "ask exited with {:?}", o.status.code());
        let answer: Answer = serde_json::from_str(stdout(&o).trim()).map_err(|e| e.to_string())?;
        answers.push(answer);
    }
    let elapsed = started.elapsed();
    for ((question, expected), answer) in TABLE1.iter().zip(&answers) {
        ensure!(answer.text.contains(expected), "{question:?} -> {:?}", answer.text);
    }
    ensure!(answers[2].is_refusal(), "third answer is not a refusal");
    ensure!(
        answers[2].text == refusal_text("the total electricity use in the laundry room for building id 5 for the month of August for every year"),
        "third answer does not follow the refusal template"
    );
    let verdicts: Vec<bool> = TABLE1
        .iter()
        .zip(&answers)
        .map(|((_, reference), a)| {
            score_numeric(reference, &a.text, DEFAULT_TOLERANCE, ScoringMode::Strict)
                .map(|v| v.correct)
                .unwrap_or(false)
        })
        .collect();
    ensure!(verdicts == [true, true, false], "strict verdicts {verdicts:?}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("3/3 answers match, verdicts Correct/Correct/Incorrect, {} ms", elapsed.as_millis()))
}

fn fig3_category_counts() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("reports");
    let o = output(
        advisor(dir.path())
            .arg("eval")
            .arg(fixtures().join("eval/text_pairs.csv"))
            .arg("--out")
            .arg(&out),
    )?;
    ensure!(o.status.success(), "eval exited with {:?}", o.status.code());
    let text = fs::read_to_string(out.join("category_report.csv")).map_err(|e| e.to_string())?;
    let counts: BTreeMap<String, usize> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.rsplit_once(','))
        .map(|(k, v)| (k.to_string(), v.parse().unwrap_or(usize::MAX)))
        .collect();
    let mut expected: BTreeMap<String, usize> = [
        ("Heating", 10),
        ("Control and regulation", 1),
        ("Household electricity", 2),
        ("Electricity contract", 2),
        ("Appliances", 5),
        ("Operational electricity", 5),
        ("Ventilation", 5),
        ("Tap water heating", 5),
        ("Solar cells", 5),
        ("Property electricity", 5),
        ("Definitions", 5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    expected.insert("Total".into(), 50);
    ensure!(counts == expected, "category counts {counts:?}");
    Ok("11 categories exact, total 50".into())
}

/// Bucket membership computed independently: the number of edges at or
/// below the score.
fn oracle_bucket(score: f64) -> usize {
    [0.2, 0.4, 0.6, 0.8].iter().filter(|&&e| score >= e).count()
}

fn constructed_scores(target: [usize; BUCKET_COUNT], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut scores = Vec::new();
    for (b, &n) in target.iter().enumerate() {
        let lo = b as f64 * 0.2;
        for i in 0..n {
            let s = match i {
                0 => lo,
                1 if b == BUCKET_COUNT - 1 => 1.0,
                _ => lo + rng.gen::<f64>() * 0.2 * 0.999_999,
            };
            scores.push(s);
        }
    }
    scores.shuffle(rng);
    scores
}

fn histogram_mechanics() -> Check {
    let targets = [[4, 2, 3, 0, 41], [0, 1, 0, 2, 47]];
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for target in targets {
            let scores = constructed_scores(target, &mut rng);
            ensure!(scores.len() == 50, "constructed {} scores", scores.len());
            let mut oracle = [0usize; BUCKET_COUNT];
            for &s in &scores {
                oracle[oracle_bucket(s)] += 1;
            }
            ensure!(oracle == target, "seed {seed}: construction broken {oracle:?}");
            let got = bucket_scores(&scores).map_err(|e| e.to_string())?;
            ensure!(got == target, "seed {seed}: {got:?} != {target:?}");
            ensure!(got.iter().sum::<usize>() == 50, "sum {}", got.iter().sum::<usize>());
        }
    }
    // The text fixture itself lands on the same Jaccard distribution.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let o = output(
        advisor(dir.path())
            .args(["--json", "eval"])
            .arg(fixtures().join("eval/text_pairs.csv"))
            .arg("--out")
            .arg(dir.path().join("r")),
    )?;
    let outcome: serde_json::Value = serde_json::from_str(stdout(&o).trim()).map_err(|e| e.to_string())?;
    let jaccard_hist: Vec<usize> = serde_json::from_value(outcome["similarity"]["jaccard_histogram"].clone())
        .map_err(|e| e.to_string())?;
    ensure!(jaccard_hist == [4, 2, 3, 0, 41], "fixture jaccard histogram {jaccard_hist:?}");
    Ok(format!(
        "[4,2,3,0,41] and [0,1,0,2,47] over {SEEDS} seeds; fixture Jaccard histogram {jaccard_hist:?}"
    ))
}

const VOCAB: &[&str] = &[
    "heat", "pump", "Radiator", "valve,", "district", "heating.", "solar", "cells", "roof", "kWh/m²", "EUI", "the",
    "a", "of", "ventilation", "filter", "(FTX)", "apartment", "board", "energy!", "class", "x-ray", "2023", "30.00",
    "-", "...", "Ä", "über", "laundry", "hot", "water",
];

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        let trimmed = lower.trim_matches(|c: char| c.is_ascii_punctuation());
        if !trimmed.is_empty() && !out.iter().any(|t| t == trimmed) {
            out.push(trimmed.to_string());
        }
    }
    out
}

fn oracle_jaccard(a: &str, b: &str) -> Option<f64> {
    let (ta, tb) = (oracle_tokens(a), oracle_tokens(b));
    let inter = ta.iter().filter(|t| tb.contains(t)).count();
    let union = ta.len() + tb.len() - inter;
    (union > 0).then(|| inter as f64 / union as f64)
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sentence = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.gen_range(1..12);
        (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    for i in 0..200 {
        let (a, b) = (sentence(&mut rng), sentence(&mut rng));
        let expected = oracle_jaccard(&a, &b);
        match (jaccard(&a, &b), expected) {
            (Ok(got), Some(want)) => ensure!(got == want, "pair {i} {a:?} / {b:?}: {got} != {want}"),
            (Err(Error::UndefinedInput(_)), None) => {}
            (got, want) => return Err(format!("pair {i} {a:?} / {b:?}: {got:?} vs {want:?}")),
        }
    }
    let mut worst = 0.0f64;
    for i in 0..200 {
        let dims = rng.gen_range(2..300);
        let a: Vec<f64> = (0..dims).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..dims).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let got = cosine_similarity(&a, &b).map_err(|e| e.to_string())?;
        let err = (got - oracle_cosine(&a, &b)).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-9, "vector pair {i}: error {err:e}");
        let own = cosine_similarity(&a, &a).map_err(|e| e.to_string())?;
        ensure!((own - 1.0).abs() <= 1e-9, "self-similarity {own}");
    }
    Ok(format!("200 Jaccard pairs exact, 200 cosine pairs max error {worst:.1e}"))
}

fn retrieval_equivalence() -> Check {
    const DIMS: usize = 64;
    let mut slowest = Duration::ZERO;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let index = VectorIndex::new(DIMS);
        let mut stored: Vec<(String, Vec<f64>)> = Vec::new();
        for n in 0..1000 {
            let v: Vec<f64> = (0..DIMS).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let id = format!("doc-{:04}#{}", n / 3, n % 3);
            index
                .upsert(IndexEntry {
                    chunk_id: id.clone(),
                    vector: EmbeddingVector::new(v.clone()).map_err(|e| e.to_string())?,
                })
                .map_err(|e| e.to_string())?;
            stored.push((id, v));
        }
        for _ in 0..5 {
            let q: Vec<f64> = (0..DIMS).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut scan: Vec<(f64, &str)> = stored.iter().map(|(id, v)| (oracle_cosine(&q, v), id.as_str())).collect();
            scan.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1)));
            let query = EmbeddingVector::new(q.clone()).map_err(|e| e.to_string())?;
            for k in [1usize, 5, 10] {
                let started = Instant::now();
                let hits = index.top_k(&query, k).map_err(|e| e.to_string())?;
                let elapsed = started.elapsed();
                slowest = slowest.max(elapsed);
                ensure!(elapsed < Duration::from_millis(50), "seed {seed} k={k}: {elapsed:?}");
                ensure!(hits.len() == k, "seed {seed} k={k}: {} hits", hits.len());
                for (hit, (score, id)) in hits.iter().zip(&scan) {
                    ensure!(hit.chunk_id == *id, "seed {seed} k={k}: {} != {id}", hit.chunk_id);
                    ensure!((hit.score - score).abs() <= 1e-12, "seed {seed} k={k}: score drift");
                }
            }
        }
    }
    Ok(format!("k in {{1,5,10}}, 1000 chunks, {SEEDS} seeds, slowest query {} us", slowest.as_micros()))
}

fn job(n: usize) -> NewJob {
    NewJob {
        query_id: format!("job-{n:03}"),
        channel: Channel::Cli,
        question: format!("question {n}"),
        conversation_id: None,
    }
}

fn wait_until_idle(queue: &JobQueue, limit: Duration) -> bool {
    let until = Instant::now() + limit;
    while Instant::now() < until {
        if queue.pending_count() == 0 {
            return true;
        }
        thread::sleep(Duration::from_millis(5));
    }
    false
}

fn queue_ordering() -> Check {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let queue = Arc::new(JobQueue::in_memory(QueueOptions::default()));
        let delays: Arc<Vec<u64>> = Arc::new((0..100).map(|_| rng.gen_range(0..200)).collect());
        for n in 0..100 {
            queue.enqueue(job(n)).map_err(|e| e.to_string())?;
        }
        let handler: Handler = {
            let delays = Arc::clone(&delays);
            Arc::new(move |j| {
                let n: usize = j.query_id[4..].parse().unwrap();
                thread::sleep(Duration::from_micros(delays[n]));
                Ok(Answer::structured(j.query_id.clone(), j.question.clone()))
            })
        };
        let pool = WorkerPool::start(Arc::clone(&queue), WorkerPoolConfig::default(), handler).map_err(|e| e.to_string())?;
        let idle = wait_until_idle(&queue, Duration::from_secs(10));
        pool.shutdown();
        ensure!(idle, "seed {seed}: single worker did not finish");
        let expected: Vec<String> = (0..100).map(|n| format!("job-{n:03}")).collect();
        ensure!(queue.completion_order() == expected, "seed {seed}: completion order differs");
    }

    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let queue = Arc::new(JobQueue::in_memory(QueueOptions::default()));
        for n in 0..100 {
            queue.enqueue(job(n)).map_err(|e| e.to_string())?;
        }
        let calls: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
        let delay = rng.gen_range(0..100);
        let handler: Handler = {
            let calls = Arc::clone(&calls);
            Arc::new(move |j| {
                *calls.lock().unwrap().entry(j.query_id.clone()).or_default() += 1;
                thread::sleep(Duration::from_micros(delay));
                Ok(Answer::structured(j.query_id.clone(), j.question.clone()))
            })
        };
        let pool = WorkerPool::start(
            Arc::clone(&queue),
            WorkerPoolConfig {
                worker_count: 3,
                max_retries: 1,
            },
            handler,
        )
        .map_err(|e| e.to_string())?;
        let idle = wait_until_idle(&queue, Duration::from_secs(10));
        pool.shutdown();
        ensure!(idle, "seed {seed}: pool did not finish");
        let calls = calls.lock().unwrap();
        ensure!(calls.len() == 100 && calls.values().all(|&c| c == 1), "seed {seed}: a job ran twice or never");
        let done: BTreeSet<String> = queue.completion_order().into_iter().collect();
        ensure!(done.len() == 100 && queue.completion_order().len() == 100, "seed {seed}: duplicate results");
    }

    let mut redelivered = 0;
    for seed in 0..SEEDS {
        redelivered += crash_injection(seed)?;
    }
    Ok(format!(
        "FIFO over {SEEDS} seeds, 3 workers exactly once, crash injection lost nothing ({redelivered} redeliveries)"
    ))
}

/// Runs a durable queue through several simulated process lifetimes with
/// failing handlers, abandoned leases and abrupt restarts. Returns how many
/// redeliveries happened.
fn crash_injection(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = QueueOptions {
        capacity: 1000,
        visibility_timeout: Duration::from_millis(40),
    };
    const JOBS: usize = 40;
    {
        let q = JobQueue::open(dir.path(), opts).map_err(|e| e.to_string())?;
        for n in 0..JOBS {
            q.enqueue(job(n)).map_err(|e| e.to_string())?;
        }
    }
    let fail_rate = 0.15;
    for lifetime in 0..3 {
        let queue = Arc::new(JobQueue::open(dir.path(), opts).map_err(|e| e.to_string())?);
        // A worker that takes jobs and dies before finishing them.
        for _ in 0..rng.gen_range(0..4) {
            let _ = queue.dequeue("doomed", Duration::ZERO);
        }
        let handler_seed = rng.gen::<u64>();
        let counter = Arc::new(AtomicUsize::new(0));
        let handler: Handler = Arc::new(move |j| {
            let n = counter.fetch_add(1, Ordering::SeqCst) as u64;
            let mut r = ChaCha8Rng::seed_from_u64(handler_seed ^ n);
            let roll: f64 = r.gen();
            if roll < fail_rate / 2.0 {
                panic!("injected panic on {}", j.query_id);
            }
            if roll < fail_rate {
                return Err(Error::Provider {
                    message: "injected failure".into(),
                    retryable: true,
                });
            }
            Ok(Answer::structured(j.query_id.clone(), "ok".into()))
        });
        let pool = WorkerPool::start(
            Arc::clone(&queue),
            WorkerPoolConfig {
                worker_count: 2,
                max_retries: 1,
            },
            handler,
        )
        .map_err(|e| e.to_string())?;
        // The process is killed after a random slice of work, except the last.
        if lifetime < 2 {
            thread::sleep(Duration::from_millis(rng.gen_range(1..30)));
        } else {
            wait_until_idle(&queue, Duration::from_secs(10));
        }
        pool.shutdown();
    }
    let queue = JobQueue::open(dir.path(), opts).map_err(|e| e.to_string())?;
    for n in 0..JOBS {
        let id = format!("job-{n:03}");
        match queue.get_result(&id).map_err(|e| e.to_string())? {
            JobStatus::Completed(_) | JobStatus::DeadLetter { .. } => {}
            JobStatus::Pending => return Err(format!("seed {seed}: {id} neither completed nor dead-lettered")),
        }
    }
    let log = fs::read_to_string(dir.path().join(QUEUE_LOG)).map_err(|e| e.to_string())?;
    let mut completions: HashMap<String, usize> = HashMap::new();
    let mut redelivered = 0;
    for line in log.lines() {
        let event: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        match event["event"].as_str() {
            Some("completed") => {
                *completions
                    .entry(event["result"]["query_id"].as_str().unwrap_or_default().to_string())
                    .or_default() += 1
            }
            Some("delivered") if event["attempt"].as_u64() > Some(1) => redelivered += 1,
            _ => {}
        }
    }
    ensure!(completions.values().all(|&c| c == 1), "seed {seed}: a job has two stored results");
    Ok(redelivered)
}

fn digit_runs(text: &str) -> BTreeSet<String> {
    let mut runs = BTreeSet::new();
    let mut cur = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() {
            cur.push(c);
        } else if !cur.is_empty() {
            runs.insert(std::mem::take(&mut cur));
        }
    }
    runs
}

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];
const END_USES: [&str; 5] = ["hot water", "laundry room", "district heating", "household electricity", "property electricity"];

/// A question about data the knowledge base does not hold. Off-corpus
/// questions use only words whose embedding buckets no indexed chunk uses,
/// so the mock embedder cannot match them by hash collision.
fn missing_data_question(rng: &mut ChaCha8Rng, used_buckets: &BTreeSet<usize>) -> String {
    let end_use = END_USES.choose(rng).unwrap();
    let month = MONTHS.choose(rng).unwrap();
    match rng.gen_range(0..9) {
        0 => {
            let id = rng.gen_range(12..5000);
            let field = ["normal household eui", "deduction in household heat electricity", "energy class"]
                .choose(rng)
                .unwrap();
            format!("What is the {field} for building id {id}?")
        }
        1 => format!("What is the deduction in household heat electricity for building id {}?", [3, 7, 10].choose(rng).unwrap()),
        2 => format!("What is the normal household eui for building id {}?", [4, 10].choose(rng).unwrap()),
        3 => "What is the energy class for building id 8?".to_string(),
        4 => format!("What was the {end_use} use for building id 10 in {month} {}?", rng.gen_range(2022..2024)),
        5 => format!("What was the {end_use} use for building id 4 in {month} 2022?"),
        6 => format!(
            "What was the {end_use} use for building id {} in {month} {}?",
            rng.gen_range(2..12),
            [2015, 2019, 2020, 2021, 2024, 2025, 2030].choose(rng).unwrap()
        ),
        7 => format!(
            "What is the total {end_use} use for building id {} {}?",
            rng.gen_range(2..12),
            ["for every year", "in 2023", "across all years", "between March and May 2023", "for the month of August for every year"]
                .choose(rng)
                .unwrap()
        ),
        _ => {
            let syllables = ["zor", "blax", "quim", "thu", "vend", "rap", "glo", "mek", "pliv", "sna"];
            let embedder = HashEmbedder::default();
            let mut word = || loop {
                let w: String = (0..rng.gen_range(2..4)).map(|_| *syllables.choose(rng).unwrap()).collect();
                if !used_buckets.contains(&embedder.bucket(&w)) {
                    return w;
                }
            };
            let mut q = format!("{} {} {}?", word(), word(), word());
            q[..1].make_ascii_uppercase();
            q
        }
    }
}

fn no_speculation_fuzz() -> Check {
    let dir = ingested_dir()?;
    let pipeline = fixture_pipeline(dir.path())?;
    let kb = pipeline.knowledge_base();
    let embedder = HashEmbedder::default();
    let used_buckets: BTreeSet<usize> = pipeline
        .index()
        .chunk_ids()
        .iter()
        .filter_map(|id| kb.chunk(id))
        .flat_map(|c| words(&c.text).map(|w| embedder.bucket(&w)).collect::<Vec<_>>())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut seen = BTreeSet::new();
    for i in 0..200 {
        let q = missing_data_question(&mut rng, &used_buckets);
        seen.insert(q.clone());
        let a = pipeline.answer_query(&format!("fuzz-{i}"), &q).map_err(|e| e.to_string())?;
        ensure!(a.is_refusal(), "{q:?} answered: {:?}", a.text);
        let invented: Vec<String> = digit_runs(&a.text).difference(&digit_runs(&q)).cloned().collect();
        ensure!(invented.is_empty(), "{q:?}: refusal introduced {invented:?}");
    }
    Ok(format!("200 questions ({} distinct) refused, no new digit sequences", seen.len()))
}

fn numeric_accuracy() -> Check {
    let dir = ingested_dir()?;
    let started = Instant::now();
    let o = output(
        advisor(dir.path())
            .args(["--json", "eval"])
            .arg(fixtures().join("eval/numeric_pairs.csv"))
            .args(["--mode", "strict"]),
    )?;
    let elapsed = started.elapsed();
    ensure!(o.status.success(), "eval exited with {:?}", o.status.code());
    let outcome: serde_json::Value = serde_json::from_str(stdout(&o).trim()).map_err(|e| e.to_string())?;
    let total = outcome["numeric"]["total"].as_u64().unwrap_or(0);
    let accuracy = outcome["numeric"]["accuracy"].as_f64().unwrap_or(0.0);
    ensure!(total == 10, "{total} numeric questions scored");
    ensure!(accuracy >= 0.8, "strict accuracy {accuracy}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("strict accuracy {accuracy:.2} on {total} questions, {} ms", elapsed.as_millis()))
}

struct Server {
    child: Child,
}

impl Server {
    fn start(config: &Path) -> Result<(Self, String), String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_advisor"))
            .arg("--config")
            .arg(config)
            .args(["serve", "--listen", "127.0.0.1:0"])
            .env_remove("ADVISOR_DATA_DIR")
            .env_remove("ADVISOR_WORKERS")
            .env("ADVISOR_PSEUDONYM_KEY", PSEUDONYM_KEY)
            .env("RUST_LOG", "error")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let first = lines.next().and_then(Result::ok).ok_or("serve printed nothing")?;
        let addr = first.rsplit(' ').next().unwrap_or_default().to_string();
        thread::spawn(move || for _ in lines {});
        Ok((Self { child }, addr))
    }

    fn stop(mut self) -> Result<(), String> {
        Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .map_err(|e| e.to_string())?;
        let status = self.child.wait().map_err(|e| e.to_string())?;
        ensure!(status.success(), "serve exited with {:?}", status.code());
        Ok(())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

fn wait_for(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let until = Instant::now() + limit;
    while Instant::now() < until {
        if cond() {
            return true;
        }
        thread::sleep(Duration::from_millis(50));
    }
    false
}

fn eml_count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .filter(|e| e.path().extension().is_some_and(|x| x == "eml"))
                .count()
        })
        .unwrap_or(0)
}

/// Everything the full run leaves behind, shared by the email and privacy checks.
struct EndToEnd {
    _dir: Option<tempfile::TempDir>,
    data: PathBuf,
    outcome: Result<String, String>,
    addresses: Vec<String>,
}

fn end_to_end() -> EndToEnd {
    let dir = match ingested_dir() {
        Ok(dir) => dir,
        Err(e) => {
            return EndToEnd {
                _dir: None,
                data: PathBuf::new(),
                outcome: Err(e),
                addresses: Vec::new(),
            }
        }
    };
    let data = dir.path().to_path_buf();
    let mut addresses: Vec<String> = Vec::new();
    let outcome = (|| -> Check {
        let inbox = data.join("mail/inbox");
        let outbox = data.join("mail/outbox");
        fs::create_dir_all(&inbox).map_err(|e| e.to_string())?;
        for entry in fs::read_dir(fixtures().join("mail/inbox")).map_err(|e| e.to_string())? {
            let entry = entry.map_err(|e| e.to_string())?;
            let text = fs::read_to_string(entry.path()).map_err(|e| e.to_string())?;
            if let Some(from) = text.lines().find_map(|l| l.strip_prefix("From:")) {
                let addr = from.trim().rsplit(['<', ' ']).next().unwrap_or("").trim_end_matches('>');
                addresses.push(addr.to_string());
            }
            fs::write(inbox.join(entry.file_name()), text).map_err(|e| e.to_string())?;
        }
        let config = data.join("advisor.toml");
        fs::write(&config, "data_dir = \".\"\npoll_interval_secs = 1\nworker_count = 2\n").map_err(|e| e.to_string())?;
        let (server, addr) = Server::start(&config)?;

        ensure!(
            wait_for(Duration::from_secs(20), || eml_count(&outbox) >= 5),
            "only {} replies written",
            eml_count(&outbox)
        );
        let mut replies = Vec::new();
        for entry in fs::read_dir(&outbox).map_err(|e| e.to_string())? {
            let text = fs::read_to_string(entry.map_err(|e| e.to_string())?.path()).map_err(|e| e.to_string())?;
            replies.push(parse_outbound(&text).map_err(|e| e.to_string())?);
        }
        ensure!(replies.len() == 5, "{} outbound mails", replies.len());
        let with_footer = replies.iter().filter(|r| r.query_id().is_some()).count();
        ensure!(with_footer == 5, "{with_footer} replies carry a query-id footer");
        let eui = replies
            .iter()
            .find(|r| r.in_reply_to == "<20240311.0915.anna@brf-example.se>")
            .ok_or("no reply to the EUI question")?;
        ensure!(eui.body.contains("30.00 kWh/m²"), "EUI reply body {:?}", eui.body);
        let eui_qid = eui.query_id().unwrap().to_string();

        // A chat participant who pastes an address, then rates the answer.
        let chat_addr = "kim.svensson@brf-example.se";
        addresses.push(chat_addr.into());
        let stream = TcpStream::connect(&addr).map_err(|e| e.to_string())?;
        stream.set_read_timeout(Some(Duration::from_secs(10))).map_err(|e| e.to_string())?;
        let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
        let mut reader = BufReader::new(stream);
        let mut send_and_wait = |line: String, want: &str| -> Result<serde_json::Value, String> {
            writeln!(writer, "{line}").map_err(|e| e.to_string())?;
            loop {
                let mut buf = String::new();
                reader.read_line(&mut buf).map_err(|e| e.to_string())?;
                let env: serde_json::Value = serde_json::from_str(&buf).map_err(|e| format!("{e}: {buf:?}"))?;
                if env["type"] == want || env["type"] == "error" {
                    return Ok(env);
                }
            }
        };
        let reply = send_and_wait(
            serde_json::json!({"type": "user_message", "conversation_id": "board-chat",
                "text": format!("What is the deduction in household heat electricity for building id 11? I am {chat_addr}")})
            .to_string(),
            "agent_message",
        )?;
        ensure!(reply["type"] == "agent_message", "chat reply {reply}");
        let chat_qid = reply["query_id"].as_str().unwrap_or_default().to_string();
        let ack = send_and_wait(
            serde_json::json!({"type": "rating", "conversation_id": "board-chat", "query_id": chat_qid, "score": 4})
                .to_string(),
            "status",
        )?;
        ensure!(ack["type"] == "status", "chat rating {ack}");

        fs::copy(fixtures().join("mail/rating_reply.eml"), inbox.join("rating_reply.eml")).map_err(|e| e.to_string())?;
        let ratings_file = data.join("ratings.jsonl");
        let rating_count = || fs::read_to_string(&ratings_file).map(|t| t.lines().count()).unwrap_or(0);
        ensure!(
            wait_for(Duration::from_secs(20), || rating_count() >= 2),
            "{} ratings recorded",
            rating_count()
        );
        server.stop()?;

        let o = output(advisor(&data).args(["--json", "queue", "ratings", "ls"]))?;
        let ratings: serde_json::Value = serde_json::from_str(stdout(&o).trim()).map_err(|e| e.to_string())?;
        let email_rating = ratings
            .as_array()
            .and_then(|rs| rs.iter().find(|r| r["channel"] == "email"))
            .ok_or("email rating missing from the listing")?;
        ensure!(email_rating["query_id"] == eui_qid.as_str(), "rating linked to {}", email_rating["query_id"]);
        ensure!(email_rating["score"] == 4, "rating score {}", email_rating["score"]);
        Ok(format!(
            "5 replies with query-id footers, email rating 4 linked to {eui_qid}, chat rating linked to {chat_qid}"
        ))
    })();
    EndToEnd {
        _dir: Some(dir),
        data,
        outcome,
        addresses,
    }
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) {
    if let Ok(rd) = fs::read_dir(dir) {
        for entry in rd.filter_map(Result::ok) {
            let p = entry.path();
            if p.is_dir() {
                files_under(&p, out);
            } else {
                out.push(p);
            }
        }
    }
}

fn privacy_audit(run: &EndToEnd) -> Check {
    run.outcome.as_ref().map_err(|e| format!("end-to-end run failed: {e}"))?;
    ensure!(run.addresses.len() >= 5, "collected {} addresses", run.addresses.len());
    let mut files = Vec::new();
    files_under(&run.data.join("conversations"), &mut files);
    let conversation_count = files.len();
    ensure!(conversation_count > 0, "no conversation files persisted");
    files.push(run.data.join("ratings.jsonl"));
    files.push(run.data.join("queue").join(QUEUE_LOG));
    for path in &files {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(!text.contains('@'), "{} contains an '@'", path.display());
        for addr in &run.addresses {
            ensure!(!text.to_lowercase().contains(&addr.to_lowercase()), "{} contains {addr}", path.display());
        }
    }
    let conversations = fs::read_to_string(run.data.join("conversations/conversations.json")).map_err(|e| e.to_string())?;
    ensure!(conversations.contains("41755.50"), "chat conversation not persisted");
    Ok(format!(
        "{} files scanned ({conversation_count} conversation files), none holds an address",
        files.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let guarded = |f: &dyn Fn() -> Check| -> Check {
        panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        })
    };

    let mut results: Vec<(&str, Check)> = vec![
        ("table-1 reproduction", guarded(&table1_reproduction)),
        ("category counts (50-question fixture)", guarded(&fig3_category_counts)),
        ("histogram mechanics", guarded(&histogram_mechanics)),
        ("metric oracles", guarded(&metric_oracles)),
        ("retrieval equivalence", guarded(&retrieval_equivalence)),
        ("queue ordering and delivery", guarded(&queue_ordering)),
        ("no-speculation fuzz", guarded(&no_speculation_fuzz)),
        ("numeric accuracy", guarded(&numeric_accuracy)),
    ];
    let run = end_to_end();
    results.push(("email round-trip", run.outcome.clone()));
    results.push(("privacy audit", guarded(&|| privacy_audit(&run))));

    let mut failed = 0;
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
