//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nextterm::encoder::{encode_term, QueryCombo, TermStep, TrainExample};
use nextterm::metrics::ScoredExample;
use nextterm::nnet::{bce_loss, predict, Dims, ModelParams};
use nextterm::transcript::GradeCategory;
use rand::seq::SliceRandom;
use rand::Rng;

/// All-pairs AUC with ties worth one half. Exact rational arithmetic in half units.
pub fn brute_force_auc(scored: &[ScoredExample]) -> Option<f64> {
    let mut half_units = 0u64;
    let mut pairs = 0u64;
    for p in scored.iter().filter(|s| s.label) {
        for n in scored.iter().filter(|s| !s.label) {
            pairs += 1;
            half_units += match p.score.partial_cmp(&n.score).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    (pairs > 0).then(|| half_units as f64 / (2 * pairs) as f64)
}

pub fn random_term(rng: &mut impl Rng, catalog: usize) -> TermStep {
    let mut courses: Vec<usize> = (0..catalog).collect();
    courses.shuffle(rng);
    let n = rng.gen_range(1..=catalog);
    let entries: Vec<(usize, GradeCategory)> = courses[..n]
        .iter()
        .map(|&c| (c, GradeCategory::from_index(rng.gen_range(0..GradeCategory::COUNT)).unwrap()))
        .collect();
    encode_term(&entries, catalog).unwrap()
}

pub fn random_history(rng: &mut impl Rng, catalog: usize, len: usize) -> Vec<TermStep> {
    (0..len).map(|_| random_term(rng, catalog)).collect()
}

pub fn random_query(rng: &mut impl Rng, catalog: usize) -> QueryCombo {
    let mut courses: Vec<usize> = (0..catalog).collect();
    courses.shuffle(rng);
    let n = rng.gen_range(1..=catalog);
    QueryCombo::new(catalog, courses[..n].iter().copied()).unwrap()
}

pub fn random_example(rng: &mut impl Rng, catalog: usize, len: usize) -> TrainExample {
    TrainExample {
        student_id: format!("S{}", rng.gen::<u32>()),
        history: random_history(rng, catalog, len),
        query: random_query(rng, catalog),
        label: rng.gen(),
    }
}

/// Model with every tensor, biases included, drawn from U(-scale, scale).
pub fn random_model(rng: &mut impl Rng, dims: Dims, scale: f64) -> ModelParams {
    let mut params = ModelParams::zeros(dims);
    for (_, tensor) in params.tensors_mut() {
        for v in tensor.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
    params
}

pub fn loss(params: &ModelParams, example: &TrainExample) -> f64 {
    bce_loss(predict(params, &example.history, &example.query).unwrap(), example.label)
}

/// Central difference of the loss along one coordinate of a named tensor.
pub fn central_difference(params: &ModelParams, example: &TrainExample, tensor: &str, index: usize, step: f64) -> f64 {
    let shifted = |delta: f64| {
        let mut p = params.clone();
        let (_, m) = p.tensors_mut().into_iter().find(|(n, _)| n == tensor).unwrap();
        m.data_mut()[index] += delta;
        loss(&p, example)
    };
    (shifted(step) - shifted(-step)) / (2.0 * step)
}

/// Relative error with an absolute floor, as used for gradient checks.
pub fn gradient_mismatch(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Untrained checkpoint over a 40-course catalog `C000..C039`, with made-up
/// failure rates.
pub fn fixture_checkpoint(seed: u64) -> nextterm::nnet::Checkpoint {
    use nextterm::nnet::{Checkpoint, CheckpointMeta};
    use nextterm::synthdata::course_id;
    use nextterm::transcript::CourseCatalog;
    let catalog = CourseCatalog::from_courses((0..40).map(course_id)).unwrap();
    let meta = CheckpointMeta {
        failure_rates: (0..40).map(|i| (course_id(i), i as f64 / 100.0)).collect(),
        split_seed: Some(seed),
        validation_fraction: Some(0.2),
    };
    Checkpoint::new(ModelParams::init(Dims::with_catalog(40), seed).unwrap(), catalog, meta).unwrap()
}

/// Starts the service on an ephemeral port and returns its base URL.
pub async fn spawn_service(planner: nextterm::planner::Planner, cors_origin: Option<&str>) -> String {
    use nextterm::planner::{serve, ServiceConfig};
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let config = ServiceConfig {
        cors_origin: cors_origin.map(str::to_owned),
    };
    let planner = std::sync::Arc::new(planner);
    tokio::spawn(async move { serve(listener, planner, &config).await.unwrap() });
    format!("http://{addr}")
}

/// A history of `terms` periods over the `C000..` catalog, grades varied.
pub fn plan_history(terms: usize) -> serde_json::Value {
    let periods: Vec<serde_json::Value> = (0..terms)
        .map(|t| {
            let grades: Vec<serde_json::Value> = (0..4)
                .map(|k| {
                    let course = nextterm::synthdata::course_id((t * 3 + k) % 40);
                    let grade = match (t + k) % 5 {
                        0 => serde_json::json!("R"),
                        g => serde_json::json!(4 * g),
                    };
                    serde_json::json!({"course": course, "grade": grade})
                })
                .collect();
            serde_json::json!({"period": nextterm::synthdata::period_key(t), "grades": grades})
        })
        .collect();
    serde_json::Value::Array(periods)
}
