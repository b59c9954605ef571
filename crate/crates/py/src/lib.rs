//! Thin Python bindings over the core library: grammar round-trips,
//! reasoning-block consistency, grouped matching, box geometry, and the
//! aggregation numerics (JSON in/out for the tensor-shaped pieces).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use triref::aggregation::{aggregate, fuse, prompt_to_mask, FeatureGrid, GridLayout, PeConfig, VisualPrompt};
use triref::geometry::Box;
use triref::matching::{self, CostWeights};
use triref::metrics::{EmbeddingProvider, HashedNgramEmbedder};
use triref::{corpus, trp, vdcot};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn boxed(t: (f64, f64, f64, f64)) -> PyResult<Box> {
    Box::new(t.0, t.1, t.2, t.3).map_err(value_err)
}

/// Canonical re-emission of an answer; raises ValueError on parse errors.
#[pyfunction]
fn canonicalize(answer: &str) -> PyResult<String> {
    trp::canonicalize(answer).map_err(value_err)
}

/// Triplet summaries: (phrase, [([units], ref_count)]) per triplet.
#[pyfunction]
fn parse_answer(answer: &str) -> PyResult<Vec<(String, Vec<(Vec<String>, usize)>)>> {
    let ast = trp::parse_answer(answer).map_err(value_err)?;
    Ok(ast
        .triplets()
        .map(|t| {
            (
                t.phrase.text(),
                t.bindings
                    .iter()
                    .map(|b| (b.units.clone(), b.refs.len()))
                    .collect(),
            )
        })
        .collect())
}

/// Structural violations of a parseable answer, as readable strings.
#[pyfunction]
fn validate_answer(answer: &str) -> PyResult<Vec<String>> {
    let ast = trp::parse_answer(answer).map_err(value_err)?;
    Ok(trp::validate_triplets(&ast)
        .into_iter()
        .map(|v| format!("{v:?}"))
        .collect())
}

/// (decode, [(name, [units], num)]) of the single task block.
#[pyfunction]
fn parse_cot(source: &str) -> PyResult<(bool, Vec<(String, Vec<String>, usize)>)> {
    let block = vdcot::parse_cot(source).map_err(value_err)?;
    Ok((
        block.decode,
        block
            .entries
            .into_iter()
            .map(|e| (e.name, e.units.into_iter().collect(), e.num))
            .collect(),
    ))
}

/// Consistency violations between a task block and an answer.
#[pyfunction]
fn check_consistency(cot: &str, answer: &str) -> PyResult<Vec<String>> {
    let block = vdcot::parse_cot(cot).map_err(value_err)?;
    let ast = trp::parse_answer(answer).map_err(value_err)?;
    Ok(vdcot::check_consistency(&block, &ast)
        .into_iter()
        .map(|v| format!("{v:?}"))
        .collect())
}

/// Optimal assignment on one cost matrix; `valid[i][j] = False` forbids
/// a pair. Returns (pairs, total_cost).
#[pyfunction]
#[pyo3(signature = (cost, valid=None))]
fn hungarian(
    cost: Vec<Vec<f64>>,
    valid: Option<Vec<Vec<bool>>>,
) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let a = matching::hungarian_assign(&cost, valid.as_deref()).map_err(value_err)?;
    Ok((a.pairs, a.total_cost))
}

/// Pairwise box matching cost with the default loss weights.
#[pyfunction]
fn box_match_cost(p: (f64, f64, f64, f64), t: (f64, f64, f64, f64)) -> PyResult<f64> {
    Ok(matching::box_pair_cost(
        &boxed(p)?,
        &boxed(t)?,
        &CostWeights::default(),
    ))
}

#[pyfunction]
fn box_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    Ok(triref::geometry::box_iou(&boxed(a)?, &boxed(b)?))
}

#[pyfunction]
fn box_giou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    Ok(triref::geometry::box_giou(&boxed(a)?, &boxed(b)?))
}

/// Aggregate features under a visual prompt and fuse the positional
/// encoding; both arguments and the result are JSON documents matching
/// the CLI's `aggregate-demo` formats.
#[pyfunction]
fn aggregate_fused(features_json: &str, prompt_json: &str) -> PyResult<String> {
    #[derive(serde::Deserialize)]
    struct Spec {
        prompt: VisualPrompt,
        layout: Option<GridLayout>,
        queries: Option<usize>,
        alpha: Option<f64>,
    }
    let x: FeatureGrid = serde_json::from_str(features_json).map_err(value_err)?;
    let spec: Spec = serde_json::from_str(prompt_json).map_err(value_err)?;
    let layout = spec.layout.unwrap_or_else(GridLayout::default_vpt);
    let cfg = PeConfig {
        alpha: spec.alpha.unwrap_or(1.0),
        ..PeConfig::default()
    };
    let m = prompt_to_mask(&spec.prompt, &layout, spec.queries.unwrap_or(1)).map_err(value_err)?;
    let v = aggregate(&x, &m).map_err(value_err)?;
    let fused = fuse(&v, &cfg);
    let out = serde_json::json!({
        "queries": v.queries,
        "patches": v.patches,
        "channels": v.channels,
        "v": v.data,
        "fused": fused.data,
    });
    Ok(out.to_string())
}

/// Deterministic hashed n-gram text embedding (the test provider).
#[pyfunction]
fn embed_text(text: &str) -> PyResult<Vec<f64>> {
    HashedNgramEmbedder::default().embed(text).map_err(value_err)
}

/// Build a corpus JSON document from annotations JSON with the default
/// template bank. Returns the corpus as a JSON string.
#[pyfunction]
fn build_corpus(annotations_json: &str, task: &str, seed: u64) -> PyResult<String> {
    let anns: Vec<corpus::Annotation> =
        serde_json::from_str(annotations_json).map_err(value_err)?;
    let task: corpus::TaskKind = task.parse().map_err(value_err)?;
    let bank = corpus::TemplateBank::default_bank();
    let built = corpus::build_corpus(&anns, task, &bank, seed).map_err(value_err)?;
    Ok(built.to_json())
}

/// Validate a corpus JSON document; returns "sample: message" strings.
#[pyfunction]
fn validate_corpus(corpus_json: &str) -> PyResult<Vec<String>> {
    let parsed = corpus::Corpus::from_json(corpus_json).map_err(value_err)?;
    Ok(corpus::validate_corpus(&parsed)
        .violations
        .into_iter()
        .map(|v| format!("{}: {}", v.sample, v.message))
        .collect())
}

#[pymodule]
fn triref_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(parse_answer, m)?)?;
    m.add_function(wrap_pyfunction!(validate_answer, m)?)?;
    m.add_function(wrap_pyfunction!(parse_cot, m)?)?;
    m.add_function(wrap_pyfunction!(check_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(box_match_cost, m)?)?;
    m.add_function(wrap_pyfunction!(box_iou, m)?)?;
    m.add_function(wrap_pyfunction!(box_giou, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_fused, m)?)?;
    m.add_function(wrap_pyfunction!(embed_text, m)?)?;
    m.add_function(wrap_pyfunction!(build_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(validate_corpus, m)?)?;
    Ok(())
}
