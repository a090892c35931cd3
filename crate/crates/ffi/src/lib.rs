//! C ABI over the gdk-core primitives.
//!
//! Every function returns a [`GdkStatus`]; results go through out-pointers.
//! On failure the message is available from [`gdk_last_error_message`] on the
//! calling thread. Strings returned through `char **` are owned by the caller
//! and released with [`gdk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gdk_core::backend::{
    beam_search, make_hash_embedder, make_toy_lm, BeamConfig, ConditionalTable, Embedder,
    HashEmbedder, ToyLm,
};
use gdk_core::corpus::{filter_by_score, read_assertions, write_assertions};
use gdk_core::eval::cohen_kappa;
use gdk_core::fusion::{attention_pool, bce_loss, AttentionPooler, NUM_ANSWERS};
use gdk_core::inference::{generate_inferences, GenerationRequest};
use gdk_core::relations::{list_relations, render_facet, render_relation, Relation};
use gdk_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GdkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Malformed = 4,
    UnknownName = 5,
    PhaseOrdering = 6,
    Backend = 7,
    Panic = 8,
}

/// Opaque toy language model.
pub struct GdkToyLm(ToyLm);

/// Opaque hashing sentence embedder.
pub struct GdkHashEmbedder(HashEmbedder);

struct Failure(GdkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::InvalidArgument(_) | Error::AblationRequiresPhase1 => GdkStatus::InvalidArgument,
            Error::UnknownFacet(_) | Error::UnknownRelation(_) | Error::NoFacetTemplate(_) => {
                GdkStatus::UnknownName
            }
            Error::PhaseOrdering(_) => GdkStatus::PhaseOrdering,
            Error::Backend(_) | Error::FrozenBackend => GdkStatus::Backend,
            _ => GdkStatus::Malformed,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(GdkStatus::Malformed, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> GdkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            GdkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(_) => {
            set_last_error(Some("panic inside gdk".into()));
            GdkStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GdkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(GdkStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn read_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Outcome {
    let slot = out_ref(out, "out")?;
    let c = CString::new(s).map_err(|e| Failure(GdkStatus::Malformed, e.to_string()))?;
    *slot = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next gdk call on the same thread.
#[no_mangle]
pub extern "C" fn gdk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
///
/// `s` must be null or a string returned by this library that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn gdk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn gdk_relation_count() -> usize {
    Relation::ALL.len()
}

/// Name of the relation at `index` in registry order.
///
/// # Safety
///
/// `out` must be a valid pointer to writable storage for one `char *`.
#[no_mangle]
pub unsafe extern "C" fn gdk_relation_name(index: usize, out: *mut *mut c_char) -> GdkStatus {
    guard(|| {
        let relations = list_relations();
        let r = relations.get(index).ok_or_else(|| {
            Failure(
                GdkStatus::InvalidArgument,
                format!("relation index {index} out of range"),
            )
        })?;
        write_string(out, r.name().to_string())
    })
}

/// # Safety
///
/// String arguments must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gdk_render_facet(
    facet: *const c_char,
    concept: *const c_char,
    country: *const c_char,
    out: *mut *mut c_char,
) -> GdkStatus {
    guard(|| {
        let text = render_facet(
            read_str(facet, "facet")?,
            read_str(concept, "concept")?,
            read_str(country, "country")?,
        )?;
        write_string(out, text)
    })
}

/// # Safety
///
/// String arguments must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gdk_render_relation(
    head: *const c_char,
    relation: *const c_char,
    tail: *const c_char,
    out: *mut *mut c_char,
) -> GdkStatus {
    guard(|| {
        let relation = Relation::from_name(read_str(relation, "relation")?)?;
        let text = render_relation(read_str(head, "head")?, relation, read_str(tail, "tail")?)?;
        write_string(out, text)
    })
}

/// Keep the JSONL assertions scoring strictly above `threshold`.
///
/// # Safety
///
/// `jsonl` must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gdk_filter_assertions(
    jsonl: *const c_char,
    threshold: f64,
    out: *mut *mut c_char,
) -> GdkStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Failure(
                GdkStatus::InvalidArgument,
                format!("threshold {threshold} is outside [0, 1]"),
            ));
        }
        let all = read_assertions(read_str(jsonl, "jsonl")?.as_bytes())?;
        let mut buf = Vec::new();
        write_assertions(&mut buf, &filter_by_score(&all, threshold))?;
        write_string(
            out,
            String::from_utf8(buf).map_err(|e| Failure(GdkStatus::InvalidUtf8, e.to_string()))?,
        )
    })
}

/// # Safety
///
/// `a` and `b` must point to `len` grades each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gdk_cohen_kappa(
    a: *const u8,
    b: *const u8,
    len: usize,
    out: *mut f64,
) -> GdkStatus {
    guard(|| {
        *out_ref(out, "out")? = cohen_kappa(read_slice(a, len, "a")?, read_slice(b, len, "b")?)?;
        Ok(())
    })
}

/// Softmax attention over `count` row-major embeddings of width `dim`.
///
/// # Safety
///
/// `embeddings` must hold `count * dim` values and `query` `dim` values.
/// `out_vector` must have room for `dim` values and `out_weights` for `count`.
#[no_mangle]
pub unsafe extern "C" fn gdk_attention_pool(
    embeddings: *const f64,
    count: usize,
    dim: usize,
    query: *const f64,
    out_vector: *mut f64,
    out_weights: *mut f64,
) -> GdkStatus {
    guard(|| {
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| Failure(GdkStatus::InvalidArgument, "count * dim overflows".into()))?;
        let flat = read_slice(embeddings, total, "embeddings")?;
        let rows: Vec<Vec<f64>> = flat.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        let pooler = AttentionPooler {
            query: read_slice(query, dim, "query")?.to_vec(),
        };
        let pooled = attention_pool(&rows, &pooler)?;
        if out_vector.is_null() {
            return Err(null("out_vector"));
        }
        if out_weights.is_null() {
            return Err(null("out_weights"));
        }
        ptr::copy_nonoverlapping(pooled.vector.as_ptr(), out_vector, pooled.vector.len());
        ptr::copy_nonoverlapping(pooled.weights.as_ptr(), out_weights, pooled.weights.len());
        Ok(())
    })
}

/// Mean per-answer binary cross-entropy over four logits.
///
/// # Safety
///
/// `scores` must point to four values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gdk_bce_loss(
    scores: *const f64,
    gold_index: usize,
    out: *mut f64,
) -> GdkStatus {
    guard(|| {
        let s = read_slice(scores, NUM_ANSWERS, "scores")?;
        let arr: [f64; NUM_ANSWERS] = s.try_into().expect("length checked");
        *out_ref(out, "out")? = bce_loss(&arr, gold_index)?;
        Ok(())
    })
}

/// Build a toy model from JSON `[[prefix_tokens, {token: prob}], ...]`.
///
/// # Safety
///
/// `table_json` must be null-terminated; `out` must be writable. The handle
/// is released with [`gdk_toy_lm_free`].
#[no_mangle]
pub unsafe extern "C" fn gdk_toy_lm_new(
    table_json: *const c_char,
    out: *mut *mut GdkToyLm,
) -> GdkStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let rows: Vec<(Vec<String>, std::collections::BTreeMap<String, f64>)> =
            serde_json::from_str(read_str(table_json, "table_json")?)?;
        let table: ConditionalTable = rows.into_iter().collect();
        *slot = Box::into_raw(Box::new(GdkToyLm(make_toy_lm(table)?)));
        Ok(())
    })
}

/// # Safety
///
/// `lm` must be null or a handle from [`gdk_toy_lm_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gdk_toy_lm_free(lm: *mut GdkToyLm) {
    if !lm.is_null() {
        drop(Box::from_raw(lm));
    }
}

/// Beam search from a whitespace-separated context; writes a JSON array of
/// `{tokens, log_prob}` best first.
///
/// # Safety
///
/// `lm` must be a live handle, `context` null-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gdk_beam_search(
    lm: *const GdkToyLm,
    context: *const c_char,
    beam_width: usize,
    max_len: usize,
    num_return: usize,
    out: *mut *mut c_char,
) -> GdkStatus {
    guard(|| {
        let lm = lm.as_ref().ok_or_else(|| null("lm"))?;
        let ctx: Vec<String> = read_str(context, "context")?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let config = BeamConfig {
            beam_width,
            max_len,
            num_return,
            length_penalty: None,
        };
        let hyps = beam_search(&lm.0, &ctx, &config)?;
        write_string(out, serde_json::to_string(&hyps)?)
    })
}

/// Per-relation inferences for a JSON generation request; writes the JSON
/// inference set.
///
/// # Safety
///
/// `lm` must be a live handle, `request_json` null-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gdk_generate_inferences(
    lm: *const GdkToyLm,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> GdkStatus {
    guard(|| {
        let lm = lm.as_ref().ok_or_else(|| null("lm"))?;
        let request: GenerationRequest =
            serde_json::from_str(read_str(request_json, "request_json")?)?;
        let set = generate_inferences(&lm.0, &request)?;
        write_string(out, serde_json::to_string(&set)?)
    })
}

/// # Safety
///
/// `out` must be writable. The handle is released with
/// [`gdk_hash_embedder_free`].
#[no_mangle]
pub unsafe extern "C" fn gdk_hash_embedder_new(
    dimension: usize,
    seed: u64,
    out: *mut *mut GdkHashEmbedder,
) -> GdkStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = Box::into_raw(Box::new(GdkHashEmbedder(make_hash_embedder(
            dimension, seed,
        )?)));
        Ok(())
    })
}

/// # Safety
///
/// `embedder` must be null or a handle from [`gdk_hash_embedder_new`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn gdk_hash_embedder_free(embedder: *mut GdkHashEmbedder) {
    if !embedder.is_null() {
        drop(Box::from_raw(embedder));
    }
}

/// Unit-norm embedding of `text` into `out`, which must hold exactly the
/// embedder's dimension.
///
/// # Safety
///
/// `embedder` must be a live handle, `text` null-terminated and `out` must
/// have room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn gdk_hash_embedder_embed(
    embedder: *const GdkHashEmbedder,
    text: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> GdkStatus {
    guard(|| {
        let e = embedder.as_ref().ok_or_else(|| null("embedder"))?;
        if out_len != e.0.dimension() {
            return Err(Failure(
                GdkStatus::InvalidArgument,
                format!("buffer of {out_len} for dimension {}", e.0.dimension()),
            ));
        }
        let v = e.0.embed(read_str(text, "text")?);
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_error_tracks_the_latest_call() {
        let mut out = 0.0;
        let grades = [0u8, 1];
        let status = unsafe { gdk_cohen_kappa(grades.as_ptr(), ptr::null(), 2, &mut out) };
        assert_eq!(status, GdkStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(gdk_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "b is null");

        let status = unsafe { gdk_cohen_kappa(grades.as_ptr(), grades.as_ptr(), 2, &mut out) };
        assert_eq!(status, GdkStatus::Ok);
        assert!(gdk_last_error_message().is_null());
        assert_eq!(out, 1.0);
    }

    #[test]
    fn core_errors_map_to_status_codes() {
        let cases = [
            (
                Error::InvalidArgument("x".into()),
                GdkStatus::InvalidArgument,
            ),
            (Error::UnknownRelation("x".into()), GdkStatus::UnknownName),
            (Error::PhaseOrdering("x".into()), GdkStatus::PhaseOrdering),
            (
                Error::at_line(3, Error::Malformed("x".into())),
                GdkStatus::Malformed,
            ),
            (
                Error::at_line(3, Error::UnknownFacet("x".into())),
                GdkStatus::UnknownName,
            ),
        ];
        for (e, status) in cases {
            assert_eq!(Failure::from(e).0, status);
        }
    }
}
