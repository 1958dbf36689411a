//! C ABI for the openmod pipeline: corpus generation, training stages, WER
//! scoring and checkpoint inspection behind opaque handles and error codes.
//!
//! Conventions:
//! - Functions return `0` on success and a non-zero `openmod_status` code on
//!   failure; `openmod_last_error` returns the failure message for the
//!   calling thread.
//! - Strings returned as `char*` are owned by the caller and must be released
//!   with `openmod_string_free`.
//! - `OpenmodCheckpoint` is opaque; release it with `openmod_checkpoint_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use openmod::corpus::{CorpusConfig, Modality, Split};
use openmod::error::Error;
use openmod::eval::{count_tunable, evaluate_split, wer};
use openmod::model::Checkpoint;
use openmod::runner::{run_generate, run_train, TrainRequest, TrainStage};
use openmod::training::{Corpus, StageConfig};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[allow(non_camel_case_types)]
pub enum openmod_status {
    OPENMOD_OK = 0,
    /// Null pointer or malformed UTF-8/JSON argument.
    OPENMOD_INVALID_ARGUMENT = 1,
    /// Filesystem or file-format failure.
    OPENMOD_IO_ERROR = 2,
    /// Configuration or contract violation (bad stage tag, empty split, ...).
    OPENMOD_VALIDATION_ERROR = 3,
    OPENMOD_INTERNAL_ERROR = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> openmod_status {
    match err {
        Error::Io { .. } | Error::Format { .. } => openmod_status::OPENMOD_IO_ERROR,
        Error::Other(_) => openmod_status::OPENMOD_INTERNAL_ERROR,
        _ => openmod_status::OPENMOD_VALIDATION_ERROR,
    }
}

fn fail(err: Error) -> openmod_status {
    let code = status_of(&err);
    set_error(err.to_string());
    code
}

fn invalid(msg: &str) -> openmod_status {
    set_error(msg.to_string());
    openmod_status::OPENMOD_INVALID_ARGUMENT
}

unsafe fn opt_str<'a>(s: *const c_char) -> Result<Option<&'a str>, openmod_status> {
    if s.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(s).to_str() {
        Ok(v) => Ok(Some(v)),
        Err(_) => Err(invalid("argument is not valid UTF-8")),
    }
}

unsafe fn req_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, openmod_status> {
    match opt_str(s)? {
        Some(v) => Ok(v),
        None => Err(invalid(&format!("{what} must not be null"))),
    }
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s)
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Library version string; static storage, do not free.
#[no_mangle]
pub extern "C" fn openmod_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or NULL. Free with
/// `openmod_string_free`.
#[no_mangle]
pub extern "C" fn openmod_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(msg) => to_c_string(msg.to_string_lossy().into_owned()),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be a pointer previously returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn openmod_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Word error rate counts for a reference/hypothesis pair.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OpenmodWerCounts {
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub reference_len: u64,
    pub wer: f64,
}

/// Score whitespace-separated word sequences. The reference must be
/// non-empty.
///
/// # Safety
/// `reference` and `hypothesis` must be valid NUL-terminated strings and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn openmod_wer(
    reference: *const c_char,
    hypothesis: *const c_char,
    out: *mut OpenmodWerCounts,
) -> openmod_status {
    if out.is_null() {
        return invalid("out must not be null");
    }
    let reference = match req_str(reference, "reference") {
        Ok(v) => v,
        Err(c) => return c,
    };
    let hypothesis = match req_str(hypothesis, "hypothesis") {
        Ok(v) => v,
        Err(c) => return c,
    };
    let r: Vec<String> = reference.split_whitespace().map(String::from).collect();
    let h: Vec<String> = hypothesis.split_whitespace().map(String::from).collect();
    match wer(&r, &h) {
        Ok(c) => {
            *out = OpenmodWerCounts {
                substitutions: c.substitutions as u64,
                deletions: c.deletions as u64,
                insertions: c.insertions as u64,
                reference_len: c.reference_len as u64,
                wer: c.wer,
            };
            openmod_status::OPENMOD_OK
        }
        Err(e) => fail(e),
    }
}

/// Generate a corpus directory. `config_json` may be NULL for the built-in
/// default corpus.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn openmod_generate_corpus(
    config_json: *const c_char,
    out_dir: *const c_char,
    force: bool,
) -> openmod_status {
    let out_dir = match req_str(out_dir, "out_dir") {
        Ok(v) => v,
        Err(c) => return c,
    };
    let config = match opt_str(config_json) {
        Ok(Some(text)) => match serde_json::from_str::<CorpusConfig>(text) {
            Ok(c) => c,
            Err(e) => return invalid(&format!("bad corpus config: {e}")),
        },
        Ok(None) => CorpusConfig::default(),
        Err(c) => return c,
    };
    match run_generate(&config, Path::new(out_dir), force, "ffi generate".into()) {
        Ok(()) => openmod_status::OPENMOD_OK,
        Err(e) => fail(e),
    }
}

/// Opaque checkpoint handle.
pub struct OpenmodCheckpoint {
    inner: Checkpoint,
}

/// Open a checkpoint directory; NULL on failure (see `openmod_last_error`).
///
/// # Safety
/// `dir` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn openmod_checkpoint_open(dir: *const c_char) -> *mut OpenmodCheckpoint {
    let dir = match req_str(dir, "dir") {
        Ok(v) => v,
        Err(_) => return ptr::null_mut(),
    };
    match Checkpoint::load(Path::new(dir)) {
        Ok(inner) => Box::into_raw(Box::new(OpenmodCheckpoint { inner })),
        Err(e) => {
            fail(e);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `handle` must be a pointer from `openmod_checkpoint_open`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn openmod_checkpoint_free(handle: *mut OpenmodCheckpoint) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Training-stage tag of the checkpoint. Free with `openmod_string_free`.
///
/// # Safety
/// `handle` must be a live checkpoint handle.
#[no_mangle]
pub unsafe extern "C" fn openmod_checkpoint_stage(handle: *const OpenmodCheckpoint) -> *mut c_char {
    if handle.is_null() {
        invalid("handle must not be null");
        return ptr::null_mut();
    }
    to_c_string((*handle).inner.stage.as_str().to_string())
}

/// Content hash covering config, freeze mask, stage and all tensors.
///
/// # Safety
/// `handle` must be a live checkpoint handle.
#[no_mangle]
pub unsafe extern "C" fn openmod_checkpoint_content_hash(
    handle: *const OpenmodCheckpoint,
) -> *mut c_char {
    if handle.is_null() {
        invalid("handle must not be null");
        return ptr::null_mut();
    }
    to_c_string((*handle).inner.content_hash())
}

/// Tunable/total scalar parameter counts under the checkpoint's freeze mask.
///
/// # Safety
/// `handle` must be a live checkpoint handle; out pointers must be valid or
/// null.
#[no_mangle]
pub unsafe extern "C" fn openmod_checkpoint_count_tunable(
    handle: *const OpenmodCheckpoint,
    tunable: *mut u64,
    total: *mut u64,
    ratio: *mut f64,
) -> openmod_status {
    if handle.is_null() {
        return invalid("handle must not be null");
    }
    let c = count_tunable(&(*handle).inner);
    if !tunable.is_null() {
        *tunable = c.tunable as u64;
    }
    if !total.is_null() {
        *total = c.total as u64;
    }
    if !ratio.is_null() {
        *ratio = c.ratio;
    }
    openmod_status::OPENMOD_OK
}

/// Decode a corpus split and return the WER report as JSON. `split` is
/// train|val|test; `modality` is audio|visual|audio_visual.
///
/// # Safety
/// `handle` must be a live checkpoint handle; string arguments valid and
/// NUL-terminated; `out_report_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn openmod_evaluate(
    handle: *const OpenmodCheckpoint,
    corpus_dir: *const c_char,
    split: *const c_char,
    modality: *const c_char,
    beam_size: u32,
    out_report_json: *mut *mut c_char,
) -> openmod_status {
    if handle.is_null() {
        return invalid("handle must not be null");
    }
    if out_report_json.is_null() {
        return invalid("out_report_json must not be null");
    }
    let corpus_dir = match req_str(corpus_dir, "corpus_dir") {
        Ok(v) => v,
        Err(c) => return c,
    };
    let split = match req_str(split, "split") {
        Ok(s) => match Split::parse(s) {
            Ok(v) => v,
            Err(e) => return fail(e),
        },
        Err(c) => return c,
    };
    let modality = match req_str(modality, "modality") {
        Ok(m) => match Modality::parse(m) {
            Ok(v) => v,
            Err(e) => return fail(e),
        },
        Err(c) => return c,
    };
    let corpus = match Corpus::open(Path::new(corpus_dir)) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match evaluate_split(&(*handle).inner, &corpus.manifest, split, modality, beam_size as usize) {
        Ok(report) => match serde_json::to_string(&report) {
            Ok(json) => {
                *out_report_json = to_c_string(json);
                openmod_status::OPENMOD_OK
            }
            Err(e) => {
                set_error(e.to_string());
                openmod_status::OPENMOD_INTERNAL_ERROR
            }
        },
        Err(e) => fail(e),
    }
}

/// Run one training stage, writing a checkpoint directory. `stage` is
/// pretrain|asr|prompt|finetune; `stage_config_json` may be NULL for desk
/// defaults; `input_checkpoint` is required for every stage except pretrain;
/// `split_manifest` is required for the prompt stage.
///
/// # Safety
/// Pointer arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn openmod_train(
    stage: *const c_char,
    corpus_dir: *const c_char,
    input_checkpoint: *const c_char,
    split_manifest: *const c_char,
    out_dir: *const c_char,
    stage_config_json: *const c_char,
    force: bool,
) -> openmod_status {
    let stage = match req_str(stage, "stage") {
        Ok(s) => match TrainStage::parse(s) {
            Ok(v) => v,
            Err(e) => return fail(e),
        },
        Err(c) => return c,
    };
    let corpus_dir = match req_str(corpus_dir, "corpus_dir") {
        Ok(v) => v,
        Err(c) => return c,
    };
    let out_dir = match req_str(out_dir, "out_dir") {
        Ok(v) => v,
        Err(c) => return c,
    };
    let input_checkpoint = match opt_str(input_checkpoint) {
        Ok(v) => v.map(PathBuf::from),
        Err(c) => return c,
    };
    let split_manifest = match opt_str(split_manifest) {
        Ok(v) => v.map(PathBuf::from),
        Err(c) => return c,
    };
    let stage_config = match opt_str(stage_config_json) {
        Ok(Some(text)) => match serde_json::from_str::<StageConfig>(text) {
            Ok(c) => c,
            Err(e) => return invalid(&format!("bad stage config: {e}")),
        },
        Ok(None) => match stage {
            TrainStage::Pretrain => StageConfig::pretrain(17),
            TrainStage::Asr => StageConfig::asr(17),
            TrainStage::Prompt => StageConfig::cluster_prompt(17),
            TrainStage::Finetune => StageConfig::full_finetune(17),
        },
        Err(c) => return c,
    };
    let request = TrainRequest {
        stage,
        corpus_dir: PathBuf::from(corpus_dir),
        input_checkpoint,
        split_manifest,
        out_dir: PathBuf::from(out_dir),
        stage_config,
        model_config: None,
        force,
        command: "ffi train".into(),
    };
    match run_train(&request) {
        Ok(_) => openmod_status::OPENMOD_OK,
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn wer_roundtrip_through_the_abi() {
        let mut out = OpenmodWerCounts {
            substitutions: 0,
            deletions: 0,
            insertions: 0,
            reference_len: 0,
            wer: -1.0,
        };
        let r = c("a b c d");
        let h = c("a x c");
        let code = unsafe { openmod_wer(r.as_ptr(), h.as_ptr(), &mut out) };
        assert_eq!(code, openmod_status::OPENMOD_OK);
        assert_eq!(out.substitutions, 1);
        assert_eq!(out.deletions, 1);
        assert_eq!(out.insertions, 0);
        assert_eq!(out.wer, 0.5);
    }

    #[test]
    fn null_arguments_set_the_error_message() {
        let mut out = OpenmodWerCounts {
            substitutions: 0,
            deletions: 0,
            insertions: 0,
            reference_len: 0,
            wer: 0.0,
        };
        let code = unsafe { openmod_wer(ptr::null(), ptr::null(), &mut out) };
        assert_eq!(code, openmod_status::OPENMOD_INVALID_ARGUMENT);
        let msg = openmod_last_error();
        assert!(!msg.is_null());
        let text = unsafe { CStr::from_ptr(msg) }.to_str().unwrap().to_string();
        assert!(text.contains("reference"));
        unsafe { openmod_string_free(msg) };
    }

    #[test]
    fn empty_reference_is_a_validation_error() {
        let mut out = OpenmodWerCounts {
            substitutions: 0,
            deletions: 0,
            insertions: 0,
            reference_len: 0,
            wer: 0.0,
        };
        let r = c("");
        let h = c("a");
        let code = unsafe { openmod_wer(r.as_ptr(), h.as_ptr(), &mut out) };
        assert_eq!(code, openmod_status::OPENMOD_VALIDATION_ERROR);
    }

    #[test]
    fn generate_open_train_evaluate_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_dir = dir.path().join("corpus");
        let config = serde_json::json!({
            "seed": 5,
            "phoneme_count": 16,
            "viseme_count": 8,
            "vocab_size": 20,
            "homophene_pairs": 2,
            "word_len_range": [1, 3],
            "audio_dim": 8,
            "visual_dim": 8,
            "render": { "sigma_audio": 0.3, "sigma_visual": 0.3, "segment_frames": [2, 4] },
            "domains": [{
                "id": "d0", "vocab_start": 0, "vocab_count": 20,
                "zipf_s": 1.0, "bigram_alpha": 0.3, "bigram_unigram_mix": 0.4,
                "utterance_len": [2, 3], "train": 24, "val": 4, "test": 4
            }]
        })
        .to_string();
        let cfg_c = c(&config);
        let out_c = c(corpus_dir.to_str().unwrap());
        let code = unsafe { openmod_generate_corpus(cfg_c.as_ptr(), out_c.as_ptr(), false) };
        assert_eq!(code, openmod_status::OPENMOD_OK);

        // Tiny pretrain through the ABI; the model shape defaults from the
        // corpus, the stage config keeps it short.
        let stage_cfg = {
            let mut s = StageConfig::pretrain(7);
            s.steps = 30;
            s.batch_size = 8;
            serde_json::to_string(&s).unwrap()
        };
        let pre_dir = dir.path().join("pre");
        let stage_c = c("pretrain");
        let pre_c = c(pre_dir.to_str().unwrap());
        let cfg_json_c = c(&stage_cfg);
        let code = unsafe {
            openmod_train(
                stage_c.as_ptr(),
                out_c.as_ptr(),
                ptr::null(),
                ptr::null(),
                pre_c.as_ptr(),
                cfg_json_c.as_ptr(),
                false,
            )
        };
        assert_eq!(code, openmod_status::OPENMOD_OK);

        let handle = unsafe { openmod_checkpoint_open(pre_c.as_ptr()) };
        assert!(!handle.is_null());
        let stage = unsafe { openmod_checkpoint_stage(handle) };
        let stage_str = unsafe { CStr::from_ptr(stage) }.to_str().unwrap().to_string();
        assert_eq!(stage_str, "pretrained");
        unsafe { openmod_string_free(stage) };

        let mut tunable = 0u64;
        let mut total = 0u64;
        let mut ratio = 0f64;
        let code = unsafe {
            openmod_checkpoint_count_tunable(handle, &mut tunable, &mut total, &mut ratio)
        };
        assert_eq!(code, openmod_status::OPENMOD_OK);
        assert!(total > 0);
        assert_eq!(tunable, total); // pretraining leaves everything tunable

        let mut report_json: *mut c_char = ptr::null_mut();
        let split_c = c("test");
        let modality_c = c("audio");
        let code = unsafe {
            openmod_evaluate(
                handle,
                out_c.as_ptr(),
                split_c.as_ptr(),
                modality_c.as_ptr(),
                1,
                &mut report_json,
            )
        };
        assert_eq!(code, openmod_status::OPENMOD_OK);
        let text = unsafe { CStr::from_ptr(report_json) }.to_str().unwrap();
        assert!(text.contains("\"wer\""));
        unsafe { openmod_string_free(report_json) };
        unsafe { openmod_checkpoint_free(handle) };
    }

    #[test]
    fn opening_a_missing_checkpoint_fails_cleanly() {
        let missing = c("/nonexistent/ckpt");
        let handle = unsafe { openmod_checkpoint_open(missing.as_ptr()) };
        assert!(handle.is_null());
        let msg = openmod_last_error();
        assert!(!msg.is_null());
        unsafe { openmod_string_free(msg) };
    }
}
