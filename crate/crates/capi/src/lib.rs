//! C ABI over the core lab: opaque handles, status codes, and a thread-local
//! last-error message. All functions are panic-safe (panics surface as
//! `IDEAL_STATUS_PANIC` instead of unwinding across the boundary).
//!
//! Memory rules: handles returned through `out` parameters are owned by the
//! caller and must be released with the matching `_free` function. Buffers
//! are always caller-allocated; functions state the required length.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ideal::features::{first_order_features, glcm_features, kurtosis_score, shape_features};
use ideal::grid::{Grid, Mask};
use ideal::metrics;
use ideal::nnet::{train_classifier, Classifier, TrainConfig};
use ideal::rng::rng_for;
use ideal::saliency;
use ideal::strategies::mc_dropout_variance;
use ideal::synthdata::{generate_dataset, split, Dataset, DatasetSpec};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IdealStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    RuntimeError = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// Saliency method selector for `ideal_saliency_map`.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IdealSaliencyMethod {
    DeepTaylor = 0,
    GradCam = 1,
    GradInput = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Message for the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ideal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ideal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guard<F: FnOnce() -> IdealStatus>(f: F) -> IdealStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            IdealStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, IdealStatus> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(IdealStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        IdealStatus::InvalidArgument
    })
}

fn grid_from_raw(values: *const f64, h: usize, w: usize) -> Result<Grid, IdealStatus> {
    if values.is_null() {
        set_error("null value buffer");
        return Err(IdealStatus::NullPointer);
    }
    if h == 0 || w == 0 {
        set_error("empty grid");
        return Err(IdealStatus::InvalidArgument);
    }
    let data = unsafe { std::slice::from_raw_parts(values, h * w) }.to_vec();
    Grid::from_vec(h, w, data).map_err(|e| {
        set_error(&e.to_string());
        IdealStatus::InvalidArgument
    })
}

// ---------------------------------------------------------------------------
// Dataset handle
// ---------------------------------------------------------------------------

/// Opaque dataset handle (generator + label oracle).
pub struct IdealDataset {
    inner: Dataset,
}

/// Generate a synthetic dataset from a JSON spec (same schema as the CLI's
/// `gen --spec` file). On success `*out` owns the handle.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_generate(
    spec_json: *const c_char,
    out: *mut *mut IdealDataset,
) -> IdealStatus {
    guard(|| {
        if out.is_null() {
            set_error("null out pointer");
            return IdealStatus::NullPointer;
        }
        let json = match cstr(spec_json) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let spec: DatasetSpec = match serde_json::from_str(json) {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return IdealStatus::InvalidArgument;
            }
        };
        match generate_dataset(&spec) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(IdealDataset { inner: ds }));
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}

/// Release a dataset handle. NULL is a no-op.
///
/// # Safety
/// `ds` must be a pointer previously returned by `ideal_dataset_generate`
/// and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_free(ds: *mut IdealDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of images in the dataset (0 for NULL).
///
/// # Safety
/// `ds` must be a live dataset handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_len(ds: *const IdealDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.len()
}

/// Image side length in pixels (images are square).
///
/// # Safety
/// `ds` must be a live dataset handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_image_size(ds: *const IdealDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.spec().size
}

/// Copy the NUL-terminated id of image `index` into `buf`.
///
/// # Safety
/// `buf` must point to at least `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_image_id(
    ds: *const IdealDataset,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
) -> IdealStatus {
    guard(|| {
        if ds.is_null() || buf.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let images = (*ds).inner.images();
        if index >= images.len() {
            set_error("image index out of range");
            return IdealStatus::InvalidArgument;
        }
        let id = images[index].id.as_bytes();
        if buf_len < id.len() + 1 {
            set_error("id buffer too small");
            return IdealStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(id.as_ptr(), buf as *mut u8, id.len());
        *buf.add(id.len()) = 0;
        IdealStatus::Ok
    })
}

/// Copy image `index`'s pixels (row-major, size*size doubles in [0,1]).
///
/// # Safety
/// `buf` must point to at least `buf_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_image_pixels(
    ds: *const IdealDataset,
    index: usize,
    buf: *mut f64,
    buf_len: usize,
) -> IdealStatus {
    guard(|| {
        if ds.is_null() || buf.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let images = (*ds).inner.images();
        if index >= images.len() {
            set_error("image index out of range");
            return IdealStatus::InvalidArgument;
        }
        let values = images[index].pixels.values();
        if buf_len < values.len() {
            set_error("pixel buffer too small");
            return IdealStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
        IdealStatus::Ok
    })
}

/// Query the oracle for an image's hidden label (0/1). Increments the
/// dataset's interaction counter.
///
/// # Safety
/// `ds` must be live, `id` NUL-terminated, `out_label` valid.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_oracle_label(
    ds: *const IdealDataset,
    id: *const c_char,
    out_label: *mut u8,
) -> IdealStatus {
    guard(|| {
        if ds.is_null() || out_label.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let id = match cstr(id) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match (*ds).inner.oracle_label(id) {
            Ok(l) => {
                *out_label = l;
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}

/// Oracle interactions issued against this dataset so far.
///
/// # Safety
/// `ds` must be a live dataset handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_query_count(ds: *const IdealDataset) -> u64 {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.query_count()
}

// ---------------------------------------------------------------------------
// Classifier handle
// ---------------------------------------------------------------------------

/// Opaque trained-classifier handle.
pub struct IdealClassifier {
    inner: Classifier,
}

/// Train the small conv classifier on the dataset's 70% train split (10%
/// validation drives early stopping). `train_json` follows the CLI's `train`
/// config schema; pass NULL for defaults.
///
/// # Safety
/// `ds` must be live; `out` a valid pointer; `train_json` NULL or a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ideal_classifier_train(
    ds: *const IdealDataset,
    train_json: *const c_char,
    out: *mut *mut IdealClassifier,
) -> IdealStatus {
    guard(|| {
        if ds.is_null() || out.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let cfg: TrainConfig = if train_json.is_null() {
            TrainConfig::default()
        } else {
            let json = match cstr(train_json) {
                Ok(s) => s,
                Err(st) => return st,
            };
            match serde_json::from_str(json) {
                Ok(c) => c,
                Err(e) => {
                    set_error(&e.to_string());
                    return IdealStatus::InvalidArgument;
                }
            }
        };
        let dataset = &(*ds).inner;
        let run = || -> ideal::Result<Classifier> {
            let pool = split(dataset, (0.7, 0.1, 0.2), cfg.seed)?;
            let items = |ids: &[String]| -> ideal::Result<Vec<(Grid, u8)>> {
                ids.iter()
                    .map(|id| {
                        let img = dataset.image(id)?;
                        Ok((img.pixels.clone(), dataset.oracle_label(id)?))
                    })
                    .collect()
            };
            let train = items(&pool.unlabeled)?;
            let val = items(&pool.validation)?;
            let init = Classifier::new(dataset.spec().size, 0.25, true, cfg.seed);
            let (model, _) = train_classifier(&init, &train, &val, None, &cfg)?;
            Ok(model)
        };
        match run() {
            Ok(model) => {
                *out = Box::into_raw(Box::new(IdealClassifier { inner: model }));
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::RuntimeError
            }
        }
    })
}

/// Release a classifier handle. NULL is a no-op.
///
/// # Safety
/// `model` must be a pointer from `ideal_classifier_train`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ideal_classifier_free(model: *mut IdealClassifier) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Class-1 probability and predicted variance for one image.
///
/// # Safety
/// `pixels` must hold h*w doubles; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ideal_classifier_predict(
    model: *const IdealClassifier,
    pixels: *const f64,
    h: usize,
    w: usize,
    out_probability: *mut f64,
    out_sigma2: *mut f64,
) -> IdealStatus {
    guard(|| {
        if model.is_null() || out_probability.is_null() || out_sigma2.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let grid = match grid_from_raw(pixels, h, w) {
            Ok(g) => g,
            Err(st) => return st,
        };
        match (*model).inner.predict(&grid) {
            Ok((p, s2)) => {
                *out_probability = p;
                *out_sigma2 = s2;
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}

/// MC-dropout predictive variance with T stochastic passes (seeded).
///
/// # Safety
/// Pointer arguments as in `ideal_classifier_predict`.
#[no_mangle]
pub unsafe extern "C" fn ideal_classifier_uncertainty(
    model: *const IdealClassifier,
    pixels: *const f64,
    h: usize,
    w: usize,
    t: usize,
    seed: u64,
    out_variance: *mut f64,
) -> IdealStatus {
    guard(|| {
        if model.is_null() || out_variance.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        if t == 0 {
            set_error("t must be >= 1");
            return IdealStatus::InvalidArgument;
        }
        let grid = match grid_from_raw(pixels, h, w) {
            Ok(g) => g,
            Err(st) => return st,
        };
        let mut rng = rng_for(seed, "capi-mc", 0);
        match (*model).inner.mc_dropout_samples(&grid, t, &mut rng) {
            Ok(samples) => {
                *out_variance = mc_dropout_variance(&samples);
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}

/// Saliency map of an image under a trained model. `target_class` −1 uses
/// the model's predicted class. `out_map` receives h*w doubles.
///
/// # Safety
/// `pixels` must hold h*w doubles and `out_map` h*w writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ideal_saliency_map(
    model: *const IdealClassifier,
    pixels: *const f64,
    h: usize,
    w: usize,
    method: IdealSaliencyMethod,
    target_class: c_int,
    out_map: *mut f64,
) -> IdealStatus {
    guard(|| {
        if model.is_null() || out_map.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let grid = match grid_from_raw(pixels, h, w) {
            Ok(g) => g,
            Err(st) => return st,
        };
        let model = &(*model).inner;
        let target = if target_class < 0 {
            match model.predicted_class(&grid) {
                Ok(c) => c,
                Err(e) => {
                    set_error(&e.to_string());
                    return IdealStatus::InvalidArgument;
                }
            }
        } else {
            (target_class != 0) as u8
        };
        let m = match method {
            IdealSaliencyMethod::DeepTaylor => saliency::SaliencyMethod::DeepTaylor,
            IdealSaliencyMethod::GradCam => saliency::SaliencyMethod::GradCam,
            IdealSaliencyMethod::GradInput => saliency::SaliencyMethod::GradInput,
        };
        match saliency::compute(m, model, &grid, "capi", target) {
            Ok(map) => {
                let values = map.values.values();
                std::ptr::copy_nonoverlapping(values.as_ptr(), out_map, values.len());
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::RuntimeError
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Features and metrics (buffer in, values out)
// ---------------------------------------------------------------------------

/// Histogram-kurtosis informativeness score of a map. Constant maps map the
/// −inf sentinel to the most negative finite double.
///
/// # Safety
/// `values` must hold h*w doubles; `out_score` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ideal_kurtosis_score(
    values: *const f64,
    h: usize,
    w: usize,
    out_score: *mut f64,
) -> IdealStatus {
    guard(|| {
        if out_score.is_null() {
            set_error("null out pointer");
            return IdealStatus::NullPointer;
        }
        let grid = match grid_from_raw(values, h, w) {
            Ok(g) => g,
            Err(st) => return st,
        };
        let k = kurtosis_score(&grid);
        *out_score = if k == f64::NEG_INFINITY { f64::MIN } else { k };
        IdealStatus::Ok
    })
}

/// First-order features: kurtosis, skewness, entropy, total energy.
/// `out4` receives 4 doubles.
///
/// # Safety
/// `values` must hold h*w doubles; `out4` 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ideal_first_order_features(
    values: *const f64,
    h: usize,
    w: usize,
    out4: *mut f64,
) -> IdealStatus {
    guard(|| {
        if out4.is_null() {
            set_error("null out pointer");
            return IdealStatus::NullPointer;
        }
        let grid = match grid_from_raw(values, h, w) {
            Ok(g) => g,
            Err(st) => return st,
        };
        let fv = first_order_features(&grid);
        std::ptr::copy_nonoverlapping(fv.values.as_ptr(), out4, 4);
        IdealStatus::Ok
    })
}

/// Co-occurrence features: sum entropy, inverse difference normalized,
/// difference entropy, maximal correlation coefficient. `out4` receives 4
/// doubles.
///
/// # Safety
/// `values` must hold h*w doubles; `out4` 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ideal_glcm_features(
    values: *const f64,
    h: usize,
    w: usize,
    out4: *mut f64,
) -> IdealStatus {
    guard(|| {
        if out4.is_null() {
            set_error("null out pointer");
            return IdealStatus::NullPointer;
        }
        let grid = match grid_from_raw(values, h, w) {
            Ok(g) => g,
            Err(st) => return st,
        };
        match glcm_features(&grid) {
            Ok(fv) => {
                std::ptr::copy_nonoverlapping(fv.values.as_ptr(), out4, 4);
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}

/// 2-D shape features of the largest Otsu component: sphericity, spherical
/// disproportion, elongation. `out3` receives 3 doubles;
/// `out_degenerate` is set to 1 when the foreground was empty.
///
/// # Safety
/// `values` must hold h*w doubles; `out3` 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ideal_shape_features(
    values: *const f64,
    h: usize,
    w: usize,
    out3: *mut f64,
    out_degenerate: *mut c_int,
) -> IdealStatus {
    guard(|| {
        if out3.is_null() || out_degenerate.is_null() {
            set_error("null out pointer");
            return IdealStatus::NullPointer;
        }
        let grid = match grid_from_raw(values, h, w) {
            Ok(g) => g,
            Err(st) => return st,
        };
        let fv = shape_features(&grid);
        std::ptr::copy_nonoverlapping(fv.values.as_ptr(), out3, 3);
        *out_degenerate = fv.degenerate as c_int;
        IdealStatus::Ok
    })
}

/// Midrank ROC AUC. Labels must be 0/1 with both classes present.
///
/// # Safety
/// `scores` and `labels` must hold n elements.
#[no_mangle]
pub unsafe extern "C" fn ideal_roc_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_auc: *mut f64,
) -> IdealStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out_auc.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let s = std::slice::from_raw_parts(scores, n);
        let l = std::slice::from_raw_parts(labels, n);
        match metrics::roc_auc(s, l) {
            Ok(a) => {
                *out_auc = a;
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}

/// Dice coefficient of two binary masks (non-zero = foreground). Two empty
/// masks score 1.
///
/// # Safety
/// `pred` and `truth` must hold h*w bytes.
#[no_mangle]
pub unsafe extern "C" fn ideal_dice(
    pred: *const u8,
    truth: *const u8,
    h: usize,
    w: usize,
    out_dice: *mut f64,
) -> IdealStatus {
    guard(|| {
        if pred.is_null() || truth.is_null() || out_dice.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let to_mask = |ptr: *const u8| -> Mask {
            let bytes = std::slice::from_raw_parts(ptr, h * w);
            let mut m = Mask::empty(h, w);
            for y in 0..h {
                for x in 0..w {
                    if bytes[y * w + x] != 0 {
                        m.set(y, x, true);
                    }
                }
            }
            m
        };
        match ideal::segharness::dice(&to_mask(pred), &to_mask(truth)) {
            Ok(d) => {
                *out_dice = d;
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}

/// nDCG of a candidate ordering against a reference ordering. Both arrays
/// rank the same items: entry i holds an item index, most informative first.
///
/// # Safety
/// `candidate` and `reference` must hold n elements.
#[no_mangle]
pub unsafe extern "C" fn ideal_ndcg(
    candidate: *const u64,
    reference: *const u64,
    n: usize,
    p: usize,
    out_ndcg: *mut f64,
) -> IdealStatus {
    guard(|| {
        if candidate.is_null() || reference.is_null() || out_ndcg.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let to_ids = |ptr: *const u64| -> Vec<String> {
            std::slice::from_raw_parts(ptr, n)
                .iter()
                .map(|v| v.to_string())
                .collect()
        };
        match metrics::ndcg(&to_ids(candidate), &to_ids(reference), p) {
            Ok(v) => {
                *out_ndcg = v;
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}

/// Two-sided paired t-test p-value over n paired observations.
///
/// # Safety
/// `a` and `b` must hold n elements.
#[no_mangle]
pub unsafe extern "C" fn ideal_paired_t_test(
    a: *const f64,
    b: *const f64,
    n: usize,
    out_p: *mut f64,
) -> IdealStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out_p.is_null() {
            set_error("null pointer");
            return IdealStatus::NullPointer;
        }
        let av = std::slice::from_raw_parts(a, n);
        let bv = std::slice::from_raw_parts(b, n);
        match metrics::paired_t_test(av, bv) {
            Ok(p) => {
                *out_p = p;
                IdealStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                IdealStatus::InvalidArgument
            }
        }
    })
}
