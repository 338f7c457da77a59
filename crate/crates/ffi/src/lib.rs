//! C ABI over `graphpriv`.
//!
//! Every fallible call returns a [`GpStatus`]; on failure the message is kept
//! in thread-local storage and can be read with [`gp_last_error_message`].
//! Graphs and trained models are opaque handles released with their `_free`
//! function. Matrices cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use graphpriv::attack::{attack_link, attack_node, AttackerConfig, SplitSpec};
use graphpriv::defense::{train, DefenseConfig, TrainOutcome};
use graphpriv::graph::{structural_bias, LabeledGraph};
use graphpriv::leakage::analyze;
use graphpriv::synth::{generate, GeneratorParams};
use graphpriv::{io, Error};
use ndarray::ArrayView2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Divergence = 3,
    Io = 4,
    Parse = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque sampled or loaded graph.
pub struct GpGraph {
    inner: LabeledGraph,
}

/// Opaque trained model: embeddings, learned propagation matrix and history.
pub struct GpModel {
    inner: TrainOutcome,
}

/// Two-block generator parameters. `k_u == 0` disables the utility channel.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GpGeneratorParams {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub k: usize,
    pub mu: f64,
    pub seed: u64,
    pub k_u: usize,
    pub mu_u: f64,
    pub homophily: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GpLeakageReport {
    pub pl: f64,
    pub pl_prime: f64,
    pub delta_pl: f64,
    pub bias: f64,
    pub threshold: f64,
    pub amplified: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GpAttackReport {
    pub accuracy: f64,
    pub f1: f64,
    pub n_test: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GpStatus {
    match e {
        Error::Divergence { .. } => GpStatus::Divergence,
        Error::Io(_) => GpStatus::Io,
        Error::Csv(c) if c.is_io_error() => GpStatus::Io,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => GpStatus::Parse,
        _ => GpStatus::InvalidArgument,
    }
}

struct Fail(GpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside graphpriv".into());
            GpStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GpStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn graph_ref<'a>(g: *const GpGraph) -> Result<&'a LabeledGraph, Fail> {
    g.as_ref().map(|g| &g.inner).ok_or_else(|| null("graph"))
}

unsafe fn model_ref<'a>(m: *const GpModel) -> Result<&'a TrainOutcome, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

fn to_params(p: &GpGeneratorParams) -> GeneratorParams {
    let base = GeneratorParams::new(p.n, p.p, p.q, p.k, p.mu, p.seed);
    if p.k_u > 0 {
        base.with_utility(p.k_u, p.mu_u).with_utility_homophily(p.homophily)
    } else {
        base
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `params` must point to a valid struct and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn gp_graph_generate(params: *const GpGeneratorParams, out: *mut *mut GpGraph) -> GpStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let g = generate(&to_params(params))?;
        *out = Box::into_raw(Box::new(GpGraph { inner: g }));
        Ok(())
    })
}

/// Load `<prefix>.edges.csv`, `<prefix>.features.csv` and `<prefix>.labels.csv`.
///
/// # Safety
/// `prefix` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_graph_load(prefix: *const c_char, out: *mut *mut GpGraph) -> GpStatus {
    guard(|| {
        let prefix = path_arg(prefix, "prefix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let g = io::load_graph(&prefix)?;
        *out = Box::into_raw(Box::new(GpGraph { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle and `prefix` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gp_graph_save(graph: *const GpGraph, prefix: *const c_char) -> GpStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let prefix = path_arg(prefix, "prefix")?;
        io::write_graph(g, &prefix)?;
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn gp_graph_free(graph: *mut GpGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gp_graph_node_count(graph: *const GpGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.node_count())
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gp_graph_edge_count(graph: *const GpGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.edge_count())
}

/// Structural bias of the graph with respect to its sensitive labels.
///
/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_graph_structural_bias(graph: *const GpGraph, out: *mut f64) -> GpStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = structural_bias(g, g.sensitive_labels(), None)?;
        Ok(())
    })
}

/// Closed-form leakage before and after one propagation step.
///
/// # Safety
/// `params` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_leakage_analyze(params: *const GpGeneratorParams, out: *mut GpLeakageReport) -> GpStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = analyze(&to_params(params))?;
        *out = GpLeakageReport {
            pl: r.pl,
            pl_prime: r.pl_prime,
            delta_pl: r.delta_pl,
            bias: r.bias,
            threshold: r.threshold,
            amplified: r.amplified,
        };
        Ok(())
    })
}

/// Train the defense. `config_json` may be null for defaults; missing
/// optional fields take their defaults.
///
/// # Safety
/// `graph` must be live, `config_json` null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_train(
    graph: *const GpGraph,
    config_json: *const c_char,
    out: *mut *mut GpModel,
) -> GpStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_json.is_null() {
            DefenseConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| Fail(GpStatus::InvalidArgument, "config is not UTF-8".into()))?;
            serde_json::from_str(text).map_err(Error::from)?
        };
        cfg.validate()?;
        let outcome = train(g, &cfg)?;
        *out = Box::into_raw(Box::new(GpModel { inner: outcome }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`gp_train`] and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn gp_model_free(model: *mut GpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Shape of the final embeddings.
///
/// # Safety
/// `model` must be live; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_model_embedding_shape(
    model: *const GpModel,
    rows: *mut usize,
    cols: *mut usize,
) -> GpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if rows.is_null() || cols.is_null() {
            return Err(null("rows/cols"));
        }
        *rows = m.embeddings.nrows();
        *cols = m.embeddings.ncols();
        Ok(())
    })
}

/// Copy the embeddings row-major into `buf` of `len` doubles.
///
/// # Safety
/// `model` must be live and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gp_model_embeddings(model: *const GpModel, buf: *mut f64, len: usize) -> GpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let z = &m.embeddings;
        if len < z.len() {
            return Err(Fail(
                GpStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {}", z.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf, z.len());
        for (d, &s) in dst.iter_mut().zip(z.iter()) {
            *d = s;
        }
        Ok(())
    })
}

/// Recorded epochs.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn gp_model_epochs(model: *const GpModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.history.len())
}

/// Structural bias of the learned propagation matrix at the first and last epoch.
///
/// # Safety
/// `model` must be live; `initial` and `last` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_model_bias(model: *const GpModel, initial: *mut f64, last: *mut f64) -> GpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if initial.is_null() || last.is_null() {
            return Err(null("initial/last"));
        }
        match (m.history.first(), m.history.last()) {
            (Some(a), Some(b)) => {
                *initial = a.adjacency_bias;
                *last = b.adjacency_bias;
                Ok(())
            }
            _ => Err(Fail(GpStatus::InvalidArgument, "model has no recorded epochs".into())),
        }
    })
}

unsafe fn embeddings_arg<'a>(z: *const f64, rows: usize, cols: usize) -> Result<ArrayView2<'a, f64>, Fail> {
    if z.is_null() {
        return Err(null("embeddings"));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(GpStatus::InvalidArgument, "embedding shape overflows".into()))?;
    let data = std::slice::from_raw_parts(z, len);
    ArrayView2::from_shape((rows, cols), data).map_err(|e| Fail(GpStatus::InvalidArgument, e.to_string()))
}

/// Sensitive-attribute attack on row-major embeddings, one row per node.
///
/// # Safety
/// `graph` must be live, `z` valid for `rows * cols` reads, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_attack_node(
    graph: *const GpGraph,
    z: *const f64,
    rows: usize,
    cols: usize,
    seed: u64,
    out: *mut GpAttackReport,
) -> GpStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let z = embeddings_arg(z, rows, cols)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = attack_node(
            z,
            g.sensitive_labels(),
            &SplitSpec::with_seed(seed),
            &AttackerConfig::default(),
        )?;
        *out = GpAttackReport {
            accuracy: r.accuracy,
            f1: r.f1,
            n_test: r.n_test,
        };
        Ok(())
    })
}

/// Link-inference attack on row-major embeddings against the graph's edges.
///
/// # Safety
/// As [`gp_attack_node`].
#[no_mangle]
pub unsafe extern "C" fn gp_attack_link(
    graph: *const GpGraph,
    z: *const f64,
    rows: usize,
    cols: usize,
    seed: u64,
    out: *mut GpAttackReport,
) -> GpStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let z = embeddings_arg(z, rows, cols)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = attack_link(z, g, &SplitSpec::with_seed(seed), &AttackerConfig::default())?;
        *out = GpAttackReport {
            accuracy: r.accuracy,
            f1: r.f1,
            n_test: r.n_test,
        };
        Ok(())
    })
}
