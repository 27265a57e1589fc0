//! C interface to the dlflow engine.
//!
//! Every function returns a [`DlfStatus`]. On failure a message is kept per
//! thread and can be fetched with [`dlf_last_error`]. Handles are opaque and
//! released with their matching `*_free` function. Strings handed out by the
//! library are released with [`dlf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dlflow::datalog::{parse_program, Program};
use dlflow::driver::{run_bgd, run_pagerank};
use dlflow::logical::{canonical_serialize, compile_program};
use dlflow::physical::{optimize, AggTree, ClusterConfig, ConnectorChoice};
use dlflow::runtime::RunOptions;
use dlflow::strat::check;
use dlflow::tasks::bgd::BgdParams;
use dlflow::tasks::ingest::{dimension, parse_graph, parse_points, Point};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    NotStratified = 4,
    Plan = 5,
    Engine = 6,
    InvalidInput = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlfConnector {
    Merge = 0,
    HashSort = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlfAggTree {
    Flat = 0,
    SqrtLayer = 1,
    Fanin = 2,
}

/// Cluster shape. Fill with [`dlf_config_default`] before changing fields.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DlfConfig {
    pub workers: u32,
    pub partitions_per_worker: u32,
    pub connector: DlfConnector,
    pub agg_tree: DlfAggTree,
    /// Fan-in when `agg_tree` is `Fanin`.
    pub fanin: u32,
    pub combiner: bool,
    pub deterministic: bool,
    pub max_iters: u32,
}

pub struct DlfProgram(Program);
pub struct DlfGraph(Vec<(i64, Vec<i64>)>);
pub struct DlfPoints(Vec<Point>);

pub struct DlfRanks {
    ranks: Vec<(i64, f64)>,
    iterations: usize,
}

pub struct DlfModel {
    weights: Vec<f64>,
    iterations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

type Outcome = Result<(), (DlfStatus, String)>;

fn guard(f: impl FnOnce() -> Outcome) -> DlfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DlfStatus::Panic
        }
    }
}

fn null() -> (DlfStatus, String) {
    (DlfStatus::NullArgument, "a required pointer argument is null".into())
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, (DlfStatus, String)> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|e| (DlfStatus::InvalidUtf8, e.to_string()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Outcome {
    if out.is_null() {
        return Err(null());
    }
    *out = CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw();
    Ok(())
}

unsafe fn get<'a, T>(p: *const T) -> Result<&'a T, (DlfStatus, String)> {
    p.as_ref().ok_or_else(null)
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn cluster(c: &DlfConfig) -> Result<(ClusterConfig, RunOptions), (DlfStatus, String)> {
    let cfg = ClusterConfig {
        workers: c.workers as usize,
        partitions_per_worker: c.partitions_per_worker as usize,
        connector: match c.connector {
            DlfConnector::Merge => ConnectorChoice::HashMerge,
            DlfConnector::HashSort => ConnectorChoice::HashThenSort,
        },
        agg_tree: match c.agg_tree {
            DlfAggTree::Flat => AggTree::Flat,
            DlfAggTree::SqrtLayer => AggTree::SqrtLayer,
            DlfAggTree::Fanin => AggTree::Fanin(c.fanin as usize),
        },
        combiner: c.combiner,
    };
    cfg.check().map_err(|m| (DlfStatus::InvalidInput, m))?;
    let opts = RunOptions { deterministic: c.deterministic, max_iters: c.max_iters as usize, ..RunOptions::default() };
    Ok((cfg, opts))
}

fn engine_err(e: dlflow::driver::DriverError) -> (DlfStatus, String) {
    use dlflow::driver::DriverError as E;
    let status = match &e {
        E::Compile(_) | E::Plan(_) => DlfStatus::Plan,
        E::Engine(_) => DlfStatus::Engine,
        E::Input(_) => DlfStatus::InvalidInput,
    };
    (status, e.to_string())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dlf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn dlf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn dlf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_config_default(out: *mut DlfConfig) -> DlfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        let d = ClusterConfig::default();
        let (agg_tree, fanin) = match d.agg_tree {
            AggTree::Flat => (DlfAggTree::Flat, 0),
            AggTree::SqrtLayer => (DlfAggTree::SqrtLayer, 0),
            AggTree::Fanin(k) => (DlfAggTree::Fanin, k as u32),
        };
        *out = DlfConfig {
            workers: d.workers as u32,
            partitions_per_worker: d.partitions_per_worker as u32,
            connector: DlfConnector::Merge,
            agg_tree,
            fanin,
            combiner: d.combiner,
            deterministic: false,
            max_iters: RunOptions::default().max_iters as u32,
        };
        Ok(())
    })
}

/// Parses a program. Stratification is checked separately.
///
/// # Safety
/// `source` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_program_parse(source: *const c_char, out: *mut *mut DlfProgram) -> DlfStatus {
    guard(|| {
        let p = parse_program(text(source)?).map_err(|e| (DlfStatus::Parse, e.to_string()))?;
        put(out, DlfProgram(p))
    })
}

/// # Safety
/// `p` must be null or a handle from [`dlf_program_parse`].
#[no_mangle]
pub unsafe extern "C" fn dlf_program_free(p: *mut DlfProgram) {
    free(p)
}

/// Writes whether the program is XY-stratified and, if `report` is not
/// null, the full verdict text.
///
/// # Safety
/// `p` must be a live handle, `stratified` writable, `report` null or writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_program_check(p: *const DlfProgram, stratified: *mut c_int, report: *mut *mut c_char) -> DlfStatus {
    guard(|| {
        let v = check(&get(p)?.0);
        *stratified.as_mut().ok_or_else(null)? = v.xy_stratified as c_int;
        if !report.is_null() {
            put_string(report, v.to_string())?;
        }
        Ok(())
    })
}

/// Canonical text of the logical plan.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_program_logical_plan(p: *const DlfProgram, out: *mut *mut c_char) -> DlfStatus {
    guard(|| {
        let lp = compile_program(&get(p)?.0).map_err(|e| (DlfStatus::NotStratified, e.to_string()))?;
        put_string(out, canonical_serialize(&lp))
    })
}

/// Text of the physical plan for `config`.
///
/// # Safety
/// `p` and `config` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_program_physical_plan(
    p: *const DlfProgram,
    config: *const DlfConfig,
    out: *mut *mut c_char,
) -> DlfStatus {
    guard(|| {
        let (cfg, _) = cluster(get(config)?)?;
        let lp = compile_program(&get(p)?.0).map_err(|e| (DlfStatus::NotStratified, e.to_string()))?;
        let pp = optimize(&lp, &cfg).map_err(|e| (DlfStatus::Plan, e.to_string()))?;
        put_string(out, pp.to_string())
    })
}

/// Parses adjacency text, one `src dst...` line per vertex.
///
/// # Safety
/// `source` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_graph_parse(source: *const c_char, out: *mut *mut DlfGraph) -> DlfStatus {
    guard(|| {
        let g = parse_graph(text(source)?).map_err(|e| (DlfStatus::Parse, e.to_string()))?;
        put(out, DlfGraph(g))
    })
}

/// # Safety
/// `g` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlf_graph_vertex_count(g: *const DlfGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.len())
}

/// # Safety
/// `g` must be null or a handle from [`dlf_graph_parse`].
#[no_mangle]
pub unsafe extern "C" fn dlf_graph_free(g: *mut DlfGraph) {
    free(g)
}

/// Runs PageRank for `supersteps` supersteps.
///
/// # Safety
/// `g` and `config` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_pagerank_run(
    g: *const DlfGraph,
    supersteps: u32,
    config: *const DlfConfig,
    out: *mut *mut DlfRanks,
) -> DlfStatus {
    guard(|| {
        let (cfg, opts) = cluster(get(config)?)?;
        let run = run_pagerank(&get(g)?.0, supersteps, &cfg, &opts).map_err(engine_err)?;
        put(out, DlfRanks { ranks: run.ranks.into_iter().collect(), iterations: run.result.iterations })
    })
}

/// # Safety
/// `r` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlf_ranks_len(r: *const DlfRanks) -> usize {
    r.as_ref().map_or(0, |r| r.ranks.len())
}

/// # Safety
/// `r` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlf_ranks_iterations(r: *const DlfRanks) -> usize {
    r.as_ref().map_or(0, |r| r.iterations)
}

/// The `index`-th vertex in ascending id order and its rank.
///
/// # Safety
/// `r` must be a live handle; `id` and `rank` writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_ranks_get(r: *const DlfRanks, index: usize, id: *mut i64, rank: *mut f64) -> DlfStatus {
    guard(|| {
        let r = get(r)?;
        let &(v, x) = r
            .ranks
            .get(index)
            .ok_or_else(|| (DlfStatus::OutOfRange, format!("index {index} past {} vertices", r.ranks.len())))?;
        *id.as_mut().ok_or_else(null)? = v;
        *rank.as_mut().ok_or_else(null)? = x;
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle from [`dlf_pagerank_run`].
#[no_mangle]
pub unsafe extern "C" fn dlf_ranks_free(r: *mut DlfRanks) {
    free(r)
}

/// Parses labeled sparse points, one `label idx:val ...` line per record.
///
/// # Safety
/// `source` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_points_parse(source: *const c_char, out: *mut *mut DlfPoints) -> DlfStatus {
    guard(|| {
        let p = parse_points(text(source)?).map_err(|e| (DlfStatus::Parse, e.to_string()))?;
        put(out, DlfPoints(p))
    })
}

/// # Safety
/// `p` must be null or a handle from [`dlf_points_parse`].
#[no_mangle]
pub unsafe extern "C" fn dlf_points_free(p: *mut DlfPoints) {
    free(p)
}

/// Batch gradient descent for L2-regularized logistic regression, taking at
/// most `steps` steps.
///
/// # Safety
/// `p` and `config` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlf_bgd_run(
    p: *const DlfPoints,
    eta: f64,
    lambda: f64,
    steps: u32,
    config: *const DlfConfig,
    out: *mut *mut DlfModel,
) -> DlfStatus {
    guard(|| {
        let (cfg, opts) = cluster(get(config)?)?;
        let points = &get(p)?.0;
        let params = BgdParams { eta, lambda, max_iters: steps, ..BgdParams::new(dimension(points)) };
        let run = run_bgd(points, &params, &cfg, &opts).map_err(engine_err)?;
        put(out, DlfModel { weights: run.model, iterations: run.result.iterations })
    })
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlf_model_dim(m: *const DlfModel) -> usize {
    m.as_ref().map_or(0, |m| m.weights.len())
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dlf_model_iterations(m: *const DlfModel) -> usize {
    m.as_ref().map_or(0, |m| m.iterations)
}

/// Copies the weights into `buf`, which must hold `len` doubles with
/// `len >= dlf_model_dim(m)`.
///
/// # Safety
/// `m` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dlf_model_copy(m: *const DlfModel, buf: *mut f64, len: usize) -> DlfStatus {
    guard(|| {
        let w = &get(m)?.weights;
        if buf.is_null() {
            return Err(null());
        }
        if len < w.len() {
            return Err((DlfStatus::OutOfRange, format!("buffer holds {len} weights, model has {}", w.len())));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), buf, w.len());
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`dlf_bgd_run`].
#[no_mangle]
pub unsafe extern "C" fn dlf_model_free(m: *mut DlfModel) {
    free(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::mem::MaybeUninit;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(dlf_last_error()).to_string_lossy().into_owned() }
    }

    fn config() -> DlfConfig {
        let mut c = MaybeUninit::uninit();
        assert_eq!(unsafe { dlf_config_default(c.as_mut_ptr()) }, DlfStatus::Ok);
        unsafe { c.assume_init() }
    }

    #[test]
    fn pagerank_round_trip() {
        unsafe {
            let mut g = ptr::null_mut();
            assert_eq!(dlf_graph_parse(cstr("0 1\n1 0\n").as_ptr(), &mut g), DlfStatus::Ok);
            assert_eq!(dlf_graph_vertex_count(g), 2);
            let mut r = ptr::null_mut();
            assert_eq!(dlf_pagerank_run(g, 30, &config(), &mut r), DlfStatus::Ok);
            assert_eq!(dlf_ranks_len(r), 2);
            assert!(dlf_ranks_iterations(r) > 0);
            let (mut id, mut rank) = (0i64, 0f64);
            assert_eq!(dlf_ranks_get(r, 1, &mut id, &mut rank), DlfStatus::Ok);
            assert_eq!(id, 1);
            assert!((rank - 0.5).abs() < 1e-15);
            assert_eq!(dlf_ranks_get(r, 2, &mut id, &mut rank), DlfStatus::OutOfRange);
            assert!(last_error().contains("index 2"));
            dlf_ranks_free(r);
            dlf_graph_free(g);
        }
    }

    #[test]
    fn bgd_round_trip() {
        unsafe {
            let mut p = ptr::null_mut();
            let src = cstr("+1 0:1 1:0.5\n-1 1:2\n+1 0:0.3\n");
            assert_eq!(dlf_points_parse(src.as_ptr(), &mut p), DlfStatus::Ok);
            let mut c = config();
            c.deterministic = true;
            let mut m = ptr::null_mut();
            assert_eq!(dlf_bgd_run(p, 0.1, 1.0, 5, &c, &mut m), DlfStatus::Ok);
            assert_eq!(dlf_model_dim(m), 2);
            assert_eq!(dlf_model_iterations(m), 6);
            let mut w = [0.0; 2];
            assert_eq!(dlf_model_copy(m, w.as_mut_ptr(), 2), DlfStatus::Ok);
            assert!(w.iter().any(|x| *x != 0.0));
            assert_eq!(dlf_model_copy(m, w.as_mut_ptr(), 1), DlfStatus::OutOfRange);
            dlf_model_free(m);
            dlf_points_free(p);
        }
    }

    #[test]
    fn program_views_and_errors() {
        unsafe {
            let mut p = ptr::null_mut();
            let src = cstr(dlflow::datalog::PREGEL_TEMPLATE);
            assert_eq!(dlf_program_parse(src.as_ptr(), &mut p), DlfStatus::Ok);
            let mut ok = 0;
            let mut report = ptr::null_mut();
            assert_eq!(dlf_program_check(p, &mut ok, &mut report), DlfStatus::Ok);
            assert_eq!(ok, 1);
            assert!(CStr::from_ptr(report).to_str().unwrap().contains("xy-stratified: yes"));
            dlf_string_free(report);
            let mut plan = ptr::null_mut();
            assert_eq!(dlf_program_logical_plan(p, &mut plan), DlfStatus::Ok);
            dlf_string_free(plan);
            let mut c = config();
            c.connector = DlfConnector::HashSort;
            assert_eq!(dlf_program_physical_plan(p, &c, &mut plan), DlfStatus::Ok);
            assert!(CStr::from_ptr(plan).to_str().unwrap().contains("O1 "));
            dlf_string_free(plan);
            c.workers = 0;
            assert_eq!(dlf_program_physical_plan(p, &c, &mut plan), DlfStatus::InvalidInput);
            dlf_program_free(p);

            assert_eq!(dlf_program_parse(cstr("p(X :- q.").as_ptr(), &mut p), DlfStatus::Parse);
            assert!(!last_error().is_empty());
            assert_eq!(dlf_program_parse(ptr::null(), &mut p), DlfStatus::NullArgument);
            let bad = [0xffu8, 0];
            assert_eq!(dlf_graph_parse(bad.as_ptr().cast(), &mut ptr::null_mut()), DlfStatus::InvalidUtf8);
            let mut g = ptr::null_mut();
            assert_eq!(dlf_graph_parse(cstr("").as_ptr(), &mut g), DlfStatus::Ok);
            let mut r = ptr::null_mut();
            assert_eq!(dlf_pagerank_run(g, 3, &config(), &mut r), DlfStatus::InvalidInput);
            dlf_graph_free(g);
            dlf_string_free(ptr::null_mut());
            assert!(!CStr::from_ptr(dlf_version()).to_bytes().is_empty());
        }
    }
}
