//! C ABI over the spectral core: 2D DCT plans, zigzag ordering and the
//! dynamic mask generator.
//!
//! Every fallible call returns a [`DsmStatus`]; on failure the message is
//! kept per thread and can be read with [`dsm_last_error_message`]. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dsm_core::dswg::{generate_mask, DswgParams};
use dsm_core::spectral::{dct2, idct2, zigzag_order, DctPlan, Domain, SpectrumGrid, ZigzagOrder};
use dsm_core::DsmError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call. Values match the library's error codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsmStatus {
    Ok = 0,
    InvalidArgument = 1,
    ResourceLimit = 2,
    Shape = 3,
    NonFinite = 4,
    InvalidState = 5,
    Config = 6,
    Format = 7,
    Consistency = 8,
    Version = 9,
    Corruption = 10,
    Io = 11,
    NullPointer = 100,
    Panic = 101,
}

impl DsmStatus {
    fn from_error(e: &DsmError) -> Self {
        match e.code() {
            1 => DsmStatus::InvalidArgument,
            2 => DsmStatus::ResourceLimit,
            3 => DsmStatus::Shape,
            4 => DsmStatus::NonFinite,
            5 => DsmStatus::InvalidState,
            6 => DsmStatus::Config,
            7 => DsmStatus::Format,
            8 => DsmStatus::Consistency,
            9 => DsmStatus::Version,
            10 => DsmStatus::Corruption,
            _ => DsmStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

enum Failure {
    Null(&'static str),
    Lib(DsmError),
}

impl From<DsmError> for Failure {
    fn from(e: DsmError) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DsmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsmStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as `{what}`"));
            DsmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            DsmStatus::from_error(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DsmStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

fn check_len(len: usize, expected: usize) -> Result<(), Failure> {
    if len == expected {
        Ok(())
    } else {
        Err(DsmError::Shape(format!("buffer holds {len} values, expected {expected}")).into())
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `capacity`). Returns the full message length without the
/// terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `capacity` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn dsm_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Precomputed orthonormal 2D DCT for one grid shape.
pub struct DsmDctPlan {
    plan: DctPlan,
}

/// Creates a plan for `height x width` grids.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn dsm_dct_plan_new(height: usize, width: usize, out: *mut *mut DsmDctPlan) -> DsmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let plan = DctPlan::new(height, width)?;
        *out = Box::into_raw(Box::new(DsmDctPlan { plan }));
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or a pointer from [`dsm_dct_plan_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsm_dct_plan_free(plan: *mut DsmDctPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

unsafe fn transform(
    plan: *const DsmDctPlan,
    input: *const f64,
    output: *mut f64,
    len: usize,
    forward: bool,
) -> DsmStatus {
    guard(|| {
        let plan = &(*non_null(plan, "plan")?).plan;
        non_null(input, "input")?;
        non_null(output, "output")?;
        check_len(len, plan.len())?;
        let data = std::slice::from_raw_parts(input, len).to_vec();
        let (h, w) = (plan.height(), plan.width());
        let result = if forward {
            dct2(plan, &SpectrumGrid::new(h, w, data, Domain::Spatial)?)?
        } else {
            idct2(plan, &SpectrumGrid::new(h, w, data, Domain::Frequency)?)?
        };
        std::slice::from_raw_parts_mut(output, len).copy_from_slice(result.data());
        Ok(())
    })
}

/// Forward transform of a row-major grid. `input` and `output` may alias.
///
/// # Safety
/// `plan` must be live; `input` and `output` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dsm_dct2(
    plan: *const DsmDctPlan,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> DsmStatus {
    transform(plan, input, output, len, true)
}

/// Inverse transform of a row-major spectrum. `input` and `output` may alias.
///
/// # Safety
/// As for [`dsm_dct2`].
#[no_mangle]
pub unsafe extern "C" fn dsm_idct2(
    plan: *const DsmDctPlan,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> DsmStatus {
    transform(plan, input, output, len, false)
}

/// Writes the row-major index of every zigzag position, low frequencies
/// first, into `out`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dsm_zigzag_indices(height: usize, width: usize, out: *mut usize, len: usize) -> DsmStatus {
    guard(|| {
        non_null(out, "out")?;
        let order = zigzag_order(height, width)?;
        check_len(len, order.len())?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(order.indices());
        Ok(())
    })
}

/// Dynamic mask generator with randomly initialized weights.
pub struct DsmMaskGenerator {
    order: ZigzagOrder,
    params: DswgParams,
}

/// Creates a generator for `height x width` spectra pooled to `bands`
/// bands with hidden width `hidden`, initialized from `seed`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn dsm_mask_generator_new(
    height: usize,
    width: usize,
    bands: usize,
    hidden: usize,
    mask_gain: f64,
    seed: u64,
    out: *mut *mut DsmMaskGenerator,
) -> DsmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let order = zigzag_order(height, width)?;
        let mut params = DswgParams::init(bands, hidden, &mut ChaCha8Rng::seed_from_u64(seed))?;
        params.mask_gain = mask_gain;
        params.validate()?;
        if bands > order.len() {
            return Err(DsmError::InvalidArgument(format!(
                "{bands} bands exceed the {} spectrum positions",
                order.len()
            ))
            .into());
        }
        *out = Box::into_raw(Box::new(DsmMaskGenerator { order, params }));
        Ok(())
    })
}

/// # Safety
/// `generator` must be null or a pointer from [`dsm_mask_generator_new`]
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsm_mask_generator_free(generator: *mut DsmMaskGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Writes the row-major mask for one spectrum into `mask`.
///
/// # Safety
/// `generator` must be live; `spectrum` and `mask` must each hold `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn dsm_generate_mask(
    generator: *const DsmMaskGenerator,
    spectrum: *const f64,
    mask: *mut f64,
    len: usize,
) -> DsmStatus {
    guard(|| {
        let g = &*non_null(generator, "generator")?;
        non_null(spectrum, "spectrum")?;
        non_null(mask, "mask")?;
        check_len(len, g.order.len())?;
        let data = std::slice::from_raw_parts(spectrum, len).to_vec();
        let grid = SpectrumGrid::new(g.order.height(), g.order.width(), data, Domain::Frequency)?;
        let (m, _) = generate_mask(&grid, &g.order, &g.params)?;
        std::slice::from_raw_parts_mut(mask, len).copy_from_slice(m.data());
        Ok(())
    })
}
