use std::ffi::{CStr, CString};
use std::ptr;

use mfselfish_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        mfs_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn sample(n: usize, seed: u64) -> *mut MfsEnsemble {
    let mut e = ptr::null_mut();
    assert_eq!(
        unsafe { mfs_ensemble_sample(n, seed, 64, &mut e) },
        MfsStatus::Ok,
        "{}",
        last_error()
    );
    e
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(mfs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_handles_are_reported() {
    let mut out = 0.0;
    let status = unsafe {
        mfs_ensemble_cost(
            ptr::null(),
            ptr::null(),
            MfsNorm::Hinf,
            MfsBlock::One,
            MfsProjection::Social,
            64,
            &mut out,
        )
    };
    assert_eq!(status, MfsStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { mfs_ensemble_len(ptr::null()) }, 0);
    unsafe {
        mfs_ensemble_free(ptr::null_mut());
        mfs_block_q_free(ptr::null_mut());
    }
}

#[test]
fn invalid_arguments_map_to_status_codes() {
    let mut e = ptr::null_mut();
    assert_eq!(
        unsafe { mfs_ensemble_sample(0, 1, 64, &mut e) },
        MfsStatus::InvalidArgument
    );
    assert!(e.is_null());
    let mut v = 0.0;
    // A = 2 is unstable
    let (a, b, c, d) = ([2.0], [1.0], [1.0], [0.0]);
    let s = unsafe { mfs_hinf_norm_state_space(a.as_ptr(), b.as_ptr(), c.as_ptr(), d.as_ptr(), 1, 1, 1, 64, &mut v) };
    assert_eq!(s, MfsStatus::Infeasible, "{}", last_error());
}

#[test]
fn short_output_buffers_are_rejected() {
    let e = sample(4, 2);
    let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
    let s = unsafe { mfs_ensemble_parameters(e, a.as_mut_ptr(), b.as_mut_ptr(), 3) };
    assert_eq!(s, MfsStatus::Dimension);
    unsafe { mfs_ensemble_free(e) };
}

#[test]
fn error_message_truncates_with_terminator() {
    let mut e = ptr::null_mut();
    unsafe { mfs_ensemble_sample(0, 1, 64, &mut e) };
    let mut buf = [1 as std::ffi::c_char; 6];
    let full = unsafe { mfs_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(full > 5);
    assert_eq!(buf[5], 0);
    assert_eq!(unsafe { mfs_last_error_message(ptr::null_mut(), 0) }, full);
}

#[test]
fn dominance_pipeline_and_snapshot_round_trip() {
    let e = sample(6, 11);
    let mut k = MfsConstants::default();
    assert_eq!(unsafe { mfs_ensemble_constants(e, &mut k) }, MfsStatus::Ok);
    assert!(k.gamma_h > 0.0 && k.gamma_u > 0.0 && k.gamma_v > 0.0);

    let mut q = ptr::null_mut();
    assert_eq!(
        unsafe { mfs_selfish_q(e, MfsNorm::Hinf, MfsBlock::One, &mut q) },
        MfsStatus::Ok,
        "{}",
        last_error()
    );
    let mut dom = ptr::null_mut();
    let s = unsafe { mfs_make_alpha_dominant(q, 1.0, 0.25, 0, MfsAllocation::Signed, 5, &mut dom) };
    assert_eq!(s, MfsStatus::Ok, "{}", last_error());
    let mut alpha = 0.0;
    unsafe { mfs_block_q_alpha(dom, &mut alpha) };
    assert!((alpha - 6f64.powf(0.25)).abs() <= 1e-9, "alpha {alpha}");

    let mut social = 0.0;
    let mut individual = 0.0;
    unsafe {
        assert_eq!(
            mfs_ensemble_cost(
                e,
                dom,
                MfsNorm::Hinf,
                MfsBlock::One,
                MfsProjection::Social,
                64,
                &mut social
            ),
            MfsStatus::Ok
        );
        assert_eq!(
            mfs_ensemble_cost(
                e,
                dom,
                MfsNorm::Hinf,
                MfsBlock::One,
                MfsProjection::Individual,
                64,
                &mut individual
            ),
            MfsStatus::Ok
        );
    }
    assert!(social.is_finite() && individual.is_finite() && social > 0.0);

    let mut avg = 0.0;
    assert_eq!(
        unsafe { mfs_average_block_norm(e, dom, 2, 64, &mut avg) },
        MfsStatus::Ok
    );
    let bound = mfs_lemma_bound_hinf(2, 6, k.gamma_h, 10.0, k.gamma_u, k.gamma_v, alpha);
    assert!(bound.is_finite() && bound > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.cbor").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { mfs_snapshot_save(path.as_ptr(), e, dom) },
        MfsStatus::Ok,
        "{}",
        last_error()
    );
    let (mut e2, mut q2) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe { mfs_snapshot_load(path.as_ptr(), &mut e2, &mut q2) },
        MfsStatus::Ok,
        "{}",
        last_error()
    );
    assert!(!e2.is_null() && !q2.is_null());
    let mut again = 0.0;
    unsafe {
        mfs_ensemble_cost(
            e2,
            q2,
            MfsNorm::Hinf,
            MfsBlock::One,
            MfsProjection::Social,
            64,
            &mut again,
        )
    };
    assert_eq!(again.to_bits(), social.to_bits());

    let bad = CString::new(dir.path().join("s.txt").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { mfs_snapshot_save(bad.as_ptr(), e, ptr::null()) },
        MfsStatus::Io
    );

    unsafe {
        mfs_block_q_free(q);
        mfs_block_q_free(dom);
        mfs_block_q_free(q2);
        mfs_ensemble_free(e);
        mfs_ensemble_free(e2);
    }
}

#[test]
fn single_agent_matching_reduces_cost() {
    let mut r = MfsMatchingResult::default();
    let s = unsafe { mfs_matching_solve(1.0, 1.0, MfsNorm::H2, MfsBlock::Two, &mut r) };
    assert_eq!(s, MfsStatus::Ok, "{}", last_error());
    assert!(r.mu <= r.cost_at_zero);
    assert!(r.taps >= 1 && r.converged == 1);
}
