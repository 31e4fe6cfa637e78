use std::ffi::{c_char, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fadegrow::evaldata;
use fadegrow::sampler::{self, SamplerConfig};
use fadegrow::scorenet::{save_checkpoint, UserContext};
use fadegrow::train::{self, TrainConfig};
use fadegrow::{FadingMatrix, NonPreferenceState, Schedule};
use fadegrow_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { fg_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn fading_handles_match_the_library() {
    let w = [0.2, 0.0, 0.5, 0.3];
    let mut f: *mut FgFadingMatrix = ptr::null_mut();
    assert_eq!(
        unsafe { fg_fading_rank1_new(w.as_ptr(), w.len(), false, &mut f) },
        FgStatus::Ok
    );
    assert_eq!(unsafe { fg_fading_corpus_size(f) }, 4);
    let v = [1.0, -2.0, 0.5, 4.0];
    let mut out = [0.0; 4];
    assert_eq!(
        unsafe { fg_fading_apply(f, v.as_ptr(), out.as_mut_ptr(), 4) },
        FgStatus::Ok
    );
    let lib = FadingMatrix::rank1(NonPreferenceState::new(w.to_vec(), false).unwrap());
    assert_eq!(out.to_vec(), lib.apply(&v).unwrap());
    assert_eq!(
        unsafe { fg_fading_apply(f, v.as_ptr(), out.as_mut_ptr(), 3) },
        FgStatus::DimensionError
    );
    unsafe { fg_fading_free(f) };
    unsafe { fg_fading_free(ptr::null_mut()) };
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut f: *mut FgFadingMatrix = ptr::null_mut();
    let bad = [0.0, 0.0];
    assert_eq!(
        unsafe { fg_fading_rank1_new(bad.as_ptr(), 2, false, &mut f) },
        FgStatus::InvalidTarget
    );
    assert!(f.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { fg_fading_rank1_new(bad.as_ptr(), 2, false, ptr::null_mut()) },
        FgStatus::NullPointer
    );
    assert_eq!(last_error(), "out is null");
    assert_eq!(
        unsafe { fg_fading_rank1_new(ptr::null(), 3, false, &mut f) },
        FgStatus::NullPointer
    );
    // truncation keeps the terminator and still reports the full length
    let mut small = [1 as c_char; 4];
    let n = unsafe { fg_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, "weights is null".len());
    assert_eq!(small[3], 0);
    assert_eq!(unsafe { fg_last_error_message(ptr::null_mut(), 0) }, n);
    assert_eq!(unsafe { fg_fading_corpus_size(ptr::null()) }, 0);
}

#[test]
fn schedules_match_the_library() {
    let mut s: *mut FgSchedule = ptr::null_mut();
    assert_eq!(
        unsafe { fg_schedule_geometric_new(1e-3, 10.0, 20, &mut s) },
        FgStatus::Ok
    );
    let lib = Schedule::geometric(1e-3, 10.0, 20).unwrap();
    for t in [0.0, 0.3, 1.0] {
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(unsafe { fg_schedule_alpha(s, t, &mut a) }, FgStatus::Ok);
        assert_eq!(unsafe { fg_schedule_beta(s, t, &mut b) }, FgStatus::Ok);
        assert_eq!((a, b), (lib.alpha(t).unwrap(), lib.beta(t).unwrap()));
    }
    let mut a = 0.0;
    assert_eq!(
        unsafe { fg_schedule_alpha(s, 1.5, &mut a) },
        FgStatus::DomainError
    );
    assert_eq!(
        unsafe { fg_schedule_alpha(s, 0.5, ptr::null_mut()) },
        FgStatus::NullPointer
    );
    unsafe { fg_schedule_free(s) };
    let mut l: *mut FgSchedule = ptr::null_mut();
    assert_eq!(
        unsafe { fg_schedule_linear_new(0.01, 0, &mut l) },
        FgStatus::ConfigError
    );
    assert!(l.is_null());
}

fn trained_checkpoint(dir: &Path) -> PathBuf {
    let data = evaldata::synth_cycle(10, 200, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let cfg = TrainConfig {
        dim: 8,
        ffn_dim: 16,
        max_epochs: 2,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let out = train::train(&data, &cfg, &Schedule::default()).unwrap();
    let path = dir.join("model.ckpt");
    save_checkpoint(&out.field, &path).unwrap();
    path
}

#[test]
fn models_load_and_recommend_like_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = trained_checkpoint(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut m: *mut FgModel = ptr::null_mut();
    assert_eq!(
        unsafe { fg_model_load(cpath.as_ptr(), &mut m) },
        FgStatus::Ok
    );
    assert_eq!(unsafe { fg_model_num_items(m) }, 10);
    assert_eq!(unsafe { fg_model_steps(m) }, 20);
    let mut s: *mut FgSchedule = ptr::null_mut();
    unsafe { fg_schedule_geometric_new(1e-3, 10.0, 20, &mut s) };
    let history = [3usize, 4, 5];
    let mut items = [usize::MAX; 5];
    let mut scores = [0.0; 5];
    let mut written = 0;
    let status = unsafe {
        fg_model_recommend(
            m,
            s,
            history.as_ptr(),
            3,
            2.0,
            7,
            5,
            items.as_mut_ptr(),
            scores.as_mut_ptr(),
            &mut written,
        )
    };
    assert_eq!(status, FgStatus::Ok, "{}", last_error());
    assert_eq!(written, 5);
    let field = fadegrow::scorenet::load_checkpoint(&path).unwrap();
    let cfg = SamplerConfig {
        w: 2.0,
        seed: 7,
        ..SamplerConfig::default()
    };
    let g = sampler::generate(
        &field,
        &UserContext::new(history.to_vec()),
        &cfg,
        &Schedule::default(),
        &mut cfg.user_rng(0),
    )
    .unwrap();
    assert_eq!(items.to_vec(), g.ranking[..5].to_vec());
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    // history item out of range
    let bad = [42usize];
    let status = unsafe {
        fg_model_recommend(
            m,
            s,
            bad.as_ptr(),
            1,
            0.0,
            7,
            5,
            items.as_mut_ptr(),
            scores.as_mut_ptr(),
            &mut written,
        )
    };
    assert_ne!(status, FgStatus::Ok);

    // schedule with a different step count
    let mut s10: *mut FgSchedule = ptr::null_mut();
    unsafe { fg_schedule_geometric_new(1e-3, 10.0, 10, &mut s10) };
    let status = unsafe {
        fg_model_recommend(
            m,
            s10,
            history.as_ptr(),
            3,
            0.0,
            7,
            5,
            items.as_mut_ptr(),
            scores.as_mut_ptr(),
            &mut written,
        )
    };
    assert_eq!(status, FgStatus::ConfigError);
    unsafe {
        fg_schedule_free(s10);
        fg_schedule_free(s);
        fg_model_free(m);
    }
}

#[test]
fn load_failures_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let mut m: *mut FgModel = ptr::null_mut();
    let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { fg_model_load(missing.as_ptr(), &mut m) },
        FgStatus::IoError
    );
    let junk = dir.path().join("junk");
    std::fs::write(&junk, "not a checkpoint\n").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { fg_model_load(junk.as_ptr(), &mut m) },
        FgStatus::ParseError
    );
    assert!(m.is_null());
    assert_eq!(
        unsafe { fg_model_load(ptr::null(), &mut m) },
        FgStatus::NullPointer
    );
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fadegrow.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "fg_last_error_message",
        "fg_fading_rank1_new",
        "fg_fading_corpus_size",
        "fg_fading_apply",
        "fg_fading_free",
        "fg_schedule_geometric_new",
        "fg_schedule_linear_new",
        "fg_schedule_alpha",
        "fg_schedule_beta",
        "fg_schedule_free",
        "fg_model_load",
        "fg_model_num_items",
        "fg_model_steps",
        "fg_model_recommend",
        "fg_model_free",
        "FG_STATUS_OK = 0",
        "FG_STATUS_PANIC = 9",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"fadegrow.h\"\nint main(void) { enum FgStatus s = FG_STATUS_OK; return (int)s; }\n",
    )
    .unwrap();
    let include = header().parent().unwrap().to_path_buf();
    for (compiler, extra) in [("cc", vec![]), ("c++", vec!["-x", "c++"])] {
        let out = match Command::new(compiler)
            .args(&extra)
            .arg("-fsyntax-only")
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .output()
        {
            Ok(o) => o,
            Err(_) => {
                eprintln!("{compiler} not available; skipping");
                continue;
            }
        };
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
