use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mpvstereo::pipeline::synth::{generate_synthetic_scene, SceneSpec};
use mpvstereo_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { mpv_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(n, s.len());
    s
}

fn image(data: &[u8], w: usize, h: usize) -> *mut MpvImage {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { mpv_image_new(data.as_ptr(), w, h, w, &mut out) }, MpvStatus::Ok);
    out
}

#[test]
fn match_wall_through_c_api() {
    let scene = generate_synthetic_scene(&SceneSpec::wall(96, 64, 5, 16, 3)).unwrap();
    let (w, h) = (96, 64);
    let l = image(scene.pair.left().data(), w, h);
    let r = image(scene.pair.right().data(), w, h);
    let mut disp = ptr::null_mut();
    let status = unsafe { mpv_match(l, r, ptr::null(), 16, 1, &mut disp) };
    assert_eq!(status, MpvStatus::Ok);
    unsafe {
        assert_eq!((mpv_disparity_width(disp), mpv_disparity_height(disp)), (w, h));
        assert_eq!(mpv_disparity_get(disp, 48, 32), 5);
        assert_eq!(mpv_disparity_get(disp, w, 0), -1);
        let mut buf = vec![0f32; w * h];
        assert_eq!(mpv_disparity_copy(disp, buf.as_mut_ptr(), buf.len()), MpvStatus::Ok);
        assert_eq!(buf[32 * w + 48], 5.0);
        assert_eq!(mpv_disparity_copy(disp, buf.as_mut_ptr(), 3), MpvStatus::InvalidArgument);
        mpv_disparity_free(disp);
        mpv_image_free(l);
        mpv_image_free(r);
    }
}

#[test]
fn errors_are_reported() {
    let mut img = ptr::null_mut();
    let missing = CString::new("/nonexistent/x.pgm").unwrap();
    assert_eq!(unsafe { mpv_image_load(missing.as_ptr(), &mut img) }, MpvStatus::Io);
    assert!(last_error().contains("x.pgm"));
    assert!(img.is_null());

    assert_eq!(unsafe { mpv_image_load(ptr::null(), &mut img) }, MpvStatus::NullPointer);
    assert_eq!(unsafe { mpv_image_new([0u8; 4].as_ptr(), 4, 1, 2, &mut img) }, MpvStatus::InvalidArgument);

    let a = image(&[0; 64], 8, 8);
    let b = image(&[0; 72], 9, 8);
    let mut disp = ptr::null_mut();
    assert_eq!(unsafe { mpv_match(a, b, ptr::null(), 4, 1, &mut disp) }, MpvStatus::Dimension);
    unsafe {
        mpv_image_free(a);
        mpv_image_free(b);
        mpv_image_free(ptr::null_mut());
    }
    let ok = image(&[1; 4], 2, 2);
    assert_eq!(last_error(), "");
    unsafe { mpv_image_free(ok) };
}

#[test]
fn detect_without_model_returns_json() {
    let scene = generate_synthetic_scene(&SceneSpec::road_with_obstacle(2)).unwrap();
    let (w, h) = (scene.pair.width(), scene.pair.height());
    let l = image(scene.pair.left().data(), w, h);
    let r = image(scene.pair.right().data(), w, h);
    let mut json = ptr::null_mut();
    let status = unsafe { mpv_detect(l, r, ptr::null(), ptr::null(), 1, 0, &mut json) };
    assert_eq!(status, MpvStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe {
        mpv_string_free(json);
        mpv_image_free(l);
        mpv_image_free(r);
    }
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["detections"].as_array().unwrap().is_empty());
    assert!(!v["rois"].as_array().unwrap().is_empty());
    assert!(v.get("timings").is_none());
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mpvstereo.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["mpv_match", "mpv_detect", "mpv_cascade_classify", "MPV_STATUS_NULL_POINTER"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
            .expect("C compiler available");
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
