use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use anchorlm::checkpoint::Checkpoint;
use anchorlm::corpus::{build_vocab_from_texts, AnchorPolicy, SegmentedText};
use anchorlm::mask::anchor_mask;
use anchorlm::model::{init_weights, ModelConfig};
use anchorlm::synth::synth_corpus;
use anchorlm_ffi::*;

fn checkpoint(dir: &Path) -> PathBuf {
    let corpus = synth_corpus(3, 0, 20_000);
    let policy = AnchorPolicy::AppendedToken;
    let vocab = build_vocab_from_texts([corpus.as_str()], &policy, 500).unwrap();
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_len: 64,
        ..ModelConfig::desk(vocab.len())
    };
    let mut ck = Checkpoint::new(init_weights(&cfg, 3, vocab.anchor()).unwrap());
    ck.vocab = Some(vocab);
    ck.policy = Some(policy);
    ck.mask_mode = Some("ansan".into());
    let out = dir.join("ckpt");
    ck.save(&out).unwrap();
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(alm_last_error()) }.to_string_lossy().into_owned()
}

fn load(path: &Path) -> *mut AlmModel {
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { alm_model_load(p.as_ptr(), &mut m) }, AlmStatus::Ok, "{}", last_error());
    m
}

fn gen(m: *const AlmModel, prompt: &str, reduce: i32) -> (String, usize) {
    let p = CString::new(prompt).unwrap();
    let mut text = ptr::null_mut();
    let mut live = 0;
    assert_eq!(unsafe { alm_generate(m, p.as_ptr(), 12, reduce, &mut text, &mut live) }, AlmStatus::Ok);
    let s = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    unsafe { alm_string_free(text) };
    (s, live)
}

#[test]
fn model_handle_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let m = load(&checkpoint(tmp.path()));
    assert_eq!(unsafe { alm_model_context_len(m) }, 64);
    assert!(unsafe { alm_model_vocab_size(m) } > 10);

    let (on, live_on) = gen(m, "the cat eats fish . the dog is", 1);
    let (off, live_off) = gen(m, "the cat eats fish . the dog is", 0);
    assert_eq!(on, off);
    assert!(live_on <= live_off);

    let ctx = CString::new("the cat eats").unwrap();
    let cont = CString::new("fish .").unwrap();
    let mut lp = 0.0;
    assert_eq!(unsafe { alm_score(m, ctx.as_ptr(), cont.as_ptr(), &mut lp) }, AlmStatus::Ok);
    assert!(lp < 0.0 && lp.is_finite());

    let text = CString::new("the cat eats fish .\nthe dog is red .\n").unwrap();
    let mut ppl = 0.0;
    assert_eq!(unsafe { alm_perplexity(m, text.as_ptr(), &mut ppl) }, AlmStatus::Ok);
    assert!(ppl > 1.0 && ppl.is_finite());

    unsafe { alm_model_free(m) };
}

#[test]
fn errors_carry_status_and_message() {
    let missing = CString::new("/nonexistent/ckpt").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { alm_model_load(missing.as_ptr(), &mut m) }, AlmStatus::Input);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { alm_model_load(ptr::null(), &mut m) }, AlmStatus::NullPointer);
    let mut out = ptr::null_mut();
    let p = CString::new("x").unwrap();
    assert_eq!(unsafe { alm_generate(ptr::null(), p.as_ptr(), 4, 1, &mut out, ptr::null_mut()) }, AlmStatus::NullPointer);

    let tmp = tempfile::tempdir().unwrap();
    let m = load(&checkpoint(tmp.path()));
    let long = CString::new("the cat eats fish . ".repeat(20)).unwrap();
    assert_eq!(unsafe { alm_generate(m, long.as_ptr(), 4, 1, &mut out, ptr::null_mut()) }, AlmStatus::Contract);
    assert!(out.is_null());
    let bad = [0xffu8, 0];
    assert_eq!(unsafe { alm_generate(m, bad.as_ptr().cast(), 4, 1, &mut out, ptr::null_mut()) }, AlmStatus::InvalidUtf8);
    assert_eq!(unsafe { alm_generate(m, p.as_ptr(), 0, 1, &mut out, ptr::null_mut()) }, AlmStatus::Config);
    gen(m, "the cat", 1);
    assert_eq!(last_error(), "");
    unsafe { alm_model_free(m) };
    unsafe { alm_model_free(ptr::null_mut()) };
    unsafe { alm_string_free(ptr::null_mut()) };
}

#[test]
fn mask_matches_core() {
    let anchors = [0u8, 0, 1, 0, 0, 1, 0];
    let seqs = [0usize, 0, 0, 1, 1, 1, 2];
    let mut out = vec![9u8; 49];
    assert_eq!(unsafe { alm_anchor_mask(anchors.as_ptr(), seqs.as_ptr(), 7, out.as_mut_ptr()) }, AlmStatus::Ok);
    let mut seg = SegmentedText::new();
    for (&a, &s) in anchors.iter().zip(&seqs) {
        seg.push(0, a != 0, s);
    }
    let core = anchor_mask(&seg);
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(out[i * 7 + j] != 0, core.get(i, j), "({i}, {j})");
        }
    }
    let bad = [1usize, 0];
    assert_eq!(unsafe { alm_anchor_mask(anchors.as_ptr(), bad.as_ptr(), 2, out.as_mut_ptr()) }, AlmStatus::Contract);
}

#[test]
fn reduction_keeps_anchors_and_tail() {
    let pos = [0usize, 1, 2, 3, 4, 5, 6, 7];
    let anchors = [0u8, 1, 0, 0, 1, 0, 1, 0];
    let mut keep = [0u8; 8];
    let mut kept = 0;
    assert_eq!(unsafe { alm_reduce(pos.as_ptr(), anchors.as_ptr(), 8, 0, keep.as_mut_ptr(), &mut kept) }, AlmStatus::Ok);
    assert_eq!(keep, [0, 1, 0, 0, 1, 0, 1, 1]);
    assert_eq!(kept, 4);
    assert_eq!(unsafe { alm_reduce(pos.as_ptr(), anchors.as_ptr(), 8, 3, keep.as_mut_ptr(), &mut kept) }, AlmStatus::Ok);
    assert_eq!(keep, [1, 1, 1, 0, 1, 0, 1, 1]);
    let unordered = [3usize, 1];
    assert_eq!(unsafe { alm_reduce(unordered.as_ptr(), anchors.as_ptr(), 2, 0, keep.as_mut_ptr(), &mut kept) }, AlmStatus::Contract);
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/anchorlm.h")
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(header())
            .output()
            .expect("C compiler available");
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_program_links_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(tmp.path());
    // target/<profile>/deps/<test> -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libanchorlm_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "anchorlm.h"
int main(int argc, char **argv) {
    AlmModel *m = NULL;
    if (alm_model_load(argv[1], &m) != ALM_STATUS_OK) { fprintf(stderr, "%s\n", alm_last_error()); return 1; }
    char *text = NULL;
    size_t live = 0;
    if (alm_generate(m, "the cat eats", 5, 1, &text, &live) != ALM_STATUS_OK) return 2;
    double ppl = 0;
    if (alm_perplexity(m, "the cat eats fish .\n", &ppl) != ALM_STATUS_OK) return 3;
    printf("%zu %d\n", live, ppl > 1.0);
    alm_string_free(text);
    alm_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = tmp.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).trim().ends_with(" 1"));
}
