use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "codecurate.h"

int main(void) {
    float v[32];
    if (cc_stub_embed("load the config file", 32, v) != CC_STATUS_OK) return 1;
    double norm = 0.0;
    for (int i = 0; i < 32; i++) norm += (double)v[i] * v[i];
    if (norm < 0.999 || norm > 1.001) return 2;

    const char *ids[2] = {"a", "b"};
    float rows[4] = {1.0f, 0.0f, 0.0f, 1.0f};
    CcVectorStore *store = NULL;
    if (cc_store_from_rows(ids, rows, 2, 2, &store) != CC_STATUS_OK) return 3;
    float q[2] = {0.2f, 1.0f};
    size_t idx[2];
    float scores[2];
    size_t len = 0;
    if (cc_search(store, q, 2, 2, idx, scores, &len) != CC_STATUS_OK || len != 2 || idx[0] != 1) return 4;
    cc_store_free(store);

    if (cc_stub_embed(NULL, 4, v) != CC_STATUS_NULL_ARGUMENT) return 5;
    if (cc_last_error() == NULL || strstr(cc_last_error(), "null") == NULL) return 6;

    double tau = 0.0;
    if (cc_tau_at(0, 10, 0.05, 0.001, &tau) != CC_STATUS_OK || tau != 0.05) return 7;
    printf("ok %s\n", cc_version());
    return 0;
}
"#;

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

fn compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .map(str::to_string)
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header_dir().join("codecurate.h")).unwrap();
    for name in [
        "cc_last_error",
        "cc_stub_embed",
        "cc_tau_at",
        "cc_store_from_rows",
        "cc_store_load",
        "cc_store_free",
        "cc_search",
        "cc_cache_compute",
        "cc_cache_load",
        "cc_cache_free",
        "cc_consistency_filter",
        "cc_sample_negatives",
        "cc_parse_and_repair",
        "cc_metric",
        "typedef struct CcVectorStore CcVectorStore",
        "typedef struct CcSimilarityCache CcSimilarityCache",
        "CC_STATUS_OK = 0",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_compiles_links_and_runs() {
    let cc = compiler().expect("a C compiler is required for the header test");
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libcodecurate_ffi.a");
    assert!(
        lib.is_file(),
        "static library not built at {}",
        lib.display()
    );

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
