use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ma4div::trainer::reinforce::SequentialPolicy;
use ma4div::trainer::{ModelSpec, QmixModel};
use ma4div_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ma4div_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn generated(queries: usize, docs: usize) -> *mut Ma4divDataset {
    let mut ds = ptr::null_mut();
    let st = unsafe { ma4div_dataset_generate(3, queries, docs, 4, 8, 0.3, 0.9, &mut ds) };
    assert_eq!(st, Ma4divStatus::Ok);
    ds
}

fn is_permutation(order: &[usize]) -> bool {
    let mut v = order.to_vec();
    v.sort_unstable();
    v.iter().enumerate().all(|(i, &x)| i == x)
}

#[test]
fn generate_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("d.jsonl"));
    let ds = generated(5, 6);
    unsafe {
        assert_eq!(ma4div_dataset_len(ds), 5);
        assert_eq!(ma4div_dataset_save(ds, path.as_ptr()), Ma4divStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ma4div_dataset_load(path.as_ptr(), &mut back), Ma4divStatus::Ok);
        assert_eq!(ma4div_dataset_len(back), 5);
        let mut n = 0;
        assert_eq!(ma4div_dataset_num_docs(back, 4, &mut n), Ma4divStatus::Ok);
        assert_eq!(n, 6);
        ma4div_dataset_free(back);
        ma4div_dataset_free(ds);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = CString::new("/nonexistent/d.jsonl").unwrap();
        assert_eq!(ma4div_dataset_load(missing.as_ptr(), &mut ds), Ma4divStatus::Io);
        assert!(ds.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(ma4div_dataset_load(ptr::null(), &mut ds), Ma4divStatus::NullPointer);
        assert_eq!(
            ma4div_dataset_generate(0, 2, 3, 2, 4, 1.5, 0.9, &mut ds),
            Ma4divStatus::InvalidArgument
        );
        assert!(last_error().contains("coverage_rate"));

        let ds = generated(2, 4);
        let mut n = 0;
        assert_eq!(ma4div_dataset_num_docs(ds, 9, &mut n), Ma4divStatus::InvalidArgument);
        let mut small = [0usize; 2];
        assert_eq!(
            ma4div_baseline_rank(ds, 0, Ma4divBaseline::Mmr, 0.5, 0.5, small.as_mut_ptr(), 2),
            Ma4divStatus::BufferTooSmall
        );
        let mut scores = Ma4divScores::default();
        let bad = [0usize, 0, 1, 2];
        assert_eq!(
            ma4div_score_ranking(ds, 0, bad.as_ptr(), 4, 0.5, 4, &mut scores),
            Ma4divStatus::InvalidArgument
        );
        assert_eq!(ma4div_dataset_len(ptr::null()), 0);
        ma4div_dataset_free(ds);
        ma4div_dataset_free(ptr::null_mut());
        ma4div_model_free(ptr::null_mut());

        let junk = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(junk.path(), b"not a checkpoint").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(
            ma4div_model_load(cstr(junk.path()).as_ptr(), &mut model),
            Ma4divStatus::Checkpoint
        );
    }
}

#[test]
fn oracle_scores_perfectly() {
    let ds = generated(3, 6);
    unsafe {
        for q in 0..3 {
            let mut order = [0usize; 6];
            assert_eq!(
                ma4div_baseline_rank(ds, q, Ma4divBaseline::Oracle, 0.0, 0.5, order.as_mut_ptr(), 6),
                Ma4divStatus::Ok
            );
            assert!(is_permutation(&order));
            let mut s = Ma4divScores::default();
            assert_eq!(
                ma4div_score_ranking(ds, q, order.as_ptr(), 6, 0.5, 6, &mut s),
                Ma4divStatus::Ok
            );
            assert!((s.alpha_ndcg - 1.0).abs() < 1e-12, "{s:?}");
            assert!((0.0..=1.0).contains(&s.s_recall) && s.err_ia > 0.0);
        }
        ma4div_dataset_free(ds);
    }
}

#[test]
fn checkpointed_models_rank_queries() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let qmix = QmixModel::new(&ModelSpec::default(), 8, 5, &mut rng).unwrap();
    let qmix_path = dir.path().join("qmix.bin");
    qmix.to_checkpoint(serde_json::json!({})).unwrap().save(&qmix_path).unwrap();
    let policy = SequentialPolicy::new(8, &[16], &mut rng).unwrap();
    let policy_path = dir.path().join("policy.bin");
    policy.to_checkpoint().save(&policy_path).unwrap();

    let ds = generated(4, 5);
    unsafe {
        for path in [&qmix_path, &policy_path] {
            let mut model = ptr::null_mut();
            assert_eq!(ma4div_model_load(cstr(path).as_ptr(), &mut model), Ma4divStatus::Ok);
            for q in 0..4 {
                let mut order = [usize::MAX; 5];
                assert_eq!(
                    ma4div_model_rank(model, ds, q, order.as_mut_ptr(), order.len()),
                    Ma4divStatus::Ok
                );
                assert!(is_permutation(&order));
            }
            ma4div_model_free(model);
        }
        ma4div_dataset_free(ds);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"ma4div.h\"\n\
         int main(void) {\n\
           Ma4divDataset *ds = NULL;\n\
           Ma4divStatus st = ma4div_dataset_generate(1, 2, 3, 2, 4, 0.3, 0.9, &ds);\n\
           size_t order[3];\n\
           Ma4divScores s;\n\
           if (st == MA4DIV_STATUS_OK) {\n\
             ma4div_baseline_rank(ds, 0, MA4DIV_BASELINE_XQUAD, 0.5, 0.5, order, 3);\n\
             ma4div_score_ranking(ds, 0, order, 3, 0.5, 3, &s);\n\
           }\n\
           ma4div_dataset_free(ds);\n\
           return (int)st;\n\
         }\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header)
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler available; skipping");
            return;
        }
    };
    assert!(status.success());
}
