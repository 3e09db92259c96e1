use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ndarray::Array2;

use fieldgraph::features::FEATURE_DIM;
use fieldgraph::gcn::{init_params, model_forward};
use fieldgraph::graph::{save_graph, FieldGraph, Task};
use fieldgraph_ffi::*;

fn sample_graph(dir: &Path) -> (FieldGraph, CString) {
    let (n, n_real) = (6, 4);
    let mut features = Array2::zeros((n, FEATURE_DIM));
    let mut adjacency = Array2::zeros((n, n));
    for i in 0..n_real {
        for j in 0..FEATURE_DIM {
            features[[i, j]] = ((i * 7 + j * 3) % 10) as f64 / 10.0;
        }
        for j in 0..n_real {
            if i != j {
                adjacency[[i, j]] = 0.25;
            }
        }
    }
    let g = FieldGraph {
        n,
        n_real,
        features,
        adjacency,
        targets: vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        valid_mask: (0..n).map(|i| i < n_real).collect(),
        centroids: vec![(0.0, 0.0); n],
        task: Some(Task::Classification),
        source_id: "ffi".into(),
    };
    let path = dir.join("graph.json");
    save_graph(&g, &path).unwrap();
    (g, CString::new(path.to_str().unwrap()).unwrap())
}

fn last_error() -> String {
    let p = fg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn predictions_match_the_core_library() {
    let dir = tempfile::tempdir().unwrap();
    let (g, path) = sample_graph(dir.path());
    unsafe {
        let mut graph = ptr::null_mut();
        assert_eq!(fg_graph_load(path.as_ptr(), &mut graph), FgStatus::Ok);
        let (mut n, mut n_real) = (0usize, 0usize);
        assert_eq!(fg_graph_node_count(graph, &mut n, &mut n_real), FgStatus::Ok);
        assert_eq!((n, n_real), (6, 4));

        let mut model = ptr::null_mut();
        assert_eq!(fg_model_init(9, &mut model), FgStatus::Ok);
        let mut params = 0usize;
        assert_eq!(fg_model_param_count(model, &mut params), FgStatus::Ok);
        assert_eq!(params, 4577);

        let mut out = vec![f64::NAN; n];
        assert_eq!(fg_predict(model, graph, out.as_mut_ptr(), out.len()), FgStatus::Ok);
        // The handle holds the graph as reloaded from disk.
        let reloaded = fieldgraph::graph::load_graph(dir.path().join("graph.json")).unwrap();
        assert_eq!(out, model_forward(&reloaded, &init_params(9)).unwrap());
        assert_eq!(reloaded.n, g.n);

        assert_eq!(fg_predict(model, graph, out.as_mut_ptr(), 5), FgStatus::BufferTooSmall);
        assert!(last_error().contains("6 nodes"));

        fg_graph_free(graph);
        fg_model_free(model);
    }
}

#[test]
fn checkpoints_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(fg_model_init(2, &mut model), FgStatus::Ok);
        assert_eq!(fg_model_save(model, path.as_ptr()), FgStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(fg_model_load(path.as_ptr(), &mut back), FgStatus::Ok);
        let mut params = 0usize;
        assert_eq!(fg_model_param_count(back, &mut params), FgStatus::Ok);
        assert_eq!(params, 4577);
        fg_model_free(model);
        fg_model_free(back);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("absent.json").to_str().unwrap()).unwrap();
    let garbage_path = dir.path().join("garbage.json");
    std::fs::write(&garbage_path, "{ not json").unwrap();
    let garbage = CString::new(garbage_path.to_str().unwrap()).unwrap();
    unsafe {
        let mut graph = ptr::null_mut();
        assert_eq!(fg_graph_load(missing.as_ptr(), &mut graph), FgStatus::Io);
        assert!(graph.is_null());
        assert!(last_error().contains("absent.json"));
        assert_eq!(fg_graph_load(garbage.as_ptr(), &mut graph), FgStatus::Format);
        assert_eq!(fg_graph_load(ptr::null(), &mut graph), FgStatus::NullPointer);
        assert_eq!(fg_graph_load(missing.as_ptr(), ptr::null_mut()), FgStatus::NullPointer);
        let mut model = ptr::null_mut();
        assert_eq!(fg_model_load(garbage.as_ptr(), &mut model), FgStatus::Format);
        assert_eq!(fg_model_param_count(ptr::null(), &mut 0), FgStatus::NullPointer);
        let mut out = [0.0; 4];
        assert_eq!(fg_predict(ptr::null(), ptr::null(), out.as_mut_ptr(), 4), FgStatus::NullPointer);
        fg_graph_free(ptr::null_mut());
        fg_model_free(ptr::null_mut());
    }
    let version = unsafe { CStr::from_ptr(fg_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

/// Directory holding the shared library built alongside this test binary.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_generated_header() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = artifact_dir();
    assert!(lib_dir.join("libfieldgraph_ffi.so").exists(), "shared library missing in {}", lib_dir.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lfieldgraph_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());

    let (g, _) = sample_graph(dir.path());
    let out = Command::new(&exe).arg(dir.path().join("graph.json")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(&fields[..3], &["4577", "6", "4"]);
    let reloaded = fieldgraph::graph::load_graph(dir.path().join("graph.json")).unwrap();
    let want = model_forward(&reloaded, &init_params(0)).unwrap()[0];
    assert_eq!(fields[3].parse::<f64>().unwrap(), want);
    assert_eq!(reloaded.n_real, g.n_real);
}
