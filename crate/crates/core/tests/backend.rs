use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tc_core::backend::{emit_cuda_text, emulate, read_tensor, run_reference, write_tensor, BackendError, Bindings, Tensor, Value};
use tc_core::corpus;
use tc_core::frontend::{check_program, ScalarType};
use tc_core::pipeline::{compare_outputs, compile, random_inputs, sample_sizes};
use tc_core::schedule::MappingOptions;
use tc_core::semantics::{instantiate, InstantiatedDef};

fn inst(src: &str, sizes: &[(&str, i64)]) -> InstantiatedDef {
    let c = check_program(src).unwrap().remove(0);
    instantiate(&c, &sizes.iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap()
}

fn floats(t: &Tensor) -> Vec<f64> {
    t.data.iter().map(|v| v.as_f64()).collect()
}

fn bind(pairs: Vec<(&str, Tensor)>) -> Bindings {
    Bindings { tensors: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(), scalars: Default::default() }
}

#[test]
fn matrix_vector_by_hand() {
    let i = inst(corpus::source("mv").unwrap(), &[("M", 2), ("K", 3)]);
    let b = bind(vec![
        ("A", Tensor::from_f64(ScalarType::Float, &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])),
        ("x", Tensor::from_f64(ScalarType::Float, &[3], vec![1.0, 1.0, 1.0])),
    ]);
    let r = run_reference(&i, &b).unwrap();
    assert_eq!(floats(&r["C"]), vec![6.0, 15.0]);
    let opts = MappingOptions { tile_sizes: vec![1], block_shape: vec![2], thread_shape: vec![1], ..Default::default() };
    let got = emulate(&i, &compile(&i, &opts).unwrap().ir, &b).unwrap();
    assert_eq!(floats(&got.outputs["C"]), vec![6.0, 15.0]);
    assert!(got.races.is_empty());
}

#[test]
fn maxpool_of_ramp_picks_window_corner() {
    let i = inst(corpus::source("maxpool2x2").unwrap(), &[("B", 1), ("C", 1), ("H", 4), ("W", 4)]);
    let b = bind(vec![("in", Tensor::from_f64(ScalarType::Float, &[1, 1, 4, 4], (0..16).map(|x| x as f64).collect()))]);
    let r = run_reference(&i, &b).unwrap();
    assert_eq!(r["out"].shape, vec![1, 1, 2, 2]);
    assert_eq!(floats(&r["out"]), vec![5.0, 7.0, 13.0, 15.0]);
}

#[test]
fn gather_out_of_range_index_is_reported() {
    let i = inst(corpus::source("gather").unwrap(), &[("N", 5), ("A", 1), ("B", 2)]);
    let b = bind(vec![
        ("X", Tensor::from_f64(ScalarType::Float, &[5], vec![1.0; 5])),
        ("I", Tensor::from_i64(ScalarType::Int, &[1, 2], vec![0, 7])),
    ]);
    let err = run_reference(&i, &b).unwrap_err();
    assert!(matches!(&err, BackendError::IndexOutOfRange { tensor, index, .. } if tensor == "X" && index == &vec![7]), "{err}");
    let c = compile(&i, &MappingOptions::naive()).unwrap();
    assert!(matches!(emulate(&i, &c.ir, &b), Err(BackendError::IndexOutOfRange { .. })));
}

#[test]
fn wrong_input_shape_is_rejected() {
    let i = inst(corpus::source("mv").unwrap(), &[("M", 2), ("K", 3)]);
    let b = bind(vec![
        ("A", Tensor::from_f64(ScalarType::Float, &[3, 2], vec![0.0; 6])),
        ("x", Tensor::from_f64(ScalarType::Float, &[3], vec![0.0; 3])),
    ]);
    assert!(matches!(run_reference(&i, &b), Err(BackendError::ShapeMismatch { .. })));
    let missing = bind(vec![("A", Tensor::from_f64(ScalarType::Float, &[2, 3], vec![0.0; 6]))]);
    assert!(matches!(run_reference(&i, &missing), Err(BackendError::MissingInput(n)) if n == "x"));
}

#[test]
fn naive_mapping_is_bit_exact_across_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (stem, _, src) in corpus::CORPUS {
        let c = check_program(src).unwrap().remove(0);
        let (_, i) = sample_sizes(&c, &mut rng, 8, 2048).unwrap();
        let b = random_inputs(&i, &mut rng);
        let r = run_reference(&i, &b).unwrap();
        let got = emulate(&i, &compile(&i, &MappingOptions::naive()).unwrap().ir, &b).unwrap();
        assert_eq!(compare_outputs(&r, &got.outputs, 0.0), None, "{stem}");
        assert!(got.races.is_empty(), "{stem}");
    }
}

#[test]
fn sgemm_mapped_matches_reference() {
    let i = inst(corpus::source("sgemm").unwrap(), &[("N", 16), ("M", 16), ("K", 16)]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = random_inputs(&i, &mut rng);
    let r = run_reference(&i, &b).unwrap();
    let opts = MappingOptions { tile_sizes: vec![8, 8, 4], block_shape: vec![2, 2], thread_shape: vec![4, 4], use_private: true, ..Default::default() };
    let c = compile(&i, &opts).unwrap();
    let got = emulate(&i, &c.ir, &b).unwrap();
    assert!(got.races.is_empty());
    assert_eq!(compare_outputs(&r, &got.outputs, 1e-4), None);
}

#[test]
fn removing_any_barrier_of_promoted_sgemm_races() {
    let i = inst(corpus::source("sgemm").unwrap(), &[("N", 8), ("M", 8), ("K", 8)]);
    let b = random_inputs(&i, &mut ChaCha8Rng::seed_from_u64(4));
    let opts = MappingOptions { tile_sizes: vec![4, 4, 4], block_shape: vec![2, 2], thread_shape: vec![4, 4], ..Default::default() };
    let c = compile(&i, &opts).unwrap();
    assert!(emulate(&i, &c.ir, &b).unwrap().races.is_empty());
    let n = c.ir.barrier_count();
    assert!(n >= 2);
    let racy = (0..n).filter(|k| emulate(&i, &c.ir.without_barrier(*k), &b).map(|r| !r.races.is_empty()).unwrap_or(false)).count();
    assert!(racy >= 1, "no barrier removal produced a race");
    assert!(!emulate(&i, &c.ir.without_barrier(0), &b).unwrap().races.is_empty(), "the first barrier guards the copy-in");
}

#[test]
fn unroll_factor_does_not_change_results() {
    let i = inst(corpus::source("sgemm").unwrap(), &[("N", 8), ("M", 8), ("K", 8)]);
    let b = random_inputs(&i, &mut ChaCha8Rng::seed_from_u64(5));
    let base = MappingOptions { tile_sizes: vec![4, 4, 4], block_shape: vec![2, 2], thread_shape: vec![2, 2], ..Default::default() };
    let ref_out = emulate(&i, &compile(&i, &base).unwrap().ir, &b).unwrap().outputs;
    for u in [2, 8, 64] {
        for copies in [false, true] {
            let o = MappingOptions { unroll_factor: u, unroll_copy_shared: copies, ..base.clone() };
            let got = emulate(&i, &compile(&i, &o).unwrap().ir, &b).unwrap();
            assert_eq!(got.outputs, ref_out, "unroll {u}");
        }
    }
}

#[test]
fn cuda_text_has_shared_buffers_and_barriers() {
    let i = inst(corpus::source("sgemm").unwrap(), &[("N", 32), ("M", 32), ("K", 32)]);
    let c = compile(&i, &MappingOptions::default()).unwrap();
    let text = emit_cuda_text(&i, &c.ir);
    assert!(text.contains("__global__ void sgemm("));
    assert!(text.contains("__shared__ float shared_A[32][32];"));
    assert_eq!(text.matches("__syncthreads();").count(), c.ir.barrier_count());
    assert!(text.contains("blockIdx.x") && text.contains("threadIdx.x"));
}

#[test]
fn tensor_files_round_trip() {
    let t = Tensor::from_f64(ScalarType::Double, &[2, 2], vec![1.5, -2.0, 0.0, 1e300]);
    let mut buf = Vec::new();
    write_tensor(&mut buf, &t).unwrap();
    assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    let ints = Tensor::from_i64(ScalarType::Long, &[3], vec![-1, 0, i64::MAX]);
    let mut buf = Vec::new();
    write_tensor(&mut buf, &ints).unwrap();
    assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), ints);
    assert!(matches!(read_tensor(&mut &buf[..buf.len() - 1]), Err(BackendError::BadTensorFile(_))));
}

#[test]
fn integer_and_float_scalars_reach_kernels() {
    let i = inst("def axpy(float a, float(N) X, float(N) Y) -> (Z) {\n  Z(i) = a * X(i) + Y(i)\n}\n", &[("N", 4)]);
    let mut b = bind(vec![
        ("X", Tensor::from_f64(ScalarType::Float, &[4], vec![1.0, 2.0, 3.0, 4.0])),
        ("Y", Tensor::from_f64(ScalarType::Float, &[4], vec![1.0; 4])),
    ]);
    b.scalars.insert("a".into(), Value::F(2.0));
    assert_eq!(floats(&run_reference(&i, &b).unwrap()["Z"]), vec![3.0, 5.0, 7.0, 9.0]);
}
