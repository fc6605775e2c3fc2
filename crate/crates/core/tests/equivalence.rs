use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tc_core::corpus;
use tc_core::frontend::check_program;
use tc_core::pipeline::{check_against_reference, random_inputs, random_options, sample_sizes};

#[test]
fn random_options_agree_with_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (stem, _, src) in corpus::CORPUS {
        let c = check_program(src).unwrap().remove(0);
        let mut accepted = 0;
        for _ in 0..200 {
            if accepted == 15 {
                break;
            }
            let (sizes, i) = sample_sizes(&c, &mut rng, 12, 2048).unwrap();
            let opts = random_options(&mut rng);
            let b = random_inputs(&i, &mut rng);
            let Ok((r, diff)) = check_against_reference(&i, &opts, &b) else { continue };
            accepted += 1;
            assert_eq!(diff, None, "{stem} {sizes:?} {opts:?}");
            assert!(r.races.is_empty(), "{stem} {sizes:?} {opts:?}: {:?}", r.races[0]);
        }
        assert_eq!(accepted, 15, "{stem}: too few accepted options");
    }
}

#[test]
fn rejected_options_fail_with_typed_errors() {
    use tc_core::pipeline::CompileError;
    use tc_core::schedule::ScheduleError;
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for (stem, _, src) in corpus::CORPUS {
        let c = check_program(src).unwrap().remove(0);
        for _ in 0..20 {
            let (_, i) = sample_sizes(&c, &mut rng, 8, 1024).unwrap();
            let opts = random_options(&mut rng);
            let b = random_inputs(&i, &mut rng);
            if let Err(e) = check_against_reference(&i, &opts, &b) {
                assert!(matches!(e, CompileError::Schedule(ScheduleError::NoParallelOuterBand)), "{stem}: {e}");
            }
        }
    }
}
