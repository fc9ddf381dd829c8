mod common;

use std::sync::Arc;

use beam_core::cep::{match_oracle, Pattern};
use beam_core::event::Event;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{engine_run, normalized, random_case, random_tables};

#[test]
fn engine_agrees_with_oracle_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut nonempty = 0;
    for case in 0..400 {
        let (src, log) = random_case(&mut rng);
        let p = Arc::new(Pattern::compile(&src, random_tables()).unwrap());
        let want = normalized(&match_oracle(&p, &log).unwrap());
        let got = normalized(&engine_run(&p, &log, None));
        assert_eq!(got, want, "case {case}: {src}");
        nonempty += usize::from(!want.is_empty());
    }
    eprintln!("cases with detections: {nonempty}/400");
    assert!(nonempty >= 100, "generator too sparse: {nonempty}");
}

#[test]
fn periodic_expiry_does_not_change_detections() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let (src, log) = random_case(&mut rng);
        let p = Arc::new(Pattern::compile(&src, random_tables()).unwrap());
        let lazy = engine_run(&p, &log, None);
        let eager = engine_run(&p, &log, Some(3));
        assert_eq!(lazy, eager, "case {case}: {src}");
    }
}

#[test]
fn detections_respect_window_and_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let (src, log) = random_case(&mut rng);
        let p = Arc::new(Pattern::compile(&src, random_tables()).unwrap());
        for d in engine_run(&p, &log, None) {
            assert!(d.t_end - d.t_start <= p.window_ms);
            let parents: Vec<&Event> = d
                .parents
                .iter()
                .map(|id| log.iter().find(|e| &e.id == id).unwrap())
                .collect();
            assert_eq!(d.t_start, parents.iter().map(|e| e.t_start).min().unwrap());
            assert_eq!(d.t_end, parents.iter().map(|e| e.t_end).max().unwrap());
        }
    }
}
