use hiant::datasets::generate_corpus;
use hiant::finegrained::TclWeights;
use hiant::training::{train, EpochRecord};
use hiant::{Config, CorpusSpec, Stage};

mod common;

fn generator_config(epochs: usize, tcl: TclWeights) -> Config {
    let mut cfg = common::tiny_config();
    cfg.train.stage = Stage::Generator;
    cfg.train.epochs = epochs;
    cfg.train.held_out_fraction = 0.0;
    cfg.model.tcl = tcl;
    cfg
}

fn last(trace: &[EpochRecord]) -> &EpochRecord {
    trace.last().unwrap()
}

#[test]
fn single_class_video_is_learned_exactly() {
    // two fine classes, but the identity transition matrix keeps one label
    let spec = CorpusSpec {
        n_videos: 1,
        n_coarse: 1,
        n_fine: 2,
        transition_matrix: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        ..common::tiny_spec()
    };
    let corpus = generate_corpus(&spec).unwrap();
    assert_eq!(corpus.videos[0].labels.segments().len(), 1);
    let mut cfg = generator_config(
        40,
        TclWeights {
            lambda_intra: 0.0,
            lambda_inter: 0.0,
        },
    );
    cfg.train.lr_peak = 1e-2;
    cfg.train.weight_decay = 0.0;
    let out = train(&corpus, &cfg, 1).unwrap();
    let ce = last(&out.trace).loss_ce.unwrap();
    assert!(ce < 0.02, "final cross-entropy {ce}");
    assert!(ce < out.trace[0].loss_ce.unwrap());
}

#[test]
fn training_is_deterministic() {
    let corpus = generate_corpus(&common::tiny_spec()).unwrap();
    let cfg = common::tiny_config();
    let a = train(&corpus, &cfg, 7).unwrap();
    let b = train(&corpus, &cfg, 7).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model.named_tensors(), b.model.named_tensors());
    let c = train(&corpus, &cfg, 8).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn small_run_stays_finite() {
    let corpus = generate_corpus(&common::tiny_spec()).unwrap();
    let mut cfg = common::tiny_config();
    cfg.train.epochs = 5;
    let out = train(&corpus, &cfg, 1).unwrap();
    assert_eq!(out.trace.len(), 10);
    for r in &out.trace {
        assert!(r.loss_total.is_finite(), "{r:?}");
        for v in [r.loss_ce, r.loss_intra, r.loss_inter, r.loss_seg, r.loss_ant, r.held_out_seg_acc, r.held_out_moc]
            .into_iter()
            .flatten()
        {
            assert!(v.is_finite(), "{r:?}");
        }
    }
}

fn final_intra(tcl: TclWeights, seed: u64) -> (f64, f64) {
    let spec = CorpusSpec {
        drift_rate: 0.05,
        ..common::tiny_spec()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let out = train(&corpus, &generator_config(20, tcl), seed).unwrap();
    (out.trace[0].loss_intra.unwrap(), last(&out.trace).loss_intra.unwrap())
}

#[test]
fn consistency_loss_tightens_clusters_on_drifting_video() {
    let on = TclWeights {
        lambda_intra: 1.0,
        lambda_inter: 0.1,
    };
    let off = TclWeights {
        lambda_intra: 0.0,
        lambda_inter: 0.0,
    };
    let mut with = 0.0;
    let mut without = 0.0;
    for seed in [1, 10, 13452] {
        let (first, end) = final_intra(on, seed);
        assert!(end < first, "seed {seed}: intra {first} -> {end}");
        with += end;
        without += final_intra(off, seed).1;
    }
    assert!(with < without, "with consistency loss {with}, without {without}");
}
