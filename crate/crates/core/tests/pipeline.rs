use std::io::Cursor;

use dota_core::eval::{run_records, Summary};
use dota_core::stream_io::{self, RawRecord};
use dota_core::synth::{bayes_oracle_accuracy, generate, SynthConfig, SynthSpec};
use dota_core::{AdaptConfig, DotaError, EmbeddingRecord, FeedbackMode, Session};

fn files(dir: &std::path::Path, n: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf, SynthSpec) {
    let spec = SynthSpec::from_config(&SynthConfig { n_samples: n, seed, ..SynthConfig::default() }).unwrap();
    let out = generate(&spec).unwrap();
    let demb = dir.join("s.demb");
    let dcls = dir.join("s.dcls");
    stream_io::write_stream_file(&demb, spec.dim as u32, &out.records).unwrap();
    stream_io::write_classifier_file(&dcls, &out.classifier).unwrap();
    (demb, dcls, spec)
}

#[test]
fn files_round_trip_into_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let (demb, dcls, synth) = files(dir.path(), 1500, 21);
    let spec = stream_io::read_classifier(&dcls).unwrap();
    let records = stream_io::read_all_records(&demb, &spec).unwrap();
    assert_eq!(records.len(), 1500);

    let out = generate(&synth).unwrap();
    let direct: Vec<EmbeddingRecord> = out.records.iter().map(RawRecord::ingest).collect::<Result<_, _>>().unwrap();
    assert_eq!(records, direct);

    let report = run_records(&records, &spec, &AdaptConfig::default(), 500).unwrap();
    let s = &report.summary;
    let bayes = bayes_oracle_accuracy(&records, &out.truth).unwrap();
    assert!(s.zs_acc.unwrap() > 0.2 && s.zs_acc.unwrap() < bayes);
    assert_eq!(s.n_samples, 1500);
    assert_eq!(s.feedback_count, 0);
    assert_eq!(Summary::from_log(&report.log, 500).unwrap(), *s);

    let path = dir.path().join("r.jsonl");
    stream_io::write_report_file(&path, &report).unwrap();
    let (log, footer) = stream_io::read_report(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(log, report.log);
    assert_eq!(footer.summary, report.summary);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (demb, dcls, _) = files(dir.path(), 1200, 22);
    let spec = stream_io::read_classifier(&dcls).unwrap();
    let records = stream_io::read_all_records(&demb, &spec).unwrap();
    let cfg = AdaptConfig { gamma: 0.15, feedback_mode: FeedbackMode::Oracle, ..AdaptConfig::default() };
    let full = run_records(&records, &spec, &cfg, 100).unwrap();

    for cut in [1, 517, 1199] {
        let mut s = Session::new(spec.clone(), cfg.clone()).unwrap();
        for r in &records[..cut] {
            s.process_sample(r).unwrap();
        }
        let mut buf = Vec::new();
        stream_io::write_checkpoint(&mut buf, s.state()).unwrap();
        drop(s);
        let state = stream_io::read_checkpoint(Cursor::new(&buf)).unwrap();
        assert_eq!(state.position, cut as u64);
        let mut resumed = Session::from_state(state);
        let rest = stream_io::read_stream_for(&demb, &spec).unwrap().skip(cut);
        let report = resumed.run_stream(rest, 100).unwrap();
        assert_eq!(report.log, full.log, "cut at {cut}");
        assert_eq!(resumed.gda(), &{
            let mut s = Session::new(spec.clone(), cfg.clone()).unwrap();
            s.run_stream(records.iter().cloned().map(Ok), 100).unwrap();
            s.into_state().gda
        });
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (demb, dcls, _) = files(dir.path(), 50, 23);
    let spec = stream_io::read_classifier(&dcls).unwrap();
    let mut s = Session::new(spec.clone(), AdaptConfig::default()).unwrap();
    s.run_stream(stream_io::read_stream_for(&demb, &spec).unwrap(), 10).unwrap();
    let mut buf = Vec::new();
    stream_io::write_checkpoint(&mut buf, s.state()).unwrap();
    let last = buf.len() - 3;
    buf[last] ^= 0x20;
    assert!(matches!(stream_io::read_checkpoint(Cursor::new(&buf)), Err(DotaError::Corruption(_))));
    buf.truncate(buf.len() / 2);
    assert!(stream_io::read_checkpoint(Cursor::new(&buf)).is_err());
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (demb, dcls, _) = files(dir.path(), 800, 24);
    let spec = stream_io::read_classifier(&dcls).unwrap();
    let records = stream_io::read_all_records(&demb, &spec).unwrap();
    for strategy in ["confidence", "similarity", "random"] {
        let cfg = AdaptConfig {
            gamma: 0.15,
            feedback_mode: FeedbackMode::Oracle,
            strategy: strategy.parse().unwrap(),
            ..AdaptConfig::default()
        };
        let a = run_records(&records, &spec, &cfg, 100).unwrap();
        let b = run_records(&records, &spec, &cfg, 100).unwrap();
        let bits = |r: &dota_core::RunReport| {
            r.log.iter().map(|p| (p.confidence.to_bits(), p.fused_confidence.to_bits(), p.lambda.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(a.log, b.log);
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn mismatched_stream_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (_, dcls, _) = files(dir.path(), 10, 25);
    let spec = stream_io::read_classifier(&dcls).unwrap();
    let other = dir.path().join("o.demb");
    let rec = RawRecord { id: "a".into(), values: vec![1.0, 0.0, 0.0], label: None, asset_uri: None };
    stream_io::write_stream_file(&other, 3, &[rec]).unwrap();
    assert!(matches!(stream_io::read_all_records(&other, &spec), Err(DotaError::Compatibility(_))));
}
