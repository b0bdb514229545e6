use tllm_core::data::{
    fewshot_take, load_csv, make_splits, parse_csv, synthesize, windows, write_csv, zeroshot_pair, SeriesDataset,
    Split, SplitSpec, SynthKind, SynthParams,
};
use tllm_core::Error;

fn series(name: &str, rows: usize, channels: usize) -> SeriesDataset {
    let values = (0..rows * channels).map(|i| ((i * 37) % 101) as f64 * 0.1 + (i % channels) as f64).collect();
    SeriesDataset::new(name, values, channels).unwrap()
}

fn ett_like(rows: usize, channels: usize) -> SeriesDataset {
    series("ETTh1", rows, channels)
}

#[test]
fn parses_headed_csv_with_date_column() {
    let text = "date,a,b\n2016-07-01 00:00:00,1.0,2.0\n2016-07-01 01:00:00,3,4.5\n";
    let ds = parse_csv("t", text.as_bytes()).unwrap();
    assert_eq!(ds.channels, 2);
    assert_eq!(ds.values, vec![1.0, 2.0, 3.0, 4.5]);
    assert_eq!(ds.columns, vec!["a", "b"]);
}

#[test]
fn non_numeric_first_column_is_dropped() {
    let ds = parse_csv("t", "stamp,x\nmon,1\ntue,2\n".as_bytes()).unwrap();
    assert_eq!(ds.values, vec![1.0, 2.0]);
}

#[test]
fn parse_errors_report_row_and_column() {
    match parse_csv("t", "a,b\n1,2\n3,\n".as_bytes()) {
        Err(Error::Parse { row, column, message }) => {
            assert_eq!((row, column), (3, 2));
            assert!(message.contains("missing"));
        }
        other => panic!("{other:?}"),
    }
    match parse_csv("t", "a,b\n1,2\nx,4\n".as_bytes()) {
        Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 1)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_csv("t", "a,b\n1,nan\n".as_bytes()), Err(Error::Parse { .. })));
    assert!(matches!(parse_csv("t", "a,b\n".as_bytes()), Err(Error::EmptyDataset(_))));
}

#[test]
fn csv_roundtrip() {
    let ds = synthesize(SynthKind::SineTrend, 3, 50, 2, &SynthParams { noise: 0.2, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    write_csv(&ds, &p).unwrap();
    let back = load_csv(&p).unwrap();
    assert_eq!(back.values, ds.values);
    assert_eq!(back.channels, 2);
}

#[test]
fn ett_shaped_input_gets_published_splits() {
    let ds = make_splits(ett_like(17420, 7), &SplitSpec::Auto).unwrap();
    let s = ds.splits().unwrap();
    assert_eq!(s.sizes(), (8209, 2785, 2785));
    assert_eq!(s.train.start, 0);
    assert_eq!(s.train.end, s.val.start);
    assert_eq!(s.val.end, s.test.start);
    assert_eq!(ds.granularity.as_deref(), Some("1 hour"));
}

#[test]
fn unknown_names_use_ratio_splits() {
    let ds = make_splits(SeriesDataset::new("x", (0..100).map(f64::from).collect(), 1).unwrap(), &SplitSpec::Auto).unwrap();
    assert_eq!(ds.splits().unwrap().sizes(), (70, 10, 20));
    let ds = make_splits(ds, &SplitSpec::Ratios([0.5, 0.25, 0.25])).unwrap();
    assert_eq!(ds.splits().unwrap().sizes(), (50, 25, 25));
    assert!(make_splits(ds.clone(), &SplitSpec::Ratios([0.5, 0.5, 0.5])).is_err());
    assert!(make_splits(ds, &SplitSpec::Sizes([90, 10, 10])).is_err());
}

#[test]
fn normalization_uses_train_rows_only() {
    let values: Vec<f64> = (0..10).map(f64::from).collect();
    let ds = make_splits(SeriesDataset::new("x", values, 1).unwrap(), &SplitSpec::Sizes([4, 3, 3])).unwrap();
    let n = ds.norm().unwrap();
    // train rows 0..4: mean 1.5
    assert!((n.normalize(1.5, 0)).abs() < 1e-12);
    assert!((n.denormalize(n.normalize(7.0, 0), 0) - 7.0).abs() < 1e-12);
}

#[test]
fn constant_train_channel_is_an_error() {
    let values = vec![1.0; 20];
    assert!(matches!(
        make_splits(SeriesDataset::new("c", values, 1).unwrap(), &SplitSpec::Auto),
        Err(Error::ConstantChannel { .. })
    ));
}

#[test]
fn windows_stay_inside_their_split() {
    let values: Vec<f64> = (0..200).map(|i| (i as f64 * 0.3).sin() + i as f64 * 0.01).collect();
    let ds = make_splits(SeriesDataset::new("w", values, 2).unwrap(), &SplitSpec::Sizes([60, 20, 20])).unwrap();
    let ws = windows(&ds, Split::Train, 8, 4, 1).unwrap();
    assert_eq!(ws.len(), 60 - 12 + 1);
    let ws3 = windows(&ds, Split::Train, 8, 4, 3).unwrap();
    assert_eq!(ws3.len(), (60 - 12 + 1usize).div_ceil(3));
    let val = windows(&ds, Split::Val, 8, 4, 1).unwrap();
    assert_eq!(val.first().unwrap().origin, 60);
    assert_eq!(val.last().unwrap().origin + 12, 80);
    let norm = ds.norm().unwrap();
    let w = &ws[5];
    assert_eq!(w.input.len(), 16);
    assert_eq!(w.target.len(), 8);
    assert!((norm.denormalize(w.target[0], 0) - ds.values[(5 + 8) * 2]).abs() < 1e-12);
    assert!(windows(&ds, Split::Val, 16, 8, 1).is_err());
    assert!(windows(&ds, Split::Train, 8, 4, 0).is_err());
}

#[test]
fn fewshot_keeps_ten_percent_of_train() {
    let ds = make_splits(ett_like(17420, 7), &SplitSpec::Auto).unwrap();
    let fs = fewshot_take(&ds, 0.10, false).unwrap();
    let s = fs.splits().unwrap();
    assert_eq!(s.train, 0..820);
    assert_eq!(s.val, ds.splits().unwrap().val);
    assert_eq!(s.test, ds.splits().unwrap().test);
    assert_ne!(fs.norm, ds.norm);
    let tail = fewshot_take(&ds, 0.10, true).unwrap();
    assert_eq!(tail.splits().unwrap().train, 8209 - 820..8209);
    assert!(fewshot_take(&ds, 0.0, false).is_err());
    assert!(fewshot_take(&ds, 1.5, false).is_err());
}

#[test]
fn zeroshot_refuses_channel_mismatch() {
    let a = make_splits(ett_like(17420, 7), &SplitSpec::Auto).unwrap();
    let b = make_splits(series("small", 500, 3), &SplitSpec::Auto).unwrap();
    assert!(matches!(zeroshot_pair(a.clone(), b), Err(Error::Refused(_))));
    let c = make_splits(series("other", 600, 7), &SplitSpec::Auto).unwrap();
    let bind = zeroshot_pair(a, c.clone()).unwrap();
    assert_eq!(bind.target.norm, c.norm);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let p = SynthParams { noise: 0.3, trend: 0.01, ..Default::default() };
    let a = synthesize(SynthKind::SineTrend, 7, 300, 2, &p).unwrap();
    let b = synthesize(SynthKind::SineTrend, 7, 300, 2, &p).unwrap();
    let c = synthesize(SynthKind::SineTrend, 8, 300, 2, &p).unwrap();
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
    let clean = synthesize(SynthKind::SineTrend, 7, 48, 1, &SynthParams::default()).unwrap();
    assert!(clean.values[0].abs() < 1e-12);
    assert!((clean.values[6] - 1.0).abs() < 1e-12);
    let step = synthesize(SynthKind::Step, 0, 10, 1, &SynthParams { step_at: Some(4), ..Default::default() }).unwrap();
    assert_eq!(step.values, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    assert!(synthesize(SynthKind::Noise, 0, 0, 1, &p).is_err());
    assert!("sawtooth".parse::<SynthKind>().is_err());
}
