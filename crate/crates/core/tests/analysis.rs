mod common;

use nalgebra::DMatrix;
use rand::Rng;
use tllm_core::analysis::{cka, head_average, heatmaps, layer_groups, snapshot, AttentionTrace, HeatmapGrid};
use tllm_core::model::JointModel;
use tllm_core::numerics::Tensor;

fn random_matrix(r: &mut impl Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn orthogonal(r: &mut impl Rng, p: usize) -> DMatrix<f64> {
    random_matrix(r, p, p).qr().q()
}

#[test]
fn cka_properties_hold_on_random_matrices() {
    let mut r = common::rng(11);
    for _ in 0..100 {
        let n = r.random_range(3..12);
        let (p, q) = (r.random_range(1..6), r.random_range(1..6));
        let x = random_matrix(&mut r, n, p);
        let y = random_matrix(&mut r, n, q);
        let (xs, ys) = (row_major(&x), row_major(&y));
        assert!((cka(&xs, &xs, n).unwrap() - 1.0).abs() < 1e-9);
        let xy = cka(&xs, &ys, n).unwrap();
        assert!((xy - cka(&ys, &xs, n).unwrap()).abs() < 1e-9);
        assert!((-1e-12..=1.0 + 1e-12).contains(&xy));
        let rotated = row_major(&(&x * orthogonal(&mut r, p)));
        assert!((cka(&rotated, &ys, n).unwrap() - xy).abs() < 1e-9);
        let scaled: Vec<f64> = xs.iter().map(|v| v * 3.7).collect();
        assert!((cka(&scaled, &ys, n).unwrap() - xy).abs() < 1e-9);
    }
}

#[test]
fn cka_hand_case_and_degenerate_inputs() {
    // Two centered orthogonal one-column representations.
    assert!(cka(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0], 4).unwrap().abs() < 1e-12);
    assert_eq!(cka(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0], 3).unwrap(), 0.0);
    assert!(cka(&[1.0], &[1.0], 1).is_err());
    assert!(cka(&[1.0, 2.0, 3.0], &[1.0, 2.0], 2).is_err());
}

#[test]
fn heatmap_csv_roundtrip() {
    let g = HeatmapGrid {
        row_kind: "layer".into(),
        rows: vec!["layer_1".into(), "layer_2".into()],
        columns: vec!["epoch_1".into(), "epoch_2".into(), "epoch_3".into()],
        values: vec![vec![0.5, 0.25, 1.0], vec![0.125, 0.0, 0.75]],
    };
    let text = g.to_csv().unwrap();
    assert!(text.starts_with("layer,epoch_1,epoch_2,epoch_3\n"));
    assert_eq!(HeatmapGrid::parse_csv(&text).unwrap(), g);
    let dir = tempfile::tempdir().unwrap();
    let p = g.write(dir.path(), "cka").unwrap();
    assert!(p.ends_with("layer_cka.csv"));
    assert!(HeatmapGrid::parse_csv("layer,a\nx,1,2\n").is_err());
    let empty = HeatmapGrid { rows: vec![], values: vec![], ..g };
    assert!(empty.to_csv().is_err());
}

#[test]
fn layers_group_in_threes() {
    assert_eq!(layer_groups(6), vec![0..3, 3..6]);
    assert_eq!(layer_groups(4), vec![0..3, 3..4]);
    assert_eq!(layer_groups(1), vec![0..1]);
    assert!(layer_groups(0).is_empty());
}

#[test]
fn head_average_hand_case() {
    let w = Tensor::<f64>::from_f64(&[1, 2, 1, 2], &[0.2, 0.8, 0.6, 0.4]).unwrap();
    let (m, rows, cols) = head_average(&w).unwrap();
    assert_eq!((rows, cols), (1, 2));
    assert!((m[0] - 0.4).abs() < 1e-12 && (m[1] - 0.6).abs() < 1e-12);
    assert!(head_average(&Tensor::<f64>::zeros(&[2, 2])).is_err());
}

#[test]
fn traced_heatmaps_cover_every_layer_and_epoch() {
    let cfg = common::toy_config();
    let model = JointModel::<f64>::new(cfg.clone(), 1, None).unwrap();
    let mut r = common::rng(3);
    let x = common::random_tensor::<f64>(&mut r, &[4, cfg.lookback, cfg.channels], 1.0);
    let trace = AttentionTrace {
        snapshots: (1..=3).map(|e| snapshot(&model, &x, e).unwrap()).collect(),
    };
    let s = &trace.snapshots[0];
    assert_eq!((s.rows, s.cols), (4 * cfg.channels, cfg.channels));
    assert!(s.max_row_sum_error() < 1e-12);
    let maps = heatmaps(&trace).unwrap();
    assert_eq!(maps.len(), 5);
    for (g, _) in &maps {
        assert_eq!(g.columns, vec!["epoch_1", "epoch_2", "epoch_3"]);
    }
    // An unchanged model is perfectly similar to its last snapshot.
    let (layer_cka, _) = &maps[0];
    assert!(layer_cka.values.iter().flatten().all(|v| (v - 1.0).abs() < 1e-9));
    assert!(heatmaps(&AttentionTrace::default()).is_err());
}
