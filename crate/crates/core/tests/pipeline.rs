use bbcount::cfg::{family, generate_dataset, Expr, GridSpec, Interpreter, Pred, ProgramBuilder};
use bbcount::eval::{evaluate_series, learning_curve, ModelKind, ModelSettings, TrainedModel};
use bbcount::experiment::{family_trace, ModelDoc};
use bbcount::pnn::{self, TrainConfig};
use bbcount::trace::{ingest, BbSeries, SplitMode, SplitSpec, TraceWriter};

fn linear_series(grid: &str, bb: u32) -> BbSeries {
    let grid: GridSpec = grid.parse().unwrap();
    let (csv, _) = family_trace("linear", Some(&grid), 1_000_000).unwrap();
    ingest(csv.as_slice()).unwrap().series.into_iter().find(|s| s.key.bb_id == bb).unwrap()
}

#[test]
fn three_block_sweep_ingests_nine_records() {
    let mut p = ProgramBuilder::new("loop");
    let n = p.param("n", 1, 100);
    let mut k = p.kernel("k");
    let i = k.var();
    let entry = k.block();
    let body = k.block();
    let exit = k.block();
    k.assign(entry, i, Expr::c(0));
    k.jump(entry, body);
    k.assign(body, i, Expr::var(i) + 1);
    k.branch(body, Pred::lt(Expr::var(i), n), body, exit);
    k.exit(exit);
    k.finish().unwrap();
    let program = p.build().unwrap();

    let mut buf = Vec::new();
    let mut sink = TraceWriter::new(&mut buf, 1).unwrap();
    let written = generate_dataset(&program, &"10,20,30".parse().unwrap(), &Interpreter::default(), &mut sink).unwrap();
    sink.flush().unwrap();
    drop(sink);
    assert_eq!(written, 9);
    assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 10);

    let ingested = ingest(buf.as_slice()).unwrap();
    assert_eq!(ingested.duplicates, 0);
    assert_eq!(ingested.series.len(), 3);
    let body = &ingested.series[1];
    assert_eq!(body.params, vec![vec![10], vec![20], vec![30]]);
    assert_eq!(body.counts, vec![10, 20, 30]);
}

#[test]
fn model_document_round_trip_is_bit_identical() {
    let series = linear_series("64", 1);
    let split = SplitSpec::new(SplitMode::Random, 0.7, 11).unwrap();
    let mut settings = ModelSettings::default();
    settings.pnn.epochs = 30;
    settings.br.max_epochs = 30;
    for kind in [ModelKind::Pnn, ModelKind::Brbpnn] {
        let eval = evaluate_series(&series, &split, kind, &settings).unwrap();
        let doc = ModelDoc::from_eval(&eval, &split, &settings);
        let text = serde_json::to_string_pretty(&doc).unwrap();
        let back: ModelDoc = serde_json::from_str(&text).unwrap();
        for (params, expected) in eval.test_params.iter().zip(&eval.predicted) {
            let got = back.predict(params).unwrap();
            assert_eq!(got.to_bits(), expected.to_bits(), "{kind} at {params:?}");
            assert_eq!(got.to_bits(), doc.predict(params).unwrap().to_bits());
        }
        assert!(!matches!(back.trained, TrainedModel::Constant));
    }
}

#[test]
fn pnn_loss_trends_down_on_linear_family() {
    let series = linear_series("256", 1);
    let norm = bbcount::trace::Normalizer::fit(&series).unwrap();
    let data = norm.dataset(&series);
    let out = pnn::train(&data, &TrainConfig { seed: 5, ..Default::default() }).unwrap();
    assert_eq!(out.history.len(), 300);
    let windows: Vec<f64> = out.history.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0] * (1.0 + 1e-6), "{windows:?}");
    }
}

#[test]
fn pnn_random_split_fits_linear_family() {
    let series = linear_series("256", 1);
    let split = SplitSpec::new(SplitMode::Random, 0.7, 1).unwrap();
    let eval = evaluate_series(&series, &split, ModelKind::Pnn, &ModelSettings::default()).unwrap();
    assert!(eval.mse <= 0.05, "mse {}", eval.mse);
    assert_eq!(eval.n_train + eval.n_test(), 256);
}

#[test]
fn more_training_data_does_not_hurt() {
    let series = linear_series("256", 1);
    let mut settings = ModelSettings::default();
    settings.br.hidden = family("linear").unwrap().br_hidden;
    for kind in [ModelKind::Pnn, ModelKind::Brbpnn] {
        let curve = learning_curve(&series, kind, &settings, &[0.1, 0.7], 1).unwrap();
        let (low, high) = (curve[0].accuracy_percent.unwrap(), curve[1].accuracy_percent.unwrap());
        assert!(high >= low - 2.0, "{kind}: {low} at 0.1, {high} at 0.7");
    }
}
