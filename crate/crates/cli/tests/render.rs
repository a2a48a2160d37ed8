use clvae_cli::render::{class_bars_svg, scatter_svg, BarSeries, Coloring};
use clvae_cli::CliError;
use clvae_core::metrics::anomaly_distribution_rmse;
use clvae_core::numerics::Tensor;
use clvae_core::{LatentSet, Provenance};

fn latent(n: usize, dim: usize) -> LatentSet {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..dim).map(|d| ((i * 7 + d * 3) % 11) as f64 - 5.0 + i as f64 * 0.01).collect())
        .collect();
    let labels = (0..n).map(|i| i % 3).collect();
    LatentSet::new(
        Tensor::from_rows(&rows).unwrap(),
        labels,
        Provenance {
            model_id: "test".into(),
            dataset_id: "rows".into(),
        },
    )
    .unwrap()
}

fn names() -> Vec<String> {
    vec!["a".into(), "b & c".into(), "<d>".into()]
}

fn count_class(doc: &roxmltree::Document, tag: &str, class: &str) -> usize {
    doc.descendants()
        .filter(|n| n.has_tag_name(tag) && n.attribute("class").is_some_and(|c| c.split(' ').any(|w| w == class)))
        .count()
}

#[test]
fn one_marker_per_point_for_every_coloring() {
    let n = 137;
    let set = latent(n, 2);
    let colorings = [
        Coloring::Class { names: names() },
        Coloring::Cluster {
            assignment: (0..n).map(|i| i % 5).collect(),
        },
        Coloring::AnomalyFlag { flagged: vec![1, 2, 3] },
        Coloring::Deviation {
            values: (0..n).map(|i| i as f64).collect(),
        },
    ];
    for c in &colorings {
        let svg = scatter_svg(&set, c, "t").unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(count_class(&doc, "circle", "pt"), n, "{}", c.name());
        assert!(count_class(&doc, "g", "legend") == 1, "{}", c.name());
    }
}

#[test]
fn fifteen_flags_give_fifteen_highlighted_markers() {
    let set = latent(200, 2);
    let flagged: Vec<usize> = (0..15).map(|i| i * 13).collect();
    let svg = scatter_svg(&set, &Coloring::AnomalyFlag { flagged }, "top anomalies").unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(count_class(&doc, "circle", "hl"), 15);
    assert_eq!(count_class(&doc, "circle", "pt"), 200);
}

#[test]
fn three_dimensional_latent_is_rejected() {
    let set = latent(10, 3);
    let err = scatter_svg(&set, &Coloring::Class { names: names() }, "t").unwrap_err();
    assert!(matches!(err, CliError::UnsupportedRendering { dim: 3 }));
}

#[test]
fn scatter_layout_is_deterministic() {
    let set = latent(50, 2);
    let c = Coloring::Class { names: names() };
    assert_eq!(scatter_svg(&set, &c, "t").unwrap(), scatter_svg(&set, &c, "t").unwrap());
}

fn rmse_annotations(svg: &str) -> Vec<f64> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    doc.descendants()
        .filter(|n| n.has_tag_name("text") && n.attribute("class") == Some("rmse"))
        .map(|n| n.attribute("data-rmse").unwrap().parse().unwrap())
        .collect()
}

#[test]
fn two_series_give_two_bars_per_class() {
    let reference = vec![0.02, 0.02, 0.02];
    let series = vec![
        BarSeries {
            name: "vae".into(),
            values: vec![0.01, 0.05, 0.0],
        },
        BarSeries {
            name: "clvae".into(),
            values: vec![0.02, 0.03, 0.01],
        },
    ];
    let svg = class_bars_svg(&series, &reference, &names(), "bars").unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(count_class(&doc, "rect", "bar"), 6);
    assert_eq!(count_class(&doc, "line", "ref"), 3);

    let shown = rmse_annotations(&svg);
    assert_eq!(shown.len(), 2);
    for (s, r) in series.iter().zip(&shown) {
        let expected = anomaly_distribution_rmse(&s.values, &reference).unwrap();
        assert_eq!(*r, expected);
    }
}

#[test]
fn identical_series_are_annotated_with_zero() {
    let v = vec![0.1, 0.2, 0.3];
    let series = vec![
        BarSeries {
            name: "x".into(),
            values: v.clone(),
        },
        BarSeries {
            name: "y".into(),
            values: v.clone(),
        },
    ];
    let svg = class_bars_svg(&series, &v, &names(), "same").unwrap();
    assert_eq!(rmse_annotations(&svg), vec![0.0, 0.0]);
}

#[test]
fn bar_length_mismatch_is_a_contract_violation() {
    let series = vec![BarSeries {
        name: "x".into(),
        values: vec![0.1, 0.2],
    }];
    let err = class_bars_svg(&series, &[0.1, 0.2, 0.3], &names(), "t").unwrap_err();
    assert!(matches!(
        err,
        CliError::Stage {
            source: clvae_core::Error::Contract(_),
            ..
        }
    ));
    assert_eq!(err.exit_code(), 4);
}
