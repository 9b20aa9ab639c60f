use spgat::explain::Method;
use spgat_demo::Demo;

fn demo() -> Demo {
    Demo::embedded().unwrap()
}

#[test]
fn embedded_assets_load() {
    let d = demo();
    assert_eq!(d.sample_count(), 20);
    for i in 0..20 {
        assert_eq!(d.label(i).unwrap(), i / 2);
    }
    assert!(d.label(20).is_err());
    assert_eq!(d.model_k(), 75);
}

#[test]
fn bundled_model_classifies_most_samples() {
    let d = demo();
    let correct = (0..20)
        .filter(|&i| d.predict(i).unwrap() == d.label(i).unwrap())
        .count();
    assert!(correct >= 16, "{correct}/20");
}

#[test]
fn segment_frame_matches_scaled_image() {
    let d = demo();
    let f = d.segment(4, 75).unwrap();
    assert_eq!((f.width, f.height), (280, 280));
    assert_eq!(f.rgba.len(), 280 * 280 * 4);
    assert!(f.caption.contains("superpixels"));
    let one = d.segment(4, 1).unwrap();
    assert!(one.caption.starts_with("1 superpixels"));
    assert!(d.segment(4, 0).is_err());
}

#[test]
fn explain_every_method() {
    let d = demo();
    for m in Method::HEADLINE.into_iter().chain([Method::GuidedGradCam]) {
        let f = d.explain(12, m).unwrap();
        assert_eq!(f.rgba.len(), 280 * 280 * 4);
        assert!(f.caption.contains("predicted"), "{}", f.caption);
    }
}

#[test]
fn occlusion_grows_as_threshold_drops() {
    let d = demo();
    let count = |t: f64| -> usize {
        let caption = d.occlude(7, Method::GuidedBackprop, t).unwrap().caption;
        caption.split_whitespace().next().unwrap().parse().unwrap()
    };
    let (low, high) = (count(0.01), count(0.9));
    assert!(low >= high, "{low} < {high}");
    assert!(d.occlude(7, Method::Cam, 1.5).is_err());
}
