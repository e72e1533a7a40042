use care_demo::{Session, CLASSES, SIZE};

#[test]
fn sampled_images_are_opaque_rgba_of_the_right_size() {
    let mut s = Session::new().unwrap();
    for class in 0..CLASSES.len() {
        let rgba = s.sample(7, class).unwrap();
        assert_eq!(rgba.len(), SIZE * SIZE * 4);
        assert!(rgba.chunks(4).all(|p| p[3] == 255 && p[0] == p[1] && p[1] == p[2]));
        assert_eq!(s.label(), class);
        assert_eq!(s.lesion_box().is_some(), class == 2);
    }
    assert!(s.sample(0, 3).is_err());
}

#[test]
fn auto_box_lands_on_the_lesion() {
    let mut s = Session::new().unwrap();
    let mut hits = 0;
    for seed in 0..10 {
        s.sample(seed, 2).unwrap();
        s.auto_box(0.5, 0.01).unwrap();
        let (found, truth) = (s.current_box().unwrap(), s.lesion_box().unwrap());
        if found.iou(&truth) > 0.3 {
            hits += 1;
        }
    }
    assert!(hits >= 7, "{hits}/10");
    assert!(s.auto_box(1.5, 0.01).is_err());
}

#[test]
fn explanations_report_probabilities_and_attention() {
    let mut s = Session::new().unwrap();
    s.sample(3, 2).unwrap();
    let plain = s.explain(true, None, 0.5, 1.0).unwrap();
    assert!(plain.attention.is_none());
    assert!((plain.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(plain.class, 2);

    let b = s.lesion_box().unwrap();
    s.set_box(b.x_min, b.y_min, b.x_max, b.y_max).unwrap();
    for finetuned in [false, true] {
        let e = s.explain(finetuned, None, 0.5, 1.0).unwrap();
        let [inner, outer, total] = e.attention.unwrap();
        assert!((-0.5..=0.0).contains(&inner) && (0.0..=1.0).contains(&outer));
        assert!((total - (inner + outer)).abs() < 1e-12);
        assert_eq!(e.rgba.len(), SIZE * SIZE * 4);
    }
    assert!(s.set_box(0, 0, SIZE, 3).is_err());
    assert!(s.explain(false, Some(5), 0.5, 1.0).is_err());
}

#[test]
fn finetuned_model_recognises_lesions() {
    let mut s = Session::new().unwrap();
    let mut right = 0;
    for seed in 0..10 {
        s.sample(100 + seed, 2).unwrap();
        right += usize::from(s.predict(true).unwrap() == 2);
    }
    assert!(right >= 8, "{right}/10");
}
