use stftsynth_web::{event_view, panel_image, similarity};

#[test]
fn event_view_has_the_expected_shapes() {
    for (w, shape) in [(128, (65, 15)), (256, (129, 7))] {
        let v = event_view("breakage", 3, w).unwrap();
        assert_eq!(v.waveform().len(), 1000);
        assert_eq!((v.freq_bins(), v.time_frames()), shape);
        assert_eq!(v.spectrogram().len(), shape.0 * shape.1);
        assert!(v.spectrogram().iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}

#[test]
fn unknown_class_is_an_error() {
    assert!(event_view("thunder", 0, 128).is_err());
    assert!(similarity("hammer", 0, "hammer", 1, 100).is_err());
}

#[test]
fn identical_events_are_perfectly_similar() {
    let s = similarity("trimmer", 7, "trimmer", 7, 128).unwrap();
    assert!((s.ssim - 1.0).abs() < 1e-12);
    assert!(s.psnr_capped);
    let d = similarity("trimmer", 7, "traffic", 7, 128).unwrap();
    assert!(d.ssim < 1.0 && !d.psnr_capped);
}

#[test]
fn panel_image_is_rgba_of_its_size() {
    let img = panel_image("hammer", 1, 3, 256).unwrap();
    assert_eq!(img.rgba().len(), img.width() * img.height() * 4);
    assert!(img.rgba().chunks(4).all(|p| p[3] == 255));
}
