use proptest::prelude::*;
use srdet::imagebuf::{decode_png_bytes, encode_png_bytes, load_png, save_png, ImageBuffer, ImageError};

fn image(max: usize) -> impl Strategy<Value = ImageBuffer> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h * 3).prop_map(move |px| ImageBuffer::new(w, h, px).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn png_round_trip_is_lossless(img in image(40)) {
        let bytes = encode_png_bytes(&img).unwrap();
        prop_assert_eq!(decode_png_bytes(&bytes).unwrap(), img);
    }

    #[test]
    fn crop_composes(
        img in image(30),
        r in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
        s in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
    ) {
        let pick = |f: f64, n: usize| ((f * n as f64) as usize).min(n - 1);
        let (a, b) = (pick(r.0, img.width()), pick(r.1, img.height()));
        let (w, h) = (1 + pick(r.2, img.width() - a), 1 + pick(r.3, img.height() - b));
        let (c, d) = (pick(s.0, w), pick(s.1, h));
        let (u, v) = (1 + pick(s.2, w - c), 1 + pick(s.3, h - d));
        let outer = img.crop(a, b, w, h).unwrap();
        prop_assert_eq!(outer.crop(c, d, u, v).unwrap(), img.crop(a + c, b + d, u, v).unwrap());
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(outer.get(x, y), img.get(a + x, b + y));
            }
        }
    }
}

#[test]
fn random_64x64_file_round_trip() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(64);
    let px: Vec<u8> = (0..64 * 64 * 3).map(|_| rng.random()).collect();
    let img = ImageBuffer::new(64, 64, px).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.png");
    save_png(&img, &path).unwrap();
    assert_eq!(load_png(&path).unwrap(), img);
}

#[test]
fn solid_red_and_black() {
    let dir = tempfile::tempdir().unwrap();
    let red = ImageBuffer::filled(2, 2, [255, 0, 0]);
    let path = dir.path().join("red.png");
    save_png(&red, &path).unwrap();
    let back = load_png(&path).unwrap();
    assert_eq!((back.width(), back.height()), (2, 2));
    assert!(back.pixels().chunks(3).all(|p| p == [255, 0, 0]));

    let black = ImageBuffer::filled(1, 1, [0, 0, 0]);
    let path = dir.path().join("black.png");
    save_png(&black, &path).unwrap();
    assert_eq!(load_png(&path).unwrap(), black);
}

#[test]
fn truncated_file_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = encode_png_bytes(&ImageBuffer::filled(16, 16, [1, 2, 3])).unwrap();
    let path = dir.path().join("cut.png");
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    match load_png(&path) {
        Err(e @ ImageError::Decode { .. }) => assert!(e.to_string().contains("cut.png")),
        other => panic!("expected decode error, got {other:?}"),
    }
}

#[test]
fn unwritable_path_is_io_error() {
    let img = ImageBuffer::filled(1, 1, [0, 0, 0]);
    let err = save_png(&img, "/nonexistent-dir/x/y.png").unwrap_err();
    assert!(matches!(err, ImageError::Io { .. }));
}

#[test]
fn grayscale_png_expands_to_rgb() {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, 2, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[10, 200]).unwrap();
    }
    let img = decode_png_bytes(&bytes).unwrap();
    assert_eq!(img.pixels(), [10, 10, 10, 200, 200, 200]);
}
