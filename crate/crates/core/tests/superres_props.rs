use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;

use proptest::prelude::*;
use srdet::imagebuf::ImageBuffer;
use srdet::superres::{decode_sr_request, encode_sr_response, upscale, UpscaleError, UpscaleMethod, Upscaler};

fn image(max: usize) -> impl Strategy<Value = ImageBuffer> {
    sized_image(1, max)
}

fn sized_image(min: usize, max: usize) -> impl Strategy<Value = ImageBuffer> {
    (min..=max, min..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h * 3).prop_map(move |px| ImageBuffer::new(w, h, px).unwrap())
    })
}

fn mean(img: &ImageBuffer) -> f64 {
    img.pixels().iter().map(|&v| v as f64).sum::<f64>() / img.pixels().len() as f64
}

/// Serves the SR protocol on a local port by pixel replication, with an
/// optional dimension error.
fn sr_server(off_by_one: bool) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { return };
            std::thread::spawn(move || {
                let mut out = stream.try_clone().unwrap();
                for line in BufReader::new(stream).lines() {
                    let Ok(line) = line else { return };
                    let req = decode_sr_request(&line).unwrap();
                    let mut up = upscale(&req.image, req.zoom, &UpscaleMethod::Nearest).unwrap();
                    if off_by_one {
                        up = up.crop(0, 0, up.width() - 1, up.height()).unwrap();
                    }
                    writeln!(out, "{}", encode_sr_response(req.request_id, &up).unwrap()).unwrap();
                }
            });
        }
    });
    format!("tcp:{addr}")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn dimensions_are_exact(img in image(24), z in 2u32..=4) {
        for m in [UpscaleMethod::Nearest, UpscaleMethod::Bicubic] {
            let out = upscale(&img, z, &m).unwrap();
            prop_assert_eq!((out.width(), out.height()), (img.width() * z as usize, img.height() * z as usize));
        }
    }

    #[test]
    fn nearest_then_subsample_is_identity(img in image(24), z in 2u32..=5) {
        let up = upscale(&img, z, &UpscaleMethod::Nearest).unwrap();
        let z = z as usize;
        let back = ImageBuffer::from_fn(img.width(), img.height(), |x, y| up.get(x * z, y * z));
        prop_assert_eq!(back, img);
    }

    #[test]
    fn bicubic_keeps_constants(w in 1usize..20, h in 1usize..20, c in any::<[u8; 3]>(), z in 2u32..=4) {
        let img = ImageBuffer::filled(w, h, c);
        prop_assert_eq!(upscale(&img, z, &UpscaleMethod::Bicubic).unwrap(), ImageBuffer::filled(w * z as usize, h * z as usize, c));
    }

    /// Edge clamping overweights border pixels, so the bound needs both
    /// sides >= 8 for full-range noise; see `tiny_noisy_images_drift`.
    #[test]
    fn bicubic_keeps_global_mean(img in sized_image(8, 48), z in 2u32..=4) {
        let out = upscale(&img, z, &UpscaleMethod::Bicubic).unwrap();
        prop_assert!((mean(&out) - mean(&img)).abs() <= 0.5, "{} vs {}", mean(&out), mean(&img));
    }
}

#[test]
fn tiny_noisy_images_drift() {
    // The negative lobes around the spike are clipped at 0.
    let img = ImageBuffer::from_fn(3, 1, |x, _| if x == 1 { [255; 3] } else { [0; 3] });
    let out = upscale(&img, 2, &UpscaleMethod::Bicubic).unwrap();
    let drift = (mean(&out) - mean(&img)).abs();
    assert!(drift > 0.5, "{drift}");
    // Smooth content stays within the bound even at this size.
    let flat = ImageBuffer::from_fn(2, 3, |x, y| [(100 + 3 * x + 2 * y) as u8; 3]);
    let out = upscale(&flat, 2, &UpscaleMethod::Bicubic).unwrap();
    assert!((mean(&out) - mean(&flat)).abs() <= 0.5);
}

#[test]
fn ramp_is_reproduced_at_half_steps() {
    let img = ImageBuffer::from_fn(32, 4, |x, _| [(x * 4) as u8; 3]);
    let out = upscale(&img, 2, &UpscaleMethod::Bicubic).unwrap();
    // Output column X samples source position (X + 0.5) / 2 - 0.5.
    for x in 4..(out.width() - 4) {
        let want = 4.0 * ((x as f64 + 0.5) / 2.0 - 0.5);
        assert!((out.get(x, 1)[0] as f64 - want).abs() <= 1.0, "column {x}");
    }
}

#[test]
fn external_backend_over_tcp() {
    let uri = sr_server(false);
    let up = Upscaler::new(UpscaleMethod::External { backend_uri: uri }, None).unwrap();
    for (w, h, z) in [(1, 1, 2), (5, 3, 3), (16, 9, 2)] {
        let img = ImageBuffer::from_fn(w, h, |x, y| [x as u8, y as u8, 7]);
        let out = up.upscale(&img, z).unwrap();
        assert_eq!(out, upscale(&img, z, &UpscaleMethod::Nearest).unwrap());
    }
}

#[test]
fn external_dimension_violation_is_reported() {
    let uri = sr_server(true);
    let up = Upscaler::new(UpscaleMethod::External { backend_uri: uri }, None).unwrap();
    let err = up.upscale(&ImageBuffer::filled(4, 4, [0, 0, 0]), 2).unwrap_err();
    assert!(matches!(
        err,
        UpscaleError::Protocol(srdet::detector::WireError::Violation(_))
    ));
}
