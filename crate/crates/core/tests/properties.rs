use faintline::autodiff::grad_check;
use faintline::datagen::{extract_labels, noise_model_with};
use faintline::filters::{canny, CannyParams};
use faintline::losses::dice_loss;
use faintline::metrics::{psnr, ssim, strict_f_measure};
use faintline::ops::conv::{conv2d, reference};
use faintline::selfcheck::{FD_STEP, OP_TOL};
use faintline::pnm::{decode, encode_pgm, quantize, Pnm};
use faintline::{BinaryMask, GrayImage, Graph, Tensor};
use proptest::prelude::*;

fn unit_image(h: usize, w: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0..=1.0f64, h * w).prop_map(move |d| GrayImage::from_vec(h, w, d).unwrap())
}

fn sized_unit_image() -> impl Strategy<Value = GrayImage> {
    (4usize..24, 4usize..24).prop_flat_map(|(h, w)| unit_image(h, w))
}

/// Binary image made of a few axis-aligned rectangles.
fn blocks(side: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec((0..side, 0..side, 2..side / 2, 2..side / 2), 1..4).prop_map(move |rects| {
        GrayImage::from_fn(side, side, |y, x| {
            let inside = rects.iter().any(|&(t, l, hh, ww)| y >= t && y < t + hh && x >= l && x < l + ww);
            f64::from(u8::from(inside))
        })
    })
}

fn tensor_in(shape: [usize; 4], range: std::ops::Range<f64>) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(range, shape.iter().product::<usize>()).prop_map(move |d| Tensor::from_vec(shape, d).unwrap())
}

fn tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor<f64>> {
    tensor_in(shape, -1.0..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_conv_matches_direct_loops(
        (input, weight, bias, stride) in (1usize..3, 1usize..5, 1usize..6, 1usize..6, 1usize..6, 1usize..3)
            .prop_flat_map(|(n, ci, co, hh, hw, stride)| {
                // Stride 2 with padding 1 needs odd sides.
                let side = |s: usize| if stride == 2 { 2 * s + 1 } else { 2 * s + 2 };
                (tensor([n, ci, side(hh), side(hw)]), tensor([co, ci, 3, 3]), tensor([1, co, 1, 1]), Just(stride))
            })
    ) {
        let fast = conv2d(&input, &weight, &bias, stride, 1).unwrap();
        let slow = reference::conv2d(&input, &weight, &bias, stride, 1).unwrap();
        prop_assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn dice_lies_in_its_range(y in tensor_in([2, 1, 4, 4], 0.0..1.0), l in tensor_in([2, 1, 4, 4], 0.0..1.0)) {
        let mut g = Graph::<f64>::new();
        let y = g.constant(y);
        let l = g.constant(l);
        let loss = dice_loss(&mut g, y, l).unwrap();
        prop_assert!((-0.5..=0.0).contains(&loss.value), "{}", loss.value);
    }

    // Positive inputs and weights keep every partial derivative away from
    // zero, where a relative error says nothing.
    #[test]
    fn small_graphs_pass_gradient_checks(
        x in tensor_in([1, 2, 3, 3], 0.1..1.0),
        w in tensor_in([2, 2, 3, 3], 0.1..0.5),
    ) {
        let report = grad_check(
            |g, v| {
                let b = g.constant(Tensor::zeros([1, 2, 1, 1]));
                let y = g.conv2d(v[0], v[1], b, 1, 1)?;
                let y = g.sigmoid(y);
                let y = g.square(y);
                Ok(g.sum(y))
            },
            &[x, w],
            FD_STEP,
            OP_TOL,
            None,
        )
        .unwrap();
        prop_assert!(report.passed(), "max rel {}", report.max_rel_error());
    }

    #[test]
    fn f_measure_is_bounded_and_perfect_on_its_labels(img in unit_image(12, 12), t in 0.05..0.95f64) {
        let labels = BinaryMask::threshold(&img, 0.5);
        let s = strict_f_measure(&img, &labels, t).unwrap();
        for v in [s.f, s.precision, s.recall] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if !labels.is_empty() {
            let exact = strict_f_measure(&labels.to_image(), &labels, t).unwrap();
            prop_assert_eq!(exact.f, 1.0);
        }
    }

    #[test]
    fn image_metrics_are_symmetric(a in unit_image(16, 16), b in unit_image(16, 16)) {
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap().db, psnr(&b, &a, 1.0).unwrap().db);
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canny_commutes_with_flips_and_inversion(img in blocks(24)) {
        let p = CannyParams::default();
        let edges = canny(&img, p).unwrap();
        prop_assert_eq!(canny(&img.flip_horizontal(), p).unwrap(), edges.flip_horizontal());
        prop_assert_eq!(canny(&img.flip_vertical(), p).unwrap(), edges.flip_vertical());
        prop_assert_eq!(canny(&img.map(|v| 1.0 - v), p).unwrap(), edges);
    }

    #[test]
    fn labels_commute_with_flips(img in blocks(24)) {
        let labels = extract_labels(&img).unwrap();
        prop_assert_eq!(extract_labels(&img.flip_horizontal()).unwrap(), labels.flip_horizontal());
        prop_assert_eq!(extract_labels(&img.flip_vertical()).unwrap(), labels.flip_vertical());
    }

    #[test]
    fn noise_model_stays_in_unit_range(
        clean in blocks(16),
        noise in prop::collection::vec(-6.0..6.0f64, 256),
        snr in 0.0..4.0f64,
    ) {
        let out = noise_model_with(&clean, snr, &noise);
        prop_assert!(out.is_unit_range());
        let expect = (0.1 * (snr * clean.data()[0] + noise[0]) + 0.45).clamp(0.0, 1.0);
        prop_assert_eq!(out.data()[0], expect);
    }

    #[test]
    fn graymap_round_trip_is_quantization(img in sized_unit_image()) {
        let Pnm::Gray(back) = decode(&encode_pgm(&img)).unwrap() else {
            return Err(TestCaseError::fail("decoded as colour"));
        };
        prop_assert_eq!(back.dims(), img.dims());
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert_eq!(*a, f64::from(quantize(*b)) / 255.0);
        }
    }
}
