use super::*;
use crate::rng;

fn t(data: &[f32], shape: &[usize]) -> Tensor {
    Tensor::from_vec(data.to_vec(), shape).unwrap()
}

fn assert_close(got: &[f32], want: &[f32], tol: f32) {
    assert_eq!(got.len(), want.len(), "length mismatch");
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol,
            "element {i}: got {g}, want {w} (tol {tol})"
        );
    }
}

#[test]
fn elementwise_values() {
    let a = t(&[1.0, 2.0], &[2]);
    let b = t(&[3.0, 4.0], &[2]);
    assert_eq!(a.add(&b).unwrap().to_vec(), vec![4.0, 6.0]);
    assert_eq!(a.sub(&b).unwrap().to_vec(), vec![-2.0, -2.0]);
    assert_eq!(a.mul(&b).unwrap().to_vec(), vec![3.0, 8.0]);
    assert_eq!(t(&[-2.0, 3.0], &[2]).abs().unwrap().to_vec(), vec![2.0, 3.0]);
    assert_eq!(t(&[-2.0, 3.0], &[2]).square().unwrap().to_vec(), vec![4.0, 9.0]);
    assert_eq!(a.add_scalar(10.0).unwrap().to_vec(), vec![11.0, 12.0]);
    assert_eq!(a.scale(-2.0).unwrap().to_vec(), vec![-2.0, -4.0]);
    // sqrt(x + 1e-12) at x = 4 is 2 up to the shift
    assert!((t(&[4.0], &[1]).sqrt_eps().unwrap().item() - 2.0).abs() < 1e-6);
    // silu(0) = 0, silu(1) = sigmoid(1)
    let s = t(&[0.0, 1.0], &[2]).silu().unwrap();
    assert_eq!(s.data()[0], 0.0);
    assert!((s.data()[1] - 0.731_058_6).abs() < 1e-6);
}

#[test]
fn reductions_match_f64_accumulation() {
    let a = t(&[1.0, -2.0, 3.0, -4.0], &[2, 2]);
    assert_eq!(a.sum().unwrap().item(), -2.0);
    assert_eq!(a.mean().unwrap().item(), -0.5);
    assert_eq!(a.l1_mean().unwrap().item(), 2.5);
}

#[test]
fn square_backward() {
    let tape = Tape::new();
    let x = tape.var(&t(&[-2.0], &[1]));
    let loss = x.square().unwrap().sum().unwrap();
    let g = loss.backward().unwrap();
    assert_eq!(g.wrt(&x).unwrap(), &[-4.0]);
}

#[test]
fn mean_backward_is_uniform() {
    let tape = Tape::new();
    let x = tape.var(&t(&[1.0, 2.0, 3.0, 4.0], &[4]));
    let g = x.mean().unwrap().backward().unwrap();
    assert_eq!(g.wrt(&x).unwrap(), &[0.25, 0.25, 0.25, 0.25]);
}

#[test]
fn abs_and_l1_backward() {
    let tape = Tape::new();
    let x = tape.var(&t(&[-3.0, 0.0, 2.0], &[3]));
    let g = x.abs().unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(&x).unwrap(), &[-1.0, 0.0, 1.0]);

    let tape = Tape::new();
    let x = tape.var(&t(&[-3.0, 0.0, 2.0], &[3]));
    let g = x.l1_mean().unwrap().backward().unwrap();
    let third = (1.0f64 / 3.0) as f32;
    assert_close(g.wrt(&x).unwrap(), &[-third, 0.0, third], 1e-7);
}

#[test]
fn mul_with_shared_parent_accumulates() {
    let tape = Tape::new();
    let x = tape.var(&t(&[1.5, -2.0], &[2]));
    let g = x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(&x).unwrap(), &[3.0, -4.0]);
}

#[test]
fn scalar_broadcast_backward_reduces() {
    let tape = Tape::new();
    let x = tape.var(&t(&[1.0, 2.0, 3.0], &[3]));
    let c = tape.var(&Tensor::scalar(2.0));
    let g = x.mul(&c).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(&x).unwrap(), &[2.0, 2.0, 2.0]);
    assert_eq!(g.wrt(&c).unwrap(), &[6.0]);
}

#[test]
fn stop_gradient_blocks_flow() {
    let tape = Tape::new();
    let x = tape.var(&t(&[1.0, 2.0, 3.0], &[3]));
    let g = x.stop_gradient().sum().unwrap().backward().unwrap();
    // The input still has a (zero) gradient entry: it required a
    // gradient but the loss never reached it.
    assert_eq!(g.wrt(&x).unwrap(), &[0.0, 0.0, 0.0]);
}

#[test]
fn stop_gradient_treats_branch_as_constant() {
    // d/dx sum(x * sg(x)) = sg(x) = x, not 2x.
    let tape = Tape::new();
    let x = tape.var(&t(&[1.0, 2.0, 3.0], &[3]));
    let g = x.mul(&x.stop_gradient()).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(&x).unwrap(), &[1.0, 2.0, 3.0]);
}

#[test]
fn stop_gradient_value_is_identity() {
    let x = t(&[1.0, -2.0], &[2]);
    let y = x.stop_gradient();
    assert_eq!(y.to_vec(), x.to_vec());
    assert!(!y.requires_grad());
}

#[test]
fn tape_is_single_use() {
    let tape = Tape::new();
    let x = tape.var(&t(&[1.0], &[1]));
    let l1 = x.square().unwrap().sum().unwrap();
    let l2 = x.add_scalar(1.0).unwrap().sum().unwrap();
    l1.backward().unwrap();
    match l2.backward() {
        Err(crate::Error::TapeConsumed) => {}
        other => panic!("expected TapeConsumed, got {other:?}"),
    }
}

#[test]
fn mixed_tapes_error() {
    let ta = Tape::new();
    let tb = Tape::new();
    let a = ta.var(&t(&[1.0], &[1]));
    let b = tb.var(&t(&[2.0], &[1]));
    match a.add(&b) {
        Err(crate::Error::TapeMismatch) => {}
        other => panic!("expected TapeMismatch, got {other:?}"),
    }
}

#[test]
fn non_scalar_loss_rejected() {
    let tape = Tape::new();
    let x = tape.var(&t(&[1.0, 2.0], &[2]));
    let y = x.square().unwrap();
    match y.backward() {
        Err(crate::Error::NonScalarLoss(shape)) => assert_eq!(shape, vec![2]),
        other => panic!("expected NonScalarLoss, got {other:?}"),
    }
}

#[test]
fn gradient_map_lookups() {
    let tape = Tape::new();
    let x = tape.var(&t(&[1.0], &[1]));
    let detached = t(&[5.0], &[1]);
    let constant = tape.constant(&t(&[3.0], &[1]));
    let loss = x.mul(&constant).unwrap().sum().unwrap();
    let g = loss.backward().unwrap();
    assert_eq!(g.wrt(&x).unwrap(), &[3.0]);
    assert!(g.wrt(&detached).is_none());
    assert!(g.wrt(&constant).is_none());
    assert_eq!(g.wrt_or_zeros(&detached), vec![0.0]);

    let other_tape = Tape::new();
    let y = other_tape.var(&t(&[1.0], &[1]));
    assert!(g.wrt(&y).is_none());
}

#[test]
fn detached_ops_record_nothing() {
    let a = t(&[1.0, 2.0], &[2]);
    let b = t(&[3.0, 4.0], &[2]);
    let c = a.add(&b).unwrap().silu().unwrap().mean().unwrap();
    assert!(!c.is_attached());
}

#[test]
fn shape_validation() {
    assert!(Tensor::from_vec(vec![1.0], &[2]).is_err());
    assert!(Tensor::from_vec(vec![], &[0]).is_err());
    assert!(t(&[1.0, 2.0], &[2]).add(&t(&[1.0, 2.0, 3.0], &[3])).is_err());
    assert!(t(&[1.0, 2.0], &[2]).reshape(&[3]).is_err());
}

#[test]
fn reshape_concat_upsample_values() {
    let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
    let r = x.reshape(&[4, 1, 1, 1]).unwrap();
    assert_eq!(r.shape(), &[4, 1, 1, 1]);
    assert_eq!(r.to_vec(), x.to_vec());

    let y = t(&[5.0, 6.0, 7.0, 8.0], &[1, 1, 2, 2]);
    let c = x.concat_c(&y).unwrap();
    assert_eq!(c.shape(), &[1, 2, 2, 2]);
    assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);

    let u = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).upsample_nearest_2x().unwrap();
    assert_eq!(u.shape(), &[1, 1, 4, 4]);
    assert_eq!(
        u.to_vec(),
        vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
    );
}

#[test]
fn bias_and_scale_per_channel() {
    let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 1, 2]);
    let b = t(&[10.0, 20.0], &[2]);
    assert_eq!(x.bias_add_c(&b).unwrap().to_vec(), vec![11.0, 12.0, 23.0, 24.0]);
    let s = t(&[2.0, -1.0], &[2]);
    assert_eq!(x.scale_c(&s).unwrap().to_vec(), vec![2.0, 4.0, -3.0, -4.0]);
}

#[test]
fn conv2d_identity_kernel() {
    let x = t(&[1., 2., 3., 4., 5., 6., 7., 8., 9.], &[1, 1, 3, 3]);
    let k = t(&[0., 0., 0., 0., 1., 0., 0., 0., 0.], &[1, 1, 3, 3]);
    let y = x.conv2d(&k, 1, 1).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn conv2d_all_ones_box_counts() {
    let x = Tensor::full(&[1, 1, 5, 5], 1.0);
    let k = Tensor::full(&[1, 1, 3, 3], 1.0);
    let y = x.conv2d(&k, 1, 1).unwrap();
    let want = [
        4., 6., 6., 6., 4., //
        6., 9., 9., 9., 6., //
        6., 9., 9., 9., 6., //
        6., 9., 9., 9., 6., //
        4., 6., 6., 6., 4.,
    ];
    assert_eq!(y.to_vec(), want);
}

#[test]
fn conv2d_is_cross_correlation() {
    // Distinguishes correlation from kernel-flipped convolution.
    let x = t(&[1.0, 2.0, 3.0], &[1, 1, 1, 3]);
    let k = t(&[10.0, 100.0, 1000.0], &[1, 1, 1, 3]);
    // Padding widens both axes: rows 0 and 2 sample only zero padding.
    let y = x.conv2d(&k, 1, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(
        y.to_vec(),
        vec![0.0, 0.0, 0.0, 2100.0, 3210.0, 320.0, 0.0, 0.0, 0.0]
    );
}

#[test]
fn conv2d_stride_two() {
    let x = t(&(1..=16).map(|v| v as f32).collect::<Vec<_>>(), &[1, 1, 4, 4]);
    let k = Tensor::full(&[1, 1, 2, 2], 1.0);
    let y = x.conv2d(&k, 2, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.to_vec(), vec![14.0, 22.0, 46.0, 54.0]);
}

#[test]
fn conv2d_multi_channel_mixing() {
    let x = t(&[1., 2., 3., 4., 10., 20., 30., 40.], &[1, 2, 2, 2]);
    let k = t(&[2., 3., 1., 0.], &[2, 2, 1, 1]);
    let y = x.conv2d(&k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 2, 2, 2]);
    assert_eq!(y.to_vec(), vec![32., 64., 96., 128., 1., 2., 3., 4.]);
}

#[test]
fn conv2d_shape_errors() {
    let x = Tensor::full(&[1, 1, 2, 2], 1.0);
    let k = Tensor::full(&[1, 1, 5, 5], 1.0);
    assert!(x.conv2d(&k, 1, 1).is_err()); // kernel exceeds padded input
    let k = Tensor::full(&[1, 3, 1, 1], 1.0);
    assert!(x.conv2d(&k, 1, 0).is_err()); // channel mismatch
    let k = Tensor::full(&[1, 1, 1, 1], 1.0);
    assert!(x.conv2d(&k, 0, 0).is_err()); // zero stride
}

// The worst-case relative error of a central-difference probe is set by
// f32 forward rounding divided by the smallest gradient entry; for conv
// stacks some entries sit near zero by cancellation, so these structural
// checks use a 2e-2 gate. Index or sign bugs show up as errors of one or
// larger. The exact-value tests above pin the arithmetic itself.
const CONV_FD_TOL: f32 = 2e-2;

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = rng::seeded(11, 0);
    let x0 = rng::randn(&[1, 2, 4, 4], &mut rng).scale(0.7).unwrap();
    let k0 = rng::randn(&[2, 2, 3, 3], &mut rng).scale(0.5).unwrap();

    // w.r.t. the input
    let k = k0.detach();
    let err = finite_difference_check(
        |x| x.conv2d(&k, 1, 1)?.silu()?.mean(),
        &x0,
        DEFAULT_FD_STEP,
    )
    .unwrap();
    assert!(err < CONV_FD_TOL, "conv input gradient error {err}");

    // w.r.t. the kernel
    let x = x0.detach();
    let err = finite_difference_check(
        |k| x.conv2d(k, 1, 1)?.silu()?.mean(),
        &k0,
        DEFAULT_FD_STEP,
    )
    .unwrap();
    assert!(err < CONV_FD_TOL, "conv kernel gradient error {err}");

    // strided case
    let err = finite_difference_check(
        |x| x.conv2d(&k, 2, 1)?.square()?.mean(),
        &x0,
        DEFAULT_FD_STEP,
    )
    .unwrap();
    assert!(err < CONV_FD_TOL, "strided conv gradient error {err}");
}

#[test]
fn composite_graph_gradients_match_finite_differences() {
    let mut rng = rng::seeded(12, 0);
    let x0 = rng::randn(&[1, 1, 4, 4], &mut rng).scale(0.8).unwrap();
    let k1 = rng::randn(&[2, 1, 3, 3], &mut rng).scale(0.5).unwrap();
    let b1 = rng::randn(&[2], &mut rng).scale(0.1).unwrap();
    let sc = t(&[0.7, 1.3], &[2]);
    let k2 = rng::randn(&[1, 4, 3, 3], &mut rng).scale(0.4).unwrap();

    let f = |x: &Tensor| -> crate::Result<Tensor> {
        let h = x.conv2d(&k1, 1, 1)?.bias_add_c(&b1)?.silu()?.scale_c(&sc)?;
        let h = h.concat_c(&h.square()?)?;
        h.conv2d(&k2, 1, 1)?
            .upsample_nearest_2x()?
            .square()?
            .mean()
    };
    let err = finite_difference_check(f, &x0, DEFAULT_FD_STEP).unwrap();
    assert!(err < CONV_FD_TOL, "composite graph gradient error {err}");
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = rng::seeded(13, 0);
        let x0 = rng::randn(&[2, 2, 6, 6], &mut rng);
        let k0 = rng::randn(&[3, 2, 3, 3], &mut rng);
        let tape = Tape::new();
        let x = tape.var(&x0);
        let k = tape.var(&k0);
        let loss = x.conv2d(&k, 1, 1).unwrap().silu().unwrap().mean().unwrap();
        let g = loss.backward().unwrap();
        (g.wrt(&x).unwrap().to_vec(), g.wrt(&k).unwrap().to_vec())
    };
    let (gx1, gk1) = run();
    let (gx2, gk2) = run();
    assert_eq!(gx1, gx2);
    assert_eq!(gk1, gk2);
}

#[test]
fn requires_grad_flags() {
    let tape = Tape::new();
    let x = tape.var(&t(&[1.0], &[1]));
    let c = tape.constant(&t(&[1.0], &[1]));
    let detached = t(&[1.0], &[1]);
    assert!(x.requires_grad());
    assert!(!c.requires_grad());
    assert!(!detached.requires_grad());
    assert!(x.add(&c).unwrap().requires_grad());
    assert!(!x.stop_gradient().requires_grad());
}
