use micap::losses::{caption_nll_value, cosine_sim, nce_loss_value, ContrastiveBatch};
use micap::nn::Tensor;
use proptest::prelude::*;

/// Symmetric InfoNCE written out with plain loops.
#[allow(clippy::needless_range_loop)]
fn reference_nce(v: &[Vec<f64>], a: &[Vec<f64>], tau: f64) -> f64 {
    let norm = |x: &Vec<f64>| -> Vec<f64> {
        let n = x.iter().map(|y| y * y).sum::<f64>().sqrt();
        x.iter().map(|y| y / n).collect()
    };
    let (v, a): (Vec<_>, Vec<_>) = (v.iter().map(norm).collect(), a.iter().map(norm).collect());
    let b = v.len();
    let s: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            (0..b)
                .map(|j| a[i].iter().zip(&v[j]).map(|(x, y)| x * y).sum::<f64>() / tau)
                .collect()
        })
        .collect();
    let lse = |xs: &mut dyn Iterator<Item = f64>| -> f64 {
        let xs: Vec<f64> = xs.collect();
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let mut total = 0.0;
    for i in 0..b {
        total += lse(&mut s[i].iter().copied()) - s[i][i];
        total += lse(&mut (0..b).map(|r| s[r][i])) - s[i][i];
    }
    total / (2.0 * b as f64)
}

fn rows(b: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-2.0f64..2.0, d)
            .prop_filter("non-zero", |r| r.iter().any(|x| x.abs() > 0.1)),
        b,
    )
}

fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nce_matches_reference((v, a) in (2usize..6, 1usize..5).prop_flat_map(|(b, d)| (rows(b, d), rows(b, d))),
                             tau in 0.05f64..1.0) {
        let got = nce_loss_value(&ContrastiveBatch::new(tensor(&v), tensor(&a), tau).unwrap()).unwrap();
        prop_assert!((got - reference_nce(&v, &a, tau)).abs() < 1e-9);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn nce_is_symmetric_in_modalities((v, a) in (2usize..5, 2usize..4).prop_flat_map(|(b, d)| (rows(b, d), rows(b, d)))) {
        let x = nce_loss_value(&ContrastiveBatch::new(tensor(&v), tensor(&a), 0.07).unwrap()).unwrap();
        let y = nce_loss_value(&ContrastiveBatch::new(tensor(&a), tensor(&v), 0.07).unwrap()).unwrap();
        prop_assert!((x - y).abs() < 1e-9);
    }

    #[test]
    fn nce_ignores_row_scale(v in rows(3, 4), scale in 0.1f64..10.0) {
        let scaled: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
        let x = nce_loss_value(&ContrastiveBatch::new(tensor(&v), tensor(&v), 0.07).unwrap()).unwrap();
        let y = nce_loss_value(&ContrastiveBatch::new(tensor(&scaled), tensor(&v), 0.07).unwrap()).unwrap();
        prop_assert!((x - y).abs() < 1e-9);
    }

    #[test]
    fn caption_nll_skips_padding(logits in prop::collection::vec(-3.0f64..3.0, 4 * 6), junk in 0usize..6) {
        let t = Tensor::new(vec![4, 6], logits.clone()).unwrap();
        let targets = [1, 4, 2, junk];
        let masked = caption_nll_value(&t, &targets, &[true, true, true, false]).unwrap();
        let head = Tensor::new(vec![3, 6], logits[..18].to_vec()).unwrap();
        let plain = caption_nll_value(&head, &targets[..3], &[true; 3]).unwrap();
        prop_assert!((masked - plain).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_bounded(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3)) {
        prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
        let c = cosine_sim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
    }
}

#[test]
fn caption_nll_of_a_confident_hit_is_small() {
    let mut logits = Tensor::zeros(&[1, 5]);
    logits.data_mut()[3] = 30.0;
    assert!(caption_nll_value(&logits, &[3], &[true]).unwrap() < 1e-12);
}

#[test]
fn contrastive_operands_are_validated() {
    let one = Tensor::zeros(&[1, 3]);
    assert!(ContrastiveBatch::new(one.clone(), one, 0.07).is_err());
    let two = Tensor::filled(&[2, 3], 1.0);
    assert!(ContrastiveBatch::new(two.clone(), two.clone(), 0.0).is_err());
    assert!(ContrastiveBatch::new(two, Tensor::filled(&[2, 4], 1.0), 0.07).is_err());
    assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(caption_nll_value(&Tensor::zeros(&[2, 3]), &[0, 1], &[false, false]).is_err());
    assert!(caption_nll_value(&Tensor::zeros(&[2, 3]), &[0, 7], &[true, true]).is_err());
}
