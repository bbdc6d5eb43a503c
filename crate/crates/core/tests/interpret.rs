use micap::interpret::{
    export_pair_embeddings, extract_cross_attention, input_saliency, normalize_by_max,
    read_embeddings, render_heatmap, write_embeddings, Branch, HeadAgg, LayerSel, Target,
};
use micap::model::{Micap, ModelConfig, Variant};
use micap::synth::{generate_dataset, DatasetArchive, DatasetSpec};
use proptest::prelude::*;

fn setup() -> (Micap, DatasetArchive) {
    let data = generate_dataset(&DatasetSpec::new(4, 8)).unwrap();
    let m = data.manifest();
    let cfg = ModelConfig {
        dim: 16,
        heads: 2,
        ff_mult: 2,
        encoder_layers: 1,
        fusion_layers: 2,
        decoder_layers: 1,
        frame_height: m.h,
        frame_width: m.w,
        patch: 8,
        max_frames: m.t,
        audio_len: m.s,
        max_len: 12,
        vocab_size: data.vocab().len(),
        dropout: 0.0,
    };
    (Micap::new(cfg, 17).unwrap(), data)
}

proptest! {
    #[test]
    fn normalization_is_monotone_with_unit_max(raw in prop::collection::vec(0.0f64..5.0, 1..20)) {
        prop_assume!(raw.iter().any(|&x| x > 0.0));
        let s = normalize_by_max(&raw).unwrap();
        prop_assert!((s.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        prop_assert!(s.iter().all(|&x| x >= 0.0));
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] < raw[j] {
                    prop_assert!(s[i] < s[j]);
                }
            }
        }
    }
}

#[test]
fn normalization_rejects_degenerate_input() {
    assert!(normalize_by_max(&[0.0, 0.0]).is_err());
    assert!(normalize_by_max(&[1.0, -0.1]).is_err());
    assert!(normalize_by_max(&[f64::NAN]).is_err());
}

#[test]
fn heatmaps_cover_the_right_keys() {
    let (model, data) = setup();
    let input = data.input(0).unwrap();
    let caption = model.generate(&input, Variant::Micap, 1).unwrap().tokens;
    let args = |b| {
        extract_cross_attention(
            &model,
            &input,
            Variant::Micap,
            &caption,
            b,
            0,
            LayerSel::Last,
            HeadAgg::Mean,
        )
    };

    let av = args(Branch::AudioVideo).unwrap();
    assert_eq!(av.target, Target::VideoPatches);
    assert_eq!(av.shape, [data.manifest().t, 4, 4]);
    assert_eq!(av.layer, 1);
    assert!((av.scores[av.argmax()] - 1.0).abs() < 1e-15);
    let total: f64 = av.raw.iter().sum();
    assert!(
        total > 0.0 && total < 1.0 + 1e-12,
        "VCLS column excluded: {total}"
    );

    let va = args(Branch::VideoAudio).unwrap();
    let valid = input.audio.valid().iter().filter(|&&v| v).count();
    assert_eq!(va.shape, [1, 1, valid]);
    assert!((va.raw.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let dec = args(Branch::Decoder).unwrap();
    assert_eq!(dec.shape, [1, 1, 1]);
    assert_eq!(dec.scores, vec![1.0]);

    assert!(extract_cross_attention(
        &model,
        &input,
        Variant::Micap,
        &caption,
        Branch::Decoder,
        99,
        LayerSel::Last,
        HeadAgg::Mean
    )
    .is_err());
    assert!(extract_cross_attention(
        &model,
        &input,
        Variant::Micap,
        &caption,
        Branch::AudioVideo,
        0,
        LayerSel::Index(5),
        HeadAgg::Mean
    )
    .is_err());
    assert!(extract_cross_attention(
        &model,
        &input,
        Variant::VisionBased,
        &caption,
        Branch::VideoAudio,
        0,
        LayerSel::Last,
        HeadAgg::Mean
    )
    .is_err());
}

#[test]
fn single_heads_and_max_aggregate_consistently() {
    let (model, data) = setup();
    let input = data.input(1).unwrap();
    let caption = model.generate(&input, Variant::Fusion, 1).unwrap().tokens;
    let get = |h| {
        extract_cross_attention(
            &model,
            &input,
            Variant::Fusion,
            &caption,
            Branch::AudioVideo,
            0,
            LayerSel::Index(0),
            h,
        )
        .unwrap()
        .raw
    };
    let (h0, h1, max, mean) = (
        get(HeadAgg::Head(0)),
        get(HeadAgg::Head(1)),
        get(HeadAgg::Max),
        get(HeadAgg::Mean),
    );
    for i in 0..h0.len() {
        assert_eq!(max[i], h0[i].max(h1[i]));
        assert!((mean[i] - 0.5 * (h0[i] + h1[i])).abs() < 1e-15);
    }
}

#[test]
fn saliency_covers_both_modalities() {
    let (model, data) = setup();
    let input = data.input(2).unwrap();
    let caption = model.generate(&input, Variant::Micap, 1).unwrap().tokens;
    let s = input_saliency(&model, &input, Variant::Micap, &caption, 0).unwrap();
    let video = s.video.unwrap();
    assert_eq!(video.shape(), &[data.manifest().t, 4, 4]);
    assert!(video.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    let audio = s.audio.unwrap();
    for (score, valid) in audio.iter().zip(input.audio.valid()) {
        if !valid {
            assert_eq!(*score, 0.0);
        }
    }
    let vision = input_saliency(&model, &input, Variant::VisionBased, &caption, 0).unwrap();
    assert!(vision.audio.is_none() && vision.video.is_some());
}

#[test]
fn rendered_files_have_expected_headers() {
    let (model, data) = setup();
    let input = data.input(0).unwrap();
    let caption = model.generate(&input, Variant::Micap, 1).unwrap().tokens;
    let h = extract_cross_attention(
        &model,
        &input,
        Variant::Micap,
        &caption,
        Branch::AudioVideo,
        0,
        LayerSel::Last,
        HeadAgg::Mean,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ppm = dir.path().join("a.ppm");
    render_heatmap(&h, 0, Some(&input.clip), &ppm).unwrap();
    let bytes = std::fs::read(&ppm).unwrap();
    let header = b"P6\n32 32\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 32 * 32 * 3);
    let svg = dir.path().join("a.svg");
    render_heatmap(&h, 1, None, &svg).unwrap();
    assert_eq!(
        std::fs::read_to_string(&svg)
            .unwrap()
            .matches("<rect")
            .count(),
        16
    );
    assert!(render_heatmap(&h, 0, None, &dir.path().join("a.png")).is_err());
    assert!(render_heatmap(&h, 99, None, &svg).is_err());
}

#[test]
fn embedding_export_round_trips() {
    let (model, data) = setup();
    let dump = export_pair_embeddings(&model, &data, &[0, 1, 2], Variant::Micap).unwrap();
    assert_eq!(dump.summary.samples, 3);
    assert!(dump.summary.gap.is_some());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.jsonl");
    write_embeddings(&path, &dump.records).unwrap();
    assert_eq!(read_embeddings(&path).unwrap(), dump.records);
    assert!(export_pair_embeddings(&model, &data, &[], Variant::Micap).is_err());
    assert!(export_pair_embeddings(&model, &data, &[0], Variant::AudioBased).is_err());
}

#[test]
fn capture_does_not_change_generation() {
    let (model, data) = setup();
    for i in 0..data.len() {
        let input = data.input(i).unwrap();
        let plain = model.generate(&input, Variant::Micap, 3).unwrap();
        let (captured, fusion) = model
            .generate_with_capture(&input, Variant::Micap, 3)
            .unwrap();
        assert_eq!(plain, captured);
        assert_eq!(fusion.attention.len(), 2);
    }
}
